//! Small dense matrix kernels.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Problem sizes in this
//! crate are tiny (a few dozen rows at most), so the routines favour clarity
//! over blocking or cache tricks.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex<f64>>;

/// Relative singular-value cutoff used by [`pinv`] when callers have no
/// better choice.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Cholesky pivots at or below this value are treated as a failure.
pub const CHOLESKY_PIVOT_MIN: f64 = 1e-12;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenvalues and (column) eigenvectors of a general real square matrix.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<Complex<f64>>,
    pub vectors: CMat,
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

pub fn is_symmetric(a: &Mat, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= tol * scale
}

/// Moore-Penrose pseudo-inverse. Singular values below `tol * sigma_max` are
/// dropped.
pub fn pinv(a: &Mat, tol: f64) -> Mat {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    if a.amax() == 0.0 {
        return Mat::zeros(c, r);
    }
    if r == c && is_symmetric(a, 0.0) {
        let eig = a.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.amax();
        let cutoff = tol * lmax;
        let mut out = Mat::zeros(r, r);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() > cutoff {
                let v = eig.eigenvectors.column(k);
                out += (v * v.transpose()) / lam;
            }
        }
        return symmetrize(&out);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let smax = svd.singular_values.max();
    let cutoff = tol * smax;
    let mut out = Mat::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

/// Lower-triangular Cholesky factor. Fails when a pivot drops to
/// [`CHOLESKY_PIVOT_MIN`] or below.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of non-square {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > CHOLESKY_PIVOT_MIN) {
            return Err(Error::NotPositiveDefinite { pivot: d, index: j });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Natural log-determinant of a symmetric positive definite matrix.
pub fn logdet_pd(a: &Mat) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor.
pub fn inv_pd(a: &Mat) -> Result<Mat> {
    let l = cholesky(a)?;
    let n = a.nrows();
    let linv = l
        .solve_lower_triangular(&Mat::identity(n, n))
        .ok_or_else(|| Error::NumericalFailure("triangular solve".into()))?;
    Ok(symmetrize(&(linv.transpose() * linv)))
}

/// Symmetric positive semidefinite factorization `A ~ L L^T` by Cholesky
/// with diagonal pivoting. Returns `L` with one column per numerically
/// nonzero pivot, so rank-deficient inputs produce a thin factor.
pub fn pivoted_cholesky(a: &Mat, tol: f64) -> Mat {
    let n = a.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let mut work = symmetrize(a);
    let scale = work.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = Mat::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        // pick the largest remaining diagonal entry
        let (mut best, mut best_val) = (k, work[(perm[k], perm[k])]);
        for j in (k + 1)..n {
            let v = work[(perm[j], perm[j])];
            if v > best_val {
                best = j;
                best_val = v;
            }
        }
        if best_val <= tol * scale {
            break;
        }
        perm.swap(k, best);
        let p = perm[k];
        let d = best_val.sqrt();
        l[(p, k)] = d;
        for &q in &perm[(k + 1)..] {
            l[(q, k)] = work[(q, p)] / d;
        }
        for &qi in &perm[(k + 1)..] {
            for &qj in &perm[(k + 1)..] {
                work[(qi, qj)] -= l[(qi, k)] * l[(qj, k)];
            }
        }
        rank += 1;
    }
    l.columns(0, rank).into_owned()
}

/// Splits off eigenvalues exposed by rows or columns that vanish off the
/// diagonal (the permutation step of LAPACK-style balancing). Returns the
/// isolated eigenvalues and the indices of the remaining coupled block.
fn isolate_eigenvalues(a: &Mat) -> (Vec<f64>, Vec<usize>) {
    let mut active: Vec<usize> = (0..a.nrows()).collect();
    let mut isolated = Vec::new();
    loop {
        let pick = active.iter().position(|&i| {
            let row_clear = active.iter().all(|&j| j == i || a[(i, j)] == 0.0);
            let col_clear = active.iter().all(|&j| j == i || a[(j, i)] == 0.0);
            row_clear || col_clear
        });
        match pick {
            Some(k) => {
                let i = active.remove(k);
                isolated.push(a[(i, i)]);
            }
            None => return (isolated, active),
        }
    }
}

fn schur_eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("eigenvalues of non-square matrix".into()));
    }
    let (isolated, rest) = isolate_eigenvalues(a);
    let mut out: Vec<Complex<f64>> = isolated.into_iter().map(|x| Complex::new(x, 0.0)).collect();
    if rest.is_empty() {
        return Ok(out);
    }
    let sub = a.select_rows(&rest).select_columns(&rest);
    let schur = sub.try_schur(SCHUR_EPS, SCHUR_MAX_ITER).ok_or(Error::NoConvergence)?;
    out.extend(schur.complex_eigenvalues().iter().copied());
    Ok(out)
}

/// All eigenvalues of a real square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    schur_eigenvalues(a)
}

/// Full eigendecomposition of a real square matrix. Eigenvectors are
/// recovered as the right singular vector of `A - lambda I` with the smallest
/// singular value, normalized to unit length.
pub fn eigen(a: &Mat) -> Result<EigenDecomposition> {
    let values = schur_eigenvalues(a)?;
    let n = a.nrows();
    let ac: CMat = a.map(|x| Complex::new(x, 0.0));
    let mut vectors = CMat::zeros(n, n);
    for (k, lam) in values.iter().enumerate() {
        let shifted = &ac - CMat::identity(n, n) * *lam;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.ok_or(Error::NoConvergence)?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let v = vt.row(imin).adjoint();
        let norm = v.norm();
        vectors.set_column(k, &(v / Complex::new(norm, 0.0)));
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(schur_eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Smallest eigenvalue of a symmetric matrix (the input is symmetrized
/// first). Returns `+inf` for an empty matrix.
pub fn min_eig_sym(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(a).symmetric_eigenvalues().min()
}

pub fn max_eig_sym(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    symmetrize(a).symmetric_eigenvalues().max()
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues.
pub fn clip_psd(a: &Mat) -> Mat {
    let eig = symmetrize(a).symmetric_eigen();
    let d = eig.eigenvalues.map(|x| x.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * Mat::from_diagonal(&d) * v.transpose()))
}

/// Rank of a complex matrix from its singular values, relative cutoff.
pub fn complex_rank(a: &CMat, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let s = a.clone().svd(false, false).singular_values;
    let smax = s.max();
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > tol * smax.max(1.0)).count()
}

/// Block-diagonal assembly of square blocks.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `[[a, b], [c, d]]`.
pub fn block2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    let mut out = Mat::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}

pub fn frobenius(a: &Mat) -> f64 {
    a.norm()
}

/// Row-major nested vectors.
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// serde `serialize_with` adapter writing a matrix as nested rows.
pub fn serialize_rows<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&to_rows(m), s)
}

pub fn vec_from(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(r: usize, c: usize, xs: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, xs)
    }

    #[test]
    fn shift_register_eigenvalues() {
        let a = mat(4, 4, &[0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let mut mods: Vec<f64> = eigenvalues(&a).unwrap().iter().map(|z| z.norm()).collect();
        mods.sort_by(f64::total_cmp);
        assert_eq!(mods, vec![0.0, 0.0, 0.0, 0.5]);
        let nil = mat(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(spectral_radius(&nil).unwrap(), 0.0);
    }

    #[test]
    fn pinv_of_zero_is_transposed_zero() {
        let z = Mat::zeros(3, 2);
        let p = pinv(&z, DEFAULT_PINV_TOL);
        assert_eq!(p.shape(), (2, 3));
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn pinv_rank_deficient_diagonal() {
        let a = mat(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pinv(&a, DEFAULT_PINV_TOL);
        assert_relative_eq!(p, mat(2, 2, &[0.5, 0.0, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn pinv_penrose_identities_4x3() {
        let a = mat(
            4,
            3,
            &[0.3, -1.2, 0.7, 1.1, 0.4, -0.5, -0.8, 0.9, 0.2, 0.6, -0.1, 1.3],
        );
        let p = pinv(&a, DEFAULT_PINV_TOL);
        assert!((&a * &p * &a - &a).amax() < 1e-10);
        assert!((&p * &a * &p - &p).amax() < 1e-10);
        assert!(((&a * &p).transpose() - &a * &p).amax() < 1e-10);
        assert!(((&p * &a).transpose() - &p * &a).amax() < 1e-10);
    }

    #[test]
    fn logdet_examples() {
        assert_relative_eq!(logdet_pd(&Mat::identity(3, 3)).unwrap(), 0.0);
        let d = mat(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        assert_relative_eq!(logdet_pd(&d).unwrap(), 16f64.ln(), epsilon = 1e-14);
        // det [[2,1],[1,2]] = 4 - 1 = 3
        let a = mat(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(logdet_pd(&a).unwrap(), 3f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let a = mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(logdet_pd(&a), Err(Error::NotPositiveDefinite { .. })));
        let z = Mat::zeros(2, 2);
        assert!(logdet_pd(&z).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let a = mat(2, 2, &[0.5, 0.0, 0.0, -0.9]);
        assert_relative_eq!(spectral_radius(&a).unwrap(), 0.9, epsilon = 1e-12);
        let rot = mat(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 1.0, epsilon = 1e-12);
        // companion of z^2 - z - 1, roots (1 +- sqrt 5)/2
        let comp = mat(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(spectral_radius(&comp).unwrap(), golden, epsilon = 1e-12);
    }

    #[test]
    fn min_eig_examples() {
        assert_relative_eq!(min_eig_sym(&Mat::identity(3, 3)), 1.0, epsilon = 1e-14);
        let a = mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_relative_eq!(min_eig_sym(&a), -1.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_pairs_satisfy_definition() {
        let a = mat(3, 3, &[0.2, -1.0, 0.3, 1.0, 0.1, 0.0, 0.5, 0.4, -0.7]);
        let e = eigen(&a).unwrap();
        let ac: CMat = a.map(|x| Complex::new(x, 0.0));
        for (k, lam) in e.values.iter().enumerate() {
            let v = e.vectors.column(k);
            let r = &ac * v - v * *lam;
            assert!(r.norm() < 1e-8 * a.norm());
        }
    }

    #[test]
    fn pivoted_cholesky_handles_rank_deficiency() {
        // joint covariance of the 2-delay AR(1) model: rank 1
        let lam = mat(3, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let l = pivoted_cholesky(&lam, 1e-12);
        assert_eq!(l.ncols(), 1);
        assert!((&l * l.transpose() - &lam).amax() < 1e-14);
    }

    #[test]
    fn complex_rank_of_identity_stack() {
        let a = CMat::identity(3, 2);
        assert_eq!(complex_rank(&a, 1e-9), 2);
    }

    fn arb_matrix(r: usize, c: usize) -> impl Strategy<Value = Mat> {
        proptest::collection::vec(-2.0f64..2.0, r * c).prop_map(move |v| Mat::from_row_slice(r, c, &v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn penrose_identities(a in arb_matrix(4, 3)) {
            let p = pinv(&a, DEFAULT_PINV_TOL);
            let scale = a.norm().max(1.0) * p.norm().max(1.0);
            prop_assert!((&a * &p * &a - &a).amax() <= 1e-9 * scale);
            prop_assert!((&p * &a * &p - &p).amax() <= 1e-9 * scale * p.norm().max(1.0));
            prop_assert!(((&a * &p).transpose() - &a * &p).amax() <= 1e-9 * scale);
            prop_assert!(((&p * &a).transpose() - &p * &a).amax() <= 1e-9 * scale);
        }

        #[test]
        fn wishart_is_psd(a in arb_matrix(3, 3)) {
            let w = a.transpose() * &a;
            prop_assert!(min_eig_sym(&w) >= -1e-12 * w.norm().max(1.0));
        }

        #[test]
        fn logdet_matches_pivot_product(a in arb_matrix(3, 3)) {
            let s = a.transpose() * &a + Mat::identity(3, 3);
            let l = cholesky(&s).unwrap();
            let prod: f64 = l.diagonal().iter().map(|d| d * d).product();
            let ld = logdet_pd(&s).unwrap();
            prop_assert!((ld.exp() - prod).abs() <= 1e-10 * prod);
        }

        #[test]
        fn spectral_radius_similarity_invariant(a in arb_matrix(3, 3), t in arb_matrix(3, 3)) {
            let t = t + Mat::identity(3, 3) * 3.0; // diagonally dominant => well conditioned
            let tinv = t.clone().try_inverse().unwrap();
            let b = &t * &a * &tinv;
            let ra = spectral_radius(&a).unwrap();
            let rb = spectral_radius(&b).unwrap();
            prop_assert!((ra - rb).abs() <= 1e-7 * ra.max(1.0));
        }
    }
}
