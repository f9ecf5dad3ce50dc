//! Detectability of `(A, B)` pairs: every mode of `A` on or outside the unit
//! circle must be visible through `B`.

use nalgebra::Complex;
use serde::Serialize;

use crate::error::Result;
use crate::kalman;
use crate::matops::{self, CMat, Mat};
use crate::model::ChannelModel;
use crate::sdp::{AffineExpr, MaxDetProblem};

/// Eigenvalues with modulus at least `1 - PBH_TOL` count as unstable.
pub const PBH_TOL: f64 = 1e-9;
/// Relative singular-value cutoff for the PBH rank test.
const RANK_TOL: f64 = 1e-9;
/// The LMI certificate must clear this margin.
pub const LMI_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectMethod {
    Pbh,
    Lmi,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectReport {
    pub detectable: bool,
    pub method: DetectMethod,
    #[serde(skip)]
    pub witness_p: Option<Mat>,
    #[serde(skip)]
    pub offending_eigenvalue: Option<Complex<f64>>,
    /// Achieved LMI margin, LMI method only.
    pub margin: Option<f64>,
}

/// Popov-Belevitch-Hautus test: `[A - lambda I; B]` must have full column
/// rank at every eigenvalue with `|lambda| >= 1 - tol`.
pub fn detectable_pbh(a: &Mat, b: &Mat, tol: f64) -> DetectReport {
    let n = a.nrows();
    let q = b.nrows();
    let eigs = match matops::eigenvalues(a) {
        Ok(e) => e,
        Err(_) => {
            log::warn!("PBH: eigensolver failed; reporting not detectable");
            return DetectReport {
                detectable: false,
                method: DetectMethod::Pbh,
                witness_p: None,
                offending_eigenvalue: None,
                margin: None,
            };
        }
    };
    let ac: CMat = a.map(|x| Complex::new(x, 0.0));
    for lam in eigs {
        if lam.norm() < 1.0 - tol {
            continue;
        }
        let mut stacked = CMat::zeros(n + q, n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&(&ac - CMat::identity(n, n) * lam));
        if q > 0 {
            stacked.view_mut((n, 0), (q, n)).copy_from(&b.map(|x| Complex::new(x, 0.0)));
        }
        if matops::complex_rank(&stacked, RANK_TOL) < n {
            return DetectReport {
                detectable: false,
                method: DetectMethod::Pbh,
                witness_p: None,
                offending_eigenvalue: Some(lam),
                margin: None,
            };
        }
    }
    DetectReport { detectable: true, method: DetectMethod::Pbh, witness_p: None, offending_eigenvalue: None, margin: None }
}

/// LMI test: find `P > 0` with `[[P, P A], [A^T P, P + B^T B]] > 0`. The
/// margin is maximized under `trace(P) <= n`, so it is scale-aware but the
/// certificate may use small `P`.
pub fn detectable_lmi(a: &Mat, b: &Mat) -> Result<DetectReport> {
    let n = a.nrows();
    let mut prob = MaxDetProblem::new();
    let (_, p) = prob.add_var("P", n, n, true);
    let pa = p.rmul(a);
    let btb = b.transpose() * b;
    let blk = AffineExpr::sym_block2(&p, &pa, &(p.clone() + btb));
    prob.add_lmi(p.clone());
    prob.add_lmi(blk);
    prob.add_ineq(p.trace().plus(-(n as f64)));
    let feas = prob.check_feasibility()?;
    let detectable = feas.margin > LMI_MARGIN;
    Ok(DetectReport {
        detectable,
        method: DetectMethod::Lmi,
        witness_p: detectable.then(|| feas.point.blocks[0].clone()),
        offending_eigenvalue: None,
        margin: Some(feas.margin),
    })
}

/// `(F + G Phi, H + J Phi)` with the deployed gain `Phi = Gamma SigmaHat^+`.
pub fn closed_loop_pair(model: &ChannelModel, gamma: &Mat, sigma_hat: &Mat) -> (Mat, Mat) {
    let phi = kalman::feedback_gain(gamma, sigma_hat);
    (&model.f + &model.g * &phi, &model.h + &model.j * &phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, xs: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, xs)
    }

    #[test]
    fn stable_pair_without_output_is_detectable() {
        let a = m(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        let b = Mat::zeros(1, 2);
        assert!(detectable_pbh(&a, &b, PBH_TOL).detectable);
        assert!(detectable_lmi(&a, &b).unwrap().detectable);
    }

    #[test]
    fn unstable_unobserved_scalar() {
        let rep = detectable_pbh(&m(1, 1, &[2.0]), &m(1, 1, &[0.0]), PBH_TOL);
        assert!(!rep.detectable);
        let lam = rep.offending_eigenvalue.unwrap();
        assert!((lam.re - 2.0).abs() < 1e-12 && lam.im.abs() < 1e-12);
        assert!(!detectable_lmi(&m(1, 1, &[2.0]), &m(1, 1, &[0.0])).unwrap().detectable);
    }

    #[test]
    fn unstable_observed_mode() {
        let a = m(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = m(1, 2, &[1.0, 0.0]);
        assert!(detectable_pbh(&a, &b, PBH_TOL).detectable);
        assert!(detectable_lmi(&a, &b).unwrap().detectable);
        // observing only the stable mode is not enough
        let b2 = m(1, 2, &[0.0, 1.0]);
        assert!(!detectable_pbh(&a, &b2, PBH_TOL).detectable);
        assert!(!detectable_lmi(&a, &b2).unwrap().detectable);
    }

    #[test]
    fn unit_circle_counts_as_unstable() {
        let rot = m(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(!detectable_pbh(&rot, &Mat::zeros(1, 2), PBH_TOL).detectable);
        assert!(detectable_pbh(&rot, &m(1, 2, &[1.0, 0.0]), PBH_TOL).detectable);
    }

    #[test]
    fn lmi_witness_satisfies_inequality() {
        let a = m(1, 1, &[0.5]);
        let b = m(1, 1, &[1.0]);
        let rep = detectable_lmi(&a, &b).unwrap();
        assert!(rep.detectable);
        let p = rep.witness_p.unwrap();
        let blk = matops::block2(&p, &(&p * &a), &(a.transpose() * &p), &(&p + b.transpose() * &b));
        assert!(matops::min_eig_sym(&p) > 0.0);
        assert!(matops::min_eig_sym(&blk) > 0.0);
        // explicit witness P = 1: [[1, 0.5], [0.5, 2]] > 0
        assert!(matops::min_eig_sym(&m(2, 2, &[1.0, 0.5, 0.5, 2.0])) > 0.0);
    }

    #[test]
    fn closed_loop_pair_trivial_cases() {
        let model = crate::model::make_ar1_channel(crate::model::Ar1Params::new(0.5)).unwrap();
        let (a, b) = closed_loop_pair(&model, &m(1, 1, &[0.0]), &m(1, 1, &[0.7]));
        assert_eq!((a, b), (model.f.clone(), model.h.clone()));
        let (a, b) = closed_loop_pair(&model, &m(1, 1, &[0.3]), &m(1, 1, &[0.0]));
        assert_eq!((a, b), (model.f.clone(), model.h.clone()));
    }
}
