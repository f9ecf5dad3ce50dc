//! Encoder-side Kalman filter, its stationary Riccati equation, and the
//! decoder-side filter that tracks the encoder's estimate from the channel
//! outputs alone.

use crate::detect;
use crate::error::{Error, Result};
use crate::matops::{self, Mat};
use crate::model::ChannelModel;

pub const DEFAULT_TOL: f64 = 1e-11;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Innovation covariances whose smallest eigenvalue is at or below this are
/// treated as singular.
pub const MIN_INNOVATION_EIG: f64 = 1e-10;

/// Relative cutoff for the pseudo-inverse of the decoder error covariance.
pub const SIGMA_HAT_PINV_TOL: f64 = 1e-9;

const DIVERGENCE_NORM: f64 = 1e12;

/// One step of the encoder filter.
#[derive(Debug, Clone)]
pub struct EncoderStep {
    pub sigma_next: Mat,
    pub kp: Mat,
    pub psi: Mat,
}

/// Stationary solution of the encoder Riccati equation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub sigma: Mat,
    pub kp: Mat,
    pub psi: Mat,
    pub iterations: usize,
    /// Frobenius norm of the last iterate change.
    pub residual: f64,
    /// Spectral radius of the error dynamics `F - Kp H`.
    pub closed_loop_radius: f64,
}

/// One step of the decoder filter.
#[derive(Debug, Clone)]
pub struct DecoderStep {
    pub sigma_hat_next: Mat,
    pub ky: Mat,
    pub psi_y: Mat,
}

fn innovation_inverse(psi: &Mat) -> Result<Mat> {
    let min_eig = matops::min_eig_sym(psi);
    if !(min_eig > MIN_INNOVATION_EIG) {
        return Err(Error::SingularInnovation { min_eig });
    }
    matops::inv_pd(psi)
}

/// `Psi = H S H^T + V`, `Kp = (F S H^T + L) Psi^-1`,
/// `S_next = F S F^T + W - Kp Psi Kp^T`.
pub fn encoder_step(model: &ChannelModel, sigma: &Mat) -> Result<EncoderStep> {
    let n = model.dims.n;
    if sigma.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("Sigma must be {n}x{n}")));
    }
    let ht = model.h.transpose();
    let psi = matops::symmetrize(&(&model.h * sigma * &ht + &model.v));
    let psi_inv = innovation_inverse(&psi)?;
    let kp = (&model.f * sigma * &ht + &model.l) * psi_inv;
    let sigma_next = &model.f * sigma * model.f.transpose() + &model.w - &kp * &psi * kp.transpose();
    Ok(EncoderStep { sigma_next: matops::symmetrize(&sigma_next), kp, psi })
}

/// Starting point that dominates the maximal solution for the test models.
pub fn default_riccati_init(model: &ChannelModel) -> Result<Mat> {
    let n = model.dims.n;
    let rho = matops::spectral_radius(&model.f)?;
    let gap = (1.0 - rho).max(0.0);
    let c = 10.0 * (1.0 + model.w.norm()) / (gap * gap + 0.01);
    Ok(Mat::identity(n, n) * c)
}

/// Fixed-point iteration of the encoder Riccati recursion until the
/// Frobenius change drops below `tol`.
pub fn solve_dare(model: &ChannelModel, sigma_init: Option<&Mat>, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    let pbh = detect::detectable_pbh(&model.f, &model.h, detect::PBH_TOL);
    if !pbh.detectable {
        let lam = pbh.offending_eigenvalue.unwrap_or_default();
        return Err(Error::NotDetectable { re: lam.re, im: lam.im });
    }
    let n = model.dims.n;
    let mut sigma = match sigma_init {
        Some(s) => {
            if s.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("Sigma_init must be {n}x{n}")));
            }
            s.clone()
        }
        None => default_riccati_init(model)?,
    };
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let step = encoder_step(model, &sigma)?;
        residual = (&step.sigma_next - &sigma).norm();
        sigma = step.sigma_next;
        let norm = sigma.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::RiccatiDivergence(format!("iterate norm {norm:.3e} at iteration {it}")));
        }
        if residual < tol {
            let fin = encoder_step(model, &sigma)?;
            let closed_loop_radius = matops::spectral_radius(&(&model.f - &fin.kp * &model.h))?;
            if closed_loop_radius >= 1.0 + 1e-8 {
                log::warn!("Riccati solution is not stabilizing: rho(F - Kp H) = {closed_loop_radius}");
            }
            return Ok(RiccatiSolution {
                sigma,
                kp: fin.kp,
                psi: fin.psi,
                iterations: it,
                residual,
                closed_loop_radius,
            });
        }
    }
    Err(Error::RiccatiDivergence(format!(
        "no convergence in {max_iter} iterations (last change {residual:.3e})"
    )))
}

/// `||Sigma - (F Sigma F^T + W - Kp Psi Kp^T)||_F` at a candidate solution.
pub fn stationarity_residual(model: &ChannelModel, sigma: &Mat) -> Result<f64> {
    Ok((encoder_step(model, sigma)?.sigma_next - sigma).norm())
}

/// Decoder update for an arbitrary deployed feedback gain `phi` (the matrix
/// multiplying `s_hat - s_hat_hat` in the input law) with explicit encoder
/// constants `kp`, `psi`.
pub fn decoder_update(model: &ChannelModel, kp: &Mat, psi: &Mat, phi: &Mat, m: &Mat, sigma_hat: &Mat) -> Result<DecoderStep> {
    let a = &model.f + &model.g * phi;
    let c = &model.h + &model.j * phi;
    let psi_y = matops::symmetrize(&(&c * sigma_hat * c.transpose() + &model.j * m * model.j.transpose() + psi));
    let min_eig = matops::min_eig_sym(&psi_y);
    if !(min_eig > MIN_INNOVATION_EIG) {
        return Err(Error::SingularOutputCovariance { min_eig });
    }
    let ky_psi = &a * sigma_hat * c.transpose() + &model.g * m * model.j.transpose() + kp * psi;
    let ky = &ky_psi * matops::inv_pd(&psi_y)?;
    let next = &a * sigma_hat * a.transpose() + &model.g * m * model.g.transpose() + kp * psi * kp.transpose()
        - &ky * &psi_y * ky.transpose();
    Ok(DecoderStep { sigma_hat_next: matops::symmetrize(&next), ky, psi_y })
}

/// Eigenvalues of `SigmaHat` at or below this fraction of `max(1, |SigmaHat|)`
/// are treated as zero when forming the deployed gain.
pub const GAIN_CUTOFF: f64 = 1e-7;

/// Deployed feedback gain `Phi = Gamma SigmaHat^+`. Directions in which the
/// decoder is (numerically) certain carry no feedback.
pub fn feedback_gain(gamma: &Mat, sigma_hat: &Mat) -> Mat {
    let scale = matops::max_eig_sym(sigma_hat).max(0.0);
    if scale <= 0.0 {
        return Mat::zeros(gamma.nrows(), gamma.ncols());
    }
    let tol = GAIN_CUTOFF * scale.max(1.0) / scale;
    gamma * matops::pinv(&matops::symmetrize(sigma_hat), tol)
}

/// Decoder filter step driven by the policy `(Gamma, M)` at the current
/// decoder error covariance, using the stationary encoder constants.
pub fn decoder_step(model: &ChannelModel, enc: &RiccatiSolution, gamma: &Mat, m: &Mat, sigma_hat: &Mat) -> Result<DecoderStep> {
    let crate::model::Dims { n, m: mdim, .. } = model.dims;
    if gamma.shape() != (mdim, n) || m.shape() != (mdim, mdim) || sigma_hat.shape() != (n, n) {
        return Err(Error::DimensionMismatch("decoder_step: Gamma m x n, M m x m, SigmaHat n x n".into()));
    }
    let sh_pinv = matops::pinv(sigma_hat, SIGMA_HAT_PINV_TOL);
    let ortho = gamma * (Mat::identity(n, n) - sigma_hat * &sh_pinv);
    let residual = ortho.amax();
    if residual > 1e-8 * gamma.amax().max(1.0) {
        return Err(Error::OrthogonalityViolated { residual });
    }
    let phi = gamma * sh_pinv;
    decoder_update(model, &enc.kp, &enc.psi, &phi, m, sigma_hat)
}
