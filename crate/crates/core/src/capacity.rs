//! Feedback capacity of state-space channels as a log-det program, its
//! finite-horizon counterpart, and the AR(1) baselines.
//!
//! The stationary program, over `Gamma` (m x n), `Pi` (m x m) and
//! `SigmaHat` (n x n), is
//!
//! ```text
//! max  1/2 log det PsiY - 1/2 log det Psi
//! s.t. [[Pi, Gamma], [Gamma^T, SigmaHat]] >= 0
//!      [[Omega, KPsi], [KPsi^T, PsiY]]   >= 0
//!      trace(Pi) <= P
//! ```
//!
//! where `PsiY`, `KPsi` (the product `K_Y PsiY`) and `Omega` are affine in
//! the decision variables.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::detect;
use crate::error::{Error, Result};
use crate::kalman::{self, RiccatiSolution};
use crate::matops::{self, serialize_rows, Mat};
use crate::model::{self, Ar1Params, ChannelModel, ModelFile};
use crate::sdp::{AffineExpr, BarrierParams, MaxDetProblem, SolveStatus, VarId};

pub const DEFAULT_TOL: f64 = 1e-8;
/// Slack on the Riccati-inequality LMI. Some channels (AWGN among them) force
/// `SigmaHat = 0`, which leaves the feasible set without interior.
pub const RICCATI_LMI_RELAX: f64 = 1e-8;
/// Negative eigenvalues of the recovered `M` down to this are clipped.
const M_CLIP: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct CapacityOptions {
    /// Duality-gap target of the barrier method.
    pub tol: f64,
    pub relax: f64,
    pub barrier: BarrierParams,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        CapacityOptions { tol: DEFAULT_TOL, relax: RICCATI_LMI_RELAX, barrier: BarrierParams::default() }
    }
}

impl CapacityOptions {
    pub fn with_tol(tol: f64) -> Self {
        CapacityOptions { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacitySolution {
    #[serde(serialize_with = "serialize_rows")]
    pub gamma: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub pi: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub sigma_hat: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub psi_y: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub ky: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub omega: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub m: Mat,
    pub rate_nats: f64,
    pub rate_bits: f64,
    /// When false the rate is an upper bound only.
    pub closed_loop_detectable: bool,
    pub solver_status: SolveStatus,
    pub kkt_residual: f64,
    pub min_lmi_eig: f64,
    /// Stationary encoder filter: error covariance, gain, innovation covariance.
    #[serde(serialize_with = "serialize_rows")]
    pub sigma: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub kp: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub psi: Mat,
}

impl CapacitySolution {
    /// Deployed feedback gain `Gamma SigmaHat^+`.
    pub fn phi(&self) -> Mat {
        kalman::feedback_gain(&self.gamma, &self.sigma_hat)
    }
}

/// Handles into a built stationary program.
#[derive(Debug, Clone)]
pub struct StationaryProgram {
    pub problem: MaxDetProblem,
    pub gamma: VarId,
    pub pi: VarId,
    pub sigma_hat: VarId,
    pub psi_y: AffineExpr,
    pub ky_psi_y: AffineExpr,
    pub omega: AffineExpr,
}

/// Affine pieces of one step of the decoder recursion.
struct StepExprs {
    psi_y: AffineExpr,
    ky_psi_y: AffineExpr,
    /// `Omega` without the `- SigmaHat_next` term.
    riccati_rhs: AffineExpr,
}

fn step_exprs(model: &ChannelModel, kp: &Mat, psi: &Mat, gamma: &AffineExpr, pi: &AffineExpr, sigma_hat: &AffineExpr) -> StepExprs {
    let (f, g, h, j) = (&model.f, &model.g, &model.h, &model.j);
    let (ft, gt, ht, jt) = (f.transpose(), g.transpose(), h.transpose(), j.transpose());
    let gamma_t = gamma.transpose();
    let j_gamma_h = gamma.lmul(j).rmul(&ht);
    let psi_y = sigma_hat.lmul(h).rmul(&ht) + j_gamma_h.transpose() + j_gamma_h + pi.lmul(j).rmul(&jt) + psi.clone();
    let ky_psi_y = sigma_hat.lmul(f).rmul(&ht)
        + gamma_t.lmul(f).rmul(&jt)
        + gamma.lmul(g).rmul(&ht)
        + pi.lmul(g).rmul(&jt)
        + kp * psi;
    let g_gamma_f = gamma.lmul(g).rmul(&ft);
    let riccati_rhs = sigma_hat.lmul(f).rmul(&ft)
        + pi.lmul(g).rmul(&gt)
        + g_gamma_f.transpose()
        + g_gamma_f
        + kp * psi * kp.transpose();
    StepExprs { psi_y, ky_psi_y, riccati_rhs }
}

fn relaxed(expr: AffineExpr, eps: f64) -> AffineExpr {
    if eps == 0.0 {
        return expr;
    }
    let (r, _) = expr.shape();
    expr + Mat::identity(r, r) * eps
}

/// Builds the stationary program for given encoder constants.
pub fn stationary_program(model: &ChannelModel, ric: &RiccatiSolution, power: f64, relax: f64) -> StationaryProgram {
    let model::Dims { n, m, .. } = model.dims;
    let mut problem = MaxDetProblem::new();
    let (gamma, gamma_e) = problem.add_var("Gamma", m, n, false);
    let (pi, pi_e) = problem.add_var("Pi", m, m, true);
    let (sigma_hat, sh_e) = problem.add_var("SigmaHat", n, n, true);
    let ex = step_exprs(model, &ric.kp, &ric.psi, &gamma_e, &pi_e, &sh_e);
    let omega = ex.riccati_rhs - sh_e.clone();

    problem.add_lmi(AffineExpr::sym_block2(&pi_e, &gamma_e, &sh_e));
    problem.add_lmi(relaxed(AffineExpr::sym_block2(&omega, &ex.ky_psi_y, &ex.psi_y), relax));
    problem.add_ineq(pi_e.trace().plus(-power));
    let logdet_psi = matops::logdet_pd(&ric.psi).unwrap_or(f64::NAN);
    problem.set_objective(ex.psi_y.clone(), -0.5 * logdet_psi);
    StationaryProgram { problem, gamma, pi, sigma_hat, psi_y: ex.psi_y, ky_psi_y: ex.ky_psi_y, omega }
}

fn check_power(power: f64) -> Result<()> {
    if !(power >= 0.0) || !power.is_finite() {
        return Err(Error::InvalidParameter(format!("power must be finite and >= 0, got {power}")));
    }
    Ok(())
}

fn encoder_solution(model: &ChannelModel) -> Result<RiccatiSolution> {
    let report = model::validate_assumption1(model)?;
    if !report.sigma1_dominates {
        log::warn!("Sigma1 does not dominate the stationary Riccati solution");
    }
    kalman::solve_dare(model, None, kalman::DEFAULT_TOL, kalman::DEFAULT_MAX_ITER)
}

/// `Pi - Gamma SigmaHat^+ Gamma^T`, clipped to PSD.
fn recover_m(gamma: &Mat, pi: &Mat, sigma_hat: &Mat) -> Result<Mat> {
    let phi = kalman::feedback_gain(gamma, sigma_hat);
    let m = matops::symmetrize(&(pi - &phi * gamma.transpose()));
    let min_eig = matops::min_eig_sym(&m);
    if min_eig < -M_CLIP * pi.amax().max(1.0) {
        return Err(Error::InternalConsistency(format!("recovered M has eigenvalue {min_eig:.3e}")));
    }
    Ok(matops::clip_psd(&m))
}

/// Stationary feedback capacity of `model` under `trace(Pi) <= power`.
pub fn stationary_capacity(model: &ChannelModel, power: f64, opts: &CapacityOptions) -> Result<CapacitySolution> {
    check_power(power)?;
    let ric = encoder_solution(model)?;
    let model::Dims { n, m, .. } = model.dims;

    if power == 0.0 {
        let zero_mn = Mat::zeros(m, n);
        let zero_n = Mat::zeros(n, n);
        let zero_m = Mat::zeros(m, m);
        return Ok(CapacitySolution {
            ky: ric.kp.clone(),
            omega: &ric.kp * &ric.psi * ric.kp.transpose(),
            psi_y: ric.psi.clone(),
            gamma: zero_mn,
            pi: zero_m.clone(),
            sigma_hat: zero_n,
            m: zero_m,
            rate_nats: 0.0,
            rate_bits: 0.0,
            closed_loop_detectable: true,
            solver_status: SolveStatus::Optimal,
            kkt_residual: 0.0,
            min_lmi_eig: 0.0,
            sigma: ric.sigma,
            kp: ric.kp,
            psi: ric.psi,
        });
    }

    let prog = stationary_program(model, &ric, power, opts.relax);
    let sol = prog.problem.solve_maxdet_with(None, opts.tol, &opts.barrier)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible { margin: sol.min_lmi_eig }),
        other => log::warn!("capacity solve ended with status {other:?} (gap {:.3e})", sol.gap),
    }
    let x = &sol.assignment;
    let gamma = x.get(prog.gamma).clone();
    let pi = x.get(prog.pi).clone();
    let sigma_hat = x.get(prog.sigma_hat).clone();
    let psi_y = matops::symmetrize(&prog.psi_y.eval(x));
    let ky = prog.ky_psi_y.eval(x) * matops::inv_pd(&psi_y)?;
    let omega = matops::symmetrize(&prog.omega.eval(x));
    let m_mat = recover_m(&gamma, &pi, &sigma_hat)?;

    let (a, c) = detect::closed_loop_pair(model, &gamma, &sigma_hat);
    let closed_loop_detectable = detect::detectable_pbh(&a, &c, detect::PBH_TOL).detectable;
    if !closed_loop_detectable {
        log::warn!("closed-loop pair is not detectable; the rate is an upper bound only");
    }

    let rate_nats = sol.objective_value;
    Ok(CapacitySolution {
        gamma,
        pi,
        sigma_hat,
        psi_y,
        ky,
        omega,
        m: m_mat,
        rate_nats,
        rate_bits: rate_nats / std::f64::consts::LN_2,
        closed_loop_detectable,
        solver_status: sol.status,
        kkt_residual: sol.kkt_residual,
        min_lmi_eig: sol.min_lmi_eig,
        sigma: ric.sigma,
        kp: ric.kp,
        psi: ric.psi,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteStep {
    #[serde(serialize_with = "serialize_rows")]
    pub gamma: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub pi: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub sigma_hat_next: Mat,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteHorizonSolution {
    pub n_steps: usize,
    pub per_step: Vec<FiniteStep>,
    pub per_step_rate_nats: Vec<f64>,
    pub total_rate_nats: f64,
    /// `C_n / n`.
    pub normalized_rate_nats: f64,
    pub solver_status: SolveStatus,
    pub kkt_residual: f64,
    pub min_lmi_eig: f64,
}

impl FiniteHorizonSolution {
    pub fn normalized_rate_bits(&self) -> f64 {
        self.normalized_rate_nats / std::f64::consts::LN_2
    }
}

/// Handles into a built finite-horizon program.
#[derive(Debug, Clone)]
pub struct FiniteProgram {
    pub problem: MaxDetProblem,
    /// `None` at step 1, where `Gamma_1 = 0` is forced by `SigmaHat_1 = 0`.
    pub gamma: Vec<Option<VarId>>,
    pub pi: Vec<VarId>,
    /// `SigmaHat_i` for `i = 2..=n`; index 0 is `SigmaHat_2`.
    pub sigma_hat: Vec<VarId>,
    pub psi_y: Vec<AffineExpr>,
    /// Encoder constants `(Kp_i, Psi_i)` per step.
    pub encoder: Vec<(Mat, Mat)>,
}

/// Builds the joint program over `n` channel uses starting from
/// `SigmaHat_1 = 0`. `SigmaHat_{n+1}` does not enter the objective, so the
/// last step's Riccati inequality is dropped.
pub fn finite_horizon_program(model: &ChannelModel, power: f64, n: usize, relax: f64) -> Result<FiniteProgram> {
    let model::Dims { n: ns, m, .. } = model.dims;
    let mut encoder = Vec::with_capacity(n);
    let mut sigma = model.sigma1.clone();
    for _ in 0..n {
        let step = kalman::encoder_step(model, &sigma)?;
        encoder.push((step.kp, step.psi));
        sigma = step.sigma_next;
    }

    let mut problem = MaxDetProblem::new();
    let mut gamma = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    let mut sigma_hat = Vec::with_capacity(n.saturating_sub(1));
    let mut gamma_e = Vec::with_capacity(n);
    let mut pi_e = Vec::with_capacity(n);
    let mut sh_e = vec![AffineExpr::zeros(ns, ns)];
    for i in 0..n {
        if i == 0 {
            gamma.push(None);
            gamma_e.push(AffineExpr::zeros(m, ns));
        } else {
            let (id, e) = problem.add_var(&format!("Gamma_{}", i + 1), m, ns, false);
            gamma.push(Some(id));
            gamma_e.push(e);
        }
        let (id, e) = problem.add_var(&format!("Pi_{}", i + 1), m, m, true);
        pi.push(id);
        pi_e.push(e);
        if i + 1 < n {
            let (id, e) = problem.add_var(&format!("SigmaHat_{}", i + 2), ns, ns, true);
            sigma_hat.push(id);
            sh_e.push(e);
        }
    }

    let mut psi_y = Vec::with_capacity(n);
    let mut logdet_psi = 0.0;
    let mut power_sum = crate::sdp::ScalarAffine::constant(-(n as f64) * power);
    for i in 0..n {
        let (kp, psi) = &encoder[i];
        logdet_psi += matops::logdet_pd(psi)?;
        let ex = step_exprs(model, kp, psi, &gamma_e[i], &pi_e[i], &sh_e[i]);
        if i == 0 {
            problem.add_lmi(pi_e[0].clone());
        } else {
            problem.add_lmi(AffineExpr::sym_block2(&pi_e[i], &gamma_e[i], &sh_e[i]));
        }
        if i + 1 < n {
            let omega = ex.riccati_rhs - sh_e[i + 1].clone();
            problem.add_lmi(relaxed(AffineExpr::sym_block2(&omega, &ex.ky_psi_y, &ex.psi_y), relax));
        }
        power_sum = power_sum + pi_e[i].trace();
        psi_y.push(ex.psi_y);
    }
    problem.add_ineq(power_sum);
    problem.set_objective_blocks(psi_y.clone(), -0.5 * logdet_psi);
    Ok(FiniteProgram { problem, gamma, pi, sigma_hat, psi_y, encoder })
}

/// Upper bound `C_n(P)` on `n`-use directed information, via one joint
/// program over all steps.
pub fn finite_horizon_capacity(model: &ChannelModel, power: f64, n: usize, opts: &CapacityOptions) -> Result<FiniteHorizonSolution> {
    check_power(power)?;
    if n == 0 {
        return Err(Error::InvalidParameter("horizon n must be at least 1".into()));
    }
    let pbh = detect::detectable_pbh(&model.f, &model.h, detect::PBH_TOL);
    if !pbh.detectable {
        let lam = pbh.offending_eigenvalue.unwrap_or_default();
        return Err(Error::NotDetectable { re: lam.re, im: lam.im });
    }
    let model::Dims { n: ns, m, .. } = model.dims;

    if power == 0.0 {
        let step = FiniteStep { gamma: Mat::zeros(m, ns), pi: Mat::zeros(m, m), sigma_hat_next: Mat::zeros(ns, ns) };
        return Ok(FiniteHorizonSolution {
            n_steps: n,
            per_step: vec![step; n],
            per_step_rate_nats: vec![0.0; n],
            total_rate_nats: 0.0,
            normalized_rate_nats: 0.0,
            solver_status: SolveStatus::Optimal,
            kkt_residual: 0.0,
            min_lmi_eig: 0.0,
        });
    }

    let prog = finite_horizon_program(model, power, n, opts.relax)?;
    let sol = prog.problem.solve_maxdet_with(None, opts.tol, &opts.barrier)?;
    if sol.status != SolveStatus::Optimal {
        log::warn!("finite-horizon solve ended with status {:?} (gap {:.3e})", sol.status, sol.gap);
    }
    let x = &sol.assignment;
    let mut per_step = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for i in 0..n {
        let gamma = prog.gamma[i].map_or_else(|| Mat::zeros(m, ns), |id| x.get(id).clone());
        let pi = x.get(prog.pi[i]).clone();
        let (kp, psi) = &prog.encoder[i];
        let psi_y = matops::symmetrize(&prog.psi_y[i].eval(x));
        rates.push(0.5 * (matops::logdet_pd(&psi_y)? - matops::logdet_pd(psi)?));
        let sigma_hat_next = if i + 1 < n {
            x.get(prog.sigma_hat[i]).clone()
        } else {
            // the largest value the Riccati inequality allows
            let sh = if i == 0 { Mat::zeros(ns, ns) } else { x.get(prog.sigma_hat[i - 1]).clone() };
            let mm = recover_m(&gamma, &pi, &sh)?;
            let phi = kalman::feedback_gain(&gamma, &sh);
            kalman::decoder_update(model, kp, psi, &phi, &mm, &sh)?.sigma_hat_next
        };
        per_step.push(FiniteStep { gamma, pi, sigma_hat_next });
    }
    let total = sol.objective_value;
    Ok(FiniteHorizonSolution {
        n_steps: n,
        per_step,
        per_step_rate_nats: rates,
        total_rate_nats: total,
        normalized_rate_nats: total / n as f64,
        solver_status: sol.status,
        kkt_residual: sol.kkt_residual,
        min_lmi_eig: sol.min_lmi_eig,
    })
}

/// Water-filling relative error target on the power constraint.
const WATERFILL_TOL: f64 = 1e-9;

/// No-feedback capacity (nats per use) of the channel `y = g x + z` with AR(1)
/// noise `z`, by water-filling over its spectral density on `grid_size`
/// points of `[0, pi]`.
pub fn waterfill_nofb(ar1: Ar1Params, power: f64, grid_size: usize) -> Result<f64> {
    check_power(power)?;
    if (ar1.beta.abs() - 1.0).abs() < 1e-12 {
        return Err(Error::UnitCircleNoise);
    }
    if grid_size < 2 {
        return Err(Error::InvalidParameter("water-filling grid needs at least 2 points".into()));
    }
    if power == 0.0 || ar1.input_gain == 0.0 {
        return Ok(0.0);
    }
    let gain2 = ar1.input_gain * ar1.input_gain;
    let step = std::f64::consts::PI / (grid_size - 1) as f64;
    // noise referred to the input
    let sz: Vec<f64> = (0..grid_size)
        .map(|k| {
            let w = k as f64 * step;
            let mag2 = 1.0 - 2.0 * ar1.beta * w.cos() + ar1.beta * ar1.beta;
            ar1.noise_var / mag2 / gain2
        })
        .collect();
    // trapezoid weights normalized so they sum to 1, i.e. (1/pi) * integral
    let wts: Vec<f64> = (0..grid_size)
        .map(|k| if k == 0 || k == grid_size - 1 { 0.5 } else { 1.0 } / (grid_size - 1) as f64)
        .collect();
    let used = |nu: f64| -> f64 { sz.iter().zip(&wts).map(|(s, w)| w * (nu - s).max(0.0)).sum() };

    let mut lo = sz.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = sz.iter().copied().fold(0.0, f64::max) + power;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if used(mid) < power {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= WATERFILL_TOL * power * 1e-3 {
            break;
        }
    }
    let nu = 0.5 * (lo + hi);
    if (used(nu) - power).abs() > WATERFILL_TOL * power.max(1.0) {
        return Err(Error::InternalConsistency("water level bisection did not meet the power target".into()));
    }
    Ok(sz.iter().zip(&wts).map(|(s, w)| w * 0.5 * (1.0 + (nu - s).max(0.0) / s).ln()).sum())
}

/// Feedback capacity (bits per use) of the AR(1)-noise channel with unit
/// noise and input gains: `-log2 x0` for the root `x0` in `(0, 1)` of
/// `P x^2 (1 + beta x)^2 = 1 - x^2`.
pub fn ar1_capacity_oracle(beta: f64, power: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::OutOfRange(format!("beta must lie in [0, 1), got {beta}")));
    }
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::OutOfRange(format!("power must be positive, got {power}")));
    }
    let f = |x: f64| power * x * x * (1.0 + beta * x).powi(2) - (1.0 - x * x);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(-(0.5 * (lo + hi)).log2())
}

/// Distribution of random models for [`conjecture_probe`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplerConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Probability that `F` has spectral radius above one.
    pub unstable_fraction: f64,
    pub noise_scale: f64,
    pub power_range: (f64, f64),
}

impl SamplerConfig {
    pub fn square(dim: usize) -> Self {
        SamplerConfig { n: dim, m: dim, p: dim, unstable_fraction: 0.5, noise_scale: 1.0, power_range: (0.1, 10.0) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeInstance {
    pub trial: usize,
    pub power: f64,
    pub model: ModelFile,
    /// Solver error message, if the solve failed instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub trials: usize,
    /// Solves whose closed-loop pair failed the detectability check.
    pub violations: usize,
    pub solver_failures: usize,
    pub instances: Vec<ProbeInstance>,
}

fn uniform_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn sample_model(cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<ChannelModel> {
    let SamplerConfig { n, m, p, .. } = *cfg;
    loop {
        let mut f = uniform_mat(rng, n, n, -1.0, 1.0);
        let target = if rng.random::<f64>() < cfg.unstable_fraction {
            rng.random_range(1.05..1.8)
        } else {
            rng.random_range(0.0..0.95)
        };
        let rho = matops::spectral_radius(&f)?;
        if rho < 1e-6 {
            continue;
        }
        f *= target / rho;
        let g = uniform_mat(rng, n, m, -1.0, 1.0);
        let h = uniform_mat(rng, p, n, -1.0, 1.0);
        // keep J away from rank deficiency so every input reaches the output
        let mut j = uniform_mat(rng, p, m, -0.5, 0.5);
        for k in 0..p.min(m) {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            j[(k, k)] += sign * rng.random_range(0.5..1.5);
        }
        let b = uniform_mat(rng, n + p, n + p, -1.0, 1.0) * cfg.noise_scale;
        let joint = &b * b.transpose() + Mat::identity(n + p, n + p) * (0.1 * cfg.noise_scale * cfg.noise_scale);
        let w = joint.view((0, 0), (n, n)).into_owned();
        let l = joint.view((0, n), (n, p)).into_owned();
        let v = joint.view((n, n), (p, p)).into_owned();
        if !detect::detectable_pbh(&f, &h, detect::PBH_TOL).detectable {
            continue;
        }
        return ChannelModel::build(f, g, h, j, w, l, v, None);
    }
}

/// Samples random models, solves each, and counts closed-loop detectability
/// failures. Solver failures are recorded, not raised.
pub fn conjecture_probe(cfg: &SamplerConfig, trials: usize, seed: u64, opts: &CapacityOptions) -> Result<ProbeReport> {
    if cfg.n == 0 || cfg.m == 0 || cfg.p == 0 {
        return Err(Error::InvalidParameter("sampler dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ProbeReport { trials, violations: 0, solver_failures: 0, instances: Vec::new() };
    for trial in 0..trials {
        let model = sample_model(cfg, &mut rng)?.with_name(format!("probe-{trial}"));
        let (lo, hi) = cfg.power_range;
        let power = if hi > lo { rng.random_range(lo..hi) } else { lo };
        match stationary_capacity(&model, power, opts) {
            Ok(sol) if sol.closed_loop_detectable => {}
            Ok(_) => {
                report.violations += 1;
                report.instances.push(ProbeInstance { trial, power, model: model.to_file(), error: None });
            }
            Err(e) => {
                report.solver_failures += 1;
                report.instances.push(ProbeInstance { trial, power, model: model.to_file(), error: Some(e.to_string()) });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_ar1_channel;
    use approx::assert_abs_diff_eq;

    fn ar1(beta: f64) -> ChannelModel {
        make_ar1_channel(Ar1Params::new(beta)).unwrap()
    }

    #[test]
    fn awgn_is_half_bit() {
        let sol = stationary_capacity(&ChannelModel::awgn(1.0).unwrap(), 1.0, &CapacityOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.rate_bits, 0.5, epsilon = 1e-6);
        assert!(sol.closed_loop_detectable);
        assert_abs_diff_eq!(sol.pi[(0, 0)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_power_gives_zero() {
        let sol = stationary_capacity(&ar1(0.7), 0.0, &CapacityOptions::default()).unwrap();
        assert_eq!(sol.rate_nats, 0.0);
        assert_eq!(sol.gamma, Mat::zeros(1, 1));
        assert_eq!(sol.pi, Mat::zeros(1, 1));
    }

    #[test]
    fn ar1_matches_closed_form() {
        let sol = stationary_capacity(&ar1(0.5), 1.0, &CapacityOptions::default()).unwrap();
        let oracle = ar1_capacity_oracle(0.5, 1.0).unwrap();
        assert_abs_diff_eq!(sol.rate_bits, oracle, epsilon = 1e-4);
        assert_abs_diff_eq!(oracle, 0.716753, epsilon = 1e-6);
    }

    #[test]
    fn solution_invariants_hold() {
        let prog_model = ar1(0.8);
        let sol = stationary_capacity(&prog_model, 1.0, &CapacityOptions::default()).unwrap();
        let blk1 = matops::block2(&sol.pi, &sol.gamma, &sol.gamma.transpose(), &sol.sigma_hat);
        assert!(matops::min_eig_sym(&blk1) >= -1e-7);
        assert!(sol.pi.trace() <= 1.0 + 1e-7);
        let kyp = &sol.ky * &sol.psi_y;
        let blk2 = matops::block2(&sol.omega, &kyp, &kyp.transpose(), &sol.psi_y);
        assert!(matops::min_eig_sym(&blk2) >= -1e-7);
        assert_abs_diff_eq!(sol.rate_bits, sol.rate_nats / std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(matops::min_eig_sym(&sol.m) >= 0.0);
    }

    #[test]
    fn oracle_special_cases() {
        assert_abs_diff_eq!(ar1_capacity_oracle(0.0, 1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(ar1_capacity_oracle(1.0, 1.0), Err(Error::OutOfRange(_))));
        assert!(matches!(ar1_capacity_oracle(-0.1, 1.0), Err(Error::OutOfRange(_))));
        let mut prev = 0.0;
        for k in 0..20 {
            let c = ar1_capacity_oracle(k as f64 * 0.05, 1.0).unwrap();
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn waterfill_flat_and_zero() {
        let flat = waterfill_nofb(Ar1Params::new(0.0), 1.0, 512).unwrap();
        assert_abs_diff_eq!(flat, 0.5 * 2f64.ln(), epsilon = 1e-9);
        assert_eq!(waterfill_nofb(Ar1Params::new(0.5), 0.0, 512).unwrap(), 0.0);
        assert!(matches!(waterfill_nofb(Ar1Params::new(1.0), 1.0, 512), Err(Error::UnitCircleNoise)));
        let nofb = waterfill_nofb(Ar1Params::new(0.5), 1.0, 4096).unwrap() / std::f64::consts::LN_2;
        assert!(nofb < ar1_capacity_oracle(0.5, 1.0).unwrap());
    }

    #[test]
    fn finite_horizon_single_use_is_awgn() {
        let fh = finite_horizon_capacity(&ChannelModel::awgn(1.0).unwrap(), 1.0, 1, &CapacityOptions::default()).unwrap();
        assert_abs_diff_eq!(fh.normalized_rate_bits(), 0.5, epsilon = 1e-6);
        assert_eq!(fh.per_step[0].gamma, Mat::zeros(1, 1));
    }

    #[test]
    fn feedback_helps_from_second_use() {
        let model = ar1(0.5);
        let opts = CapacityOptions::default();
        let c1 = finite_horizon_capacity(&model, 1.0, 1, &opts).unwrap().normalized_rate_nats;
        let c2 = finite_horizon_capacity(&model, 1.0, 2, &opts).unwrap().normalized_rate_nats;
        assert!(c2 > c1 + 1e-6, "c1 = {c1}, c2 = {c2}");
    }

    #[test]
    fn empty_probe() {
        let rep = conjecture_probe(&SamplerConfig::square(1), 0, 7, &CapacityOptions::default()).unwrap();
        assert_eq!((rep.trials, rep.violations, rep.instances.len()), (0, 0, 0));
    }
}
