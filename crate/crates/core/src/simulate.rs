//! Monte Carlo runs of a channel driven by a stationary feedback policy
//! `x_i = Phi (s_hat_i - s_hat_hat_i) + m_i`, `m_i ~ N(0, M)`, with
//! `Phi = Gamma SigmaHat^+`.
//!
//! The encoder tracks `s_hat_i = E[s_i | x^{i-1}, y^{i-1}]`, the decoder
//! tracks `s_hat_hat_i = E[s_hat_i | y^{i-1}]`. Both filters use the
//! deterministic time-varying gains of their covariance recursions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::CapacitySolution;
use crate::error::{Error, Result};
use crate::kalman;
use crate::matops::{self, serialize_rows, Mat};
use crate::model::{ChannelModel, Dims};

type Vector = nalgebra::DVector<f64>;

/// Largest autocorrelation lag checked for whiteness.
pub const WHITENESS_LAGS: usize = 10;
const NOISE_RANK_TOL: f64 = 1e-12;

/// Stationary policy `(Gamma, M)` together with the `SigmaHat` used in the
/// control law.
#[derive(Debug, Clone, Serialize)]
pub struct Policy {
    #[serde(serialize_with = "serialize_rows")]
    pub gamma: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub m: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub sigma_hat: Mat,
}

impl Policy {
    pub fn from_solution(sol: &CapacitySolution) -> Self {
        Policy { gamma: sol.gamma.clone(), m: sol.m.clone(), sigma_hat: sol.sigma_hat.clone() }
    }

    /// The zero policy: no input at all.
    pub fn silent(dims: Dims) -> Self {
        Policy { gamma: Mat::zeros(dims.m, dims.n), m: Mat::zeros(dims.m, dims.m), sigma_hat: Mat::zeros(dims.n, dims.n) }
    }

    fn check(&self, dims: Dims) -> Result<()> {
        if self.gamma.shape() != (dims.m, dims.n)
            || self.m.shape() != (dims.m, dims.m)
            || self.sigma_hat.shape() != (dims.n, dims.n)
        {
            return Err(Error::DimensionMismatch(format!(
                "policy needs Gamma {m}x{n}, M {m}x{m}, SigmaHat {n}x{n}",
                m = dims.m,
                n = dims.n
            )));
        }
        if matops::min_eig_sym(&self.m) < -1e-9 {
            return Err(Error::InvalidParameter("policy covariance M must be PSD".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub policy: Policy,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// Mean of `x^T x` over all steps and trials.
    pub empirical_power: f64,
    /// Standard error of `empirical_power` from the per-trial means.
    pub power_std_error: f64,
    /// `(1/horizon) sum 1/2 (log det PsiY_i - log det Psi_i)`.
    pub analytic_rate_nats: f64,
    /// Sample covariance of the decoder innovations `y_i - H s_hat_hat_i`.
    #[serde(serialize_with = "serialize_rows")]
    pub empirical_innovation_cov: Mat,
    /// Largest normalized autocorrelation magnitude of the encoder
    /// innovations over lags `1..=10`.
    pub whiteness_maxlag_corr: f64,
    /// Sample covariance of the encoder innovations `e_i`.
    #[serde(serialize_with = "serialize_rows")]
    pub encoder_innovation_cov: Mat,
}

/// Gains of both filters along the run, shared by every trial.
struct GainSchedule {
    kp: Vec<Mat>,
    ky: Vec<Mat>,
    psi: Vec<Mat>,
    psi_y: Vec<Mat>,
}

fn gain_schedule(model: &ChannelModel, phi: &Mat, m: &Mat, sigma_hat_init: &Mat, horizon: usize) -> Result<GainSchedule> {
    let mut out = GainSchedule {
        kp: Vec::with_capacity(horizon),
        ky: Vec::with_capacity(horizon),
        psi: Vec::with_capacity(horizon),
        psi_y: Vec::with_capacity(horizon),
    };
    let mut sigma = model.sigma1.clone();
    let mut sigma_hat = sigma_hat_init.clone();
    for _ in 0..horizon {
        let enc = kalman::encoder_step(model, &sigma)?;
        let dec = kalman::decoder_update(model, &enc.kp, &enc.psi, phi, m, &sigma_hat)?;
        sigma = enc.sigma_next;
        sigma_hat = dec.sigma_hat_next;
        out.kp.push(enc.kp);
        out.psi.push(enc.psi);
        out.ky.push(dec.ky);
        out.psi_y.push(dec.psi_y);
    }
    Ok(out)
}

fn step_rates(gains: &GainSchedule) -> Result<Vec<f64>> {
    gains
        .psi_y
        .iter()
        .zip(&gains.psi)
        .map(|(py, p)| Ok(0.5 * (matops::logdet_pd(py)? - matops::logdet_pd(p)?)))
        .collect()
}

/// Per-step rates `1/2 (log det PsiY_i - log det Psi_i)` with the encoder
/// started at `Sigma1` and the decoder at `sigma_hat_init`. The control law
/// keeps the policy's stationary `SigmaHat` throughout.
pub fn analytic_rate_trajectory(model: &ChannelModel, policy: &Policy, sigma_hat_init: &Mat, horizon: usize) -> Result<Vec<f64>> {
    policy.check(model.dims)?;
    if sigma_hat_init.shape() != policy.sigma_hat.shape() {
        return Err(Error::DimensionMismatch("initial SigmaHat has the wrong shape".into()));
    }
    let phi = kalman::feedback_gain(&policy.gamma, &policy.sigma_hat);
    step_rates(&gain_schedule(model, &phi, &policy.m, sigma_hat_init, horizon)?)
}

/// Standard normals by Box-Muller.
struct Gaussian {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gaussian {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Gaussian { rng, spare: None }
    }

    fn uniform_open(&mut self) -> f64 {
        // 53 random bits, shifted into (0, 1]
        ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    fn vector(&mut self, factor: &Mat) -> Vector {
        let z = Vector::from_iterator(factor.ncols(), (0..factor.ncols()).map(|_| self.next()));
        factor * z
    }
}

/// Sums gathered from one trial.
struct TrialStats {
    power_sum: f64,
    enc_sum: Vector,
    enc_outer: Mat,
    dec_sum: Vector,
    dec_outer: Mat,
    /// `[lag][component]` sums of `e_i e_{i+lag}`; lag 0 is the energy.
    lag_sums: Vec<Vec<f64>>,
}

struct Factors {
    sigma1: Mat,
    noise: Mat,
    m: Mat,
}

fn run_trial(model: &ChannelModel, gains: &GainSchedule, phi: &Mat, factors: &Factors, horizon: usize, seed: u64, trial: u64) -> TrialStats {
    let Dims { n, p, .. } = model.dims;
    let mut rng = Gaussian::new(seed, trial);
    let mut s = rng.vector(&factors.sigma1);
    let mut s_hat = Vector::zeros(n);
    let mut s_hat_hat = Vector::zeros(n);
    let mut stats = TrialStats {
        power_sum: 0.0,
        enc_sum: Vector::zeros(p),
        enc_outer: Mat::zeros(p, p),
        dec_sum: Vector::zeros(p),
        dec_outer: Mat::zeros(p, p),
        lag_sums: vec![vec![0.0; p]; WHITENESS_LAGS + 1],
    };
    let mut innovations: Vec<Vector> = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let x = phi * (&s_hat - &s_hat_hat) + rng.vector(&factors.m);
        let wv = rng.vector(&factors.noise);
        let w = wv.rows(0, n).into_owned();
        let v = wv.rows(n, p).into_owned();
        let y = &model.h * &s + &model.j * &x + v;

        let e = &y - &model.h * &s_hat - &model.j * &x;
        let d = &y - &model.h * &s_hat_hat;

        s = &model.f * &s + &model.g * &x + w;
        s_hat = &model.f * &s_hat + &model.g * &x + &gains.kp[i] * &e;
        s_hat_hat = &model.f * &s_hat_hat + &gains.ky[i] * &d;

        stats.power_sum += x.norm_squared();
        stats.enc_sum += &e;
        stats.enc_outer += &e * e.transpose();
        stats.dec_sum += &d;
        stats.dec_outer += &d * d.transpose();
        innovations.push(e);
    }
    for lag in 0..=WHITENESS_LAGS {
        for i in 0..horizon.saturating_sub(lag) {
            let (a, b) = (&innovations[i], &innovations[i + lag]);
            for c in 0..p {
                stats.lag_sums[lag][c] += a[c] * b[c];
            }
        }
    }
    stats
}

fn sample_cov(sum: &Vector, outer: &Mat, count: f64) -> Mat {
    let mean = sum / count;
    matops::symmetrize(&(outer / count - &mean * mean.transpose()))
}

/// Simulates `config.trials` independent runs of `config.horizon` steps.
/// Trials run in parallel; each draws from its own seeded stream and
/// results are combined in trial order, so equal seeds give identical
/// results.
pub fn simulate_policy(model: &ChannelModel, config: &SimConfig) -> Result<SimResult> {
    if config.horizon == 0 || config.trials == 0 {
        return Err(Error::InvalidParameter("horizon and trials must be at least 1".into()));
    }
    config.policy.check(model.dims)?;
    let Dims { n, p, .. } = model.dims;
    let policy = &config.policy;
    let phi = kalman::feedback_gain(&policy.gamma, &policy.sigma_hat);
    let gains = gain_schedule(model, &phi, &policy.m, &Mat::zeros(n, n), config.horizon)?;
    let rates = step_rates(&gains)?;
    let factors = Factors {
        sigma1: matops::pivoted_cholesky(&model.sigma1, NOISE_RANK_TOL),
        noise: matops::pivoted_cholesky(&model.joint_noise(), NOISE_RANK_TOL),
        m: matops::pivoted_cholesky(&policy.m, NOISE_RANK_TOL),
    };

    let per_trial: Vec<TrialStats> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(model, &gains, &phi, &factors, config.horizon, config.seed, t as u64))
        .collect();

    let steps = config.horizon as f64;
    let total = steps * config.trials as f64;
    let mut power_sum = 0.0;
    let mut enc_sum = Vector::zeros(p);
    let mut enc_outer = Mat::zeros(p, p);
    let mut dec_sum = Vector::zeros(p);
    let mut dec_outer = Mat::zeros(p, p);
    let mut lag_sums = vec![vec![0.0; p]; WHITENESS_LAGS + 1];
    let mut trial_means = Vec::with_capacity(config.trials);
    for st in &per_trial {
        power_sum += st.power_sum;
        trial_means.push(st.power_sum / steps);
        enc_sum += &st.enc_sum;
        enc_outer += &st.enc_outer;
        dec_sum += &st.dec_sum;
        dec_outer += &st.dec_outer;
        for (acc, s) in lag_sums.iter_mut().zip(&st.lag_sums) {
            for (a, b) in acc.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
    let empirical_power = power_sum / total;
    let power_std_error = if config.trials > 1 {
        let var = trial_means.iter().map(|m| (m - empirical_power).powi(2)).sum::<f64>() / (config.trials - 1) as f64;
        (var / config.trials as f64).sqrt()
    } else {
        f64::NAN
    };
    let mut whiteness = 0.0_f64;
    for lagged in &lag_sums[1..=WHITENESS_LAGS] {
        for (num, &energy) in lagged.iter().zip(&lag_sums[0]) {
            if energy > 0.0 {
                whiteness = whiteness.max((num / energy).abs());
            }
        }
    }
    Ok(SimResult {
        empirical_power,
        power_std_error,
        analytic_rate_nats: rates.iter().sum::<f64>() / steps,
        empirical_innovation_cov: sample_cov(&dec_sum, &dec_outer, total),
        whiteness_maxlag_corr: whiteness,
        encoder_innovation_cov: sample_cov(&enc_sum, &enc_outer, total),
    })
}
