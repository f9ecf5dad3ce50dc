//! Linear state-space channel models.
//!
//! ```text
//! s_{i+1} = F s_i + G x_i + w_i
//! y_i     = H s_i + J x_i + v_i,      (w_i, v_i) ~ N(0, [[W, L], [L^T, V]])
//! s_1 ~ N(0, Sigma1)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect;
use crate::error::{Error, Result};
use crate::kalman;
use crate::matops::{self, to_rows, Mat};

/// Absolute tolerance on the minimum eigenvalue for PSD validation.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// state dimension
    pub n: usize,
    /// input dimension
    pub m: usize,
    /// output dimension
    pub p: usize,
}

/// A validated channel model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub f: Mat,
    pub g: Mat,
    pub h: Mat,
    pub j: Mat,
    pub w: Mat,
    pub l: Mat,
    pub v: Mat,
    pub sigma1: Mat,
    pub dims: Dims,
    pub name: Option<String>,
}

/// Parameters of the first-order auto-regressive noise `z_i = beta z_{i-1} + w_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Params {
    pub beta: f64,
    pub input_gain: f64,
    pub noise_var: f64,
}

impl Ar1Params {
    pub fn new(beta: f64) -> Self {
        Ar1Params { beta, input_gain: 1.0, noise_var: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Assumption1Report {
    pub detectable: bool,
    pub sigma1_dominates: bool,
}

fn check_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric(name: &str, m: &Mat) -> Result<()> {
    if !matops::is_symmetric(m, 1e-12) {
        return Err(Error::InvalidParameter(format!("{name} must be symmetric")));
    }
    Ok(())
}

impl ChannelModel {
    /// Validates the matrices and assembles a model. When `sigma1` is `None`
    /// the initial covariance defaults to the stationary Riccati solution.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        f: Mat,
        g: Mat,
        h: Mat,
        j: Mat,
        w: Mat,
        l: Mat,
        v: Mat,
        sigma1: Option<Mat>,
    ) -> Result<Self> {
        let n = f.nrows();
        let m = g.ncols();
        let p = h.nrows();
        check_shape("F", &f, n, n)?;
        check_shape("G", &g, n, m)?;
        check_shape("H", &h, p, n)?;
        check_shape("J", &j, p, m)?;
        check_shape("W", &w, n, n)?;
        check_shape("L", &l, n, p)?;
        check_shape("V", &v, p, p)?;
        check_symmetric("W", &w)?;
        check_symmetric("V", &v)?;
        if p == 0 {
            return Err(Error::DimensionMismatch("channel output dimension p must be positive".into()));
        }
        let all_finite = [&f, &g, &h, &j, &w, &l, &v].iter().all(|m| m.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::InvalidParameter("model matrices must be finite".into()));
        }

        let joint = matops::block2(&w, &l, &l.transpose(), &v);
        let min_eig = matops::min_eig_sym(&joint);
        if min_eig < -PSD_TOL {
            return Err(Error::JointNoiseNotPsd { min_eig });
        }

        let dims = Dims { n, m, p };
        let mut model = ChannelModel {
            f,
            g,
            h,
            j,
            w: matops::symmetrize(&w),
            l,
            v: matops::symmetrize(&v),
            sigma1: Mat::zeros(n, n),
            dims,
            name: None,
        };
        model.sigma1 = match sigma1 {
            Some(s) => {
                check_shape("Sigma1", &s, n, n)?;
                check_symmetric("Sigma1", &s)?;
                let min_eig = matops::min_eig_sym(&s);
                if min_eig < -PSD_TOL {
                    return Err(Error::Sigma1NotPsd { min_eig });
                }
                matops::symmetrize(&s)
            }
            None => kalman::solve_dare(&model, None, kalman::DEFAULT_TOL, kalman::DEFAULT_MAX_ITER)?.sigma,
        };
        Ok(model)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Joint covariance `[[W, L], [L^T, V]]` of `(w_i, v_i)`.
    pub fn joint_noise(&self) -> Mat {
        matops::block2(&self.w, &self.l, &self.l.transpose(), &self.v)
    }

    /// Scalar AWGN channel `y = sqrt(snr) x + v`, `v ~ N(0, 1)`.
    pub fn awgn(snr: f64) -> Result<Self> {
        if !(snr >= 0.0) {
            return Err(Error::InvalidParameter(format!("snr must be nonnegative, got {snr}")));
        }
        let z = || Mat::zeros(1, 1);
        ChannelModel::build(z(), z(), z(), Mat::from_element(1, 1, snr.sqrt()), z(), z(), Mat::identity(1, 1), None)
            .map(|m| m.with_name("awgn"))
    }

    /// Reads the JSON model file format.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            f: to_rows(&self.f),
            g: to_rows(&self.g),
            h: to_rows(&self.h),
            j: to_rows(&self.j),
            w: to_rows(&self.w),
            l: Some(to_rows(&self.l)),
            v: to_rows(&self.v),
            sigma1: Some(to_rows(&self.sigma1)),
            name: self.name.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }
}

/// On-disk model description: row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "J")]
    pub j: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Vec<f64>>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    #[serde(rename = "Sigma1", default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Parses nested rows. `cols_hint` fixes the column count when there are no
/// rows at all.
fn from_rows(name: &str, rows: &[Vec<f64>], cols_hint: usize) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(cols_hint, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch(format!("{name} has ragged rows")));
    }
    Ok(Mat::from_fn(r, c, |i, k| rows[i][k]))
}

impl ModelFile {
    /// The state and observation matrices alone, without validating the rest.
    pub fn state_pair(&self) -> Result<(Mat, Mat)> {
        let f = from_rows("F", &self.f, 0)?;
        let h = from_rows("H", &self.h, f.nrows())?;
        Ok((f, h))
    }

    pub fn into_model(self) -> Result<ChannelModel> {
        let f = from_rows("F", &self.f, 0)?;
        let n = f.nrows();
        let j = from_rows("J", &self.j, 0)?;
        let (p, m) = j.shape();
        let g = from_rows("G", &self.g, m)?;
        let h = from_rows("H", &self.h, n)?;
        let w = from_rows("W", &self.w, n)?;
        let v = from_rows("V", &self.v, p)?;
        let l = match &self.l {
            Some(rows) => from_rows("L", rows, p)?,
            None => Mat::zeros(n, p),
        };
        let sigma1 = self.sigma1.as_ref().map(|rows| from_rows("Sigma1", rows, n)).transpose()?;
        let model = ChannelModel::build(f, g, h, j, w, l, v, sigma1)?;
        Ok(match self.name {
            Some(name) => model.with_name(name),
            None => model,
        })
    }
}

/// Scalar model whose additive noise is the AR(1) process. The state is the
/// previous noise sample, `s_i = z_{i-1}`.
pub fn make_ar1_channel(params: Ar1Params) -> Result<ChannelModel> {
    if !(params.noise_var > 0.0) || !params.noise_var.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "AR(1) noise variance must be positive, got {}",
            params.noise_var
        )));
    }
    if !params.beta.is_finite() || !params.input_gain.is_finite() {
        return Err(Error::InvalidParameter("AR(1) parameters must be finite".into()));
    }
    let s = |x: f64| Mat::from_element(1, 1, x);
    let q = params.noise_var;
    ChannelModel::build(
        s(params.beta),
        s(0.0),
        s(params.beta),
        s(params.input_gain),
        s(q),
        s(q),
        s(q),
        None,
    )
    .map(|m| m.with_name(format!("ar1(beta={})", params.beta)))
}

/// Realizes `d`-step delayed feedback by appending a shift register of the
/// last `d - 1` inputs to the state. `d = 1` is ordinary feedback and returns
/// the model unchanged.
pub fn make_delayed(model: &ChannelModel, d: usize) -> Result<ChannelModel> {
    if d == 0 {
        return Err(Error::InvalidDelay(d));
    }
    if d == 1 {
        return Ok(model.clone());
    }
    let Dims { n, m, p } = model.dims;
    let regs = m * (d - 1);
    let na = n + regs;
    // register k (1-based) holds x_{i-k} and lives at rows n + m(k-1)..
    let reg = |k: usize| n + m * (k - 1);

    let mut f = Mat::zeros(na, na);
    f.view_mut((0, 0), (n, n)).copy_from(&model.f);
    f.view_mut((0, reg(d - 1)), (n, m)).copy_from(&model.g);
    for k in 1..(d - 1) {
        f.view_mut((reg(k + 1), reg(k)), (m, m)).fill_with_identity();
    }

    let mut g = Mat::zeros(na, m);
    g.view_mut((reg(1), 0), (m, m)).fill_with_identity();

    let mut h = Mat::zeros(p, na);
    h.view_mut((0, 0), (p, n)).copy_from(&model.h);
    h.view_mut((0, reg(d - 1)), (p, m)).copy_from(&model.j);

    let j = Mat::zeros(p, m);

    let mut w = Mat::zeros(na, na);
    w.view_mut((0, 0), (n, n)).copy_from(&model.w);
    let mut l = Mat::zeros(na, p);
    l.view_mut((0, 0), (n, p)).copy_from(&model.l);
    let mut sigma1 = Mat::zeros(na, na);
    sigma1.view_mut((0, 0), (n, n)).copy_from(&model.sigma1);

    let out = ChannelModel::build(f, g, h, j, w, l, model.v.clone(), Some(sigma1))?;
    Ok(match &model.name {
        Some(name) => out.with_name(format!("{name}+delay{d}")),
        None => out,
    })
}

/// Checks detectability of `(F, H)` and whether `Sigma1` dominates the
/// stationary Riccati solution. Report only.
pub fn validate_assumption1(model: &ChannelModel) -> Result<Assumption1Report> {
    let detectable = detect::detectable_pbh(&model.f, &model.h, detect::PBH_TOL).detectable;
    if !detectable {
        return Ok(Assumption1Report { detectable, sigma1_dominates: false });
    }
    let ric = kalman::solve_dare(model, None, kalman::DEFAULT_TOL, kalman::DEFAULT_MAX_ITER)?;
    let gap = &model.sigma1 - &ric.sigma;
    let scale = ric.sigma.amax().max(1.0);
    let sigma1_dominates = matops::min_eig_sym(&gap) >= -1e-8 * scale;
    Ok(Assumption1Report { detectable, sigma1_dominates })
}
