//! Determinant maximization over linear matrix inequalities.
//!
//! Problems are stated over a list of matrix-valued decision variables:
//!
//! ```text
//! maximize    1/2 log det O(X) + c0
//! subject to  S_k(X) >= 0            (LMIs)
//!             g_j(X) <= 0,  e_j(X) = 0   (affine scalars)
//! ```
//!
//! where every `O`, `S_k` is an affine symmetric-matrix expression built from
//! terms `A X B` and `A X^T B`. Expressions are compiled into one coefficient
//! matrix per scalar coordinate of the decision variables; symmetric
//! variables contribute one coordinate per upper-triangle entry.
//!
//! The solver is a barrier path-following method with damped Newton
//! centering. Equality constraints are eliminated up front through an affine
//! parameterization `x = x0 + N z`, and a phase-I problem maximizing the
//! common LMI margin supplies a strictly feasible start.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matops::{self, Mat};

type Vector = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
}

impl VarBlock {
    /// Number of free scalar coordinates.
    pub fn dof(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }
}

#[derive(Debug, Clone)]
struct Term {
    left: Mat,
    var: VarId,
    right: Mat,
    transposed: bool,
}

/// Affine matrix expression `C + sum_t A_t X_t B_t` (with optional
/// transposes of the variable).
#[derive(Debug, Clone)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    constant: Mat,
    terms: Vec<Term>,
}

impl AffineExpr {
    pub fn constant(c: Mat) -> Self {
        AffineExpr { rows: c.nrows(), cols: c.ncols(), constant: c, terms: Vec::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    fn variable(id: VarId, rows: usize, cols: usize) -> Self {
        AffineExpr {
            rows,
            cols,
            constant: Mat::zeros(rows, cols),
            terms: vec![Term {
                left: Mat::identity(rows, rows),
                var: id,
                right: Mat::identity(cols, cols),
                transposed: false,
            }],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `a * self`
    pub fn lmul(&self, a: &Mat) -> Self {
        assert_eq!(a.ncols(), self.rows, "lmul shape mismatch");
        AffineExpr {
            rows: a.nrows(),
            cols: self.cols,
            constant: a * &self.constant,
            terms: self
                .terms
                .iter()
                .map(|t| Term { left: a * &t.left, ..t.clone() })
                .collect(),
        }
    }

    /// `self * b`
    pub fn rmul(&self, b: &Mat) -> Self {
        assert_eq!(b.nrows(), self.cols, "rmul shape mismatch");
        AffineExpr {
            rows: self.rows,
            cols: b.ncols(),
            constant: &self.constant * b,
            terms: self
                .terms
                .iter()
                .map(|t| Term { right: &t.right * b, ..t.clone() })
                .collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        AffineExpr {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    left: t.right.transpose(),
                    var: t.var,
                    right: t.left.transpose(),
                    transposed: !t.transposed,
                })
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        AffineExpr {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant * s,
            terms: self.terms.iter().map(|t| Term { left: &t.left * s, ..t.clone() }).collect(),
        }
    }

    /// Places `self` at `(r0, c0)` inside a zero `rows x cols` expression.
    pub fn embed(&self, rows: usize, cols: usize, r0: usize, c0: usize) -> Self {
        assert!(r0 + self.rows <= rows && c0 + self.cols <= cols, "embed out of bounds");
        let mut el = Mat::zeros(rows, self.rows);
        el.view_mut((r0, 0), (self.rows, self.rows)).fill_with_identity();
        let mut er = Mat::zeros(self.cols, cols);
        er.view_mut((0, c0), (self.cols, self.cols)).fill_with_identity();
        self.lmul(&el).rmul(&er)
    }

    /// Symmetric block matrix `[[a, b], [b^T, d]]`.
    pub fn sym_block2(a: &AffineExpr, b: &AffineExpr, d: &AffineExpr) -> Self {
        let (r1, c2) = (a.rows, d.cols);
        assert_eq!(a.rows, a.cols);
        assert_eq!(d.rows, d.cols);
        assert_eq!(b.shape(), (r1, c2));
        let n = r1 + c2;
        a.embed(n, n, 0, 0) + b.embed(n, n, 0, r1) + b.transpose().embed(n, n, r1, 0) + d.embed(n, n, r1, r1)
    }

    /// Block-diagonal stacking of square expressions.
    pub fn block_diag(blocks: &[AffineExpr]) -> Self {
        let n: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = AffineExpr::zeros(n, n);
        let mut off = 0;
        for b in blocks {
            assert_eq!(b.rows, b.cols);
            out = out + b.embed(n, n, off, off);
            off += b.rows;
        }
        out
    }

    pub fn trace(&self) -> ScalarAffine {
        assert_eq!(self.rows, self.cols, "trace of non-square expression");
        ScalarAffine { constant: 0.0, parts: vec![self.clone()] }
    }

    /// Direct evaluation at an assignment.
    pub fn eval(&self, x: &Assignment) -> Mat {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = &x.blocks[t.var.0];
            if t.transposed {
                out += &t.left * v.transpose() * &t.right;
            } else {
                out += &t.left * v * &t.right;
            }
        }
        out
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + rhs.scale(-1.0)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Add<Mat> for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: Mat) -> AffineExpr {
        self.constant += rhs;
        self
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(self, s: f64) -> AffineExpr {
        self.scale(s)
    }
}

/// Affine scalar `c + sum_k trace(E_k(X))`.
#[derive(Debug, Clone)]
pub struct ScalarAffine {
    constant: f64,
    parts: Vec<AffineExpr>,
}

impl ScalarAffine {
    pub fn constant(c: f64) -> Self {
        ScalarAffine { constant: c, parts: Vec::new() }
    }

    /// Entry `(i, j)` of an expression.
    pub fn entry(e: &AffineExpr, i: usize, j: usize) -> Self {
        let mut l = Mat::zeros(1, e.rows);
        l[(0, i)] = 1.0;
        let mut r = Mat::zeros(e.cols, 1);
        r[(j, 0)] = 1.0;
        e.lmul(&l).rmul(&r).trace()
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.constant *= s;
        self.parts = self.parts.iter().map(|p| p.scale(s)).collect();
        self
    }

    pub fn eval(&self, x: &Assignment) -> f64 {
        self.constant + self.parts.iter().map(|p| p.eval(x).trace()).sum::<f64>()
    }
}

impl Add for ScalarAffine {
    type Output = ScalarAffine;
    fn add(mut self, rhs: ScalarAffine) -> ScalarAffine {
        self.constant += rhs.constant;
        self.parts.extend(rhs.parts);
        self
    }
}

impl Sub for ScalarAffine {
    type Output = ScalarAffine;
    fn sub(self, rhs: ScalarAffine) -> ScalarAffine {
        self + rhs.scale(-1.0)
    }
}

/// Values for every variable block, indexed by [`VarId`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub blocks: Vec<Mat>,
}

impl Assignment {
    pub fn get(&self, id: VarId) -> &Mat {
        &self.blocks[id.0]
    }
}

#[derive(Debug, Clone)]
pub struct MaxDetProblem {
    vars: Vec<VarBlock>,
    objective: Vec<AffineExpr>,
    objective_constant: f64,
    lmis: Vec<AffineExpr>,
    ineqs: Vec<ScalarAffine>,
    eqs: Vec<ScalarAffine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxDetSolution {
    pub assignment: Assignment,
    /// `1/2 log det O + c0` at the returned point, in nats.
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub min_lmi_eig: f64,
    pub status: SolveStatus,
    /// Duality-gap surrogate `(barrier dimension) / t` at exit.
    pub gap: f64,
    /// Objective after each outer (centering) iteration.
    pub objective_history: Vec<f64>,
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub struct Feasibility {
    pub feasible: bool,
    pub margin: f64,
    pub point: Assignment,
}

/// Knobs of the barrier method.
#[derive(Debug, Clone, Copy)]
pub struct BarrierParams {
    pub t0: f64,
    pub mu: f64,
    pub newton_tol: f64,
    pub ls_alpha: f64,
    pub ls_beta: f64,
    pub max_newton: usize,
    pub max_outer: usize,
}

impl Default for BarrierParams {
    fn default() -> Self {
        BarrierParams {
            t0: 1.0,
            mu: 10.0,
            newton_tol: 1e-9,
            ls_alpha: 0.3,
            ls_beta: 0.6,
            max_newton: 500,
            max_outer: 60,
        }
    }
}

/// Phase-I margins at or below this mean "not strictly feasible".
pub const FEASIBILITY_MARGIN: f64 = 1e-9;
/// Half-width of the box bounding every coordinate during phase I.
const PHASE1_BOX: f64 = 1e6;

impl Default for MaxDetProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl MaxDetProblem {
    pub fn new() -> Self {
        MaxDetProblem {
            vars: Vec::new(),
            objective: Vec::new(),
            objective_constant: 0.0,
            lmis: Vec::new(),
            ineqs: Vec::new(),
            eqs: Vec::new(),
        }
    }

    pub fn add_var(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> (VarId, AffineExpr) {
        assert!(!symmetric || rows == cols, "symmetric variable must be square");
        let id = VarId(self.vars.len());
        self.vars.push(VarBlock { name: name.to_string(), rows, cols, symmetric });
        (id, AffineExpr::variable(id, rows, cols))
    }

    pub fn vars(&self) -> &[VarBlock] {
        &self.vars
    }

    /// Objective `1/2 log det expr + constant`.
    pub fn set_objective(&mut self, expr: AffineExpr, constant: f64) {
        self.set_objective_blocks(vec![expr], constant);
    }

    /// Objective `1/2 sum_k log det blocks[k] + constant`; equivalent to a
    /// block-diagonal objective but cheaper to differentiate.
    pub fn set_objective_blocks(&mut self, blocks: Vec<AffineExpr>, constant: f64) {
        self.objective = blocks;
        self.objective_constant = constant;
    }

    pub fn add_lmi(&mut self, expr: AffineExpr) {
        self.lmis.push(expr);
    }

    /// `g(X) <= 0`
    pub fn add_ineq(&mut self, g: ScalarAffine) {
        self.ineqs.push(g);
    }

    /// `e(X) = 0`
    pub fn add_eq(&mut self, e: ScalarAffine) {
        self.eqs.push(e);
    }

    pub fn num_coords(&self) -> usize {
        self.vars.iter().map(VarBlock::dof).sum()
    }

    pub fn zero_assignment(&self) -> Assignment {
        Assignment { blocks: self.vars.iter().map(|v| Mat::zeros(v.rows, v.cols)).collect() }
    }

    /// Objective value at an assignment, `None` outside the log-det domain.
    pub fn objective_at(&self, x: &Assignment) -> Option<f64> {
        let mut v = self.objective_constant;
        for o in &self.objective {
            v += 0.5 * matops::logdet_pd(&o.eval(x)).ok()?;
        }
        Some(v)
    }

    /// Smallest eigenvalue across all LMIs at an assignment.
    pub fn min_lmi_eig(&self, x: &Assignment) -> f64 {
        self.lmis
            .iter()
            .map(|l| matops::min_eig_sym(&l.eval(x)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest scalar-constraint violation: `max(g_j)` and `|e_j|`.
    pub fn max_scalar_violation(&self, x: &Assignment) -> f64 {
        let ineq = self.ineqs.iter().map(|g| g.eval(x)).fold(f64::NEG_INFINITY, f64::max);
        let eq = self.eqs.iter().map(|e| e.eval(x).abs()).fold(f64::NEG_INFINITY, f64::max);
        ineq.max(eq)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.vars.len());
        let mut acc = 0;
        for v in &self.vars {
            off.push(acc);
            acc += v.dof();
        }
        off
    }

    /// Coordinates of an assignment (upper triangle for symmetric blocks).
    pub fn flatten(&self, x: &Assignment) -> Vector {
        let mut out = Vec::with_capacity(self.num_coords());
        for (v, m) in self.vars.iter().zip(&x.blocks) {
            if v.symmetric {
                for j in 0..v.rows {
                    for i in 0..=j {
                        out.push(0.5 * (m[(i, j)] + m[(j, i)]));
                    }
                }
            } else {
                for j in 0..v.cols {
                    for i in 0..v.rows {
                        out.push(m[(i, j)]);
                    }
                }
            }
        }
        Vector::from_vec(out)
    }

    pub fn unflatten(&self, x: &Vector) -> Assignment {
        let mut blocks = Vec::with_capacity(self.vars.len());
        let mut k = 0;
        for v in &self.vars {
            let mut m = Mat::zeros(v.rows, v.cols);
            if v.symmetric {
                for j in 0..v.rows {
                    for i in 0..=j {
                        m[(i, j)] = x[k];
                        m[(j, i)] = x[k];
                        k += 1;
                    }
                }
            } else {
                for j in 0..v.cols {
                    for i in 0..v.rows {
                        m[(i, j)] = x[k];
                        k += 1;
                    }
                }
            }
            blocks.push(m);
        }
        Assignment { blocks }
    }

    /// Basis matrices `(coordinate, E)` of one variable block.
    fn basis(&self, offsets: &[usize], id: VarId) -> Vec<(usize, usize, usize, bool)> {
        // (coord, i, j, mirrored)
        let v = &self.vars[id.0];
        let mut out = Vec::with_capacity(v.dof());
        let mut k = offsets[id.0];
        if v.symmetric {
            for j in 0..v.rows {
                for i in 0..=j {
                    out.push((k, i, j, i != j));
                    k += 1;
                }
            }
        } else {
            for j in 0..v.cols {
                for i in 0..v.rows {
                    out.push((k, i, j, false));
                    k += 1;
                }
            }
        }
        out
    }

    fn compile_expr(&self, offsets: &[usize], e: &AffineExpr) -> CompiledMap {
        let mut coeffs: std::collections::BTreeMap<usize, Mat> = std::collections::BTreeMap::new();
        for t in &e.terms {
            for (k, i, j, mirrored) in self.basis(offsets, t.var) {
                // left * E_ij * right, E_ij = e_i e_j^T (+ e_j e_i^T when mirrored)
                let (i, j) = if t.transposed { (j, i) } else { (i, j) };
                let mut d = t.left.column(i) * t.right.row(j);
                if mirrored {
                    d += t.left.column(j) * t.right.row(i);
                }
                coeffs
                    .entry(k)
                    .and_modify(|acc| *acc += &d)
                    .or_insert(d);
            }
        }
        let coeffs = coeffs.into_iter().filter(|(_, d)| d.amax() > 0.0).collect();
        CompiledMap { constant: e.constant.clone(), coeffs }
    }

    fn compile_scalar(&self, offsets: &[usize], s: &ScalarAffine) -> (Vector, f64) {
        let mut a = Vector::zeros(self.num_coords());
        let mut b = s.constant;
        for p in &s.parts {
            let c = self.compile_expr(offsets, p);
            b += c.constant.trace();
            for (k, d) in &c.coeffs {
                a[*k] += d.trace();
            }
        }
        (a, b)
    }

    fn check_symmetric(what: &str, m: &CompiledMap) -> Result<()> {
        let bad = |x: &Mat| !matops::is_symmetric(x, 1e-12);
        if bad(&m.constant) || m.coeffs.iter().any(|(_, d)| bad(d)) {
            return Err(Error::MalformedProblem(format!("{what} is not symmetric")));
        }
        Ok(())
    }

    /// Compiles every expression and eliminates equality constraints.
    pub fn compile(&self) -> Result<CompiledProblem> {
        let offsets = self.offsets();
        let ncoords = self.num_coords();
        let mut objective = Vec::with_capacity(self.objective.len());
        for o in &self.objective {
            let c = self.compile_expr(&offsets, o);
            Self::check_symmetric("objective", &c)?;
            objective.push(c);
        }
        let mut lmis = Vec::with_capacity(self.lmis.len());
        for (k, l) in self.lmis.iter().enumerate() {
            let c = self.compile_expr(&offsets, l);
            Self::check_symmetric(&format!("LMI {k}"), &c)?;
            lmis.push(c);
        }
        let ineqs: Vec<(Vector, f64)> = self.ineqs.iter().map(|g| self.compile_scalar(&offsets, g)).collect();

        // equality elimination: x = x0 + N z
        let param = if self.eqs.is_empty() {
            Parameterization::identity(ncoords)
        } else {
            let rows: Vec<(Vector, f64)> = self.eqs.iter().map(|e| self.compile_scalar(&offsets, e)).collect();
            let a = Mat::from_fn(rows.len(), ncoords, |i, k| rows[i].0[k]);
            let b = Vector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            Parameterization::from_equalities(&a, &b)?
        };

        let objective = objective.iter().map(|o| param.reduce_map(o)).collect();
        let lmis = lmis.iter().map(|l| param.reduce_map(l)).collect();
        let ineqs = ineqs.iter().map(|(a, b)| param.reduce_scalar(a, *b)).collect();
        Ok(CompiledProblem {
            dim: param.dim(),
            objective,
            objective_weight: 0.5,
            objective_constant: self.objective_constant,
            linear: None,
            lmis,
            ineqs,
            param,
        })
    }

    /// Maximizes the common margin `s` with `S_k(X) >= s I` and
    /// `g_j(X) + s <= 0` (capped at `s <= 1`). Strictly feasible iff the
    /// optimal margin exceeds [`FEASIBILITY_MARGIN`].
    pub fn check_feasibility(&self) -> Result<Feasibility> {
        let compiled = self.compile()?;
        let (z, margin) = compiled.phase1(1e-10, &BarrierParams::default())?;
        Ok(Feasibility {
            feasible: margin > FEASIBILITY_MARGIN,
            margin,
            point: self.unflatten(&compiled.param.expand(&z)),
        })
    }

    /// Barrier path-following solve. `start` must be strictly feasible when
    /// given; otherwise phase I supplies one.
    pub fn solve_maxdet(&self, start: Option<&Assignment>, tol: f64) -> Result<MaxDetSolution> {
        self.solve_maxdet_with(start, tol, &BarrierParams::default())
    }

    pub fn solve_maxdet_with(&self, start: Option<&Assignment>, tol: f64, params: &BarrierParams) -> Result<MaxDetSolution> {
        if self.objective.is_empty() {
            return Err(Error::MalformedProblem("maxdet problem needs a log-det objective".into()));
        }
        let compiled = self.compile()?;
        let z0 = match start {
            Some(x) => {
                let z = compiled.param.project(&self.flatten(x));
                if !compiled.strictly_feasible(&z) {
                    return Err(Error::MalformedProblem("start point is not strictly feasible".into()));
                }
                z
            }
            None => {
                let (z, margin) = compiled.phase1(1e-10, params)?;
                if !(margin > FEASIBILITY_MARGIN) {
                    return Err(Error::Infeasible { margin });
                }
                z
            }
        };
        let run = compiled.path_follow(z0, tol, params)?;
        let x = self.unflatten(&compiled.param.expand(&run.z));
        let objective_value = self
            .objective_at(&x)
            .ok_or_else(|| Error::NumericalFailure("objective left its domain".into()))?;
        let min_lmi_eig = self.min_lmi_eig(&x);
        Ok(MaxDetSolution {
            assignment: x,
            objective_value,
            kkt_residual: run.gap + run.decrement / run.t,
            min_lmi_eig,
            status: run.status,
            gap: run.gap,
            objective_history: run.history,
            newton_steps: run.newton_steps,
        })
    }
}

/// `M(z) = C + sum_k z_k D_k` with only the nonzero `D_k` stored.
#[derive(Debug, Clone)]
pub struct CompiledMap {
    constant: Mat,
    coeffs: Vec<(usize, Mat)>,
}

impl CompiledMap {
    pub fn eval(&self, z: &Vector) -> Mat {
        let mut out = self.constant.clone();
        for (k, d) in &self.coeffs {
            out += d * z[*k];
        }
        out
    }

    fn size(&self) -> usize {
        self.constant.nrows()
    }
}

#[derive(Debug, Clone)]
struct Parameterization {
    x0: Vector,
    /// `None` means identity.
    basis: Option<Mat>,
    ncoords: usize,
}

impl Parameterization {
    fn identity(n: usize) -> Self {
        Parameterization { x0: Vector::zeros(n), basis: None, ncoords: n }
    }

    fn from_equalities(a: &Mat, b: &Vector) -> Result<Self> {
        let n = a.ncols();
        // A x + b = 0
        let x0 = -matops::pinv(a, 1e-12) * b;
        let resid = (a * &x0 + b).amax();
        if resid > 1e-9 * (1.0 + b.amax()) {
            return Err(Error::Infeasible { margin: -resid });
        }
        // null space from the full SVD of A^T A (n x n, symmetric)
        let ata = a.transpose() * a;
        let eig = ata.symmetric_eigen();
        let lmax = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let cols: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] <= 1e-12 * lmax).collect();
        let basis = Mat::from_fn(n, cols.len(), |i, c| eig.eigenvectors[(i, cols[c])]);
        Ok(Parameterization { x0, basis: Some(basis), ncoords: n })
    }

    fn dim(&self) -> usize {
        self.basis.as_ref().map_or(self.ncoords, |b| b.ncols())
    }

    fn expand(&self, z: &Vector) -> Vector {
        match &self.basis {
            None => z.clone(),
            Some(nb) => &self.x0 + nb * z,
        }
    }

    fn project(&self, x: &Vector) -> Vector {
        match &self.basis {
            None => x.clone(),
            Some(nb) => nb.transpose() * (x - &self.x0),
        }
    }

    fn reduce_map(&self, m: &CompiledMap) -> CompiledMap {
        let Some(nb) = &self.basis else { return m.clone() };
        let mut constant = m.constant.clone();
        for (k, d) in &m.coeffs {
            constant += d * self.x0[*k];
        }
        let mut coeffs = Vec::new();
        for j in 0..nb.ncols() {
            let mut acc = Mat::zeros(constant.nrows(), constant.ncols());
            for (k, d) in &m.coeffs {
                let w = nb[(*k, j)];
                if w != 0.0 {
                    acc += d * w;
                }
            }
            if acc.amax() > 1e-15 {
                coeffs.push((j, acc));
            }
        }
        CompiledMap { constant, coeffs }
    }

    fn reduce_scalar(&self, a: &Vector, b: f64) -> (Vector, f64) {
        match &self.basis {
            None => (a.clone(), b),
            Some(nb) => (nb.transpose() * a, b + a.dot(&self.x0)),
        }
    }
}

/// A compiled problem over reduced coordinates `z`.
#[derive(Debug, Clone)]
pub struct CompiledProblem {
    dim: usize,
    objective: Vec<CompiledMap>,
    objective_weight: f64,
    objective_constant: f64,
    linear: Option<Vector>,
    lmis: Vec<CompiledMap>,
    ineqs: Vec<(Vector, f64)>,
    param: Parameterization,
}

struct LineSearchModel {
    weighted: Vec<(f64, Vec<f64>)>,
    ratios: Vec<f64>,
    linear: f64,
}

impl LineSearchModel {
    /// Barrier increment at step `alpha`, `None` if the step leaves the
    /// interior.
    fn increment(&self, alpha: f64) -> Option<f64> {
        let mut total = alpha * self.linear;
        for (w, mus) in &self.weighted {
            for mu in mus {
                let arg = alpha * mu;
                if !(arg > -1.0) {
                    return None;
                }
                total += w * arg.ln_1p();
            }
        }
        for r in &self.ratios {
            let arg = alpha * r;
            if !(arg > -1.0) {
                return None;
            }
            total += arg.ln_1p();
        }
        Some(total)
    }
}

struct PathRun {
    z: Vector,
    t: f64,
    gap: f64,
    decrement: f64,
    status: SolveStatus,
    history: Vec<f64>,
    newton_steps: usize,
}

/// Per-map inverse and products `S^-1 D_k` used for derivatives.
fn map_derivs(map: &CompiledMap, z: &Vector) -> Option<(f64, Vec<(usize, Mat)>)> {
    let s = map.eval(z);
    let l = matops::cholesky(&matops::symmetrize(&s)).ok()?;
    let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n = s.nrows();
    let linv = l.solve_lower_triangular(&Mat::identity(n, n))?;
    let sinv = linv.transpose() * linv;
    let prods = map.coeffs.iter().map(|(k, d)| (*k, &sinv * d)).collect();
    Some((logdet, prods))
}

fn add_logdet_derivs(weight: f64, prods: &[(usize, Mat)], grad: &mut Vector, hess: &mut Mat) {
    for (a, (ka, pa)) in prods.iter().enumerate() {
        grad[*ka] += weight * pa.trace();
        for (kb, pb) in prods.iter().skip(a) {
            // tr(P_a P_b)
            let v = pa.component_mul(&pb.transpose()).sum();
            hess[(*ka, *kb)] -= weight * v;
            if ka != kb {
                hess[(*kb, *ka)] -= weight * v;
            }
        }
    }
}

impl CompiledProblem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total barrier dimension: LMI sizes plus scalar inequalities.
    pub fn barrier_dim(&self) -> usize {
        self.lmis.iter().map(CompiledMap::size).sum::<usize>() + self.ineqs.len()
    }

    fn strictly_feasible(&self, z: &Vector) -> bool {
        self.lmis.iter().all(|m| matops::cholesky(&matops::symmetrize(&m.eval(z))).is_ok())
            && self.ineqs.iter().all(|(a, b)| a.dot(z) + b < 0.0)
            && self
                .objective
                .iter()
                .all(|o| matops::cholesky(&matops::symmetrize(&o.eval(z))).is_ok())
    }

    /// Objective `w log det O(z) + c^T z + c0`, `None` outside the domain.
    pub fn objective_value(&self, z: &Vector) -> Option<f64> {
        let mut v = self.objective_constant;
        for o in &self.objective {
            v += self.objective_weight * matops::logdet_pd(&matops::symmetrize(&o.eval(z))).ok()?;
        }
        if let Some(c) = &self.linear {
            v += c.dot(z);
        }
        Some(v)
    }

    /// Barrier-augmented objective `t f(z) + sum log det S_k + sum log(-g_j)`;
    /// `None` outside the strict interior.
    pub fn barrier_value(&self, t: f64, z: &Vector) -> Option<f64> {
        let mut v = t * self.objective_value(z)?;
        for m in &self.lmis {
            v += matops::logdet_pd(&matops::symmetrize(&m.eval(z))).ok()?;
        }
        for (a, b) in &self.ineqs {
            let g = a.dot(z) + b;
            if !(g < 0.0) {
                return None;
            }
            v += (-g).ln();
        }
        Some(v)
    }

    /// Gradient and Hessian of [`Self::barrier_value`].
    pub fn barrier_derivatives(&self, t: f64, z: &Vector) -> Option<(Vector, Mat)> {
        let n = self.dim;
        let mut grad = Vector::zeros(n);
        let mut hess = Mat::zeros(n, n);
        for o in &self.objective {
            let (_, prods) = map_derivs(o, z)?;
            add_logdet_derivs(t * self.objective_weight, &prods, &mut grad, &mut hess);
        }
        if let Some(c) = &self.linear {
            grad += c * t;
        }
        for m in &self.lmis {
            let (_, prods) = map_derivs(m, z)?;
            add_logdet_derivs(1.0, &prods, &mut grad, &mut hess);
        }
        for (a, b) in &self.ineqs {
            let g = a.dot(z) + b;
            if !(g < 0.0) {
                return None;
            }
            grad += a / g;
            hess -= (a * a.transpose()) / (g * g);
        }
        Some((grad, hess))
    }

    /// Maps reduced coordinates back to full coordinates.
    pub fn expand(&self, z: &Vector) -> Vector {
        self.param.expand(z)
    }

    pub fn project(&self, x: &Vector) -> Vector {
        self.param.project(x)
    }

    /// Newton direction for maximizing the barrier objective, from the
    /// negated Hessian with Jacobi scaling and escalating regularization.
    fn newton_direction(grad: &Vector, hess: &Mat) -> Option<Vector> {
        let n = grad.len();
        let neg = -hess;
        let d: Vec<f64> = (0..n).map(|i| neg[(i, i)].max(1e-300).sqrt().recip()).collect();
        let scaled = Mat::from_fn(n, n, |i, j| neg[(i, j)] * d[i] * d[j]);
        let rhs = Vector::from_iterator(n, (0..n).map(|i| grad[i] * d[i]));
        let mut reg = 0.0;
        for _ in 0..12 {
            let mut a = scaled.clone();
            for i in 0..n {
                a[(i, i)] += reg;
            }
            if let Some(ch) = a.cholesky() {
                let y = ch.solve(&rhs);
                let dir = Vector::from_iterator(n, (0..n).map(|i| y[i] * d[i]));
                if dir.iter().all(|x| x.is_finite()) {
                    return Some(dir);
                }
            }
            reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
        }
        None
    }

    /// Damped Newton centering at fixed `t`. Returns the final decrement
    /// `lambda^2` and the number of steps, or `None` on line-search death.
    fn center(&self, z: &mut Vector, t: f64, params: &BarrierParams) -> std::result::Result<(f64, usize), Error> {
        let mut steps = 0;
        loop {
            let (grad, hess) = self
                .barrier_derivatives(t, z)
                .ok_or_else(|| Error::NumericalFailure("iterate left the interior".into()))?;
            let dir = Self::newton_direction(&grad, &hess)
                .ok_or_else(|| Error::NumericalFailure("singular Newton system".into()))?;
            let lambda2 = grad.dot(&dir);
            if !lambda2.is_finite() {
                return Err(Error::NumericalFailure("Newton decrement is NaN".into()));
            }
            if lambda2 / 2.0 <= params.newton_tol {
                return Ok((lambda2, steps));
            }
            if steps >= params.max_newton {
                return Err(Error::MaxIterations);
            }
            let ls = self.line_search_model(t, z, &dir)?;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-16 {
                if let Some(gain) = ls.increment(alpha) {
                    if gain >= params.ls_alpha * alpha * lambda2 {
                        let cand = &*z + &dir * alpha;
                        if self.strictly_feasible(&cand) {
                            *z = cand;
                            accepted = true;
                            break;
                        }
                    }
                }
                alpha *= params.ls_beta;
            }
            steps += 1;
            if !accepted {
                if lambda2 <= 1e-10 {
                    return Ok((lambda2, steps));
                }
                return Err(Error::NumericalFailure(format!(
                    "line search failed (decrement {lambda2:.3e})"
                )));
            }
        }
    }

    /// Exact barrier increment along a direction, as a function of the step
    /// length. Each log det term becomes `sum ln(1 + alpha mu_i)` with `mu_i`
    /// the eigenvalues of `L^-1 dS L^-T`, which avoids cancellation when the
    /// barrier value itself is large.
    fn line_search_model(&self, t: f64, z: &Vector, dir: &Vector) -> Result<LineSearchModel> {
        let spectrum = |map: &CompiledMap| -> Result<Vec<f64>> {
            let s = matops::symmetrize(&map.eval(z));
            let l = matops::cholesky(&s)?;
            let mut ds = Mat::zeros(s.nrows(), s.ncols());
            for (k, d) in &map.coeffs {
                ds += d * dir[*k];
            }
            let linv = l
                .solve_lower_triangular(&Mat::identity(s.nrows(), s.nrows()))
                .ok_or_else(|| Error::NumericalFailure("triangular solve".into()))?;
            let x = matops::symmetrize(&(&linv * ds * linv.transpose()));
            Ok(x.symmetric_eigenvalues().iter().copied().collect())
        };
        let mut weighted = Vec::new();
        for o in &self.objective {
            weighted.push((t * self.objective_weight, spectrum(o)?));
        }
        for m in &self.lmis {
            weighted.push((1.0, spectrum(m)?));
        }
        let mut ratios = Vec::with_capacity(self.ineqs.len());
        for (a, b) in &self.ineqs {
            let g = a.dot(z) + b;
            ratios.push(a.dot(dir) / g);
        }
        let linear = self.linear.as_ref().map_or(0.0, |c| t * c.dot(dir));
        Ok(LineSearchModel { weighted, ratios, linear })
    }

    fn path_follow(&self, mut z: Vector, tol: f64, params: &BarrierParams) -> Result<PathRun> {
        let bdim = self.barrier_dim().max(1) as f64;
        let mut t = params.t0;
        let mut history = Vec::new();
        let mut newton_steps = 0;
        let mut centered_once = false;
        for _ in 0..params.max_outer {
            match self.center(&mut z, t, params) {
                Ok((lambda2, steps)) => {
                    newton_steps += steps;
                    centered_once = true;
                    history.push(self.objective_value(&z).unwrap_or(f64::NAN));
                    let gap = bdim / t;
                    if gap < tol {
                        return Ok(PathRun {
                            z,
                            t,
                            gap,
                            decrement: lambda2.max(0.0).sqrt(),
                            status: SolveStatus::Optimal,
                            history,
                            newton_steps,
                        });
                    }
                    t *= params.mu;
                }
                Err(e) => {
                    if !centered_once {
                        return Err(e);
                    }
                    log::debug!("barrier stopped early at t = {t:.3e}: {e}");
                    let status = match e {
                        Error::MaxIterations => SolveStatus::MaxIter,
                        _ => SolveStatus::NumericalFailure,
                    };
                    // report the last centered point's gap
                    let gap = bdim / (t / params.mu);
                    return Ok(PathRun { z, t: t / params.mu, gap, decrement: f64::NAN, status, history, newton_steps });
                }
            }
        }
        if !centered_once {
            return Err(Error::MaxIterations);
        }
        Ok(PathRun {
            z,
            t,
            gap: bdim / t,
            decrement: f64::NAN,
            status: SolveStatus::MaxIter,
            history,
            newton_steps,
        })
    }

    /// Phase I: maximize `s` over `S_k(z) - s I >= 0`, `g_j(z) + s <= 0`,
    /// `O(z) - s I >= 0`, `s <= 1` and a coordinate box. Returns the
    /// maximizer and the achieved margin.
    fn phase1(&self, tol: f64, params: &BarrierParams) -> Result<(Vector, f64)> {
        let n = self.dim;
        let sk = n; // index of the margin coordinate
        let lift = |m: &CompiledMap| {
            let mut coeffs = m.coeffs.clone();
            coeffs.push((sk, -Mat::identity(m.size(), m.size())));
            CompiledMap { constant: m.constant.clone(), coeffs }
        };
        let mut lmis: Vec<CompiledMap> = self.lmis.iter().map(lift).collect();
        for o in &self.objective {
            lmis.push(lift(o));
        }
        let mut ineqs = Vec::new();
        for (a, b) in &self.ineqs {
            let mut a2 = Vector::zeros(n + 1);
            a2.rows_mut(0, n).copy_from(a);
            a2[sk] = 1.0;
            ineqs.push((a2, *b));
        }
        let mut cap = Vector::zeros(n + 1);
        cap[sk] = 1.0;
        ineqs.push((cap, -1.0));
        for i in 0..n {
            let mut up = Vector::zeros(n + 1);
            up[i] = 1.0;
            ineqs.push((up.clone(), -PHASE1_BOX));
            ineqs.push((-up, -PHASE1_BOX));
        }
        let mut linear = Vector::zeros(n + 1);
        linear[sk] = 1.0;
        let p1 = CompiledProblem {
            dim: n + 1,
            objective: Vec::new(),
            objective_weight: 0.0,
            objective_constant: 0.0,
            linear: Some(linear),
            lmis,
            ineqs,
            param: Parameterization::identity(n + 1),
        };

        // start at z = 0 with a margin safely below every constraint value
        let zero = Vector::zeros(n);
        let mut worst = f64::INFINITY;
        for m in self.lmis.iter().chain(self.objective.iter()) {
            worst = worst.min(matops::min_eig_sym(&m.eval(&zero)));
        }
        for (_, b) in &self.ineqs {
            worst = worst.min(-b);
        }
        let s0 = worst.min(1.0) - 1.0;
        let mut z = Vector::zeros(n + 1);
        z[sk] = s0;

        let run = p1.path_follow(z, tol, params)?;
        let margin = run.z[sk];
        Ok((run.z.rows(0, n).into_owned(), margin))
    }
}
