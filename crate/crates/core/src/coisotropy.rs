//! Coisotropic sections of the slice `S = T⁵ × {0}` in `T⁵ × ℝ²`.
//!
//! A section `s = (f, g)` stands for the graph `{y₄ = f(x), y₅ = g(x)}`.
//! With `X = cos x₁∂₂ − sin x₁∂₃` and `Y = sin x₁∂₂ + cos x₁∂₃` the graph is
//! coisotropic iff
//!
//! `R(f, g) = f₁X(g) − g₁X(f) − g₄ + f₅ − gY(f) + fY(g) = 0`
//!
//! where subscripts are partial derivatives. `R = Q(s, s) + f₅ − g₄` with the
//! bilinear part `Q(a, b) = a_f₁X(b_g) − a_g₁X(b_f) − a_gY(b_f) + a_fY(b_g)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{ContactData, ContactError};
use crate::field::{Field, FieldError, FreqIndex, Mode, Monomial, Shape, TruncationLoss, DEFAULT_TRUNC_ORDER};
use crate::random;

/// Largest `|L(direction)|` coefficient accepted by [`prolong`].
pub const INFINITESIMAL_TOL: f64 = 1e-10;

/// Window and threshold of the stagnation test in [`prolong`].
pub const STALL_WINDOW: usize = 5;
pub const STALL_DECREASE: f64 = 1e-3;
pub const STALL_FLOOR_FACTOR: f64 = 100.0;

#[derive(Debug, Error)]
pub enum CoisoError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error("a section lives on T^5 with no fiber variables, got T^{torus_dim}xR^{fiber_dim}")]
    SectionShape { torus_dim: usize, fiber_dim: usize },
    #[error("direction is not an infinitesimal deformation: linearized residual {0:e}")]
    NotInfinitesimal(f64),
    #[error("epsilon must lie in (0, 0.5], got {0}")]
    Epsilon(f64),
    #[error("invalid solver option: {0}")]
    Options(String),
    #[error("the direction-span constraint needs a nonzero direction")]
    ZeroDirection,
    #[error("graph point could not be located after the flow (offset {0:e})")]
    Locate(f64),
}

/// `s = f·d_𝓕x₄ + g·d_𝓕x₅`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SectionJson")]
pub struct Section {
    pub f: Field,
    pub g: Field,
}

#[derive(Deserialize)]
struct SectionJson {
    f: Field,
    g: Field,
}

impl TryFrom<SectionJson> for Section {
    type Error = CoisoError;

    fn try_from(j: SectionJson) -> Result<Self, CoisoError> {
        Section::new(j.f, j.g)
    }
}

/// `T⁵` at truncation order `n`.
pub fn section_shape(n: i32) -> Shape {
    Shape::new(5, 0, n, 0)
}

impl Section {
    /// Both fields are brought to their common truncation box.
    pub fn new(f: Field, g: Field) -> Result<Self, CoisoError> {
        for s in [f.shape(), g.shape()] {
            if s.torus_dim != 5 || s.fiber_dim != 0 {
                return Err(CoisoError::SectionShape { torus_dim: s.torus_dim, fiber_dim: s.fiber_dim });
            }
        }
        let shape = f.shape().join(&g.shape())?;
        let mut loss = TruncationLoss::new();
        Ok(Section { f: f.reshaped(shape, &mut loss)?, g: g.reshaped(shape, &mut loss)? })
    }

    pub fn zero(shape: Shape) -> Self {
        Section { f: Field::zero(shape), g: Field::zero(shape) }
    }

    pub fn shape(&self) -> Shape {
        self.f.shape()
    }

    pub fn scale(&self, s: f64) -> Section {
        Section { f: self.f.scale(s), g: self.g.scale(s) }
    }

    pub fn reshaped(&self, shape: Shape, loss: &mut TruncationLoss) -> Result<Section, CoisoError> {
        Ok(Section { f: self.f.reshaped(shape, loss)?, g: self.g.reshaped(shape, loss)? })
    }

    pub fn max_deviation(&self, other: &Section) -> f64 {
        self.f.max_deviation(&other.f).max(self.g.max_deviation(&other.g))
    }

    /// `sqrt(‖f‖² + ‖g‖²)` in coefficient norm.
    pub fn coeff_norm(&self) -> f64 {
        self.f.coeff_norm().hypot(self.g.coeff_norm())
    }

    /// Torus axes some component depends on.
    pub fn axes(&self) -> Vec<usize> {
        (0..5).filter(|&a| self.f.depends_on(a) || self.g.depends_on(a)).collect()
    }

    /// Values and first derivatives at a point of `T⁵`.
    pub fn jets(&self, x: &[f64]) -> Result<SectionJet, CoisoError> {
        let jf = self.f.jet(x)?;
        let jg = self.g.jet(x)?;
        Ok(SectionJet { f: jf.value, g: jg.value, df: jf.grad, dg: jg.grad })
    }
}

/// `(f, g, ∇f, ∇g)` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionJet {
    pub f: f64,
    pub g: f64,
    pub df: Vec<f64>,
    pub dg: Vec<f64>,
}

fn mul(a: &Field, b: &Field, loss: &mut TruncationLoss) -> Field {
    a.mul_tracked(b, loss).expect("section fields share a base")
}

fn partial(a: &Field, axis: usize) -> Field {
    a.partial(axis).expect("torus axis")
}

/// `X(h)` and `Y(h)`.
fn xy_of(h: &Field, loss: &mut TruncationLoss) -> (Field, Field) {
    let shape = h.shape();
    let (c1, s1) = (Field::cos_axis(shape, 0, 1), Field::sin_axis(shape, 0, 1));
    let (h2, h3) = (partial(h, 1), partial(h, 2));
    let x = mul(&c1, &h2, loss) - mul(&s1, &h3, loss);
    let y = mul(&s1, &h2, loss) + mul(&c1, &h3, loss);
    (x, y)
}

/// Derivative data of a section used by `Q`.
struct Prepared {
    f: Field,
    g: Field,
    f1: Field,
    g1: Field,
    xf: Field,
    xg: Field,
    yf: Field,
    yg: Field,
}

impl Prepared {
    fn new(s: &Section, loss: &mut TruncationLoss) -> Self {
        let (xf, yf) = xy_of(&s.f, loss);
        let (xg, yg) = xy_of(&s.g, loss);
        Prepared { f1: partial(&s.f, 0), g1: partial(&s.g, 0), f: s.f.clone(), g: s.g.clone(), xf, xg, yf, yg }
    }
}

/// `Q(a, b) = a_f₁X(b_g) − a_g₁X(b_f) − a_gY(b_f) + a_fY(b_g)`.
fn bilinear(a: &Prepared, b: &Prepared, loss: &mut TruncationLoss) -> Field {
    mul(&a.f1, &b.xg, loss) - mul(&a.g1, &b.xf, loss) - mul(&a.g, &b.yf, loss) + mul(&a.f, &b.yg, loss)
}

/// `L(s) = f₅ − g₄`, the linear part of the residual.
fn linear_part(s: &Section) -> Field {
    partial(&s.f, 4) - partial(&s.g, 3)
}

/// Residual in the section's own truncation box; dropped mass goes to `loss`.
pub fn residual_tracked(s: &Section, loss: &mut TruncationLoss) -> Field {
    let p = Prepared::new(s, loss);
    bilinear(&p, &p, loss) + linear_part(s)
}

pub fn residual(s: &Section) -> Field {
    residual_tracked(s, &mut TruncationLoss::new())
}

/// Residual computed without truncation (products kept up to order `2N+1`),
/// returned in that enlarged box.
pub fn residual_exact(s: &Section) -> Field {
    let n = s.shape().trunc_order;
    let mut loss = TruncationLoss::new();
    let wide = s.reshaped(s.shape().with_trunc_order(2 * n + 1), &mut loss).expect("same base");
    residual_tracked(&wide, &mut loss)
}

/// `g₄ − f₅`.
///
/// This is the left-hand side of the linear equation as usually written.
/// Note that the derivative of [`residual`] at the zero section is its
/// negative, `f₅ − g₄`.
pub fn linearized_residual(s: &Section) -> Field {
    -linear_part(s)
}

/// `∫∫ (f₁X(g) − g₁X(f) + fY(g) − gY(f)) dx₄dx₅` as a field on `T³`.
pub fn kuranishi(s: &Section) -> Result<Field, CoisoError> {
    let wide = {
        let n = s.shape().trunc_order;
        s.reshaped(s.shape().with_trunc_order(2 * n + 1), &mut TruncationLoss::new())?
    };
    let mut loss = TruncationLoss::new();
    let p = Prepared::new(&wide, &mut loss);
    let integrand = bilinear(&p, &p, &mut loss);
    let integrated = integrand.integrate_fiber_torus(&[3, 4])?;
    Ok(integrated.drop_torus_axes(&[3, 4])?)
}

/// `R` at a point from the values and gradients of `f` and `g`.
pub fn residual_from_jets(x1: f64, j: &SectionJet) -> f64 {
    let (s1, c1) = x1.sin_cos();
    let xop = |d: &[f64]| c1 * d[1] - s1 * d[2];
    let yop = |d: &[f64]| s1 * d[1] + c1 * d[2];
    j.df[0] * xop(&j.dg) - j.dg[0] * xop(&j.df) - j.dg[3] + j.df[4] - j.g * yop(&j.df) + j.f * yop(&j.dg)
}

/// How the first-order part of a prolongation is pinned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Correction restricted to the orthogonal complement of `ker L`
    /// (`L(f, g) = f₅ − g₄`), so the kernel part of the solution is exactly
    /// `ε·direction`. Higher-order terms cannot feed back into first order.
    #[default]
    KernelComplement,
    /// Only the projection onto the span of the direction is pinned to `ε`.
    /// Kernel directions other than the direction stay free.
    DirectionSpan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProlongOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub trunc_order: i32,
    /// Initial Levenberg–Marquardt damping, relative to the largest diagonal
    /// entry of `JᵀJ`.
    pub damping: f64,
    pub constraint: ConstraintMode,
}

impl Default for ProlongOptions {
    fn default() -> Self {
        ProlongOptions {
            tol: 1e-9,
            max_iters: 200,
            trunc_order: DEFAULT_TRUNC_ORDER,
            damping: 1e-3,
            constraint: ConstraintMode::KernelComplement,
        }
    }
}

impl ProlongOptions {
    fn validate(&self) -> Result<(), CoisoError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(CoisoError::Options(format!("tol must be positive, got {}", self.tol)));
        }
        if self.trunc_order < 1 {
            return Err(CoisoError::Options(format!("trunc_order must be at least 1, got {}", self.trunc_order)));
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(CoisoError::Options(format!("damping must be positive, got {}", self.damping)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    Obstructed,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub iterations: usize,
    /// Coefficient norm of the untruncated residual, starting with the
    /// initial guess `ε·direction`.
    pub residual_norm_history: Vec<f64>,
    /// Mass the residual of the final section loses when computed in the
    /// section's own box.
    pub truncation_loss: f64,
    pub final_section: Section,
    /// Number of real unknowns of the correction.
    pub unknowns: usize,
    pub diagnostic: Option<String>,
}

impl SolverReport {
    pub fn final_residual_norm(&self) -> f64 {
        *self.residual_norm_history.last().expect("history starts with the initial norm")
    }
}

/// All frequency vectors with support in `axes` and entries in `[-n, n]`.
fn box_modes(axes: &[usize], n: i32) -> Vec<FreqIndex> {
    let mut out = vec![FreqIndex::zero(5)];
    for &a in axes {
        let mut next = Vec::with_capacity(out.len() * (2 * n as usize + 1));
        for k in &out {
            for v in -n..=n {
                let mut k2 = k.clone();
                k2.0[a] = v;
                next.push(k2);
            }
        }
        out = next;
    }
    out
}

/// Real coordinates of a residual field: for each representative mode one
/// row (`k = 0`) or two rows `√2·(Re, Im)`, so the Euclidean norm equals the
/// coefficient norm.
struct RowMap {
    rows: HashMap<FreqIndex, usize>,
    len: usize,
}

impl RowMap {
    fn new(axes: &[usize], n: i32) -> Self {
        let mut rows = HashMap::new();
        let mut len = 0;
        for k in box_modes(axes, n) {
            if k.is_zero() {
                rows.insert(k, len);
                len += 1;
            } else if k.is_positive() {
                rows.insert(k, len);
                len += 2;
            }
        }
        RowMap { rows, len }
    }

    fn vector(&self, r: &Field) -> DVector<f64> {
        let mut v = DVector::zeros(self.len);
        for (mode, c) in r.representative_terms() {
            let Some(&i) = self.rows.get(&mode.k) else {
                debug_assert!(false, "residual mode outside the active space");
                continue;
            };
            if mode.k.is_zero() {
                v[i] = c.re;
            } else {
                v[i] = std::f64::consts::SQRT_2 * c.re;
                v[i + 1] = std::f64::consts::SQRT_2 * c.im;
            }
        }
        v
    }
}

/// One real coordinate of a section in the active space.
fn coordinate_section(shape: Shape, k: &FreqIndex, imag: bool, weights: (f64, f64)) -> Section {
    let mono = Monomial::one(0);
    let make = |w: f64| -> Field {
        if w == 0.0 {
            return Field::zero(shape);
        }
        let mode = Mode { k: k.clone(), m: mono.clone() };
        if k.is_zero() {
            return Field::from_modes(shape, [(mode, Complex64::new(w, 0.0))]).expect("shape");
        }
        let c = if imag { Complex64::new(0.0, w) } else { Complex64::new(w, 0.0) } / std::f64::consts::SQRT_2;
        Field::from_modes(shape, [(mode.conjugate(), c.conj()), (mode, c)]).expect("shape")
    };
    Section { f: make(weights.0), g: make(weights.1) }
}

/// Real inner product matching the coefficient norm.
fn inner(a: &Section, b: &Section) -> f64 {
    let one = |x: &Field, y: &Field| -> f64 { x.terms().map(|(m, c)| (c.conj() * y.coeff(m)).re).sum() };
    one(&a.f, &b.f) + one(&a.g, &b.g)
}

fn combine(shape: Shape, base: &Section, basis: &[Section], x: &DVector<f64>) -> Section {
    let gather = |pick: fn(&Section) -> &Field| -> Field {
        let mut modes: Vec<(Mode, Complex64)> = pick(base).terms().map(|(m, c)| (m.clone(), *c)).collect();
        for (b, &xj) in basis.iter().zip(x.iter()) {
            if xj != 0.0 {
                modes.extend(pick(b).terms().map(|(m, c)| (m.clone(), c * xj)));
            }
        }
        Field::from_modes(shape, modes).expect("shape")
    };
    Section { f: gather(|s| &s.f), g: gather(|s| &s.g) }
}

/// Correction directions for the chosen constraint.
fn correction_basis(shape: Shape, axes: &[usize], n: i32, d: &Section, mode: ConstraintMode) -> Result<Vec<Section>, CoisoError> {
    let mut out = Vec::new();
    let reps: Vec<FreqIndex> = box_modes(axes, n).into_iter().filter(|k| k.is_zero() || k.is_positive()).collect();
    match mode {
        ConstraintMode::KernelComplement => {
            for k in &reps {
                let (k4, k5) = (k.0[3] as f64, k.0[4] as f64);
                let len = k4.hypot(k5);
                if len == 0.0 {
                    continue;
                }
                let w = (k5 / len, -k4 / len);
                out.push(coordinate_section(shape, k, false, w));
                out.push(coordinate_section(shape, k, true, w));
            }
        }
        ConstraintMode::DirectionSpan => {
            let dd = inner(d, d);
            if dd == 0.0 {
                return Err(CoisoError::ZeroDirection);
            }
            for k in &reps {
                for w in [(1.0, 0.0), (0.0, 1.0)] {
                    let parts = if k.is_zero() { vec![false] } else { vec![false, true] };
                    for imag in parts {
                        let e = coordinate_section(shape, k, imag, w);
                        let c = inner(&e, d) / dd;
                        let projected = if c == 0.0 {
                            e
                        } else {
                            Section { f: &e.f - &d.f.scale(c), g: &e.g - &d.g.scale(c) }
                        };
                        out.push(projected);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Relative decrease over the last `STALL_WINDOW` iterations below
/// `STALL_DECREASE`.
fn stalled(history: &[f64]) -> bool {
    if history.len() <= STALL_WINDOW {
        return false;
    }
    let a = history[history.len() - 1 - STALL_WINDOW];
    let b = *history.last().expect("nonempty");
    (a - b) <= STALL_DECREASE * a
}

/// Looks for a coisotropic section `ε·direction + w` with `w` a correction
/// allowed by `opts.constraint`, by Levenberg–Marquardt on the Fourier
/// coefficients. Unknowns range over modes in the truncation box supported
/// on the direction's axes and `x₁`; this space is closed under `R`, and the
/// residual is computed there without truncation.
pub fn prolong(direction: &Section, eps: f64, opts: &ProlongOptions) -> Result<SolverReport, CoisoError> {
    opts.validate()?;
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(CoisoError::Epsilon(eps));
    }
    let lin = linearized_residual(direction).max_abs_coeff();
    if lin > INFINITESIMAL_TOL {
        return Err(CoisoError::NotInfinitesimal(lin));
    }
    let n = opts.trunc_order;
    let shape = section_shape(n);
    let work = section_shape(2 * n + 1);
    let mut loss = TruncationLoss::new();
    let d = direction.reshaped(shape, &mut loss)?;
    let mut diagnostic = (loss.total() > 0.0).then(|| format!("direction truncated to N = {n}, dropped mass {:e}", loss.total()));
    let d = d.reshaped(work, &mut loss)?;

    let mut axes = d.axes();
    if !axes.contains(&0) {
        axes.insert(0, 0);
    }
    let rows = RowMap::new(&axes, 2 * n + 1);
    let basis = correction_basis(work, &axes, n, &d, opts.constraint)?;
    let base = d.scale(eps);

    let mut x = DVector::zeros(basis.len());
    let mut u = base.clone();
    let mut r = rows.vector(&residual_tracked(&u, &mut TruncationLoss::new()));
    let mut history = vec![r.norm()];
    let mut mu: Option<f64> = None;
    let mut status = SolverStatus::MaxIters;
    let mut iterations = 0;

    log::debug!("prolong: {} unknowns, {} residual rows", basis.len(), rows.len);
    loop {
        let norm = *history.last().expect("nonempty");
        if norm < opts.tol {
            status = SolverStatus::Converged;
            break;
        }
        if stalled(&history) {
            if norm > STALL_FLOOR_FACTOR * opts.tol {
                status = SolverStatus::Obstructed;
            } else {
                diagnostic.get_or_insert_with(|| format!("stagnated at {norm:e}, below the obstruction threshold"));
            }
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        iterations += 1;
        if basis.is_empty() {
            history.push(norm);
            continue;
        }

        let mut scratch = TruncationLoss::new();
        let pu = Prepared::new(&u, &mut scratch);
        let mut jac = DMatrix::zeros(rows.len, basis.len());
        for (j, b) in basis.iter().enumerate() {
            let pb = Prepared::new(b, &mut scratch);
            let col = bilinear(&pu, &pb, &mut scratch) + bilinear(&pb, &pu, &mut scratch) + linear_part(b);
            jac.set_column(j, &rows.vector(&col));
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut lambda = mu.unwrap_or(opts.damping * scale);

        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda;
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let x_new = &x + &step;
            let u_new = combine(work, &base, &basis, &x_new);
            let r_new = rows.vector(&residual_tracked(&u_new, &mut TruncationLoss::new()));
            if r_new.norm() < norm {
                x = x_new;
                u = u_new;
                r = r_new;
                lambda = (lambda / 3.0).max(1e-15 * scale);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        mu = Some(lambda);
        if !accepted {
            diagnostic.get_or_insert_with(|| format!("no damped step reduced the residual at iteration {iterations}"));
        }
        history.push(r.norm());
    }

    let mut final_loss = TruncationLoss::new();
    let final_section = u.reshaped(shape, &mut final_loss)?;
    debug_assert_eq!(final_loss.total(), 0.0);
    let mut trunc = TruncationLoss::new();
    residual_tracked(&final_section, &mut trunc);
    if status == SolverStatus::MaxIters {
        diagnostic.get_or_insert_with(|| format!("iteration limit {} reached", opts.max_iters));
    }
    Ok(SolverReport {
        status,
        iterations,
        residual_norm_history: history,
        truncation_loss: trunc.total(),
        final_section,
        unknowns: basis.len(),
        diagnostic,
    })
}

/// Pushes the graph of `s` by the time-`duration` flow of `𝒳_λ` and returns
/// the residual of the moved graph at `samples` seeded points of `T⁵`.
///
/// Each moved graph point over `x` is located by Newton's method on the base
/// coordinates, and its tangent plane is the image of the graph's tangent
/// plane under the flow's derivative (central differences with step `fd`).
pub fn transported_residuals(
    cd: &ContactData,
    s: &Section,
    lambda: &Field,
    duration: f64,
    step: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, CoisoError> {
    const FD: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flow = |x0: &[f64]| -> Result<Vec<f64>, CoisoError> {
        let mut p = x0.to_vec();
        p.push(s.f.evaluate(x0)?);
        p.push(s.g.evaluate(x0)?);
        Ok(cd.flow_contact(lambda, &p, duration, step)?.end().to_vec())
    };
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = random::point(&mut rng, section_shape(1), 0.0);
        let mut x0 = x.clone();
        let mut image = flow(&x0)?;
        let mut tangent = DMatrix::zeros(7, 5);
        for _ in 0..20 {
            for i in 0..5 {
                let mut a = x0.clone();
                let mut b = x0.clone();
                a[i] += FD;
                b[i] -= FD;
                let (pa, pb) = (flow(&a)?, flow(&b)?);
                for r in 0..7 {
                    tangent[(r, i)] = (pa[r] - pb[r]) / (2.0 * FD);
                }
            }
            let offset = DVector::from_iterator(5, (0..5).map(|i| x[i] - image[i]));
            if offset.amax() < 1e-13 {
                break;
            }
            let base = tangent.rows(0, 5).into_owned();
            let dx = base.lu().solve(&offset).ok_or(CoisoError::Locate(offset.amax()))?;
            for i in 0..5 {
                x0[i] += dx[i];
            }
            image = flow(&x0)?;
        }
        let miss = (0..5).map(|i| (x[i] - image[i]).abs()).fold(0.0, f64::max);
        if miss > 1e-11 {
            return Err(CoisoError::Locate(miss));
        }
        // Graph of (f', g') near x: d(f', g') = B·A⁻¹ with the tangent = (A; B).
        let a = tangent.rows(0, 5).into_owned();
        let b = tangent.rows(5, 2).into_owned();
        let a_inv = a.try_inverse().ok_or(CoisoError::Locate(f64::NAN))?;
        let slope = b * a_inv;
        let jet = SectionJet {
            f: image[5],
            g: image[6],
            df: slope.row(0).iter().copied().collect(),
            dg: slope.row(1).iter().copied().collect(),
        };
        out.push(residual_from_jets(x[0], &jet).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::standard_contact;
    use std::f64::consts::PI;

    fn t5() -> Shape {
        section_shape(DEFAULT_TRUNC_ORDER)
    }

    fn sec(f: Field, g: Field) -> Section {
        Section::new(f, g).unwrap()
    }

    fn obstructed() -> Section {
        sec(Field::cos_axis(t5(), 1, 1), Field::sin_axis(t5(), 1, 1))
    }

    /// Residual by central differences of `f`, `g` at a point.
    fn residual_fd(s: &Section, x: &[f64]) -> f64 {
        let h = 1e-5;
        let d = |fld: &Field, i: usize| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (fld.evaluate(&a).unwrap() - fld.evaluate(&b).unwrap()) / (2.0 * h)
        };
        let jet = SectionJet {
            f: s.f.evaluate(x).unwrap(),
            g: s.g.evaluate(x).unwrap(),
            df: (0..5).map(|i| d(&s.f, i)).collect(),
            dg: (0..5).map(|i| d(&s.g, i)).collect(),
        };
        residual_from_jets(x[0], &jet)
    }

    #[test]
    fn obstructed_residual_is_sin_x1() {
        let r = residual(&obstructed());
        assert!(r.max_deviation(&Field::sin_axis(t5(), 0, 1)) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random::point(&mut rng, t5(), 0.0);
            assert!((residual_fd(&obstructed(), &x) - x[0].sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn family_and_constants_are_coisotropic() {
        for t in [-1.0, 0.3, 2.0] {
            assert!(residual(&sec(Field::sin_axis(t5(), 0, 1).scale(t), Field::zero(t5()))).is_zero());
        }
        assert!(residual(&sec(Field::constant(t5(), 0.7), Field::constant(t5(), -2.0))).is_zero());
    }

    #[test]
    fn spectral_residual_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = random::FieldSpec { terms: 3, max_freq: 2, max_fiber_deg: 0, amplitude: 1.0 };
        let shape = section_shape(3);
        for _ in 0..5 {
            let s = sec(random::field(&mut rng, shape, spec), random::field(&mut rng, shape, spec));
            let r = residual_exact(&s);
            for _ in 0..4 {
                let x = random::point(&mut rng, shape, 0.0);
                assert!((r.evaluate(&x).unwrap() - residual_fd(&s, &x)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn linearized_examples() {
        assert!(linearized_residual(&obstructed()).is_zero());
        let a = linearized_residual(&sec(Field::zero(t5()), Field::cos_axis(t5(), 3, 1)));
        assert!(a.max_deviation(&-Field::sin_axis(t5(), 3, 1)) < 1e-15);
        let b = linearized_residual(&sec(Field::sin_axis(t5(), 4, 1), Field::zero(t5())));
        assert!(b.max_deviation(&-Field::cos_axis(t5(), 4, 1)) < 1e-15);
    }

    #[test]
    fn residual_derivative_at_zero_is_minus_linearized() {
        let shape = section_shape(3);
        let s = sec(Field::sin_axis(shape, 4, 1) + Field::cos_axis(shape, 1, 2), Field::cos_axis(shape, 3, 1));
        let e = 1e-6;
        let fd = residual_exact(&s.scale(e)).scale(1.0 / e);
        let lin = linearized_residual(&s).with_trunc_order(7);
        assert!((fd + lin).max_abs_coeff() < 1e-5);
    }

    #[test]
    fn kuranishi_examples() {
        let k = kuranishi(&obstructed()).unwrap();
        let t3 = Shape::new(3, 0, k.shape().trunc_order, 0);
        assert!(k.max_deviation(&Field::sin_axis(t3, 0, 1).scale(4.0 * PI * PI)) < 1e-10);
        assert!(kuranishi(&sec(Field::constant(t5(), 1.0), Field::constant(t5(), 2.0))).unwrap().is_zero());
        assert!(kuranishi(&sec(Field::sin_axis(t5(), 0, 1).scale(0.4), Field::zero(t5()))).unwrap().is_zero());
    }

    #[test]
    fn kuranishi_integral_by_quadrature() {
        let s = obstructed();
        let k = kuranishi(&s).unwrap();
        let m = 16;
        let h = 2.0 * PI / m as f64;
        let x = [0.8, 2.1, 4.0];
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                let p = [x[0], x[1], x[2], i as f64 * h, j as f64 * h];
                let jet = s.jets(&p).unwrap();
                sum += residual_from_jets(p[0], &jet) + jet.dg[3] - jet.df[4];
            }
        }
        assert!((sum * h * h - k.evaluate(&x).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn prolong_preconditions() {
        let bad = sec(Field::zero(t5()), Field::cos_axis(t5(), 3, 1));
        assert!(matches!(prolong(&bad, 0.1, &ProlongOptions::default()), Err(CoisoError::NotInfinitesimal(_))));
        let ok = obstructed();
        assert!(matches!(prolong(&ok, 0.0, &ProlongOptions::default()), Err(CoisoError::Epsilon(_))));
        assert!(matches!(prolong(&ok, 0.6, &ProlongOptions::default()), Err(CoisoError::Epsilon(_))));
        let opts = ProlongOptions { tol: -1.0, ..Default::default() };
        assert!(matches!(prolong(&ok, 0.1, &opts), Err(CoisoError::Options(_))));
    }

    #[test]
    fn prolong_constant_direction() {
        let rep = prolong(&sec(Field::constant(t5(), 1.0), Field::zero(t5())), 0.1, &ProlongOptions::default()).unwrap();
        assert_eq!(rep.status, SolverStatus::Converged);
        assert!(rep.iterations <= 1);
        assert_eq!(rep.final_residual_norm(), 0.0);
    }

    #[test]
    fn prolong_family_direction() {
        let d = sec(Field::sin_axis(t5(), 0, 1), Field::zero(t5()));
        let rep = prolong(&d, 0.25, &ProlongOptions::default()).unwrap();
        assert_eq!(rep.status, SolverStatus::Converged);
        assert!(rep.final_section.max_deviation(&d.scale(0.25)) < 1e-15);
    }

    #[test]
    fn prolong_obstructed_direction_stalls_at_floor() {
        let rep = prolong(&obstructed(), 0.1, &ProlongOptions::default()).unwrap();
        assert_eq!(rep.status, SolverStatus::Obstructed);
        assert_eq!(rep.unknowns, 0);
        assert!((rep.final_residual_norm() - 0.01 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn direction_span_constraint_is_not_obstructed() {
        let opts = ProlongOptions { trunc_order: 2, constraint: ConstraintMode::DirectionSpan, max_iters: 400, ..Default::default() };
        let s = obstructed();
        let rep = prolong(&s, 0.1, &opts).unwrap();
        let first = rep.residual_norm_history[0];
        assert!(rep.final_residual_norm() < 1e-2 * first, "{:?}", rep.residual_norm_history);
        let proj = inner(&rep.final_section, &s.reshaped(section_shape(2), &mut TruncationLoss::new()).unwrap()) / inner(&s, &s);
        assert!((proj - 0.1).abs() < 1e-12);
    }

    #[test]
    fn converged_reports_are_sound() {
        let shape = section_shape(3);
        let d = sec(Field::cos_axis(shape, 1, 1), Field::cos_axis(shape, 4, 1));
        let opts = ProlongOptions { trunc_order: 3, ..Default::default() };
        let rep = prolong(&d, 0.05, &opts).unwrap();
        assert!(rep.unknowns > 0);
        assert!(rep.iterations > 0);
        let h = &rep.residual_norm_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
        assert!(h.last().unwrap() < &(1e-2 * h[0]), "{h:?}");
        assert_ne!(rep.status, SolverStatus::Obstructed);
        if rep.status == SolverStatus::Converged {
            assert!(residual_exact(&rep.final_section).coeff_norm() < opts.tol);
        }
    }

    #[test]
    fn section_json_round_trip() {
        let s = obstructed();
        let text = serde_json::to_string(&s).unwrap();
        let back: Section = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"f": {"torus_dim": 3, "fiber_dim": 0, "trunc_order": 2, "poly_deg": 0, "terms": []},
                      "g": {"torus_dim": 3, "fiber_dim": 0, "trunc_order": 2, "poly_deg": 0, "terms": []}}"#;
        assert!(serde_json::from_str::<Section>(bad).is_err());
    }

    #[test]
    fn graph_bracket_matches_residual() {
        // {y₄ − f, y₅ − g} restricted to the graph vanishes iff R does.
        let cd = standard_contact().unwrap();
        let full = cd.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = random::FieldSpec { terms: 2, max_freq: 1, max_fiber_deg: 0, amplitude: 0.5 };
        let shape = section_shape(2);
        let s = sec(random::field(&mut rng, shape, spec), random::field(&mut rng, shape, spec));
        let lift = |h: &Field| h.embed(full, &[0, 1, 2, 3, 4], &[]).unwrap();
        let f1 = Field::fiber_coord(full, 0) - lift(&s.f);
        let f2 = Field::fiber_coord(full, 1) - lift(&s.g);
        let mut ratio = None;
        for _ in 0..6 {
            let x = random::point(&mut rng, shape, 0.0);
            let mut p = x.clone();
            p.push(s.f.evaluate(&x).unwrap());
            p.push(s.g.evaluate(&x).unwrap());
            let b = cd.jacobi_bracket(&f1, &f2, &p).unwrap();
            let r = residual_exact(&s).evaluate(&x).unwrap();
            let q = b / r;
            let q0 = *ratio.get_or_insert(q);
            assert!((q - q0).abs() < 1e-9, "{q} vs {q0}");
        }
        assert!((ratio.unwrap().abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn transported_graph_stays_coisotropic() {
        let cd = standard_contact().unwrap();
        let shape = section_shape(2);
        let s = sec(Field::sin_axis(shape, 0, 1).scale(0.3) + Field::cos_axis(shape, 3, 1).scale(0.2), Field::zero(shape));
        assert!(residual(&s).is_zero());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda = random::field(&mut rng, cd.shape(), random::FieldSpec { amplitude: 0.5, ..Default::default() });
        let res = transported_residuals(&cd, &s, &lambda, 0.1, 1e-3, 4, 9).unwrap();
        assert!(res.iter().all(|&r| r < 1e-5), "{res:?}");
        let bad = obstructed();
        let res = transported_residuals(&cd, &bad, &lambda, 0.05, 1e-3, 2, 9).unwrap();
        assert!(res.iter().any(|&r| r > 1e-3));
    }

    #[test]
    fn coefficient_norm_of_obstructed_residual() {
        let n = residual(&obstructed()).coeff_norm();
        assert!((n - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }
}
