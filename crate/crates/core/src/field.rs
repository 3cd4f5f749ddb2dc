//! Scalar fields on `Tⁿ × ℝᵏ`: truncated Fourier series in the torus
//! coordinates tensored with polynomials in the fiber coordinates.
//!
//! A [`Field`] stores complex amplitudes keyed by a frequency vector and a
//! fiber monomial,
//!
//! ```text
//! φ(x, y) = Σ c(k, m) · e^{i k·x} · y^m,
//! ```
//!
//! with `|kᵢ| ≤ N` and `|m| ≤ d`. Real-valuedness is carried by Hermitian
//! symmetry `c(−k, m) = conj(c(k, m))`, which every constructor and operation
//! restores exactly. Differentiation and fiber-torus integration are exact on
//! coefficients; products drop modes leaving the box and report the dropped
//! mass through [`TruncationLoss`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

/// Coefficients with modulus below this are removed after every operation.
pub const PRUNE_TOL: f64 = 1e-14;

/// Default Fourier truncation order per torus axis.
pub const DEFAULT_TRUNC_ORDER: i32 = 8;

/// Default total degree of the fiber polynomials.
pub const DEFAULT_POLY_DEG: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("axis {axis} out of range for a field on {dim} coordinates")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("axis {axis} is a fiber axis; only torus axes (< {torus_dim}) can be integrated")]
    UnsupportedAxis { axis: usize, torus_dim: usize },
    #[error("field depends on axis {0}, which was requested to be dropped")]
    DependsOnAxis(usize),
    #[error("evaluation left an imaginary part of {0:e}; field is not Hermitian")]
    NotReal(f64),
    #[error("malformed field: {0}")]
    Format(String),
}

/// Ambient dimensions and truncation parameters of a [`Field`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub torus_dim: usize,
    pub fiber_dim: usize,
    pub trunc_order: i32,
    pub poly_deg: u32,
}

impl Shape {
    pub fn new(torus_dim: usize, fiber_dim: usize, trunc_order: i32, poly_deg: u32) -> Self {
        Self { torus_dim, fiber_dim, trunc_order, poly_deg }
    }

    /// Default truncation on `Tⁿ × ℝᵏ`.
    pub fn standard(torus_dim: usize, fiber_dim: usize) -> Self {
        Self::new(torus_dim, fiber_dim, DEFAULT_TRUNC_ORDER, DEFAULT_POLY_DEG)
    }

    pub fn dim(&self) -> usize {
        self.torus_dim + self.fiber_dim
    }

    pub fn with_trunc_order(mut self, trunc_order: i32) -> Self {
        self.trunc_order = trunc_order;
        self
    }

    pub fn with_poly_deg(mut self, poly_deg: u32) -> Self {
        self.poly_deg = poly_deg;
        self
    }

    pub fn same_base(&self, other: &Shape) -> bool {
        self.torus_dim == other.torus_dim && self.fiber_dim == other.fiber_dim
    }

    /// Common shape of two operands: same base, the larger truncation box.
    pub fn join(&self, other: &Shape) -> Result<Shape, FieldError> {
        if !self.same_base(other) {
            return Err(FieldError::Shape(format!(
                "T^{}xR^{} vs T^{}xR^{}",
                self.torus_dim, self.fiber_dim, other.torus_dim, other.fiber_dim
            )));
        }
        Ok(Shape {
            torus_dim: self.torus_dim,
            fiber_dim: self.fiber_dim,
            trunc_order: self.trunc_order.max(other.trunc_order),
            poly_deg: self.poly_deg.max(other.poly_deg),
        })
    }

    fn check_axis(&self, axis: usize) -> Result<(), FieldError> {
        if axis < self.dim() {
            Ok(())
        } else {
            Err(FieldError::AxisOutOfRange { axis, dim: self.dim() })
        }
    }

    fn check_point(&self, p: &[f64]) -> Result<(), FieldError> {
        if p.len() == self.dim() {
            Ok(())
        } else {
            Err(FieldError::Shape(format!(
                "point has {} coordinates, field lives on {}",
                p.len(),
                self.dim()
            )))
        }
    }

    fn admits(&self, mode: &Mode) -> bool {
        mode.k.in_box(self.trunc_order) && mode.m.degree() <= self.poly_deg
    }
}

/// Frequency vector `k ∈ ℤⁿ` of a Fourier mode.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FreqIndex(pub SmallVec<[i32; 6]>);

impl FreqIndex {
    pub fn zero(n: usize) -> Self {
        FreqIndex(SmallVec::from_elem(0, n))
    }

    pub fn from_slice(k: &[i32]) -> Self {
        FreqIndex(SmallVec::from_slice(k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// First non-zero component is positive. Exactly one of `k`, `−k` is
    /// positive unless `k = 0`.
    pub fn is_positive(&self) -> bool {
        self.0.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
    }

    pub fn in_box(&self, n: i32) -> bool {
        self.0.iter().all(|c| c.abs() <= n)
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&k, &x)| k as f64 * x).sum()
    }

    fn plus(&self, other: &FreqIndex) -> FreqIndex {
        FreqIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Neg for &FreqIndex {
    type Output = FreqIndex;
    fn neg(self) -> FreqIndex {
        FreqIndex(self.0.iter().map(|c| -c).collect())
    }
}

/// Exponent vector `m` of a fiber monomial `y^m`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Monomial(pub SmallVec<[u32; 3]>);

impl Monomial {
    pub fn one(n: usize) -> Self {
        Monomial(SmallVec::from_elem(0, n))
    }

    pub fn from_slice(m: &[u32]) -> Self {
        Monomial(SmallVec::from_slice(m))
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn times(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Value of `∂^orders y^m` at `y`, where `orders[j]` counts derivatives in `y_j`.
    fn derivative_value(&self, y: &[f64], orders: &[u32]) -> f64 {
        let mut v = 1.0;
        for ((&e, &yj), &o) in self.0.iter().zip(y).zip(orders) {
            if o > e {
                return 0.0;
            }
            let falling: u32 = (0..o).map(|i| e - i).product();
            v *= falling as f64 * yj.powi((e - o) as i32);
        }
        v
    }
}

/// Key of one stored amplitude.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub k: FreqIndex,
    pub m: Monomial,
}

impl Mode {
    pub fn new(k: &[i32], m: &[u32]) -> Self {
        Mode { k: FreqIndex::from_slice(k), m: Monomial::from_slice(m) }
    }

    pub fn conjugate(&self) -> Mode {
        Mode { k: -&self.k, m: self.m.clone() }
    }

    /// Whether this key is the stored representative of its `±k` pair.
    pub fn is_representative(&self) -> bool {
        self.k.is_zero() || self.k.is_positive()
    }
}

/// Accumulator for the absolute mass of coefficients dropped by truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TruncationLoss(f64);

impl TruncationLoss {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, mass: f64) {
        self.0 += mass;
    }

    pub fn merge(&mut self, other: TruncationLoss) {
        self.0 += other.0;
    }

    pub fn total(&self) -> f64 {
        self.0
    }
}

/// Value, gradient and Hessian of a field at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
}

/// Real-valued trigonometric-polynomial × polynomial field.
#[derive(Clone, PartialEq)]
pub struct Field {
    shape: Shape,
    terms: BTreeMap<Mode, Complex64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Field(T^{}xR^{}, N={}, d={}) {{", self.shape.torus_dim, self.shape.fiber_dim, self.shape.trunc_order, self.shape.poly_deg)?;
        for (mode, c) in self.terms.iter().filter(|(m, _)| m.is_representative()) {
            write!(f, " {:?}{:?}: {:.6e}{:+.6e}i;", mode.k.0.as_slice(), mode.m.0.as_slice(), c.re, c.im)?;
        }
        write!(f, " }}")
    }
}

impl Field {
    pub fn zero(shape: Shape) -> Self {
        Field { shape, terms: BTreeMap::new() }
    }

    pub fn constant(shape: Shape, value: f64) -> Self {
        let mut out = Field::zero(shape);
        out.accumulate(
            Mode { k: FreqIndex::zero(shape.torus_dim), m: Monomial::one(shape.fiber_dim) },
            Complex64::new(value, 0.0),
        );
        out.normalize()
    }

    /// `(a·cos(k·x) + b·sin(k·x)) · y^m`.
    ///
    /// Panics if `k` or `m` has the wrong length.
    pub fn trig(shape: Shape, k: &[i32], m: &[u32], a: f64, b: f64) -> Self {
        assert_eq!(k.len(), shape.torus_dim, "frequency length");
        assert_eq!(m.len(), shape.fiber_dim, "monomial length");
        let mode = Mode::new(k, m);
        let mut out = Field::zero(shape);
        if mode.k.is_zero() {
            out.accumulate(mode, Complex64::new(a, 0.0));
        } else {
            let c = Complex64::new(a / 2.0, -b / 2.0);
            out.accumulate(mode.conjugate(), c.conj());
            out.accumulate(mode, c);
        }
        out.normalize()
    }

    /// `cos(k·x_axis)`.
    pub fn cos_axis(shape: Shape, axis: usize, k: i32) -> Self {
        let mut kv = vec![0; shape.torus_dim];
        kv[axis] = k;
        Field::trig(shape, &kv, &vec![0; shape.fiber_dim], 1.0, 0.0)
    }

    /// `sin(k·x_axis)`.
    pub fn sin_axis(shape: Shape, axis: usize, k: i32) -> Self {
        let mut kv = vec![0; shape.torus_dim];
        kv[axis] = k;
        Field::trig(shape, &kv, &vec![0; shape.fiber_dim], 0.0, 1.0)
    }

    /// The fiber coordinate `y_j` (`j` counted within the fiber block).
    pub fn fiber_coord(shape: Shape, j: usize) -> Self {
        let mut m = vec![0; shape.fiber_dim];
        m[j] = 1;
        Field::trig(shape, &vec![0; shape.torus_dim], &m, 1.0, 0.0)
    }

    /// Builds a field from arbitrary amplitudes, then restores Hermitian
    /// symmetry and truncation. Amplitudes outside the box are dropped.
    pub fn from_modes(shape: Shape, modes: impl IntoIterator<Item = (Mode, Complex64)>) -> Result<Self, FieldError> {
        let mut out = Field::zero(shape);
        for (mode, c) in modes {
            if mode.k.len() != shape.torus_dim || mode.m.0.len() != shape.fiber_dim {
                return Err(FieldError::Shape("mode length does not match field dimensions".into()));
            }
            out.accumulate(mode, c);
        }
        Ok(out.normalize())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mode, &Complex64)> {
        self.terms.iter()
    }

    /// Representative half of the spectrum (`k = 0` or `k` positive).
    pub fn representative_terms(&self) -> impl Iterator<Item = (&Mode, &Complex64)> {
        self.terms.iter().filter(|(m, _)| m.is_representative())
    }

    pub fn coeff(&self, mode: &Mode) -> Complex64 {
        self.terms.get(mode).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest coefficient modulus.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `sqrt(Σ |c|²)`: the root-mean-square of the field over the torus
    /// (Parseval), ignoring the fiber variables' monomial structure.
    pub fn coeff_norm(&self) -> f64 {
        self.terms.values().map(|c| c.norm_sqr()).fold(0.0, |a, b| a + b).sqrt()
    }

    /// Largest coefficient modulus of `self − other`.
    pub fn max_deviation(&self, other: &Field) -> f64 {
        let mut worst = 0.0f64;
        for (mode, c) in &self.terms {
            worst = worst.max((c - other.coeff(mode)).norm());
        }
        for (mode, c) in &other.terms {
            if !self.terms.contains_key(mode) {
                worst = worst.max(c.norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.terms.iter().all(|(mode, c)| (self.coeff(&mode.conjugate()) - c.conj()).norm() <= tol)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|m| m.k.is_zero() && m.m.degree() == 0)
    }

    /// Value of the constant mode.
    pub fn mean(&self) -> f64 {
        self.coeff(&Mode { k: FreqIndex::zero(self.shape.torus_dim), m: Monomial::one(self.shape.fiber_dim) }).re
    }

    /// Whether some stored term varies along `axis`.
    pub fn depends_on(&self, axis: usize) -> bool {
        if axis < self.shape.torus_dim {
            self.terms.keys().any(|m| m.k.0[axis] != 0)
        } else {
            let j = axis - self.shape.torus_dim;
            self.terms.keys().any(|m| m.m.0.get(j).is_some_and(|&e| e > 0))
        }
    }

    /// Same coefficients in a different truncation box; modes outside the new
    /// box are dropped and their mass recorded.
    pub fn reshaped(&self, shape: Shape, loss: &mut TruncationLoss) -> Result<Field, FieldError> {
        if !shape.same_base(&self.shape) {
            return Err(FieldError::Shape("reshape must keep the base dimensions".into()));
        }
        let mut out = Field::zero(shape);
        for (mode, c) in &self.terms {
            if shape.admits(mode) {
                out.terms.insert(mode.clone(), *c);
            } else {
                loss.record(c.norm());
            }
        }
        Ok(out)
    }

    /// Shorthand for [`Field::reshaped`] to a new truncation order, panicking
    /// never (the base is unchanged) and discarding the loss.
    pub fn with_trunc_order(&self, trunc_order: i32) -> Field {
        let mut loss = TruncationLoss::new();
        self.reshaped(self.shape.with_trunc_order(trunc_order), &mut loss).expect("same base")
    }

    fn accumulate(&mut self, mode: Mode, c: Complex64) {
        *self.terms.entry(mode).or_default() += c;
    }

    /// Prunes small and out-of-box terms and restores exact Hermitian symmetry.
    fn normalize(mut self) -> Field {
        let shape = self.shape;
        let mut out = BTreeMap::new();
        for (mode, c) in &self.terms {
            if !mode.is_representative() || !shape.admits(mode) {
                continue;
            }
            if mode.k.is_zero() {
                let re = c.re;
                if re.abs() >= PRUNE_TOL {
                    out.insert(mode.clone(), Complex64::new(re, 0.0));
                }
            } else {
                let conj = mode.conjugate();
                let partner = self.terms.get(&conj).copied().unwrap_or_default();
                let avg = (c + partner.conj()) * 0.5;
                if avg.norm() >= PRUNE_TOL {
                    out.insert(conj, avg.conj());
                    out.insert(mode.clone(), avg);
                }
            }
        }
        // Representatives whose partner alone was stored.
        for (mode, c) in &self.terms {
            if mode.is_representative() || !shape.admits(mode) {
                continue;
            }
            let rep = mode.conjugate();
            if self.terms.contains_key(&rep) {
                continue;
            }
            let avg = c * 0.5;
            if avg.norm() >= PRUNE_TOL {
                out.insert(rep, avg.conj());
                out.insert(mode.clone(), avg);
            }
        }
        self.terms = out;
        self
    }

    fn combine(&self, other: &Field, sign: f64) -> Result<Field, FieldError> {
        let shape = self.shape.join(&other.shape)?;
        let mut out = Field { shape, terms: self.terms.clone() };
        for (mode, c) in &other.terms {
            out.accumulate(mode.clone(), c * sign);
        }
        Ok(out.normalize())
    }

    pub fn try_add(&self, other: &Field) -> Result<Field, FieldError> {
        self.combine(other, 1.0)
    }

    pub fn try_sub(&self, other: &Field) -> Result<Field, FieldError> {
        self.combine(other, -1.0)
    }

    pub fn scale(&self, s: f64) -> Field {
        let terms = self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect();
        Field { shape: self.shape, terms }.normalize()
    }

    /// Spectral convolution with polynomial product. Out-of-box products are
    /// dropped; the modulus of each dropped output coefficient is added to `loss`.
    pub fn mul_tracked(&self, other: &Field, loss: &mut TruncationLoss) -> Result<Field, FieldError> {
        let shape = self.shape.join(&other.shape)?;
        let mut out = Field::zero(shape);
        let mut dropped: BTreeMap<Mode, Complex64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mode = Mode { k: ma.k.plus(&mb.k), m: ma.m.times(&mb.m) };
                let c = ca * cb;
                if shape.admits(&mode) {
                    out.accumulate(mode, c);
                } else {
                    *dropped.entry(mode).or_default() += c;
                }
            }
        }
        loss.record(dropped.values().map(|c| c.norm()).sum());
        let out = out.normalize();
        debug_assert!(out.is_hermitian(0.0));
        Ok(out)
    }

    pub fn try_mul(&self, other: &Field) -> Result<Field, FieldError> {
        self.mul_tracked(other, &mut TruncationLoss::new())
    }

    /// Exact partial derivative along coordinate `axis` (torus axes first,
    /// then fiber axes).
    pub fn partial(&self, axis: usize) -> Result<Field, FieldError> {
        self.shape.check_axis(axis)?;
        let td = self.shape.torus_dim;
        let mut out = Field::zero(self.shape);
        for (mode, c) in &self.terms {
            if axis < td {
                let ka = mode.k.0[axis];
                if ka != 0 {
                    out.terms.insert(mode.clone(), c * Complex64::new(0.0, ka as f64));
                }
            } else {
                let j = axis - td;
                let e = mode.m.0[j];
                if e > 0 {
                    let mut m = mode.m.clone();
                    m.0[j] -= 1;
                    out.accumulate(Mode { k: mode.k.clone(), m }, c * e as f64);
                }
            }
        }
        Ok(out.normalize())
    }

    /// `∫ φ dx_a` over every `a ∈ axes`, each over a full period: `(2π)^|axes|`
    /// times the modes with `k_a = 0`. The result keeps the ambient dimensions.
    pub fn integrate_fiber_torus(&self, axes: &[usize]) -> Result<Field, FieldError> {
        for &a in axes {
            self.shape.check_axis(a)?;
            if a >= self.shape.torus_dim {
                return Err(FieldError::UnsupportedAxis { axis: a, torus_dim: self.shape.torus_dim });
            }
        }
        let mut distinct = axes.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let factor = (2.0 * PI).powi(distinct.len() as i32);
        let terms = self
            .terms
            .iter()
            .filter(|(m, _)| distinct.iter().all(|&a| m.k.0[a] == 0))
            .map(|(m, c)| (m.clone(), c * factor))
            .collect();
        Ok(Field { shape: self.shape, terms }.normalize())
    }

    /// Removes torus axes the field does not depend on.
    pub fn drop_torus_axes(&self, axes: &[usize]) -> Result<Field, FieldError> {
        for &a in axes {
            if a >= self.shape.torus_dim {
                return Err(FieldError::UnsupportedAxis { axis: a, torus_dim: self.shape.torus_dim });
            }
            if self.depends_on(a) {
                return Err(FieldError::DependsOnAxis(a));
            }
        }
        let keep: Vec<usize> = (0..self.shape.torus_dim).filter(|a| !axes.contains(a)).collect();
        let shape = Shape { torus_dim: keep.len(), ..self.shape };
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| {
                let k = FreqIndex(keep.iter().map(|&a| m.k.0[a]).collect());
                (Mode { k, m: m.m.clone() }, *c)
            })
            .collect();
        Ok(Field { shape, terms }.normalize())
    }

    /// Re-expresses the field on a larger base. `torus_map[a]` is the target
    /// torus axis of source torus axis `a`; `fiber_map` likewise.
    pub fn embed(&self, target: Shape, torus_map: &[usize], fiber_map: &[usize]) -> Result<Field, FieldError> {
        if torus_map.len() != self.shape.torus_dim || fiber_map.len() != self.shape.fiber_dim {
            return Err(FieldError::Shape("axis map length does not match source dimensions".into()));
        }
        if torus_map.iter().any(|&a| a >= target.torus_dim) || fiber_map.iter().any(|&a| a >= target.fiber_dim) {
            return Err(FieldError::Shape("axis map points outside the target".into()));
        }
        let mut out = Field::zero(target);
        for (mode, c) in &self.terms {
            let mut k = FreqIndex::zero(target.torus_dim);
            for (a, &t) in torus_map.iter().enumerate() {
                k.0[t] = mode.k.0[a];
            }
            let mut m = Monomial::one(target.fiber_dim);
            for (j, &t) in fiber_map.iter().enumerate() {
                m.0[t] = mode.m.0[j];
            }
            out.accumulate(Mode { k, m }, *c);
        }
        Ok(out.normalize())
    }

    /// Complex value `Σ c·e^{ik·x}·y^m` at `p`.
    fn evaluate_complex(&self, p: &[f64]) -> (Complex64, f64) {
        let (x, y) = p.split_at(self.shape.torus_dim);
        let mut sum = Complex64::default();
        let mut mass = 0.0;
        for (mode, c) in &self.terms {
            let phase = Complex64::from_polar(1.0, mode.k.dot(x));
            let mono = mode.m.derivative_value(y, &vec![0; y.len()]);
            sum += c * phase * mono;
            mass += c.norm() * mono.abs();
        }
        (sum, mass)
    }

    /// Real value at a point of `Tⁿ × ℝᵏ`.
    pub fn evaluate(&self, p: &[f64]) -> Result<f64, FieldError> {
        self.shape.check_point(p)?;
        let (v, mass) = self.evaluate_complex(p);
        if v.im.abs() > 1e-12 * mass.max(1.0) {
            return Err(FieldError::NotReal(v.im));
        }
        Ok(v.re)
    }

    /// Value, gradient and Hessian at `p`, computed term by term.
    pub fn jet(&self, p: &[f64]) -> Result<Jet, FieldError> {
        self.shape.check_point(p)?;
        let td = self.shape.torus_dim;
        let n = self.shape.dim();
        let (x, y) = p.split_at(td);
        let mut value = Complex64::default();
        let mut grad = vec![Complex64::default(); n];
        let mut hess = vec![vec![Complex64::default(); n]; n];
        let mut orders = vec![0u32; y.len()];
        for (mode, c) in &self.terms {
            let e = c * Complex64::from_polar(1.0, mode.k.dot(x));
            // Derivative factor along one axis applied to e^{ikx} y^m.
            let mono = |orders: &[u32]| mode.m.derivative_value(y, orders);
            orders.iter_mut().for_each(|o| *o = 0);
            value += e * mono(&orders);
            for a in 0..n {
                for b in a..n {
                    let mut f = e;
                    let mut ord = vec![0u32; y.len()];
                    for &ax in &[a, b] {
                        if ax < td {
                            f *= Complex64::new(0.0, mode.k.0[ax] as f64);
                        } else {
                            ord[ax - td] += 1;
                        }
                    }
                    let h = f * mono(&ord);
                    hess[a][b] += h;
                    if a != b {
                        hess[b][a] += h;
                    }
                }
                let mut ord = vec![0u32; y.len()];
                let mut f = e;
                if a < td {
                    f *= Complex64::new(0.0, mode.k.0[a] as f64);
                } else {
                    ord[a - td] += 1;
                }
                grad[a] += f * mono(&ord);
            }
        }
        Ok(Jet {
            value: value.re,
            grad: grad.into_iter().map(|g| g.re).collect(),
            hess: hess.into_iter().map(|row| row.into_iter().map(|h| h.re).collect()).collect(),
        })
    }
}

macro_rules! field_binop {
    ($tr:ident, $method:ident, $call:ident) => {
        impl $tr<&Field> for &Field {
            type Output = Field;
            fn $method(self, rhs: &Field) -> Field {
                self.$call(rhs).expect("incompatible field shapes")
            }
        }
        impl $tr<Field> for Field {
            type Output = Field;
            fn $method(self, rhs: Field) -> Field {
                (&self).$call(&rhs).expect("incompatible field shapes")
            }
        }
        impl $tr<&Field> for Field {
            type Output = Field;
            fn $method(self, rhs: &Field) -> Field {
                (&self).$call(rhs).expect("incompatible field shapes")
            }
        }
        impl $tr<Field> for &Field {
            type Output = Field;
            fn $method(self, rhs: Field) -> Field {
                self.$call(&rhs).expect("incompatible field shapes")
            }
        }
    };
}

field_binop!(Add, add, try_add);
field_binop!(Sub, sub, try_sub);
field_binop!(Mul, mul, try_mul);

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}

impl Neg for Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Mul<Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: Field) -> Field {
        rhs.scale(self)
    }
}

/// A vector field on `Tⁿ × ℝᵏ`, one component per coordinate direction.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    components: Vec<Field>,
}

impl VectorField {
    pub fn new(components: Vec<Field>) -> Result<Self, FieldError> {
        let Some(first) = components.first() else {
            return Err(FieldError::Shape("vector field needs at least one component".into()));
        };
        let shape = first.shape();
        if components.len() != shape.dim() {
            return Err(FieldError::Shape(format!(
                "{} components for a base of dimension {}",
                components.len(),
                shape.dim()
            )));
        }
        if components.iter().any(|c| !c.shape().same_base(&shape)) {
            return Err(FieldError::Shape("components live on different bases".into()));
        }
        Ok(VectorField { components })
    }

    pub fn zero(shape: Shape) -> Self {
        VectorField { components: vec![Field::zero(shape); shape.dim()] }
    }

    /// The coordinate vector field `∂/∂x_axis`.
    pub fn coordinate(shape: Shape, axis: usize) -> Self {
        let mut v = VectorField::zero(shape);
        v.components[axis] = Field::constant(shape, 1.0);
        v
    }

    pub fn shape(&self) -> Shape {
        self.components[0].shape()
    }

    pub fn components(&self) -> &[Field] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Field {
        &self.components[i]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Field::is_zero)
    }

    /// `Σ_a V_a ∂φ/∂x_a`.
    pub fn apply_tracked(&self, phi: &Field, loss: &mut TruncationLoss) -> Result<Field, FieldError> {
        if !phi.shape().same_base(&self.shape()) {
            return Err(FieldError::Shape("vector field and function live on different bases".into()));
        }
        let mut out = Field::zero(self.shape().join(&phi.shape())?);
        for (a, v) in self.components.iter().enumerate() {
            if v.is_zero() {
                continue;
            }
            let d = phi.partial(a)?;
            if d.is_zero() {
                continue;
            }
            out = out.try_add(&v.mul_tracked(&d, loss)?)?;
        }
        Ok(out)
    }

    pub fn apply(&self, phi: &Field) -> Result<Field, FieldError> {
        self.apply_tracked(phi, &mut TruncationLoss::new())
    }

    /// Lie bracket `[V, W]^i = V(W^i) − W(V^i)`.
    pub fn bracket(&self, other: &VectorField) -> Result<VectorField, FieldError> {
        let comps = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(vi, wi)| Ok(self.apply(wi)? - other.apply(vi)?))
            .collect::<Result<Vec<_>, FieldError>>()?;
        VectorField::new(comps)
    }

    pub fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>, FieldError> {
        self.components.iter().map(|c| c.evaluate(p)).collect()
    }

    pub fn try_add(&self, other: &VectorField) -> Result<VectorField, FieldError> {
        let comps = self.components.iter().zip(&other.components).map(|(a, b)| a.try_add(b)).collect::<Result<_, _>>()?;
        VectorField::new(comps)
    }

    pub fn try_sub(&self, other: &VectorField) -> Result<VectorField, FieldError> {
        let comps = self.components.iter().zip(&other.components).map(|(a, b)| a.try_sub(b)).collect::<Result<_, _>>()?;
        VectorField::new(comps)
    }

    /// Multiplies every component by a function.
    pub fn scale_by(&self, phi: &Field) -> Result<VectorField, FieldError> {
        let comps = self.components.iter().map(|c| c.try_mul(phi)).collect::<Result<_, _>>()?;
        VectorField::new(comps)
    }

    pub fn scale(&self, s: f64) -> VectorField {
        VectorField { components: self.components.iter().map(|c| c.scale(s)).collect() }
    }

    pub fn max_deviation(&self, other: &VectorField) -> f64 {
        self.components.iter().zip(&other.components).map(|(a, b)| a.max_deviation(b)).fold(0.0, f64::max)
    }
}

/// JSON form of a [`Field`]; one representative per `±k` pair.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldJson {
    pub torus_dim: usize,
    pub fiber_dim: usize,
    pub trunc_order: i32,
    pub poly_deg: u32,
    pub terms: Vec<TermJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TermJson {
    pub k: Vec<i32>,
    pub m: Vec<u32>,
    pub re: f64,
    pub im: f64,
}

impl From<&Field> for FieldJson {
    fn from(f: &Field) -> Self {
        let s = f.shape();
        FieldJson {
            torus_dim: s.torus_dim,
            fiber_dim: s.fiber_dim,
            trunc_order: s.trunc_order,
            poly_deg: s.poly_deg,
            terms: f
                .representative_terms()
                .map(|(mode, c)| TermJson { k: mode.k.0.to_vec(), m: mode.m.0.to_vec(), re: c.re, im: c.im })
                .collect(),
        }
    }
}

impl TryFrom<FieldJson> for Field {
    type Error = FieldError;

    fn try_from(j: FieldJson) -> Result<Self, FieldError> {
        if j.trunc_order < 0 {
            return Err(FieldError::Format("trunc_order must be non-negative".into()));
        }
        let shape = Shape::new(j.torus_dim, j.fiber_dim, j.trunc_order, j.poly_deg);
        let mut seen: BTreeMap<Mode, Complex64> = BTreeMap::new();
        for (i, t) in j.terms.iter().enumerate() {
            if t.k.len() != shape.torus_dim || t.m.len() != shape.fiber_dim {
                return Err(FieldError::Format(format!("terms[{i}]: k or m has the wrong length")));
            }
            if !t.re.is_finite() || !t.im.is_finite() {
                return Err(FieldError::Format(format!("terms[{i}]: non-finite amplitude")));
            }
            let mode = Mode::new(&t.k, &t.m);
            if !shape.admits(&mode) {
                return Err(FieldError::Format(format!("terms[{i}]: mode outside the truncation box")));
            }
            let mut c = Complex64::new(t.re, t.im);
            let rep = if mode.is_representative() {
                mode
            } else {
                c = c.conj();
                mode.conjugate()
            };
            if rep.k.is_zero() && c.im.abs() > 1e-12 {
                return Err(FieldError::Format(format!("terms[{i}]: zero-frequency amplitude must be real")));
            }
            if seen.insert(rep, c).is_some() {
                return Err(FieldError::Format(format!("terms[{i}]: duplicate mode")));
            }
        }
        let mut out = Field::zero(shape);
        for (rep, c) in seen {
            if rep.k.is_zero() {
                out.accumulate(rep, Complex64::new(c.re, 0.0));
            } else {
                out.accumulate(rep.conjugate(), c.conj());
                out.accumulate(rep, c);
            }
        }
        Ok(out.normalize())
    }
}

impl Serialize for Field {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FieldJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Field {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let j = FieldJson::deserialize(deserializer)?;
        Field::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t5() -> Shape {
        Shape::standard(5, 0)
    }

    fn random_point(rng: &mut ChaCha8Rng, shape: Shape) -> Vec<f64> {
        let mut p: Vec<f64> = (0..shape.torus_dim).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        p.extend((0..shape.fiber_dim).map(|_| rng.gen_range(-2.0..2.0)));
        p
    }

    #[test]
    fn evaluate_sin_at_quarter_period() {
        let s = Field::sin_axis(t5(), 0, 1);
        let v = s.evaluate(&[PI / 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_zero_field() {
        let z = Field::zero(Shape::standard(5, 2));
        assert_eq!(z.evaluate(&[0.3, 1.0, 2.0, 3.0, 4.0, -1.0, 7.0]).unwrap(), 0.0);
        assert!(z.is_empty());
    }

    #[test]
    fn evaluate_checks_dimension() {
        let s = Field::sin_axis(t5(), 0, 1);
        assert!(matches!(s.evaluate(&[0.0, 1.0]), Err(FieldError::Shape(_))));
    }

    #[test]
    fn pythagorean_simplification_matches_direct_evaluation() {
        let sh = t5();
        let s1 = Field::sin_axis(sh, 0, 1);
        let c2 = Field::cos_axis(sh, 1, 1);
        let s2 = Field::sin_axis(sh, 1, 1);
        let phi = &(&s1 * &(&c2 * &c2)) + &(&s1 * &(&s2 * &s2));
        assert!(phi.max_deviation(&s1) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let p = random_point(&mut rng, sh);
            let direct = p[0].sin() * p[1].cos().powi(2) + p[0].sin() * p[1].sin().powi(2);
            assert!((phi.evaluate(&p).unwrap() - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn partial_examples() {
        let sh = Shape::standard(5, 2);
        let d = Field::sin_axis(sh, 0, 1).partial(0).unwrap();
        assert!(d.max_deviation(&Field::cos_axis(sh, 0, 1)) < 1e-15);
        assert!(Field::cos_axis(sh, 1, 1).partial(3).unwrap().is_zero());
        let y4_sin5 = Field::fiber_coord(sh, 0) * Field::sin_axis(sh, 4, 1);
        let d = y4_sin5.partial(5).unwrap();
        assert!(d.max_deviation(&Field::sin_axis(sh, 4, 1)) < 1e-15);
        assert!(matches!(d.partial(7), Err(FieldError::AxisOutOfRange { .. })));
    }

    #[test]
    fn product_examples() {
        let sh = t5();
        let s = Field::sin_axis(sh, 1, 1);
        let c = Field::cos_axis(sh, 1, 1);
        let one = &(&s * &s) + &(&c * &c);
        assert!(one.max_deviation(&Field::constant(sh, 1.0)) < 1e-15);
        assert!((&s * &Field::zero(sh)).is_zero());

        let prod = Field::cos_axis(sh, 0, 1) * Field::cos_axis(sh, 1, 1);
        assert_eq!(prod.len(), 4);
        for k in [[1, 1, 0, 0, 0], [1, -1, 0, 0, 0], [-1, 1, 0, 0, 0], [-1, -1, 0, 0, 0]] {
            assert!((prod.coeff(&Mode::new(&k, &[])) - Complex64::new(0.25, 0.0)).norm() < 1e-16);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_point(&mut rng, sh);
            assert!((prod.evaluate(&p).unwrap() - p[0].cos() * p[1].cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn product_records_truncation_loss() {
        let sh = Shape::new(1, 0, 2, 0);
        let c2 = Field::cos_axis(sh, 0, 2);
        let mut loss = TruncationLoss::new();
        let sq = c2.mul_tracked(&c2, &mut loss).unwrap();
        // cos² 2x = ½ + ½ cos 4x; the cos 4x half is outside N = 2.
        assert!((sq.mean() - 0.5).abs() < 1e-15);
        assert!((loss.total() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn integrate_examples() {
        let sh = t5();
        let tau2 = (2.0 * PI).powi(2);
        let s1 = Field::sin_axis(sh, 0, 1);
        let i = s1.integrate_fiber_torus(&[3, 4]).unwrap();
        assert!(i.max_deviation(&s1.scale(tau2)) < 1e-12);
        assert!(Field::cos_axis(sh, 3, 1).integrate_fiber_torus(&[3, 4]).unwrap().is_zero());
        let mixed = &s1 + &(Field::cos_axis(sh, 3, 1) * Field::sin_axis(sh, 4, 1));
        let i = mixed.integrate_fiber_torus(&[3, 4]).unwrap();
        assert!(i.max_deviation(&s1.scale(tau2)) < 1e-12);
        let err = Field::constant(Shape::standard(5, 2), 1.0).integrate_fiber_torus(&[5]);
        assert!(matches!(err, Err(FieldError::UnsupportedAxis { axis: 5, .. })));
    }

    #[test]
    fn vector_field_examples() {
        let sh = t5();
        let (c1, s1) = (Field::cos_axis(sh, 0, 1), Field::sin_axis(sh, 0, 1));
        let zero = Field::zero(sh);
        let x = VectorField::new(vec![zero.clone(), c1.clone(), -&s1, zero.clone(), zero.clone()]).unwrap();
        let y = VectorField::new(vec![zero.clone(), s1.clone(), c1.clone(), zero.clone(), zero.clone()]).unwrap();
        let xs = x.apply(&Field::sin_axis(sh, 1, 1)).unwrap();
        assert!(xs.max_deviation(&(&c1 * &Field::cos_axis(sh, 1, 1))).abs() < 1e-15);
        let yc = y.apply(&Field::cos_axis(sh, 1, 1)).unwrap();
        assert!(yc.max_deviation(&(-(&s1 * &Field::sin_axis(sh, 1, 1)))) < 1e-15);
        assert!(x.apply(&Field::constant(sh, 4.0)).unwrap().is_zero());
        assert!(VectorField::new(vec![zero.clone(); 3]).is_err());
    }

    #[test]
    fn json_stores_one_representative() {
        let sh = Shape::standard(5, 2);
        let f = Field::trig(sh, &[1, -1, 0, 2, 0], &[1, 0], 0.5, -0.25) + Field::constant(sh, 3.0);
        let j = FieldJson::from(&f);
        assert_eq!(j.terms.len(), 2);
        let text = serde_json::to_string(&f).unwrap();
        let back: Field = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn json_reader_rejects_bad_terms() {
        let bad = r#"{"torus_dim":1,"fiber_dim":0,"trunc_order":2,"poly_deg":0,"terms":[{"k":[5],"m":[],"re":1.0,"im":0.0}]}"#;
        assert!(serde_json::from_str::<Field>(bad).is_err());
        let dup = r#"{"torus_dim":1,"fiber_dim":0,"trunc_order":2,"poly_deg":0,"terms":[{"k":[1],"m":[],"re":1.0,"im":0.0},{"k":[-1],"m":[],"re":1.0,"im":0.0}]}"#;
        assert!(serde_json::from_str::<Field>(dup).is_err());
        let neg = r#"{"torus_dim":1,"fiber_dim":0,"trunc_order":2,"poly_deg":0,"terms":[{"k":[-1],"m":[],"re":0.0,"im":0.5}]}"#;
        let f: Field = serde_json::from_str(neg).unwrap();
        // 0.5i e^{-ix} + c.c. = sin x
        assert!(f.max_deviation(&Field::sin_axis(Shape::new(1, 0, 2, 0), 0, 1)) < 1e-16);
    }

    #[test]
    fn jet_matches_partials() {
        let sh = Shape::standard(2, 1);
        let f = Field::trig(sh, &[1, 2], &[2], 0.7, -0.3) + Field::trig(sh, &[0, 1], &[1], 0.2, 0.9);
        let p = [0.4, 1.3, -0.8];
        let jet = f.jet(&p).unwrap();
        assert!((jet.value - f.evaluate(&p).unwrap()).abs() < 1e-14);
        for a in 0..3 {
            let da = f.partial(a).unwrap();
            assert!((jet.grad[a] - da.evaluate(&p).unwrap()).abs() < 1e-13);
            for b in 0..3 {
                let dab = da.partial(b).unwrap().evaluate(&p).unwrap();
                assert!((jet.hess[a][b] - dab).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn drop_and_embed_axes() {
        let t3 = Shape::standard(3, 0);
        let f = Field::sin_axis(t3, 0, 1) * Field::cos_axis(t3, 2, 1);
        let up = f.embed(t5(), &[0, 1, 2], &[]).unwrap();
        let down = up.drop_torus_axes(&[3, 4]).unwrap();
        assert_eq!(down, f);
        assert!(matches!(up.drop_torus_axes(&[2]), Err(FieldError::DependsOnAxis(2))));
    }
}
