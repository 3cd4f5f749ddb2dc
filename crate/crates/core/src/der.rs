//! Cartan calculus of the der-complex of a trivialized line bundle `L = M × ℝ`.
//!
//! With `L` trivialized, a derivation `□` of `L` is a pair `(X, a)` acting on
//! sections by `□λ = X(λ) + a·λ`, and an `L`-valued Atiyah `k`-form is a pair
//! `(α, β)` of an ordinary `k`-form and an ordinary `(k−1)`-form, evaluated as
//!
//! ```text
//! η(□₁,…,□ₖ) = α(X₁,…,Xₖ) + Σᵢ (−1)^{i+1} aᵢ · β(X₁,…,X̂ᵢ,…,Xₖ).
//! ```
//!
//! In this splitting the structural operations read
//!
//! ```text
//! d_D(α, β)   = (dα, α − dβ)
//! ι_(X,a)(α, β) = (ι_X α + a β, −ι_X β)
//! 𝓛_□         = d_D ι_□ + ι_□ d_D
//! ```
//!
//! The [`intrinsic`] submodule evaluates `d_D` and `𝓛` from their defining
//! formulas on derivation tuples, which is the independent route used to
//! cross-check the splitting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldError, Shape, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DerError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("degree error: {0}")]
    Degree(String),
    #[error("base mismatch: {0}")]
    Base(String),
}

/// Sorts `idx` in place, returning the permutation sign, or `None` if an
/// index repeats.
fn sort_with_sign(idx: &mut [usize]) -> Option<f64> {
    let mut sign = 1.0;
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1] > idx[j] {
            idx.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    if idx.windows(2).any(|w| w[0] == w[1]) {
        None
    } else {
        Some(sign)
    }
}

/// All permutations of `0..k` with their signs.
fn permutations(k: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..k).collect(), &mut out);
    out.into_iter()
        .map(|p| {
            let mut q = p.clone();
            let s = sort_with_sign(&mut q).expect("permutation");
            (p, s)
        })
        .collect()
}

/// Strictly increasing `k`-subsets of `0..n`.
pub fn index_sets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Ordinary differential form with [`Field`] coefficients, stored on
/// strictly increasing index sets. Zero components are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Form {
    degree: usize,
    shape: Shape,
    comps: BTreeMap<Vec<usize>, Field>,
}

impl Form {
    pub fn zero(shape: Shape, degree: usize) -> Self {
        Form { degree, shape, comps: BTreeMap::new() }
    }

    /// The 0-form `λ`.
    pub fn function(lambda: Field) -> Self {
        let shape = lambda.shape();
        let mut f = Form::zero(shape, 0);
        if !lambda.is_zero() {
            f.comps.insert(Vec::new(), lambda);
        }
        f
    }

    /// Sums `coefficient · dx_{i₀}∧…∧dx_{i_{k−1}}` over the given entries; index
    /// lists may be in any order.
    pub fn from_components(
        shape: Shape,
        degree: usize,
        entries: impl IntoIterator<Item = (Vec<usize>, Field)>,
    ) -> Result<Self, DerError> {
        let mut out = Form::zero(shape, degree);
        for (mut idx, field) in entries {
            if idx.len() != degree {
                return Err(DerError::Degree(format!("index set {idx:?} in a {degree}-form")));
            }
            if idx.iter().any(|&i| i >= shape.dim()) {
                return Err(DerError::Base(format!("index set {idx:?} exceeds dimension {}", shape.dim())));
            }
            if !field.shape().same_base(&shape) {
                return Err(DerError::Base("component on another base".into()));
            }
            if let Some(sign) = sort_with_sign(&mut idx) {
                out.accumulate(idx, field.scale(sign))?;
            }
        }
        Ok(out)
    }

    fn accumulate(&mut self, idx: Vec<usize>, field: Field) -> Result<(), DerError> {
        let entry = match self.comps.remove(&idx) {
            Some(prev) => prev.try_add(&field)?,
            None => field,
        };
        if !entry.is_zero() {
            self.comps.insert(idx, entry);
        }
        Ok(())
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn components(&self) -> impl Iterator<Item = (&Vec<usize>, &Field)> {
        self.comps.iter()
    }

    /// Coefficient on a strictly increasing index set.
    pub fn component(&self, idx: &[usize]) -> Field {
        self.comps.get(idx).cloned().unwrap_or_else(|| Field::zero(self.shape))
    }

    /// Coefficient on an arbitrary index list, with the antisymmetry sign.
    pub fn component_signed(&self, idx: &[usize]) -> Field {
        let mut sorted = idx.to_vec();
        match sort_with_sign(&mut sorted) {
            Some(s) => self.component(&sorted).scale(s),
            None => Field::zero(self.shape),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    fn check_same(&self, other: &Form) -> Result<Shape, DerError> {
        if self.degree != other.degree {
            return Err(DerError::Degree(format!("{}-form vs {}-form", self.degree, other.degree)));
        }
        Ok(self.shape.join(&other.shape)?)
    }

    pub fn try_add(&self, other: &Form) -> Result<Form, DerError> {
        let shape = self.check_same(other)?;
        let mut out = Form { degree: self.degree, shape, comps: self.comps.clone() };
        for (idx, f) in &other.comps {
            out.accumulate(idx.clone(), f.clone())?;
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Form) -> Result<Form, DerError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Form {
        let comps = self
            .comps
            .iter()
            .map(|(i, f)| (i.clone(), f.scale(s)))
            .filter(|(_, f)| !f.is_zero())
            .collect();
        Form { degree: self.degree, shape: self.shape, comps }
    }

    /// Pointwise product with a function.
    pub fn scale_by(&self, phi: &Field) -> Result<Form, DerError> {
        let mut out = Form::zero(self.shape.join(&phi.shape())?, self.degree);
        for (idx, f) in &self.comps {
            out.accumulate(idx.clone(), f.try_mul(phi)?)?;
        }
        Ok(out)
    }

    /// Exterior derivative.
    pub fn d(&self) -> Result<Form, DerError> {
        let n = self.shape.dim();
        let mut out = Form::zero(self.shape, self.degree + 1);
        for (idx, f) in &self.comps {
            for j in 0..n {
                if idx.contains(&j) {
                    continue;
                }
                let df = f.partial(j)?;
                if df.is_zero() {
                    continue;
                }
                let pos = idx.iter().filter(|&&i| i < j).count();
                let mut new_idx = idx.clone();
                new_idx.insert(pos, j);
                let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
                out.accumulate(new_idx, df.scale(sign))?;
            }
        }
        Ok(out)
    }

    /// Interior product `ι_X`.
    pub fn interior(&self, x: &VectorField) -> Result<Form, DerError> {
        if !x.shape().same_base(&self.shape) {
            return Err(DerError::Base("vector field on another base".into()));
        }
        if self.degree == 0 {
            return Err(DerError::Degree("interior product of a 0-form".into()));
        }
        let mut out = Form::zero(self.shape, self.degree - 1);
        for (idx, f) in &self.comps {
            for (p, &i) in idx.iter().enumerate() {
                let xi = x.component(i);
                if xi.is_zero() {
                    continue;
                }
                let mut rest = idx.clone();
                rest.remove(p);
                let term = xi.try_mul(f)?;
                out.accumulate(rest, if p % 2 == 0 { term } else { -term })?;
            }
        }
        Ok(out)
    }

    /// `α(X₁,…,Xₖ)` as a function.
    pub fn eval_on(&self, vectors: &[&VectorField]) -> Result<Field, DerError> {
        if vectors.len() != self.degree {
            return Err(DerError::Degree(format!("{}-form evaluated on {} vectors", self.degree, vectors.len())));
        }
        let mut out = Field::zero(self.shape);
        let perms = permutations(self.degree);
        for (idx, f) in &self.comps {
            let mut det = Field::zero(self.shape);
            for (perm, sign) in &perms {
                let mut prod = Field::constant(self.shape, *sign);
                for (slot, &q) in perm.iter().enumerate() {
                    prod = prod.try_mul(vectors[slot].component(idx[q]))?;
                    if prod.is_zero() {
                        break;
                    }
                }
                det = det.try_add(&prod)?;
            }
            out = out.try_add(&det.try_mul(f)?)?;
        }
        Ok(out)
    }

    /// Re-expresses the form on a larger base; `axis_map[i]` is the target
    /// coordinate of source coordinate `i` (torus axes first).
    pub fn embed(&self, target: Shape, axis_map: &[usize]) -> Result<Form, DerError> {
        let td = self.shape.torus_dim;
        let ttd = target.torus_dim;
        let torus_map: Vec<usize> = axis_map[..td].to_vec();
        let fiber_map: Vec<usize> = axis_map[td..].iter().map(|&a| a - ttd).collect();
        let entries = self
            .comps
            .iter()
            .map(|(idx, f)| {
                let mapped = idx.iter().map(|&i| axis_map[i]).collect::<Vec<_>>();
                Ok((mapped, f.embed(target, &torus_map, &fiber_map)?))
            })
            .collect::<Result<Vec<_>, FieldError>>()?;
        Form::from_components(target, self.degree, entries)
    }

    /// Largest coefficient deviation between two forms of equal degree.
    pub fn max_deviation(&self, other: &Form) -> f64 {
        let mut keys: Vec<&Vec<usize>> = self.comps.keys().chain(other.comps.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|k| self.component(k).max_deviation(&other.component(k)))
            .fold(0.0, f64::max)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.comps.values().map(Field::max_abs_coeff).fold(0.0, f64::max)
    }

    /// Component values at a point, keyed by index set.
    pub fn evaluate(&self, p: &[f64]) -> Result<BTreeMap<Vec<usize>, f64>, DerError> {
        self.comps
            .iter()
            .map(|(i, f)| Ok((i.clone(), f.evaluate(p)?)))
            .collect()
    }
}

/// A derivation `□ = (X, a)` of the trivial line bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub symbol: VectorField,
    pub scalar: Field,
}

impl Derivation {
    pub fn new(symbol: VectorField, scalar: Field) -> Result<Self, DerError> {
        if !symbol.shape().same_base(&scalar.shape()) {
            return Err(DerError::Base("symbol and scalar part on different bases".into()));
        }
        Ok(Derivation { symbol, scalar })
    }

    /// The identity derivation `𝟙 = (0, 1)`.
    pub fn identity(shape: Shape) -> Self {
        Derivation { symbol: VectorField::zero(shape), scalar: Field::constant(shape, 1.0) }
    }

    /// The coordinate derivation `(∂/∂x_axis, 0)`.
    pub fn coordinate(shape: Shape, axis: usize) -> Self {
        Derivation { symbol: VectorField::coordinate(shape, axis), scalar: Field::zero(shape) }
    }

    pub fn shape(&self) -> Shape {
        self.symbol.shape()
    }

    /// `□λ = X(λ) + a·λ`.
    pub fn apply(&self, lambda: &Field) -> Result<Field, DerError> {
        if !lambda.shape().same_base(&self.shape()) {
            return Err(DerError::Base("section on another base".into()));
        }
        Ok(self.symbol.apply(lambda)?.try_add(&self.scalar.try_mul(lambda)?)?)
    }

    /// Commutator `[(X,a),(Y,b)] = ([X,Y], X(b) − Y(a))`.
    pub fn commutator(&self, other: &Derivation) -> Result<Derivation, DerError> {
        if !self.shape().same_base(&other.shape()) {
            return Err(DerError::Base("derivations on different bases".into()));
        }
        let symbol = self.symbol.bracket(&other.symbol)?;
        let scalar = self.symbol.apply(&other.scalar)?.try_sub(&other.symbol.apply(&self.scalar)?)?;
        Ok(Derivation { symbol, scalar })
    }

    pub fn try_add(&self, other: &Derivation) -> Result<Derivation, DerError> {
        Ok(Derivation { symbol: self.symbol.try_add(&other.symbol)?, scalar: self.scalar.try_add(&other.scalar)? })
    }

    pub fn max_deviation(&self, other: &Derivation) -> f64 {
        self.symbol.max_deviation(&other.symbol).max(self.scalar.max_deviation(&other.scalar))
    }

    pub fn is_zero(&self) -> bool {
        self.symbol.is_zero() && self.scalar.is_zero()
    }
}

/// An `L`-valued Atiyah form in the `(α, β)` splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct AtiyahForm {
    alpha: Form,
    beta: Option<Form>,
}

impl AtiyahForm {
    /// Builds `(α, β)`; `beta` must have degree `deg α − 1` and is ignored
    /// (must be `None`) in degree 0.
    pub fn new(alpha: Form, beta: Option<Form>) -> Result<Self, DerError> {
        match (&beta, alpha.degree()) {
            (Some(_), 0) => return Err(DerError::Degree("a 0-form has no beta part".into())),
            (Some(b), k) if b.degree() + 1 != k => {
                return Err(DerError::Degree(format!("beta of degree {} with alpha of degree {k}", b.degree())))
            }
            (Some(b), _) if !b.shape().same_base(&alpha.shape()) => {
                return Err(DerError::Base("alpha and beta on different bases".into()))
            }
            _ => {}
        }
        let beta = beta.filter(|b| !b.is_zero());
        Ok(AtiyahForm { alpha, beta })
    }

    /// A section `λ` viewed as a degree-0 Atiyah form.
    pub fn section(lambda: Field) -> Self {
        AtiyahForm { alpha: Form::function(lambda), beta: None }
    }

    pub fn zero(shape: Shape, degree: usize) -> Self {
        AtiyahForm { alpha: Form::zero(shape, degree), beta: None }
    }

    pub fn degree(&self) -> usize {
        self.alpha.degree()
    }

    pub fn shape(&self) -> Shape {
        self.alpha.shape()
    }

    pub fn alpha(&self) -> &Form {
        &self.alpha
    }

    /// The `(k−1)`-form part; the zero form when absent. Panics in degree 0.
    pub fn beta(&self) -> Form {
        assert!(self.degree() > 0, "degree-0 Atiyah forms have no beta part");
        self.beta.clone().unwrap_or_else(|| Form::zero(self.shape(), self.degree() - 1))
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.is_zero() && self.beta.is_none()
    }

    pub fn try_add(&self, other: &AtiyahForm) -> Result<AtiyahForm, DerError> {
        let alpha = self.alpha.try_add(&other.alpha)?;
        let beta = match self.degree() {
            0 => None,
            _ => Some(self.beta().try_add(&other.beta())?),
        };
        AtiyahForm::new(alpha, beta)
    }

    pub fn try_sub(&self, other: &AtiyahForm) -> Result<AtiyahForm, DerError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> AtiyahForm {
        AtiyahForm { alpha: self.alpha.scale(s), beta: self.beta.as_ref().map(|b| b.scale(s)) }
    }

    /// Largest coefficient deviation over both parts.
    pub fn max_deviation(&self, other: &AtiyahForm) -> f64 {
        let a = self.alpha.max_deviation(&other.alpha);
        if self.degree() == 0 || other.degree() == 0 {
            return a;
        }
        a.max(self.beta().max_deviation(&other.beta()))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        let b = self.beta.as_ref().map_or(0.0, Form::max_abs_coeff);
        self.alpha.max_abs_coeff().max(b)
    }

    /// `η(□₁,…,□ₖ)` as a section.
    pub fn eval_on(&self, ders: &[&Derivation]) -> Result<Field, DerError> {
        let k = self.degree();
        if ders.len() != k {
            return Err(DerError::Degree(format!("{k}-form evaluated on {} derivations", ders.len())));
        }
        let symbols: Vec<&VectorField> = ders.iter().map(|d| &d.symbol).collect();
        let mut out = self.alpha.eval_on(&symbols)?;
        if let Some(beta) = &self.beta {
            for i in 0..k {
                let rest: Vec<&VectorField> =
                    symbols.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).collect();
                let term = beta.eval_on(&rest)?.try_mul(&ders[i].scalar)?;
                out = if i % 2 == 0 { out.try_add(&term)? } else { out.try_sub(&term)? };
            }
        }
        Ok(out)
    }

    /// Re-expresses the form on a larger base (see [`Form::embed`]).
    pub fn embed(&self, target: Shape, axis_map: &[usize]) -> Result<AtiyahForm, DerError> {
        let alpha = self.alpha.embed(target, axis_map)?;
        let beta = self.beta.as_ref().map(|b| b.embed(target, axis_map)).transpose()?;
        AtiyahForm::new(alpha, beta)
    }
}

/// De Rham differential of the der-complex: `(α, β) ↦ (dα, α − dβ)`.
pub fn d_d(eta: &AtiyahForm) -> Result<AtiyahForm, DerError> {
    let alpha = eta.alpha.d()?;
    let beta = match &eta.beta {
        Some(b) => eta.alpha.try_sub(&b.d()?)?,
        None => eta.alpha.clone(),
    };
    AtiyahForm::new(alpha, Some(beta))
}

/// Contraction `ι_□`: `(α, β) ↦ (ι_X α + a β, −ι_X β)`.
pub fn contract(der: &Derivation, eta: &AtiyahForm) -> Result<AtiyahForm, DerError> {
    let k = eta.degree();
    if k == 0 {
        return Err(DerError::Degree("cannot contract a degree-0 Atiyah form".into()));
    }
    if !der.shape().same_base(&eta.shape()) {
        return Err(DerError::Base("derivation and form on different bases".into()));
    }
    let beta = eta.beta();
    let alpha = eta.alpha.interior(&der.symbol)?.try_add(&beta.scale_by(&der.scalar)?)?;
    let new_beta = if k >= 2 { Some(beta.interior(&der.symbol)?.scale(-1.0)) } else { None };
    AtiyahForm::new(alpha, new_beta)
}

/// Lie derivative through Cartan's formula `𝓛_□ = [d_D, ι_□]`.
pub fn lie(der: &Derivation, eta: &AtiyahForm) -> Result<AtiyahForm, DerError> {
    let inner = d_d(eta)?;
    let second = contract(der, &inner)?;
    if eta.degree() == 0 {
        return Ok(second);
    }
    d_d(&contract(der, eta)?)?.try_add(&second)
}

/// Pullback along a trivialized projection whose base map forgets
/// coordinates: source coordinate `i` becomes target coordinate `axis_map[i]`.
pub fn pullback_projection(eta: &AtiyahForm, target: Shape, axis_map: &[usize]) -> Result<AtiyahForm, DerError> {
    if axis_map.len() != eta.shape().dim() {
        return Err(DerError::Base("axis map does not cover the source coordinates".into()));
    }
    eta.embed(target, axis_map)
}

/// Pullback along the reduction `T⁵ → T³`, `(x₁,…,x₅) ↦ (x₁,x₂,x₃)`.
pub fn pullback_reduction(eta: &AtiyahForm) -> Result<AtiyahForm, DerError> {
    let s = eta.shape();
    if s.torus_dim != 3 || s.fiber_dim != 0 {
        return Err(DerError::Base(format!("expected a form on T^3, got T^{}xR^{}", s.torus_dim, s.fiber_dim)));
    }
    let target = Shape { torus_dim: 5, ..s };
    pullback_projection(eta, target, &[0, 1, 2])
}

/// Outcome of the basic-form test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicReport {
    pub basic: bool,
    pub max_defect: f64,
}

/// `η` is basic for the projection forgetting `fiber_axes` iff `ι_□η` and
/// `𝓛_□η` vanish for the generators `(∂_a, 0)` of its kernel.
pub fn is_basic(eta: &AtiyahForm, fiber_axes: &[usize], tol: f64) -> Result<BasicReport, DerError> {
    let shape = eta.shape();
    let mut worst = 0.0f64;
    for &a in fiber_axes {
        if a >= shape.torus_dim {
            return Err(DerError::Field(FieldError::UnsupportedAxis { axis: a, torus_dim: shape.torus_dim }));
        }
        let gen = Derivation::coordinate(shape, a);
        if eta.degree() > 0 {
            worst = worst.max(contract(&gen, eta)?.max_abs_coeff());
        }
        worst = worst.max(lie(&gen, eta)?.max_abs_coeff());
    }
    Ok(BasicReport { basic: worst <= tol, max_defect: worst })
}

/// Evaluations of `d_D` and `𝓛_□` straight from their defining formulas.
pub mod intrinsic {
    use super::*;

    /// `(d_D η)(□₀,…,□ₖ) = Σᵢ (−1)^i □ᵢ(η(…□̂ᵢ…)) + Σ_{i<j} (−1)^{i+j} η([□ᵢ,□ⱼ], …□̂ᵢ…□̂ⱼ…)`.
    pub fn d_d_on(eta: &AtiyahForm, ders: &[&Derivation]) -> Result<Field, DerError> {
        let k = eta.degree();
        if ders.len() != k + 1 {
            return Err(DerError::Degree(format!("d_D of a {k}-form takes {} derivations", k + 1)));
        }
        let mut out = Field::zero(eta.shape());
        for i in 0..=k {
            let rest: Vec<&Derivation> = ders.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, d)| *d).collect();
            let term = ders[i].apply(&eta.eval_on(&rest)?)?;
            out = if i % 2 == 0 { out.try_add(&term)? } else { out.try_sub(&term)? };
        }
        for i in 0..=k {
            for j in (i + 1)..=k {
                let br = ders[i].commutator(ders[j])?;
                let mut args: Vec<&Derivation> = vec![&br];
                args.extend(ders.iter().enumerate().filter(|&(l, _)| l != i && l != j).map(|(_, d)| *d));
                let term = eta.eval_on(&args)?;
                out = if (i + j) % 2 == 0 { out.try_add(&term)? } else { out.try_sub(&term)? };
            }
        }
        Ok(out)
    }

    /// `(𝓛_□η)(Δ₁,…,Δₖ) = □(η(Δ₁,…,Δₖ)) − Σᵢ η(Δ₁,…,[□,Δᵢ],…,Δₖ)`.
    pub fn lie_on(der: &Derivation, eta: &AtiyahForm, ders: &[&Derivation]) -> Result<Field, DerError> {
        let mut out = der.apply(&eta.eval_on(ders)?)?;
        for i in 0..ders.len() {
            let br = der.commutator(ders[i])?;
            let args: Vec<&Derivation> = ders.iter().enumerate().map(|(j, d)| if j == i { &br } else { *d }).collect();
            out = out.try_sub(&eta.eval_on(&args)?)?;
        }
        Ok(out)
    }
}

/// JSON form of an [`AtiyahForm`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AtiyahFormJson {
    pub degree: usize,
    pub alpha: Vec<ComponentJson>,
    pub beta: Vec<ComponentJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ComponentJson {
    pub idx: Vec<usize>,
    pub field: Field,
}

impl From<&AtiyahForm> for AtiyahFormJson {
    fn from(eta: &AtiyahForm) -> Self {
        let comps = |f: &Form| {
            f.components().map(|(i, c)| ComponentJson { idx: i.clone(), field: c.clone() }).collect::<Vec<_>>()
        };
        AtiyahFormJson {
            degree: eta.degree(),
            alpha: comps(&eta.alpha),
            beta: eta.beta.as_ref().map(comps).unwrap_or_default(),
        }
    }
}

impl AtiyahFormJson {
    /// Rebuilds the form on `shape` (needed when a part has no components).
    pub fn into_form(self, shape: Shape) -> Result<AtiyahForm, DerError> {
        let k = self.degree;
        let alpha = Form::from_components(shape, k, self.alpha.into_iter().map(|c| (c.idx, c.field)))?;
        let beta = if k == 0 {
            if !self.beta.is_empty() {
                return Err(DerError::Degree("degree-0 form with beta components".into()));
            }
            None
        } else {
            Some(Form::from_components(shape, k - 1, self.beta.into_iter().map(|c| (c.idx, c.field)))?)
        };
        AtiyahForm::new(alpha, beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    fn m_shape() -> Shape {
        Shape::standard(5, 2)
    }

    /// θ = sin x₁dx₂ + cos x₁dx₃ + y₄dx₄ + y₅dx₅ on T⁵×ℝ².
    fn theta(shape: Shape) -> Form {
        Form::from_components(
            shape,
            1,
            vec![
                (vec![1], Field::sin_axis(shape, 0, 1)),
                (vec![2], Field::cos_axis(shape, 0, 1)),
                (vec![3], Field::fiber_coord(shape, 0)),
                (vec![4], Field::fiber_coord(shape, 1)),
            ],
        )
        .unwrap()
    }

    fn theta_s(shape: Shape) -> Form {
        Form::from_components(
            shape,
            1,
            vec![(vec![1], Field::sin_axis(shape, 0, 1)), (vec![2], Field::cos_axis(shape, 0, 1))],
        )
        .unwrap()
    }

    fn varpi(theta: &Form) -> AtiyahForm {
        AtiyahForm::new(theta.d().unwrap(), Some(theta.clone())).unwrap()
    }

    #[test]
    fn commutator_examples() {
        let sh = m_shape();
        let d1 = Derivation::coordinate(sh, 0);
        assert!(d1.commutator(&Derivation::identity(sh)).unwrap().is_zero());
        let mult = Derivation::new(VectorField::zero(sh), Field::sin_axis(sh, 0, 1)).unwrap();
        let c = d1.commutator(&mult).unwrap();
        assert!(c.symbol.is_zero());
        assert!(c.scalar.max_deviation(&Field::cos_axis(sh, 0, 1)) < 1e-15);
        assert!(mult.commutator(&mult).unwrap().is_zero());
    }

    #[test]
    fn apply_examples() {
        let sh = m_shape();
        let lambda = Field::trig(sh, &[1, 0, 2, 0, 0], &[1, 0], 0.3, 0.2);
        assert_eq!(Derivation::identity(sh).apply(&lambda).unwrap(), lambda);
        let d = Derivation::coordinate(sh, 0).apply(&Field::sin_axis(sh, 0, 1)).unwrap();
        assert!(d.max_deviation(&Field::cos_axis(sh, 0, 1)) < 1e-15);
    }

    #[test]
    fn d_d_of_constant_section() {
        let sh = m_shape();
        let one = AtiyahForm::section(Field::constant(sh, 1.0));
        let d = d_d(&one).unwrap();
        assert_eq!(d.degree(), 1);
        assert!(d.alpha().is_zero());
        assert!(d.beta().component(&[]).max_deviation(&Field::constant(sh, 1.0)) < 1e-15);
    }

    #[test]
    fn d_d_of_symplectic_atiyah_form_vanishes() {
        let w = varpi(&theta(m_shape()));
        assert!(d_d(&w).unwrap().is_zero());
    }

    #[test]
    fn contract_examples() {
        let sh = m_shape();
        let th = theta(sh);
        let w = varpi(&th);
        let c = contract(&Derivation::identity(sh), &w).unwrap();
        assert!(c.alpha().max_deviation(&th) < 1e-15);
        assert!(c.beta().is_zero());

        let c4 = contract(&Derivation::coordinate(sh, 3), &w).unwrap();
        let expect_alpha = Form::from_components(sh, 1, vec![(vec![5], Field::constant(sh, -1.0))]).unwrap();
        assert!(c4.alpha().max_deviation(&expect_alpha) < 1e-15);
        assert!(c4.beta().component(&[]).max_deviation(&Field::fiber_coord(sh, 0).scale(-1.0)) < 1e-15);

        let der = Derivation::new(VectorField::coordinate(sh, 1), Field::cos_axis(sh, 2, 1)).unwrap();
        assert!(contract(&der, &contract(&der, &w).unwrap()).unwrap().is_zero());
        assert!(matches!(contract(&der, &AtiyahForm::section(Field::constant(sh, 1.0))), Err(DerError::Degree(_))));
    }

    #[test]
    fn lie_examples() {
        let sh = m_shape();
        let w = varpi(&theta(sh));
        let l = lie(&Derivation::identity(sh), &w).unwrap();
        assert!(l.max_deviation(&w) < 1e-15);

        let t5 = Shape::standard(5, 0);
        let ws = varpi(&theta_s(t5));
        assert!(lie(&Derivation::coordinate(t5, 3), &ws).unwrap().is_zero());
    }

    #[test]
    fn pullback_of_reduced_form() {
        let t3 = Shape::standard(3, 0);
        let t5 = Shape::standard(5, 0);
        let wb = varpi(&theta_s(t3));
        let pulled = pullback_reduction(&wb).unwrap();
        assert!(pulled.max_deviation(&varpi(&theta_s(t5))) == 0.0);
        assert!(pullback_reduction(&AtiyahForm::zero(t3, 2)).unwrap().is_zero());
        assert!(pullback_reduction(&varpi(&theta(m_shape()))).is_err());
    }

    #[test]
    fn basic_form_checks() {
        let t5 = Shape::standard(5, 0);
        let ws = varpi(&theta_s(t5));
        let r = is_basic(&ws, &[3, 4], 1e-12).unwrap();
        assert!(r.basic);
        assert_eq!(r.max_defect, 0.0);

        let with_dx4 = Form::from_components(t5, 1, vec![(vec![3], Field::cos_axis(t5, 0, 1))]).unwrap();
        let eta = AtiyahForm::new(with_dx4.d().unwrap(), Some(with_dx4)).unwrap();
        let r = is_basic(&eta, &[3, 4], 1e-12).unwrap();
        assert!(!r.basic);
        assert!(r.max_defect > 0.4);
    }

    #[test]
    fn json_round_trip() {
        let w = varpi(&theta(m_shape()));
        let text = serde_json::to_string(&AtiyahFormJson::from(&w)).unwrap();
        let back: AtiyahFormJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_form(m_shape()).unwrap(), w);
    }

    #[test]
    fn index_helpers() {
        assert_eq!(index_sets(4, 2).len(), 6);
        let mut idx = vec![3, 1, 2];
        assert_eq!(sort_with_sign(&mut idx), Some(1.0));
        assert_eq!(idx, vec![1, 2, 3]);
        let mut idx = vec![2, 1];
        assert_eq!(sort_with_sign(&mut idx), Some(-1.0));
        assert_eq!(sort_with_sign(&mut vec![1, 1]), None);
        assert_eq!(permutations(3).iter().filter(|(_, s)| *s < 0.0).count(), 3);
    }
}
