//! The contact structure on `M = T⁵ × ℝ²` with
//! `θ = sin x₁dx₂ + cos x₁dx₃ + y₄dx₄ + y₅dx₅`, its symplectic Atiyah form
//! `ϖ = (dθ, θ)`, Hamiltonian derivations, the Jacobi bracket, contact flows,
//! and the reduction `T⁵ → T³` of the coisotropic slice `y = 0`.
//!
//! Everything pointwise goes through the matrix of `ϖ^♭` in the basis
//! `(∂₁,…,∂ₙ, 𝟙)` of derivations and `(dx₁,…,dxₙ, 𝟙*)` of Atiyah 1-forms:
//! `ϖ^♭(X, a) = (ι_X dθ + a θ, −θ(X))`. The matrix is skew-symmetric, so
//! `ϖ(□, Δ) = Δᵀ·M·□`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::der::{self, AtiyahForm, DerError, Derivation, Form};
use crate::field::{Field, FieldError, Jet, Shape};
use crate::ode::{self, OdeError, Path, DEFAULT_STEP_TOL};
use crate::random;
use crate::report::CheckReport;

/// Smallest `|det ϖ^♭|` accepted as non-degenerate.
pub const NONDEGENERACY_TOL: f64 = 1e-8;

/// Default RK4 step for contact flows.
pub const DEFAULT_FLOW_STEP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error(transparent)]
    Der(#[from] DerError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("ϖ^♭ is degenerate at {point:?} (|det| = {det:e})")]
    Degenerate { point: Vec<f64>, det: f64 },
    #[error("contact data invariant failed: {0}")]
    Invariant(String),
    #[error(transparent)]
    Flow(#[from] OdeError<Box<ContactError>>),
}

/// A derivation of `L` at a point: tangent vector `xi` and scalar part `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointDerivation {
    pub xi: Vec<f64>,
    pub a: f64,
}

/// Contact form together with its symplectic Atiyah form.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactData {
    theta: Form,
    varpi: AtiyahForm,
}

/// `sin x₁dx₂ + cos x₁dx₃`, the common part of all contact forms here.
fn base_theta_entries(shape: Shape) -> Vec<(Vec<usize>, Field)> {
    vec![(vec![1], Field::sin_axis(shape, 0, 1)), (vec![2], Field::cos_axis(shape, 0, 1))]
}

/// `θ = sin x₁dx₂ + cos x₁dx₃ + y₄dx₄ + y₅dx₅` on `T⁵ × ℝ²`.
pub fn standard_theta(shape: Shape) -> Result<Form, ContactError> {
    if shape.torus_dim != 5 || shape.fiber_dim != 2 {
        return Err(ContactError::Invariant("standard contact form lives on T^5 x R^2".into()));
    }
    let mut entries = base_theta_entries(shape);
    entries.push((vec![3], Field::fiber_coord(shape, 0)));
    entries.push((vec![4], Field::fiber_coord(shape, 1)));
    Ok(Form::from_components(shape, 1, entries)?)
}

/// `sin x₁dx₂ + cos x₁dx₃` on a torus of dimension at least 3.
pub fn slice_theta(shape: Shape) -> Result<Form, ContactError> {
    if shape.torus_dim < 3 {
        return Err(ContactError::Invariant("need at least three torus coordinates".into()));
    }
    Ok(Form::from_components(shape, 1, base_theta_entries(shape))?)
}

/// The symplectic Atiyah form `(dθ, θ)` of a 1-form.
pub fn symplectic_atiyah(theta: &Form) -> Result<AtiyahForm, ContactError> {
    if theta.degree() != 1 {
        return Err(ContactError::Invariant("contact form must be a 1-form".into()));
    }
    Ok(AtiyahForm::new(theta.d()?, Some(theta.clone()))?)
}

impl ContactData {
    /// Wraps `θ` without checking non-degeneracy.
    pub fn from_theta(theta: Form) -> Result<Self, ContactError> {
        let varpi = symplectic_atiyah(&theta)?;
        Ok(ContactData { theta, varpi })
    }

    pub fn theta(&self) -> &Form {
        &self.theta
    }

    pub fn varpi(&self) -> &AtiyahForm {
        &self.varpi
    }

    pub fn shape(&self) -> Shape {
        self.theta.shape()
    }

    /// Checks `ι_𝟙ϖ = (θ, 0)`, `d_Dϖ = 0` and `|det ϖ^♭| > 1e−8` at `samples`
    /// seeded random points.
    pub fn check_invariants(&self, samples: usize, seed: u64) -> Result<(), ContactError> {
        let shape = self.shape();
        let c = der::contract(&Derivation::identity(shape), &self.varpi)?;
        let dev = c.alpha().max_deviation(&self.theta).max(c.beta().max_abs_coeff());
        if dev != 0.0 {
            return Err(ContactError::Invariant(format!("iota_1 varpi differs from (theta, 0) by {dev:e}")));
        }
        let dw = der::d_d(&self.varpi)?;
        if !dw.is_zero() {
            return Err(ContactError::Invariant(format!("d_D varpi = {:e}", dw.max_abs_coeff())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let p = random::point(&mut rng, shape, 1.0);
            let det = self.omega_flat_matrix(&p)?.determinant();
            if !(det.abs() > NONDEGENERACY_TOL) {
                return Err(ContactError::Degenerate { point: p, det });
            }
        }
        Ok(())
    }

    fn check_point(&self, p: &[f64]) -> Result<(), ContactError> {
        if p.len() != self.shape().dim() {
            return Err(FieldError::Shape(format!("point of length {} on a {}-manifold", p.len(), self.shape().dim())).into());
        }
        Ok(())
    }

    /// Matrix of `ϖ^♭` at `p`, size `(n+1)×(n+1)`.
    pub fn omega_flat_matrix(&self, p: &[f64]) -> Result<DMatrix<f64>, ContactError> {
        self.check_point(p)?;
        let n = self.shape().dim();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        for (idx, f) in self.varpi.alpha().components() {
            let v = f.evaluate(p)?;
            let (i, j) = (idx[0], idx[1]);
            m[(j, i)] = v;
            m[(i, j)] = -v;
        }
        for (idx, f) in self.varpi.beta().components() {
            let v = f.evaluate(p)?;
            m[(idx[0], n)] = v;
            m[(n, idx[0])] = -v;
        }
        Ok(m)
    }

    /// `∂M/∂x_l` at `p` for every coordinate `l`.
    pub fn omega_flat_derivatives(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>, ContactError> {
        self.check_point(p)?;
        let n = self.shape().dim();
        let mut out = vec![DMatrix::zeros(n + 1, n + 1); n];
        for (idx, f) in self.varpi.alpha().components() {
            let jet = f.jet(p)?;
            let (i, j) = (idx[0], idx[1]);
            for (l, g) in jet.grad.iter().enumerate() {
                out[l][(j, i)] = *g;
                out[l][(i, j)] = -*g;
            }
        }
        for (idx, f) in self.varpi.beta().components() {
            let jet = f.jet(p)?;
            for (l, g) in jet.grad.iter().enumerate() {
                out[l][(idx[0], n)] = *g;
                out[l][(n, idx[0])] = -*g;
            }
        }
        Ok(out)
    }

    fn solve(&self, m: &DMatrix<f64>, rhs: &DVector<f64>, p: &[f64]) -> Result<DVector<f64>, ContactError> {
        let lu = m.clone().lu();
        let det = lu.determinant();
        if !(det.abs() > NONDEGENERACY_TOL) {
            return Err(ContactError::Degenerate { point: p.to_vec(), det });
        }
        lu.solve(rhs).ok_or_else(|| ContactError::Degenerate { point: p.to_vec(), det })
    }

    /// `Δ_λ = (ϖ^♭)^{-1}(d_D λ)` at `p`.
    pub fn hamiltonian_derivation(&self, lambda: &Field, p: &[f64]) -> Result<PointDerivation, ContactError> {
        let n = self.shape().dim();
        let v = jet_vector(&lambda.jet(p)?);
        let delta = self.solve(&self.omega_flat_matrix(p)?, &v, p)?;
        Ok(PointDerivation { xi: delta.rows(0, n).iter().copied().collect(), a: delta[n] })
    }

    /// `Δ_λ` at `p` and its partial derivatives `∂_l Δ_λ`, all from spectral
    /// derivatives of `λ` and `ϖ`.
    pub fn hamiltonian_jet(&self, lambda: &Field, p: &[f64]) -> Result<HamiltonianJet, ContactError> {
        let n = self.shape().dim();
        let jet = lambda.jet(p)?;
        let m = self.omega_flat_matrix(p)?;
        let dm = self.omega_flat_derivatives(p)?;
        let delta = self.solve(&m, &jet_vector(&jet), p)?;
        let lu = m.lu();
        let mut d_delta = Vec::with_capacity(n);
        for (l, dml) in dm.iter().enumerate() {
            let mut dv = DVector::zeros(n + 1);
            for i in 0..n {
                dv[i] = jet.hess[l][i];
            }
            dv[n] = jet.grad[l];
            let rhs = dv - dml * &delta;
            d_delta.push(lu.solve(&rhs).ok_or_else(|| ContactError::Degenerate { point: p.to_vec(), det: 0.0 })?);
        }
        Ok(HamiltonianJet { delta, d_delta, jet })
    }

    /// Contact vector field `𝒳_λ = σ(Δ_λ)` at `p`.
    pub fn contact_vector_field(&self, lambda: &Field, p: &[f64]) -> Result<Vec<f64>, ContactError> {
        Ok(self.hamiltonian_derivation(lambda, p)?.xi)
    }

    /// Jacobi bracket `{λ, μ}(p) = (Δ_λ μ)(p)`.
    pub fn jacobi_bracket(&self, lambda: &Field, mu: &Field, p: &[f64]) -> Result<f64, ContactError> {
        let d = self.hamiltonian_derivation(lambda, p)?;
        let jm = mu.jet(p)?;
        Ok(dot(&d.xi, &jm.grad) + d.a * jm.value)
    }

    /// Gradient of `{λ, μ}` at `p`.
    pub fn jacobi_bracket_gradient(&self, lambda: &Field, mu: &Field, p: &[f64]) -> Result<Vec<f64>, ContactError> {
        let n = self.shape().dim();
        let hl = self.hamiltonian_jet(lambda, p)?;
        let jm = mu.jet(p)?;
        let vm = jet_vector(&jm);
        Ok((0..n)
            .map(|l| {
                let mut dvm = DVector::zeros(n + 1);
                for i in 0..n {
                    dvm[i] = jm.hess[l][i];
                }
                dvm[n] = jm.grad[l];
                dvm.dot(&hl.delta) + vm.dot(&hl.d_delta[l])
            })
            .collect())
    }

    /// `Δ_{{λ,μ}}(p)`, built from the value and gradient of the bracket.
    pub fn bracket_hamiltonian(&self, lambda: &Field, mu: &Field, p: &[f64]) -> Result<PointDerivation, ContactError> {
        let n = self.shape().dim();
        let value = self.jacobi_bracket(lambda, mu, p)?;
        let grad = self.jacobi_bracket_gradient(lambda, mu, p)?;
        let mut v = DVector::zeros(n + 1);
        for i in 0..n {
            v[i] = grad[i];
        }
        v[n] = value;
        let delta = self.solve(&self.omega_flat_matrix(p)?, &v, p)?;
        Ok(PointDerivation { xi: delta.rows(0, n).iter().copied().collect(), a: delta[n] })
    }

    /// Lie bracket `[𝒳_λ, 𝒳_μ](p)` of contact vector fields.
    pub fn contact_field_bracket(&self, lambda: &Field, mu: &Field, p: &[f64]) -> Result<Vec<f64>, ContactError> {
        let n = self.shape().dim();
        let hl = self.hamiltonian_jet(lambda, p)?;
        let hm = self.hamiltonian_jet(mu, p)?;
        Ok((0..n)
            .map(|i| (0..n).map(|j| hl.delta[j] * hm.d_delta[j][i] - hm.delta[j] * hl.d_delta[j][i]).sum())
            .collect())
    }

    /// `(𝓛_X θ)(p)` for `X = 𝒳_λ`, from the Jacobian of `X`.
    pub fn lie_theta_along(&self, lambda: &Field, p: &[f64]) -> Result<Vec<f64>, ContactError> {
        let n = self.shape().dim();
        let h = self.hamiltonian_jet(lambda, p)?;
        let mut theta = vec![0.0; n];
        let mut dtheta = vec![vec![0.0; n]; n];
        for (idx, f) in self.theta.components() {
            let jet = f.jet(p)?;
            theta[idx[0]] = jet.value;
            dtheta[idx[0]] = jet.grad;
        }
        Ok((0..n)
            .map(|j| (0..n).map(|i| h.delta[i] * dtheta[j][i] + theta[i] * h.d_delta[j][i]).sum())
            .collect())
    }

    /// Integrates `𝒳_λ` from `p` for signed time `duration` with RK4 step `h`.
    /// The returned path is unwrapped; see [`ode::wrap`].
    pub fn flow_contact(&self, lambda: &Field, p: &[f64], duration: f64, h: f64) -> Result<ContactPath, ContactError> {
        self.check_point(p)?;
        let rhs = |y: &[f64]| self.contact_vector_field(lambda, y).map_err(Box::new);
        let path = ode::integrate(rhs, p, duration, h, DEFAULT_STEP_TOL)?;
        Ok(ContactPath { torus_dim: self.shape().torus_dim, path })
    }
}

/// A contact-flow trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactPath {
    pub torus_dim: usize,
    pub path: Path,
}

impl ContactPath {
    /// Points with torus coordinates in `[0, 2π)`.
    pub fn wrapped(&self) -> Vec<Vec<f64>> {
        self.path.states.iter().map(|s| ode::wrap(s, self.torus_dim)).collect()
    }

    pub fn end(&self) -> &[f64] {
        self.path.last()
    }
}

/// `Δ_λ` and its first derivatives at a point.
#[derive(Clone, Debug)]
pub struct HamiltonianJet {
    pub delta: DVector<f64>,
    /// `d_delta[l] = ∂Δ_λ/∂x_l`.
    pub d_delta: Vec<DVector<f64>>,
    pub jet: Jet,
}

fn jet_vector(jet: &Jet) -> DVector<f64> {
    let n = jet.grad.len();
    let mut v = DVector::zeros(n + 1);
    for (i, g) in jet.grad.iter().enumerate() {
        v[i] = *g;
    }
    v[n] = jet.value;
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The example contact manifold, with invariants checked at 100 points.
pub fn standard_contact() -> Result<ContactData, ContactError> {
    let cd = ContactData::from_theta(standard_theta(Shape::standard(5, 2))?)?;
    cd.check_invariants(100, 0)?;
    Ok(cd)
}

/// `(B, θ_B)` with `B = T³`, `θ_B = sin x₁dx₂ + cos x₁dx₃`.
pub fn reduced_contact() -> Result<ContactData, ContactError> {
    ContactData::from_theta(slice_theta(Shape::standard(3, 0))?)
}

/// The precontact slice `S = T⁵ × {0}` with `θ_S = sin x₁dx₂ + cos x₁dx₃`.
pub fn slice_precontact() -> Result<ContactData, ContactError> {
    ContactData::from_theta(slice_theta(Shape::standard(5, 0))?)
}

/// Checks the contact reduction `S = T⁵ → B = T³`: `θ_S` is the pullback of
/// `θ_B`, `ϖ_S = π*ϖ_B`, `ϖ_S` is basic, and `ϖ_B` is non-degenerate at 50
/// seeded points of `T³`.
pub fn verify_reduction(seed: u64) -> Result<Vec<CheckReport>, ContactError> {
    let s = slice_precontact()?;
    let b = reduced_contact()?;
    let t5 = s.shape();
    let mut out = Vec::new();

    let theta_pulled = b.theta().embed(t5, &[0, 1, 2])?;
    out.push(CheckReport::new("reduction.theta_pullback", s.theta().max_deviation(&theta_pulled), 0.0, 1, seed));

    let pulled = der::pullback_reduction(b.varpi())?;
    out.push(CheckReport::new("reduction.varpi_pullback", s.varpi().max_deviation(&pulled), 0.0, 1, seed));

    let basic = der::is_basic(s.varpi(), &[3, 4], 0.0)?;
    out.push(CheckReport::verdict("reduction.varpi_basic", basic.max_defect, basic.basic, 2, seed));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = 50;
    let mut min_det = f64::INFINITY;
    for _ in 0..samples {
        let p = random::point(&mut rng, b.shape(), 1.0);
        min_det = min_det.min(b.omega_flat_matrix(&p)?.determinant().abs());
    }
    out.push(CheckReport::verdict("reduction.base_nondegenerate", min_det, min_det > 0.5, samples, seed));
    Ok(out)
}
