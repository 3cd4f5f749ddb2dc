//! Randomized verification suites with machine-readable reports.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coisotropy::{self, CoisoError, Section};
use crate::contact::{self, ContactData, ContactError};
use crate::der::{self, intrinsic, AtiyahForm, DerError, Derivation};
use crate::field::{Field, Shape};
use crate::random::{self, FieldSpec};
use crate::report::CheckReport;

/// Relative tolerance of the calculus identities.
pub const CARTAN_TOL: f64 = 1e-9;
/// Tolerance of the pointwise bracket checks.
pub const BRACKET_TOL: f64 = 1e-6;
pub const LEIBNIZ_TOL: f64 = 1e-8;
pub const NONDEGENERACY_TOL: f64 = contact::NONDEGENERACY_TOL;
/// Residual allowed on a transported coisotropic graph.
pub const TRANSPORT_TOL: f64 = 1e-5;
pub const TRANSPORT_TIME: f64 = 0.05;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Der(#[from] DerError),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Coiso(#[from] CoisoError),
    #[error("unknown suite {0:?} (expected cartan, jacobi, contact, reduction or all)")]
    UnknownSuite(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Cartan,
    Jacobi,
    Contact,
    Reduction,
    All,
}

impl FromStr for Suite {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, VerifyError> {
        match s {
            "cartan" => Ok(Suite::Cartan),
            "jacobi" => Ok(Suite::Jacobi),
            "contact" => Ok(Suite::Contact),
            "reduction" => Ok(Suite::Reduction),
            "all" => Ok(Suite::All),
            other => Err(VerifyError::UnknownSuite(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub n: usize,
    pub pass: bool,
    pub checks: Vec<CheckReport>,
    pub warnings: Vec<String>,
}

/// Runs `suite` with `n` random instances per check.
pub fn run(suite: Suite, seed: u64, n: usize) -> Result<VerifyReport, VerifyError> {
    run_with_tol(suite, seed, n, CARTAN_TOL)
}

/// Like [`run`], with `identity_tol` for the calculus identities.
pub fn run_with_tol(suite: Suite, seed: u64, n: usize, identity_tol: f64) -> Result<VerifyReport, VerifyError> {
    let mut warnings = Vec::new();
    let mut checks = Vec::new();
    if n == 0 {
        warnings.push("n = 0: no instances were checked, the pass is vacuous".to_string());
    } else {
        let all = suite == Suite::All;
        if all || suite == Suite::Cartan {
            checks.extend(cartan_suite(seed, n, identity_tol)?);
        }
        if all || suite == Suite::Jacobi {
            checks.extend(jacobi_suite(seed, n)?);
        }
        if all || suite == Suite::Contact {
            checks.extend(contact_suite(seed, n)?);
        }
        if all || suite == Suite::Reduction {
            checks.extend(contact::verify_reduction(seed)?);
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { suite, seed, n, pass, checks, warnings })
}

/// Shape holding every product formed by the calculus checks exactly.
pub fn cartan_shape() -> Shape {
    Shape::new(5, 2, 6, 6)
}

fn cartan_spec() -> FieldSpec {
    FieldSpec { terms: 2, max_freq: 1, max_fiber_deg: 1, amplitude: 1.0 }
}

/// Derivations are sparse with one-term components; dense ones make the
/// degree-3 evaluations explode in size.
fn cartan_derivation(rng: &mut ChaCha8Rng, shape: Shape) -> Derivation {
    random::sparse_derivation(rng, shape, FieldSpec { terms: 1, ..cartan_spec() }, 0.4)
}

/// Running maximum of relative defects for one identity.
struct Tally {
    name: &'static str,
    worst: f64,
    samples: usize,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, worst: 0.0, samples: 0 }
    }

    fn record(&mut self, defect: f64, scale: f64) {
        self.worst = self.worst.max(defect / scale.max(1.0));
        self.samples += 1;
    }

    fn report(&self, tol: f64, seed: u64) -> CheckReport {
        CheckReport::new(self.name, self.worst, tol, self.samples, seed)
    }
}

/// `ι_□η`, with `None` standing for the zero form of degree −1.
fn iota(d: &Derivation, eta: &AtiyahForm) -> Result<Option<AtiyahForm>, DerError> {
    if eta.degree() == 0 {
        Ok(None)
    } else {
        der::contract(d, eta).map(Some)
    }
}

fn d_opt(eta: Option<AtiyahForm>) -> Result<Option<AtiyahForm>, DerError> {
    eta.map(|e| der::d_d(&e)).transpose()
}

fn iota_opt(d: &Derivation, eta: Option<AtiyahForm>) -> Result<Option<AtiyahForm>, DerError> {
    match eta {
        Some(e) => iota(d, &e),
        None => Ok(None),
    }
}

fn lie_opt(d: &Derivation, eta: Option<AtiyahForm>) -> Result<Option<AtiyahForm>, DerError> {
    eta.map(|e| der::lie(d, &e)).transpose()
}

/// `(max|a − b|, max(|a|, |b|))` on coefficients.
fn gap(a: &Option<AtiyahForm>, b: &Option<AtiyahForm>) -> Result<(f64, f64), DerError> {
    Ok(match (a, b) {
        (None, None) => (0.0, 0.0),
        (Some(x), None) | (None, Some(x)) => (x.max_abs_coeff(), x.max_abs_coeff()),
        (Some(x), Some(y)) => (x.try_sub(y)?.max_abs_coeff(), x.max_abs_coeff().max(y.max_abs_coeff())),
    })
}

fn sum(a: Option<AtiyahForm>, b: Option<AtiyahForm>, sign: f64) -> Result<Option<AtiyahForm>, DerError> {
    Ok(match (a, b) {
        (None, None) => None,
        (Some(x), None) => Some(x),
        (None, Some(y)) => Some(y.scale(sign)),
        (Some(x), Some(y)) => Some(if sign > 0.0 { x.try_add(&y)? } else { x.try_sub(&y)? }),
    })
}

/// The calculus identities on `n` random instances per degree 0–3:
/// `d_D² = 0`, `[d_D, 𝓛_□] = 0`, `[ι_□, ι_Δ] = 0`, `[d_D, ι_□] = 𝓛_□` (with
/// `𝓛` from its defining formula), `[ι_□, 𝓛_Δ] = ι_{[□,Δ]}`,
/// `[𝓛_□, 𝓛_Δ] = 𝓛_{[□,Δ]}`, `d_D` against its defining formula, the
/// homotopy `[d_D, ι_𝟙] = id`, and the Jacobi identity of the commutator.
pub fn cartan_suite(seed: u64, n: usize, tol: f64) -> Result<Vec<CheckReport>, VerifyError> {
    let shape = cartan_shape();
    let spec = cartan_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one = Derivation::identity(shape);
    let mut t_dd = Tally::new("cartan.d_d_squared");
    let mut t_dl = Tally::new("cartan.d_d_commutes_with_lie");
    let mut t_ii = Tally::new("cartan.iota_anticommute");
    let mut t_cartan = Tally::new("cartan.d_d_iota_is_lie");
    let mut t_il = Tally::new("cartan.iota_lie_commutator");
    let mut t_ll = Tally::new("cartan.lie_lie_commutator");
    let mut t_def = Tally::new("cartan.d_d_defining_formula");
    let mut t_hom = Tally::new("cartan.homotopy");
    let mut t_jac = Tally::new("cartan.commutator_jacobi");

    for degree in 0..=3 {
        for _ in 0..n {
            let density = [1.0, 0.4, 0.15, 0.06][degree];
            let eta = random::atiyah_form(&mut rng, shape, degree, spec, density);
            let a = cartan_derivation(&mut rng, shape);
            let b = cartan_derivation(&mut rng, shape);
            let de = der::d_d(&eta)?;

            let (g, s) = gap(&Some(der::d_d(&de)?), &None)?;
            t_dd.record(g, s);

            let lhs = sum(Some(der::d_d(&der::lie(&a, &eta)?)?), Some(der::lie(&a, &de)?), -1.0)?;
            let (g, s) = gap(&lhs, &None)?;
            t_dl.record(g, s);

            let ab = iota_opt(&a, iota(&b, &eta)?)?;
            let ba = iota_opt(&b, iota(&a, &eta)?)?;
            let (g, s) = gap(&ab, &ba.map(|x| x.scale(-1.0)))?;
            t_ii.record(g, s);

            let cartan = sum(d_opt(iota(&a, &eta)?)?, iota(&a, &de)?, 1.0)?;
            let lie = der::lie(&a, &eta)?;
            let (g, s) = gap(&cartan, &Some(lie.clone()))?;
            t_cartan.record(g, s);
            // 𝓛 against its defining formula, on random arguments.
            let args: Vec<Derivation> = (0..degree).map(|_| cartan_derivation(&mut rng, shape)).collect();
            let refs: Vec<&Derivation> = args.iter().collect();
            let direct = intrinsic::lie_on(&a, &eta, &refs)?;
            let via = lie.eval_on(&refs)?;
            t_cartan.record(direct.max_deviation(&via), direct.max_abs_coeff().max(via.max_abs_coeff()));

            let ab_br = a.commutator(&b)?;
            let il = sum(iota_opt(&a, Some(der::lie(&b, &eta)?))?, lie_opt(&b, iota(&a, &eta)?)?, -1.0)?;
            let (g, s) = gap(&il, &iota(&ab_br, &eta)?)?;
            t_il.record(g, s);

            let ll = der::lie(&a, &der::lie(&b, &eta)?)?.try_sub(&der::lie(&b, &der::lie(&a, &eta)?)?)?;
            let (g, s) = gap(&Some(ll), &Some(der::lie(&ab_br, &eta)?))?;
            t_ll.record(g, s);

            let extra = cartan_derivation(&mut rng, shape);
            let mut dargs = refs.clone();
            dargs.push(&extra);
            let direct = intrinsic::d_d_on(&eta, &dargs)?;
            let via = de.eval_on(&dargs)?;
            t_def.record(direct.max_deviation(&via), direct.max_abs_coeff().max(via.max_abs_coeff()));

            let hom = sum(d_opt(iota(&one, &eta)?)?, iota(&one, &de)?, 1.0)?;
            let (g, s) = gap(&hom, &Some(eta.clone()))?;
            t_hom.record(g, s);

            if degree == 0 {
                let c = cartan_derivation(&mut rng, shape);
                let j = a
                    .commutator(&b.commutator(&c)?)?
                    .try_add(&b.commutator(&c.commutator(&a)?)?)?
                    .try_add(&c.commutator(&a.commutator(&b)?)?)?;
                let zero = Derivation::new(crate::field::VectorField::zero(shape), Field::zero(shape))?;
                t_jac.record(j.max_deviation(&zero), 1.0);
            }
        }
    }
    Ok([t_dd, t_dl, t_ii, t_cartan, t_il, t_ll, t_def, t_hom, t_jac].iter().map(|t| t.report(tol, seed)).collect())
}

fn bracket_spec() -> FieldSpec {
    FieldSpec { terms: 3, max_freq: 1, max_fiber_deg: 1, amplitude: 1.0 }
}

/// Jacobi identity of the bracket, the Leibniz rule of `Δ_λ` and the
/// Lie-morphism property `σ(Δ_{{λ,μ}}) = [𝒳_λ, 𝒳_μ]` at `n` random
/// point/field triples.
pub fn jacobi_suite(seed: u64, n: usize) -> Result<Vec<CheckReport>, VerifyError> {
    let cd = contact::standard_contact()?;
    let shape = cd.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4a61_636f_6269);
    let (mut jac, mut leib, mut morph) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let fields: Vec<Field> = (0..3).map(|_| random::field(&mut rng, shape, bracket_spec())).collect();
        let p = random::point(&mut rng, shape, 1.0);
        jac = jac.max(jacobi_defect(&cd, &fields[0], &fields[1], &fields[2], &p)?);
        leib = leib.max(leibniz_defect(&cd, &fields[0], &fields[1], &fields[2], &p)?);
        morph = morph.max(morphism_defect(&cd, &fields[0], &fields[1], &p)?);
    }
    Ok(vec![
        CheckReport::new("jacobi.bracket_jacobi_identity", jac, BRACKET_TOL, n, seed),
        CheckReport::new("jacobi.hamiltonian_leibniz", leib, LEIBNIZ_TOL, n, seed),
        CheckReport::new("jacobi.lie_morphism", morph, BRACKET_TOL, n, seed),
    ])
}

/// `|{λ,{μ,ν}} + {μ,{ν,λ}} + {ν,{λ,μ}}|(p)`.
pub fn jacobi_defect(cd: &ContactData, l: &Field, m: &Field, v: &Field, p: &[f64]) -> Result<f64, ContactError> {
    let outer = |a: &Field, b: &Field, c: &Field| -> Result<f64, ContactError> {
        let da = cd.hamiltonian_derivation(a, p)?;
        let inner = cd.jacobi_bracket(b, c, p)?;
        let grad = cd.jacobi_bracket_gradient(b, c, p)?;
        Ok(da.xi.iter().zip(&grad).map(|(x, g)| x * g).sum::<f64>() + da.a * inner)
    };
    Ok((outer(l, m, v)? + outer(m, v, l)? + outer(v, l, m)?).abs())
}

/// `|Δ_λ(μν) − 𝒳_λ(μ)ν − μ𝒳_λ(ν) − a_λμν|(p)`, with `μν` formed spectrally.
pub fn leibniz_defect(cd: &ContactData, l: &Field, m: &Field, v: &Field, p: &[f64]) -> Result<f64, ContactError> {
    let d = cd.hamiltonian_derivation(l, p)?;
    let prod = m.try_mul(v)?.jet(p)?;
    let (jm, jv) = (m.jet(p)?, v.jet(p)?);
    let dot = |g: &[f64]| d.xi.iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
    let lhs = dot(&prod.grad) + d.a * prod.value;
    let rhs = dot(&jm.grad) * jv.value + jm.value * dot(&jv.grad) + d.a * jm.value * jv.value;
    Ok((lhs - rhs).abs())
}

/// `max|σ(Δ_{{λ,μ}}) − [𝒳_λ, 𝒳_μ]|(p)`.
pub fn morphism_defect(cd: &ContactData, l: &Field, m: &Field, p: &[f64]) -> Result<f64, ContactError> {
    let lhs = cd.bracket_hamiltonian(l, m, p)?.xi;
    let rhs = cd.contact_field_bracket(l, m, p)?;
    Ok(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Structure invariants of the contact form, non-degeneracy at `10n`
/// points, and transport of a coisotropic graph by a contact flow at `n`
/// points.
pub fn contact_suite(seed: u64, n: usize) -> Result<Vec<CheckReport>, VerifyError> {
    let cd = contact::standard_contact()?;
    let shape = cd.shape();
    let mut out = Vec::new();

    let dw = der::d_d(cd.varpi())?.max_abs_coeff();
    out.push(CheckReport::new("contact.d_d_varpi_zero", dw, 0.0, 1, seed));
    let c = der::contract(&Derivation::identity(shape), cd.varpi())?;
    let dev = c.alpha().max_deviation(cd.theta()).max(c.beta().max_abs_coeff());
    out.push(CheckReport::new("contact.iota_one_varpi_is_theta", dev, 0.0, 1, seed));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_6e74_6163_74);
    let samples = 10 * n;
    let mut min_det = f64::INFINITY;
    for _ in 0..samples {
        let p = random::point(&mut rng, shape, 2.0);
        min_det = min_det.min(cd.omega_flat_matrix(&p)?.determinant().abs());
    }
    out.push(CheckReport::verdict("contact.nondegenerate_min_abs_det", min_det, min_det > NONDEGENERACY_TOL, samples, seed));

    let s_shape = coisotropy::section_shape(2);
    let phi = random::field_on_axes(&mut rng, s_shape, FieldSpec { max_fiber_deg: 0, amplitude: 0.3, ..Default::default() }, &[0, 1, 2, 3]);
    let section = Section::new(phi, Field::zero(s_shape))?;
    let lambda = random::field(&mut rng, shape, FieldSpec { amplitude: 0.5, ..Default::default() });
    let res = coisotropy::transported_residuals(&cd, &section, &lambda, TRANSPORT_TIME, contact::DEFAULT_FLOW_STEP, n, rng.gen())?;
    let worst = res.iter().copied().fold(0.0, f64::max);
    out.push(CheckReport::new("contact.flow_preserves_coisotropy", worst, TRANSPORT_TOL, n, seed));
    Ok(out)
}
