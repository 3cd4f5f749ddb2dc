//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its verdict line, then exits non-zero if any failed.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use coisolab::coisotropy::{self, prolong, ProlongOptions, Section, SolverStatus};
use coisolab::contact;
use coisolab::field::{Field, Shape};
use coisolab::foliation::{self, LeafOptions, LeafVerdict};
use coisolab::random::{self, FieldSpec};
use coisolab::report::CheckReport;
use coisolab::verify;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KURANISHI_TOL: f64 = 1e-10;
const SOLVER_TOL: f64 = 1e-9;
const FLOOR_FACTOR: f64 = 100.0;
/// Residual floor of the obstructed direction at ε = 0.1, N = 8: ε²/√2.
const OBSTRUCTED_FLOOR: f64 = 7.071_067_811_865_475e-3;
const FLOOR_REGRESSION_TOL: f64 = 1e-12;
const CARTAN_TOL: f64 = 1e-9;
const CARTAN_INSTANCES: usize = 50;
const NONDEGENERACY_TOL: f64 = 1e-8;
const NONDEGENERACY_POINTS: usize = 100;
const BRACKET_TOL: f64 = 1e-6;
const BRACKET_TRIPLES: usize = 30;
const LEAF_TOL: f64 = 1e-9;
const LEAF_MAX_DEN: u64 = 1_000_000;
const LEAF_MAX_Q: u64 = 50;
const CLOSURE_TOL: f64 = 1e-8;
const INVOLUTIVITY_TOL: f64 = 1e-8;
const INVOLUTIVITY_POINTS: usize = 50;
const MIN_ORDER: f64 = 1.9;
const ORDER_EPS: [f64; 3] = [1e-2, 1e-3, 1e-4];
const SEED: u64 = 7;

type Outcome = Result<String, String>;

fn sections_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../sections")
}

fn load(name: &str) -> Section {
    let path = sections_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn st(t: f64, n: i32) -> Section {
    let shape = coisotropy::section_shape(n);
    Section::new(Field::sin_axis(shape, 0, 1).scale(t), Field::zero(shape)).unwrap()
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn all_pass(checks: &[CheckReport]) -> Outcome {
    let worst = checks.iter().map(|c| c.max_defect).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.check.as_str()).collect();
    ensure(failed.is_empty(), format!("{} checks, largest defect {worst:.3e}, failed {failed:?}", checks.len()))
}

fn kuranishi_reproduction() -> Outcome {
    let s = load("obstructed.json");
    let k = coisotropy::kuranishi(&s).map_err(|e| e.to_string())?;
    let base = Shape::new(3, 0, k.shape().trunc_order, 0);
    let dev = k.max_deviation(&Field::sin_axis(base, 0, 1).scale(4.0 * PI * PI));
    ensure(dev < KURANISHI_TOL, format!("max deviation from (2π)² sin x1 = {dev:.3e}"))
}

fn exact_family() -> Outcome {
    for t in [-1.0, 0.3, 2.0] {
        let r = coisotropy::residual(&st(t, coisolab::field::DEFAULT_TRUNC_ORDER));
        if !r.is_zero() {
            return Err(format!("t = {t}: residual has {} nonzero modes", r.len()));
        }
    }
    let bundled = coisotropy::residual(&load("st_sin.json"));
    ensure(bundled.is_zero(), "residual is the zero field for t in {-1, 0.3, 2} and the bundled section".into())
}

fn obstructedness() -> Outcome {
    let opts = ProlongOptions { tol: SOLVER_TOL, trunc_order: 8, ..Default::default() };
    let rep = prolong(&load("obstructed.json"), 0.1, &opts).map_err(|e| e.to_string())?;
    let floor = rep.final_residual_norm();
    let msg = format!("status {:?} after {} iterations, floor {floor:.10e}", rep.status, rep.iterations);
    ensure(
        rep.status == SolverStatus::Obstructed
            && floor > FLOOR_FACTOR * SOLVER_TOL
            && (floor - OBSTRUCTED_FLOOR).abs() < FLOOR_REGRESSION_TOL,
        msg,
    )
}

fn unobstructed_control() -> Outcome {
    let shape = coisotropy::section_shape(coisolab::field::DEFAULT_TRUNC_ORDER);
    let dirs = [
        ("(1, 0)", Section::new(Field::constant(shape, 1.0), Field::zero(shape)).unwrap()),
        ("(sin x1, 0)", st(1.0, coisolab::field::DEFAULT_TRUNC_ORDER)),
    ];
    let mut parts = Vec::new();
    for (name, d) in dirs {
        let rep = prolong(&d, 0.1, &ProlongOptions { tol: SOLVER_TOL, ..Default::default() }).map_err(|e| e.to_string())?;
        let r = rep.final_residual_norm();
        if rep.status != SolverStatus::Converged || r >= SOLVER_TOL {
            return Err(format!("{name}: status {:?}, residual {r:.3e}", rep.status));
        }
        parts.push(format!("{name} residual {r:.1e}"));
    }
    Ok(format!("converged: {}", parts.join(", ")))
}

fn cartan() -> Outcome {
    let checks = verify::cartan_suite(SEED, CARTAN_INSTANCES, CARTAN_TOL).map_err(|e| e.to_string())?;
    all_pass(&checks)
}

fn contact_suite() -> Outcome {
    let mut checks = verify::contact_suite(SEED, NONDEGENERACY_POINTS / 10).map_err(|e| e.to_string())?;
    checks.extend(verify::jacobi_suite(SEED, BRACKET_TRIPLES).map_err(|e| e.to_string())?);
    let by = |name: &str| checks.iter().find(|c| c.check == name).cloned().unwrap();
    let dw = by("contact.d_d_varpi_zero");
    let det = by("contact.nondegenerate_min_abs_det");
    let jac = by("jacobi.bracket_jacobi_identity");
    let morph = by("jacobi.lie_morphism");
    let ok = dw.max_defect == 0.0
        && det.samples == NONDEGENERACY_POINTS
        && det.max_defect > NONDEGENERACY_TOL
        && jac.samples == BRACKET_TRIPLES
        && jac.max_defect < BRACKET_TOL
        && morph.max_defect < BRACKET_TOL
        && checks.iter().all(|c| c.pass);
    ensure(
        ok,
        format!(
            "d_D varpi {:.1e}, min |det| {:.3} over {} points, jacobi {:.2e}, morphism {:.2e}",
            dw.max_defect, det.max_defect, det.samples, jac.max_defect, morph.max_defect
        ),
    )
}

fn reduction() -> Outcome {
    let checks = contact::verify_reduction(SEED).map_err(|e| e.to_string())?;
    let pull = checks.iter().find(|c| c.check == "reduction.varpi_pullback").unwrap();
    let basic = checks.iter().find(|c| c.check == "reduction.varpi_basic").unwrap();
    ensure(
        pull.max_defect == 0.0 && basic.pass && checks.iter().all(|c| c.pass),
        format!("pullback defect {:.1e}, basic {}", pull.max_defect, basic.pass),
    )
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn leaf_dichotomy() -> Outcome {
    let opts = LeafOptions { tol: LEAF_TOL, max_denominator: LEAF_MAX_DEN };
    let mut count = 0;
    for q in 1..=LEAF_MAX_Q {
        for p in -(q as i64)..=2 * q as i64 {
            if gcd(p.unsigned_abs(), q) != 1 {
                continue;
            }
            let t = p as f64 / q as f64;
            let c = foliation::classify_leaf_linear(t, &opts).map_err(|e| e.to_string())?;
            match c.verdict {
                LeafVerdict::Torus2 { periods } if (periods.0 - 2.0 * PI * q as f64).abs() < 1e-9 * q as f64 => count += 1,
                v => return Err(format!("{p}/{q}: {v:?}")),
            }
        }
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    for (name, t) in [("sqrt 2", 2f64.sqrt()), ("pi/4", PI / 4.0), ("golden ratio", golden)] {
        let c = foliation::classify_leaf_linear(t, &opts).map_err(|e| e.to_string())?;
        if c.verdict != LeafVerdict::Cylinder {
            return Err(format!("{name}: {:?}", c.verdict));
        }
    }
    let frame = foliation::characteristic_frame(&st(0.5, 4));
    let start = [0.0; 5];
    let tr = foliation::trace_leaf(&frame, &start, 4.0 * PI, 1e-2, (1.0, 0.0)).map_err(|e| e.to_string())?;
    let gap = foliation::torus_distance(tr.end_wrapped(), &start);
    ensure(gap < CLOSURE_TOL, format!("{count} rationals give tori, 3 irrationals give cylinders, t = 1/2 closes within {gap:.1e}"))
}

fn frobenius() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let shape = coisotropy::section_shape(3);
    let spec = FieldSpec { terms: 3, max_freq: 2, max_fiber_deg: 0, amplitude: 1.0 };
    let sections = [
        ("s_t", st(0.8, 3)),
        (
            "(phi(x1), psi(x1))",
            Section::new(random::field_on_axes(&mut rng, shape, spec, &[0]), random::field_on_axes(&mut rng, shape, spec, &[0])).unwrap(),
        ),
        ("(f(x1..x4), 0)", Section::new(random::field_on_axes(&mut rng, shape, spec, &[0, 1, 2, 3]), Field::zero(shape)).unwrap()),
    ];
    let mut worst = 0.0f64;
    for (name, s) in &sections {
        if !coisotropy::residual(s).is_zero() {
            return Err(format!("{name} is not exactly coisotropic"));
        }
        let frame = foliation::characteristic_frame(s);
        for _ in 0..INVOLUTIVITY_POINTS {
            let p = random::point(&mut rng, shape, 0.0);
            worst = worst.max(foliation::involutivity_defect(&frame, &p).map_err(|e| e.to_string())?);
        }
    }
    if worst >= INVOLUTIVITY_TOL {
        return Err(format!("involutivity defect {worst:.3e}"));
    }

    let s = Section::new(
        Field::sin_axis(shape, 3, 1) + Field::cos_axis(shape, 1, 2).scale(0.5),
        Field::cos_axis(shape, 3, 1) + Field::sin_axis(shape, 4, 2),
    )
    .unwrap();
    let lin = coisotropy::linearized_residual(&s).with_trunc_order(2 * 3 + 1);
    let errs: Vec<f64> =
        ORDER_EPS.iter().map(|&e| (coisotropy::residual_exact(&s.scale(e)) + lin.scale(e)).coeff_norm()).collect();
    let order = errs
        .windows(2)
        .zip(ORDER_EPS.windows(2))
        .map(|(r, e)| (r[0] / r[1]).ln() / (e[0] / e[1]).ln())
        .fold(f64::INFINITY, f64::min);
    ensure(order >= MIN_ORDER, format!("involutivity defect {worst:.2e}, observed order {order:.4}"))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("kuranishi reproduction", Duration::from_secs(1), kuranishi_reproduction),
        ("exact family", Duration::from_secs(1), exact_family),
        ("obstructedness probe", Duration::from_secs(60), obstructedness),
        ("unobstructed control", Duration::from_secs(10), unobstructed_control),
        ("cartan suite", Duration::from_secs(30), cartan),
        ("contact suite", Duration::from_secs(60), contact_suite),
        ("reduction", Duration::from_secs(1), reduction),
        ("leaf dichotomy", Duration::from_secs(30), leaf_dichotomy),
        ("frobenius link", Duration::from_secs(30), frobenius),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(d) => (false, d),
        };
        if !pass {
            failures += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {} {name}: {verdict} ({:.2}s / {}s) {detail}", i + 1, took.as_secs_f64(), budget.as_secs());
    }
    println!("acceptance: {}/{} passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
