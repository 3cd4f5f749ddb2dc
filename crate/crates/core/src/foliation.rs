//! Characteristic foliation of a coisotropic graph: spanning frame,
//! involutivity, leaf tracing and leaf classification.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coisotropy::Section;
use crate::field::{Field, FieldError, TruncationLoss, VectorField};
use crate::ode::{self, OdeError, DEFAULT_STEP_TOL};

pub const DEFAULT_LEAF_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_DENOMINATOR: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum LeafError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Trace(#[from] OdeError<FieldError>),
    #[error("slope must be finite, got {0}")]
    NonFinite(f64),
    #[error("invalid leaf option: {0}")]
    Options(String),
}

/// `V1 = X(f)∂₁ − f₁X + ∂₄ − fY`, `V2 = X(g)∂₁ − g₁X + ∂₅ − gY`.
#[derive(Clone, Debug, PartialEq)]
pub struct CharFrame {
    pub v1: VectorField,
    pub v2: VectorField,
}

fn frame_vector(h: &Field, unit_axis: usize) -> VectorField {
    let shape = h.shape();
    let c1 = Field::cos_axis(shape, 0, 1);
    let s1 = Field::sin_axis(shape, 0, 1);
    let d = |a: usize| h.partial(a).expect("torus axis");
    let (h1, h2, h3) = (d(0), d(1), d(2));
    // X(h) = cos x₁h₂ − sin x₁h₃; −h₁X − hY has ∂₂ part −h₁cos x₁ − h sin x₁
    // and ∂₃ part h₁ sin x₁ − h cos x₁.
    let comps = vec![
        &c1 * &h2 - &s1 * &h3,
        -(&h1 * &c1) - h * &s1,
        &h1 * &s1 - h * &c1,
        Field::constant(shape, if unit_axis == 3 { 1.0 } else { 0.0 }),
        Field::constant(shape, if unit_axis == 4 { 1.0 } else { 0.0 }),
    ];
    VectorField::new(comps).expect("five components")
}

/// The frame is assembled one truncation order above the section, which
/// holds every product exactly.
pub fn characteristic_frame(s: &Section) -> CharFrame {
    let shape = s.shape().with_trunc_order(s.shape().trunc_order + 1);
    let mut loss = TruncationLoss::new();
    let wide = s.reshaped(shape, &mut loss).expect("same base");
    CharFrame { v1: frame_vector(&wide.f, 3), v2: frame_vector(&wide.g, 4) }
}

impl CharFrame {
    /// Whether every component is constant.
    pub fn is_constant(&self) -> bool {
        self.v1.components().iter().chain(self.v2.components()).all(Field::is_constant)
    }

    /// Constant components, if the frame is constant.
    pub fn constant_components(&self) -> Option<([f64; 5], [f64; 5])> {
        if !self.is_constant() {
            return None;
        }
        let read = |v: &VectorField| std::array::from_fn(|i| v.component(i).mean());
        Some((read(&self.v1), read(&self.v2)))
    }
}

/// Distance from `[V1, V2](p)` to `span{V1(p), V2(p)}` (least squares).
pub fn involutivity_defect(frame: &CharFrame, p: &[f64]) -> Result<f64, LeafError> {
    let n = frame.v1.shape().trunc_order.max(frame.v2.shape().trunc_order);
    let wide = |v: &VectorField| -> Result<VectorField, FieldError> {
        let mut loss = TruncationLoss::new();
        let comps = v.components().iter().map(|c| c.reshaped(c.shape().with_trunc_order(2 * n), &mut loss)).collect::<Result<Vec<_>, _>>()?;
        VectorField::new(comps)
    };
    let bracket = wide(&frame.v1)?.bracket(&wide(&frame.v2)?)?.evaluate(p)?;
    let a = frame.v1.evaluate(p)?;
    let b = frame.v2.evaluate(p)?;
    let m = DMatrix::from_fn(5, 2, |i, j| if j == 0 { a[i] } else { b[i] });
    let rhs = DVector::from_vec(bracket);
    let svd = m.clone().svd(true, true);
    let c = svd.solve(&rhs, 1e-14).map_err(|e| FieldError::Shape(e.to_string()))?;
    Ok((rhs - m * c).norm())
}

/// A traced path inside a leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafTrace {
    /// Wrapped into `[0, 2π)⁵`.
    pub points: Vec<Vec<f64>>,
    /// Unwrapped lift to `ℝ⁵`.
    pub lifted: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub steps: usize,
    pub h: f64,
    pub start: Vec<f64>,
    pub direction: (f64, f64),
}

impl LeafTrace {
    pub fn end_lifted(&self) -> &[f64] {
        self.lifted.last().expect("trace holds the start point")
    }

    pub fn end_wrapped(&self) -> &[f64] {
        self.points.last().expect("trace holds the start point")
    }

    /// CSV with columns `step,x1..x5,u1..u5`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,x1,x2,x3,x4,x5,u1,u2,u3,u4,u5\n");
        for (i, (w, l)) in self.points.iter().zip(&self.lifted).enumerate() {
            out.push_str(&i.to_string());
            for v in w.iter().chain(l) {
                out.push(',');
                out.push_str(&format!("{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Integrates `c₁V1 + c₂V2` from `start` for time `duration` with RK4 step `h`.
pub fn trace_leaf(frame: &CharFrame, start: &[f64], duration: f64, h: f64, direction: (f64, f64)) -> Result<LeafTrace, LeafError> {
    if start.len() != 5 {
        return Err(FieldError::Shape(format!("leaf start needs 5 coordinates, got {}", start.len())).into());
    }
    let (c1, c2) = direction;
    let rhs = |p: &[f64]| -> Result<Vec<f64>, FieldError> {
        let a = frame.v1.evaluate(p)?;
        let b = frame.v2.evaluate(p)?;
        Ok(a.iter().zip(&b).map(|(x, y)| c1 * x + c2 * y).collect())
    };
    let path = ode::integrate(rhs, start, duration, h, DEFAULT_STEP_TOL)?;
    let points = path.states.iter().map(|s| ode::wrap(s, 5)).collect();
    Ok(LeafTrace {
        points,
        steps: path.states.len() - 1,
        lifted: path.states,
        times: path.times,
        h,
        start: start.to_vec(),
        direction,
    })
}

/// Distance on `T⁵` between two points given by representatives.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeafOptions {
    pub tol: f64,
    pub max_denominator: u64,
}

impl Default for LeafOptions {
    fn default() -> Self {
        LeafOptions { tol: DEFAULT_LEAF_TOL, max_denominator: DEFAULT_MAX_DENOMINATOR }
    }
}

impl LeafOptions {
    fn validate(&self) -> Result<(), LeafError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) || self.max_denominator == 0 {
            return Err(LeafError::Options(format!("need tol > 0 and max_denominator >= 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafVerdict {
    Torus2 { periods: (f64, f64) },
    Cylinder,
    Plane,
    Unknown,
}

/// One continued-fraction convergent `p/q` and the lifted closing
/// displacement `2π|q·t − p|` it produces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergent {
    pub p: i64,
    pub q: u64,
    pub displacement: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeafEvidence {
    pub slopes: Vec<f64>,
    pub convergents: Vec<Vec<Convergent>>,
    pub closing_denominator: Option<u64>,
    pub tol: f64,
    pub max_denominator: u64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafClass {
    pub verdict: LeafVerdict,
    pub evidence: LeafEvidence,
}

/// Convergents of `t` with denominators up to `max_den`.
pub fn convergents(t: f64, max_den: u64) -> Vec<Convergent> {
    let mut out = Vec::new();
    let (mut p0, mut q0, mut p1, mut q1) = (1i128, 0i128, t.floor() as i128, 1i128);
    let mut x = t - t.floor();
    loop {
        let p = p1 as i64;
        let q = q1 as u64;
        out.push(Convergent { p, q, displacement: 2.0 * PI * (q as f64 * t - p as f64).abs() });
        if x < 1e-300 {
            break;
        }
        let inv = 1.0 / x;
        let a = inv.floor();
        if !a.is_finite() || a > 1e18 {
            break;
        }
        let a = a as i128;
        let (p2, q2) = (a * p1 + p0, a * q1 + q0);
        if q2 > max_den as i128 {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        x = inv - inv.floor();
    }
    out
}

/// Smallest convergent denominator whose closing displacement is below `tol`.
fn closing(t: f64, opts: &LeafOptions) -> (Vec<Convergent>, Option<u64>) {
    let cs = convergents(t, opts.max_denominator);
    let q = cs.iter().find(|c| c.displacement < opts.tol).map(|c| c.q);
    (cs, q)
}

/// Leaves of the family `span{∂₄ − t∂₂, ∂₅}`: the `V1` flow closes after
/// `x₄` advances by `2πq` iff `q·t` is an integer (to `tol`, with `q`
/// bounded by `max_denominator`); the `∂₅` circle always closes.
pub fn classify_leaf_linear(t: f64, opts: &LeafOptions) -> Result<LeafClass, LeafError> {
    if !t.is_finite() {
        return Err(LeafError::NonFinite(t));
    }
    opts.validate()?;
    let (cs, q) = closing(t, opts);
    let verdict = match q {
        Some(q) => LeafVerdict::Torus2 { periods: (2.0 * PI * q as f64, 2.0 * PI) },
        None => LeafVerdict::Cylinder,
    };
    Ok(LeafClass {
        verdict,
        evidence: LeafEvidence {
            slopes: vec![t],
            convergents: vec![cs],
            closing_denominator: q,
            tol: opts.tol,
            max_denominator: opts.max_denominator,
            note: None,
        },
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Classifies the leaves of a section's characteristic foliation. Constant
/// frames with `V2 = ∂₅` are linear foliations and are decided exactly as in
/// [`classify_leaf_linear`], using the simultaneous closing denominator of
/// the `x₁, x₂, x₃` slopes of `V1`. Other sections get `Unknown` with a
/// traced `V1` path as evidence.
pub fn classify_section(s: &Section, opts: &LeafOptions, trace_time: f64, h: f64) -> Result<(LeafClass, LeafTrace), LeafError> {
    opts.validate()?;
    let frame = characteristic_frame(s);
    let trace = trace_leaf(&frame, &[0.0; 5], trace_time, h, (1.0, 0.0))?;
    let linear = frame.constant_components().filter(|(_, v2)| *v2 == [0.0, 0.0, 0.0, 0.0, 1.0]);
    let Some((v1, _)) = linear else {
        let class = LeafClass {
            verdict: LeafVerdict::Unknown,
            evidence: LeafEvidence {
                tol: opts.tol,
                max_denominator: opts.max_denominator,
                note: Some(format!(
                    "non-linear frame; V1 path from the origin ends at torus distance {:.3e} from its start",
                    torus_distance(trace.end_lifted(), &trace.start)
                )),
                ..Default::default()
            },
        };
        return Ok((class, trace));
    };
    let slopes = v1[..3].to_vec();
    let mut all = Vec::new();
    let mut lcm: Option<u64> = Some(1);
    for &t in &slopes {
        let (cs, q) = closing(t, opts);
        all.push(cs);
        lcm = match (lcm, q) {
            (Some(l), Some(q)) => {
                let m = l / gcd(l, q) * q;
                (m <= opts.max_denominator).then_some(m)
            }
            _ => None,
        };
    }
    // The joint denominator must close all slopes at once.
    let lcm = lcm.filter(|&q| slopes.iter().all(|t| 2.0 * PI * (q as f64 * t - (q as f64 * t).round()).abs() < opts.tol));
    let verdict = match lcm {
        Some(q) => LeafVerdict::Torus2 { periods: (2.0 * PI * q as f64, 2.0 * PI) },
        None => LeafVerdict::Cylinder,
    };
    let class = LeafClass {
        verdict,
        evidence: LeafEvidence {
            slopes,
            convergents: all,
            closing_denominator: lcm,
            tol: opts.tol,
            max_denominator: opts.max_denominator,
            note: None,
        },
    };
    Ok((class, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub t: f64,
    pub class: LeafClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralityScan {
    pub entries: Vec<ScanEntry>,
    /// `Some(true)` when `t = 0` was scanned and its leaves are tori.
    pub zero_is_integral: Option<bool>,
    /// Smallest `|t| > 0` among scanned values with non-compact leaves.
    pub nearest_cylinder_to_zero: Option<f64>,
    /// Integral at `t = 0` with non-compact leaves at some scanned `t ≠ 0`.
    pub instability_witnessed: bool,
}

pub fn integrality_scan(ts: &[f64], opts: &LeafOptions) -> Result<IntegralityScan, LeafError> {
    let entries = ts.iter().map(|&t| Ok(ScanEntry { t, class: classify_leaf_linear(t, opts)? })).collect::<Result<Vec<_>, LeafError>>()?;
    let zero_is_integral = entries.iter().find(|e| e.t == 0.0).map(|e| matches!(e.class.verdict, LeafVerdict::Torus2 { .. }));
    let nearest_cylinder_to_zero = entries
        .iter()
        .filter(|e| e.t != 0.0 && e.class.verdict == LeafVerdict::Cylinder)
        .map(|e| e.t.abs())
        .min_by(f64::total_cmp);
    Ok(IntegralityScan {
        instability_witnessed: zero_is_integral == Some(true) && nearest_cylinder_to_zero.is_some(),
        entries,
        zero_is_integral,
        nearest_cylinder_to_zero,
    })
}
