//! Seeded generators for random fields, derivations and forms.

use std::f64::consts::PI;

use rand::Rng;

use crate::der::{index_sets, AtiyahForm, Derivation, Form};
use crate::field::{Field, Shape, VectorField};

/// Limits on the random trigonometric-polynomial fields.
#[derive(Clone, Copy, Debug)]
pub struct FieldSpec {
    pub terms: usize,
    pub max_freq: i32,
    pub max_fiber_deg: u32,
    pub amplitude: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec { terms: 2, max_freq: 1, max_fiber_deg: 1, amplitude: 1.0 }
    }
}

/// Uniform torus coordinates in `[0, 2π)`, fiber coordinates in `[−r, r]`.
pub fn point<R: Rng>(rng: &mut R, shape: Shape, fiber_radius: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..shape.torus_dim).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    p.extend((0..shape.fiber_dim).map(|_| rng.gen_range(-fiber_radius..=fiber_radius)));
    p
}

/// Sum of `spec.terms` random terms `(a cos k·x + b sin k·x) y^m`.
pub fn field<R: Rng>(rng: &mut R, shape: Shape, spec: FieldSpec) -> Field {
    field_on_axes(rng, shape, spec, &(0..shape.torus_dim).collect::<Vec<_>>())
}

/// Like [`field`], with frequencies supported on the listed torus axes only.
pub fn field_on_axes<R: Rng>(rng: &mut R, shape: Shape, spec: FieldSpec, axes: &[usize]) -> Field {
    let mut out = Field::zero(shape);
    for _ in 0..spec.terms {
        let mut k = vec![0; shape.torus_dim];
        for &a in axes {
            k[a] = rng.gen_range(-spec.max_freq..=spec.max_freq);
        }
        let mut m = vec![0u32; shape.fiber_dim];
        let mut budget = rng.gen_range(0..=spec.max_fiber_deg);
        while budget > 0 && shape.fiber_dim > 0 {
            m[rng.gen_range(0..shape.fiber_dim)] += 1;
            budget -= 1;
        }
        let a = rng.gen_range(-spec.amplitude..=spec.amplitude);
        let b = rng.gen_range(-spec.amplitude..=spec.amplitude);
        out = out + Field::trig(shape, &k, &m, a, b);
    }
    out
}

pub fn vector_field<R: Rng>(rng: &mut R, shape: Shape, spec: FieldSpec) -> VectorField {
    VectorField::new((0..shape.dim()).map(|_| field(rng, shape, spec)).collect()).expect("component count")
}

pub fn derivation<R: Rng>(rng: &mut R, shape: Shape, spec: FieldSpec) -> Derivation {
    Derivation::new(vector_field(rng, shape, spec), field(rng, shape, spec)).expect("same base")
}

/// Derivation whose symbol components and scalar part are each non-zero with
/// probability `density`.
pub fn sparse_derivation<R: Rng>(rng: &mut R, shape: Shape, spec: FieldSpec, density: f64) -> Derivation {
    let pick = |rng: &mut R| if rng.gen_bool(density) { field(rng, shape, spec) } else { Field::zero(shape) };
    let comps = (0..shape.dim()).map(|_| pick(rng)).collect();
    let scalar = pick(rng);
    Derivation::new(VectorField::new(comps).expect("component count"), scalar).expect("same base")
}

/// Random `degree`-form; each component is non-zero with probability `density`.
pub fn form<R: Rng>(rng: &mut R, shape: Shape, degree: usize, spec: FieldSpec, density: f64) -> Form {
    let mut entries: Vec<(Vec<usize>, Field)> = Vec::new();
    for idx in index_sets(shape.dim(), degree) {
        if rng.gen_bool(density) {
            entries.push((idx, field(rng, shape, spec)));
        }
    }
    Form::from_components(shape, degree, entries).expect("valid index sets")
}

pub fn atiyah_form<R: Rng>(rng: &mut R, shape: Shape, degree: usize, spec: FieldSpec, density: f64) -> AtiyahForm {
    let alpha = form(rng, shape, degree, spec, density);
    let beta = (degree > 0).then(|| form(rng, shape, degree - 1, spec, density));
    AtiyahForm::new(alpha, beta).expect("consistent degrees")
}
