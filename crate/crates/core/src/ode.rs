//! Fixed-step RK4 with a step-doubling error monitor, on `Tⁿ × ℝᵏ`.

use std::f64::consts::TAU;

use thiserror::Error;

/// Default local error bound for the step-doubling monitor.
pub const DEFAULT_STEP_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError<E> {
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("duration must be finite, got {0}")]
    InvalidDuration(f64),
    #[error("step rejected at t = {t}: local error estimate {estimate:e} exceeds {tol:e}")]
    StepRejected { t: f64, estimate: f64, tol: f64 },
    #[error("vector field evaluation failed: {0}")]
    Rhs(E),
}

/// Integrated path: times and unwrapped states.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Path {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("paths contain the start point")
    }
}

/// Reduces the first `torus_dim` coordinates to `[0, 2π)`.
pub fn wrap(p: &[f64], torus_dim: usize) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(i, &x)| {
            if i < torus_dim {
                let w = x.rem_euclid(TAU);
                // rem_euclid can round up to exactly 2π
                if w >= TAU { 0.0 } else { w }
            } else {
                x
            }
        })
        .collect()
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn rk4_step<E, F>(rhs: &mut F, y: &[f64], h: f64) -> Result<Vec<f64>, E>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    let k1 = rhs(y)?;
    let k2 = rhs(&axpy(y, h / 2.0, &k1))?;
    let k3 = rhs(&axpy(y, h / 2.0, &k2))?;
    let k4 = rhs(&axpy(y, h, &k3))?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, &v)| v + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrates `ẏ = rhs(y)` from `start` for signed duration `duration` with
/// step magnitude `h`; the final step is shortened to land on `duration`.
/// Every step is compared against two half steps, and the half-step result
/// is kept. Returns the unwrapped path, one entry per step.
pub fn integrate<E, F>(mut rhs: F, start: &[f64], duration: f64, h: f64, tol: f64) -> Result<Path, OdeError<E>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(OdeError::InvalidStep(h));
    }
    if !duration.is_finite() {
        return Err(OdeError::InvalidDuration(duration));
    }
    let steps = (duration.abs() / h).ceil() as usize;
    let mut path = Path { times: vec![0.0], states: vec![start.to_vec()] };
    let mut y = start.to_vec();
    let mut t = 0.0;
    for i in 0..steps {
        let target = if i + 1 == steps { duration } else { duration.signum() * h * (i + 1) as f64 };
        let dt = target - t;
        let full = rk4_step(&mut rhs, &y, dt).map_err(OdeError::Rhs)?;
        let half = rk4_step(&mut rhs, &y, dt / 2.0).map_err(OdeError::Rhs)?;
        let half = rk4_step(&mut rhs, &half, dt / 2.0).map_err(OdeError::Rhs)?;
        let estimate = full.iter().zip(&half).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / 15.0;
        if !(estimate <= tol) {
            return Err(OdeError::StepRejected { t, estimate, tol });
        }
        y = half;
        t = target;
        path.times.push(t);
        path.states.push(y.clone());
    }
    Ok(path)
}
