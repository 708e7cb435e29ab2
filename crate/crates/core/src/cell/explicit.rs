//! Closed-form effective Hamiltonian of the one-dimensional mechanical cell.

use crate::error::{Error, Result};
use crate::model::PeriodicPotential;
use crate::quad;

/// `∫₀¹ f(U(q)) dq`, split at sample nodes for piecewise-linear potentials.
fn cell_integral(u: &PeriodicPotential, tol: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    match u {
        PeriodicPotential::Sampled(g) => {
            let n = g.axes()[0].len;
            let h = 1.0 / n as f64;
            let mut parts = Vec::with_capacity(n);
            for i in 0..n {
                let a = i as f64 * h;
                parts.push(quad::integrate(a, a + h, tol / n as f64, |q| f(u.value(&[q])))?);
            }
            Ok(crate::sum::compensated(parts))
        }
        _ => quad::integrate(0.0, 1.0, tol, |q| f(u.value(&[q]))),
    }
}

/// Minimum of a one-dimensional periodic potential over its cell.
fn minimum(u: &PeriodicPotential) -> f64 {
    match u {
        PeriodicPotential::Zero => 0.0,
        PeriodicPotential::SinSquared { amplitude } => amplitude.min(0.0),
        PeriodicPotential::Sampled(g) => g.min_value(),
    }
}

/// Width of the flat piece: `c_U = ∫₀¹ √(2 U(q)) dq` for `min U = 0`.
pub fn flat_piece_radius(u: &PeriodicPotential) -> Result<f64> {
    validate(u)?;
    let m = minimum(u);
    cell_integral(u, 1e-13, |v| (2.0 * (v - m).max(0.0)).sqrt())
}

fn validate(u: &PeriodicPotential) -> Result<()> {
    if let Some(d) = u.dimension_hint() {
        if d != 1 {
            return Err(Error::InvalidModel(
                "explicit effective Hamiltonian needs a one-dimensional potential".into(),
            ));
        }
    }
    let m = minimum(u);
    if m < 0.0 {
        return Err(Error::InvalidModel(format!(
            "periodic potential must be nonnegative, minimum is {m}"
        )));
    }
    Ok(())
}

/// Effective Hamiltonian of `H(q,p) = ½p² − U(q)` in one dimension.
///
/// With `m = min U`, the potential is shifted to `U − m`; the result is
/// `−m` on the flat piece `|P| ≤ c_U` and `λ − m` beyond it, where
/// `|P| = ∫₀¹ √(2(λ + U(q) − m)) dq`.
pub fn effective_h_1d(u: &PeriodicPotential, p: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) || !p.is_finite() {
        return Err(Error::Parameter(format!(
            "need finite P and tol > 0, got P = {p}, tol = {tol}"
        )));
    }
    validate(u)?;
    let m = minimum(u);
    let target = p.abs();
    let quad_tol = (1e-3 * tol).clamp(1e-15, 1e-12);
    let action = |lambda: f64| cell_integral(u, quad_tol, |v| (2.0 * (lambda + v - m).max(0.0)).sqrt());
    if target <= action(0.0)? {
        return Ok(-m);
    }
    let (mut lo, mut hi) = (0.0f64, 0.5 * target * target);
    const LIMIT: usize = 200;
    for _ in 0..LIMIT {
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi) - m);
        }
        let mid = 0.5 * (lo + hi);
        if action(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::IterationLimit {
        limit: LIMIT,
        context: format!("bisection for the effective Hamiltonian at P = {p}"),
    })
}
