//! Discrete convex conjugates by brute-force maximisation.

use crate::error::{Error, Result};
use crate::grid::{Axis, GridFunction};
use crate::par;

/// Result of a discrete Legendre transform.
#[derive(Clone, Debug)]
pub struct Conjugate {
    /// `g(ξ) = max_p (ξ·p − f(p))` on the slope grid.
    pub values: GridFunction,
    /// Flat index of the maximising node of the input grid, per slope node.
    pub argmax: Vec<usize>,
    /// True where the maximiser sits on the boundary of a box axis.
    pub saturated: Vec<bool>,
}

impl Conjugate {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }

    /// Saturation restricted to slopes whose nodes are not on the slope-grid edge.
    pub fn interior_saturated(&self) -> bool {
        self.saturated
            .iter()
            .enumerate()
            .any(|(k, &s)| s && !self.values.is_boundary(k))
    }
}

/// Maximum of `ξ·p − f(p)` over the nodes of `f`, with the maximising node.
pub fn conjugate_at(f: &GridFunction, xi: &[f64]) -> (f64, usize) {
    let d = f.dim();
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    let mut p = vec![0.0; d];
    for (j, &fj) in f.values().iter().enumerate() {
        let idx = f.multi_index(j);
        for a in 0..d {
            p[a] = f.axes()[a].point(idx[a]);
        }
        let v = xi.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() - fj;
        if v > best {
            best = v;
            arg = j;
        }
    }
    (best, arg)
}

/// Discrete convex conjugate of `f` sampled on the slope axes.
pub fn legendre(f: &GridFunction, slopes: &[Axis]) -> Result<Conjugate> {
    if slopes.len() != f.dim() {
        return Err(Error::InvalidInput(format!(
            "slope grid has dimension {} but function has {}",
            slopes.len(),
            f.dim()
        )));
    }
    if f.axes().iter().chain(slopes).any(|a| a.periodic) {
        return Err(Error::InvalidInput(
            "Legendre transform needs box axes".into(),
        ));
    }
    let shape = GridFunction::from_fn(slopes.to_vec(), |_| 0.0)?;
    let results = par::map_range(shape.len(), |k| conjugate_at(f, &shape.point(k)));
    let argmax: Vec<usize> = results.iter().map(|r| r.1).collect();
    let saturated = argmax.iter().map(|&j| f.is_boundary(j)).collect();
    let values = GridFunction::new(slopes.to_vec(), results.iter().map(|r| r.0).collect())?;
    Ok(Conjugate {
        values,
        argmax,
        saturated,
    })
}

/// Sup-norm tolerance for `f** = f` at interior nodes of a convex `f`
/// whose discrete curvature exceeds `h_ξ / h_p`.
pub fn involution_tolerance(f_axis: &Axis, slope_axis: &Axis) -> f64 {
    2.0 * f_axis.step * slope_axis.step
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_self_dual() {
        let f = GridFunction::from_fn(vec![Axis::uniform(-5.0, 5.0, 1001).unwrap()], |p| {
            0.5 * p[0] * p[0]
        })
        .unwrap();
        let g = legendre(&f, &[Axis::uniform(-2.0, 2.0, 81).unwrap()]).unwrap();
        assert!(!g.any_saturated());
        for (k, &v) in g.values.values().iter().enumerate() {
            let xi = g.values.point(k)[0];
            assert!((v - 0.5 * xi * xi).abs() <= 0.5 * 0.01 * 0.01 + 1e-12);
        }
    }

    #[test]
    fn saturation_is_flagged() {
        let f = GridFunction::from_fn(vec![Axis::uniform(-1.0, 1.0, 21).unwrap()], |p| {
            0.5 * p[0] * p[0]
        })
        .unwrap();
        let g = legendre(&f, &[Axis::uniform(-3.0, 3.0, 7).unwrap()]).unwrap();
        assert!(g.saturated[0] && g.saturated[6] && !g.saturated[3]);
    }
}
