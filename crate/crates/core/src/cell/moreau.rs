//! Inf- and sup-convolutions with quadratic kernels on a grid.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::par;

/// A convolved grid function with the extremising node behind each value.
#[derive(Clone, Debug)]
pub struct Moreau {
    pub values: GridFunction,
    pub arg: Vec<usize>,
    pub eps: f64,
}

/// Smallest `C_w` with `|w(q)| ≤ C_w (1 + |q|²)` at the nodes.
pub fn growth_constant(w: &GridFunction) -> f64 {
    (0..w.len())
        .map(|k| {
            let q2: f64 = w.point(k).iter().map(|x| x * x).sum();
            w.values()[k].abs() / (1.0 + q2)
        })
        .fold(0.0, f64::max)
}

fn admissible(w: &GridFunction, eps: f64) -> Result<()> {
    let cw = growth_constant(w);
    if !(eps > 0.0) || 2.0 * cw * eps >= 1.0 {
        return Err(Error::Parameter(format!(
            "need 0 < eps < 1/(2 C_w) = {}, got {eps}",
            if cw > 0.0 { 0.5 / cw } else { f64::INFINITY }
        )));
    }
    Ok(())
}

fn dist2(w: &GridFunction, a: &[f64], b: &[f64]) -> f64 {
    w.axes()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(axis, (x, y))| {
            let d = axis.displacement(*x, *y);
            d * d
        })
        .sum()
}

fn convolve(w: &GridFunction, kernel: f64, sign: f64) -> Result<(GridFunction, Vec<usize>)> {
    let points: Vec<Vec<f64>> = (0..w.len()).map(|k| w.point(k)).collect();
    let vals = w.values();
    let best = par::map_range(w.len(), |i| {
        // sign = 1: min of w + kernel·|·|²; sign = −1: max of w − kernel·|·|²
        let mut arg = 0;
        let mut v = f64::INFINITY;
        for (j, pj) in points.iter().enumerate() {
            let c = sign * vals[j] + kernel * dist2(w, &points[i], pj);
            if c < v {
                v = c;
                arg = j;
            }
        }
        (sign * v, arg)
    });
    let values = GridFunction::new(w.axes().to_vec(), best.iter().map(|b| b.0).collect())?;
    Ok((values, best.into_iter().map(|b| b.1).collect()))
}

/// `w_ε(q′) = min_{q″} (w(q″) + |q′ − q″|² / (2ε))` over the grid.
pub fn moreau_inf(w: &GridFunction, eps: f64) -> Result<Moreau> {
    admissible(w, eps)?;
    let (values, arg) = convolve(w, 0.5 / eps, 1.0)?;
    Ok(Moreau { values, arg, eps })
}

/// `v_ε(q) = max_{q′} (w_ε(q′) − |q − q′|² / ε)` over the grid.
pub fn moreau_sup(w_eps: &GridFunction, eps: f64) -> Result<Moreau> {
    admissible(w_eps, eps)?;
    let (values, arg) = convolve(w_eps, 1.0 / eps, -1.0)?;
    Ok(Moreau { values, arg, eps })
}

/// Largest violation of `|q′ − q″|² ≤ 2ε (w(q′) − w(q″))` over the argmins.
pub fn argmin_defect(w: &GridFunction, m: &Moreau) -> f64 {
    (0..w.len())
        .map(|i| {
            let j = m.arg[i];
            let lhs = dist2(w, &w.point(i), &w.point(j));
            lhs - 2.0 * m.eps * (w.values()[i] - w.values()[j])
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One-sided difference quotients of a one-dimensional grid function at node
/// `k`; `None` past a box edge.
fn one_sided(w: &GridFunction, k: usize) -> (Option<f64>, Option<f64>) {
    let n = w.len() as isize;
    let h = w.axes()[0].step;
    let v = w.values();
    let periodic = w.axes()[0].periodic;
    let at = |i: isize| -> Option<f64> {
        if periodic {
            Some(v[i.rem_euclid(n) as usize])
        } else if i < 0 || i >= n {
            None
        } else {
            Some(v[i as usize])
        }
    };
    let k = k as isize;
    let vk = v[k as usize];
    (at(k - 1).map(|a| (vk - a) / h), at(k + 1).map(|b| (b - vk) / h))
}

fn node_gap(w: &GridFunction, i: usize, j: usize) -> f64 {
    w.axes()[0].displacement(w.point(i)[0], w.point(j)[0])
}

/// Largest violation of `(q′ − q″)/ε ∈ D⁻w(q″)` at the argmins of a
/// one-dimensional `w_ε`, with `D⁻w` read off the one-sided differences.
/// A grid minimiser keeps the slope within `h/(2ε)` of that interval.
pub fn subgradient_defect(w: &GridFunction, w_eps: &Moreau) -> f64 {
    let h = w.axes()[0].step;
    let slack = h / (2.0 * w_eps.eps);
    (0..w.len())
        .map(|i| {
            let j = w_eps.arg[i];
            let p = node_gap(w, j, i) / w_eps.eps;
            let (left, right) = one_sided(w, j);
            let lo = left.map_or(0.0, |l| l - slack - p);
            let hi = right.map_or(0.0, |r| p - r - slack);
            lo.max(hi).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Largest excess of the finite-difference `|∇v_ε(q)|` over `4|q − q̃|/ε`,
/// where `q̃` is the argmin of `w_ε(q)`, in one dimension.
///
/// The bound holds for the subgradient `(q − q̃)/ε ∈ D⁻w(q̃)` and not for
/// the smallest element of `D⁻w(q̃)`: for `w = |q|` and `|q| < ε` the
/// argmin is `0`, where `D⁻w` contains `0`, yet `∇v_ε(q) = 2q/ε`.
pub fn gradient_bound_excess(w: &GridFunction, w_eps: &Moreau, v_eps: &Moreau) -> f64 {
    let n = w.len();
    let h = w.axes()[0].step;
    let v = v_eps.values.values();
    let mut worst = f64::NEG_INFINITY;
    for i in 1..n.saturating_sub(1) {
        let grad = (v[i + 1] - v[i - 1]).abs() / (2.0 * h);
        let p = node_gap(w, w_eps.arg[i], i).abs() / w_eps.eps;
        worst = worst.max(grad - 4.0 * p);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    #[test]
    fn huber_envelope() {
        let axis = Axis::uniform(-3.0, 3.0, 601).unwrap();
        let w = GridFunction::from_fn(vec![axis], |q| q[0].abs()).unwrap();
        let m = moreau_inf(&w, 0.5).unwrap();
        for k in 0..w.len() {
            let q = w.point(k)[0];
            let huber = if q.abs() <= 0.5 { q * q } else { q.abs() - 0.25 };
            assert!((m.values.values()[k] - huber).abs() < 1e-9);
        }
        assert!(argmin_defect(&w, &m) <= 1e-12);
    }

    #[test]
    fn constants_are_fixed() {
        let w = GridFunction::from_fn(vec![Axis::uniform(-1.0, 1.0, 41).unwrap()], |_| 0.3).unwrap();
        let a = moreau_inf(&w, 0.2).unwrap();
        let b = moreau_sup(&a.values, 0.2).unwrap();
        assert!(a.values.values().iter().chain(b.values.values()).all(|&v| v == 0.3));
    }

    #[test]
    fn eps_range_is_checked() {
        let w = GridFunction::from_fn(vec![Axis::uniform(-2.0, 2.0, 41).unwrap()], |q| q[0] * q[0]).unwrap();
        assert!(matches!(moreau_inf(&w, 0.7), Err(Error::Parameter(_))));
        assert!(matches!(moreau_inf(&w, 0.0), Err(Error::Parameter(_))));
        assert!(moreau_inf(&w, 0.4).is_ok());
    }
}
