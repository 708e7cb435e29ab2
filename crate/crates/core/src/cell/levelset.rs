//! One-dimensional cell brackets by level-set linear programming.
//!
//! For a level `t`, `H(q, p) ≤ t` is an interval of momenta at every `q`
//! (H is convex in p), so "some corrector keeps `max_q H ≤ t`" and, once a
//! sign is fixed on each connected region where the interval is nonempty,
//! "some corrector keeps `min_q H ≥ t`" are linear feasibility problems in
//! the corrector coefficients. Bisection on `t` then gives both bounds.

use crate::error::Result;
use crate::model::{Hamiltonian, MicroModel};
use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

/// `{p : H(q, p) ≤ t} = [lo, hi]`; `*_edge` marks an end cut by the table range.
#[derive(Clone, Copy, Debug)]
pub(super) struct Sublevel {
    lo: f64,
    hi: f64,
    lo_edge: bool,
    hi_edge: bool,
}

pub(super) fn sublevel(model: &MicroModel, q: f64, t: f64) -> Result<Option<Sublevel>> {
    match &model.hamiltonian {
        Hamiltonian::Quadratic(u) => {
            let r2 = 2.0 * (t + u.value(&[q]));
            if r2 < 0.0 {
                return Ok(None);
            }
            let r = r2.sqrt();
            Ok(Some(Sublevel {
                lo: -r,
                hi: r,
                lo_edge: false,
                hi_edge: false,
            }))
        }
        Hamiltonian::Tabulated(table) => {
            // bilinear in (q, p): piecewise linear along p, so nodes bracket roots
            let axis = &table.axes()[1];
            let hs: Vec<f64> = (0..axis.len)
                .map(|j| model.eval_h(&[q], &[axis.point(j)]))
                .collect::<Result<_>>()?;
            let (jmin, &hmin) = hs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty axis");
            if hmin > t {
                return Ok(None);
            }
            let cross = |a: usize, b: usize| {
                let (pa, pb) = (axis.point(a), axis.point(b));
                pa + (t - hs[a]) / (hs[b] - hs[a]) * (pb - pa)
            };
            let mut out = Sublevel {
                lo: axis.point(0),
                hi: axis.max(),
                lo_edge: true,
                hi_edge: true,
            };
            if let Some(j) = (jmin + 1..axis.len).find(|&j| hs[j] > t) {
                out.hi = cross(j - 1, j);
                out.hi_edge = false;
            }
            if let Some(j) = (0..jmin).rev().find(|&j| hs[j] > t) {
                out.lo = cross(j + 1, j);
                out.lo_edge = false;
            }
            Ok(Some(out))
        }
    }
}

/// Sampled gradient basis: `w(q_i) = Σ_j c_j rows[j][i]`.
pub(super) struct LevelProblem<'a> {
    pub model: &'a MicroModel,
    pub momentum: f64,
    pub points: &'a [f64],
    pub rows: &'a [Vec<f64>],
    pub bound: f64,
}

enum Side {
    Above(f64),
    Below(f64),
    Between(f64, f64),
}

impl LevelProblem<'_> {
    /// Coefficients maximising the margin of the given constraints, if the
    /// margin is nonnegative.
    fn solve(&self, constraints: &[(usize, Side)]) -> Option<Vec<f64>> {
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = self
            .rows
            .iter()
            .map(|_| lp.add_var(0.0, (-self.bound, self.bound)))
            .collect();
        let margin = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
        let w = |i: usize, sign: f64| {
            let mut e = LinearExpr::empty();
            for (v, row) in vars.iter().zip(self.rows) {
                e.add(*v, sign * row[i]);
            }
            e.add(margin, -1.0);
            e
        };
        let p = self.momentum;
        for (i, side) in constraints {
            match *side {
                // P + w_i − a ≥ margin
                Side::Above(a) => lp.add_constraint(w(*i, 1.0), ComparisonOp::Ge, a - p),
                // b − P − w_i ≥ margin
                Side::Below(b) => lp.add_constraint(w(*i, -1.0), ComparisonOp::Ge, p - b),
                Side::Between(a, b) => {
                    lp.add_constraint(w(*i, 1.0), ComparisonOp::Ge, a - p);
                    lp.add_constraint(w(*i, -1.0), ComparisonOp::Ge, p - b);
                }
            }
        }
        let sol = lp.solve().ok()?;
        (sol.objective() >= -1e-12).then(|| vars.iter().map(|v| *sol.var_value(*v)).collect())
    }

    /// Coefficients with `H(q_i, P + w_i) ≤ t` at every node.
    pub fn upper_feasible(&self, t: f64) -> Result<Option<Vec<f64>>> {
        let mut cons = Vec::with_capacity(self.points.len());
        for (i, &q) in self.points.iter().enumerate() {
            match sublevel(self.model, q, t)? {
                None => return Ok(None),
                Some(s) => cons.push((i, Side::Between(s.lo, s.hi))),
            }
        }
        Ok(self.solve(&cons))
    }

    /// Coefficients with `H(q_i, P + w_i) ≥ t` at every node.
    pub fn lower_feasible(&self, t: f64) -> Result<Option<Vec<f64>>> {
        let n = self.points.len();
        let levels: Vec<Option<Sublevel>> = self
            .points
            .iter()
            .map(|&q| sublevel(self.model, q, t))
            .collect::<Result<_>>()?;
        let regions = circular_runs(&levels.iter().map(|l| l.is_some()).collect::<Vec<_>>());
        let preferred = if self.momentum >= 0.0 { 0 } else { usize::MAX };
        let combos: Vec<usize> = if regions.len() <= 3 {
            let all = 1usize << regions.len();
            let first = preferred & (all - 1);
            std::iter::once(first)
                .chain((0..all).filter(|&m| m != first))
                .collect()
        } else {
            vec![preferred, !preferred]
        };
        for mask in combos {
            let mut cons = Vec::with_capacity(n);
            let mut possible = true;
            for (r, run) in regions.iter().enumerate() {
                let below = (mask >> r.min(63)) & 1 == 1;
                for &i in run {
                    let s = levels[i].expect("run members are nonempty");
                    if below {
                        possible &= !s.lo_edge;
                        cons.push((i, Side::Below(s.lo)));
                    } else {
                        possible &= !s.hi_edge;
                        cons.push((i, Side::Above(s.hi)));
                    }
                }
            }
            if possible {
                if let Some(c) = self.solve(&cons) {
                    return Ok(Some(c));
                }
            }
        }
        Ok(None)
    }
}

/// Maximal runs of `true` on a circle.
fn circular_runs(flags: &[bool]) -> Vec<Vec<usize>> {
    let n = flags.len();
    let Some(start) = (0..n).find(|&i| !flags[i]) else {
        return if n == 0 { vec![] } else { vec![(0..n).collect()] };
    };
    let mut runs = Vec::new();
    let mut cur = Vec::new();
    for k in 1..=n {
        let i = (start + k) % n;
        if flags[i] {
            cur.push(i);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    runs
}

/// Bisection for the largest feasible level (`lower`) or the smallest
/// (`upper`) between `feasible_end` (known feasible) and `other_end`.
pub(super) fn bisect(
    mut feasible_end: f64,
    mut other_end: f64,
    mut feasible: impl FnMut(f64) -> Result<Option<Vec<f64>>>,
    start: Vec<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut best = start;
    for _ in 0..60 {
        if (other_end - feasible_end).abs() <= 1e-7 * (1.0 + feasible_end.abs()) {
            break;
        }
        let mid = 0.5 * (feasible_end + other_end);
        match feasible(mid)? {
            Some(c) => {
                feasible_end = mid;
                best = c;
            }
            None => other_end = mid,
        }
    }
    Ok((best, feasible_end))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_wrap_around() {
        let f = [true, false, true, true, false, true];
        assert_eq!(circular_runs(&f), vec![vec![2, 3], vec![5, 0]]);
        assert_eq!(circular_runs(&[true, true]), vec![vec![0, 1]]);
        assert!(circular_runs(&[false, false]).is_empty());
    }
}
