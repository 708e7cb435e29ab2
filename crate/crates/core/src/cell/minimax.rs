//! Minimax brackets for the effective Hamiltonian over trigonometric correctors.

use crate::error::{Error, Result};
use crate::model::{Hamiltonian, MicroModel};
use crate::optim::{golden, lbfgs, LbfgsOptions};
use crate::par;
use super::levelset::{bisect, LevelProblem};
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct MinimaxOptions {
    /// Modes per axis.
    pub modes: usize,
    /// Grid points per axis on the unit cell.
    pub qgrid: usize,
    pub restarts: usize,
    pub seed: u64,
    /// L-BFGS iterations per smoothing level.
    pub max_iter: usize,
    /// Final evaluation uses at least `qgrid · refine` points per axis.
    pub refine: usize,
    /// Soft bound on |P + ∇φ| during the search; derived from the model
    /// when `None`.
    pub momentum_cap: Option<f64>,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        Self {
            modes: 8,
            qgrid: 128,
            restarts: 8,
            seed: 0,
            max_iter: 400,
            refine: 4,
            momentum_cap: None,
        }
    }
}

/// Smooth periodic corrector `φ(q) = Σ_n a_n cos(2π n·q) + b_n sin(2π n·q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrector {
    pub dim: usize,
    /// Wave vectors (a half lattice, zero mode excluded).
    pub modes: Vec<Vec<i64>>,
    pub cos_coef: Vec<f64>,
    pub sin_coef: Vec<f64>,
    pub momentum: Vec<f64>,
    /// `max_q` (upper problem) or `min_q` (lower problem) of H(q, P + ∇φ).
    pub achieved: f64,
}

impl Corrector {
    pub fn value(&self, q: &[f64]) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .map(|(m, n)| {
                let th = 2.0 * PI * dot_i(n, q);
                self.cos_coef[m] * th.cos() + self.sin_coef[m] * th.sin()
            })
            .sum()
    }

    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (m, n) in self.modes.iter().enumerate() {
            let th = 2.0 * PI * dot_i(n, q);
            let s = 2.0 * PI * (-self.cos_coef[m] * th.sin() + self.sin_coef[m] * th.cos());
            out.iter_mut().zip(n).for_each(|(o, &k)| *o += s * k as f64);
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimaxBracket {
    pub lower: f64,
    pub upper: f64,
    /// Best corrector of the upper (inf-sup) problem.
    pub corrector: Corrector,
    pub lower_corrector: Corrector,
    pub converged: bool,
}

impl MinimaxBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

fn dot_i(n: &[i64], q: &[f64]) -> f64 {
    n.iter().zip(q).map(|(&k, x)| k as f64 * x).sum()
}

/// Half lattice of nonzero wave vectors with entries in `[-K, K]`.
fn wave_vectors(dim: usize, k: usize) -> Vec<Vec<i64>> {
    let k = k as i64;
    match dim {
        1 => (1..=k).map(|n| vec![n]).collect(),
        _ => {
            let mut out = Vec::new();
            for a in -k..=k {
                for b in -k..=k {
                    if a > 0 || (a == 0 && b > 0) {
                        out.push(vec![a, b]);
                    }
                }
            }
            out
        }
    }
}

/// Gradient basis sampled on a grid: `∇φ(q) = Σ_j c_j g_j(q) n̂_j`, with
/// coefficients scaled by `2π|n|` so that all modes have unit amplitude.
struct Basis {
    dim: usize,
    modes: Vec<Vec<i64>>,
    /// Unit wave direction per basis function.
    dirs: Vec<Vec<f64>>,
    /// `values[j * nq + i]`.
    values: Vec<f64>,
    points: Vec<Vec<f64>>,
}

impl Basis {
    fn new(dim: usize, k: usize, per_axis: usize) -> Self {
        let modes = wave_vectors(dim, k);
        let mut points = Vec::new();
        let h = 1.0 / per_axis as f64;
        if dim == 1 {
            points.extend((0..per_axis).map(|i| vec![i as f64 * h]));
        } else {
            for i in 0..per_axis {
                for j in 0..per_axis {
                    points.push(vec![i as f64 * h, j as f64 * h]);
                }
            }
        }
        let nq = points.len();
        let mut dirs = Vec::new();
        let mut values = Vec::with_capacity(2 * modes.len() * nq);
        for n in &modes {
            let len = n.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            let dir: Vec<f64> = n.iter().map(|&v| v as f64 / len).collect();
            // cosine coefficient of φ → −sin in the gradient; sine → cos
            for trig in 0..2 {
                for q in &points {
                    let th = 2.0 * PI * dot_i(n, q);
                    values.push(if trig == 0 { -th.sin() } else { th.cos() });
                }
                dirs.push(dir.clone());
            }
        }
        Self {
            dim,
            modes,
            dirs,
            values,
            points,
        }
    }

    fn len(&self) -> usize {
        self.dirs.len()
    }

    fn gradient_field(&self, c: &[f64], out: &mut [f64]) {
        let nq = self.points.len();
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &cj) in c.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            let row = &self.values[j * nq..(j + 1) * nq];
            let dir = &self.dirs[j];
            for (i, &b) in row.iter().enumerate() {
                for a in 0..d {
                    out[i * d + a] += cj * b * dir[a];
                }
            }
        }
    }

    fn corrector(&self, c: &[f64], momentum: &[f64], achieved: f64) -> Corrector {
        let mut cos_coef = Vec::with_capacity(self.modes.len());
        let mut sin_coef = Vec::with_capacity(self.modes.len());
        for (m, n) in self.modes.iter().enumerate() {
            let s = 2.0 * PI * n.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            cos_coef.push(c[2 * m] / s);
            sin_coef.push(c[2 * m + 1] / s);
        }
        Corrector {
            dim: self.dim,
            modes: self.modes.clone(),
            cos_coef,
            sin_coef,
            momentum: momentum.to_vec(),
            achieved,
        }
    }

    fn scales(&self) -> Vec<f64> {
        self.modes
            .iter()
            .flat_map(|n| {
                let s = 2.0 * PI * n.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
                [s, s]
            })
            .collect()
    }
}

/// Precomputed H(q, ·) access on the optimisation grid.
struct Problem<'a> {
    model: &'a MicroModel,
    p: &'a [f64],
    basis: &'a Basis,
    /// +1 for the inf-sup problem, −1 for the sup-inf problem.
    sign: f64,
    /// Momentum magnitude beyond which the smoothed objective is penalised.
    cap: f64,
}

const PENALTY: f64 = 10.0;
const MAX_EVAL_POINTS: usize = 1 << 18;

/// One sampled value of `q ↦ H(q, P + ∇φ(q))`: nodes carry `t = 0`,
/// interior chord minima interpolate between nodes `i` and `j`.
struct Sample {
    value: f64,
    i: usize,
    j: usize,
    t: f64,
    dhdp: Vec<f64>,
}

/// Interior minimum of H along the chord joining `(q0, p0)` and `(q1, p1)`
/// in one dimension. A corrector whose momentum crosses the minimiser of
/// `p ↦ H(q, p)` between nodes is caught here rather than hidden by the grid.
fn chord_minimum(model: &MicroModel, q0: f64, q1: f64, p0: f64, p1: f64) -> Result<Option<(f64, f64, f64)>> {
    let (dq, dp) = (q1 - q0, p1 - p0);
    let slope = |t: f64| -> Result<f64> {
        let (mut gq, mut gp) = ([0.0], [0.0]);
        model.gradients(&[q0 + t * dq], &[p0 + t * dp], &mut gq, &mut gp)?;
        Ok(gq[0] * dq + gp[0] * dp)
    };
    if slope(0.0)? >= 0.0 || slope(1.0)? <= 0.0 {
        return Ok(None);
    }
    let mut err = None;
    let (t, v) = golden(
        |t| match model.eval_h(&[q0 + t * dq], &[p0 + t * dp]) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                f64::INFINITY
            }
        },
        0.0,
        1.0,
        1e-9,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let (mut gq, mut gp) = ([0.0], [0.0]);
    model.gradients(&[q0 + t * dq], &[p0 + t * dp], &mut gq, &mut gp)?;
    Ok(Some((t, v, gp[0])))
}

/// Samples of H at grid nodes (with momenta `pv`) plus, for the sup-inf
/// problem in 1D, chord minima between consecutive nodes.
fn samples(model: &MicroModel, points: &[Vec<f64>], pv: &[f64], lower: bool) -> Result<Vec<Sample>> {
    let d = model.dim;
    let n = points.len();
    let mut out = Vec::with_capacity(2 * n);
    let mut dq = vec![0.0; d];
    for (i, q) in points.iter().enumerate() {
        let p = &pv[i * d..(i + 1) * d];
        let mut dhdp = vec![0.0; d];
        model.gradients(q, p, &mut dq, &mut dhdp)?;
        out.push(Sample {
            value: model.eval_h(q, p)?,
            i,
            j: i,
            t: 0.0,
            dhdp,
        });
    }
    if lower && d == 1 && n > 1 {
        let h = 1.0 / n as f64;
        for i in 0..n {
            let j = (i + 1) % n;
            let q0 = points[i][0];
            if let Some((t, value, g)) = chord_minimum(model, q0, q0 + h, pv[i], pv[j])? {
                out.push(Sample {
                    value,
                    i,
                    j,
                    t,
                    dhdp: vec![g],
                });
            }
        }
    }
    Ok(out)
}

impl Problem<'_> {
    fn momenta(&self, c: &[f64]) -> Vec<f64> {
        let d = self.basis.dim;
        let mut field = vec![0.0; self.basis.points.len() * d];
        self.basis.gradient_field(c, &mut field);
        for (k, f) in field.iter_mut().enumerate() {
            *f += self.p[k % d];
        }
        field
    }

    /// Log-sum-exp smoothing of `max sign·H` over the samples at temperature `tau`.
    fn smoothed(&self, c: &[f64], grad: &mut [f64], tau: f64) -> f64 {
        let nq = self.basis.points.len();
        let d = self.basis.dim;
        let pv = self.momenta(c);
        let Ok(items) = samples(self.model, &self.basis.points, &pv, self.sign < 0.0) else {
            return f64::INFINITY;
        };
        let top = items
            .iter()
            .map(|s| self.sign * s.value)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = items
            .iter()
            .map(|s| ((self.sign * s.value - top) / tau).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut value = top + tau * (total / nq as f64).ln();
        // soft cap on the momentum range keeps the search away from
        // correctors too steep for the sampling grid
        let mut excess = vec![0.0; nq * d];
        for i in 0..nq {
            let p = &pv[i * d..(i + 1) * d];
            let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > self.cap {
                let e = r - self.cap;
                value += PENALTY * e * e / nq as f64;
                for a in 0..d {
                    excess[i * d + a] = 2.0 * PENALTY * e * p[a] / (r * nq as f64);
                }
            }
        }
        let active: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 1e-300)
            .map(|(k, &w)| (k, w))
            .collect();
        for (jb, g) in grad.iter_mut().enumerate() {
            let row = &self.basis.values[jb * nq..(jb + 1) * nq];
            let dir = &self.basis.dirs[jb];
            let mut acc = 0.0;
            for &(k, w) in &active {
                let s = &items[k];
                let proj: f64 = (0..d).map(|a| s.dhdp[a] * dir[a]).sum();
                let b = (1.0 - s.t) * row[s.i] + s.t * row[s.j];
                acc += w * proj * b;
            }
            let mut pen = 0.0;
            for i in 0..nq {
                pen += (0..d).map(|a| excess[i * d + a] * dir[a]).sum::<f64>() * row[i];
            }
            *g = self.sign * acc + pen;
        }
        value
    }

    /// `max_q` (sign +1) or `min_q` (sign −1) of H on a refined grid.
    fn exact(&self, c: &[f64], refine: usize) -> Result<f64> {
        evaluate(self.model, self.p, self.basis, c, self.basis_per_axis() * refine, self.sign)
    }

    fn basis_per_axis(&self) -> usize {
        match self.basis.dim {
            1 => self.basis.points.len(),
            _ => (self.basis.points.len() as f64).sqrt().round() as usize,
        }
    }
}

/// Extreme value for scaled coefficients `c`, on at least `per_axis` points.
/// In 1D the resolution is raised until the momentum stays within `1e-4`
/// of its chord between nodes (Bernstein: `|w''| ≤ (2πK)² Σ|c|`).
fn evaluate(
    model: &MicroModel,
    p: &[f64],
    basis: &Basis,
    c: &[f64],
    mut per_axis: usize,
    sign: f64,
) -> Result<f64> {
    let corr = basis.corrector(c, p, 0.0);
    if basis.dim == 1 {
        let amp: f64 = c.iter().map(|v| v.abs()).sum();
        let k = basis.modes.len() as f64;
        let needed = (2.0 * PI * k) * (amp / (8.0 * 1e-4)).sqrt();
        if needed > MAX_EVAL_POINTS as f64 {
            return Ok(sign * f64::INFINITY);
        }
        per_axis = per_axis.max(needed.ceil() as usize);
    }
    extreme_value(model, p, &corr, per_axis, sign)
}

/// One-dimensional bracket from level-set linear programs.
fn level_set_bracket(
    model: &MicroModel,
    p: f64,
    basis: &Basis,
    opts: &MinimaxOptions,
) -> Result<MinimaxBracket> {
    let nq = basis.points.len();
    let points: Vec<f64> = basis.points.iter().map(|q| q[0]).collect();
    let rows: Vec<Vec<f64>> = (0..basis.len())
        .map(|j| basis.values[j * nq..(j + 1) * nq].to_vec())
        .collect();
    let bound = opts
        .momentum_cap
        .unwrap_or_else(|| default_cap(model, &[p]))
        / 4.0;
    let problem = LevelProblem {
        model,
        momentum: p,
        points: &points,
        rows: &rows,
        bound,
    };
    let mut at_rest = Vec::with_capacity(nq);
    let mut floor = f64::NEG_INFINITY;
    for &q in &points {
        at_rest.push(model.eval_h(&[q], &[p])?);
        floor = floor.max(min_over_p(model, q)?);
    }
    let top = at_rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = at_rest.iter().copied().fold(f64::INFINITY, f64::min);
    let zeros = vec![0.0; basis.len()];
    let converged = true;

    let (cu, level_u) = if basis.len() == 0 || top <= floor {
        (zeros.clone(), top)
    } else {
        bisect(top, floor, |t| problem.upper_feasible(t), zeros.clone())?
    };
    let per_axis = nq * opts.refine;
    // node feasibility does not control the dips between nodes, so keep the
    // candidate with the best refined value
    let mut lower = evaluate(model, &[p], basis, &zeros, per_axis, -1.0)?;
    let mut cl = zeros.clone();
    if basis.len() > 0 && bottom < level_u {
        bisect(
            bottom,
            level_u,
            |t| {
                let found = problem.lower_feasible(t)?;
                if let Some(c) = &found {
                    let v = evaluate(model, &[p], basis, c, per_axis, -1.0)?;
                    if v > lower {
                        lower = v;
                        cl = c.clone();
                    }
                }
                Ok(found)
            },
            zeros.clone(),
        )?;
    }
    // the upper problem is convex: polish with smoothed descent from the
    // plain and the linear-programming correctors
    let smooth = Problem {
        model,
        p: &[p],
        basis,
        sign: 1.0,
        cap: 4.0 * bound,
    };
    let mut converged = converged;
    let mut upper = evaluate(model, &[p], basis, &cu, per_axis, 1.0)?;
    let mut cu = cu;
    for start in [zeros.clone(), cu.clone()] {
        let run = solve(&smooth, start, opts)?;
        converged &= run.converged;
        if run.value < upper {
            upper = run.value;
            cu = run.c;
        }
    }
    Ok(MinimaxBracket {
        lower,
        upper,
        corrector: basis.corrector(&cu, &[p], upper),
        lower_corrector: basis.corrector(&cl, &[p], lower),
        converged,
    })
}

/// `min_p H(q, p)` (over the table nodes for tabulated models).
fn min_over_p(model: &MicroModel, q: f64) -> Result<f64> {
    match &model.hamiltonian {
        Hamiltonian::Quadratic(u) => Ok(-u.value(&[q])),
        Hamiltonian::Tabulated(t) => {
            let axis = &t.axes()[1];
            (0..axis.len).try_fold(f64::INFINITY, |m, j| {
                Ok(m.min(model.eval_h(&[q], &[axis.point(j)])?))
            })
        }
    }
}

/// Extreme value of `q ↦ H(q, P + ∇φ(q))` on a uniform grid; for the
/// minimum in 1D, interior minima between nodes are included.
pub fn extreme_value(
    model: &MicroModel,
    p: &[f64],
    corr: &Corrector,
    per_axis: usize,
    sign: f64,
) -> Result<f64> {
    let d = model.dim;
    let h = 1.0 / per_axis as f64;
    let total = per_axis.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    let mut pv = Vec::with_capacity(total * d);
    let mut g = vec![0.0; d];
    for flat in 0..total {
        let mut q = vec![0.0; d];
        let mut rem = flat;
        for a in (0..d).rev() {
            q[a] = (rem % per_axis) as f64 * h;
            rem /= per_axis;
        }
        corr.gradient(&q, &mut g);
        pv.extend(g.iter().zip(p).map(|(gi, pi)| gi + pi));
        points.push(q);
    }
    let items = samples(model, &points, &pv, sign < 0.0)?;
    let best = items
        .iter()
        .map(|s| sign * s.value)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(sign * best)
}

struct Run {
    c: Vec<f64>,
    value: f64,
    converged: bool,
}

fn solve(problem: &Problem, start: Vec<f64>, opts: &MinimaxOptions) -> Result<Run> {
    let mut c = start;
    let mut best = Run {
        value: problem.sign * problem.exact(&c, opts.refine)?,
        c: c.clone(),
        converged: true,
    };
    if problem.basis.len() == 0 {
        return Ok(best);
    }
    let lbfgs_opts = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: 1e-10,
        f_tol: 1e-13,
        memory: 12,
    };
    let mut tau = 0.1;
    let mut converged = false;
    while tau >= 1e-5 {
        let m = lbfgs(|x, g| problem.smoothed(x, g, tau), c.clone(), &lbfgs_opts);
        c = m.x;
        converged = m.converged;
        let v = problem.sign * problem.exact(&c, opts.refine)?;
        if v < best.value {
            best.value = v;
            best.c = c.clone();
        }
        tau /= 4.0;
    }
    best.converged = converged;
    Ok(best)
}

/// Bracket `[sup_φ min_q H, inf_φ max_q H]` for the effective Hamiltonian at `p`.
pub fn effective_h_minimax(
    model: &MicroModel,
    p: &[f64],
    opts: &MinimaxOptions,
) -> Result<MinimaxBracket> {
    let d = model.dim;
    if p.len() != d {
        return Err(Error::InvalidInput(format!(
            "momentum has dimension {}, model has {d}",
            p.len()
        )));
    }
    if d > 2 {
        return Err(Error::Unsupported(
            "minimax cell solves are limited to d ≤ 2".into(),
        ));
    }
    if opts.modes > 0 && opts.qgrid < 8 * opts.modes {
        return Err(Error::Parameter(format!(
            "q grid of {} points cannot resolve {} modes (need ≥ 8 per mode)",
            opts.qgrid, opts.modes
        )));
    }
    if opts.qgrid == 0 || opts.refine == 0 {
        return Err(Error::Parameter("q grid and refinement must be positive".into()));
    }
    let basis = Basis::new(d, opts.modes, opts.qgrid);
    if d == 1 {
        return level_set_bracket(model, p[0], &basis, opts);
    }
    let nb = basis.len();
    let starts = |extra: Option<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; nb]];
        if let Some(e) = extra {
            out.push(e);
        }
        let sd = 0.1 / opts.modes.max(1) as f64;
        let normal = Normal::new(0.0, sd).expect("positive deviation");
        let mut r = 0u64;
        while out.len() < opts.restarts.max(1) {
            let mut rng = par::stream(opts.seed, r);
            r += 1;
            // φ coefficients ~ N(0, sd), expressed in the scaled gradient basis
            out.push(
                basis
                    .scales()
                    .iter()
                    .map(|s| s * normal.sample(&mut rng))
                    .collect(),
            );
        }
        if nb == 0 {
            out.truncate(1);
        }
        out
    };

    let cap = opts.momentum_cap.unwrap_or_else(|| default_cap(model, p));
    let upper_problem = Problem {
        model,
        p,
        basis: &basis,
        sign: 1.0,
        cap,
    };
    let upper_runs = par::map(&starts(None), |s| solve(&upper_problem, s.clone(), opts));
    let upper = pick_best(upper_runs)?;

    let lower_problem = Problem {
        model,
        p,
        basis: &basis,
        sign: -1.0,
        cap,
    };
    let lower_runs = par::map(&starts(Some(upper.c.clone())), |s| {
        solve(&lower_problem, s.clone(), opts)
    });
    let lower = pick_best(lower_runs)?;

    let upper_value = upper.value;
    let lower_value = -lower.value;
    Ok(MinimaxBracket {
        lower: lower_value,
        upper: upper_value,
        corrector: basis.corrector(&upper.c, p, upper_value),
        lower_corrector: basis.corrector(&lower.c, p, lower_value),
        converged: upper.converged && lower.converged,
    })
}

/// `8 (1 + |P| + √(2·osc))`, with `osc` the oscillation of `q ↦ H(q, 0)`.
fn default_cap(model: &MicroModel, p: &[f64]) -> f64 {
    let osc = match (&model.hamiltonian, model.potential()) {
        (_, Some(u)) => {
            let (lo, hi) = u.bounds(model.dim);
            hi - lo
        }
        (Hamiltonian::Tabulated(t), None) => t.max_value() - t.min_value(),
        _ => 0.0,
    };
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    8.0 * (1.0 + pn + (2.0 * osc).sqrt())
}

fn pick_best(runs: Vec<Result<Run>>) -> Result<Run> {
    let mut best: Option<Run> = None;
    let mut any_converged = false;
    for r in runs {
        let r = r?;
        any_converged |= r.converged;
        if best.as_ref().map_or(true, |b| r.value < b.value) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    best.converged = any_converged;
    Ok(best)
}
