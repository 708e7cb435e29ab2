//! Discounted resolvents at particle and continuum level, the resolvent
//! iteration for the semigroup, and the particle-to-continuum harness.
//!
//! `R_α h(x) = sup_z ∫₀^∞ e^{−s/α} (h(z(s))/α − L(z, ż)) ds` over paths with
//! `z(0) = x`. Paths are piecewise linear on knots placed at equal discount
//! mass up to a horizon `T`, after which they rest; the resting tail is
//! integrated in closed form.

use crate::cell::EffectiveTable;
use crate::dynamics::{weighted_action, ParticleCost, PathEnsemble, RunningCost, Weight};
use crate::error::{Error, Result};
use crate::grid::{Axis, GridFunction};
use crate::model::{MacroPotentials, MicroModel};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::transport::{w2_pieces, wasserstein_unequal, EmpiricalMeasure};
use crate::{par, sum};
use dashmap::DashMap;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as Gaussian};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// A function of configurations (`N·d` coordinates) bounded above.
pub trait StateFunction: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;

    /// Value and gradient; central differences unless overridden.
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        let h = self.fd_step();
        let mut y = x.to_vec();
        for k in 0..x.len() {
            y[k] = x[k] + h;
            let a = self.value(&y)?;
            y[k] = x[k] - h;
            let b = self.value(&y)?;
            y[k] = x[k];
            out[k] = (a - b) / (2.0 * h);
        }
        self.value(x)
    }

    fn fd_step(&self) -> f64 {
        1e-6
    }

    /// An upper bound of the function.
    fn sup(&self) -> f64;
}

pub type Closure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Terminal data `h`, evaluated on `emp(x)`.
#[derive(Clone)]
pub enum TerminalData {
    Constant(f64),
    /// `−(a/2) d²(ρ, γ)`.
    NegDistSquared { a: f64, reference: EmpiricalMeasure },
    /// A caller-supplied symmetric closure over configurations with the
    /// stated upper bound and, for class-𝒞 use, growth rate `β` with
    /// `h ≥ −β (1 + d²(·, δ₀))`.
    Custom {
        dim: usize,
        value: Closure,
        sup: f64,
        growth: Option<f64>,
    },
}

impl std::fmt::Debug for TerminalData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::NegDistSquared { a, reference } => {
                write!(f, "NegDistSquared {{ a: {a}, atoms: {} }}", reference.len())
            }
            Self::Custom { sup, growth, .. } => write!(f, "Custom {{ sup: {sup}, growth: {growth:?} }}"),
        }
    }
}

impl TerminalData {
    pub fn neg_dist_squared(a: f64, reference: EmpiricalMeasure) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::Parameter(format!("a must be finite and nonnegative, got {a}")));
        }
        Ok(Self::NegDistSquared { a, reference })
    }

    /// `β` of the lower growth bound, when one is known.
    pub fn growth_rate(&self) -> Option<f64> {
        match self {
            Self::Constant(c) => Some((-c).max(0.0)),
            // d²(ρ, γ) ≤ 2 d²(ρ, δ₀) + 2 d²(γ, δ₀)
            Self::NegDistSquared { a, reference } => Some(a * reference.second_moment().max(1.0)),
            Self::Custom { growth, .. } => *growth,
        }
    }

    fn check(&self) -> Result<()> {
        if !self.sup().is_finite() {
            return Err(Error::Precondition("terminal data must be bounded above".into()));
        }
        Ok(())
    }

    fn measure(&self, x: &[f64], dim: usize) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(dim, x.to_vec())
    }
}

impl StateFunction for TerminalData {
    fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Constant(c) => Ok(*c),
            Self::NegDistSquared { a, reference } => {
                let rho = self.measure(x, reference.dim())?;
                Ok(-0.5 * a * w2_pieces(&rho, reference)?.0)
            }
            Self::Custom { value, .. } => Ok(value(x)),
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        match self {
            Self::Constant(c) => {
                out.iter_mut().for_each(|g| *g = 0.0);
                Ok(*c)
            }
            Self::NegDistSquared { a, reference } => {
                let d = reference.dim();
                let rho = self.measure(x, d)?;
                let (cost, pieces) = w2_pieces(&rho, reference)?;
                out.iter_mut().for_each(|g| *g = 0.0);
                // envelope: the coupling is locally fixed
                for (i, j, w) in pieces {
                    let y = reference.atom(j);
                    for k in 0..d {
                        out[i * d + k] -= a * w * (x[i * d + k] - y[k]);
                    }
                }
                Ok(-0.5 * a * cost)
            }
            Self::Custom { .. } => {
                let h = self.fd_step();
                let mut y = x.to_vec();
                for k in 0..x.len() {
                    y[k] = x[k] + h;
                    let a = self.value(&y)?;
                    y[k] = x[k] - h;
                    let b = self.value(&y)?;
                    y[k] = x[k];
                    out[k] = (a - b) / (2.0 * h);
                }
                self.value(x)
            }
        }
    }

    fn sup(&self) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::NegDistSquared { .. } => 0.0,
            Self::Custom { sup, .. } => *sup,
        }
    }
}

/// Continuum running cost on `N₀`-atom map-type curves:
/// `(1/N₀) Σ_i [𝖫̄(v_i) + U(x_i) + (V*ρ)(x_i)]`.
///
/// Outside the 𝖫̄ table the cost is continued quadratically so the optimiser
/// can return; [`resolve_continuum`] rejects final paths that leave it.
pub struct EffectiveCost<'a> {
    pub table: &'a EffectiveTable,
    pub macro_: &'a MacroPotentials,
}

impl RunningCost for EffectiveCost<'_> {
    fn eval(&self, x: &[f64], v: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> Result<f64> {
        let d = self.table.dim();
        let n = x.len() / d;
        let nf = n as f64;
        let mut g = vec![0.0; d];
        let mut terms = Vec::with_capacity(n);
        let mut gv_all = vec![0.0; x.len()];
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            let (l, _) = self.table.lagrangian_extended(&v[r.clone()], &mut g)?;
            gv_all[r.clone()].copy_from_slice(&g);
            terms.push(l + self.macro_.u.value(&x[r]));
        }
        let value = (sum::symmetric(&mut terms) + self.macro_.pair_total(x, d) / nf) / nf;
        if let Some((gx, gv)) = grad {
            for i in 0..n {
                self.macro_.force(x, d, i, &mut g);
                for a in 0..d {
                    gx[i * d + a] = g[a] / nf;
                    gv[i * d + a] = gv_all[i * d + a] / nf;
                }
            }
        }
        Ok(value)
    }

    fn infimum(&self) -> f64 {
        self.table.dual().values.min_value() + self.macro_.u.infimum() + self.macro_.v.bounds().0
    }
}

/// `L(x, v) − h(x)/α`, the integrand of the minimised functional.
struct Reward<'a> {
    cost: &'a dyn RunningCost,
    h: &'a dyn StateFunction,
    alpha: f64,
}

impl RunningCost for Reward<'_> {
    fn eval(&self, x: &[f64], v: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> Result<f64> {
        match grad {
            None => Ok(self.cost.eval(x, v, None)? - self.h.value(x)? / self.alpha),
            Some((gx, gv)) => {
                let l = self.cost.eval(x, v, Some((&mut *gx, gv)))?;
                let mut gh = vec![0.0; x.len()];
                let h = self.h.gradient(x, &mut gh)?;
                gx.iter_mut().zip(&gh).for_each(|(g, d)| *g -= d / self.alpha);
                Ok(l - h / self.alpha)
            }
        }
    }

    fn infimum(&self) -> f64 {
        self.cost.infimum() - self.h.sup() / self.alpha
    }
}

#[derive(Clone, Debug)]
pub struct ValueOptions {
    pub knots: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub tail_tol: f64,
    /// Knots double while the value moves by more than this; 0 disables.
    pub refine_tol: f64,
    pub max_knots: usize,
}

impl Default for ValueOptions {
    fn default() -> Self {
        Self {
            knots: 16,
            restarts: 4,
            seed: 0,
            max_iter: 2000,
            grad_tol: 1e-8,
            tail_tol: 1e-6,
            refine_tol: 1e-4,
            max_knots: 64,
        }
    }
}

impl ValueOptions {
    /// Small single-start settings used for lazily evaluated inner problems.
    pub fn inner() -> Self {
        Self {
            knots: 4,
            restarts: 1,
            max_iter: 80,
            grad_tol: 1e-8,
            refine_tol: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.knots == 0 || self.max_knots < self.knots {
            return Err(Error::Parameter(format!(
                "need 1 ≤ knots ≤ max_knots, got {} and {}",
                self.knots, self.max_knots
            )));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::Parameter("tail_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ValueEstimate {
    pub value: f64,
    pub converged: bool,
    pub restarts: usize,
    pub knots: usize,
    pub path: PathEnsemble,
    /// Truncation horizon `T_max`.
    pub horizon: f64,
    /// `e^{−T/α} (sup h − α inf L − (h(z_T) − α L(z_T, 0)))`.
    pub tail_bound: f64,
}

/// `(h(x) − α L(x, 0), sup h − α inf L)`: the resting value below and the
/// crude bound above every resolvent value at `x`.
pub fn growth_sandwich(
    h: &dyn StateFunction,
    alpha: f64,
    x: &[f64],
    cost: &dyn RunningCost,
) -> Result<(f64, f64)> {
    let zeros = vec![0.0; x.len()];
    Ok((
        h.value(x)? - alpha * cost.eval(x, &zeros, None)?,
        h.sup() - alpha * cost.infimum(),
    ))
}

/// `T = α ln(max(D, e·tol)/tol)` with `D` the width of the growth sandwich
/// at the start point.
pub fn truncation_horizon(alpha: f64, gap: f64, tail_tol: f64) -> f64 {
    alpha * (gap.max(std::f64::consts::E * tail_tol) / tail_tol).ln()
}

/// Knot times carrying equal discount mass on `[0, T]`.
pub fn discount_knots(alpha: f64, horizon: f64, intervals: usize) -> Vec<f64> {
    let mass = -(-horizon / alpha).exp_m1();
    let mut t: Vec<f64> = (0..=intervals)
        .map(|k| -alpha * (-(k as f64) * mass / intervals as f64).ln_1p())
        .collect();
    t[intervals] = horizon;
    t
}

/// Particles in lexicographic order of their coordinates; ties keep index order.
fn canonical_order(x: &[f64], d: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len() / d).collect();
    idx.sort_by(|&a, &b| {
        x[a * d..(a + 1) * d]
            .iter()
            .zip(&x[b * d..(b + 1) * d])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

fn permute_rows(x: &[f64], d: usize, order: &[usize]) -> Vec<f64> {
    order.iter().flat_map(|&j| x[j * d..(j + 1) * d].iter().copied()).collect()
}

fn unpermute_rows(x: &[f64], d: usize, order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (k, &j) in order.iter().enumerate() {
        out[j * d..(j + 1) * d].copy_from_slice(&x[k * d..(k + 1) * d]);
    }
    out
}

/// The discounted functional `J` over piecewise-linear paths from `x`.
struct Functional<'a> {
    reward: Reward<'a>,
    x: Vec<f64>,
    dim: usize,
    times: Vec<f64>,
    decay: f64,
}

impl Functional<'_> {
    fn path(&self, z: &[f64]) -> PathEnsemble {
        let m = self.x.len();
        let mut knots = Vec::with_capacity(self.times.len());
        knots.push(self.x.clone());
        knots.extend(z.chunks(m).map(|c| c.to_vec()));
        PathEnsemble {
            dim: self.dim,
            times: self.times.clone(),
            knots,
        }
    }

    /// `h(z_T) − α L(z_T, 0)` with its gradient.
    fn tail(&self, zt: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let alpha = self.reward.alpha;
        let zeros = vec![0.0; zt.len()];
        match grad {
            None => Ok(self.reward.h.value(zt)? - alpha * self.reward.cost.eval(zt, &zeros, None)?),
            Some(g) => {
                let mut gx = vec![0.0; zt.len()];
                let mut gv = vec![0.0; zt.len()];
                let l = self.reward.cost.eval(zt, &zeros, Some((&mut gx, &mut gv)))?;
                let h = self.reward.h.gradient(zt, g)?;
                g.iter_mut().zip(&gx).for_each(|(o, a)| *o -= alpha * a);
                Ok(h - alpha * l)
            }
        }
    }

    /// `J(z)`, and `−∇J` into `grad` when given.
    fn eval(&self, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let path = self.path(z);
        let m = self.x.len();
        let zt = &z[z.len() - m..];
        match grad {
            None => {
                let run = weighted_action(&path, &self.reward, Weight::Discount(self.reward.alpha), None)?;
                Ok(self.decay * self.tail(zt, None)? - run)
            }
            Some(g) => {
                let mut full = vec![0.0; m * self.times.len()];
                let run = weighted_action(&path, &self.reward, Weight::Discount(self.reward.alpha), Some(&mut full))?;
                let mut gt = vec![0.0; m];
                let tail = self.tail(zt, Some(&mut gt))?;
                g.copy_from_slice(&full[m..]);
                let n = g.len();
                for (o, t) in g[n - m..].iter_mut().zip(&gt) {
                    *o -= self.decay * t;
                }
                Ok(self.decay * tail - run)
            }
        }
    }
}

/// `R_α h(x)` for a general running cost.
pub fn resolve(
    h: &dyn StateFunction,
    alpha: f64,
    x: &[f64],
    dim: usize,
    cost: &dyn RunningCost,
    opts: &ValueOptions,
) -> Result<ValueEstimate> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    if !h.sup().is_finite() {
        return Err(Error::Precondition("terminal data must be bounded above".into()));
    }
    opts.validate()?;
    if dim == 0 || x.is_empty() || x.len() % dim != 0 {
        return Err(Error::InvalidInput(format!("{} coordinates do not form N·{dim}", x.len())));
    }
    crate::error::ensure_finite(x, "start configuration")?;
    let order = canonical_order(x, dim);
    let xs = permute_rows(x, dim, &order);
    let (rest, top) = growth_sandwich(h, alpha, &xs, cost)?;
    let horizon = truncation_horizon(alpha, top - rest, opts.tail_tol);
    let decay = (-horizon / alpha).exp();
    let m = xs.len();

    let lopts = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        ..LbfgsOptions::default()
    };
    let scale = 0.1 * (1.0 + xs.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let normal = Normal::new(0.0, scale).expect("positive spread");

    let mut intervals = opts.knots;
    let mut warm: Option<PathEnsemble> = None;
    let mut last: Option<(f64, PathEnsemble, bool)> = None;
    let mut restarts_used = 0;
    let mut converged = true;
    loop {
        let f = Functional {
            reward: Reward { cost, h, alpha },
            x: xs.clone(),
            dim,
            times: discount_knots(alpha, horizon, intervals),
            decay,
        };
        let starts: Vec<Vec<f64>> = match &warm {
            Some(p) => vec![p.resampled(&f.times)?.knots[1..].concat()],
            None => (0..opts.restarts.max(1))
                .map(|r| {
                    let mut z = xs.repeat(intervals);
                    if r > 0 {
                        let mut rng = par::stream(opts.seed, r as u64);
                        z.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
                    }
                    z
                })
                .collect(),
        };
        restarts_used += starts.len();
        let runs = par::map(&starts, |z0| {
            let mut failure = None;
            let res = lbfgs(
                |z, g| match f.eval(z, Some(g)) {
                    Ok(v) => -v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::INFINITY
                    }
                },
                z0.clone(),
                &lopts,
            );
            match failure {
                Some(e) if !res.value.is_finite() => Err(e),
                _ => Ok(res),
            }
        });
        let mut best: Option<crate::optim::Minimum> = None;
        for r in runs {
            let r = r?;
            if best.as_ref().is_none_or(|b| r.value < b.value) {
                best = Some(r);
            }
        }
        let best = best.expect("at least one start");
        let value = f.eval(&best.x, None)?;
        let path = f.path(&best.x);
        let done = match &last {
            _ if opts.refine_tol <= 0.0 => true,
            Some((prev, _, _)) => (value - prev).abs() < opts.refine_tol,
            None => false,
        };
        let better = last.as_ref().is_none_or(|l| value >= l.0);
        if better {
            last = Some((value, path.clone(), best.converged));
        }
        if done || 2 * intervals > opts.max_knots {
            converged &= done && last.as_ref().is_some_and(|l| l.2);
            break;
        }
        warm = Some(path);
        intervals *= 2;
    }
    let (value, path, _) = last.expect("one level was solved");
    let zt = path.knots.last().expect("nonempty");
    let zeros = vec![0.0; m];
    let stationary = h.value(zt)? - alpha * cost.eval(zt, &zeros, None)?;
    let tail_bound = (decay * (top - stationary)).max(0.0);
    let knots = path.intervals();
    let path = PathEnsemble {
        dim,
        times: path.times,
        knots: path.knots.iter().map(|k| unpermute_rows(k, dim, &order)).collect(),
    };
    Ok(ValueEstimate {
        value,
        converged,
        restarts: restarts_used,
        knots,
        path,
        horizon,
        tail_bound,
    })
}

/// `f_N(x) = R_{N,α} h(x)` with the rescaled particle running cost.
pub fn resolve_particle(
    h: &TerminalData,
    alpha: f64,
    x: &[f64],
    model: &MicroModel,
    macro_: &MacroPotentials,
    eps: f64,
    opts: &ValueOptions,
) -> Result<ValueEstimate> {
    h.check()?;
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    resolve(h, alpha, x, model.dim, &ParticleCost { model, macro_, eps }, opts)
}

/// Estimate of `f(ρ) = R_α h(ρ)` over `N₀`-atom map-type curves driven by
/// the effective Lagrangian; a lower bound on the sup over all curves.
pub fn resolve_continuum(
    h: &TerminalData,
    alpha: f64,
    rho: &EmpiricalMeasure,
    table: &EffectiveTable,
    macro_: &MacroPotentials,
    opts: &ValueOptions,
) -> Result<ValueEstimate> {
    h.check()?;
    if rho.dim() != table.dim() {
        return Err(Error::InvalidInput(format!(
            "measure in dimension {} but table in dimension {}",
            rho.dim(),
            table.dim()
        )));
    }
    let cost = EffectiveCost { table, macro_ };
    let est = resolve(h, alpha, rho.atoms(), rho.dim(), &cost, opts)?;
    check_velocity_range(&est.path, table)?;
    Ok(est)
}

fn check_velocity_range(path: &PathEnsemble, table: &EffectiveTable) -> Result<()> {
    let d = path.dim;
    for k in 0..path.intervals() {
        let v = path.velocity(k);
        for vi in v.chunks(d) {
            if !table.dual().values.contains(vi) {
                return Err(Error::Extrapolation {
                    what: "velocity",
                    point: vi.to_vec(),
                });
            }
        }
    }
    Ok(())
}

/// `J` along a one-step truncation: `∫₀^τ e^{−s/α}(h/α − L) ds + e^{−τ/α} f(z(τ))`
/// minus `f(x)`, with `f` re-solved at `z(τ)`.
pub fn dpp_residual(
    h: &dyn StateFunction,
    alpha: f64,
    est: &ValueEstimate,
    tau: f64,
    cost: &dyn RunningCost,
    opts: &ValueOptions,
) -> Result<f64> {
    let path = &est.path;
    if !(tau > 0.0 && tau < path.horizon()) {
        return Err(Error::Parameter(format!("tau must lie in (0, {}), got {tau}", path.horizon())));
    }
    // the path cut at τ, with a knot inserted there
    let mut times = vec![];
    let mut knots = vec![];
    for (t, k) in path.times.iter().zip(&path.knots) {
        if *t < tau {
            times.push(*t);
            knots.push(k.clone());
        }
    }
    times.push(tau);
    knots.push(path.position_at(tau));
    let head = PathEnsemble::new(path.dim, times, knots)?;
    let reward = Reward { cost, h, alpha };
    let run = weighted_action(&head, &reward, Weight::Discount(alpha), None)?;
    let zt = head.knots.last().expect("nonempty");
    let rest = resolve(h, alpha, zt, path.dim, cost, opts)?;
    Ok(-run + (-tau / alpha).exp() * rest.value - est.value)
}

/// Semi-Lagrangian value iteration for one particle on the line, with
/// moves between grid nodes in steps of `tau`; an oracle for small cases.
///
/// `lagrangian(x, v)` is the running cost; moves outside the grid are not
/// allowed.
pub fn grid_resolvent_1d(
    h: &dyn Fn(f64) -> f64,
    lagrangian: &dyn Fn(f64, f64) -> f64,
    alpha: f64,
    axis: &Axis,
    tau: f64,
    vmax: f64,
) -> Result<GridFunction> {
    if !(alpha > 0.0 && tau > 0.0 && vmax > 0.0) {
        return Err(Error::Parameter("alpha, tau and vmax must be positive".into()));
    }
    let n = axis.len;
    let xs: Vec<f64> = (0..n).map(|i| axis.point(i)).collect();
    let reach = ((vmax * tau / axis.step).ceil() as usize).max(1);
    let keep = (-tau / alpha).exp();
    let mass = alpha * (1.0 - keep);
    // reward of moving i → i + k, independent of the iterate
    let step: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..=2 * reach)
                .map(|k| {
                    let j = i as isize + k as isize - reach as isize;
                    if j < 0 || j >= n as isize {
                        return f64::NEG_INFINITY;
                    }
                    let (a, b) = (xs[i], xs[j as usize]);
                    let mid = 0.5 * (a + b);
                    mass * (h(mid) / alpha - lagrangian(mid, (b - a) / tau))
                })
                .collect()
        })
        .collect();
    let mut f: Vec<f64> = xs.iter().map(|&x| h(x) - alpha * lagrangian(x, 0.0)).collect();
    let mut next = f.clone();
    let mut iterations = 0;
    loop {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            for (k, r) in step[i].iter().enumerate() {
                if r.is_finite() {
                    let j = i + k - reach;
                    best = best.max(r + keep * f[j]);
                }
            }
            change = change.max((best - f[i]).abs());
            next[i] = best;
        }
        std::mem::swap(&mut f, &mut next);
        iterations += 1;
        if change <= 1e-12 {
            break;
        }
        if iterations > 1_000_000 {
            return Err(Error::IterationLimit {
                limit: 1_000_000,
                context: "grid value iteration".into(),
            });
        }
    }
    GridFunction::new(vec![axis.clone()], f)
}

/// `R_α g` evaluated on demand and memoised on states quantised at 10⁻⁶.
pub struct LazyResolvent<'a> {
    pub inner: &'a dyn StateFunction,
    pub alpha: f64,
    pub dim: usize,
    pub cost: &'a dyn RunningCost,
    pub opts: ValueOptions,
    memo: DashMap<Vec<i64>, f64>,
    counter: &'a AtomicUsize,
    budget: usize,
}

impl<'a> LazyResolvent<'a> {
    pub fn new(
        inner: &'a dyn StateFunction,
        alpha: f64,
        dim: usize,
        cost: &'a dyn RunningCost,
        opts: ValueOptions,
        counter: &'a AtomicUsize,
        budget: usize,
    ) -> Self {
        Self {
            inner,
            alpha,
            dim,
            cost,
            opts,
            memo: DashMap::new(),
            counter,
            budget,
        }
    }

    pub fn cached(&self) -> usize {
        self.memo.len()
    }
}

const QUANTUM: f64 = 1e-6;

impl StateFunction for LazyResolvent<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let key: Vec<i64> = x.iter().map(|v| (v / QUANTUM).round() as i64).collect();
        if let Some(v) = self.memo.get(&key) {
            return Ok(*v);
        }
        if self.counter.fetch_add(1, Ordering::Relaxed) >= self.budget {
            return Err(Error::IterationLimit {
                limit: self.budget,
                context: "inner resolvent solves".into(),
            });
        }
        let snapped: Vec<f64> = key.iter().map(|&k| k as f64 * QUANTUM).collect();
        let v = resolve(self.inner, self.alpha, &snapped, self.dim, self.cost, &self.opts)?.value;
        self.memo.insert(key, v);
        Ok(v)
    }

    fn fd_step(&self) -> f64 {
        1e-4
    }

    fn sup(&self) -> f64 {
        self.inner.sup() - self.alpha * self.cost.infimum()
    }
}

/// `(1 − w) f + w g`.
struct Mix<'a> {
    f: &'a dyn StateFunction,
    g: &'a dyn StateFunction,
    w: f64,
}

impl StateFunction for Mix<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((1.0 - self.w) * self.f.value(x)? + self.w * self.g.value(x)?)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        let mut a = vec![0.0; x.len()];
        let fa = self.f.gradient(x, &mut a)?;
        let gb = self.g.gradient(x, out)?;
        out.iter_mut()
            .zip(&a)
            .for_each(|(o, fa)| *o = (1.0 - self.w) * fa + self.w * *o);
        Ok((1.0 - self.w) * fa + self.w * gb)
    }

    fn fd_step(&self) -> f64 {
        self.f.fd_step().max(self.g.fd_step())
    }

    fn sup(&self) -> f64 {
        (1.0 - self.w) * self.f.sup() + self.w * self.g.sup()
    }
}

#[derive(Clone, Debug)]
pub struct SemigroupOptions {
    pub n: usize,
    /// Settings of the outermost resolvent.
    pub outer: ValueOptions,
    /// Settings of every lazily evaluated inner resolvent.
    pub inner: ValueOptions,
    /// Cap on inner resolvent solves.
    pub budget: usize,
}

impl Default for SemigroupOptions {
    fn default() -> Self {
        Self {
            n: 4,
            outer: ValueOptions {
                knots: 8,
                restarts: 1,
                refine_tol: 0.0,
                ..ValueOptions::default()
            },
            inner: ValueOptions::inner(),
            budget: 200_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SemigroupEstimate {
    pub value: f64,
    pub steps_required: usize,
    pub steps_done: usize,
    /// False when the budget stopped the iteration early or a solve did
    /// not converge.
    pub converged: bool,
    pub inner_solves: usize,
}

/// `S(t)h(x) ≈ R_{1/n}^{⌊nt⌋} h(x)`, each iterate evaluated lazily.
pub fn semigroup(
    h: &dyn StateFunction,
    t: f64,
    x: &[f64],
    dim: usize,
    cost: &dyn RunningCost,
    opts: &SemigroupOptions,
) -> Result<SemigroupEstimate> {
    if opts.n == 0 || !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("need n ≥ 1 and t ≥ 0, got n={} t={t}", opts.n)));
    }
    let steps = (opts.n as f64 * t + 1e-12).floor() as usize;
    let counter = AtomicUsize::new(0);
    let mut out = SemigroupEstimate {
        value: h.value(x)?,
        steps_required: steps,
        steps_done: 0,
        converged: true,
        inner_solves: 0,
    };
    if steps == 0 {
        return Ok(out);
    }
    descend(h, 1, x, dim, cost, opts, &counter, &mut out)?;
    out.inner_solves = counter.load(Ordering::Relaxed);
    Ok(out)
}

/// Solve at `depth` with `inner` as terminal data, then go one level deeper
/// with the lazily evaluated result as the next terminal data.
#[allow(clippy::too_many_arguments)]
fn descend(
    inner: &dyn StateFunction,
    depth: usize,
    x: &[f64],
    dim: usize,
    cost: &dyn RunningCost,
    opts: &SemigroupOptions,
    counter: &AtomicUsize,
    out: &mut SemigroupEstimate,
) -> Result<()> {
    let alpha = 1.0 / opts.n as f64;
    match resolve(inner, alpha, x, dim, cost, &opts.outer) {
        Ok(est) => {
            out.value = est.value;
            out.steps_done = depth;
            out.converged &= est.converged;
        }
        Err(Error::IterationLimit { .. }) => {
            out.converged = false;
            return Ok(());
        }
        Err(e) => return Err(e),
    }
    if depth == out.steps_required {
        return Ok(());
    }
    let next = LazyResolvent::new(inner, alpha, dim, cost, opts.inner.clone(), counter, opts.budget);
    descend(&next, depth + 1, x, dim, cost, opts, counter, out)
}

#[derive(Clone, Debug)]
pub struct IdentityReport {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub max_residual: f64,
}

/// Both sides of `R_α h = R_β(R_α h − β (R_α h − h)/α)` at the query points.
pub fn resolvent_identity_check(
    h: &dyn StateFunction,
    alpha: f64,
    beta: f64,
    points: &[Vec<f64>],
    dim: usize,
    cost: &dyn RunningCost,
    opts: &SemigroupOptions,
) -> Result<IdentityReport> {
    if !(alpha > beta && beta > 0.0) {
        return Err(Error::Parameter(format!("need alpha > beta > 0, got {alpha} and {beta}")));
    }
    let counter = AtomicUsize::new(0);
    let lazy = LazyResolvent::new(h, alpha, dim, cost, opts.inner.clone(), &counter, opts.budget);
    let g = Mix {
        f: &lazy,
        g: h,
        w: beta / alpha,
    };
    let pairs = par::map(points, |x| -> Result<(f64, f64)> {
        let lhs = resolve(h, alpha, x, dim, cost, &opts.inner)?.value;
        let rhs = resolve(&g, beta, x, dim, cost, &opts.outer)?.value;
        Ok((lhs, rhs))
    });
    let mut report = IdentityReport {
        lhs: vec![],
        rhs: vec![],
        max_residual: 0.0,
    };
    for p in pairs {
        let (l, r) = p?;
        report.max_residual = report.max_residual.max((l - r).abs());
        report.lhs.push(l);
        report.rhs.push(r);
    }
    Ok(report)
}

/// Deterministic quantile sample `F⁻¹((i + ½)/N)` of a normal law on the line.
pub fn quantile_sample(mean: f64, sd: f64, n: usize) -> Result<Vec<f64>> {
    let law = Gaussian::new(mean, sd).map_err(|e| Error::Parameter(format!("reference density: {e}")))?;
    Ok((0..n)
        .map(|i| law.inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect())
}

#[derive(Clone, Debug)]
pub struct ConvergeSetup {
    pub alpha: f64,
    /// `(N, ε_N)` entries.
    pub schedule: Vec<(usize, f64)>,
    /// Normal reference density on the line.
    pub mean: f64,
    pub sd: f64,
    /// Atoms of the continuum stand-in for `ρ`.
    pub continuum_atoms: usize,
    pub opts: ValueOptions,
}

/// `ε_N = N^{−1/2}`.
pub fn default_schedule(ns: &[usize]) -> Vec<(usize, f64)> {
    ns.iter().map(|&n| (n, 1.0 / (n as f64).sqrt())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeRow {
    pub n: usize,
    pub eps: f64,
    pub d_emp_to_target: f64,
    pub f_n: f64,
    pub f_limit: f64,
    pub error: f64,
    pub converged: bool,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergeTable {
    pub rows: Vec<ConvergeRow>,
    pub limit: ValueEstimate,
}

/// One row per schedule entry: `f_N(x_N)` against the continuum value `f(ρ)`.
pub fn converge_harness(
    h: &TerminalData,
    setup: &ConvergeSetup,
    model: &MicroModel,
    macro_: &MacroPotentials,
    table: &EffectiveTable,
) -> Result<ConvergeTable> {
    if h.growth_rate().is_none() {
        return Err(Error::Precondition(
            "terminal data needs a recorded growth bound for the limit theorem".into(),
        ));
    }
    if model.dim != 1 || table.dim() != 1 {
        return Err(Error::Unsupported("the harness samples clouds on the line".into()));
    }
    if setup.schedule.iter().any(|&(n, e)| n == 0 || !(e > 0.0)) {
        return Err(Error::Parameter("schedule needs N ≥ 1 and ε_N > 0".into()));
    }
    let target = EmpiricalMeasure::line(&quantile_sample(setup.mean, setup.sd, setup.continuum_atoms)?)?;
    let limit = resolve_continuum(h, setup.alpha, &target, table, macro_, &setup.opts)?;
    let rows = par::map(&setup.schedule, |&(n, eps)| -> Result<ConvergeRow> {
        let start = Instant::now();
        let x = quantile_sample(setup.mean, setup.sd, n)?;
        let d = wasserstein_unequal(&EmpiricalMeasure::line(&x)?, &target, 2.0)?;
        let est = resolve_particle(h, setup.alpha, &x, model, macro_, eps, &setup.opts)?;
        Ok(ConvergeRow {
            n,
            eps,
            d_emp_to_target: d,
            f_n: est.value,
            f_limit: limit.value,
            error: (est.value - limit.value).abs(),
            converged: est.converged,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    });
    Ok(ConvergeTable {
        rows: rows.into_iter().collect::<Result<_>>()?,
        limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discount_knots_split_the_mass() {
        let t = discount_knots(2.0, 10.0, 4);
        let mass: Vec<f64> = t.windows(2).map(|w| (-w[0] / 2.0).exp() - (-w[1] / 2.0).exp()).collect();
        for m in &mass {
            assert!((m - mass[0]).abs() < 1e-14);
        }
        assert_eq!(t[4], 10.0);
    }

    #[test]
    fn constant_is_fixed() {
        let model = MicroModel::free(1);
        let z = MacroPotentials::zero();
        let est = resolve_particle(&TerminalData::Constant(0.7), 1.5, &[0.2, -1.0], &model, &z, 0.1, &ValueOptions::default())
            .unwrap();
        assert!((est.value - 0.7).abs() < 1e-12, "{}", est.value);
        assert!(est.tail_bound >= 0.0);
    }
}
