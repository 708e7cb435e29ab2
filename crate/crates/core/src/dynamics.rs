//! Rescaled N-particle flow, path actions and minimal actions.

use crate::error::{ensure_finite, Error, Result};
use crate::model::{particle_lagrangian, rescaled_hn, Hamiltonian, MacroPotentials, MicroModel};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::quad::GAUSS3;
use crate::{par, sum};
use rand_distr::{Distribution, Normal};

/// Positions and momenta of `N` particles in `ℝ^d`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub t: f64,
    pub dim: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub eps: f64,
}

impl ParticleState {
    pub fn new(dim: usize, x: Vec<f64>, p: Vec<f64>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
        }
        if dim == 0 || x.is_empty() || x.len() % dim != 0 || x.len() != p.len() {
            return Err(Error::InvalidInput(format!(
                "positions ({}) and momenta ({}) must both hold N·{dim} values",
                x.len(),
                p.len()
            )));
        }
        ensure_finite(&x, "positions")?;
        ensure_finite(&p, "momenta")?;
        Ok(Self { t: 0.0, dim, x, p, eps })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Particle `i` of the new state is particle `perm[i]` of this one.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let pick = |v: &[f64]| perm.iter().flat_map(|&j| v[j * d..(j + 1) * d].to_vec()).collect();
        Self {
            t: self.t,
            dim: d,
            x: pick(&self.x),
            p: pick(&self.p),
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<ParticleState>,
    /// `H_N` at every recorded state.
    pub energy: Vec<f64>,
    /// False when the explicit fourth-order fallback was used.
    pub symplectic: bool,
    /// `dt > ε/10`.
    pub stiff: bool,
}

impl Trajectory {
    pub fn last(&self) -> &ParticleState {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// `max_t |H_N(t) − H_N(0)| / |H_N(0)|` (absolute drift when `H_N(0) = 0`).
    pub fn relative_drift(&self) -> f64 {
        let e0 = self.energy[0];
        let scale = if e0 != 0.0 { e0.abs() } else { 1.0 };
        self.energy.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
    }
}

/// `−(1/ε) ∇_q H(x_i/ε, P_i) + ∇U(x_i) + (2/N) Σ_j ∇V(x_i − x_j)` and `∇_p H`.
fn rates(
    model: &MicroModel,
    macro_: &MacroPotentials,
    eps: f64,
    x: &[f64],
    p: &[f64],
    dx: &mut [f64],
    dp: &mut [f64],
) -> Result<()> {
    let d = model.dim;
    let n = x.len() / d;
    let mut q = vec![0.0; d];
    let mut gq = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut f = vec![0.0; d];
    for i in 0..n {
        let r = i * d..(i + 1) * d;
        q.iter_mut().zip(&x[r.clone()]).for_each(|(o, v)| *o = v / eps);
        model.gradients(&q, &p[r.clone()], &mut gq, &mut gp)?;
        macro_.force(x, d, i, &mut f);
        for a in 0..d {
            dx[i * d + a] = gp[a];
            dp[i * d + a] = -gq[a] / eps + f[a];
        }
    }
    Ok(())
}

/// Integrate the rescaled flow, recording every step.
pub fn integrate(
    state: &ParticleState,
    model: &MicroModel,
    macro_: &MacroPotentials,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    integrate_strided(state, model, macro_, dt, steps, 1)
}

/// Integrate the rescaled flow, recording every `stride`-th step and the last one.
///
/// Separable models use the Störmer–Verlet (leapfrog) splitting; tabulated
/// ones fall back to classical RK4 with `symplectic = false`.
pub fn integrate_strided(
    state: &ParticleState,
    model: &MicroModel,
    macro_: &MacroPotentials,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    if state.dim != model.dim {
        return Err(Error::InvalidInput(format!(
            "state dimension {} differs from model dimension {}",
            state.dim, model.dim
        )));
    }
    let stride = stride.max(1);
    let eps = state.eps;
    let symplectic = model.is_separable();
    let m = state.x.len();
    let mut x = state.x.clone();
    let mut p = state.p.clone();
    let mut dx = vec![0.0; m];
    let mut dp = vec![0.0; m];
    let mut out = Trajectory {
        states: vec![state.clone()],
        energy: vec![rescaled_hn(model, macro_, eps, &x, &p)?],
        symplectic,
        stiff: dt > eps / 10.0,
    };
    let t0 = state.t;
    if symplectic {
        rates(model, macro_, eps, &x, &p, &mut dx, &mut dp)?;
        for step in 1..=steps {
            for k in 0..m {
                p[k] += 0.5 * dt * dp[k];
            }
            // ∇_p H = p for the quadratic kinetic part
            for k in 0..m {
                x[k] += dt * p[k];
            }
            rates(model, macro_, eps, &x, &p, &mut dx, &mut dp)?;
            for k in 0..m {
                p[k] += 0.5 * dt * dp[k];
            }
            record(&mut out, model, macro_, state, step, steps, stride, t0 + step as f64 * dt, &x, &p)?;
        }
    } else {
        let mut kx = vec![vec![0.0; m]; 4];
        let mut kp = vec![vec![0.0; m]; 4];
        let mut xs = vec![0.0; m];
        let mut ps = vec![0.0; m];
        for step in 1..=steps {
            for s in 0..4 {
                let c = [0.0, 0.5, 0.5, 1.0][s];
                for k in 0..m {
                    xs[k] = x[k] + if s == 0 { 0.0 } else { c * dt * kx[s - 1][k] };
                    ps[k] = p[k] + if s == 0 { 0.0 } else { c * dt * kp[s - 1][k] };
                }
                let (a, b) = (&mut kx[s], &mut kp[s]);
                rates(model, macro_, eps, &xs, &ps, a, b)?;
            }
            for k in 0..m {
                x[k] += dt / 6.0 * (kx[0][k] + 2.0 * kx[1][k] + 2.0 * kx[2][k] + kx[3][k]);
                p[k] += dt / 6.0 * (kp[0][k] + 2.0 * kp[1][k] + 2.0 * kp[2][k] + kp[3][k]);
            }
            record(&mut out, model, macro_, state, step, steps, stride, t0 + step as f64 * dt, &x, &p)?;
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn record(
    out: &mut Trajectory,
    model: &MicroModel,
    macro_: &MacroPotentials,
    start: &ParticleState,
    step: usize,
    steps: usize,
    stride: usize,
    t: f64,
    x: &[f64],
    p: &[f64],
) -> Result<()> {
    if step % stride == 0 || step == steps {
        ensure_finite(x, "positions")?;
        ensure_finite(p, "momenta")?;
        out.energy.push(rescaled_hn(model, macro_, start.eps, x, p)?);
        out.states.push(ParticleState {
            t,
            dim: start.dim,
            x: x.to_vec(),
            p: p.to_vec(),
            eps: start.eps,
        });
    }
    Ok(())
}

/// Piecewise-linear paths of `N` particles through knots at increasing times.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Configuration (`N·d` values) at each knot.
    pub knots: Vec<Vec<f64>>,
}

impl PathEnsemble {
    pub fn new(dim: usize, times: Vec<f64>, knots: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != knots.len() {
            return Err(Error::InvalidInput(format!(
                "need at least two knots with one time each, got {} times and {} knots",
                times.len(),
                knots.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("knot times must increase strictly".into()));
        }
        let m = knots[0].len();
        if dim == 0 || m == 0 || m % dim != 0 || knots.iter().any(|k| k.len() != m) {
            return Err(Error::InvalidInput("knots must all hold N·d values".into()));
        }
        for k in &knots {
            ensure_finite(k, "knot positions")?;
        }
        Ok(Self { dim, times, knots })
    }

    /// Particles resting at `x` over `[0, horizon]`.
    pub fn resting(dim: usize, x: &[f64], horizon: f64, intervals: usize) -> Result<Self> {
        Self::straight(dim, x, x, horizon, intervals)
    }

    /// Straight lines from `x0` to `x1` over `[0, horizon]` with uniform knots.
    pub fn straight(dim: usize, x0: &[f64], x1: &[f64], horizon: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 || !(horizon > 0.0) {
            return Err(Error::Parameter("need a positive horizon and at least one interval".into()));
        }
        let times: Vec<f64> = (0..=intervals).map(|k| horizon * k as f64 / intervals as f64).collect();
        let knots = (0..=intervals)
            .map(|k| {
                let s = k as f64 / intervals as f64;
                x0.iter().zip(x1).map(|(a, b)| a + s * (b - a)).collect()
            })
            .collect();
        Self::new(dim, times, knots)
    }

    pub fn particles(&self) -> usize {
        self.knots[0].len() / self.dim
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Constant velocity on interval `k`.
    pub fn velocity(&self, k: usize) -> Vec<f64> {
        let h = self.times[k + 1] - self.times[k];
        self.knots[k + 1]
            .iter()
            .zip(&self.knots[k])
            .map(|(b, a)| (b - a) / h)
            .collect()
    }

    /// Configuration at time `t` (clamped to the knot range).
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return self.knots[0].clone();
        }
        if t >= self.times[last] {
            return self.knots[last].clone();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let th = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.knots[k]
            .iter()
            .zip(&self.knots[k + 1])
            .map(|(a, b)| a + th * (b - a))
            .collect()
    }

    /// Insert a knot at the midpoint of every interval (same path).
    pub fn refined(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        let mut knots = Vec::with_capacity(times.capacity());
        for k in 0..self.intervals() {
            times.push(self.times[k]);
            knots.push(self.knots[k].clone());
            times.push(0.5 * (self.times[k] + self.times[k + 1]));
            knots.push(
                self.knots[k]
                    .iter()
                    .zip(&self.knots[k + 1])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
            );
        }
        times.push(*self.times.last().expect("nonempty"));
        knots.push(self.knots.last().expect("nonempty").clone());
        Self { dim: self.dim, times, knots }
    }

    /// Knots at the given times, read off this path.
    pub fn resampled(&self, times: &[f64]) -> Result<Self> {
        Self::new(self.dim, times.to_vec(), times.iter().map(|&t| self.position_at(t)).collect())
    }
}

/// Running cost `L(x, v)` over whole configurations.
pub trait RunningCost: Sync {
    /// Value, writing `∂L/∂x` and `∂L/∂v` when buffers are given.
    fn eval(&self, x: &[f64], v: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> Result<f64>;

    /// Lower bound of `L` over all configurations.
    fn infimum(&self) -> f64;
}

/// `L_N(x, v) = (1/N) Σ_i [𝖫(x_i/ε, v_i) + U(x_i) + (1/N) Σ_j V(x_i − x_j)]`.
pub struct ParticleCost<'a> {
    pub model: &'a MicroModel,
    pub macro_: &'a MacroPotentials,
    pub eps: f64,
}

impl RunningCost for ParticleCost<'_> {
    fn eval(&self, x: &[f64], v: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> Result<f64> {
        let value = particle_lagrangian(self.model, self.macro_, self.eps, x, v)?;
        let Some((gx, gv)) = grad else {
            return Ok(value);
        };
        let d = self.model.dim;
        let n = x.len() / d;
        let nf = n as f64;
        match &self.model.hamiltonian {
            Hamiltonian::Quadratic(u) => {
                let mut q = vec![0.0; d];
                let mut gu = vec![0.0; d];
                let mut f = vec![0.0; d];
                for i in 0..n {
                    let r = i * d..(i + 1) * d;
                    q.iter_mut().zip(&x[r.clone()]).for_each(|(o, a)| *o = a / self.eps);
                    u.gradient(&q, &mut gu);
                    self.macro_.force(x, d, i, &mut f);
                    for a in 0..d {
                        gx[i * d + a] = (gu[a] / self.eps + f[a]) / nf;
                        gv[i * d + a] = v[i * d + a] / nf;
                    }
                }
            }
            Hamiltonian::Tabulated(_) => {
                // the grid conjugate is only piecewise smooth: central differences
                let h = 1e-6;
                let mut xs = x.to_vec();
                let mut vs = v.to_vec();
                for k in 0..x.len() {
                    let orig = xs[k];
                    xs[k] = orig + h;
                    let a = particle_lagrangian(self.model, self.macro_, self.eps, &xs, v)?;
                    xs[k] = orig - h;
                    let b = particle_lagrangian(self.model, self.macro_, self.eps, &xs, v)?;
                    xs[k] = orig;
                    gx[k] = (a - b) / (2.0 * h);
                    let orig = vs[k];
                    vs[k] = orig + h;
                    let a = particle_lagrangian(self.model, self.macro_, self.eps, x, &vs)?;
                    vs[k] = orig - h;
                    let b = particle_lagrangian(self.model, self.macro_, self.eps, x, &vs)?;
                    vs[k] = orig;
                    gv[k] = (a - b) / (2.0 * h);
                }
            }
        }
        Ok(value)
    }

    fn infimum(&self) -> f64 {
        self.model.inf_lagrangian() + self.macro_.u.infimum() + self.macro_.v.bounds().0
    }
}

/// Time weight of an action integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weight {
    Unit,
    /// `e^{−s/α}`; nodes are placed in `u = 1 − e^{−s/α}`, so the weight
    /// itself is integrated exactly.
    Discount(f64),
}

impl Weight {
    /// Fractions within `[t0, t1]` and weights of the three nodes.
    fn rule(self, t0: f64, t1: f64) -> [(f64, f64); 3] {
        let h = t1 - t0;
        let mut out = [(0.0, 0.0); 3];
        match self {
            Self::Unit => {
                for (o, &(x, w)) in out.iter_mut().zip(&GAUSS3) {
                    *o = (0.5 * (1.0 + x), 0.5 * w * h);
                }
            }
            Self::Discount(alpha) => {
                let u0 = -(-t0 / alpha).exp_m1();
                let u1 = -(-t1 / alpha).exp_m1();
                let (mid, r) = (0.5 * (u0 + u1), 0.5 * (u1 - u0));
                for (o, &(x, w)) in out.iter_mut().zip(&GAUSS3) {
                    let s = -alpha * (-(mid + r * x)).ln_1p();
                    *o = (((s - t0) / h).clamp(0.0, 1.0), alpha * r * w);
                }
            }
        }
        out
    }
}

/// `∫ w(s) L(z(s), ż(s)) ds` by 3-point Gauss on every interval, with the
/// gradient with respect to all knot coordinates (flattened knot-major).
pub fn weighted_action(
    path: &PathEnsemble,
    cost: &dyn RunningCost,
    weight: Weight,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let m = path.knots[0].len();
    if let Some(g) = grad.as_deref_mut() {
        if g.len() != m * path.knots.len() {
            return Err(Error::InvalidInput("gradient buffer has the wrong length".into()));
        }
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut parts = Vec::with_capacity(3 * path.intervals());
    let mut z = vec![0.0; m];
    let mut gx = vec![0.0; m];
    let mut gv = vec![0.0; m];
    for k in 0..path.intervals() {
        let (t0, t1) = (path.times[k], path.times[k + 1]);
        let h = t1 - t0;
        let v = path.velocity(k);
        for (th, c) in weight.rule(t0, t1) {
            let (a, b) = (&path.knots[k], &path.knots[k + 1]);
            for i in 0..m {
                z[i] = a[i] + th * (b[i] - a[i]);
            }
            match grad.as_deref_mut() {
                Some(g) => {
                    let l = cost.eval(&z, &v, Some((&mut gx, &mut gv)))?;
                    parts.push(c * l);
                    for i in 0..m {
                        g[k * m + i] += c * ((1.0 - th) * gx[i] - gv[i] / h);
                        g[(k + 1) * m + i] += c * (th * gx[i] + gv[i] / h);
                    }
                }
                None => parts.push(c * cost.eval(&z, &v, None)?),
            }
        }
    }
    Ok(sum::compensated(parts))
}

/// `∫ L_N(z, ż) dt` along the path.
pub fn action_of_path(
    path: &PathEnsemble,
    model: &MicroModel,
    macro_: &MacroPotentials,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    weighted_action(path, &ParticleCost { model, macro_, eps }, Weight::Unit, None)
}

/// `T · (inf 𝖫 + inf U + inf V)`, below every path action over `[0, T]`.
pub fn action_lower_bound(model: &MicroModel, macro_: &MacroPotentials, horizon: f64) -> f64 {
    horizon * (model.inf_lagrangian() + macro_.u.infimum() + macro_.v.bounds().0)
}

#[derive(Clone, Debug)]
pub struct ActionOptions {
    /// Intervals of the piecewise-linear ansatz.
    pub knots: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Replaces the straight-line start when given (resampled to the knots).
    pub warm_start: Option<PathEnsemble>,
}

impl Default for ActionOptions {
    fn default() -> Self {
        Self {
            knots: 16,
            restarts: 4,
            seed: 0,
            max_iter: 500,
            grad_tol: 1e-9,
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimalAction {
    pub value: f64,
    pub path: PathEnsemble,
    pub converged: bool,
    pub restarts: usize,
}

/// Best local minimum of the action over piecewise-linear paths from `x0`
/// to `x1` in time `horizon`; an upper bound on the minimal action.
pub fn minimal_action(
    x0: &[f64],
    x1: &[f64],
    horizon: f64,
    model: &MicroModel,
    macro_: &MacroPotentials,
    eps: f64,
    opts: &ActionOptions,
) -> Result<MinimalAction> {
    if x0.len() != x1.len() {
        return Err(Error::InvalidInput("endpoints have different shapes".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let d = model.dim;
    let base = PathEnsemble::straight(d, x0, x1, horizon, opts.knots)?;
    let first = match &opts.warm_start {
        Some(w) => {
            let mut p = w.resampled(&base.times)?;
            // endpoints stay pinned
            p.knots[0] = x0.to_vec();
            *p.knots.last_mut().expect("nonempty") = x1.to_vec();
            p
        }
        None => base.clone(),
    };
    let m = x0.len();
    let interior = opts.knots - 1;
    let spread = 0.1 * (1.0 + x0.iter().zip(x1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    let normal = Normal::new(0.0, spread).expect("positive spread");
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            let mut z: Vec<f64> = first.knots[1..=interior].concat();
            if r > 0 {
                let mut rng = par::stream(opts.seed, r as u64);
                z.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
            z
        })
        .collect();
    let cost = ParticleCost { model, macro_, eps };
    let lopts = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        ..LbfgsOptions::default()
    };
    let assemble = |z: &[f64]| -> PathEnsemble {
        let mut p = base.clone();
        for k in 0..interior {
            p.knots[k + 1] = z[k * m..(k + 1) * m].to_vec();
        }
        p
    };
    let runs = par::map(&starts, |z0| {
        let mut full = vec![0.0; m * (opts.knots + 1)];
        let mut failure = None;
        let res = lbfgs(
            |z, g| {
                let path = assemble(z);
                match weighted_action(&path, &cost, Weight::Unit, Some(&mut full)) {
                    Ok(v) => {
                        g.copy_from_slice(&full[m..m * (interior + 1)]);
                        v
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        g.iter_mut().for_each(|x| *x = 0.0);
                        f64::INFINITY
                    }
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
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for r in runs {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.value < b.0) {
            best = Some((r.value, r.x, r.converged));
        }
    }
    let (_, z, converged) = best.expect("at least one start");
    let path = assemble(&z);
    Ok(MinimalAction {
        value: weighted_action(&path, &cost, Weight::Unit, None)?,
        path,
        converged,
        restarts: starts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_flow_is_straight() {
        let m = MicroModel::free(1);
        let z = MacroPotentials::zero();
        let s = ParticleState::new(1, vec![0.0, 1.0], vec![0.5, -2.0], 0.1).unwrap();
        let tr = integrate(&s, &m, &z, 0.01, 100).unwrap();
        let e = tr.last();
        assert!((e.x[0] - 0.5).abs() < 1e-12 && (e.x[1] + 1.0).abs() < 1e-12);
        assert_eq!(e.p, s.p);
        assert!(tr.symplectic && !tr.stiff);
    }

    #[test]
    fn free_single_particle_action() {
        let m = MicroModel::free(1);
        let z = MacroPotentials::zero();
        let p = PathEnsemble::straight(1, &[0.0], &[1.0], 1.0, 4).unwrap();
        assert!((action_of_path(&p, &m, &z, 0.1).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn refinement_keeps_the_path() {
        let p = PathEnsemble::new(1, vec![0.0, 1.0, 3.0], vec![vec![0.0], vec![2.0], vec![1.0]]).unwrap();
        let r = p.refined();
        assert_eq!(r.times, vec![0.0, 0.5, 1.0, 2.0, 3.0]);
        for t in [0.2, 0.7, 1.5, 2.9] {
            assert!((p.position_at(t)[0] - r.position_at(t)[0]).abs() < 1e-15);
        }
    }
}
