//! Binned hydrodynamic fields and weak-form checks of the Euler system
//! `∂ₜρ + div(ρu) = 0`, `∂ₜm + div M = ρ∇(U + 2V*ρ)`.

use crate::cell::EffectiveTable;
use crate::dynamics::ParticleState;
use crate::error::{Error, Result};
use crate::model::MacroPotentials;
use crate::sum;
use crate::transport::PhaseMeasure;

/// A uniform box of histogram bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Bins {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Bins {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != counts.len() {
            return Err(Error::InvalidInput("bin box needs lo, hi and counts per axis".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) || counts.contains(&0) {
            return Err(Error::Parameter("bins need hi > lo and at least one bin per axis".into()));
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn uniform_1d(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![count])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self, a: usize) -> f64 {
        (self.hi[a] - self.lo[a]) / self.counts[a] as f64
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    /// Flat index of the bin holding `x`; the upper face belongs to the last bin.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for a in 0..self.dim() {
            if !(x[a] >= self.lo[a] && x[a] <= self.hi[a]) {
                return None;
            }
            let k = (((x[a] - self.lo[a]) / self.width(a)) as usize).min(self.counts[a] - 1);
            flat = flat * self.counts[a] + k;
        }
        Some(flat)
    }

    pub fn center(&self, mut flat: usize) -> Vec<f64> {
        let d = self.dim();
        let mut c = vec![0.0; d];
        for a in (0..d).rev() {
            let k = flat % self.counts[a];
            flat /= self.counts[a];
            c[a] = self.lo[a] + (k as f64 + 0.5) * self.width(a);
        }
        c
    }
}

/// Binned moments of one phase-space configuration.
#[derive(Clone, Debug)]
pub struct FieldSnapshot {
    pub t: f64,
    pub bins: Bins,
    /// Atoms per bin.
    pub occupancy: Vec<usize>,
    pub density: Vec<f64>,
    /// `d` values per bin.
    pub velocity: Vec<f64>,
    pub momentum: Vec<f64>,
    /// `d × d` second moments per bin.
    pub flux: Vec<f64>,
    /// `ρ Cov(v)` per bin.
    pub stress: Vec<f64>,
    /// Trace of the velocity covariance over `d`; 0 in empty bins.
    pub temperature: Vec<f64>,
    /// `ρ T`.
    pub pressure: Vec<f64>,
    /// Some momentum fell where the effective Hamiltonian has a kink.
    pub nonsmooth: bool,
}

impl FieldSnapshot {
    pub fn empty_bins(&self) -> usize {
        self.occupancy.iter().filter(|&&c| c == 0).count()
    }

    /// `Σ ρ vol`.
    pub fn total_mass(&self) -> f64 {
        let vol = self.bins.volume();
        sum::compensated(self.density.iter().map(|r| r * vol))
    }
}

/// How particle momenta become velocities: `v = ∇H̄(P)`.
#[derive(Clone, Copy, Debug)]
pub enum VelocityMap<'a> {
    /// Quadratic kinetic energy: `v = P`.
    Identity,
    /// Differences of the effective table; one-sided next to kinks.
    Table(&'a EffectiveTable),
}

/// Fields from positions and velocities (row-major, `d` per atom).
pub fn fields_from_velocities(t: f64, dim: usize, x: &[f64], v: &[f64], bins: &Bins) -> Result<FieldSnapshot> {
    if bins.dim() != dim || x.len() != v.len() || x.is_empty() || x.len() % dim != 0 {
        return Err(Error::InvalidInput("positions, velocities and bins disagree in shape".into()));
    }
    let d = dim;
    let n = x.len() / d;
    let nb = bins.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        match bins.locate(xi) {
            Some(b) => members[b].push(i),
            None => {
                return Err(Error::Coverage {
                    index: i,
                    position: xi.to_vec(),
                })
            }
        }
    }
    let vol = bins.volume();
    let w = 1.0 / (n as f64 * vol);
    let mut snap = FieldSnapshot {
        t,
        bins: bins.clone(),
        occupancy: members.iter().map(|m| m.len()).collect(),
        density: vec![0.0; nb],
        velocity: vec![0.0; nb * d],
        momentum: vec![0.0; nb * d],
        flux: vec![0.0; nb * d * d],
        stress: vec![0.0; nb * d * d],
        temperature: vec![0.0; nb],
        pressure: vec![0.0; nb],
        nonsmooth: false,
    };
    for (b, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let c = idx.len() as f64;
        let rho = c * w;
        snap.density[b] = rho;
        let mean: Vec<f64> = (0..d)
            .map(|a| sum::compensated(idx.iter().map(|&i| v[i * d + a])) / c)
            .collect();
        let mut trace = 0.0;
        for a in 0..d {
            snap.velocity[b * d + a] = mean[a];
            snap.momentum[b * d + a] = rho * mean[a];
            for e in 0..d {
                let second = sum::compensated(idx.iter().map(|&i| v[i * d + a] * v[i * d + e])) / c;
                let cov = sum::compensated(
                    idx.iter()
                        .map(|&i| (v[i * d + a] - mean[a]) * (v[i * d + e] - mean[e])),
                ) / c;
                snap.flux[(b * d + a) * d + e] = rho * second;
                snap.stress[(b * d + a) * d + e] = rho * cov;
                if a == e {
                    trace += cov;
                }
            }
        }
        snap.temperature[b] = (trace / d as f64).max(0.0);
        snap.pressure[b] = rho * snap.temperature[b];
    }
    Ok(snap)
}

/// Fields of a particle state, mapping momenta to velocities.
pub fn fields_from_state(state: &ParticleState, map: VelocityMap, bins: &Bins) -> Result<FieldSnapshot> {
    let (v, nonsmooth) = match map {
        VelocityMap::Identity => (state.p.clone(), false),
        VelocityMap::Table(table) => {
            let d = state.dim;
            let mut v = Vec::with_capacity(state.p.len());
            let mut kink = false;
            for p in state.p.chunks(d) {
                let s = table.slope(p)?;
                kink |= s.nonsmooth;
                v.extend(s.centered);
            }
            (v, kink)
        }
    };
    let mut snap = fields_from_velocities(state.t, state.dim, &state.x, &v, bins)?;
    snap.nonsmooth = nonsmooth;
    Ok(snap)
}

/// Fields of a map-type phase-space measure.
pub fn fields_from_phase(t: f64, nu: &PhaseMeasure, bins: &Bins) -> Result<FieldSnapshot> {
    fields_from_velocities(t, nu.base.dim(), nu.base.atoms(), nu.velocities(), bins)
}

/// Largest `‖M − ρ u⊗u − p Id‖ / ‖M‖` over occupied bins (Frobenius norms).
pub fn ideal_gas_check(snap: &FieldSnapshot) -> f64 {
    let d = snap.bins.dim();
    let mut worst: f64 = 0.0;
    for b in 0..snap.bins.len() {
        if snap.occupancy[b] == 0 {
            continue;
        }
        let rho = snap.density[b];
        let u = &snap.velocity[b * d..(b + 1) * d];
        let mut dev = 0.0;
        let mut norm = 0.0;
        for a in 0..d {
            for e in 0..d {
                let m = snap.flux[(b * d + a) * d + e];
                let closure = rho * u[a] * u[e] + if a == e { snap.pressure[b] } else { 0.0 };
                dev += (m - closure).powi(2);
                norm += m * m;
            }
        }
        if norm > 0.0 {
            worst = worst.max((dev / norm).sqrt());
        }
    }
    worst
}

/// Largest `‖M − ρ u⊗u − ρ Cov‖` over bins; zero up to rounding.
pub fn flux_decomposition_defect(snap: &FieldSnapshot) -> f64 {
    let d = snap.bins.dim();
    let mut worst: f64 = 0.0;
    for b in 0..snap.bins.len() {
        let rho = snap.density[b];
        let u = &snap.velocity[b * d..(b + 1) * d];
        for a in 0..d {
            for e in 0..d {
                let k = (b * d + a) * d + e;
                let closure = rho * u[a] * u[e] + snap.stress[k];
                worst = worst.max((snap.flux[k] - closure).abs());
            }
        }
    }
    worst
}

/// Smooth bump `exp(1 − 1/(1 − r²))`, `r = |x − c|/radius`, supported in the ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Bump {
    pub fn value(&self, x: &[f64]) -> f64 {
        let r2 = self.r2(x);
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - r2)).exp()
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r2 = self.r2(x);
        if r2 >= 1.0 {
            out.iter_mut().for_each(|g| *g = 0.0);
            return;
        }
        let s = 1.0 - r2;
        let f = (1.0 - 1.0 / s).exp();
        // d/dx_a of −1/(1 − r²) = −2 (x_a − c_a) / (radius² s²)
        for ((o, xa), ca) in out.iter_mut().zip(x).zip(&self.center) {
            *o = -f * 2.0 * (xa - ca) / (self.radius * self.radius * s * s);
        }
    }

    fn r2(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| ((a - c) / self.radius).powi(2))
            .sum()
    }

    fn inside(&self, bins: &Bins) -> bool {
        (0..bins.dim()).all(|a| self.center[a] - self.radius >= bins.lo[a] && self.center[a] + self.radius <= bins.hi[a])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
    /// Largest flux term `|∫∇φ·(ρu)|` or `|∫∂φ M|` seen.
    pub flux_scale: f64,
}

impl ResidualStats {
    /// `max / flux_scale`.
    pub fn relative(&self) -> f64 {
        if self.flux_scale > 0.0 {
            self.max / self.flux_scale
        } else {
            self.max
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EulerResidual {
    pub continuity: ResidualStats,
    pub momentum: ResidualStats,
}

fn stats(values: &[f64], scale: f64) -> ResidualStats {
    ResidualStats {
        max: values.iter().fold(0.0, |a, v| a.max(v.abs())),
        mean: if values.is_empty() {
            0.0
        } else {
            values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
        },
        flux_scale: scale,
    }
}

/// Weak-form residuals with centred time differences at interior snapshots.
/// The momentum source `ρ∇(U + 2V*ρ)` is included when `source` is given.
pub fn euler_residual(
    snaps: &[FieldSnapshot],
    tests: &[Bump],
    source: Option<&MacroPotentials>,
) -> Result<EulerResidual> {
    if snaps.len() < 3 {
        return Err(Error::Precondition(format!("need at least 3 snapshots, got {}", snaps.len())));
    }
    let bins = &snaps[0].bins;
    if snaps.iter().any(|s| &s.bins != bins) {
        return Err(Error::InvalidInput("snapshots use different bins".into()));
    }
    let dt = snaps[1].t - snaps[0].t;
    if !(dt > 0.0) || snaps.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.abs().max(1.0)) {
        return Err(Error::Precondition("snapshots need a uniform positive time step".into()));
    }
    if tests.is_empty() || tests.iter().any(|b| b.center.len() != bins.dim() || !(b.radius > 0.0) || !b.inside(bins)) {
        return Err(Error::Precondition("test bumps must lie inside the bin box".into()));
    }
    let d = bins.dim();
    let nb = bins.len();
    let vol = bins.volume();
    let centers: Vec<Vec<f64>> = (0..nb).map(|b| bins.center(b)).collect();
    let phi: Vec<Vec<f64>> = tests.iter().map(|t| centers.iter().map(|c| t.value(c)).collect()).collect();
    let grad: Vec<Vec<f64>> = tests
        .iter()
        .map(|t| {
            let mut g = vec![0.0; d];
            centers
                .iter()
                .flat_map(|c| {
                    t.gradient(c, &mut g);
                    g.clone()
                })
                .collect()
        })
        .collect();
    let integral = |f: &dyn Fn(usize) -> f64| sum::compensated((0..nb).map(|b| f(b) * vol));

    let mut cont = Vec::new();
    let mut mom = Vec::new();
    let mut cont_scale: f64 = 0.0;
    let mut mom_scale: f64 = 0.0;
    for k in 1..snaps.len() - 1 {
        let (prev, cur, next) = (&snaps[k - 1], &snaps[k], &snaps[k + 1]);
        let force = source.map(|m| source_density(cur, &centers, m));
        for (j, _) in tests.iter().enumerate() {
            let (p, g) = (&phi[j], &grad[j]);
            let rate = (integral(&|b| p[b] * next.density[b]) - integral(&|b| p[b] * prev.density[b])) / (2.0 * dt);
            let flux = integral(&|b| (0..d).map(|a| g[b * d + a] * cur.momentum[b * d + a]).sum());
            cont.push(rate - flux);
            cont_scale = cont_scale.max(flux.abs());
            for a in 0..d {
                let rate = (integral(&|b| p[b] * next.momentum[b * d + a])
                    - integral(&|b| p[b] * prev.momentum[b * d + a]))
                    / (2.0 * dt);
                let flux = integral(&|b| (0..d).map(|e| g[b * d + e] * cur.flux[(b * d + a) * d + e]).sum());
                let src = match &force {
                    Some(f) => integral(&|b| p[b] * f[b * d + a]),
                    None => 0.0,
                };
                mom.push(rate - flux - src);
                mom_scale = mom_scale.max(flux.abs()).max(src.abs());
            }
        }
    }
    Ok(EulerResidual {
        continuity: stats(&cont, cont_scale),
        momentum: stats(&mom, mom_scale),
    })
}

/// `ρ ∇(U + 2 V*ρ)` at the bin centres, the convolution over bins.
fn source_density(snap: &FieldSnapshot, centers: &[Vec<f64>], m: &MacroPotentials) -> Vec<f64> {
    let d = snap.bins.dim();
    let vol = snap.bins.volume();
    let mut out = vec![0.0; centers.len() * d];
    let mut g = vec![0.0; d];
    let mut diff = vec![0.0; d];
    for (b, c) in centers.iter().enumerate() {
        if snap.density[b] == 0.0 {
            continue;
        }
        m.u.gradient(c, &mut g);
        let mut total = g.clone();
        for (b2, c2) in centers.iter().enumerate() {
            if snap.density[b2] == 0.0 {
                continue;
            }
            diff.iter_mut().zip(c.iter().zip(c2)).for_each(|(o, (x, y))| *o = x - y);
            m.v.gradient(&diff, &mut g);
            for a in 0..d {
                total[a] += 2.0 * g[a] * snap.density[b2] * vol;
            }
        }
        for a in 0..d {
            out[b * d + a] = snap.density[b] * total[a];
        }
    }
    out
}
