//! Sampled effective Hamiltonian with error bars and its Legendre dual.

use super::explicit::effective_h_1d;
use super::minimax::{effective_h_minimax, MinimaxOptions};
use crate::error::{Error, Result};
use crate::grid::{Axis, GridFunction};
use crate::model::{legendre, Conjugate, Hamiltonian, MicroModel};
use crate::par;

#[derive(Clone, Debug)]
pub struct TableOptions {
    pub minimax: MinimaxOptions,
    /// Tolerance for the explicit one-dimensional values.
    pub tol: f64,
    /// Also compute the explicit value where the model allows it.
    pub explicit: bool,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            minimax: MinimaxOptions::default(),
            tol: 1e-10,
            explicit: true,
        }
    }
}

/// `H̄` sampled on a P grid (lower/upper brackets, optional explicit values)
/// together with the discrete conjugate `𝖫̄` on a v grid.
#[derive(Clone, Debug)]
pub struct EffectiveTable {
    p_axes: Vec<Axis>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub explicit: Option<Vec<f64>>,
    /// Corrector modes used per axis (0 for closed-form tables).
    pub modes: usize,
    pub converged: bool,
    midpoint: GridFunction,
    dual: Conjugate,
}

/// One-sided and centred differences of `H̄` along each axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Slope {
    pub centered: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    /// Left and right differences disagree beyond the second-order slack.
    pub nonsmooth: bool,
}

/// Outcome of [`EffectiveTable::check`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableReport {
    pub inverted: usize,
    pub convexity_violations: usize,
    pub growth_violations: usize,
}

impl TableReport {
    pub fn ok(&self) -> bool {
        self.inverted == 0 && self.convexity_violations == 0 && self.growth_violations == 0
    }
}

impl EffectiveTable {
    /// Minimax brackets at every P node, in parallel over nodes.
    pub fn build(
        model: &MicroModel,
        p_axes: Vec<Axis>,
        v_axes: Vec<Axis>,
        opts: &TableOptions,
    ) -> Result<Self> {
        if p_axes.len() != model.dim || v_axes.len() != model.dim {
            return Err(Error::InvalidInput(format!(
                "table axes must match the model dimension {}",
                model.dim
            )));
        }
        let shape = GridFunction::from_fn(p_axes.clone(), |_| 0.0)?;
        let explicit_potential = match (&model.hamiltonian, opts.explicit && model.dim == 1) {
            (Hamiltonian::Quadratic(u), true) => Some(u.clone()),
            _ => None,
        };
        let rows = par::map_range(shape.len(), |k| -> Result<(f64, f64, Option<f64>, bool)> {
            let p = shape.point(k);
            let b = effective_h_minimax(model, &p, &opts.minimax)?;
            let e = match &explicit_potential {
                Some(u) => Some(effective_h_1d(u, p[0], opts.tol)?),
                None => None,
            };
            Ok((b.lower, b.upper, e, b.converged))
        });
        let rows: Vec<_> = rows.into_iter().collect::<Result<_>>()?;
        let explicit = explicit_potential
            .is_some()
            .then(|| rows.iter().map(|r| r.2.expect("computed")).collect());
        Self::assemble(
            p_axes,
            v_axes,
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            explicit,
            opts.minimax.modes,
            rows.iter().all(|r| r.3),
        )
    }

    /// Table of a known effective Hamiltonian (zero-width brackets).
    pub fn from_fn(p_axes: Vec<Axis>, v_axes: Vec<Axis>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let g = GridFunction::from_fn(p_axes.clone(), f)?;
        let vals = g.values().to_vec();
        Self::assemble(p_axes, v_axes, vals.clone(), vals.clone(), Some(vals), 0, true)
    }

    /// `½|P|²`, the free and ideal-gas case.
    pub fn quadratic(p_axes: Vec<Axis>, v_axes: Vec<Axis>) -> Result<Self> {
        Self::from_fn(p_axes, v_axes, |p| 0.5 * p.iter().map(|x| x * x).sum::<f64>())
    }

    /// One-dimensional table from the explicit formula alone.
    pub fn explicit_1d(
        u: &crate::model::PeriodicPotential,
        p_axis: Axis,
        v_axis: Axis,
        tol: f64,
    ) -> Result<Self> {
        let vals: Vec<f64> = p_axis
            .points()
            .iter()
            .map(|&p| effective_h_1d(u, p, tol))
            .collect::<Result<_>>()?;
        Self::assemble(vec![p_axis], vec![v_axis], vals.clone(), vals.clone(), Some(vals), 0, true)
    }

    fn assemble(
        p_axes: Vec<Axis>,
        v_axes: Vec<Axis>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        explicit: Option<Vec<f64>>,
        modes: usize,
        converged: bool,
    ) -> Result<Self> {
        let mid = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let midpoint = GridFunction::new(p_axes.clone(), mid)?;
        let dual = legendre(&midpoint, &v_axes)?;
        Ok(Self {
            p_axes,
            lower,
            upper,
            explicit,
            modes,
            converged,
            midpoint,
            dual,
        })
    }

    pub fn dim(&self) -> usize {
        self.p_axes.len()
    }

    pub fn p_axes(&self) -> &[Axis] {
        &self.p_axes
    }

    pub fn v_axes(&self) -> &[Axis] {
        self.dual.values.axes()
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// P coordinates of node `k`.
    pub fn p_point(&self, k: usize) -> Vec<f64> {
        self.midpoint.point(k)
    }

    pub fn midpoints(&self) -> &GridFunction {
        &self.midpoint
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn max_width(&self) -> f64 {
        (0..self.len()).map(|k| self.width(k)).fold(0.0, f64::max)
    }

    pub fn dual(&self) -> &Conjugate {
        &self.dual
    }

    /// Dual nodes whose maximiser sits on the edge of the P grid.
    pub fn saturated(&self) -> bool {
        self.dual.interior_saturated()
    }

    /// `H̄(P)` from the bracket midpoints (cubic interpolation).
    pub fn h_bar(&self, p: &[f64]) -> Result<f64> {
        if !self.midpoint.contains(p) {
            return Err(Error::Extrapolation {
                what: "momentum",
                point: p.to_vec(),
            });
        }
        self.midpoint.cubic(p, None)
    }

    /// `𝖫̄(v) = max_P (v·P − H̄(P))` over the P grid.
    pub fn lagrangian(&self, v: &[f64]) -> Result<f64> {
        self.lagrangian_with_gradient(v, None)
    }

    /// `𝖫̄(v)` via cubic interpolation of the dual table, with its gradient.
    pub fn lagrangian_with_gradient(&self, v: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        if !self.dual.values.contains(v) {
            return Err(Error::Extrapolation {
                what: "velocity",
                point: v.to_vec(),
            });
        }
        self.dual.values.cubic(v, grad)
    }

    /// `𝖫̄` extended outside the v grid by its tangent plane at the nearest
    /// edge point plus ½ of the squared excess; the flag reports the excursion.
    pub fn lagrangian_extended(&self, v: &[f64], grad: &mut [f64]) -> Result<(f64, bool)> {
        let axes = self.dual.values.axes();
        let mut clamped = v.to_vec();
        let mut outside = false;
        for (c, a) in clamped.iter_mut().zip(axes) {
            let lo = a.min;
            let hi = a.max();
            if *c < lo || *c > hi {
                outside = true;
                *c = c.clamp(lo, hi);
            }
        }
        let mut value = self.dual.values.cubic(&clamped, Some(grad))?;
        if outside {
            for ((g, &x), &c) in grad.iter_mut().zip(v).zip(&clamped) {
                let dx = x - c;
                value += *g * dx + 0.5 * dx * dx;
                *g += dx;
            }
        }
        Ok((value, outside))
    }

    /// Exact discrete conjugate at an arbitrary `v` (no interpolation).
    pub fn lagrangian_exact(&self, v: &[f64]) -> f64 {
        crate::model::conjugate_at(&self.midpoint, v).0
    }

    /// `min_P H̄` over the grid, so that `𝖫̄(0) = −min H̄`.
    pub fn min_value(&self) -> f64 {
        self.midpoint.min_value()
    }

    /// Differences of the midpoint table at the nearest P node.
    pub fn slope(&self, p: &[f64]) -> Result<Slope> {
        if !self.midpoint.contains(p) {
            return Err(Error::Extrapolation {
                what: "momentum",
                point: p.to_vec(),
            });
        }
        let d = self.dim();
        let mut s = Slope {
            centered: vec![0.0; d],
            left: vec![0.0; d],
            right: vec![0.0; d],
            nonsmooth: false,
        };
        for a in 0..d {
            let h = self.p_axes[a].step;
            let mut lo = p.to_vec();
            let mut hi = p.to_vec();
            lo[a] -= h;
            hi[a] += h;
            let f0 = self.h_bar(p)?;
            let fl = if self.midpoint.contains(&lo) { Some(self.h_bar(&lo)?) } else { None };
            let fr = if self.midpoint.contains(&hi) { Some(self.h_bar(&hi)?) } else { None };
            let left = fl.map(|v| (f0 - v) / h);
            let right = fr.map(|v| (v - f0) / h);
            s.left[a] = left.or(right).unwrap_or(0.0);
            s.right[a] = right.or(left).unwrap_or(0.0);
            s.centered[a] = match (fl, fr) {
                (Some(l), Some(r)) => (r - l) / (2.0 * h),
                _ => s.left[a],
            };
            // a smooth H̄ with curvature κ gives right − left ≈ κ h; flag jumps
            // well beyond what the local second difference allows
            let kink = (s.right[a] - s.left[a]).abs();
            let scale = 1.0 + s.centered[a].abs();
            if kink > 0.5 * scale.sqrt() * h.sqrt() && kink > 4.0 * h * scale {
                s.nonsmooth = true;
            }
        }
        Ok(s)
    }

    /// Sandwich, midpoint convexity (within bracket widths) and the growth
    /// bound `−c + |P|²/C ≤ H̄ ≤ c + C|P|²`.
    pub fn check(&self, c: f64, big_c: f64) -> TableReport {
        let mut r = TableReport::default();
        let slack = 1e-9;
        for k in 0..self.len() {
            if self.lower[k] > self.upper[k] + slack {
                r.inverted += 1;
            }
            let p = self.p_point(k);
            let p2: f64 = p.iter().map(|x| x * x).sum();
            let m = self.midpoint.values()[k];
            if m < -c + p2 / big_c - slack || m > c + big_c * p2 + slack {
                r.growth_violations += 1;
            }
        }
        let d = self.dim();
        for k in 0..self.len() {
            let idx = self.midpoint.multi_index(k);
            for a in 0..d {
                if idx[a] == 0 || idx[a] + 1 >= self.p_axes[a].len {
                    continue;
                }
                let mut lo = idx.clone();
                let mut hi = idx.clone();
                lo[a] -= 1;
                hi[a] += 1;
                let (kl, kh) = (self.midpoint.flat_index(&lo), self.midpoint.flat_index(&hi));
                let v = self.midpoint.values();
                let allowance = self.width(k) + 0.5 * (self.width(kl) + self.width(kh)) + slack;
                if v[k] > 0.5 * (v[kl] + v[kh]) + allowance {
                    r.convexity_violations += 1;
                }
            }
        }
        r
    }
}
