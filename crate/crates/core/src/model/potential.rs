use crate::error::{Error, Result};
use crate::grid::{Axis, GridFunction};
use std::f64::consts::PI;

/// A ℤ^d-periodic potential described on the unit cell.
#[derive(Clone, Debug, PartialEq)]
pub enum PeriodicPotential {
    Zero,
    /// `amplitude · Σ_a sin²(π q_a)`.
    SinSquared { amplitude: f64 },
    /// Samples over one period per axis, linearly interpolated.
    Sampled(GridFunction),
}

impl PeriodicPotential {
    pub fn sampled(samples: GridFunction) -> Result<Self> {
        for a in samples.axes() {
            if !a.periodic || (a.period() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(
                    "sampled periodic potential needs unit-period periodic axes".into(),
                ));
            }
        }
        Ok(Self::Sampled(samples))
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::SinSquared { amplitude } => {
                amplitude * q.iter().map(|x| (PI * x).sin().powi(2)).sum::<f64>()
            }
            Self::Sampled(g) => g.linear(q).expect("periodic axes never leave the grid"),
        }
    }

    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Self::SinSquared { amplitude } => {
                for (o, x) in out.iter_mut().zip(q) {
                    *o = amplitude * PI * (2.0 * PI * x).sin();
                }
            }
            Self::Sampled(g) => {
                g.linear_with_gradient(q, out)
                    .expect("periodic axes never leave the grid");
            }
        }
    }

    pub fn dimension_hint(&self) -> Option<usize> {
        match self {
            Self::Sampled(g) => Some(g.dim()),
            _ => None,
        }
    }

    /// (min, max) over the cell; exact for closed forms, over samples otherwise.
    pub fn bounds(&self, d: usize) -> (f64, f64) {
        match self {
            Self::Zero => (0.0, 0.0),
            Self::SinSquared { amplitude } => {
                let top = amplitude * d as f64;
                (top.min(0.0), top.max(0.0))
            }
            Self::Sampled(g) => (g.min_value(), g.max_value()),
        }
    }

    /// Same potential shifted by a constant.
    pub fn shifted(&self, d: usize, shift: f64, points_per_axis: usize) -> Result<Self> {
        if shift == 0.0 {
            return Ok(self.clone());
        }
        let g = match self {
            Self::Sampled(g) => g.clone(),
            _ => self.tabulate(d, points_per_axis)?,
        };
        Ok(Self::Sampled(g.map(|v| v + shift)?))
    }

    /// Samples on a uniform torus grid.
    pub fn tabulate(&self, d: usize, points_per_axis: usize) -> Result<GridFunction> {
        let axes = vec![Axis::unit_cell(points_per_axis); d];
        GridFunction::from_fn(axes, |q| self.value(q))
    }
}

/// Confinement potential U.
#[derive(Clone, Debug, PartialEq)]
pub enum Confinement {
    Zero,
    /// `u0 · ln(1 + |x|)`.
    LogGrowth { u0: f64 },
}

impl Confinement {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::LogGrowth { u0 } => u0 * norm(x).ln_1p(),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Self::LogGrowth { u0 } => {
                let r = norm(x);
                let s = if r > 0.0 { u0 / (r * (1.0 + r)) } else { 0.0 };
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = s * xi);
            }
        }
    }

    /// Concave sub-linear envelope β(r) with 0 ≤ U(x) ≤ β(|x|).
    pub fn envelope(&self, r: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::LogGrowth { u0 } => u0 * r.ln_1p(),
        }
    }

    pub fn infimum(&self) -> f64 {
        0.0
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::LogGrowth { u0 } => u0.abs(),
        }
    }
}

/// Pair interaction potential V.
#[derive(Clone, Debug, PartialEq)]
pub enum Interaction {
    Zero,
    /// `v0 · exp(−|x|²)`.
    Gaussian { v0: f64 },
}

impl Interaction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Gaussian { v0 } => v0 * (-norm2(x)).exp(),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Self::Gaussian { v0 } => {
                let s = -2.0 * v0 * (-norm2(x)).exp();
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = s * xi);
            }
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::Zero => (0.0, 0.0),
            Self::Gaussian { v0 } => (v0.min(0.0), v0.max(0.0)),
        }
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    norm2(x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64], &mut [f64]), x: &[f64]) {
        let mut grad = vec![0.0; x.len()];
        g(x, &mut grad);
        for a in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[a] += 1e-6;
            xm[a] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - grad[a]).abs() < 1e-6, "axis {a}: {fd} vs {}", grad[a]);
        }
    }

    #[test]
    fn closed_form_gradients_match_differences() {
        let u = PeriodicPotential::SinSquared { amplitude: 0.7 };
        fd_check(|q| u.value(q), |q, o| u.gradient(q, o), &[0.13, 0.71]);
        let c = Confinement::LogGrowth { u0: 1.3 };
        fd_check(|x| c.value(x), |x, o| c.gradient(x, o), &[0.4, -1.1]);
        let v = Interaction::Gaussian { v0: -0.5 };
        fd_check(|x| v.value(x), |x, o| v.gradient(x, o), &[0.3, 0.2]);
    }

    #[test]
    fn sampled_potential_is_periodic() {
        let u = PeriodicPotential::SinSquared { amplitude: 1.0 };
        let s = PeriodicPotential::sampled(u.tabulate(1, 128).unwrap()).unwrap();
        for q in [0.1, 0.37, 0.9] {
            assert!((s.value(&[q]) - s.value(&[q + 3.0])).abs() < 1e-12);
            assert!((s.value(&[q]) - u.value(&[q])).abs() < 1e-3);
        }
    }
}
