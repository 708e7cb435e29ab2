//! Uniform tensor grids and sampled functions on them.

use crate::error::{Error, Result};

/// One uniform axis. Periodic axes sample `[min, min + period)`; box axes
/// sample `[min, max]` inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub step: f64,
    pub len: usize,
    pub periodic: bool,
}

impl Axis {
    /// `len` equally spaced points from `min` to `max` inclusive.
    pub fn uniform(min: f64, max: f64, len: usize) -> Result<Self> {
        if len < 2 || !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Parameter(format!(
                "axis needs len >= 2 and min < max, got [{min}, {max}] with {len} points"
            )));
        }
        Ok(Self {
            min,
            step: (max - min) / (len - 1) as f64,
            len,
            periodic: false,
        })
    }

    /// `len` points covering one period starting at `min`.
    pub fn periodic(min: f64, period: f64, len: usize) -> Result<Self> {
        if len < 1 || !(period > 0.0) || !min.is_finite() {
            return Err(Error::Parameter(format!(
                "periodic axis needs len >= 1 and period > 0, got {period} with {len} points"
            )));
        }
        Ok(Self {
            min,
            step: period / len as f64,
            len,
            periodic: true,
        })
    }

    /// The unit cell `[0, 1)` sampled with `len` points.
    pub fn unit_cell(len: usize) -> Self {
        Self::periodic(0.0, 1.0, len.max(1)).expect("unit cell axis")
    }

    pub fn point(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }

    pub fn max(&self) -> f64 {
        self.point(self.len - 1)
    }

    pub fn period(&self) -> f64 {
        self.step * self.len as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.point(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-12 * self.step;
        self.periodic || (x >= self.min - slack && x <= self.max() + slack)
    }

    /// Signed displacement `b - a`, using the nearest image on periodic axes.
    pub fn displacement(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        if self.periodic {
            let p = self.period();
            d - p * (d / p).round()
        } else {
            d
        }
    }

    /// Cell containing `x`: base index and fractional offset in `[0, 1]`.
    fn locate(&self, x: f64) -> Option<(isize, f64)> {
        let u = (x - self.min) / self.step;
        if self.periodic {
            let f = u.floor();
            Some((f as isize, u - f))
        } else {
            let top = (self.len - 1) as f64;
            if u < -1e-12 || u > top + 1e-12 {
                return None;
            }
            let u = u.clamp(0.0, top);
            let i0 = (u.floor() as usize).min(self.len - 2);
            Some((i0 as isize, u - i0 as f64))
        }
    }

    fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.len as isize) as usize
    }
}

/// Per-axis interpolation stencil: (index, weight, d weight / dx).
struct Stencil {
    terms: Vec<(usize, f64, f64)>,
}

impl Stencil {
    fn linear(axis: &Axis, i0: isize, t: f64) -> Self {
        let inv = 1.0 / axis.step;
        let (a, b) = if axis.periodic {
            (axis.wrap(i0), axis.wrap(i0 + 1))
        } else if axis.len == 1 {
            (0, 0)
        } else {
            (i0 as usize, i0 as usize + 1)
        };
        Self {
            terms: vec![(a, 1.0 - t, -inv), (b, t, inv)],
        }
    }

    /// Catmull–Rom cubic; box axes use linearly extrapolated ghost nodes.
    fn cubic(axis: &Axis, i0: isize, t: f64) -> Self {
        let t2 = t * t;
        let t3 = t2 * t;
        let w = [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ];
        let inv = 1.0 / axis.step;
        let dw = [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0) * inv,
            0.5 * (9.0 * t2 - 10.0 * t) * inv,
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0) * inv,
            0.5 * (3.0 * t2 - 2.0 * t) * inv,
        ];
        let mut terms = Vec::with_capacity(6);
        let last = axis.len as isize - 1;
        for (k, off) in (-1..=2).enumerate() {
            let i = i0 + off;
            if axis.periodic {
                terms.push((axis.wrap(i), w[k], dw[k]));
            } else if i < 0 {
                terms.push((0, 2.0 * w[k], 2.0 * dw[k]));
                terms.push((1, -w[k], -dw[k]));
            } else if i > last {
                terms.push((last as usize, 2.0 * w[k], 2.0 * dw[k]));
                terms.push((last as usize - 1, -w[k], -dw[k]));
            } else {
                terms.push((i as usize, w[k], dw[k]));
            }
        }
        Self { terms }
    }
}

/// Values sampled on a tensor product of [`Axis`] (row-major, last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    axes: Vec<Axis>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one axis".into()));
        }
        if axes.iter().any(|a| !(a.step > 0.0) || a.len == 0) {
            return Err(Error::InvalidInput("grid spacing must be positive".into()));
        }
        let len: usize = axes.iter().map(|a| a.len).product();
        if len != values.len() {
            return Err(Error::InvalidInput(format!(
                "grid has {len} nodes but {} values were given",
                values.len()
            )));
        }
        crate::error::ensure_finite(&values, "grid values")?;
        Ok(Self { axes, values })
    }

    pub fn from_fn(axes: Vec<Axis>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let len: usize = axes.iter().map(|a| a.len).product();
        let mut values = Vec::with_capacity(len);
        let mut point = vec![0.0; axes.len()];
        for flat in 0..len {
            fill_point(&axes, flat, &mut point);
            values.push(f(&point));
        }
        Self::new(axes, values)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        let mut rem = flat;
        for (a, axis) in self.axes.iter().enumerate().rev() {
            idx[a] = rem % axis.len;
            rem /= axis.len;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.axes.len()];
        fill_point(&self.axes, flat, &mut p);
        p
    }

    /// True when the node sits on the edge of a non-periodic axis.
    pub fn is_boundary(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| !a.periodic && (i == 0 || i + 1 == a.len))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.axes.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.axes.len() && self.axes.iter().zip(x).all(|(a, &xi)| a.contains(xi))
    }

    /// Multilinear interpolation.
    pub fn linear(&self, x: &[f64]) -> Result<f64> {
        self.interpolate(x, None, Stencil::linear)
    }

    /// Multilinear interpolation with its (piecewise constant) gradient.
    pub fn linear_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.interpolate(x, Some(grad), Stencil::linear)
    }

    /// Tensor Catmull–Rom interpolation (C¹), optionally with gradient.
    pub fn cubic(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        self.interpolate(x, grad, Stencil::cubic)
    }

    fn interpolate(
        &self,
        x: &[f64],
        mut grad: Option<&mut [f64]>,
        build: fn(&Axis, isize, f64) -> Stencil,
    ) -> Result<f64> {
        let d = self.axes.len();
        if x.len() != d {
            return Err(Error::InvalidInput(format!(
                "point has dimension {} but grid has {d}",
                x.len()
            )));
        }
        let mut stencils = Vec::with_capacity(d);
        for (axis, &xi) in self.axes.iter().zip(x) {
            let (i0, t) = axis.locate(xi).ok_or_else(|| Error::OutOfRange {
                what: "grid point",
                detail: format!("{x:?} outside [{}, {}]", axis.min, axis.max()),
            })?;
            stencils.push(build(axis, i0, t));
        }
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let counts: Vec<usize> = stencils.iter().map(|s| s.terms.len()).collect();
        let total: usize = counts.iter().product();
        let mut value = 0.0;
        let mut pick = vec![0usize; d];
        let mut idx = vec![0usize; d];
        for combo in 0..total {
            let mut rem = combo;
            for a in (0..d).rev() {
                pick[a] = rem % counts[a];
                rem /= counts[a];
            }
            let mut w = 1.0;
            for a in 0..d {
                let (i, wa, _) = stencils[a].terms[pick[a]];
                idx[a] = i;
                w *= wa;
            }
            let f = self.values[self.flat_index(&idx)];
            value += w * f;
            if let Some(g) = grad.as_deref_mut() {
                for (a, ga) in g.iter_mut().enumerate() {
                    let mut wd = 1.0;
                    for b in 0..d {
                        let (_, wb, dwb) = stencils[b].terms[pick[b]];
                        wd *= if a == b { dwb } else { wb };
                    }
                    *ga += wd * f;
                }
            }
        }
        Ok(value)
    }
}

fn fill_point(axes: &[Axis], flat: usize, out: &mut [f64]) {
    let mut rem = flat;
    for (a, axis) in axes.iter().enumerate().rev() {
        out[a] = axis.point(rem % axis.len);
        rem /= axis.len;
    }
}
