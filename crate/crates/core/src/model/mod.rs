//! Microscopic Hamiltonians, macroscopic potentials and the rescaled
//! N-particle Hamiltonian.
//!
//! Particle configurations are flat row-major slices of length `N·d`.

mod legendre;
mod potential;

pub use legendre::{conjugate_at, involution_tolerance, legendre, Conjugate};
pub use potential::{Confinement, Interaction, PeriodicPotential};
pub(crate) use potential::norm2;

use crate::error::{ensure_finite, Error, Result};
use crate::grid::GridFunction;
use crate::sum;

/// The cell Hamiltonian H(q, p).
#[derive(Clone, Debug, PartialEq)]
pub enum Hamiltonian {
    /// `½|p|² − U_per(q)`.
    Quadratic(PeriodicPotential),
    /// Bilinear interpolation of samples over (q periodic, p box), d = 1.
    Tabulated(GridFunction),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroModel {
    pub dim: usize,
    pub hamiltonian: Hamiltonian,
    /// Growth constants: `−c + |p|²/C ≤ H(q,p) ≤ c + C|p|²`.
    pub c: f64,
    pub big_c: f64,
}

impl MicroModel {
    pub fn quadratic(dim: usize, potential: PeriodicPotential) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if let Some(pd) = potential.dimension_hint() {
            if pd != dim {
                return Err(Error::InvalidModel(format!(
                    "potential samples have dimension {pd}, model has {dim}"
                )));
            }
        }
        Ok(Self {
            dim,
            hamiltonian: Hamiltonian::Quadratic(potential),
            c: 1.0,
            big_c: 2.0,
        })
    }

    pub fn free(dim: usize) -> Self {
        Self::quadratic(dim, PeriodicPotential::Zero).expect("free model")
    }

    pub fn tabulated(table: GridFunction) -> Result<Self> {
        let axes = table.axes();
        if axes.len() != 2
            || !axes[0].periodic
            || (axes[0].period() - 1.0).abs() > 1e-12
            || axes[1].periodic
        {
            return Err(Error::InvalidModel(
                "tabulated Hamiltonian needs axes (q: unit-period periodic, p: box)".into(),
            ));
        }
        Ok(Self {
            dim: 1,
            hamiltonian: Hamiltonian::Tabulated(table),
            c: 1.0,
            big_c: 2.0,
        })
    }

    pub fn with_growth(mut self, c: f64, big_c: f64) -> Self {
        self.c = c;
        self.big_c = big_c;
        self
    }

    pub fn potential(&self) -> Option<&PeriodicPotential> {
        match &self.hamiltonian {
            Hamiltonian::Quadratic(u) => Some(u),
            Hamiltonian::Tabulated(_) => None,
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.hamiltonian, Hamiltonian::Quadratic(_))
    }

    fn check_dims(&self, q: &[f64], p: &[f64]) -> Result<()> {
        if q.len() != self.dim || p.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "expected vectors of dimension {}",
                self.dim
            )));
        }
        ensure_finite(q, "q")?;
        ensure_finite(p, "p")
    }

    fn table_value(&self, table: &GridFunction, q: f64, p: f64) -> Result<f64> {
        table.linear(&[q, p]).map_err(|_| Error::OutOfRange {
            what: "tabulated Hamiltonian",
            detail: format!("(q, p) = ({q}, {p})"),
        })
    }

    pub fn eval_h(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        self.check_dims(q, p)?;
        match &self.hamiltonian {
            Hamiltonian::Quadratic(u) => Ok(0.5 * norm2(p) - u.value(q)),
            Hamiltonian::Tabulated(t) => self.table_value(t, q[0], p[0]),
        }
    }

    /// ∇_q H and ∇_p H.
    pub fn gradients(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()> {
        match &self.hamiltonian {
            Hamiltonian::Quadratic(u) => {
                u.gradient(q, dq);
                dq.iter_mut().for_each(|v| *v = -*v);
                dp.copy_from_slice(p);
            }
            Hamiltonian::Tabulated(t) => {
                let mut g = [0.0; 2];
                t.linear_with_gradient(&[q[0], p[0]], &mut g)
                    .map_err(|_| Error::OutOfRange {
                        what: "tabulated Hamiltonian",
                        detail: format!("(q, p) = ({}, {})", q[0], p[0]),
                    })?;
                dq[0] = g[0];
                dp[0] = g[1];
            }
        }
        Ok(())
    }

    /// 𝖫(q, ξ) with a flag telling whether a grid conjugate saturated.
    pub fn lagrangian_detail(&self, q: &[f64], xi: &[f64]) -> Result<(f64, bool)> {
        self.check_dims(q, xi)?;
        match &self.hamiltonian {
            Hamiltonian::Quadratic(u) => Ok((0.5 * norm2(xi) + u.value(q), false)),
            Hamiltonian::Tabulated(t) => {
                let p_axis = &t.axes()[1];
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for j in 0..p_axis.len {
                    let p = p_axis.point(j);
                    let v = xi[0] * p - self.table_value(t, q[0], p)?;
                    if v > best {
                        best = v;
                        arg = j;
                    }
                }
                Ok((best, arg == 0 || arg + 1 == p_axis.len))
            }
        }
    }

    pub fn micro_lagrangian(&self, q: &[f64], xi: &[f64]) -> Result<f64> {
        self.lagrangian_detail(q, xi).map(|r| r.0)
    }

    /// `sup_q H(q, 0)`; the infimum of 𝖫 is its negative.
    pub fn sup_h_at_rest(&self) -> f64 {
        match &self.hamiltonian {
            Hamiltonian::Quadratic(u) => -u.bounds(self.dim).0,
            Hamiltonian::Tabulated(t) => {
                let q_axis = &t.axes()[0];
                (0..q_axis.len)
                    .filter_map(|i| self.table_value(t, q_axis.point(i), 0.0).ok())
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    pub fn inf_lagrangian(&self) -> f64 {
        -self.sup_h_at_rest()
    }

    /// Sampled checks of periodicity, growth and convexity in p.
    pub fn check_invariants(&self, q_samples: &[Vec<f64>], p_samples: &[Vec<f64>]) -> InvariantReport {
        let mut report = InvariantReport::default();
        let shift: Vec<f64> = vec![1.0; self.dim];
        for q in q_samples {
            let q_shift: Vec<f64> = q.iter().zip(&shift).map(|(a, b)| a + b).collect();
            for p in p_samples {
                let (Ok(h), Ok(hs)) = (self.eval_h(q, p), self.eval_h(&q_shift, p)) else {
                    report.out_of_range += 1;
                    continue;
                };
                report.samples += 1;
                report.periodic_defect = report.periodic_defect.max((h - hs).abs());
                let r2 = norm2(p);
                if h < -self.c + r2 / self.big_c - 1e-12 || h > self.c + self.big_c * r2 + 1e-12 {
                    report.growth_violations += 1;
                }
            }
            for w in p_samples.windows(3) {
                let mid: Vec<f64> = w[0].iter().zip(&w[2]).map(|(a, b)| 0.5 * (a + b)).collect();
                if let (Ok(a), Ok(b), Ok(m)) =
                    (self.eval_h(q, &w[0]), self.eval_h(q, &w[2]), self.eval_h(q, &mid))
                {
                    if m > 0.5 * (a + b) + 1e-12 {
                        report.convexity_violations += 1;
                    }
                }
            }
        }
        report
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvariantReport {
    pub samples: usize,
    pub out_of_range: usize,
    pub periodic_defect: f64,
    pub growth_violations: usize,
    pub convexity_violations: usize,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.periodic_defect <= 1e-9 && self.growth_violations == 0 && self.convexity_violations == 0
    }
}

/// Confinement U and interaction V.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroPotentials {
    pub u: Confinement,
    pub v: Interaction,
}

impl MacroPotentials {
    pub fn zero() -> Self {
        Self {
            u: Confinement::Zero,
            v: Interaction::Zero,
        }
    }

    pub fn new(u: Confinement, v: Interaction) -> Self {
        Self { u, v }
    }

    pub fn is_zero(&self) -> bool {
        self.u == Confinement::Zero && self.v == Interaction::Zero
    }

    /// `(V*ρ)(y) = (1/N) Σ_j V(y − x_j)` over the cloud `x`.
    pub fn convolved(&self, y: &[f64], x: &[f64]) -> f64 {
        if self.v == Interaction::Zero {
            return 0.0;
        }
        let d = y.len();
        let mut diff = vec![0.0; d];
        let mut vals: Vec<f64> = x
            .chunks(d)
            .map(|xj| {
                diff.iter_mut()
                    .zip(y.iter().zip(xj))
                    .for_each(|(o, (a, b))| *o = a - b);
                self.v.value(&diff)
            })
            .collect();
        sum::symmetric(&mut vals) / (x.len() / d) as f64
    }

    /// `Σ_i Σ_j V(x_i − x_j)`, summed in an order-independent way.
    pub fn pair_total(&self, x: &[f64], d: usize) -> f64 {
        if self.v == Interaction::Zero {
            return 0.0;
        }
        let n = x.len() / d;
        let mut diff = vec![0.0; d];
        let mut vals = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                for a in 0..d {
                    diff[a] = x[i * d + a] - x[j * d + a];
                }
                vals.push(self.v.value(&diff));
            }
        }
        sum::symmetric(&mut vals)
    }

    /// ⟨U, emp(x)⟩ + ⟨V*emp(x), emp(x)⟩.
    pub fn potential_energy(&self, x: &[f64], d: usize) -> f64 {
        let n = (x.len() / d) as f64;
        let mut us: Vec<f64> = x.chunks(d).map(|xi| self.u.value(xi)).collect();
        sum::symmetric(&mut us) / n + self.pair_total(x, d) / (n * n)
    }

    /// Force on particle `i` from the macroscopic terms of the particle
    /// flow: `∇U(x_i) + (2/N) Σ_j ∇V(x_i − x_j)`.
    pub fn force(&self, x: &[f64], d: usize, i: usize, out: &mut [f64]) {
        let xi = &x[i * d..(i + 1) * d];
        self.u.gradient(xi, out);
        if self.v == Interaction::Zero {
            return;
        }
        let n = x.len() / d;
        let mut diff = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut comps: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d];
        for j in 0..n {
            for a in 0..d {
                diff[a] = xi[a] - x[j * d + a];
            }
            self.v.gradient(&diff, &mut g);
            for a in 0..d {
                comps[a].push(g[a]);
            }
        }
        for a in 0..d {
            out[a] += 2.0 * sum::symmetric(&mut comps[a]) / n as f64;
        }
    }
}

fn check_cloud(x: &[f64], p: &[f64], d: usize) -> Result<usize> {
    if x.is_empty() || x.len() % d != 0 || x.len() != p.len() {
        return Err(Error::InvalidInput(format!(
            "configuration arrays must have equal length N·{d}, got {} and {}",
            x.len(),
            p.len()
        )));
    }
    ensure_finite(x, "positions")?;
    ensure_finite(p, "momenta")?;
    Ok(x.len() / d)
}

/// `H_N(x, P) = (1/N) Σ_i [H(x_i/ε, P_i) − U(x_i) − (1/N) Σ_j V(x_i − x_j)]`.
///
/// All sums are order-independent, so permuting particles leaves the
/// result bit-for-bit unchanged.
pub fn rescaled_hn(
    model: &MicroModel,
    macro_: &MacroPotentials,
    eps: f64,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let d = model.dim;
    let n = check_cloud(x, p, d)?;
    let mut terms = Vec::with_capacity(n);
    let mut q = vec![0.0; d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        q.iter_mut().zip(xi).for_each(|(o, v)| *o = v / eps);
        terms.push(model.eval_h(&q, &p[i * d..(i + 1) * d])? - macro_.u.value(xi));
    }
    let nf = n as f64;
    Ok((sum::symmetric(&mut terms) - macro_.pair_total(x, d) / nf) / nf)
}

/// `L_N(x, v) = (1/N) Σ_i [𝖫(x_i/ε, v_i) + U(x_i) + (1/N) Σ_j V(x_i − x_j)]`.
pub fn particle_lagrangian(
    model: &MicroModel,
    macro_: &MacroPotentials,
    eps: f64,
    x: &[f64],
    v: &[f64],
) -> Result<f64> {
    let d = model.dim;
    let n = check_cloud(x, v, d)?;
    let mut terms = Vec::with_capacity(n);
    let mut q = vec![0.0; d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        q.iter_mut().zip(xi).for_each(|(o, val)| *o = val / eps);
        terms.push(model.micro_lagrangian(&q, &v[i * d..(i + 1) * d])? + macro_.u.value(xi));
    }
    let nf = n as f64;
    Ok((sum::symmetric(&mut terms) + macro_.pair_total(x, d) / nf) / nf)
}
