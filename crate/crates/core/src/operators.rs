//! The Hamiltonian operators on simple test functions over empirical
//! measures.
//!
//! A test function is `f₀(ρ) = ψ(d²(ρ, γ₁), …, d²(ρ, γ_K))` (plus) or
//! `f₁(γ) = −ψ(d²(γ, ρ₁), …)` (minus). With equal-weight clouds every
//! optimal multi-plan is a tuple of optimal matchings, one per anchor,
//! so the sup/inf over plans is a finite search.

use crate::cell::EffectiveTable;
use crate::error::{Error, Result};
use crate::model::MacroPotentials;
use crate::sum;
use crate::transport::{optimal_matchings, wasserstein, EmpiricalMeasure};

/// Matchings enumerated per anchor.
pub const MATCHING_LIMIT: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// Outer function ψ, componentwise increasing.
#[derive(Clone, Debug, PartialEq)]
pub enum Psi {
    /// `Σ a_k r_k`.
    Linear(Vec<f64>),
    /// `Σ a_k c tanh(r_k / c)`.
    Capped { a: Vec<f64>, cap: f64 },
}

impl Psi {
    pub fn len(&self) -> usize {
        match self {
            Self::Linear(a) | Self::Capped { a, .. } => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, r: &[f64]) -> f64 {
        match self {
            Self::Linear(a) => sum::compensated(a.iter().zip(r).map(|(a, r)| a * r)),
            Self::Capped { a, cap } => sum::compensated(a.iter().zip(r).map(|(a, r)| a * cap * (r / cap).tanh())),
        }
    }

    /// `∂_k ψ(r)`.
    pub fn partials(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Self::Linear(a) => a.clone(),
            Self::Capped { a, cap } => a
                .iter()
                .zip(r)
                .map(|(a, r)| {
                    let c = (r / cap).cosh();
                    a / (c * c)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub sign: Sign,
    pub anchors: Vec<EmpiricalMeasure>,
    pub psi: Psi,
}

impl TestFunction {
    pub fn new(sign: Sign, anchors: Vec<EmpiricalMeasure>, psi: Psi) -> Result<Self> {
        if anchors.is_empty() || anchors.len() != psi.len() {
            return Err(Error::InvalidInput(format!(
                "{} anchors for {} coefficients",
                anchors.len(),
                psi.len()
            )));
        }
        let coeffs = match &psi {
            Psi::Linear(a) => a,
            Psi::Capped { a, cap } => {
                if !(*cap > 0.0) {
                    return Err(Error::Parameter(format!("cap must be positive, got {cap}")));
                }
                a
            }
        };
        if coeffs.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::Parameter("ψ coefficients must be positive".into()));
        }
        let d = anchors[0].dim();
        if anchors.iter().any(|g| g.dim() != d) {
            return Err(Error::InvalidInput("anchors must share one dimension".into()));
        }
        Ok(Self { sign, anchors, psi })
    }

    fn check(&self, rho: &EmpiricalMeasure, sign: Sign) -> Result<()> {
        if self.sign != sign {
            return Err(Error::InvalidInput(format!(
                "operator expects a {sign:?} test function, got {:?}",
                self.sign
            )));
        }
        if self.anchors.iter().any(|g| g.len() != rho.len() || g.dim() != rho.dim()) {
            return Err(Error::InvalidInput(
                "anchors and the measure need equal atom counts and dimension".into(),
            ));
        }
        Ok(())
    }

    /// `d²(ρ, γ_k)` for every anchor.
    pub fn distances(&self, rho: &EmpiricalMeasure) -> Result<Vec<f64>> {
        self.anchors
            .iter()
            .map(|g| Ok(wasserstein(rho, g, 2.0)?.0.powi(2)))
            .collect()
    }

    pub fn value(&self, rho: &EmpiricalMeasure) -> Result<f64> {
        let v = self.psi.value(&self.distances(rho)?);
        Ok(match self.sign {
            Sign::Plus => v,
            Sign::Minus => -v,
        })
    }
}

#[derive(Clone, Debug)]
pub struct OperatorValue {
    pub value: f64,
    /// One optimal matching per anchor attaining the value.
    pub plans: Vec<Vec<usize>>,
    /// Every anchor has a single optimal matching.
    pub unique: bool,
    /// No enumeration hit [`MATCHING_LIMIT`].
    pub complete: bool,
}

struct Instance {
    d: usize,
    /// Per-atom momenta for every tuple of matchings.
    tuples: Vec<(Vec<Vec<usize>>, Vec<f64>)>,
    /// `(1/N) Σ (U + V*ρ)(x_i)`.
    potential: f64,
    unique: bool,
    complete: bool,
}

fn instance(f: &TestFunction, base: &EmpiricalMeasure, macro_: &MacroPotentials) -> Result<Instance> {
    let d = base.dim();
    let n = base.len();
    let weights = f.psi.partials(&f.distances(base)?);
    let mut per_anchor = Vec::with_capacity(f.anchors.len());
    let mut unique = true;
    let mut complete = true;
    for g in &f.anchors {
        let m = optimal_matchings(base, g, 2.0, MATCHING_LIMIT)?;
        unique &= m.unique();
        complete &= m.complete;
        per_anchor.push(m.plans.into_iter().map(|p| p.perm).collect::<Vec<_>>());
    }
    // all tuples, first anchor slowest
    let mut tuples: Vec<Vec<usize>> = vec![vec![]];
    for plans in &per_anchor {
        tuples = tuples
            .into_iter()
            .flat_map(|t| plans.iter().enumerate().map(move |(j, _)| [t.clone(), vec![j]].concat()))
            .collect();
    }
    let sign = match f.sign {
        Sign::Plus => 1.0,
        Sign::Minus => -1.0,
    };
    let tuples = tuples
        .into_iter()
        .map(|t| {
            let mut p = vec![0.0; n * d];
            for (k, &j) in t.iter().enumerate() {
                let perm = &per_anchor[k][j];
                let y = &f.anchors[k];
                for i in 0..n {
                    // plus: 2α_k (x_i − y_σ(i)); minus: 2β_k (x_σ(i) − y_i)
                    for a in 0..d {
                        p[i * d + a] += 2.0 * weights[k] * sign * (base.atom(i)[a] - y.atom(perm[i])[a]);
                    }
                }
            }
            let plans = t.iter().enumerate().map(|(k, &j)| per_anchor[k][j].clone()).collect();
            (plans, p)
        })
        .collect();
    let mut pot: Vec<f64> = (0..n)
        .map(|i| macro_.u.value(base.atom(i)) + macro_.convolved(base.atom(i), base.atoms()))
        .collect();
    Ok(Instance {
        d,
        tuples,
        potential: sum::symmetric(&mut pot) / n as f64,
        unique,
        complete,
    })
}

/// Extremum over tuples of `(1/N) Σ_i g(P_i) − ⟨U + V*ρ, ρ⟩`.
fn extremum(
    inst: &Instance,
    n: usize,
    g: impl Fn(&[f64]) -> Result<f64>,
    take_max: bool,
) -> Result<OperatorValue> {
    let mut best: Option<(f64, &Vec<Vec<usize>>)> = None;
    for (plans, p) in &inst.tuples {
        let mut terms: Vec<f64> = p.chunks(inst.d).map(&g).collect::<Result<_>>()?;
        let v = sum::symmetric(&mut terms) / n as f64 - inst.potential;
        let better = match best {
            None => true,
            Some((b, _)) => {
                if take_max {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((v, plans));
        }
    }
    let (value, plans) = best.expect("at least one optimal matching");
    Ok(OperatorValue {
        value,
        plans: plans.clone(),
        unique: inst.unique,
        complete: inst.complete,
    })
}

/// `ℍ₀f₀(ρ)`: sup over optimal plans of `∫ H̄(x, P; ρ) dν^M`.
pub fn eval_bbh0(f0: &TestFunction, rho: &EmpiricalMeasure, table: &EffectiveTable, macro_: &MacroPotentials) -> Result<OperatorValue> {
    f0.check(rho, Sign::Plus)?;
    let inst = instance(f0, rho, macro_)?;
    extremum(&inst, rho.len(), |p| table.h_bar(p), true)
}

/// `𝐇₀f₀(ρ)`: as [`eval_bbh0`] with the inf over plans.
pub fn eval_bfh0(f0: &TestFunction, rho: &EmpiricalMeasure, table: &EffectiveTable, macro_: &MacroPotentials) -> Result<OperatorValue> {
    f0.check(rho, Sign::Plus)?;
    let inst = instance(f0, rho, macro_)?;
    extremum(&inst, rho.len(), |p| table.h_bar(p), false)
}

/// `ℍ₁f₁(γ)`: inf over optimal plans with `P = Σ 2β_k (x_σ − y)`.
pub fn eval_bbh1(f1: &TestFunction, gamma: &EmpiricalMeasure, table: &EffectiveTable, macro_: &MacroPotentials) -> Result<OperatorValue> {
    f1.check(gamma, Sign::Minus)?;
    let inst = instance(f1, gamma, macro_)?;
    extremum(&inst, gamma.len(), |p| table.h_bar(p), false)
}

/// `𝐇₁f₁(γ)`: as [`eval_bbh1`] with the sup over plans.
pub fn eval_bfh1(f1: &TestFunction, gamma: &EmpiricalMeasure, table: &EffectiveTable, macro_: &MacroPotentials) -> Result<OperatorValue> {
    f1.check(gamma, Sign::Minus)?;
    let inst = instance(f1, gamma, macro_)?;
    extremum(&inst, gamma.len(), |p| table.h_bar(p), true)
}

/// `max_v (P·v − 𝖫̄(v))` over the nodes of the table's v grid.
fn grid_hamiltonian(table: &EffectiveTable, p: &[f64]) -> Result<f64> {
    let dual = &table.dual().values;
    if !table.midpoints().contains(p) {
        return Err(Error::Extrapolation {
            what: "momentum",
            point: p.to_vec(),
        });
    }
    let vals = dual.values();
    Ok((0..dual.len())
        .map(|k| {
            let v = dual.point(k);
            p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - vals[k]
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `𝐇f(ρ) = sup_ν (d_ρ f(ν) − L(ν))` over map-type velocities on the v grid.
///
/// For the plus case the differential takes the worst matching, realised as
/// the inf over tuples of the per-atom Legendre maxima; for the minus case
/// it takes the best one, so the sup over tuples.
pub fn eval_bfh(f: &TestFunction, rho: &EmpiricalMeasure, table: &EffectiveTable, macro_: &MacroPotentials) -> Result<f64> {
    f.check(rho, f.sign)?;
    let inst = instance(f, rho, macro_)?;
    let take_max = f.sign == Sign::Minus;
    Ok(extremum(&inst, rho.len(), |p| grid_hamiltonian(table, p), take_max)?.value)
}

#[derive(Clone, Debug)]
pub struct OperatorReport {
    pub bbh: OperatorValue,
    pub bfh: OperatorValue,
    pub h: f64,
}

impl OperatorReport {
    /// `𝐇f₀ ≤ 𝐇₀f₀ ≤ ℍ₀f₀`, or `𝐇f₁ ≥ 𝐇₁f₁ ≥ ℍ₁f₁` less `slack` on the
    /// first link, with `tol` on every link.
    pub fn chain_holds(&self, sign: Sign, tol: f64, slack: f64) -> bool {
        match sign {
            Sign::Plus => self.h <= self.bfh.value + tol && self.bfh.value <= self.bbh.value + tol,
            Sign::Minus => self.h >= self.bfh.value - tol - slack && self.bfh.value >= self.bbh.value - tol,
        }
    }
}

/// All three operators for one test function.
pub fn evaluate_all(f: &TestFunction, rho: &EmpiricalMeasure, table: &EffectiveTable, macro_: &MacroPotentials) -> Result<OperatorReport> {
    Ok(match f.sign {
        Sign::Plus => OperatorReport {
            bbh: eval_bbh0(f, rho, table, macro_)?,
            bfh: eval_bfh0(f, rho, table, macro_)?,
            h: eval_bfh(f, rho, table, macro_)?,
        },
        Sign::Minus => OperatorReport {
            bbh: eval_bbh1(f, rho, table, macro_)?,
            bfh: eval_bfh1(f, rho, table, macro_)?,
            h: eval_bfh(f, rho, table, macro_)?,
        },
    })
}

/// Two tied matchings to the first anchor that the second anchor tells
/// apart: `ρ = {(0,0), (1,1)}`, `γ₁ = {(1,0), (0,1)}`, `γ₂ = ρ + (±s, 0)`,
/// `ψ = r₁ + r₂`. With `H̄ = ½|P|²` the two plans give `2(1+s)²` and
/// `2(1+s²)`.
pub fn degenerate_instance(s: f64) -> Result<(EmpiricalMeasure, TestFunction)> {
    let rho = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]])?;
    let g1 = EmpiricalMeasure::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let g2 = EmpiricalMeasure::from_rows(&[vec![s, 0.0], vec![1.0 - s, 1.0]])?;
    let f = TestFunction::new(Sign::Plus, vec![g1, g2], Psi::Linear(vec![1.0, 1.0]))?;
    Ok((rho, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn table_1d() -> EffectiveTable {
        EffectiveTable::quadratic(
            vec![Axis::uniform(-6.0, 6.0, 1201).unwrap()],
            vec![Axis::uniform(-6.0, 6.0, 1201).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn dirac_example() {
        let t = table_1d();
        let rho = EmpiricalMeasure::line(&[0.0]).unwrap();
        let f = TestFunction::new(Sign::Plus, vec![EmpiricalMeasure::line(&[1.0]).unwrap()], Psi::Linear(vec![1.0])).unwrap();
        let z = MacroPotentials::zero();
        let v = eval_bbh0(&f, &rho, &t, &z).unwrap();
        assert!((v.value - 2.0).abs() < 1e-12 && v.unique);
        let g = TestFunction { sign: Sign::Minus, ..f };
        assert!(eval_bbh0(&g, &rho, &t, &z).is_err());
        let w = eval_bbh1(
            &TestFunction::new(Sign::Minus, vec![EmpiricalMeasure::line(&[0.0]).unwrap()], Psi::Linear(vec![1.0])).unwrap(),
            &EmpiricalMeasure::line(&[1.0]).unwrap(),
            &t,
            &z,
        )
        .unwrap();
        assert!((w.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn capped_partials_match_differences() {
        let psi = Psi::Capped { a: vec![1.5, 0.5], cap: 2.0 };
        let r = [0.7, 3.0];
        let g = psi.partials(&r);
        for k in 0..2 {
            let mut a = r;
            let mut b = r;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            assert!(((psi.value(&a) - psi.value(&b)) / 2e-6 - g[k]).abs() < 1e-8);
        }
    }
}
