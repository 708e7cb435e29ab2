//! Optimal transport between equal-weight empirical measures.
//!
//! With equal weights an optimal coupling can always be taken to be a
//! permutation, so distances reduce to an assignment problem solved by the
//! Hungarian method. Among tied optimal matchings the lexicographically
//! smallest permutation is returned.

use crate::error::{Error, Result};
use crate::sum;
use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

/// Averaged-cost tolerance under which two matchings count as tied.
pub const TIE_TOL: f64 = 1e-9;

/// `N` equally weighted atoms in `ℝ^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 || atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not form a nonempty cloud in dimension {dim}",
                atoms.len()
            )));
        }
        crate::error::ensure_finite(&atoms, "atom coordinates")?;
        Ok(Self { dim, atoms })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("atoms of different dimension".into()));
        }
        Self::new(dim, rows.concat())
    }

    /// Atoms on the line.
    pub fn line(points: &[f64]) -> Result<Self> {
        Self::new(1, points.to_vec())
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let atoms = self
            .atoms
            .chunks(self.dim)
            .flat_map(|a| a.iter().zip(shift).map(|(x, s)| x + s).collect::<Vec<_>>())
            .collect();
        Self { dim: self.dim, atoms }
    }

    /// Atoms reordered so that new atom `i` is old atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let atoms = perm.iter().flat_map(|&j| self.atom(j).to_vec()).collect();
        Self { dim: self.dim, atoms }
    }

    /// Same multiset of atoms, irrespective of order.
    pub fn same_support(&self, other: &Self) -> bool {
        let key = |m: &Self| {
            let mut rows: Vec<Vec<u64>> = m
                .atoms
                .chunks(m.dim)
                .map(|a| a.iter().map(|x| x.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        self.dim == other.dim && self.len() == other.len() && key(self) == key(other)
    }

    /// Second moment `(1/N) Σ |x_i|²`.
    pub fn second_moment(&self) -> f64 {
        let n = self.len() as f64;
        sum::compensated(self.atoms.iter().map(|x| x * x)) / n
    }
}

/// Atoms carrying one velocity each: a map-type element of the tangent space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMeasure {
    pub base: EmpiricalMeasure,
    velocities: Vec<f64>,
}

impl PhaseMeasure {
    pub fn new(base: EmpiricalMeasure, velocities: Vec<f64>) -> Result<Self> {
        if velocities.len() != base.atoms.len() {
            return Err(Error::InvalidInput(format!(
                "{} velocity coordinates for {} atoms in dimension {}",
                velocities.len(),
                base.len(),
                base.dim
            )));
        }
        crate::error::ensure_finite(&velocities, "velocities")?;
        Ok(Self { base, velocities })
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        let d = self.base.dim;
        &self.velocities[i * d..(i + 1) * d]
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    /// `‖ν‖²_ρ = (1/N) Σ |v_i|²`.
    pub fn norm2(&self) -> f64 {
        sum::compensated(self.velocities.iter().map(|v| v * v)) / self.base.len() as f64
    }
}

/// Atoms carrying weighted velocity lists (non map-type tangent elements).
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityLists {
    pub base: EmpiricalMeasure,
    /// Per atom: `(weight, velocity)` pairs.
    pub lists: Vec<Vec<(f64, Vec<f64>)>>,
}

/// An optimal matching `i ↦ perm[i]` and its averaged cost `(1/N) Σ |x_i − y_σ(i)|^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub perm: Vec<usize>,
    pub cost: f64,
    pub order: f64,
}

impl Plan {
    pub fn distance(&self) -> f64 {
        self.cost.max(0.0).powf(1.0 / self.order)
    }
}

/// Doubly-stochastic coupling with row/column sums `1/N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub n: usize,
    /// Row-major `n × n` masses.
    pub matrix: Vec<f64>,
    pub cost: f64,
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("transport order must be ≥ 1, got {p}")));
    }
    Ok(())
}

fn check_pair(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure) -> Result<()> {
    if rho.dim != gamma.dim {
        return Err(Error::InvalidInput(format!(
            "dimensions differ: {} vs {}",
            rho.dim, gamma.dim
        )));
    }
    if rho.len() != gamma.len() {
        return Err(Error::Unsupported(format!(
            "equal-weight matching needs equal atom counts, got {} and {}",
            rho.len(),
            gamma.len()
        )));
    }
    Ok(())
}

/// `|x − y|^p` with the squared distance accumulated in compensated form.
pub fn pair_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let d2 = sum::compensated(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)));
    if p == 2.0 {
        d2
    } else if p == 1.0 {
        d2.sqrt()
    } else {
        d2.sqrt().powf(p)
    }
}

/// Row-major `N × N` cost matrix.
pub fn cost_matrix(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure, p: f64) -> Vec<f64> {
    let n = rho.len();
    let mut c = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            c.push(pair_cost(rho.atom(i), gamma.atom(j), p));
        }
    }
    c
}

/// Averaged cost of a matching, summed in index order.
pub fn matching_cost(cost: &[f64], perm: &[usize]) -> f64 {
    let n = perm.len();
    sum::compensated(perm.iter().enumerate().map(|(i, &j)| cost[i * n + j])) / n as f64
}

/// Hungarian method (shortest augmenting paths with potentials), `O(N³)`.
/// Returns the matching and dual potentials `(u, v)` with
/// `cost[i][j] − u_i − v_j ≥ 0`, equality on matched pairs.
fn hungarian(cost: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Pairs whose reduced cost is within the tie tolerance of zero.
struct TightGraph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl TightGraph {
    fn new(cost: &[f64], n: usize, u: &[f64], v: &[f64]) -> Self {
        let scale = cost.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        // the averaged excess of a tight matching stays below TIE_TOL
        let tol = TIE_TOL + 1e-13 * scale;
        let adj = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| cost[i * n + j] - u[i] - v[j] <= tol)
                    .collect()
            })
            .collect();
        Self { n, adj }
    }

    fn edges(&self) -> usize {
        self.adj.iter().map(|a| a.len()).sum()
    }

    /// Can rows `from..n` be matched to the free columns?
    fn completable(&self, from: usize, taken: &[bool]) -> bool {
        let mut owner: Vec<Option<usize>> = vec![None; self.n];
        for i in from..self.n {
            let mut seen = vec![false; self.n];
            if !self.augment(i, taken, &mut seen, &mut owner) {
                return false;
            }
        }
        true
    }

    fn augment(&self, i: usize, taken: &[bool], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &self.adj[i] {
            if taken[j] || seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| self.augment(k, taken, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    fn lexicographic(&self) -> Option<Vec<usize>> {
        let mut taken = vec![false; self.n];
        let mut perm = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut placed = false;
            for &j in &self.adj[i] {
                if taken[j] {
                    continue;
                }
                taken[j] = true;
                if self.completable(i + 1, &taken) {
                    perm.push(j);
                    placed = true;
                    break;
                }
                taken[j] = false;
            }
            if !placed {
                return None;
            }
        }
        Some(perm)
    }

    /// All perfect matchings in lexicographic order, at most `limit`.
    fn enumerate(&self, limit: usize) -> (Vec<Vec<usize>>, bool) {
        let mut out = Vec::new();
        let mut taken = vec![false; self.n];
        let mut cur = Vec::with_capacity(self.n);
        let complete = self.walk(0, &mut taken, &mut cur, &mut out, limit);
        (out, complete)
    }

    fn walk(
        &self,
        i: usize,
        taken: &mut [bool],
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) -> bool {
        if i == self.n {
            if out.len() == limit {
                return false;
            }
            out.push(cur.clone());
            return true;
        }
        for &j in &self.adj[i] {
            if taken[j] {
                continue;
            }
            taken[j] = true;
            if self.completable(i + 1, taken) {
                cur.push(j);
                let ok = self.walk(i + 1, taken, cur, out, limit);
                cur.pop();
                if !ok {
                    taken[j] = false;
                    return false;
                }
            }
            taken[j] = false;
        }
        true
    }
}

/// Optimal matching for a square cost matrix, lexicographically smallest among ties.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    if n <= 1 {
        return (0..n).collect();
    }
    let (perm, u, v) = hungarian(cost, n);
    let tight = TightGraph::new(cost, n, &u, &v);
    if tight.edges() == n {
        return perm;
    }
    tight.lexicographic().unwrap_or(perm)
}

/// Optimal plan of order `p` between equal-size clouds.
pub fn optimal_plan(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure, p: f64) -> Result<Plan> {
    check_order(p)?;
    check_pair(rho, gamma)?;
    let n = rho.len();
    let cost = cost_matrix(rho, gamma, p);
    let perm = assignment(&cost, n);
    Ok(Plan {
        cost: matching_cost(&cost, &perm),
        perm,
        order: p,
    })
}

/// `W_p(ρ, γ)` and the plan realising it.
pub fn wasserstein(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure, p: f64) -> Result<(f64, Plan)> {
    let plan = optimal_plan(rho, gamma, p)?;
    Ok((plan.distance(), plan))
}

/// Every matching whose averaged cost is within [`TIE_TOL`] of the optimum,
/// in lexicographic order; `complete` is false when `limit` cut the list.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalMatchings {
    pub plans: Vec<Plan>,
    pub complete: bool,
}

impl OptimalMatchings {
    pub fn unique(&self) -> bool {
        self.complete && self.plans.len() == 1
    }
}

pub fn optimal_matchings(
    rho: &EmpiricalMeasure,
    gamma: &EmpiricalMeasure,
    p: f64,
    limit: usize,
) -> Result<OptimalMatchings> {
    check_order(p)?;
    check_pair(rho, gamma)?;
    if limit == 0 {
        return Err(Error::Parameter("matching limit must be positive".into()));
    }
    let n = rho.len();
    let cost = cost_matrix(rho, gamma, p);
    let (perms, complete) = if n == 1 {
        (vec![vec![0]], true)
    } else {
        let (_, u, v) = hungarian(&cost, n);
        TightGraph::new(&cost, n, &u, &v).enumerate(limit)
    };
    let plans = perms
        .into_iter()
        .map(|perm| Plan {
            cost: matching_cost(&cost, &perm),
            perm,
            order: p,
        })
        .collect();
    Ok(OptimalMatchings { plans, complete })
}

/// `min_σ ((1/N) Σ |x_i − y_σ(i)|^p)^{1/p}` by enumerating permutations.
pub fn quotient_metric_bruteforce(x: &EmpiricalMeasure, y: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_order(p)?;
    check_pair(x, y)?;
    let n = x.len();
    if n > 8 {
        return Err(Error::SizeLimit(format!(
            "brute-force quotient metric enumerates N! permutations, N = {n} > 8"
        )));
    }
    let cost = cost_matrix(x, y, p);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = matching_cost(&cost, &perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(matching_cost(&cost, &perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best.max(0.0).powf(1.0 / p))
}

/// Optimal doubly-stochastic coupling by linear programming (oracle, `N ≤ 5`).
pub fn coupling_lp(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure, p: f64) -> Result<Coupling> {
    check_order(p)?;
    check_pair(rho, gamma)?;
    let n = rho.len();
    if n > 5 {
        return Err(Error::SizeLimit(format!("coupling oracle limited to N ≤ 5, got {n}")));
    }
    let cost = cost_matrix(rho, gamma, p);
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = cost.iter().map(|&c| lp.add_var(c, (0.0, f64::INFINITY))).collect();
    let mass = 1.0 / n as f64;
    for i in 0..n {
        let mut row = LinearExpr::empty();
        let mut col = LinearExpr::empty();
        for j in 0..n {
            row.add(vars[i * n + j], 1.0);
            col.add(vars[j * n + i], 1.0);
        }
        lp.add_constraint(row, ComparisonOp::Eq, mass);
        lp.add_constraint(col, ComparisonOp::Eq, mass);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::InvalidInput(format!("coupling LP failed: {e}")))?;
    let matrix: Vec<f64> = vars.iter().map(|v| *sol.var_value(*v)).collect();
    Ok(Coupling {
        n,
        cost: sum::compensated(matrix.iter().zip(&cost).map(|(m, c)| m * c)),
        matrix,
    })
}

/// `W_p` between clouds on the line of any sizes, from the quantile functions.
pub fn wasserstein_1d_quantile(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    check_order(p)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("empty cloud".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    // quantile pieces in units of 1/(n m): x_i covers [i m, (i+1) m), y_j covers [j n, (j+1) n)
    let (mut i, mut j, mut cur) = (0usize, 0usize, 0usize);
    let mut parts = Vec::with_capacity(n + m);
    let unit = 1.0 / (n as f64 * m as f64);
    while i < n && j < m {
        let end = ((i + 1) * m).min((j + 1) * n);
        parts.push((end - cur) as f64 * unit * (xs[i] - ys[j]).abs().powf(p));
        cur = end;
        if end == (i + 1) * m {
            i += 1;
        }
        if end == (j + 1) * n {
            j += 1;
        }
    }
    Ok(sum::compensated(parts).max(0.0).powf(1.0 / p))
}

/// `W_p` for clouds of different sizes: quantiles on the line, otherwise
/// replication of both clouds to the least common multiple of the sizes.
pub fn wasserstein_unequal(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_order(p)?;
    if rho.dim != gamma.dim {
        return Err(Error::InvalidInput("dimensions differ".into()));
    }
    if rho.len() == gamma.len() {
        return Ok(wasserstein(rho, gamma, p)?.0);
    }
    if rho.dim == 1 {
        return wasserstein_1d_quantile(rho.atoms(), gamma.atoms(), p);
    }
    let (n, m) = (rho.len(), gamma.len());
    let g = gcd(n, m);
    let l = n / g * m;
    if l > 512 {
        return Err(Error::SizeLimit(format!(
            "replicated matching would need {l} atoms (limit 512)"
        )));
    }
    let rep = |mu: &EmpiricalMeasure, k: usize| {
        let atoms = mu.atoms.chunks(mu.dim).flat_map(|a| a.repeat(k)).collect();
        EmpiricalMeasure { dim: mu.dim, atoms }
    };
    Ok(wasserstein(&rep(rho, l / n), &rep(gamma, l / m), p)?.0)
}

/// An optimal coupling for the squared cost as `(i, j, mass)` pieces, with
/// the transport cost `Σ mass·|x_i − y_j|²`. Works for any sizes, like
/// [`wasserstein_unequal`].
pub fn w2_pieces(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure) -> Result<(f64, Vec<(usize, usize, f64)>)> {
    if rho.dim != gamma.dim {
        return Err(Error::InvalidInput("dimensions differ".into()));
    }
    let (n, m) = (rho.len(), gamma.len());
    let mut pieces = Vec::new();
    if n == m {
        let plan = optimal_plan(rho, gamma, 2.0)?;
        let w = 1.0 / n as f64;
        pieces.extend(plan.perm.iter().enumerate().map(|(i, &j)| (i, j, w)));
    } else if rho.dim == 1 {
        let order = |mu: &EmpiricalMeasure| {
            let mut idx: Vec<usize> = (0..mu.len()).collect();
            idx.sort_by(|&a, &b| mu.atoms[a].total_cmp(&mu.atoms[b]).then(a.cmp(&b)));
            idx
        };
        let (xs, ys) = (order(rho), order(gamma));
        let unit = 1.0 / (n as f64 * m as f64);
        let (mut i, mut j, mut cur) = (0usize, 0usize, 0usize);
        while i < n && j < m {
            let end = ((i + 1) * m).min((j + 1) * n);
            pieces.push((xs[i], ys[j], (end - cur) as f64 * unit));
            cur = end;
            if end == (i + 1) * m {
                i += 1;
            }
            if end == (j + 1) * n {
                j += 1;
            }
        }
    } else {
        let l = n / gcd(n, m) * m;
        if l > 512 {
            return Err(Error::SizeLimit(format!(
                "replicated matching would need {l} atoms (limit 512)"
            )));
        }
        let rep = |mu: &EmpiricalMeasure, k: usize| {
            let atoms = mu.atoms.chunks(mu.dim).flat_map(|a| a.repeat(k)).collect();
            EmpiricalMeasure { dim: mu.dim, atoms }
        };
        let (kn, km) = (l / n, l / m);
        let plan = optimal_plan(&rep(rho, kn), &rep(gamma, km), 2.0)?;
        let w = 1.0 / l as f64;
        pieces.extend(plan.perm.iter().enumerate().map(|(a, &b)| (a / kn, b / km, w)));
    }
    let cost = sum::compensated(
        pieces
            .iter()
            .map(|&(i, j, w)| w * pair_cost(rho.atom(i), gamma.atom(j), 2.0)),
    );
    Ok((cost, pieces))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Displacement interpolation `(1 − t) x_i + t y_σ(i)` along the optimal plan.
pub fn geodesic(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure, t: f64) -> Result<EmpiricalMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("geodesic time must lie in [0, 1], got {t}")));
    }
    let plan = optimal_plan(rho, gamma, 2.0)?;
    Ok(interpolate(rho, gamma, &plan.perm, t))
}

/// Interpolation along a given matching.
pub fn interpolate(rho: &EmpiricalMeasure, gamma: &EmpiricalMeasure, perm: &[usize], t: f64) -> EmpiricalMeasure {
    let d = rho.dim;
    let mut atoms = Vec::with_capacity(rho.atoms.len());
    for (i, &j) in perm.iter().enumerate() {
        let (x, y) = (rho.atom(i), gamma.atom(j));
        for a in 0..d {
            atoms.push(if t == 0.0 {
                x[a]
            } else if t == 1.0 {
                y[a]
            } else {
                (1.0 - t) * x[a] + t * y[a]
            });
        }
    }
    EmpiricalMeasure { dim: d, atoms }
}

/// Per-atom weighted mean velocity.
pub fn barycentric_projection(nu: &VelocityLists) -> Result<PhaseMeasure> {
    let d = nu.base.dim;
    if nu.lists.len() != nu.base.len() {
        return Err(Error::InvalidInput(format!(
            "{} velocity lists for {} atoms",
            nu.lists.len(),
            nu.base.len()
        )));
    }
    let mut out = Vec::with_capacity(nu.base.atoms.len());
    for (i, list) in nu.lists.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::InvalidInput(format!("atom {i} has no velocities")));
        }
        if list.iter().any(|(w, v)| !(*w > 0.0) || v.len() != d) {
            return Err(Error::InvalidInput(format!(
                "atom {i} needs positive weights and {d}-dimensional velocities"
            )));
        }
        let total = sum::compensated(list.iter().map(|(w, _)| *w));
        for a in 0..d {
            out.push(sum::compensated(list.iter().map(|(w, v)| w * v[a])) / total);
        }
    }
    PhaseMeasure::new(nu.base.clone(), out)
}

/// `(1/N) Σ w_i Σ_k |v_ik|²` with per-atom weights normalised.
pub fn kinetic_energy(nu: &VelocityLists) -> f64 {
    let n = nu.base.len() as f64;
    sum::compensated(nu.lists.iter().map(|list| {
        let total = sum::compensated(list.iter().map(|(w, _)| *w));
        sum::compensated(list.iter().map(|(w, v)| w * v.iter().map(|x| x * x).sum::<f64>())) / total
    })) / n
}

/// `⟨ν₁, ν₂⟩_ρ = (1/N) Σ v¹_i · v²_i` for map-type elements over the same atoms.
pub fn tangent_pairing(nu1: &PhaseMeasure, nu2: &PhaseMeasure) -> Result<f64> {
    if nu1.base != nu2.base {
        return Err(Error::InvalidInput(
            "tangent pairing needs both elements over the same atoms".into(),
        ));
    }
    let n = nu1.base.len() as f64;
    Ok(sum::compensated(nu1.velocities.iter().zip(&nu2.velocities).map(|(a, b)| a * b)) / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_example() {
        let a = EmpiricalMeasure::line(&[0.0, 1.0]).unwrap();
        let b = EmpiricalMeasure::line(&[0.2, 0.9]).unwrap();
        let (d, plan) = wasserstein(&a, &b, 2.0).unwrap();
        assert_eq!(plan.perm, vec![0, 1]);
        assert!((d - 0.025f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ties_pick_smallest_permutation() {
        let a = EmpiricalMeasure::line(&[-1.0, 1.0]).unwrap();
        let b = EmpiricalMeasure::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let plan = optimal_plan(&a, &b, 2.0).unwrap();
        assert_eq!(plan.perm, vec![0, 1]);
        let all = optimal_matchings(&a, &b, 2.0, 24).unwrap();
        assert_eq!(all.plans.len(), 2);
        assert!(all.complete && !all.unique());
    }

    #[test]
    fn enumeration_respects_limit() {
        let a = EmpiricalMeasure::line(&[0.0; 5]).unwrap();
        let all = optimal_matchings(&a, &a, 2.0, 24).unwrap();
        assert_eq!(all.plans.len(), 24);
        assert!(!all.complete);
        let all = optimal_matchings(&a, &a, 2.0, 200).unwrap();
        assert_eq!(all.plans.len(), 120);
        assert!(all.complete);
    }

    #[test]
    fn quantile_distance_handles_unequal_sizes() {
        let d = wasserstein_1d_quantile(&[0.0], &[0.0, 1.0], 2.0).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        let d = wasserstein_1d_quantile(&[0.0, 1.0, 2.0], &[0.0, 2.0], 1.0).unwrap();
        // quantiles: x = 0,1,2 on thirds; y = 0,2 on halves
        assert!((d - (1.0 / 6.0 + 1.0 / 6.0)).abs() < 1e-15);
        let e = EmpiricalMeasure::line(&[0.3, -0.2]).unwrap();
        let f = EmpiricalMeasure::line(&[0.1, 0.5]).unwrap();
        let w = wasserstein(&e, &f, 2.0).unwrap().0;
        assert!((wasserstein_1d_quantile(e.atoms(), f.atoms(), 2.0).unwrap() - w).abs() < 1e-15);
    }

    #[test]
    fn unequal_counts_are_unsupported() {
        let a = EmpiricalMeasure::line(&[0.0]).unwrap();
        let b = EmpiricalMeasure::line(&[0.0, 1.0]).unwrap();
        assert!(matches!(wasserstein(&a, &b, 2.0), Err(Error::Unsupported(_))));
        assert!(matches!(wasserstein(&a, &a, 0.5), Err(Error::Parameter(_))));
    }
}
