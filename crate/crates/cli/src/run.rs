//! Subcommand runners. Each one returns its artifacts in memory so nothing
//! is written when a run fails part way.

use crate::config::*;
use crate::Common;
use anyhow::{anyhow, bail, Context, Result};
use hydrolab::cell::{EffectiveTable, MinimaxOptions, TableOptions};
use hydrolab::dynamics::{integrate_strided, ParticleCost, ParticleState};
use hydrolab::grid::{Axis, GridFunction};
use hydrolab::hydro::{euler_residual, fields_from_state, Bins, Bump, FieldSnapshot, ResidualStats, VelocityMap};
use hydrolab::model::{Confinement, Interaction, MacroPotentials, MicroModel, PeriodicPotential};
use hydrolab::operators::{evaluate_all, Psi, Sign, TestFunction, MATCHING_LIMIT};
use hydrolab::par;
use hydrolab::transport::{optimal_matchings, wasserstein, wasserstein_unequal, EmpiricalMeasure};
use hydrolab::value::{
    converge_harness, growth_sandwich, quantile_sample, resolve_continuum, resolve_particle, ConvergeSetup,
    TerminalData, ValueEstimate, ValueOptions,
};
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use std::path::Path;
use std::time::Instant;

struct Outcome {
    converged: bool,
    summary: Value,
    artifacts: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(converged: bool, summary: Value) -> Self {
        Self {
            converged,
            summary,
            artifacts: Vec::new(),
        }
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.artifacts.push((name.to_string(), bytes));
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))?;
        self.artifacts.push((name.to_string(), bytes));
        Ok(())
    }
}

struct Ctx<'a> {
    cfg: &'a Config,
    config_path: &'a Path,
    seed: u64,
}

pub fn run(kind: Kind, common: &Common) -> Result<bool> {
    let start = Instant::now();
    let cfg = Config::load(&common.config)?;
    if let Some(k) = cfg.kind {
        if k != kind {
            bail!("config is for `{}`, not `{}`", k.name(), kind.name());
        }
    }
    match common.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(1) => par::set_sequential(true),
        Some(n) => par::configure_threads(n),
        None => {}
    }
    let seed = common.seed.unwrap_or(cfg.seed);
    let default_out = format!("hydrolab-out/{}", kind.name());
    let out = relative_to(&common.config, cfg.output.as_deref().unwrap_or(&default_out));
    if out.exists() && !common.force {
        bail!("output directory {} exists; pass --force to overwrite", out.display());
    }
    let ctx = Ctx {
        cfg: &cfg,
        config_path: &common.config,
        seed,
    };
    let outcome = match kind {
        Kind::Cell => cell(&ctx),
        Kind::W2 => w2(&ctx),
        Kind::Simulate => simulate(&ctx),
        Kind::Resolve => resolve(&ctx),
        Kind::Converge => converge(&ctx),
        Kind::Operators => operators(&ctx),
        Kind::Hydro => hydro(&ctx),
    }?;
    write_outputs(&out, kind, &cfg, seed, common.threads, outcome, start)
}

fn write_outputs(
    out: &Path,
    kind: Kind,
    cfg: &Config,
    seed: u64,
    threads: Option<usize>,
    outcome: Outcome,
    start: Instant,
) -> Result<bool> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut names = Vec::new();
    for (name, bytes) in &outcome.artifacts {
        let path = out.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        names.push(name.clone());
    }
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind.name(),
        "seed": seed,
        "threads": threads,
        "versions": {
            "hydrolab": hydrolab::VERSION,
            "hydrolab-cli": env!("CARGO_PKG_VERSION"),
        },
        "config": serde_json::to_value(cfg)?,
        "converged": outcome.converged,
        "summary": outcome.summary,
        "artifacts": names,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(out.join("manifest.json"), bytes).context("cannot write manifest.json")?;
    Ok(outcome.converged)
}

fn num(x: f64) -> String {
    x.to_string()
}

/// `name` in one dimension, `name_1 … name_d` otherwise.
fn columns(name: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![name.to_string()]
    } else {
        (1..=d).map(|a| format!("{name}_{a}")).collect()
    }
}

fn axis(g: &GridConfig, key: &str) -> Result<Axis> {
    Axis::uniform(g.min, g.max, g.points).map_err(|e| anyhow!("{key}: {e}"))
}

fn potential(cfg: &PotentialConfig) -> PeriodicPotential {
    match *cfg {
        PotentialConfig::Zero => PeriodicPotential::Zero,
        PotentialConfig::Sin2 { amplitude } => PeriodicPotential::SinSquared { amplitude },
    }
}

fn build_model(cfg: &Config) -> Result<MicroModel> {
    let m = &cfg.model;
    if m.dim == 0 {
        bail!("model.dim must be at least 1");
    }
    let u = potential(&m.potential);
    let model = match m.kind {
        ModelKind::Free => MicroModel::free(m.dim),
        ModelKind::Quadratic => MicroModel::quadratic(m.dim, u)?,
        ModelKind::Tabulated => {
            if m.dim != 1 {
                bail!("model.kind `tabulated` is one-dimensional");
            }
            let axes = vec![Axis::unit_cell(cfg.cell.qgrid), axis(&m.pgrid, "model.pgrid")?];
            let table = GridFunction::from_fn(axes, |z| 0.5 * z[1] * z[1] - u.value(&z[..1]))?;
            MicroModel::tabulated(table)?
        }
    };
    Ok(match (m.c, m.big_c) {
        (Some(c), Some(big_c)) => model.with_growth(c, big_c),
        (None, None) => model,
        _ => bail!("model.c and model.C must be given together"),
    })
}

fn build_macro(cfg: &Config) -> MacroPotentials {
    let u = match cfg.macro_.u {
        ConfinementConfig::Zero => Confinement::Zero,
        ConfinementConfig::LogGrowth { u0 } => Confinement::LogGrowth { u0 },
    };
    let v = match cfg.macro_.v {
        InteractionConfig::Zero => Interaction::Zero,
        InteractionConfig::Gaussian { v0 } => Interaction::Gaussian { v0 },
    };
    MacroPotentials::new(u, v)
}

fn minimax_options(cfg: &Config, seed: u64) -> MinimaxOptions {
    MinimaxOptions {
        modes: cfg.cell.modes,
        qgrid: cfg.cell.qgrid,
        restarts: cfg.cell.restarts,
        max_iter: cfg.cell.max_iter,
        seed,
        ..MinimaxOptions::default()
    }
}

fn value_options(cfg: &Config, seed: u64) -> ValueOptions {
    let v = &cfg.value;
    ValueOptions {
        knots: v.knots,
        restarts: v.restarts,
        seed,
        max_iter: v.max_iter,
        tail_tol: v.tmax_tol,
        refine_tol: v.refine_tol,
        max_knots: v.max_knots,
        ..ValueOptions::default()
    }
}

/// The effective table on the `table` grids: closed form where one exists,
/// minimax brackets otherwise.
fn effective_table(cfg: &Config, model: &MicroModel, seed: u64) -> Result<EffectiveTable> {
    let d = model.dim;
    let p = vec![axis(&cfg.table.p, "table.p")?; d];
    let v = vec![axis(&cfg.table.v, "table.v")?; d];
    let u = potential(&cfg.model.potential);
    let free = cfg.model.kind == ModelKind::Free || (cfg.model.kind == ModelKind::Quadratic && u == PeriodicPotential::Zero);
    Ok(if free {
        EffectiveTable::quadratic(p, v)?
    } else if cfg.model.kind == ModelKind::Quadratic && d == 1 {
        EffectiveTable::explicit_1d(&u, p[0].clone(), v[0].clone(), cfg.cell.tol)?
    } else {
        let opts = TableOptions {
            minimax: minimax_options(cfg, seed),
            tol: cfg.cell.tol,
            explicit: true,
        };
        EffectiveTable::build(model, p, v, &opts)?
    })
}

fn flatten(rows: &[Vec<f64>], d: usize, key: &str) -> Result<Vec<f64>> {
    if rows.is_empty() {
        bail!("{key} is empty");
    }
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        bail!("{key}[{i}] has {} coordinates, expected {d}", rows[i].len());
    }
    Ok(rows.concat())
}

fn terminal(cfg: &Config, d: usize) -> Result<TerminalData> {
    let t = &cfg.terminal;
    Ok(match t.kind {
        TerminalKind::Constant => TerminalData::Constant(t.value),
        TerminalKind::NegDistSquared => {
            let gamma = match &t.reference {
                Some(rows) => EmpiricalMeasure::new(d, flatten(rows, d, "terminal.reference")?)?,
                None if d == 1 => {
                    EmpiricalMeasure::line(&quantile_sample(t.reference_mean, t.reference_sd, t.reference_atoms)?)?
                }
                None => bail!("terminal.reference is required in dimension {d}"),
            };
            TerminalData::neg_dist_squared(t.a, gamma)?
        }
    })
}

fn estimate_json(e: &ValueEstimate) -> Value {
    json!({
        "value": e.value,
        "converged": e.converged,
        "knots": e.knots,
        "restarts": e.restarts,
        "horizon": e.horizon,
        "tail_bound": e.tail_bound,
    })
}

fn cell(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let d = model.dim;
    let opts = TableOptions {
        minimax: minimax_options(cfg, ctx.seed),
        tol: cfg.cell.tol,
        explicit: true,
    };
    let p = vec![axis(&cfg.cell.p_grid, "cell.Pgrid")?; d];
    let v = vec![axis(&cfg.table.v, "table.v")?; d];
    let t = EffectiveTable::build(&model, p, v, &opts)?;
    let mut header = columns("P", d);
    header.extend(["lower", "upper", "explicit", "corrector_modes"].map(String::from));
    let rows = (0..t.len()).map(|k| {
        let mut row: Vec<String> = t.p_point(k).into_iter().map(num).collect();
        row.push(num(t.lower[k]));
        row.push(num(t.upper[k]));
        row.push(t.explicit.as_ref().map_or(String::new(), |e| num(e[k])));
        row.push(t.modes.to_string());
        row
    });
    let summary = json!({ "nodes": t.len(), "max_width": t.max_width() });
    let mut out = Outcome::new(t.converged, summary);
    out.csv("cell.csv", &header, rows.collect::<Vec<_>>())?;
    Ok(out)
}

fn read_cloud(path: &Path) -> Result<EmpiricalMeasure> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}: not a number", path.display(), i + 1))?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} holds no atoms", path.display());
    }
    Ok(EmpiricalMeasure::from_rows(&rows)?)
}

fn w2(ctx: &Ctx) -> Result<Outcome> {
    let w = ctx.cfg.w2.as_ref().ok_or_else(|| anyhow!("config needs a `w2` section"))?;
    let a = read_cloud(&relative_to(ctx.config_path, &w.a))?;
    let b = read_cloud(&relative_to(ctx.config_path, &w.b))?;
    if a.dim() != b.dim() {
        bail!("clouds live in dimensions {} and {}", a.dim(), b.dim());
    }
    let result = if a.len() == b.len() {
        let (distance, plan) = wasserstein(&a, &b, w.p)?;
        let all = optimal_matchings(&a, &b, w.p, MATCHING_LIMIT)?;
        json!({
            "distance": distance,
            "p": w.p,
            "cost": plan.cost,
            "matching": plan.perm,
            "optimal_matchings": all.plans.len(),
            "unique": all.unique(),
            "complete": all.complete,
        })
    } else if a.dim() == 1 {
        json!({
            "distance": wasserstein_unequal(&a, &b, w.p)?,
            "p": w.p,
            "matching": Value::Null,
        })
    } else {
        bail!("unequal atom counts ({} and {}) are supported on the line only", a.len(), b.len());
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    let mut out = Outcome::new(true, json!({ "distance": result["distance"] }));
    out.json("w2.json", &result)?;
    Ok(out)
}

fn simulate(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let dy = &cfg.dynamics;
    let model = build_model(cfg)?;
    let macro_ = build_macro(cfg);
    let d = model.dim;
    let n = dy.particles;
    if n == 0 || dy.stride == 0 {
        bail!("dynamics.particles and dynamics.stride must be at least 1");
    }
    let mut rng = par::stream(dy.seed.unwrap_or(ctx.seed), 0);
    let nx = Normal::new(0.0, dy.x_sd).map_err(|e| anyhow!("dynamics.x_sd: {e}"))?;
    let np = Normal::new(0.0, dy.p_sd).map_err(|e| anyhow!("dynamics.p_sd: {e}"))?;
    let x: Vec<f64> = (0..n * d).map(|_| nx.sample(&mut rng)).collect();
    let p: Vec<f64> = (0..n * d).map(|_| np.sample(&mut rng)).collect();
    let state = ParticleState::new(d, x, p, dy.eps)?;
    let traj = integrate_strided(&state, &model, &macro_, dy.dt, dy.steps, dy.stride)?;
    if traj.stiff {
        eprintln!("warning: dt = {} exceeds eps/10; the fast scale is under-resolved", dy.dt);
    }
    let mut header = vec!["t".to_string(), "particle".to_string()];
    header.extend(columns("x", d));
    header.extend(columns("P", d));
    let mut rows = Vec::with_capacity(traj.states.len() * n);
    for s in &traj.states {
        for i in 0..n {
            let mut row = vec![num(s.t), i.to_string()];
            row.extend(s.x[i * d..(i + 1) * d].iter().copied().map(num));
            row.extend(s.p[i * d..(i + 1) * d].iter().copied().map(num));
            rows.push(row);
        }
    }
    let summary = json!({
        "particles": n,
        "snapshots": traj.states.len(),
        "relative_energy_drift": traj.relative_drift(),
        "symplectic": traj.symplectic,
        "stiff": traj.stiff,
    });
    let mut out = Outcome::new(true, summary);
    out.csv("trajectory.csv", &header, rows)?;
    Ok(out)
}

fn resolve(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let macro_ = build_macro(cfg);
    let d = model.dim;
    let h = terminal(cfg, d)?;
    let x = flatten(&cfg.resolve.x, d, "resolve.x")?;
    let opts = value_options(cfg, ctx.seed);
    let eps = cfg.dynamics.eps;
    let alpha = cfg.value.alpha;
    let est = resolve_particle(&h, alpha, &x, &model, &macro_, eps, &opts)?;
    let cost = ParticleCost {
        model: &model,
        macro_: &macro_,
        eps,
    };
    let (lo, hi) = growth_sandwich(&h, alpha, &x, &cost)?;
    let mut result = json!({
        "particle": estimate_json(&est),
        "sandwich": [lo, hi],
    });
    let mut converged = est.converged;
    if cfg.resolve.continuum {
        let table = effective_table(cfg, &model, ctx.seed)?;
        let rho = EmpiricalMeasure::new(d, x)?;
        let c = resolve_continuum(&h, alpha, &rho, &table, &macro_, &opts)?;
        converged &= c.converged;
        result["continuum"] = estimate_json(&c);
    }
    let mut out = Outcome::new(converged, json!({ "value": est.value }));
    out.json("resolve.json", &result)?;
    Ok(out)
}

fn converge(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let macro_ = build_macro(cfg);
    let s = &cfg.schedule;
    let schedule: Vec<(usize, f64)> = match &s.eps {
        Some(eps) if eps.len() != s.n.len() => {
            bail!("schedule.eps has {} entries but schedule.N has {}", eps.len(), s.n.len())
        }
        Some(eps) => s.n.iter().copied().zip(eps.iter().copied()).collect(),
        None => s.n.iter().map(|&n| (n, (n as f64).powf(-s.exponent))).collect(),
    };
    let setup = ConvergeSetup {
        alpha: cfg.value.alpha,
        schedule,
        mean: cfg.converge.mean,
        sd: cfg.converge.sd,
        continuum_atoms: cfg.converge.continuum_atoms,
        opts: value_options(cfg, ctx.seed),
    };
    let h = terminal(cfg, model.dim)?;
    let table = effective_table(cfg, &model, ctx.seed)?;
    let t = converge_harness(&h, &setup, &model, &macro_, &table)?;
    let header = ["N", "eps", "d_emp_to_target", "f_N", "f_limit", "error", "wall_time_s"].map(String::from);
    let rows = t.rows.iter().map(|r| {
        vec![
            r.n.to_string(),
            num(r.eps),
            num(r.d_emp_to_target),
            num(r.f_n),
            num(r.f_limit),
            num(r.error),
            num(r.wall_time_s),
        ]
    });
    let converged = t.limit.converged && t.rows.iter().all(|r| r.converged);
    let summary = json!({
        "limit": estimate_json(&t.limit),
        "rows_converged": t.rows.iter().map(|r| r.converged).collect::<Vec<_>>(),
    });
    let mut out = Outcome::new(converged, summary);
    out.csv("converge.csv", &header, rows.collect::<Vec<_>>())?;
    Ok(out)
}

fn operators(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let oc = cfg.operators.as_ref().ok_or_else(|| anyhow!("config needs an `operators` section"))?;
    let path = relative_to(ctx.config_path, &oc.instance);
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let inst: Instance = strict(serde_json::from_str(&text).context("instance is not valid JSON")?, "instance")?;
    let model = build_model(cfg)?;
    let macro_ = build_macro(cfg);
    let d = model.dim;
    let rho = EmpiricalMeasure::new(d, flatten(&inst.atoms, d, "atoms")?)?;
    let anchors = inst
        .anchors
        .iter()
        .enumerate()
        .map(|(k, a)| Ok(EmpiricalMeasure::new(d, flatten(a, d, &format!("anchors[{k}]"))?)?))
        .collect::<Result<Vec<_>>>()?;
    let psi = match inst.psi {
        PsiConfig::Linear { a } => Psi::Linear(a),
        PsiConfig::Capped { a, cap } => Psi::Capped { a, cap },
    };
    let table = effective_table(cfg, &model, ctx.seed)?;
    let hv = table.v_axes()[0].step;
    let hp = table.p_axes()[0].step;
    let slack = d as f64 * (hv * hv + hp * hp) / 8.0;
    let plus = evaluate_all(&TestFunction::new(Sign::Plus, anchors.clone(), psi.clone())?, &rho, &table, &macro_)?;
    let minus = evaluate_all(&TestFunction::new(Sign::Minus, anchors, psi)?, &rho, &table, &macro_)?;
    let result = json!({
        "values": {
            "bbh0": plus.bbh.value,
            "bfh0": plus.bfh.value,
            "bfh_f0": plus.h,
            "bbh1": minus.bbh.value,
            "bfh1": minus.bfh.value,
            "bfh_f1": minus.h,
        },
        "flags": {
            "unique0": plus.bbh.unique,
            "complete0": plus.bbh.complete && plus.bfh.complete,
            "chain0": plus.chain_holds(Sign::Plus, 1e-9, slack),
            "unique1": minus.bbh.unique,
            "complete1": minus.bbh.complete && minus.bfh.complete,
            "chain1": minus.chain_holds(Sign::Minus, 1e-9, slack),
        },
        "plans": {
            "bbh0": plus.bbh.plans,
            "bfh0": plus.bfh.plans,
            "bbh1": minus.bbh.plans,
            "bfh1": minus.bfh.plans,
        },
    });
    println!("{}", serde_json::to_string_pretty(&result)?);
    let complete = plus.bbh.complete && plus.bfh.complete && minus.bbh.complete && minus.bfh.complete;
    let mut out = Outcome::new(complete, json!({ "values": result["values"] }));
    out.json("operators.json", &result)?;
    Ok(out)
}

/// Snapshots of a trajectory CSV with columns `t, particle, x…, P…`.
fn read_trajectory(path: &Path, d: usize, eps: f64) -> Result<Vec<ParticleState>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let width = r.headers()?.len();
    if width != 2 + 2 * d {
        bail!("{} has {width} columns; dimension {d} needs {}", path.display(), 2 + 2 * d);
    }
    let mut states = Vec::new();
    let mut current: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let finish = |(t, x, p): (f64, Vec<f64>, Vec<f64>)| -> Result<ParticleState> {
        let mut s = ParticleState::new(d, x, p, eps)?;
        s.t = t;
        Ok(s)
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}: not a number", path.display(), line + 1))?;
        let t = vals[0];
        let particle = vals[1] as usize;
        if current.as_ref().is_some_and(|c| c.0 != t) {
            states.push(finish(current.take().expect("checked"))?);
        }
        let entry = current.get_or_insert_with(|| (t, Vec::new(), Vec::new()));
        if particle != entry.1.len() / d {
            bail!("{} row {}: particles must be listed 0, 1, … per time", path.display(), line + 1);
        }
        entry.1.extend_from_slice(&vals[2..2 + d]);
        entry.2.extend_from_slice(&vals[2 + d..]);
    }
    if let Some(c) = current {
        states.push(finish(c)?);
    }
    if let Some(k) = states.iter().position(|s| s.len() != states[0].len()) {
        bail!("snapshot {k} has {} particles, the first has {}", states[k].len(), states[0].len());
    }
    Ok(states)
}

fn stats_json(s: &ResidualStats) -> Value {
    json!({ "max": s.max, "mean": s.mean, "flux_scale": s.flux_scale, "relative": s.relative() })
}

fn field_rows(s: &FieldSnapshot) -> Vec<Vec<String>> {
    let d = s.bins.dim();
    (0..s.bins.len())
        .map(|k| {
            let mut row: Vec<String> = s.bins.center(k).into_iter().map(num).collect();
            row.push(s.occupancy[k].to_string());
            row.push(num(s.density[k]));
            row.extend(s.velocity[k * d..(k + 1) * d].iter().copied().map(num));
            row.extend(s.momentum[k * d..(k + 1) * d].iter().copied().map(num));
            row.push(num(s.temperature[k]));
            row.push(num(s.pressure[k]));
            row
        })
        .collect()
}

fn hydro(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let hc = cfg.hydro.as_ref().ok_or_else(|| anyhow!("config needs a `hydro` section"))?;
    let model = build_model(cfg)?;
    let macro_ = build_macro(cfg);
    let d = model.dim;
    let bins = Bins::new(hc.bins.min.clone(), hc.bins.max.clone(), hc.bins.counts.clone())?;
    if bins.dim() != d {
        bail!("hydro.bins are {}-dimensional but the model is {d}-dimensional", bins.dim());
    }
    let states = read_trajectory(&relative_to(ctx.config_path, &hc.trajectory), d, cfg.dynamics.eps)?;
    let u = potential(&cfg.model.potential);
    let identity = cfg.model.kind == ModelKind::Free || (cfg.model.kind == ModelKind::Quadratic && u == PeriodicPotential::Zero);
    let table = if identity { None } else { Some(effective_table(cfg, &model, ctx.seed)?) };
    let map = match &table {
        Some(t) => VelocityMap::Table(t),
        None => VelocityMap::Identity,
    };
    let snaps = par::map(&states, |s| fields_from_state(s, map, &bins))
        .into_iter()
        .collect::<hydrolab::Result<Vec<_>>>()?;
    let tests: Vec<Bump> = hc
        .tests
        .centers
        .iter()
        .map(|c| Bump {
            center: c.clone(),
            radius: hc.tests.radius,
        })
        .collect();
    let res = euler_residual(&snaps, &tests, hc.source.then_some(&macro_))?;
    let mut header = columns("x", d);
    header.extend(["occupancy", "density"].map(String::from));
    header.extend(columns("velocity", d));
    header.extend(columns("momentum", d));
    header.extend(["temperature", "pressure"].map(String::from));
    let residuals = json!({
        "snapshots": snaps.len(),
        "continuity": stats_json(&res.continuity),
        "momentum": stats_json(&res.momentum),
        "nonsmooth": snaps.iter().any(|s| s.nonsmooth),
        "source": hc.source,
    });
    let mut out = Outcome::new(true, residuals.clone());
    for (k, s) in snaps.iter().enumerate() {
        out.csv(&format!("fields_{k:04}.csv"), &header, field_rows(s))?;
    }
    out.json("residuals.json", &residuals)?;
    Ok(out)
}
