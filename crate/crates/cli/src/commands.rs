use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use cpr::regions::{write_boundary_csv, Cell};
use cpr::{
    classify_load, de_fixed_point, epsilon_stable, extract_boundary, load_preset, map_region,
    parse_config, percolation_threshold_1d, preset_names, run_trials, success_probabilities,
    throughput, throughput_surface, Axis, Criterion, DeOptions, EpsilonSpec, GridSpec, MapOptions,
    ReceiverKind, RegionMap, SimOptions, Start, SystemConfig, Tolerances, Verdict,
};
use log::warn;
use serde_json::{json, Value};

use crate::args::{
    ClassifyArgs, Cli, Command, CriterionArgs, CriterionKind, DeTraceArgs, GridArgs, LoadArgs,
    RegionArgs, SimulateArgs, StartArg, ThresholdArgs, ThroughputArgs, TolArgs,
};
use crate::manifest::{with_manifest, Artifacts, ConfigRecord, ConfigSource, RunManifest};

/// Invalid flag values or combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    Indeterminate,
}

impl Status {
    fn from_flag(indeterminate: bool) -> Self {
        if indeterminate {
            Status::Indeterminate
        } else {
            Status::Done
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: SystemConfig,
    record: ConfigRecord,
    tols: Tolerances,
}

impl Ctx<'_> {
    fn k(&self) -> usize {
        self.config.num_user_classes()
    }

    fn manifest(&self, params: &impl serde::Serialize, seed: Option<u64>) -> RunManifest {
        RunManifest::new(
            self.cli.command.name(),
            Some(self.record.clone()),
            serde_json::to_value(params).expect("arguments serialize"),
            tolerance_record(&self.cli.tols, &self.tols),
            seed,
        )
    }

    fn artifacts<'m>(&'m self, manifest: &'m RunManifest) -> Artifacts<'m> {
        Artifacts {
            dir: &self.cli.out_dir,
            manifest,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Status> {
    if let Command::Presets = cli.command {
        let mut out = std::io::stdout().lock();
        for name in preset_names() {
            if writeln!(out, "{name}").is_err() {
                break;
            }
        }
        return Ok(Status::Done);
    }
    let (config, source) = match (&cli.config, &cli.preset) {
        (Some(path), None) => (parse_config(path)?.1, ConfigSource::Path(path.clone())),
        (None, Some(name)) => (load_preset(name)?.1, ConfigSource::Preset(name.clone())),
        _ => return usage("exactly one of --config and --preset is required"),
    };
    warn_on_rising_success(&config);
    let ctx = Ctx {
        record: ConfigRecord {
            source,
            digest: config.digest(),
        },
        config,
        tols: tolerances(&cli.tols)?,
        cli,
    };
    match &cli.command {
        Command::Classify(a) => classify(&ctx, a),
        Command::Threshold(a) => threshold(&ctx, a),
        Command::Region(a) => region(&ctx, a),
        Command::Throughput(a) => throughput_cmd(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::DeTrace(a) => de_trace(&ctx, a),
        Command::Presets => unreachable!("handled above"),
    }
}

fn warn_on_rising_success(config: &SystemConfig) {
    for (j, class) in config.receivers().iter().enumerate() {
        if matches!(class.model.kind(), ReceiverKind::Rayleigh { .. }) {
            let rise = class.model.max_monotonicity_violation(10.0, 2000, 0);
            if rise > 1e-9 {
                warn!(
                    "receiver class {j}: success probability increases with load by up to \
                     {rise:.3e}; results that assume monotone receivers may not hold"
                );
            }
        }
    }
}

fn tolerances(t: &TolArgs) -> Result<Tolerances> {
    let mut de = if t.figure {
        DeOptions::figure_preset()
    } else {
        DeOptions::default()
    };
    if let Some(tol) = t.de_tol {
        de.tol = tol;
    }
    if let Some(n) = t.max_iter {
        de.max_iter = n;
    }
    if !(t.stable_tol > 0.0 && t.equal_tol > 0.0) {
        return usage("--stable-tol and --equal-tol must be positive");
    }
    Ok(Tolerances {
        stable_tol: t.stable_tol,
        equal_tol: t.equal_tol,
        de,
        strict_weak: t.strict_weak,
        weak_scan_points: t.weak_scan_points,
    })
}

fn tolerance_record(args: &TolArgs, t: &Tolerances) -> Value {
    json!({
        "stable_tol": t.stable_tol,
        "equal_tol": t.equal_tol,
        "de_tol": t.de.tol,
        "max_iter": t.de.max_iter,
        "round_success": t.de.round_success,
        "figure": args.figure,
        "strict_weak": t.strict_weak,
        "weak_scan_points": t.weak_scan_points,
    })
}

fn resolve_load(k: usize, g: &[f64], direction: Option<&[f64]>) -> Result<Vec<f64>> {
    match (g, direction) {
        ([scale], Some(d)) if d.len() == k => Ok(d.iter().map(|x| x * scale).collect()),
        (_, Some(d)) if d.len() != k => {
            usage(format!("--direction needs {k} values, got {}", d.len()))
        }
        (_, Some(_)) => usage("--direction takes a single --g value"),
        (g, None) if g.len() == k => Ok(g.to_vec()),
        ([_], None) => usage(format!(
            "one --g value for {k} classes is ambiguous; give {k} values or add --direction"
        )),
        (g, None) => usage(format!("--g needs {k} values, got {}", g.len())),
    }
}

fn load(ctx: &Ctx, l: &LoadArgs) -> Result<Vec<f64>> {
    resolve_load(ctx.k(), &l.g, l.direction.as_deref())
}

fn eps_spec(eps: &[f64], k: usize) -> Result<EpsilonSpec> {
    Ok(match eps.len() {
        1 => EpsilonSpec::uniform(k, eps[0])?,
        n if n == k => EpsilonSpec::new(eps.to_vec())?,
        n => return usage(format!("--eps needs 1 or {k} values, got {n}")),
    })
}

fn criterion(c: &CriterionArgs, k: usize) -> Result<Criterion> {
    match (c.criterion, c.eps.is_empty()) {
        (CriterionKind::Eps, true) => usage("--criterion eps needs --eps"),
        (CriterionKind::Eps, false) => Ok(Criterion::EpsilonStable(eps_spec(&c.eps, k)?)),
        (_, false) => usage("--eps only applies to --criterion eps"),
        (CriterionKind::Stable, true) => Ok(Criterion::Stable),
        (CriterionKind::Weak, true) => Ok(Criterion::WeaklyStable),
    }
}

fn parse_axis(s: &str) -> Result<Axis> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return usage(format!("axis `{s}` is not LO:HI:STEP"));
    };
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| UsageError(format!("axis `{s}`: `{x}` is not a number")))
    };
    Ok(Axis::new(num(lo)?, num(hi)?, num(step)?)?)
}

fn grid(g: &GridArgs, k: usize) -> Result<GridSpec> {
    let axes: Vec<Axis> = g
        .axes
        .iter()
        .map(|s| parse_axis(s))
        .collect::<Result<_>>()?;
    let axes = match axes.len() {
        0 => return usage("--axis is required"),
        1 => vec![axes[0]; k],
        n if n == k => axes,
        n => return usage(format!("--axis needs 1 or {k} values, got {n}")),
    };
    Ok(GridSpec::new(axes)?)
}

fn print_json(value: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn classify(ctx: &Ctx, a: &ClassifyArgs) -> Result<Status> {
    let g = load(ctx, &a.load)?;
    let v = classify_load(&ctx.config, &g, &ctx.tols)?;
    let mut payload = json!({
        "g": g,
        "verdict": v.class,
        "q_from_ones": v.q_from_ones,
        "q_from_zeros": v.q_from_zeros,
        "success": v.success_probs,
        "iterations": [v.iterations.0, v.iterations.1],
    });
    if !a.eps.is_empty() {
        let eps = eps_spec(&a.eps, ctx.k())?;
        let e = epsilon_stable(&ctx.config, &g, &eps, &ctx.tols)?;
        payload["epsilon"] = json!({
            "eps": eps.as_slice(),
            "is_stable": e.is_stable,
            "guaranteed_success": e.guaranteed_success,
            "floor_condition": e.floor_condition,
        });
    }
    print_json(&with_manifest(&ctx.manifest(a, None), payload))?;
    Ok(Status::from_flag(v.class == Verdict::Indeterminate))
}

fn threshold(ctx: &Ctx, a: &ThresholdArgs) -> Result<Status> {
    let criterion = criterion(&a.criterion, ctx.k())?;
    let (lo, hi) = (a.bracket[0], a.bracket[1]);
    let t = percolation_threshold_1d(
        &ctx.config,
        &a.direction,
        (lo, hi),
        &criterion,
        a.tol,
        &ctx.tols,
    )?;
    let payload = json!({
        "direction": a.direction,
        "criterion": criterion,
        "bracket": [lo, hi],
        "threshold": t,
        "tol": a.tol,
    });
    print_json(&with_manifest(&ctx.manifest(a, None), payload))?;
    Ok(Status::Done)
}

fn map_options(ctx: &Ctx, g: &GridArgs) -> MapOptions {
    MapOptions {
        workers: ctx.cli.workers,
        max_cells: g.max_cells,
    }
}

/// Writes `<stem>.csv`, `<stem>.json` and, for planar maps,
/// `<stem>_boundary.csv`.
fn write_map(art: &Artifacts, stem: &str, map: &RegionMap) -> Result<Vec<PathBuf>> {
    let mut files = vec![
        art.csv(&format!("{stem}.csv"), |w| map.write_csv(&mut &mut *w))?,
        art.json(&format!("{stem}.json"), json!({ "map": map }))?,
    ];
    if map.grid.axes.len() == 2 {
        let lines = extract_boundary(map)?;
        files.push(art.csv(&format!("{stem}_boundary.csv"), |w| {
            write_boundary_csv(&lines, &mut &mut *w)
        })?);
    }
    Ok(files)
}

fn map_summary(map: &RegionMap, files: &[PathBuf]) -> (Value, bool) {
    let count = |f: fn(&Cell) -> bool| map.cells.iter().filter(|c| f(c)).count();
    let indeterminate = count(|c| c.verdict == Verdict::Indeterminate);
    let summary = json!({
        "cells": map.cells.len(),
        "satisfied": count(|c| c.satisfied),
        "indeterminate": indeterminate,
        "files": files,
    });
    (summary, indeterminate > 0)
}

fn region(ctx: &Ctx, a: &RegionArgs) -> Result<Status> {
    let criterion = criterion(&a.criterion, ctx.k())?;
    let grid = grid(&a.grid, ctx.k())?;
    let map = map_region(
        &ctx.config,
        &grid,
        &criterion,
        &ctx.tols,
        &map_options(ctx, &a.grid),
    )?;
    let manifest = ctx.manifest(a, None);
    let files = write_map(&ctx.artifacts(&manifest), "region", &map)?;
    let (mut summary, indeterminate) = map_summary(&map, &files);
    if let Some(c) = map.corner() {
        summary["corner"] = json!(c.g);
    }
    print_json(&summary)?;
    Ok(Status::from_flag(indeterminate))
}

fn throughput_cmd(ctx: &Ctx, a: &ThroughputArgs) -> Result<Status> {
    let manifest = ctx.manifest(a, None);
    if let Some(g) = &a.g {
        let g = resolve_load(ctx.k(), g, a.direction.as_deref())?;
        let t = throughput(&ctx.config, &g, &ctx.tols.de)?;
        let payload = json!({
            "g": g,
            "per_class": t.per_class,
            "total": t.total,
            "success": t.success,
            "converged": t.fixed_point.converged,
            "iterations": t.fixed_point.iterations,
        });
        print_json(&with_manifest(&manifest, payload))?;
        return Ok(Status::from_flag(!t.fixed_point.converged));
    }
    let grid = grid(&a.grid, ctx.k())?;
    let map = throughput_surface(&ctx.config, &grid, &ctx.tols, &map_options(ctx, &a.grid))?;
    let files = write_map(&ctx.artifacts(&manifest), "throughput", &map)?;
    let (mut summary, indeterminate) = map_summary(&map, &files);
    if let Some(c) = map.max_throughput() {
        summary["max_total_throughput"] = json!(c.total_throughput);
        summary["argmax"] = json!(c.g);
    }
    print_json(&summary)?;
    Ok(Status::from_flag(indeterminate))
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<Status> {
    let g = load(ctx, &a.load)?;
    let opts = SimOptions {
        max_iter: a.peel_max_iter,
        poisson_users: a.poisson_users,
        workers: ctx.cli.workers,
    };
    let outcome = run_trials(&ctx.config, &g, a.t, a.trials, a.seed, &opts)?;
    let analytic = throughput(&ctx.config, &g, &ctx.tols.de)?;
    let manifest = ctx.manifest(a, Some(a.seed));
    let art = ctx.artifacts(&manifest);
    let json_path = art.json(
        "simulate.json",
        json!({
            "g": g,
            "outcome": outcome,
            "analytic": {
                "success": analytic.success,
                "throughput": analytic.per_class,
                "total": analytic.total,
                "converged": analytic.fixed_point.converged,
            },
        }),
    )?;
    let csv_path = art.csv("simulate.csv", |w| {
        writeln!(
            w,
            "class,G,success,stderr,analytic_success,throughput,analytic_throughput"
        )?;
        for k in 0..g.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                k + 1,
                g[k],
                outcome.success[k],
                outcome.stderr[k],
                analytic.success[k],
                outcome.throughput[k],
                analytic.per_class[k]
            )?;
        }
        Ok(())
    })?;
    print_json(&json!({
        "success": outcome.success,
        "stderr": outcome.stderr,
        "analytic_success": analytic.success,
        "unconverged_trials": outcome.unconverged_trials,
        "files": [json_path, csv_path],
    }))?;
    Ok(Status::from_flag(
        outcome.unconverged_trials > 0 || !analytic.fixed_point.converged,
    ))
}

fn de_trace(ctx: &Ctx, a: &DeTraceArgs) -> Result<Status> {
    let g = load(ctx, &a.load)?;
    let start = match a.start {
        StartArg::Ones => Start::AllOnes,
        StartArg::Zeros => Start::AllZeros,
    };
    let opts = DeOptions {
        keep_trace: true,
        ..ctx.tols.de
    };
    let fp = de_fixed_point(&ctx.config, &g, start, &opts)?;
    let trace = fp.trace.as_deref().unwrap_or_default();
    let rows = trace
        .iter()
        .map(|q| Ok((q, success_probabilities(&ctx.config, &g, q, &opts)?)))
        .collect::<Result<Vec<_>>>()?;
    let k = ctx.k();
    let manifest = ctx.manifest(a, None);
    let path = ctx.artifacts(&manifest).csv("de_trace.csv", |w| {
        let header: Vec<String> = (1..=k)
            .map(|i| format!("q{i}"))
            .chain((1..=k).map(|i| format!("P{i}")))
            .collect();
        writeln!(w, "iteration,{}", header.join(","))?;
        for (i, (q, p)) in rows.iter().enumerate() {
            let cols: Vec<String> = q.iter().chain(p.iter()).map(|x| x.to_string()).collect();
            writeln!(w, "{i},{}", cols.join(","))?;
        }
        Ok(())
    })?;
    print_json(&json!({
        "iterations": fp.iterations,
        "converged": fp.converged,
        "q_final": fp.q_final,
        "success": rows.last().map(|(_, p)| p.clone()),
        "files": [path],
    }))?;
    Ok(Status::from_flag(!fp.converged))
}
