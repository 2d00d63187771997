//! Command implementations. Each `execute_*` function is usable as a library
//! call; the `cmd_*` wrappers add argument handling and file output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cli::checkpoint::Checkpoint;
use crate::cli::config::{ReferenceKind, RunConfig, TablePoints, TrainMode};
use crate::cli::csv::{coord_names, fmt_f64, fmt_opt, parse_floats, read_points, CsvTable};
use crate::cli::{Cli, FinetuneArgs, PriceArgs, PriceMode, ReferenceArg, SurfaceArgs, SweepArgs, TableArg};
use crate::error::{Error, Result};
use crate::network::RbfNetwork;
use crate::oracle::{basket_table_points, exchange_table_points, mc_price, rmse, McConfig};
use crate::problems::{preset, BsProblem};
use crate::sampling::{
    build_training_set, sample_test_points, HaltonCursor, PointSampler, Points, RngStream, SourceKind, StreamLabel,
    TrainingSet,
};
use crate::trainer::{
    fine_tune, init_run, train_adaptive, train_fixed, IterationRecord, RunHistory, RunStreams, StopReason, TestSet,
};

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub problem: BsProblem,
    pub net: RbfNetwork,
    pub history: RunHistory,
    pub test: Option<TestSet>,
    pub checkpoint: Checkpoint,
    pub wall_time_s: f64,
}

impl RunOutcome {
    pub fn final_rmse(&self) -> Option<f64> {
        self.history.last().test_rmse
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mode: TrainMode,
    pub iterations: usize,
    pub iterations_to_converge: usize,
    pub stop_reason: StopReason,
    pub neurons: usize,
    pub final_loss: f64,
    pub final_rmse: Option<f64>,
    pub insertion_iterations: Vec<usize>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn from_outcome(o: &RunOutcome) -> Self {
        RunSummary {
            seed: o.config.seed,
            mode: o.config.train.mode,
            iterations: o.history.iterations(),
            iterations_to_converge: o.history.iterations_to_converge(),
            stop_reason: o.history.stop_reason,
            neurons: o.net.n_neurons(),
            final_loss: o.history.last().loss.total,
            final_rmse: o.final_rmse(),
            insertion_iterations: o.history.insertions.iter().map(|e| e.iteration).collect(),
            wall_time_s: o.wall_time_s,
        }
    }
}

pub fn training_set(cfg: &RunConfig, prob: &BsProblem) -> Result<TrainingSet> {
    let s = &cfg.sampling;
    let sampler = match s.source {
        SourceKind::PseudoRandom => PointSampler::PseudoRandom(RngStream::new(cfg.seed, StreamLabel::TrainingPoints)),
        SourceKind::Halton => PointSampler::Halton(HaltonCursor::new(prob.input_dim(), s.halton_skip)?),
    };
    build_training_set(prob, s.interior, s.terminal, s.boundary, sampler)
}

/// Monte Carlo price at a space-time point, using the remaining horizon.
pub fn mc_at(prob: &BsProblem, point: &[f64], cfg: &McConfig) -> Result<f64> {
    let d = prob.d;
    let remaining = prob.t_max - point[d];
    if remaining <= 0.0 {
        return prob.payoff_value(&point[..d]);
    }
    let mut p = prob.clone();
    p.t_max = remaining;
    Ok(mc_price(&p, &point[..d], cfg)?.0)
}

fn table_points(table: TablePoints, prob: &BsProblem) -> Result<Points> {
    let (rows, d): (Vec<Vec<f64>>, usize) = match table {
        TablePoints::Exchange => (exchange_table_points().iter().map(|p| p.to_vec()).collect(), 2),
        TablePoints::Basket => (basket_table_points().iter().map(|p| p.to_vec()).collect(), 4),
    };
    if prob.d != d {
        return Err(Error::InvalidConfig(format!(
            "test.table: {table:?} points need a {d}-asset problem, got d = {}",
            prob.d
        )));
    }
    Points::from_rows(d + 1, &rows)
}

fn reference_prices(prob: &BsProblem, points: &Points, kind: ReferenceKind, mc: &McConfig) -> Result<Option<Vec<f64>>> {
    let kind = match kind {
        ReferenceKind::Auto if prob.has_closed_form() => ReferenceKind::ClosedForm,
        ReferenceKind::Auto => ReferenceKind::MonteCarlo,
        k => k,
    };
    match kind {
        ReferenceKind::ClosedForm => points
            .rows()
            .map(|p| {
                prob.exact_price(p)
                    .ok_or_else(|| Error::InvalidConfig("reference: no closed form for this problem".into()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        ReferenceKind::MonteCarlo => points.rows().map(|p| mc_at(prob, p, mc)).collect::<Result<Vec<_>>>().map(Some),
        _ => Ok(None),
    }
}

pub fn test_set(cfg: &RunConfig, prob: &BsProblem) -> Result<Option<TestSet>> {
    let t = &cfg.test;
    let points = match t.table {
        Some(table) => table_points(table, prob)?,
        None if t.points == 0 => return Ok(None),
        None => sample_test_points(prob, t.points, t.time, &mut RngStream::new(cfg.seed, StreamLabel::TestPoints)),
    };
    let mc = McConfig::new(t.mc_paths, cfg.seed);
    match reference_prices(prob, &points, t.reference, &mc)? {
        Some(reference) => Ok(Some(TestSet::new(points, reference)?)),
        None => Ok(None),
    }
}

fn progress_printer(enabled: bool, every: usize) -> impl FnMut(&IterationRecord) {
    move |r: &IterationRecord| {
        if enabled && (r.iteration % every == 0) {
            let mut line = format!(
                "iter {:>5}  loss {:.4e}  neurons {}",
                r.iteration, r.loss.total, r.neurons
            );
            if let Some(m) = r.mapr {
                line.push_str(&format!("  mapr {m:.4e}"));
            }
            if let Some(e) = r.test_rmse {
                line.push_str(&format!("  rmse {e:.4e}"));
            }
            eprintln!("{line}");
        }
    }
}

/// Runs the configured training from scratch.
pub fn execute_run(cfg: &RunConfig, progress: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let prob = cfg.problem.build()?;
    let ts = training_set(cfg, &prob)?;
    let test = test_set(cfg, &prob)?;
    let acfg = cfg.adaptive();
    let (net0, mut streams) = init_run(
        &prob,
        cfg.initial_neurons(),
        cfg.network.kernel,
        cfg.seed,
        cfg.network.shape_init(),
        cfg.network.centre_source,
        acfg.source,
        cfg.sampling.halton_skip,
    )?;
    let mut observer = progress_printer(progress, 50);
    let (net, history) = match cfg.train.mode {
        TrainMode::Fixed => train_fixed(
            &net0,
            &prob,
            &ts,
            &cfg.lbfgs(),
            cfg.train.max_iters,
            test.as_ref(),
            &mut observer,
        )?,
        TrainMode::Adaptive => train_adaptive(
            &net0,
            &prob,
            &ts,
            &acfg,
            &cfg.lbfgs(),
            &mut streams,
            test.as_ref(),
            &mut observer,
        )?,
    };
    let checkpoint = Checkpoint::new(cfg, &prob, &net, &history, streams.positions());
    Ok(RunOutcome {
        config: cfg.clone(),
        problem: prob,
        net,
        history,
        test,
        checkpoint,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Applies `key=value` overrides to problem parameters only.
pub fn apply_overrides(prob: &BsProblem, overrides: &[String]) -> Result<BsProblem> {
    let mut p = prob.clone();
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{ov}`: expected KEY=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("override `{ov}`: value is not a number")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let index = |s: &str| -> Result<usize> {
            let i: usize = s
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("override `{ov}`: bad index `{s}`")))?;
            if i >= p.d {
                return Err(Error::InvalidConfig(format!(
                    "override `{ov}`: index {i} out of range for d = {} (structure changes are not allowed)",
                    p.d
                )));
            }
            Ok(i)
        };
        match parts.as_slice() {
            ["sigma"] if p.d == 1 => p.sigma[0] = value,
            ["sigma", i] => {
                let i = index(i)?;
                p.sigma[i] = value;
            }
            ["r"] => p.r = value,
            ["rho", i, j] => {
                let (i, j) = (index(i)?, index(j)?);
                if i == j {
                    return Err(Error::InvalidConfig(format!("override `{ov}`: diagonal of rho is fixed at 1")));
                }
                p.rho[i][j] = value;
                p.rho[j][i] = value;
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "override `{ov}`: only sigma.<i>, r and rho.<i>.<j> may change when fine-tuning"
                )))
            }
        }
    }
    p.validate()?;
    Ok(p)
}

/// Resumes adaptive training from a checkpoint against the overridden problem.
pub fn execute_finetune(ck: &Checkpoint, overrides: &[String], progress: bool) -> Result<RunOutcome> {
    let start = Instant::now();
    let prob = apply_overrides(&ck.problem, overrides)?;
    let mut cfg = ck.config.clone();
    cfg.train.mode = TrainMode::Adaptive;
    cfg.problem.sigma = Some(prob.sigma.clone());
    cfg.problem.r = Some(prob.r);
    cfg.problem.rho = Some(prob.rho.clone());
    cfg.validate()?;
    let net0 = ck.network()?;
    let ts = training_set(&cfg, &prob)?;
    let test = test_set(&cfg, &prob)?;
    let mut streams = RunStreams::restore(cfg.seed, cfg.network.shape_init(), prob.input_dim(), &ck.streams)?;
    let mut observer = progress_printer(progress, 50);
    let (net, history) = fine_tune(
        &net0,
        &prob,
        &ts,
        &cfg.adaptive(),
        &cfg.lbfgs(),
        &mut streams,
        test.as_ref(),
        &mut observer,
    )?;
    let checkpoint = Checkpoint::new(&cfg, &prob, &net, &history, streams.positions());
    Ok(RunOutcome {
        config: cfg,
        problem: prob,
        net,
        history,
        test,
        checkpoint,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn history_csv(h: &RunHistory) -> CsvTable {
    let mut t = CsvTable::new(&[
        "iteration",
        "pde_loss",
        "terminal_loss",
        "boundary_loss",
        "total_loss",
        "mapr_w",
        "neuron_count",
        "test_rmse",
    ]);
    for r in &h.records {
        t.row(&[
            r.iteration.to_string(),
            fmt_f64(r.loss.pde),
            fmt_f64(r.loss.terminal),
            fmt_f64(r.loss.boundary),
            fmt_f64(r.loss.total),
            fmt_opt(r.mapr),
            r.neurons.to_string(),
            fmt_opt(r.test_rmse),
        ]);
    }
    t
}

fn priced_csv(d: usize, points: &Points, predicted: &[f64], reference: Option<&[f64]>) -> CsvTable {
    let mut header = coord_names(d);
    header.push("predicted".into());
    if reference.is_some() {
        header.push("reference".into());
        header.push("pae".into());
    }
    let mut t = CsvTable::new(&header);
    for (i, p) in points.rows().enumerate() {
        let mut row: Vec<String> = p.iter().map(|&x| fmt_f64(x)).collect();
        row.push(fmt_f64(predicted[i]));
        if let Some(r) = reference {
            row.push(fmt_f64(r[i]));
            row.push(fmt_f64((predicted[i] - r[i]).abs()));
        }
        t.row(&row);
    }
    t
}

/// Writes checkpoint, history, test points and summary into `dir`.
pub fn write_run_outputs(dir: &Path, o: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    o.checkpoint.save(&dir.join("checkpoint.json"))?;
    history_csv(&o.history).write(&dir.join("history.csv"))?;
    if let Some(test) = &o.test {
        let pred = o.net.evaluate_many(&test.points)?;
        priced_csv(o.problem.d, &test.points, &pred, Some(&test.reference)).write(&dir.join("test_points.csv"))?;
    }
    let mut summary = serde_json::to_string_pretty(&RunSummary::from_outcome(o))?;
    summary.push('\n');
    std::fs::write(dir.join("summary.json"), summary)?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn report(o: &RunOutcome) {
    let s = RunSummary::from_outcome(o);
    let rmse = s.final_rmse.map(|e| format!("{e:.6e}")).unwrap_or_else(|| "n/a".into());
    println!(
        "seed {}  iterations {}  stop {}  neurons {}  loss {:.6e}  rmse {}  time {:.1}s",
        s.seed,
        s.iterations,
        s.stop_reason.name(),
        s.neurons,
        s.final_loss,
        rmse,
        s.wall_time_s
    );
}

pub fn cmd_train(cli: &Cli, progress: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli, Some(&cfg));
    let outcome = execute_run(&cfg, progress)?;
    write_run_outputs(&out, &outcome)?;
    report(&outcome);
    Ok(())
}

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidConfig(format!("--seeds: cannot parse `{spec}`"));
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("--seeds: at least one seed is required".into()));
    }
    Ok(seeds)
}

/// Mean after discarding the `trim` fraction of samples farthest from the median.
pub fn trimmed_mean(values: &[f64], trim: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let drop = ((n as f64) * trim).floor() as usize;
    let mut by_distance: Vec<f64> = values.to_vec();
    by_distance.sort_by(|a, b| (a - median).abs().total_cmp(&(b - median).abs()));
    let kept = &by_distance[..n - drop.min(n - 1)];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub seeds: usize,
    pub failures: usize,
    pub trimmed_mean_rmse: Option<f64>,
    pub trimmed_mean_iterations: Option<f64>,
}

/// Runs one training per seed; per-seed failures are recorded, not fatal.
pub fn execute_sweep(cfg: &RunConfig, seeds: &[u64], out: &Path, progress: bool) -> Result<(CsvTable, SweepSummary)> {
    let mut table = CsvTable::new(&["seed", "iterations_to_converge", "final_rmse", "status"]);
    let mut rmses = Vec::new();
    let mut iters = Vec::new();
    let mut failures = 0;
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        match execute_run(&c, progress).and_then(|o| {
            write_run_outputs(&out.join(format!("seed-{seed}")), &o)?;
            Ok(o)
        }) {
            Ok(o) => {
                report(&o);
                let it = o.history.iterations_to_converge();
                iters.push(it as f64);
                if let Some(e) = o.final_rmse() {
                    rmses.push(e);
                }
                table.row(&[seed.to_string(), it.to_string(), fmt_opt(o.final_rmse()), "ok".into()]);
            }
            Err(e) => {
                failures += 1;
                eprintln!("seed {seed}: error: {e}");
                table.row(&[seed.to_string(), String::new(), String::new(), format!("error: {e}")]);
            }
        }
    }
    let summary = SweepSummary {
        seeds: seeds.len(),
        failures,
        trimmed_mean_rmse: trimmed_mean(&rmses, 0.25),
        trimmed_mean_iterations: trimmed_mean(&iters, 0.25),
    };
    Ok((table, summary))
}

pub fn cmd_sweep(cli: &Cli, args: &SweepArgs, progress: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let seeds = parse_seeds(&args.seeds)?;
    let out = out_dir(cli, Some(&cfg));
    std::fs::create_dir_all(&out)?;
    let (table, summary) = execute_sweep(&cfg, &seeds, &out, progress)?;
    table.write(&out.join("sweep.csv"))?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(out.join("sweep_summary.json"), text)?;
    println!(
        "{} seeds, {} failed, trimmed-mean rmse {}",
        summary.seeds,
        summary.failures,
        summary
            .trimmed_mean_rmse
            .map(|e| format!("{e:.6e}"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

pub fn cmd_finetune(cli: &Cli, args: &FinetuneArgs, progress: bool) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let outcome = execute_finetune(&ck, &args.overrides, progress)?;
    let out = out_dir(cli, None);
    write_run_outputs(&out, &outcome)?;
    report(&outcome);
    Ok(())
}

fn collect_points(args_points: &[String], file: Option<&PathBuf>, table: Option<TableArg>, prob: &BsProblem) -> Result<Points> {
    let dim = prob.input_dim();
    let mut pts = Points::new(dim);
    for s in args_points {
        let row = parse_floats(s).map_err(|e| Error::InvalidConfig(format!("--point {s}: {e}")))?;
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        pts.push(&row)?;
    }
    if let Some(path) = file {
        pts.extend(&read_points(path, dim)?)?;
    }
    if let Some(t) = table {
        let kind = match t {
            TableArg::Exchange => TablePoints::Exchange,
            TableArg::Basket => TablePoints::Basket,
        };
        pts.extend(&table_points(kind, prob)?)?;
    }
    if pts.is_empty() {
        return Err(Error::InvalidConfig("price: give --point, --points-file or --table".into()));
    }
    Ok(pts)
}

/// Prices points; returns the table and, when a reference exists, the RMSE.
pub fn execute_price(
    mode: PriceMode,
    prob: &BsProblem,
    net: Option<&RbfNetwork>,
    points: &Points,
    reference: ReferenceArg,
    mc: &McConfig,
) -> Result<(CsvTable, Option<f64>)> {
    let closed = |p: &[f64]| {
        prob.exact_price(p)
            .ok_or_else(|| Error::InvalidConfig("closed_form: no closed form for this problem".into()))
    };
    match mode {
        PriceMode::ClosedForm => {
            let pred = points.rows().map(closed).collect::<Result<Vec<_>>>()?;
            Ok((priced_csv(prob.d, points, &pred, None), None))
        }
        PriceMode::Mc => {
            let pred = points.rows().map(|p| mc_at(prob, p, mc)).collect::<Result<Vec<_>>>()?;
            Ok((priced_csv(prob.d, points, &pred, None), None))
        }
        PriceMode::Network => {
            let net = net.ok_or_else(|| Error::InvalidConfig("network mode needs --checkpoint".into()))?;
            let pred = net.evaluate_many(points)?;
            let kind = match reference {
                ReferenceArg::Auto => ReferenceKind::Auto,
                ReferenceArg::ClosedForm => ReferenceKind::ClosedForm,
                ReferenceArg::Mc => ReferenceKind::MonteCarlo,
                ReferenceArg::None => ReferenceKind::None,
            };
            let refs = reference_prices(prob, points, kind, mc)?;
            let err = match &refs {
                Some(r) => Some(rmse(&pred, r)?),
                None => None,
            };
            Ok((priced_csv(prob.d, points, &pred, refs.as_deref()), err))
        }
    }
}

pub fn cmd_price(cli: &Cli, args: &PriceArgs) -> Result<()> {
    let ck = match &args.checkpoint {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let prob = match (&args.problem, &ck) {
        (Some(name), _) => preset(name)?,
        (None, Some(ck)) => ck.problem.clone(),
        (None, None) => return Err(Error::InvalidConfig("price: give --problem or --checkpoint".into())),
    };
    let net = ck.as_ref().map(|c| c.network()).transpose()?;
    let points = collect_points(&args.points, args.points_file.as_ref(), args.table, &prob)?;
    let mc = McConfig::new(args.paths, cli.seed.unwrap_or(1));
    let (table, err) = execute_price(args.mode, &prob, net.as_ref(), &points, args.reference, &mc)?;
    print!("{}", table.as_str());
    if let Some(e) = err {
        println!("rmse,{}", fmt_f64(e));
    }
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        table.write(&out.join("table.csv"))?;
    }
    Ok(())
}

fn parse_range(s: &str) -> Result<(f64, f64, usize)> {
    let bad = || Error::InvalidConfig(format!("grid range `{s}`: expected LO:HI:N"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((lo, hi, n))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn coord_index(name: &str, d: usize) -> Result<usize> {
    let name = name.trim();
    if name == "t" {
        return Ok(d);
    }
    name.strip_prefix('s')
        .and_then(|i| i.parse::<usize>().ok())
        .filter(|&i| i >= 1 && i <= d)
        .map(|i| i - 1)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown coordinate `{name}` (expected s1..s{d} or t)")))
}

/// Grid points for a surface export.
pub fn surface_points(prob: &BsProblem, axes: &[String], fixed: &[String], diagonal: Option<&str>, times: &[f64]) -> Result<Points> {
    let d = prob.d;
    let dim = d + 1;
    let mut pts = Points::new(dim);
    if let Some(diag) = diagonal {
        let (lo, hi, n) = parse_range(diag)?;
        let times = if times.is_empty() { vec![0.0] } else { times.to_vec() };
        for &t in &times {
            for s in linspace(lo, hi, n) {
                let mut row = vec![s; d];
                row.push(t);
                pts.push(&row)?;
            }
        }
        return Ok(pts);
    }
    let mut base = vec![f64::NAN; dim];
    for f in fixed {
        let (name, v) = f
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--fix `{f}`: expected NAME=VALUE")))?;
        base[coord_index(name, d)?] = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("--fix `{f}`: bad value")))?;
    }
    let mut grid_axes = Vec::new();
    for a in axes {
        let (name, range) = a
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--axis `{a}`: expected NAME=LO:HI:N")))?;
        let (lo, hi, n) = parse_range(range)?;
        grid_axes.push((coord_index(name, d)?, linspace(lo, hi, n)));
    }
    for (i, &v) in base.iter().enumerate() {
        if v.is_nan() && !grid_axes.iter().any(|(j, _)| *j == i) {
            return Err(Error::InvalidConfig(format!(
                "coordinate {} has neither --axis nor --fix",
                coord_names(d)[i]
            )));
        }
    }
    // row-major over the axes in the order given, last axis fastest
    let total: usize = grid_axes.iter().map(|(_, v)| v.len()).product();
    for flat in 0..total {
        let mut row = base.clone();
        let mut rem = flat;
        for (idx, vals) in grid_axes.iter().rev() {
            row[*idx] = vals[rem % vals.len()];
            rem /= vals.len();
        }
        pts.push(&row)?;
    }
    Ok(pts)
}

pub fn cmd_surface(cli: &Cli, args: &SurfaceArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let prob = ck.problem.clone();
    let net = ck.network()?;
    let pts = surface_points(&prob, &args.axes, &args.fixed, args.diagonal.as_deref(), &args.times)?;
    let outside = pts.rows().any(|p| {
        p[..prob.d].iter().any(|&s| !(0.0..=prob.s_max).contains(&s)) || !(0.0..=prob.t_max).contains(&p[prob.d])
    });
    if outside {
        eprintln!("warning: grid extends outside [0, s_max]^d x [0, T]; values there are extrapolated");
    }
    let pred = net.evaluate_many(&pts)?;
    let reference: Option<Vec<f64>> = if prob.has_closed_form() {
        pts.rows().map(|p| prob.exact_price(p)).collect()
    } else {
        None
    };
    let table = priced_csv(prob.d, &pts, &pred, reference.as_deref());
    let out = out_dir(cli, None);
    std::fs::create_dir_all(&out)?;
    table.write(&out.join("surface.csv"))?;
    println!("wrote {} points to {}", pts.len(), out.join("surface.csv").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_exchange_2d, make_put_1d};

    #[test]
    fn trimmed_mean_drops_far_samples() {
        assert_eq!(trimmed_mean(&[1.0, 2.0, 3.0, 100.0], 0.25), Some(2.0));
        assert_eq!(trimmed_mean(&[5.0], 0.25), Some(5.0));
        assert_eq!(trimmed_mean(&[], 0.25), None);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,2,5-7").unwrap(), vec![1, 2, 5, 6, 7]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn overrides_are_limited_to_parameters() {
        let p = make_put_1d();
        assert_eq!(apply_overrides(&p, &["sigma.0=0.3".into()]).unwrap().sigma, vec![0.3]);
        assert_eq!(apply_overrides(&p, &["sigma=0.3".into()]).unwrap().sigma, vec![0.3]);
        assert!(apply_overrides(&p, &["sigma.1=0.3".into()]).is_err());
        assert!(apply_overrides(&p, &["s_max=40".into()]).is_err());
        assert!(apply_overrides(&p, &["d=2".into()]).is_err());
        let e = make_exchange_2d();
        let q = apply_overrides(&e, &["rho.0.1=0.2".into(), "r=0.01".into()]).unwrap();
        assert_eq!(q.rho[1][0], 0.2);
        assert_eq!(q.r, 0.01);
        assert!(apply_overrides(&e, &["rho.0.0=0.5".into()]).is_err());
    }

    #[test]
    fn surface_grids() {
        let e = make_exchange_2d();
        let pts = surface_points(&e, &["s1=0:40:3".into(), "s2=0:40:2".into()], &["t=0".into()], None, &[]).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts.row(1), &[0.0, 40.0, 0.0]);
        let one = surface_points(&e, &["s1=5:5:1".into()], &["s2=3".into(), "t=0.5".into()], None, &[]).unwrap();
        assert_eq!(one.len(), 1);
        assert!(surface_points(&e, &["s1=0:40:3".into()], &[], None, &[]).is_err());
        let diag = surface_points(&e, &[], &[], Some("0:4:101"), &[0.0, 1.0]).unwrap();
        assert_eq!(diag.len(), 202);
        assert_eq!(diag.row(101), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn closed_form_price_examples() {
        let p = make_put_1d();
        let pts = Points::from_rows(2, &[vec![0.0, 0.0]]).unwrap();
        let (t, _) = execute_price(PriceMode::ClosedForm, &p, None, &pts, ReferenceArg::Auto, &McConfig::new(10, 1)).unwrap();
        let v: f64 = t.as_str().lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert!((v - 9.75310).abs() < 5e-6);
        let e = make_exchange_2d();
        let pts = Points::from_rows(3, &[vec![20.0, 20.0, 0.0]]).unwrap();
        let (t, _) = execute_price(PriceMode::ClosedForm, &e, None, &pts, ReferenceArg::Auto, &McConfig::new(10, 1)).unwrap();
        let v: f64 = t.as_str().lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
        assert!((v - 1.5931).abs() < 5e-5);
    }
}
