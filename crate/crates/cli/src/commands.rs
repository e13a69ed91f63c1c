use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use relu_dynamics::model::{reference_mean, SignalModel};
use relu_dynamics::probe::{self, gradient_check, train_and_probe, ActivationStats, MlpConfig, SyntheticSpec};
use relu_dynamics::simulator::{run_monte_carlo, time_to_threshold, SimulationConfig, TrajectoryRecord, Variant};
use relu_dynamics::theory::{assemble_operator, shared_step, TheoryOperator};

use crate::{CommonArgs, ModelArgs, ProbeArgs, VariantArg};

const PROBE_DEFAULT_ETA: f64 = 0.05;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Io(io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            CliError::Io(err) => write!(f, "i/o: {err}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(err: io::Error) -> Self {
        CliError::Io(err)
    }
}

impl From<relu_dynamics::Error> for CliError {
    fn from(err: relu_dynamics::Error) -> Self {
        use relu_dynamics::Error as E;
        match err {
            E::Domain(_) | E::Dimension { .. } => CliError::Usage(err.to_string()),
            E::IllConditioned { .. } | E::Numerical(_) => CliError::Numerical(err.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Original => Variant::Original,
            VariantArg::Analysis => Variant::Analysis,
        }
    }
}

/// Step size, where it came from, and the reference λ_max.
#[derive(Debug, Serialize)]
struct ResolvedStep {
    eta: f64,
    source: &'static str,
    step_fraction: f64,
}

struct Sweep {
    models: Vec<(f64, SignalModel)>,
    step: ResolvedStep,
}

fn build_sweep(common: &CommonArgs, args: &ModelArgs) -> Result<Sweep> {
    if args.activation_probs.is_empty() {
        return Err(CliError::Usage("--activation-probs must not be empty".into()));
    }
    if !(args.init_std >= 0.0 && args.init_std.is_finite()) {
        return Err(CliError::Usage(format!("--init-std must be nonnegative, got {}", args.init_std)));
    }
    let mu = args.mu.clone().unwrap_or_else(reference_mean);
    let models = args
        .activation_probs
        .iter()
        .map(|&p| Ok((p, SignalModel::with_activation(mu.clone(), args.a, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let step = match common.eta {
        Some(eta) if eta > 0.0 && eta.is_finite() => ResolvedStep {
            eta,
            source: "explicit",
            step_fraction: args.step_fraction,
        },
        Some(eta) => return Err(CliError::Usage(format!("--eta must be positive, got {eta}"))),
        None => {
            let just_models: Vec<SignalModel> = models.iter().map(|(_, m)| m.clone()).collect();
            ResolvedStep {
                eta: shared_step(&just_models, args.step_fraction)?,
                source: "step_fraction / max lambda_max over sweep",
                step_fraction: args.step_fraction,
            }
        }
    };
    Ok(Sweep { models, step })
}

fn sim_config(common: &CommonArgs, args: &ModelArgs, model: &SignalModel, variant: Variant, eta: f64) -> SimulationConfig {
    SimulationConfig {
        model: model.clone(),
        variant,
        eta,
        iters: args.iters as usize,
        runs: args.runs as usize,
        init_std: args.init_std,
        master_seed: common.seed,
        record_stride: args.stride as usize,
    }
}

fn out_path(common: &CommonArgs, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&common.out_dir)?;
    Ok(common.out_dir.join(name))
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    body(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_with(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value).map_err(io::Error::from)?;
        writeln!(out)
    })
}

fn tag(p: f64) -> String {
    format!("p{p}")
}

fn resolved_run(command: &str, common: &CommonArgs, args: &ModelArgs, step: &ResolvedStep) -> Value {
    json!({
        "command": command,
        "seed": common.seed,
        "out_dir": common.out_dir,
        "eta": step,
        "model": {
            "mu": args.mu.clone().unwrap_or_else(reference_mean),
            "a": args.a,
            "activation_probs": args.activation_probs,
        },
        "runs": args.runs,
        "iters": args.iters,
        "init_std": args.init_std,
        "stride": args.stride,
    })
}

/// Mean-recursion error curve averaged over the simulation's own initial points.
fn theory_curve(op: &TheoryOperator, cfg: &SimulationConfig) -> Result<Vec<f64>> {
    Ok(op.averaged_error_curve(&cfg.initial_weights(), cfg.eta, cfg.iters, cfg.record_stride)?)
}

pub fn theory(common: &CommonArgs, args: &ModelArgs) -> Result<Vec<PathBuf>> {
    let sweep = build_sweep(common, args)?;
    let run = resolved_run("theory", common, args, &sweep.step);
    let eta = sweep.step.eta;
    let mut written = Vec::new();
    for (p, model) in &sweep.models {
        let op = assemble_operator(model);
        let report = op.eigen_report()?;
        let warning = (eta >= report.eta_max).then(|| {
            format!("eta {eta:e} >= 2/lambda_max = {:e}; the mean recursion diverges", report.eta_max)
        });
        if let Some(w) = &warning {
            eprintln!("warning: Pr={p}: {w}");
        }
        let cfg = sim_config(common, args, model, Variant::Analysis, eta);
        let curve = theory_curve(&op, &cfg)?;

        let csv = out_path(common, &format!("theory_{}.csv", tag(*p)))?;
        write_with(&csv, |out| {
            writeln!(out, "iteration,error_norm_sq")?;
            for (k, v) in cfg.record_points().iter().zip(&curve) {
                writeln!(out, "{k},{v:e}")?;
            }
            Ok(())
        })?;
        let json_path = csv.with_extension("json");
        write_json(
            &json_path,
            &json!({
                "run": run,
                "activation_prob": p,
                "model": model,
                "u0": op.u0,
                "h": op.h,
                "K": op.k,
                "spectrum": report,
                "eta": eta,
                "warning": warning,
                "data": csv.file_name().map(|n| n.to_string_lossy().into_owned()),
            }),
        )?;
        written.push(json_path);
        written.push(csv);
    }
    Ok(written)
}

fn write_record(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    write_with(path, |out| rec.write_csv(out))
}

pub fn simulate(common: &CommonArgs, args: &ModelArgs, variants: &[VariantArg]) -> Result<Vec<PathBuf>> {
    let sweep = build_sweep(common, args)?;
    let run = resolved_run("simulate", common, args, &sweep.step);
    let mut written = Vec::new();
    for &variant in variants {
        let variant = Variant::from(variant);
        for (p, model) in &sweep.models {
            let cfg = sim_config(common, args, model, variant, sweep.step.eta);
            let rec = run_monte_carlo(&cfg)?;
            let csv = out_path(common, &format!("simulate_{variant}_{}.csv", tag(*p)))?;
            write_record(&csv, &rec)?;
            let json_path = csv.with_extension("json");
            write_json(
                &json_path,
                &json!({
                    "run": run,
                    "activation_prob": p,
                    "config": cfg,
                    "config_digest": rec.config_digest,
                    "data": csv.file_name().map(|n| n.to_string_lossy().into_owned()),
                }),
            )?;
            written.push(json_path);
            written.push(csv);
        }
    }
    Ok(written)
}

fn max_rel_deviation(iterations: &[usize], curve: &[f64], reference: &[f64], burn_in: usize) -> f64 {
    iterations
        .iter()
        .zip(curve.iter().zip(reference))
        .filter(|(&k, _)| k > burn_in)
        .map(|(_, (c, r))| (c - r).abs() / r.abs())
        .fold(0.0, f64::max)
}

pub fn compare(common: &CommonArgs, args: &ModelArgs, burn_in: usize, fraction: f64) -> Result<Vec<PathBuf>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Usage(format!("--fraction must lie in (0,1), got {fraction}")));
    }
    let sweep = build_sweep(common, args)?;
    let mut run = resolved_run("compare", common, args, &sweep.step);
    run["burn_in"] = json!(burn_in);
    run["fraction"] = json!(fraction);
    let eta = sweep.step.eta;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for (p, model) in &sweep.models {
        let op = assemble_operator(model);
        let analysis_cfg = sim_config(common, args, model, Variant::Analysis, eta);
        let original_cfg = sim_config(common, args, model, Variant::Original, eta);
        let theory = theory_curve(&op, &analysis_cfg)?;
        let analysis = run_monte_carlo(&analysis_cfg)?;
        let original = run_monte_carlo(&original_cfg)?;
        let iterations = analysis.iterations.clone();

        let csv = out_path(common, &format!("compare_{}.csv", tag(*p)))?;
        write_with(&csv, |out| {
            writeln!(out, "iteration,theory,analysis,original")?;
            for (i, k) in iterations.iter().enumerate() {
                writeln!(
                    out,
                    "{k},{:e},{:e},{:e}",
                    theory[i], analysis.avg_sq_error_norm[i], original.avg_sq_error_norm[i]
                )?;
            }
            Ok(())
        })?;
        written.push(csv.clone());

        let theory_rec = TrajectoryRecord {
            avg_sq_error_norm: theory.clone(),
            ..analysis.clone()
        };
        rows.push(json!({
            "activation_prob": p,
            "data": csv.file_name().map(|n| n.to_string_lossy().into_owned()),
            "analysis_digest": analysis.config_digest,
            "original_digest": original.config_digest,
            "max_rel_deviation": {
                "analysis_vs_theory": max_rel_deviation(&iterations, &analysis.avg_sq_error_norm, &theory, burn_in),
                "original_vs_theory": max_rel_deviation(&iterations, &original.avg_sq_error_norm, &theory, burn_in),
            },
            "time_to_threshold": {
                "theory": time_to_threshold(&theory_rec, fraction)?,
                "analysis": time_to_threshold(&analysis, fraction)?,
                "original": time_to_threshold(&original, fraction)?,
            },
        }));
    }

    // Ordering flag: analysis time-to-threshold strictly grows as Pr shrinks.
    let mut by_prob: Vec<(f64, Option<u64>)> = rows
        .iter()
        .map(|r| {
            (
                r["activation_prob"].as_f64().unwrap_or(f64::NAN),
                r["time_to_threshold"]["analysis"].as_u64(),
            )
        })
        .collect();
    by_prob.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = by_prob.iter().all(|(_, t)| t.is_some())
        && by_prob.windows(2).all(|w| w[0].1 < w[1].1);

    let summary = out_path(common, "compare_summary.json")?;
    write_json(
        &summary,
        &json!({
            "run": run,
            "curves": rows,
            "time_to_threshold_monotone_in_activation_prob": monotone,
        }),
    )?;
    written.push(summary);
    Ok(written)
}

fn probe_config(args: &ProbeArgs, seed: u64) -> Result<MlpConfig> {
    let sizes = &args.layer_sizes;
    if sizes.len() < 3 {
        return Err(CliError::Usage("--layer-sizes needs input, at least one hidden, and output".into()));
    }
    let eta = args.common.eta.unwrap_or(PROBE_DEFAULT_ETA);
    let cfg = MlpConfig {
        layer_sizes: sizes.clone(),
        eta,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed,
        dataset: SyntheticSpec {
            classes: sizes[sizes.len() - 1],
            samples_per_class: args.samples_per_class,
            input_dim: sizes[0],
            separation: args.separation,
        },
        dead_layer: args.dead_layer,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn average_losses(runs: &[Vec<f64>]) -> Option<Vec<f64>> {
    let len = runs.first()?.len();
    if runs.iter().any(|r| r.len() != len) {
        return None;
    }
    Some(
        (0..len)
            .map(|e| runs.iter().map(|r| r[e]).sum::<f64>() / runs.len() as f64)
            .collect(),
    )
}

pub fn probe(args: &ProbeArgs) -> Result<Vec<PathBuf>> {
    let common = &args.common;
    let configs = (0..args.seeds)
        .map(|i| probe_config(args, common.seed + i))
        .collect::<Result<Vec<_>>>()?;
    let runs = configs
        .par_iter()
        .map(train_and_probe)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let grad = gradient_check(&configs[0])?;

    let mut written = Vec::new();
    for (cfg, run) in configs.iter().zip(&runs) {
        let act = out_path(common, &format!("probe_seed{}_activation.csv", cfg.seed))?;
        write_with(&act, |out| run.stats.write_csv(out))?;
        let loss = out_path(common, &format!("probe_seed{}_loss.csv", cfg.seed))?;
        write_with(&loss, |out| probe::write_loss_csv(&run.losses, out))?;
        written.push(act);
        written.push(loss);
    }

    let stats: Vec<ActivationStats> = runs.iter().map(|r| r.stats.clone()).collect();
    let diverged: Vec<u64> = configs
        .iter()
        .zip(&runs)
        .filter(|(_, r)| r.diverged)
        .map(|(c, _)| c.seed)
        .collect();
    if diverged.is_empty() {
        let mean = ActivationStats::average(&stats)?;
        let act = out_path(common, "probe_mean_activation.csv")?;
        write_with(&act, |out| mean.write_csv(out))?;
        written.push(act);
        if let Some(losses) = average_losses(&runs.iter().map(|r| r.losses.clone()).collect::<Vec<_>>()) {
            let loss = out_path(common, "probe_mean_loss.csv")?;
            write_with(&loss, |out| probe::write_loss_csv(&losses, out))?;
            written.push(loss);
        }
    }

    let meta = out_path(common, "probe.json")?;
    write_json(
        &meta,
        &json!({
            "run": {
                "command": "probe",
                "args": args,
                "eta": configs[0].eta,
                "configs": configs,
            },
            "gradient_check": grad,
            "diverged_seeds": diverged,
        }),
    )?;
    written.push(meta);
    if !diverged.is_empty() {
        return Err(CliError::Numerical(format!(
            "training diverged for seeds {diverged:?}; per-seed outputs written"
        )));
    }
    Ok(written)
}
