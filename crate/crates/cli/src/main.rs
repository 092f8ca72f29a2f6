//! `chanpred` — command-line driver for the channel prediction workbench.
//!
//! Subcommands: `generate` (dump a channel trajectory), `correlate`
//! (Type-I/II/temporal correlation reports), `train` (build and save
//! predictor bundles), `predict` (evaluate a saved bundle), `sweep` (full
//! experiment), `rate` (multi-user sum-rate evaluation).

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use chanpred_core::channel::generate_trajectory;
use chanpred_core::dataset::Domain;
use chanpred_core::estimation::estimate_trajectory;
use chanpred_core::metrics;
use chanpred_core::predictors::{load_bundle, save_bundle, train_predictor, PredictorKind};
use chanpred_core::runner::{
    self, correlation_summary, rate_for_kind, CycleWindows, ExperimentConfig, SweepAxis,
    SweepConfig,
};
use chanpred_core::neural::TrainConfig;
use chanpred_core::seeds;

#[derive(Parser)]
#[command(
    name = "chanpred",
    version,
    about = "Wideband massive MIMO channel prediction workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON experiment config; defaults apply for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out_dir: PathBuf,
    /// Comma-separated predictor list override (al-ad, al-fd, sl-ad, sl-fd,
    /// sl-ad-flip, sl-fd-flip, out).
    #[arg(long, value_delimiter = ',', global = true)]
    predictors: Option<Vec<String>>,
    /// Worker threads for sweep cells and SL training fan-out.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a true channel trajectory and dump it as CSV.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of slots to generate.
        #[arg(long, default_value_t = 100)]
        slots: usize,
    },
    /// Compute Type-I, Type-II, and temporal correlation reports.
    Correlate {
        #[command(flatten)]
        common: CommonArgs,
        /// Averaging window in slots.
        #[arg(long, default_value_t = 100)]
        window: usize,
        /// Largest temporal lag reported.
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
    },
    /// Train the configured predictors and save them as bundles.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a saved predictor bundle on a fresh cycle.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Bundle directory written by `train`.
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Run the configured sweep and emit results.csv / summary.json.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep axis override: n, spacing, pilot_power, speed, p.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated sweep values override.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Evaluate achievable sum rates for the configured predictors.
    Rate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_config(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(predictors) = &common.predictors {
        cfg.predictors = predictors.clone();
    }
    Ok(cfg)
}

fn init_threads(common: &CommonArgs) -> anyhow::Result<()> {
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("initializing worker pool")?;
    }
    Ok(())
}

fn ensure_out_dir(common: &CommonArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))
}

fn cmd_generate(common: &CommonArgs, slots: usize) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    ensure_out_dir(common)?;
    let mut rng = seeds::stream(cfg.master_seed, "channel", 0);
    let traj = generate_trajectory(&cfg.scenario, &cfg.geometry, slots, &mut rng)?;
    let path = common.out_dir.join("trajectory.csv");
    let mut out = String::from("slot,row,col,re,im\n");
    for (n, mat) in traj.slots.iter().enumerate() {
        for r in 0..mat.nrows() {
            for c in 0..mat.ncols() {
                let z = mat[(r, c)];
                out.push_str(&format!("{n},{r},{c},{},{}\n", z.re, z.im));
            }
        }
    }
    std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    let (m, l) = traj.dims();
    println!("wrote {} ({} slots of {}x{})", path.display(), traj.num_slots(), m, l);
    Ok(())
}

fn cmd_correlate(common: &CommonArgs, window: usize, max_lag: usize) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    if max_lag + 1 >= window {
        bail!("max_lag {max_lag} needs a window larger than {}", max_lag + 1);
    }
    ensure_out_dir(common)?;
    let mut rng = seeds::stream(cfg.master_seed, "channel", 0);
    let traj = generate_trajectory(&cfg.scenario, &cfg.geometry, window, &mut rng)?;

    let mut type1 = String::from("domain,i,i2,re,im,abs\n");
    let mut type2 = String::from("domain,j,j2,re,im,abs\n");
    let mut temporal = String::from("domain,lag,mean_abs\n");
    for domain in [Domain::Array, Domain::Frequency] {
        let r1 = metrics::type1_matrix(&traj, domain)?;
        for i in 0..r1.nrows() {
            for i2 in 0..r1.ncols() {
                let r = r1[(i, i2)];
                type1.push_str(&format!("{domain},{i},{i2},{},{},{}\n", r.re, r.im, r.norm()));
            }
        }
        let r2 = metrics::type2_matrix_averaged(&traj, domain)?;
        for j in 0..r2.nrows() {
            for j2 in 0..r2.ncols() {
                let r = r2[(j, j2)];
                type2.push_str(&format!("{domain},{j},{j2},{},{},{}\n", r.re, r.im, r.norm()));
            }
        }
        for (lag, value) in metrics::temporal_profile(&traj, domain, max_lag)?.iter().enumerate() {
            temporal.push_str(&format!("{domain},{lag},{value}\n"));
        }
    }
    let summary = serde_json::json!({
        "window_slots": window,
        "type1_avg_array": metrics::type1_average(&traj, Domain::Array)?,
        "type1_avg_frequency": metrics::type1_average(&traj, Domain::Frequency)?,
        "type2_avg_array": metrics::type2_average(&traj, Domain::Array)?,
        "type2_avg_frequency": metrics::type2_average(&traj, Domain::Frequency)?,
    });
    for (name, content) in [
        ("type1.csv", type1),
        ("type2.csv", type2),
        ("temporal.csv", temporal),
    ] {
        let path = common.out_dir.join(name);
        std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    let path = common.out_dir.join("correlations.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(common: &CommonArgs) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    ensure_out_dir(common)?;
    let windows = CycleWindows::from_config(&cfg);
    let cycle_seed = runner::cycle_seed(cfg.master_seed, 0);
    let mut rng = seeds::stream(cycle_seed, "channel", 0);
    let truth = generate_trajectory(&cfg.scenario, &cfg.geometry, cfg.collection_slots, &mut rng)?;
    let estimated = estimate_trajectory(&truth, &cfg.pilot, seeds::derive(cycle_seed, "noise", 0))?;
    let _ = windows;

    for kind in cfg.predictor_kinds()? {
        if kind == PredictorKind::Outdated {
            continue;
        }
        let train_cfg = TrainConfig {
            seed: seeds::derive(cycle_seed, &format!("train-{}", kind.name()), 0),
            ..cfg.train
        };
        let (pred, times) = train_predictor(
            kind,
            &estimated,
            cfg.input_order,
            cfg.prediction_order,
            &train_cfg,
        )?;
        let dir = common.out_dir.join(kind.name().to_ascii_lowercase());
        save_bundle(&pred, &dir)?;
        println!(
            "trained {} ({} model(s), {:.3} s serial) -> {}",
            kind.name(),
            pred.models.len(),
            times.serial_total_s(),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_predict(common: &CommonArgs, bundle: &PathBuf) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    ensure_out_dir(common)?;
    let pred = load_bundle(bundle).with_context(|| format!("loading {}", bundle.display()))?;
    let mut cfg = cfg;
    cfg.input_order = pred.input_order;
    cfg.prediction_order = pred.prediction_order;
    cfg.validate()?;

    let windows = CycleWindows::from_config(&cfg);
    let cycle_seed = runner::cycle_seed(cfg.master_seed, 0);
    let mut rng = seeds::stream(cycle_seed, "channel", 0);
    let truth = generate_trajectory(&cfg.scenario, &cfg.geometry, windows.total_slots(), &mut rng)?;
    let estimated = estimate_trajectory(&truth, &cfg.pilot, seeds::derive(cycle_seed, "noise", 0))?;
    let nmse_linear = runner::evaluate_predictor(&pred, &truth, &estimated, &windows)?;
    let nmse_db = metrics::nmse_db(nmse_linear);
    println!("{}: NMSE {:.6e} ({:.2} dB)", pred.kind.name(), nmse_linear, nmse_db);

    let path = common.out_dir.join("predict.json");
    let doc = serde_json::json!({
        "predictor": pred.kind.name(),
        "seed": cycle_seed,
        "nmse_linear": nmse_linear,
        "nmse_db": nmse_db,
        "eval_slots": cfg.eval.eval_slots,
        "gap_slots": cfg.eval.gap_slots,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(
    common: &CommonArgs,
    axis: &Option<String>,
    values: &Option<Vec<f64>>,
) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(axis) = axis {
        cfg.sweep.axis = SweepAxis::parse(axis)?;
    }
    if let Some(values) = values {
        cfg.sweep = SweepConfig { axis: cfg.sweep.axis, values: values.clone() };
    }
    cfg.validate()?;
    let report = runner::sweep(&cfg)?;
    let paths = runner::emit(&report, &common.out_dir)?;
    println!("wrote {}", paths.csv.display());
    println!("wrote {}", paths.json.display());
    if let Some(c) = paths.correlations_csv {
        println!("wrote {}", c.display());
    }
    for s in &report.summaries {
        println!(
            "{} @ {} = {}: median {:.2} dB over {} seed(s) [{:.2}, {:.2}]",
            s.predictor,
            report.config.sweep.axis.name(),
            s.axis_value,
            s.median_nmse_db,
            s.n_seeds,
            s.min_nmse_db,
            s.max_nmse_db
        );
    }
    Ok(())
}

fn cmd_rate(common: &CommonArgs) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    ensure_out_dir(common)?;
    let Some(section) = cfg.rate.clone() else {
        bail!("config has no rate section; add \"rate\": {{...}}");
    };
    let cycle_seed = runner::cycle_seed(cfg.master_seed, 0);
    let mut rows = String::from("predictor,beta,sum_rate\n");
    for kind in cfg.predictor_kinds()? {
        for &beta in &section.betas {
            let report = rate_for_kind(&cfg, &section, kind, cycle_seed, beta)?;
            println!("{} beta={beta}: sum rate {:.4} bits/s/Hz", kind.name(), report.sum_rate);
            rows.push_str(&format!("{},{beta},{}\n", kind.name(), report.sum_rate));
        }
    }
    let path = common.out_dir.join("rates.csv");
    std::fs::write(&path, rows).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());

    // Spacing-style correlation context is often wanted alongside rates;
    // cheap enough to always include for the configured geometry.
    let corr = correlation_summary(&cfg, cfg.sweep.axis, f64::NAN, cycle_seed, 100);
    if let Ok(rows) = corr {
        let path = common.out_dir.join("rate_correlations.json");
        std::fs::write(&path, serde_json::to_string_pretty(&rows)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { common, slots } => {
            init_threads(common).and_then(|_| cmd_generate(common, *slots))
        }
        Command::Correlate { common, window, max_lag } => {
            init_threads(common).and_then(|_| cmd_correlate(common, *window, *max_lag))
        }
        Command::Train { common } => init_threads(common).and_then(|_| cmd_train(common)),
        Command::Predict { common, bundle } => {
            init_threads(common).and_then(|_| cmd_predict(common, bundle))
        }
        Command::Sweep { common, axis, values } => {
            init_threads(common).and_then(|_| cmd_sweep(common, axis, values))
        }
        Command::Rate { common } => init_threads(common).and_then(|_| cmd_rate(common)),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
