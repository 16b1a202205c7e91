//! `famec` — experiment driver for the fluid-antenna MEC offloading
//! framework.
//!
//! One verb per pipeline stage: `dataset` synthesizes channel-image sets,
//! `train-ccs`/`eval-ccs` handle the compressed-sensing estimator, `train`/
//! `eval` handle the offloading agents, `sweep` reproduces the figure
//! experiments from a config file, and `oracle` brute-forces small
//! instances. Exit codes: 0 success, 1 validation failure, 2 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use famec::baselines::{run_baseline, SchemeKind, SchemeSpec};
use famec::config::{parse_config, Config, CsiMode, SinrConvention};
use famec::csnet::{quality_metrics, train_estimator, TrainOptions as CcsOptions};
use famec::exp::{
    self, eval_rows_to_csv, generate_image_dataset, run_experiment, trace_to_csv, Provenance,
    RunOptions,
};
use famec::hitdma::{evaluate, train, AgentSet, TrainOptions};
use famec::io::{load_bundle, load_dataset, save_bundle, save_dataset, Checkpoint};
use famec::sysmodel::PortGrid;

#[derive(Parser)]
#[command(name = "famec", version, about = "Fluid-antenna MEC offloading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
    /// Channel knowledge mode: perfect | estimated.
    #[arg(long, value_name = "MODE")]
    csi: Option<String>,
    /// SINR interference convention: printed | conventional.
    #[arg(long, value_name = "CONV")]
    sinr: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test channel-image datasets.
    Dataset {
        #[command(flatten)]
        common: Common,
    },
    /// Train the compressed-sensing estimator on a dataset.
    TrainCcs {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.ds (from `famec dataset`).
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Estimator scheme: ibm-ccs (default) or ccs (no importance
        /// generator).
        #[arg(long, default_value = "ibm-ccs")]
        scheme: String,
    },
    /// Score a trained estimator on a dataset split.
    EvalCcs {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Estimator checkpoint from `train-ccs`.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Train the offloading agents.
    Train {
        #[command(flatten)]
        common: Common,
        /// Offload scheme: proposed | fpa | fp | zf | maddpg.
        #[arg(long, default_value = "proposed")]
        scheme: String,
        /// Estimator checkpoint (required with --csi estimated).
        #[arg(long, value_name = "PATH")]
        bundle: Option<PathBuf>,
    },
    /// Evaluate trained agents on fresh scenarios.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        scheme: String,
        /// Agent checkpoint from `train`.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        bundle: Option<PathBuf>,
    },
    /// Run the sweep experiment described in the config file.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Brute-force reference on a small instance.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<famec::exp::ExpError> for CliError {
    fn from(e: famec::exp::ExpError) -> Self {
        use famec::exp::ExpError;
        match e {
            ExpError::AlreadyExists(_) | ExpError::Config(_) | ExpError::BadSweepValue(..) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<Config, CliError> {
    let mut config = match &common.config {
        Some(path) => parse_config(path).map_err(CliError::validation)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.scenario.seed = seed;
    }
    if let Some(csi) = &common.csi {
        // Validate even though only some commands consume it.
        csi.parse::<CsiMode>().map_err(CliError::Validation)?;
    }
    if let Some(sinr) = &common.sinr {
        config.scenario.sinr_convention =
            sinr.parse::<SinrConvention>().map_err(CliError::Validation)?;
    }
    config.scenario.refresh_derived();
    config.scenario.validate().map_err(CliError::validation)?;
    Ok(config)
}

fn csi_mode(common: &Common) -> Result<CsiMode, CliError> {
    match &common.csi {
        Some(text) => text.parse::<CsiMode>().map_err(CliError::Validation),
        None => Ok(CsiMode::Perfect),
    }
}

fn out_dir(common: &Common) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("famec-out"));
    std::fs::create_dir_all(&dir).map_err(CliError::runtime)?;
    Ok(dir)
}

fn thread_count(common: &Common) -> usize {
    if common.deterministic {
        return 1;
    }
    std::env::var("FAMEC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Validation(format!(
            "`{}` exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_dataset(common: &Common) -> Result<(), CliError> {
    let config = load_config(common)?;
    let dir = out_dir(common)?;
    let cfg = &config.scenario;
    let train_path = dir.join("train.ds");
    let test_path = dir.join("test.ds");
    refuse_overwrite(&train_path, common.force)?;
    refuse_overwrite(&test_path, common.force)?;
    let total = cfg.estimator.train_images + cfg.estimator.test_images;
    let images = generate_image_dataset(cfg, total, cfg.seed)?;
    let (train_split, test_split) = images.split_at(cfg.estimator.train_images);
    save_dataset(&train_path, train_split).map_err(CliError::runtime)?;
    save_dataset(&test_path, test_split).map_err(CliError::runtime)?;
    println!(
        "wrote {} train / {} test images to {}",
        train_split.len(),
        test_split.len(),
        dir.display()
    );
    Ok(())
}

fn estimator_scheme(name: &str) -> Result<bool, CliError> {
    match name {
        "ibm-ccs" => Ok(true),
        "ccs" => Ok(false),
        other => Err(CliError::Validation(format!(
            "unknown estimator scheme `{other}` (expected ibm-ccs or ccs)"
        ))),
    }
}

fn cmd_train_ccs(common: &Common, dataset: &Path, scheme: &str) -> Result<(), CliError> {
    let config = load_config(common)?;
    let use_importance = estimator_scheme(scheme)?;
    let dir = out_dir(common)?;
    let ckpt_path = dir.join("estimator.ckpt");
    refuse_overwrite(&ckpt_path, common.force)?;

    let images = load_dataset(&dataset.join("train.ds")).map_err(CliError::runtime)?;
    let est = &config.scenario.estimator;
    let options = CcsOptions {
        use_importance,
        steps: est.train_steps,
        seed: config.scenario.seed,
    };
    let (bundle, trace) =
        train_estimator(&images, est, &options).map_err(CliError::runtime)?;
    save_bundle(&ckpt_path, &bundle).map_err(CliError::runtime)?;

    let provenance = Provenance::new(&config);
    let rows: Vec<String> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i},{},{},{},{}", s.l_r, s.l_i, s.l_ig, s.l_n))
        .collect();
    exp::write_csv(&dir.join("ccs_train_trace.csv"), &provenance, "step,l_r,l_i,l_ig,l_n", &rows)?;
    println!("trained {scheme} for {} steps; checkpoint at {}", trace.steps.len(), ckpt_path.display());
    Ok(())
}

fn cmd_eval_ccs(common: &Common, dataset: &Path, checkpoint: &Path) -> Result<(), CliError> {
    let config = load_config(common)?;
    let dir = out_dir(common)?;
    let bundle =
        load_bundle(checkpoint, &config.scenario.estimator).map_err(CliError::runtime)?;
    let images = load_dataset(&dataset.join("test.ds")).map_err(CliError::runtime)?;

    let mut rows = Vec::with_capacity(images.len() + 1);
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (i, img) in images.iter().enumerate() {
        let (y, _) = bundle.sensing.measure_image(&img.pixels).map_err(CliError::runtime)?;
        let recon = bundle
            .reconstruct(&y, img.height(), img.width())
            .map_err(CliError::runtime)?;
        let (p, s) = quality_metrics(&img.pixels, &recon).map_err(CliError::runtime)?;
        psnr_sum += p;
        ssim_sum += s;
        rows.push(format!("{i},{p},{s}"));
    }
    let n = images.len().max(1) as f64;
    rows.push(format!("mean,{},{}", psnr_sum / n, ssim_sum / n));
    let provenance = Provenance::new(&config);
    exp::write_csv(&dir.join("estimation.csv"), &provenance, "image,psnr,ssim", &rows)?;
    println!(
        "evaluated {} images: mean psnr {:.3} dB, mean ssim {:.4}",
        images.len(),
        psnr_sum / n,
        ssim_sum / n
    );
    Ok(())
}

fn offload_scheme(name: &str) -> Result<SchemeKind, CliError> {
    SchemeKind::parse(name).filter(|k| *k != SchemeKind::Oracle).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown offload scheme `{name}` (expected proposed|fpa|fp|zf|maddpg)"
        ))
    })
}

fn load_optional_bundle(
    path: &Option<PathBuf>,
    config: &Config,
    csi: CsiMode,
) -> Result<Option<famec::csnet::EstimatorBundle>, CliError> {
    match (csi, path) {
        (CsiMode::Perfect, _) => Ok(None),
        (CsiMode::Estimated, Some(p)) => Ok(Some(
            load_bundle(p, &config.scenario.estimator).map_err(CliError::runtime)?,
        )),
        (CsiMode::Estimated, None) => Err(CliError::Validation(
            "--csi estimated needs --bundle PATH (from `famec train-ccs`)".to_string(),
        )),
    }
}

fn cmd_train(common: &Common, scheme: &str, bundle_path: &Option<PathBuf>) -> Result<(), CliError> {
    let config = load_config(common)?;
    let kind = offload_scheme(scheme)?;
    let csi = csi_mode(common)?;
    let dir = out_dir(common)?;
    let ckpt_path = dir.join("agents.ckpt");
    refuse_overwrite(&ckpt_path, common.force)?;
    let bundle = load_optional_bundle(bundle_path, &config, csi)?;

    let mut cfg = config.scenario.clone();
    let grid = PortGrid::from_config(&cfg);
    let spec = SchemeSpec::new(kind, &cfg, &grid).map_err(CliError::runtime)?;
    if let Some(conv) = spec.sinr_convention {
        cfg.sinr_convention = conv;
    }
    let options = TrainOptions {
        episodes: cfg.drl.episodes,
        slots: cfg.drl.slots_per_episode,
        csi,
        bundle,
        seed: cfg.seed,
        overrides: spec.overrides.clone(),
    };
    let result = train(&cfg, &options).map_err(CliError::runtime)?;
    result.agents.to_checkpoint().save(&ckpt_path).map_err(CliError::runtime)?;

    let provenance = Provenance::new(&config);
    exp::write_csv(
        &dir.join("reward_trace.csv"),
        &provenance,
        "episode,reward,eps,loss_dua,loss_tba",
        &trace_to_csv(&result.reward_trace),
    )?;
    let meta = format!(
        "scheme = \"{}\"\nviolations = {}\nsteps = {}\nreward_t1 = {}\nreward_t2 = {}\n",
        kind.name(),
        result.violations,
        result.steps,
        result.reward_params.t1,
        result.reward_params.t2
    );
    std::fs::write(dir.join("train_meta.toml"), meta).map_err(CliError::runtime)?;
    println!(
        "trained {} for {} episodes; final mean reward {:.2}; checkpoint at {}",
        kind.name(),
        result.reward_trace.len(),
        result.reward_trace.last().map(|s| s.reward).unwrap_or(0.0),
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(
    common: &Common,
    scheme: &str,
    checkpoint: &Path,
    bundle_path: &Option<PathBuf>,
) -> Result<(), CliError> {
    let config = load_config(common)?;
    let kind = offload_scheme(scheme)?;
    let csi = csi_mode(common)?;
    let dir = out_dir(common)?;
    let bundle = load_optional_bundle(bundle_path, &config, csi)?;

    let mut cfg = config.scenario.clone();
    let grid = PortGrid::from_config(&cfg);
    let spec = SchemeSpec::new(kind, &cfg, &grid).map_err(CliError::runtime)?;
    if let Some(conv) = spec.sinr_convention {
        cfg.sinr_convention = conv;
    }

    // Rebuild the architecture the checkpoint was saved from, then load.
    use rand::SeedableRng;
    let actions =
        famec::hitdma::enumerate_apv_actions(&cfg, &grid).map_err(CliError::runtime)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut agents = AgentSet::build(&cfg, &spec.overrides, actions, &mut rng);
    let ckpt = Checkpoint::load(checkpoint).map_err(CliError::runtime)?;
    agents.load_checkpoint(&ckpt).map_err(CliError::runtime)?;

    let eval_seeds: Vec<u64> = (0..cfg.drl.eval_scenarios)
        .map(|i| cfg.seed.wrapping_add(0x51ee_d000 + i as u64))
        .collect();
    let rows = evaluate(
        &agents,
        &cfg,
        &spec.overrides,
        csi,
        bundle.as_ref(),
        kind.name(),
        &eval_seeds,
        cfg.drl.slots_per_episode,
    )
    .map_err(CliError::runtime)?;
    let provenance = Provenance::new(&config);
    exp::write_csv(
        &dir.join("evaluation.csv"),
        &provenance,
        "scenario,scheme,user,t_t,t_exe,t_l,t_n,T_s",
        &eval_rows_to_csv(&rows),
    )?;
    println!("evaluated {} scenarios; wrote {}", eval_seeds.len(), dir.join("evaluation.csv").display());
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<(), CliError> {
    let config = load_config(common)?;
    let dir = match (&common.out, &config.experiment.output) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => PathBuf::from("famec-out"),
    };
    let options = RunOptions {
        force: common.force,
        deterministic: common.deterministic,
        csi: csi_mode(common)?,
        threads: thread_count(common),
    };
    let summary = run_experiment(&config, &dir, &options)?;
    let failed = summary.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "sweep `{}`: {} cells ({} failed); results at {}",
        config.experiment.name,
        summary.cells.len(),
        failed,
        summary.results_path.display()
    );
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} cells failed; see {}",
            dir.join("errors.log").display()
        )));
    }
    Ok(())
}

fn cmd_oracle(common: &Common) -> Result<(), CliError> {
    let config = load_config(common)?;
    let dir = out_dir(common)?;
    let cfg = &config.scenario;
    let eval_seeds: Vec<u64> =
        (0..cfg.drl.eval_scenarios).map(|i| cfg.seed.wrapping_add(i as u64)).collect();
    let run = run_baseline(
        SchemeKind::Oracle,
        cfg,
        csi_mode(common)?,
        None,
        cfg.seed,
        &eval_seeds,
        cfg.drl.slots_per_episode,
    )
    .map_err(CliError::runtime)?;
    let provenance = Provenance::new(&config);
    exp::write_csv(
        &dir.join("oracle.csv"),
        &provenance,
        "scenario,scheme,user,t_t,t_exe,t_l,t_n,T_s",
        &eval_rows_to_csv(&run.rows),
    )?;
    let mean: f64 = run.rows.iter().filter(|r| r.user == 0).map(|r| r.system_delay).sum::<f64>()
        / eval_seeds.len() as f64;
    println!("oracle mean system delay {mean:.6e} s over {} scenarios", eval_seeds.len());
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Dataset { common } => cmd_dataset(common),
        Command::TrainCcs { common, dataset, scheme } => cmd_train_ccs(common, dataset, scheme),
        Command::EvalCcs { common, dataset, checkpoint } => {
            cmd_eval_ccs(common, dataset, checkpoint)
        }
        Command::Train { common, scheme, bundle } => cmd_train(common, scheme, bundle),
        Command::Eval { common, scheme, checkpoint, bundle } => {
            cmd_eval(common, scheme, checkpoint, bundle)
        }
        Command::Sweep { common } => cmd_sweep(common),
        Command::Oracle { common } => cmd_oracle(common),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
