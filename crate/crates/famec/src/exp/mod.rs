//! Experiment driver: sweep orchestration, CSV/plot emission, provenance.
//!
//! A sweep crosses `sweep_values x schemes x seeds` into independent cells.
//! Offload cells train a scheme and evaluate it over fresh scenarios;
//! estimation cells generate a channel-image dataset, train the estimator
//! (with or without the importance generator), and score the held-out
//! split. Every CSV starts with a provenance block (config hash, master
//! seed, build commit) and all writers format floats through Rust's
//! shortest-round-trip `Display`, so identical configurations and seeds
//! reproduce byte-identical outputs.

mod plot;

pub use plot::{line_plot_svg, Series};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{run_baseline, BaselineError, SchemeKind};
use crate::config::{Config, CsiMode, ScenarioConfig, SweepVar};
use crate::csnet::{
    channels_to_images, quality_metrics, train_estimator, ChannelImage, CsError, TrainOptions,
};
use crate::hitdma::{EnvError, EpisodeStats, EvalRow};
use crate::io::IoFormatError;
use crate::sysmodel::{synthesize_sequence, ModelError, PortGrid};
use crate::util::{median_iqr, mix_seed};

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("output `{0}` already holds results; pass --force to overwrite")]
    AlreadyExists(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Cs(#[from] CsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] IoFormatError),
    #[error("sweep value {0} is not valid for {1}")]
    BadSweepValue(f64, SweepVar),
}

/// Execution knobs shared by the CLI commands.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub force: bool,
    pub deterministic: bool,
    pub csi: CsiMode,
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { force: false, deterministic: true, csi: CsiMode::Perfect, threads: 1 }
    }
}

/// Provenance block embedded at the top of every CSV.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub commit: String,
}

impl Provenance {
    pub fn new(config: &Config) -> Self {
        Self { config_hash: config_hash(config), seed: config.scenario.seed, commit: commit_id() }
    }

    pub fn header(&self) -> String {
        format!(
            "# famec v1\n# config_hash={}\n# seed={}\n# commit={}\n",
            self.config_hash, self.seed, self.commit
        )
    }
}

/// SHA-256 of the canonical TOML serialization.
pub fn config_hash(config: &Config) -> String {
    let mut hasher = Sha256::new();
    hasher.update(crate::config::emit_config(config).as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

/// Build commit baked in at compile time (`FAMEC_COMMIT`), `unknown` when
/// absent — constant within a build, which is what reproducibility needs.
pub fn commit_id() -> String {
    option_env!("FAMEC_COMMIT").unwrap_or("unknown").to_string()
}

/// Write a CSV with the provenance block, a header row, and data rows.
pub fn write_csv(
    path: &Path,
    provenance: &Provenance,
    header: &str,
    rows: &[String],
) -> Result<(), ExpError> {
    let mut text = provenance.header();
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render evaluation rows into the fixed `scenario,scheme,user,...` schema.
pub fn eval_rows_to_csv(rows: &[EvalRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.scenario,
                r.scheme,
                r.user,
                fmt_opt(r.t_tx),
                fmt_opt(r.t_exe),
                r.t_local,
                r.t_total,
                r.system_delay
            )
        })
        .collect()
}

/// Render a reward trace into the fixed `episode,reward,...` schema.
pub fn trace_to_csv(trace: &[EpisodeStats]) -> Vec<String> {
    trace
        .iter()
        .map(|s| {
            format!("{},{},{},{},{}", s.episode, s.reward, s.epsilon, s.loss_dua, s.loss_tba)
        })
        .collect()
}

/// Generate `count` channel images by synthesizing snapshot sequences under
/// the scenario's channel family.
pub fn generate_image_dataset(
    cfg: &ScenarioConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<ChannelImage>, ExpError> {
    let grid = PortGrid::from_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    while images.len() < count {
        let snaps = synthesize_sequence(
            cfg,
            &grid,
            cfg.estimator.snapshots,
            cfg.estimator.temporal_coherence,
            &mut rng,
        )?;
        images.extend(channels_to_images(&snaps, cfg.estimator.block_size)?);
    }
    images.truncate(count);
    Ok(images)
}

/// Apply one sweep value to a scenario.
pub fn apply_sweep(
    base: &ScenarioConfig,
    var: SweepVar,
    value: f64,
) -> Result<ScenarioConfig, ExpError> {
    let mut cfg = base.clone();
    match var {
        SweepVar::FaLength => {
            cfg.fa_length = value;
        }
        SweepVar::NUsers => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(ExpError::BadSweepValue(value, var));
            }
            cfg.n_users = value as usize;
        }
        SweepVar::PortSpacing => {
            // Spacing in wavelengths at a fixed port count.
            cfg.fa_length = value * (cfg.n_ports - 1) as f64;
        }
        SweepVar::PortCount => {
            if value < 2.0 || value.fract() != 0.0 {
                return Err(ExpError::BadSweepValue(value, var));
            }
            cfg.n_ports = value as usize;
            // Keep the default half-wavelength port spacing.
            cfg.fa_length = 0.5 * (cfg.n_ports - 1) as f64;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Everything produced by one sweep cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub index: usize,
    pub value: f64,
    pub scheme: String,
    pub seed: u64,
    pub system_delay: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub eval_rows: Vec<EvalRow>,
    pub trace: Vec<EpisodeStats>,
    pub per_image: Vec<(usize, f64, f64)>,
    pub violations: u64,
    pub error: Option<String>,
}

/// Summary handed back to callers (and to the acceptance tests).
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub results_path: PathBuf,
    pub cells: Vec<CellResult>,
}

fn estimation_sweep(var: SweepVar) -> bool {
    matches!(var, SweepVar::PortSpacing | SweepVar::PortCount)
}

fn run_offload_cell(
    cfg: &ScenarioConfig,
    scheme: SchemeKind,
    csi: CsiMode,
    cell_seed: u64,
) -> Result<(Vec<EvalRow>, Vec<EpisodeStats>, u64, f64), ExpError> {
    let eval_seeds: Vec<u64> =
        (0..cfg.drl.eval_scenarios).map(|i| mix_seed(cell_seed, 0xE0A + i as u64)).collect();
    let run = run_baseline(
        scheme,
        cfg,
        csi,
        None,
        cell_seed,
        &eval_seeds,
        cfg.drl.slots_per_episode,
    )?;
    // One system delay per scenario (rows repeat it per user).
    let mut per_scenario: Vec<f64> = Vec::new();
    for row in &run.rows {
        if row.user == 0 {
            per_scenario.push(row.system_delay);
        }
    }
    let (median, _) = median_iqr(&per_scenario);
    Ok((run.rows, run.reward_trace, run.violations, median))
}

fn run_estimation_cell(
    cfg: &ScenarioConfig,
    use_importance: bool,
    cell_seed: u64,
) -> Result<(Vec<(usize, f64, f64)>, f64, f64), ExpError> {
    let est = &cfg.estimator;
    let dataset_seed = mix_seed(cell_seed, 0xD5);
    let train_seed = mix_seed(cell_seed, 0x7A);
    let total = est.train_images + est.test_images;
    let images = generate_image_dataset(cfg, total, dataset_seed)?;
    let (train_split, test_split) = images.split_at(est.train_images);

    let options = TrainOptions { use_importance, steps: est.train_steps, seed: train_seed };
    let (bundle, _) = train_estimator(train_split, est, &options)?;

    let mut per_image = Vec::with_capacity(test_split.len());
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (i, img) in test_split.iter().enumerate() {
        let (y, _) = bundle.sensing.measure_image(&img.pixels)?;
        let recon = bundle.reconstruct(&y, img.height(), img.width())?;
        let (p, s) = quality_metrics(&img.pixels, &recon)?;
        psnr_sum += p;
        ssim_sum += s;
        per_image.push((i, p, s));
    }
    let n = test_split.len().max(1) as f64;
    Ok((per_image, psnr_sum / n, ssim_sum / n))
}

fn run_cell(
    base: &Config,
    options: &RunOptions,
    index: usize,
    value: f64,
    scheme: &str,
    seed: u64,
    value_index: usize,
) -> CellResult {
    let mut result = CellResult {
        index,
        value,
        scheme: scheme.to_string(),
        seed,
        system_delay: None,
        psnr: None,
        ssim: None,
        eval_rows: Vec::new(),
        trace: Vec::new(),
        per_image: Vec::new(),
        violations: 0,
        error: None,
    };
    let cell_seed = mix_seed(seed, value_index as u64);
    let run = (|| -> Result<(), ExpError> {
        let cfg = apply_sweep(&base.scenario, base.experiment.sweep_var, value)?;
        if estimation_sweep(base.experiment.sweep_var) {
            let use_importance = scheme == "ibm-ccs";
            let (per_image, psnr, ssim) = run_estimation_cell(&cfg, use_importance, cell_seed)?;
            result.per_image = per_image;
            result.psnr = Some(psnr);
            result.ssim = Some(ssim);
        } else {
            let kind = SchemeKind::parse(scheme).expect("validated scheme name");
            let (rows, trace, violations, median) =
                run_offload_cell(&cfg, kind, options.csi, cell_seed)?;
            result.eval_rows = rows;
            result.trace = trace;
            result.violations = violations;
            result.system_delay = Some(median);
        }
        Ok(())
    })();
    if let Err(e) = run {
        result.error = Some(e.to_string());
    }
    result
}

/// Execute the full sweep and write the run directory.
pub fn run_experiment(
    config: &Config,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunSummary, ExpError> {
    let results_path = out_dir.join("results.csv");
    if results_path.exists() && !options.force {
        return Err(ExpError::AlreadyExists(results_path));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::create_dir_all(out_dir.join("eval"))?;
    std::fs::create_dir_all(out_dir.join("traces"))?;
    std::fs::create_dir_all(out_dir.join("estimation"))?;
    std::fs::write(out_dir.join("config.toml"), crate::config::emit_config(config))?;

    let provenance = Provenance::new(config);
    let exp = &config.experiment;

    // Enumerate cells in deterministic order.
    let mut cells_spec = Vec::new();
    for (vi, &value) in exp.sweep_values.iter().enumerate() {
        for scheme in &exp.schemes {
            for &seed in &exp.seeds {
                cells_spec.push((cells_spec.len(), value, scheme.clone(), seed, vi));
            }
        }
    }

    let threads = if options.deterministic { options.threads.max(1) } else { options.threads.max(1) };
    let mut cells: Vec<CellResult> = if threads <= 1 {
        cells_spec
            .iter()
            .map(|(i, v, s, seed, vi)| run_cell(config, options, *i, *v, s, *seed, *vi))
            .collect()
    } else {
        // Cells are independent and individually seeded; distribute them
        // round-robin and reassemble in index order.
        let mut out: Vec<Option<CellResult>> = vec![None; cells_spec.len()];
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for t in 0..threads {
                let spec = &cells_spec;
                let handle = scope.spawn(move || {
                    spec.iter()
                        .skip(t)
                        .step_by(threads)
                        .map(|(i, v, s, seed, vi)| {
                            run_cell(config, options, *i, *v, s, *seed, *vi)
                        })
                        .collect::<Vec<_>>()
                });
                handles.push(handle);
            }
            for handle in handles {
                for cell in handle.join().expect("worker panicked") {
                    let idx = cell.index;
                    out[idx] = Some(cell);
                }
            }
        });
        out.into_iter().map(|c| c.expect("all cells filled")).collect()
    };
    cells.sort_by_key(|c| c.index);

    // results.csv — the fixed schema, one row per cell.
    let var = exp.sweep_var;
    let rows: Vec<String> = cells
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{},{},{}",
                var,
                c.value,
                c.scheme,
                c.seed,
                fmt_opt(c.system_delay),
                fmt_opt(c.psnr),
                fmt_opt(c.ssim)
            )
        })
        .collect();
    write_csv(
        &results_path,
        &provenance,
        "sweep_var,sweep_value,scheme,seed,T_s,psnr,ssim",
        &rows,
    )?;

    // Per-cell detail files.
    for cell in &cells {
        let stem = format!("{}_{}_{}", cell.value, cell.scheme, cell.seed);
        if !cell.eval_rows.is_empty() {
            write_csv(
                &out_dir.join("eval").join(format!("{stem}.csv")),
                &provenance,
                "scenario,scheme,user,t_t,t_exe,t_l,t_n,T_s",
                &eval_rows_to_csv(&cell.eval_rows),
            )?;
        }
        if !cell.trace.is_empty() {
            write_csv(
                &out_dir.join("traces").join(format!("{stem}.csv")),
                &provenance,
                "episode,reward,eps,loss_dua,loss_tba",
                &trace_to_csv(&cell.trace),
            )?;
        }
        if !cell.per_image.is_empty() {
            let rows: Vec<String> = cell
                .per_image
                .iter()
                .map(|(i, p, s)| format!("{i},{p},{s}"))
                .collect();
            write_csv(
                &out_dir.join("estimation").join(format!("{stem}.csv")),
                &provenance,
                "image,psnr,ssim",
                &rows,
            )?;
        }
    }

    // Errors, if any cells failed.
    let failures: Vec<String> = cells
        .iter()
        .filter_map(|c| {
            c.error.as_ref().map(|e| {
                format!("value={} scheme={} seed={}: {e}", c.value, c.scheme, c.seed)
            })
        })
        .collect();
    if !failures.is_empty() {
        std::fs::write(out_dir.join("errors.log"), failures.join("\n") + "\n")?;
    }

    write_plots(out_dir, exp.sweep_var, &cells)?;
    write_meta(out_dir, &provenance, &cells)?;

    Ok(RunSummary { out_dir: out_dir.to_path_buf(), results_path, cells })
}

fn series_over_values(
    cells: &[CellResult],
    scheme: &str,
    pick: impl Fn(&CellResult) -> Option<f64>,
) -> Series {
    let mut values: Vec<f64> = cells
        .iter()
        .filter(|c| c.scheme == scheme)
        .map(|c| c.value)
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut points = Vec::new();
    let mut band = Vec::new();
    for v in values {
        let samples: Vec<f64> = cells
            .iter()
            .filter(|c| c.scheme == scheme && c.value == v)
            .filter_map(&pick)
            .collect();
        if samples.is_empty() {
            continue;
        }
        let (median, iqr) = median_iqr(&samples);
        points.push((v, median));
        band.push((v, median - iqr / 2.0, median + iqr / 2.0));
    }
    Series { label: scheme.to_string(), points, band: Some(band) }
}

fn write_plots(out_dir: &Path, var: SweepVar, cells: &[CellResult]) -> Result<(), ExpError> {
    let mut schemes: Vec<String> = cells.iter().map(|c| c.scheme.clone()).collect();
    schemes.dedup();
    schemes.sort();
    schemes.dedup();

    if estimation_sweep(var) {
        let psnr: Vec<Series> = schemes
            .iter()
            .map(|s| series_over_values(cells, s, |c| c.psnr))
            .collect();
        line_plot_svg(
            &out_dir.join(format!("psnr_vs_{var}.svg")),
            "Reconstruction PSNR",
            &var.to_string(),
            "PSNR (dB)",
            &psnr,
        )?;
        let ssim: Vec<Series> = schemes
            .iter()
            .map(|s| series_over_values(cells, s, |c| c.ssim))
            .collect();
        line_plot_svg(
            &out_dir.join(format!("ssim_vs_{var}.svg")),
            "Reconstruction SSIM",
            &var.to_string(),
            "SSIM",
            &ssim,
        )?;
    } else {
        let delay: Vec<Series> = schemes
            .iter()
            .map(|s| series_over_values(cells, s, |c| c.system_delay))
            .collect();
        line_plot_svg(
            &out_dir.join(format!("delay_vs_{var}.svg")),
            "System delay",
            &var.to_string(),
            "delay (s)",
            &delay,
        )?;
        let reward_series: Vec<Series> = cells
            .iter()
            .filter(|c| !c.trace.is_empty())
            .take(8)
            .map(|c| Series {
                label: format!("{} v={} s={}", c.scheme, c.value, c.seed),
                points: c
                    .trace
                    .iter()
                    .map(|e| (e.episode as f64, e.reward))
                    .collect(),
                band: None,
            })
            .collect();
        if !reward_series.is_empty() {
            line_plot_svg(
                &out_dir.join("reward_vs_episode.svg"),
                "Training reward",
                "episode",
                "mean slot reward",
                &reward_series,
            )?;
        }
    }
    Ok(())
}

fn write_meta(
    out_dir: &Path,
    provenance: &Provenance,
    cells: &[CellResult],
) -> Result<(), ExpError> {
    let mut text = String::new();
    let _ = writeln!(text, "[provenance]");
    let _ = writeln!(text, "config_hash = \"{}\"", provenance.config_hash);
    let _ = writeln!(text, "seed = {}", provenance.seed);
    let _ = writeln!(text, "commit = \"{}\"", provenance.commit);
    for cell in cells {
        let _ = writeln!(text, "\n[[cell]]");
        let _ = writeln!(text, "value = {}", cell.value);
        let _ = writeln!(text, "scheme = \"{}\"", cell.scheme);
        let _ = writeln!(text, "seed = {}", cell.seed);
        let _ = writeln!(text, "violations = {}", cell.violations);
        let _ = writeln!(
            text,
            "status = \"{}\"",
            if cell.error.is_some() { "failed" } else { "ok" }
        );
        if let Some(e) = &cell.error {
            let _ = writeln!(text, "error = {:?}", e);
        }
    }
    std::fs::write(out_dir.join("run_meta.toml"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn tiny_offload_config() -> Config {
        let text = r#"
[scenario]
n_users = 2
n_ports = 6
n_elements = 2
fa_length = 3.0

[scenario.drl]
episodes = 6
slots_per_episode = 3
eps_decay_epochs = 4
eval_scenarios = 2
batch_size = 8

[experiment]
name = "smoke"
sweep_var = "fa_length"
sweep_values = [3.0, 4.0]
schemes = ["proposed", "fp"]
seeds = [0]
"#;
        parse_config_str(text).unwrap()
    }

    #[test]
    fn sweep_produces_expected_row_count_and_schema() {
        let config = tiny_offload_config();
        let dir = tempfile::tempdir().unwrap();
        let summary =
            run_experiment(&config, dir.path(), &RunOptions::default()).unwrap();
        assert_eq!(summary.cells.len(), 4); // 2 values x 2 schemes x 1 seed
        let text = std::fs::read_to_string(&summary.results_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# famec v1");
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert!(lines.next().unwrap().starts_with("# seed="));
        assert!(lines.next().unwrap().starts_with("# commit="));
        assert_eq!(lines.next().unwrap(), "sweep_var,sweep_value,scheme,seed,T_s,psnr,ssim");
        let data: Vec<&str> = lines.collect();
        assert_eq!(data.len(), 4);
        for row in data {
            assert!(row.starts_with("fa_length,"));
            assert!(row.ends_with(",,"), "psnr/ssim empty on offload sweeps: {row}");
        }
        assert!(dir.path().join("delay_vs_fa_length.svg").exists());
        assert!(dir.path().join("reward_vs_episode.svg").exists());
        assert!(dir.path().join("config.toml").exists());
    }

    #[test]
    fn rerun_refuses_without_force() {
        let config = tiny_offload_config();
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&config, dir.path(), &RunOptions::default()).unwrap();
        let err = run_experiment(&config, dir.path(), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, ExpError::AlreadyExists(_)));
        run_experiment(
            &config,
            dir.path(),
            &RunOptions { force: true, ..RunOptions::default() },
        )
        .unwrap();
    }

    #[test]
    fn reruns_are_byte_identical() {
        let config = tiny_offload_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_experiment(&config, dir_a.path(), &RunOptions::default()).unwrap();
        run_experiment(&config, dir_b.path(), &RunOptions::default()).unwrap();
        let a = std::fs::read(dir_a.path().join("results.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("results.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_value_validation() {
        let cfg = parse_config_str("").unwrap().scenario;
        assert!(apply_sweep(&cfg, SweepVar::NUsers, 2.5).is_err());
        assert!(apply_sweep(&cfg, SweepVar::NUsers, 4.0).is_ok());
        let spaced = apply_sweep(&cfg, SweepVar::PortSpacing, 0.25).unwrap();
        assert!((spaced.port_spacing() / spaced.wavelength - 0.25).abs() < 1e-12);
        let counted = apply_sweep(&cfg, SweepVar::PortCount, 16.0).unwrap();
        assert_eq!(counted.n_ports, 16);
        assert!((counted.port_spacing() / counted.wavelength - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dataset_generation_produces_requested_count() {
        let mut cfg = parse_config_str("").unwrap().scenario;
        cfg.n_ports = 16;
        cfg.fa_length = 8.0;
        cfg.estimator.block_size = 8;
        cfg.estimator.snapshots = 8;
        let images = generate_image_dataset(&cfg, 10, 3).unwrap();
        assert_eq!(images.len(), 10);
        // Deterministic under seed.
        let again = generate_image_dataset(&cfg, 10, 3).unwrap();
        assert_eq!(images[3].pixels, again[3].pixels);
    }
}
