//! Scenario and experiment configuration.
//!
//! Configurations live in TOML files with two tables, `[scenario]` and
//! `[experiment]`. Every key has a default, so an empty file parses to the
//! reference parameter set. Unknown keys are rejected. Quantities given in
//! dBm in the file (`noise_dbm`, `p_max_dbm`) are converted to linear watts
//! exactly once, at parse time; the dBm originals are kept so that emitting
//! a config and re-parsing it round-trips bit-exactly.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Convert a dBm level to linear watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert linear watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Which interference term the SINR denominator uses.
///
/// `Printed` charges user n with the *own-signal* powers of the other users,
/// `sum_{k != n} |w_k^H h_k|^2 p_k`, which is also the form the power-pricing
/// game is derived from. `Conventional` uses the cross terms
/// `|w_n^H h_k|^2 p_k`; zero-forcing beamforming is only meaningful under
/// this option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SinrConvention {
    #[default]
    Printed,
    Conventional,
}

impl std::str::FromStr for SinrConvention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "printed" => Ok(Self::Printed),
            "conventional" => Ok(Self::Conventional),
            other => Err(format!("unknown SINR convention `{other}`")),
        }
    }
}

impl fmt::Display for SinrConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Printed => write!(f, "printed"),
            Self::Conventional => write!(f, "conventional"),
        }
    }
}

/// Whether agents observe the true channel grid or an estimate produced by
/// the compressed-sensing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    #[default]
    Perfect,
    Estimated,
}

impl std::str::FromStr for CsiMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perfect" => Ok(Self::Perfect),
            "estimated" => Ok(Self::Estimated),
            other => Err(format!("unknown CSI mode `{other}`")),
        }
    }
}

impl fmt::Display for CsiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Perfect => write!(f, "perfect"),
            Self::Estimated => write!(f, "estimated"),
        }
    }
}

/// Power-pricing game constants and iteration controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    /// Magnitude constant `nu` in the gain normalizer.
    pub nu: f64,
    /// Exponent applied to the normalized gain inside the price map.
    pub price_exponent: f64,
    /// Fixed-point stop threshold on the max power change, watts.
    pub tolerance: f64,
    /// Iteration cap for the power fixed point.
    pub max_iterations: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            nu: 5.0,
            price_exponent: 1.0,
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

/// Compressed-sensing estimator architecture and training knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Sampling ratio r: measurements per block = round(r * block_size^2).
    pub sampling_ratio: f64,
    /// Square block side B_k; images must tile into B_k x B_k blocks.
    pub block_size: usize,
    /// Convolution kernel side in the deep reconstruction path.
    pub kernel_size: usize,
    /// Feature maps per deep-reconstruction convolution.
    pub feature_maps: usize,
    /// Residual blocks in the deep reconstruction path.
    pub res_blocks: usize,
    /// Trade-off weight on the information-bottleneck penalty.
    pub eta: f64,
    /// Regularization weight pulling importance gates toward 1.
    pub gamma: f64,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Images per training batch.
    pub batch_size: usize,
    /// Training steps (batches) per `train-ccs` run.
    pub train_steps: usize,
    /// Channel snapshots stacked per image column dimension.
    pub snapshots: usize,
    /// AR(1) coherence of consecutive snapshots in dataset sequences.
    pub temporal_coherence: f64,
    /// Images generated for the training split by `famec dataset`.
    pub train_images: usize,
    /// Images generated for the held-out split by `famec dataset`.
    pub test_images: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sampling_ratio: 0.1,
            block_size: 32,
            kernel_size: 3,
            feature_maps: 64,
            res_blocks: 5,
            eta: 1e-2,
            gamma: 1e-4,
            learning_rate: 1e-4,
            batch_size: 16,
            train_steps: 400,
            snapshots: 32,
            temporal_coherence: 0.95,
            train_images: 200,
            test_images: 50,
        }
    }
}

impl EstimatorConfig {
    /// Measurements per block, `round(r * B_k^2)`.
    pub fn n_measurements(&self) -> usize {
        (self.sampling_ratio * (self.block_size * self.block_size) as f64).round() as usize
    }
}

/// DRL hyperparameters shared by the user-side and base-station-side agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrlConfig {
    /// Hidden layer widths for every network.
    pub hidden: [usize; 3],
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Discount factor.
    pub discount: f64,
    /// Global-norm gradient clip threshold.
    pub grad_clip: f64,
    /// Soft-update coefficient for all target networks.
    pub tau: f64,
    /// Replay ring-buffer capacity per agent class.
    pub replay_capacity: usize,
    /// Transitions per gradient step.
    pub batch_size: usize,
    /// Initial epsilon for discrete exploration.
    pub eps_start: f64,
    /// Final epsilon, held constant after the decay window.
    pub eps_end: f64,
    /// Episodes over which epsilon decays linearly.
    pub eps_decay_epochs: usize,
    /// Initial Gaussian exploration noise scale for continuous actions.
    pub noise_start: f64,
    /// Final exploration noise scale, reached on the epsilon schedule.
    pub noise_end: f64,
    /// Training episodes.
    pub episodes: usize,
    /// Decision slots per episode.
    pub slots_per_episode: usize,
    /// Fresh scenarios evaluated after training.
    pub eval_scenarios: usize,
    /// Reward ceiling granted when the system delay meets the soft target.
    pub delta1: f64,
    /// Share one Q-network (with a user one-hot input) across all users.
    pub shared_dua: bool,
    /// Enable delayed policy updates and target-action smoothing for TD3.
    pub canonical_td3: bool,
    /// Aggregate dueling heads as V + A without the mean-advantage shift.
    pub dueling_paper_literal: bool,
    /// Refuse port-selection action spaces larger than this.
    pub action_cap: usize,
    /// Price factor decode: lambda = exp(lambda_scale * raw).
    pub lambda_scale: f64,
}

impl Default for DrlConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 128, 64],
            learning_rate: 1e-4,
            discount: 0.8,
            grad_clip: 0.25,
            tau: 0.005,
            replay_capacity: 10_000,
            batch_size: 64,
            eps_start: 1.0,
            eps_end: 0.02,
            eps_decay_epochs: 800,
            noise_start: 0.2,
            noise_end: 0.02,
            episodes: 300,
            slots_per_episode: 10,
            eval_scenarios: 4,
            delta1: 100.0,
            shared_dua: true,
            canonical_td3: false,
            dueling_paper_literal: false,
            action_cap: 4096,
            lambda_scale: std::f64::consts::LN_10 * 3.0,
        }
    }
}

/// All physical and algorithmic constants of one simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Users N, one FA receiver each.
    pub n_users: usize,
    /// Candidate ports M on each FA aperture.
    pub n_ports: usize,
    /// Radiating elements N_p switched among the ports.
    pub n_elements: usize,
    /// Aperture length W in wavelengths; physical length is `fa_length * wavelength`.
    pub fa_length: f64,
    /// Carrier wavelength, metres.
    pub wavelength: f64,
    /// Bandwidth, Hz.
    pub bandwidth: f64,
    /// Noise power at the receiver, dBm (converted once at parse time).
    pub noise_dbm: f64,
    /// Noise power, watts. Derived; not read from files.
    #[serde(skip)]
    pub noise_power: f64,
    /// Per-user transmit power cap, dBm (converted once at parse time).
    pub p_max_dbm: f64,
    /// Per-user transmit power cap, watts. Derived; not read from files.
    #[serde(skip)]
    pub p_max: f64,
    /// Local CPU capacity per user, cycles/s.
    pub local_cpu: f64,
    /// MEC server capacity, cycles/s.
    pub mec_cpu: f64,
    /// Task size per user, bits.
    pub task_bits: f64,
    /// Base-station height, metres.
    pub bs_height: f64,
    /// Users are dropped uniformly in an annulus of this outer radius, metres.
    pub cell_radius: f64,
    /// Inner radius of the user annulus, metres.
    pub min_user_distance: f64,
    /// Propagation paths per user channel.
    pub n_paths: usize,
    /// Path-loss exponent; large-scale amplitude is distance^(-exponent/2).
    pub pathloss_exponent: f64,
    /// SINR interference convention.
    pub sinr_convention: SinrConvention,
    /// Master seed for every randomized stage.
    pub seed: u64,
    pub game: GameConfig,
    pub estimator: EstimatorConfig,
    pub drl: DrlConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let noise_dbm = -84.0;
        let p_max_dbm = 17.0;
        Self {
            n_users: 3,
            n_ports: 32,
            n_elements: 4,
            fa_length: 16.0,
            wavelength: 0.1,
            bandwidth: 1e9,
            noise_dbm,
            noise_power: dbm_to_watts(noise_dbm),
            p_max_dbm,
            p_max: dbm_to_watts(p_max_dbm),
            local_cpu: 1e6,
            mec_cpu: 1e8,
            task_bits: 1e6,
            bs_height: 15.0,
            cell_radius: 100.0,
            min_user_distance: 5.0,
            n_paths: 3,
            pathloss_exponent: 2.7,
            sinr_convention: SinrConvention::Printed,
            seed: 0,
            game: GameConfig::default(),
            estimator: EstimatorConfig::default(),
            drl: DrlConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Spacing between adjacent candidate ports, metres.
    pub fn port_spacing(&self) -> f64 {
        self.fa_length * self.wavelength / (self.n_ports - 1) as f64
    }

    /// Physical aperture length, metres.
    pub fn aperture_length(&self) -> f64 {
        self.fa_length * self.wavelength
    }

    /// Recompute the derived linear-watt fields from the dBm originals.
    pub fn refresh_derived(&mut self) {
        self.noise_power = dbm_to_watts(self.noise_dbm);
        self.p_max = dbm_to_watts(self.p_max_dbm);
    }

    /// Check every invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |name: &str, reason: &str| {
            Err(ConfigError::Invalid {
                field: format!("scenario.{name}"),
                reason: reason.to_string(),
            })
        };
        if self.n_users == 0 {
            return field("n_users", "must be at least 1");
        }
        if self.n_ports < 2 {
            return field("n_ports", "must be at least 2");
        }
        if self.n_elements == 0 {
            return field("n_elements", "must be at least 1");
        }
        if self.n_ports < self.n_elements {
            return field("n_ports", "must be >= n_elements");
        }
        if self.n_paths == 0 {
            return field("n_paths", "must be at least 1");
        }
        if !(self.fa_length > 0.0) {
            return field("fa_length", "must be positive");
        }
        if !(self.wavelength > 0.0) {
            return field("wavelength", "must be positive");
        }
        if !(self.bandwidth > 0.0) {
            return field("bandwidth", "must be positive");
        }
        if !(self.noise_power > 0.0) {
            return field("noise_dbm", "implied noise power must be positive");
        }
        if !(self.p_max > 0.0) {
            return field("p_max_dbm", "implied power cap must be positive");
        }
        if !(self.local_cpu > 0.0) {
            return field("local_cpu", "must be positive");
        }
        if !(self.mec_cpu > 0.0) {
            return field("mec_cpu", "must be positive");
        }
        if !(self.task_bits > 0.0) {
            return field("task_bits", "must be positive");
        }
        if !(self.bs_height > 0.0) {
            return field("bs_height", "must be positive");
        }
        if !(self.cell_radius > self.min_user_distance) {
            return field("cell_radius", "must exceed min_user_distance");
        }
        if !(self.pathloss_exponent > 0.0) {
            return field("pathloss_exponent", "must be positive");
        }
        if !(self.game.nu > 0.0) {
            return field("game.nu", "must be positive");
        }
        if !(self.game.price_exponent > 0.0) {
            return field("game.price_exponent", "must be positive");
        }
        if !(self.game.tolerance > 0.0) {
            return field("game.tolerance", "must be positive");
        }
        if self.game.max_iterations == 0 {
            return field("game.max_iterations", "must be at least 1");
        }
        let est = &self.estimator;
        if !(est.sampling_ratio > 0.0 && est.sampling_ratio <= 1.0) {
            return field("estimator.sampling_ratio", "must lie in (0, 1]");
        }
        if est.block_size == 0 {
            return field("estimator.block_size", "must be at least 1");
        }
        if est.n_measurements() == 0 {
            return field(
                "estimator.sampling_ratio",
                "sampling_ratio * block_size^2 rounds to zero measurements",
            );
        }
        if est.kernel_size % 2 == 0 {
            return field("estimator.kernel_size", "must be odd");
        }
        if est.feature_maps == 0 || est.res_blocks == 0 {
            return field("estimator.feature_maps", "network depth/width must be positive");
        }
        if est.batch_size == 0 {
            return field("estimator.batch_size", "must be at least 1");
        }
        if est.snapshots == 0 {
            return field("estimator.snapshots", "must be at least 1");
        }
        if !(0.0..1.0).contains(&est.temporal_coherence) {
            return field("estimator.temporal_coherence", "must lie in [0, 1)");
        }
        let drl = &self.drl;
        if drl.hidden.iter().any(|&w| w == 0) {
            return field("drl.hidden", "layer widths must be positive");
        }
        if !(drl.discount >= 0.0 && drl.discount < 1.0) {
            return field("drl.discount", "must lie in [0, 1)");
        }
        if !(drl.tau > 0.0 && drl.tau <= 1.0) {
            return field("drl.tau", "must lie in (0, 1]");
        }
        if drl.batch_size == 0 || drl.replay_capacity < drl.batch_size {
            return field("drl.replay_capacity", "must hold at least one batch");
        }
        if !(0.0..=1.0).contains(&drl.eps_start) || !(0.0..=1.0).contains(&drl.eps_end) {
            return field("drl.eps_start", "epsilon endpoints must lie in [0, 1]");
        }
        if drl.episodes == 0 || drl.slots_per_episode == 0 {
            return field("drl.episodes", "episodes and slots must be positive");
        }
        if drl.eval_scenarios == 0 {
            return field("drl.eval_scenarios", "must be at least 1");
        }
        if !(drl.delta1 > 0.0) {
            return field("drl.delta1", "must be positive");
        }
        if drl.action_cap == 0 {
            return field("drl.action_cap", "must be at least 1");
        }
        Ok(())
    }
}

/// Axis a sweep experiment varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    /// Aperture length in wavelengths; delay experiments.
    FaLength,
    /// Number of users; delay experiments.
    NUsers,
    /// Candidate-port spacing in wavelengths; estimation experiments.
    PortSpacing,
    /// Candidate-port count; estimation experiments.
    PortCount,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FaLength => write!(f, "fa_length"),
            Self::NUsers => write!(f, "n_users"),
            Self::PortSpacing => write!(f, "port_spacing"),
            Self::PortCount => write!(f, "port_count"),
        }
    }
}

/// One sweep experiment: a variable, its values, and the schemes to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub sweep_var: SweepVar,
    pub sweep_values: Vec<f64>,
    /// Scheme names; offload sweeps accept `proposed|fpa|fp|zf|maddpg|oracle`,
    /// estimation sweeps accept `ibm-ccs|ccs`.
    pub schemes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Default output directory; the CLI `--out` flag overrides it.
    pub output: Option<String>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "default".to_string(),
            sweep_var: SweepVar::FaLength,
            sweep_values: vec![16.0],
            schemes: vec!["proposed".to_string()],
            seeds: vec![0],
            output: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |name: &str, reason: &str| {
            Err(ConfigError::Invalid {
                field: format!("experiment.{name}"),
                reason: reason.to_string(),
            })
        };
        if self.name.is_empty() {
            return field("name", "must not be empty");
        }
        if self.sweep_values.is_empty() {
            return field("sweep_values", "must not be empty");
        }
        if self.schemes.is_empty() {
            return field("schemes", "must not be empty");
        }
        if self.seeds.is_empty() {
            return field("seeds", "must list at least one seed");
        }
        let estimation = matches!(self.sweep_var, SweepVar::PortSpacing | SweepVar::PortCount);
        for scheme in &self.schemes {
            let known_offload =
                matches!(scheme.as_str(), "proposed" | "fpa" | "fp" | "zf" | "maddpg" | "oracle");
            let known_estimation = matches!(scheme.as_str(), "ibm-ccs" | "ccs");
            if estimation && !known_estimation {
                return field("schemes", &format!("`{scheme}` is not an estimation scheme"));
            }
            if !estimation && !known_offload {
                return field("schemes", &format!("`{scheme}` is not an offload scheme"));
            }
        }
        for &v in &self.sweep_values {
            if !(v > 0.0) {
                return field("sweep_values", "values must be positive");
            }
        }
        Ok(())
    }
}

/// A parsed configuration file: one scenario plus one experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

/// Parse and validate a configuration from TOML text.
pub fn parse_config_str(text: &str) -> Result<Config, ConfigError> {
    let mut config: Config = toml::from_str(text)?;
    config.scenario.refresh_derived();
    config.scenario.validate()?;
    config.experiment.validate()?;
    Ok(config)
}

/// Parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

/// Serialize a configuration back to TOML. `parse_config_str(&emit_config(c))`
/// yields a config equal to `c`.
pub fn emit_config(config: &Config) -> String {
    toml::to_string_pretty(config).expect("config serialization cannot fail")
}
