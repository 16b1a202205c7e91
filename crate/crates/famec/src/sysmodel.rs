//! Ground-truth physics of the fluid-antenna uplink.
//!
//! A base station carries one linear fluid-antenna receiver per user. Each
//! receiver switches `n_elements` radiating elements among `n_ports`
//! candidate positions spread over an aperture of `fa_length` wavelengths.
//! The per-user channel over the full candidate grid is synthesized as a sum
//! of plane-wave paths,
//!
//! ```text
//! g_n(d) = sum_p  gain_{n,p} * exp(j * (2*pi/l) * d * cos(aoa_{n,p}))
//! ```
//!
//! with complex Gaussian path gains scaled so the expected per-port power is
//! one. Selecting an antenna position vector (APV) restricts the grid to the
//! chosen ports; multiplying by the large-scale amplitude `rho_n` yields the
//! uplink channel vector. SINR, offloading rate, and the min/max delay model
//! follow from there. Everything here is a pure function over immutable
//! inputs; RNG state is always passed explicitly.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{ScenarioConfig, SinrConvention};

/// Spacing tolerance: element separations may undershoot l/2 by this factor
/// before counting as a violation, absorbing grid rounding.
const SPACING_SLACK: f64 = 1.0 - 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("APV port index {index} out of range for a {n_ports}-port grid")]
    PortOutOfRange { index: usize, n_ports: usize },
    #[error("APV port indices must be strictly increasing")]
    PortsNotIncreasing,
    #[error("APV ports closer than half a wavelength: {left} and {right}")]
    PortsTooClose { left: usize, right: usize },
    #[error("channel synthesis requires at least one propagation path")]
    NoPaths,
    #[error("SINR denominator is zero for user {user} (no interference and no noise)")]
    ZeroDenominator { user: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// The M candidate port positions of one aperture, metres, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PortGrid {
    positions: Vec<f64>,
}

impl PortGrid {
    /// Uniform grid over `[0, fa_length * wavelength]`.
    pub fn new(n_ports: usize, fa_length: f64, wavelength: f64) -> Self {
        assert!(n_ports >= 2, "a port grid needs at least two ports");
        let aperture = fa_length * wavelength;
        let step = aperture / (n_ports - 1) as f64;
        let positions = (0..n_ports)
            .map(|i| if i + 1 == n_ports { aperture } else { i as f64 * step })
            .collect();
        Self { positions }
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self::new(cfg.n_ports, cfg.fa_length, cfg.wavelength)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, index: usize) -> f64 {
        self.positions[index]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Distance between adjacent ports.
    pub fn spacing(&self) -> f64 {
        self.positions[1] - self.positions[0]
    }
}

/// Antenna position vector: the ports occupied by one receiver's elements.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Apv {
    ports: Vec<usize>,
}

impl Apv {
    /// Validates index range, strict ordering, and the half-wavelength
    /// element separation rule against the given grid.
    pub fn new(ports: Vec<usize>, grid: &PortGrid, wavelength: f64) -> Result<Self, ModelError> {
        for &p in &ports {
            if p >= grid.len() {
                return Err(ModelError::PortOutOfRange { index: p, n_ports: grid.len() });
            }
        }
        for pair in ports.windows(2) {
            if pair[1] <= pair[0] {
                return Err(ModelError::PortsNotIncreasing);
            }
            let gap = grid.position(pair[1]) - grid.position(pair[0]);
            if gap < wavelength / 2.0 * SPACING_SLACK {
                return Err(ModelError::PortsTooClose { left: pair[0], right: pair[1] });
            }
        }
        Ok(Self { ports })
    }

    /// Construct without validation; for enumeration code that has already
    /// established the invariants.
    pub(crate) fn from_checked(ports: Vec<usize>) -> Self {
        Self { ports }
    }

    pub fn ports(&self) -> &[usize] {
        &self.ports
    }

    pub fn len(&self) -> usize {
        self.ports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ports.is_empty()
    }

    /// Physical element positions on the given grid.
    pub fn positions(&self, grid: &PortGrid) -> Vec<f64> {
        self.ports.iter().map(|&p| grid.position(p)).collect()
    }
}

/// One drawn channel state: large-scale amplitudes, path parameters, and the
/// small-scale gains evaluated on every candidate port.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Large-scale amplitude per user.
    pub rho: Vec<f64>,
    /// Angle of arrival per user and path, radians in [0, pi).
    pub aoa: Vec<Vec<f64>>,
    /// Complex path gains per user and path.
    pub path_gains: Vec<Vec<Complex64>>,
    /// N x M small-scale gains over the full candidate grid (paths folded in).
    pub small_scale_grid: Array2<Complex64>,
    /// Ground-plane user coordinates, metres, base station at the origin.
    pub user_positions: Vec<[f64; 2]>,
}

impl ChannelRealization {
    pub fn n_users(&self) -> usize {
        self.small_scale_grid.nrows()
    }

    pub fn n_ports(&self) -> usize {
        self.small_scale_grid.ncols()
    }
}

/// Receive beamforming matrix; column n serves user n.
#[derive(Debug, Clone)]
pub struct Beamformer {
    /// N_p x N complex matrix.
    pub weights: Array2<Complex64>,
}

impl Beamformer {
    pub fn new(weights: Array2<Complex64>) -> Self {
        Self { weights }
    }

    pub fn n_users(&self) -> usize {
        self.weights.ncols()
    }

    pub fn column(&self, n: usize) -> Vec<Complex64> {
        self.weights.column(n).to_vec()
    }

    /// Squared Euclidean norm of column n.
    pub fn column_norm_sq(&self, n: usize) -> f64 {
        self.weights.column(n).iter().map(|w| w.norm_sqr()).sum()
    }
}

/// How transmit powers are specified in a control decision.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerPolicy {
    /// A single positive price factor, expanded to powers by the pricing game.
    PriceFactor(f64),
    /// Explicit per-user powers, watts.
    Explicit(Vec<f64>),
}

/// The joint control action: port selections, beamformer, power policy, and
/// MEC share vector.
#[derive(Debug, Clone)]
pub struct ControlDecision {
    pub apvs: Vec<Apv>,
    pub beamformer: Beamformer,
    pub power: PowerPolicy,
    pub mec_shares: Vec<f64>,
}

/// A single constraint violation, tagged with the constraint label and the
/// offending user where applicable.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// C1: APV invalid (port range, ordering, or element spacing).
    PortPlacement { user: usize, detail: String },
    /// C2: beamforming column norm above one.
    BeamformerNorm { user: usize, norm_sq: f64 },
    /// C3: transmit power above the cap (or non-positive price factor).
    PowerLimit { user: usize, power: f64 },
    /// C3': price factor must be positive.
    PriceFactorSign { lambda: f64 },
    /// C4: MEC shares exceed the server capacity or leave [0, 1].
    MecAllocation { detail: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::PortPlacement { user, detail } => {
                write!(f, "C1 @ user {user}: {detail}")
            }
            Violation::BeamformerNorm { user, norm_sq } => {
                write!(f, "C2 @ user {user}: ||w||^2 = {norm_sq}")
            }
            Violation::PowerLimit { user, power } => {
                write!(f, "C3 @ user {user}: p = {power}")
            }
            Violation::PriceFactorSign { lambda } => write!(f, "C3' : lambda = {lambda}"),
            Violation::MecAllocation { detail } => write!(f, "C4: {detail}"),
        }
    }
}

/// Per-user delay breakdown and the system (max) delay.
///
/// `t_tx` and `t_exe` are `None` when the corresponding route is unreachable
/// (zero rate or zero MEC share); `t_total` is always finite because local
/// execution bounds it.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub t_local: Vec<f64>,
    pub t_tx: Vec<Option<f64>>,
    pub t_exe: Vec<Option<f64>>,
    pub t_total: Vec<f64>,
    pub system_delay: f64,
}

/// Phase profile of a plane wave at angle `theta` sampled at the given
/// element positions: entry k is `exp(j * 2*pi/wavelength * d_k * cos(theta))`.
pub fn field_response(positions: &[f64], theta: f64, wavelength: f64) -> Vec<Complex64> {
    let wavenumber = 2.0 * std::f64::consts::PI / wavelength;
    positions
        .iter()
        .map(|&d| Complex64::from_polar(1.0, wavenumber * d * theta.cos()))
        .collect()
}

/// Large-scale amplitude from a log-distance power law over the 3-D
/// separation between a ground-plane user and the elevated base station.
pub fn path_loss_amplitude(user_pos: [f64; 2], bs_height: f64, exponent: f64) -> f64 {
    let d_sq = user_pos[0] * user_pos[0] + user_pos[1] * user_pos[1] + bs_height * bs_height;
    d_sq.sqrt().powf(-exponent / 2.0)
}

/// Draw a full channel realization: user positions, path parameters, and the
/// small-scale grid. Deterministic for a fixed RNG state.
pub fn synthesize_channel<R: Rng>(
    cfg: &ScenarioConfig,
    grid: &PortGrid,
    rng: &mut R,
) -> Result<ChannelRealization, ModelError> {
    let positions = draw_user_positions(cfg, rng);
    synthesize_with_positions(cfg, grid, &positions, rng)
}

/// Draw user drop points uniformly over the configured annulus.
pub fn draw_user_positions<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<[f64; 2]> {
    (0..cfg.n_users)
        .map(|_| {
            // Uniform over the annulus area via inverse-CDF on r^2.
            let r_min_sq = cfg.min_user_distance * cfg.min_user_distance;
            let r_max_sq = cfg.cell_radius * cfg.cell_radius;
            let r = (r_min_sq + rng.gen::<f64>() * (r_max_sq - r_min_sq)).sqrt();
            let angle = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            [r * angle.cos(), r * angle.sin()]
        })
        .collect()
}

/// Redraw small-scale fading for fixed user positions.
pub fn synthesize_with_positions<R: Rng>(
    cfg: &ScenarioConfig,
    grid: &PortGrid,
    user_positions: &[[f64; 2]],
    rng: &mut R,
) -> Result<ChannelRealization, ModelError> {
    if cfg.n_paths == 0 {
        return Err(ModelError::NoPaths);
    }
    let n = user_positions.len();
    let m = grid.len();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // Per-path gain variance 1/L keeps the expected per-port power at one.
    let gain_scale = (1.0 / (2.0 * cfg.n_paths as f64)).sqrt();

    let mut rho = Vec::with_capacity(n);
    let mut aoa = Vec::with_capacity(n);
    let mut path_gains = Vec::with_capacity(n);
    let mut grid_gains = Array2::zeros((n, m));

    for (u, &pos) in user_positions.iter().enumerate() {
        rho.push(path_loss_amplitude(pos, cfg.bs_height, cfg.pathloss_exponent));
        let angles: Vec<f64> = (0..cfg.n_paths)
            .map(|_| rng.gen::<f64>() * std::f64::consts::PI)
            .collect();
        let gains: Vec<Complex64> = (0..cfg.n_paths)
            .map(|_| {
                Complex64::new(
                    normal.sample(rng) * gain_scale,
                    normal.sample(rng) * gain_scale,
                )
            })
            .collect();
        for (port, &d) in grid.positions().iter().enumerate() {
            let mut sum = Complex64::new(0.0, 0.0);
            for (path, &theta) in angles.iter().enumerate() {
                let phase = 2.0 * std::f64::consts::PI / cfg.wavelength * d * theta.cos();
                sum += gains[path] * Complex64::from_polar(1.0, phase);
            }
            grid_gains[(u, port)] = sum;
        }
        aoa.push(angles);
        path_gains.push(gains);
    }

    Ok(ChannelRealization {
        rho,
        aoa,
        path_gains,
        small_scale_grid: grid_gains,
        user_positions: user_positions.to_vec(),
    })
}

/// Synthesize a temporally correlated snapshot sequence: one user drop and
/// one set of path angles, with the complex path gains evolving as an AR(1)
/// process of the given coherence. Consecutive snapshots then vary smoothly,
/// which is what gives the stacked channel images their compressible
/// structure.
pub fn synthesize_sequence<R: Rng>(
    cfg: &ScenarioConfig,
    grid: &PortGrid,
    length: usize,
    coherence: f64,
    rng: &mut R,
) -> Result<Vec<ChannelRealization>, ModelError> {
    assert!((0.0..1.0).contains(&coherence), "coherence must lie in [0, 1)");
    let mut current = synthesize_channel(cfg, grid, rng)?;
    let mut out = Vec::with_capacity(length);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gain_scale = (1.0 / (2.0 * cfg.n_paths as f64)).sqrt();
    let innovation = (1.0 - coherence * coherence).sqrt();
    out.push(current.clone());
    for _ in 1..length {
        for u in 0..current.n_users() {
            for gain in &mut current.path_gains[u] {
                let eps = Complex64::new(
                    normal.sample(rng) * gain_scale,
                    normal.sample(rng) * gain_scale,
                );
                *gain = *gain * coherence + eps * innovation;
            }
            for (port, &d) in grid.positions().iter().enumerate() {
                let mut sum = Complex64::new(0.0, 0.0);
                for (path, &theta) in current.aoa[u].iter().enumerate() {
                    let phase = 2.0 * std::f64::consts::PI / cfg.wavelength * d * theta.cos();
                    sum += current.path_gains[u][path] * Complex64::from_polar(1.0, phase);
                }
                current.small_scale_grid[(u, port)] = sum;
            }
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// Uplink channel for user `n` on the selected ports: `rho_n * g_n[apv]`.
/// The per-path phase profiles are already folded into the grid.
pub fn build_channel(
    realization: &ChannelRealization,
    user: usize,
    apv: &Apv,
) -> Result<Vec<Complex64>, ModelError> {
    let m = realization.n_ports();
    let mut out = Vec::with_capacity(apv.len());
    for &port in apv.ports() {
        if port >= m {
            return Err(ModelError::PortOutOfRange { index: port, n_ports: m });
        }
        out.push(realization.small_scale_grid[(user, port)] * realization.rho[user]);
    }
    Ok(out)
}

/// Single-path channel form: `rho * g ⊙ alpha` with an explicit phase
/// profile. `build_channel` is this with `alpha` folded into the grid.
pub fn channel_from_parts(
    rho: f64,
    small_scale: &[Complex64],
    phase_profile: &[Complex64],
) -> Result<Vec<Complex64>, ModelError> {
    if small_scale.len() != phase_profile.len() {
        return Err(ModelError::Dimension(format!(
            "small-scale length {} != phase profile length {}",
            small_scale.len(),
            phase_profile.len()
        )));
    }
    Ok(small_scale
        .iter()
        .zip(phase_profile)
        .map(|(&g, &a)| g * a * rho)
        .collect())
}

/// `|w^H h|^2` for one beamformer column and one channel vector.
pub fn effective_gain(w: &[Complex64], h: &[Complex64]) -> f64 {
    let inner: Complex64 = w.iter().zip(h).map(|(&wi, &hi)| wi.conj() * hi).sum();
    inner.norm_sqr()
}

/// Per-user SINR for the stacked channel matrix `channels` (column n is user
/// n's channel on its selected ports).
pub fn compute_sinr(
    beamformer: &Beamformer,
    channels: &Array2<Complex64>,
    powers: &[f64],
    noise_power: f64,
    convention: SinrConvention,
) -> Result<Vec<f64>, ModelError> {
    let n = beamformer.n_users();
    if channels.ncols() != n || powers.len() != n || channels.nrows() != beamformer.weights.nrows()
    {
        return Err(ModelError::Dimension(format!(
            "beamformer {}x{}, channels {}x{}, {} powers",
            beamformer.weights.nrows(),
            n,
            channels.nrows(),
            channels.ncols(),
            powers.len()
        )));
    }
    // Own-signal gains |w_k^H h_k|^2 are shared by both conventions.
    let own_gain: Vec<f64> = (0..n)
        .map(|k| {
            let w = beamformer.column(k);
            let h = channels.column(k).to_vec();
            effective_gain(&w, &h)
        })
        .collect();

    let mut sinr = Vec::with_capacity(n);
    for u in 0..n {
        let interference: f64 = match convention {
            SinrConvention::Printed => (0..n)
                .filter(|&k| k != u)
                .map(|k| own_gain[k] * powers[k])
                .sum(),
            SinrConvention::Conventional => {
                let w = beamformer.column(u);
                (0..n)
                    .filter(|&k| k != u)
                    .map(|k| {
                        let h = channels.column(k).to_vec();
                        effective_gain(&w, &h) * powers[k]
                    })
                    .sum()
            }
        };
        let denom = interference + beamformer.column_norm_sq(u) * noise_power;
        if denom <= 0.0 {
            return Err(ModelError::ZeroDenominator { user: u });
        }
        sinr.push(own_gain[u] * powers[u] / denom);
    }
    Ok(sinr)
}

/// Shannon offloading rate, bits/s.
pub fn compute_rate(bandwidth: f64, sinr: f64) -> f64 {
    bandwidth * (1.0 + sinr).log2()
}

/// Delay model: offloading takes transmission plus MEC execution, and each
/// user falls back to local execution whenever that is faster, so the total
/// is always finite.
pub fn compute_delays(
    cfg: &ScenarioConfig,
    sinr: &[f64],
    rates: &[f64],
    mec_shares: &[f64],
) -> DelayReport {
    let n = rates.len();
    let mut t_local = Vec::with_capacity(n);
    let mut t_tx = Vec::with_capacity(n);
    let mut t_exe = Vec::with_capacity(n);
    let mut t_total = Vec::with_capacity(n);
    for u in 0..n {
        let local = cfg.task_bits / cfg.local_cpu;
        let tx = (rates[u] > 0.0).then(|| cfg.task_bits / rates[u]);
        let exe = (mec_shares[u] > 0.0).then(|| cfg.task_bits / (mec_shares[u] * cfg.mec_cpu));
        let total = match (tx, exe) {
            (Some(t), Some(e)) => (t + e).min(local),
            _ => local,
        };
        t_local.push(local);
        t_tx.push(tx);
        t_exe.push(exe);
        t_total.push(total);
    }
    let system_delay = t_total.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    DelayReport {
        sinr: sinr.to_vec(),
        rate: rates.to_vec(),
        t_local,
        t_tx,
        t_exe,
        t_total,
        system_delay,
    }
}

/// Check constraints C1-C4 (and C3' for price-factor decisions), returning
/// one entry per violation. An empty list means the decision is feasible.
pub fn validate_constraints(
    decision: &ControlDecision,
    cfg: &ScenarioConfig,
    grid: &PortGrid,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    // C1: port placement.
    for (user, apv) in decision.apvs.iter().enumerate() {
        if apv.len() != cfg.n_elements {
            violations.push(Violation::PortPlacement {
                user,
                detail: format!("{} ports selected, expected {}", apv.len(), cfg.n_elements),
            });
            continue;
        }
        if let Err(e) = Apv::new(apv.ports().to_vec(), grid, cfg.wavelength) {
            violations.push(Violation::PortPlacement { user, detail: e.to_string() });
        }
    }
    // C2: unit-ball beamforming columns. tr(w w^H) = ||w||^2.
    for user in 0..decision.beamformer.n_users() {
        let norm_sq = decision.beamformer.column_norm_sq(user);
        if norm_sq > 1.0 + 1e-9 {
            violations.push(Violation::BeamformerNorm { user, norm_sq });
        }
    }
    // C3 / C3': power policy.
    match &decision.power {
        PowerPolicy::PriceFactor(lambda) => {
            if !(*lambda > 0.0) {
                violations.push(Violation::PriceFactorSign { lambda: *lambda });
            }
        }
        PowerPolicy::Explicit(powers) => {
            for (user, &p) in powers.iter().enumerate() {
                if p > cfg.p_max * (1.0 + 1e-9) || p < 0.0 {
                    violations.push(Violation::PowerLimit { user, power: p });
                }
            }
        }
    }
    // C4: MEC shares.
    let sum: f64 = decision.mec_shares.iter().sum();
    if decision.mec_shares.iter().any(|&b| !(0.0..=1.0 + 1e-9).contains(&b)) {
        violations.push(Violation::MecAllocation {
            detail: "a share lies outside [0, 1]".to_string(),
        });
    } else if sum > 1.0 + 1e-9 {
        violations.push(Violation::MecAllocation { detail: format!("shares sum to {sum}") });
    }
    violations
}
