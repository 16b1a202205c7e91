//! Non-cooperative power-pricing game.
//!
//! Each user maximizes a net utility `log2(1 + SINR_n(p)) - xi_n * p_n`
//! (rates here are spectral efficiencies; bandwidth cancels out of the
//! optimality condition). The stationary point gives the closed-form best
//! response
//!
//! ```text
//! p_n = 1 / (xi_n * ln 2) - (I_n + delta_n^2) / phi_n,
//! ```
//!
//! where `phi_n = |w_n^H h_n|^2`, `I_n` is the own-signal interference of
//! the other users, and `delta_n^2 = ||w_n||^2 sigma^2`. Requiring
//! `p_n in [0, p_n^(0)]` pins the price to the interval
//! `[xi_min, xi_max]`, and a single positive factor `lambda` steers every
//! user's price through
//!
//! ```text
//! Gamma_n = exp(-lambda * (phi_n * vartheta)^a),
//! xi_n    = Gamma_n * xi_max + (1 - Gamma_n) * xi_min,
//! ```
//!
//! collapsing N power variables into one scalar. Substituting back gives
//! the fixed-point power iteration implemented by [`run_power_game`]; all
//! iterates stay in `[0, p^(0)]` componentwise because `Gamma` is in (0, 1).

use thiserror::Error;

use crate::config::SinrConvention;
use crate::sysmodel::{effective_gain, Beamformer};
use ndarray::Array2;
use num_complex::Complex64;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("price factor must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("game terms must be positive: {0}")]
    InvalidTerms(String),
}

/// Per-user constants the pricing game operates on.
#[derive(Debug, Clone)]
pub struct GameTerms {
    /// Effective own-signal gains `|w_n^H h_n|^2`.
    pub phi: Vec<f64>,
    /// Interference at the initial power point, watts.
    pub interference: Vec<f64>,
    /// Effective noise `||w_n||^2 sigma^2`, watts.
    pub noise: Vec<f64>,
    /// Initial (maximum) powers, watts.
    pub p0: Vec<f64>,
    /// Gain normalizer `nu / max(phi)`.
    pub vartheta: f64,
    /// Magnitude constant used to build `vartheta`.
    pub nu: f64,
    /// Exponent applied to the normalized gain.
    pub price_exponent: f64,
}

impl GameTerms {
    /// Build terms from raw per-user constants. Interference is evaluated at
    /// the initial powers under the own-signal (printed) convention the game
    /// is derived from.
    pub fn new(
        phi: Vec<f64>,
        noise: Vec<f64>,
        p0: Vec<f64>,
        nu: f64,
        price_exponent: f64,
    ) -> Result<Self, GameError> {
        let n = phi.len();
        if noise.len() != n || p0.len() != n {
            return Err(GameError::InvalidTerms("length mismatch".to_string()));
        }
        if n == 0 {
            return Err(GameError::InvalidTerms("no users".to_string()));
        }
        for u in 0..n {
            if !(phi[u] > 0.0) || !(noise[u] > 0.0) || !(p0[u] > 0.0) {
                return Err(GameError::InvalidTerms(format!(
                    "user {u}: phi={}, noise={}, p0={}",
                    phi[u], noise[u], p0[u]
                )));
            }
        }
        if !(nu > 0.0) || !(price_exponent > 0.0) {
            return Err(GameError::InvalidTerms(format!(
                "nu={nu}, price_exponent={price_exponent}"
            )));
        }
        let max_phi = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let vartheta = nu / max_phi;
        let mut terms = Self {
            phi,
            interference: vec![0.0; n],
            noise,
            p0: p0.clone(),
            vartheta,
            nu,
            price_exponent,
        };
        terms.interference = terms.interference_at(&p0);
        Ok(terms)
    }

    /// Build terms from a beamformer and stacked per-user channels.
    pub fn from_channel(
        beamformer: &Beamformer,
        channels: &Array2<Complex64>,
        noise_power: f64,
        p0: Vec<f64>,
        nu: f64,
        price_exponent: f64,
    ) -> Result<Self, GameError> {
        let n = beamformer.n_users();
        let phi: Vec<f64> = (0..n)
            .map(|u| {
                let w = beamformer.column(u);
                let h = channels.column(u).to_vec();
                effective_gain(&w, &h)
            })
            .collect();
        let noise: Vec<f64> = (0..n).map(|u| beamformer.column_norm_sq(u) * noise_power).collect();
        Self::new(phi, noise, p0, nu, price_exponent)
    }

    pub fn n_users(&self) -> usize {
        self.phi.len()
    }

    /// Own-signal interference seen by each user at the given powers:
    /// `I_n = sum_{k != n} phi_k p_k`.
    pub fn interference_at(&self, powers: &[f64]) -> Vec<f64> {
        let total: f64 = self.phi.iter().zip(powers).map(|(&g, &p)| g * p).sum();
        (0..self.n_users()).map(|u| total - self.phi[u] * powers[u]).collect()
    }
}

/// Outcome of the power fixed point.
#[derive(Debug, Clone)]
pub struct GameResult {
    /// Converged (or best-effort) powers, watts.
    pub powers: Vec<f64>,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Whether the stop tolerance was met within the iteration cap.
    pub converged: bool,
    /// Per-user prices at the final interference state.
    pub price_factors: Vec<f64>,
}

/// Price bounds `(xi_min, xi_max)` that keep the best response inside
/// `[0, p0]` for user `n`, at the interference stored in `terms`.
pub fn price_bounds(terms: &GameTerms, n: usize) -> (f64, f64) {
    price_bounds_at(terms, n, terms.interference[n])
}

fn price_bounds_at(terms: &GameTerms, n: usize, interference: f64) -> (f64, f64) {
    let base = interference + terms.noise[n];
    let xi_max = terms.phi[n] / (LN2 * base);
    let xi_min = terms.phi[n] / (LN2 * (terms.p0[n] * terms.phi[n] + base));
    (xi_min, xi_max)
}

/// Price mixing weight `Gamma = exp(-lambda * (phi * vartheta)^a)`, strictly
/// inside (0, 1) for positive `lambda` and strictly decreasing in both
/// `lambda` and `phi`.
pub fn gamma_factor(
    lambda: f64,
    phi: f64,
    vartheta: f64,
    price_exponent: f64,
) -> Result<f64, GameError> {
    if !(lambda > 0.0) {
        return Err(GameError::NonPositiveLambda(lambda));
    }
    Ok((-lambda * (phi * vartheta).powf(price_exponent)).exp())
}

/// Price for user `n` under the scalar factor `lambda`, interpolated between
/// the bounds at the given interference.
pub fn price_for_lambda(
    terms: &GameTerms,
    n: usize,
    lambda: f64,
    interference: f64,
) -> Result<f64, GameError> {
    let gamma = gamma_factor(lambda, terms.phi[n], terms.vartheta, terms.price_exponent)?;
    let (xi_min, xi_max) = price_bounds_at(terms, n, interference);
    Ok(gamma * xi_max + (1.0 - gamma) * xi_min)
}

/// Unclamped stationary power for user `n` at price `xi`. At `xi_min` this
/// equals `p0`, at `xi_max` it equals 0; callers clamp to `[0, p0]`.
pub fn best_response_power(xi: f64, terms: &GameTerms, n: usize) -> f64 {
    1.0 / (xi * LN2) - (terms.interference[n] + terms.noise[n]) / terms.phi[n]
}

/// Net utility `log2(1 + phi p / (I + delta^2)) - xi p` of user `n`, the
/// objective whose stationary point is [`best_response_power`].
pub fn net_utility(p: f64, xi: f64, terms: &GameTerms, n: usize) -> f64 {
    let base = terms.interference[n] + terms.noise[n];
    (1.0 + terms.phi[n] * p / base).log2() - xi * p
}

/// Derivative of the net utility in `p`; zero at the interior best response.
pub fn net_utility_derivative(p: f64, xi: f64, terms: &GameTerms, n: usize) -> f64 {
    let base = terms.interference[n] + terms.noise[n];
    terms.phi[n] / (LN2 * (base + terms.phi[n] * p)) - xi
}

/// Synchronous fixed-point power iteration under the scalar price factor.
///
/// All users start from `p^(0)` and update jointly:
///
/// ```text
/// p_n <- (1 - Gamma_n) (I_n + delta_n^2) p_n^(0)
///        / (I_n + delta_n^2 + Gamma_n p_n^(0) phi_n)
/// ```
///
/// with `I_n` recomputed from the current iterate. Stops when the largest
/// componentwise change drops below `tol` or after `max_iter` sweeps; the
/// `converged` flag reports which happened.
pub fn run_power_game(
    lambda: f64,
    terms: &GameTerms,
    tol: f64,
    max_iter: usize,
) -> Result<GameResult, GameError> {
    if !(lambda > 0.0) {
        return Err(GameError::NonPositiveLambda(lambda));
    }
    let n = terms.n_users();
    let gammas: Vec<f64> = (0..n)
        .map(|u| gamma_factor(lambda, terms.phi[u], terms.vartheta, terms.price_exponent))
        .collect::<Result<_, _>>()?;

    let mut powers = terms.p0.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let interference = terms.interference_at(&powers);
        let mut max_delta: f64 = 0.0;
        let mut next = Vec::with_capacity(n);
        for u in 0..n {
            let base = interference[u] + terms.noise[u];
            let p = (1.0 - gammas[u]) * base * terms.p0[u]
                / (base + gammas[u] * terms.p0[u] * terms.phi[u]);
            // Algebraically inside [0, p0] for Gamma in (0,1); the clamp
            // only guards floating-point edge cases.
            let p = p.clamp(0.0, terms.p0[u]);
            debug_assert!(p >= 0.0 && p <= terms.p0[u]);
            max_delta = max_delta.max((p - powers[u]).abs());
            next.push(p);
        }
        powers = next;
        iterations += 1;
        if max_delta < tol {
            converged = true;
            break;
        }
    }

    let interference = terms.interference_at(&powers);
    let price_factors: Vec<f64> = (0..n)
        .map(|u| price_for_lambda(terms, u, lambda, interference[u]))
        .collect::<Result<_, _>>()?;
    Ok(GameResult { powers, iterations, converged, price_factors })
}

/// Convenience: expand a price factor into powers for a concrete channel
/// state, under the configured game constants.
pub fn powers_for_lambda(
    lambda: f64,
    beamformer: &Beamformer,
    channels: &Array2<Complex64>,
    noise_power: f64,
    p_max: f64,
    cfg: &crate::config::GameConfig,
) -> Result<GameResult, GameError> {
    let n = beamformer.n_users();
    let terms = GameTerms::from_channel(
        beamformer,
        channels,
        noise_power,
        vec![p_max; n],
        cfg.nu,
        cfg.price_exponent,
    )?;
    run_power_game(lambda, &terms, cfg.tolerance, cfg.max_iterations)
}

/// Keep `compute_sinr`'s printed convention and the game derivation aligned.
pub const GAME_SINR_CONVENTION: SinrConvention = SinrConvention::Printed;
