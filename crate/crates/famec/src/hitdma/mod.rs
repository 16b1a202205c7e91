//! Two-layer multi-agent decision flow over the offloading environment.
//!
//! Each decision slot runs top-down: discrete user agents observe the
//! (estimated) channel grid and pick antenna position vectors; the
//! base-station agents observe the same state extended with those choices
//! and emit a raw continuous vector that decodes into a beamformer (columns
//! projected onto the unit ball), a positive price factor, and a simplex of
//! MEC shares. The price factor expands into per-user transmit powers
//! through the pricing game before the physics executes, so every executed
//! decision satisfies constraints C1-C4 by construction — the validator
//! still checks each step and the training loop counts violations.

mod env;
mod train;

pub use env::{Env, EnvError, StepOutcome};
pub use train::{
    evaluate, train, AgentSet, EpisodeStats, EvalRow, SchemeOverrides, TrainOptions,
    TrainResult, UserAgents,
};

use crate::config::ScenarioConfig;
use crate::sysmodel::{Apv, Beamformer, PortGrid};
use ndarray::Array2;
use num_complex::Complex64;

/// Reward shaping thresholds: full reward at or below `t1` seconds, linear
/// ramp to zero at `t2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub delta1: f64,
    pub t1: f64,
    pub t2: f64,
}

impl RewardParams {
    pub fn new(delta1: f64, t1: f64, t2: f64) -> Self {
        assert!(t1 < t2, "reward thresholds must satisfy t1 < t2");
        assert!(delta1 > 0.0);
        Self { delta1, t1, t2 }
    }
}

/// Piecewise reward in `[0, delta1]`, nonincreasing in the system delay and
/// exactly linear on `(t1, t2]`.
pub fn compute_reward(system_delay: f64, params: &RewardParams) -> f64 {
    if system_delay <= params.t1 {
        params.delta1
    } else if system_delay <= params.t2 {
        params.delta1 * (params.t2 - system_delay) / (params.t2 - params.t1)
    } else {
        0.0
    }
}

/// All valid antenna position vectors, lexicographically ordered: every
/// `n_elements`-subset of the port grid whose selected ports keep at least
/// half a wavelength between neighbors.
pub fn enumerate_apv_actions(
    cfg: &ScenarioConfig,
    grid: &PortGrid,
) -> Result<Vec<Apv>, EnvError> {
    let cap = cfg.drl.action_cap;
    let mut actions = Vec::new();
    let mut stack = Vec::with_capacity(cfg.n_elements);
    enumerate_rec(cfg, grid, 0, &mut stack, &mut actions, cap)?;
    if actions.is_empty() {
        return Err(EnvError::NoValidPlacement);
    }
    Ok(actions)
}

fn enumerate_rec(
    cfg: &ScenarioConfig,
    grid: &PortGrid,
    start: usize,
    stack: &mut Vec<usize>,
    out: &mut Vec<Apv>,
    cap: usize,
) -> Result<(), EnvError> {
    if stack.len() == cfg.n_elements {
        if out.len() >= cap {
            return Err(EnvError::ActionSpaceTooLarge { cap });
        }
        out.push(Apv::from_checked(stack.clone()));
        return Ok(());
    }
    let min_gap = cfg.wavelength / 2.0 * (1.0 - 1e-9);
    for port in start..grid.len() {
        if let Some(&prev) = stack.last() {
            if grid.position(port) - grid.position(prev) < min_gap {
                continue;
            }
        }
        // Prune: not enough ports left to finish.
        if grid.len() - port < cfg.n_elements - stack.len() {
            break;
        }
        stack.push(port);
        enumerate_rec(cfg, grid, port + 1, stack, out, cap)?;
        stack.pop();
    }
    Ok(())
}

/// Decode a raw base-station action in `[-1, 1]^dim` into the constrained
/// control variables. The layout is `[Re W | Im W | lambda | shares]` with
/// `dim = 2 * n_elements * n_users + 1 + n_users`.
///
/// Beamformer columns above unit norm are projected onto the unit ball
/// (C2); the price factor decodes through `exp` so it is always positive
/// (C3'); the shares pass through a softmax so they are positive and sum to
/// one, making C4 tight.
pub fn map_bs_action(
    raw: &[f64],
    cfg: &ScenarioConfig,
) -> (Beamformer, f64, Vec<f64>) {
    let n = cfg.n_users;
    let np = cfg.n_elements;
    assert_eq!(raw.len(), bs_action_dim(cfg), "raw action dimension");

    let mut weights = Array2::from_elem((np, n), Complex64::new(0.0, 0.0));
    for user in 0..n {
        let mut norm_sq = 0.0;
        for e in 0..np {
            let re = raw[user * np + e];
            let im = raw[n * np + user * np + e];
            weights[(e, user)] = Complex64::new(re, im);
            norm_sq += re * re + im * im;
        }
        if norm_sq < 1e-18 {
            // A numerically dead column would zero both signal and noise
            // terms; replace it with the uniform unit-norm column.
            let v = (1.0 / np as f64).sqrt();
            for e in 0..np {
                weights[(e, user)] = Complex64::new(v, 0.0);
            }
        } else if norm_sq > 1.0 {
            let scale = 1.0 / norm_sq.sqrt();
            for e in 0..np {
                weights[(e, user)] *= scale;
            }
        }
    }

    let lambda = (cfg.drl.lambda_scale * raw[2 * np * n]).exp();

    let share_raw = &raw[2 * np * n + 1..];
    let max = share_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = share_raw.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let shares = exps.into_iter().map(|e| e / total).collect();

    (Beamformer::new(weights), lambda, shares)
}

/// Raw action dimension consumed by [`map_bs_action`].
pub fn bs_action_dim(cfg: &ScenarioConfig) -> usize {
    2 * cfg.n_elements * cfg.n_users + 1 + cfg.n_users
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> ScenarioConfig {
        parse_config_str("").unwrap().scenario
    }

    #[test]
    fn reward_branches() {
        let p = RewardParams::new(100.0, 1.0, 2.0);
        assert_eq!(compute_reward(0.5, &p), 100.0);
        assert_eq!(compute_reward(1.5, &p), 50.0);
        assert_eq!(compute_reward(2.5, &p), 0.0);
        // Continuity at the knees.
        assert_relative_eq!(compute_reward(1.0, &p), 100.0);
        assert_relative_eq!(compute_reward(2.0, &p), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn reward_is_bounded_and_nonincreasing(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let p = RewardParams::new(100.0, 1.0, 2.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r_lo = compute_reward(lo, &p);
            let r_hi = compute_reward(hi, &p);
            prop_assert!((0.0..=100.0).contains(&r_lo));
            prop_assert!(r_hi <= r_lo + 1e-12);
        }
    }

    #[test]
    fn apv_enumeration_counts() {
        // M = 4 single-element: 4 actions.
        let mut c = cfg();
        c.n_ports = 4;
        c.n_elements = 1;
        c.fa_length = 1.5; // spacing 0.05 m = l/2
        let grid = PortGrid::from_config(&c);
        assert_eq!(enumerate_apv_actions(&c, &grid).unwrap().len(), 4);

        // M = 4, pairs, spacing exactly l/2: all C(4,2) = 6 remain.
        c.n_elements = 2;
        let actions = enumerate_apv_actions(&c, &grid).unwrap();
        assert_eq!(actions.len(), 6);
        // Lexicographic and stable.
        assert_eq!(actions[0].ports(), &[0, 1]);
        assert_eq!(actions[5].ports(), &[2, 3]);
    }

    /// Brute-force filter oracle: spacing l/4 with pairs keeps only index
    /// gaps of at least 2.
    #[test]
    fn apv_enumeration_matches_brute_force_filter() {
        let mut c = cfg();
        c.n_ports = 4;
        c.n_elements = 2;
        c.fa_length = 0.75; // spacing 0.025 m = l/4
        let grid = PortGrid::from_config(&c);
        let actions = enumerate_apv_actions(&c, &grid).unwrap();
        let got: Vec<&[usize]> = actions.iter().map(|a| a.ports()).collect();
        assert_eq!(got, vec![&[0usize, 2][..], &[0, 3], &[1, 3]]);

        // Independent filter over all pairs.
        let mut expected = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                if grid.position(j) - grid.position(i) >= c.wavelength / 2.0 * (1.0 - 1e-9) {
                    expected.push(vec![i, j]);
                }
            }
        }
        assert_eq!(actions.len(), expected.len());
    }

    #[test]
    fn oversized_action_space_is_rejected_with_guidance() {
        let mut c = cfg();
        c.n_ports = 32;
        c.n_elements = 4;
        c.drl.action_cap = 100;
        let grid = PortGrid::from_config(&c);
        let err = enumerate_apv_actions(&c, &grid).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("n_elements") || msg.contains("ports"), "got: {msg}");
    }

    #[test]
    fn action_decode_projects_and_anchors() {
        let c = cfg();
        let dim = bs_action_dim(&c);
        let mut raw = vec![0.0; dim];
        // A beamformer column of norm 2 projects to norm 1.
        for e in 0..c.n_elements {
            raw[e] = 1.0; // user 0 real entries -> norm 2 for N_p = 4
        }
        let (w, lambda, shares) = map_bs_action(&raw, &c);
        assert_relative_eq!(w.column_norm_sq(0), 1.0, epsilon = 1e-12);
        // lambda anchor at raw 0.
        assert_relative_eq!(lambda, 1.0, epsilon = 1e-12);
        // equal share logits -> 1/N each.
        for s in &shares {
            assert_relative_eq!(*s, 1.0 / c.n_users as f64, epsilon = 1e-12);
        }
        let total: f64 = shares.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    proptest! {
        /// The decode is total: any raw vector in the box yields a feasible
        /// beamformer/price/share triple.
        #[test]
        fn action_decode_is_total(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let c = cfg();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..bs_action_dim(&c)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (w, lambda, shares) = map_bs_action(&raw, &c);
            for u in 0..c.n_users {
                prop_assert!(w.column_norm_sq(u) <= 1.0 + 1e-9);
            }
            prop_assert!(lambda > 0.0);
            let total: f64 = shares.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(shares.iter().all(|&s| s > 0.0));
        }
    }
}
