//! The decision-slot environment: state construction and physics execution.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{CsiMode, ScenarioConfig};
use crate::csnet::{estimate_channel, CsError, EstimatorBundle};
use crate::game::{self, GameError};
use crate::sysmodel::{
    build_channel, compute_delays, compute_rate, compute_sinr, draw_user_positions,
    synthesize_with_positions, validate_constraints, Apv, ChannelRealization, ControlDecision,
    DelayReport, ModelError, PortGrid, PowerPolicy, Violation,
};

use super::RewardParams;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(
        "the port-selection action space exceeds the cap of {cap}; \
         reduce n_elements or n_ports (or raise drl.action_cap)"
    )]
    ActionSpaceTooLarge { cap: usize },
    #[error("no antenna placement satisfies the half-wavelength spacing rule")]
    NoValidPlacement,
    #[error("decision rejected, {} constraint violation(s): {}", .0.len(), format_violations(.0))]
    Rejected(Vec<Violation>),
    #[error("training diverged with a non-finite loss at episode {episode}")]
    Diverged { episode: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("channel estimation failed: {0}")]
    Estimation(#[from] CsError),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Result of executing one decision slot.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub report: DelayReport,
    pub reward: f64,
    /// Powers actually transmitted (after any price-factor expansion).
    pub powers: Vec<f64>,
    /// Price-game iterations, when the decision carried a price factor.
    pub game_iterations: Option<usize>,
}

/// Offloading environment over one scenario configuration. Episodes fix the
/// user drop; every slot redraws small-scale fading. All randomness comes
/// from the internal seeded stream, so trajectories are reproducible.
pub struct Env {
    pub cfg: ScenarioConfig,
    pub grid: PortGrid,
    csi: CsiMode,
    bundle: Option<EstimatorBundle>,
    rng: ChaCha8Rng,
    positions: Vec<[f64; 2]>,
    realization: ChannelRealization,
    observed_grid: Array2<Complex64>,
    prev_delays: Vec<f64>,
    violation_count: u64,
    steps: u64,
}

impl Env {
    pub fn new(
        cfg: &ScenarioConfig,
        csi: CsiMode,
        bundle: Option<EstimatorBundle>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        let grid = PortGrid::from_config(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = draw_user_positions(cfg, &mut rng);
        let realization = synthesize_with_positions(cfg, &grid, &positions, &mut rng)?;
        let t_local = cfg.task_bits / cfg.local_cpu;
        let mut env = Self {
            cfg: cfg.clone(),
            grid,
            csi,
            bundle,
            rng,
            positions,
            realization,
            observed_grid: Array2::from_elem((0, 0), Complex64::new(0.0, 0.0)),
            prev_delays: vec![t_local; cfg.n_users],
            violation_count: 0,
            steps: 0,
        };
        env.refresh_observation()?;
        Ok(env)
    }

    fn refresh_observation(&mut self) -> Result<(), EnvError> {
        let (grid, _) =
            estimate_channel(&self.realization, self.bundle.as_ref(), &self.cfg, self.csi)?;
        self.observed_grid = grid;
        Ok(())
    }

    /// Redraw user positions and fading; reset delay history.
    pub fn reset_episode(&mut self) -> Result<(), EnvError> {
        self.positions = draw_user_positions(&self.cfg, &mut self.rng);
        self.realization =
            synthesize_with_positions(&self.cfg, &self.grid, &self.positions, &mut self.rng)?;
        let t_local = self.cfg.task_bits / self.cfg.local_cpu;
        self.prev_delays = vec![t_local; self.cfg.n_users];
        self.refresh_observation()
    }

    pub fn realization(&self) -> &ChannelRealization {
        &self.realization
    }

    pub fn violation_count(&self) -> u64 {
        self.violation_count
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Observation shared by all user agents: the (estimated) grid split
    /// into real/imaginary parts, normalized user positions, and the
    /// previous per-user delays scaled by the local-execution time.
    pub fn user_state(&self) -> Vec<f32> {
        let n = self.cfg.n_users;
        let m = self.cfg.n_ports;
        let t_local = self.cfg.task_bits / self.cfg.local_cpu;
        let mut state = Vec::with_capacity(2 * n * m + 3 * n);
        for u in 0..n {
            for p in 0..m {
                state.push(self.observed_grid[(u, p)].re as f32);
            }
            for p in 0..m {
                state.push(self.observed_grid[(u, p)].im as f32);
            }
        }
        for pos in &self.positions {
            state.push((pos[0] / self.cfg.cell_radius) as f32);
            state.push((pos[1] / self.cfg.cell_radius) as f32);
        }
        for &d in &self.prev_delays {
            state.push((d / t_local) as f32);
        }
        state
    }

    /// Dimension of [`Env::user_state`].
    pub fn user_state_dim(cfg: &ScenarioConfig) -> usize {
        2 * cfg.n_users * cfg.n_ports + 3 * cfg.n_users
    }

    /// Base-station observation: the user state extended with the selected
    /// ports, normalized by the grid size.
    pub fn bs_state(&self, apvs: &[Apv]) -> Vec<f32> {
        let mut state = self.user_state();
        let denom = (self.cfg.n_ports - 1).max(1) as f32;
        for apv in apvs {
            for &port in apv.ports() {
                state.push(port as f32 / denom);
            }
        }
        state
    }

    pub fn bs_state_dim(cfg: &ScenarioConfig) -> usize {
        Self::user_state_dim(cfg) + cfg.n_users * cfg.n_elements
    }

    /// Stack per-user channels on their selected ports into the
    /// `n_elements x n_users` matrix the beamformer applies to.
    pub fn channel_matrix(&self, apvs: &[Apv]) -> Result<Array2<Complex64>, EnvError> {
        let np = self.cfg.n_elements;
        let n = self.cfg.n_users;
        let mut h = Array2::from_elem((np, n), Complex64::new(0.0, 0.0));
        for (u, apv) in apvs.iter().enumerate() {
            let col = build_channel(&self.realization, u, apv)?;
            for (e, &v) in col.iter().enumerate() {
                h[(e, u)] = v;
            }
        }
        Ok(h)
    }

    /// Validate and execute a decision, then advance the fading to the next
    /// slot. Rewards come from the provided shaping parameters.
    pub fn step(
        &mut self,
        decision: &ControlDecision,
        reward_params: &RewardParams,
    ) -> Result<StepOutcome, EnvError> {
        let violations = validate_constraints(decision, &self.cfg, &self.grid);
        if !violations.is_empty() {
            self.violation_count += violations.len() as u64;
            return Err(EnvError::Rejected(violations));
        }

        let h = self.channel_matrix(&decision.apvs)?;
        let (powers, game_iterations) = match &decision.power {
            PowerPolicy::Explicit(p) => (p.clone(), None),
            PowerPolicy::PriceFactor(lambda) => {
                let result = game::powers_for_lambda(
                    *lambda,
                    &decision.beamformer,
                    &h,
                    self.cfg.noise_power,
                    self.cfg.p_max,
                    &self.cfg.game,
                )?;
                (result.powers, Some(result.iterations))
            }
        };
        debug_assert!(powers.iter().all(|&p| (0.0..=self.cfg.p_max * (1.0 + 1e-9)).contains(&p)));

        let sinr = compute_sinr(
            &decision.beamformer,
            &h,
            &powers,
            self.cfg.noise_power,
            self.cfg.sinr_convention,
        )?;
        let rates: Vec<f64> =
            sinr.iter().map(|&s| compute_rate(self.cfg.bandwidth, s)).collect();
        let report = compute_delays(&self.cfg, &sinr, &rates, &decision.mec_shares);
        let reward = super::compute_reward(report.system_delay, reward_params);

        self.prev_delays = report.t_total.clone();
        self.steps += 1;
        // Next slot's fading, same user drop.
        self.realization =
            synthesize_with_positions(&self.cfg, &self.grid, &self.positions, &mut self.rng)?;
        self.refresh_observation()?;

        Ok(StepOutcome { report, reward, powers, game_iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use crate::hitdma::{bs_action_dim, enumerate_apv_actions, map_bs_action};
    use rand::Rng;

    fn desk_cfg() -> ScenarioConfig {
        let mut cfg = parse_config_str("").unwrap().scenario;
        cfg.n_users = 3;
        cfg.n_ports = 8;
        cfg.n_elements = 2;
        cfg.fa_length = 4.0;
        cfg
    }

    fn reward_params() -> RewardParams {
        RewardParams::new(100.0, 0.01, 1.0)
    }

    fn random_decision(
        env: &Env,
        actions: &[Apv],
        rng: &mut ChaCha8Rng,
    ) -> ControlDecision {
        let cfg = &env.cfg;
        let apvs: Vec<Apv> =
            (0..cfg.n_users).map(|_| actions[rng.gen_range(0..actions.len())].clone()).collect();
        let raw: Vec<f64> = (0..bs_action_dim(cfg)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (beamformer, lambda, shares) = map_bs_action(&raw, cfg);
        ControlDecision {
            apvs,
            beamformer,
            power: PowerPolicy::PriceFactor(lambda),
            mec_shares: shares,
        }
    }

    #[test]
    fn perfect_csi_observation_equals_truth() {
        let cfg = desk_cfg();
        let env = Env::new(&cfg, CsiMode::Perfect, None, 3).unwrap();
        let state = env.user_state();
        assert_eq!(state.len(), Env::user_state_dim(&cfg));
        let z = env.realization().small_scale_grid[(0, 0)];
        assert_eq!(state[0], z.re as f32);
        assert_eq!(state[cfg.n_ports], z.im as f32);
    }

    #[test]
    fn bs_state_extends_user_state() {
        let cfg = desk_cfg();
        let env = Env::new(&cfg, CsiMode::Perfect, None, 4).unwrap();
        let actions = enumerate_apv_actions(&cfg, &env.grid).unwrap();
        let apvs = vec![actions[0].clone(); cfg.n_users];
        let s_b = env.bs_state(&apvs);
        assert_eq!(s_b.len(), Env::bs_state_dim(&cfg));
        assert_eq!(s_b.len(), Env::user_state_dim(&cfg) + cfg.n_users * cfg.n_elements);
    }

    /// Fuzz sweep: states stay finite over many random episodes and steps.
    #[test]
    fn states_are_finite_over_random_rollouts() {
        let cfg = desk_cfg();
        let mut env = Env::new(&cfg, CsiMode::Perfect, None, 5).unwrap();
        let actions = enumerate_apv_actions(&cfg, &env.grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = reward_params();
        for episode in 0..40 {
            env.reset_episode().unwrap();
            for _ in 0..5 {
                let s = env.user_state();
                assert!(s.iter().all(|v| v.is_finite()), "episode {episode}");
                let d = random_decision(&env, &actions, &mut rng);
                let out = env.step(&d, &params).unwrap();
                assert!(out.report.system_delay.is_finite());
                assert!((0.0..=100.0).contains(&out.reward));
                assert!(out.powers.iter().all(|&p| (0.0..=cfg.p_max).contains(&p)));
            }
        }
        assert_eq!(env.violation_count(), 0);
    }

    #[test]
    fn reward_recomputes_from_report() {
        let cfg = desk_cfg();
        let mut env = Env::new(&cfg, CsiMode::Perfect, None, 6).unwrap();
        let actions = enumerate_apv_actions(&cfg, &env.grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = reward_params();
        let d = random_decision(&env, &actions, &mut rng);
        let out = env.step(&d, &params).unwrap();
        assert_eq!(out.reward, super::super::compute_reward(out.report.system_delay, &params));
    }

    #[test]
    fn same_seed_gives_identical_trajectories() {
        let cfg = desk_cfg();
        let run = |seed: u64| -> Vec<f64> {
            let mut env = Env::new(&cfg, CsiMode::Perfect, None, seed).unwrap();
            let actions = enumerate_apv_actions(&cfg, &env.grid).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let params = reward_params();
            let mut delays = Vec::new();
            for _ in 0..100 {
                let d = random_decision(&env, &actions, &mut rng);
                delays.push(env.step(&d, &params).unwrap().report.system_delay);
            }
            delays
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn infeasible_decision_is_rejected_with_violations() {
        let cfg = desk_cfg();
        let mut env = Env::new(&cfg, CsiMode::Perfect, None, 8).unwrap();
        let actions = enumerate_apv_actions(&cfg, &env.grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut d = random_decision(&env, &actions, &mut rng);
        d.mec_shares = vec![0.9; cfg.n_users];
        let err = env.step(&d, &reward_params()).unwrap_err();
        assert!(matches!(err, EnvError::Rejected(ref v) if !v.is_empty()));
        assert_eq!(env.violation_count(), 1);
    }

    #[test]
    fn estimated_mode_without_bundle_fails() {
        let cfg = desk_cfg();
        assert!(Env::new(&cfg, CsiMode::Estimated, None, 1).is_err());
    }
}
