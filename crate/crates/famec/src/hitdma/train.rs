//! Training and inference over the two-layer agent hierarchy.
//!
//! Users act first: a dueling double-DQN (one parameter-shared network with
//! a user one-hot appended to the state, or one network per user) picks each
//! antenna position vector. The base station then observes the user state
//! extended with those choices and three TD3 agents emit the beamformer,
//! price factor, and MEC shares as slices of one raw action vector. The
//! price factor expands into powers inside the environment. Benchmark
//! schemes reuse this loop through [`SchemeOverrides`]: frozen ports (FPA),
//! frozen powers (FP), an analytic beamformer (ZF), or DDPG agents all
//! around with continuous port scores (MADDPG).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{
    argmax, select_continuous, select_discrete, D3qnAgent, EpsilonSchedule, ReplayBuffer,
    TargetRule, Td3Agent, Transition,
};
use crate::config::{CsiMode, ScenarioConfig};
use crate::csnet::EstimatorBundle;
use crate::sysmodel::{Apv, ControlDecision, PowerPolicy};
use crate::util::{mix_seed, percentile};

use super::{bs_action_dim, enumerate_apv_actions, map_bs_action, Env, EnvError, RewardParams};

/// Scheme-specific departures from the proposed algorithm.
#[derive(Debug, Clone, Default)]
pub struct SchemeOverrides {
    /// Freeze every user's ports to this placement (FPA).
    pub fixed_apv: Option<Apv>,
    /// Transmit at this fixed power, disabling the price head (FP).
    pub fixed_power: Option<f64>,
    /// Derive the beamformer analytically from the current channel,
    /// disabling the beam head (ZF).
    pub analytic_beamformer: bool,
    /// Replace every agent with DDPG: single-critic targets and continuous
    /// port scores decoded by argmax (MADDPG).
    pub maddpg: bool,
}

/// The user-side learners.
pub enum UserAgents {
    /// One network for all users, a user one-hot appended to its input.
    Shared(D3qnAgent),
    /// Independent per-user networks over the bare user state.
    PerUser(Vec<D3qnAgent>),
    /// DDPG actors emitting continuous scores over the action list.
    DdpgScores(Vec<Td3Agent>),
    /// Fixed placements; no user-side learning.
    Disabled(Vec<Apv>),
}

/// Everything trained by one run.
pub struct AgentSet {
    pub users: UserAgents,
    pub beam: Option<Td3Agent>,
    pub price: Option<Td3Agent>,
    pub mec: Option<Td3Agent>,
    pub apv_actions: Vec<Apv>,
}

impl AgentSet {
    /// Fresh agents for a configuration and scheme; the same call with the
    /// same inputs reproduces the architecture a checkpoint was saved from.
    pub fn build(
        cfg: &ScenarioConfig,
        overrides: &SchemeOverrides,
        actions: Vec<Apv>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        build_agents(cfg, overrides, actions, rng)
    }

    /// Inference snapshot of every learned network.
    pub fn to_checkpoint(&self) -> crate::io::Checkpoint {
        let mut named = Vec::new();
        match &self.users {
            UserAgents::Shared(agent) => named.extend(agent.named_params("dua.shared")),
            UserAgents::PerUser(list) => {
                for (i, agent) in list.iter().enumerate() {
                    named.extend(agent.named_params(&format!("dua.user{i}")));
                }
            }
            UserAgents::DdpgScores(list) => {
                for (i, agent) in list.iter().enumerate() {
                    named.extend(agent.named_params(&format!("dua.ddpg{i}")));
                }
            }
            UserAgents::Disabled(_) => {}
        }
        if let Some(agent) = &self.beam {
            named.extend(agent.named_params("tba.beam"));
        }
        if let Some(agent) = &self.price {
            named.extend(agent.named_params("tba.price"));
        }
        if let Some(agent) = &self.mec {
            named.extend(agent.named_params("tba.mec"));
        }
        crate::io::Checkpoint::from_named(&named)
    }

    /// Restore parameters saved by [`AgentSet::to_checkpoint`] into an
    /// architecture built with the same configuration and overrides, then
    /// realign every target network.
    pub fn load_checkpoint(
        &mut self,
        checkpoint: &crate::io::Checkpoint,
    ) -> Result<(), crate::io::IoFormatError> {
        {
            let mut named = Vec::new();
            match &mut self.users {
                UserAgents::Shared(agent) => named.extend(agent.named_params_mut("dua.shared")),
                UserAgents::PerUser(list) => {
                    for (i, agent) in list.iter_mut().enumerate() {
                        named.extend(agent.named_params_mut(&format!("dua.user{i}")));
                    }
                }
                UserAgents::DdpgScores(list) => {
                    for (i, agent) in list.iter_mut().enumerate() {
                        named.extend(agent.named_params_mut(&format!("dua.ddpg{i}")));
                    }
                }
                UserAgents::Disabled(_) => {}
            }
            if let Some(agent) = self.beam.as_mut() {
                named.extend(agent.named_params_mut("tba.beam"));
            }
            if let Some(agent) = self.price.as_mut() {
                named.extend(agent.named_params_mut("tba.price"));
            }
            if let Some(agent) = self.mec.as_mut() {
                named.extend(agent.named_params_mut("tba.mec"));
            }
            checkpoint.apply(named)?;
        }
        match &mut self.users {
            UserAgents::Shared(agent) => agent.sync_target(),
            UserAgents::PerUser(list) => list.iter_mut().for_each(|a| a.sync_target()),
            UserAgents::DdpgScores(list) => list.iter_mut().for_each(|a| a.sync_targets()),
            UserAgents::Disabled(_) => {}
        }
        if let Some(agent) = self.beam.as_mut() {
            agent.sync_targets();
        }
        if let Some(agent) = self.price.as_mut() {
            agent.sync_targets();
        }
        if let Some(agent) = self.mec.as_mut() {
            agent.sync_targets();
        }
        Ok(())
    }
}

/// Per-episode training statistics, one row of the reward-trace CSV.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub episode: usize,
    pub reward: f64,
    pub epsilon: f64,
    pub loss_dua: f64,
    pub loss_tba: f64,
}

/// One evaluation table row (per scenario and user).
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub scenario: usize,
    pub scheme: String,
    pub user: usize,
    pub t_tx: Option<f64>,
    pub t_exe: Option<f64>,
    pub t_local: f64,
    pub t_total: f64,
    pub system_delay: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub episodes: usize,
    pub slots: usize,
    pub csi: CsiMode,
    pub bundle: Option<EstimatorBundle>,
    pub seed: u64,
    pub overrides: SchemeOverrides,
}

impl TrainOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            episodes: cfg.drl.episodes,
            slots: cfg.drl.slots_per_episode,
            csi: CsiMode::Perfect,
            bundle: None,
            seed: cfg.seed,
            overrides: SchemeOverrides::default(),
        }
    }
}

pub struct TrainResult {
    pub agents: AgentSet,
    pub reward_trace: Vec<EpisodeStats>,
    pub reward_params: RewardParams,
    /// Constraint violations observed by the environment validator across
    /// every executed step; stays zero when projection works.
    pub violations: u64,
    pub steps: u64,
}

/// Draw feasible random decisions to calibrate the reward thresholds: the
/// soft target `t1` is the 25th percentile and the cutoff `t2` the 90th
/// percentile of a 200-sample random-policy delay distribution.
pub fn calibrate_reward(
    cfg: &ScenarioConfig,
    csi: CsiMode,
    bundle: Option<&EstimatorBundle>,
    seed: u64,
) -> Result<RewardParams, EnvError> {
    let mut env = Env::new(cfg, csi, bundle.cloned(), mix_seed(seed, 0xCA11))?;
    let actions = enumerate_apv_actions(cfg, &env.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xCA12));
    // Thresholds only need the delay distribution; rewards are ignored.
    let probe = RewardParams::new(cfg.drl.delta1, 1.0, 2.0);
    let mut delays = Vec::with_capacity(200);
    for i in 0..200 {
        if i % cfg.drl.slots_per_episode == 0 {
            env.reset_episode()?;
        }
        let apvs: Vec<Apv> =
            (0..cfg.n_users).map(|_| actions[rng.gen_range(0..actions.len())].clone()).collect();
        let raw: Vec<f64> =
            (0..bs_action_dim(cfg)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (beamformer, lambda, shares) = map_bs_action(&raw, cfg);
        let decision = ControlDecision {
            apvs,
            beamformer,
            power: PowerPolicy::PriceFactor(lambda),
            mec_shares: shares,
        };
        delays.push(env.step(&decision, &probe)?.report.system_delay);
    }
    let mut t1 = percentile(&delays, 0.25);
    let mut t2 = percentile(&delays, 0.90);
    if !(t1 < t2) {
        // Degenerate distribution; widen symmetrically.
        let bump = (t1.abs() * 0.5).max(1e-9);
        t2 = t1 + bump;
        t1 -= bump * 1e-3;
    }
    Ok(RewardParams::new(cfg.drl.delta1, t1, t2))
}

struct PendingTba {
    state: Vec<f32>,
    beam: Option<Vec<f32>>,
    price: Option<Vec<f32>>,
    mec: Vec<f32>,
    reward: f32,
}

fn onehot_state(state: &[f32], user: usize, n_users: usize) -> Vec<f32> {
    let mut s = Vec::with_capacity(state.len() + n_users);
    s.extend_from_slice(state);
    for u in 0..n_users {
        s.push(if u == user { 1.0 } else { 0.0 });
    }
    s
}

struct SlotDecision {
    user_indices: Vec<usize>,
    user_scores: Vec<Vec<f32>>,
    s_u: Vec<f32>,
    s_b: Vec<f32>,
    beam_slice: Option<Vec<f32>>,
    price_slice: Option<Vec<f32>>,
    mec_slice: Vec<f32>,
    decision: ControlDecision,
}

/// One forward pass through the hierarchy: users pick ports, the base
/// station decodes its raw vector, overrides substitute frozen pieces.
fn decide(
    agents: &AgentSet,
    env: &Env,
    overrides: &SchemeOverrides,
    epsilon: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SlotDecision, EnvError> {
    let cfg = &env.cfg;
    let n = cfg.n_users;
    let s_u = env.user_state();

    let mut user_indices = Vec::with_capacity(n);
    let mut user_scores = Vec::new();
    let apvs: Vec<Apv> = match &agents.users {
        UserAgents::Shared(agent) => (0..n)
            .map(|u| {
                let q = agent.q_values(&onehot_state(&s_u, u, n));
                let idx = select_discrete(&q, epsilon, rng);
                user_indices.push(idx);
                agents.apv_actions[idx].clone()
            })
            .collect(),
        UserAgents::PerUser(list) => list
            .iter()
            .map(|agent| {
                let q = agent.q_values(&s_u);
                let idx = select_discrete(&q, epsilon, rng);
                user_indices.push(idx);
                agents.apv_actions[idx].clone()
            })
            .collect(),
        UserAgents::DdpgScores(list) => list
            .iter()
            .map(|agent| {
                let scores = select_continuous(&agent.act(&s_u), noise, rng);
                let idx = argmax(&scores);
                user_indices.push(idx);
                user_scores.push(scores);
                agents.apv_actions[idx].clone()
            })
            .collect(),
        UserAgents::Disabled(fixed) => fixed.clone(),
    };

    let s_b = env.bs_state(&apvs);
    let np = cfg.n_elements;
    let beam_dim = 2 * np * n;
    let mut raw = vec![0.0f64; bs_action_dim(cfg)];

    let beam_slice = agents.beam.as_ref().map(|agent| {
        let a = select_continuous(&agent.act(&s_b), noise, rng);
        for (i, &v) in a.iter().enumerate() {
            raw[i] = v as f64;
        }
        a
    });
    let price_slice = agents.price.as_ref().map(|agent| {
        let a = select_continuous(&agent.act(&s_b), noise, rng);
        raw[beam_dim] = a[0] as f64;
        a
    });
    let mec_slice = {
        let agent = agents.mec.as_ref().expect("MEC head is always trained");
        let a = select_continuous(&agent.act(&s_b), noise, rng);
        for (i, &v) in a.iter().enumerate() {
            raw[beam_dim + 1 + i] = v as f64;
        }
        a
    };

    let (mut beamformer, lambda, shares) = map_bs_action(&raw, cfg);
    if overrides.analytic_beamformer {
        let h = env.channel_matrix(&apvs)?;
        beamformer = crate::baselines::zf_scheme_beamformer(&h);
    }
    let power = match overrides.fixed_power {
        Some(p) => PowerPolicy::Explicit(vec![p; n]),
        None => PowerPolicy::PriceFactor(lambda),
    };
    let decision = ControlDecision { apvs: apvs.clone(), beamformer, power, mec_shares: shares };

    Ok(SlotDecision {
        user_indices,
        user_scores,
        s_u,
        s_b,
        beam_slice,
        price_slice,
        mec_slice,
        decision,
    })
}

fn build_agents(
    cfg: &ScenarioConfig,
    overrides: &SchemeOverrides,
    actions: Vec<Apv>,
    rng: &mut ChaCha8Rng,
) -> AgentSet {
    let n = cfg.n_users;
    let user_dim = Env::user_state_dim(cfg);
    let bs_dim = Env::bs_state_dim(cfg);
    let np = cfg.n_elements;

    let users = if let Some(apv) = &overrides.fixed_apv {
        UserAgents::Disabled(vec![apv.clone(); n])
    } else if overrides.maddpg {
        UserAgents::DdpgScores(
            (0..n)
                .map(|_| Td3Agent::new(user_dim, actions.len(), &cfg.drl, TargetRule::Ddpg, rng))
                .collect(),
        )
    } else if cfg.drl.shared_dua {
        UserAgents::Shared(D3qnAgent::new(user_dim + n, actions.len(), &cfg.drl, rng))
    } else {
        UserAgents::PerUser(
            (0..n).map(|_| D3qnAgent::new(user_dim, actions.len(), &cfg.drl, rng)).collect(),
        )
    };

    let rule = if overrides.maddpg { TargetRule::Ddpg } else { TargetRule::Td3 };
    let beam = (!overrides.analytic_beamformer)
        .then(|| Td3Agent::new(bs_dim, 2 * np * n, &cfg.drl, rule, rng));
    let price =
        overrides.fixed_power.is_none().then(|| Td3Agent::new(bs_dim, 1, &cfg.drl, rule, rng));
    let mec = Some(Td3Agent::new(bs_dim, n, &cfg.drl, rule, rng));

    AgentSet { users, beam, price, mec, apv_actions: actions }
}

/// Run the full training loop. Deterministic for a fixed seed.
pub fn train(cfg: &ScenarioConfig, options: &TrainOptions) -> Result<TrainResult, EnvError> {
    let reward_params =
        calibrate_reward(cfg, options.csi, options.bundle.as_ref(), options.seed)?;
    let mut env = Env::new(
        cfg,
        options.csi,
        options.bundle.clone(),
        mix_seed(options.seed, 0xE17),
    )?;
    let actions = enumerate_apv_actions(cfg, &env.grid)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(options.seed, 0xA6E1));
    let mut agents = build_agents(cfg, &options.overrides, actions, &mut init_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(options.seed, 0x5E1E));

    let eps_schedule = EpsilonSchedule {
        start: cfg.drl.eps_start,
        end: cfg.drl.eps_end,
        decay_epochs: cfg.drl.eps_decay_epochs,
    };
    let noise_schedule = EpsilonSchedule {
        start: cfg.drl.noise_start,
        end: cfg.drl.noise_end,
        decay_epochs: cfg.drl.eps_decay_epochs,
    };

    let n = cfg.n_users;
    let batch = cfg.drl.batch_size;
    let capacity = cfg.drl.replay_capacity;
    let mut dua_buffer: ReplayBuffer<Transition<usize>> = ReplayBuffer::new(capacity);
    let mut dua_buffers: Vec<ReplayBuffer<Transition<usize>>> =
        (0..n).map(|_| ReplayBuffer::new(capacity)).collect();
    let mut score_buffers: Vec<ReplayBuffer<Transition<Vec<f32>>>> =
        (0..n).map(|_| ReplayBuffer::new(capacity)).collect();
    let mut beam_buffer: ReplayBuffer<Transition<Vec<f32>>> = ReplayBuffer::new(capacity);
    let mut price_buffer: ReplayBuffer<Transition<Vec<f32>>> = ReplayBuffer::new(capacity);
    let mut mec_buffer: ReplayBuffer<Transition<Vec<f32>>> = ReplayBuffer::new(capacity);

    let mut reward_trace = Vec::with_capacity(options.episodes);

    for episode in 0..options.episodes {
        env.reset_episode()?;
        let epsilon = eps_schedule.value(episode);
        let noise = noise_schedule.value(episode);
        let mut episode_reward = 0.0f64;
        let mut episode_dua_loss = 0.0f64;
        let mut episode_tba_loss = 0.0f64;
        let mut pending: Option<PendingTba> = None;

        for slot in 0..options.slots {
            let slot_decision =
                decide(&agents, &env, &options.overrides, epsilon, noise, &mut rng)?;
            let terminal = slot + 1 == options.slots;

            // Complete the previous slot's base-station transition now that
            // its successor state (with the fresh port choices) exists.
            if let Some(p) = pending.take() {
                push_tba(
                    &mut beam_buffer,
                    &mut price_buffer,
                    &mut mec_buffer,
                    p,
                    &slot_decision.s_b,
                    false,
                );
            }

            let outcome = env.step(&slot_decision.decision, &reward_params)?;
            let reward = outcome.reward as f32;
            episode_reward += outcome.reward;

            let next_s_u = env.user_state();
            match &agents.users {
                UserAgents::Shared(_) => {
                    for u in 0..n {
                        dua_buffer.push(Transition {
                            state: onehot_state(&slot_decision.s_u, u, n),
                            action: slot_decision.user_indices[u],
                            reward,
                            next_state: onehot_state(&next_s_u, u, n),
                            terminal,
                        });
                    }
                }
                UserAgents::PerUser(_) => {
                    for u in 0..n {
                        dua_buffers[u].push(Transition {
                            state: slot_decision.s_u.clone(),
                            action: slot_decision.user_indices[u],
                            reward,
                            next_state: next_s_u.clone(),
                            terminal,
                        });
                    }
                }
                UserAgents::DdpgScores(_) => {
                    for u in 0..n {
                        score_buffers[u].push(Transition {
                            state: slot_decision.s_u.clone(),
                            action: slot_decision.user_scores[u].clone(),
                            reward,
                            next_state: next_s_u.clone(),
                            terminal,
                        });
                    }
                }
                UserAgents::Disabled(_) => {}
            }

            let tba_record = PendingTba {
                state: slot_decision.s_b.clone(),
                beam: slot_decision.beam_slice.clone(),
                price: slot_decision.price_slice.clone(),
                mec: slot_decision.mec_slice.clone(),
                reward,
            };
            if terminal {
                // No successor decision exists; close the transition on its
                // own state with the terminal flag set.
                push_tba(
                    &mut beam_buffer,
                    &mut price_buffer,
                    &mut mec_buffer,
                    tba_record,
                    &slot_decision.s_b,
                    true,
                );
            } else {
                pending = Some(tba_record);
            }

            // Gradient steps.
            match &mut agents.users {
                UserAgents::Shared(agent) => {
                    let sample = dua_buffer.sample(batch, &mut rng);
                    if !sample.is_empty() {
                        episode_dua_loss += agent.update(&sample) as f64;
                        agent.soft_update();
                    }
                }
                UserAgents::PerUser(list) => {
                    for (u, agent) in list.iter_mut().enumerate() {
                        let sample = dua_buffers[u].sample(batch, &mut rng);
                        if !sample.is_empty() {
                            episode_dua_loss += agent.update(&sample) as f64 / n as f64;
                            agent.soft_update();
                        }
                    }
                }
                UserAgents::DdpgScores(list) => {
                    for (u, agent) in list.iter_mut().enumerate() {
                        let sample = score_buffers[u].sample(batch, &mut rng);
                        if !sample.is_empty() {
                            let (loss, _) = agent.update(&sample, &mut rng);
                            episode_dua_loss += loss as f64 / n as f64;
                            agent.soft_update();
                        }
                    }
                }
                UserAgents::Disabled(_) => {}
            }
            let mut tba_heads = 0;
            if let Some(agent) = agents.beam.as_mut() {
                let sample = beam_buffer.sample(batch, &mut rng);
                if !sample.is_empty() {
                    let (loss, _) = agent.update(&sample, &mut rng);
                    episode_tba_loss += loss as f64;
                    tba_heads += 1;
                    agent.soft_update();
                }
            }
            if let Some(agent) = agents.price.as_mut() {
                let sample = price_buffer.sample(batch, &mut rng);
                if !sample.is_empty() {
                    let (loss, _) = agent.update(&sample, &mut rng);
                    episode_tba_loss += loss as f64;
                    tba_heads += 1;
                    agent.soft_update();
                }
            }
            if let Some(agent) = agents.mec.as_mut() {
                let sample = mec_buffer.sample(batch, &mut rng);
                if !sample.is_empty() {
                    let (loss, _) = agent.update(&sample, &mut rng);
                    episode_tba_loss += loss as f64;
                    tba_heads += 1;
                    agent.soft_update();
                }
            }
            let _ = tba_heads;
        }

        let stats = EpisodeStats {
            episode,
            reward: episode_reward / options.slots as f64,
            epsilon,
            loss_dua: episode_dua_loss / options.slots as f64,
            loss_tba: episode_tba_loss / options.slots as f64,
        };
        if !stats.reward.is_finite()
            || !stats.loss_dua.is_finite()
            || !stats.loss_tba.is_finite()
        {
            return Err(EnvError::Diverged { episode });
        }
        reward_trace.push(stats);
    }

    Ok(TrainResult {
        agents,
        reward_trace,
        reward_params,
        violations: env.violation_count(),
        steps: env.steps(),
    })
}

fn push_tba(
    beam_buffer: &mut ReplayBuffer<Transition<Vec<f32>>>,
    price_buffer: &mut ReplayBuffer<Transition<Vec<f32>>>,
    mec_buffer: &mut ReplayBuffer<Transition<Vec<f32>>>,
    record: PendingTba,
    next_state: &[f32],
    terminal: bool,
) {
    if let Some(beam) = record.beam {
        beam_buffer.push(Transition {
            state: record.state.clone(),
            action: beam,
            reward: record.reward,
            next_state: next_state.to_vec(),
            terminal,
        });
    }
    if let Some(price) = record.price {
        price_buffer.push(Transition {
            state: record.state.clone(),
            action: price,
            reward: record.reward,
            next_state: next_state.to_vec(),
            terminal,
        });
    }
    mec_buffer.push(Transition {
        state: record.state,
        action: record.mec,
        reward: record.reward,
        next_state: next_state.to_vec(),
        terminal,
    });
}

/// Greedy inference over fresh scenarios: exploration is forced off, each
/// scenario seed runs `slots` decision slots, and per-user delays are
/// averaged over the slots. Repeated calls are bit-identical.
pub fn evaluate(
    agents: &AgentSet,
    cfg: &ScenarioConfig,
    overrides: &SchemeOverrides,
    csi: CsiMode,
    bundle: Option<&EstimatorBundle>,
    scheme: &str,
    scenario_seeds: &[u64],
    slots: usize,
) -> Result<Vec<EvalRow>, EnvError> {
    let mut rows = Vec::new();
    for (scenario, &seed) in scenario_seeds.iter().enumerate() {
        let mut env = Env::new(cfg, csi, bundle.cloned(), seed)?;
        // Exploration off; the decide path still consumes no randomness at
        // epsilon = 0 / noise = 0 beyond this throwaway stream.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probe = RewardParams::new(cfg.drl.delta1, 1.0, 2.0);
        let n = cfg.n_users;
        let mut sum_total = vec![0.0f64; n];
        let mut sum_local = vec![0.0f64; n];
        let mut sum_tx = vec![(0.0f64, 0usize); n];
        let mut sum_exe = vec![(0.0f64, 0usize); n];
        let mut sum_system = 0.0f64;
        for _ in 0..slots {
            let slot_decision = decide(agents, &env, overrides, 0.0, 0.0, &mut rng)?;
            let outcome = env.step(&slot_decision.decision, &probe)?;
            for u in 0..n {
                sum_total[u] += outcome.report.t_total[u];
                sum_local[u] += outcome.report.t_local[u];
                if let Some(t) = outcome.report.t_tx[u] {
                    sum_tx[u].0 += t;
                    sum_tx[u].1 += 1;
                }
                if let Some(t) = outcome.report.t_exe[u] {
                    sum_exe[u].0 += t;
                    sum_exe[u].1 += 1;
                }
            }
            sum_system += outcome.report.system_delay;
        }
        let slots_f = slots as f64;
        for u in 0..n {
            rows.push(EvalRow {
                scenario,
                scheme: scheme.to_string(),
                user: u,
                t_tx: (sum_tx[u].1 > 0).then(|| sum_tx[u].0 / sum_tx[u].1 as f64),
                t_exe: (sum_exe[u].1 > 0).then(|| sum_exe[u].0 / sum_exe[u].1 as f64),
                t_local: sum_local[u] / slots_f,
                t_total: sum_total[u] / slots_f,
                system_delay: sum_system / slots_f,
            });
        }
    }
    Ok(rows)
}
