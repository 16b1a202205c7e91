//! Twin-delayed deterministic policy gradient for the base-station agents.
//!
//! The printed form of the algorithm this crate follows has no target-action
//! smoothing and updates the actor every step; [`Td3Options::canonical`]
//! switches on the usual delay-2 policy updates and clipped target noise for
//! comparison. The DDPG rule used by the MADDPG benchmark shares the same
//! structure with a single-critic target.

use ndarray::{Array2, ArrayD};
use rand::Rng;

use crate::config::DrlConfig;
use crate::nn::{clip_global_norm, soft_update_views, standard_normal, Activation, Adam, Mlp};

use super::{ddpg_target, td3_target, Transition};

/// Which bootstrap target the critic update uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    /// Conservative minimum over the twin target critics.
    Td3,
    /// Single-critic target (the DDPG variant).
    Ddpg,
}

/// Optional departures from the printed equations.
#[derive(Debug, Clone, Copy)]
pub struct Td3Options {
    /// Actor/target update period in critic steps.
    pub policy_delay: usize,
    /// Target-action smoothing noise scale (0 disables).
    pub target_noise_std: f32,
    /// Clip for the smoothing noise.
    pub target_noise_clip: f32,
}

impl Td3Options {
    /// Exactly the printed equations: no smoothing, no delay.
    pub fn printed() -> Self {
        Self { policy_delay: 1, target_noise_std: 0.0, target_noise_clip: 0.0 }
    }

    /// The full canonical algorithm.
    pub fn canonical() -> Self {
        Self { policy_delay: 2, target_noise_std: 0.2, target_noise_clip: 0.5 }
    }
}

/// Actor, twin critics, their targets, and optimizers.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub q1: Mlp,
    pub q1_target: Mlp,
    pub q2: Mlp,
    pub q2_target: Mlp,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    pub state_dim: usize,
    pub action_dim: usize,
    pub discount: f32,
    pub grad_clip: f32,
    pub tau: f32,
    pub options: Td3Options,
    pub rule: TargetRule,
    update_count: u64,
}

impl Td3Agent {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        cfg: &DrlConfig,
        rule: TargetRule,
        rng: &mut R,
    ) -> Self {
        // Sigmoid hidden layers; the actor squashes to [-1, 1].
        let actor = Mlp::new(
            state_dim,
            &cfg.hidden,
            action_dim,
            Activation::Sigmoid,
            Activation::Tanh,
            rng,
        );
        let q1 = Mlp::new(
            state_dim + action_dim,
            &cfg.hidden,
            1,
            Activation::Sigmoid,
            Activation::Identity,
            rng,
        );
        let q2 = Mlp::new(
            state_dim + action_dim,
            &cfg.hidden,
            1,
            Activation::Sigmoid,
            Activation::Identity,
            rng,
        );
        let options = if cfg.canonical_td3 { Td3Options::canonical() } else { Td3Options::printed() };
        Self {
            actor_target: actor.clone(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            opt_actor: Adam::new(cfg.learning_rate as f32),
            opt_q1: Adam::new(cfg.learning_rate as f32),
            opt_q2: Adam::new(cfg.learning_rate as f32),
            state_dim,
            action_dim,
            discount: cfg.discount as f32,
            grad_clip: cfg.grad_clip as f32,
            tau: cfg.tau as f32,
            options,
            rule,
        update_count: 0,
        }
    }

    /// Deterministic action for one state.
    pub fn act(&self, state: &[f32]) -> Vec<f32> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("state row");
        self.actor.forward(&x).row(0).to_vec()
    }

    fn critic_input(states: &Array2<f32>, actions: &Array2<f32>) -> Array2<f32> {
        let n = states.nrows();
        let sd = states.ncols();
        let ad = actions.ncols();
        let mut joint = Array2::zeros((n, sd + ad));
        for i in 0..n {
            for j in 0..sd {
                joint[(i, j)] = states[(i, j)];
            }
            for j in 0..ad {
                joint[(i, sd + j)] = actions[(i, j)];
            }
        }
        joint
    }

    /// One critic (and possibly actor) update on a batch. Returns
    /// `(critic_loss, actor_objective)`; the actor objective is the mean
    /// Q1 value it climbed, NaN-free by construction.
    pub fn update<R: Rng>(
        &mut self,
        batch: &[&Transition<Vec<f32>>],
        rng: &mut R,
    ) -> (f32, f32) {
        if batch.is_empty() {
            return (0.0, 0.0);
        }
        let n = batch.len();
        let mut states = Array2::zeros((n, self.state_dim));
        let mut actions = Array2::zeros((n, self.action_dim));
        let mut next_states = Array2::zeros((n, self.state_dim));
        for (i, t) in batch.iter().enumerate() {
            for (j, &v) in t.state.iter().enumerate() {
                states[(i, j)] = v;
            }
            for (j, &v) in t.action.iter().enumerate() {
                actions[(i, j)] = v;
            }
            for (j, &v) in t.next_state.iter().enumerate() {
                next_states[(i, j)] = v;
            }
        }

        // Target actions, optionally smoothed.
        let mut next_actions = self.actor_target.forward(&next_states);
        if self.options.target_noise_std > 0.0 {
            let std = self.options.target_noise_std;
            let clip = self.options.target_noise_clip;
            next_actions.mapv_inplace(|a| {
                let noise = (standard_normal(rng) * std).clamp(-clip, clip);
                (a + noise).clamp(-1.0, 1.0)
            });
        }
        let next_joint = Self::critic_input(&next_states, &next_actions);
        let q1_next = self.q1_target.forward(&next_joint);
        let q2_next = self.q2_target.forward(&next_joint);
        let targets: Vec<f32> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| match self.rule {
                TargetRule::Td3 => td3_target(
                    t.reward,
                    t.terminal,
                    self.discount,
                    q1_next[(i, 0)],
                    q2_next[(i, 0)],
                ),
                TargetRule::Ddpg => {
                    ddpg_target(t.reward, t.terminal, self.discount, q1_next[(i, 0)])
                }
            })
            .collect();

        // Critic regression toward the shared target.
        let joint = Self::critic_input(&states, &actions);
        let inv_n = 1.0 / n as f32;
        let mut critic_loss = 0.0f32;
        {
            let trace = self.q1.forward_trace(&joint);
            let mut dy = Array2::zeros((n, 1));
            for i in 0..n {
                let err = trace.output()[(i, 0)] - targets[i];
                critic_loss += err * err * inv_n;
                dy[(i, 0)] = 2.0 * err * inv_n;
            }
            let (_, grads) = self.q1.backward(&trace, &dy);
            let mut grads = Mlp::flatten_grads(grads);
            clip_global_norm(&mut grads, self.grad_clip);
            self.opt_q1.step(&mut self.q1.params_mut(), &grads);
        }
        if self.rule == TargetRule::Td3 {
            let trace = self.q2.forward_trace(&joint);
            let mut dy = Array2::zeros((n, 1));
            for i in 0..n {
                let err = trace.output()[(i, 0)] - targets[i];
                critic_loss += err * err * inv_n;
                dy[(i, 0)] = 2.0 * err * inv_n;
            }
            let (_, grads) = self.q2.backward(&trace, &dy);
            let mut grads = Mlp::flatten_grads(grads);
            clip_global_norm(&mut grads, self.grad_clip);
            self.opt_q2.step(&mut self.q2.params_mut(), &grads);
        }

        self.update_count += 1;
        let mut actor_objective = 0.0f32;
        if self.update_count % self.options.policy_delay as u64 == 0 {
            // Deterministic policy gradient: ascend Q1(s, actor(s)).
            let actor_trace = self.actor.forward_trace(&states);
            let pi_actions = actor_trace.output().clone();
            let joint_pi = Self::critic_input(&states, &pi_actions);
            let q_trace = self.q1.forward_trace(&joint_pi);
            actor_objective = q_trace.output().sum() * inv_n;
            // dQ/d(joint) with dL/dQ = -1/n (gradient ascent on Q).
            let dq = Array2::from_elem((n, 1), -inv_n);
            let (djoint, _critic_grads_unused) = self.q1.backward(&q_trace, &dq);
            let mut dactions = Array2::zeros((n, self.action_dim));
            for i in 0..n {
                for j in 0..self.action_dim {
                    dactions[(i, j)] = djoint[(i, self.state_dim + j)];
                }
            }
            let (_, actor_grads) = self.actor.backward(&actor_trace, &dactions);
            let mut grads = Mlp::flatten_grads(actor_grads);
            clip_global_norm(&mut grads, self.grad_clip);
            self.opt_actor.step(&mut self.actor.params_mut(), &grads);
        }

        (critic_loss, actor_objective)
    }

    /// Polyak-update every target network.
    pub fn soft_update(&mut self) {
        let tau = self.tau;
        let actor: Vec<ArrayD<f32>> = self.actor.params().iter().map(|p| p.to_owned()).collect();
        soft_update_views(self.actor_target.params_mut(), &actor, tau);
        let q1: Vec<ArrayD<f32>> = self.q1.params().iter().map(|p| p.to_owned()).collect();
        soft_update_views(self.q1_target.params_mut(), &q1, tau);
        let q2: Vec<ArrayD<f32>> = self.q2.params().iter().map(|p| p.to_owned()).collect();
        soft_update_views(self.q2_target.params_mut(), &q2, tau);
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, ndarray::ArrayViewD<'_, f32>)> {
        let mut named = self.actor.named_params(&format!("{prefix}.actor"));
        named.extend(self.q1.named_params(&format!("{prefix}.q1")));
        named.extend(self.q2.named_params(&format!("{prefix}.q2")));
        named
    }

    pub fn named_params_mut(
        &mut self,
        prefix: &str,
    ) -> Vec<(String, ndarray::ArrayViewMutD<'_, f32>)> {
        let mut named = self.actor.named_params_mut(&format!("{prefix}.actor"));
        named.extend(self.q1.named_params_mut(&format!("{prefix}.q1")));
        named.extend(self.q2.named_params_mut(&format!("{prefix}.q2")));
        named
    }

    /// Reset every target network to its online counterpart (after loading).
    pub fn sync_targets(&mut self) {
        self.actor_target = self.actor.clone();
        self.q1_target = self.q1.clone();
        self.q2_target = self.q2.clone();
    }
}
