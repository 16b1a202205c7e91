//! Dueling double-DQN machinery for the discrete user agents.

use ndarray::{Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::config::DrlConfig;
use crate::nn::{clip_global_norm, soft_update_views, Activation, Adam, Dense, Mlp};

use super::{argmax, d3qn_target, dueling_aggregate, Transition};

/// Q-network with a shared trunk and dueling value/advantage heads.
#[derive(Debug, Clone)]
pub struct DuelingQNet {
    trunk: Mlp,
    value_head: Dense,
    advantage_head: Dense,
    paper_literal: bool,
}

struct DuelingTrace {
    trunk: crate::nn::MlpTrace,
}

impl DuelingQNet {
    pub fn new<R: Rng>(
        inputs: usize,
        n_actions: usize,
        hidden: &[usize],
        paper_literal: bool,
        rng: &mut R,
    ) -> Self {
        let trunk_out = *hidden.last().expect("at least one hidden layer");
        let trunk_hidden = &hidden[..hidden.len() - 1];
        let trunk = Mlp::new(inputs, trunk_hidden, trunk_out, Activation::Relu, Activation::Relu, rng);
        let value_head = Dense::new(trunk_out, 1, Activation::Identity, rng);
        let advantage_head = Dense::new(trunk_out, n_actions, Activation::Identity, rng);
        Self { trunk, value_head, advantage_head, paper_literal }
    }

    pub fn n_actions(&self) -> usize {
        self.advantage_head.outputs()
    }

    pub fn inputs(&self) -> usize {
        self.trunk.inputs()
    }

    fn forward_trace(&self, states: &Array2<f32>) -> (Array2<f32>, DuelingTrace) {
        let trunk = self.trunk.forward_trace(states);
        let features = trunk.output().clone();
        let value = self.value_head.forward(&features);
        let advantage = self.advantage_head.forward(&features);
        let mut q = Array2::zeros(advantage.raw_dim());
        for (i, mut row) in q.rows_mut().into_iter().enumerate() {
            let adv_row: Vec<f32> = advantage.row(i).to_vec();
            let combined = dueling_aggregate(value[(i, 0)], &adv_row, self.paper_literal);
            for (j, v) in combined.into_iter().enumerate() {
                row[j] = v;
            }
        }
        (q, DuelingTrace { trunk })
    }

    /// Q row for a single state.
    pub fn q_values(&self, state: &[f32]) -> Vec<f32> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("state row");
        self.forward_trace(&x).0.row(0).to_vec()
    }

    /// Q matrix for a batch of states.
    pub fn q_batch(&self, states: &Array2<f32>) -> Array2<f32> {
        self.forward_trace(states).0
    }

    fn backward(&self, trace: &DuelingTrace, dq: &Array2<f32>) -> Vec<ArrayD<f32>> {
        let n_actions = self.n_actions() as f32;
        // dV = row-sum(dQ); dA = dQ - mean over actions (identifiable form).
        let dvalue = dq
            .sum_axis(Axis(1))
            .into_shape_with_order((dq.nrows(), 1))
            .expect("column vector");
        let dadvantage = if self.paper_literal {
            dq.clone()
        } else {
            let mut da = dq.clone();
            for (i, mut row) in da.rows_mut().into_iter().enumerate() {
                let mean = dvalue[(i, 0)] / n_actions;
                row.mapv_inplace(|v| v - mean);
            }
            da
        };
        let features = trace.trunk.output();
        let (dx_v, value_grad) = self.value_head.backward(features, &dvalue);
        let (dx_a, adv_grad) = self.advantage_head.backward(features, &dadvantage);
        let dfeatures = dx_v + dx_a;
        let (_, trunk_grads) = self.trunk.backward(&trace.trunk, &dfeatures);

        let mut grads = Mlp::flatten_grads(trunk_grads);
        grads.push(value_grad.weight.into_dyn());
        grads.push(value_grad.bias.into_dyn());
        grads.push(adv_grad.weight.into_dyn());
        grads.push(adv_grad.bias.into_dyn());
        grads
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>> {
        let mut params = self.trunk.params_mut();
        params.push(self.value_head.weight.view_mut().into_dyn());
        params.push(self.value_head.bias.view_mut().into_dyn());
        params.push(self.advantage_head.weight.view_mut().into_dyn());
        params.push(self.advantage_head.bias.view_mut().into_dyn());
        params
    }

    pub fn params(&self) -> Vec<ArrayViewD<'_, f32>> {
        let mut params = self.trunk.params();
        params.push(self.value_head.weight.view().into_dyn());
        params.push(self.value_head.bias.view().into_dyn());
        params.push(self.advantage_head.weight.view().into_dyn());
        params.push(self.advantage_head.bias.view().into_dyn());
        params
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f32>)> {
        let mut named = self.trunk.named_params(&format!("{prefix}.trunk"));
        named.push((format!("{prefix}.value.weight"), self.value_head.weight.view().into_dyn()));
        named.push((format!("{prefix}.value.bias"), self.value_head.bias.view().into_dyn()));
        named.push((
            format!("{prefix}.advantage.weight"),
            self.advantage_head.weight.view().into_dyn(),
        ));
        named.push((
            format!("{prefix}.advantage.bias"),
            self.advantage_head.bias.view().into_dyn(),
        ));
        named
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f32>)> {
        let mut named = self.trunk.named_params_mut(&format!("{prefix}.trunk"));
        named.push((
            format!("{prefix}.value.weight"),
            self.value_head.weight.view_mut().into_dyn(),
        ));
        named.push((format!("{prefix}.value.bias"), self.value_head.bias.view_mut().into_dyn()));
        named.push((
            format!("{prefix}.advantage.weight"),
            self.advantage_head.weight.view_mut().into_dyn(),
        ));
        named.push((
            format!("{prefix}.advantage.bias"),
            self.advantage_head.bias.view_mut().into_dyn(),
        ));
        named
    }
}

/// Online/target pair with identical architecture; the target starts as an
/// exact copy.
#[derive(Debug, Clone)]
pub struct QNetworkPair {
    pub online: DuelingQNet,
    pub target: DuelingQNet,
}

impl QNetworkPair {
    pub fn new<R: Rng>(
        inputs: usize,
        n_actions: usize,
        hidden: &[usize],
        paper_literal: bool,
        rng: &mut R,
    ) -> Self {
        let online = DuelingQNet::new(inputs, n_actions, hidden, paper_literal, rng);
        let target = online.clone();
        Self { online, target }
    }

    pub fn soft_update(&mut self, tau: f32) {
        let online: Vec<ArrayD<f32>> = self.online.params().iter().map(|p| p.to_owned()).collect();
        soft_update_views(self.target.params_mut(), &online, tau);
    }
}

/// Complete discrete agent: network pair, optimizer, and update rule.
#[derive(Debug, Clone)]
pub struct D3qnAgent {
    pub nets: QNetworkPair,
    optimizer: Adam,
    pub discount: f32,
    pub grad_clip: f32,
    pub tau: f32,
}

impl D3qnAgent {
    pub fn new<R: Rng>(inputs: usize, n_actions: usize, cfg: &DrlConfig, rng: &mut R) -> Self {
        let nets = QNetworkPair::new(
            inputs,
            n_actions,
            &cfg.hidden,
            cfg.dueling_paper_literal,
            rng,
        );
        Self {
            nets,
            optimizer: Adam::new(cfg.learning_rate as f32),
            discount: cfg.discount as f32,
            grad_clip: cfg.grad_clip as f32,
            tau: cfg.tau as f32,
        }
    }

    pub fn q_values(&self, state: &[f32]) -> Vec<f32> {
        self.nets.online.q_values(state)
    }

    pub fn greedy_action(&self, state: &[f32]) -> usize {
        argmax(&self.q_values(state))
    }

    /// One TD step on a batch; returns the mean squared TD error.
    pub fn update(&mut self, batch: &[&Transition<usize>]) -> f32 {
        if batch.is_empty() {
            return 0.0;
        }
        let n = batch.len();
        let dim = self.nets.online.inputs();
        let mut states = Array2::zeros((n, dim));
        let mut next_states = Array2::zeros((n, dim));
        for (i, t) in batch.iter().enumerate() {
            for (j, &v) in t.state.iter().enumerate() {
                states[(i, j)] = v;
            }
            for (j, &v) in t.next_state.iter().enumerate() {
                next_states[(i, j)] = v;
            }
        }
        let q_next_online = self.nets.online.q_batch(&next_states);
        let q_next_target = self.nets.target.q_batch(&next_states);
        let targets: Vec<f32> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                d3qn_target(
                    t.reward,
                    t.terminal,
                    self.discount,
                    &q_next_online.row(i).to_vec(),
                    &q_next_target.row(i).to_vec(),
                )
            })
            .collect();

        let (q, trace) = self.nets.online.forward_trace(&states);
        let mut dq = Array2::zeros(q.raw_dim());
        let mut loss = 0.0f32;
        let inv_n = 1.0 / n as f32;
        for (i, t) in batch.iter().enumerate() {
            let err = q[(i, t.action)] - targets[i];
            loss += err * err * inv_n;
            dq[(i, t.action)] = 2.0 * err * inv_n;
        }
        let mut grads = self.nets.online.backward(&trace, &dq);
        clip_global_norm(&mut grads, self.grad_clip);
        self.optimizer.step(&mut self.nets.online.params_mut(), &grads);
        loss
    }

    pub fn soft_update(&mut self) {
        self.nets.soft_update(self.tau);
    }

    /// Online parameters for inference checkpoints.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f32>)> {
        self.nets.online.named_params(prefix)
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f32>)> {
        self.nets.online.named_params_mut(prefix)
    }

    /// Reset the target network to the online parameters (after loading).
    pub fn sync_target(&mut self) {
        self.nets.target = self.nets.online.clone();
    }
}
