//! CartPoleNet, the 4→30→2 ELU Q-network, and its Q-learning trainer.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::cartpole::{Action, CartPole, CartState};
use crate::error::{Error, Result};
use crate::nn::{elu, Activation, AdamConfig, AdamState, DenseLayer, Mlp};
use crate::rng::Rng;

pub const STATE_DIM: usize = 4;
pub const HIDDEN_DIM: usize = 30;
pub const NUM_ACTIONS: usize = 2;
/// 30·4 + 30 + 2·30 + 2.
pub const WEIGHT_DIM: usize = HIDDEN_DIM * STATE_DIM + HIDDEN_DIM + NUM_ACTIONS * HIDDEN_DIM + NUM_ACTIONS;

/// Flat parameters of one CartPoleNet in canonical order: layer-1 weights
/// (row per hidden unit), layer-1 bias, layer-2 weights (row per action),
/// layer-2 bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != WEIGHT_DIM {
            return Err(Error::contract(format!(
                "weight vector must have {WEIGHT_DIM} entries, got {}",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; WEIGHT_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Rounds every entry to the nearest `f32`, the on-disk precision.
    pub fn quantized(&self) -> Self {
        Self(self.0.iter().map(|&v| f64::from(v as f32)).collect())
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleNet {
    mlp: Mlp,
}

impl CartPoleNet {
    fn activations() -> Vec<Activation> {
        vec![Activation::Elu, Activation::Identity]
    }

    pub fn zeros() -> Self {
        Self::from_layers(
            DenseLayer::zeros(STATE_DIM, HIDDEN_DIM),
            DenseLayer::zeros(HIDDEN_DIM, NUM_ACTIONS),
        )
        .expect("fixed shapes")
    }

    pub fn random(rng: &mut Rng) -> Self {
        Self::from_layers(
            DenseLayer::init_uniform(STATE_DIM, HIDDEN_DIM, rng),
            DenseLayer::init_uniform(HIDDEN_DIM, NUM_ACTIONS, rng),
        )
        .expect("fixed shapes")
    }

    pub fn from_layers(hidden: DenseLayer, output: DenseLayer) -> Result<Self> {
        if hidden.in_dim() != STATE_DIM
            || hidden.out_dim() != HIDDEN_DIM
            || output.in_dim() != HIDDEN_DIM
            || output.out_dim() != NUM_ACTIONS
        {
            return Err(Error::contract("CartPoleNet layers must be 4->30 and 30->2"));
        }
        Ok(Self {
            mlp: Mlp::new(vec![hidden, output], Self::activations())?,
        })
    }

    pub fn hidden(&self) -> &DenseLayer {
        &self.mlp.layers()[0]
    }

    pub fn output(&self) -> &DenseLayer {
        &self.mlp.layers()[1]
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn hidden_mut(&mut self) -> &mut DenseLayer {
        &mut self.mlp.layers_mut()[0]
    }

    pub fn output_mut(&mut self) -> &mut DenseLayer {
        &mut self.mlp.layers_mut()[1]
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    /// Post-ELU hidden activations.
    pub fn hidden_activations(&self, s: &CartState) -> [f64; HIDDEN_DIM] {
        let x = s.to_array();
        let layer = self.hidden();
        let w = layer.weights();
        let b = layer.bias();
        let mut h = [0.0; HIDDEN_DIM];
        for (u, hu) in h.iter_mut().enumerate() {
            let row = &w[u * STATE_DIM..(u + 1) * STATE_DIM];
            let z = b[u] + row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3] * x[3];
            *hu = elu(z);
        }
        h
    }

    /// Q-values for (Left, Right).
    pub fn qvalues(&self, s: &CartState) -> [f64; NUM_ACTIONS] {
        let h = self.hidden_activations(s);
        let layer = self.output();
        let w = layer.weights();
        let b = layer.bias();
        let mut q = [0.0; NUM_ACTIONS];
        for (a, qa) in q.iter_mut().enumerate() {
            let row = &w[a * HIDDEN_DIM..(a + 1) * HIDDEN_DIM];
            *qa = b[a] + row.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>();
        }
        q
    }

    pub fn greedy_action(&self, s: &CartState) -> Action {
        argmax_action(self.qvalues(s))
    }

    pub fn vectorize(&self) -> WeightVector {
        WeightVector(self.mlp.params())
    }

    pub fn devectorize(v: &[f64]) -> Result<Self> {
        if v.len() != WEIGHT_DIM {
            return Err(Error::contract(format!(
                "weight vector must have {WEIGHT_DIM} entries, got {}",
                v.len()
            )));
        }
        let mut net = Self::zeros();
        net.mlp.set_params(v)?;
        Ok(net)
    }

    pub fn is_finite(&self) -> bool {
        self.mlp.is_finite()
    }
}

/// Greedy choice with ties going to Left.
pub fn argmax_action(q: [f64; NUM_ACTIONS]) -> Action {
    if q[1] > q[0] {
        Action::Right
    } else {
        Action::Left
    }
}

/// With probability `epsilon` a uniformly random action, otherwise greedy.
pub fn act_epsilon(q: [f64; NUM_ACTIONS], epsilon: f64, rng: &mut Rng) -> Action {
    if epsilon > 0.0 && rng.uniform() < epsilon {
        Action::from_index(rng.below(NUM_ACTIONS))
    } else {
        argmax_action(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: CartState,
    pub action: Action,
    pub reward: f64,
    pub next: CartState,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `batch` distinct transitions, or fewer if the buffer is smaller.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut Rng) -> Vec<&'a Experience> {
        let k = batch.min(self.items.len());
        rng.sample_distinct(self.items.len(), k)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Environment steps to train for.
    pub budget_steps: usize,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the budget over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Transitions collected before the first update.
    pub learning_starts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            budget_steps: 20_000,
            discount: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            buffer_capacity: 10_000,
            batch_size: 64,
            learning_rate: 1e-3,
            learning_starts: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::contract(format!("discount {} outside (0, 1]", self.discount)));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::contract(format!("{name} {e} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return Err(Error::contract("epsilon_decay_fraction outside [0, 1]"));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::contract("batch_size and buffer_capacity must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: usize) -> f64 {
        let decay_steps = self.epsilon_decay_fraction * self.budget_steps as f64;
        if decay_steps <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (step as f64 / decay_steps).min(1.0);
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: CartPoleNet,
    /// Networks captured at the requested steps, in ascending step order.
    pub snapshots: Vec<(usize, CartPoleNet)>,
    pub episodes: usize,
}

pub fn train_agent(config: &TrainConfig, rng: &mut Rng) -> Result<CartPoleNet> {
    Ok(train_agent_with_snapshots(config, &[], rng)?.net)
}

/// Q-learning with experience replay and a linearly decaying epsilon-greedy
/// behaviour policy. Targets come from the network being trained. Hitting the
/// episode cap is a time limit, not a terminal state, so such transitions
/// still bootstrap.
pub fn train_agent_with_snapshots(
    config: &TrainConfig,
    snapshot_steps: &[usize],
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    let env = CartPole::default();
    let mut net = CartPoleNet::random(rng);
    let mut params = net.mlp.params();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        params.len(),
    );
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut grad = vec![0.0; params.len()];
    let mut snapshot_steps: Vec<usize> = snapshot_steps.to_vec();
    snapshot_steps.sort_unstable();
    let mut next_snapshot = 0;
    let mut snapshots = Vec::with_capacity(snapshot_steps.len());

    let mut state = env.reset(rng);
    let mut episode_len = 0;
    let mut episodes = 0;
    let warmup = config.learning_starts.max(config.batch_size);

    for step in 0..config.budget_steps {
        while next_snapshot < snapshot_steps.len() && snapshot_steps[next_snapshot] <= step {
            snapshots.push((snapshot_steps[next_snapshot], net.clone()));
            next_snapshot += 1;
        }

        let epsilon = config.epsilon_at(step);
        let action = act_epsilon(net.qvalues(&state), epsilon, rng);
        let tr = env.step(&state, action)?;
        episode_len += 1;
        buffer.push(Experience {
            state,
            action,
            reward: tr.reward,
            next: tr.next,
            terminal: tr.terminal,
        });
        if tr.terminal || episode_len >= env.config.max_steps {
            state = env.reset(rng);
            episode_len = 0;
            episodes += 1;
        } else {
            state = tr.next;
        }

        if buffer.len() < warmup {
            continue;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let batch = buffer.sample(config.batch_size, rng);
        let scale = 1.0 / batch.len() as f64;
        for e in batch {
            let target = if e.terminal {
                e.reward
            } else {
                let q_next = net.qvalues(&e.next);
                e.reward + config.discount * q_next[0].max(q_next[1])
            };
            let trace = net.mlp.trace(&e.state.to_array())?;
            let a = e.action.index();
            let mut upstream = [0.0; NUM_ACTIONS];
            upstream[a] = (trace.output()[a] - target) * scale;
            net.mlp.backward_trace(&trace, &upstream, &mut grad)?;
        }
        adam.step(&mut params, &grad).map_err(|err| Error::Diverged {
            step,
            detail: err.to_string(),
        })?;
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("parameter {i} became non-finite"),
            });
        }
        net.mlp.set_params(&params)?;
    }
    while next_snapshot < snapshot_steps.len() {
        snapshots.push((snapshot_steps[next_snapshot], net.clone()));
        next_snapshot += 1;
    }

    Ok(TrainOutcome {
        net,
        snapshots,
        episodes,
    })
}

/// Mean greedy episode length over `n_episodes` fresh resets.
pub fn survival_time(net: &CartPoleNet, n_episodes: usize, rng: &mut Rng) -> f64 {
    survival_time_in(&CartPole::default(), net, n_episodes, rng)
}

pub fn survival_time_in(env: &CartPole, net: &CartPoleNet, n_episodes: usize, rng: &mut Rng) -> f64 {
    assert!(n_episodes >= 1, "survival_time needs at least one episode");
    let total: usize = (0..n_episodes)
        .map(|_| env.run_episode(|s| net.greedy_action(s), rng).steps_survived)
        .sum();
    total as f64 / n_episodes as f64
}

/// Survival time of a raw weight vector.
pub fn survival_of_weights(w: &[f64], n_episodes: usize, rng: &mut Rng) -> Result<f64> {
    Ok(survival_time(&CartPoleNet::devectorize(w)?, n_episodes, rng))
}

/// Survival time of each weight vector; item `i` uses `rng.fork(i)`, so
/// results do not depend on evaluation order or thread count.
pub fn survival_many(ws: &[WeightVector], n_episodes: usize, rng: &Rng) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..ws.len()).collect();
    crate::par::map_slice(&idx, |&i| survival_of_weights(&ws[i], n_episodes, &mut rng.fork(i as u64)))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn parameter_count() {
        assert_eq!(WEIGHT_DIM, 212);
        assert_eq!(CartPoleNet::zeros().num_params(), 212);
        assert_eq!(CartPoleNet::random(&mut Rng::new(1)).vectorize().len(), 212);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = CartPoleNet::zeros();
        let s = CartState::new(0.3, -1.0, 0.05, 2.0);
        assert_eq!(net.qvalues(&s), [0.0, 0.0]);
        assert_eq!(net.greedy_action(&s), Action::Left);
    }

    #[test]
    fn swapping_output_rows_swaps_q() {
        let mut rng = Rng::new(4);
        let net = CartPoleNet::random(&mut rng);
        let mut swapped = net.clone();
        {
            let out = swapped.output_mut();
            let (w, b) = (out.weights().to_vec(), out.bias().to_vec());
            out.weights_mut()[..HIDDEN_DIM].copy_from_slice(&w[HIDDEN_DIM..]);
            out.weights_mut()[HIDDEN_DIM..].copy_from_slice(&w[..HIDDEN_DIM]);
            out.bias_mut().copy_from_slice(&[b[1], b[0]]);
        }
        let s = CartState::new(0.1, 0.2, -0.03, 0.4);
        let q = net.qvalues(&s);
        let qs = swapped.qvalues(&s);
        assert_eq!(q[0], qs[1]);
        assert_eq!(q[1], qs[0]);
    }

    #[test]
    fn qvalues_match_generic_forward() {
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let net = CartPoleNet::random(&mut rng);
            let s = CartState::new(rng.normal(), rng.normal(), rng.normal() * 0.1, rng.normal());
            let q = net.qvalues(&s);
            let g = net.mlp().forward(&s.to_array()).unwrap();
            assert_abs_diff_eq!(q[0], g[0], epsilon = 1e-12);
            assert_abs_diff_eq!(q[1], g[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn epsilon_policy() {
        let mut rng = Rng::new(3);
        assert_eq!(act_epsilon([1.0, 2.0], 0.0, &mut rng), Action::Right);
        assert_eq!(act_epsilon([0.0, 0.0], 0.0, &mut rng), Action::Left);
        let n = 10_000;
        let rights = (0..n)
            .filter(|_| act_epsilon([5.0, 0.0], 1.0, &mut rng) == Action::Right)
            .count();
        assert!((rights as f64 / n as f64 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn vectorize_round_trip_and_errors() {
        let net = CartPoleNet::random(&mut Rng::new(10));
        let v = net.vectorize();
        assert_eq!(CartPoleNet::devectorize(&v).unwrap(), net);
        assert_eq!(CartPoleNet::devectorize(&vec![0.0; 212]).unwrap(), CartPoleNet::zeros());
        assert!(CartPoleNet::devectorize(&vec![0.0; 211]).is_err());
        assert!(WeightVector::new(vec![0.0; 213]).is_err());
    }

    #[test]
    fn canonical_layout_probe() {
        // Perturbing index 120 + u (hidden bias u) must act like perturbing
        // every incoming weight of hidden unit u against an input of ones.
        let base = CartPoleNet::random(&mut Rng::new(21));
        let v = base.vectorize();
        let s = CartState::new(1.0, 1.0, 1.0, 1.0);
        for u in [0, 7, 29] {
            let mut by_bias = v.clone().into_inner();
            by_bias[120 + u] += 0.25;
            let mut by_weight = v.clone().into_inner();
            by_weight[u * 4] += 0.25;
            let a = CartPoleNet::devectorize(&by_bias).unwrap().qvalues(&s);
            let b = CartPoleNet::devectorize(&by_weight).unwrap().qvalues(&s);
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
            assert_ne!(a, base.qvalues(&s));
        }
        // Indices 150.. are the output layer: zeroing them zeroes Q except the bias.
        let mut w = v.into_inner();
        for x in &mut w[150..210] {
            *x = 0.0;
        }
        let q = CartPoleNet::devectorize(&w).unwrap().qvalues(&s);
        assert_eq!(q, [w[210], w[211]]);
    }

    #[test]
    fn replay_buffer_ring() {
        let mut buf = ReplayBuffer::new(3);
        let e = |x: f64| Experience {
            state: CartState::new(x, 0.0, 0.0, 0.0),
            action: Action::Left,
            reward: 1.0,
            next: CartState::default(),
            terminal: false,
        };
        for i in 0..5 {
            buf.push(e(i as f64));
        }
        assert_eq!(buf.len(), 3);
        let mut xs: Vec<f64> = buf.sample(3, &mut Rng::new(1)).iter().map(|e| e.state.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        assert_eq!(buf.sample(10, &mut Rng::new(1)).len(), 3);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig {
            budget_steps: 100,
            ..Default::default()
        };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert_abs_diff_eq!(cfg.epsilon_at(25), 0.525, epsilon = 1e-12);
        assert_abs_diff_eq!(cfg.epsilon_at(50), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(cfg.epsilon_at(99), 0.05, epsilon = 1e-12);
        for s in 0..100 {
            assert!((0.0..=1.0).contains(&cfg.epsilon_at(s)));
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut rng = Rng::new(0);
        for cfg in [
            TrainConfig { discount: 0.0, ..Default::default() },
            TrainConfig { discount: 1.5, ..Default::default() },
            TrainConfig { epsilon_start: 1.2, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(train_agent(&cfg, &mut rng).is_err());
        }
    }

    #[test]
    fn zero_budget_returns_initialization() {
        let cfg = TrainConfig {
            budget_steps: 0,
            ..Default::default()
        };
        let trained = train_agent(&cfg, &mut Rng::new(31)).unwrap();
        let init = CartPoleNet::random(&mut Rng::new(31));
        assert_eq!(trained, init);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            budget_steps: 600,
            ..Default::default()
        };
        let a = train_agent(&cfg, &mut Rng::new(5)).unwrap();
        let b = train_agent(&cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a.vectorize().as_slice(), b.vectorize().as_slice());
    }

    #[test]
    fn snapshots_are_ordered() {
        let cfg = TrainConfig {
            budget_steps: 300,
            ..Default::default()
        };
        let out = train_agent_with_snapshots(&cfg, &[300, 0, 150], &mut Rng::new(2)).unwrap();
        let steps: Vec<usize> = out.snapshots.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, vec![0, 150, 300]);
        assert_eq!(out.snapshots[2].1, out.net);
        assert_eq!(out.snapshots[0].1, CartPoleNet::random(&mut Rng::new(2)));
    }

    #[test]
    fn zero_net_survives_like_constant_policy() {
        let st = survival_time(&CartPoleNet::zeros(), 100, &mut Rng::new(77));
        assert!((st - 9.0).abs() <= 2.0, "{st}");
    }

    #[test]
    fn evaluation_does_not_mutate() {
        let net = CartPoleNet::random(&mut Rng::new(1));
        let copy = net.clone();
        survival_time(&net, 10, &mut Rng::new(2));
        assert_eq!(net, copy);
    }
}
