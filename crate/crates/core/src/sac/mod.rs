//! Discrete soft actor-critic over cost-map observations, trained by
//! interposed sampling from the hybrid planner.

mod checkpoint;
pub mod nn;
mod networks;
mod observation;
mod reward;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use networks::{
    update, Encoder, Forward, Grads, Layer, LossParams, Losses, NetConfig, Networks, Optimizers,
    Targets, Transition, ACTIONS, PROB_FLOOR,
};
pub use observation::{
    encode_observation, ObsParams, Observation, Window, CHANNELS, CH_CLASS, CH_COST,
    CH_FUTURE_PATH, CH_PAST_PATH, CH_PED_PAST, CH_PED_PREDICTED, SCALARS,
};
pub use reward::{reward, RewardParams};
pub use train::{train, TrainParams, TrainReport, TrainRow};

use crate::error::{Error, Result};
use crate::world::SpeedAction;
use nn::softmax;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacParams {
    pub alpha: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub polyak_tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Training steps over which β goes from 0 to 1.
    pub anneal_steps: u64,
    /// Softmax temperature applied to the planner's action values.
    pub planner_temperature: f64,
    /// Environment steps between gradient updates.
    pub update_every: u64,
    pub net: NetConfig,
    pub obs: ObsParams,
}

impl Default for SacParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            gamma: 0.99,
            learning_rate: 3e-4,
            polyak_tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            anneal_steps: 20_000,
            planner_temperature: 2.0,
            update_every: 1,
            net: NetConfig::default(),
            obs: ObsParams::default(),
        }
    }
}

impl SacParams {
    pub fn loss_params(&self) -> LossParams {
        LossParams {
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sac: {m}")));
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and at most buffer_capacity");
        }
        if self.net.filters.is_empty() || self.net.hidden.is_empty() {
            return bad("network needs at least one convolution and one dense layer");
        }
        if self.net.grid_size != self.obs.size || !self.obs.size.is_power_of_two() {
            return bad("net.grid_size must equal obs.size and be a power of two");
        }
        if !(self.alpha >= 0.0 && self.planner_temperature > 0.0 && (0.0..=1.0).contains(&self.polyak_tau)) {
            return bad("alpha >= 0, planner_temperature > 0, polyak_tau in [0, 1] required");
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
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

    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample of `n` distinct transitions (all of them if fewer).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Train,
    Test,
}

/// q = (1 − β)·softmax(values / T) + β·π
pub fn interposed_distribution(
    planner_values: &[f64; ACTIONS],
    policy: &[f64; ACTIONS],
    beta: f64,
    temperature: f64,
) -> [f64; ACTIONS] {
    let scaled: Vec<f64> = planner_values.iter().map(|v| v / temperature).collect();
    let planner = softmax(&scaled);
    let mut q = [0.0; ACTIONS];
    for a in 0..ACTIONS {
        q[a] = (1.0 - beta) * planner[a] + beta * policy[a];
    }
    q
}

/// Test-mode action: argmax of the policy logits.
pub fn greedy_action(nets: &Networks, o: &Observation) -> SpeedAction {
    SpeedAction::from_index(argmax(&nets.logits(o))).expect("action index")
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |b, a| if xs[a] > xs[b] { a } else { b })
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64; ACTIONS], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (a, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return a;
        }
    }
    (0..ACTIONS).rev().find(|&a| p[a] > 0.0).unwrap_or(0)
}

/// Networks, optimizer state and the training-step counter driving β.
#[derive(Clone, Debug)]
pub struct Learner {
    pub nets: Networks,
    pub opt: Optimizers,
    pub params: SacParams,
    pub train_steps: u64,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(params: SacParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let nets = Networks::new(&params.net, rng);
        Ok(Self::from_networks(nets, params))
    }

    pub fn from_networks(nets: Networks, params: SacParams) -> Self {
        Self {
            opt: Optimizers::new(&nets, params.learning_rate),
            nets,
            params,
            train_steps: 0,
        }
    }

    pub fn beta(&self) -> f64 {
        if self.params.anneal_steps == 0 {
            1.0
        } else {
            (self.train_steps as f64 / self.params.anneal_steps as f64).min(1.0)
        }
    }

    /// Distribution actions are drawn from in training mode.
    pub fn sampling_distribution(&self, o: &Observation, planner_values: &[f64; ACTIONS]) -> [f64; ACTIONS] {
        interposed_distribution(
            planner_values,
            &self.nets.policy(o),
            self.beta(),
            self.params.planner_temperature,
        )
    }

    /// Train: sample from the interposed distribution (requires the planner's
    /// action values). Test: argmax of the policy logits, planner-free.
    pub fn act<R: Rng + ?Sized>(
        &self,
        o: &Observation,
        planner_values: Option<&[f64; ACTIONS]>,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<SpeedAction> {
        let a = match mode {
            ActMode::Test => return Ok(greedy_action(&self.nets, o)),
            ActMode::Train => {
                let values = planner_values.ok_or_else(|| {
                    Error::Config("training-mode action requires planner action values".into())
                })?;
                sample_categorical(&self.sampling_distribution(o, values), rng)
            }
        };
        Ok(SpeedAction::from_index(a).expect("action index"))
    }

    pub fn update(&mut self, batch: &[&Transition]) -> Result<Losses> {
        let lp = self.params.loss_params();
        update(&mut self.nets, &mut self.opt, batch, &lp, self.params.polyak_tau)
    }
}
