//! Admission policies: the double-Q learner with experience replay and the
//! greedy baseline, plus policy evaluation.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use crate::env::{encode_state, Action, MetaSliceEnv, SystemState};
use crate::error::Error;
use crate::neural::{Architecture, QNetwork};
use crate::resources::ResourceVector;
use crate::{rng_stream, streams, SimRng};

/// One arrival-to-arrival transition, states already encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Bounded FIFO experience store with uniform minibatch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
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

    /// Stores an experience, overwriting the oldest once full.
    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, slot: usize) -> &Experience {
        &self.items[slot]
    }

    /// Distinct slots drawn uniformly; `batch` is clamped to the buffer size.
    pub fn sample_slots<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        index::sample(rng, self.items.len(), batch.min(self.items.len())).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Experience> {
        self.sample_slots(batch, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        (self.start + (self.end - self.start) * frac).max(self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_steps` over which epsilon decays.
    pub epsilon_decay_fraction: f64,
    /// Discount `α` of the double-Q target.
    pub discount: f64,
    pub learning_rate: f64,
    /// Target network sync period `C`, in steps.
    pub target_sync: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Experiences stored before the first update.
    pub warmup: usize,
    pub total_steps: u64,
    /// Optional L2 clip of the minibatch gradient. Off by default.
    pub grad_clip: Option<f64>,
    pub trunk: Vec<usize>,
    pub stream_hidden: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epsilon_start: 1.0,
            epsilon_end: 0.001,
            epsilon_decay_fraction: 0.5,
            discount: 0.9,
            learning_rate: 1e-3,
            target_sync: 10_000,
            batch_size: 32,
            replay_capacity: 100_000,
            warmup: 1_000,
            total_steps: 375_000,
            grad_clip: None,
            trunk: vec![64, 64],
            stream_hidden: 32,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=self.epsilon_start).contains(&self.epsilon_end) {
            return bad("epsilon must satisfy 0 <= end <= start <= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon decay fraction must be in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.target_sync == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("target sync, batch size and replay capacity must be positive");
        }
        if self.batch_size > self.replay_capacity {
            return bad("batch size exceeds replay capacity");
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0) {
            return bad("gradient clip must be positive");
        }
        if self.trunk.contains(&0) || self.stream_hidden == 0 {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_steps: (self.total_steps as f64 * self.epsilon_decay_fraction).round() as u64,
        }
    }

    pub fn architecture(&self, input: usize) -> Architecture {
        Architecture {
            input,
            trunk: self.trunk.clone(),
            stream_hidden: self.stream_hidden,
            actions: 2,
        }
    }
}

/// Index of the largest Q-value; ties go to reject.
pub fn greedy_action(q: &[f64]) -> Action {
    if q[Action::Accept.index()] > q[Action::Reject.index()] {
        Action::Accept
    } else {
        Action::Reject
    }
}

/// Epsilon-greedy action selection. One uniform draw decides whether to
/// explore; exploring draws a second uniform action.
pub fn act<R: Rng + ?Sized>(net: &QNetwork, encoding: &[f64], epsilon: f64, rng: &mut R) -> Result<Action, Error> {
    if rng.random::<f64>() < epsilon {
        return Ok(Action::from_index(rng.random_range(0..Action::ALL.len())));
    }
    Ok(greedy_action(&net.forward(encoding)?))
}

/// Double-Q targets `r + α Q̄(s', argmax_a Q(s', a; θ); θ̄)`: the online
/// network picks the action, the target network scores it.
pub fn double_q_target(
    next_states: &Array2<f64>,
    rewards: &[f64],
    online: &QNetwork,
    target: &QNetwork,
    discount: f64,
) -> Result<Vec<f64>, Error> {
    let q_online = online.forward_batch(next_states.view())?;
    let q_target = target.forward_batch(next_states.view())?;
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let row = q_online.row(i);
            let a = greedy_action(row.as_slice().expect("contiguous row"));
            r + discount * q_target[[i, a.index()]]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// 1-based index of the step just taken.
    pub step: u64,
    pub epsilon: f64,
    pub action: Action,
    pub reward: f64,
    pub class_id: usize,
    pub accepted: bool,
    /// Minibatch loss, absent during warm-up.
    pub loss: Option<f64>,
}

/// The double-Q learner: online and target networks, replay and the
/// epsilon schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainerConfig,
    schedule: EpsilonSchedule,
    online: QNetwork,
    target: QNetwork,
    buffer: ReplayBuffer,
    explore_rng: SimRng,
    replay_rng: SimRng,
    step: u64,
    encoding: Vec<f64>,
}

impl Trainer {
    /// Builds the networks for an encoding of width `input`, seeding
    /// initialization, exploration and replay from their own streams.
    pub fn new(cfg: TrainerConfig, input: usize, seed: u64) -> Result<Self, Error> {
        cfg.validate()?;
        let mut init_rng = rng_stream(seed, streams::INIT);
        let online = QNetwork::new(cfg.architecture(input), &mut init_rng)?;
        let target = online.clone();
        Ok(Trainer {
            schedule: cfg.epsilon(),
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            explore_rng: rng_stream(seed, streams::EXPLORE),
            replay_rng: rng_stream(seed, streams::REPLAY),
            online,
            target,
            step: 0,
            encoding: vec![0.0; input],
            cfg,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.value(self.step)
    }

    /// One iteration: act, step the environment, store, update from a
    /// minibatch once warmed up, and sync the target every `C` steps.
    pub fn train_step(&mut self, env: &mut MetaSliceEnv) -> Result<StepDiagnostics, Error> {
        let epsilon = self.epsilon();
        let state = env.state();
        env.encode(&state, &mut self.encoding);
        let s = self.encoding.clone();
        let action = act(&self.online, &s, epsilon, &mut self.explore_rng)?;

        let outcome = env.step(action)?;
        env.encode(&outcome.state, &mut self.encoding);
        self.buffer.push(Experience {
            state: s,
            action,
            reward: outcome.reward,
            next_state: self.encoding.clone(),
        });

        let loss = if self.buffer.len() >= self.cfg.warmup.max(self.cfg.batch_size) {
            Some(self.update()?)
        } else {
            None
        };

        self.step += 1;
        if self.step.is_multiple_of(self.cfg.target_sync) {
            self.online.clone_into(&mut self.target)?;
        }
        Ok(StepDiagnostics {
            step: self.step,
            epsilon,
            action,
            reward: outcome.reward,
            class_id: outcome.info.class_id,
            accepted: outcome.info.accepted,
            loss,
        })
    }

    fn update(&mut self) -> Result<f64, Error> {
        let width = self.encoding.len();
        let slots = self.buffer.sample_slots(self.cfg.batch_size, &mut self.replay_rng);
        let n = slots.len();
        let mut states = Array2::zeros((n, width));
        let mut next_states = Array2::zeros((n, width));
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for (row, &slot) in slots.iter().enumerate() {
            let e = self.buffer.get(slot);
            states.row_mut(row).assign(&ndarray::ArrayView1::from(&e.state[..]));
            next_states
                .row_mut(row)
                .assign(&ndarray::ArrayView1::from(&e.next_state[..]));
            actions.push(e.action.index());
            rewards.push(e.reward);
        }
        let targets = double_q_target(&next_states, &rewards, &self.online, &self.target, self.cfg.discount)?;
        let (loss, mut grads) = self.online.backward_batch(states.view(), &actions, &targets)?;
        if let Some(max) = self.cfg.grad_clip {
            grads.clip_norm(max);
        }
        self.online.sgd_step(&grads, self.cfg.learning_rate)?;
        Ok(loss)
    }

    pub fn into_online(self) -> QNetwork {
        self.online
    }
}

/// Something that answers accept/reject at a decision epoch.
///
/// `net_demand` is what admission would newly allocate right now; learned
/// policies ignore it, the greedy baseline relies on it.
pub trait Policy {
    fn decide(&mut self, state: &SystemState, net_demand: &ResourceVector) -> Result<Action, Error>;
}

/// Accept iff the request's net demand fits in the available resources.
pub fn greedy_policy(state: &SystemState, net_demand: &ResourceVector) -> Action {
    if net_demand.fits_within(&state.available) {
        Action::Accept
    } else {
        Action::Reject
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Greedy;

impl Policy for Greedy {
    fn decide(&mut self, state: &SystemState, net_demand: &ResourceVector) -> Result<Action, Error> {
        Ok(greedy_policy(state, net_demand))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RejectAll;

impl Policy for RejectAll {
    fn decide(&mut self, _: &SystemState, _: &ResourceVector) -> Result<Action, Error> {
        Ok(Action::Reject)
    }
}

/// Argmax of a trained Q-network (no exploration).
#[derive(Debug, Clone)]
pub struct QPolicy {
    net: QNetwork,
    capacity: ResourceVector,
    classes: usize,
    buf: Vec<f64>,
}

impl QPolicy {
    pub fn new(net: QNetwork, capacity: ResourceVector, classes: usize) -> Result<Self, Error> {
        let width = 2 * capacity.len() + classes;
        if net.architecture().input != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: net.architecture().input,
            });
        }
        Ok(QPolicy {
            net,
            capacity,
            classes,
            buf: vec![0.0; width],
        })
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }
}

impl Policy for QPolicy {
    fn decide(&mut self, state: &SystemState, _: &ResourceVector) -> Result<Action, Error> {
        encode_state(state, &self.capacity, self.classes, &mut self.buf);
        Ok(greedy_action(&self.net.forward(&self.buf)?))
    }
}

/// Reward and acceptance tallies over decision epochs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalMetrics {
    pub epochs: u64,
    pub total_reward: f64,
    /// Arrivals per class (index `g - 1`).
    pub arrivals: Vec<u64>,
    /// Admitted requests per class.
    pub accepted: Vec<u64>,
}

impl EvalMetrics {
    pub fn new(classes: usize) -> Self {
        EvalMetrics {
            epochs: 0,
            total_reward: 0.0,
            arrivals: vec![0; classes],
            accepted: vec![0; classes],
        }
    }

    pub fn record(&mut self, class_id: usize, accepted: bool, reward: f64) {
        self.epochs += 1;
        self.total_reward += reward;
        self.arrivals[class_id - 1] += 1;
        if accepted {
            self.accepted[class_id - 1] += 1;
        }
    }

    /// Mean reward per decision epoch.
    pub fn average_reward(&self) -> f64 {
        if self.epochs == 0 {
            0.0
        } else {
            self.total_reward / self.epochs as f64
        }
    }

    pub fn acceptance(&self) -> f64 {
        let arrived: u64 = self.arrivals.iter().sum();
        if arrived == 0 {
            0.0
        } else {
            self.accepted.iter().sum::<u64>() as f64 / arrived as f64
        }
    }

    pub fn class_acceptance(&self) -> Vec<f64> {
        self.arrivals
            .iter()
            .zip(&self.accepted)
            .map(|(&n, &a)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }
}

/// Runs `policy` for `horizon` decision epochs without exploration.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &mut P,
    env: &mut MetaSliceEnv,
    horizon: u64,
) -> Result<EvalMetrics, Error> {
    let mut metrics = EvalMetrics::new(env.config().classes.len());
    for _ in 0..horizon {
        let state = env.state();
        let action = policy.decide(&state, &env.pending_net_demand())?;
        let step = env.step(action)?;
        metrics.record(step.info.class_id, step.info.accepted, step.reward);
    }
    Ok(metrics)
}
