//! Double Q-learning on episodes that undo synthetic distortions.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::NUM_ACTIONS;
use crate::agent::{q_values, select_eps_greedy};
use crate::color::RgbImage;
use crate::distort::{pair_seed, synthesize_pair, DistortConfig};
use crate::env::{Episode, Transition};
use crate::error::{Error, Result};
use crate::features::{ContextFeature, ContextProvider, StateLayout};
use crate::nn::{
    adam_update, init_network, save_checkpoint, AdamState, GradientSet, LrSchedule, MlpNetwork, PAPER_HIDDEN,
};

/// Fixed-capacity ring buffer; once full, the oldest entry is overwritten.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
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

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `n` uniform draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&T>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(Error::InsufficientData {
                needed: n.max(1),
                available: self.items.len(),
            });
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    pub replay_capacity: usize,
    pub warmup: usize,
    pub target_sync_every: u64,
    pub max_episode_steps: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub grad_clip: f64,
    /// Environment steps to run.
    pub total_steps: u64,
    /// Gradient steps between checkpoints; 0 disables.
    pub checkpoint_every: u64,
    /// Episodes per training-log row.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 4,
            base_lr: 1e-5,
            min_lr: 1e-8,
            lr_decay: 0.96,
            lr_decay_every: 5000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 100_000,
            replay_capacity: 50_000,
            warmup: 1_000,
            target_sync_every: 1_000,
            max_episode_steps: 20,
            seed: 0,
            hidden: PAPER_HIDDEN.to_vec(),
            grad_clip: 1.0,
            total_steps: 200_000,
            checkpoint_every: 0,
            log_every: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 19] = [
        "gamma",
        "batch_size",
        "base_lr",
        "min_lr",
        "lr_decay",
        "lr_decay_every",
        "eps_start",
        "eps_end",
        "eps_decay_steps",
        "replay_capacity",
        "warmup",
        "target_sync_every",
        "max_episode_steps",
        "seed",
        "hidden",
        "grad_clip",
        "total_steps",
        "checkpoint_every",
        "log_every",
    ];

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.base_lr,
            min: self.min_lr,
            decay: self.lr_decay,
            decay_every: self.lr_decay_every,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "gamma" => self.gamma = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "min_lr" => self.min_lr = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "eps_start" => self.eps_start = parse(key, value)?,
            "eps_end" => self.eps_end = parse(key, value)?,
            "eps_decay_steps" => self.eps_decay_steps = parse(key, value)?,
            "replay_capacity" => self.replay_capacity = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "target_sync_every" => self.target_sync_every = parse(key, value)?,
            "max_episode_steps" => self.max_episode_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|v| parse(key, v))
                    .collect::<Result<Vec<usize>>>()?
            }
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
            seen.push(k.trim().to_string());
        }
        Ok(seen)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "gamma = {}\nbatch_size = {}\nbase_lr = {}\nmin_lr = {}\nlr_decay = {}\nlr_decay_every = {}\n\
             eps_start = {}\neps_end = {}\neps_decay_steps = {}\nreplay_capacity = {}\nwarmup = {}\n\
             target_sync_every = {}\nmax_episode_steps = {}\nseed = {}\nhidden = {}\ngrad_clip = {}\n\
             total_steps = {}\ncheckpoint_every = {}\nlog_every = {}\n",
            self.gamma,
            self.batch_size,
            self.base_lr,
            self.min_lr,
            self.lr_decay,
            self.lr_decay_every,
            self.eps_start,
            self.eps_end,
            self.eps_decay_steps,
            self.replay_capacity,
            self.warmup,
            self.target_sync_every,
            self.max_episode_steps,
            self.seed,
            hidden.join(","),
            self.grad_clip,
            self.total_steps,
            self.checkpoint_every,
            self.log_every,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) {
            return fail("epsilon values must lie in [0, 1]");
        }
        if self.eps_end > self.eps_start {
            return fail("eps_end must not exceed eps_start");
        }
        if self.replay_capacity < self.batch_size {
            return fail("replay_capacity must hold at least one batch");
        }
        if self.target_sync_every == 0 {
            return fail("target_sync_every must be >= 1");
        }
        if self.max_episode_steps == 0 {
            return fail("max_episode_steps must be >= 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden widths must be positive");
        }
        if !(self.base_lr > 0.0 && self.min_lr >= 0.0 && self.lr_decay > 0.0) {
            return fail("learning-rate schedule must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        if self.log_every == 0 {
            return fail("log_every must be >= 1");
        }
        Ok(())
    }
}

/// Linear anneal from `eps_start` to `eps_end` over `eps_decay_steps`.
pub fn epsilon_at(step: u64, cfg: &TrainConfig) -> f64 {
    if step >= cfg.eps_decay_steps {
        return cfg.eps_end;
    }
    let t = step as f64 / cfg.eps_decay_steps as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * t
}

/// Online network plus a periodically synchronized copy used for bootstrap values.
#[derive(Clone, Debug)]
pub struct TargetPair {
    pub online: MlpNetwork,
    pub target: MlpNetwork,
    syncs: u64,
}

impl TargetPair {
    pub fn new(online: MlpNetwork) -> Self {
        Self {
            target: online.clone(),
            online,
            syncs: 0,
        }
    }

    pub fn sync_count(&self) -> u64 {
        self.syncs
    }
}

pub fn sync_target(pair: &mut TargetPair) {
    pair.target = pair.online.clone();
    pair.syncs += 1;
}

/// Double-Q regression targets: the online network picks the next action,
/// the target network values it. Terminal items use the reward alone.
pub fn double_q_targets(batch: &[&Transition], pair: &TargetPair, gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return Ok(t.reward as f64);
            }
            let (best, _) = q_values(&pair.online, &t.next_state)?.argmax();
            let value = q_values(&pair.target, &t.next_state)?.get(best);
            Ok(t.reward as f64 + gamma * value as f64)
        })
        .collect()
}

/// Owns the networks, optimizer state and a reusable gradient buffer.
#[derive(Clone, Debug)]
pub struct Learner {
    pub pair: TargetPair,
    pub adam: AdamState<f32>,
    grads: GradientSet<f32>,
    schedule: LrSchedule,
    gamma: f64,
    grad_clip: f64,
}

impl Learner {
    pub fn new(net: MlpNetwork, cfg: &TrainConfig) -> Self {
        let adam = AdamState::new(&net);
        Self::resume(net, adam, cfg)
    }

    pub fn resume(net: MlpNetwork, adam: AdamState<f32>, cfg: &TrainConfig) -> Self {
        Self {
            grads: GradientSet::zeros_like(&net),
            pair: TargetPair::new(net),
            adam,
            schedule: cfg.lr_schedule(),
            gamma: cfg.gamma,
            grad_clip: cfg.grad_clip,
        }
    }

    /// Gradient steps taken so far.
    pub fn iteration(&self) -> u64 {
        self.adam.step()
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr_at(self.iteration())
    }

    /// One minibatch step on `(Q(s)[a] − y)²`; returns the mean loss before
    /// the update. Only the taken action's output receives gradient.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InsufficientData { needed: 1, available: 0 });
        }
        let targets = double_q_targets(batch, &self.pair, self.gamma)?;
        self.train_on_targets(batch, &targets)
    }

    /// As [`Learner::train_step`] with externally supplied regression targets.
    pub fn train_on_targets(&mut self, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
        if batch.len() != targets.len() || batch.is_empty() {
            return Err(Error::dims("targets per batch item", batch.len(), targets.len()));
        }
        self.grads.clear();
        let scale = 2.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (t, &y) in batch.iter().zip(targets) {
            let (q, cache) = self.pair.online.forward_cached(&*t.state)?;
            let err = q[t.action_index] as f64 - y;
            loss += err * err;
            let mut out_grad = [0.0f32; NUM_ACTIONS];
            out_grad[t.action_index] = (scale * err) as f32;
            self.pair.online.accumulate_backward(&cache, &out_grad, &mut self.grads)?;
        }
        self.grads.clip_global_norm(self.grad_clip);
        let lr = self.lr();
        adam_update(&mut self.pair.online, &mut self.adam, &self.grads, lr)?;
        Ok(loss / batch.len() as f64)
    }

    pub fn gradients(&self) -> &GradientSet<f32> {
        &self.grads
    }
}

/// Convenience single-step form of [`Learner::train_step`].
pub fn train_step(learner: &mut Learner, batch: &[&Transition]) -> Result<f64> {
    learner.train_step(batch)
}

/// One (input, target) episode seed.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub input: RgbImage,
    pub target: RgbImage,
    /// Externally exported context feature of `input`, if any.
    pub context: Option<ContextFeature>,
}

/// Supplies training pairs by position; `draw` counts passes over the set so
/// sources may vary the pair between epochs.
pub trait PairSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, index: usize, draw: u64) -> Result<TrainingSample>;
}

impl PairSource for Vec<TrainingSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize, _draw: u64) -> Result<TrainingSample> {
        Ok(self[index].clone())
    }
}

/// Fresh distortion of each reference on every pass.
#[derive(Clone, Debug)]
pub struct SynthesizedPairs {
    pub references: Vec<RgbImage>,
    pub distort: DistortConfig,
    pub seed: u64,
}

impl PairSource for SynthesizedPairs {
    fn len(&self) -> usize {
        self.references.len()
    }

    fn sample(&self, index: usize, draw: u64) -> Result<TrainingSample> {
        let position = draw * self.references.len() as u64 + index as u64;
        let pair = synthesize_pair(
            &self.references[index],
            &format!("reference #{index}"),
            pair_seed(self.seed, position),
            &self.distort,
        )?;
        Ok(TrainingSample {
            input: pair.distorted,
            target: pair.reference,
            context: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextMode {
    Tiny,
    /// Use [`TrainingSample::context`], which must be present and `dim` wide.
    External { dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub loss: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub mean_return: f64,
}

pub const LOG_HEADER: &str = "iteration,loss,epsilon,lr,mean_return";

pub fn write_log(mut w: impl Write, rows: &[LogRow]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.iteration, r.loss, r.epsilon, r.lr, r.mean_return)?;
    }
    Ok(())
}

#[derive(Default)]
pub struct RunOptions {
    /// Continue from this network and optimizer state.
    pub resume: Option<(MlpNetwork, AdamState<f32>)>,
    /// Written every `checkpoint_every` gradient steps.
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub log: Vec<LogRow>,
    pub env_steps: u64,
    pub episodes: u64,
}

/// Runs ε-greedy episodes over `source`, one gradient step per environment
/// step once the replay buffer holds `warmup` transitions. Deterministic for
/// a given configuration and source.
pub fn run_training(
    source: &dyn PairSource,
    cfg: &TrainConfig,
    context: ContextMode,
    opts: RunOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let layout = match context {
        ContextMode::Tiny => StateLayout::tiny(),
        ContextMode::External { dim } => StateLayout { context_dim: dim },
    };
    let mut learner = match opts.resume {
        Some((net, adam)) => {
            crate::nn::check_input_dim(&net, layout.input_dim())?;
            Learner::resume(net, adam, cfg)
        }
        None => Learner::new(init_network(layout.input_dim(), &cfg.hidden, cfg.seed)?, cfg),
    };
    let start_iteration = learner.iteration();
    // A resumed run continues the exploration schedule where it left off.
    let step_offset = if start_iteration > 0 {
        start_iteration + cfg.warmup as u64
    } else {
        0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_u64.rotate_left(32) ^ start_iteration);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(cfg.replay_capacity);
    let min_fill = cfg.warmup.max(cfg.batch_size);

    let mut log = Vec::new();
    let mut env_steps = 0u64;
    let mut episodes = 0u64;
    let mut pending_returns = Vec::new();
    let mut pending_losses = Vec::new();
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut draw = 0u64;

    let flush = |log: &mut Vec<LogRow>, returns: &mut Vec<f64>, losses: &mut Vec<f64>, learner: &Learner, eps| {
        if returns.is_empty() {
            return;
        }
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        log.push(LogRow {
            iteration: learner.iteration(),
            loss: mean(losses),
            epsilon: eps,
            lr: learner.lr(),
            mean_return: mean(returns),
        });
        returns.clear();
        losses.clear();
    };

    'outer: while env_steps < cfg.total_steps {
        order.shuffle(&mut rng);
        for &index in &order {
            if env_steps >= cfg.total_steps {
                break 'outer;
            }
            let sample = source.sample(index, draw)?;
            let provider = match context {
                ContextMode::Tiny => ContextProvider::Tiny,
                ContextMode::External { dim } => {
                    let feature = sample
                        .context
                        .ok_or_else(|| Error::Config(format!("training pair #{index} has no context feature")))?;
                    if feature.dim() != dim {
                        return Err(Error::Config(format!(
                            "context feature of pair #{index} has {} dims, run uses {dim}",
                            feature.dim()
                        )));
                    }
                    ContextProvider::Fixed(feature)
                }
            };
            let mut episode = Episode::reset(sample.input, sample.target, cfg.max_episode_steps)?;
            let mut state = Arc::new(provider.observe(episode.current(), episode.current_lab())?);
            let mut episode_return = 0.0;
            while !episode.is_terminal() && env_steps < cfg.total_steps {
                let eps = epsilon_at(env_steps + step_offset, cfg);
                let q = q_values(&learner.pair.online, &state)?;
                let action = select_eps_greedy(&q, eps, &mut rng);
                let outcome = episode.step_with_q(action, Some(q.get(action)))?;
                let next = Arc::new(provider.observe(episode.current(), episode.current_lab())?);
                buffer.push(Transition::new(
                    state,
                    action.index(),
                    outcome.reward as f32,
                    next.clone(),
                    outcome.terminal,
                )?);
                env_steps += 1;
                episode_return += outcome.reward;
                state = next;

                if buffer.len() >= min_fill {
                    let batch = buffer.sample(cfg.batch_size, &mut rng)?;
                    pending_losses.push(learner.train_step(&batch)?);
                    let it = learner.iteration();
                    if it % cfg.target_sync_every == 0 {
                        sync_target(&mut learner.pair);
                    }
                    if let Some(path) = &opts.checkpoint_path {
                        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
                            save_checkpoint(path, &learner.pair.online, Some(&learner.adam))?;
                        }
                    }
                }
            }
            episodes += 1;
            pending_returns.push(episode_return);
            if pending_returns.len() >= cfg.log_every {
                let eps = epsilon_at(env_steps + step_offset, cfg);
                flush(&mut log, &mut pending_returns, &mut pending_losses, &learner, eps);
            }
        }
        draw += 1;
    }
    let eps = epsilon_at(env_steps + step_offset, cfg);
    flush(&mut log, &mut pending_returns, &mut pending_losses, &learner, eps);
    Ok(TrainOutcome {
        learner,
        log,
        env_steps,
        episodes,
    })
}
