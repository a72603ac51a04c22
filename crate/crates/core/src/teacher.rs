//! DQN teacher: replay buffer, epsilon-greedy exploration, TD targets from
//! a softly updated target network, and the episodic training loop.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{write_file, DayProfile, NormalizationStats};
use crate::diffmath::{argmin, AdamState, DenseNet};
use crate::envsim::{Simulator, N_FEATURES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    /// Soft target update weight: `target <- blend * online + (1 - blend) * target`.
    pub target_blend: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all environment steps over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            learning_rate: 0.001,
            batch_size: 1000,
            buffer_size: 5000,
            target_blend: 0.1,
            gamma: 0.99,
            episodes: 2000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.8,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_end)
            && (0.0..=1.0).contains(&self.epsilon_decay_fraction);
        if !eps_ok
            || !(self.learning_rate > 0.0)
            || !(0.0..=1.0).contains(&self.gamma)
            || !(0.0..=1.0).contains(&self.target_blend)
            || self.batch_size == 0
            || self.buffer_size < self.batch_size
            || self.hidden_layers.contains(&0)
        {
            return Err(Error::Config(format!("invalid teacher settings: {self:?}")));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, n_features: usize, n_actions: usize) -> Vec<usize> {
        let mut sizes = vec![n_features];
        sizes.extend(&self.hidden_layers);
        sizes.push(n_actions);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: [f64; N_FEATURES],
    pub action_index: usize,
    pub cost: f64,
    pub next_state: [f64; N_FEATURES],
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample of distinct indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch_size: usize) -> Vec<usize> {
        sample(rng, self.items.len(), batch_size.min(self.items.len())).into_vec()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s0,s1,s2,s3,s4,action,cost,n0,n1,n2,n3,n4,terminal\n");
        for t in &self.items {
            for v in &t.state {
                let _ = write!(out, "{v},");
            }
            let _ = write!(out, "{},{},", t.action_index, t.cost);
            for v in &t.next_state {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", u8::from(t.terminal));
        }
        out
    }

    /// Parses a buffer dump. Entries are stored in file order.
    pub fn from_csv(text: &str, source_name: &str, capacity: usize) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            msg,
        };
        let mut buf = Self::new(capacity.max(1));
        for (idx, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 2 * N_FEATURES + 3 {
                return Err(err(idx + 1, format!("expected {} columns, found {}", 2 * N_FEATURES + 3, cols.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(idx + 1, format!("invalid number '{s}'")))
            };
            let mut state = [0.0; N_FEATURES];
            let mut next_state = [0.0; N_FEATURES];
            for k in 0..N_FEATURES {
                state[k] = num(cols[k])?;
                next_state[k] = num(cols[N_FEATURES + 2 + k])?;
            }
            let action_index = cols[N_FEATURES]
                .trim()
                .parse()
                .map_err(|_| err(idx + 1, format!("invalid action '{}'", cols[N_FEATURES])))?;
            let terminal = match cols[2 * N_FEATURES + 2].trim() {
                "0" => false,
                "1" => true,
                other => return Err(err(idx + 1, format!("invalid terminal flag '{other}'"))),
            };
            if buf.len() == buf.capacity {
                return Err(err(idx + 1, format!("more than {capacity} transitions")));
            }
            buf.push(Transition {
                state,
                action_index,
                cost: num(cols[N_FEATURES + 1])?,
                next_state,
                terminal,
            });
        }
        Ok(buf)
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, step: usize) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherAgent {
    pub online: DenseNet,
    pub target: DenseNet,
    pub adam: AdamState,
    pub gamma: f64,
    pub target_blend: f64,
}

impl TeacherAgent {
    pub fn new<R: Rng + ?Sized>(config: &TeacherConfig, n_features: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let online = DenseNet::new(&config.layer_sizes(n_features, n_actions), rng)?;
        Ok(Self::from_network(online, config))
    }

    /// Agent whose target network starts as a copy of `online`.
    pub fn from_network(online: DenseNet, config: &TeacherConfig) -> Self {
        Self {
            target: online.clone(),
            adam: AdamState::new(online.param_count(), config.learning_rate),
            online,
            gamma: config.gamma,
            target_blend: config.target_blend,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.online.output_size()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    /// Cost-minimizing action; ties go to the lowest index.
    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(argmin(&self.q_values(state)?))
    }

    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if rng.gen::<f64>() < epsilon {
            Ok(rng.gen_range(0..self.n_actions()))
        } else {
            self.greedy_action(state)
        }
    }

    /// `c + gamma * min_u Q_target(x', u)`, without the bootstrap on terminal transitions.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Contract("td targets need a non-empty batch".into()));
        }
        let next = states_matrix(batch.iter().map(|t| &t.next_state));
        let q_next = self.target.forward_batch(next.view())?;
        Ok(batch
            .iter()
            .zip(q_next.rows())
            .map(|(t, q)| {
                if t.terminal {
                    t.cost
                } else {
                    let best = q.iter().copied().fold(f64::INFINITY, f64::min);
                    t.cost + self.gamma * best
                }
            })
            .collect())
    }

    /// One Adam step on the mean squared TD error of `batch`, followed by
    /// the soft target update. Returns the loss before the step.
    pub fn train_on_batch(&mut self, batch: &[&Transition]) -> Result<f64> {
        let targets = self.td_targets(batch)?;
        let n_actions = self.n_actions();
        if let Some(t) = batch.iter().find(|t| t.action_index >= n_actions) {
            return Err(Error::Contract(format!("transition action {} out of range", t.action_index)));
        }
        let states = states_matrix(batch.iter().map(|t| &t.state));
        let n = batch.len() as f64;
        let (loss, grads) = self.online.forward_backward(states.view(), |q| {
            let mut delta = Array2::zeros(q.dim());
            let mut loss = 0.0;
            for (i, t) in batch.iter().enumerate() {
                let err = q[[i, t.action_index]] - targets[i];
                loss += err * err;
                delta[[i, t.action_index]] = 2.0 * err / n;
            }
            (loss / n, delta)
        })?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite TD loss {loss}")));
        }
        self.adam.step(self.online.params_mut(), &grads)?;
        self.target.blend_from(&self.online, self.target_blend)?;
        Ok(loss)
    }

    /// Samples `batch_size` distinct transitions and trains on them.
    /// Returns `None` (and does nothing) while the buffer is too small.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, batch_size: usize, rng: &mut R) -> Result<Option<f64>> {
        if buffer.len() < batch_size || batch_size == 0 {
            return Ok(None);
        }
        let idx = buffer.sample_indices(rng, batch_size);
        let batch: Vec<&Transition> = idx.iter().map(|&i| &buffer.items[i]).collect();
        self.train_on_batch(&batch).map(Some)
    }
}

fn states_matrix<'a>(rows: impl ExactSizeIterator<Item = &'a [f64; N_FEATURES]>) -> Array2<f64> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * N_FEATURES);
    for r in rows {
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, N_FEATURES), flat).expect("rows have fixed width")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    pub episode_cost: f64,
    /// Mean TD loss over the episode's training steps; `None` before training starts.
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedTeacher {
    pub agent: TeacherAgent,
    pub buffer: ReplayBuffer,
    pub log: Vec<EpisodeLog>,
}

impl TrainedTeacher {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("episode,epsilon,episode_cost,mean_loss\n");
        for e in &self.log {
            let loss = e.mean_loss.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", e.episode, e.epsilon, e.episode_cost, loss);
        }
        out
    }
}

/// Epsilon-greedy DQN training over days sampled with replacement.
/// Each episode starts from a uniformly random state of charge; training
/// runs after every environment step once the buffer holds a full batch.
pub fn train_teacher(config: &TeacherConfig, sim: &Simulator, days: &[DayProfile], seed: u64) -> Result<TrainedTeacher> {
    config.validate()?;
    if days.is_empty() {
        return Err(Error::Config("teacher training needs at least one day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_actions = sim.params.battery.n_actions();
    let mut agent = TeacherAgent::new(config, N_FEATURES, n_actions, &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.buffer_size);
    let horizon = sim.horizon();
    let total_steps = config.episodes * horizon;
    let schedule = EpsilonSchedule {
        start: config.epsilon_start,
        end: config.epsilon_end,
        decay_steps: (config.epsilon_decay_fraction * total_steps as f64).round() as usize,
    };
    let capacity = sim.params.battery.capacity_kwh;
    let mut log = Vec::with_capacity(config.episodes);
    let mut global_step = 0;
    for episode in 0..config.episodes {
        let day = &days[rng.gen_range(0..days.len())];
        let mut state = sim.reset(day, rng.gen_range(0.0..=capacity))?;
        let epsilon = schedule.value(global_step);
        let mut episode_cost = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for step in 0..horizon {
            let eps = schedule.value(global_step);
            let action = agent.select_action(&state.normalized, eps, &mut rng)?;
            let out = sim.step(&state, action, day)?;
            episode_cost += out.cost_eur;
            buffer.push(Transition {
                state: state.normalized,
                action_index: action,
                cost: out.cost_eur,
                next_state: out.next_state.normalized,
                terminal: step + 1 == horizon,
            });
            match agent.train_step(&buffer, config.batch_size, &mut rng) {
                Ok(Some(loss)) => {
                    loss_sum += loss;
                    loss_count += 1;
                }
                Ok(None) => {}
                Err(Error::Diverged(msg)) => {
                    return Err(Error::Diverged(format!(
                        "{msg} (seed {seed}, episode {episode}, step {step})"
                    )))
                }
                Err(e) => return Err(e),
            }
            state = out.next_state;
            global_step += 1;
        }
        log.push(EpisodeLog {
            episode,
            epsilon,
            episode_cost,
            mean_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
        });
    }
    Ok(TrainedTeacher { agent, buffer, log })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"HDQN";
const CHECKPOINT_VERSION: u32 = 1;

/// A frozen teacher network plus the normalization statistics it was trained with.
///
/// Binary layout (little endian): magic `HDQN`, `u32` version, `u32` layer
/// count, `u32` per layer size, six `f64` statistics (price, demand, pv
/// min/max), `u32` parameter count, then every parameter as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCheckpoint {
    pub network: DenseNet,
    pub stats: NormalizationStats,
}

impl TeacherCheckpoint {
    /// Rounds the parameters to the `f32` storage precision, so the
    /// in-memory checkpoint equals what a reload would produce.
    pub fn from_network(network: &DenseNet, stats: NormalizationStats) -> Self {
        let params: Vec<f64> = network.params().iter().map(|&p| p as f32 as f64).collect();
        Self {
            network: DenseNet::from_params(network.sizes(), params).expect("same layout"),
            stats,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.network.sizes();
        let mut out = Vec::with_capacity(64 + 4 * self.network.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in self.stats.as_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.network.param_count() as u32).to_le_bytes());
        for &p in self.network.params() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            source_name: source_name.to_string(),
            line: 1,
            msg: format!("corrupt checkpoint: {msg}"),
        };
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("wrong magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n_sizes = u32_at(take(4)?) as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(bad("implausible layer count"));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let s = u32_at(take(4)?) as usize;
            if s == 0 || s > 1 << 16 {
                return Err(bad("implausible layer size"));
            }
            sizes.push(s);
        }
        let mut stats = [0.0; 6];
        for v in &mut stats {
            *v = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        }
        let n_params = u32_at(take(4)?) as usize;
        if n_params != DenseNet::count_params(&sizes) {
            return Err(bad("parameter count does not match layer sizes"));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let v = f32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
            params.push(v as f64);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            network: DenseNet::from_params(&sizes, params)?,
            stats: NormalizationStats::from_array(stats),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
