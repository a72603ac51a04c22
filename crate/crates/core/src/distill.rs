//! Policy distillation: turn a trained teacher and its replay buffer into a
//! dataset of Q-vectors, then fit a soft decision tree to the tempered
//! teacher distributions.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::write_file;
use crate::ddt::{crispify, CrispNode, CrispTree, TreeParams};
use crate::diffmath::{argmin, log_softmax_neg, tempered, AdamState, DenseNet, GradBundle};
use crate::envsim::N_FEATURES;
use crate::error::{Error, Result};
use crate::teacher::ReplayBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub depth: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of an L1 penalty on the split weights β, pushing nodes toward
    /// a single feature. 0 disables it.
    pub beta_l1: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            temperature: 0.03,
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.001,
            beta_l1: 0.0,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.beta_l1 >= 0.0 && self.beta_l1.is_finite()) {
            return Err(Error::Config(format!("beta_l1 must be non-negative, got {}", self.beta_l1)));
        }
        if self.depth == 0 || self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("invalid student settings: {self:?}")));
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// Hash (or other identifier) of the teacher checkpoint.
    pub teacher_id: String,
    pub buffer_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationDataset {
    pub states: Vec<[f64; N_FEATURES]>,
    pub teacher_q: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl DistillationDataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_actions(&self) -> usize {
        self.teacher_q.first().map_or(0, Vec::len)
    }

    /// Teacher's greedy (cost-minimizing) action for every record.
    pub fn teacher_actions(&self) -> Vec<usize> {
        self.teacher_q.iter().map(|q| argmin(q)).collect()
    }

    /// CSV with a `# teacher=<id> buffer=<n>` line, a header, then
    /// `s0..s4,q0..q{A-1}` per record.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# teacher={} buffer={}\n",
            self.provenance.teacher_id, self.provenance.buffer_size
        );
        let state_cols: Vec<String> = (0..N_FEATURES).map(|k| format!("s{k}")).collect();
        let q_cols: Vec<String> = (0..self.n_actions()).map(|k| format!("q{k}")).collect();
        let _ = writeln!(out, "{},{}", state_cols.join(","), q_cols.join(","));
        for (s, q) in self.states.iter().zip(&self.teacher_q) {
            let row: Vec<String> = s.iter().chain(q).map(f64::to_string).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| err(1, "empty dataset file".into()))?;
        let mut provenance = Provenance {
            teacher_id: String::new(),
            buffer_size: 0,
        };
        for field in first.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("teacher", v)) => provenance.teacher_id = v.to_string(),
                Some(("buffer", v)) => {
                    provenance.buffer_size = v.parse().map_err(|_| err(1, format!("invalid buffer size '{v}'")))?
                }
                _ => return Err(err(1, format!("unexpected provenance field '{field}'"))),
            }
        }
        let (_, header) = lines.next().ok_or_else(|| err(2, "missing header".into()))?;
        let width = header.split(',').count();
        if width <= N_FEATURES {
            return Err(err(2, "header has no q columns".into()));
        }
        let mut states = Vec::new();
        let mut teacher_q = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| err(idx + 1, "invalid number".into()))?;
            if vals.len() != width {
                return Err(err(idx + 1, format!("expected {width} columns, found {}", vals.len())));
            }
            let mut s = [0.0; N_FEATURES];
            s.copy_from_slice(&vals[..N_FEATURES]);
            states.push(s);
            teacher_q.push(vals[N_FEATURES..].to_vec());
        }
        Ok(Self {
            states,
            teacher_q,
            provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

/// Evaluates the teacher on every buffered state.
pub fn build_dataset(teacher: &DenseNet, buffer: &ReplayBuffer, teacher_id: &str) -> Result<DistillationDataset> {
    if buffer.is_empty() {
        return Err(Error::Usage("cannot distill from an empty replay buffer".into()));
    }
    let mut states = Vec::with_capacity(buffer.len());
    let mut teacher_q = Vec::with_capacity(buffer.len());
    for t in buffer.iter() {
        let q = teacher.forward(&t.state)?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("teacher produced non-finite q values {q:?}")));
        }
        states.push(t.state);
        teacher_q.push(q);
    }
    Ok(DistillationDataset {
        states,
        teacher_q,
        provenance: Provenance {
            teacher_id: teacher_id.to_string(),
            buffer_size: buffer.len(),
        },
    })
}

/// `KL(softmax_neg(q/τ) || o)` where `o` is the student's output
/// distribution. The tree already emits probabilities, so they stand in for
/// the student's tempered softmax. Returns the loss and its gradient with
/// respect to every tree parameter.
pub fn distill_loss(student: &TreeParams, state: &[f64], teacher_q: &[f64], temperature: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; student.param_count()];
    let loss = accumulate_distill_loss(student, state, teacher_q, temperature, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_distill_loss(
    student: &TreeParams,
    state: &[f64],
    teacher_q: &[f64],
    temperature: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if teacher_q.len() != student.n_actions() {
        return Err(Error::Config(format!(
            "teacher has {} actions, student {}",
            teacher_q.len(),
            student.n_actions()
        )));
    }
    let log_target = log_softmax_neg(&tempered(teacher_q, temperature)?);
    let out = student.forward(state)?.action_distribution;
    let mut loss = 0.0;
    let mut out_grad = vec![0.0; out.len()];
    for ((&lt, &o), g) in log_target.iter().zip(&out).zip(&mut out_grad) {
        let pt = lt.exp();
        if pt > 0.0 {
            loss += pt * (lt - o.ln());
            *g = -pt / o;
        }
    }
    student.accumulate_gradients(state, &out_grad, grad)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedStudent {
    pub seed: u64,
    pub params: TreeParams,
    pub tree: CrispTree,
    /// Mean loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainedStudent {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (e, l) in self.loss_curve.iter().enumerate() {
            let _ = writeln!(out, "{e},{l}");
        }
        out
    }
}

/// Minibatch Adam on the mean distillation loss. The tree is initialized
/// and the data reshuffled every epoch from one generator seeded by `seed`.
pub fn train_student(dataset: &DistillationDataset, config: &StudentConfig, seed: u64) -> Result<TrainedStudent> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Usage("distillation dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = TreeParams::random(config.depth, N_FEATURES, dataset.n_actions(), &mut rng)?;
    let mut adam = AdamState::new(params.param_count(), config.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = GradBundle::zeros(params.param_count());
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += accumulate_distill_loss(
                    &params,
                    &dataset.states[i],
                    &dataset.teacher_q[i],
                    config.temperature,
                    &mut grads.values,
                )?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "distillation loss {batch_loss} (seed {seed}, epoch {epoch})"
                )));
            }
            grads.scale(1.0 / batch.len() as f64);
            if config.beta_l1 > 0.0 {
                let n_beta = params.n_nodes() * params.n_features();
                for (g, b) in grads.values[..n_beta].iter_mut().zip(params.values()) {
                    *g += config.beta_l1 * b.signum();
                }
            }
            adam.step(params.values_mut(), &grads)
                .map_err(|e| Error::Diverged(format!("{e} (seed {seed}, epoch {epoch})")))?;
            epoch_loss += batch_loss;
        }
        loss_curve.push(epoch_loss / dataset.len() as f64);
    }
    let tree = crispify(&params)?;
    Ok(TrainedStudent {
        seed,
        params,
        tree,
        loss_curve,
    })
}

/// Fraction of dataset states on which the crisp tree picks the teacher's greedy action.
pub fn agreement_rate(tree: &CrispTree, dataset: &DistillationDataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let hits = dataset
        .states
        .iter()
        .zip(dataset.teacher_actions())
        .filter(|(s, a)| tree.predict(&s[..]) == *a)
        .count();
    hits as f64 / dataset.len() as f64
}

/// The student with the lowest final training loss; ties keep the earlier one.
pub fn best_student(students: &[TrainedStudent]) -> Option<&TrainedStudent> {
    let last = |s: &TrainedStudent| s.loss_curve.last().copied().unwrap_or(f64::INFINITY);
    students.iter().reduce(|best, s| if last(s) < last(best) { s } else { best })
}

/// Hyperparameters for the planted-tree fixture. The defaults stop while
/// the soft splits are still slightly oblique; a larger step and longer
/// run let converged seeds settle on the planted thresholds.
pub fn planted_config() -> StudentConfig {
    StudentConfig {
        learning_rate: 0.05,
        epochs: 2500,
        ..StudentConfig::default()
    }
}

/// Size of the planted-tree training set.
pub const PLANTED_SAMPLES: usize = 2000;

/// A known depth-2 axis-aligned rule set over `(soc, price, demand)`:
///
/// ```text
/// if price > 0.5125:
///   if soc > 0.3375: discharge 100%
///   else: idle
/// else:
///   if demand > 0.6: discharge 50%
///   else: charge 100%
/// ```
///
/// Thresholds sit between the points of a 41-step grid.
pub fn planted_tree() -> CrispTree {
    CrispTree {
        depth: 2,
        nodes: vec![
            CrispNode { feature: 2, threshold: 0.5125, flipped: false },
            CrispNode { feature: 1, threshold: 0.3375, flipped: false },
            CrispNode { feature: 3, threshold: 0.6, flipped: false },
        ],
        leaves: vec![0, 2, 1, 4],
    }
}

/// Synthetic teacher: Q-value 0 for the tree's action and `gap` for every
/// other action, on `n` uniformly random states.
pub fn planted_dataset(tree: &CrispTree, n_actions: usize, n: usize, gap: f64, seed: u64) -> DistillationDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n);
    let mut teacher_q = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = [0.0; N_FEATURES];
        s.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
        let a = tree.predict(&s);
        teacher_q.push((0..n_actions).map(|k| if k == a { 0.0 } else { gap }).collect());
        states.push(s);
    }
    DistillationDataset {
        states,
        teacher_q,
        provenance: Provenance {
            teacher_id: "planted".into(),
            buffer_size: n,
        },
    }
}

/// `res × res` grid over `(soc, price)` for each demand level, with hour
/// fixed at 0.5 and PV at 0.
pub fn state_grid(res: usize, demand_levels: &[f64]) -> Vec<[f64; N_FEATURES]> {
    let step = |i: usize| i as f64 / (res - 1) as f64;
    let mut out = Vec::with_capacity(res * res * demand_levels.len());
    for &d in demand_levels {
        for i in 0..res {
            for j in 0..res {
                out.push([0.5, step(i), step(j), d, 0.0]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::Transition;

    fn finite_diff_check(depth: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TreeParams::random(depth, 5, 5, &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
        let q: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..0.1)).collect();
        let (_, g) = distill_loss(&p, &x, &q, 0.03).unwrap();
        for k in 0..p.param_count() {
            let h = 1e-5;
            let mut a = p.clone();
            a.values_mut()[k] += h;
            let mut b = p.clone();
            b.values_mut()[k] -= h;
            let fd = (distill_loss(&a, &x, &q, 0.03).unwrap().0 - distill_loss(&b, &x, &q, 0.03).unwrap().0) / (2.0 * h);
            let scale = g[k].abs().max(fd.abs()).max(1e-6);
            assert!((g[k] - fd).abs() / scale < 1e-4, "param {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..5 {
            finite_diff_check(2, seed);
            finite_diff_check(3, seed);
        }
    }

    #[test]
    fn perfect_mimic_has_zero_loss() {
        // Single leaf reached with probability one, and teacher q chosen so
        // that softmax_neg(q/τ) equals that leaf's distribution.
        let mut p = TreeParams::zeros(1, 5, 5).unwrap();
        p.set_phi(0, -1e6);
        let w = [0.3, 0.1, 0.5, 0.2, 0.4];
        p.leaf_weights_mut(0).copy_from_slice(&w);
        let q: Vec<f64> = w.iter().map(|v| v * 0.03).collect();
        let (loss, _) = distill_loss(&p, &[0.5; 5], &q, 0.03).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn low_temperature_target_is_one_hot() {
        let q = [0.2, 0.7, 0.9, 1.0, 0.8];
        let target: Vec<f64> = log_softmax_neg(&tempered(&q, 0.03).unwrap()).iter().map(|v| v.exp()).collect();
        assert!((target[0] - 1.0).abs() < 1e-6);
        assert!(target[1..].iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn dataset_from_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[5, 8, 5], &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(10);
        assert!(build_dataset(&net, &buf, "x").unwrap_err().is_usage());
        buf.push(Transition {
            state: [0.1, 0.2, 0.3, 0.4, 0.5],
            action_index: 0,
            cost: 1.0,
            next_state: [0.0; 5],
            terminal: false,
        });
        let ds = build_dataset(&net, &buf, "abc").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.teacher_q[0], net.forward(&ds.states[0]).unwrap());
        let back = DistillationDataset::from_csv(&ds.to_csv(), "mem").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn constant_teacher_gives_constant_tree() {
        let tree = CrispTree {
            depth: 1,
            nodes: vec![CrispNode { feature: 0, threshold: 2.0, flipped: false }],
            leaves: vec![3, 3],
        };
        let ds = planted_dataset(&tree, 5, 500, 1.0, 1);
        let cfg = StudentConfig {
            epochs: 30,
            learning_rate: 0.01,
            ..Default::default()
        };
        let s = train_student(&ds, &cfg, 7).unwrap();
        assert!(ds.states.iter().all(|x| s.tree.predict(x) == 3), "{:?}", s.tree);
        assert_eq!(agreement_rate(&s.tree, &ds), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = planted_dataset(&planted_tree(), 5, 300, 1.0, 2);
        let cfg = StudentConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = train_student(&ds, &cfg, 11).unwrap();
        let b = train_student(&ds, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_curve.len(), 5);
    }
}
