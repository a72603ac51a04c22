//! Differentiable decision trees: the soft forward pass, its analytic
//! gradients, crispification into an ordinary tree and rule export.
//!
//! Nodes are stored in heap order: node `i` has children `2i + 1` (left) and
//! `2i + 2` (right), and leaves follow the decision nodes left to right.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{argmin, sigmoid, softmax_neg};
use crate::error::{Error, Result};

/// Below this magnitude the winning feature weight cannot define a threshold.
pub const DEGENERATE_BETA: f64 = 1e-8;

/// Soft tree parameters in one flat vector: all `β` rows, then all `φ`,
/// then all leaf weight rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    depth: usize,
    n_features: usize,
    n_actions: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftOutput {
    pub action_distribution: Vec<f64>,
    pub leaf_path_probs: Vec<f64>,
}

/// Number of decision nodes and leaves of a complete tree.
pub fn tree_shape(depth: usize) -> (usize, usize) {
    let leaves = 1usize << depth;
    (leaves - 1, leaves)
}

pub fn training_param_count(depth: usize, n_features: usize, n_actions: usize) -> usize {
    let (nodes, leaves) = tree_shape(depth);
    nodes * (n_features + 1) + leaves * n_actions
}

pub fn inference_param_count(depth: usize) -> usize {
    let (nodes, leaves) = tree_shape(depth);
    nodes * 2 + leaves
}

impl TreeParams {
    fn check_shape(depth: usize, n_features: usize, n_actions: usize) -> Result<()> {
        if !(1..=12).contains(&depth) || n_features == 0 || n_actions == 0 {
            return Err(Error::Config(format!(
                "tree needs depth in 1..=12 and non-empty features/actions (depth {depth}, {n_features} features, {n_actions} actions)"
            )));
        }
        Ok(())
    }

    /// Random initialization: `β ~ U(-1, 1)`, `φ ~ U(0, 1)`, `w ~ U(-1, 1)`.
    pub fn random<R: Rng + ?Sized>(depth: usize, n_features: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(depth, n_features, n_actions)?;
        let (nb, nphi) = (p.beta_len(), p.n_nodes());
        for (k, v) in p.values.iter_mut().enumerate() {
            *v = if k >= nb && k < nb + nphi {
                rng.gen_range(0.0..1.0)
            } else {
                rng.gen_range(-1.0..1.0)
            };
        }
        Ok(p)
    }

    pub fn zeros(depth: usize, n_features: usize, n_actions: usize) -> Result<Self> {
        Self::check_shape(depth, n_features, n_actions)?;
        Ok(Self {
            depth,
            n_features,
            n_actions,
            values: vec![0.0; training_param_count(depth, n_features, n_actions)],
        })
    }

    pub fn from_values(depth: usize, n_features: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        Self::check_shape(depth, n_features, n_actions)?;
        let want = training_param_count(depth, n_features, n_actions);
        if values.len() != want {
            return Err(Error::Config(format!(
                "depth-{depth} tree needs {want} parameters, got {}",
                values.len()
            )));
        }
        Ok(Self {
            depth,
            n_features,
            n_actions,
            values,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn n_features(&self) -> usize {
        self.n_features
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_nodes(&self) -> usize {
        tree_shape(self.depth).0
    }
    pub fn n_leaves(&self) -> usize {
        tree_shape(self.depth).1
    }
    pub fn param_count(&self) -> usize {
        self.values.len()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn beta_len(&self) -> usize {
        self.n_nodes() * self.n_features
    }

    fn leaf_offset(&self) -> usize {
        self.beta_len() + self.n_nodes()
    }

    pub fn beta(&self, node: usize) -> &[f64] {
        let f = self.n_features;
        &self.values[node * f..(node + 1) * f]
    }

    pub fn beta_mut(&mut self, node: usize) -> &mut [f64] {
        let f = self.n_features;
        &mut self.values[node * f..(node + 1) * f]
    }

    pub fn phi(&self, node: usize) -> f64 {
        self.values[self.beta_len() + node]
    }

    pub fn set_phi(&mut self, node: usize, value: f64) {
        let k = self.beta_len() + node;
        self.values[k] = value;
    }

    pub fn leaf_weights(&self, leaf: usize) -> &[f64] {
        let a = self.n_actions;
        let off = self.leaf_offset();
        &self.values[off + leaf * a..off + (leaf + 1) * a]
    }

    pub fn leaf_weights_mut(&mut self, leaf: usize) -> &mut [f64] {
        let a = self.n_actions;
        let off = self.leaf_offset();
        &mut self.values[off + leaf * a..off + (leaf + 1) * a]
    }

    /// `p_i = σ(β_i·x − φ_i)`, the probability of going left at each node.
    pub fn node_probs(&self, state: &[f64]) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|i| sigmoid(dot(self.beta(i), state) - self.phi(i)))
            .collect()
    }

    pub fn forward(&self, state: &[f64]) -> Result<SoftOutput> {
        self.check_state(state)?;
        Ok(self.forward_with_gates(&self.node_probs(state)))
    }

    /// Forward pass with the node gates supplied by the caller, e.g. hard steps.
    pub fn forward_with_gates(&self, gates: &[f64]) -> SoftOutput {
        let leaf_path_probs = path_probs(gates, self.depth);
        let mut action_distribution = vec![0.0; self.n_actions];
        for (k, &pk) in leaf_path_probs.iter().enumerate() {
            for (o, q) in action_distribution.iter_mut().zip(softmax_neg(self.leaf_weights(k))) {
                *o += pk * q;
            }
        }
        SoftOutput {
            action_distribution,
            leaf_path_probs,
        }
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.n_features {
            return Err(Error::Config(format!(
                "state has {} features, tree expects {}",
                state.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Gradient of `output_grad · o(x)` with respect to every parameter, in
    /// the same flat layout as [`TreeParams::values`].
    pub fn gradients(&self, state: &[f64], output_grad: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.values.len()];
        self.accumulate_gradients(state, output_grad, &mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient for one state into `grad`.
    pub fn accumulate_gradients(&self, state: &[f64], output_grad: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_state(state)?;
        if output_grad.len() != self.n_actions || grad.len() != self.values.len() {
            return Err(Error::Config("gradient buffers do not match the tree shape".into()));
        }
        let gates = self.node_probs(state);
        let path = path_probs(&gates, self.depth);
        let n_nodes = self.n_nodes();
        let off = self.leaf_offset();
        let a = self.n_actions;

        // Leaves: a_k = g·q_k, and through the softmax dL/dw_kj = -π_k q_kj (g_j - a_k).
        let mut value = vec![0.0; n_nodes + self.n_leaves()];
        for (k, &pk) in path.iter().enumerate() {
            let q = softmax_neg(self.leaf_weights(k));
            let ak: f64 = q.iter().zip(output_grad).map(|(q, g)| q * g).sum();
            value[n_nodes + k] = ak;
            for j in 0..a {
                grad[off + k * a + j] += -pk * q[j] * (output_grad[j] - ak);
            }
        }
        // Conditional value of each subtree, bottom up.
        for i in (0..n_nodes).rev() {
            value[i] = gates[i] * value[2 * i + 1] + (1.0 - gates[i]) * value[2 * i + 2];
        }
        // Reach probability of each node, top down, then dL/dp_i = r_i (V_left − V_right).
        let mut reach = vec![1.0; n_nodes];
        let f = self.n_features;
        let beta_len = self.beta_len();
        for i in 0..n_nodes {
            if i > 0 {
                let parent = (i - 1) / 2;
                let g = gates[parent];
                reach[i] = reach[parent] * if i % 2 == 1 { g } else { 1.0 - g };
            }
            let dp = reach[i] * (value[2 * i + 1] - value[2 * i + 2]);
            let dz = dp * gates[i] * (1.0 - gates[i]);
            for j in 0..f {
                grad[i * f + j] += dz * state[j];
            }
            grad[beta_len + i] -= dz;
        }
        Ok(())
    }

    /// Copy whose `β` rows keep only the winning (largest magnitude) entry. Its soft
    /// decision boundaries are exactly those of the crisp tree.
    pub fn one_hot_projection(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_nodes() {
            let j = winning_feature(self.beta(i));
            let keep = self.beta(i)[j];
            let row = out.beta_mut(i);
            row.iter_mut().for_each(|b| *b = 0.0);
            row[j] = keep;
        }
        out
    }

    /// Multiplies every `β` and `φ` by `factor`, sharpening the gates without
    /// moving any decision boundary.
    pub fn scale_gates(&mut self, factor: f64) {
        let n = self.leaf_offset();
        self.values[..n].iter_mut().for_each(|v| *v *= factor);
    }
}

impl TreeParams {
    /// `# depth=D features=F actions=A` followed by one value per line in
    /// the flat layout.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# depth={} features={} actions={}\n",
            self.depth, self.n_features, self.n_actions
        );
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty parameter file".into()))?;
        let mut dims = [None; 3];
        for field in header.trim_start_matches('#').split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(1, format!("bad header field '{field}'")))?;
            let slot = match k {
                "depth" => 0,
                "features" => 1,
                "actions" => 2,
                _ => return Err(bad(1, format!("unknown header field '{k}'"))),
            };
            dims[slot] = Some(v.parse::<usize>().map_err(|_| bad(1, format!("bad value '{v}'")))?);
        }
        let [Some(depth), Some(f), Some(a)] = dims else {
            return Err(bad(1, "header needs depth, features and actions".into()));
        };
        let values = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(i + 2, format!("invalid number '{l}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::from_values(depth, f, a, values).map_err(|e| bad(1, e.to_string()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest-magnitude weight; ties go to the lowest index.
fn winning_feature(beta: &[f64]) -> usize {
    let mags: Vec<f64> = beta.iter().map(|b| b.abs()).collect();
    crate::diffmath::argmax(&mags)
}

/// Leaf path probabilities: each leaf multiplies `p_i` (left) or `1 − p_i`
/// (right) over its ancestors.
pub fn path_probs(gates: &[f64], depth: usize) -> Vec<f64> {
    let (n_nodes, n_leaves) = tree_shape(depth);
    let mut reach = vec![0.0; n_nodes + n_leaves];
    reach[0] = 1.0;
    for i in 0..n_nodes {
        reach[2 * i + 1] = reach[i] * gates[i];
        reach[2 * i + 2] = reach[i] * (1.0 - gates[i]);
    }
    reach.split_off(n_nodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrispNode {
    pub feature: usize,
    pub threshold: f64,
    /// When set the left branch is taken for `x < threshold` instead of `x > threshold`.
    pub flipped: bool,
}

impl CrispNode {
    /// Left iff the comparison holds strictly; ties go right.
    pub fn goes_left(&self, state: &[f64]) -> bool {
        let x = state[self.feature];
        if self.flipped {
            x < self.threshold
        } else {
            x > self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrispTree {
    pub depth: usize,
    pub nodes: Vec<CrispNode>,
    pub leaves: Vec<usize>,
}

/// Hardens a soft tree: `argmax |β|` picks the feature, `φ/β` becomes the
/// threshold in feature space, and each leaf keeps `argmin w`.
pub fn crispify(params: &TreeParams) -> Result<CrispTree> {
    let mut nodes = Vec::with_capacity(params.n_nodes());
    for i in 0..params.n_nodes() {
        let beta = params.beta(i);
        let j = winning_feature(beta);
        let b = beta[j];
        if b.abs() < DEGENERATE_BETA {
            return Err(Error::DegenerateNode { node: i, weight: b });
        }
        nodes.push(CrispNode {
            feature: j,
            threshold: params.phi(i) / b,
            flipped: b < 0.0,
        });
    }
    let leaves = (0..params.n_leaves()).map(|k| argmin(params.leaf_weights(k))).collect();
    Ok(CrispTree {
        depth: params.depth(),
        nodes,
        leaves,
    })
}

impl CrispTree {
    /// Index of the leaf reached by `state`.
    pub fn leaf_of(&self, state: &[f64]) -> usize {
        let mut i = 0;
        while i < self.nodes.len() {
            i = if self.nodes[i].goes_left(state) { 2 * i + 1 } else { 2 * i + 2 };
        }
        i - self.nodes.len()
    }

    pub fn predict(&self, state: &[f64]) -> usize {
        self.leaves[self.leaf_of(state)]
    }

    pub fn inference_param_count(&self) -> usize {
        self.nodes.len() * 2 + self.leaves.len()
    }

    /// Checks the tree is complete and every index is in range.
    pub fn validate(&self, n_features: usize, n_actions: usize) -> Result<()> {
        let (n_nodes, n_leaves) = tree_shape(self.depth);
        if self.depth == 0 || self.nodes.len() != n_nodes || self.leaves.len() != n_leaves {
            return Err(Error::Config(format!(
                "a depth-{} tree needs {n_nodes} nodes and {n_leaves} leaves, found {} and {}",
                self.depth,
                self.nodes.len(),
                self.leaves.len()
            )));
        }
        if let Some(n) = self.nodes.iter().find(|n| n.feature >= n_features || !n.threshold.is_finite()) {
            return Err(Error::Config(format!("invalid decision node {n:?}")));
        }
        if let Some(a) = self.leaves.iter().find(|&&a| a >= n_actions) {
            return Err(Error::Config(format!("leaf action {a} out of range")));
        }
        Ok(())
    }
}

pub fn crisp_predict(tree: &CrispTree, state: &[f64]) -> usize {
    tree.predict(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Text,
    Dot,
    Json,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 3] = [ExportFormat::Text, ExportFormat::Dot, ExportFormat::Json];

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "text" | "txt" => Ok(Self::Text),
            "dot" => Ok(Self::Dot),
            "json" => Ok(Self::Json),
            other => Err(Error::Usage(format!(
                "unknown export format '{other}'; expected text, dot or json"
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Text => "txt",
            Self::Dot => "dot",
            Self::Json => "json",
        }
    }
}

/// Human names for charge signals, e.g. `charge 50%` or `idle`.
pub fn action_names(levels: &[f64]) -> Vec<String> {
    levels
        .iter()
        .map(|&u| {
            let pct = (u.abs() * 100.0).round();
            if u > 0.0 {
                format!("charge {pct}%")
            } else if u < 0.0 {
                format!("discharge {pct}%")
            } else {
                "idle".to_string()
            }
        })
        .collect()
}

pub const TREE_FORMAT_TAG: &str = "hems-ddt-crisp-tree";
pub const TREE_FORMAT_VERSION: u32 = 1;

/// Structured dump. `nodes` and `leaves` are in heap order.
#[derive(Debug, Serialize, Deserialize)]
struct TreeDump {
    format: String,
    version: u32,
    depth: usize,
    feature_names: Vec<String>,
    action_names: Vec<String>,
    nodes: Vec<CrispNode>,
    leaves: Vec<usize>,
}

fn condition(node: &CrispNode, feature_names: &[String]) -> String {
    let op = if node.flipped { "<" } else { ">" };
    format!("{} {op} {:.4}", feature_names[node.feature], node.threshold)
}

pub fn export_rules<S: AsRef<str>>(
    tree: &CrispTree,
    feature_names: &[S],
    action_names: &[S],
    format: ExportFormat,
) -> Result<String> {
    let features: Vec<String> = feature_names.iter().map(|s| s.as_ref().to_string()).collect();
    let actions: Vec<String> = action_names.iter().map(|s| s.as_ref().to_string()).collect();
    tree.validate(features.len(), actions.len())?;
    Ok(match format {
        ExportFormat::Text => {
            let mut out = String::new();
            write_text(tree, 0, 0, &features, &actions, &mut out);
            out
        }
        ExportFormat::Dot => to_dot(tree, &features, &actions),
        ExportFormat::Json => {
            let dump = TreeDump {
                format: TREE_FORMAT_TAG.to_string(),
                version: TREE_FORMAT_VERSION,
                depth: tree.depth,
                feature_names: features,
                action_names: actions,
                nodes: tree.nodes.clone(),
                leaves: tree.leaves.clone(),
            };
            let mut s = serde_json::to_string_pretty(&dump).expect("tree dump serializes");
            s.push('\n');
            s
        }
    })
}

/// Writes node `i` as an if/else block; a branch that is a leaf goes on the same line.
fn write_text(tree: &CrispTree, i: usize, indent: usize, features: &[String], actions: &[String], out: &mut String) {
    let pad = "  ".repeat(indent);
    let n = tree.nodes.len();
    let cond = condition(&tree.nodes[i], features);
    for (child, head) in [(2 * i + 1, format!("if {cond}:")), (2 * i + 2, "else:".to_string())] {
        if child >= n {
            let _ = writeln!(out, "{pad}{head} {}", actions[tree.leaves[child - n]]);
        } else {
            let _ = writeln!(out, "{pad}{head}");
            write_text(tree, child, indent + 1, features, actions, out);
        }
    }
}

fn to_dot(tree: &CrispTree, features: &[String], actions: &[String]) -> String {
    let n = tree.nodes.len();
    let mut out = String::from("digraph ddt {\n  node [fontname=\"Helvetica\"];\n");
    for (i, node) in tree.nodes.iter().enumerate() {
        let _ = writeln!(out, "  n{i} [shape=box, style=rounded, label=\"{}\"];", condition(node, features));
    }
    for (k, &a) in tree.leaves.iter().enumerate() {
        let _ = writeln!(out, "  n{} [shape=box, label=\"{}\"];", n + k, actions[a]);
    }
    for i in 0..n {
        let _ = writeln!(out, "  n{i} -> n{} [label=\"yes\"];", 2 * i + 1);
        let _ = writeln!(out, "  n{i} -> n{} [label=\"no\"];", 2 * i + 2);
    }
    out.push_str("}\n");
    out
}

/// Parses the structured dump written by [`export_rules`] with [`ExportFormat::Json`].
pub fn parse_tree_json(text: &str, source_name: &str) -> Result<CrispTree> {
    let bad = |msg: String| Error::Parse {
        source_name: source_name.to_string(),
        line: 1,
        msg,
    };
    let dump: TreeDump = serde_json::from_str(text).map_err(|e| Error::Parse {
        source_name: source_name.to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if dump.format != TREE_FORMAT_TAG || dump.version != TREE_FORMAT_VERSION {
        return Err(bad(format!(
            "expected {TREE_FORMAT_TAG} version {TREE_FORMAT_VERSION}, found {} version {}",
            dump.format, dump.version
        )));
    }
    let tree = CrispTree {
        depth: dump.depth,
        nodes: dump.nodes,
        leaves: dump.leaves,
    };
    tree.validate(dump.feature_names.len(), dump.action_names.len())
        .map_err(|e| bad(e.to_string()))?;
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::FEATURE_NAMES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn actions() -> Vec<String> {
        action_names(&[-1.0, -0.5, 0.0, 0.5, 1.0])
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(training_param_count(2, 5, 5), 38);
        assert_eq!(inference_param_count(2), 10);
        assert_eq!(training_param_count(3, 5, 5), 82);
        assert_eq!(inference_param_count(3), 22);
        let p = TreeParams::zeros(3, 5, 5).unwrap();
        assert_eq!(p.param_count(), 82);
    }

    #[test]
    fn equal_gates_split_evenly() {
        let p = TreeParams::zeros(2, 5, 5).unwrap();
        let out = p.forward(&[0.3; 5]).unwrap();
        assert_eq!(out.leaf_path_probs, vec![0.25; 4]);
        for v in out.action_distribution {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_root_starves_right_subtree() {
        let mut p = TreeParams::zeros(2, 5, 5).unwrap();
        p.set_phi(0, -1e4);
        let out = p.forward(&[0.5; 5]).unwrap();
        assert!(out.leaf_path_probs[2] < 1e-300 && out.leaf_path_probs[3] < 1e-300);
    }

    /// Depth-2 forward pass written as the 2×2 matrix product of the
    /// reference formulation.
    fn matrix_form(p: &TreeParams, x: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = (0..3)
            .map(|i| {
                let xj: f64 = p.beta(i).iter().zip(x).map(|(b, v)| b * v).sum();
                1.0 / (1.0 + (-(xj - p.phi(i))).exp())
            })
            .collect();
        let a = [[s[0], 0.0], [0.0, 1.0 - s[0]]];
        let b = [[s[1], 1.0 - s[1]], [s[2], 1.0 - s[2]]];
        let mut m = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        let leaf = |k: usize| {
            let w = p.leaf_weights(k);
            let z: f64 = w.iter().map(|v| (-v).exp()).sum();
            w.iter().map(|v| (-v).exp() / z).collect::<Vec<_>>()
        };
        let weights = [m[0][0], m[0][1], m[1][0], m[1][1]];
        let mut o = vec![0.0; 5];
        for (k, wk) in weights.iter().enumerate() {
            for (o, q) in o.iter_mut().zip(leaf(k)) {
                *o += wk * q;
            }
        }
        o
    }

    #[test]
    fn matches_matrix_formulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let p = TreeParams::random(2, 5, 5, &mut rng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let got = p.forward(&x).unwrap().action_distribution;
            for (g, w) in got.iter().zip(matrix_form(&p, &x)) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let p = TreeParams::random(3, 5, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let g = p.gradients(&[0.2, 0.4, 0.6, 0.8, 1.0], &[0.0; 5]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phi_gradient_mirrors_linear_term() {
        // With x = e_j, dL/dβ_ij = dz·1 and dL/dφ_i = -dz.
        let p = TreeParams::random(2, 5, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = [0.0, 1.0, 0.0, 0.0, 0.0];
        let g = p.gradients(&x, &[0.3, -0.2, 0.5, 0.1, -0.7]).unwrap();
        for i in 0..3 {
            assert!((g[i * 5 + 1] + g[15 + i]).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for depth in [2, 3] {
            let p = TreeParams::random(depth, 5, 5, &mut rng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let analytic = p.gradients(&x, &g).unwrap();
            let f = |q: &TreeParams| -> f64 {
                q.forward(&x).unwrap().action_distribution.iter().zip(&g).map(|(a, b)| a * b).sum()
            };
            for k in 0..p.param_count() {
                let h = 1e-5;
                let mut plus = p.clone();
                plus.values_mut()[k] += h;
                let mut minus = p.clone();
                minus.values_mut()[k] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let scale = analytic[k].abs().max(fd.abs()).max(1e-6);
                assert!((analytic[k] - fd).abs() / scale < 1e-4, "param {k}: {} vs {fd}", analytic[k]);
            }
        }
    }

    #[test]
    fn crispify_examples() {
        let mut p = TreeParams::zeros(1, 5, 5).unwrap();
        p.beta_mut(0).copy_from_slice(&[0.1, 0.9, 0.2, 0.0, 0.0]);
        p.set_phi(0, 0.45);
        p.leaf_weights_mut(0).copy_from_slice(&[5.0, 1.0, 2.0, 3.0, 4.0]);
        let t = crispify(&p).unwrap();
        assert_eq!(t.nodes[0].feature, 1);
        assert!((t.nodes[0].threshold - 0.5).abs() < 1e-15);
        assert!(!t.nodes[0].flipped);
        assert_eq!(t.leaves[0], 1);

        p.beta_mut(0).copy_from_slice(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        p.set_phi(0, 0.37);
        assert_eq!(crispify(&p).unwrap().nodes[0].threshold, 0.37);

        // A strongly negative weight beats a small positive one.
        p.beta_mut(0).copy_from_slice(&[0.3, -0.4, -0.2, 0.1, 0.0]);
        p.set_phi(0, -0.2);
        let t = crispify(&p).unwrap();
        assert_eq!(t.nodes[0].feature, 1);
        assert!(t.nodes[0].flipped);
        assert!((t.nodes[0].threshold - 0.5).abs() < 1e-15);
        // Projected soft node: left iff -0.4 x > -0.2, i.e. x < 0.5.
        assert!(t.nodes[0].goes_left(&[0.0, 0.4, 0.0, 0.0, 0.0]));
        assert!(!t.nodes[0].goes_left(&[0.0, 0.6, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn params_text_round_trip() {
        let p = TreeParams::random(3, 5, 5, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        assert_eq!(TreeParams::from_text(&p.to_text(), "mem").unwrap(), p);
        assert!(TreeParams::from_text("# depth=2 features=5 actions=5\n1.0\n", "mem").is_err());
    }

    #[test]
    fn zero_beta_is_degenerate() {
        let p = TreeParams::zeros(2, 5, 5).unwrap();
        assert!(matches!(crispify(&p), Err(Error::DegenerateNode { node: 0, .. })));
    }

    fn figure_tree() -> CrispTree {
        // pv > 0.47 and demand below 0.37 charges; otherwise idle or discharge.
        CrispTree {
            depth: 2,
            nodes: vec![
                CrispNode { feature: 4, threshold: 0.47, flipped: false },
                CrispNode { feature: 3, threshold: 0.37, flipped: false },
                CrispNode { feature: 2, threshold: 0.5, flipped: false },
            ],
            leaves: vec![2, 4, 0, 3],
        }
    }

    #[test]
    fn high_pv_low_demand_charges() {
        let t = figure_tree();
        let a = crisp_predict(&t, &[0.5, 0.5, 0.1, 0.2, 0.6]);
        assert_eq!(actions()[a], "charge 100%");
    }

    #[test]
    fn ties_go_right() {
        let t = figure_tree();
        assert_eq!(t.leaf_of(&[0.0, 0.0, 0.0, 0.0, 0.47]), 3);
    }

    #[test]
    fn hard_step_forward_agrees_with_crisp_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for depth in [2, 3] {
            let p = TreeParams::random(depth, 5, 5, &mut rng).unwrap();
            let tree = crispify(&p).unwrap();
            let hard = p.one_hot_projection();
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
                let gates: Vec<f64> = (0..hard.n_nodes())
                    .map(|i| {
                        let z: f64 = hard.beta(i).iter().zip(&x).map(|(b, v)| b * v).sum::<f64>() - hard.phi(i);
                        if z > 0.0 { 1.0 } else { 0.0 }
                    })
                    .collect();
                let out = hard.forward_with_gates(&gates);
                assert_eq!(crate::diffmath::argmax(&out.action_distribution), crisp_predict(&tree, &x));
            }
        }
    }

    #[test]
    fn text_export_shapes() {
        let t = CrispTree {
            depth: 1,
            nodes: vec![CrispNode { feature: 2, threshold: 0.15, flipped: false }],
            leaves: vec![0, 4],
        };
        let text = export_rules(&t, &FEATURE_NAMES, &actions().iter().map(String::as_str).collect::<Vec<_>>(), ExportFormat::Text).unwrap();
        assert_eq!(text, "if price > 0.1500: discharge 100%\nelse: charge 100%\n");

        let names = actions();
        let text = export_rules(&figure_tree(), &FEATURE_NAMES.map(String::from), &names, ExportFormat::Text).unwrap();
        assert_eq!(text.matches("if ").count(), 3);
        let leaf_lines = text.lines().filter(|l| l.ends_with('%') || l.ends_with("idle")).count();
        assert_eq!(leaf_lines, 4);

        let dot = export_rules(&figure_tree(), &FEATURE_NAMES.map(String::from), &names, ExportFormat::Dot).unwrap();
        assert!(dot.starts_with("digraph") && dot.matches("->").count() == 6);
    }

    #[test]
    fn json_round_trip() {
        let p = TreeParams::random(3, 5, 5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let t = crispify(&p).unwrap();
        let json = export_rules(&t, &FEATURE_NAMES.map(String::from), &actions(), ExportFormat::Json).unwrap();
        assert!(json.len() <= 8 * 1024);
        assert_eq!(parse_tree_json(&json, "mem").unwrap(), t);
        assert!(parse_tree_json("{}", "mem").is_err());
        assert!(ExportFormat::parse("yaml").unwrap_err().is_usage());
    }
}
