//! Small differentiable-computation kernel: ReLU dense networks with
//! analytic reverse-mode gradients, the negative-exponent softmax, the
//! tempered KL loss and the Adam update rule.
//!
//! Every parameter set is stored as one flat `Vec<f64>` so optimizers,
//! soft target updates and checkpoints all work on plain slices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected network: ReLU on hidden layers, identity on the output.
///
/// Layer `l` stores an `n_l x n_{l+1}` row-major weight block followed by an
/// `n_{l+1}` bias block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Gradients laid out exactly like the parameters of the model they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub values: Vec<f64>,
}

impl GradBundle {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

fn layer_param_count(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

impl DenseNet {
    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!(
                "a dense network needs at least an input and an output layer, got sizes {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be positive, got {sizes:?}")));
        }
        Ok(())
    }

    /// Parameter count for a given layer layout.
    pub fn count_params(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|w| layer_param_count(w[0], w[1]))
            .sum()
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::count_params(sizes)],
        })
    }

    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = layer_param_count(w[0], w[1]);
            for p in &mut net.params[offset..offset + n] {
                *p = rng.gen_range(-bound..=bound);
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let expected = Self::count_params(sizes);
        if params.len() != expected {
            return Err(Error::Config(format!(
                "layer sizes {sizes:?} need {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("validated at construction")
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        Self::count_params(&self.sizes[..=layer])
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        ArrayView2::from_shape((n_in, n_out), &self.params[off..off + n_in * n_out])
            .expect("layout matches sizes")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer) + n_in * n_out;
        ArrayView1::from(&self.params[off..off + n_out])
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_size() {
            return Err(Error::Config(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                input.len()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a batch laid out one sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(inputs)?.pop().expect("at least one layer"))
    }

    /// Returns the post-activation output of every layer (input excluded).
    fn forward_cached(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        if inputs.ncols() != self.input_size() {
            return Err(Error::Config(format!(
                "network expects {} inputs per row, got {}",
                self.input_size(),
                inputs.ncols()
            )));
        }
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers());
        for layer in 0..self.n_layers() {
            let prev = match acts.last() {
                Some(a) => a.view(),
                None => inputs,
            };
            let mut z = prev.dot(&self.weights(layer));
            z += &self.bias(layer);
            if layer + 1 < self.n_layers() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Gradient of `output_grad . f(input)` with respect to every parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<GradBundle> {
        if input.len() != self.input_size() || output_grad.len() != self.output_size() {
            return Err(Error::Config(format!(
                "backward expects input {} / output grad {}, got {} / {}",
                self.input_size(),
                self.output_size(),
                input.len(),
                output_grad.len()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
        self.backward_batch(x, g)
    }

    /// Batched reverse accumulation; gradients are summed over rows.
    pub fn backward_batch(
        &self,
        inputs: ArrayView2<'_, f64>,
        output_grads: ArrayView2<'_, f64>,
    ) -> Result<GradBundle> {
        if output_grads.dim() != (inputs.nrows(), self.output_size()) {
            return Err(Error::Config(format!(
                "output gradient shape {:?} does not match batch of {} x {}",
                output_grads.dim(),
                inputs.nrows(),
                self.output_size()
            )));
        }
        let acts = self.forward_cached(inputs)?;
        Ok(self.backward_from(inputs, &acts, output_grads.to_owned()))
    }

    /// Runs one forward pass, lets `loss_grad` turn the outputs into a loss
    /// value and output gradients, then back-propagates them.
    pub fn forward_backward<F>(&self, inputs: ArrayView2<'_, f64>, loss_grad: F) -> Result<(f64, GradBundle)>
    where
        F: FnOnce(&Array2<f64>) -> (f64, Array2<f64>),
    {
        let acts = self.forward_cached(inputs)?;
        let (loss, delta) = loss_grad(acts.last().expect("at least one layer"));
        if delta.dim() != (inputs.nrows(), self.output_size()) {
            return Err(Error::Config(format!(
                "loss gradient shape {:?} does not match batch of {} x {}",
                delta.dim(),
                inputs.nrows(),
                self.output_size()
            )));
        }
        Ok((loss, self.backward_from(inputs, &acts, delta)))
    }

    fn backward_from(&self, inputs: ArrayView2<'_, f64>, acts: &[Array2<f64>], mut delta: Array2<f64>) -> GradBundle {
        let mut grads = GradBundle::zeros(self.param_count());
        for layer in (0..self.n_layers()).rev() {
            let prev = if layer == 0 {
                inputs
            } else {
                acts[layer - 1].view()
            };
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let off = self.layer_offset(layer);
            let (w_slot, rest) = grads.values[off..].split_at_mut(n_in * n_out);
            let mut gw = ArrayViewMut2::from_shape((n_in, n_out), w_slot).expect("layout");
            gw.assign(&prev.t().dot(&delta));
            let mut gb = ArrayViewMut1::from(&mut rest[..n_out]);
            gb.assign(&delta.sum_axis(Axis(0)));
            if layer > 0 {
                let mut next = delta.dot(&self.weights(layer).t());
                // ReLU derivative, zero at the kink.
                ndarray::Zip::from(&mut next)
                    .and(&acts[layer - 1])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = next;
            }
        }
        grads
    }

    /// `self <- blend * source + (1 - blend) * self`, elementwise.
    pub fn blend_from(&mut self, source: &DenseNet, blend: f64) -> Result<()> {
        if source.sizes != self.sizes {
            return Err(Error::Config(format!(
                "cannot blend network {:?} into {:?}",
                source.sizes, self.sizes
            )));
        }
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = blend * s + (1.0 - blend) * *t;
        }
        Ok(())
    }
}

/// Bias-corrected Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One Adam update. Refuses non-finite gradients without touching the parameters.
    pub fn step(&mut self, params: &mut [f64], grads: &GradBundle) -> Result<()> {
        let g = &grads.values;
        if params.len() != g.len() || params.len() != self.first_moment.len() {
            return Err(Error::Config(format!(
                "adam shapes disagree: params {}, grads {}, moments {}",
                params.len(),
                g.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient {} at parameter {i} (adam step {})",
                g[i],
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g[i];
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g[i] * g[i];
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Logistic function, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `p_m = exp(-w_m) / sum_k exp(-w_k)`: the smallest entry gets the largest probability.
pub fn softmax_neg(w: &[f64]) -> Vec<f64> {
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = w.iter().map(|&x| (lo - x).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// `ln softmax_neg(w)`, computed in log space.
pub fn log_softmax_neg(w: &[f64]) -> Vec<f64> {
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let lse = w.iter().map(|&x| (lo - x).exp()).sum::<f64>().ln();
    w.iter().map(|&x| lo - x - lse).collect()
}

/// `KL(p || q)` for two probability vectors. Terms with `p_m = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "temperature must be a positive finite number, got {temperature}"
        )));
    }
    Ok(())
}

/// Divides `q` by the temperature, the shared first step of the tempered losses.
pub fn tempered(q: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    Ok(q.iter().map(|v| v / temperature).collect())
}

/// `KL(softmax_neg(teacher/tau) || softmax_neg(student/tau))`.
pub fn kl_tempered(teacher_q: &[f64], student_q: &[f64], temperature: f64) -> Result<f64> {
    Ok(kl_tempered_with_grad(teacher_q, student_q, temperature)?.0)
}

/// Tempered KL together with its gradient with respect to `student_q`,
/// which is `(P_teacher - P_student) / tau`.
pub fn kl_tempered_with_grad(
    teacher_q: &[f64],
    student_q: &[f64],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if teacher_q.len() != student_q.len() {
        return Err(Error::Config(format!(
            "teacher and student q vectors differ in length ({} vs {})",
            teacher_q.len(),
            student_q.len()
        )));
    }
    let t = tempered(teacher_q, temperature)?;
    let s = tempered(student_q, temperature)?;
    let log_pt = log_softmax_neg(&t);
    let log_ps = log_softmax_neg(&s);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(t.len());
    for (lt, ls) in log_pt.iter().zip(&log_ps) {
        let pt = lt.exp();
        if pt > 0.0 {
            loss += pt * (lt - ls);
        }
        grad.push((pt - ls.exp()) / temperature);
    }
    Ok((loss.max(0.0), grad))
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Convenience for building a batch matrix from rows of equal width.
pub fn rows_to_array(rows: &[&[f64]], width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::Config(format!(
                "row {i} has {} entries, expected {width}",
                r.len()
            )));
        }
        out.row_mut(i).assign(&Array1::from(r.to_vec()));
    }
    Ok(out)
}
