#![allow(dead_code)]

use hems_ddt::ddt::TreeParams;
use hems_ddt::diffmath::{kl_tempered, kl_tempered_with_grad, DenseNet};
use hems_ddt::distill::distill_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], k: usize) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[k] += FD_STEP;
    down[k] -= FD_STEP;
    (f(&up) - f(&down)) / (2.0 * FD_STEP)
}

/// Worst relative error of the MLP backward pass on a random net and a random
/// linear functional of its output.
pub fn mlp_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [5, rng.gen_range(2..9), rng.gen_range(2..9), 5];
    let net = DenseNet::new(&sizes, &mut rng).unwrap();
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = net.backward(&x, &g).unwrap().values;
    let loss = |p: &[f64]| {
        let n = DenseNet::from_params(&sizes, p.to_vec()).unwrap();
        n.forward(&x).unwrap().iter().zip(&g).map(|(o, w)| o * w).sum::<f64>()
    };
    (0..net.param_count())
        .map(|k| rel_err(analytic[k], central(loss, net.params(), k)))
        .fold(0.0, f64::max)
}

/// Same for the soft tree output under a random linear functional.
pub fn ddt_worst_error(seed: u64, depth: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = TreeParams::random(depth, 5, 5, &mut rng).unwrap();
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = tree.gradients(&x, &g).unwrap();
    let loss = |p: &[f64]| {
        let t = TreeParams::from_values(depth, 5, 5, p.to_vec()).unwrap();
        let out = t.forward(&x).unwrap().action_distribution;
        out.iter().zip(&g).map(|(o, w)| o * w).sum::<f64>()
    };
    (0..tree.param_count())
        .map(|k| rel_err(analytic[k], central(loss, tree.values(), k)))
        .fold(0.0, f64::max)
}

/// Tempered KL: gradient with respect to the student's Q vector, and the
/// distillation loss gradient with respect to every tree parameter.
pub fn kl_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = rng.gen_range(0.05..1.0);
    let teacher: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let student: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let (_, g) = kl_tempered_with_grad(&teacher, &student, tau).unwrap();
    let mut worst = (0..5)
        .map(|k| rel_err(g[k], central(|s| kl_tempered(&teacher, s, tau).unwrap(), &student, k)))
        .fold(0.0, f64::max);

    let depth = rng.gen_range(2..4);
    let tree = TreeParams::random(depth, 5, 5, &mut rng).unwrap();
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let q: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..0.3)).collect();
    let (_, grad) = distill_loss(&tree, &x, &q, 0.1).unwrap();
    let loss = |p: &[f64]| {
        let t = TreeParams::from_values(depth, 5, 5, p.to_vec()).unwrap();
        distill_loss(&t, &x, &q, 0.1).unwrap().0
    };
    for k in 0..tree.param_count() {
        worst = worst.max(rel_err(grad[k], central(loss, tree.values(), k)));
    }
    worst
}
