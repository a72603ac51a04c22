//! Compares the analytic gradients of the MLP, the soft decision tree and
//! the tempered KL loss with central finite differences.

use hems_ddt::ddt::TreeParams;
use hems_ddt::diffmath::{kl_tempered, kl_tempered_with_grad, DenseNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn main() -> hems_ddt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let net = DenseNet::new(&[5, 16, 16, 5], &mut rng)?;
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dot = |n: &DenseNet| -> f64 { n.forward(&x).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum() };
    let analytic = net.backward(&x, &g)?;
    let mut worst = 0.0f64;
    for i in 0..net.param_count() {
        let (mut up, mut down) = (net.clone(), net.clone());
        up.params_mut()[i] += H;
        down.params_mut()[i] -= H;
        worst = worst.max(rel_err(analytic.values[i], (dot(&up) - dot(&down)) / (2.0 * H)));
    }
    println!("MLP   {:>5} parameters, worst relative error {worst:.2e}", net.param_count());

    let tree = TreeParams::random(3, 5, 5, &mut rng)?;
    let analytic = tree.gradients(&x, &g)?;
    let out = |t: &TreeParams| -> f64 {
        t.forward(&x).unwrap().action_distribution.iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    for i in 0..tree.param_count() {
        let (mut up, mut down) = (tree.clone(), tree.clone());
        up.values_mut()[i] += H;
        down.values_mut()[i] -= H;
        worst = worst.max(rel_err(analytic[i], (out(&up) - out(&down)) / (2.0 * H)));
    }
    println!("DDT   {:>5} parameters, worst relative error {worst:.2e}", tree.param_count());

    let teacher: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..0.2)).collect();
    let student: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..0.2)).collect();
    let (_, grad) = kl_tempered_with_grad(&teacher, &student, 0.03)?;
    let mut worst = 0.0f64;
    for i in 0..student.len() {
        let (mut up, mut down) = (student.clone(), student.clone());
        up[i] += H;
        down[i] -= H;
        let fd = (kl_tempered(&teacher, &up, 0.03)? - kl_tempered(&teacher, &down, 0.03)?) / (2.0 * H);
        worst = worst.max(rel_err(grad[i], fd));
    }
    println!("KL    {:>5} inputs,     worst relative error {worst:.2e}", student.len());
    Ok(())
}
