//! Trains the DQN teacher on synthetic square-wave days and compares its
//! greedy policy with the rule-based controller and the exact optimum.
//!
//! `cargo run --release --example train_teacher -- [episodes]`

use std::time::Instant;

use hems_ddt::dataio::{NormalizationStats, RunConfig};
use hems_ddt::envsim::Simulator;
use hems_ddt::evalkit::{dp_optimal_cost, run_episode, GreedyQ, RbcPolicy};
use hems_ddt::teacher::train_teacher;

fn main() -> hems_ddt::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.teacher.episodes = n.parse().expect("episodes must be an integer");
    }
    let (train, eval) = cfg.resolve_profiles()?;
    let sim = Simulator::new(cfg.env.clone(), NormalizationStats::from_profiles(&train)?)?;

    let start = Instant::now();
    let trained = train_teacher(&cfg.teacher, &sim, &train, cfg.teacher_seed)?;
    println!("trained {} episodes in {:.1}s", cfg.teacher.episodes, start.elapsed().as_secs_f64());
    for e in trained.log.iter().step_by((cfg.teacher.episodes / 10).max(1)) {
        println!(
            "  episode {:>5}  eps {:.3}  cost {:.3}  loss {}",
            e.episode,
            e.epsilon,
            e.episode_cost,
            e.mean_loss.map_or("-".into(), |l| format!("{l:.5}"))
        );
    }

    let teacher = GreedyQ { name: "dqn".into(), network: &trained.agent.online };
    let rbc = RbcPolicy { battery: cfg.env.battery.clone() };
    let (mut t, mut r, mut o) = (0.0, 0.0, 0.0);
    for day in &eval {
        t += run_episode(&teacher, &sim, day, cfg.initial_soc, cfg.teacher_seed)?.total_cost_eur;
        r += run_episode(&rbc, &sim, day, cfg.initial_soc, 0)?.total_cost_eur;
        o += dp_optimal_cost(&sim, day, cfg.initial_soc)?;
    }
    let n = eval.len() as f64;
    println!("mean daily cost: teacher {:.3}  rbc {:.3}  optimum {:.3}", t / n, r / n, o / n);
    println!("teacher beats the rule-based controller by {:.1}%", 100.0 * (r - t) / r);
    Ok(())
}
