//! Trains a short teacher, builds the distillation dataset from its replay
//! buffer and distills depth-2 trees for three seeds.
//!
//! `cargo run --release --example distill_student -- [teacher episodes]`

use hems_ddt::dataio::{NormalizationStats, RunConfig};
use hems_ddt::ddt::{action_names, export_rules, ExportFormat};
use hems_ddt::distill::{agreement_rate, build_dataset, train_student};
use hems_ddt::envsim::{Simulator, FEATURE_NAMES};
use hems_ddt::evalkit::{run_episode, GreedyQ, RbcPolicy, TreePolicy};
use hems_ddt::teacher::train_teacher;

fn main() -> hems_ddt::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.teacher.episodes = std::env::args().nth(1).map_or(400, |n| n.parse().expect("episodes must be an integer"));
    let (train, eval) = cfg.resolve_profiles()?;
    let sim = Simulator::new(cfg.env.clone(), NormalizationStats::from_profiles(&train)?)?;
    let trained = train_teacher(&cfg.teacher, &sim, &train, cfg.teacher_seed)?;
    let dataset = build_dataset(&trained.agent.online, &trained.buffer, "example")?;
    println!("distilling from {} buffer states", dataset.len());

    let mean_cost = |p: &dyn hems_ddt::evalkit::Policy| -> hems_ddt::Result<f64> {
        let mut total = 0.0;
        for day in &eval {
            total += run_episode(p, &sim, day, cfg.initial_soc, 0)?.total_cost_eur;
        }
        Ok(total / eval.len() as f64)
    };
    let rbc = RbcPolicy { battery: cfg.env.battery.clone() };
    let teacher = GreedyQ { name: "dqn".into(), network: &trained.agent.online };
    println!("rbc {:.3} EUR/day, teacher {:.3} EUR/day", mean_cost(&rbc)?, mean_cost(&teacher)?);

    let names = action_names(&cfg.env.battery.action_levels);
    for seed in 1..=3 {
        let student = train_student(&dataset, &cfg.student, seed)?;
        let policy = TreePolicy { name: "ddt".into(), tree: &student.tree };
        println!(
            "\nseed {seed}: agreement {:.1}%, final loss {:.4}, {:.3} EUR/day",
            100.0 * agreement_rate(&student.tree, &dataset),
            student.loss_curve.last().copied().unwrap_or(f64::NAN),
            mean_cost(&policy)?
        );
        print!("{}", export_rules(&student.tree, &FEATURE_NAMES.map(String::from), &names, ExportFormat::Text)?);
    }
    Ok(())
}
