//! Distills students from a synthetic teacher built on a known depth-2
//! rule set, keeps the seed with the lowest training loss and checks how
//! much of a held-out state grid it recovers.

use std::time::Instant;

use hems_ddt::ddt::{action_names, export_rules, ExportFormat};
use hems_ddt::distill::{
    agreement_rate, best_student, planted_config, planted_dataset, planted_tree, state_grid, train_student, PLANTED_SAMPLES,
};
use hems_ddt::envsim::{BatteryParams, FEATURE_NAMES};

fn main() -> hems_ddt::Result<()> {
    let planted = planted_tree();
    let dataset = planted_dataset(&planted, 5, PLANTED_SAMPLES, 1.0, 7);
    let grid = state_grid(41, &[0.1, 0.5, 0.9]);
    let names = action_names(&BatteryParams::default().action_levels);
    let features = FEATURE_NAMES.map(String::from);
    let grid_agreement = |tree: &hems_ddt::ddt::CrispTree| {
        let hits = grid.iter().filter(|s| tree.predict(&s[..]) == planted.predict(&s[..])).count();
        100.0 * hits as f64 / grid.len() as f64
    };

    let start = Instant::now();
    let mut students = Vec::new();
    for seed in 1..=5 {
        let s = train_student(&dataset, &planted_config(), seed)?;
        println!(
            "seed {seed}: final loss {:.4}, training-set agreement {:.2}%, grid agreement {:.2}%",
            s.loss_curve.last().copied().unwrap_or(f64::NAN),
            100.0 * agreement_rate(&s.tree, &dataset),
            grid_agreement(&s.tree)
        );
        students.push(s);
    }
    let best = best_student(&students).expect("five students");
    println!("\nlowest-loss seed {} ({:.1}s total):", best.seed, start.elapsed().as_secs_f64());
    print!("{}", export_rules(&best.tree, &features, &names, ExportFormat::Text)?);
    println!("\nplanted:");
    print!("{}", export_rules(&planted, &features, &names, ExportFormat::Text)?);
    println!("grid agreement {:.2}%", grid_agreement(&best.tree));
    Ok(())
}
