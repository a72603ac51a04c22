//! Daily cost of the exact discrete-action optimum next to the rule-based
//! controller and a do-nothing battery, on the default synthetic days.

use hems_ddt::dataio::{NormalizationStats, RunConfig};
use hems_ddt::envsim::Simulator;
use hems_ddt::evalkit::{dp_grid_cost, dp_optimal_cost, run_episode, ConstantPolicy, RbcPolicy};

fn main() -> hems_ddt::Result<()> {
    let cfg = RunConfig::default();
    let (train, eval) = cfg.resolve_profiles()?;
    let sim = Simulator::new(cfg.env.clone(), NormalizationStats::from_profiles(&train)?)?;
    let rbc = RbcPolicy { battery: cfg.env.battery.clone() };
    let idle = ConstantPolicy { name: "idle".into(), action: cfg.env.battery.idle_action() };

    println!("{:<10} {:>9} {:>9} {:>9} {:>9}", "day", "optimal", "grid201", "rbc", "idle");
    let mut totals = [0.0; 4];
    for day in &eval {
        let row = [
            dp_optimal_cost(&sim, day, cfg.initial_soc)?,
            dp_grid_cost(&sim, day, cfg.initial_soc, 201)?,
            run_episode(&rbc, &sim, day, cfg.initial_soc, 0)?.total_cost_eur,
            run_episode(&idle, &sim, day, cfg.initial_soc, 0)?.total_cost_eur,
        ];
        println!("{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", day.label, row[0], row[1], row[2], row[3]);
        for (t, v) in totals.iter_mut().zip(row) {
            *t += v / eval.len() as f64;
        }
    }
    println!("{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", "mean", totals[0], totals[1], totals[2], totals[3]);
    println!("optimum beats the rule-based controller by {:.1}%", 100.0 * (totals[2] - totals[0]) / totals[2]);
    Ok(())
}
