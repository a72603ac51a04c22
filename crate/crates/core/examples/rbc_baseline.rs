//! The self-consumption rule-based controller on every evaluation day,
//! with the energy and capacity parts of its cost and one hourly trace.

use hems_ddt::dataio::{NormalizationStats, RunConfig};
use hems_ddt::envsim::Simulator;
use hems_ddt::evalkit::{run_episode, RbcPolicy};

fn main() -> hems_ddt::Result<()> {
    let cfg = RunConfig::default();
    let (train, eval) = cfg.resolve_profiles()?;
    let sim = Simulator::new(cfg.env.clone(), NormalizationStats::from_profiles(&train)?)?;
    let rbc = RbcPolicy { battery: cfg.env.battery.clone() };

    println!("{:<16} {:>8} {:>8} {:>8}", "day", "total", "energy", "capacity");
    let mut reports = Vec::new();
    for day in &eval {
        let r = run_episode(&rbc, &sim, day, cfg.initial_soc, 0)?;
        println!("{:<16} {:>8.3} {:>8.3} {:>8.3}", r.day, r.total_cost_eur, r.energy_cost_eur, r.capacity_cost_eur);
        reports.push(r);
    }
    let mean = reports.iter().map(|r| r.total_cost_eur).sum::<f64>() / reports.len() as f64;
    println!("mean daily cost {mean:.3} EUR\n");
    print!("{}", reports[0].trace_csv());
    Ok(())
}
