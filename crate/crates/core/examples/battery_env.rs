//! Steps the battery environment by hand: one synthetic day, charging at
//! night and discharging during the expensive window, with a per-hour log.

use hems_ddt::dataio::{NormalizationStats, RunConfig};
use hems_ddt::envsim::Simulator;

fn main() -> hems_ddt::Result<()> {
    let cfg = RunConfig::default();
    let (train, _) = cfg.resolve_profiles()?;
    let sim = Simulator::new(cfg.env.clone(), NormalizationStats::from_profiles(&train)?)?;
    let day = &train[0];
    let levels = &cfg.env.battery.action_levels;
    let pick = |level: f64| levels.iter().position(|&l| l == level).expect("level exists");

    let mut state = sim.reset(day, 0.5 * cfg.env.battery.capacity_kwh)?;
    let mut total = 0.0;
    println!("hour  price  demand    pv  action  energy  grid kW  cost");
    for hour in 0..sim.horizon() {
        let action = match hour {
            0..=5 => pick(0.5),
            8..=19 if day.demand_kw[hour] > 1.5 => pick(-1.0),
            8..=19 => pick(-0.5),
            _ => cfg.env.battery.idle_action(),
        };
        let out = sim.step(&state, action, day)?;
        total += out.cost_eur;
        println!(
            "{hour:>4}  {:.2}  {:>6.2}  {:>4.2}  {:>+6.1}  {:>6.2}  {:>7.2}  {:.3}{}",
            state.price_eur_per_kwh,
            state.demand_kw,
            state.pv_kw,
            levels[action],
            out.next_state.energy_kwh,
            out.realized_power_kw,
            out.cost_eur,
            if out.clipped { "  (clipped)" } else { "" }
        );
        state = out.next_state;
    }
    println!("total cost {total:.3} EUR");
    Ok(())
}
