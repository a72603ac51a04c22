//! Evaluation: policy rollouts, an exact dynamic-programming optimum for the
//! discrete action set, cost comparison tables and policy heatmaps.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataio::DayProfile;
use crate::ddt::CrispTree;
use crate::diffmath::{argmin, DenseNet};
use crate::envsim::{battery_update, aggregate_power, capacity_cost, energy_cost, rbc_action, BatteryParams, EnvState, Simulator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSignal {
    Index(usize),
    /// Charge signal in `[-1, 1]`.
    Continuous(f64),
}

/// A deterministic controller.
pub trait Policy {
    fn name(&self) -> &str;
    fn act(&self, state: &EnvState) -> Result<ActionSignal>;
}

/// Greedy policy of a Q-network over costs.
pub struct GreedyQ<'a> {
    pub name: String,
    pub network: &'a DenseNet,
}

impl Policy for GreedyQ<'_> {
    fn name(&self) -> &str {
        &self.name
    }
    fn act(&self, state: &EnvState) -> Result<ActionSignal> {
        Ok(ActionSignal::Index(argmin(&self.network.forward(&state.normalized)?)))
    }
}

pub struct TreePolicy<'a> {
    pub name: String,
    pub tree: &'a CrispTree,
}

impl Policy for TreePolicy<'_> {
    fn name(&self) -> &str {
        &self.name
    }
    fn act(&self, state: &EnvState) -> Result<ActionSignal> {
        Ok(ActionSignal::Index(self.tree.predict(&state.normalized)))
    }
}

/// The self-consumption rule-based controller.
pub struct RbcPolicy {
    pub battery: BatteryParams,
}

impl Policy for RbcPolicy {
    fn name(&self) -> &str {
        "rbc"
    }
    fn act(&self, state: &EnvState) -> Result<ActionSignal> {
        Ok(ActionSignal::Continuous(rbc_action(state.demand_kw, state.pv_kw, &self.battery)))
    }
}

/// Always the same discrete action.
pub struct ConstantPolicy {
    pub name: String,
    pub action: usize,
}

impl Policy for ConstantPolicy {
    fn name(&self) -> &str {
        &self.name
    }
    fn act(&self, _state: &EnvState) -> Result<ActionSignal> {
        Ok(ActionSignal::Index(self.action))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub hour: usize,
    pub energy_kwh: f64,
    /// Charge signal actually requested, in `[-1, 1]`.
    pub signal: f64,
    pub action_index: Option<usize>,
    pub grid_kw: f64,
    pub cost_eur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub policy: String,
    pub seed: u64,
    pub day: String,
    pub total_cost_eur: f64,
    pub energy_cost_eur: f64,
    pub capacity_cost_eur: f64,
    pub trace: Vec<TraceStep>,
}

impl EpisodeReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("hour,energy_kwh,signal,action_index,grid_kw,cost_eur\n");
        for s in &self.trace {
            let idx = s.action_index.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", s.hour, s.energy_kwh, s.signal, idx, s.grid_kw, s.cost_eur);
        }
        out
    }
}

/// Rolls one day forward under `policy`, starting at `initial_soc` of capacity.
pub fn run_episode(policy: &dyn Policy, sim: &Simulator, day: &DayProfile, initial_soc: f64, seed: u64) -> Result<EpisodeReport> {
    let cap = sim.params.battery.capacity_kwh;
    let mut state = sim.reset(day, initial_soc * cap)?;
    let mut trace = Vec::with_capacity(sim.horizon());
    let (mut total, mut energy, mut capacity) = (0.0, 0.0, 0.0);
    for _ in 0..sim.horizon() {
        let (out, signal, action_index) = match policy.act(&state)? {
            ActionSignal::Index(a) => {
                let out = sim.step(&state, a, day).map_err(|e| match e {
                    Error::Contract(msg) => Error::Contract(format!("policy '{}': {msg}", policy.name())),
                    other => other,
                })?;
                (out, sim.params.battery.action_levels[a], Some(a))
            }
            ActionSignal::Continuous(u) => (sim.step_signal(&state, u, day)?, u.clamp(-1.0, 1.0), None),
        };
        trace.push(TraceStep {
            hour: state.hour,
            energy_kwh: state.energy_kwh,
            signal,
            action_index,
            grid_kw: out.realized_power_kw,
            cost_eur: out.cost_eur,
        });
        total += out.cost_eur;
        energy += out.energy_cost_eur;
        capacity += out.capacity_cost_eur;
        state = out.next_state;
    }
    Ok(EpisodeReport {
        policy: policy.name().to_string(),
        seed,
        day: day.label.clone(),
        total_cost_eur: total,
        energy_cost_eur: energy,
        capacity_cost_eur: capacity,
        trace,
    })
}

fn step_cost(sim: &Simulator, day: &DayProfile, hour: usize, energy_kwh: f64, u: f64) -> (f64, f64) {
    let tariff = &sim.params.tariff;
    let bat = battery_update(energy_kwh, u, &sim.params.battery, tariff.timestep_hours);
    let p = aggregate_power(day.demand_kw[hour], day.pv_kw[hour], bat.power_kw);
    let price = day.prices_eur_per_kwh[hour];
    (energy_cost(p, price, tariff) + capacity_cost(p, tariff), bat.energy_kwh)
}

/// Stored energies are merged when they agree to this many kWh.
const ENERGY_KEY_SCALE: f64 = 1e9;

fn energy_key(e: f64) -> i64 {
    (e * ENERGY_KEY_SCALE).round() as i64
}

/// Minimal daily cost over all sequences of discrete actions, by backward
/// induction over the exact set of energies reachable from the initial
/// state of charge (merged at 1e-9 kWh).
pub fn dp_optimal_cost(sim: &Simulator, day: &DayProfile, initial_soc: f64) -> Result<f64> {
    let cap = sim.params.battery.capacity_kwh;
    sim.reset(day, initial_soc * cap)?;
    let levels = &sim.params.battery.action_levels;
    let horizon = sim.horizon();
    // Forward pass: reachable energies per hour.
    let mut layers: Vec<Vec<f64>> = vec![vec![initial_soc * cap]];
    for t in 0..horizon {
        let mut next: BTreeMap<i64, f64> = BTreeMap::new();
        for &e in &layers[t] {
            for &u in levels {
                let (_, e2) = step_cost(sim, day, t, e, u);
                next.entry(energy_key(e2)).or_insert(e2);
            }
        }
        layers.push(next.into_values().collect());
    }
    // Backward pass.
    let mut value: HashMap<i64, f64> = layers[horizon].iter().map(|&e| (energy_key(e), 0.0)).collect();
    for t in (0..horizon).rev() {
        let mut cur = HashMap::with_capacity(layers[t].len());
        for &e in &layers[t] {
            let best = levels
                .iter()
                .map(|&u| {
                    let (c, e2) = step_cost(sim, day, t, e, u);
                    c + value[&energy_key(e2)]
                })
                .fold(f64::INFINITY, f64::min);
            cur.insert(energy_key(e), best);
        }
        value = cur;
    }
    Ok(value[&energy_key(initial_soc * cap)])
}

/// Grid approximation of the same optimum: `grid_size` evenly spaced
/// energy levels with linear interpolation of the value function. Cheaper
/// to reason about but not a guaranteed lower bound.
pub fn dp_grid_cost(sim: &Simulator, day: &DayProfile, initial_soc: f64, grid_size: usize) -> Result<f64> {
    if grid_size < 2 {
        return Err(Error::Config("DP grid needs at least two levels".into()));
    }
    let cap = sim.params.battery.capacity_kwh;
    sim.reset(day, initial_soc * cap)?;
    let levels = &sim.params.battery.action_levels;
    let de = cap / (grid_size - 1) as f64;
    let interp = |v: &[f64], e: f64| {
        let x = (e / de).clamp(0.0, (grid_size - 1) as f64);
        let i = (x.floor() as usize).min(grid_size - 2);
        let f = x - i as f64;
        v[i] * (1.0 - f) + v[i + 1] * f
    };
    let q_at = |v: &[f64], t: usize, e: f64| {
        levels
            .iter()
            .map(|&u| {
                let (c, e2) = step_cost(sim, day, t, e, u);
                c + interp(v, e2)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut v = vec![0.0; grid_size];
    for t in (1..sim.horizon()).rev() {
        v = (0..grid_size).map(|k| q_at(&v, t, k as f64 * de)).collect();
    }
    Ok(q_at(&v, 0, initial_soc * cap))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mean_daily_cost: f64,
    pub daily_costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRow {
    pub policy: String,
    pub seeds: Vec<SeedResult>,
    /// Over the per-seed mean daily costs.
    pub summary: Summary,
    /// `100 (baseline − mean) / baseline`; positive means cheaper than the baseline.
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub day_labels: Vec<String>,
    pub rows: Vec<PolicyRow>,
}

/// One trained policy instance to evaluate; instances sharing a name are
/// seeds of the same method.
pub struct Entry<'a> {
    pub seed: u64,
    pub policy: &'a dyn Policy,
}

/// Runs every entry on every day and aggregates per policy name, in order
/// of first appearance. `baseline` names the reference row for the
/// improvement column.
pub fn compare_policies(entries: &[Entry<'_>], sim: &Simulator, days: &[DayProfile], initial_soc: f64, baseline: &str) -> Result<Comparison> {
    if entries.is_empty() || days.is_empty() {
        return Err(Error::Usage("comparison needs at least one policy and one day".into()));
    }
    let mut rows: Vec<PolicyRow> = Vec::new();
    for entry in entries {
        let daily_costs = days
            .iter()
            .map(|d| Ok(run_episode(entry.policy, sim, d, initial_soc, entry.seed)?.total_cost_eur))
            .collect::<Result<Vec<f64>>>()?;
        let seed = SeedResult {
            seed: entry.seed,
            mean_daily_cost: daily_costs.iter().sum::<f64>() / daily_costs.len() as f64,
            daily_costs,
        };
        match rows.iter_mut().find(|r| r.policy == entry.policy.name()) {
            Some(row) => row.seeds.push(seed),
            None => rows.push(PolicyRow {
                policy: entry.policy.name().to_string(),
                seeds: vec![seed],
                summary: Summary::of(&[0.0]),
                improvement_pct: None,
            }),
        }
    }
    for row in &mut rows {
        let means: Vec<f64> = row.seeds.iter().map(|s| s.mean_daily_cost).collect();
        row.summary = Summary::of(&means);
    }
    let base = rows.iter().find(|r| r.policy == baseline).map(|r| r.summary.mean);
    for row in &mut rows {
        row.improvement_pct = base.map(|b| 100.0 * (b - row.summary.mean) / b);
    }
    Ok(Comparison {
        baseline: baseline.to_string(),
        day_labels: days.iter().map(|d| d.label.clone()).collect(),
        rows,
    })
}

impl Comparison {
    pub fn row(&self, policy: &str) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("policy,n_seeds,mean,min,q1,median,q3,max,improvement_pct\n");
        for r in &self.rows {
            let s = &r.summary;
            let imp = r.improvement_pct.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{imp}",
                r.policy,
                r.seeds.len(),
                s.mean,
                s.min,
                s.q1,
                s.median,
                s.q3,
                s.max
            );
        }
        out
    }

    /// One line per (policy, seed, day).
    pub fn raw_csv(&self) -> String {
        let mut out = String::from("policy,seed,day,cost_eur\n");
        for r in &self.rows {
            for s in &r.seeds {
                for (label, c) in self.day_labels.iter().zip(&s.daily_costs) {
                    let _ = writeln!(out, "{},{},{label},{c}", r.policy, s.seed);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }
}

/// Actions over a `(soc, price)` grid at one demand level; `cells[i][j]`
/// is SoC index `i`, price index `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub demand: f64,
    pub soc_axis: Vec<f64>,
    pub price_axis: Vec<f64>,
    pub cells: Vec<Vec<usize>>,
}

/// Evenly spaced points on `[0, 1]`.
pub fn unit_axis(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect()
}

fn denorm(x: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + x * (hi - lo)
}

/// Evaluates a discrete-action policy on synthetic states. All axis and
/// fixed values are normalized feature values; raw quantities are recovered
/// from the simulator's statistics so that rule-based policies see the same
/// state.
pub fn policy_heatmap(
    policy: &dyn Policy,
    sim: &Simulator,
    soc_axis: &[f64],
    price_axis: &[f64],
    demand_levels: &[f64],
    hour: usize,
    pv: f64,
) -> Result<Vec<HeatmapGrid>> {
    if soc_axis.is_empty() || price_axis.is_empty() || demand_levels.is_empty() {
        return Err(Error::Config("heatmap axes must be non-empty".into()));
    }
    let stats = sim.stats;
    let cap = sim.params.battery.capacity_kwh;
    let levels = &sim.params.battery.action_levels;
    demand_levels
        .iter()
        .map(|&d| {
            let cells = soc_axis
                .iter()
                .map(|&soc| {
                    price_axis
                        .iter()
                        .map(|&p| {
                            let mut state = sim.state_from_raw(
                                hour,
                                soc * cap,
                                denorm(p, stats.price),
                                denorm(d, stats.demand),
                                denorm(pv, stats.pv),
                            );
                            // Keep the requested normalized coordinates exactly.
                            state.normalized[1] = soc;
                            state.normalized[2] = p;
                            state.normalized[3] = d;
                            state.normalized[4] = pv;
                            Ok(match policy.act(&state)? {
                                ActionSignal::Index(a) if a < levels.len() => a,
                                ActionSignal::Index(a) => {
                                    return Err(Error::Contract(format!("action index {a} out of range")))
                                }
                                ActionSignal::Continuous(u) => nearest_level(levels, u),
                            })
                        })
                        .collect::<Result<Vec<usize>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HeatmapGrid {
                demand: d,
                soc_axis: soc_axis.to_vec(),
                price_axis: price_axis.to_vec(),
                cells,
            })
        })
        .collect()
}

fn nearest_level(levels: &[f64], u: f64) -> usize {
    let dist: Vec<f64> = levels.iter().map(|l| (l - u).abs()).collect();
    argmin(&dist)
}

impl HeatmapGrid {
    pub fn distinct_actions(&self) -> usize {
        let mut seen: Vec<usize> = self.cells.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Number of 4-connected regions of equal action.
    pub fn region_count(&self) -> usize {
        let (rows, cols) = (self.cells.len(), self.cells.first().map_or(0, Vec::len));
        let mut seen = vec![vec![false; cols]; rows];
        let mut regions = 0;
        for r0 in 0..rows {
            for c0 in 0..cols {
                if seen[r0][c0] {
                    continue;
                }
                regions += 1;
                let a = self.cells[r0][c0];
                let mut stack = vec![(r0, c0)];
                seen[r0][c0] = true;
                while let Some((r, c)) = stack.pop() {
                    let mut visit = |r2: usize, c2: usize| {
                        if !seen[r2][c2] && self.cells[r2][c2] == a {
                            seen[r2][c2] = true;
                            stack.push((r2, c2));
                        }
                    };
                    if r > 0 {
                        visit(r - 1, c);
                    }
                    if r + 1 < rows {
                        visit(r + 1, c);
                    }
                    if c > 0 {
                        visit(r, c - 1);
                    }
                    if c + 1 < cols {
                        visit(r, c + 1);
                    }
                }
            }
        }
        regions
    }

    /// Long format: `demand,soc,price,action`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("demand,soc,price,action\n");
        for (i, row) in self.cells.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{a}", self.demand, self.soc_axis[i], self.price_axis[j]);
            }
        }
        out
    }

    /// Standalone SVG: price on the x axis, SoC upwards, one colour per action.
    pub fn to_svg(&self, title: &str, action_names: &[String]) -> String {
        const PALETTE: [&str; 8] = ["#b2182b", "#ef8a62", "#f7f7f7", "#67a9cf", "#2166ac", "#1b7837", "#762a83", "#999999"];
        let cell = 10.0;
        let (rows, cols) = (self.cells.len(), self.cells.first().map_or(0, Vec::len));
        let (left, top) = (50.0, 30.0);
        let width = left + cols as f64 * cell + 160.0;
        let height = top + rows as f64 * cell + 40.0;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">"
        );
        let _ = writeln!(out, "<text x=\"{left}\" y=\"18\">{}</text>", escape(title));
        for (i, row) in self.cells.iter().enumerate() {
            let y = top + (rows - 1 - i) as f64 * cell;
            for (j, &a) in row.iter().enumerate() {
                let x = left + j as f64 * cell;
                let _ = writeln!(
                    out,
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"/>",
                    PALETTE[a % PALETTE.len()]
                );
            }
        }
        let bottom = top + rows as f64 * cell;
        let _ = writeln!(out, "<text x=\"{left}\" y=\"{}\">price (normalized) →</text>", bottom + 16.0);
        let _ = writeln!(
            out,
            "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\">SoC →</text>",
            bottom,
            bottom
        );
        let lx = left + cols as f64 * cell + 15.0;
        for (a, name) in action_names.iter().enumerate() {
            let y = top + a as f64 * 16.0;
            let _ = writeln!(
                out,
                "<rect x=\"{lx}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{}\" stroke=\"#333\"/><text x=\"{}\" y=\"{}\">{}</text>",
                PALETTE[a % PALETTE.len()],
                lx + 15.0,
                y + 9.0,
                escape(name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::NormalizationStats;
    use crate::ddt::CrispNode;
    use crate::envsim::{EnvParams, TariffParams};

    fn flat_day(price: f64, demand: f64, pv: f64) -> DayProfile {
        DayProfile {
            prices_eur_per_kwh: vec![price; 24],
            demand_kw: vec![demand; 24],
            pv_kw: vec![pv; 24],
            label: "flat".into(),
        }
    }

    fn sim_with(tariff: TariffParams) -> Simulator {
        let stats = NormalizationStats {
            price: (0.05, 0.25),
            demand: (0.0, 5.0),
            pv: (0.0, 4.0),
        };
        Simulator::new(
            EnvParams {
                battery: BatteryParams::default(),
                tariff,
            },
            stats,
        )
        .unwrap()
    }

    fn sample_day() -> DayProfile {
        let prices: Vec<f64> = (0..24).map(|h| if (8..20).contains(&h) { 0.25 } else { 0.05 }).collect();
        DayProfile {
            prices_eur_per_kwh: prices,
            demand_kw: (0..24).map(|h| 0.5 + (h % 7) as f64 * 0.4).collect(),
            pv_kw: (0..24).map(|h| if (9..16).contains(&h) { 3.0 - (h as f64 - 12.5).abs() } else { 0.0 }).collect(),
            label: "sample".into(),
        }
    }

    #[test]
    fn idle_policy_matches_direct_sum() {
        let tariff = TariffParams {
            capacity_rate_eur_per_kw: 0.0,
            ..Default::default()
        };
        let sim = sim_with(tariff.clone());
        let day = sample_day();
        let idle = ConstantPolicy { name: "idle".into(), action: 2 };
        let r = run_episode(&idle, &sim, &day, 0.5, 0).unwrap();
        let mut expect = 0.0;
        for t in 0..24 {
            let net = day.demand_kw[t] - day.pv_kw[t];
            let price = if net >= 0.0 { day.prices_eur_per_kwh[t] } else { 0.25 * day.prices_eur_per_kwh[t] };
            expect += price * net;
        }
        assert!((r.total_cost_eur - expect).abs() < 1e-12);
        assert!((r.total_cost_eur - r.energy_cost_eur - r.capacity_cost_eur).abs() < 1e-9);
        assert_eq!(r.trace.len(), 24);
    }

    #[test]
    fn rbc_on_flat_day_without_pv() {
        // Starting empty with load 1 kW and no PV the rule asks for -0.25,
        // but an empty battery cannot discharge: every hour costs the load.
        let sim = sim_with(TariffParams::default());
        let day = flat_day(0.1, 1.0, 0.0);
        let r = run_episode(&RbcPolicy { battery: BatteryParams::default() }, &sim, &day, 0.0, 0).unwrap();
        assert!(r.trace.iter().all(|s| s.energy_kwh == 0.0 && s.signal == -0.25));
        let expected = 24.0 * (0.1 * 1.0 + 0.05 * 4.0);
        assert!((r.total_cost_eur - expected).abs() < 1e-12);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let sim = sim_with(TariffParams::default());
        let rbc = RbcPolicy { battery: BatteryParams::default() };
        let a = run_episode(&rbc, &sim, &sample_day(), 0.5, 3).unwrap();
        let b = run_episode(&rbc, &sim, &sample_day(), 0.5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_action_is_contract_error() {
        let sim = sim_with(TariffParams::default());
        let bad = ConstantPolicy { name: "bad".into(), action: 9 };
        assert!(matches!(run_episode(&bad, &sim, &sample_day(), 0.5, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn dp_zero_prices_is_capacity_floor() {
        let sim = sim_with(TariffParams::default());
        let day = flat_day(0.0, 1.0, 0.0);
        let v = dp_optimal_cost(&sim, &day, 0.5).unwrap();
        assert!((v - 24.0 * 0.05 * 4.0).abs() < 1e-12);
        let free = sim_with(TariffParams {
            capacity_rate_eur_per_kw: 0.0,
            ..Default::default()
        });
        assert_eq!(dp_optimal_cost(&free, &day, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn dp_one_step_is_exhaustive_minimum() {
        let sim = sim_with(TariffParams {
            horizon_steps: 1,
            ..Default::default()
        });
        let day = DayProfile {
            prices_eur_per_kwh: vec![0.2],
            demand_kw: vec![2.0],
            pv_kw: vec![0.5],
            label: "one".into(),
        };
        let brute = (0..5)
            .map(|a| {
                let s = sim.reset(&day, 5.0).unwrap();
                sim.step(&s, a, &day).unwrap().cost_eur
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(dp_optimal_cost(&sim, &day, 0.5).unwrap(), brute);
    }

    #[test]
    fn dp_bounds_simple_policies() {
        let sim = sim_with(TariffParams::default());
        let day = sample_day();
        let dp = dp_optimal_cost(&sim, &day, 0.5).unwrap();
        for a in 0..5 {
            let p = ConstantPolicy { name: "c".into(), action: a };
            assert!(dp <= run_episode(&p, &sim, &day, 0.5, 0).unwrap().total_cost_eur + 1e-9);
        }
        let rbc = run_episode(&RbcPolicy { battery: BatteryParams::default() }, &sim, &day, 0.5, 0).unwrap();
        assert!(dp <= rbc.total_cost_eur + 1e-9);
        let grid = dp_grid_cost(&sim, &day, 0.5, 201).unwrap();
        assert!((grid - dp).abs() < 0.05, "grid {grid} exact {dp}");
    }

    #[test]
    fn self_comparison_is_zero_percent() {
        let sim = sim_with(TariffParams::default());
        let rbc = RbcPolicy { battery: BatteryParams::default() };
        let cmp = compare_policies(&[Entry { seed: 0, policy: &rbc }], &sim, &[sample_day()], 0.5, "rbc").unwrap();
        assert_eq!(cmp.rows.len(), 1);
        assert_eq!(cmp.rows[0].improvement_pct, Some(0.0));
    }

    #[test]
    fn summary_quartiles() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max, s.mean), (1.0, 2.0, 3.0, 4.0, 5.0, 3.0));
    }

    #[test]
    fn heatmap_of_constant_and_tree_policies() {
        let sim = sim_with(TariffParams::default());
        let axis = unit_axis(41);
        let c = ConstantPolicy { name: "c".into(), action: 3 };
        let maps = policy_heatmap(&c, &sim, &axis, &axis, &[0.1, 0.5], 12, 0.0).unwrap();
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|m| m.distinct_actions() == 1 && m.region_count() == 1));

        let tree = CrispTree {
            depth: 2,
            nodes: vec![
                CrispNode { feature: 2, threshold: 0.5, flipped: false },
                CrispNode { feature: 1, threshold: 0.3, flipped: false },
                CrispNode { feature: 1, threshold: 0.8, flipped: true },
            ],
            leaves: vec![0, 2, 4, 3],
        };
        let t = TreePolicy { name: "tree".into(), tree: &tree };
        let maps = policy_heatmap(&t, &sim, &axis, &axis, &[0.5], 12, 0.0).unwrap();
        assert_eq!(maps[0].region_count(), 4);
        assert!(maps[0].to_svg("t", &crate::ddt::action_names(&[-1.0, -0.5, 0.0, 0.5, 1.0])).starts_with("<svg"));
        assert_eq!(maps[0].to_csv().lines().count(), 1 + 41 * 41);
    }
}
