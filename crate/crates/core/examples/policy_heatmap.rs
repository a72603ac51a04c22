//! Action maps over (SoC, price) for the rule-based controller and a
//! depth-2 tree, printed as character grids with region counts. The SVG
//! panels go to the system temp directory.

use hems_ddt::dataio::{write_file, NormalizationStats, RunConfig};
use hems_ddt::ddt::action_names;
use hems_ddt::distill::planted_tree;
use hems_ddt::envsim::Simulator;
use hems_ddt::evalkit::{policy_heatmap, unit_axis, Policy, RbcPolicy, TreePolicy};

fn main() -> hems_ddt::Result<()> {
    let cfg = RunConfig::default();
    let (train, _) = cfg.resolve_profiles()?;
    let sim = Simulator::new(cfg.env.clone(), NormalizationStats::from_profiles(&train)?)?;
    let tree = planted_tree();
    let policies: [&dyn Policy; 2] = [
        &RbcPolicy { battery: cfg.env.battery.clone() },
        &TreePolicy { name: "planted".into(), tree: &tree },
    ];
    let names = action_names(&cfg.env.battery.action_levels);
    let glyph = ['D', 'd', '.', 'c', 'C'];
    let axis = unit_axis(21);
    let out_dir = std::env::temp_dir().join("hems-ddt-heatmaps");
    for p in policies {
        for g in policy_heatmap(p, &sim, &axis, &axis, &[0.1, 0.9], 12, 0.0)? {
            println!("{} at demand {:.1}: {} actions, {} regions (rows: SoC high to low, columns: price low to high)", p.name(), g.demand, g.distinct_actions(), g.region_count());
            for row in g.cells.iter().rev() {
                println!("  {}", row.iter().map(|&a| glyph[a]).collect::<String>());
            }
            let path = out_dir.join(format!("{}-{:.1}.svg", p.name(), g.demand));
            write_file(&path, g.to_svg(p.name(), &names).as_bytes())?;
        }
    }
    println!("legend: D discharge 100%, d discharge 50%, . idle, c charge 50%, C charge 100%");
    println!("svg written to {}", out_dir.display());
    Ok(())
}
