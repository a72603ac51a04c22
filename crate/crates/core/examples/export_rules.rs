//! Renders a crisp tree as if/else rules, Graphviz DOT and JSON, and
//! reads the JSON back.

use hems_ddt::ddt::{action_names, export_rules, parse_tree_json, ExportFormat};
use hems_ddt::distill::planted_tree;
use hems_ddt::envsim::{BatteryParams, FEATURE_NAMES};

fn main() -> hems_ddt::Result<()> {
    let tree = planted_tree();
    let actions = action_names(&BatteryParams::default().action_levels);
    let features = FEATURE_NAMES.map(String::from);
    for format in ExportFormat::ALL {
        let text = export_rules(&tree, &features, &actions, format)?;
        println!("--- tree.{} ({} bytes)\n{text}", format.extension(), text.len());
        if format == ExportFormat::Json {
            assert_eq!(parse_tree_json(&text, "tree.json")?, tree);
            println!("json round trip ok");
        }
    }
    println!("inference parameters: {}", tree.inference_param_count());
    Ok(())
}
