//! A shortened end-to-end run (fewer teacher episodes and student epochs)
//! of the reproduction pipeline, printing the threshold checks.
//!
//! `cargo run --release --example reproduce -- [out dir]`

use hems_ddt::cli::{cmd_reproduce, Layout};
use hems_ddt::dataio::RunConfig;

fn main() -> hems_ddt::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("hems-ddt-reproduce"), Into::into);
    let mut cfg = RunConfig::default();
    cfg.teacher.episodes = 300;
    cfg.student.epochs = 50;
    cfg.heatmap_resolution = 21;
    let checks = cmd_reproduce(&cfg, &Layout::new(&out))?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{failed} of {} checks failed at this reduced budget; artifacts in {}", checks.len(), out.display());
    Ok(())
}
