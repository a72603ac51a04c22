//! Command-line pipeline: data generation, teacher training, distillation,
//! evaluation, heatmaps, rule export and an end-to-end reproduction run.
//!
//! Output layout under `--out`:
//!
//! ```text
//! data/          train.csv, eval.csv
//! checkpoints/   teacher.bin, buffer.csv, teacher_loss.csv, dataset.csv
//! students/      seed-N/{params.txt, tree.json, tree.txt, tree.dot, loss.csv}, summary.csv
//! reports/       comparison_summary.csv, comparison_raw.csv, comparison.json, optimality.csv
//! heatmaps/      <policy>-demand-<d>.{csv,svg}, regions.csv
//! manifest-<command>.txt
//! ```
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error, 3 missing upstream artifact, 4 `reproduce` finished but at least
//! one threshold failed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::dataio::{save_profiles, write_file, DayProfile, NormalizationStats, RunConfig};
use crate::ddt::{action_names, export_rules, parse_tree_json, CrispTree, ExportFormat};
use crate::distill::{agreement_rate, build_dataset, train_student};
use crate::envsim::{Simulator, FEATURE_NAMES};
use crate::evalkit::{compare_policies, dp_optimal_cost, policy_heatmap, unit_axis, Comparison, Entry, GreedyQ, Policy, RbcPolicy, TreePolicy};
use crate::error::{Error, Result};
use crate::teacher::{train_teacher, ReplayBuffer, TeacherCheckpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_THRESHOLDS: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hems-ddt", version, about = "Battery dispatch with a DQN teacher distilled into a shallow decision tree")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic square-wave training and evaluation days.
    GenData(CommonArgs),
    /// Train the DQN teacher; writes checkpoint, replay buffer and loss curve.
    TrainTeacher(CommonArgs),
    /// Distill one depth-limited tree per seed from the teacher.
    Distill(CommonArgs),
    /// Compare policies on the evaluation days, with the DP optimum.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Policies to include: any of rbc, dqn, ddt.
        #[arg(long, value_delimiter = ',', default_value = "dqn,ddt,rbc")]
        policies: Vec<PolicyKind>,
    },
    /// Action heatmaps over (SoC, price) for the teacher and every student.
    Heatmap(CommonArgs),
    /// Re-export every student tree as text rules, DOT and JSON.
    ExportTree {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "text,dot,json")]
        formats: Vec<String>,
    },
    /// Run the full pipeline on the square-wave and no-PV scenarios and
    /// check the acceptance thresholds.
    Reproduce(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Rbc,
    Dqn,
    Ddt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriceModeArg {
    Square,
    File,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Config file (`key = value` lines); a manifest also works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Teacher seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Student seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, value_enum)]
    pub price_mode: Option<PriceModeArg>,
    /// Number of synthetic training days.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub capacity_rate: Option<f64>,
    /// Any config key, e.g. `--set episodes=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl CommonArgs {
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let mut overrides: Vec<(String, String)> = Vec::new();
        if let Some(s) = self.seed {
            overrides.push(("teacher_seed".into(), s.to_string()));
        }
        if let Some(s) = &self.seeds {
            overrides.push(("seeds".into(), join(s)));
        }
        if let Some(d) = self.depth {
            overrides.push(("depth".into(), d.to_string()));
        }
        if let Some(m) = self.price_mode {
            let v = match m {
                PriceModeArg::Square => "square",
                PriceModeArg::File => "file",
            };
            overrides.push(("price_mode".into(), v.into()));
        }
        if let Some(d) = self.days {
            overrides.push(("train_days".into(), d.to_string()));
        }
        if let Some(r) = self.capacity_rate {
            overrides.push(("capacity_rate".into(), r.to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, found '{kv}'")))?;
            overrides.push((k.trim().into(), v.trim().into()));
        }
        for (k, v) in overrides {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fixed artifact paths below an output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn train_data(&self) -> PathBuf {
        self.root.join("data/train.csv")
    }
    pub fn eval_data(&self) -> PathBuf {
        self.root.join("data/eval.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/teacher.bin")
    }
    pub fn buffer(&self) -> PathBuf {
        self.root.join("checkpoints/buffer.csv")
    }
    pub fn teacher_loss(&self) -> PathBuf {
        self.root.join("checkpoints/teacher_loss.csv")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("checkpoints/dataset.csv")
    }
    pub fn student_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("students/seed-{seed}"))
    }
    pub fn student_summary(&self) -> PathBuf {
        self.root.join("students/summary.csv")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifest-{command}.txt"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        })
    }
}

/// Records what a command read and wrote.
struct Manifest {
    command: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn write(&self, layout: &Layout, cfg: &RunConfig) -> Result<PathBuf> {
        let mut out = String::new();
        let _ = writeln!(out, "# hems-ddt manifest");
        let _ = writeln!(out, "# command: {}", self.command);
        let _ = writeln!(out, "# version: {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# teacher seed: {}", cfg.teacher_seed);
        let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "# student seeds: {}", seeds.join(","));
        for (tag, list) in [("input", &self.inputs), ("output", &self.outputs)] {
            for p in list {
                let shown = p.strip_prefix(&layout.root).unwrap_or(p);
                let _ = writeln!(out, "# {tag} {} sha256={}", shown.display(), file_hash(p)?);
            }
        }
        out.push_str(&cfg.to_text());
        let path = layout.manifest(&self.command);
        write_file(&path, out.as_bytes())?;
        Ok(path)
    }
}

/// Points the config at the generated day files unless explicit profiles
/// are configured.
fn bind_profiles(cfg: &mut RunConfig, layout: &Layout) -> Result<()> {
    if cfg.train_profiles.is_none() {
        require(&layout.train_data(), "gen-data")?;
        require(&layout.eval_data(), "gen-data")?;
        cfg.train_profiles = Some(layout.train_data());
        cfg.eval_profiles = Some(layout.eval_data());
    }
    Ok(())
}

fn profile_inputs(cfg: &RunConfig) -> Vec<PathBuf> {
    cfg.train_profiles.iter().chain(cfg.eval_profiles.iter()).cloned().collect()
}

fn simulator(cfg: &RunConfig, stats: NormalizationStats) -> Result<Simulator> {
    Simulator::new(cfg.env.clone(), stats)
}

pub fn cmd_gen_data(cfg: &RunConfig, layout: &Layout) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    cfg.train_profiles = None;
    cfg.eval_profiles = None;
    if cfg.price_mode == crate::dataio::PriceMode::File {
        return Err(Error::Usage(
            "gen-data builds square-wave days; with price_mode = file pass train_profiles instead".into(),
        ));
    }
    let (train, eval) = cfg.resolve_profiles()?;
    save_profiles(&layout.train_data(), &train)?;
    save_profiles(&layout.eval_data(), &eval)?;
    let mut m = Manifest::new("gen-data");
    m.outputs = vec![layout.train_data(), layout.eval_data()];
    println!("wrote {} training and {} evaluation days to {}", train.len(), eval.len(), layout.root.join("data").display());
    m.write(layout, &cfg)
}

pub fn cmd_train_teacher(cfg: &RunConfig, layout: &Layout) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    bind_profiles(&mut cfg, layout)?;
    let (train, _) = cfg.resolve_profiles()?;
    let stats = NormalizationStats::from_profiles(&train)?;
    let sim = simulator(&cfg, stats)?;
    let trained = train_teacher(&cfg.teacher, &sim, &train, cfg.teacher_seed)?;
    let ckpt = TeacherCheckpoint::from_network(&trained.agent.online, stats);
    ckpt.save(&layout.checkpoint())?;
    write_file(&layout.buffer(), trained.buffer.to_csv().as_bytes())?;
    write_file(&layout.teacher_loss(), trained.loss_csv().as_bytes())?;
    let tail = trained.log.len().saturating_sub(50);
    let recent: Vec<f64> = trained.log[tail..].iter().map(|l| l.episode_cost).collect();
    println!(
        "teacher trained: {} episodes, {} parameters, mean cost over last {} episodes {:.4} EUR",
        trained.log.len(),
        ckpt.network.param_count(),
        recent.len(),
        recent.iter().sum::<f64>() / recent.len().max(1) as f64
    );
    let mut m = Manifest::new("train-teacher");
    m.inputs = profile_inputs(&cfg);
    m.outputs = vec![layout.checkpoint(), layout.buffer(), layout.teacher_loss()];
    m.write(layout, &cfg)
}

fn load_teacher(layout: &Layout) -> Result<TeacherCheckpoint> {
    require(&layout.checkpoint(), "train-teacher")?;
    TeacherCheckpoint::load(&layout.checkpoint())
}

pub fn cmd_distill(cfg: &RunConfig, layout: &Layout) -> Result<PathBuf> {
    let ckpt = load_teacher(layout)?;
    require(&layout.buffer(), "train-teacher")?;
    let buf_text = std::fs::read_to_string(layout.buffer()).map_err(|e| Error::io(layout.buffer(), e))?;
    let buffer = ReplayBuffer::from_csv(&buf_text, &layout.buffer().display().to_string(), cfg.teacher.buffer_size.max(1))?;
    let teacher_id = file_hash(&layout.checkpoint())?[..16].to_string();
    let dataset = build_dataset(&ckpt.network, &buffer, &teacher_id)?;
    dataset.save(&layout.dataset())?;

    let features = FEATURE_NAMES;
    let actions = action_names(&cfg.env.battery.action_levels);
    let mut m = Manifest::new("distill");
    m.inputs = vec![layout.checkpoint(), layout.buffer()];
    m.outputs.push(layout.dataset());
    let mut summary = String::from("seed,final_loss,agreement,decisions,leaves\n");
    for &seed in &cfg.seeds {
        let student = train_student(&dataset, &cfg.student, seed)?;
        let dir = layout.student_dir(seed);
        let params_path = dir.join("params.txt");
        write_file(&params_path, student.params.to_text().as_bytes())?;
        let loss_path = dir.join("loss.csv");
        write_file(&loss_path, student.loss_csv().as_bytes())?;
        m.outputs.extend([params_path, loss_path]);
        for f in ExportFormat::ALL {
            let p = dir.join(format!("tree.{}", f.extension()));
            write_file(&p, export_rules(&student.tree, &features, &actions.iter().map(String::as_str).collect::<Vec<_>>(), f)?.as_bytes())?;
            m.outputs.push(p);
        }
        let agree = agreement_rate(&student.tree, &dataset);
        let final_loss = student.loss_curve.last().copied().unwrap_or(f64::NAN);
        let _ = writeln!(summary, "{seed},{final_loss},{agree},{},{}", student.tree.nodes.len(), student.tree.leaves.len());
        println!("seed {seed}: final loss {final_loss:.5}, agreement with teacher {:.1}%", 100.0 * agree);
    }
    write_file(&layout.student_summary(), summary.as_bytes())?;
    m.outputs.push(layout.student_summary());
    m.write(layout, cfg)
}

fn load_tree(layout: &Layout, seed: u64) -> Result<CrispTree> {
    let p = layout.student_dir(seed).join("tree.json");
    require(&p, "distill")?;
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    parse_tree_json(&text, &p.display().to_string())
}

/// Artifacts loaded for evaluation; borrowed by the policy objects.
struct Loaded {
    teacher: Option<TeacherCheckpoint>,
    trees: Vec<(u64, CrispTree)>,
    inputs: Vec<PathBuf>,
}

fn load_policies(cfg: &RunConfig, layout: &Layout, kinds: &[PolicyKind]) -> Result<Loaded> {
    let mut inputs = Vec::new();
    let teacher = if kinds.contains(&PolicyKind::Dqn) {
        inputs.push(layout.checkpoint());
        Some(load_teacher(layout)?)
    } else {
        None
    };
    let mut trees = Vec::new();
    if kinds.contains(&PolicyKind::Ddt) {
        for &seed in &cfg.seeds {
            trees.push((seed, load_tree(layout, seed)?));
            inputs.push(layout.student_dir(seed).join("tree.json"));
        }
    }
    Ok(Loaded { teacher, trees, inputs })
}

/// Normalization statistics: the teacher's when a checkpoint exists, so
/// every policy sees the same features the teacher was trained on.
fn eval_stats(layout: &Layout, train: &[DayProfile]) -> Result<NormalizationStats> {
    if layout.checkpoint().is_file() {
        Ok(TeacherCheckpoint::load(&layout.checkpoint())?.stats)
    } else {
        NormalizationStats::from_profiles(train)
    }
}

pub fn cmd_evaluate(cfg: &RunConfig, layout: &Layout, kinds: &[PolicyKind]) -> Result<(PathBuf, Comparison)> {
    if kinds.is_empty() {
        return Err(Error::Usage("--policies needs at least one of rbc, dqn, ddt".into()));
    }
    let mut cfg = cfg.clone();
    bind_profiles(&mut cfg, layout)?;
    let (train, eval) = cfg.resolve_profiles()?;
    let loaded = load_policies(&cfg, layout, kinds)?;
    let sim = simulator(&cfg, eval_stats(layout, &train)?)?;

    let dqn = loaded.teacher.as_ref().map(|t| GreedyQ {
        name: "dqn".into(),
        network: &t.network,
    });
    let trees: Vec<TreePolicy> = loaded
        .trees
        .iter()
        .map(|(_, t)| TreePolicy {
            name: format!("ddt-d{}", cfg.student.depth),
            tree: t,
        })
        .collect();
    let rbc = RbcPolicy {
        battery: cfg.env.battery.clone(),
    };
    let mut entries: Vec<Entry> = Vec::new();
    for kind in kinds {
        match kind {
            PolicyKind::Dqn => entries.extend(dqn.as_ref().map(|p| Entry {
                seed: cfg.teacher_seed,
                policy: p as &dyn Policy,
            })),
            PolicyKind::Ddt => entries.extend(trees.iter().zip(&loaded.trees).map(|(p, (seed, _))| Entry {
                seed: *seed,
                policy: p as &dyn Policy,
            })),
            PolicyKind::Rbc => entries.push(Entry { seed: 0, policy: &rbc }),
        }
    }
    let baseline = if kinds.contains(&PolicyKind::Rbc) {
        rbc.name().to_string()
    } else {
        entries[0].policy.name().to_string()
    };
    let comparison = compare_policies(&entries, &sim, &eval, cfg.initial_soc, &baseline)?;

    let mut opt = String::from("day,dp_optimal_eur");
    for r in &comparison.rows {
        for s in &r.seeds {
            let _ = write!(opt, ",{}_seed{}", r.policy, s.seed);
        }
    }
    opt.push('\n');
    for (d, day) in eval.iter().enumerate() {
        let dp = dp_optimal_cost(&sim, day, cfg.initial_soc)?;
        let _ = write!(opt, "{},{dp}", day.label);
        for r in &comparison.rows {
            for s in &r.seeds {
                let _ = write!(opt, ",{}", s.daily_costs[d]);
            }
        }
        opt.push('\n');
    }

    let rep = layout.reports();
    let files = [
        (rep.join("comparison_summary.csv"), comparison.summary_csv()),
        (rep.join("comparison_raw.csv"), comparison.raw_csv()),
        (rep.join("comparison.json"), comparison.to_json()),
        (rep.join("optimality.csv"), opt),
    ];
    let mut m = Manifest::new("evaluate");
    m.inputs = profile_inputs(&cfg);
    m.inputs.extend(loaded.inputs.iter().cloned());
    for (p, text) in files {
        write_file(&p, text.as_bytes())?;
        m.outputs.push(p);
    }
    println!("{:<10} {:>6} {:>10} {:>10} {:>10} {:>12}", "policy", "seeds", "mean EUR", "min", "max", "vs baseline");
    for r in &comparison.rows {
        let imp = r.improvement_pct.map(|v| format!("{v:+.1}%")).unwrap_or_default();
        println!(
            "{:<10} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>12}",
            r.policy,
            r.seeds.len(),
            r.summary.mean,
            r.summary.min,
            r.summary.max,
            imp
        );
    }
    Ok((m.write(layout, &cfg)?, comparison))
}

/// Per-panel structure of one policy's heatmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStats {
    pub policy: String,
    pub demand: f64,
    pub distinct_actions: usize,
    pub regions: usize,
}

pub fn cmd_heatmap(cfg: &RunConfig, layout: &Layout) -> Result<(PathBuf, Vec<HeatmapStats>)> {
    let mut cfg = cfg.clone();
    bind_profiles(&mut cfg, layout)?;
    let (train, _) = cfg.resolve_profiles()?;
    let loaded = load_policies(&cfg, layout, &[PolicyKind::Dqn, PolicyKind::Ddt])?;
    let sim = simulator(&cfg, eval_stats(layout, &train)?)?;
    let teacher = loaded.teacher.as_ref().expect("teacher requested");
    let mut policies: Vec<Box<dyn Policy + '_>> = vec![Box::new(GreedyQ {
        name: "dqn".into(),
        network: &teacher.network,
    })];
    for (seed, tree) in &loaded.trees {
        policies.push(Box::new(TreePolicy {
            name: format!("ddt-seed-{seed}"),
            tree,
        }));
    }
    let axis = unit_axis(cfg.heatmap_resolution);
    let names = action_names(&cfg.env.battery.action_levels);
    let mut m = Manifest::new("heatmap");
    m.inputs = loaded.inputs.clone();
    let mut stats = Vec::new();
    let mut regions = String::from("policy,demand,distinct_actions,regions\n");
    for p in &policies {
        let grids = policy_heatmap(p.as_ref(), &sim, &axis, &axis, &cfg.heatmap_demand_levels, cfg.heatmap_hour, cfg.heatmap_pv)?;
        for g in grids {
            let stem = format!("{}-demand-{:.2}", p.name(), g.demand);
            let csv = layout.heatmaps().join(format!("{stem}.csv"));
            let svg = layout.heatmaps().join(format!("{stem}.svg"));
            write_file(&csv, g.to_csv().as_bytes())?;
            let title = format!("{} at demand {:.2}", p.name(), g.demand);
            write_file(&svg, g.to_svg(&title, &names).as_bytes())?;
            m.outputs.extend([csv, svg]);
            let s = HeatmapStats {
                policy: p.name().to_string(),
                demand: g.demand,
                distinct_actions: g.distinct_actions(),
                regions: g.region_count(),
            };
            let _ = writeln!(regions, "{},{},{},{}", s.policy, s.demand, s.distinct_actions, s.regions);
            println!("{:<14} demand {:.2}: {} actions, {} regions", s.policy, s.demand, s.distinct_actions, s.regions);
            stats.push(s);
        }
    }
    let rp = layout.heatmaps().join("regions.csv");
    write_file(&rp, regions.as_bytes())?;
    m.outputs.push(rp);
    Ok((m.write(layout, &cfg)?, stats))
}

pub fn cmd_export_tree(cfg: &RunConfig, layout: &Layout, formats: &[String]) -> Result<PathBuf> {
    let formats: Vec<ExportFormat> = formats.iter().map(|f| ExportFormat::parse(f)).collect::<Result<_>>()?;
    let actions = action_names(&cfg.env.battery.action_levels);
    let actions: Vec<&str> = actions.iter().map(String::as_str).collect();
    let mut m = Manifest::new("export-tree");
    for &seed in &cfg.seeds {
        let tree = load_tree(layout, seed)?;
        m.inputs.push(layout.student_dir(seed).join("tree.json"));
        let dir = layout.student_dir(seed);
        for &f in &formats {
            let text = export_rules(&tree, &FEATURE_NAMES, &actions, f)?;
            if f == ExportFormat::Json {
                let back = parse_tree_json(&text, "re-export")?;
                if back != tree {
                    return Err(Error::Contract(format!("seed {seed}: JSON export does not round-trip")));
                }
            }
            let p = dir.join(format!("tree.{}", f.extension()));
            write_file(&p, text.as_bytes())?;
            if f == ExportFormat::Text {
                println!("seed {seed}:\n{text}");
            }
            m.outputs.push(p);
        }
    }
    m.write(layout, cfg)
}

/// One acceptance threshold evaluated by `reproduce`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub const MIN_IMPROVEMENT_PCT: f64 = 15.0;
pub const MAX_GAP_PCT: f64 = 15.0;
pub const MIN_WINNING_SEED_FRACTION: f64 = 0.6;
pub const DP_TOLERANCE: f64 = 1e-6;
pub const MAX_TREE_BYTES: u64 = 8 * 1024;
pub const MIN_FOOTPRINT_RATIO: f64 = 20.0;

/// Runs every stage into `layout` and returns the evaluation and heatmap results.
pub fn run_pipeline(cfg: &RunConfig, layout: &Layout) -> Result<(Comparison, Vec<HeatmapStats>)> {
    if cfg.train_profiles.is_none() {
        cmd_gen_data(cfg, layout)?;
    }
    cmd_train_teacher(cfg, layout)?;
    cmd_distill(cfg, layout)?;
    let all = ["text".to_string(), "dot".into(), "json".into()];
    cmd_export_tree(cfg, layout, &all)?;
    let (_, comparison) = cmd_evaluate(cfg, layout, &[PolicyKind::Dqn, PolicyKind::Ddt, PolicyKind::Rbc])?;
    let (_, heat) = cmd_heatmap(cfg, layout)?;
    Ok((comparison, heat))
}

/// Threshold checks on a finished pipeline run.
pub fn performance_checks(cfg: &RunConfig, layout: &Layout, comparison: &Comparison) -> Result<Vec<Check>> {
    let ddt_name = format!("ddt-d{}", cfg.student.depth);
    let get = |name: &str| {
        comparison
            .row(name)
            .ok_or_else(|| Error::Contract(format!("comparison lacks a '{name}' row")))
    };
    let (ddt, dqn, rbc) = (get(&ddt_name)?, get("dqn")?, get("rbc")?);
    let ddt_imp = ddt.improvement_pct.unwrap_or(f64::NAN);
    let dqn_imp = dqn.improvement_pct.unwrap_or(f64::NAN);
    let gap = 100.0 * (ddt.summary.mean - dqn.summary.mean) / dqn.summary.mean;
    let winners = ddt.seeds.iter().filter(|s| s.mean_daily_cost < rbc.summary.mean).count();
    let need = (MIN_WINNING_SEED_FRACTION * ddt.seeds.len() as f64).ceil() as usize;
    let spread: Vec<String> = ddt.seeds.iter().map(|s| format!("{}:{:.4}", s.seed, s.mean_daily_cost)).collect();

    let opt_path = layout.reports().join("optimality.csv");
    let opt = std::fs::read_to_string(&opt_path).map_err(|e| Error::io(&opt_path, e))?;
    let mut worst_margin = f64::INFINITY;
    for line in opt.lines().skip(1) {
        let vals: Vec<f64> = line.split(',').skip(1).filter_map(|v| v.parse().ok()).collect();
        if let Some((dp, rest)) = vals.split_first() {
            for c in rest {
                worst_margin = worst_margin.min(c - dp);
            }
        }
    }

    let ckpt_bytes = std::fs::metadata(layout.checkpoint()).map_err(|e| Error::io(layout.checkpoint(), e))?.len();
    let mut max_tree = 0u64;
    for &seed in &cfg.seeds {
        let p = layout.student_dir(seed).join("tree.json");
        max_tree = max_tree.max(std::fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len());
    }
    let ratio = ckpt_bytes as f64 / max_tree as f64;

    Ok(vec![
        Check::new(
            "student beats RBC",
            ddt_imp >= MIN_IMPROVEMENT_PCT,
            format!("{ddt_imp:.2}% (need >= {MIN_IMPROVEMENT_PCT}%); mean {:.4} vs {:.4} EUR/day", ddt.summary.mean, rbc.summary.mean),
        ),
        Check::new(
            "teacher beats RBC",
            dqn_imp >= MIN_IMPROVEMENT_PCT,
            format!("{dqn_imp:.2}% (need >= {MIN_IMPROVEMENT_PCT}%); mean {:.4} EUR/day", dqn.summary.mean),
        ),
        Check::new(
            "teacher-student gap",
            gap <= MAX_GAP_PCT,
            format!("{gap:.2}% of teacher cost (need <= {MAX_GAP_PCT}%); per seed {}", spread.join(" ")),
        ),
        Check::new(
            "seeds beating RBC",
            winners >= need,
            format!("{winners} of {} (need >= {need})", ddt.seeds.len()),
        ),
        Check::new(
            "DP lower bound",
            worst_margin >= -DP_TOLERANCE,
            format!("smallest policy-minus-optimum margin {worst_margin:.3e} EUR"),
        ),
        Check::new(
            "footprint",
            max_tree <= MAX_TREE_BYTES && ratio >= MIN_FOOTPRINT_RATIO,
            format!("largest tree {max_tree} B, checkpoint {ckpt_bytes} B, ratio {ratio:.1}x (need <= {MAX_TREE_BYTES} B and >= {MIN_FOOTPRINT_RATIO}x)"),
        ),
    ])
}

/// Every student panel must have at most `2^depth` actions and regions.
pub fn structure_check(cfg: &RunConfig, heat: &[HeatmapStats]) -> Check {
    let limit = 1usize << cfg.student.depth;
    let students: Vec<&HeatmapStats> = heat.iter().filter(|h| h.policy.starts_with("ddt")).collect();
    let worst = students.iter().map(|h| h.distinct_actions.max(h.regions)).max().unwrap_or(0);
    let dqn: Vec<String> = heat
        .iter()
        .filter(|h| h.policy == "dqn")
        .map(|h| format!("{}@{:.2}", h.regions, h.demand))
        .collect();
    Check::new(
        "heatmap structure",
        !students.is_empty() && worst <= limit,
        format!("student max actions/regions per panel {worst} (limit {limit}); teacher regions {}", dqn.join(" ")),
    )
}

pub fn cmd_reproduce(cfg: &RunConfig, layout: &Layout) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let square = Layout::new(layout.root.join("square-wave"));
    println!("== scenario: square-wave prices ==");
    let (comparison, heat) = run_pipeline(cfg, &square)?;
    checks.extend(performance_checks(cfg, &square, &comparison)?);
    checks.push(structure_check(cfg, &heat));

    let mut reduced = cfg.clone();
    reduced.no_pv = true;
    let no_pv = Layout::new(layout.root.join("no-pv"));
    println!("== scenario: reduced state, no PV ==");
    let (_, heat) = run_pipeline(&reduced, &no_pv)?;
    let mut c = structure_check(&reduced, &heat);
    c.name = "heatmap structure (no PV)".into();
    checks.push(c);

    let mut report = String::new();
    for c in &checks {
        let _ = writeln!(report, "{}", c.line());
    }
    write_file(&layout.root.join("acceptance.txt"), report.as_bytes())?;
    println!("== acceptance ==\n{report}");
    Ok(checks)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingArtifact { .. } => EXIT_MISSING,
        e if e.is_usage() => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let (common, run): (&CommonArgs, &dyn Fn(&RunConfig, &Layout) -> Result<i32>) = match &cli.command {
        Command::GenData(c) => (c, &|cfg, l| cmd_gen_data(cfg, l).map(|_| EXIT_OK)),
        Command::TrainTeacher(c) => (c, &|cfg, l| cmd_train_teacher(cfg, l).map(|_| EXIT_OK)),
        Command::Distill(c) => (c, &|cfg, l| cmd_distill(cfg, l).map(|_| EXIT_OK)),
        Command::Evaluate { common, policies } => (common, &|cfg, l| cmd_evaluate(cfg, l, policies).map(|_| EXIT_OK)),
        Command::Heatmap(c) => (c, &|cfg, l| cmd_heatmap(cfg, l).map(|_| EXIT_OK)),
        Command::ExportTree { common, formats } => (common, &|cfg, l| cmd_export_tree(cfg, l, formats).map(|_| EXIT_OK)),
        Command::Reproduce(c) => (c, &|cfg, l| {
            let checks = cmd_reproduce(cfg, l)?;
            Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_THRESHOLDS })
        }),
    };
    let cfg = common.resolve_config()?;
    run(&cfg, &Layout::new(&common.out))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("hems-ddt").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let cli = parse(&["distill", "--depth", "3", "--seeds", "7,8", "--capacity-rate", "0.1", "--set", "episodes=12"]);
        let Command::Distill(c) = cli.command else { panic!() };
        let cfg = c.resolve_config().unwrap();
        assert_eq!(cfg.student.depth, 3);
        assert_eq!(cfg.seeds, vec![7, 8]);
        assert_eq!(cfg.env.tariff.capacity_rate_eur_per_kw, 0.1);
        assert_eq!(cfg.teacher.episodes, 12);
    }

    #[test]
    fn depth_four_is_a_usage_error() {
        let Command::Distill(c) = parse(&["distill", "--depth", "4"]).command else { panic!() };
        let e = c.resolve_config().unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let Command::GenData(c) = parse(&["gen-data", "--set", "bogus=1"]).command else { panic!() };
        let msg = c.resolve_config().unwrap_err().to_string();
        assert!(msg.contains("bogus") && msg.contains("capacity_rate"));
    }

    #[test]
    fn missing_upstream_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let e = cmd_distill(&RunConfig::default(), &Layout::new(dir.path())).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_MISSING);
        assert!(e.to_string().contains("train-teacher"));
    }

    #[test]
    fn clap_errors_map_to_usage() {
        assert_eq!(main_with_args(["hems-ddt", "no-such-command"]), EXIT_USAGE);
        assert_eq!(main_with_args(["hems-ddt", "--help"]), EXIT_OK);
    }
}
