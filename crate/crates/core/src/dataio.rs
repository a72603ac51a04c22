//! Profile files, synthetic households, feature normalization and the
//! flat `key = value` run configuration.
//!
//! Profile CSV layout: header `hour,price,demand,pv`, one row per hour,
//! days concatenated with the hour column cycling `0..horizon`. A line
//! `# day: <label>` before a day names it; unnamed days get `day-<n>`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distill::StudentConfig;
use crate::envsim::{BatteryParams, EnvParams, TariffParams, N_FEATURES};
use crate::error::{Error, Result};
use crate::teacher::TeacherConfig;

pub const PROFILE_HEADER: &str = "hour,price,demand,pv";

#[derive(Debug, Clone, PartialEq)]
pub struct DayProfile {
    pub prices_eur_per_kwh: Vec<f64>,
    pub demand_kw: Vec<f64>,
    pub pv_kw: Vec<f64>,
    pub label: String,
}

impl DayProfile {
    pub fn len(&self) -> usize {
        self.prices_eur_per_kwh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices_eur_per_kwh.is_empty()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let ok_len = self.prices_eur_per_kwh.len() == horizon
            && self.demand_kw.len() == horizon
            && self.pv_kw.len() == horizon;
        if !ok_len {
            return Err(Error::Config(format!(
                "day '{}' must have {horizon} entries per series",
                self.label
            )));
        }
        let finite = self
            .prices_eur_per_kwh
            .iter()
            .chain(&self.demand_kw)
            .chain(&self.pv_kw)
            .all(|v| v.is_finite());
        if !finite || self.demand_kw.iter().chain(&self.pv_kw).any(|&v| v < 0.0) {
            return Err(Error::Config(format!(
                "day '{}' has non-finite values or negative demand/pv",
                self.label
            )));
        }
        Ok(())
    }

    /// Same day with the PV series zeroed (the no-PV explainability scenario).
    pub fn without_pv(&self) -> Self {
        Self {
            pv_kw: vec![0.0; self.len()],
            ..self.clone()
        }
    }
}

/// Parses profile CSV text. `source_name` only shows up in error messages.
pub fn parse_profiles(text: &str, source_name: &str, horizon: usize) -> Result<Vec<DayProfile>> {
    let err = |line: usize, msg: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut days = Vec::new();
    let mut current: Option<DayProfile> = None;
    let mut pending_label: Option<String> = None;
    let mut day_start_line = 0;
    let mut saw_header = false;

    let finish = |day: DayProfile, start: usize, days: &mut Vec<DayProfile>| -> Result<()> {
        if day.len() != horizon {
            return Err(err(
                start,
                format!("day '{}' has {} rows, expected {horizon}", day.label, day.len()),
            ));
        }
        days.push(day);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(label) = comment.trim().strip_prefix("day:") {
                pending_label = Some(label.trim().to_string());
            }
            continue;
        }
        if !saw_header {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != PROFILE_HEADER.split(',').collect::<Vec<_>>() {
                return Err(err(line_no, format!("expected header '{PROFILE_HEADER}', found '{line}'")));
            }
            saw_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(err(line_no, format!("expected 4 columns, found {}", cols.len())));
        }
        let hour: usize = cols[0]
            .parse()
            .map_err(|_| err(line_no, format!("invalid hour '{}'", cols[0])))?;
        let mut vals = [0.0; 3];
        for (k, name) in ["price", "demand", "pv"].iter().enumerate() {
            let v: f64 = cols[k + 1]
                .parse()
                .map_err(|_| err(line_no, format!("invalid {name} '{}'", cols[k + 1])))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("{name} must be finite, found {v}")));
            }
            if k > 0 && v < 0.0 {
                return Err(err(line_no, format!("{name} must be non-negative, found {v}")));
            }
            vals[k] = v;
        }
        if hour == 0 {
            if let Some(day) = current.take() {
                finish(day, day_start_line, &mut days)?;
            }
            let label = pending_label
                .take()
                .unwrap_or_else(|| format!("day-{}", days.len()));
            current = Some(DayProfile {
                prices_eur_per_kwh: Vec::with_capacity(horizon),
                demand_kw: Vec::with_capacity(horizon),
                pv_kw: Vec::with_capacity(horizon),
                label,
            });
            day_start_line = line_no;
        }
        let day = current
            .as_mut()
            .ok_or_else(|| err(line_no, format!("first row must have hour 0, found {hour}")))?;
        if hour != day.len() {
            return Err(err(
                line_no,
                format!("day '{}': expected hour {}, found {hour}", day.label, day.len()),
            ));
        }
        if hour >= horizon {
            return Err(err(line_no, format!("hour {hour} beyond horizon {horizon}")));
        }
        day.prices_eur_per_kwh.push(vals[0]);
        day.demand_kw.push(vals[1]);
        day.pv_kw.push(vals[2]);
    }
    if let Some(day) = current.take() {
        finish(day, day_start_line, &mut days)?;
    }
    if days.is_empty() {
        return Err(err(1, "no profile rows found".into()));
    }
    Ok(days)
}

pub fn load_profiles(path: &Path, horizon: usize) -> Result<Vec<DayProfile>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: 1,
        msg: format!("file is not valid UTF-8: {e}"),
    })?;
    parse_profiles(&text, &path.display().to_string(), horizon)
}

pub fn profiles_to_csv(days: &[DayProfile]) -> String {
    let mut out = String::new();
    out.push_str(PROFILE_HEADER);
    out.push('\n');
    for day in days {
        let _ = writeln!(out, "# day: {}", day.label);
        for h in 0..day.len() {
            let _ = writeln!(
                out,
                "{h},{},{},{}",
                day.prices_eur_per_kwh[h], day.demand_kw[h], day.pv_kw[h]
            );
        }
    }
    out
}

pub fn save_profiles(path: &Path, days: &[DayProfile]) -> Result<()> {
    write_file(path, profiles_to_csv(days).as_bytes())
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareWave {
    pub low: f64,
    pub high: f64,
    pub high_start_hour: usize,
    pub high_end_hour: usize,
}

impl Default for SquareWave {
    fn default() -> Self {
        Self {
            low: 0.05,
            high: 0.25,
            high_start_hour: 8,
            high_end_hour: 20,
        }
    }
}

/// Day/night tariff: `high` inside `[high_start, high_end)`, `low` elsewhere.
pub fn square_wave_prices(wave: &SquareWave, horizon: usize) -> Result<Vec<f64>> {
    let SquareWave {
        low,
        high,
        high_start_hour: start,
        high_end_hour: end,
    } = *wave;
    if !(start < end && end <= horizon) {
        return Err(Error::Config(format!(
            "square wave window [{start}, {end}) must satisfy 0 <= start < end <= {horizon}"
        )));
    }
    if !(low < high) {
        return Err(Error::Config(format!(
            "square wave needs low < high, got low {low}, high {high}"
        )));
    }
    Ok((0..horizon)
        .map(|h| if (start..end).contains(&h) { high } else { low })
        .collect())
}

/// Synthetic household days: demand with morning and evening peaks, PV
/// as a midday bell scaled by a per-day cloud factor, prices from `prices`.
pub fn synthetic_days(n_days: usize, seed: u64, prices: &[f64], with_pv: bool) -> Vec<DayProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = prices.len();
    let bump = |h: f64, center: f64, width: f64| (-0.5 * ((h - center) / width).powi(2)).exp();
    (0..n_days)
        .map(|d| {
            let base = rng.gen_range(0.3..0.6);
            let morning = rng.gen_range(1.0..2.5);
            let evening = rng.gen_range(1.5..3.5);
            let morning_at = rng.gen_range(6.5..8.5);
            let evening_at = rng.gen_range(18.0..20.5);
            let pv_peak = if with_pv {
                rng.gen_range(1.0..2.0) * rng.gen_range(0.3..1.0f64)
            } else {
                0.0
            };
            let mut demand = Vec::with_capacity(horizon);
            let mut pv = Vec::with_capacity(horizon);
            for h in 0..horizon {
                let t = h as f64;
                let noise = rng.gen_range(0.85..1.15);
                let d = (base + morning * bump(t, morning_at, 1.2) + evening * bump(t, evening_at, 1.8)) * noise;
                demand.push(round4(d));
                let p = if (6..=20).contains(&h) {
                    pv_peak * bump(t, 13.0, 2.5)
                } else {
                    0.0
                };
                pv.push(round4(p));
            }
            DayProfile {
                prices_eur_per_kwh: prices.to_vec(),
                demand_kw: demand,
                pv_kw: pv,
                label: format!("synthetic-{seed}-{d}"),
            }
        })
        .collect()
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Per-feature `(min, max)` over a profile set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub price: (f64, f64),
    pub demand: (f64, f64),
    pub pv: (f64, f64),
}

impl NormalizationStats {
    pub fn from_profiles(days: &[DayProfile]) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Config("cannot compute statistics of an empty profile set".into()));
        }
        let range = |f: &dyn Fn(&DayProfile) -> &Vec<f64>| {
            days.iter()
                .flat_map(|d| f(d).iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        Ok(Self {
            price: range(&|d| &d.prices_eur_per_kwh),
            demand: range(&|d| &d.demand_kw),
            pv: range(&|d| &d.pv_kw),
        })
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.price.0,
            self.price.1,
            self.demand.0,
            self.demand.1,
            self.pv.0,
            self.pv.1,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            price: (a[0], a[1]),
            demand: (a[2], a[3]),
            pv: (a[4], a[5]),
        }
    }
}

fn scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Maps raw state quantities to `(hour, soc, price, demand, pv)` in `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn normalize(
    hour: usize,
    energy_kwh: f64,
    price: f64,
    demand: f64,
    pv: f64,
    stats: &NormalizationStats,
    horizon: usize,
    capacity_kwh: f64,
) -> [f64; N_FEATURES] {
    let h = if horizon > 1 {
        (hour as f64 / (horizon - 1) as f64).clamp(0.0, 1.0)
    } else {
        0.0
    };
    [
        h,
        (energy_kwh / capacity_kwh).clamp(0.0, 1.0),
        scale(price, stats.price),
        scale(demand, stats.demand),
        scale(pv, stats.pv),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceMode {
    Square,
    File,
}

/// Everything a pipeline run needs. Every key has a default, so an empty
/// config file is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvParams,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub seeds: Vec<u64>,
    pub teacher_seed: u64,
    pub price_mode: PriceMode,
    pub square: SquareWave,
    pub train_profiles: Option<PathBuf>,
    pub eval_profiles: Option<PathBuf>,
    pub train_days: usize,
    pub eval_days: usize,
    pub data_seed: u64,
    /// Drop PV from every profile and pin the PV feature.
    pub no_pv: bool,
    pub initial_soc: f64,
    pub heatmap_resolution: usize,
    pub heatmap_hour: usize,
    pub heatmap_demand_levels: Vec<f64>,
    pub heatmap_pv: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvParams::default(),
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            teacher_seed: 1,
            price_mode: PriceMode::Square,
            square: SquareWave::default(),
            train_profiles: None,
            eval_profiles: None,
            train_days: 60,
            eval_days: 10,
            data_seed: 2024,
            no_pv: false,
            initial_soc: 0.5,
            heatmap_resolution: 41,
            heatmap_hour: 12,
            heatmap_demand_levels: vec![0.1, 0.5, 0.9],
            heatmap_pv: 0.0,
        }
    }
}

/// All recognised config keys, in the order they are written.
pub const CONFIG_KEYS: &[&str] = &[
    "capacity_kwh",
    "max_power_kw",
    "efficiency",
    "action_levels",
    "injection_fraction",
    "capacity_rate",
    "contracted_min_kw",
    "timestep_hours",
    "horizon_steps",
    "hidden_layers",
    "teacher_learning_rate",
    "teacher_batch_size",
    "buffer_size",
    "target_blend",
    "gamma",
    "episodes",
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay_fraction",
    "depth",
    "temperature",
    "student_epochs",
    "student_batch_size",
    "student_learning_rate",
    "beta_l1",
    "seeds",
    "teacher_seed",
    "price_mode",
    "square_low",
    "square_high",
    "square_start_hour",
    "square_end_hour",
    "train_profiles",
    "eval_profiles",
    "train_days",
    "eval_days",
    "data_seed",
    "no_pv",
    "initial_soc",
    "heatmap_resolution",
    "heatmap_hour",
    "heatmap_demand_levels",
    "heatmap_pv",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!("config line {}: expected 'key = value', found '{line}'", idx + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let b = &mut self.env.battery;
        let t = &mut self.env.tariff;
        match key {
            "capacity_kwh" => b.capacity_kwh = parse_num(key, value)?,
            "max_power_kw" => b.max_power_kw = parse_num(key, value)?,
            "efficiency" => b.efficiency = parse_num(key, value)?,
            "action_levels" => b.action_levels = parse_list(key, value)?,
            "injection_fraction" => t.injection_fraction = parse_num(key, value)?,
            "capacity_rate" => t.capacity_rate_eur_per_kw = parse_num(key, value)?,
            "contracted_min_kw" => t.contracted_min_kw = parse_num(key, value)?,
            "timestep_hours" => t.timestep_hours = parse_num(key, value)?,
            "horizon_steps" => t.horizon_steps = parse_num(key, value)?,
            "hidden_layers" => self.teacher.hidden_layers = parse_list(key, value)?,
            "teacher_learning_rate" => self.teacher.learning_rate = parse_num(key, value)?,
            "teacher_batch_size" => self.teacher.batch_size = parse_num(key, value)?,
            "buffer_size" => self.teacher.buffer_size = parse_num(key, value)?,
            "target_blend" => self.teacher.target_blend = parse_num(key, value)?,
            "gamma" => self.teacher.gamma = parse_num(key, value)?,
            "episodes" => self.teacher.episodes = parse_num(key, value)?,
            "epsilon_start" => self.teacher.epsilon_start = parse_num(key, value)?,
            "epsilon_end" => self.teacher.epsilon_end = parse_num(key, value)?,
            "epsilon_decay_fraction" => self.teacher.epsilon_decay_fraction = parse_num(key, value)?,
            "depth" => self.student.depth = parse_num(key, value)?,
            "temperature" => self.student.temperature = parse_num(key, value)?,
            "student_epochs" => self.student.epochs = parse_num(key, value)?,
            "student_batch_size" => self.student.batch_size = parse_num(key, value)?,
            "student_learning_rate" => self.student.learning_rate = parse_num(key, value)?,
            "beta_l1" => self.student.beta_l1 = parse_num(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "teacher_seed" => self.teacher_seed = parse_num(key, value)?,
            "price_mode" => {
                self.price_mode = match value {
                    "square" => PriceMode::Square,
                    "file" => PriceMode::File,
                    other => {
                        return Err(Error::Usage(format!(
                            "price_mode must be 'square' or 'file', found '{other}'"
                        )))
                    }
                }
            }
            "square_low" => self.square.low = parse_num(key, value)?,
            "square_high" => self.square.high = parse_num(key, value)?,
            "square_start_hour" => self.square.high_start_hour = parse_num(key, value)?,
            "square_end_hour" => self.square.high_end_hour = parse_num(key, value)?,
            "train_profiles" => self.train_profiles = (!value.is_empty()).then(|| PathBuf::from(value)),
            "eval_profiles" => self.eval_profiles = (!value.is_empty()).then(|| PathBuf::from(value)),
            "train_days" => self.train_days = parse_num(key, value)?,
            "eval_days" => self.eval_days = parse_num(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "no_pv" => self.no_pv = parse_num(key, value)?,
            "initial_soc" => self.initial_soc = parse_num(key, value)?,
            "heatmap_resolution" => self.heatmap_resolution = parse_num(key, value)?,
            "heatmap_hour" => self.heatmap_hour = parse_num(key, value)?,
            "heatmap_demand_levels" => self.heatmap_demand_levels = parse_list(key, value)?,
            "heatmap_pv" => self.heatmap_pv = parse_num(key, value)?,
            _ => {
                return Err(Error::Usage(format!(
                    "unknown config key '{key}'; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        if !matches!(self.student.depth, 2 | 3) {
            return Err(Error::Usage(format!(
                "student depth must be 2 or 3 (shallow trees only), got {}",
                self.student.depth
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Usage("at least one seed is required".into()));
        }
        if self.price_mode == PriceMode::Square {
            square_wave_prices(&self.square, self.env.tariff.horizon_steps)?;
        } else if self.train_profiles.is_none() {
            return Err(Error::Usage("price_mode = file requires train_profiles".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return Err(Error::Config(format!(
                "initial_soc must lie in [0, 1], got {}",
                self.initial_soc
            )));
        }
        if self.heatmap_resolution < 2 || self.heatmap_demand_levels.is_empty() {
            return Err(Error::Config("heatmaps need at least a 2x2 grid and one demand level".into()));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let b: &BatteryParams = &self.env.battery;
        let t: &TariffParams = &self.env.tariff;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "capacity_kwh" => b.capacity_kwh.to_string(),
            "max_power_kw" => b.max_power_kw.to_string(),
            "efficiency" => b.efficiency.to_string(),
            "action_levels" => join(&b.action_levels),
            "injection_fraction" => t.injection_fraction.to_string(),
            "capacity_rate" => t.capacity_rate_eur_per_kw.to_string(),
            "contracted_min_kw" => t.contracted_min_kw.to_string(),
            "timestep_hours" => t.timestep_hours.to_string(),
            "horizon_steps" => t.horizon_steps.to_string(),
            "hidden_layers" => join(&self.teacher.hidden_layers),
            "teacher_learning_rate" => self.teacher.learning_rate.to_string(),
            "teacher_batch_size" => self.teacher.batch_size.to_string(),
            "buffer_size" => self.teacher.buffer_size.to_string(),
            "target_blend" => self.teacher.target_blend.to_string(),
            "gamma" => self.teacher.gamma.to_string(),
            "episodes" => self.teacher.episodes.to_string(),
            "epsilon_start" => self.teacher.epsilon_start.to_string(),
            "epsilon_end" => self.teacher.epsilon_end.to_string(),
            "epsilon_decay_fraction" => self.teacher.epsilon_decay_fraction.to_string(),
            "depth" => self.student.depth.to_string(),
            "temperature" => self.student.temperature.to_string(),
            "student_epochs" => self.student.epochs.to_string(),
            "student_batch_size" => self.student.batch_size.to_string(),
            "student_learning_rate" => self.student.learning_rate.to_string(),
            "beta_l1" => self.student.beta_l1.to_string(),
            "seeds" => join(&self.seeds),
            "teacher_seed" => self.teacher_seed.to_string(),
            "price_mode" => match self.price_mode {
                PriceMode::Square => "square".into(),
                PriceMode::File => "file".into(),
            },
            "square_low" => self.square.low.to_string(),
            "square_high" => self.square.high.to_string(),
            "square_start_hour" => self.square.high_start_hour.to_string(),
            "square_end_hour" => self.square.high_end_hour.to_string(),
            "train_profiles" => path(&self.train_profiles),
            "eval_profiles" => path(&self.eval_profiles),
            "train_days" => self.train_days.to_string(),
            "eval_days" => self.eval_days.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "no_pv" => self.no_pv.to_string(),
            "initial_soc" => self.initial_soc.to_string(),
            "heatmap_resolution" => self.heatmap_resolution.to_string(),
            "heatmap_hour" => self.heatmap_hour.to_string(),
            "heatmap_demand_levels" => join(&self.heatmap_demand_levels),
            "heatmap_pv" => self.heatmap_pv.to_string(),
            _ => unreachable!("value_of called with unknown key {key}"),
        }
    }

    /// Full snapshot in config-file syntax; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    /// Prices used for synthetic square-wave days.
    pub fn square_prices(&self) -> Result<Vec<f64>> {
        square_wave_prices(&self.square, self.env.tariff.horizon_steps)
    }

    /// Training and evaluation day sets: read from files when configured,
    /// otherwise generated from `data_seed`.
    pub fn resolve_profiles(&self) -> Result<(Vec<DayProfile>, Vec<DayProfile>)> {
        let horizon = self.env.tariff.horizon_steps;
        let (train, eval) = match (&self.train_profiles, self.price_mode) {
            (Some(train_path), _) => {
                let train = load_profiles(train_path, horizon)?;
                let eval = match &self.eval_profiles {
                    Some(p) => load_profiles(p, horizon)?,
                    None => train.clone(),
                };
                (train, eval)
            }
            (None, PriceMode::Square) => {
                let prices = self.square_prices()?;
                (
                    synthetic_days(self.train_days, self.data_seed, &prices, true),
                    synthetic_days(self.eval_days, self.data_seed.wrapping_add(1), &prices, true),
                )
            }
            (None, PriceMode::File) => {
                return Err(Error::Usage("price_mode = file requires train_profiles".into()))
            }
        };
        if self.no_pv {
            Ok((
                train.iter().map(DayProfile::without_pv).collect(),
                eval.iter().map(DayProfile::without_pv).collect(),
            ))
        } else {
            Ok((train, eval))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(label: &str, offset: f64) -> DayProfile {
        DayProfile {
            prices_eur_per_kwh: (0..24).map(|h| 0.1 + 0.001 * h as f64 + offset).collect(),
            demand_kw: (0..24).map(|h| 1.0 + 0.1 * h as f64).collect(),
            pv_kw: (0..24).map(|h| if (8..16).contains(&h) { 2.5 } else { 0.0 }).collect(),
            label: label.into(),
        }
    }

    #[test]
    fn single_day_parses() {
        let text = profiles_to_csv(&[day("a", 0.0)]);
        let days = parse_profiles(&text, "mem", 24).unwrap();
        assert_eq!(days, vec![day("a", 0.0)]);
    }

    #[test]
    fn two_days_keep_file_order() {
        let text = profiles_to_csv(&[day("first", 0.0), day("second", 0.5)]);
        let days = parse_profiles(&text, "mem", 24).unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].label, "first");
        assert_eq!(days[1].label, "second");
        assert_eq!(days[1], day("second", 0.5));
    }

    #[test]
    fn unlabeled_days_get_positional_names() {
        let mut text = String::from("hour,price,demand,pv\n");
        for _ in 0..2 {
            for h in 0..24 {
                text.push_str(&format!("{h},0.1,1,0\n"));
            }
        }
        let days = parse_profiles(&text, "mem", 24).unwrap();
        assert_eq!(days[0].label, "day-0");
        assert_eq!(days[1].label, "day-1");
    }

    #[test]
    fn short_day_is_reported() {
        let mut text = String::from("hour,price,demand,pv\n# day: short\n");
        for h in 0..23 {
            text.push_str(&format!("{h},0.1,1,0\n"));
        }
        let err = parse_profiles(&text, "mem", 24).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("short") && msg.contains("23 rows"), "{msg}");
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let bad_cols = "hour,price,demand,pv\n0,0.1,1\n";
        match parse_profiles(bad_cols, "f.csv", 24).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        let negative = "hour,price,demand,pv\n0,0.1,-1,0\n";
        assert!(parse_profiles(negative, "f.csv", 24).unwrap_err().to_string().contains("f.csv:2"));
        let bad_header = "h,p,d\n";
        assert!(parse_profiles(bad_header, "f.csv", 24).is_err());
        let skipped_hour = "hour,price,demand,pv\n0,0.1,1,0\n2,0.1,1,0\n";
        assert!(parse_profiles(skipped_hour, "f.csv", 24).unwrap_err().to_string().contains("expected hour 1"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_profiles(Path::new("/nonexistent/profiles.csv"), 24).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn square_wave_examples() {
        let p = square_wave_prices(&SquareWave::default(), 24).unwrap();
        assert_eq!(p.iter().filter(|&&v| v == 0.25).count(), 12);
        assert_eq!(p.iter().filter(|&&v| v == 0.05).count(), 12);
        assert_eq!(p[7], 0.05);
        assert_eq!(p[8], 0.25);
        assert_eq!(p[19], 0.25);
        assert_eq!(p[20], 0.05);
        let all = SquareWave {
            high_start_hour: 0,
            high_end_hour: 24,
            ..Default::default()
        };
        assert!(square_wave_prices(&all, 24).unwrap().iter().all(|&v| v == 0.25));
        let flat = SquareWave {
            low: 0.1,
            high: 0.1,
            ..Default::default()
        };
        assert!(square_wave_prices(&flat, 24).is_err());
        let inverted = SquareWave {
            high_start_hour: 20,
            high_end_hour: 8,
            ..Default::default()
        };
        assert!(square_wave_prices(&inverted, 24).is_err());
    }

    #[test]
    fn normalize_corners_and_midpoint() {
        let stats = NormalizationStats {
            price: (0.05, 0.25),
            demand: (0.2, 4.0),
            pv: (0.0, 3.0),
        };
        assert_eq!(normalize(0, 0.0, 0.05, 0.2, 0.0, &stats, 24, 10.0), [0.0; 5]);
        assert_eq!(normalize(23, 10.0, 0.25, 4.0, 3.0, &stats, 24, 10.0), [1.0; 5]);
        let mid = normalize(5, 5.0, 0.15, 1.0, 1.0, &stats, 24, 10.0);
        assert!((mid[2] - 0.5).abs() < 1e-12);
        // Out-of-range values are clipped.
        let out = normalize(5, 5.0, 9.0, -1.0, 1.0, &stats, 24, 10.0);
        assert_eq!((out[2], out[3]), (1.0, 0.0));
        // Degenerate feature range maps to zero.
        let flat = NormalizationStats { pv: (0.0, 0.0), ..stats };
        assert_eq!(normalize(5, 5.0, 0.1, 1.0, 0.0, &flat, 24, 10.0)[4], 0.0);
    }

    #[test]
    fn synthetic_days_are_valid_and_seeded() {
        let prices = square_wave_prices(&SquareWave::default(), 24).unwrap();
        let a = synthetic_days(5, 3, &prices, true);
        let b = synthetic_days(5, 3, &prices, true);
        assert_eq!(a, b);
        for d in &a {
            d.validate(24).unwrap();
            assert_eq!(d.pv_kw[0], 0.0);
        }
        let no_pv = synthetic_days(2, 3, &prices, false);
        assert!(no_pv.iter().all(|d| d.pv_kw.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn config_defaults_and_round_trip() {
        let empty = RunConfig::parse("").unwrap();
        assert_eq!(empty, RunConfig::default());
        let mut cfg = RunConfig::default();
        cfg.set("depth", "3").unwrap();
        cfg.set("seeds", "7, 8").unwrap();
        cfg.set("capacity_rate", "0").unwrap();
        cfg.set("train_profiles", "/tmp/x.csv").unwrap();
        cfg.set("price_mode", "file").unwrap();
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn config_rejects_unknown_key_and_bad_depth() {
        let err = RunConfig::parse("bogus = 1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("temperature"), "{msg}");
        assert!(err.is_usage());
        assert!(RunConfig::parse("depth = 4").unwrap_err().is_usage());
        assert!(RunConfig::parse("temperature = 0").is_err());
        assert!(RunConfig::parse("seeds = ").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }
}
