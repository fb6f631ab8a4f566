//! Config-driven experiment pipelines: threshold tuning, empirical
//! false-alarm rates and reachable-set bounds, each emitting CSV.
//!
//! Config schema (TOML):
//!
//! ```toml
//! [system]                  # nested row-major arrays
//! a = [[0.84, 0.23], [-0.47, 0.12]]
//! b = [[0.07, -0.32], [0.23, 0.58]]
//! c = [[1.0, 0.0], [2.0, 1.0]]
//! k = [[1.404, -1.402], [1.842, 1.008]]
//! sigma_w = [[0.0225, -0.0055], [-0.0055, 0.0100]]
//! sigma_v = [[1.0, 0.0], [0.0, 1.0]]
//!
//! [detector]
//! target_rate = 0.05
//! orders = [1, 2, 4]
//! epsilon = 1e-4                    # default
//! moments = "analytic-chi-squared"  # or "empirical" / "empirical:<N>"
//!
//! [noise]
//! family = "gaussian"               # or "laplacian"
//! seed = 1
//!
//! [simulation]                      # optional
//! steps = 1000000
//! attack_steps = 10000
//!
//! [reach]                           # optional
//! horizon = 50
//! n_dirs = 720
//! w_bar = 40.0                      # default n / target_rate
//!
//! [output]                          # optional
//! dir = "out"
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::from_rows;
use crate::moments::{chi_squared_moments, estimate_moments, format_float, MomentSequence};
use crate::reach::{
    noise_threshold, reach_bound, volume_comparison, AttackDirection, AttackPolicy, ReachBound,
    VolumeReport,
};
use crate::sim::{
    alarm_count, binomial_standard_error, simulate, LtiSystem, NoiseFamily, NoiseModel,
};
use crate::tuning::{chi_squared_threshold, tune_threshold, Method, ThresholdResult, MAX_RATE};

pub const DEFAULT_EMPIRICAL_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_v: Vec<Vec<f64>>,
}

/// Where the detection-measure moments come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum MomentSource {
    /// `χ²(p)` moments, exact for Gaussian noise.
    AnalyticChiSquared,
    /// Sample moments of `q` from an attack-free simulation of this length.
    Empirical { samples: usize },
}

impl TryFrom<String> for MomentSource {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "analytic-chi-squared" => Ok(Self::AnalyticChiSquared),
            "empirical" => Ok(Self::Empirical {
                samples: DEFAULT_EMPIRICAL_SAMPLES,
            }),
            other => other
                .strip_prefix("empirical:")
                .and_then(|n| n.replace('_', "").parse().ok())
                .map(|samples| Self::Empirical { samples })
                .ok_or_else(|| format!("unknown moment source {other:?}")),
        }
    }
}

fn default_epsilon() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub target_rate: f64,
    pub orders: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub moments: MomentSource,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub family: NoiseFamily,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub steps: usize,
    pub attack_steps: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            steps: 1_000_000,
            attack_steps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachConfig {
    pub horizon: usize,
    pub n_dirs: usize,
    pub w_bar: Option<f64>,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            n_dirs: 720,
            w_bar: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub detector: DetectorConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub reach: ReachConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.detector;
        if !(d.target_rate > 0.0 && d.target_rate <= MAX_RATE) {
            return Err(Error::Config(format!(
                "target_rate must lie in (0, {MAX_RATE}]"
            )));
        }
        if !(d.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if d.orders.is_empty() || d.orders.contains(&0) {
            return Err(Error::Config(
                "orders must be a non-empty list of integers >= 1".into(),
            ));
        }
        if let MomentSource::Empirical { samples: 0 } = d.moments {
            return Err(Error::Config(
                "empirical moments need at least one sample".into(),
            ));
        }
        if self.simulation.steps == 0 {
            return Err(Error::Config("simulation.steps must be positive".into()));
        }
        if self.reach.horizon < 2 || self.reach.n_dirs < 16 {
            return Err(Error::Config(
                "reach needs horizon >= 2 and n_dirs >= 16".into(),
            ));
        }
        if let Some(w) = self.reach.w_bar {
            if !(w >= 0.0) {
                return Err(Error::Config("w_bar must be non-negative".into()));
            }
        }
        self.build_system()?;
        Ok(())
    }

    pub fn build_system(&self) -> Result<LtiSystem> {
        let s = &self.system;
        let m = |name: &str, rows: &[Vec<f64>]| {
            from_rows(rows).ok_or_else(|| {
                Error::Config(format!(
                    "system.{name} must be a non-empty rectangular array"
                ))
            })
        };
        LtiSystem::new(
            m("a", &s.a)?,
            m("b", &s.b)?,
            m("c", &s.c)?,
            m("k", &s.k)?,
            m("sigma_w", &s.sigma_w)?,
            m("sigma_v", &s.sigma_v)?,
        )
        .map_err(|e| Error::Config(format!("system: {e}")))
    }

    pub fn max_order(&self) -> usize {
        self.detector.orders.iter().copied().max().unwrap_or(1)
    }
}

/// A validated config together with its system.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: LtiSystem,
}

/// One `thresholds.csv` row: a tuned threshold or the reason it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneRow {
    pub order: usize,
    pub result: std::result::Result<ThresholdResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneTable {
    pub moments: MomentSequence,
    pub rows: Vec<TuneRow>,
    /// Exact chi-squared threshold for the residual dimension.
    pub chi_squared: ThresholdResult,
}

impl TuneTable {
    /// Successful moment-based thresholds followed by the chi-squared one.
    pub fn thresholds(&self) -> Vec<&ThresholdResult> {
        self.rows
            .iter()
            .filter_map(|r| r.result.as_ref().ok())
            .chain(std::iter::once(&self.chi_squared))
            .collect()
    }

    pub fn alpha(&self, order: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.order == order)
            .and_then(|r| r.result.as_ref().ok())
            .map(|t| t.alpha)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}, status", ThresholdResult::CSV_HEADER)?;
        for row in &self.rows {
            match &row.result {
                Ok(t) => writeln!(out, "{}, ok", t.to_csv_row())?,
                Err(msg) => writeln!(
                    out,
                    "{}, {}, nan, nan, nan, nan, error: {}",
                    method_for_order(row.order),
                    row.order,
                    msg.replace([',', '\n'], ";")
                )?,
            }
        }
        writeln!(out, "{}, ok", self.chi_squared.to_csv_row())?;
        Ok(())
    }
}

fn method_for_order(order: usize) -> Method {
    match order {
        1 => Method::ClosedFormK1,
        2 => Method::ClosedFormK2,
        _ => Method::SdpBisection,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarRow {
    pub method: Method,
    pub k: usize,
    pub alpha: f64,
    pub alarms: usize,
    pub steps: usize,
    pub rate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarTable {
    pub rows: Vec<FarRow>,
}

impl FarTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "method, k, alpha, alarms, steps, rate, std_error")?;
        for r in &self.rows {
            writeln!(
                out,
                "{}, {}, {}, {}, {}, {}, {}",
                r.method,
                r.k,
                format_float(r.alpha),
                r.alarms,
                r.steps,
                format_float(r.rate),
                format_float(r.std_error)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachRow {
    pub method: Method,
    pub k: usize,
    pub bound: ReachBound,
    /// Alarms raised during a zero-alarm attack run at this threshold.
    pub attack_alarms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachReport {
    pub w_bar: f64,
    pub rows: Vec<ReachRow>,
    pub comparison: VolumeReport,
    pub attack_steps: usize,
}

impl ReachReport {
    pub fn boundary_file_name(alpha: f64) -> String {
        format!("reach_{alpha:.6}.csv")
    }

    /// `method, k, alpha, area, attack_alarms`, by decreasing threshold.
    pub fn write_areas_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "method, k, alpha, area, attack_alarms")?;
        let mut rows: Vec<&ReachRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.bound.alpha.total_cmp(&a.bound.alpha));
        for r in rows {
            writeln!(
                out,
                "{}, {}, {}, {}, {}",
                r.method,
                r.k,
                format_float(r.bound.alpha),
                format_float(r.bound.volume),
                r.attack_alarms
            )?;
        }
        Ok(())
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let system = config.build_system()?;
        Ok(Self { config, system })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(ExperimentConfig::load(path)?)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.noise.seed = seed;
        self
    }

    fn noise(&self, seed: u64) -> Result<(NoiseModel, NoiseModel)> {
        let family = self.config.noise.family;
        Ok((
            NoiseModel::new(family, self.system.sigma_w().clone(), seed)?,
            NoiseModel::new(family, self.system.sigma_v().clone(), seed)?,
        ))
    }

    /// Moments for tuning. Empirical moments come from a run seeded with
    /// `seed + 1`, independent of the false-alarm run.
    pub fn moments(&self) -> Result<MomentSequence> {
        let k = self.config.max_order();
        match self.config.detector.moments {
            MomentSource::AnalyticChiSquared => chi_squared_moments(self.system.output_dim(), k),
            MomentSource::Empirical { samples } => {
                let (w, v) = self.noise(self.config.noise.seed.wrapping_add(1))?;
                let trace = simulate(&self.system, &w, &v, samples, None)?;
                estimate_moments(trace.q_values(), k)
            }
        }
    }

    pub fn tune(&self) -> Result<TuneTable> {
        let d = &self.config.detector;
        let moments = self.moments()?;
        let rows = d
            .orders
            .iter()
            .map(|&order| TuneRow {
                order,
                result: tune_threshold(&moments, d.target_rate, order, d.epsilon)
                    .map_err(|e| e.to_string()),
            })
            .collect();
        let p = self.system.output_dim();
        let chi_squared = ThresholdResult {
            alpha: chi_squared_threshold(p, d.target_rate)?,
            method: Method::ChiSquared,
            k: p,
            target_rate: d.target_rate,
            achieved_worst_case: d.target_rate,
            epsilon: 0.0,
            bracket_degenerate: false,
        };
        Ok(TuneTable {
            moments,
            rows,
            chi_squared,
        })
    }

    /// Empirical alarm rates of every threshold on one attack-free run.
    pub fn far(&self, table: &TuneTable) -> Result<FarTable> {
        let steps = self.config.simulation.steps;
        let (w, v) = self.noise(self.config.noise.seed)?;
        let trace = simulate(&self.system, &w, &v, steps, None)?;
        let rows = table
            .thresholds()
            .into_iter()
            .map(|t| {
                let alarms = alarm_count(trace.q_values(), t.alpha);
                let rate = alarms as f64 / steps as f64;
                FarRow {
                    method: t.method,
                    k: t.k,
                    alpha: t.alpha,
                    alarms,
                    steps,
                    rate,
                    std_error: binomial_standard_error(rate, steps),
                }
            })
            .collect();
        Ok(FarTable { rows })
    }

    pub fn w_bar(&self) -> Result<f64> {
        match self.config.reach.w_bar {
            Some(w) => Ok(w),
            None => noise_threshold(self.system.state_dim(), self.config.detector.target_rate),
        }
    }

    /// Reach bounds and a zero-alarm attack run for every threshold.
    pub fn reach(&self, table: &TuneTable) -> Result<ReachReport> {
        let r = &self.config.reach;
        let w_bar = self.w_bar()?;
        let attack_steps = self.config.simulation.attack_steps;
        let (w, v) = self.noise(self.config.noise.seed)?;
        let mut first = DVector::zeros(self.system.output_dim());
        first[0] = 1.0;
        let rows = table
            .thresholds()
            .into_iter()
            .map(|t| {
                let bound = reach_bound(&self.system, w_bar, t.alpha, r.horizon, r.n_dirs)?;
                let attack_alarms = if attack_steps > 0 {
                    let policy =
                        AttackPolicy::zero_alarm(t.alpha, AttackDirection::Fixed(first.clone()));
                    let trace = simulate(&self.system, &w, &v, attack_steps, Some(&policy))?;
                    alarm_count(trace.q_values(), t.alpha)
                } else {
                    0
                };
                Ok(ReachRow {
                    method: t.method,
                    k: t.k,
                    bound,
                    attack_alarms,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bounds: Vec<ReachBound> = rows.iter().map(|r| r.bound.clone()).collect();
        let comparison = volume_comparison(&bounds)?;
        Ok(ReachReport {
            w_bar,
            rows,
            comparison,
            attack_steps,
        })
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// Writes `thresholds.csv` and `moments.csv`.
pub fn write_tune(dir: &Path, table: &TuneTable) -> Result<()> {
    let mut f = create(dir, "thresholds.csv")?;
    table.write_csv(&mut f)?;
    finish(f)?;
    let mut f = create(dir, "moments.csv")?;
    writeln!(f, "k, moments")?;
    writeln!(f, "{}", table.moments.to_csv_row())?;
    finish(f)
}

pub fn write_far(dir: &Path, far: &FarTable) -> Result<()> {
    let mut f = create(dir, "far.csv")?;
    far.write_csv(&mut f)?;
    finish(f)
}

/// Writes one `reach_<alpha>.csv` boundary per threshold and `areas.csv`.
pub fn write_reach(dir: &Path, report: &ReachReport) -> Result<()> {
    for row in &report.rows {
        if row.bound.state_dim() == 2 {
            let mut f = create(dir, &ReachReport::boundary_file_name(row.bound.alpha))?;
            row.bound.write_boundary_csv(&mut f)?;
            finish(f)?;
        }
    }
    let mut f = create(dir, "areas.csv")?;
    report.write_areas_csv(&mut f)?;
    finish(f)
}

pub fn run_tune(exp: &Experiment, dir: &Path) -> Result<TuneTable> {
    let table = exp.tune()?;
    write_tune(dir, &table)?;
    Ok(table)
}

pub fn run_far(exp: &Experiment, dir: &Path) -> Result<(TuneTable, FarTable)> {
    let table = exp.tune()?;
    let far = exp.far(&table)?;
    write_far(dir, &far)?;
    Ok((table, far))
}

pub fn run_reach(exp: &Experiment, dir: &Path) -> Result<(TuneTable, ReachReport)> {
    let table = exp.tune()?;
    let report = exp.reach(&table)?;
    write_reach(dir, &report)?;
    Ok((table, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllReport {
    pub tune: TuneTable,
    pub far: FarTable,
    pub reach: ReachReport,
}

/// Tune once, then feed the same thresholds to the false-alarm and reach stages.
pub fn run_all(exp: &Experiment, dir: &Path) -> Result<AllReport> {
    let tune = run_tune(exp, dir)?;
    let far = exp.far(&tune)?;
    write_far(dir, &far)?;
    let reach = exp.reach(&tune)?;
    write_reach(dir, &reach)?;
    Ok(AllReport { tune, far, reach })
}
