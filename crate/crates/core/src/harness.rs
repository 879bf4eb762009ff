//! Seeded Monte Carlo replications of the angle, detection and smoothing
//! studies, plus CSV/JSON report emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aniso::{simulate_anisotropic_dataset, AnisoSimConfig};
use crate::angle::{estimate_alpha_with, AngleConfig, AngleEstimate};
use crate::detection::{detect_with, DetectionConfig};
use crate::error::{DiregError, Result};
use crate::grid::add_noise_in_place;
use crate::io::write_atomic;
use crate::regularity::{DatasetVariograms, MAX_EVAL_POINTS};
use crate::rng::{derive_seed, derived_stream, stage};
use crate::smoothing::{compare_plans, discretize_nearest, plan_anisotropic, plan_isotropic, BandwidthRule};

pub const THREADS_ENV: &str = "DIREG_THREADS";
pub const DEFAULT_REPLICATIONS: usize = 50;
pub const FULL_REPLICATIONS: usize = 400;
pub const CSV_HEADER: &str = "rep_id,seed,alpha_true,alpha_hat,alpha_hat_adj,risk,extra,wall_seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Angle,
    Detection,
    Smoothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` selects JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

fn default_k0() -> usize {
    15
}
fn default_delta_max() -> f64 {
    0.4
}
fn default_tgrid_cap() -> usize {
    MAX_EVAL_POINTS
}
fn default_xi() -> f64 {
    1.0 / 3.0
}
fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}
fn default_online_side() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// `None` means `M₀^{-1/4}`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_k0")]
    pub k0: usize,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_tgrid_cap")]
    pub tgrid_cap: usize,
    #[serde(default)]
    pub estimate_r: bool,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default)]
    pub j_count: Option<usize>,
    #[serde(default)]
    pub bandwidth_rule: BandwidthRule,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            delta: None,
            k0: default_k0(),
            delta_max: default_delta_max(),
            tgrid_cap: default_tgrid_cap(),
            estimate_r: false,
            xi: default_xi(),
            j_count: None,
            bandwidth_rule: BandwidthRule::default(),
        }
    }
}

impl EstimationConfig {
    pub fn angle(&self) -> AngleConfig {
        AngleConfig {
            delta: self.delta,
            k0: self.k0,
            delta_max: self.delta_max,
            estimate_r: self.estimate_r,
        }
    }

    pub fn detection(&self, seed: u64) -> DetectionConfig {
        DetectionConfig {
            j_count: self.j_count,
            xi: self.xi,
            k0: self.k0,
            delta_max: self.delta_max,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Simulation setup; its `seed` is replaced per replication.
    pub sim: AnisoSimConfig,
    /// Replication `r` uses `alphas[r % len]` when nonempty, else `sim.alpha`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker count; `DIREG_THREADS` overrides it.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub out_path: Option<PathBuf>,
    /// Side of the noiseless grid that online truths are drawn on.
    #[serde(default = "default_online_side")]
    pub online_side: usize,
    /// Record wall-clock time per replication. Off keeps reports byte-stable.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, sim: AnisoSimConfig) -> Self {
        Self {
            kind,
            sim,
            alphas: Vec::new(),
            estimation: EstimationConfig::default(),
            replications: DEFAULT_REPLICATIONS,
            master_seed: 0,
            parallelism: None,
            out_path: None,
            online_side: default_online_side(),
            timing: false,
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DiregError::io(path, e))?;
        let cfg: Self = if ReportFormat::from_path(path) == ReportFormat::Json {
            serde_json::from_str(&text).map_err(|e| DiregError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| DiregError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DiregError::Config(m));
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        if self.parallelism == Some(0) {
            return bad("parallelism must be >= 1".into());
        }
        for alpha in self.alphas.iter().copied().chain([self.sim.alpha]) {
            let sim = AnisoSimConfig { alpha, ..self.sim.clone() };
            sim.validate().map_err(|e| DiregError::Config(format!("sim: {e}")))?;
        }
        let est = &self.estimation;
        if est.tgrid_cap == 0 {
            return bad("estimation.tgrid_cap must be >= 1".into());
        }
        if let Some(d) = est.delta {
            if !(d > 0.0 && d < 0.5) {
                return bad(format!("estimation.delta must lie in (0, 0.5), got {d}"));
            }
        }
        est.detection(0)
            .validate()
            .map_err(|e| DiregError::Config(format!("estimation: {e}")))?;
        if self.kind == ExperimentKind::Smoothing && self.online_side < self.sim.side_count {
            return bad("online_side must be at least sim.side_count".into());
        }
        Ok(())
    }

    pub fn alpha_for(&self, rep_id: usize) -> f64 {
        if self.alphas.is_empty() {
            self.sim.alpha
        } else {
            self.alphas[rep_id % self.alphas.len()]
        }
    }

    /// Worker count after the environment override.
    pub fn threads(&self) -> Result<usize> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(DiregError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
            },
            Err(_) => Ok(self.parallelism.unwrap_or_else(rayon::current_num_threads)),
        }
    }
}

/// One replication. `extra` is the verdict (1 or 0) for detection runs, the
/// relative risk for smoothing runs, and empty for angle runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep_id: usize,
    pub seed: u64,
    pub alpha_true: f64,
    pub alpha_hat: f64,
    pub alpha_hat_adj: f64,
    pub risk: f64,
    pub extra: Option<f64>,
    pub wall_seconds: f64,
}

pub fn replication_seed(master_seed: u64, rep_id: usize) -> u64 {
    derive_seed(master_seed, &[stage::REPLICATION, rep_id as u64])
}

fn estimate_angle(vg: &DatasetVariograms<'_>, cfg: &ExperimentConfig) -> Result<AngleEstimate> {
    estimate_alpha_with(vg, &cfg.estimation.angle())
}

pub fn run_replication(cfg: &ExperimentConfig, rep_id: usize) -> Result<ReplicationRecord> {
    let start = Instant::now();
    let seed = replication_seed(cfg.master_seed, rep_id);
    let alpha = cfg.alpha_for(rep_id);
    let sim_seed = match cfg.kind {
        ExperimentKind::Smoothing => derive_seed(seed, &[stage::LEARNING]),
        _ => seed,
    };
    let sim = AnisoSimConfig {
        alpha,
        seed: sim_seed,
        ..cfg.sim.clone()
    };
    let data = simulate_anisotropic_dataset(&sim)?;
    let vg = DatasetVariograms::new(&data)?.with_cap(cfg.estimation.tgrid_cap);
    let est = estimate_angle(&vg, cfg)?;
    let extra = match cfg.kind {
        ExperimentKind::Angle => None,
        ExperimentKind::Detection => {
            let report = detect_with(&vg, est.alpha_hat_adj, &cfg.estimation.detection(seed))?;
            Some(if report.is_anisotropic { 1.0 } else { 0.0 })
        }
        ExperimentKind::Smoothing => {
            let rule = cfg.estimation.bandwidth_rule;
            let aniso = plan_anisotropic(&vg, est.alpha_hat_adj, None, rule)?;
            let iso = plan_isotropic(&vg, None, rule)?;
            let online = AnisoSimConfig {
                n_surfaces: 1,
                side_count: cfg.online_side,
                noise_sd: 0.0,
                seed: derive_seed(seed, &[stage::ONLINE]),
                ..sim.clone()
            };
            let truth = simulate_anisotropic_dataset(&online)?.surfaces.remove(0);
            let mut noisy = discretize_nearest(&truth, data.grid);
            let mut noise = derived_stream(seed, &[stage::ONLINE, stage::NOISE]);
            add_noise_in_place(&mut noisy.values, cfg.sim.noise_sd, &mut noise);
            Some(compare_plans(&aniso, &iso, &noisy, &truth)?.relative_risk())
        }
    };
    Ok(ReplicationRecord {
        rep_id,
        seed,
        alpha_true: alpha,
        alpha_hat: est.alpha_hat,
        alpha_hat_adj: est.alpha_hat_adj,
        risk: (est.alpha_hat_adj - alpha).abs(),
        extra,
        wall_seconds: if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

/// Runs all replications on a pool of [`ExperimentConfig::threads`] workers.
/// Records come back in `rep_id` order whatever the completion order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicationRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads()?)
        .build()
        .map_err(|e| DiregError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, r))
            .collect()
    })
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub mean: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q25, q75) = (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75));
        Some(Self {
            median: quantile_sorted(&v, 0.5),
            q25,
            q75,
            iqr: q75 - q25,
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

/// Summary of the replications sharing one `alpha_true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub alpha_true: f64,
    pub count: usize,
    pub risk: Spread,
    pub extra: Option<Spread>,
}

/// Groups by `alpha_true` in order of first appearance.
pub fn summarize(records: &[ReplicationRecord]) -> Vec<ConfigSummary> {
    let mut keys: Vec<f64> = Vec::new();
    for r in records {
        if !keys.iter().any(|k| k.to_bits() == r.alpha_true.to_bits()) {
            keys.push(r.alpha_true);
        }
    }
    keys.into_iter()
        .map(|alpha| {
            let group: Vec<&ReplicationRecord> = records.iter().filter(|r| r.alpha_true.to_bits() == alpha.to_bits()).collect();
            let risks: Vec<f64> = group.iter().map(|r| r.risk).collect();
            let extras: Vec<f64> = group.iter().filter_map(|r| r.extra).collect();
            ConfigSummary {
                alpha_true: alpha,
                count: group.len(),
                risk: Spread::of(&risks).expect("group is nonempty"),
                extra: Spread::of(&extras),
            }
        })
        .collect()
}

pub fn records_to_csv(records: &[ReplicationRecord]) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let extra = r.extra.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.rep_id, r.seed, r.alpha_true, r.alpha_hat, r.alpha_hat_adj, r.risk, extra, r.wall_seconds
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub records: Vec<ReplicationRecord>,
    pub summary: Vec<ConfigSummary>,
}

/// Writes the records. CSV output gets a `<stem>.summary.json` sibling with
/// the per-configuration summary; JSON output embeds it.
pub fn emit_report(records: &[ReplicationRecord], format: ReportFormat, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(DiregError::invalid("no records to report"));
    }
    let summary = summarize(records);
    match format {
        ReportFormat::Csv => {
            write_atomic(path, records_to_csv(records).as_bytes())?;
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            write_atomic(&summary_path(path), json.as_bytes())
        }
        ReportFormat::Json => {
            let report = JsonReport {
                records: records.to_vec(),
                summary,
            };
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_atomic(path, json.as_bytes())
        }
    }
}

pub fn summary_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.summary.json"))
}

/// Parses a report written by [`records_to_csv`].
pub fn parse_records_csv(text: &str) -> Result<Vec<ReplicationRecord>> {
    let bad = |m: String| DiregError::invalid(m);
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad("missing report header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("expected 8 fields: {line}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
            Ok(ReplicationRecord {
                rep_id: f[0].parse().map_err(|_| bad(format!("bad rep_id {:?}", f[0])))?,
                seed: f[1].parse().map_err(|_| bad(format!("bad seed {:?}", f[1])))?,
                alpha_true: num(f[2])?,
                alpha_hat: num(f[3])?,
                alpha_hat_adj: num(f[4])?,
                risk: num(f[5])?,
                extra: if f[6].is_empty() { None } else { Some(num(f[6])?) },
                wall_seconds: num(f[7])?,
            })
        })
        .collect()
}
