use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use direg::angle::{estimate_alpha_with, AngleConfig, AngleEstimate};
use direg::aniso::{simulate_anisotropic_dataset, AnisoSimConfig};
use direg::detection::{detect_with, DetectionConfig, DEFAULT_XI};
use direg::grid::{FunctionalDataset, Point2, Surface};
use direg::harness::{self, ExperimentConfig, ExperimentKind, ReportFormat};
use direg::io::{read_dataset, write_atomic, write_dataset};
use direg::regularity::{default_delta, DatasetVariograms, Direction, VariogramSource};
use direg::smoothing::{empirical_risk, nw_smooth, plan_anisotropic, plan_isotropic, BandwidthRule, SmootherPlan};
use direg::{DiregError, Result};

#[derive(Parser)]
#[command(name = "direg", version, about = "Directional regularity of noisy random surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// `auto` or an explicit positive value.
#[derive(Debug, Clone, Copy)]
enum Auto<T> {
    Auto,
    Value(T),
}

impl<T: FromStr> FromStr for Auto<T> {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Auto::Auto);
        }
        s.parse().map(Auto::Value).map_err(|_| format!("expected `auto` or a number, got {s:?}"))
    }
}

impl<T> Auto<T> {
    fn value(self) -> Option<T> {
        match self {
            Auto::Auto => None,
            Auto::Value(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Aniso,
    Iso,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Rule {
    Rate,
    Objective,
}

impl From<Rule> for BandwidthRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Rate => BandwidthRule::Rate,
            Rule::Objective => BandwidthRule::Objective,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BenchKind {
    Angle,
    Detection,
    Smoothing,
}

impl From<BenchKind> for ExperimentKind {
    fn from(k: BenchKind) -> Self {
        match k {
            BenchKind::Angle => ExperimentKind::Angle,
            BenchKind::Detection => ExperimentKind::Detection,
            BenchKind::Smoothing => ExperimentKind::Smoothing,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from an AnisoSimConfig file (TOML or JSON).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the directional variation and regularity along one direction.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long, default_value = "auto")]
        delta: Auto<f64>,
    },
    /// Estimate, identify and correct the anisotropy angle.
    EstimateAngle {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "auto")]
        delta: Auto<f64>,
        #[arg(long, default_value_t = 15)]
        k0: usize,
        #[arg(long, default_value_t = 0.4)]
        delta_max: f64,
        #[arg(long = "estimate-R")]
        estimate_r: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test for anisotropy around an estimated (or given) angle.
    Detect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "auto")]
        j: Auto<usize>,
        #[arg(long, default_value_t = DEFAULT_XI)]
        xi: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this angle instead of estimating it.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn a smoother from one dataset and apply it to another.
    Smooth {
        #[arg(long)]
        learn: PathBuf,
        #[arg(long)]
        online: PathBuf,
        #[arg(long, value_enum, default_value = "aniso")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "rate")]
        bandwidth_rule: Rule,
        /// Noiseless counterpart of the online set, for the risk.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Directory for the smoothed surfaces.
        #[arg(long)]
        smoothed: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded replication study and write a CSV or JSON report.
    Bench {
        #[arg(value_enum)]
        kind: BenchKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
        /// Full-scale replication count.
        #[arg(long, conflicts_with = "replications")]
        full: bool,
        #[arg(long)]
        timing: bool,
    },
}

fn load_sim(path: &Path) -> Result<AnisoSimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| DiregError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let cfg: AnisoSimConfig = if ReportFormat::from_path(path) == ReportFormat::Json {
        serde_json::from_str(&text).map_err(|e| DiregError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| DiregError::Config(format!("{}: {e}", path.display())))?
    };
    cfg.validate().map_err(|e| DiregError::Config(e.to_string()))?;
    Ok(cfg)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct EstimateOut {
    beta: f64,
    delta: f64,
    sigma_sq_hat: f64,
    theta_hat: f64,
    theta_hat_2delta: f64,
    h_hat: f64,
    eval_count: usize,
}

#[derive(Serialize)]
struct AngleOut {
    #[serde(flatten)]
    estimate: AngleEstimate,
    wall_seconds: f64,
}

#[derive(Serialize)]
struct SmoothOut {
    mode: &'static str,
    h1: f64,
    h2: f64,
    alpha: f64,
    risk: Option<f64>,
    plan: SmootherPlan,
}

fn bench_preset(kind: ExperimentKind) -> ExperimentConfig {
    let sim = match kind {
        ExperimentKind::Angle => AnisoSimConfig::fbm_sum(PI / 4.0, 0.8, 0.5, 100, 51, 0.1, 0),
        ExperimentKind::Detection => AnisoSimConfig::fbm_sum(PI / 3.0, 0.8, 0.5, 150, 51, 0.1, 0),
        ExperimentKind::Smoothing => AnisoSimConfig::fbm_sum(PI / 3.0, 0.8, 0.5, 150, 101, 0.05, 0),
    };
    ExperimentConfig::new(kind, sim)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_sim(&config)?;
            let ds = simulate_anisotropic_dataset(&cfg)?;
            write_dataset(&ds, &out)?;
            eprintln!("wrote {} surfaces on a {}x{} grid to {}", ds.n_surfaces(), cfg.side_count, cfg.side_count, out.display());
        }
        Command::Estimate { data, beta, delta } => {
            let ds = read_dataset(&data)?;
            let vg = DatasetVariograms::new(&ds)?;
            let delta = delta.value().unwrap_or_else(|| default_delta(ds.m0()));
            let dir = Direction::new(beta);
            let v1 = vg.variogram(dir, delta)?;
            let v2 = vg.variogram(dir, 2.0 * delta)?;
            emit_json(
                &EstimateOut {
                    beta,
                    delta,
                    sigma_sq_hat: vg.sigma_sq,
                    theta_hat: v1.theta_hat,
                    theta_hat_2delta: v2.theta_hat,
                    h_hat: vg.h_directional(dir, delta)?,
                    eval_count: v1.eval_count,
                },
                None,
            )?;
        }
        Command::EstimateAngle {
            data,
            delta,
            k0,
            delta_max,
            estimate_r,
            out,
        } => {
            let ds = read_dataset(&data)?;
            let start = Instant::now();
            let vg = DatasetVariograms::new(&ds)?;
            let cfg = AngleConfig {
                delta: delta.value(),
                k0,
                delta_max,
                estimate_r,
            };
            let estimate = estimate_alpha_with(&vg, &cfg)?;
            let wall_seconds = start.elapsed().as_secs_f64();
            emit_json(&AngleOut { estimate, wall_seconds }, out.as_deref())?;
        }
        Command::Detect {
            data,
            j,
            xi,
            seed,
            alpha,
            out,
        } => {
            let ds = read_dataset(&data)?;
            let vg = DatasetVariograms::new(&ds)?;
            let cfg = DetectionConfig {
                j_count: j.value(),
                xi,
                seed,
                ..DetectionConfig::default()
            };
            cfg.validate().map_err(|e| DiregError::Config(e.to_string()))?;
            let alpha = match alpha {
                Some(a) => a,
                None => estimate_alpha_with(&vg, &AngleConfig::default())?.alpha_hat_adj,
            };
            emit_json(&detect_with(&vg, alpha, &cfg)?, out.as_deref())?;
        }
        Command::Smooth {
            learn,
            online,
            mode,
            bandwidth_rule,
            truth,
            smoothed,
            out,
        } => {
            let learning = read_dataset(&learn)?;
            let online = read_dataset(&online)?;
            let truth = truth.map(|p| read_dataset(&p)).transpose()?;
            let vg = DatasetVariograms::new(&learning)?;
            let rule = bandwidth_rule.into();
            let plan = match mode {
                Mode::Aniso => {
                    let alpha = estimate_alpha_with(&vg, &AngleConfig::default())?.alpha_hat_adj;
                    plan_anisotropic(&vg, alpha, None, rule)?
                }
                Mode::Iso => plan_isotropic(&vg, None, rule)?,
            };
            let eval: Vec<Point2> = online.grid.points().collect();
            let fitted: Vec<Surface> = online
                .surfaces
                .iter()
                .map(|s| Surface::new(online.grid, nw_smooth(&plan, s, &eval)))
                .collect::<Result<_>>()?;
            let risk = match &truth {
                Some(t) => {
                    if t.n_surfaces() != online.n_surfaces() {
                        return Err(DiregError::InvalidArgument("truth and online sets differ in size".into()));
                    }
                    let mut total = 0.0;
                    for (f, ts) in fitted.iter().zip(&t.surfaces) {
                        let target: Vec<f64> = eval.iter().map(|&p| ts.at(p)).collect();
                        total += empirical_risk(&target, &f.values)?;
                    }
                    Some(total / fitted.len() as f64)
                }
                None => None,
            };
            if let Some(dir) = smoothed {
                let ds = FunctionalDataset::new(online.grid, fitted, 0.0, online.meta.clone())?;
                write_dataset(&ds, &dir)?;
            }
            let report = SmoothOut {
                mode: match mode {
                    Mode::Aniso => "aniso",
                    Mode::Iso => "iso",
                },
                h1: plan.h1,
                h2: plan.h2,
                alpha: plan.alpha.alpha,
                risk,
                plan,
            };
            emit_json(&report, out.as_deref())?;
        }
        Command::Bench {
            kind,
            config,
            out,
            replications,
            full,
            timing,
        } => {
            let kind = ExperimentKind::from(kind);
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_path(&p)?,
                None => bench_preset(kind),
            };
            if cfg.kind != kind {
                return Err(DiregError::Config(format!("config kind {:?} does not match bench {:?}", cfg.kind, kind)));
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            if full {
                cfg.replications = harness::FULL_REPLICATIONS;
            }
            cfg.timing |= timing;
            let path = out
                .or_else(|| cfg.out_path.clone())
                .unwrap_or_else(|| PathBuf::from(format!("bench_{kind:?}.csv").to_lowercase()));
            let records = harness::run_experiment(&cfg)?;
            harness::emit_report(&records, ReportFormat::from_path(&path), &path)?;
            for s in harness::summarize(&records) {
                let extra = s.extra.map(|e| format!(" extra mean {:.4} median {:.4}", e.mean, e.median)).unwrap_or_default();
                println!(
                    "alpha {:.6} n {} risk median {:.5} iqr {:.5}{extra}",
                    s.alpha_true, s.count, s.risk.median, s.risk.iqr
                );
            }
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &DiregError) -> u8 {
    match e {
        DiregError::Config(_) | DiregError::InvalidArgument(_) => 2,
        DiregError::Io { .. } | DiregError::Format { .. } => 3,
        DiregError::Numerical(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("direg: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
