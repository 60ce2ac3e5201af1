//! `mslab`: run boundary classification, ray tracing, mode export and
//! propagation experiments from the command line or a config file.

mod config;
mod exec;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mslab::chart::{Boundary, ChartKind, ChartSpec, CollarChart};
use mslab::quant::{Symbol, TangentialSymbol};
use mslab::quasimode::Family;

use config::{Config, Experiment, MRule, ModeFamily, Start};
use output::{Meta, Writer};

#[derive(Parser)]
#[command(name = "mslab", version, about = "Billiard flow, boundary classification and defect-measure experiments on the disk")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true, env = "MSLAB_OUT")]
    out: Option<PathBuf>,
    /// Seed for randomized sampling; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a config file.
    Run { config: PathBuf },
    /// Run only the propagation experiments of a config file.
    Verify { config: PathBuf },
    /// Classify a boundary point (x', xi').
    Classify(ClassifyArgs),
    /// Trace a generalized bicharacteristic.
    Trace(TraceArgs),
    /// Export a disk eigenfunction on its polar grid.
    Mode(ModeArgs),
    /// Parametrix error against the exact harmonic extension.
    Parametrix(ParametrixArgs),
    /// Pairings of a symbol along a mode family.
    Measure(MeasureArgs),
}

#[derive(Args)]
struct ChartArg {
    /// `disk`, `annulus:<inner radius>:<inner|outer>` or a chart JSON file.
    #[arg(long, default_value = "disk")]
    chart: String,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    chart: ChartArg,
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
    #[arg(long, allow_hyphen_values = true)]
    xi: f64,
    #[arg(long, allow_hyphen_values = true)]
    tol_g: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tol_bracket: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    chart: ChartArg,
    #[arg(long, default_value_t = 0.0)]
    y: f64,
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
    #[arg(long, allow_hyphen_values = true)]
    xi: f64,
    /// Defaults to `+sqrt(r)`.
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    /// Flow time; negative traces backwards.
    #[arg(long, allow_hyphen_values = true)]
    s: f64,
}

#[derive(Args)]
struct ModeArgs {
    #[arg(long)]
    family: Family,
    #[arg(long)]
    m: u32,
    #[arg(long)]
    k: u32,
    /// `n_r,n_theta`.
    #[arg(long, value_parser = parse_pair)]
    grid: Option<(usize, usize)>,
}

#[derive(Args)]
struct ParametrixArgs {
    #[arg(long, value_delimiter = ',')]
    m: Vec<i64>,
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    order: u8,
    #[arg(long, default_value_t = mslab::parametrix::DEFAULT_DELTA0)]
    delta0: f64,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    family: Family,
    #[arg(long, value_delimiter = ',')]
    m: Vec<u32>,
    /// Radial indices: `a..b` or a comma list.
    #[arg(long)]
    k: String,
    /// Symbol as JSON text, or `@file`.
    #[arg(long)]
    symbol: String,
    /// Read the symbol as a tangential (collar) symbol.
    #[arg(long)]
    tangential: bool,
    #[arg(long, default_value_t = 0.5)]
    width: f64,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected n_r,n_theta")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_indices(s: &str) -> Result<Vec<u32>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|e| format!("{e}"))?;
        return Ok((a..=b).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|e| format!("--k: {e}"))).collect()
}

fn parse_chart(s: &str) -> Result<ChartSpec, String> {
    if s == "disk" {
        return Ok(CollarChart::disk().to_spec());
    }
    if let Some(rest) = s.strip_prefix("annulus:") {
        let (r, side) = rest.split_once(':').unwrap_or((rest, "outer"));
        let inner_radius: f64 = r.parse().map_err(|e| format!("annulus radius: {e}"))?;
        let boundary = match side {
            "inner" => Boundary::Inner,
            "outer" => Boundary::Outer,
            other => return Err(format!("annulus boundary must be inner or outer, got {other:?}")),
        };
        return Ok(ChartSpec {
            kind: ChartKind::Annulus { inner_radius, boundary },
            collar_width: None,
            max_derivative_order: None,
        });
    }
    let text = std::fs::read_to_string(s).map_err(|e| format!("chart file {s}: {e}"))?;
    serde_json::from_str(&text).map_err(|e| format!("chart file {s}: {e}"))
}

fn read_text(arg: &str) -> Result<String, String> {
    match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}")),
        None => Ok(arg.to_string()),
    }
}

fn load_config(path: &Path) -> Result<Config, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Config::parse(&text).map_err(|e| e.to_string())
}

/// The config equivalent to a single-experiment subcommand.
fn config_for(command: Command) -> Result<(Config, bool), String> {
    let mut cfg = Config::default();
    let experiment = match command {
        Command::Run { config } => return Ok((load_config(&config)?, false)),
        Command::Verify { config } => return Ok((load_config(&config)?, true)),
        Command::Classify(a) => {
            cfg.chart = parse_chart(&a.chart.chart)?;
            if let Some(v) = a.tol_g {
                cfg.classify.tol_g = v;
            }
            if let Some(v) = a.tol_bracket {
                cfg.classify.tol_bracket = v;
            }
            if let Some(v) = a.k_max {
                cfg.classify.k_max = v;
            }
            Experiment::Classify {
                name: "classify".into(),
                points: vec![[a.x, a.xi]],
                random_points: 0,
                xi_max: 1.5,
            }
        }
        Command::Trace(a) => {
            cfg.chart = parse_chart(&a.chart.chart)?;
            Experiment::Trace {
                name: "trace".into(),
                start: Start {
                    y: a.y,
                    x: a.x,
                    xi: a.xi,
                    eta: a.eta,
                },
                s: a.s,
            }
        }
        Command::Mode(a) => Experiment::Mode {
            name: format!("mode_{}_{}_{}", format!("{:?}", a.family).to_lowercase(), a.m, a.k),
            family: a.family,
            m: a.m,
            k: a.k,
            grid: a.grid,
        },
        Command::Parametrix(a) => Experiment::Parametrix {
            name: "parametrix".into(),
            m: a.m,
            h: a.h,
            order: a.order,
            delta0: a.delta0,
        },
        Command::Measure(a) => {
            let text = read_text(&a.symbol)?;
            let (symbol, tangential) = if a.tangential {
                let t: TangentialSymbol = serde_json::from_str(&text).map_err(|e| format!("symbol: {e}"))?;
                (None, Some(t))
            } else {
                let s: Symbol = serde_json::from_str(&text).map_err(|e| format!("symbol: {e}"))?;
                (Some(s), None)
            };
            Experiment::Measure {
                name: "measure".into(),
                modes: ModeFamily {
                    family: a.family,
                    m: MRule::List(a.m),
                    k: parse_indices(&a.k)?,
                    grid: None,
                },
                symbol,
                tangential,
                width: a.width,
            }
        }
    };
    cfg.experiments.push(experiment);
    Ok((cfg, false))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("--jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let (mut cfg, verify_only) = match config_for(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        eprint!("{e}");
        return ExitCode::from(2);
    }
    let dir = cli.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("mslab-out"));
    let writer = match Writer::new(dir, Meta::for_config(&cfg.canonical())) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("output directory: {e}");
            return ExitCode::from(2);
        }
    };
    let summary = match exec::run(&cfg, &writer, |e| !verify_only || e.is_verification()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("writing summary: {e}");
            return ExitCode::from(2);
        }
    };
    for o in &summary.experiments {
        let status = serde_json::to_value(o.status).unwrap_or_default();
        let status = status.as_str().unwrap_or("?");
        match &o.message {
            Some(m) => println!("{:<24} {:<16} {status}: {m}", o.name, o.kind),
            None => println!("{:<24} {:<16} {status} [{}]", o.name, o.kind, o.files.join(", ")),
        }
    }
    println!("outputs in {}", writer.dir.display());
    if summary.failed() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
