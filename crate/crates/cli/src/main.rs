//! `nbb`: experiment runner and controller server.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nbb_client::{InProcess, Session, Transport};
use nbb_core::harness::{self, ExperimentKind, ExperimentOutput, ExperimentSpec};
use nbb_core::{BoardConfig, CalibrationTable, Controller};
use nbb_server::Server;

#[derive(Parser)]
#[command(name = "nbb", version, about = "Memristor board simulator: experiments and controller server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the signal chain and write the calibration table (JSON).
    Calibrate(Common),
    /// Repeated reads of a fixed reference resistor.
    Histogram(Experiment),
    /// Relative error and sigma over a list of reference resistors.
    Sweep(Experiment),
    /// Alternating RESET/SET cycles on one cell with a read after each.
    Endurance(Experiment),
    /// Random matrix-vector products checked against the exact product.
    Mvm(Experiment),
    /// NOR truth table over variability seeds.
    Logic(Experiment),
    /// Summary statistics of a CSV written by one of the experiments.
    Report {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the controller protocol.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// Board configuration file (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the whole run; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Talk to a running `nbb serve --listen` instead of an in-process controller.
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
}

#[derive(Args)]
struct Experiment {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    repeats: Option<usize>,
    /// ADC conversions averaged per reading.
    #[arg(long)]
    samples: Option<usize>,
    /// Reference resistances, e.g. `1k,50k,1M`.
    #[arg(long, value_delimiter = ',', value_parser = parse_ohms)]
    refs: Option<Vec<f64>>,
    /// Histogram reference value in ohms.
    #[arg(long, value_parser = parse_ohms)]
    truth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long, default_value_t = 0)]
    col: usize,
    /// Sweep with 10 000 repeats per point.
    #[arg(long)]
    sweep_full: bool,
    /// Write the summary and checks as JSON here.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Exit with status 1 unless every acceptance check passes.
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Preload a calibration table.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// NDJSON over TCP.
    #[arg(long, value_name = "ADDR", conflicts_with_all = ["stdio", "http"])]
    listen: Option<String>,
    /// NDJSON over stdin/stdout.
    #[arg(long)]
    stdio: bool,
    /// HTTP: `POST /v1/rpc`, `GET /v1/health`.
    #[arg(long, value_name = "ADDR", conflicts_with = "stdio")]
    http: Option<String>,
}

fn parse_ohms(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, mult) = match s.chars().last() {
        Some('k' | 'K') => (&s[..s.len() - 1], 1e3),
        Some('M') => (&s[..s.len() - 1], 1e6),
        _ => (s, 1.0),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| format!("'{s}' is not a resistance (examples: 470, 1k, 2.2M)"))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(format!("'{s}' must be positive"));
    }
    Ok(v * mult)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<BoardConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            BoardConfig::from_json(&text).with_context(|| format!("loading {}", p.display()))?
        }
        None => BoardConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Session over TCP when `--connect` is given, in-process otherwise. A
/// config file, if given, is pushed to the remote side.
fn with_session<R>(
    common: &Common,
    f: impl FnOnce(&mut dyn FnMut(&str, serde_json::Value) -> Result<serde_json::Value>) -> Result<R>,
) -> Result<R> {
    fn run<T: Transport, R>(
        mut s: Session<T>,
        f: impl FnOnce(&mut dyn FnMut(&str, serde_json::Value) -> Result<serde_json::Value>) -> Result<R>,
    ) -> Result<R> {
        f(&mut |op, params| Ok(s.call(op, params)?))
    }
    let cfg = load_config(common.config.as_deref(), common.seed)?;
    match &common.connect {
        Some(addr) => {
            let mut s = Session::connect(addr)?;
            if common.config.is_some() {
                s.configure(&cfg)?;
            } else if let Some(seed) = common.seed {
                let remote = s.get_config()?.with_seed(seed);
                s.configure(&remote)?;
            }
            run(s, f)
        }
        None => run(Session::new(InProcess::new(Controller::new(cfg)?)), f),
    }
}

fn calibrate(common: Common) -> Result<ExitCode> {
    let table = with_session(&common, |call| call("calibrate", serde_json::json!({})))?;
    let table: CalibrationTable = serde_json::from_value(table)?;
    emit(common.out.as_deref(), &(table.to_json() + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn experiment(kind: ExperimentKind, args: Experiment) -> Result<ExitCode> {
    let seed = match args.common.seed {
        Some(s) => s,
        None => load_config(args.common.config.as_deref(), None)?.seed,
    };
    let mut spec = ExperimentSpec::new(kind, seed);
    spec.repeats = args.repeats;
    if args.sweep_full {
        if kind != ExperimentKind::Sweep {
            bail!("--sweep-full only applies to sweep");
        }
        spec.repeats = Some(10_000);
    }
    spec.samples = args.samples;
    spec.refs_ohm = args.refs.clone();
    spec.truth_ohm = args.truth;
    spec.row = args.row;
    spec.col = args.col;
    let out: ExperimentOutput = with_session(&args.common, |call| {
        Ok(serde_json::from_value(call("experiment", serde_json::to_value(&spec)?)?)?)
    })?;
    emit(args.common.out.as_deref(), &out.csv)?;
    for c in &out.checks {
        eprintln!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let summary = serde_json::json!({
        "kind": out.kind,
        "seed": out.seed,
        "summary": out.summary,
        "checks": out.checks,
    });
    match &args.summary {
        Some(p) => fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?,
        None => eprintln!("{}", serde_json::to_string_pretty(&out.summary)?),
    }
    Ok(if args.assert && !out.all_pass() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn report(csv: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let summary = harness::report(&text)?;
    emit(out, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn serve(args: ServeArgs) -> Result<ExitCode> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    let mut ctrl = Controller::new(cfg)?;
    if let Some(p) = &args.calibration {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        ctrl.load_calibration(CalibrationTable::from_json(&text)?)?;
    }
    let server = Server::new(ctrl);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        if args.stdio {
            server.serve_stdio().await?;
            return Ok(());
        }
        if let Some(addr) = &args.http {
            let l = tokio::net::TcpListener::bind(addr).await?;
            eprintln!("listening (http) on {}", l.local_addr()?);
            server.serve_http(l).await?;
            return Ok(());
        }
        let addr = args.listen.as_deref().unwrap_or("127.0.0.1:7878");
        let l = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening (ndjson) on {}", l.local_addr()?);
        server.serve_tcp(l).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(c) => calibrate(c),
        Command::Histogram(a) => experiment(ExperimentKind::Histogram, a),
        Command::Sweep(a) => experiment(ExperimentKind::Sweep, a),
        Command::Endurance(a) => experiment(ExperimentKind::Endurance, a),
        Command::Mvm(a) => experiment(ExperimentKind::Mvm, a),
        Command::Logic(a) => experiment(ExperimentKind::Logic, a),
        Command::Report { csv, out } => report(&csv, out.as_deref()),
        Command::Serve(a) => serve(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
