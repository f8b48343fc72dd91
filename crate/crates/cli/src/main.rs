//! `tsteer`: temporal steering analysis, QKD simulation, parameter sweeps,
//! steerable weights and the self-test.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 self-test failure.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use tsteer::assemblage::Assemblage;
use tsteer::channels::ChannelSpec;
use tsteer::metrics::{default_bases, AttackMode, Protocol};
use tsteer::qkd::{analyze_with, simulate_rounds, AnalysisOptions as SessionOptions, SessionConfig, Sifting};
use tsteer::sdp::{build_weight_sdp, solve, weight_from_solution, SdpStatus, SolverOptions, DEFAULT_SDP_TOL};
use tsteer::selftest::run_selftest;
use tsteer::Error;

use report::{analyze_channel, versioned, AnalysisOptions, CsvRow, SdpBrief};

#[derive(Parser)]
#[command(name = "tsteer", version, about = "Temporal steering of qubit channels and MUB-based QKD security checks")]
struct Cli {
    /// SDP stopping tolerance on gap, complementarity and residuals.
    #[arg(long, global = true, env = "TSTEER_SDP_TOL", default_value_t = DEFAULT_SDP_TOL)]
    sdp_tol: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fidelity table, S_N, QBER bounds, w_t and verdict for a channel.
    Analyze {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        verdict: VerdictArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Monte Carlo QKD session with tomography and analysis.
    Simulate(SimulateArgs),
    /// Analyze a channel over a grid of one named parameter.
    Sweep {
        #[command(flatten)]
        target: Target,
        /// Parameter to vary (e.g. v, p, g, angle, p_x).
        #[arg(long)]
        param: String,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 1.0)]
        to: f64,
        /// Number of grid points, endpoints included.
        #[arg(long, default_value_t = 11)]
        steps: usize,
        #[command(flatten)]
        verdict: VerdictArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Steerable weight of an assemblage given as JSON.
    Weight {
        /// Assemblage JSON: {"N": 2, "members": [{"i": 1, "a": 1, "matrix": ...}, ...]}.
        #[arg(long)]
        assemblage: PathBuf,
        /// Also write the conic problem and raw solution as JSON.
        #[arg(long)]
        dump_problem: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Run the invariant catalog; exit code 4 if any check fails.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON instead of the text matrix.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

#[derive(Args)]
struct Target {
    /// Channel spec: a JSON file, or inline JSON starting with '{'.
    #[arg(long)]
    channel: String,
    /// Number of bases: 2 (BB84) or 3 (six-state).
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Alice's bases, overriding the default {1,3} or {1,2,3}.
    #[arg(long, value_delimiter = ',')]
    bases: Option<Vec<usize>>,
}

#[derive(Args)]
struct VerdictArgs {
    #[arg(long, value_enum, default_value_t = Mode::Individual)]
    mode: Mode,
    /// QBER threshold for unconditional mode (default 0.1).
    #[arg(long)]
    q_override: Option<f64>,
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// Session config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Channel spec file or inline JSON (required without --config).
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tomography_fraction: Option<f64>,
    #[arg(long, value_enum)]
    sifting: Option<SiftingArg>,
    /// Per-round CSV (round,i,a,j,b,purpose,branch).
    #[arg(long)]
    rounds_csv: Option<PathBuf>,
    #[command(flatten)]
    verdict: VerdictArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Individual,
    Unconditional,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SiftingArg {
    PreShared,
    RandomBasis,
}

enum Failure {
    Input(String),
    Numerical(String),
    Selftest,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solver(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Selftest) => ExitCode::from(4),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let solver = SolverOptions::with_tol(cli.sdp_tol)?;
    match cli.command {
        Command::Analyze { target, verdict, output } => {
            let (spec, bases) = target.resolve()?;
            let a = analyze_channel(&spec, &bases, &verdict.options(solver))?;
            match output.format {
                Format::Json => write_json(&output, &versioned("analyze", &a)),
                Format::Csv => write_csv(&output, &[CsvRow::new(&a, None)]),
            }
        }
        Command::Sweep { target, param, from, to, steps, verdict, output } => {
            let (spec, bases) = target.resolve()?;
            if steps == 0 || !from.is_finite() || !to.is_finite() {
                return Err(Failure::Input("sweep needs at least one grid point and finite endpoints".into()));
            }
            let opts = verdict.options(solver);
            let grid: Vec<f64> =
                (0..steps).map(|k| if steps == 1 { from } else { from + (to - from) * k as f64 / (steps - 1) as f64 }).collect();
            let specs = grid.iter().map(|&v| spec.with_param(&param, v)).collect::<Result<Vec<_>, _>>()?;
            let rows = specs
                .par_iter()
                .map(|s| analyze_channel(s, &bases, &opts))
                .collect::<Result<Vec<_>, _>>()?;
            match output.format {
                Format::Csv => {
                    let csv: Vec<CsvRow> = rows.iter().zip(&grid).map(|(a, &v)| CsvRow::new(a, Some((&param, v)))).collect();
                    write_csv(&output, &csv)
                }
                Format::Json => {
                    #[derive(Serialize)]
                    struct Sweep<'a> {
                        param: &'a str,
                        grid: &'a [f64],
                        points: &'a [report::ChannelAnalysis],
                    }
                    write_json(&output, &versioned("sweep", &Sweep { param: &param, grid: &grid, points: &rows }))
                }
            }
        }
        Command::Simulate(args) => simulate(args, solver),
        Command::Weight { assemblage, dump_problem, output } => {
            let asm: Assemblage<f64> = read_json(&assemblage)?;
            let problem = build_weight_sdp(&asm)?;
            let solution = solve(&problem, &solver);
            if let Some(path) = &dump_problem {
                #[derive(Serialize)]
                struct Dump<'a> {
                    problem: &'a tsteer::sdp::SdpProblem,
                    solution: &'a tsteer::sdp::SdpSolution,
                }
                write_file(path, &to_json(&versioned("weight-dump", &Dump { problem: &problem, solution: &solution }))?)?;
            }
            match solution.status {
                SdpStatus::Optimal => {}
                SdpStatus::Infeasible => {
                    let c = solution.infeasibility.as_ref().expect("certificate");
                    return Err(Failure::Input(format!("{}: member {} has eigenvalue {:.3e}", assemblage.display(), c.member, c.eigenvalue)));
                }
                SdpStatus::NumericalFailure => {
                    return Err(Failure::Numerical(format!("SDP did not converge (gap {:.3e})", solution.gap)));
                }
            }
            let w = weight_from_solution(&problem, solution);
            #[derive(Serialize)]
            struct WeightOut<'a> {
                n: usize,
                bases: &'a [usize],
                w_t: f64,
                w_t_raw: f64,
                sdp: SdpBrief,
                feasibility: tsteer::sdp::FeasibilityReport,
                lhs_witness: &'a [tsteer::Matrix2],
            }
            let out = WeightOut {
                n: asm.n(),
                bases: asm.bases(),
                w_t: w.w_t,
                w_t_raw: w.w_t_raw,
                sdp: SdpBrief::from(&w),
                feasibility: w.feasibility,
                lhs_witness: &w.lhs_witness,
            };
            match output.format {
                Format::Json => write_json(&output, &versioned("weight", &out)),
                Format::Csv => Err(Failure::Input("weight output is JSON only".into())),
            }
        }
        Command::Selftest { out, format } => {
            let r = run_selftest()?;
            let output = Output { out, format: Format::Json };
            match format {
                None => emit(&output, selftest_text(&r).as_bytes())?,
                Some(Format::Json) => write_json(&output, &versioned("selftest", &r))?,
                Some(Format::Csv) => return Err(Failure::Input("selftest output is text or JSON".into())),
            }
            if r.passed() {
                Ok(())
            } else {
                Err(Failure::Selftest)
            }
        }
    }
}

fn simulate(args: SimulateArgs, solver: SolverOptions) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(path) => read_json::<SessionConfig>(path)?,
        None => {
            let channel = args.channel.as_deref().ok_or_else(|| Failure::Input("simulate needs --config or --channel".into()))?;
            let protocol = Protocol::from_n(args.n.unwrap_or(2))?;
            SessionConfig::new(protocol, load_channel(channel)?, args.rounds.unwrap_or(100_000), args.seed.unwrap_or(0))
        }
    };
    if args.config.is_some() {
        if let Some(c) = &args.channel {
            cfg.channel = load_channel(c)?;
        }
        if let Some(n) = args.n {
            cfg.protocol = Protocol::from_n(n)?;
        }
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = args.tomography_fraction {
        cfg.tomography_fraction = f;
    }
    if let Some(s) = args.sifting {
        cfg.sifting = match s {
            SiftingArg::PreShared => Sifting::PreShared,
            SiftingArg::RandomBasis => Sifting::RandomBasis,
        };
    }
    let mut result = simulate_rounds(&cfg)?;
    let opts = SessionOptions { q_override: args.verdict.q_override, solver };
    match analyze_with(&result, Some(&cfg.channel), &opts) {
        Ok(r) => result.report = Some(r),
        Err(Error::InsufficientData(msg)) => result.report_error = Some(msg),
        Err(e) => return Err(e.into()),
    }
    if let Some(path) = &args.rounds_csv {
        let mut buf = Vec::new();
        result.write_rounds_csv(&mut buf)?;
        write_file(path, &buf)?;
    }
    match args.output.format {
        Format::Json => write_json(&args.output, &versioned("simulate", &result)),
        Format::Csv => {
            let mut buf = Vec::new();
            result.write_rounds_csv(&mut buf)?;
            emit(&args.output, &buf)
        }
    }
}

fn selftest_text(r: &tsteer::selftest::SelftestReport) -> String {
    let mut s = format!("tsteer selftest (schema {})\n\nthresholds\n", report::SCHEMA_VERSION);
    s += &format!("{:<3} {:<18} {:<18} {:<18}\n", "N", "q_N", "S threshold", "monogamy");
    for t in &r.thresholds {
        s += &format!("{:<3} {:<18.15} {:<18.15} {:<18.15}\n", t.n, t.q_n, t.s_threshold, t.monogamy_threshold);
    }
    s += "\nchecks\n";
    for c in &r.checks {
        let n = c.n.map_or("-".to_string(), |n| n.to_string());
        s += &format!("{:<4} {:<28} N={:<2} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, n, c.detail);
    }
    let failed = r.checks.iter().filter(|c| !c.passed).count();
    s += &format!("\n{} checks, {failed} failed\n", r.checks.len());
    s
}

impl Target {
    fn resolve(&self) -> CliResult<(ChannelSpec, Vec<usize>)> {
        let spec = load_channel(&self.channel)?;
        let bases = match &self.bases {
            Some(b) => {
                if b.len() != self.n {
                    return Err(Failure::Input(format!("--bases lists {} bases but --n is {}", b.len(), self.n)));
                }
                b.clone()
            }
            None => default_bases(self.n)?,
        };
        Ok((spec, bases))
    }
}

impl VerdictArgs {
    fn options(&self, solver: SolverOptions) -> AnalysisOptions {
        let mode = match self.mode {
            Mode::Individual => AttackMode::Individual,
            Mode::Unconditional => AttackMode::Unconditional,
        };
        AnalysisOptions { mode, q_override: self.q_override, solver }
    }
}

fn load_channel(arg: &str) -> CliResult<ChannelSpec> {
    let spec: ChannelSpec = if arg.trim_start().starts_with('{') {
        parse_json(arg, "--channel")?
    } else {
        read_json(Path::new(arg))?
    };
    tsteer::channels::make_channel::<f64>(&spec).map_err(|e| Failure::Input(format!("{arg}: {e}")))?;
    Ok(spec)
}

fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| {
        let (line, col) = if e.line() > 0 { (e.line(), e.column()) } else { locate(text, &e.to_string()) };
        Failure::Input(format!("{origin}:{line}:{col}: {e}"))
    })
}

/// Errors raised inside tagged enums carry no position; point at the first
/// occurrence of the key named in the message instead.
fn locate(text: &str, msg: &str) -> (usize, usize) {
    let key = msg.split('`').nth(1).map(|k| format!("\"{k}\""));
    let offset = key.and_then(|k| text.find(&k)).unwrap_or(0);
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = offset - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    buf.push(b'\n');
    Ok(buf)
}

fn write_json<T: Serialize>(output: &Output, value: &T) -> CliResult<()> {
    emit(output, &to_json(value)?)
}

fn write_csv<T: Serialize>(output: &Output, rows: &[T]) -> CliResult<()> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wr.serialize(r).map_err(|e| Failure::Input(e.to_string()))?;
    }
    let buf = wr.into_inner().map_err(|e| Failure::Input(e.to_string()))?;
    emit(output, &buf)
}

fn emit(output: &Output, bytes: &[u8]) -> CliResult<()> {
    match &output.out {
        Some(path) => write_file(path, bytes),
        None => Ok(std::io::stdout().lock().write_all(bytes)?),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}
