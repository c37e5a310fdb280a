use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use santt::case_study::{case_study_model, figure_topology, generate_case_study, CaseStudyParams};
use santt::model::{build_descriptor, default_gamma, GammaMode, SanModel};
use santt::oracle::{dense_contraction_checks, dense_generator_capped, dense_mtta, Premises, DEFAULT_ORACLE_CAP};
use santt::solver::{compute_mtta, Algorithm, SolveReport, SolverConfig};
use santt::tt::RoundingPolicy;

#[derive(Parser, Debug)]
#[command(name = "santt", version, about = "Mean time to absorption of stochastic automata networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the MTTA of a model file with a tensor-train Neumann solver.
    Solve {
        model: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write a JSON run record here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dense reference solution and contraction diagnostics for small models.
    Oracle {
        model: PathBuf,
        #[arg(long, default_value = "min", value_parser = parse_gamma)]
        gamma: GammaMode,
        /// Largest state space the dense solver accepts.
        #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
        cap: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a case-study model file.
    Gen {
        #[arg(long, required_unless_present = "figure")]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Off-diagonal edge probability, 1/(2k) by default.
        #[arg(long)]
        density: Option<f64>,
        /// Use the fixed four-component topology instead of a random one.
        #[arg(long, conflicts_with_all = ["k", "density"])]
        figure: bool,
        /// Output path, standard output when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Timing sweep over random case-study instances.
    Bench {
        /// Comma-separated component counts.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// First seed; run `r` uses `seed + r`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        /// Worker threads, all cores when absent.
        #[arg(long)]
        jobs: Option<usize>,
        /// Table path, standard output when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-run JSON records.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value = "squared", value_parser = parse_algorithm)]
    algorithm: Algorithm,
    /// min, scale:<c> or value:<v>
    #[arg(long, default_value = "min", value_parser = parse_gamma)]
    gamma: GammaMode,
    /// Stopping tolerance, also the rounding tolerance unless --round-tol is given.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long)]
    round_tol: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    exp_sum_eps: f64,
    #[arg(long)]
    max_rank: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Keep the automata in file order.
    #[arg(long)]
    no_rcm: bool,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, Failure> {
        let rounding = RoundingPolicy::new(self.round_tol.unwrap_or(self.tol), self.max_rank)
            .map_err(Failure::usage)?;
        let cfg = SolverConfig {
            algorithm: self.algorithm,
            gamma_mode: self.gamma,
            exp_sum_eps: self.exp_sum_eps,
            rounding,
            max_iter: self.max_iter,
            stop_tol: self.tol,
            use_rcm: !self.no_rcm,
            ..SolverConfig::default()
        };
        cfg.validate().map_err(Failure::usage)?;
        Ok(cfg)
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: santt::Error| e.to_string())
}

fn parse_gamma(s: &str) -> Result<GammaMode, String> {
    let number = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(':') {
        None if s == "min" => Ok(GammaMode::Minimal),
        Some(("scale", c)) => Ok(GammaMode::Scaled(number(c)?)),
        Some(("value", v)) => Ok(GammaMode::Value(number(v)?)),
        _ => Err(format!("expected min, scale:<c> or value:<v>, got {s:?}")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum ModelSource {
    File { path: String },
    Generated { params: CaseStudyParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OracleSummary {
    mtta: f64,
    gamma: f64,
    rho: f64,
    norm_inf: f64,
    premises: Premises,
}

/// One solver or oracle run as written to report files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunRecord {
    model: ModelSource,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    config: Option<SolverConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    report: Option<SolveReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    oracle: Option<OracleSummary>,
    peak_memory_bytes: usize,
    exit_status: u8,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    error: Option<String>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self { code: 1, message: e.to_string() }
    }

    fn input(e: impl std::fmt::Display) -> Self {
        Self { code: 2, message: e.to_string() }
    }

    fn solver(e: santt::Error) -> Self {
        let code = if e.is_numerical() { 3 } else { 2 };
        Self { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve { model, solver, report } => cmd_solve(&model, &solver, report.as_deref()),
        Command::Oracle { model, gamma, cap, report } => cmd_oracle(&model, gamma, cap, report.as_deref()),
        Command::Gen { k, seed, density, figure, out } => cmd_gen(k, seed, density, figure, out.as_deref()),
        Command::Bench { k, runs, seed, solver, jobs, out, report } => {
            cmd_bench(&k, runs, seed, &solver, jobs, out.as_deref(), report.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_model(path: &Path) -> Result<SanModel, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    SanModel::from_json(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Failure::input)?;
    text.push('\n');
    write_output(Some(path), &text)
}

/// `x` with `digits` significant digits.
fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-4..15).contains(&exponent) {
        let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.*e}", digits - 1)
    }
}

fn cmd_solve(path: &Path, args: &SolverArgs, report: Option<&Path>) -> Result<(), Failure> {
    let cfg = args.config()?;
    let model = load_model(path)?;
    let source = ModelSource::File { path: path.display().to_string() };
    let outcome = compute_mtta(&model, &cfg);
    let record = match &outcome {
        Ok(r) => RunRecord {
            model: source,
            config: Some(cfg),
            report: Some(r.clone()),
            oracle: None,
            peak_memory_bytes: r.peak_memory_bytes(),
            exit_status: 0,
            error: None,
        },
        Err(e) => RunRecord {
            model: source,
            config: Some(cfg),
            report: None,
            oracle: None,
            peak_memory_bytes: 0,
            exit_status: Failure::solver(e.clone()).code,
            error: Some(e.to_string()),
        },
    };
    if let Some(p) = report {
        write_json(p, &record)?;
    }
    let r = outcome.map_err(Failure::solver)?;
    println!("MTTA {}", significant(r.mtta, 12));
    eprintln!(
        "iterations {}, max rank {}, gamma {}, {:.3} s, peak TT memory {} bytes",
        r.iterations,
        r.max_rank_history.iter().max().unwrap_or(&0),
        significant(r.gamma, 6),
        r.wall_time,
        r.peak_memory_bytes()
    );
    Ok(())
}

fn cmd_oracle(path: &Path, gamma: GammaMode, cap: usize, report: Option<&Path>) -> Result<(), Failure> {
    let model = load_model(path)?;
    let chain = dense_generator_capped(&model, cap).map_err(Failure::solver)?;
    let mtta = dense_mtta(&chain).map_err(Failure::solver)?;
    let descriptor = build_descriptor(&model, &RoundingPolicy::default()).map_err(Failure::solver)?;
    let g = default_gamma(&descriptor, gamma).map_err(Failure::solver)?;
    let c = dense_contraction_checks(&model, g).map_err(Failure::solver)?;
    println!("MTTA {}", significant(mtta, 12));
    println!("gamma {}", significant(g, 12));
    println!("spectral radius {}", significant(c.rho, 12));
    println!("inf-norm {}", significant(c.norm_inf, 12));
    let p = &c.premises;
    for (name, value) in [
        ("d_nonpositive", p.d_nonpositive),
        ("a1_nonnegative", p.a1_nonnegative),
        ("a2_nonnegative", p.a2_nonnegative),
        ("last_row_zero", p.last_row_zero),
        ("a1_last_row_zero", p.a1_last_row_zero),
        ("row_sums_zero", p.row_sums_zero),
        ("min_a_in_positive", p.min_a_in_positive),
        ("min_a2_in_positive", p.min_a2_in_positive),
        ("q1_inverse_nonpositive", p.q1_inverse_nonpositive),
    ] {
        println!("{name} {value}");
    }
    if let Some(out) = report {
        let record = RunRecord {
            model: ModelSource::File { path: path.display().to_string() },
            config: None,
            report: None,
            oracle: Some(OracleSummary {
                mtta,
                gamma: g,
                rho: c.rho,
                norm_inf: c.norm_inf,
                premises: c.premises,
            }),
            peak_memory_bytes: 0,
            exit_status: 0,
            error: None,
        };
        write_json(out, &record)?;
    }
    Ok(())
}

fn cmd_gen(
    k: Option<usize>,
    seed: u64,
    density: Option<f64>,
    figure: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let model = if figure {
        case_study_model(&figure_topology())
    } else {
        let k = k.ok_or_else(|| Failure::usage("--k is required"))?;
        generate_case_study(&CaseStudyParams { k, seed, density })
    }
    .map_err(Failure::usage)?;
    write_output(out, &model.to_json())
}

#[derive(Clone, Debug, Serialize)]
struct BenchRow {
    k: usize,
    runs: usize,
    failures: usize,
    #[serde(rename = "mean_time_s")]
    mean_time: f64,
    #[serde(rename = "max_time_s")]
    max_time: f64,
    #[serde(rename = "mean_memory_bytes")]
    mean_memory: f64,
    #[serde(rename = "max_memory_bytes")]
    max_memory: usize,
    #[serde(rename = "mean_max_rank")]
    mean_rank: f64,
    #[serde(rename = "max_max_rank")]
    max_rank: usize,
}

fn summarize(k: usize, records: &[&RunRecord]) -> BenchRow {
    let ok: Vec<&SolveReport> = records.iter().filter_map(|r| r.report.as_ref()).collect();
    let n = ok.len().max(1) as f64;
    let ranks: Vec<usize> = ok
        .iter()
        .map(|r| r.max_rank_history.iter().copied().max().unwrap_or(0))
        .collect();
    BenchRow {
        k,
        runs: records.len(),
        failures: records.len() - ok.len(),
        mean_time: ok.iter().map(|r| r.wall_time).sum::<f64>() / n,
        max_time: ok.iter().map(|r| r.wall_time).fold(0.0, f64::max),
        mean_memory: ok.iter().map(|r| r.peak_memory_bytes() as f64).sum::<f64>() / n,
        max_memory: ok.iter().map(|r| r.peak_memory_bytes()).max().unwrap_or(0),
        mean_rank: ranks.iter().sum::<usize>() as f64 / n,
        max_rank: ranks.iter().copied().max().unwrap_or(0),
    }
}

/// Least-squares slope of `log t` against `log k` and the RMS residual.
fn power_law_fit(rows: &[BenchRow]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.runs > r.failures && r.mean_time > 0.0)
        .map(|r| ((r.k as f64).ln(), r.mean_time.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    Some((slope, (rss / n).sqrt()))
}

const BENCH_HEADER: [&str; 9] = [
    "k",
    "runs",
    "failures",
    "mean_time_s",
    "max_time_s",
    "mean_memory_bytes",
    "max_memory_bytes",
    "mean_max_rank",
    "max_max_rank",
];

fn bench_table(rows: &[BenchRow]) -> Result<String, Failure> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    // written by hand so an empty sweep still gets a header
    w.write_record(BENCH_HEADER).map_err(Failure::input)?;
    for r in rows {
        w.serialize(r).map_err(Failure::input)?;
    }
    let bytes = w.into_inner().map_err(Failure::input)?;
    String::from_utf8(bytes).map_err(Failure::input)
}

fn cmd_bench(
    ks: &[usize],
    runs: usize,
    seed: u64,
    args: &SolverArgs,
    jobs: Option<usize>,
    out: Option<&Path>,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = args.config()?;
    if ks.contains(&0) {
        return Err(Failure::usage("k values must be positive"));
    }
    let mut tasks: Vec<CaseStudyParams> = ks
        .iter()
        .flat_map(|&k| (0..runs as u64).map(move |r| CaseStudyParams::new(k, seed + r)))
        .collect();
    tasks.sort_by_key(|p| (p.k, p.seed));
    tasks.dedup();
    let run = |p: &CaseStudyParams| {
        let source = ModelSource::Generated { params: *p };
        let outcome = generate_case_study(p).and_then(|m| compute_mtta(&m, &cfg));
        match outcome {
            Ok(r) => RunRecord {
                model: source,
                config: Some(cfg),
                peak_memory_bytes: r.peak_memory_bytes(),
                report: Some(r),
                oracle: None,
                exit_status: 0,
                error: None,
            },
            Err(e) => RunRecord {
                model: source,
                config: Some(cfg),
                report: None,
                oracle: None,
                peak_memory_bytes: 0,
                exit_status: Failure::solver(e.clone()).code,
                error: Some(e.to_string()),
            },
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(Failure::usage)?;
    let records: Vec<RunRecord> = pool.install(|| tasks.par_iter().map(run).collect());

    let mut distinct: Vec<usize> = ks.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let rows: Vec<BenchRow> = if runs == 0 {
        Vec::new()
    } else {
        distinct
            .iter()
            .map(|&k| {
                let group: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| matches!(r.model, ModelSource::Generated { params } if params.k == k))
                    .collect();
                summarize(k, &group)
            })
            .collect()
    };
    for r in records.iter().filter(|r| r.error.is_some()) {
        if let ModelSource::Generated { params } = &r.model {
            eprintln!("k={} seed={}: {}", params.k, params.seed, r.error.as_deref().unwrap_or(""));
        }
    }
    write_output(out, &bench_table(&rows)?)?;
    match power_law_fit(&rows) {
        Some((exponent, residual)) => {
            eprintln!("runtime ~ k^{exponent:.3} (log-log fit, rms residual {residual:.3e})")
        }
        None => eprintln!("runtime fit needs at least two k values with successful runs"),
    }
    if let Some(p) = report {
        write_json(p, &records)?;
    }
    Ok(())
}
