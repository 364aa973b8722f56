//! The `permlll` command line: instance formats, generators, oracle suites
//! and the command implementations.

pub mod formats;
pub mod gen;
pub mod report;
pub mod verify;

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use permlll_core::oracle::enumerate_prp;
use permlll_core::par::{self, Execution};
use permlll_core::pdc_sampler::{
    mcmc_batch, regime_check, RegimeConstants, SamplerConfig, SamplerError,
};
use permlll_core::prp::{density_report, permanent_bracket};
use permlll_core::prp_sampler::{
    count_approx_with, sample_approx, sample_exact_batch, sample_exact_with, ColumnOrder,
};
use permlll_core::rng::{stream, substream};
use permlll_core::{PrpError, PrpInstance};

use formats::{
    assignment_json, parse_pdc, parse_prp, write_matrix, write_pdc, write_prp_json, FormatError,
};
use gen::GenError;
use report::{digest, version, RunReport};

#[derive(Debug, Parser)]
#[command(
    name = "permlll",
    version,
    about = "Samplers and counters for restricted permutations"
)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, env = "PERMLLL_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Add wall-clock time to the report.
    #[arg(long, global = true)]
    pub timing: bool,
    /// Run independent work items on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample permutations of a very dense 0-1 matrix.
    SamplePrp(SamplePrpArgs),
    /// Estimate the number of permutations (the permanent).
    CountPrp(CountPrpArgs),
    /// Sample satisfying assignments of a PDC formula.
    SamplePdc(SamplePdcArgs),
    /// Generate instances.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run oracle cross-checks.
    Verify(VerifyArgs),
    /// Time the exact sampler over instance sizes and print CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderArg {
    Input,
    Ascending,
}

#[derive(Debug, Args)]
pub struct SamplePrpArgs {
    /// Matrix text or PRP JSON; `-` reads stdin.
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Unbounded exact sampler instead of the budgeted one.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    /// For instances that are not very dense and have n ≤ 10, sample by
    /// enumeration instead of failing.
    #[arg(long)]
    pub allow_sparse: bool,
    /// Column order of the exact sampler.
    #[arg(long, value_enum, default_value_t = OrderArg::Input)]
    pub order: OrderArg,
}

#[derive(Debug, Args)]
pub struct CountPrpArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Independent estimates, one line each.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct SamplePdcArgs {
    /// PDC JSON; `-` reads stdin.
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    /// Run even when neither regime inequality holds.
    #[arg(long)]
    pub force_regime: bool,
    /// Regime constants as `c,zeta,qmin`.
    #[arg(long, default_value = "1,1,2")]
    pub constants: String,
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    #[arg(long, default_value_t = 2)]
    pub block_limit: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PrpFormat {
    Matrix,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// A very dense matrix with the given number of zeros.
    Prp {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        zeros: usize,
        #[arg(long, value_enum, default_value_t = PrpFormat::Matrix)]
        format: PrpFormat,
    },
    /// A (k,q)-uniform formula with m sets.
    PdcUniform {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        constraints: usize,
    },
    /// Perfect matchings of a 3-partite hypergraph.
    Hypergraph {
        #[arg(long)]
        q: usize,
        /// All q³ hyperedges.
        #[arg(long, conflicts_with = "edges")]
        complete: bool,
        /// Number of random hyperedges.
        #[arg(long)]
        edges: Option<usize>,
    },
    /// Teacher assignment.
    Teachers {
        #[arg(long)]
        q: usize,
        #[arg(long)]
        subjects: usize,
        #[arg(long)]
        seniors: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Bracket,
    Tv,
    Marginal,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Instances for the bracket and marginal suites.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Chain runs for the TV suite.
    #[arg(long, default_value_t = 20_000)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800,1600")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub draws: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Regime(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Regime(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<PrpError> for CliError {
    fn from(e: PrpError) -> Self {
        match e {
            PrpError::DensityViolation { .. } => CliError::Regime(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Regime(_) => CliError::Regime(e.to_string()),
            SamplerError::Prp(p) => p.into(),
            SamplerError::Config(_) => CliError::Parse(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Infeasible(_) => CliError::Regime(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

fn read_input(path: &PathBuf) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    if path.as_os_str() == "-" {
        std::io::stdin().read_to_end(&mut buf)?;
    } else {
        buf =
            std::fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    }
    Ok(buf)
}

fn text(bytes: &[u8]) -> Result<&str, CliError> {
    std::str::from_utf8(bytes).map_err(|e| CliError::Parse(e.to_string()))
}

fn line<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<(), CliError> {
    writeln!(
        out,
        "{}",
        serde_json::to_string(v).map_err(|e| CliError::Internal(e.to_string()))?
    )?;
    Ok(())
}

struct Ctx {
    seed: u64,
    timing: bool,
    exec: Execution,
    start: Instant,
}

impl Ctx {
    fn report(
        &self,
        command: &str,
        input: &[u8],
        config: serde_json::Value,
        telemetry: serde_json::Value,
        outputs: usize,
    ) -> RunReport {
        RunReport {
            command: command.into(),
            version: version(),
            seed: self.seed,
            instance_digest: digest(input),
            config,
            telemetry,
            outputs,
            elapsed_ms: self
                .timing
                .then(|| self.start.elapsed().as_secs_f64() * 1e3),
        }
    }
}

/// Runs a parsed command line, writing JSON lines (or instance text) to `out`
/// and diagnostics to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.seed,
        timing: cli.timing,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        start: Instant::now(),
    };
    match &cli.command {
        Command::SamplePrp(a) => sample_prp(&ctx, a, out),
        Command::CountPrp(a) => count_prp(&ctx, a, out),
        Command::SamplePdc(a) => sample_pdc(&ctx, a, out),
        Command::Gen(g) => generate(&ctx, g, out, err),
        Command::Verify(a) => run_verify(&ctx, a, out),
        Command::Bench(a) => bench(&ctx, a, out),
    }
}

fn sample_prp(ctx: &Ctx, a: &SamplePrpArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bytes = read_input(&a.input)?;
    let inst = parse_prp(text(&bytes)?)?;
    if !(a.eps > 0.0 && a.eps < 1.0) {
        return Err(CliError::Parse(format!(
            "--eps must lie in (0,1), got {}",
            a.eps
        )));
    }
    let dens = density_report(&inst);
    let order = match a.order {
        OrderArg::Input => ColumnOrder::Input,
        OrderArg::Ascending => ColumnOrder::AscendingDegree,
    };
    let mut oracle = false;
    let rows: Vec<serde_json::Value> = if !dens.very_dense {
        if !(a.allow_sparse && inst.n() <= 10) {
            return Err(PrpError::DensityViolation {
                min_row: dens.min_row_size,
                min_col: dens.min_col_size,
                threshold: dens.threshold,
            }
            .into());
        }
        oracle = true;
        let all =
            enumerate_prp(&inst, 10_000_000).map_err(|e| CliError::Internal(e.to_string()))?;
        if all.is_empty() {
            return Err(CliError::Regime(
                "the instance has no valid permutation".into(),
            ));
        }
        (0..a.samples)
            .map(|i| {
                let k = substream(ctx.seed, i as u64).gen_range(0..all.len());
                json!({ "perm": all[k], "restarts": 0, "fallback": false })
            })
            .collect()
    } else {
        let draws = par::map_indexed(a.samples, ctx.exec, |i| {
            let mut rng = substream(ctx.seed, i as u64);
            if a.exact {
                sample_exact_with(&inst, order, &mut rng).map(|(p, s)| (p, s, false))
            } else {
                sample_approx(&inst, a.eps, &mut rng).map(|s| (s.perm, s.stats, s.fallback))
            }
        });
        let mut rows = Vec::with_capacity(a.samples);
        for d in draws {
            let (p, s, fb) = d?;
            rows.push(json!({ "perm": p.image, "restarts": s.restarts, "fallback": fb }));
        }
        rows
    };
    let restarts: Vec<u64> = rows
        .iter()
        .map(|r| r["restarts"].as_u64().unwrap_or(0))
        .collect();
    let fallbacks = rows
        .iter()
        .filter(|r| r["fallback"].as_bool() == Some(true))
        .count();
    for r in &rows {
        line(out, r)?;
    }
    let mean = if restarts.is_empty() {
        0.0
    } else {
        restarts.iter().sum::<u64>() as f64 / restarts.len() as f64
    };
    let rep = ctx.report(
        "sample-prp",
        &bytes,
        json!({ "n": inst.n(), "zeros": inst.zeros(), "very_dense": dens.very_dense, "exact": a.exact,
                "eps": a.eps, "order": a.order, "allow_sparse": a.allow_sparse, "samples": a.samples }),
        json!({ "mean_restarts": mean, "max_restarts": restarts.iter().max().copied().unwrap_or(0),
                "fallbacks": fallbacks, "oracle": oracle }),
        rows.len(),
    );
    writeln!(out, "{}", rep.to_line())?;
    Ok(())
}

fn check_unit(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(CliError::Parse(format!(
            "--{name} must lie in (0,1), got {x}"
        )))
    }
}

fn count_prp(ctx: &Ctx, a: &CountPrpArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_unit("eps", a.eps)?;
    check_unit("delta", a.delta)?;
    let bytes = read_input(&a.input)?;
    let inst: PrpInstance = parse_prp(text(&bytes)?)?;
    let bracket = permanent_bracket(&inst)?;
    let mut inside = 0;
    for t in 0..a.trials {
        let mut rng = if a.trials == 1 {
            stream(ctx.seed)
        } else {
            substream(ctx.seed, t as u64)
        };
        let est = count_approx_with(&inst, a.eps, a.delta, &mut rng, ctx.exec)?;
        let within = bracket.contains(est.value);
        inside += usize::from(within);
        line(
            out,
            &json!({ "estimate": est, "bracket": { "lower": bracket.lower(), "upper": bracket.upper() },
                           "within_bracket": within }),
        )?;
    }
    let rep = ctx.report(
        "count-prp",
        &bytes,
        json!({ "n": inst.n(), "zeros": inst.zeros(), "eps": a.eps, "delta": a.delta, "trials": a.trials }),
        json!({ "within_bracket": inside }),
        a.trials,
    );
    writeln!(out, "{}", rep.to_line())?;
    Ok(())
}

pub fn parse_constants(s: &str) -> Result<RegimeConstants, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Parse(format!("--constants expects c,zeta,qmin, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let c: f64 = parts[0].parse().map_err(|_| bad())?;
    let zeta: f64 = parts[1].parse().map_err(|_| bad())?;
    let q_min: usize = parts[2].parse().map_err(|_| bad())?;
    if !(c > 0.0 && zeta > 0.0) {
        return Err(bad());
    }
    Ok(RegimeConstants { c, zeta, q_min })
}

fn sample_pdc(ctx: &Ctx, a: &SamplePdcArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bytes = read_input(&a.input)?;
    let f = parse_pdc(text(&bytes)?)?;
    let constants = parse_constants(&a.constants)?;
    let regime = regime_check(&f, constants);
    line(out, &json!({ "regime": regime }))?;
    let cfg = SamplerConfig {
        eps: a.eps,
        eta: a.eta,
        block_limit: a.block_limit,
        seed: ctx.seed,
        force_regime: a.force_regime,
        constants,
        ..Default::default()
    };
    let (outs, tele) = mcmc_batch(&f, &cfg, a.samples, ctx.exec)?;
    for s in &outs {
        line(
            out,
            &json!({ "assignment": assignment_json(&f, s), "satisfying": f.is_satisfying(s) }),
        )?;
    }
    let rep = ctx.report(
        "sample-pdc",
        &bytes,
        serde_json::to_value(&cfg).map_err(|e| CliError::Internal(e.to_string()))?,
        json!({ "sampler": tele, "flagged": tele.flagged(),
                "satisfying": outs.iter().filter(|s| f.is_satisfying(s)).count() }),
        outs.len(),
    );
    writeln!(out, "{}", rep.to_line())?;
    Ok(())
}

fn generate(
    ctx: &Ctx,
    g: &GenCommand,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let mut rng = stream(ctx.seed);
    let (body, config) = match *g {
        GenCommand::Prp { n, zeros, format } => {
            let inst = gen::gen_prp(n, zeros, &mut rng)?;
            let body = match format {
                PrpFormat::Matrix => write_matrix(&inst),
                PrpFormat::Json => write_prp_json(&inst) + "\n",
            };
            (
                body,
                json!({ "kind": "prp", "n": n, "zeros": zeros, "very_dense": density_report(&inst).very_dense }),
            )
        }
        GenCommand::PdcUniform {
            k,
            q,
            m,
            constraints,
        } => {
            let f = gen::gen_pdc_uniform(k, q, m, constraints, &mut rng)?;
            (
                write_pdc(&f) + "\n",
                json!({ "kind": "pdc-uniform", "params": f.params() }),
            )
        }
        GenCommand::Hypergraph { q, complete, edges } => {
            if !complete && edges.is_none() {
                return Err(CliError::Parse(
                    "hypergraph needs --complete or --edges".into(),
                ));
            }
            let f = gen::gen_hypergraph(q, if complete { None } else { edges }, &mut rng)?;
            (
                write_pdc(&f) + "\n",
                json!({ "kind": "hypergraph", "params": f.params() }),
            )
        }
        GenCommand::Teachers {
            q,
            subjects,
            seniors,
            classes,
            per_class,
        } => {
            let f = gen::gen_teachers(q, subjects, seniors, classes, per_class, &mut rng)?;
            (
                write_pdc(&f) + "\n",
                json!({ "kind": "teachers", "params": f.params() }),
            )
        }
    };
    out.write_all(body.as_bytes())?;
    let rep = ctx.report("gen", body.as_bytes(), config, json!({}), 1);
    writeln!(err, "{}", rep.to_line())?;
    Ok(())
}

fn run_verify(ctx: &Ctx, a: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut results = Vec::new();
    let want = |s: Suite| a.suite == s || a.suite == Suite::All;
    if want(Suite::Bracket) {
        results.push(verify::bracket_suite(a.count, ctx.seed));
    }
    if want(Suite::Tv) {
        check_unit("eps", a.eps)?;
        results.push(verify::tv_suite(a.runs, a.eps, ctx.seed, ctx.exec));
    }
    if want(Suite::Marginal) {
        results.push(verify::marginal_suite(a.count.min(500), ctx.seed));
    }
    for r in &results {
        line(out, r)?;
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.suite.as_str())
        .collect();
    let rep = ctx.report(
        "verify",
        &[],
        json!({ "suite": format!("{:?}", a.suite).to_lowercase(), "count": a.count, "runs": a.runs, "eps": a.eps }),
        json!({ "failed": failed }),
        results.len(),
    );
    writeln!(out, "{}", rep.to_line())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Internal(format!(
            "verification failed: {}",
            failed.join(", ")
        )))
    }
}

fn bench(ctx: &Ctx, a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n",
        "zeros",
        "draws",
        "mean_restarts",
        "seconds",
        "us_per_draw",
        "mode",
    ])
    .map_err(|e| CliError::Internal(e.to_string()))?;
    for &n in &a.sizes {
        let cap = permlll_core::prp::max_zeros_per_line(n);
        let inst = gen::gen_prp(n, n * cap, &mut substream(ctx.seed, n as u64))?;
        let t0 = Instant::now();
        let draws = sample_exact_batch(&inst, a.draws, ctx.seed, ctx.exec)?;
        let secs = t0.elapsed().as_secs_f64();
        let mean =
            draws.iter().map(|(_, s)| s.restarts as f64).sum::<f64>() / a.draws.max(1) as f64;
        let mode = if ctx.exec.is_parallel() {
            "parallel"
        } else {
            "sequential"
        };
        w.write_record([
            n.to_string(),
            inst.zeros().to_string(),
            a.draws.to_string(),
            format!("{mean:.4}"),
            format!("{secs:.6}"),
            format!("{:.3}", secs * 1e6 / a.draws.max(1) as f64),
            mode.to_string(),
        ])
        .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    out.write_all(
        &w.into_inner()
            .map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    Ok(())
}

/// Process entry point: parses arguments, runs, and maps errors to exit
/// codes (0 ok, 2 parse, 3 regime or density, 4 internal).
pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    match run(&cli, &mut out, &mut err) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
