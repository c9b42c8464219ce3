//! `sobrec`: recoveries, integrations, rate sweeps and self-checks from the command line.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sobrec_core::experiments::{
    band_ratio, coupon_check, covering_radius_law, domain_kind, parse_schedule, radius_moment_check,
    record_csv_row, run_sweep_streaming, short_digest, tail_check, C1Choice, ExperimentConfig,
    RECORD_CSV_HEADER,
};
use sobrec_core::integration::{integrate, IntegrationMethod, IntegrationSettings};
use sobrec_core::recovery::{AlgoConstants, RecoveryOperator};
use sobrec_core::sampling::{derive_seed, sample_iid_uniform};
use sobrec_core::testbed::{builtin_suite, find_function, make_bump_family, random_signs, ReferenceGrid, TestFunction, DEFAULT_BUMP_RADIUS_FACTOR};
use sobrec_core::verify::{run_suite, Suite};
use sobrec_core::{Domain, Error};

#[derive(Parser)]
#[command(name = "sobrec", version, about = "Adaptive cone moving least squares recovery and rate experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SOBREC_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a test function from iid samples and write its values on a probe grid.
    Recover(RecoverArgs),
    /// Estimate the integral of a test function.
    Integrate(IntegrateArgs),
    /// Run an error sweep from a config file and fit convergence rates.
    Rates(RatesArgs),
    /// Covering radius and local cone radius statistics.
    RadiusStats(RadiusArgs),
    /// Run the self-check suite.
    Verify(VerifyArgs),
    /// Inspect the built-in test functions.
    Testbed {
        #[command(subcommand)]
        action: TestbedAction,
    },
}

#[derive(Args, Clone)]
struct ProblemArgs {
    #[arg(long, default_value = "cube")]
    domain: String,
    #[arg(long)]
    d: usize,
    /// Smoothness; also the reproduced polynomial degree.
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    cone_radius: Option<f64>,
    #[arg(long)]
    half_angle: Option<f64>,
    /// `default`, `max` or a number.
    #[arg(long, default_value = "default")]
    c1: String,
}

impl ProblemArgs {
    fn setup(&self) -> Result<(Domain, AlgoConstants), Error> {
        let mut cfg = ExperimentConfig::new(domain_kind(&self.domain)?, self.d, self.s, f64::INFINITY, f64::INFINITY, vec![1]);
        cfg.cone_radius = self.cone_radius;
        cfg.half_angle = self.half_angle;
        cfg.c1 = match self.c1.as_str() {
            "default" => C1Choice::Default,
            "max" => C1Choice::Max,
            v => C1Choice::Value(v.parse().map_err(|_| Error::InvalidParameter(format!("c1 '{v}'")))?),
        };
        Ok((cfg.domain()?, cfg.constants()?))
    }

    fn canonical(&self) -> String {
        format!(
            "domain={} d={} s={} seed={} cone_radius={:?} half_angle={:?} c1={}",
            self.domain, self.d, self.s, self.seed, self.cone_radius, self.half_angle, self.c1
        )
    }
}

#[derive(Args)]
struct RecoverArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    n: usize,
    /// Test function id (see `testbed list`).
    #[arg(long)]
    function: String,
    /// Probes per axis of the midpoint grid.
    #[arg(long, default_value_t = 64)]
    probes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cv,
    ApproxOnly,
    PlainMc,
}

impl MethodArg {
    fn method(self) -> IntegrationMethod {
        match self {
            MethodArg::Cv => IntegrationMethod::ControlVariates,
            MethodArg::ApproxOnly => IntegrationMethod::ApproxOnly,
            MethodArg::PlainMc => IntegrationMethod::PlainMc,
        }
    }
}

#[derive(Args)]
struct IntegrateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    function: String,
    #[arg(long, value_enum, default_value = "cv")]
    method: MethodArg,
    #[arg(long, default_value_t = 1)]
    replications: u64,
    #[arg(long)]
    quadrature_resolution: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatesArgs {
    /// Config in `key = value` format.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to `rates-<config hash>`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RadiusArgs {
    #[command(subcommand)]
    kind: RadiusKind,
}

#[derive(Subcommand)]
enum RadiusKind {
    /// Moments of the local cone radius at a point.
    Moments {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Evaluation point, comma separated.
        #[arg(long)]
        y: String,
        #[arg(long, default_value = "1")]
        alpha: String,
        #[arg(long, default_value = "2^6..2^12")]
        n: String,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tail frequencies of the local cone radius.
    Tails {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        y: String,
        /// Thresholds, comma separated.
        #[arg(long)]
        t: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean global covering radius against (log n / n)^(1/d).
    Covering {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "2^6..2^13")]
        n: String,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Output-zero and missed-bump frequencies with floor(n / (2 ln n)) bumps.
    Coupon {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 300)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Fast,
    Full,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum, default_value = "fast")]
    suite: SuiteArg,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Subcommand)]
enum TestbedAction {
    /// List the built-in functions with their known integrals.
    List {
        #[arg(long, default_value = "cube")]
        domain: String,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        s: usize,
        /// Bump family sizes, comma separated.
        #[arg(long, default_value = "4,16")]
        bumps: String,
        /// Also write the largest bump family as CSV here.
        #[arg(long)]
        bump_csv: Option<PathBuf>,
    },
}

/// Errors carry the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BudgetTooSmall { .. } | Error::InfeasiblePacking(_) => 3,
            Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::OutsideDomain(_)
            | Error::MissingOracle(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn parse_list(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("cannot parse '{t}'"))))
        .collect()
}

fn lookup(domain: &Domain, s: usize, id: &str) -> Result<TestFunction, Failure> {
    let suite = builtin_suite(domain, s, &[4, 16])?;
    find_function(&suite, id)
        .cloned()
        .ok_or_else(|| usage(format!("unknown function '{id}'; see `sobrec testbed list`")))
}

fn cmd_recover(a: &RecoverArgs) -> Result<(), Failure> {
    let (domain, constants) = a.problem.setup()?;
    let f = lookup(&domain, a.problem.s, &a.function)?;
    let points = sample_iid_uniform(&domain, a.n, a.problem.seed)?;
    let samples = f.samples(&points.points);
    let op = RecoveryOperator::build(&domain, &points.points, samples, &constants)?;
    let probes = ReferenceGrid::new(&domain, a.probes)?;
    let (values, fallbacks) = op.evaluate_with_fallbacks(&probes.points)?;
    let hash = short_digest(&format!(
        "recover {} n={} function={} probes={}",
        a.problem.canonical(),
        a.n,
        a.function,
        a.probes
    ));
    let mut out = output(&a.out)?;
    writeln!(
        out,
        "# config_hash={hash} function={} n={} seed={} scenario={} fallbacks={fallbacks}",
        a.function,
        a.n,
        a.problem.seed,
        op.scenario().number()
    )?;
    let coords: Vec<String> = (0..domain.dim()).map(|i| format!("x{i}")).collect();
    writeln!(out, "{},value,exact", coords.join(","))?;
    for (x, v) in probes.points.iter().zip(&values) {
        let xs: Vec<String> = x.iter().map(|c| format!("{c:.16e}")).collect();
        writeln!(out, "{},{v:.16e},{:.16e}", xs.join(","), f.eval(x))?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_integrate(a: &IntegrateArgs) -> Result<(), Failure> {
    let (domain, constants) = a.problem.setup()?;
    let f = lookup(&domain, a.problem.s, &a.function)?;
    let mut settings = IntegrationSettings { constants, ..IntegrationSettings::for_domain(&domain, a.problem.s) };
    if let Some(r) = a.quadrature_resolution {
        settings.quadrature_resolution = r;
    }
    let reference = f.integral(&domain);
    let hash = short_digest(&format!(
        "integrate {} n={} function={} method={} replications={} quadrature={}",
        a.problem.canonical(),
        a.n,
        a.function,
        a.method.method(),
        a.replications,
        settings.quadrature_resolution
    ));
    let mut rows = Vec::new();
    for rep in 0..a.replications {
        let seed = if rep == 0 { a.problem.seed } else { derive_seed(a.problem.seed, &[rep]) };
        let est = integrate(a.method.method(), &|x: &[f64]| f.eval(x), &domain, a.n, seed, &settings)?;
        let (reference, err) = match reference {
            Some(r) => (format!("{r:.16e}"), format!("{:.16e}", (est.value - r).abs())),
            None => (String::new(), String::new()),
        };
        rows.push(format!("{},{},{seed},{:.16e},{reference},{err}", est.method, a.n, est.value));
    }
    let mut out = output(&a.out)?;
    writeln!(out, "# config_hash={hash} function={} quadrature_resolution={}", a.function, settings.quadrature_resolution)?;
    writeln!(out, "method,n,seed,estimate,reference,abs_error")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

/// Provenance of a rate sweep.
struct RunManifest {
    config: String,
    hash: String,
    version: &'static str,
    timestamp: u64,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn write(&self, path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "tool = sobrec {}", self.version)?;
        writeln!(out, "timestamp = {}", self.timestamp)?;
        writeln!(out, "config_hash = {}", self.hash)?;
        for p in &self.outputs {
            writeln!(out, "output = {}", p.display())?;
        }
        writeln!(out, "[config]")?;
        write!(out, "{}", self.config)?;
        out.flush()
    }
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set.
fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

fn cmd_rates(a: &RatesArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.config).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let hash = cfg.hash();
    let dir = a.out_dir.clone().unwrap_or_else(|| PathBuf::from(format!("rates-{hash}")));
    fs::create_dir_all(&dir)?;
    let records_path = dir.join("records.csv");
    let report_path = dir.join("report.txt");
    let manifest_path = dir.join("manifest.txt");
    let manifest = RunManifest {
        config: cfg.canonical(),
        hash: hash.clone(),
        version: env!("CARGO_PKG_VERSION"),
        timestamp: timestamp(),
        outputs: vec![records_path.clone(), report_path.clone()],
    };
    manifest.write(&manifest_path)?;
    let mut records = BufWriter::new(File::create(&records_path)?);
    writeln!(records, "{RECORD_CSV_HEADER}")?;
    // Rows are flushed after every sample size so an interrupted sweep keeps them.
    let sweep = run_sweep_streaming(&cfg, |n, batch| {
        let io = |e: io::Error| Error::Io(e.to_string());
        for r in batch {
            writeln!(records, "{}", record_csv_row(&cfg, &hash, r)).map_err(io)?;
        }
        records.flush().map_err(io)?;
        eprintln!("n = {n} done");
        Ok(())
    })?;
    let report = sweep.report(cfg.criterion);
    report.write_text(BufWriter::new(File::create(&report_path)?))?;
    report.write_text(io::stdout().lock())?;
    Ok(())
}

fn parse_point(s: &str, dim: usize) -> Result<Vec<f64>, Failure> {
    let y = parse_list(s)?;
    if y.len() != dim {
        return Err(usage(format!("point '{s}' needs {dim} coordinates")));
    }
    Ok(y)
}

fn cmd_radius(a: &RadiusArgs) -> Result<(), Failure> {
    match &a.kind {
        RadiusKind::Moments { problem, y, alpha, n, reps, out } => {
            let (domain, constants) = problem.setup()?;
            let y = parse_point(y, domain.dim())?;
            let alphas = parse_list(alpha)?;
            let ns = parse_schedule(n)?;
            let rows = radius_moment_check(&domain, &constants, &y, &alphas, &ns, *reps, problem.seed)?;
            let mut w = output(out)?;
            writeln!(w, "# moments of the local cone radius at {y:?}, reps={reps}")?;
            writeln!(w, "n,alpha,moment,normalized")?;
            for r in &rows {
                writeln!(w, "{},{},{:.16e},{:.16e}", r.n, r.alpha, r.moment, r.normalized)?;
            }
            for &al in &alphas {
                let norm: Vec<f64> = rows.iter().filter(|r| r.alpha == al).map(|r| r.normalized).collect();
                writeln!(w, "# alpha={al} band ratio {:.4}", band_ratio(&norm))?;
            }
            w.flush()?;
        }
        RadiusKind::Tails { problem, y, t, n, reps, out } => {
            let (domain, constants) = problem.setup()?;
            let y = parse_point(y, domain.dim())?;
            let ts = parse_list(t)?;
            let rep = tail_check(&domain, &constants, &y, &ts, *n, *reps, problem.seed)?;
            let mut w = output(out)?;
            writeln!(w, "# tail of the local cone radius at {y:?}, n={n}, reps={reps}")?;
            writeln!(w, "t,frequency,envelope")?;
            for (t, f) in rep.ts.iter().zip(&rep.frequencies) {
                writeln!(w, "{t:.16e},{f:.16e},{:.16e}", rep.envelope(*t, domain.dim()))?;
            }
            writeln!(w, "# envelope exp(a - c t^d n): a={:.6} c={:.6} dominated={} monotone={}", rep.a, rep.c, rep.dominated, rep.monotone)?;
            w.flush()?;
        }
        RadiusKind::Covering { problem, n, reps, out } => {
            let (domain, _) = problem.setup()?;
            let ns = parse_schedule(n)?;
            let rows = covering_radius_law(&domain, &ns, *reps, problem.seed)?;
            let mut w = output(out)?;
            writeln!(w, "# mean covering radius over {reps} iid point sets on {}", domain.id())?;
            writeln!(w, "n,mean,std,normalized")?;
            for r in &rows {
                writeln!(w, "{},{:.16e},{:.16e},{:.16e}", r.n, r.mean, r.std, r.normalized)?;
            }
            let norm: Vec<f64> = rows.iter().map(|r| r.normalized).collect();
            writeln!(w, "# band ratio {:.4}", band_ratio(&norm))?;
            w.flush()?;
        }
        RadiusKind::Coupon { problem, n, reps, out } => {
            let (domain, constants) = problem.setup()?;
            let ns = parse_schedule(n)?;
            let mut w = output(out)?;
            writeln!(w, "n,m,reps,scenario1_frequency,missed_frequency,exact_missed,sigma")?;
            for n in ns {
                let r = coupon_check(&domain, &constants, n, *reps, problem.seed)?;
                writeln!(
                    w,
                    "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                    r.n, r.m, r.reps, r.scenario1_frequency, r.missed_frequency, r.exact_missed, r.sigma
                )?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<bool, Failure> {
    let suite = match a.suite {
        SuiteArg::Fast => Suite::Fast,
        SuiteArg::Full => Suite::Full,
    };
    let results = run_suite(suite, a.inject_fault);
    let mut out = io::stdout().lock();
    for r in &results {
        writeln!(out, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(out, "{} checks, {failed} failed", results.len())?;
    Ok(failed == 0)
}

fn cmd_testbed(action: &TestbedAction) -> Result<(), Failure> {
    match action {
        TestbedAction::List { domain, d, s, bumps, bump_csv } => {
            let domain = Domain::from_name(domain, *d)?;
            let counts: Vec<usize> = parse_list(bumps)?.into_iter().map(|v| v as usize).collect();
            let suite = builtin_suite(&domain, *s, &counts)?;
            let mut out = io::stdout().lock();
            writeln!(out, "id,smoothness,integral")?;
            for f in &suite {
                let integral = f.integral(&domain).map(|v| format!("{v:.16e}")).unwrap_or_default();
                writeln!(out, "{},{:?},{integral}", f.id, f.smoothness())?;
            }
            if let (Some(path), Some(&m)) = (bump_csv, counts.iter().max()) {
                let family = make_bump_family(&domain, m, &random_signs(m, m as u64), *s, DEFAULT_BUMP_RADIUS_FACTOR)?;
                family.write_csv(BufWriter::new(File::create(path)?))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Recover(a) => cmd_recover(a).map(|_| true),
        Command::Integrate(a) => cmd_integrate(a).map(|_| true),
        Command::Rates(a) => cmd_rates(a).map(|_| true),
        Command::RadiusStats(a) => cmd_radius(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Testbed { action } => cmd_testbed(action).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
