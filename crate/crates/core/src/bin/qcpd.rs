use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use qcpd::critvals::{self, CriticalValueTable, Procedure};
use qcpd::fitfile::FitFile;
use qcpd::simlab::{self, Preset};
use qcpd::{
    fit_quantile, DetectorState, Error, FitConfig, GammaParam, HistoricalArtifacts, Model,
    Observation, ParamBox, QuantileLevel,
};

const EXIT_ALARM: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_FIT: u8 = 70;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(
    name = "qcpd",
    version,
    about = "Sequential change-point monitoring for quantile regression"
)]
struct Cli {
    /// Worker threads for simulation (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a critical-value table.
    Crit(CritArgs),
    /// Fit the historical sample and store the detector inputs.
    Fit(FitArgs),
    /// Monitor observations read from stdin.
    Detect(DetectArgs),
    /// Run a Monte Carlo experiment.
    Sim(SimArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcArg {
    Open,
    Closed,
}

#[derive(Args)]
struct CritArgs {
    /// Number of model parameters.
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, value_delimiter = ',', default_values_t = critvals::DEFAULT_GAMMAS)]
    gamma_list: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = critvals::DEFAULT_ALPHAS)]
    alpha_list: Vec<f64>,
    #[arg(long = "proc", value_enum, default_value = "open")]
    procedure: ProcArg,
    /// T in the closed-end horizon T_m = T * m.
    #[arg(long)]
    horizon_ratio: Option<f64>,
    #[arg(long, default_value_t = 50_000)]
    reps: usize,
    #[arg(long, default_value_t = critvals::DEFAULT_GRID_N)]
    grid_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// `linear` or `growth`.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Search box, `lo:hi` for every coordinate or one `lo:hi` per parameter separated by commas.
    #[arg(long = "box")]
    bounds: Option<String>,
    /// CSV with header `x1,...,xq,y`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    crit: PathBuf,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long = "proc", value_enum, default_value = "open")]
    procedure: ProcArg,
    /// Closed-end monitoring length T_m.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "scenario"])))]
struct SimArgs {
    /// Name of a built-in preset.
    #[arg(long)]
    preset: Option<String>,
    /// Preset JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    #[arg(long)]
    crit: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the preset seeds (design seed, noise seed + 1).
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    fn data(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_IO,
            Error::InsufficientData { .. }
            | Error::NonFiniteObjective { .. }
            | Error::AllZeroMatrix => EXIT_FIT,
            Error::InvalidQuantileLevel(_)
            | Error::InvalidGamma(_)
            | Error::InvalidCriticalValue(_)
            | Error::InvalidParameter(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: EXIT_IO,
            msg: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("qcpd: --threads must be >= 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("qcpd: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Crit(a) => crit(a),
        Command::Fit(a) => fit(a),
        Command::Detect(a) => detect(a),
        Command::Sim(a) => sim(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("qcpd: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn procedure(arg: ProcArg, horizon_ratio: Option<f64>) -> Result<Procedure, Failure> {
    match (arg, horizon_ratio) {
        (ProcArg::Open, None) => Ok(Procedure::OpenEnd),
        (ProcArg::Open, Some(_)) => Err(Failure::usage("a horizon only applies to --proc closed")),
        (ProcArg::Closed, Some(t)) => Ok(Procedure::closed(t)?),
        (ProcArg::Closed, None) => Err(Failure::usage("--proc closed needs a horizon")),
    }
}

fn crit(a: CritArgs) -> CmdResult {
    let proc = procedure(a.procedure, a.horizon_ratio)?;
    if a.reps < 100 {
        return Err(Failure::usage(format!(
            "--reps must be >= 100, got {}",
            a.reps
        )));
    }
    if a.reps < 10_000 {
        eprintln!(
            "qcpd: warning: {} replications give imprecise tail quantiles",
            a.reps
        );
    }
    let table = CriticalValueTable::build(
        a.p,
        &a.gamma_list,
        &a.alpha_list,
        &[proc],
        a.reps,
        a.grid_n,
        a.seed,
    )?;
    table.save(&a.out)?;
    print!("{}", table.render(&proc));
    Ok(0)
}

fn parse_box(spec: &str, p: usize) -> Result<ParamBox<f64>, Failure> {
    let bad = || {
        Failure::usage(format!(
            "invalid --box '{spec}', expected lo:hi or lo1:hi1,...,lop:hip"
        ))
    };
    let pairs = spec
        .split(',')
        .map(|part| {
            let (lo, hi) = part.split_once(':').ok_or_else(bad)?;
            Ok((
                lo.trim().parse::<f64>().map_err(|_| bad())?,
                hi.trim().parse::<f64>().map_err(|_| bad())?,
            ))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let pairs = match pairs.len() {
        1 => vec![pairs[0]; p],
        n if n == p => pairs,
        n => {
            return Err(Failure::usage(format!(
                "--box has {n} intervals, model has {p} parameters"
            )))
        }
    };
    Ok(ParamBox::new(
        pairs.iter().map(|b| b.0).collect(),
        pairs.iter().map(|b| b.1).collect(),
    )?)
}

/// Reads `x1,...,xq,y` rows; `q` is taken from the header.
fn read_data(path: &Path) -> Result<(usize, Vec<Observation<f64>>), Failure> {
    let file = File::open(path).map_err(|e| Failure {
        code: EXIT_IO,
        msg: format!("{}: {e}", path.display()),
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let q = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=q)
        .map(|j| format!("x{j}"))
        .chain(["y".to_string()])
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Failure::data(format!(
            "{}: header must be '{}'",
            path.display(),
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::data(format!("{} line {line}: {e}", path.display())))?;
        let (y, x) = vals.split_last().expect("csv enforces the header width");
        let obs = Observation::new(x.to_vec(), *y)
            .map_err(|e| Failure::data(format!("{} line {line}: {e}", path.display())))?;
        out.push(obs);
    }
    Ok((q, out))
}

fn fit(a: FitArgs) -> CmdResult {
    let (q, data) = read_data(&a.data)?;
    let mut model = Model::<f64>::by_name(&a.model, q).map_err(|e| match e {
        Error::DimensionMismatch { .. } => Failure::data(format!("{}: {e}", a.data.display())),
        e => Failure::usage(e.to_string()),
    })?;
    if let Some(spec) = &a.bounds {
        let b = parse_box(spec, model.p())?;
        model = model.with_bounds(b)?;
    }
    let tau = QuantileLevel::new(a.tau)?;
    let cfg = FitConfig {
        restarts: a.restarts,
        seed: a.seed,
        ..FitConfig::default()
    };
    let result = fit_quantile(&model, &data, tau, &cfg)?;
    let artifacts = HistoricalArtifacts::from_fit(model, &data, tau, &result)?;
    if artifacts.is_rank_deficient() {
        eprintln!(
            "qcpd: warning: J_m has rank {} < p = {}; using its pseudo-inverse",
            artifacts.rank(),
            artifacts.model().p()
        );
    }
    if !result.converged {
        eprintln!("qcpd: warning: optimizer hit its iteration cap");
    }
    FitFile::new(&result, &artifacts).save(&a.out)?;
    println!("m = {}", data.len());
    println!("beta_hat = {:?}", result.beta_hat);
    println!("objective = {}", result.objective);
    println!("rank(J_m) = {}", artifacts.rank());
    Ok(0)
}

fn detect(a: DetectArgs) -> CmdResult {
    let fit = FitFile::load(&a.fit)?;
    let table = CriticalValueTable::load(&a.crit)?;
    let artifacts = Arc::new(fit.artifacts()?);
    let m = artifacts.m();
    let ratio = a.horizon.map(|h| h as f64 / m as f64);
    let proc = procedure(a.procedure, ratio)?;
    let gamma = GammaParam::new(a.gamma)?;
    let cv = table.get(artifacts.model().p(), a.gamma, a.alpha, &proc)?;
    let q = artifacts.model().q();
    let mut det = match a.horizon {
        Some(h) => DetectorState::closed_end(artifacts, gamma, cv, h)?,
        None => DetectorState::new(artifacts, gamma, cv)?,
    };

    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (i, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if det.horizon().is_some_and(|h| det.k() >= h) {
            eprintln!(
                "qcpd: horizon of {} observations reached; ignoring remaining input",
                det.k()
            );
            break;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::data(format!("stdin line {lineno}: {e}")))?;
        if vals.len() != q + 1 {
            return Err(Failure::data(format!(
                "stdin line {lineno}: expected {} fields (x1..x{q},y), got {}",
                q + 1,
                vals.len()
            )));
        }
        let (y, x) = vals.split_last().expect("nonempty");
        let obs = Observation::new(x.to_vec(), *y)
            .map_err(|e| Failure::data(format!("stdin line {lineno}: {e}")))?;
        let v = det.push(&obs)?;
        writeln!(
            out,
            "{},{},{},{}",
            v.k, v.gamma_stat, v.threshold, v.alarmed
        )?;
        out.flush()?;
        if v.alarmed {
            writeln!(out, "ALARM k_hat={}", v.k)?;
            out.flush()?;
            return Ok(EXIT_ALARM);
        }
    }
    Ok(0)
}

fn sim(a: SimArgs) -> CmdResult {
    let mut preset: Preset = match (&a.preset, &a.scenario) {
        (Some(name), _) => simlab::builtin_preset(name).ok_or_else(|| {
            let names: Vec<String> = simlab::builtin_presets()
                .into_iter()
                .map(|p| p.name)
                .collect();
            Failure::usage(format!(
                "unknown preset '{name}'; available: {}",
                names.join(", ")
            ))
        })?,
        (None, Some(path)) => simlab::load_preset(path).map_err(|e| match e {
            Error::Io(_) => Failure::from(e),
            e => Failure::data(format!("{}: {e}", path.display())),
        })?,
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(seed) = a.seed {
        preset.design_seed = seed;
        preset.noise_seed = seed.wrapping_add(1);
    }
    if a.reps == 0 {
        return Err(Failure::usage("--reps must be >= 1"));
    }
    let mut warned = Vec::new();
    for s in preset.scenarios() {
        for w in s.warnings() {
            if !warned.contains(&w) {
                eprintln!("qcpd: warning: {w}");
                warned.push(w);
            }
        }
    }
    let table = CriticalValueTable::load(&a.crit)?;
    let rows = simlab::run_preset(&preset, a.reps, &table).map_err(|e| match e {
        Error::MissingCriticalValue { .. } => Failure::data(e.to_string()),
        e => Failure::from(e),
    })?;
    simlab::report_csv(&rows, &a.out)?;
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(
        out,
        "{:<18} {:<14} {:>5} {:>6} {:<8} {:<7} {:>7} {:>6} {:>6} {:>6}",
        "scenario", "procedure", "gamma", "alpha", "errors", "beta1", "rate", "med", "min", "max"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{:<18} {:<14} {:>5} {:>6} {:<8} {:<7} {:>7.3} {:>6} {:>6} {:>6}",
            r.scenario,
            r.procedure,
            r.gamma,
            r.alpha,
            r.error_law,
            r.beta1,
            r.rate,
            r.khat_median.to_string(),
            r.khat_min.to_string(),
            r.khat_max.to_string()
        )?;
    }
    out.flush()?;
    Ok(0)
}
