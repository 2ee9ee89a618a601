//! Command-line front end: kernel evaluation, exit-rate queries, path
//! simulation dumps, crossing-probability runs and the reproduction table,
//! all with deterministic seeding and CSV output.
//!
//! Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 config error.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{build_spec, hurst_of, RunConfig};
use gausspin::asymptotics::{BridgeAsymptotics, SpeedExponents};
use gausspin::conditioning::Observations;
use gausspin::exit_rates::ExitProblem;
use gausspin::montecarlo::{estimate_crossing, table1_harness, McResult};
use gausspin::simulate::PathSampler;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::io::Write as _;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Config(String),
}

impl From<gausspin::Error> for CliError {
    fn from(e: gausspin::Error) -> Self {
        use gausspin::Error::*;
        match e {
            InvalidParameter(_) | Domain(_) | UnsupportedFamily(_) | InvalidStart(_) => {
                CliError::Config(e.to_string())
            }
            DegenerateConditioning(_) | Factorization(_) | OutOfSpace(_) | Numeric(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gausspin",
    version,
    about = "Pinned Gaussian processes: kernels, bridge exit rates, and rate-corrected crossing probabilities",
    allow_negative_numbers = true
)]
struct Cli {
    /// Worker threads for Monte Carlo (default: available parallelism)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FamilyArgs {
    /// Process family: fbm | cheridito | ibm | mibm | ifbm
    #[arg(long)]
    family: String,
    /// Hurst index (fbm, cheridito, ifbm)
    #[arg(long)]
    hurst: Option<f64>,
    /// Brownian weight (cheridito)
    #[arg(long)]
    c: Option<f64>,
    /// Fractional weight (cheridito)
    #[arg(long = "c-h")]
    c_h: Option<f64>,
    /// Integration order (mibm)
    #[arg(long)]
    m: Option<u32>,
}

impl FamilyArgs {
    fn spec(&self) -> Result<gausspin::kernels::KernelSpec, CliError> {
        build_spec(&self.family, self.hurst, self.c, self.c_h, self.m)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the covariance kernel k(t, s)
    Kernel {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        s: f64,
    },
    /// Bridge exit rates for a window from x to y against the given barriers
    Rate {
        #[command(flatten)]
        family: FamilyArgs,
        /// Window start value
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        /// Window end value
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
        #[arg(long, allow_hyphen_values = true)]
        upper: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lower: Option<f64>,
        /// Step size; if given, also print the per-step crossing probability
        #[arg(long)]
        eps: Option<f64>,
        /// Window-start time (needed by m-fold families with m >= 2)
        #[arg(long, default_value_t = 1.0)]
        at: f64,
        /// Past pins as time:value, repeatable
        #[arg(long = "pin")]
        pins: Vec<String>,
    },
    /// Sample paths on a uniform grid and dump them as CSV
    Simulate {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        paths: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Past pins as time:value, repeatable
        #[arg(long = "pin")]
        pins: Vec<String>,
        /// Output file (default stdout)
        #[arg(long)]
        out: Option<String>,
    },
    /// Estimate a crossing probability (config file plus flag overrides)
    Crossing {
        /// Flat key = value config file
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        hurst: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long = "c-h")]
        c_h: Option<f64>,
        #[arg(long)]
        m: Option<u32>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Upper barrier: level, or piecewise "0:1.0,0.5:0.6"
        #[arg(long, allow_hyphen_values = true)]
        upper: Option<String>,
        /// Lower barrier: level, or piecewise
        #[arg(long, allow_hyphen_values = true)]
        lower: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        start: Option<f64>,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// crude | corrected
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// Announce the effective configuration and timing on stderr
        #[arg(long)]
        verbose: bool,
        /// Print the effective configuration and exit
        #[arg(long)]
        dump_config: bool,
    },
    /// Run the full reproduction grid (3 Hurst values x 5 method/step cells)
    Table1 {
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let code = match e.kind() {
                DisplayHelp | DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(workers) = cli.workers {
        // ignore the error when a pool already exists (tests, repeated init)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, label, msg) = match e {
                CliError::Usage(m) => (1u8, "usage", m),
                CliError::Numeric(m) => (2, "numeric", m),
                CliError::Config(m) => (3, "config", m),
            };
            eprintln!("error ({label}): {msg}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Kernel { family, t, s } => {
            let spec = family.spec()?;
            println!("{}", spec.eval_cov(t, s)?);
            Ok(())
        }
        Command::Rate {
            family,
            x,
            y,
            upper,
            lower,
            eps,
            at,
            pins,
        } => cmd_rate(family, x, y, upper, lower, eps, at, &pins),
        Command::Simulate {
            family,
            step,
            horizon,
            paths,
            seed,
            pins,
            out,
        } => cmd_simulate(family, step, horizon, paths, seed, &pins, out),
        Command::Crossing {
            config,
            family,
            hurst,
            c,
            c_h,
            m,
            step,
            horizon,
            upper,
            lower,
            start,
            paths,
            seed,
            method,
            out,
            verbose,
            dump_config,
        } => {
            let base = match config {
                Some(path) => RunConfig::from_file(&path)?,
                None => RunConfig::default(),
            };
            let overrides = RunConfig {
                family,
                hurst,
                c,
                c_h,
                m,
                step,
                horizon,
                upper,
                lower,
                start,
                paths,
                seed,
                method,
                out,
                workers: None,
                verbose: if verbose { Some(true) } else { None },
            };
            cmd_crossing(base.merge(overrides), dump_config)
        }
        Command::Table1 { paths, seed, out } => cmd_table1(paths, seed, out),
    }
}

fn parse_pins(pins: &[String]) -> Result<Observations, CliError> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for pin in pins {
        let (t, v) = pin
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("bad pin '{pin}', expected time:value")))?;
        times.push(
            t.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad pin time in '{pin}'")))?,
        );
        values.push(
            v.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad pin value in '{pin}'")))?,
        );
    }
    Observations::new(times, values).map_err(CliError::from)
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s: u64 = rand::rng().random();
            eprintln!("seed = {s}");
            s
        }
    }
}

fn open_out(path: Option<String>) -> Result<Box<dyn std::io::Write>, CliError> {
    match path {
        Some(p) => {
            let f = std::fs::File::create(&p)
                .map_err(|e| CliError::Config(format!("cannot create '{p}': {e}")))?;
            Ok(Box::new(std::io::BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_rate(
    family: FamilyArgs,
    x: f64,
    y: f64,
    upper: Option<f64>,
    lower: Option<f64>,
    eps: Option<f64>,
    at: f64,
    pins: &[String],
) -> Result<(), CliError> {
    if upper.is_none() && lower.is_none() {
        return Err(CliError::Config("rate needs --upper and/or --lower".into()));
    }
    let spec = family.spec()?;
    let obs = parse_pins(pins)?;
    let ba = if obs.is_empty() {
        BridgeAsymptotics::with_reference(&spec, &obs, at)?
    } else {
        BridgeAsymptotics::new(&spec, &obs)?
    };
    let ep = ExitProblem::new(&ba, x, y, upper, lower)?;
    let q = SpeedExponents::for_spec(&spec)?.bridge_exp;
    let step_prob = |rate: f64, eps: f64| (-rate / eps.powf(q)).exp();
    match (upper, lower) {
        (Some(_), None) => {
            let rate = ep.rate_upper()?;
            println!("{rate}");
            if let Some(eps) = eps {
                println!("p_step = {}", step_prob(rate, eps));
            }
        }
        (None, Some(_)) => {
            let rate = ep.rate_lower()?;
            println!("{rate}");
            if let Some(eps) = eps {
                println!("p_step = {}", step_prob(rate, eps));
            }
        }
        (Some(_), Some(_)) => {
            let up = ep.rate_upper()?;
            let lo = ep.rate_lower()?;
            let both = ep.rate_double()?;
            println!("upper = {up}");
            println!("lower = {lo}");
            println!("double = {both}");
            if let Some(eps) = eps {
                let p = 1.0 - (1.0 - step_prob(up, eps)) * (1.0 - step_prob(lo, eps));
                println!("p_step = {p}");
            }
        }
        (None, None) => unreachable!(),
    }
    Ok(())
}

fn cmd_simulate(
    family: FamilyArgs,
    step: f64,
    horizon: f64,
    paths: u64,
    seed: Option<u64>,
    pins: &[String],
    out: Option<String>,
) -> Result<(), CliError> {
    let spec = family.spec()?;
    let obs = parse_pins(pins)?;
    if step <= 0.0 || horizon < step {
        return Err(CliError::Config(format!(
            "need 0 < step <= horizon, got step {step}, horizon {horizon}"
        )));
    }
    let cells = horizon / step;
    if (cells - cells.round()).abs() > 1e-9 * cells {
        return Err(CliError::Config(format!(
            "horizon {horizon} is not an integer number of steps of {step}"
        )));
    }
    let grid: Vec<f64> = (1..=cells.round() as usize)
        .map(|i| i as f64 * step)
        .collect();
    let seed = resolve_seed(seed);
    let sampler = PathSampler::new(&spec, &grid, &obs, seed)?;
    let w = open_out(out)?;
    let emit = || -> std::io::Result<()> {
        let mut w = w;
        writeln!(w, "path_id,t,value")?;
        for path in 0..paths {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path);
            let values = sampler.sample_path_with(&mut rng);
            for (t, v) in grid.iter().zip(values) {
                writeln!(w, "{path},{t},{v}")?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| CliError::Numeric(format!("write failed: {e}")))
}

fn result_row(hurst: Option<f64>, r: &McResult) -> String {
    let mut s = String::new();
    let h = hurst.map(|h| h.to_string()).unwrap_or_default();
    write!(
        s,
        "{},{},{},{},{},{},{},{:.3}",
        r.method, r.step, h, r.estimate, r.ci_low, r.ci_high, r.n_paths, r.wall_secs
    )
    .unwrap();
    s
}

const CSV_HEADER: &str = "method,step,H,estimate,ci_low,ci_high,n_paths,seconds";

fn cmd_crossing(cfg: RunConfig, dump: bool) -> Result<(), CliError> {
    if dump {
        print!("{}", cfg.dump());
        return Ok(());
    }
    if let Some(workers) = cfg.workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let verbose = cfg.verbose.unwrap_or(false);
    let seed = resolve_seed(cfg.seed);
    if verbose {
        eprintln!("running with seed {seed} and configuration:");
        eprint!("{}", cfg.dump());
    }
    let run = cfg.build_run(seed)?;
    let result = estimate_crossing(&run)?;
    if verbose {
        eprintln!("finished in {:.3}s", result.wall_secs);
    }
    let mut w = open_out(cfg.out.clone())?;
    writeln!(w, "{CSV_HEADER}")
        .and_then(|_| {
            writeln!(w, "{}", result_row(hurst_of(&run.spec), &result)).and_then(|_| w.flush())
        })
        .map_err(|e| CliError::Numeric(format!("write failed: {e}")))
}

fn cmd_table1(paths: u64, seed: Option<u64>, out: Option<String>) -> Result<(), CliError> {
    let seed = resolve_seed(seed);
    let rows = table1_harness(seed, paths)?;
    let w = open_out(out)?;
    let emit = || -> std::io::Result<()> {
        let mut w = w;
        writeln!(w, "{CSV_HEADER}")?;
        for row in &rows {
            writeln!(w, "{}", result_row(Some(row.hurst), &row.result))?;
        }
        w.flush()
    };
    emit().map_err(|e| CliError::Numeric(format!("write failed: {e}")))
}
