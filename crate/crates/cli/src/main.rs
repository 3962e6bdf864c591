//! `hbt`: simulate photon time tags, build g² correlograms and analyse them.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 a fit did
//! not converge (the report is still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use hbt_core::analysis::{cs_witness_with_errors, fit_damped_oscillation, peak_stats};
use hbt_core::correlator::{correlate, Channel, Correlogram, CorrelogramSpec};
use hbt_core::scenario::{
    builtin_names, builtin_scenario, run_scenario_with, RunOptions, ScenarioConfig, ScenarioRun,
};
use hbt_core::tags::{read_stream_csv, read_stream_file};
use hbt_core::{Error, TagStream};
use serde_json::json;

/// `println!` that tolerates a closed stdout, as when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownScenario(_) => CliError::Usage(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(Error) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(
    name = "hbt",
    version,
    about = "Photon-correlation (g2) simulator and analyser"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario's detector clicks into detectors.ptt plus a report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate two channels of tag files into a correlogram CSV.
    Correlate {
        /// First input as <file>:<channel>.
        #[arg(long)]
        a: String,
        /// Second input as <file>:<channel>.
        #[arg(long)]
        b: String,
        #[arg(long)]
        bin_ps: u64,
        #[arg(long, allow_negative_numbers = true)]
        tau_min_ps: i64,
        #[arg(long, allow_negative_numbers = true)]
        tau_max_ps: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a builtin or configured scenario end to end.
    #[command(group(ArgGroup::new("source").required(true).args(["name", "config", "list"])))]
    Scenario {
        /// Builtin scenario name.
        #[arg(long)]
        name: Option<String>,
        /// Scenario configuration file (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// List the builtin scenarios and exit.
        #[arg(long)]
        list: bool,
        /// Print the resolved configuration as JSON instead of running it.
        #[arg(long)]
        print_config: bool,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, required_unless_present_any = ["list", "print_config"])]
        out: Option<PathBuf>,
    },
    /// Fit the damped-oscillation model to a correlogram CSV.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cauchy-Schwarz witness of a cross correlogram against two zero-lag autocorrelations.
    Witness {
        #[arg(long)]
        gii0: f64,
        #[arg(long)]
        gvv0: f64,
        /// Standard error of gii0.
        #[arg(long, default_value_t = 0.0)]
        gii0_err: f64,
        /// Standard error of gvv0.
        #[arg(long, default_value_t = 0.0)]
        gvv0_err: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hbt: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Caps the worker pool at `HBT_THREADS`. Results do not depend on it.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("HBT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "HBT_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let opts = RunOptions {
                out_dir: Some(out.clone()),
                write_streams: true,
                skip_correlation: true,
            };
            let run = execute(&cfg, &opts)?;
            say!(
                "{}: {} detector tags written to {}",
                cfg.name,
                run.report.tags.detectors.values().sum::<u64>(),
                out.join("detectors.ptt").display()
            );
            Ok(())
        }
        Command::Correlate {
            a,
            b,
            bin_ps,
            tau_min_ps,
            tau_max_ps,
            out,
        } => {
            let spec = CorrelogramSpec::new(bin_ps, tau_min_ps, tau_max_ps)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let (path_a, ch_a) = parse_input(&a)?;
            let (path_b, ch_b) = parse_input(&b)?;
            let stream_a = load_stream(&path_a)?;
            let stream_b = if path_b == path_a {
                None
            } else {
                Some(load_stream(&path_b)?)
            };
            let stream_b = stream_b.as_ref().unwrap_or(&stream_a);
            for (stream, ch, arg) in [(&stream_a, ch_a, &a), (stream_b, ch_b, &b)] {
                if ch >= stream.channel_count() {
                    return Err(CliError::Usage(format!(
                        "`{arg}`: stream has {} channels",
                        stream.channel_count()
                    )));
                }
            }
            let c = correlate(
                Channel::new(&stream_a, ch_a),
                Channel::new(stream_b, ch_b),
                &spec,
            )?;
            c.write_csv_file(&out).map_err(data_err(out.display()))?;
            let meta = c.meta.as_ref().expect("fresh correlogram");
            say!(
                "{} pairs from {} x {} tags over {} bins",
                c.counts.iter().sum::<u64>(),
                meta.n_a,
                meta.n_b,
                c.n_bins()
            );
            Ok(())
        }
        Command::Scenario {
            name,
            config,
            list,
            print_config,
            seed,
            out,
        } => {
            if list {
                for name in builtin_names() {
                    let cfg = builtin_scenario(name)?;
                    say!("{name:<22} {}", cfg.description);
                }
                return Ok(());
            }
            let cfg = match (name, config) {
                (Some(name), _) => {
                    let mut cfg = builtin_scenario(&name)?;
                    if let Some(seed) = seed {
                        cfg.seed = seed;
                    }
                    cfg
                }
                (None, Some(path)) => load_config(&path, seed)?,
                (None, None) => unreachable!("clap requires a source"),
            };
            if print_config {
                say!("{}", cfg.to_json());
                return Ok(());
            }
            let out = out.expect("clap requires --out");
            let opts = RunOptions {
                out_dir: Some(out.clone()),
                ..Default::default()
            };
            let run = execute(&cfg, &opts)?;
            let r = &run.report;
            let passed = r.checks.iter().filter(|c| c.passed).count();
            say!(
                "{}: {passed}/{} checks passed, report at {}",
                r.name,
                r.checks.len(),
                out.join("report.json").display()
            );
            for c in r.failed_checks() {
                let value = c.value.as_ref().map_or("missing".into(), |v| v.to_string());
                say!("  failed {}: {value}", c.check.metric);
            }
            not_converged(r.converged, "a fit did not converge; see the report")
        }
        Command::Fit { input, out } => {
            let c = Correlogram::read_csv_file(&input).map_err(data_err(input.display()))?;
            let fit = fit_damped_oscillation(&c, None)?;
            let peak = match peak_stats(&c) {
                Ok(p) => json!(p),
                Err(e) => json!({ "error": e.to_string() }),
            };
            let report = json!({
                "input": input.display().to_string(),
                "bins": c.n_bins(),
                "fit": fit,
                "peak": peak,
            });
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            fs::write(&out, text + "\n")
                .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
            say!(
                "t_osc {:.3} ns, tau_d {:.3} ns, sigma2 {:.4}, chi2/dof {:.3}",
                fit.t_osc_ps / 1e3,
                fit.tau_d_ps / 1e3,
                fit.sigma2,
                fit.chi2_per_dof
            );
            not_converged(fit.converged, "fit did not converge; report written")
        }
        Command::Witness {
            gii0,
            gvv0,
            gii0_err,
            gvv0_err,
            input,
            out,
        } => {
            if !(gii0_err >= 0.0 && gvv0_err >= 0.0) {
                return Err(CliError::Usage(
                    "witness errors must be non-negative".into(),
                ));
            }
            let c = Correlogram::read_csv_file(&input).map_err(data_err(input.display()))?;
            let w = cs_witness_with_errors((gii0, gii0_err), (gvv0, gvv0_err), &c)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let file = fs::File::create(&out)
                .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
            w.write_csv(std::io::BufWriter::new(file))?;
            say!(
                "max W {:.4}, max (W-1)/sigma {:.2}",
                w.max_w(),
                w.max_excess_sigma()
            );
            Ok(())
        }
    }
}

fn not_converged(converged: bool, message: &str) -> Result<(), CliError> {
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(message.into()))
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::from_file(path).map_err(data_err(path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioRun, CliError> {
    let run = run_scenario_with(cfg, opts).map_err(|e| CliError::Data(e.to_string()))?;
    for w in &run.report.warnings {
        eprintln!("hbt: warning: {w}");
    }
    Ok(run)
}

/// Splits `<file>:<channel>` at the last colon.
fn parse_input(arg: &str) -> Result<(PathBuf, u8), CliError> {
    let (path, ch) = arg
        .rsplit_once(':')
        .ok_or_else(|| CliError::Usage(format!("expected <file>:<channel>, got `{arg}`")))?;
    let ch = ch
        .parse()
        .map_err(|_| CliError::Usage(format!("bad channel `{ch}` in `{arg}`")))?;
    Ok((PathBuf::from(path), ch))
}

/// Reads a binary stream, or a `t_ps,channel` CSV when the extension is `.csv`.
fn load_stream(path: &Path) -> Result<TagStream, CliError> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let stream = if is_csv {
        fs::File::open(path)
            .map_err(Error::from)
            .and_then(|f| read_stream_csv(std::io::BufReader::new(f), None))
    } else {
        read_stream_file(path)
    };
    stream.map_err(data_err(path.display()))
}
