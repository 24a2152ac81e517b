//! `cacq {validate|solve|simulate|sweep|compare} <config> [flags]`.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 simulation disagreement, 4 solver non-convergence.

use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::connection::CacPolicy;
use crate::error::{ConfigError, Error};
use crate::metrics::{QosReport, CSV_HEADER};
use crate::pipeline::{analyze, Model};
use crate::scenario::{parse_policy_flag, MethodChoice, Scenario};
use crate::sim::{compare, simulate, tamper, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPARE: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cacq", version, about = "Admission control queueing analysis for an OFDMA uplink")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file and report the first problem with its line.
    Validate { config: PathBuf },
    /// Solve the chain and emit one CSV row per policy.
    Solve {
        config: PathBuf,
        /// Override the policy, e.g. `threshold:10`, `queue_aware:100`, `none:70`. Repeatable.
        #[arg(long)]
        policy: Vec<String>,
        /// Append rows to this CSV file instead of printing them.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write π as `idx value` lines (single policy only).
        #[arg(long)]
        dump_pi: Option<PathBuf>,
        /// Write the transition matrix in coordinate form (single policy only).
        #[arg(long)]
        dump_matrix: Option<PathBuf>,
        /// Override the solver method: auto, direct, power, aggregation.
        #[arg(long)]
        method: Option<String>,
    },
    /// Solve over a parameter grid, one row per (policy, point).
    Sweep {
        config: PathBuf,
        /// `rho=a:b:step` (connections/min) or `snr=a:b:step` (dB).
        #[arg(long)]
        vary: String,
        /// Comma-separated policies; defaults to the scenario's.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a gnuplot script plotting the CSV.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Monte Carlo estimate with confidence intervals.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        policy: Vec<String>,
        /// Write per-replication counts as CSV.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Solve and simulate, then test every metric at the 3-sigma gate.
    Compare {
        config: PathBuf,
        #[arg(long)]
        policy: Vec<String>,
        /// Shift analytic values by this many standard errors before comparing.
        #[arg(long)]
        tamper_sigma: Option<f64>,
    },
}

enum Failure {
    Config(String),
    Compare,
    NotConverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidProcess(_) | Error::Reducible { .. } => Failure::Config(e.to_string()),
            Error::NotConverged { .. } => Failure::NotConverged(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

/// Entry point used by the binary; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = std::env::var("CACQ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Compare) => EXIT_COMPARE,
        Err(Failure::NotConverged(m)) => {
            eprintln!("error: {m}");
            EXIT_NOT_CONVERGED
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            EXIT_OTHER
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let src = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Scenario::from_toml_str(&src).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn policies(base: &Scenario, flags: &[String]) -> Result<Vec<Scenario>, Failure> {
    if flags.is_empty() {
        return Ok(vec![base.clone()]);
    }
    flags
        .iter()
        .map(|f| {
            let p: CacPolicy = parse_policy_flag(f.trim(), base).map_err(|m| Failure::Config(format!("--policy: {m}")))?;
            Ok(base.with_policy(p)?)
        })
        .collect()
}

fn append_csv(path: &Path, rows: &[String]) -> std::io::Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        writeln!(f, "{CSV_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()
}

fn emit_rows(out: &mut impl Write, path: Option<&Path>, reports: &[QosReport]) -> Result<(), Failure> {
    let rows: Vec<String> = reports.iter().map(QosReport::csv_row).collect();
    match path {
        Some(p) => append_csv(p, &rows)?,
        None => {
            writeln!(out, "{CSV_HEADER}")?;
            for r in rows {
                writeln!(out, "{r}")?;
            }
        }
    }
    Ok(())
}

/// `name=a:b:step`, inclusive of `b`.
pub fn parse_grid(text: &str) -> Result<(String, Vec<f64>), String> {
    let (name, range) = text.split_once('=').ok_or("expected name=a:b:step")?;
    let parts: Vec<f64> = range
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("cannot parse `{p}`")))
        .collect::<Result<_, _>>()?;
    let [a, b, step] = parts[..] else {
        return Err("expected name=a:b:step".into());
    };
    if !(step > 0.0) || b < a {
        return Err("need step > 0 and a <= b".into());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize + 1;
    let points = (0..n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9).collect();
    let name = name.trim().to_string();
    if name != "rho" && name != "snr" {
        return Err(format!("cannot vary `{name}` (rho or snr)"));
    }
    Ok((name, points))
}

fn gnuplot_script(csv: &Path, vary: &str, labels: &[String]) -> String {
    let x_col = if vary == "rho" { 2 } else { 3 };
    let x_label = if vary == "rho" {
        "connection arrival rate (1/min)"
    } else {
        "average SNR (dB)"
    };
    let metrics = [
        (4, "blocking probability"),
        (5, "mean connections"),
        (6, "mean queue length (packets)"),
        (9, "drop probability"),
        (10, "throughput (packets/frame)"),
        (11, "delay (frames)"),
    ];
    let mut s = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel '{x_label}'\nset grid\nset terminal pngcairo size 800,600\n"
    );
    for (col, title) in metrics {
        let stem = title.split(' ').next().unwrap_or("metric");
        s.push_str(&format!("set output '{stem}_vs_{vary}.png'\nset ylabel '{title}'\nplot "));
        let plots: Vec<String> = labels
            .iter()
            .map(|l| {
                format!(
                    "'{}' using {x_col}:(strcol(1) eq '{l}' ? ${col} : NaN) with linespoints title '{l}'",
                    csv.display()
                )
            })
            .collect();
        s.push_str(&plots.join(", \\\n     "));
        s.push('\n');
    }
    s
}

fn dispatch(cmd: Command, out: &mut impl Write) -> Result<(), Failure> {
    match cmd {
        Command::Validate { config } => {
            let s = load(&config)?;
            writeln!(
                out,
                "{}: ok\n  policy {}\n  channel {}\n  states {}\n  fingerprint {}",
                config.display(),
                s.policy,
                s.channel.label(),
                s.arrival.num_phases() * (s.queue_cap + 1) * (s.policy.conn_cap() + 1),
                s.fingerprint()
            )?;
            if s.sim.is_none() {
                writeln!(out, "  no [sim] section: simulate and compare are unavailable")?;
            }
            Ok(())
        }
        Command::Solve {
            config,
            policy,
            out: csv,
            dump_pi,
            dump_matrix,
            method,
        } => {
            let mut base = load(&config)?;
            if let Some(m) = method {
                base.solver.method = match m.as_str() {
                    "auto" => MethodChoice::Auto,
                    "direct" => MethodChoice::Direct,
                    "power" => MethodChoice::Power,
                    "aggregation" => MethodChoice::Aggregation,
                    other => return Err(Failure::Config(format!("--method: unknown method `{other}`"))),
                };
            }
            let scenarios = policies(&base, &policy)?;
            if scenarios.len() > 1 && (dump_pi.is_some() || dump_matrix.is_some()) {
                return Err(Failure::Config("--dump-pi and --dump-matrix take a single policy".into()));
            }
            let mut reports = Vec::new();
            for s in &scenarios {
                let model = Model::build(s)?;
                if let Some(path) = &dump_matrix {
                    let mut w = BufWriter::new(File::create(path)?);
                    model.chain.write_coordinates(&mut w)?;
                    w.flush()?;
                }
                let stationary = model.solve(&s.solver)?;
                if let Some(path) = &dump_pi {
                    let mut w = BufWriter::new(File::create(path)?);
                    stationary.write_dump(&mut w)?;
                    w.flush()?;
                }
                let report = model.report(s, &stationary)?;
                if csv.is_some() {
                    write!(out, "{}", report.text_block())?;
                }
                reports.push(report);
            }
            emit_rows(out, csv.as_deref(), &reports)
        }
        Command::Sweep {
            config,
            vary,
            policies: flags,
            out: csv,
            gnuplot,
        } => {
            let base = load(&config)?;
            let (name, points) = parse_grid(&vary).map_err(|m| Failure::Config(format!("--vary: {m}")))?;
            let bases = policies(&base, &flags)?;
            let mut jobs = Vec::new();
            for b in &bases {
                for &v in &points {
                    let s = if name == "rho" {
                        b.with_connection_rate(v)
                    } else {
                        b.with_avg_snr_db(v)
                    };
                    jobs.push(s.map_err(|e| Failure::Config(format!("--vary: {e}")))?);
                }
            }
            let reports: Vec<QosReport> = jobs
                .par_iter()
                .map(|s| analyze(s).map(|a| a.report))
                .collect::<Result<_, _>>()?;
            emit_rows(out, csv.as_deref(), &reports)?;
            if let Some(gp) = gnuplot {
                let labels: Vec<String> = bases.iter().map(|b| b.policy.to_string()).collect();
                let data = csv.clone().unwrap_or_else(|| PathBuf::from("sweep.csv"));
                std::fs::write(gp, gnuplot_script(&data, &name, &labels))?;
            }
            Ok(())
        }
        Command::Simulate {
            config,
            policy,
            raw,
        } => {
            let base = load(&config)?;
            base.sim_settings()?;
            let mut raw_out = String::new();
            for s in policies(&base, &policy)? {
                let est = simulate(&SimConfig::from_scenario(&s)?)?;
                write!(out, "{}", est.text_block())?;
                if raw.is_some() {
                    raw_out.push_str(&format!("# {}\n", est.policy));
                    raw_out.push_str(&est.raw_csv());
                }
            }
            if let Some(path) = raw {
                std::fs::write(path, raw_out)?;
            }
            Ok(())
        }
        Command::Compare {
            config,
            policy,
            tamper_sigma,
        } => {
            let base = load(&config)?;
            base.sim_settings()?;
            let mut all_pass = true;
            for s in policies(&base, &policy)? {
                let analysis = analyze(&s)?;
                let est = simulate(&SimConfig::from_scenario(&s)?)?;
                let report = match tamper_sigma {
                    Some(k) => tamper(&analysis.report, &est, k),
                    None => analysis.report,
                };
                let cmp = compare(&report, &est)?;
                write!(out, "{}", cmp.table())?;
                all_pass &= cmp.pass();
            }
            if all_pass {
                Ok(())
            } else {
                Err(Failure::Compare)
            }
        }
    }
}
