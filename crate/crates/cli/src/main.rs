use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rekf::dataio::{
    compute_metrics, read_signal_csv, write_signal_csv, write_trace_csv, write_truth_csv,
    ConfigOverrides, EstimateTrace, ExperimentConfig, FilterKind, Metrics, ParameterMetrics,
};
use rekf::experiment::{estimate, simulate};

#[derive(Debug, Parser)]
#[command(
    name = "rekf",
    version,
    about = "Robust EKF experiments on the Housner TLD model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate excitation, measurements and truth from a config.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Signal CSV to write; the truth goes to `<stem>.truth.csv` beside it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run one filter over a signal file.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Signal CSV with `t,u,y` columns.
        #[arg(long)]
        input: PathBuf,
        /// Trace CSV to write.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run EKF and REKF on the same data and print their metrics.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Signal CSV; simulated from the config when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Trace prefix; writes `<prefix>.ekf.csv` and `<prefix>.rekf.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_filter)]
    filter: Option<FilterKind>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_filter(s: &str) -> Result<FilterKind, String> {
    s.parse()
        .map_err(|e: rekf::dataio::DataError| e.to_string())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&ConfigOverrides {
            filter: self.filter,
            c0: self.c0,
            decay: self.decay,
            seed: self.seed,
        })?;
        Ok(cfg)
    }
}

fn truth_path(signal: &Path) -> PathBuf {
    let stem = signal
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "signal".into());
    signal.with_file_name(format!("{stem}.truth.csv"))
}

fn cmd_simulate(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    let data = simulate(cfg)?;
    let u = &data.excitation.samples;
    write_signal_csv(
        output,
        data.excitation.ts,
        u,
        Some(&data.measurements.values),
    )?;
    let truth_file = truth_path(output);
    write_truth_csv(&truth_file, &data.truth)?;
    println!(
        "wrote {} samples to {} and truth to {} (seed {}, excitation rms {:.4})",
        u.len(),
        output.display(),
        truth_file.display(),
        cfg.seed,
        data.excitation.rms()
    );
    Ok(())
}

/// Inputs and measurements for a run, from a file or simulated.
fn load_signal(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    match input {
        Some(path) => {
            let signal = read_signal_csv(path)?;
            let Some(y) = signal.y else {
                bail!("{} has no y column", path.display());
            };
            let drift = (signal.ts - cfg.model.ts).abs() / cfg.model.ts;
            if drift > 1e-9 {
                bail!(
                    "{} is sampled at {} s but the config says ts = {} s",
                    path.display(),
                    signal.ts,
                    cfg.model.ts
                );
            }
            Ok((signal.u, y))
        }
        None => {
            let data = simulate(cfg)?;
            Ok((data.excitation.samples, data.measurements.values))
        }
    }
}

fn truth_of(cfg: &ExperimentConfig) -> Option<(f64, f64)> {
    cfg.truth.map(|t| (t.beta, t.omega))
}

fn metrics_of(cfg: &ExperimentConfig, trace: &EstimateTrace) -> Result<Option<Metrics>> {
    let Some((beta, omega)) = truth_of(cfg) else {
        return Ok(None);
    };
    Ok(Some(compute_metrics(
        trace,
        beta,
        omega,
        cfg.metrics.beta,
        cfg.metrics.omega,
    )?))
}

fn report_non_physical(kind: FilterKind, trace: &EstimateTrace) {
    let count = trace.non_physical_rows();
    if count > 0 {
        println!("{kind}: {count} steps with beta outside (0, 1) or omega <= 0");
    }
}

fn cmd_estimate(cfg: &ExperimentConfig, input: &Path, output: &Path) -> Result<()> {
    let (u, y) = load_signal(cfg, Some(input))?;
    let kind = cfg.filter.kind;
    let trace = estimate(cfg, kind, &u, &y, truth_of(cfg))
        .with_context(|| format!("{kind} run on {}", input.display()))?;
    write_trace_csv(output, &trace)?;
    println!(
        "{kind}: {} steps, trace written to {}",
        trace.len(),
        output.display()
    );
    report_non_physical(kind, &trace);
    match metrics_of(cfg, &trace)? {
        Some(m) => println!("{m}"),
        None => println!("no [truth] section in the config, metrics skipped"),
    }
    Ok(())
}

fn ratio(rekf: f64, ekf: f64) -> String {
    if ekf == 0.0 {
        if rekf == 0.0 {
            "1".into()
        } else {
            "inf".into()
        }
    } else {
        format!("{:.3}", rekf / ekf)
    }
}

fn opt_ratio(rekf: Option<f64>, ekf: Option<f64>) -> String {
    match (rekf, ekf) {
        (Some(r), Some(e)) => ratio(r, e),
        _ => "n/a".into(),
    }
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "never".into(), |v| format!("{v:.4e}"))
}

fn print_parameter(name: &str, ekf: &ParameterMetrics, rekf: &ParameterMetrics) {
    println!("{name} (threshold {:.2}%)", ekf.threshold * 100.0);
    println!("  {:<26}{:>14}{:>14}{:>10}", "", "ekf", "rekf", "ratio");
    let rows = [
        (
            "terminal error",
            Some(ekf.terminal_error),
            Some(rekf.terminal_error),
        ),
        (
            "convergence time [s]",
            ekf.convergence_time,
            rekf.convergence_time,
        ),
        (
            "max post-convergence err",
            ekf.max_post_convergence_error,
            rekf.max_post_convergence_error,
        ),
        ("tail rmse", Some(ekf.tail_rmse), Some(rekf.tail_rmse)),
    ];
    for (label, e, r) in rows {
        println!(
            "  {label:<26}{:>14}{:>14}{:>10}",
            show(e),
            show(r),
            opt_ratio(r, e)
        );
    }
}

fn cmd_compare(cfg: &ExperimentConfig, input: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let (u, y) = load_signal(cfg, input)?;
    let truth = truth_of(cfg);
    let (ekf, rekf) = std::thread::scope(|s| {
        let ekf = s.spawn(|| estimate(cfg, FilterKind::Ekf, &u, &y, truth));
        let rekf = estimate(cfg, FilterKind::Rekf, &u, &y, truth);
        (ekf.join().expect("ekf thread panicked"), rekf)
    });
    let ekf = ekf.context("ekf run")?;
    let rekf = rekf.context("rekf run")?;
    if let Some(prefix) = output {
        for (kind, trace) in [("ekf", &ekf), ("rekf", &rekf)] {
            let mut name = prefix.as_os_str().to_owned();
            name.push(format!(".{kind}.csv"));
            write_trace_csv(PathBuf::from(name), trace)?;
        }
    }
    report_non_physical(FilterKind::Ekf, &ekf);
    report_non_physical(FilterKind::Rekf, &rekf);
    match (metrics_of(cfg, &ekf)?, metrics_of(cfg, &rekf)?) {
        (Some(e), Some(r)) => {
            print_parameter("beta", &e.beta, &r.beta);
            print_parameter("omega", &e.omega, &r.omega);
        }
        _ => println!("no [truth] section in the config, metrics skipped"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, output } => cmd_simulate(&common.load()?, &output),
        Command::Estimate {
            common,
            input,
            output,
        } => cmd_estimate(&common.load()?, &input, &output),
        Command::Compare {
            common,
            input,
            output,
        } => cmd_compare(&common.load()?, input.as_deref(), output.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
