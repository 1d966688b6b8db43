use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uncertrack::harness::{self, Metric, RunConfig, TrackerKind};
use uncertrack::metrics::MetricsReport;
use uncertrack::Error;

#[derive(Parser)]
#[command(name = "uncertrack", version, about = "Multi-object tracking under detector data uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground truth and detector outputs (replay logs) per seed.
    Simulate(RunArgs),
    /// Run a tracker per seed and write its tracks.
    Track(RunArgs),
    /// Score a tracks file against a truth file.
    Evaluate {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Seed label for the CSV row.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory to write metrics.json into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate or replay, track and evaluate every seed.
    Run(RunArgs),
    /// Compare run OURS against run REFERENCE.
    Compare {
        ours: PathBuf,
        reference: PathBuf,
        /// Directory to write comparison.json into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Treat MOTP as higher-is-better.
        #[arg(long)]
        motp_higher_is_better: bool,
    },
    /// Emit CSV plot series for a run directory.
    PlotData { run_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// uncertainty, baseline or grid.
    #[arg(long)]
    tracker: Option<TrackerKind>,
    /// Single seed; overrides `seeds`.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds or a half-open range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay log of detector outputs; replaces any scenario input.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Ground truth for `--replay`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Scenario JSON file.
    #[arg(long, conflicts_with_all = ["replay", "suite"])]
    scenario: Option<PathBuf>,
    /// Built-in suite: ood or clean.
    #[arg(long, conflicts_with = "replay")]
    suite: Option<String>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("bad seed list `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(t) = self.tracker {
            c.tracker = t;
        }
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            c.seeds = parse_seeds(s)?;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        let input = (&self.replay, &self.scenario, &self.suite);
        if input.0.is_some() || input.1.is_some() || input.2.is_some() {
            c.replay = self.replay.clone();
            c.scenario = self.scenario.clone();
            c.suite = self.suite.clone();
            c.truth = None;
        }
        if let Some(t) = &self.truth {
            c.truth = Some(t.clone());
        }
        if c.scenario.is_none() && c.replay.is_none() && c.suite.is_none() {
            return Err(Error::Config("no input: pass --scenario, --replay or --suite (ood, clean)".into()));
        }
        Ok(c)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::InvalidInput(_) | Error::Io { .. } | Error::Json(_) => 2,
        Error::Invariant(_) | Error::DegenerateWeights(_) | Error::SingularCovariance => 3,
    }
}

fn print_means(label: &str, m: &Option<harness::MetricMeans>) {
    if let Some(m) = m {
        println!("{label}: mota {:.4} motp {:.4} miss {:.4} mismatch {:.4} fp {:.4}", m.mota, m.motp, m.miss, m.mismatch, m.fp);
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Simulate(a) => {
            let c = a.resolve()?;
            harness::simulate(&c)?;
            println!("wrote {}", c.out.display());
        }
        Command::Track(a) => {
            let c = a.resolve()?;
            let seeds = harness::track(&c)?;
            for s in seeds {
                let errs = s.events.frame_errors.len();
                if errs > 0 {
                    eprintln!("seed {}: {errs} frame errors", s.seed);
                }
            }
            println!("wrote {}", c.out.display());
        }
        Command::Evaluate { tracks, truth, seed, out } => {
            let m = harness::evaluate_files(&tracks, &truth)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
                let p = dir.join("metrics.json");
                let text = harness::to_json_pretty(&m)?;
                std::fs::write(&p, text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            }
            println!("{}", MetricsReport::CSV_HEADER);
            println!("{}", m.csv_row(seed));
        }
        Command::Run(a) => {
            let c = a.resolve()?;
            let s = harness::run(&c)?;
            for r in &s.seeds {
                let errs = r.events.frame_errors.len();
                if errs > 0 {
                    eprintln!("seed {}: {errs} frame errors", r.seed);
                }
            }
            print_means("mean", &s.mean);
            println!("wrote {}", c.out.display());
        }
        Command::Compare { ours, reference, out, motp_higher_is_better } => {
            let c = harness::compare_dirs(&ours, &reference, motp_higher_is_better, out.as_deref())?;
            println!("metric,ours,reference,improvement,seeds_better,seeds_worse");
            for m in &c.metrics {
                let imp = m.improvement.map(|v| format!("{:.1}%", 100.0 * v)).unwrap_or_else(|| "n/a".into());
                println!("{},{:.4},{:.4},{imp},{},{}", metric_name(m.metric), m.ours, m.reference, m.seeds_better, m.seeds_worse);
            }
        }
        Command::PlotData { run_dir } => {
            let dir = harness::emit_plot_data(&run_dir)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Mota => "mota",
        Metric::Motp => "motp",
        Metric::Miss => "miss",
        Metric::Mismatch => "mismatch",
        Metric::Fp => "fp",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
