use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use msctrack::config::RunConfig;
use msctrack::sim::{monte_carlo, write_summary_csv, MonteCarloResult, RunLog};
use msctrack::{Error, Result};

#[derive(Parser)]
#[command(name = "msctrack", version, about = "MSC IMM tracker with scheduled range measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one track or a Monte-Carlo batch and write CSV logs.
    Run(RunArgs),
    /// Check a config file and list every violated invariant.
    Validate {
        /// Config file, or `paper_scenario` for the bundled one.
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or `paper_scenario` for the bundled one.
    #[arg(long)]
    config: PathBuf,
    /// Number of Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Seed of the first run; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Range standard-deviation threshold in metres.
    #[arg(long)]
    threshold: Option<f64>,
    /// Measure range on every frame.
    #[arg(long)]
    no_schedule: bool,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn load(path: &Path) -> std::result::Result<RunConfig, ExitCode> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            Error::Io(_) => ExitCode::from(EXIT_RUNTIME),
            _ => ExitCode::from(EXIT_VALIDATION),
        }
    })
}

fn validate(path: &Path) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let violations = cfg.validate();
    if violations.is_empty() {
        println!("ok");
        return ExitCode::SUCCESS;
    }
    for v in &violations {
        println!("{v}");
    }
    ExitCode::from(EXIT_VALIDATION)
}

fn write_run(dir: &Path, log: &RunLog) -> Result<()> {
    let f = File::create(dir.join(format!("run_{}.csv", log.seed)))?;
    log.write_csv(BufWriter::new(f))
}

fn report(mc: &MonteCarloResult, scenario: &msctrack::scenario::Scenario) -> Result<()> {
    println!("final RMS range error: {:.3} m", mc.final_rms_range_error());
    for (i, rate) in mc.phase_rates.iter().enumerate() {
        match rate {
            Some(r) => println!("phase {} scheduling rate: {:.4}", i + 1, r),
            None => println!("phase {} scheduling rate: n/a (warm-up only)", i + 1),
        }
    }
    println!("NEES pass fraction: {:.4}", mc.nees_pass_fraction(scenario, 2.0)?);
    Ok(())
}

fn run(args: RunArgs) -> ExitCode {
    let mut cfg = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(n) = args.runs {
        cfg.monte_carlo.n_runs = n;
    }
    if let Some(s) = args.seed {
        cfg.monte_carlo.base_seed = s;
    }
    if let Some(o) = args.out {
        cfg.output.dir = o;
    }
    if let Some(t) = args.threshold {
        cfg.scheduler.threshold_m = t;
    }
    if args.no_schedule {
        cfg.scheduler.enabled = false;
    }
    let violations = cfg.validate();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        return ExitCode::from(EXIT_VALIDATION);
    }

    let result = (|| -> Result<()> {
        let setup = cfg.build()?;
        let mc = monte_carlo(
            &setup.scenario,
            &setup.noise,
            &setup.filter,
            &setup.scheduler,
            setup.n_runs,
            setup.base_seed,
        )?;
        std::fs::create_dir_all(&setup.out_dir)?;
        mc.runs
            .par_iter()
            .map(|log| write_run(&setup.out_dir, log))
            .collect::<Result<Vec<_>>>()?;
        if setup.n_runs > 1 {
            let f = File::create(setup.out_dir.join("summary.csv"))?;
            write_summary_csv(&mc.summary, BufWriter::new(f))?;
        }
        report(&mc, &setup.scenario)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Validate { config } => validate(&config),
    }
}
