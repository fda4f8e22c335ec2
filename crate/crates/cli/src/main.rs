use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regio_core::format::fmt_2dp;
use regio_core::project::Project;
use regio_core::Error;

/// Disaggregates national energy and emission totals to municipalities.
#[derive(Parser)]
#[command(name = "regio", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate hierarchy, series, formulas and stage ordering
    Check(Opts),
    /// Fill missing proxy values
    Impute(Opts),
    /// Run the staged disaggregation
    Disaggregate(Opts),
    /// Write deviation reports for the configured comparisons
    Validate(Opts),
    /// check, impute, disaggregate and validate in one go
    Run(Opts),
}

#[derive(Args)]
struct Opts {
    /// Project configuration file
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the configuration
    #[arg(long, env = "REGIO_SEED")]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores)
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    Config(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Check(opts)
    | Command::Impute(opts)
    | Command::Disaggregate(opts)
    | Command::Validate(opts)
    | Command::Run(opts)) = &cli.command;

    if let Some(jobs) = opts.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let project = match Project::load(&opts.config) {
        Ok(mut p) => {
            if let Some(seed) = opts.seed {
                p.config.seed = seed;
            }
            p
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let result = match cli.command {
        Command::Check(_) => check(&project),
        Command::Impute(_) => check(&project).and_then(|_| impute(&project)),
        Command::Disaggregate(_) => check(&project).and_then(|_| disaggregate(&project)),
        Command::Validate(_) => validate(&project),
        Command::Run(_) => check(&project)
            .and_then(|_| impute(&project))
            .and_then(|_| disaggregate(&project))
            .and_then(|_| validate(&project)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn check(project: &Project) -> CmdResult {
    let findings = project.check();
    for f in &findings {
        eprintln!("{f}");
    }
    println!("{} errors", findings.len());
    if findings.is_empty() {
        Ok(())
    } else {
        Err(Failure::Config(format!("check found {} errors", findings.len())))
    }
}

fn impute(project: &Project) -> CmdResult {
    let summary = project.impute()?;
    if summary.reports.is_empty() {
        println!("0 imputations");
    }
    for (name, r) in summary.imputed.iter().zip(&summary.reports) {
        let r2 = r.r2_val.map_or("-".to_string(), fmt_2dp);
        println!(
            "imputed {name}: {} {} (validation R2 {r2})",
            r.method, r.confidence
        );
    }
    Ok(())
}

fn disaggregate(project: &Project) -> CmdResult {
    let run = project.disaggregate()?;
    println!("{} targets written", run.outputs.len());
    if let Some(r) = run.report.max_residual {
        println!("max conservation residual {r:e}");
    }
    for s in &run.report.skipped {
        println!("skipped {} from {}: {}", s.target_id, s.source_region, s.reason);
    }
    Ok(())
}

fn validate(project: &Project) -> CmdResult {
    let outcomes = project.validate()?;
    if outcomes.is_empty() {
        println!("no comparisons");
    }
    for o in &outcomes {
        match (&o.report, &o.error) {
            (Some(r), _) => {
                let flagged: Vec<&str> = r.undefined().collect();
                print!("{}: {} rows", o.name, r.rows.len());
                if !flagged.is_empty() {
                    print!(", UndefinedDeviation for {}", flagged.join(", "));
                }
                if !r.unmatched.is_empty() {
                    print!(", {} unmatched", r.unmatched.len());
                }
                println!();
            }
            (None, Some(e)) => println!("{}: not computed: {e}", o.name),
            (None, None) => {}
        }
    }
    Ok(())
}
