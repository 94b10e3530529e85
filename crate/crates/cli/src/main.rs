mod args;
mod commands;
mod run;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command, Common, EvaluateCommand, MetricsCommand, ReplayArgs};
use run::{Invocation, RunRecord};

/// Malformed command-line input that clap itself cannot reject.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_MISSING_MODEL: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<effort_core::Error>() {
            return match e {
                effort_core::Error::Io { .. } => EXIT_IO,
                effort_core::Error::MissingModel(_) => EXIT_MISSING_MODEL,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn resolve(command: &Command) -> Result<Option<(Invocation, &Common)>> {
    Ok(Some(match command {
        Command::Metrics(MetricsCommand::Extract(a)) => (run::resolve_extract(a)?, &a.common),
        Command::Metrics(MetricsCommand::Baseline(a)) => (run::resolve_baseline(a)?, &a.common),
        Command::Synth(a) => (run::resolve_synth(a)?, &a.common),
        Command::Augment(a) => (run::resolve_augment(a)?, &a.common),
        Command::Train(a) => (run::resolve_train(a)?, &a.common),
        Command::Generate(a) => (run::resolve_generate(a)?, &a.common),
        Command::Evaluate(EvaluateCommand::Trend(a)) => (run::resolve_trend(a)?, &a.common),
        Command::Replay(_) => return Ok(None),
    }))
}

fn record_and_execute(record: &RunRecord, run_json: Option<&std::path::Path>) -> Result<()> {
    commands::execute(&record.invocation)?;
    let path = run_json
        .map(ToOwned::to_owned)
        .unwrap_or_else(|| record.invocation.default_run_json());
    record.save(&path)?;
    log::info!("run recorded in {}", path.display());
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let mut record = RunRecord::load(&a.run)?;
    if record.version != run::VERSION {
        log::warn!(
            "run was recorded by {}, replaying with {}",
            record.version,
            run::VERSION
        );
    }
    if let Some(dir) = &a.out_dir {
        record.invocation.redirect(&std::path::absolute(dir)?);
    }
    record.version = run::VERSION.to_owned();
    record_and_execute(&record, a.run_json.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let result = match &cli.command {
        Command::Replay(a) => replay(a),
        command => resolve(command).and_then(|r| {
            let (invocation, common) = r.expect("non-replay commands resolve");
            record_and_execute(&RunRecord::new(invocation), common.run_json.as_deref())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
