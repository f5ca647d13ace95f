mod args;
mod commands;
mod error;
mod inputs;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::Context;
use error::{CliError, CliResult};
use manifest::RunManifest;

fn one_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(cli: &Cli, argv: Vec<String>) -> CliResult<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut ctx = Context::new(&cli.global);
    let name = match &cli.command {
        Command::Aggregate(a) => commands::cmd_aggregate(&mut ctx, a).map(|_| "aggregate"),
        Command::Rank(a) => commands::cmd_rank(&mut ctx, a).map(|_| "rank"),
        Command::Distill(a) => commands::cmd_distill(&mut ctx, a).map(|_| "distill"),
        Command::Finetune(a) => commands::cmd_finetune(&mut ctx, a).map(|_| "finetune"),
        Command::Score(a) => commands::cmd_score(&mut ctx, a).map(|_| "score"),
        Command::Simulate(a) => commands::cmd_simulate(&mut ctx, a).map(|_| "simulate"),
        Command::Repair(a) => commands::cmd_repair(&mut ctx, a).map(|_| "repair"),
    }?;
    let manifest = RunManifest {
        schema: 1,
        tool: "seqagg",
        version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        args: argv,
        config: ctx.config,
        seed: cli.global.seed,
        threads: rayon::current_num_threads(),
        inputs: ctx.reader.digests,
        outputs: ctx.outputs,
        timings: ctx.timings,
    };
    match &cli.global.manifest {
        Some(path) => std::fs::write(path, manifest.to_json() + "\n").map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => {
            eprintln!("{}", manifest.to_compact_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprintln!("error: a subcommand is required (see --help)");
            return ExitCode::from(1);
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(1);
        }
    };
    match run(&cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
