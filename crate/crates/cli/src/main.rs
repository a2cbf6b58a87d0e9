mod args;
mod commands;
mod config;
mod imageio;
mod pairs;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenRefs(a) => commands::gen_refs(a),
        Command::Distort(a) => commands::distort(a),
        Command::Train(a) => commands::train(a),
        Command::Enhance(a) => commands::enhance_cmd(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
