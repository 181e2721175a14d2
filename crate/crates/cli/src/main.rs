use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;

use args::{Cli, Command};

/// Raised when a gradient check exceeds its threshold.
#[derive(Debug)]
pub struct GradcheckFailed(pub f64);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "worst relative error {:.3e} exceeds {:.0e}",
            self.0,
            lbnl_core::gradcheck::THRESHOLD
        )
    }
}

impl std::error::Error for GradcheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use lbnl_core::ErrorKind;
    if err.downcast_ref::<GradcheckFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<lbnl_core::Error>().map(lbnl_core::Error::kind) {
        Some(ErrorKind::Numeric) => 3,
        Some(ErrorKind::Divergence) => 4,
        Some(ErrorKind::Validation) | None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Init(a) => commands::init(a),
        Command::Synth(a) => commands::synth(a),
        Command::Rerank(a) => commands::rerank(a),
        Command::Train(a) => commands::train(a),
        Command::Merge(a) => commands::merge(a),
        Command::Mine(a) => commands::mine(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
