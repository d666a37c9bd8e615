use std::process::ExitCode;

use clap::Parser;
use panobox::{logging, Cli, Diagnostics};

fn main() -> ExitCode {
    logging::init();
    match panobox::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(d) = e.downcast_ref::<Diagnostics>() {
                for r in &d.records {
                    log::error!("{}: {r}", d.context);
                }
            }
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
