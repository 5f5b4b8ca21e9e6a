mod args;
mod commands;
mod io;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use dynalloc::{Error, ErrorClass};

use crate::args::{expand_args, Cli};

fn fail(class: &str, code: u8, message: &str) -> ExitCode {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("dynalloc: error class={class} code={code}: {line}");
    ExitCode::from(code)
}

fn report(e: &Error) -> ExitCode {
    match e.class() {
        ErrorClass::Config => fail("config", 2, &e.to_string()),
        ErrorClass::Data => fail("data", 3, &e.to_string()),
        ErrorClass::Numerical => fail("numerical", 4, &e.to_string()),
    }
}

fn main() -> ExitCode {
    let argv = match expand_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("config", 2, first.trim_start_matches("error: "));
        }
    };
    if let Some(n) = cli.command.common().threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            return fail("config", 2, &e.to_string());
        }
    }
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
