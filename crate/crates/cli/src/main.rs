use clap::error::ErrorKind;
use clap::Parser;
use std::io::Write;
use std::process::ExitCode;

use privsphere_cli::{run, Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim().to_string())),
    };
    match run(cli) {
        Ok(out) => {
            if !out.stdout.is_empty() {
                print!("{}", out.stdout);
                if !out.stdout.ends_with('\n') {
                    println!();
                }
                let _ = std::io::stdout().flush();
            }
            match out.error {
                Some(err) => fail(&err),
                None if out.ok => ExitCode::SUCCESS,
                None => ExitCode::FAILURE,
            }
        }
        Err(err) => fail(&err),
    }
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}
