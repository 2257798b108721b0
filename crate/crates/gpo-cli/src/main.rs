use clap::error::ErrorKind;
use clap::Parser;
use gpo_cli::{run, Cli, CliError};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let head = msg.split("\n\nUsage:").next().unwrap_or("");
            let line = head.split_whitespace().collect::<Vec<_>>().join(" ");
            let err = CliError::Usage(line.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.record());
            eprint!("{msg}");
            std::process::exit(err.exit_code());
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("{}", err.record());
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
