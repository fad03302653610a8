use flockhydro_cli::config::RunConfig;
use flockhydro_cli::{commands, CliError};
use std::process::ExitCode;

const USAGE: &str = "usage: flockhydro <command> [--config <path>] [--key value ...]\n\
commands: coeffs | chi | hydro | kinetic | verify | compare";

fn parse_args() -> Result<RunConfig, CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut command = None;
    let mut config_path = None;
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        if arg == "--help" || arg == "-h" {
            println!("{USAGE}");
            std::process::exit(0);
        } else if arg == "--config" {
            config_path = Some(it.next().ok_or_else(|| {
                CliError::Config("--config expects a path".into())
            })?);
        } else if let Some(key) = arg.strip_prefix("--") {
            let value = it
                .next()
                .ok_or_else(|| CliError::Config(format!("--{key} expects a value")))?;
            overrides.push((key.to_string(), value));
        } else if command.is_none() {
            command = Some(arg);
        } else {
            return Err(CliError::Config(format!("unexpected argument '{arg}'\n{USAGE}")));
        }
    }
    let file_text = match &config_path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
            CliError::Config(format!("cannot read config '{p}': {e}"))
        })?),
        None => None,
    };
    RunConfig::parse(file_text.as_deref(), &overrides, command.as_deref())
}

fn main() -> ExitCode {
    let result = parse_args().and_then(|config| commands::dispatch(&config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
