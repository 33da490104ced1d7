use std::path::PathBuf;
use std::process::ExitCode;

use g2lab::cli::{self, CliError, OutputFormat, RunConfig};

const USAGE: &str = "usage: g2lab --config PATH [--seed N] [--output DIR] [--format csv|json]";

struct Args {
    config: PathBuf,
    seed: Option<u64>,
    output: Option<PathBuf>,
    format: Option<OutputFormat>,
}

fn parse_args() -> Result<Args, CliError> {
    let mut config = None;
    let mut seed = None;
    let mut output = None;
    let mut format = None;
    let mut argv = std::env::args().skip(1);
    while let Some(arg) = argv.next() {
        let mut value = |name: &str| -> Result<String, CliError> {
            argv.next().ok_or_else(|| CliError {
                code: 2,
                message: format!("{name} requires a value\n{USAGE}"),
            })
        };
        match arg.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--seed" => {
                let raw = value("--seed")?;
                seed = Some(raw.parse::<u64>().map_err(|_| CliError {
                    code: 2,
                    message: format!("--seed: bad integer `{raw}`"),
                })?);
            }
            "--output" => output = Some(PathBuf::from(value("--output")?)),
            "--format" => {
                format = Some(match value("--format")?.as_str() {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    other => {
                        return Err(CliError {
                            code: 2,
                            message: format!("--format: expected csv or json, got `{other}`"),
                        })
                    }
                });
            }
            "--help" | "-h" => {
                return Err(CliError {
                    code: 2,
                    message: USAGE.to_string(),
                })
            }
            other => {
                return Err(CliError {
                    code: 2,
                    message: format!("unknown argument `{other}`\n{USAGE}"),
                })
            }
        }
    }
    let config = config.ok_or_else(|| CliError {
        code: 2,
        message: format!("--config is required\n{USAGE}"),
    })?;
    Ok(Args {
        config,
        seed,
        output,
        format,
    })
}

fn load_config(args: &Args) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError {
        code: 4,
        message: format!("cannot read {}: {e}", args.config.display()),
    })?;
    let mut config = cli::parse_config(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(output) = &args.output {
        config.output = output.clone();
    }
    if let Some(format) = args.format {
        config.format = format;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let result = parse_args().and_then(|args| {
        let config = load_config(&args)?;
        cli::run(&config)
    });
    match result {
        Ok(report) => {
            println!("{}", cli::to_json_string(&report));
            ExitCode::from(if report.pass { 0 } else { 1 })
        }
        Err(err) => {
            eprintln!(
                "{{\"error\":{},\"code\":{}}}",
                serde_json::to_string(&err.message).unwrap_or_else(|_| "\"?\"".into()),
                err.code
            );
            ExitCode::from(err.code as u8)
        }
    }
}
