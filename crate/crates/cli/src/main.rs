use clap::Parser;
use membrane_tree_cli::{exit_code, run, Cli, CliError, Hooks, RunConfig, EXIT_INVALID};

const THREADS_ENV: &str = "MEMBRANE_TREE_THREADS";

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Invalid(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Invalid(e.to_string()))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = configure_threads()
        .and_then(|()| RunConfig::from_cli(cli))
        .and_then(|config| run(&config, &Hooks::default()));
    match &result {
        Ok(artifacts) => {
            for f in &artifacts.files {
                println!("{}", f.display());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(exit_code(&result));
}
