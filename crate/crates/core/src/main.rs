use clap::Parser;
use env_logger::Env;

use thresholdyn::cli::{run, Cli};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(Env::new().filter_or("THRESHOLDYN_LOG", "info")).format_timestamp(None).init();
    run(Cli::parse())?;
    Ok(())
}
