// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::Parser;
use ecig_plcsim::{start_fleet, FleetConfig};

/// Serve a simulated PLC fleet until interrupted.
#[derive(Parser)]
#[command(name = "plcsim", version)]
struct Cli {
    /// Fleet configuration file.
    #[arg(long, short)]
    config: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = FleetConfig::load(&cli.config)?;
    let fleet = start_fleet(&cfg)?;
    for a in &fleet {
        eprintln!("plcsim: asset {} on {}", a.asset_id(), a.endpoint());
    }
    loop {
        std::thread::park();
    }
}
