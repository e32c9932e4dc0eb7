// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ecig_core::clock::SystemClock;
use ecig_core::smproto::SECURITY_MANAGER_TA;
use ecig_secmgr::{build_world, train_offline, SwConfig};
use rand::RngCore;

/// Secure-world host process for the edge gateway.
#[derive(Parser)]
#[command(name = "ecig-sw", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Listen on the configured socket and serve the normal world.
    Serve {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Record the reference digest of a normal-world image.
    Train {
        #[arg(long, short)]
        config: PathBuf,
        /// Image the normal world will present at session open.
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = SECURITY_MANAGER_TA)]
        ta: String,
    },
    /// Print a fresh random 32-byte key as hex.
    Keygen,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Serve { config } => {
            let cfg = SwConfig::load(&config)?;
            let world = build_world(&cfg, Arc::new(SystemClock::new()))?;
            eprintln!(
                "ecig-sw: {:?} mode, listening on {}",
                cfg.mode,
                cfg.socket.display()
            );
            world
                .serve(&cfg.socket)
                .with_context(|| format!("serving on {}", cfg.socket.display()))?;
        }
        Cmd::Train { config, image, ta } => {
            let cfg = SwConfig::load(&config)?;
            let m = train_offline(&cfg, &ta, &image)?;
            println!("{ta} {:?} {}", m.algorithm, m.hex());
        }
        Cmd::Keygen => {
            let mut k = [0u8; 32];
            rand::rng().fill_bytes(&mut k);
            println!("{}", hex::encode(k));
        }
    }
    Ok(())
}
