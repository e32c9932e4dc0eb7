// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ecig_core::access::Role;
use ecig_core::clock::SystemClock;
use ecig_gateway::auth::{make_user, UserFile, DEFAULT_ITERATIONS};
use ecig_gateway::{GatewayConfig, GatewayServer};

#[derive(Parser)]
#[command(name = "ecig-gateway", version, about = "Edge gateway REST server")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the REST API until interrupted.
    Serve {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Append a user to a user file. Reads the password from stdin.
    AddUser {
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        user_id: String,
        #[arg(long)]
        role: Role,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iterations: u32,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Serve { config } => {
            let cfg = GatewayConfig::load(&config)?;
            let server = GatewayServer::spawn(cfg, Arc::new(SystemClock::new())).context("starting gateway")?;
            eprintln!("ecig-gateway: listening on {}", server.base_url());
            server.join();
            Ok(())
        }
        Cmd::AddUser {
            users,
            user_id,
            role,
            iterations,
        } => {
            let mut file = if users.exists() {
                UserFile::load(&users)?
            } else {
                UserFile::default()
            };
            if file.users.iter().any(|u| u.user_id == user_id) {
                bail!("user `{user_id}` already exists");
            }
            eprint!("password: ");
            std::io::stderr().flush()?;
            let mut password = String::new();
            std::io::stdin().lock().read_line(&mut password)?;
            let password = password.trim_end_matches(['\r', '\n']);
            if password.is_empty() {
                bail!("empty password");
            }
            file.users.push(make_user(&user_id, role, password, iterations));
            std::fs::write(&users, file.to_toml()).with_context(|| format!("writing {}", users.display()))?;
            Ok(())
        }
    }
}
