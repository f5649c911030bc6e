use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use vislabel_server::commands::{self, Counts, SimArgs};
use vislabel_server::{Store, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "vislabel", version, about = "Iterative genus/differentia image labeling")]
struct Cli {
    /// Directory holding session logs.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "vislabel-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a session from a manifest and a session config.
    Init {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Hierarchy file whose categories pre-seed the session.
        #[arg(long)]
        seed: Option<PathBuf>,
    },
    /// Answer a session's prompts with a simulated annotator.
    RunSim {
        #[arg(long)]
        session: String,
        /// Reference taxonomy and ground truth, as written by `synth`.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        flip_p: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
    /// Write a session's dataset export.
    Export {
        #[arg(long)]
        session: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Krippendorff's alpha over sessions (ids or export directories).
    Alpha {
        #[arg(long, value_delimiter = ',', required = true)]
        sessions: Vec<String>,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a synthetic fixture with a reference for `run-sim`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Counts::Expert1)]
        counts: Counts,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        flip_p: f64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let store = Store::new(&cli.data_dir);
    match cli.command {
        Command::Init { manifest, config, seed } => {
            let id = commands::init(&store, &manifest, &config, seed.as_deref())?;
            println!("{id}");
        }
        Command::RunSim {
            session,
            reference,
            flip_p,
            seed,
        } => {
            let stats = commands::run_sim(
                &store,
                &SimArgs {
                    session,
                    reference,
                    flip_p,
                    seed,
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Serve { port, host } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(commands::serve(store, SocketAddr::new(host, port)))?;
        }
        Command::Export { session, out } => {
            let export = commands::export(&store, &session, &out)?;
            println!(
                "{} labeled, {} unassigned -> {}",
                export.rows.len(),
                export.unassigned.len(),
                out.display()
            );
        }
        Command::Alpha { sessions, json } => {
            let summary = commands::alpha(&store, &sessions)?;
            let text = serde_json::to_string_pretty(&summary)?;
            match json {
                Some(path) => std::fs::write(path, text + "\n")?,
                None => println!("{text}"),
            }
            print!("{}", summary.to_table());
        }
        Command::Synth {
            out,
            counts,
            seed,
            flip_p,
        } => {
            let summary = commands::synth(&out, counts, seed, flip_p)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}
