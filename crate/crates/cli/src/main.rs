use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use solarlink::scenario::{self, Scenario};
use solarlink::server::{MemorySink, NotificationSink};
use solarlink_server::{AppState, Clock, WebhookSink};

#[derive(Debug, Parser)]
#[command(name = "solarlink", version, about = "Simulated remote solar monitoring over a phone line")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        /// Built-in scenario name or path to a scenario TOML file.
        scenario: String,
        /// Output directory for artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Keep the HTTP API up after the run, with the clock still going.
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Simulated seconds per wall-clock second while serving.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// POST alarm notifications to this URL.
        #[arg(long)]
        webhook: Option<String>,
    },
    /// List built-in scenarios.
    List,
    /// Print a built-in scenario as TOML.
    Describe { name: String },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::List => {
            for (name, description) in scenario::list() {
                println!("{name:<16} {description}");
            }
        }
        Command::Describe { name } => print!("{}", scenario::describe(&name)?),
        Command::Run {
            scenario: which,
            out,
            seed,
            serve,
            addr,
            speed,
            webhook,
        } => {
            if !(speed > 0.0 && speed.is_finite()) {
                return Err("--speed must be a positive number".into());
            }
            let mut s = Scenario::resolve(&which)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let sink: Box<dyn NotificationSink> = match webhook {
                Some(url) => Box::new(WebhookSink::new(url)),
                None => Box::new(MemorySink::default()),
            };
            let sim = scenario::run_with_sink(s, &out, sink)?;
            scenario::render_summary(&sim.summary(), std::io::stdout().lock())?;
            println!("artifacts in {}", out.display());
            if serve {
                serve_api(sim, addr, speed)?;
            }
        }
    }
    Ok(())
}

fn serve_api(sim: scenario::Simulation, addr: SocketAddr, speed: f64) -> std::io::Result<()> {
    let state = AppState::new(sim);
    let _clock = Clock::start(state.simulation(), speed);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        solarlink_server::serve(state, listener).await
    })
}
