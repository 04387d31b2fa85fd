//! Standalone mock resources for demos and end-to-end runs:
//! `bridge-mock slurm|lsf|s3 --port ...`.

use std::sync::Arc;

use clap::{Parser, Subcommand};

use bridge_core::{ManualClock, SharedClock, SystemClock};
use bridge_mocks::{
    faults, lsf, manager::ManagerCore, objectstore, slurm, FaultGate, FaultPlan, FinalState,
    MockCredentials, ObjectStoreCore, Timeline,
};

#[derive(Parser)]
#[command(name = "bridge-mock", about = "Deterministic mock resource managers and object store")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ManagerArgs {
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, default_value = "bridgeuser")]
    username: String,
    #[arg(long, default_value = "bridge-token")]
    token: String,
    /// Seconds a job spends pending.
    #[arg(long, default_value_t = 1)]
    pending_s: u64,
    /// Seconds a job spends running.
    #[arg(long, default_value_t = 2)]
    running_s: u64,
    /// Terminal state jobs reach: completed or failed.
    #[arg(long, default_value = "completed")]
    final_state: String,
    /// Use a manually stepped clock driven by POST /_mock/advance.
    #[arg(long)]
    manual_clock: bool,
    /// Initial fault plan: fail this many requests with a connection error.
    #[arg(long, default_value_t = 0)]
    drop_next: u32,
    /// Initial fault plan: reject submissions.
    #[arg(long)]
    reject_submits: bool,
    /// Initial fault plan: delay every response this many milliseconds.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Template for rendered job outputs ({id}, {name}, {state}, {file}).
    #[arg(long)]
    output_template: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Slurm-style workload manager.
    Slurm(ManagerArgs),
    /// LSF-style workload manager.
    Lsf(ManagerArgs),
    /// S3-compatible object store.
    S3 {
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long, default_value = "bridgekey")]
        access_key: String,
    },
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Slurm(args) => run_manager(args, true).await,
        Command::Lsf(args) => run_manager(args, false).await,
        Command::S3 { port, access_key } => {
            let clock = SystemClock::shared();
            let core = Arc::new(ObjectStoreCore::new(&access_key));
            let gate = Arc::new(FaultGate::new(clock));
            let router = objectstore::objectstore_router(core, gate.clone());
            let listener =
                tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
            println!("bridge-mock s3 listening on http://{}", listener.local_addr()?);
            faults::serve_with_faults(listener, router, gate).await;
            Ok(())
        }
    }
}

async fn run_manager(args: ManagerArgs, is_slurm: bool) -> std::io::Result<()> {
    let (clock, manual): (SharedClock, Option<Arc<ManualClock>>) = if args.manual_clock {
        let manual = ManualClock::shared();
        (manual.clone(), Some(manual))
    } else {
        (SystemClock::shared(), None)
    };
    let core = Arc::new(ManagerCore::new(
        clock.clone(),
        manual,
        MockCredentials {
            username: args.username,
            token: args.token,
        },
    ));
    core.set_timeline(Timeline {
        pending: std::time::Duration::from_secs(args.pending_s),
        running: std::time::Duration::from_secs(args.running_s),
    });
    core.set_final_state(match args.final_state.as_str() {
        "failed" => FinalState::Failed,
        _ => FinalState::Completed,
    });
    if let Some(template) = args.output_template {
        core.set_output_template(template);
    }
    let gate = Arc::new(FaultGate::new(clock));
    gate.set_plan(FaultPlan {
        drop_next: args.drop_next,
        reject_submits: args.reject_submits,
        latency_ms: args.latency_ms,
    });
    let router = if is_slurm {
        slurm::slurm_router(core, gate.clone())
    } else {
        lsf::lsf_router(core, gate.clone())
    };
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", args.port)).await?;
    let flavor = if is_slurm { "slurm" } else { "lsf" };
    println!(
        "bridge-mock {flavor} listening on http://{}",
        listener.local_addr()?
    );
    faults::serve_with_faults(listener, router, gate).await;
    Ok(())
}
