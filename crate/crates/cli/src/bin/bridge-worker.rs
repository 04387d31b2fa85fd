//! Worker process entry point. Configuration comes entirely from the
//! environment (`NAMESPACE`, `JOBNAME`, `BRIDGE_STORE_ROOT`, ...); the job
//! record holds everything else.

use bridge_core::worker::{self, WorkerConfig};
use bridge_core::SystemClock;

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cfg = match WorkerConfig::from_env(SystemClock::shared()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("bridge-worker: {e}");
            std::process::exit(worker::EXIT_FATAL);
        }
    };
    let code = worker::run(cfg).await;
    std::process::exit(code);
}
