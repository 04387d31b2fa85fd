//! Implementation of the `bridge` CLI: submit/status/kill/delete against an
//! operator's admin API, the self-contained three-step `pipeline` runner, and
//! the `operator` service command.
//!
//! Exit codes are a stable contract: 0 success, 1 remote failure or killed,
//! 2 schema error, 3 duplicate, 4 not found, 5 invalid state. Transport and
//! internal failures use 10.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use bridge_core::operator::{serve_admin, BackoffPolicy, Operator, OperatorConfig, WorkerVehicle};
use bridge_core::spec::parse_spec;
use bridge_core::worker::{self, WorkerConfig};
use bridge_core::{JobKey, StateStore, SystemClock};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REMOTE_FAILED: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_DUPLICATE: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;
pub const EXIT_INVALID_STATE: i32 = 5;
pub const EXIT_INTERNAL: i32 = 10;

pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8080";

#[derive(Parser, Debug)]
#[command(
    name = "bridge",
    about = "Submit, watch, kill and delete jobs on external workload managers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Operator admin API endpoint (env BRIDGE_ENDPOINT).
    #[arg(long, env = "BRIDGE_ENDPOINT", default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    /// Machine-readable JSON output.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Clone)]
pub struct KeyArg {
    /// Job key as `namespace/name`, or a bare name with --namespace.
    pub key: String,
    #[arg(long, default_value = "default")]
    pub namespace: String,
}

impl KeyArg {
    pub fn job_key(&self) -> JobKey {
        match self.key.split_once('/') {
            Some((ns, name)) => JobKey::new(ns, name),
            None => JobKey::new(&self.namespace, &self.key),
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create a job from a BridgeJob document.
    Submit {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Show job status, one-shot or streamed until terminal.
    Status {
        #[command(flatten)]
        key: KeyArg,
        #[arg(long)]
        watch: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Ask for the remote job to be cancelled.
    Kill {
        #[command(flatten)]
        key: KeyArg,
        #[command(flatten)]
        common: Common,
    },
    /// Remove the job, terminating its worker. Idempotent.
    Delete {
        #[command(flatten)]
        key: KeyArg,
        #[command(flatten)]
        common: Common,
    },
    /// Run create / invoke / clean as one self-contained sequence.
    Pipeline {
        file: PathBuf,
        /// Record store root; defaults to a fresh temporary directory.
        #[arg(long)]
        store_root: Option<PathBuf>,
        #[arg(long, default_value = "/credentials")]
        credentials_dir: PathBuf,
        #[arg(long, default_value = "/s3credentials")]
        s3_credentials_dir: PathBuf,
        #[arg(long, default_value = "downloads")]
        downloads_dir: PathBuf,
    },
    /// Run the operator service (spool directory + admin API).
    Operator {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, default_value = "bridge-data/store")]
        store_root: PathBuf,
        /// Directory watched for BridgeJob files (drop = create, remove = delete).
        #[arg(long)]
        specs_dir: Option<PathBuf>,
        #[arg(long, default_value = "/credentials")]
        credentials_dir: PathBuf,
        #[arg(long, default_value = "/s3credentials")]
        s3_credentials_dir: PathBuf,
        #[arg(long, default_value = "downloads")]
        downloads_dir: PathBuf,
        /// Run workers as separate processes using this worker binary
        /// (default: in-process tasks).
        #[arg(long)]
        worker_bin: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        backoff_base_ms: u64,
    },
}

pub async fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Submit { file, common } => cmd_submit(&file, &common).await,
        Command::Status { key, watch, common } => cmd_status(&key.job_key(), watch, &common).await,
        Command::Kill { key, common } => cmd_kill(&key.job_key(), &common).await,
        Command::Delete { key, common } => cmd_delete(&key.job_key(), &common).await,
        Command::Pipeline {
            file,
            store_root,
            credentials_dir,
            s3_credentials_dir,
            downloads_dir,
        } => {
            cmd_pipeline(
                &file,
                store_root,
                credentials_dir,
                s3_credentials_dir,
                downloads_dir,
            )
            .await
        }
        Command::Operator {
            listen,
            store_root,
            specs_dir,
            credentials_dir,
            s3_credentials_dir,
            downloads_dir,
            worker_bin,
            backoff_base_ms,
        } => {
            cmd_operator(
                listen,
                store_root,
                specs_dir,
                credentials_dir,
                s3_credentials_dir,
                downloads_dir,
                worker_bin,
                backoff_base_ms,
            )
            .await
        }
    }
}

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("client builds")
}

/// Map an admin API error response to the exit-code contract.
fn error_exit(status: u16, body: &str, json: bool) -> i32 {
    if json {
        println!("{body}");
    } else {
        let parsed: Value = serde_json::from_str(body).unwrap_or(Value::Null);
        let message = parsed
            .get("error")
            .and_then(Value::as_str)
            .unwrap_or(body)
            .to_string();
        eprintln!("error: {message}");
        if let Some(fields) = parsed.get("fields").and_then(Value::as_array) {
            for field in fields {
                if let Some(f) = field.as_str() {
                    eprintln!("  field: {f}");
                }
            }
        }
    }
    let kind = serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.get("kind").and_then(Value::as_str).map(str::to_string));
    match (status, kind.as_deref()) {
        (400, _) => EXIT_SCHEMA,
        (404, _) => EXIT_NOT_FOUND,
        (409, Some("InvalidState")) => EXIT_INVALID_STATE,
        (409, _) => EXIT_DUPLICATE,
        _ => EXIT_INTERNAL,
    }
}

async fn cmd_submit(file: &std::path::Path, common: &Common) -> i32 {
    let document = match std::fs::read_to_string(file) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return EXIT_SCHEMA;
        }
    };
    // Validate locally first so schema problems are reported even without a
    // reachable operator.
    if let Err(e) = parse_spec(&document) {
        eprintln!("error: {e}");
        return EXIT_SCHEMA;
    }
    let url = format!("{}/v1/jobs", common.endpoint);
    let resp = match http_client().post(&url).body(document).send().await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: operator unreachable at {}: {e}", common.endpoint);
            return EXIT_INTERNAL;
        }
    };
    let status = resp.status().as_u16();
    let body = resp.text().await.unwrap_or_default();
    if status == 201 {
        let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
        if common.json {
            println!("{body}");
        } else {
            println!(
                "{}/{} created",
                parsed.get("namespace").and_then(Value::as_str).unwrap_or("?"),
                parsed.get("name").and_then(Value::as_str).unwrap_or("?"),
            );
        }
        EXIT_OK
    } else {
        error_exit(status, &body, common.json)
    }
}

fn status_line(snapshot: &Value) -> String {
    let field = |name: &str| snapshot.get(name).and_then(Value::as_str).unwrap_or("");
    let mut line = format!(
        "{}/{} {} start={} end={}",
        field("namespace"),
        field("name"),
        field("jobStatus"),
        or_dash(field("startTime")),
        or_dash(field("endTime")),
    );
    if !field("message").is_empty() {
        line.push_str(&format!(" message={:?}", field("message")));
    }
    line
}

fn or_dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

async fn cmd_status(key: &JobKey, watch: bool, common: &Common) -> i32 {
    let url = format!(
        "{}/v1/jobs/{}/{}{}",
        common.endpoint,
        key.namespace,
        key.name,
        if watch { "?watch=true" } else { "" }
    );
    let client = if watch {
        // The watch stream stays open until the job is terminal.
        reqwest::Client::builder().build().expect("client builds")
    } else {
        http_client()
    };
    let resp = match client.get(&url).send().await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: operator unreachable: {e}");
            return EXIT_INTERNAL;
        }
    };
    let status = resp.status().as_u16();
    if status != 200 {
        let body = resp.text().await.unwrap_or_default();
        return error_exit(status, &body, common.json);
    }
    if !watch {
        let body = resp.text().await.unwrap_or_default();
        if common.json {
            println!("{body}");
        } else {
            let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
            println!("{}", status_line(&parsed));
        }
        return EXIT_OK;
    }

    // Streamed watch: print every line until the stream ends (terminal state
    // or deletion).
    let mut resp = resp;
    let mut buffer = Vec::new();
    loop {
        match resp.chunk().await {
            Ok(Some(chunk)) => {
                buffer.extend_from_slice(&chunk);
                while let Some(pos) = buffer.iter().position(|&b| b == b'\n') {
                    let line: Vec<u8> = buffer.drain(..=pos).collect();
                    let text = String::from_utf8_lossy(&line);
                    let text = text.trim();
                    if text.is_empty() {
                        continue;
                    }
                    if common.json {
                        println!("{text}");
                    } else if let Ok(parsed) = serde_json::from_str::<Value>(text) {
                        if parsed.get("deleted").is_some() {
                            println!("{key} deleted");
                        } else {
                            println!("{}", status_line(&parsed));
                        }
                    }
                }
            }
            Ok(None) => return EXIT_OK,
            Err(e) => {
                eprintln!("error: watch stream failed: {e}");
                return EXIT_INTERNAL;
            }
        }
    }
}

async fn cmd_kill(key: &JobKey, common: &Common) -> i32 {
    let url = format!("{}/v1/jobs/{}/{}/kill", common.endpoint, key.namespace, key.name);
    let resp = match http_client().post(&url).send().await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: operator unreachable: {e}");
            return EXIT_INTERNAL;
        }
    };
    let status = resp.status().as_u16();
    let body = resp.text().await.unwrap_or_default();
    if status == 200 {
        if common.json {
            println!("{body}");
        } else {
            println!("{key} kill requested");
        }
        EXIT_OK
    } else {
        error_exit(status, &body, common.json)
    }
}

async fn cmd_delete(key: &JobKey, common: &Common) -> i32 {
    let url = format!("{}/v1/jobs/{}/{}", common.endpoint, key.namespace, key.name);
    let resp = match http_client().delete(&url).send().await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: operator unreachable: {e}");
            return EXIT_INTERNAL;
        }
    };
    let status = resp.status().as_u16();
    let body = resp.text().await.unwrap_or_default();
    if status == 200 {
        if common.json {
            println!("{body}");
        } else {
            println!("{key} deleted");
        }
        EXIT_OK
    } else {
        error_exit(status, &body, common.json)
    }
}

/// The three-step sequence: create the record, run the worker to a terminal
/// state, delete the record. No result is cached between steps; the clean
/// step always runs once the record was created. Exit mirrors the worker.
async fn cmd_pipeline(
    file: &std::path::Path,
    store_root: Option<PathBuf>,
    credentials_dir: PathBuf,
    s3_credentials_dir: PathBuf,
    downloads_dir: PathBuf,
) -> i32 {
    let document = match std::fs::read_to_string(file) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return EXIT_SCHEMA;
        }
    };
    let spec = match parse_spec(&document) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SCHEMA;
        }
    };
    let key = spec.key();
    let store_root = store_root.unwrap_or_else(|| {
        std::env::temp_dir().join(format!(
            "bridge-pipeline-{}-{:08x}",
            std::process::id(),
            rand::random::<u32>()
        ))
    });
    let store = match StateStore::open(&store_root) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot open store at {}: {e}", store_root.display());
            return EXIT_INTERNAL;
        }
    };

    // createop
    let nonce = format!("{:06x}", rand::random::<u32>() & 0xff_ffff);
    if let Err(e) = store.create_record(&key, spec.to_record_data(&nonce)) {
        eprintln!("error: createop failed: {e}");
        return match e {
            bridge_core::StoreError::AlreadyExists(_) => EXIT_DUPLICATE,
            _ => EXIT_INTERNAL,
        };
    }
    println!("createop: {key} record created");

    // invokeop
    let mut cfg = WorkerConfig::new(key.clone(), &store_root, SystemClock::shared());
    cfg.credentials_dir = credentials_dir;
    cfg.s3_credentials_dir = s3_credentials_dir;
    cfg.downloads_dir = downloads_dir;
    let exit = worker::run_with_store(cfg, &store).await;
    println!("invokeop: worker exited with code {exit}");

    // cleanop always runs once the record exists.
    match store.delete_record(&key) {
        Ok(()) => println!("cleanop: {key} record deleted"),
        Err(e) => eprintln!("warning: cleanop failed: {e}"),
    }

    exit
}

#[allow(clippy::too_many_arguments)]
async fn cmd_operator(
    listen: String,
    store_root: PathBuf,
    specs_dir: Option<PathBuf>,
    credentials_dir: PathBuf,
    s3_credentials_dir: PathBuf,
    downloads_dir: PathBuf,
    worker_bin: Option<PathBuf>,
    backoff_base_ms: u64,
) -> i32 {
    let mut config = OperatorConfig::new(&store_root, SystemClock::shared());
    config.specs_dir = specs_dir;
    config.credentials_dir = credentials_dir;
    config.s3_credentials_dir = s3_credentials_dir;
    config.downloads_dir = downloads_dir;
    config.backoff = BackoffPolicy {
        base: Duration::from_millis(backoff_base_ms.max(1)),
        ..BackoffPolicy::default()
    };
    if let Some(program) = worker_bin {
        config.vehicle = WorkerVehicle::Process { program };
    }
    let operator = match Operator::start(config) {
        Ok(op) => op,
        Err(e) => {
            eprintln!("error: cannot start operator: {e}");
            return EXIT_INTERNAL;
        }
    };
    let listener = match tokio::net::TcpListener::bind(&listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {listen}: {e}");
            return EXIT_INTERNAL;
        }
    };
    println!(
        "bridge operator listening on http://{}",
        listener.local_addr().map(|a| a.to_string()).unwrap_or(listen)
    );
    match serve_admin(operator, listener).await {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: admin API failed: {e}");
            EXIT_INTERNAL
        }
    }
}
