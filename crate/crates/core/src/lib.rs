//! Core of the bridge orchestration service: declarative BridgeJob documents,
//! a durable versioned state store, resource-manager adapters (Slurm-style and
//! LSF-style), the per-job worker loop, and the reconciling operator that ties
//! them together.
//!
//! The operator watches job documents (spool directory or admin HTTP API),
//! keeps one record per job in the [`store::StateStore`], and runs one
//! [`worker`] per job. Workers submit to an external workload manager over
//! HTTP, poll status, honor kill flags, stage files through S3-compatible
//! storage, and survive crashes without duplicating remote jobs.

pub mod adapter;
pub mod clock;
pub mod credentials;
pub mod operator;
pub mod s3;
pub mod spec;
pub mod staging;
pub mod state;
pub mod store;
pub mod worker;

pub use clock::{Clock, ManualClock, SharedClock, SystemClock};
pub use spec::{AdapterKind, BridgeJobSpec, SchemaError, ScriptLocation};
pub use state::BridgeState;
pub use store::{JobKey, JobRecord, StateStore, StoreError};
