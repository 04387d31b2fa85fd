//! Script resolution and file movement between object storage, the worker
//! and the remote resource.

use std::collections::BTreeMap;

use md5::Md5;
use sha2::{Digest, Sha256};

use crate::adapter::{AdapterError, ResourceAdapter, Session};
use crate::s3::{S3Client, StorageError};

/// A `<bucket>:<key>` object reference (first `:` is the separator).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRef {
    pub bucket: String,
    pub key: String,
}

impl std::str::FromStr for ObjectRef {
    type Err = StagingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (bucket, key) =
            crate::spec::parse_object_ref(s).ok_or_else(|| StagingError::BadRef(s.to_string()))?;
        Ok(ObjectRef {
            bucket: bucket.to_string(),
            key: key.to_string(),
        })
    }
}

impl std::fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.bucket, self.key)
    }
}

/// A job script ready for submission: either its body, or a path that already
/// lives on the remote resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedScript {
    Body(String),
    RemotePath(String),
}

#[derive(Debug, thiserror::Error)]
pub enum StagingError {
    #[error("not a <bucket>:<key> reference: {0:?}")]
    BadRef(String),
    #[error("object {bucket}:{key} missing from storage")]
    ObjectMissing { bucket: String, key: String },
    #[error("script digest mismatch: declared {declared}, computed {computed}")]
    DigestMismatch { declared: String, computed: String },
    #[error("unsupported script digest format ({0} hex chars; expected 32 for MD5 or 64 for SHA-256)")]
    BadDigestFormat(usize),
    #[error("object storage unreachable: {0}")]
    StorageUnreachable(String),
    #[error("object storage failed: {0}")]
    StorageFailed(String),
    #[error("s3 script location configured but no storage endpoint available")]
    MissingStorageClient,
    #[error("input staging unsupported by this resource manager")]
    Unsupported,
    #[error("input delivery failed: {0}")]
    Delivery(#[from] AdapterError),
}

impl From<StorageError> for StagingError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::ObjectMissing { bucket, key } => {
                StagingError::ObjectMissing { bucket, key }
            }
            StorageError::Unreachable(detail) => StagingError::StorageUnreachable(detail),
            other => StagingError::StorageFailed(other.to_string()),
        }
    }
}

/// Resolve the job script from its declared location. Inline resolution makes
/// zero network calls; s3 resolution fetches the object and verifies the
/// declared digest when one is present.
pub async fn resolve_script(
    location: crate::spec::ScriptLocation,
    job_script: &str,
    script_md: Option<&str>,
    storage: Option<&S3Client>,
) -> Result<ResolvedScript, StagingError> {
    use crate::spec::ScriptLocation::*;
    match location {
        Inline => Ok(ResolvedScript::Body(job_script.to_string())),
        Remote => Ok(ResolvedScript::RemotePath(job_script.to_string())),
        S3 => {
            let reference: ObjectRef = job_script.parse()?;
            let storage = storage.ok_or(StagingError::MissingStorageClient)?;
            let bytes = storage.get_object(&reference.bucket, &reference.key).await?;
            if let Some(declared) = script_md {
                verify_digest(&bytes, declared)?;
            }
            Ok(ResolvedScript::Body(String::from_utf8_lossy(&bytes).into_owned()))
        }
    }
}

/// Check a declared hex digest against the content. 32 hex chars is MD5,
/// 64 is SHA-256.
pub fn verify_digest(content: &[u8], declared: &str) -> Result<(), StagingError> {
    let declared = declared.trim().to_ascii_lowercase();
    let computed = match declared.len() {
        32 => hex(&Md5::digest(content)),
        64 => hex(&Sha256::digest(content)),
        n => return Err(StagingError::BadDigestFormat(n)),
    };
    if computed == declared {
        Ok(())
    } else {
        Err(StagingError::DigestMismatch {
            declared,
            computed,
        })
    }
}

/// Fetch every `additionaldata` object and deliver it to the remote resource.
/// Returns the delivered remote paths. Any failure blocks submission.
pub async fn stage_inputs(
    refs: &[String],
    storage: Option<&S3Client>,
    adapter: &dyn ResourceAdapter,
    session: &Session,
    working_dir: &str,
) -> Result<Vec<String>, StagingError> {
    if refs.is_empty() {
        return Ok(Vec::new());
    }
    let storage = storage.ok_or(StagingError::MissingStorageClient)?;
    let mut delivered = Vec::new();
    for raw in refs {
        let reference: ObjectRef = raw.parse()?;
        let bytes = storage.get_object(&reference.bucket, &reference.key).await?;
        let file_name = reference.key.rsplit('/').next().unwrap_or(&reference.key);
        let remote_path = join_remote(working_dir, file_name);
        match adapter.upload_input(session, &remote_path, &bytes).await {
            Ok(()) => delivered.push(remote_path),
            Err(AdapterError::Unsupported) => return Err(StagingError::Unsupported),
            Err(e) => return Err(StagingError::Delivery(e)),
        }
    }
    Ok(delivered)
}

/// Upload output files to the target bucket, creating it if needed. Each
/// storage call is retried 3 times with backoff before giving up.
pub async fn upload_outputs(
    storage: &S3Client,
    bucket: &str,
    files: Vec<(String, Vec<u8>)>,
) -> Result<Vec<String>, StagingError> {
    if files.is_empty() {
        return Ok(Vec::new());
    }
    with_retries(|| storage.create_bucket(bucket)).await?;
    let mut keys = Vec::new();
    for (name, content) in files {
        with_retries(|| storage.put_object(bucket, &name, content.clone())).await?;
        keys.push(name);
    }
    Ok(keys)
}

const STORAGE_ATTEMPTS: u32 = 3;

async fn with_retries<T, F, Fut>(mut call: F) -> Result<T, StagingError>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Result<T, StorageError>>,
{
    let mut backoff = std::time::Duration::from_millis(100);
    let mut last = None;
    for attempt in 0..STORAGE_ATTEMPTS {
        match call().await {
            Ok(v) => return Ok(v),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "storage call failed");
                last = Some(e);
                if attempt + 1 < STORAGE_ATTEMPTS {
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                }
            }
        }
    }
    Err(last.expect("at least one attempt").into())
}

/// Prepend job parameters as environment definitions to a script body,
/// keeping a shebang line first.
pub fn prepend_params(script: &str, params: &BTreeMap<String, String>) -> String {
    if params.is_empty() {
        return script.to_string();
    }
    let exports: String = params
        .iter()
        .map(|(k, v)| format!("export {}='{}'\n", k, v.replace('\'', r"'\''")))
        .collect();
    if let Some(rest) = script.strip_prefix("#!") {
        match rest.split_once('\n') {
            Some((shebang, tail)) => format!("#!{shebang}\n{exports}{tail}"),
            None => format!("{script}\n{exports}"),
        }
    } else {
        format!("{exports}{script}")
    }
}

fn join_remote(dir: &str, file: &str) -> String {
    if dir.is_empty() {
        file.to_string()
    } else {
        format!("{}/{}", dir.trim_end_matches('/'), file)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
