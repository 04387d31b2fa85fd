//! The BridgeJob document: parsing, validation and defaulting.
//!
//! A document is YAML with top-level `kind`, `apiVersion`, `metadata.name`
//! and a `spec` block. Validation is aggregate: every missing or invalid
//! field is reported in one [`SchemaError`], not just the first.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use crate::store::{keys, JobKey};

pub const KIND: &str = "BridgeJob";
pub const API_VERSION: &str = "bridgeoperator.ibm.com/v1alpha1";
pub const DEFAULT_NAMESPACE: &str = "default";
pub const DEFAULT_UPDATE_INTERVAL: u64 = 20;
pub const DEFAULT_IMAGE_PULL_POLICY: &str = "IfNotPresent";

/// Which resource-manager adapter drives the job. Stands in for the
/// controller-pod image name in the original document format; an `image:`
/// key is still accepted and mapped by substring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Slurm,
    Lsf,
}

impl AdapterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdapterKind::Slurm => "slurm",
            AdapterKind::Lsf => "lsf",
        }
    }
}

impl std::fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slurm" => Ok(AdapterKind::Slurm),
            "lsf" => Ok(AdapterKind::Lsf),
            other => Err(format!("unknown adapter kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptLocation {
    Remote,
    S3,
    Inline,
}

impl ScriptLocation {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScriptLocation::Remote => "remote",
            ScriptLocation::S3 => "s3",
            ScriptLocation::Inline => "inline",
        }
    }
}

impl FromStr for ScriptLocation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(ScriptLocation::Remote),
            "s3" => Ok(ScriptLocation::S3),
            "inline" => Ok(ScriptLocation::Inline),
            other => Err(format!("unknown script location {other:?}")),
        }
    }
}

/// A parsed, validated BridgeJob document with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeJobSpec {
    pub name: String,
    pub namespace: String,
    pub resource_url: String,
    pub adapter_kind: AdapterKind,
    pub resource_secret: String,
    /// Accepted for schema fidelity; no runtime behavior.
    pub image_pull_policy: String,
    /// Seconds between monitor polls, >= 1.
    pub update_interval: u64,
    pub job_data: JobData,
    pub s3_storage: S3Storage,
    pub s3_upload: S3Upload,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JobData {
    /// Script path, `bucket:key` reference, or inline body depending on location.
    pub job_script: String,
    pub script_location: Option<ScriptLocation>,
    pub script_md: Option<String>,
    pub script_extra_loc: Option<String>,
    pub additional_data: Vec<String>,
    pub job_properties: BTreeMap<String, String>,
    pub job_params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct S3Storage {
    pub s3_secret: Option<String>,
    pub endpoint: Option<String>,
    pub secure: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct S3Upload {
    pub bucket: Option<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldProblem {
    pub field: String,
    pub reason: String,
}

/// Aggregate validation failure naming every offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SchemaError {
    pub problems: Vec<FieldProblem>,
}

impl SchemaError {
    pub fn fields(&self) -> Vec<&str> {
        self.problems.iter().map(|p| p.field.as_str()).collect()
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.problems.iter().any(|p| p.field == field)
    }
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid BridgeJob document:")?;
        for p in &self.problems {
            write!(f, "\n  {}: {}", p.field, p.reason)?;
        }
        Ok(())
    }
}

struct Problems(Vec<FieldProblem>);

impl Problems {
    fn push(&mut self, field: impl Into<String>, reason: impl Into<String>) {
        self.0.push(FieldProblem {
            field: field.into(),
            reason: reason.into(),
        });
    }
}

/// Parse and validate a BridgeJob document, applying defaults
/// (`updateinterval` 20, `imagepullpolicy` "IfNotPresent", `secure` false,
/// namespace "default").
pub fn parse_spec(document: &str) -> Result<BridgeJobSpec, SchemaError> {
    let root: Value = match serde_yaml::from_str(document) {
        Ok(v) => v,
        Err(e) => {
            return Err(SchemaError {
                problems: vec![FieldProblem {
                    field: "document".into(),
                    reason: format!("not well-formed YAML: {e}"),
                }],
            })
        }
    };
    let mut problems = Problems(Vec::new());

    match str_at(&root, &["kind"]) {
        Some(k) if k == KIND => {}
        Some(k) => problems.push("kind", format!("expected {KIND:?}, got {k:?}")),
        None => problems.push("kind", "missing required field"),
    }
    if str_at(&root, &["apiVersion"]).map_or(true, |v| v.is_empty()) {
        problems.push("apiVersion", "missing required field");
    }

    let name = match str_at(&root, &["metadata", "name"]) {
        Some(n) => {
            if !is_valid_identifier(&n) {
                problems.push(
                    "metadata.name",
                    "must match [a-z0-9]([-a-z0-9]*[a-z0-9])?",
                );
            }
            n
        }
        None => {
            problems.push("metadata.name", "missing required field");
            String::new()
        }
    };
    let namespace = match str_at(&root, &["metadata", "namespace"]) {
        Some(ns) => {
            if !is_valid_identifier(&ns) {
                problems.push(
                    "metadata.namespace",
                    "must match [a-z0-9]([-a-z0-9]*[a-z0-9])?",
                );
            }
            ns
        }
        None => DEFAULT_NAMESPACE.to_string(),
    };

    let spec = root.get("spec");
    if spec.is_none() {
        problems.push("spec", "missing required field");
    }
    let spec = spec.cloned().unwrap_or(Value::Null);

    let resource_url = match str_at(&spec, &["resourceURL"]) {
        Some(u) => {
            match url::Url::parse(&u) {
                Ok(parsed) if parsed.scheme() == "http" || parsed.scheme() == "https" => {}
                Ok(parsed) => problems.push(
                    "resourceURL",
                    format!("scheme must be http or https, got {:?}", parsed.scheme()),
                ),
                Err(e) => problems.push("resourceURL", format!("not an absolute URL: {e}")),
            }
            u
        }
        None => {
            problems.push("resourceURL", "missing required field");
            String::new()
        }
    };

    let adapter_kind = parse_adapter_kind(&spec, &mut problems);

    let resource_secret = match str_at(&spec, &["resourcesecret"]) {
        Some(s) if !s.is_empty() => s,
        _ => {
            problems.push("resourcesecret", "missing required field");
            String::new()
        }
    };

    let image_pull_policy =
        str_at(&spec, &["imagepullpolicy"]).unwrap_or_else(|| DEFAULT_IMAGE_PULL_POLICY.into());

    let update_interval = match spec.get("updateinterval") {
        None => DEFAULT_UPDATE_INTERVAL,
        Some(v) => match int_value(v) {
            Some(n) if n >= 1 => n,
            Some(_) => {
                problems.push("updateinterval", "must be >= 1");
                DEFAULT_UPDATE_INTERVAL
            }
            None => {
                problems.push("updateinterval", "must be a positive integer");
                DEFAULT_UPDATE_INTERVAL
            }
        },
    };

    let mut job_data = JobData::default();
    match spec.get("jobdata") {
        None => problems.push("jobdata", "missing required field"),
        Some(jd) => {
            job_data.job_script = match str_at(jd, &["jobscript"]) {
                Some(s) if !s.is_empty() => s,
                _ => {
                    problems.push("jobdata.jobscript", "missing required field");
                    String::new()
                }
            };
            job_data.script_location = match str_at(jd, &["scriptlocation"]) {
                Some(loc) => match loc.parse::<ScriptLocation>() {
                    Ok(l) => Some(l),
                    Err(e) => {
                        problems.push("jobdata.scriptlocation", e);
                        None
                    }
                },
                None => {
                    problems.push("jobdata.scriptlocation", "missing required field");
                    None
                }
            };
            job_data.script_md = str_at(jd, &["scriptmd"]).filter(|s| !s.is_empty());
            job_data.script_extra_loc = str_at(jd, &["scriptextraloc"]).filter(|s| !s.is_empty());
            job_data.additional_data =
                string_list(jd.get("additionaldata"), "jobdata.additionaldata", &mut problems);
            job_data.job_properties =
                string_map(jd.get("jobproperties"), "jobdata.jobproperties", &mut problems);
            job_data.job_params =
                string_map(jd.get("jobparams"), "jobdata.jobparams", &mut problems);
        }
    }

    let mut s3_storage = S3Storage::default();
    if let Some(s3) = spec.get("s3storage") {
        s3_storage.s3_secret = str_at(s3, &["s3secret"]).filter(|s| !s.is_empty());
        s3_storage.endpoint = str_at(s3, &["endpoint"]).filter(|s| !s.is_empty());
        s3_storage.secure = match s3.get("secure") {
            None => false,
            Some(v) => match bool_value(v) {
                Some(b) => b,
                None => {
                    problems.push("s3storage.secure", "must be a boolean");
                    false
                }
            },
        };
    }

    let mut s3_upload = S3Upload::default();
    if let Some(up) = spec.get("s3upload") {
        s3_upload.bucket = str_at(up, &["bucket"]).filter(|s| !s.is_empty());
        s3_upload.files = string_list(up.get("files"), "s3upload.files", &mut problems);
    }

    // Cross-field invariants.
    if job_data.script_location == Some(ScriptLocation::S3) {
        if !job_data.job_script.is_empty() && parse_object_ref(&job_data.job_script).is_none() {
            problems.push(
                "jobdata.jobscript",
                "scriptlocation is s3, expected a <bucket>:<key> reference",
            );
        }
        if s3_storage.endpoint.is_none() {
            problems.push(
                "s3storage.endpoint",
                "required when jobdata.scriptlocation is s3",
            );
        }
    }
    if !s3_upload.files.is_empty() {
        if s3_upload.bucket.is_none() {
            problems.push("s3upload.bucket", "required when s3upload.files is non-empty");
        }
        if s3_storage.endpoint.is_none() {
            problems.push(
                "s3storage.endpoint",
                "required when s3upload.files is non-empty",
            );
        }
    }

    if !problems.0.is_empty() {
        return Err(SchemaError { problems: problems.0 });
    }

    Ok(BridgeJobSpec {
        name,
        namespace,
        resource_url,
        adapter_kind: adapter_kind.expect("validated above"),
        resource_secret,
        image_pull_policy,
        update_interval,
        job_data,
        s3_storage,
        s3_upload,
    })
}

fn parse_adapter_kind(spec: &Value, problems: &mut Problems) -> Option<AdapterKind> {
    if let Some(kind) = str_at(spec, &["adapterKind"]) {
        return match kind.parse::<AdapterKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                problems.push("adapterKind", e);
                None
            }
        };
    }
    // Original document format names a controller-pod docker image instead.
    if let Some(image) = str_at(spec, &["image"]) {
        let lowered = image.to_ascii_lowercase();
        return if lowered.contains("slurm") {
            Some(AdapterKind::Slurm)
        } else if lowered.contains("lsf") {
            Some(AdapterKind::Lsf)
        } else {
            problems.push(
                "image",
                format!("cannot map image {image:?} to a known adapter (slurm, lsf)"),
            );
            None
        };
    }
    problems.push("adapterKind", "missing required field (or spec.image)");
    None
}

impl BridgeJobSpec {
    pub fn key(&self) -> JobKey {
        JobKey::new(&self.namespace, &self.name)
    }

    /// Serialize back to the document format. `parse_spec(to_document(s)) == s`.
    pub fn to_document(&self) -> String {
        let mut spec = serde_yaml::Mapping::new();
        let ins = |m: &mut serde_yaml::Mapping, k: &str, v: Value| {
            m.insert(Value::String(k.to_string()), v);
        };
        ins(&mut spec, "resourceURL", Value::String(self.resource_url.clone()));
        ins(
            &mut spec,
            "adapterKind",
            Value::String(self.adapter_kind.as_str().into()),
        );
        ins(
            &mut spec,
            "resourcesecret",
            Value::String(self.resource_secret.clone()),
        );
        ins(
            &mut spec,
            "imagepullpolicy",
            Value::String(self.image_pull_policy.clone()),
        );
        ins(
            &mut spec,
            "updateinterval",
            Value::Number(self.update_interval.into()),
        );

        let mut jobdata = serde_yaml::Mapping::new();
        ins(&mut jobdata, "jobscript", Value::String(self.job_data.job_script.clone()));
        if let Some(loc) = self.job_data.script_location {
            ins(&mut jobdata, "scriptlocation", Value::String(loc.as_str().into()));
        }
        if let Some(md) = &self.job_data.script_md {
            ins(&mut jobdata, "scriptmd", Value::String(md.clone()));
        }
        if let Some(extra) = &self.job_data.script_extra_loc {
            ins(&mut jobdata, "scriptextraloc", Value::String(extra.clone()));
        }
        if !self.job_data.additional_data.is_empty() {
            ins(
                &mut jobdata,
                "additionaldata",
                Value::Sequence(
                    self.job_data
                        .additional_data
                        .iter()
                        .map(|s| Value::String(s.clone()))
                        .collect(),
                ),
            );
        }
        if !self.job_data.job_properties.is_empty() {
            ins(&mut jobdata, "jobproperties", map_value(&self.job_data.job_properties));
        }
        if !self.job_data.job_params.is_empty() {
            ins(&mut jobdata, "jobparams", map_value(&self.job_data.job_params));
        }
        ins(&mut spec, "jobdata", Value::Mapping(jobdata));

        if self.s3_storage != S3Storage::default() {
            let mut s3 = serde_yaml::Mapping::new();
            if let Some(secret) = &self.s3_storage.s3_secret {
                ins(&mut s3, "s3secret", Value::String(secret.clone()));
            }
            if let Some(endpoint) = &self.s3_storage.endpoint {
                ins(&mut s3, "endpoint", Value::String(endpoint.clone()));
            }
            ins(&mut s3, "secure", Value::Bool(self.s3_storage.secure));
            ins(&mut spec, "s3storage", Value::Mapping(s3));
        }
        if self.s3_upload != S3Upload::default() {
            let mut up = serde_yaml::Mapping::new();
            if let Some(bucket) = &self.s3_upload.bucket {
                ins(&mut up, "bucket", Value::String(bucket.clone()));
            }
            if !self.s3_upload.files.is_empty() {
                ins(
                    &mut up,
                    "files",
                    Value::Sequence(
                        self.s3_upload.files.iter().map(|s| Value::String(s.clone())).collect(),
                    ),
                );
            }
            ins(&mut spec, "s3upload", Value::Mapping(up));
        }

        let mut metadata = serde_yaml::Mapping::new();
        ins(&mut metadata, "name", Value::String(self.name.clone()));
        ins(&mut metadata, "namespace", Value::String(self.namespace.clone()));

        let mut root = serde_yaml::Mapping::new();
        ins(&mut root, "kind", Value::String(KIND.into()));
        ins(&mut root, "apiVersion", Value::String(API_VERSION.into()));
        ins(&mut root, "metadata", Value::Mapping(metadata));
        ins(&mut root, "spec", Value::Mapping(spec));

        serde_yaml::to_string(&Value::Mapping(root)).expect("yaml of plain mapping")
    }

    /// Everything the worker needs, flattened into record data. The record is
    /// the worker's only input besides its environment.
    pub fn to_record_data(&self, client_nonce: &str) -> BTreeMap<String, String> {
        let mut data = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            data.insert(k.to_string(), v);
        };
        put(keys::RESOURCE_URL, self.resource_url.clone());
        put(keys::ID, String::new());
        put(keys::JOB_STATUS, crate::state::BridgeState::New.as_str().into());
        put(keys::MESSAGE, String::new());
        put(keys::KILL, "false".into());
        put(keys::START_TIME, String::new());
        put(keys::END_TIME, String::new());
        put(keys::ADAPTER, self.adapter_kind.as_str().into());
        put(keys::RESOURCE_SECRET, self.resource_secret.clone());
        put(keys::UPDATE_INTERVAL, self.update_interval.to_string());
        put(keys::JOB_SCRIPT, self.job_data.job_script.clone());
        put(
            keys::SCRIPT_LOCATION,
            self.job_data
                .script_location
                .map(|l| l.as_str().to_string())
                .unwrap_or_default(),
        );
        put(keys::SCRIPT_MD, self.job_data.script_md.clone().unwrap_or_default());
        put(
            keys::SCRIPT_EXTRA_LOC,
            self.job_data.script_extra_loc.clone().unwrap_or_default(),
        );
        put(
            keys::ADDITIONAL_DATA,
            serde_json::to_string(&self.job_data.additional_data).unwrap(),
        );
        put(
            keys::JOB_PROPERTIES,
            serde_json::to_string(&self.job_data.job_properties).unwrap(),
        );
        put(
            keys::JOB_PARAMS,
            serde_json::to_string(&self.job_data.job_params).unwrap(),
        );
        put(keys::S3_SECRET, self.s3_storage.s3_secret.clone().unwrap_or_default());
        put(keys::S3_ENDPOINT, self.s3_storage.endpoint.clone().unwrap_or_default());
        put(keys::S3_SECURE, self.s3_storage.secure.to_string());
        put(keys::S3_UPLOAD_BUCKET, self.s3_upload.bucket.clone().unwrap_or_default());
        put(
            keys::S3_UPLOAD_FILES,
            serde_json::to_string(&self.s3_upload.files).unwrap(),
        );
        put(
            keys::CLIENT_JOB_NAME,
            format!("bridge-{}-{}-{}", self.namespace, self.name, client_nonce),
        );
        data
    }
}

/// Split a `<bucket>:<key>` reference at the first colon; both parts non-empty.
pub fn parse_object_ref(s: &str) -> Option<(&str, &str)> {
    let (bucket, key) = s.split_once(':')?;
    if bucket.is_empty() || key.is_empty() {
        return None;
    }
    Some((bucket, key))
}

fn is_valid_identifier(s: &str) -> bool {
    let bytes = s.as_bytes();
    if bytes.is_empty() {
        return false;
    }
    let alnum = |b: u8| b.is_ascii_lowercase() || b.is_ascii_digit();
    alnum(bytes[0])
        && alnum(bytes[bytes.len() - 1])
        && bytes.iter().all(|&b| alnum(b) || b == b'-')
}

fn str_at(value: &Value, path: &[&str]) -> Option<String> {
    let mut current = value;
    for part in path {
        current = current.get(part)?;
    }
    scalar_to_string(current)
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn int_value(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn bool_value(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Accepts a YAML sequence of strings, a string holding a JSON array, or a
/// comma-separated string (the pipeline form passes lists as flat strings).
fn string_list(v: Option<&Value>, field: &str, problems: &mut Problems) -> Vec<String> {
    match v {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Sequence(seq)) => {
            let mut out = Vec::new();
            for item in seq {
                match scalar_to_string(item) {
                    Some(s) => out.push(s),
                    None => problems.push(field, "list items must be strings"),
                }
            }
            out
        }
        Some(Value::String(s)) => {
            let trimmed = s.trim();
            if trimmed.is_empty() {
                return Vec::new();
            }
            if trimmed.starts_with('[') {
                match serde_json::from_str::<Vec<String>>(trimmed) {
                    Ok(list) => list,
                    Err(e) => {
                        problems.push(field, format!("not a JSON string array: {e}"));
                        Vec::new()
                    }
                }
            } else {
                trimmed.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
            }
        }
        Some(_) => {
            problems.push(field, "expected a list of strings");
            Vec::new()
        }
    }
}

/// Accepts a YAML mapping or a string holding a JSON object (the sample
/// document carries jobproperties as a literal JSON block). Values coerce to
/// strings and stay strings end to end.
fn string_map(v: Option<&Value>, field: &str, problems: &mut Problems) -> BTreeMap<String, String> {
    match v {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Mapping(m)) => {
            let mut out = BTreeMap::new();
            for (k, val) in m {
                let (Some(k), Some(val)) = (scalar_to_string(k), scalar_to_string(val)) else {
                    problems.push(field, "keys and values must be scalar");
                    continue;
                };
                out.insert(k, val);
            }
            out
        }
        Some(Value::String(s)) => {
            let trimmed = s.trim();
            if trimmed.is_empty() {
                return BTreeMap::new();
            }
            match serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(trimmed) {
                Ok(obj) => obj
                    .into_iter()
                    .map(|(k, v)| {
                        let v = match v {
                            serde_json::Value::String(s) => s,
                            other => other.to_string(),
                        };
                        (k, v)
                    })
                    .collect(),
                Err(e) => {
                    problems.push(field, format!("not a JSON object: {e}"));
                    BTreeMap::new()
                }
            }
        }
        Some(_) => {
            problems.push(field, "expected a string map");
            BTreeMap::new()
        }
    }
}

fn map_value(m: &BTreeMap<String, String>) -> Value {
    let mut out = serde_yaml::Mapping::new();
    for (k, v) in m {
        out.insert(Value::String(k.clone()), Value::String(v.clone()));
    }
    Value::Mapping(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The sample document, jobproperties carried as a literal JSON block.
    pub(crate) const SAMPLE: &str = r#"
kind: BridgeJob
apiVersion: bridgeoperator.ibm.com/v1alpha1
metadata:
  name: slurmjob-test
spec:
  resourceURL: http://my-slurm-cluster@hpc.com
  image: slurmpod:0.1
  resourcesecret: mysecret
  imagepullpolicy: Always
  updateinterval: 20
  jobdata:
    jobscript: "mys3bucket:slurmbatch.sh"
    scriptlocation: "s3"
    jobproperties: |
      {
      "NodesNumber":"1", "Queue": "V100", "Tasks": "2", "slurmJobName": "test",
      "currentWorkingDir": "path-to-test/test-script/",
      "envLibPath": "/usr/mpi/gcc/openmpi-4.0.3rc4/lib",
      "ErrorFileName": "slurmjob.err",
      "OutputFileName": "slurmjob.out"
      }
  s3storage:
    s3secret: mysecret-s3
    endpoint: s3endpoint.cloud
    secure: false
"#;

    #[test]
    fn parses_sample_document() {
        let spec = parse_spec(SAMPLE).unwrap();
        assert_eq!(spec.name, "slurmjob-test");
        assert_eq!(spec.namespace, "default");
        assert_eq!(spec.update_interval, 20);
        assert_eq!(spec.adapter_kind, AdapterKind::Slurm);
        assert_eq!(spec.job_data.script_location, Some(ScriptLocation::S3));
        assert_eq!(spec.job_data.job_script, "mys3bucket:slurmbatch.sh");
        assert_eq!(spec.job_data.job_properties["Queue"], "V100");
        assert_eq!(spec.job_data.job_properties["Tasks"], "2");
        assert_eq!(spec.job_data.job_properties["NodesNumber"], "1");
        assert_eq!(spec.job_data.job_properties["OutputFileName"], "slurmjob.out");
        assert_eq!(spec.s3_storage.endpoint.as_deref(), Some("s3endpoint.cloud"));
        assert!(!spec.s3_storage.secure);
        assert_eq!(spec.image_pull_policy, "Always");
    }

    #[test]
    fn missing_resource_url_is_reported_by_name() {
        let doc = SAMPLE.replace("resourceURL: http://my-slurm-cluster@hpc.com", "");
        let err = parse_spec(&doc).unwrap_err();
        assert!(err.mentions("resourceURL"), "fields: {:?}", err.fields());
    }

    #[test]
    fn aggregates_multiple_problems() {
        let err = parse_spec("kind: BridgeJob\napiVersion: v1\n").unwrap_err();
        assert!(err.mentions("metadata.name"));
        assert!(err.mentions("spec"));
        assert!(err.problems.len() >= 2);
    }

    #[test]
    fn inline_script_body_is_kept_verbatim() {
        let doc = r##"
kind: BridgeJob
apiVersion: bridgeoperator.ibm.com/v1alpha1
metadata:
  name: inline-test
spec:
  resourceURL: http://127.0.0.1:1/
  adapterKind: slurm
  resourcesecret: mysecret
  jobdata:
    jobscript: "#!/bin/sh\necho hi"
    scriptlocation: inline
"##;
        let spec = parse_spec(doc).unwrap();
        assert_eq!(spec.job_data.job_script, "#!/bin/sh\necho hi");
        assert_eq!(spec.update_interval, DEFAULT_UPDATE_INTERVAL);
        assert_eq!(spec.image_pull_policy, DEFAULT_IMAGE_PULL_POLICY);
    }

    #[test]
    fn unmatched_image_is_a_schema_error() {
        let doc = SAMPLE.replace("image: slurmpod:0.1", "image: quantumpod:0.1");
        let err = parse_spec(&doc).unwrap_err();
        assert!(err.mentions("image"));
    }

    #[test]
    fn s3_location_requires_object_ref_and_endpoint() {
        let doc = SAMPLE.replace("jobscript: \"mys3bucket:slurmbatch.sh\"", "jobscript: \"noseparator\"");
        let err = parse_spec(&doc).unwrap_err();
        assert!(err.mentions("jobdata.jobscript"));

        let doc = SAMPLE.replace("endpoint: s3endpoint.cloud", "");
        let err = parse_spec(&doc).unwrap_err();
        assert!(err.mentions("s3storage.endpoint"));
    }

    #[test]
    fn upload_files_require_bucket_and_endpoint() {
        let doc = format!(
            "{}\n  s3upload:\n    files:\n      - out.txt\n",
            SAMPLE.trim_end()
        );
        let err = parse_spec(&doc).unwrap_err();
        assert!(err.mentions("s3upload.bucket"));
    }

    #[test]
    fn update_interval_accepts_string_form() {
        let doc = SAMPLE.replace("updateinterval: 20", "updateinterval: \"7\"");
        assert_eq!(parse_spec(&doc).unwrap().update_interval, 7);

        let doc = SAMPLE.replace("updateinterval: 20", "updateinterval: 0");
        assert!(parse_spec(&doc).unwrap_err().mentions("updateinterval"));
    }

    #[test]
    fn round_trip_is_idempotent() {
        let spec = parse_spec(SAMPLE).unwrap();
        let doc = spec.to_document();
        let reparsed = parse_spec(&doc).unwrap();
        assert_eq!(reparsed, spec);
        assert_eq!(parse_spec(&reparsed.to_document()).unwrap(), reparsed);
    }

    #[test]
    fn object_ref_splits_on_first_colon() {
        assert_eq!(parse_object_ref("b:k"), Some(("b", "k")));
        assert_eq!(parse_object_ref("b:k:v"), Some(("b", "k:v")));
        assert_eq!(parse_object_ref("bk"), None);
        assert_eq!(parse_object_ref(":k"), None);
        assert_eq!(parse_object_ref("b:"), None);
    }

    #[test]
    fn record_data_covers_worker_inputs() {
        let spec = parse_spec(SAMPLE).unwrap();
        let data = spec.to_record_data("abc123");
        assert_eq!(data[keys::JOB_STATUS], "NEW");
        assert_eq!(data[keys::KILL], "false");
        assert_eq!(data[keys::ID], "");
        assert_eq!(data[keys::ADAPTER], "slurm");
        assert_eq!(data[keys::CLIENT_JOB_NAME], "bridge-default-slurmjob-test-abc123");
        let props: BTreeMap<String, String> =
            serde_json::from_str(&data[keys::JOB_PROPERTIES]).unwrap();
        assert_eq!(props["Queue"], "V100");
    }

    /// Removing any required field must be rejected with that field named.
    proptest! {
        #[test]
        fn required_field_removal_is_rejected(idx in 0usize..6) {
            let (line, field): (&str, &str) = [
                ("kind: BridgeJob", "kind"),
                ("  name: slurmjob-test", "metadata.name"),
                ("  resourceURL: http://my-slurm-cluster@hpc.com", "resourceURL"),
                ("  image: slurmpod:0.1", "adapterKind"),
                ("  resourcesecret: mysecret", "resourcesecret"),
                ("    jobscript: \"mys3bucket:slurmbatch.sh\"", "jobdata.jobscript"),
            ][idx];
            let doc: String = SAMPLE
                .lines()
                .filter(|l| *l != line)
                .collect::<Vec<_>>()
                .join("\n");
            let err = parse_spec(&doc).expect_err("removal must fail validation");
            prop_assert!(err.mentions(field), "expected {} in {:?}", field, err.fields());
        }
    }
}
