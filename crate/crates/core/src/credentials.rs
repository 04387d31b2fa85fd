//! Credential sets loaded from mounted credential files.
//!
//! Resource-manager credentials live under a directory (default
//! `/credentials`), one file per credential-set name, `key=value` lines with
//! `username` and `token`. Object-storage credentials follow the same layout
//! under `/s3credentials` with `accessKey` and `secretKey` lines.

use std::collections::BTreeMap;
use std::path::Path;

/// A string that never prints its contents. Keeps tokens out of logs and
/// error messages by construction.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretString(String);

impl SecretString {
    pub fn new(value: impl Into<String>) -> Self {
        SecretString(value.into())
    }

    /// The only way to read the secret back out.
    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Debug for SecretString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretString([redacted])")
    }
}

impl std::fmt::Display for SecretString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("[redacted]")
    }
}

/// Username/token pair for a resource manager, plus any extra fields the
/// credential file carried.
#[derive(Debug, Clone)]
pub struct CredentialSet {
    pub username: String,
    pub token: SecretString,
    pub extra: BTreeMap<String, String>,
}

/// accessKey/secretKey pair for object storage.
#[derive(Debug, Clone)]
pub struct S3Credentials {
    pub access_key: String,
    pub secret_key: SecretString,
}

#[derive(Debug, thiserror::Error)]
pub enum CredentialError {
    #[error("credential file {path} unreadable: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("credential file {path} missing key {key:?}")]
    MissingKey { path: String, key: &'static str },
}

fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>, CredentialError> {
    let text = std::fs::read_to_string(path).map_err(|source| CredentialError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}

/// Load the credential set named `name` from `dir/name`.
pub fn load_resource_credentials(dir: &Path, name: &str) -> Result<CredentialSet, CredentialError> {
    let path = dir.join(name);
    let mut map = parse_kv_file(&path)?;
    let username = map.remove("username").ok_or(CredentialError::MissingKey {
        path: path.display().to_string(),
        key: "username",
    })?;
    let token = map.remove("token").ok_or(CredentialError::MissingKey {
        path: path.display().to_string(),
        key: "token",
    })?;
    Ok(CredentialSet {
        username,
        token: SecretString::new(token),
        extra: map,
    })
}

/// Load object-storage credentials named `name` from `dir/name`
/// (`accessKey=<v>` / `secretKey=<v>` lines).
pub fn load_s3_credentials(dir: &Path, name: &str) -> Result<S3Credentials, CredentialError> {
    let path = dir.join(name);
    let map = parse_kv_file(&path)?;
    let access_key = map.get("accessKey").cloned().ok_or(CredentialError::MissingKey {
        path: path.display().to_string(),
        key: "accessKey",
    })?;
    let secret_key = map.get("secretKey").cloned().ok_or(CredentialError::MissingKey {
        path: path.display().to_string(),
        key: "secretKey",
    })?;
    Ok(S3Credentials {
        access_key,
        secret_key: SecretString::new(secret_key),
    })
}

/// Write a resource credential file (used by tests and demos).
pub fn write_resource_credentials(
    dir: &Path,
    name: &str,
    username: &str,
    token: &str,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), format!("username={username}\ntoken={token}\n"))
}

/// Write an object-storage credential file.
pub fn write_s3_credentials(
    dir: &Path,
    name: &str,
    access_key: &str,
    secret_key: &str,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(name),
        format!("accessKey={access_key}\nsecretKey={secret_key}\n"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_resource_credentials() {
        let dir = tempfile::tempdir().unwrap();
        write_resource_credentials(dir.path(), "mysecret", "alice", "tok-123").unwrap();
        let creds = load_resource_credentials(dir.path(), "mysecret").unwrap();
        assert_eq!(creds.username, "alice");
        assert_eq!(creds.token.expose(), "tok-123");
    }

    #[test]
    fn missing_key_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad"), "username=alice\n").unwrap();
        let err = load_resource_credentials(dir.path(), "bad").unwrap_err();
        assert!(matches!(err, CredentialError::MissingKey { key: "token", .. }));
    }

    #[test]
    fn s3_credential_file_format() {
        let dir = tempfile::tempdir().unwrap();
        write_s3_credentials(dir.path(), "mysecret-s3", "AK", "SK").unwrap();
        let text = std::fs::read_to_string(dir.path().join("mysecret-s3")).unwrap();
        assert_eq!(text, "accessKey=AK\nsecretKey=SK\n");
        let creds = load_s3_credentials(dir.path(), "mysecret-s3").unwrap();
        assert_eq!(creds.access_key, "AK");
        assert_eq!(creds.secret_key.expose(), "SK");
    }

    #[test]
    fn secrets_never_render() {
        let secret = SecretString::new("super-secret-token");
        assert!(!format!("{secret}").contains("super-secret-token"));
        assert!(!format!("{secret:?}").contains("super-secret-token"));
    }
}
