//! Minimal S3-compatible storage client: create bucket, put object, get
//! object. Requests carry standard AWS4-HMAC-SHA256 authorization headers;
//! the bundled mock store validates the access key only.

use chrono::Utc;
use hmac::{Hmac, KeyInit, Mac};
use sha2::{Digest, Sha256};

use crate::credentials::S3Credentials;

const REGION: &str = "us-east-1";
const SERVICE: &str = "s3";

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("object storage unreachable: {0}")]
    Unreachable(String),
    #[error("object {bucket}:{key} missing")]
    ObjectMissing { bucket: String, key: String },
    #[error("object storage denied the request (check accessKey)")]
    Denied,
    #[error("object storage returned {status}: {detail}")]
    Api { status: u16, detail: String },
}

/// Client bound to one endpoint and credential pair. Cheap to clone.
#[derive(Debug, Clone)]
pub struct S3Client {
    http: reqwest::Client,
    base: String,
    access_key: String,
    secret_key: String,
}

impl S3Client {
    /// `endpoint` is a bare `host[:port]`; `secure` selects https.
    pub fn new(endpoint: &str, secure: bool, creds: &S3Credentials) -> Self {
        let scheme = if secure { "https" } else { "http" };
        S3Client {
            http: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .expect("client builds"),
            base: format!("{scheme}://{endpoint}"),
            access_key: creds.access_key.clone(),
            secret_key: creds.secret_key.expose().to_string(),
        }
    }

    fn sign(&self, method: &str, path: &str, payload_sha: &str, amz_date: &str) -> String {
        let date = &amz_date[..8];
        let canonical_headers = format!(
            "host:{}\nx-amz-content-sha256:{}\nx-amz-date:{}\n",
            self.base.split("//").nth(1).unwrap_or(""),
            payload_sha,
            amz_date
        );
        let signed_headers = "host;x-amz-content-sha256;x-amz-date";
        let canonical_request =
            format!("{method}\n{path}\n\n{canonical_headers}\n{signed_headers}\n{payload_sha}");
        let scope = format!("{date}/{REGION}/{SERVICE}/aws4_request");
        let string_to_sign = format!(
            "AWS4-HMAC-SHA256\n{amz_date}\n{scope}\n{}",
            hex(&Sha256::digest(canonical_request.as_bytes()))
        );
        let k_date = hmac_sha256(format!("AWS4{}", self.secret_key).as_bytes(), date.as_bytes());
        let k_region = hmac_sha256(&k_date, REGION.as_bytes());
        let k_service = hmac_sha256(&k_region, SERVICE.as_bytes());
        let k_signing = hmac_sha256(&k_service, b"aws4_request");
        let signature = hex(&hmac_sha256(&k_signing, string_to_sign.as_bytes()));
        format!(
            "AWS4-HMAC-SHA256 Credential={}/{scope}, SignedHeaders={signed_headers}, Signature={signature}",
            self.access_key
        )
    }

    async fn request(
        &self,
        method: reqwest::Method,
        path: &str,
        body: Option<Vec<u8>>,
    ) -> Result<reqwest::Response, StorageError> {
        let payload = body.clone().unwrap_or_default();
        let payload_sha = hex(&Sha256::digest(&payload));
        let amz_date = Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let auth = self.sign(method.as_str(), path, &payload_sha, &amz_date);
        let mut req = self
            .http
            .request(method, format!("{}{}", self.base, path))
            .header("authorization", auth)
            .header("x-amz-content-sha256", payload_sha)
            .header("x-amz-date", amz_date);
        if let Some(body) = body {
            req = req.body(body);
        }
        req.send().await.map_err(|e| StorageError::Unreachable(e.to_string()))
    }

    /// Idempotent: an existing bucket is success.
    pub async fn create_bucket(&self, bucket: &str) -> Result<(), StorageError> {
        let resp = self.request(reqwest::Method::PUT, &format!("/{bucket}"), None).await?;
        match resp.status().as_u16() {
            200 | 409 => Ok(()),
            403 => Err(StorageError::Denied),
            status => Err(StorageError::Api {
                status,
                detail: resp.text().await.unwrap_or_default(),
            }),
        }
    }

    pub async fn put_object(&self, bucket: &str, key: &str, bytes: Vec<u8>) -> Result<(), StorageError> {
        let resp = self
            .request(reqwest::Method::PUT, &format!("/{bucket}/{key}"), Some(bytes))
            .await?;
        match resp.status().as_u16() {
            200 => Ok(()),
            403 => Err(StorageError::Denied),
            404 => Err(StorageError::ObjectMissing {
                bucket: bucket.into(),
                key: key.into(),
            }),
            status => Err(StorageError::Api {
                status,
                detail: resp.text().await.unwrap_or_default(),
            }),
        }
    }

    pub async fn get_object(&self, bucket: &str, key: &str) -> Result<Vec<u8>, StorageError> {
        let resp = self
            .request(reqwest::Method::GET, &format!("/{bucket}/{key}"), None)
            .await?;
        match resp.status().as_u16() {
            200 => Ok(resp
                .bytes()
                .await
                .map_err(|e| StorageError::Unreachable(e.to_string()))?
                .to_vec()),
            403 => Err(StorageError::Denied),
            404 => Err(StorageError::ObjectMissing {
                bucket: bucket.into(),
                key: key.into(),
            }),
            status => Err(StorageError::Api {
                status,
                detail: resp.text().await.unwrap_or_default(),
            }),
        }
    }
}

fn hmac_sha256(key: &[u8], data: &[u8]) -> Vec<u8> {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().to_vec()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
