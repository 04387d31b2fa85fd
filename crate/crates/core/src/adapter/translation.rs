//! Property-name translation tables. The mapping from BridgeJob
//! `jobproperties` keys to manager payload fields is data, not code: one
//! embedded manifest per adapter kind.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;
use serde_json::Value;

use super::AdapterError;
use crate::spec::AdapterKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
enum ValueKind {
    #[default]
    String,
    Int,
}

#[derive(Debug, Clone, Deserialize)]
struct ManifestEntry {
    from: String,
    to: String,
    #[serde(default)]
    value: ValueKind,
}

#[derive(Debug)]
pub struct PropertyTable {
    entries: Vec<ManifestEntry>,
}

static SLURM_TABLE: OnceLock<PropertyTable> = OnceLock::new();
static LSF_TABLE: OnceLock<PropertyTable> = OnceLock::new();

impl PropertyTable {
    pub fn for_kind(kind: AdapterKind) -> &'static PropertyTable {
        match kind {
            AdapterKind::Slurm => SLURM_TABLE
                .get_or_init(|| PropertyTable::parse(include_str!("slurm_properties.json"))),
            AdapterKind::Lsf => {
                LSF_TABLE.get_or_init(|| PropertyTable::parse(include_str!("lsf_properties.json")))
            }
        }
    }

    fn parse(manifest: &str) -> PropertyTable {
        PropertyTable {
            entries: serde_json::from_str(manifest).expect("embedded manifest is valid"),
        }
    }

    /// Translate jobproperties into manager payload fields. Keys without a
    /// manifest entry pass through under their original name; `int` fields
    /// that fail to parse are a submission error.
    pub fn translate(
        &self,
        properties: &BTreeMap<String, String>,
    ) -> Result<serde_json::Map<String, Value>, AdapterError> {
        let mut out = serde_json::Map::new();
        for (key, value) in properties {
            match self.entries.iter().find(|e| &e.from == key) {
                Some(entry) => {
                    let translated = match entry.value {
                        ValueKind::String => Value::String(value.clone()),
                        ValueKind::Int => {
                            let n: i64 = value.trim().parse().map_err(|_| {
                                AdapterError::InvalidProperties(format!(
                                    "{key} must be an integer, got {value:?}"
                                ))
                            })?;
                            Value::Number(n.into())
                        }
                    };
                    out.insert(entry.to.clone(), translated);
                }
                None => {
                    out.insert(key.clone(), Value::String(value.clone()));
                }
            }
        }
        Ok(out)
    }
}
