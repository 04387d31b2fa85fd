//! Job lifecycle states and the legal-transition table shared by every module.

use serde::{Deserialize, Serialize};

/// Lifecycle state of a bridge job. `DONE`, `KILLED` and `FAILED` are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BridgeState {
    #[serde(rename = "NEW")]
    New,
    #[serde(rename = "SUBMITTED")]
    Submitted,
    #[serde(rename = "RUNNING")]
    Running,
    #[serde(rename = "DONE")]
    Done,
    #[serde(rename = "KILLED")]
    Killed,
    #[serde(rename = "FAILED")]
    Failed,
    #[serde(rename = "UNKNOWN")]
    Unknown,
}

impl BridgeState {
    pub const ALL: [BridgeState; 7] = [
        BridgeState::New,
        BridgeState::Submitted,
        BridgeState::Running,
        BridgeState::Done,
        BridgeState::Killed,
        BridgeState::Failed,
        BridgeState::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BridgeState::New => "NEW",
            BridgeState::Submitted => "SUBMITTED",
            BridgeState::Running => "RUNNING",
            BridgeState::Done => "DONE",
            BridgeState::Killed => "KILLED",
            BridgeState::Failed => "FAILED",
            BridgeState::Unknown => "UNKNOWN",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            BridgeState::Done | BridgeState::Killed | BridgeState::Failed
        )
    }
}

impl std::fmt::Display for BridgeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a bridge state: {0:?}")]
pub struct ParseStateError(pub String);

impl std::str::FromStr for BridgeState {
    type Err = ParseStateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NEW" => Ok(BridgeState::New),
            "SUBMITTED" => Ok(BridgeState::Submitted),
            "RUNNING" => Ok(BridgeState::Running),
            "DONE" => Ok(BridgeState::Done),
            "KILLED" => Ok(BridgeState::Killed),
            "FAILED" => Ok(BridgeState::Failed),
            "UNKNOWN" => Ok(BridgeState::Unknown),
            other => Err(ParseStateError(other.to_string())),
        }
    }
}

/// True iff `from -> to` is a legal lifecycle transition. Total over all
/// state pairs; terminal states admit no outgoing transition.
pub fn validate_transition(from: BridgeState, to: BridgeState) -> bool {
    use BridgeState::*;
    match from {
        New => matches!(to, Submitted | Failed),
        Submitted => matches!(to, Running | Done | Killed | Failed | Unknown),
        Running => matches!(to, Done | Killed | Failed | Unknown),
        Unknown => matches!(to, Running | Done | Killed | Failed),
        Done | Killed | Failed => false,
    }
}
