//! Access policies: static principals with bearer tokens, default-deny.
//!
//! Policy file (TOML):
//!
//! ```toml
//! [[principals]]
//! name = "alice"
//! token = "alice-secret"
//! operations = ["create_session", "read_session", "control_session", "read_dataset"]
//! max_sessions = 2
//! ```
//!
//! `operations = ["*"]` grants everything.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    CreateSession,
    ReadSession,
    ControlSession,
    ReadDataset,
    RegisterModel,
    InvokeModel,
}

impl Operation {
    pub const ALL: [Operation; 6] = [
        Operation::CreateSession,
        Operation::ReadSession,
        Operation::ControlSession,
        Operation::ReadDataset,
        Operation::RegisterModel,
        Operation::InvokeModel,
    ];
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
enum Grant {
    Op(Operation),
    Wildcard(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessPolicy {
    pub principal: String,
    #[serde(skip)]
    pub token: String,
    pub operations: BTreeSet<Operation>,
    /// Cap on concurrently active (not yet COMPLETED/ABORTED) sessions.
    pub max_sessions: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrincipalDoc {
    name: String,
    token: String,
    #[serde(default)]
    operations: Vec<Grant>,
    #[serde(default = "default_quota")]
    max_sessions: usize,
}

fn default_quota() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    #[serde(default)]
    principals: Vec<PrincipalDoc>,
}

/// What an operation targets, with the facts the decision depends on.
#[derive(Debug, Clone, Copy)]
pub enum Resource<'a> {
    Service,
    NewSession { active_sessions: usize },
    Session { owner: &'a str },
    Dataset,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(String),
}

impl Decision {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PolicyStore {
    policies: Vec<AccessPolicy>,
}

impl PolicyStore {
    pub fn new(policies: Vec<AccessPolicy>) -> Result<Self, CoreError> {
        let mut names = BTreeSet::new();
        let mut tokens = BTreeSet::new();
        for (i, p) in policies.iter().enumerate() {
            if p.principal.is_empty() {
                return Err(CoreError::invalid(format!("principals[{i}].name"), "must not be empty"));
            }
            if p.token.is_empty() {
                return Err(CoreError::invalid(format!("principals[{i}].token"), "must not be empty"));
            }
            if !names.insert(p.principal.as_str()) {
                return Err(CoreError::invalid(format!("principals[{i}].name"), format!("duplicate `{}`", p.principal)));
            }
            if !tokens.insert(p.token.as_str()) {
                return Err(CoreError::invalid(format!("principals[{i}].token"), "token reused"));
            }
        }
        Ok(Self { policies })
    }

    pub fn parse(document: &str) -> Result<Self, CoreError> {
        let doc: PolicyDoc = toml::from_str(document).map_err(|e| CoreError::invalid("policy", e.message()))?;
        let mut policies = Vec::new();
        for (i, p) in doc.principals.into_iter().enumerate() {
            let mut operations = BTreeSet::new();
            for g in p.operations {
                match g {
                    Grant::Op(op) => {
                        operations.insert(op);
                    }
                    Grant::Wildcard(w) if w == "*" => operations.extend(Operation::ALL),
                    Grant::Wildcard(w) => {
                        return Err(CoreError::invalid(
                            format!("principals[{i}].operations"),
                            format!("unknown operation `{w}`"),
                        ))
                    }
                }
            }
            policies.push(AccessPolicy { principal: p.name, token: p.token, operations, max_sessions: p.max_sessions });
        }
        Self::new(policies)
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Maps a bearer token to its principal.
    pub fn authenticate(&self, token: &str) -> Option<&str> {
        self.policies.iter().find(|p| p.token == token).map(|p| p.principal.as_str())
    }

    pub fn policy(&self, principal: &str) -> Option<&AccessPolicy> {
        self.policies.iter().find(|p| p.principal == principal)
    }

    /// Default-deny: allowed only if the principal's policy grants `op`,
    /// the principal owns the targeted session, and creating a session
    /// stays within the quota.
    pub fn authorize(&self, principal: &str, op: Operation, resource: Resource<'_>) -> Decision {
        let Some(policy) = self.policy(principal) else {
            return Decision::Deny("no policy".into());
        };
        if !policy.operations.contains(&op) {
            return Decision::Deny(format!("operation {op} not granted"));
        }
        match resource {
            Resource::NewSession { active_sessions } if active_sessions >= policy.max_sessions => {
                Decision::Deny("quota".into())
            }
            Resource::Session { owner } if owner != principal => Decision::Deny("not the session owner".into()),
            _ => Decision::Allow,
        }
    }
}
