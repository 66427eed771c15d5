use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::model::TableRef;

/// Rights form a chain: each level includes the ones below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    None,
    Read,
    Write,
    ModelChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub name: String,
    #[serde(default)]
    pub roles: BTreeSet<String>,
}

impl Principal {
    pub fn new(name: &str, roles: &[&str]) -> Self {
        Principal {
            name: name.to_string(),
            roles: roles.iter().map(|r| r.to_string()).collect(),
        }
    }

    pub fn anonymous() -> Self {
        Principal::new("anonymous", &[ANONYMOUS])
    }
}

/// Role held by requests that carry no credentials.
pub const ANONYMOUS: &str = "anonymous";
/// Role entry that applies to every principal.
pub const EVERYONE: &str = "*";

/// Role → rights, at catalog level with optional per-table overrides. A
/// table entry for a role replaces that role's catalog-level rights on
/// that table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclPolicy {
    #[serde(default)]
    pub catalog: BTreeMap<String, Access>,
    #[serde(default)]
    pub tables: BTreeMap<TableRef, BTreeMap<String, Access>>,
}

impl Default for AclPolicy {
    /// Everyone may do everything; suitable for a personal data directory.
    fn default() -> Self {
        AclPolicy::uniform(Access::ModelChange)
    }
}

impl AclPolicy {
    pub fn uniform(access: Access) -> Self {
        AclPolicy {
            catalog: BTreeMap::from([(EVERYONE.to_string(), access)]),
            tables: BTreeMap::new(),
        }
    }

    pub fn grant(mut self, role: &str, access: Access) -> Self {
        self.catalog.insert(role.to_string(), access);
        self
    }

    pub fn grant_on(mut self, table: TableRef, role: &str, access: Access) -> Self {
        self.tables
            .entry(table)
            .or_default()
            .insert(role.to_string(), access);
        self
    }

    fn role_access(&self, role: &str, table: Option<&TableRef>) -> Access {
        table
            .and_then(|t| self.tables.get(t))
            .and_then(|roles| roles.get(role))
            .or_else(|| self.catalog.get(role))
            .copied()
            .unwrap_or(Access::None)
    }

    /// The strongest right any of the principal's roles grants.
    pub fn access(&self, principal: &Principal, table: Option<&TableRef>) -> Access {
        principal
            .roles
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(EVERYONE))
            .map(|role| self.role_access(role, table))
            .max()
            .unwrap_or(Access::None)
    }

    pub fn allows(&self, principal: &Principal, table: Option<&TableRef>, needed: Access) -> bool {
        self.access(principal, table) >= needed
    }
}
