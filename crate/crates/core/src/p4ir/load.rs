// SPDX-License-Identifier: Apache-2.0

use serde::de::DeserializeOwned;
use thiserror::Error;

use super::ir::{EntrySet, Program};

/// A schema-level failure while reading a JSON document.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{path}: {message}")]
pub struct LoadError {
    /// JSON path of the offending node (`.` for the document root).
    pub path: String,
    pub message: String,
}

/// Reads a program document. Only the schema shape is checked here; name
/// resolution and structural invariants are the job of [`validate`](super::validate).
pub fn load_program(text: &str) -> Result<Program, LoadError> {
    from_json(text)
}

pub fn load_entries(text: &str) -> Result<EntrySet, LoadError> {
    from_json(text)
}

/// Deserializes any schema type, reporting errors with their JSON path.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, LoadError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| LoadError { path: e.path().to_string(), message: e.inner().to_string() })?;
    de.end().map_err(|e| LoadError { path: ".".into(), message: e.to_string() })?;
    Ok(value)
}
