//! JSON system description: dynamics, control laws, partitioning functions, settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::expr::{parse_expression, parse_state_expression, ParseError};
use crate::grid::Domain;
use crate::model::{ControlLaw, ControlSystem, Model, ModelError, PartitioningFamily};

#[derive(Debug, Error)]
pub enum SpecFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid system file at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {source}")]
    Expression { field: String, source: ParseError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEntry {
    pub name: String,
    pub law: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub phi: String,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpecFile {
    #[serde(default)]
    pub name: Option<String>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub domain: Domain,
    pub dynamics: Vec<String>,
    pub controls: Vec<ControlEntry>,
    pub partitions: Vec<PartitionEntry>,
    #[serde(default)]
    pub settings: Config,
    #[serde(default)]
    pub seed: u64,
}

fn parse_field(
    field: String,
    text: &str,
    parse: impl FnOnce(&str) -> Result<crate::expr::Expr, ParseError>,
) -> Result<crate::expr::Expr, SpecFileError> {
    parse(text).map_err(|source| SpecFileError::Expression { field, source })
}

impl SystemSpecFile {
    pub fn from_json(text: &str) -> Result<Self, SpecFileError> {
        serde_json::from_str(text).map_err(|e| SpecFileError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SpecFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpecFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parses every expression and runs the structural model checks.
    pub fn to_model(&self) -> Result<Model, SpecFileError> {
        let (n, m) = (self.state_dim, self.input_dim);
        let f = self
            .dynamics
            .iter()
            .enumerate()
            .map(|(j, text)| parse_field(format!("dynamics[{j}]"), text, |t| parse_expression(t, n, m)))
            .collect::<Result<Vec<_>, _>>()?;
        let controls = self
            .controls
            .iter()
            .enumerate()
            .map(|(c, entry)| {
                let g = entry
                    .law
                    .iter()
                    .enumerate()
                    .map(|(j, text)| {
                        parse_field(format!("controls[{c}] ({}).law[{j}]", entry.name), text, |t| {
                            parse_state_expression(t, n)
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ControlLaw {
                    name: entry.name.clone(),
                    g,
                })
            })
            .collect::<Result<Vec<_>, SpecFileError>>()?;
        let families = self
            .partitions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let phi = parse_field(format!("partitions[{i}].phi"), &p.phi, |t| {
                    parse_state_expression(t, n)
                })?;
                Ok(PartitioningFamily::new(phi, p.levels.clone(), n))
            })
            .collect::<Result<Vec<_>, SpecFileError>>()?;
        let system = ControlSystem {
            n,
            m,
            domain: self.domain.clone(),
            f,
        };
        Ok(Model::new(system, controls, families)?)
    }
}
