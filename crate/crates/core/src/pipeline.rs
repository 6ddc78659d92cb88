//! End-to-end analysis: validation, partition, timing bounds, automaton.

use serde::Serialize;
use thiserror::Error;

use crate::bounds::{compute_bounds, BoundsError, BoundsTable, ExtremalDerivatives};
use crate::config::Config;
use crate::model::{sign_table, validate_levels, LevelReport, Model, ModelError, SignTable};
use crate::partition::{build_cells, CellComplex, PartitionError};
use crate::sim::SimError;
use crate::spec_file::SpecFileError;
use crate::tga::{build_tga, Mode, TgaError, TimedGameAutomaton};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    SpecFile(#[from] SpecFileError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Tga(#[from] TgaError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl Error {
    /// Errors caused by the system description rather than by the computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::SpecFile(_) | Error::Model(_) => true,
            Error::Partition(e) => matches!(
                e,
                PartitionError::Coverage { .. } | PartitionError::Resolution { .. }
            ),
            Error::Tga(e) => matches!(e, TgaError::FacetSignConflict { .. }),
            Error::Bounds(_) | Error::Sim(_) => false,
        }
    }
}

/// Level regularity, critical points and sign tables of an admissible model.
#[derive(Debug, Clone, Serialize)]
pub struct Validation {
    /// `levels[i]`: one report per level of family `i`.
    pub levels: Vec<Vec<LevelReport>>,
    /// `critical[c]`: critical points of the closed loop under control `c`.
    pub critical: Vec<Vec<Vec<f64>>>,
    /// `signs[c][i]`.
    pub signs: Vec<Vec<SignTable>>,
}

/// Checks level regularity and admissibility of every control. All admissibility
/// violations are collected before failing.
pub fn validate(model: &Model, config: &Config) -> Result<Validation, ModelError> {
    let levels = model
        .families
        .iter()
        .enumerate()
        .map(|(i, fam)| validate_levels(fam, i, model.domain(), config))
        .collect::<Result<Vec<_>, _>>()?;
    let controls: Vec<usize> = (0..model.controls.len()).collect();
    let critical: Vec<Vec<Vec<f64>>> = config.execution.map(&controls, |&c| {
        model.closed_loop(c).critical_points(model.domain(), config)
    });
    let jobs: Vec<(usize, usize)> = controls
        .iter()
        .flat_map(|&c| (0..model.families.len()).map(move |i| (c, i)))
        .collect();
    let tables = config
        .execution
        .map(&jobs, |&(c, i)| sign_table(model, c, i, &critical[c], config));
    let mut signs: Vec<Vec<SignTable>> = vec![Vec::new(); controls.len()];
    let mut violations = Vec::new();
    let mut vanishing = None;
    for ((c, _), table) in jobs.into_iter().zip(tables) {
        let table = table?;
        match table.clone().into_result() {
            Ok(_) => {}
            Err(ModelError::Inadmissible(v)) => violations.extend(v),
            Err(e) => {
                vanishing.get_or_insert(e);
            }
        }
        signs[c].push(table);
    }
    if !violations.is_empty() {
        return Err(ModelError::Inadmissible(violations));
    }
    if let Some(e) = vanishing {
        return Err(e);
    }
    Ok(Validation {
        levels,
        critical,
        signs,
    })
}

/// Everything derived from one model and configuration.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: Model,
    pub config: Config,
    pub validation: Validation,
    pub complex: CellComplex,
    pub bounds: BoundsTable,
    pub extrema: Vec<ExtremalDerivatives>,
}

impl Analysis {
    pub fn new(model: Model, config: Config) -> Result<Self, Error> {
        let validation = validate(&model, &config)?;
        let complex = build_cells(&model, &config)?;
        let (bounds, extrema) =
            compute_bounds(&model, &validation.signs, &validation.critical, &config)?;
        Ok(Analysis {
            model,
            config,
            validation,
            complex,
            bounds,
            extrema,
        })
    }

    pub fn automaton(&self, mode: Mode) -> Result<TimedGameAutomaton, TgaError> {
        self.automaton_with(&self.bounds, mode)
    }

    /// Builds the automaton from a replacement bounds table (e.g. a perturbed one).
    pub fn automaton_with(
        &self,
        bounds: &BoundsTable,
        mode: Mode,
    ) -> Result<TimedGameAutomaton, TgaError> {
        build_tga(
            &self.model,
            &self.complex,
            bounds,
            &self.validation.critical,
            mode,
            &self.config,
        )
    }
}
