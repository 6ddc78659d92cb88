use serde::{Deserialize, Serialize};

use crate::exec::Execution;

/// Numerical settings shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Grid points per axis for rasterization and sampling.
    pub grid: usize,
    /// Rounds of coordinate-wise golden-section refinement of derivative extrema.
    pub refine_iters: usize,
    /// Radius of the neighborhood around critical points of `f_g` exempt from sign checks.
    pub r_crit: f64,
    /// Minimum gradient norm on a level set for the level to count as regular.
    pub eps_reg: f64,
    /// Distance in `φ` below which a point is considered to lie on a level surface.
    pub eps_face: f64,
    /// Facet points stored per adjacency.
    pub facet_samples: usize,
    /// Rebuild the partition at roughly twice the resolution and compare component counts.
    pub check_resolution: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            grid: 64,
            refine_iters: 8,
            r_crit: 1e-3,
            eps_reg: 1e-6,
            eps_face: 1e-9,
            facet_samples: 32,
            check_resolution: true,
            execution: Execution::default(),
        }
    }
}
