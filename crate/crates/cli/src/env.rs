use std::path::Path;

use lstd_ac::grid::{build_grid_mdp, grid_features, load_grid, load_roughness, GridSpec};
use lstd_ac::mrp::{mrp_to_ssp, SspProblem};
use lstd_ac::{BoltzmannPolicy, FeatureTable, MrpProblem};

use crate::error::{CliError, CliResult};

/// A grid world with its MRP, SSP and both feature tables.
pub struct Environment {
    pub spec: GridSpec,
    pub problem: MrpProblem,
    pub ssp: SspProblem,
    /// Features on the MRP states.
    pub features: FeatureTable,
    /// The same features carried over to the SSP states.
    pub ssp_features: FeatureTable,
}

impl Environment {
    pub fn from_spec(spec: GridSpec) -> CliResult<Self> {
        let problem = build_grid_mdp(&spec)?;
        let features = grid_features(&spec, &problem)?.table;
        let ssp = mrp_to_ssp(&problem)?;
        let ssp_features = ssp.lift_features(&features)?;
        Ok(Self { spec, problem, ssp, features, ssp_features })
    }

    /// Loads a grid file, takes roughness from `roughness` if given and
    /// from `env_seed` otherwise, and sets the neighbourhood radius.
    pub fn load(grid: &Path, roughness: Option<&Path>, env_seed: u64, radius: usize) -> CliResult<Self> {
        let mut spec = load_grid(&read(grid)?)?;
        spec.radius = radius;
        spec = match roughness {
            Some(path) => {
                spec.roughness = load_roughness(&spec, &read(path)?)?;
                spec
            }
            None => spec.with_random_roughness(env_seed),
        };
        spec.validate()?;
        Self::from_spec(spec)
    }

    pub fn mrp_policy(&self) -> BoltzmannPolicy<&FeatureTable> {
        BoltzmannPolicy::new(&self.features)
    }

    pub fn ssp_policy(&self) -> BoltzmannPolicy<&FeatureTable> {
        BoltzmannPolicy::new(&self.ssp_features)
    }
}

pub(crate) fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
