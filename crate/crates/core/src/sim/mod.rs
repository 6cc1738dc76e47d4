//! Synthetic data from the FIVAR(h)-Itô model.

mod panel;
mod params;
mod paths;
mod varrep;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use panel::{simulate_panel, simulate_panel_with, PanelOptions, PanelTruth, TickPanel};
pub use params::{
    default_paper_params, design_params, random_factor_basis, FivarParams, ParamSpec, DESIGN_HEAVY_DF, DESIGN_RANK,
};
pub use paths::{simulate_eigen_paths, trapezoid_rows, DayPath, EigenPathSimulator, EigenPaths, MIN_STEPS_PER_DAY};
pub use varrep::{companion, var_representation, VarRepresentation, SERIES_MAX_TERMS, SERIES_TOL};

/// Independent random stream `stream` derived from a run seed.
pub(crate) fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
