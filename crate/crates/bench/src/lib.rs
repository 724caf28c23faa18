//! Shared fixtures for the criterion benchmarks. The benchmark targets
//! live in `benches/`; this crate body only provides the inputs they share
//! so each target measures the hot path and not the setup.

use slt_core::sde::simulate;
use slt_core::{PathGrid, SdeModel, SdePath};

/// A Brownian path on `[0, 1]` at the given resolution, fixed seed.
pub fn brownian_path(n: usize) -> SdePath {
    let model = SdeModel::brownian();
    simulate(&model, PathGrid::new(1.0, n), 0xBE7C_0001).expect("constant coefficients")
}
