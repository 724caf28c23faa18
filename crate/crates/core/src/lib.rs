//! Local times of one-dimensional diffusions at fixed levels and along
//! level curves of a surface, with the exposure and CVA applications that
//! follow from them.
//!
//! The pieces, bottom up:
//!
//! - [`expr`]: a small expression language in `t` and `x` with symbolic
//!   differentiation and compiled evaluation; coefficient and payoff
//!   surfaces are [`expr::Surface`] values.
//! - [`sde`]: Euler-Maruyama simulation of `dX = mu dt + sigma dW` with a
//!   counter-based RNG, so ensembles are reproducible for any thread count.
//! - [`local_time`]: windowed occupation and Tanaka estimators of level
//!   local times, plus occupation estimators along sampled curves.
//! - [`level_curves`]: decomposition of `{V = 0}` into branch graphs
//!   `x = Phi(t)` by bisection seeding and RK4 continuation.
//! - [`change_of_variable`]: both sides of the identity expressing the
//!   level local time of `V(t, X_t)` as a weighted sum of one-sided curve
//!   local times along the branches, with ensemble verification reports.
//! - [`exposure`]: expected exposure by Monte Carlo and by the forward
//!   quadrature along zero branches, expected local times, and CVA.
//!
//! The commonly used types are re-exported at the crate root.

pub mod change_of_variable;
pub mod exposure;
pub mod expr;
pub mod level_curves;
pub mod local_time;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod stats;

pub use change_of_variable::{CvfReport, CvfSettings};
pub use exposure::{
    DefaultDistribution, DefaultModel, DensityModel, EeMethod, EeProfile, MartingaleReport,
};
pub use expr::{Expr, ParseError, Program, Surface, Var};
pub use level_curves::{BoundaryReason, BranchSet, CurveBranch, Rect, Thresholds, TraceOptions};
pub use local_time::{
    CurveLocalTime, DvxSign, GridCurve, LevelSpec, LocalTimeProcess, Side, TanakaEstimate,
};
pub use quad::{QuadError, QuadResult};
pub use sde::{Ensemble, PathGrid, Preset, SdeModel, SdePath, SimError};
