//! Inverse rig fitting for quadratic blendshape face models.
//!
//! Given a delta-blendshape model with pairwise corrective terms and a target
//! mesh, find activations `w` in `[0, 1]^m` that reproduce the mesh with few
//! active controls. The main solver is a majorization-minimization scheme
//! whose surrogate splits into independent box-constrained quartics; linear
//! ridge and greedy baselines, evaluation metrics, Bradley-Terry ranking,
//! file formats and a synthetic rig generator round out the crate.

pub mod baselines;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mm;
pub mod model;
pub mod quartic;
pub mod ranking;
pub mod spectral;
pub mod synth;

pub use baselines::{solve_cet, solve_cet_loc, solve_projected_descent, solve_seol, PgdConfig, RidgeSolveContext};
pub use error::{Error, Result};
pub use io::{load_model, save_model, FrameArray};
pub use metrics::{FrameMetrics, SequenceMetrics, SolverRun, TradeoffRow};
pub use mm::{objective, solve_mm, Initialization, MmConfig, MmSolver, SolveReport};
pub use model::{eval_linear, eval_quadratic, BlendshapeModel, WeightVector};
pub use quartic::{minimize_quartic, QuarticSubproblem};
pub use ranking::{bradley_terry, PairwiseMatrix, StrengthVector};
pub use spectral::{build_cache, SpectralCache};
pub use synth::{generate_synthetic, SynthConfig, SyntheticData};
