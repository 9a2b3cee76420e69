pub mod dct;
pub mod error;
pub mod fbp;
pub mod grid;
pub mod linop;
pub mod patch;
pub mod pca;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod prox;
pub mod solver;

pub use dct::DctBasis;
pub use error::{Error, Result};
pub use fbp::{apply_projection_filter, fbp_reconstruct, FbpConfig, Filter};
pub use grid::{image_linf_diff, make_uniform_angles, AngleSet, CoefVector, Image, Sinogram};
pub use linop::{operator_norm_estimate, Composed, LinearOperator};
pub use metrics::{evaluate, relative_mse, ssim, ssim_with, MetricReport, SsimParams};
pub use projector::RadonOperator;
pub use pca::{build_prior, EigenPrior, TemplateSet};
pub use solver::{objective_value, solve_plain_cs, solve_with_prior, SolveConfig, SolveResult, ThetaProblem};
pub use patch::{
    assemble_patches, extract_patches, ksvd_train, omp_encode, patch_objective_value, solve_with_patch_prior,
    training_patches, KsvdConfig, KsvdOutput, PatchCoder, PatchDictionary, PatchGeometry, PatchSolveConfig,
};
