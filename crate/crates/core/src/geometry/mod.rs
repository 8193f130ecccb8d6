//! Language vectors, language subspaces and their distances, shift-area selection,
//! online vector estimation, and LDA projections.
//!
//! Layer indices are 1-based throughout: layer `i` is the output of transformer block `i`.

mod area;
mod lda;
mod online;
mod subspace;
mod vectors;

pub use area::{
    area_size, distance_profile, select_from_distances, select_shift_area, DistanceProfile,
    LayerDistance, ShiftArea,
};
pub use lda::{
    discriminant_spectrum, lda_fit, lda_fit_with_ridge, lda_project, LdaProjection,
    DEFAULT_LDA_RIDGE,
};
pub use online::{online_update, OnlineVectorEstimator, UpdateWeights, DEFAULT_W_NEW};
pub use subspace::{
    distance_terms, fit_subspace, log_eigen_term, subspace_distance, DistanceTerms,
    LanguageSubspace, Ridge, DEFAULT_RELATIVE_RIDGE, DEFAULT_VARIANCE_THRESHOLD,
};
pub use vectors::{compute_language_vectors, LanguageVectorTable};
