//! Sparse 2D–3D and dense coarse-to-fine 2D–2D feature matching.

mod dense;
pub mod kernel;
mod sparse;

pub use dense::{
    cell_center, dual_softmax_mnn, match_dense_coarse, pool_coarse, refine_matches, CoarseMatch, CoarseOptions,
    DenseMatch, RefineOptions, Subpixel,
};
pub use sparse::{detect_keypoints, match_sparse, mnn_pairs, DetectOptions, Keypoint, SparseMatch, MIN_SPARSE_MATCHES};
