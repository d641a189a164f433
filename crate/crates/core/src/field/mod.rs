//! Feature fitting, landmark selection and synthetic scene generation.

mod fit;
mod landmarks;
mod synth;

pub use fit::{fit_features, FitLoss, FitOptions, FitResult, TrainView, ViewSchedule};
pub use landmarks::{landmark_scores, sample_landmarks, LandmarkOptions, LandmarkSet};
pub(crate) use synth::add_noise;
pub use synth::{gen_query, gen_synthetic_scene, sample_view_pose, FeatureFunction, SyntheticSceneSpec};
