//! Scene data: Gaussian primitives, cameras, poses, rendered maps, storage
//! accounting and the binary scene format.

mod camera;
mod field;
mod io;
mod maps;
mod pose;
mod storage;

pub use camera::{backproject, project, Camera, MIN_DEPTH};
pub use field::{CoupledExtras, FieldError, GaussianField, GaussianPrimitive, Layout, DEFAULT_FEATURE_DIM, SH_COEFFS};
pub use io::{
    decode_feature_map, decode_field, encode_feature_map, encode_field, load_feature_map, load_field, save_feature_map,
    save_field, FEATURE_MAP_MAGIC, FIELD_MAGIC, FORMAT_VERSION,
};
pub(crate) use io::{put_u32, read_field, Reader};
pub use maps::{dot, l2_normalize, DepthMap, FeatureMap};
pub use pose::{orthonormalize, pose_error, skew, Pose};
pub use storage::{storage_report, StorageReport, HEADER_BYTES};
