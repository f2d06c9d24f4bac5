//! Shadow removal from a single image using a segmentation mask prior and a
//! learned, unrolled solver for a per-pixel relighting gain.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod illumination;
pub mod imaging;
pub mod mask_prior;
pub mod nn;
pub mod pairing;
pub mod provenance;
pub mod scalar;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
pub use illumination::{apply_shadow_model, blend_final, enhance_second_order, CurveParams, IlluminationMap};
pub use imaging::{ColorSpace, Field, ImageTensor, MaskKind, ShadowMask};
pub use mask_prior::{select_shadow_mask, CandidateMask, Selection, SelectionConfig, ShadowScore};
pub use scalar::Scalar;
pub use solver::{run_solver, NetworkWeights, SolverConfig, StageTrace};
