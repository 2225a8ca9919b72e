//! Color sails: discrete-continuous palettes.
//!
//! * [`sail`]: sail parameters, lattice enumeration, Bezier decoding and
//!   analytic derivatives.
//! * [`colorimetry`]: CIELAB, soft-vote histograms, entropy, colorfulness.
//! * [`metrics`]: nearest-color reconstruction error, CIELAB coverage and
//!   histogram KL.
//! * [`fit`]: fitting one sail to a color distribution.
//! * [`alpha`]: soft image decomposition into per-sail alpha masks.
//! * [`rig`]: frozen pixel mapping, recoloring and the on-disk rig bundle.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alpha;
pub mod colorimetry;
pub mod fit;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod rig;
pub mod sail;

pub use alpha::{fit_rig, reconstruct, select_n_alpha, tempered_softmax, tv_penalty, AlphaField, AlphaMasks, RigConfig, RigFit};
pub use colorimetry::{build_histogram, patchmax_histogram, srgb_to_lab, ColorHistogram, LabColor};
pub use fit::{fit_sail, init_sail, sweep_subdivision, FitConfig, FitProblem, FitResult};
pub use metrics::{combined_loss, e_kl, e_l2, r_percent, FitLoss};
pub use raster::Raster;
pub use rig::{build_mapping, load_rig, recolor, remap_subdivision, save_rig, EditDelta, SailPatch, SailRig};
pub use sail::{decode, enumerate_grid, ColorSail, DecodedSail, GridPoint, Rgb};
