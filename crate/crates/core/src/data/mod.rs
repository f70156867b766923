//! Scan records, intensity windowing, rotation augmentation, window
//! extraction and cross-validation fold planning.

mod folds;
mod rotate;
mod scan;
mod synthetic;
mod window;

pub use folds::{make_folds, Fold, FoldPlan, Split};
pub use rotate::{augment_all, rotate_image_bilinear, rotate_mask_nearest, rotate_scan, AUGMENT_ANGLES};
pub use scan::{base_scan_id, normalize_hu, variant_id, Provenance, ScanRecord, HU_MAX, HU_MIN};
pub use synthetic::{ellipsoid_phantom, PhantomSpec};
pub use window::{extract_window, window_slices};
