//! Measurement ensembles, corrupted amplitude synthesis and image ground truths.

mod dump;
mod fwht;
mod image;
mod instance;
mod operator;

pub use self::dump::{InstanceDump, MAGIC as DUMP_MAGIC, VERSION as DUMP_VERSION};
pub use self::fwht::{fwht, hadamard_entry};
pub use self::image::{
    is_degenerate, list_pgm_files, load_image_vector, pad_pixels, save_pgm, synthetic_digits, PIXEL_SCALING,
};
pub use self::instance::{
    gaussian_signal, synthesize_instance, OutlierSpec, ProblemInstance, SeedManifest, SupportRule, ValueModel,
};
pub use self::operator::{gaussian_ensemble, hadamard_ensemble, HadamardOperator, MeasurementOperator, OperatorKind};
