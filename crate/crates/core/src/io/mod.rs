//! Persistence and reporting: binary dataset/weight formats, experiment
//! configuration, and report emission.
//!
//! Both binary formats are little-endian regardless of host and round-trip
//! bit-exactly.

mod config;
mod raster;
mod report;
mod weights;

pub use config::{
    load_config, ExperimentConfig, EvalSection, ModelSection, ScenarioSection,
};
pub use raster::{load_raster, save_raster, write_raster};
pub use report::{reports_to_csv, reports_to_json, write_plot_data, write_report_files};
pub use weights::{load_weights, save_weights, write_weights};

use sha2::{Digest, Sha256};

/// Short stable content hash used in cache file names.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn read_exact_u32_le(
    reader: &mut impl std::io::Read,
    what: &str,
) -> crate::error::Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| crate::error::Error::Format(format!("truncated {what}")))?;
    Ok(u32::from_le_bytes(buf))
}
