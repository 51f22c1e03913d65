//! File formats: VXL1 volumes, cube archives, checkpoints, run
//! configuration, slice montages, and loss histories.

mod archive;
mod checkpoint;
mod config;
mod history;
mod montage;
mod vxl;

use std::io::Write;
use std::path::Path;

pub use archive::{read_cube_archive, write_cube_archive, CubeArchiveEntry, CubeArchiveManifest};
pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, load_generator, save_checkpoint, CheckpointManifest, TensorEntry, TensorRecord,
};
pub use config::{DataConfig, PathsConfig, RunConfig};
pub use history::{read_history, summarize_history, write_history, EpochSummary, HistorySummary};
pub use montage::{montage_pixels, write_montage};
pub use vxl::{decode_vxl, encode_vxl, read_channels, read_raw, read_volume, write_channels, write_volume, RawDType, HEADER_LEN};

use crate::error::Result;

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}
