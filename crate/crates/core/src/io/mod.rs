//! File formats: PNM images, checkpoints, and inference-time padding.

mod checkpoint;
mod pad;
mod pnm;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, save_checkpoint};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use pad::{pad_reflect, reflect_index, round_up, Crop};
pub use pnm::{read_pnm, write_pnm, PnmFormat, PnmImage};

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
