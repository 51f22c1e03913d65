//! Tumor-cube archives: a directory of four-channel VXL1 files
//! (`y`, `x_erased`, `m_st`, `m_sb`) plus `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_channels, write_channels, write_json};
use crate::data::{MaskVolume, Provenance, TumorCube};
use crate::error::{Error, Result};

pub const CUBE_FORMAT: &str = "frgan-cubes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeArchiveEntry {
    pub file: String,
    pub source: String,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeArchiveManifest {
    pub format: String,
    pub version: u32,
    pub side: usize,
    pub cubes: Vec<CubeArchiveEntry>,
}

pub fn write_cube_archive(dir: &Path, cubes: &[TumorCube]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let side = cubes.first().map_or(0, TumorCube::side);
    let mut entries = Vec::with_capacity(cubes.len());
    for (i, c) in cubes.iter().enumerate() {
        if c.side() != side {
            return Err(Error::dim("write_cube_archive", None, format!("cube {i} has side {}, archive side is {side}", c.side())));
        }
        let file = format!("cube-{i:05}.vxl");
        let m = c.m_st.to_volume();
        write_channels(&[&c.y, &c.x_erased, &m, &c.m_sb], &dir.join(&file))?;
        entries.push(CubeArchiveEntry { file, source: c.provenance.source.clone(), component: c.provenance.component });
    }
    let manifest = CubeArchiveManifest { format: CUBE_FORMAT.into(), version: 1, side, cubes: entries };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_cube_archive(dir: &Path) -> Result<Vec<TumorCube>> {
    let mpath = dir.join("manifest.json");
    let manifest: CubeArchiveManifest = serde_json::from_slice(&std::fs::read(&mpath)?)?;
    if manifest.format != CUBE_FORMAT {
        return Err(Error::Format { path: mpath, offset: 0, detail: format!("format {:?} is not {CUBE_FORMAT:?}", manifest.format) });
    }
    let mut cubes = Vec::with_capacity(manifest.cubes.len());
    for e in &manifest.cubes {
        let path = dir.join(&e.file);
        let mut ch = read_channels(&path)?;
        if ch.len() != 4 {
            return Err(Error::Format { path, offset: 16, detail: format!("cube files hold 4 channels, found {}", ch.len()) });
        }
        if ch[0].dims != [manifest.side; 3] {
            return Err(Error::Format { path, offset: 4, detail: format!("extents {:?}, manifest side {}", ch[0].dims, manifest.side) });
        }
        let m_sb = ch.pop().expect("4 channels");
        let m = ch.pop().expect("4 channels");
        if let Some(i) = m.data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Format { path, offset: 0, detail: format!("tumor mask voxel {i} is {}, expected 0 or 1", m.data[i]) });
        }
        let x_erased = ch.pop().expect("4 channels");
        let y = ch.pop().expect("4 channels");
        let cube = TumorCube {
            y,
            x_erased,
            m_st: MaskVolume::from_volume(&m),
            m_sb,
            provenance: Provenance { source: e.source.clone(), component: e.component },
        };
        cube.validate().map_err(|err| Error::Format { path: path.clone(), offset: 0, detail: err.to_string() })?;
        cubes.push(cube);
    }
    Ok(cubes)
}
