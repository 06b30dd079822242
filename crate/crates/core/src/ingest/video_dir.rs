//! Videos on disk: a directory of `frame_0001.pgm`, `frame_0002.pgm`, ...
//! plus a `manifest.json` describing them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pnm::{load_gray, load_rgb, save_gray, RgbImage};
use crate::error::{invalid, io_err, Error, Result};
use crate::grid::Video;
use crate::store;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoManifest {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub binary: bool,
    pub provenance: String,
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{:04}.pgm", index + 1))
}

pub fn write_video(dir: &Path, video: &Video, provenance: &str) -> Result<()> {
    store::create_dir(dir)?;
    for (i, f) in video.frames().iter().enumerate() {
        save_gray(f, &frame_path(dir, i))?;
    }
    let (height, width) = video.frame_shape();
    let manifest = VideoManifest {
        n_frames: video.len(),
        height,
        width,
        binary: video.frames().iter().all(|f| f.is_binary()),
        provenance: provenance.into(),
    };
    store::write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_video(dir: &Path) -> Result<Video> {
    let manifest_path = dir.join("manifest.json");
    let m: VideoManifest = store::read_json(&manifest_path)?;
    if m.n_frames == 0 {
        return Err(Error::Json { path: manifest_path, message: "video has no frames".into() });
    }
    let frames = (0..m.n_frames)
        .map(|i| {
            let p = frame_path(dir, i);
            let g = load_gray(&p)?;
            if g.shape() != (m.height, m.width) {
                return Err(invalid(format!(
                    "{}: frame is {:?}, manifest says {}x{}",
                    p.display(),
                    g.shape(),
                    m.height,
                    m.width
                )));
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Video::new(frames)
}

/// Every `.ppm` file in `dir`, in file-name order.
pub fn read_rgb_frames(dir: &Path) -> Result<Vec<RgbImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")));
    paths.sort();
    if paths.is_empty() {
        return Err(invalid(format!("{}: no .ppm frames found", dir.display())));
    }
    paths.iter().map(|p| load_rgb(p)).collect()
}
