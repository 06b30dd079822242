//! Datasets on disk.
//!
//! ```text
//! dataset/
//!   manifest.json            spec, combinations, per-video metadata and split
//!   kernels/combo_0001.bin   true kernel, little-endian f64
//!   kernels/combo_0001.pgm   same kernel rescaled to [0, 1] for viewing
//!   videos/video_0001/clean/ video directory
//!   videos/video_0001/noisy/ video directory
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, DatasetSpec, SampleMeta};
use crate::error::{Error, Result};
use crate::grid::{Grid, Video};
use crate::ingest::{read_video, save_gray, write_video};
use crate::store;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComboEntry {
    pub index: usize,
    pub family: String,
    pub threshold: f64,
    pub kernel_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub name: String,
    pub split: Split,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub spec: DatasetSpec,
    pub combos: Vec<ComboEntry>,
    pub videos: Vec<VideoEntry>,
}

#[derive(Clone, Debug)]
pub struct StoredVideo {
    pub entry: VideoEntry,
    pub clean: Video,
    pub noisy: Video,
}

#[derive(Clone, Debug)]
pub struct StoredDataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<StoredVideo>,
}

impl StoredDataset {
    pub fn split(&self, split: Split) -> Vec<&StoredVideo> {
        self.videos.iter().filter(|v| v.entry.split == split).collect()
    }
}

/// Kernel rescaled to [0, 1] by its own min and max, for viewing.
pub fn viewable(kernel: &Grid) -> Grid {
    let (lo, hi) = (kernel.min(), kernel.max());
    if hi > lo {
        kernel.map(|v| (v - lo) / (hi - lo))
    } else {
        Grid::zeros(kernel.height(), kernel.width())
    }
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let kernels = dir.join("kernels");
    store::create_dir(&kernels)?;
    for c in &dataset.combos {
        let stem = format!("combo_{:04}", c.index + 1);
        store::write_f64s(&kernels.join(format!("{stem}.bin")), c.kernel.grid().data())?;
        save_gray(&viewable(c.kernel.grid()), &kernels.join(format!("{stem}.pgm")))?;
    }
    let mut videos = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let name = format!("video_{:04}", i + 1);
        let vdir = dir.join("videos").join(&name);
        let provenance = format!("synthetic {name}, combo {}, seed {}", s.meta.combo + 1, s.meta.seed);
        write_video(&vdir.join("clean"), &s.clean, &provenance)?;
        write_video(&vdir.join("noisy"), &s.noisy, &format!("{provenance}, noise {}", s.meta.noise))?;
        let split = if dataset.test.binary_search(&i).is_ok() { Split::Test } else { Split::Train };
        videos.push(VideoEntry { name, split, meta: s.meta.clone() });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: dataset.spec.seed,
        spec: dataset.spec.clone(),
        combos: dataset
            .combos
            .iter()
            .map(|c| ComboEntry {
                index: c.index,
                family: c.family.clone(),
                threshold: c.threshold,
                kernel_size: c.kernel.size(),
            })
            .collect(),
        videos,
    };
    store::write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let path = dir.join("manifest.json");
    let manifest: DatasetManifest = store::read_json(&path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Json {
            path,
            message: format!("dataset format version {} is not {FORMAT_VERSION}", manifest.format_version),
        });
    }
    let videos = manifest
        .videos
        .iter()
        .map(|e| {
            let vdir = dir.join("videos").join(&e.name);
            Ok(StoredVideo {
                entry: e.clone(),
                clean: read_video(&vdir.join("clean"))?,
                noisy: read_video(&vdir.join("noisy"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StoredDataset { manifest, videos })
}
