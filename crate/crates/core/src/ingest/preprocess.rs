//! Real-video preprocessing into binary front videos.
//!
//! Fire: blur, HSV mask, binarize, then accumulate so every frame contains
//! the previous one (the burnt area only grows). Ice: extract the red
//! outline, close one-pixel gaps, flood-fill the background from the frame
//! border and keep everything the fill did not reach.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hsv::{rgb_to_hsv, HsvMask};
use super::pnm::RgbImage;
use crate::error::{invalid, Error, Result};
use crate::grid::{conv2d_same, Grid, Video};
use crate::kernels;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurConfig {
    pub size: usize,
    pub sigma: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self { size: 5, sigma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub video: Video,
    pub warnings: Vec<String>,
}

fn check_frames(frames: &[RgbImage], min: usize) -> Result<()> {
    if frames.len() < min {
        return Err(invalid(format!("need at least {min} frames, got {}", frames.len())));
    }
    if let Some(i) = frames.iter().position(|f| f.shape() != frames[0].shape()) {
        return Err(invalid(format!("frame {} is {:?}, frame 1 is {:?}", i + 1, frames[i].shape(), frames[0].shape())));
    }
    Ok(())
}

fn fire_mask(frame: &RgbImage, mask: &HsvMask, blur: Option<BlurConfig>) -> Result<Grid> {
    let mut channels = [frame.channel(0), frame.channel(1), frame.channel(2)];
    if let Some(b) = blur {
        let k = kernels::gaussian(b.size, 0.0, 0.0, b.sigma, b.sigma)?;
        for c in channels.iter_mut() {
            *c = conv2d_same(c, k.grid())?;
        }
    }
    let [r, g, b] = &channels;
    let (h, w) = frame.shape();
    Ok(Grid::from_fn(h, w, |y, x| {
        let hsv = rgb_to_hsv(r.get(y, x), g.get(y, x), b.get(y, x));
        if mask.contains(hsv) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Binary cumulative fire video. Frame `t` is the union of the masks of
/// frames `1..=t`, so the output is nested by construction.
pub fn fire_preprocess(frames: &[RgbImage], mask: &HsvMask, blur: Option<BlurConfig>) -> Result<Preprocessed> {
    check_frames(frames, 2)?;
    mask.validate()?;
    let masks = frames.par_iter().map(|f| fire_mask(f, mask, blur)).collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let mut out: Vec<Grid> = Vec::with_capacity(masks.len());
    for (t, m) in masks.into_iter().enumerate() {
        if m.sum() == 0.0 {
            warnings.push(format!("frame {}: mask matched no pixels", t + 1));
        }
        let merged = match out.last() {
            Some(prev) => Grid::from_fn(m.height(), m.width(), |y, x| m.get(y, x).max(prev.get(y, x))),
            None => m,
        };
        out.push(merged);
    }
    if out.iter().all(|f| f.sum() == 0.0) {
        warnings.push("mask matched no pixels in any frame; output is empty".into());
    }
    Ok(Preprocessed { video: Video::new(out)?, warnings })
}

fn dilate(g: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (y.saturating_sub(1)..(y + 2).min(h))
                .any(|yy| (x.saturating_sub(1)..(x + 2).min(w)).any(|xx| g[yy * w + xx]));
        }
    }
    out
}

/// Out-of-frame neighbours are ignored, so closing never removes pixels.
fn erode(g: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (y.saturating_sub(1)..(y + 2).min(h))
                .all(|yy| (x.saturating_sub(1)..(x + 2).min(w)).all(|xx| g[yy * w + xx]));
        }
    }
    out
}

/// 3×3 morphological closing (one dilation, then one erosion).
pub fn close3(g: &[bool], h: usize, w: usize) -> Vec<bool> {
    erode(&dilate(g, h, w), h, w)
}

/// 4-connected fill of non-wall pixels reachable from the frame border.
fn border_fill(wall: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (y == 0 || x == 0 || y == h - 1 || x == w - 1) && !wall[y * w + x] {
                seen[y * w + x] = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let nbrs = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
        for (ny, nx) in nbrs {
            if ny < h && nx < w && !wall[ny * w + nx] && !seen[ny * w + nx] {
                seen[ny * w + nx] = true;
                queue.push_back((ny, nx));
            }
        }
    }
    seen
}

fn ice_frame(index: usize, frame: &RgbImage, mask: &HsvMask) -> Result<Grid> {
    let (h, w) = frame.shape();
    let red: Vec<bool> = frame
        .pixels()
        .iter()
        .map(|&p| {
            let [r, g, b] = p.map(|c| c as f64 / 255.0);
            mask.contains(rgb_to_hsv(r, g, b))
        })
        .collect();
    let wall = close3(&red, h, w);
    let background = border_fill(&wall, h, w);
    let interior = (0..h * w).filter(|&i| !wall[i] && !background[i]).count();
    if interior == 0 {
        return Err(Error::OpenContour { frame: index + 1 });
    }
    Ok(Grid::from_fn(h, w, |y, x| if background[y * w + x] { 0.0 } else { 1.0 }))
}

/// Binary ice video: interior and outline of the red contour in each frame.
/// Fails with [`Error::OpenContour`] (1-based frame index) when an outline
/// does not enclose any pixel.
pub fn ice_preprocess(frames: &[RgbImage], mask: &HsvMask) -> Result<Preprocessed> {
    check_frames(frames, 1)?;
    mask.validate()?;
    let out = frames.par_iter().enumerate().map(|(i, f)| ice_frame(i, f, mask)).collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    for (t, pair) in out.windows(2).enumerate() {
        if pair[1].sum() > pair[0].sum() {
            warnings.push(format!("frame {}: ice area grew from {} to {} pixels", t + 2, pair[0].sum(), pair[1].sum()));
        }
    }
    Ok(Preprocessed { video: Video::new(out)?, warnings })
}

/// Synthetic fixtures used by tests and the CLI smoke checks.
pub mod fixtures {
    use super::*;

    const BACKGROUND: [u8; 3] = [30, 60, 30];
    const FIRE: [u8; 3] = [240, 120, 20];
    const RED: [u8; 3] = [220, 10, 10];

    /// Blob of radius `r0 + t` in frame `t` on a green background.
    pub fn growing_blob(size: usize, r0: f64, n_frames: usize) -> Vec<RgbImage> {
        let c = (size / 2) as f64;
        (0..n_frames)
            .map(|t| {
                let mut img = RgbImage::filled(size, size, BACKGROUND);
                for y in 0..size {
                    for x in 0..size {
                        if (y as f64 - c).hypot(x as f64 - c) <= r0 + t as f64 {
                            img.set(y, x, FIRE);
                        }
                    }
                }
                img
            })
            .collect()
    }

    /// One-pixel-wide red circle outline of the given radius, centered at
    /// `center` (row, column).
    pub fn red_circle(size: usize, center: (f64, f64), radius: f64) -> RgbImage {
        let mut img = RgbImage::filled(size, size, [200, 200, 210]);
        for y in 0..size {
            for x in 0..size {
                let d = (y as f64 - center.0).hypot(x as f64 - center.1);
                if (d - radius).abs() <= 0.5 {
                    img.set(y, x, RED);
                }
            }
        }
        img
    }

    /// Red outlines of shrinking radius, as in a melting sequence.
    pub fn melting_circles(size: usize, radii: &[f64]) -> Vec<RgbImage> {
        let c = (size / 2) as f64;
        radii.iter().map(|&r| red_circle(size, (c, c), r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn subset(a: &Grid, b: &Grid) -> bool {
        a.data().iter().zip(b.data()).all(|(x, y)| *x <= *y)
    }

    #[test]
    fn fire_blob_gives_nested_chain() {
        let frames = growing_blob(40, 4.0, 6);
        let out = fire_preprocess(&frames, &HsvMask::fire(), Some(BlurConfig::default())).unwrap();
        assert!(out.warnings.is_empty());
        let v = &out.video;
        assert!(v.frames().iter().all(Grid::is_binary));
        for t in 0..v.len() - 1 {
            assert!(subset(v.frame(t), v.frame(t + 1)));
            assert!(v.frame(t + 1).sum() > v.frame(t).sum());
        }
    }

    #[test]
    fn fire_shrinkage_is_repaired() {
        let mut frames = growing_blob(30, 3.0, 4);
        frames.swap(1, 3);
        let out = fire_preprocess(&frames, &HsvMask::fire(), None).unwrap();
        let counts: Vec<f64> = out.video.frames().iter().map(Grid::sum).collect();
        assert!(counts.windows(2).all(|w| w[1] >= w[0]), "{counts:?}");
    }

    #[test]
    fn empty_fire_mask_warns() {
        let frames = growing_blob(20, 3.0, 3);
        let nothing = HsvMask { hue_min: 180.0, hue_max: 200.0, ..HsvMask::fire() };
        let out = fire_preprocess(&frames, &nothing, None).unwrap();
        assert!(out.video.frames().iter().all(|f| f.sum() == 0.0));
        assert!(out.warnings.iter().any(|w| w.contains("any frame")));
    }

    #[test]
    fn red_circle_fills_to_disk() {
        let img = red_circle(32, (16.0, 16.0), 8.0);
        let out = ice_preprocess(&[img], &HsvMask::red_outline()).unwrap();
        let f = out.video.frame(0);
        for y in 0..32 {
            for x in 0..32 {
                let d = (y as f64 - 16.0).hypot(x as f64 - 16.0);
                assert_eq!(f.get(y, x), if d <= 8.5 { 1.0 } else { 0.0 }, "({y}, {x})");
            }
        }
    }

    #[test]
    fn outline_touching_border_still_closes() {
        let img = red_circle(21, (10.0, 10.0), 10.0);
        let out = ice_preprocess(&[img], &HsvMask::red_outline()).unwrap();
        assert_eq!(out.video.frame(0).get(10, 10), 1.0);
        assert_eq!(out.video.frame(0).get(0, 0), 0.0);
    }

    #[test]
    fn one_pixel_gap_is_closed() {
        let mut img = red_circle(32, (16.0, 16.0), 8.0);
        img.set(8, 16, [200, 200, 210]);
        let out = ice_preprocess(&[img], &HsvMask::red_outline()).unwrap();
        assert_eq!(out.video.frame(0).get(16, 16), 1.0);
    }

    #[test]
    fn missing_outline_is_an_open_contour() {
        let frames = vec![red_circle(20, (10.0, 10.0), 5.0), RgbImage::filled(20, 20, [200, 200, 210])];
        match ice_preprocess(&frames, &HsvMask::red_outline()) {
            Err(Error::OpenContour { frame }) => assert_eq!(frame, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn melting_counts_are_nonincreasing() {
        let frames = melting_circles(48, &[18.0, 15.0, 12.0, 9.0, 6.0]);
        let out = ice_preprocess(&frames, &HsvMask::red_outline()).unwrap();
        let counts: Vec<f64> = out.video.frames().iter().map(Grid::sum).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
        assert!(out.warnings.is_empty());
    }
}
