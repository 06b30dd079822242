//! Frame and video comparison metrics: global SSIM, Jaccard index, and
//! relative MSE, plus aggregation over a set of test videos.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::grid::{Grid, Video};

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 1.0;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// SSIM over the whole frame (one global window, population moments).
pub fn ssim(x: &Grid, y: &Grid) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(shape(format!("ssim on {:?} vs {:?}", x.shape(), y.shape())));
    }
    let n = x.len() as f64;
    let mu_x = x.sum() / n;
    let mu_y = y.sum() / n;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let (da, db) = (a - mu_x, b - mu_y);
        var_x += da * da;
        var_y += db * db;
        cov += da * db;
    }
    var_x /= n;
    var_y /= n;
    cov /= n;
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    Ok((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2) / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)))
}

/// `|x ∩ y| / |x ∪ y|` on binary frames. Two empty frames score 1.
pub fn jaccard(x: &Grid, y: &Grid) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(shape(format!("jaccard on {:?} vs {:?}", x.shape(), y.shape())));
    }
    if !x.is_binary() || !y.is_binary() {
        return Err(invalid("jaccard needs binary frames"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let (a, b) = (a == 1.0, b == 1.0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `Σ‖pred_i − truth_i‖² / (Σ‖truth_i‖² + ε)` over all frames.
pub fn relative_mse(pred: &Video, truth: &Video, epsilon: f64) -> Result<f64> {
    check_aligned(pred, truth)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in pred.frames().iter().zip(truth.frames()) {
        for (&a, &b) in p.data().iter().zip(t.data()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    Ok(num / (den + epsilon))
}

fn check_aligned(pred: &Video, truth: &Video) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(shape(format!("{} predicted frames vs {} true frames", pred.len(), truth.len())));
    }
    if pred.frame_shape() != truth.frame_shape() {
        return Err(shape(format!(
            "predicted frames {:?} vs true frames {:?}",
            pred.frame_shape(),
            truth.frame_shape()
        )));
    }
    Ok(())
}

/// Inclusive, 1-based frame range, e.g. `2-7`. Serialized as that string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FrameRange {
    pub first: usize,
    pub last: usize,
}

impl FrameRange {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || last < first {
            return Err(invalid(format!("bad frame range {first}-{last}")));
        }
        Ok(Self { first, last })
    }

    fn slice(&self, video: &Video) -> Result<Video> {
        if self.last > video.len() {
            return Err(invalid(format!("frame range {self} exceeds a {}-frame video", video.len())));
        }
        Video::new(video.frames()[self.first - 1..self.last].to_vec())
    }
}

impl std::fmt::Display for FrameRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

impl TryFrom<String> for FrameRange {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FrameRange> for String {
    fn from(r: FrameRange) -> String {
        r.to_string()
    }
}

impl FromStr for FrameRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| invalid(format!("bad frame range '{s}'")));
        match s.split_once('-') {
            Some((a, b)) => FrameRange::new(parse(a)?, parse(b)?),
            None => {
                let n = parse(s)?;
                FrameRange::new(n, n)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub relative_mse: f64,
    pub ssim: f64,
    pub jaccard: f64,
    pub ssim_per_frame: Vec<f64>,
    pub jaccard_per_frame: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frame_range: FrameRange,
    /// Fraction; multiply by 100 for the percentage shown in tables.
    pub relative_mse: f64,
    pub ssim: f64,
    /// Fraction in [0, 1].
    pub jaccard: f64,
    pub per_video: Vec<VideoMetrics>,
}

/// Scores one predicted video against its ground truth over `range`.
/// Predictions are binarized at 0.5 before the Jaccard index.
pub fn evaluate_video(pred: &Video, truth: &Video, range: FrameRange, epsilon: f64) -> Result<VideoMetrics> {
    check_aligned(pred, truth)?;
    let pred = range.slice(pred)?;
    let truth = range.slice(truth)?;
    let mut ssim_per_frame = Vec::with_capacity(pred.len());
    let mut jaccard_per_frame = Vec::with_capacity(pred.len());
    for (p, t) in pred.frames().iter().zip(truth.frames()) {
        ssim_per_frame.push(ssim(p, t)?);
        let binary = p.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        jaccard_per_frame.push(jaccard(&binary, t)?);
    }
    let n = ssim_per_frame.len() as f64;
    Ok(VideoMetrics {
        relative_mse: relative_mse(&pred, &truth, epsilon)?,
        ssim: ssim_per_frame.iter().sum::<f64>() / n,
        jaccard: jaccard_per_frame.iter().sum::<f64>() / n,
        ssim_per_frame,
        jaccard_per_frame,
    })
}

/// Per-video metrics averaged over all videos.
pub fn evaluate(preds: &[Video], truths: &[Video], range: FrameRange, epsilon: f64) -> Result<EvalReport> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(shape(format!("{} predicted videos vs {} true videos", preds.len(), truths.len())));
    }
    let per_video = preds
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (p, t))| evaluate_video(p, t, range, epsilon).map_err(|e| shape(format!("video {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let n = per_video.len() as f64;
    Ok(EvalReport {
        frame_range: range,
        relative_mse: per_video.iter().map(|m| m.relative_mse).sum::<f64>() / n,
        ssim: per_video.iter().map(|m| m.ssim).sum::<f64>() / n,
        jaccard: per_video.iter().map(|m| m.jaccard).sum::<f64>() / n,
        per_video,
    })
}

/// Plain-text table with one row per labelled report.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let header = ["Noise Type", "Relative MSE", "SSIM Value", "Jaccard Index"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|(label, r)| {
            [
                label.to_string(),
                format!("{:.3}%", r.relative_mse * 100.0),
                format!("{:.3}", r.ssim),
                format!("{:.3}%", r.jaccard * 100.0),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!(" {c:<w$} ")).collect();
        let _ = writeln!(out, "|{}|", parts.join("|"));
    };
    line(&header.map(String::from), &mut out);
    let sep: Vec<String> = widths.iter().map(|w| "-".repeat(w + 2)).collect();
    let _ = writeln!(out, "|{}|", sep.join("|"));
    for row in &body {
        line(row, &mut out);
    }
    out
}
