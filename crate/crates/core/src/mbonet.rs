//! Single-dynamics recovery: a recurrent network whose layers all share one
//! learnable kernel and one learnable threshold.
//!
//! Training unrolls `layers` soft threshold steps from the first frame and
//! fits frames `2..=layers + 1`. The threshold is stored as an unconstrained
//! logit so the effective `a = sigmoid(raw)` always lies in (0, 1); the kernel
//! is used exactly as learned, without projection.

use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::dynamics::{logistic, rollout, DynParams, ThresholdMode};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Video};
use crate::kernels::{self, Kernel};
use crate::optim::{Adam, AdamConfig};
use crate::store;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MboModel {
    raw_kernel: Grid,
    raw_threshold: f64,
    steepness: f64,
    layers: usize,
}

impl MboModel {
    /// Unit-sum centered Gaussian with `sigma = size / 6`, perturbed by
    /// uniform noise in ±1e-3, and `a = 0.5`.
    pub fn init(kernel_size: usize, steepness: f64, layers: usize, seed: u64) -> Result<Self> {
        let base = kernels::gaussian(kernel_size, 0.0, 0.0, kernel_size as f64 / 6.0, kernel_size as f64 / 6.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = base.grid().map(|v| v + rng.gen_range(-1e-3..1e-3));
        Self::from_parts(raw, 0.0, steepness, layers)
    }

    pub fn from_parts(raw_kernel: Grid, raw_threshold: f64, steepness: f64, layers: usize) -> Result<Self> {
        Kernel::raw(raw_kernel.clone())?;
        if !raw_threshold.is_finite() {
            return Err(invalid(format!("raw threshold must be finite, got {raw_threshold}")));
        }
        ThresholdMode::soft(steepness)?;
        if layers == 0 {
            return Err(invalid("model needs at least one layer"));
        }
        Ok(Self { raw_kernel, raw_threshold, steepness, layers })
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::raw(self.raw_kernel.clone()).expect("validated at construction")
    }

    pub fn kernel_size(&self) -> usize {
        self.raw_kernel.height()
    }

    pub fn raw_threshold(&self) -> f64 {
        self.raw_threshold
    }

    /// Effective threshold `sigmoid(raw_threshold)`.
    pub fn threshold(&self) -> f64 {
        logistic(self.raw_threshold)
    }

    pub fn steepness(&self) -> f64 {
        self.steepness
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dyn_params(&self) -> Result<DynParams> {
        DynParams::new(self.kernel(), self.threshold())
    }

    /// Soft predictions of frames `2..=layers + 1`.
    pub fn forward_train(&self, frame0: &Grid) -> Result<Video> {
        let mut tape = Tape::new();
        let (k, a) = self.leaves(&mut tape);
        let preds = soft_rollout(&mut tape, frame0, k, a, self.steepness, self.layers)?;
        Video::new(preds.iter().map(|&p| tape.value(p).to_grid()).collect::<Result<Vec<_>>>()?)
    }

    /// Hard rollout of `n_steps` frames after `frame0`; the returned video
    /// starts with `frame0` itself.
    pub fn predict(&self, frame0: &Grid, n_steps: usize) -> Result<Video> {
        rollout(frame0, &self.dyn_params()?, n_steps, ThresholdMode::Hard)
    }

    /// Mean over videos of the per-video loss.
    pub fn loss(&self, videos: &[&Video]) -> Result<f64> {
        Ok(self.batch_gradient(videos)?.0)
    }

    fn leaves(&self, tape: &mut Tape) -> (NodeId, NodeId) {
        let k = tape.param(Tensor::from_grid(&self.raw_kernel));
        let raw = tape.param(Tensor::scalar(self.raw_threshold));
        (k, tape.sigmoid(raw))
    }

    /// Loss of one video and its gradients (kernel, raw threshold).
    fn video_gradient(&self, video: &Video) -> Result<(f64, Vec<f64>, f64)> {
        check_video(video, self.layers)?;
        let mut tape = Tape::new();
        let k = tape.param(Tensor::from_grid(&self.raw_kernel));
        let raw = tape.param(Tensor::scalar(self.raw_threshold));
        let a = tape.sigmoid(raw);
        let loss = video_loss(&mut tape, video, k, a, self.steepness, self.layers)?;
        let grads = tape.backward(loss)?;
        let gk = grads.get(k).expect("kernel gradient").data().to_vec();
        let gr = grads.get(raw).expect("threshold gradient").item()?;
        Ok((tape.value(loss).item()?, gk, gr))
    }

    /// Batch loss and gradients. Videos are processed in parallel and
    /// reduced in input order, so the result does not depend on threads.
    fn batch_gradient(&self, videos: &[&Video]) -> Result<(f64, Vec<f64>, f64)> {
        if videos.is_empty() {
            return Err(invalid("empty training batch"));
        }
        let parts = videos.par_iter().map(|v| self.video_gradient(v)).collect::<Result<Vec<_>>>()?;
        let n = videos.len() as f64;
        let mut loss = 0.0;
        let mut gk = vec![0.0; self.raw_kernel.len()];
        let mut gr = 0.0;
        for (l, g, r) in parts {
            loss += l;
            gk.iter_mut().zip(&g).for_each(|(acc, x)| *acc += x);
            gr += r;
        }
        gk.iter_mut().for_each(|x| *x /= n);
        Ok((loss / n, gk, gr / n))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        store::create_dir(dir)?;
        let manifest = MboManifest {
            format_version: FORMAT_VERSION,
            kind: "mbo".into(),
            kernel_size: self.kernel_size(),
            a: self.threshold(),
            raw_threshold: self.raw_threshold,
            s: self.steepness,
            layers: self.layers,
        };
        store::write_json(&dir.join("manifest.json"), &manifest)?;
        store::write_f64s(&dir.join("kernel.bin"), self.raw_kernel.data())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: MboManifest = store::read_json(&dir.join("manifest.json"))?;
        if m.format_version != FORMAT_VERSION || m.kind != "mbo" {
            return Err(Error::Checkpoint(format!(
                "{}: expected an mbo checkpoint of version {FORMAT_VERSION}, found {} version {}",
                dir.display(),
                m.kind,
                m.format_version
            )));
        }
        let data = store::read_f64s(&dir.join("kernel.bin"), m.kernel_size * m.kernel_size)?;
        Self::from_parts(Grid::new(m.kernel_size, m.kernel_size, data)?, m.raw_threshold, m.s, m.layers)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MboManifest {
    format_version: u32,
    kind: String,
    kernel_size: usize,
    /// Informational; `raw_threshold` is authoritative.
    a: f64,
    raw_threshold: f64,
    s: f64,
    layers: usize,
}

fn check_video(video: &Video, layers: usize) -> Result<()> {
    if video.len() < layers + 1 {
        return Err(invalid(format!("video has {} frames, training needs {}", video.len(), layers + 1)));
    }
    Ok(())
}

/// Soft rollout on a tape; returns the `layers` prediction nodes.
pub fn soft_rollout(
    tape: &mut Tape,
    frame0: &Grid,
    kernel: NodeId,
    a: NodeId,
    steepness: f64,
    layers: usize,
) -> Result<Vec<NodeId>> {
    let mut x = tape.constant(Tensor::from_grid(frame0));
    let mut preds = Vec::with_capacity(layers);
    for _ in 0..layers {
        let c = tape.conv2d_same(x, kernel)?;
        x = tape.sigmoid_threshold(c, a, steepness)?;
        preds.push(x);
    }
    Ok(preds)
}

/// Sum over frames `2..=layers + 1` of the per-pixel mean squared error.
pub fn video_loss(
    tape: &mut Tape,
    video: &Video,
    kernel: NodeId,
    a: NodeId,
    steepness: f64,
    layers: usize,
) -> Result<NodeId> {
    let preds = soft_rollout(tape, video.frame(0), kernel, a, steepness, layers)?;
    let mut total: Option<NodeId> = None;
    for (i, p) in preds.into_iter().enumerate() {
        let target = tape.constant(Tensor::from_grid(video.frame(i + 1)));
        let l = tape.mse_loss(p, target)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one layer"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Adam step size for the kernel weights.
    #[serde(default = "default_kernel_lr")]
    pub kernel_lr: f64,
    /// Adam step size for the threshold logit.
    #[serde(default = "default_threshold_lr")]
    pub threshold_lr: f64,
    #[serde(default = "default_steepness")]
    pub steepness: f64,
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub kernel_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    500
}

fn default_kernel_lr() -> f64 {
    1e-4
}

fn default_threshold_lr() -> f64 {
    0.1
}

pub(crate) fn default_steepness() -> f64 {
    100.0
}

pub(crate) fn default_layers() -> usize {
    3
}

impl TrainConfig {
    pub fn new(kernel_size: usize, epochs: usize) -> Self {
        Self {
            epochs,
            kernel_lr: default_kernel_lr(),
            threshold_lr: default_threshold_lr(),
            steepness: default_steepness(),
            layers: default_layers(),
            kernel_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.kernel_lr > 0.0 && self.threshold_lr > 0.0) {
            return Err(invalid(format!(
                "learning rates must be positive, got kernel {} and threshold {}",
                self.kernel_lr, self.threshold_lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MboModel,
    /// Batch loss before each optimizer step.
    pub loss_history: Vec<f64>,
}

/// Full-batch Adam on the shared kernel and threshold.
pub fn train(videos: &[&Video], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    for v in videos {
        check_video(v, config.layers)?;
        if config.kernel_size > v.frame_shape().0.min(v.frame_shape().1) {
            return Err(invalid(format!(
                "kernel size {} exceeds frame size {:?}",
                config.kernel_size,
                v.frame_shape()
            )));
        }
    }
    let mut model = MboModel::init(config.kernel_size, config.steepness, config.layers, config.seed)?;
    // Base rate 1 so the per-group scales are the actual step sizes.
    let mut adam = Adam::new(AdamConfig::with_lr(1.0), &[model.raw_kernel.len(), 1])
        .with_lr_scale(0, config.kernel_lr)
        .with_lr_scale(1, config.threshold_lr);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, gk, gr) = model.batch_gradient(videos)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
        let mut kernel = std::mem::replace(&mut model.raw_kernel, Grid::zeros(1, 1)).into_data();
        let mut raw = [model.raw_threshold];
        adam.step(&mut [&mut kernel, &mut raw], &[&gk, &[gr]]);
        model.raw_kernel = Grid::new(config.kernel_size, config.kernel_size, kernel)
            .map_err(|_| Error::Diverged { epoch, loss: f64::NAN })?;
        model.raw_threshold = raw[0];
        if epoch % 50 == 0 || epoch + 1 == config.epochs {
            info!("epoch {epoch}: loss {loss:.6e}, a {:.4}", model.threshold());
        } else {
            debug!("epoch {epoch}: loss {loss:.6e}");
        }
    }
    Ok(TrainOutcome { model, loss_history: history })
}
