//! Meta-learning recovery: a convolutional encoder reads the first frames of
//! a video and emits a kernel and a threshold, which then drive a soft
//! rollout with no trainable parameters of its own.
//!
//! Encoder: `layers + 1` frames stacked as channels, a stack of strided 3×3
//! convolutions with ReLU, global average pooling, then two dense heads (a
//! `k²` kernel reshaped to `k×k`, and a threshold logit through a sigmoid).

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::dynamics::{rollout, DynParams, ThresholdMode};
use crate::error::{invalid, shape, Error, Result};
use crate::grid::Video;
use crate::kernels::{self, Kernel};
use crate::mbonet::{default_layers, default_steepness, soft_rollout, video_loss};
use crate::optim::{Adam, AdamConfig};
use crate::store;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    /// Side of the emitted kernel (odd).
    pub kernel_size: usize,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "default_conv_size")]
    pub conv_size: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_steepness")]
    pub steepness: f64,
    /// Soft steps during training; the encoder reads `layers + 1` frames.
    #[serde(default = "default_layers")]
    pub layers: usize,
}

fn default_channels() -> Vec<usize> {
    vec![16, 32, 32]
}

fn default_conv_size() -> usize {
    3
}

fn default_stride() -> usize {
    2
}

impl MetaConfig {
    pub fn new(kernel_size: usize) -> Self {
        Self {
            kernel_size,
            channels: default_channels(),
            conv_size: default_conv_size(),
            stride: default_stride(),
            steepness: default_steepness(),
            layers: default_layers(),
        }
    }

    pub fn input_frames(&self) -> usize {
        self.layers + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.conv_size % 2 == 0 {
            return Err(invalid(format!(
                "kernel size {} and conv size {} must be odd",
                self.kernel_size, self.conv_size
            )));
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.stride == 0 || self.layers == 0 {
            return Err(invalid("encoder needs non-empty channels, positive stride and at least one layer"));
        }
        ThresholdMode::soft(self.steepness)?;
        Ok(())
    }

    /// Names and shapes of the parameter tensors, in storage order.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = self.input_frames();
        for (i, &c) in self.channels.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![c, c_in, self.conv_size, self.conv_size]));
            out.push((format!("conv{i}.bias"), vec![c]));
            c_in = c;
        }
        let k2 = self.kernel_size * self.kernel_size;
        out.push(("kernel_head.weight".into(), vec![k2, c_in]));
        out.push(("kernel_head.bias".into(), vec![k2]));
        out.push(("threshold_head.weight".into(), vec![1, c_in]));
        out.push(("threshold_head.bias".into(), vec![1]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaModel {
    config: MetaConfig,
    params: Vec<Tensor>,
}

/// Scale of the head weights relative to uniform fan-in initialization, so
/// the initial outputs sit close to the head biases.
const HEAD_INIT_SCALE: f64 = 1e-2;

impl MetaModel {
    /// Convolutions use He-uniform weights and zero biases. The kernel head
    /// bias starts at a centered unit-sum Gaussian (`sigma = k / 6`) and the
    /// threshold head bias at 0, so a fresh model emits a smooth kernel and
    /// `a ≈ 0.5`.
    pub fn init(config: MetaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel_size;
        let prior = kernels::gaussian(k, 0.0, 0.0, k as f64 / 6.0, k as f64 / 6.0)?;
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, dims)| {
                let n: usize = dims.iter().product();
                let data: Vec<f64> = if name == "kernel_head.bias" {
                    prior.grid().data().to_vec()
                } else if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = dims[1..].iter().product();
                    let bound = if name.starts_with("conv") {
                        (6.0 / fan_in as f64).sqrt()
                    } else {
                        HEAD_INIT_SCALE / (fan_in as f64).sqrt()
                    };
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                Tensor::new(dims, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Total trainable scalars; the rollout stage adds none.
    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn check_input(&self, frames: &Video) -> Result<()> {
        let (h, w) = frames.frame_shape();
        if h < self.config.kernel_size || w < self.config.kernel_size {
            return Err(shape(format!("{h}x{w} frames are smaller than the {0}x{0} kernel", self.config.kernel_size)));
        }
        Ok(())
    }

    /// Inferred kernel and threshold from exactly `layers + 1` frames.
    pub fn encode(&self, frames: &Video) -> Result<(Kernel, f64)> {
        if frames.len() != self.config.input_frames() {
            return Err(invalid(format!("encoder takes {} frames, got {}", self.config.input_frames(), frames.len())));
        }
        self.check_input(frames)?;
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let (kernel, a) = encoder_graph(&mut tape, &self.config, &ids, frames)?;
        Ok((Kernel::raw(tape.value(kernel).to_grid()?)?, tape.value(a).item()?))
    }

    /// Soft predictions of frames `2..=layers + 1`.
    pub fn forward_train(&self, video: &Video) -> Result<Video> {
        let input = self.training_window(video)?;
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let (kernel, a) = encoder_graph(&mut tape, &self.config, &ids, &input)?;
        let preds = soft_rollout(&mut tape, input.frame(0), kernel, a, self.config.steepness, self.config.layers)?;
        Video::new(preds.iter().map(|&p| tape.value(p).to_grid()).collect::<Result<Vec<_>>>()?)
    }

    /// Encodes once, then rolls out `n_steps` hard steps from the first
    /// frame. The returned video starts with that frame.
    pub fn predict(&self, frames: &Video, n_steps: usize) -> Result<(Kernel, f64, Video)> {
        let (kernel, a) = self.encode(frames)?;
        let params = DynParams::new(kernel.clone(), a)?;
        let video = rollout(frames.frame(0), &params, n_steps, ThresholdMode::Hard)?;
        Ok((kernel, a, video))
    }

    /// Mean over videos of the per-video loss.
    pub fn loss(&self, videos: &[&Video]) -> Result<f64> {
        Ok(self.batch_gradient(videos)?.0)
    }

    fn training_window(&self, video: &Video) -> Result<Video> {
        let n = self.config.input_frames();
        if video.len() < n {
            return Err(invalid(format!("video has {} frames, training needs {n}", video.len())));
        }
        self.check_input(video)?;
        video.truncated(n)
    }

    fn video_gradient(&self, video: &Video) -> Result<(f64, Vec<Vec<f64>>)> {
        let input = self.training_window(video)?;
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let (kernel, a) = encoder_graph(&mut tape, &self.config, &ids, &input)?;
        let loss = video_loss(&mut tape, &input, kernel, a, self.config.steepness, self.config.layers)?;
        let grads = tape.backward(loss)?;
        let g = ids.iter().map(|id| grads.get(*id).expect("parameter gradient").data().to_vec()).collect();
        Ok((tape.value(loss).item()?, g))
    }

    /// Mean loss and gradients over `videos`, reduced in input order.
    fn batch_gradient(&self, videos: &[&Video]) -> Result<(f64, Vec<Vec<f64>>)> {
        if videos.is_empty() {
            return Err(invalid("empty training batch"));
        }
        let parts = videos.par_iter().map(|v| self.video_gradient(v)).collect::<Result<Vec<_>>>()?;
        let n = videos.len() as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.numel()]).collect();
        for (l, g) in parts {
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            }
        }
        grads.iter_mut().flatten().for_each(|x| *x /= n);
        Ok((loss / n, grads))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        store::create_dir(dir)?;
        let manifest = MetaManifest {
            format_version: FORMAT_VERSION,
            kind: "meta".into(),
            config: self.config.clone(),
            tensors: self.config.param_shapes().into_iter().map(|(name, shape)| TensorEntry { name, shape }).collect(),
        };
        store::write_json(&dir.join("manifest.json"), &manifest)?;
        let flat: Vec<f64> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        store::write_f64s(&dir.join("weights.bin"), &flat)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: MetaManifest = store::read_json(&dir.join("manifest.json"))?;
        if m.format_version != FORMAT_VERSION || m.kind != "meta" {
            return Err(Error::Checkpoint(format!(
                "{}: expected a meta checkpoint of version {FORMAT_VERSION}, found {} version {}",
                dir.display(),
                m.kind,
                m.format_version
            )));
        }
        m.config.validate()?;
        let expected: Vec<TensorEntry> =
            m.config.param_shapes().into_iter().map(|(name, shape)| TensorEntry { name, shape }).collect();
        if expected != m.tensors {
            return Err(Error::Checkpoint(format!("{}: tensor list does not match the architecture", dir.display())));
        }
        let total = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let flat = store::read_f64s(&dir.join("weights.bin"), total)?;
        let mut offset = 0;
        let params = expected
            .into_iter()
            .map(|t| {
                let n: usize = t.shape.iter().product();
                let data = flat[offset..offset + n].to_vec();
                offset += n;
                Tensor::new(t.shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: m.config, params })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaManifest {
    format_version: u32,
    kind: String,
    config: MetaConfig,
    tensors: Vec<TensorEntry>,
}

/// Builds the encoder on `tape` from parameter nodes in storage order.
/// Returns the `k×k` kernel node and the threshold node.
pub fn encoder_graph(
    tape: &mut Tape,
    config: &MetaConfig,
    params: &[NodeId],
    frames: &Video,
) -> Result<(NodeId, NodeId)> {
    let (h, w) = frames.frame_shape();
    let stacked: Vec<f64> = frames.frames().iter().flat_map(|f| f.data().iter().copied()).collect();
    let mut x = tape.constant(Tensor::new(vec![frames.len(), h, w], stacked)?);
    let n_conv = config.channels.len();
    for i in 0..n_conv {
        let y = tape.conv_layer(x, params[2 * i], params[2 * i + 1], config.stride)?;
        x = tape.relu(y);
    }
    let pooled = tape.global_average_pool(x)?;
    let base = 2 * n_conv;
    let flat = tape.dense(params[base], pooled, params[base + 1])?;
    let kernel = tape.reshape(flat, vec![config.kernel_size, config.kernel_size])?;
    let logit = tape.dense(params[base + 2], pooled, params[base + 3])?;
    let a = tape.sigmoid(logit);
    Ok((kernel, a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Multiplier on `lr` for the kernel head.
    #[serde(default = "default_kernel_head_lr_scale")]
    pub kernel_head_lr_scale: f64,
    /// Multiplier on `lr` for the threshold head.
    #[serde(default = "default_threshold_head_lr_scale")]
    pub threshold_head_lr_scale: f64,
    /// Apply a random flip/transpose to every training video each time it is
    /// drawn. The loss is self-supervised, so a transformed video is a valid
    /// sample whose kernel is the transformed kernel.
    #[serde(default = "default_augment")]
    pub augment: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_augment() -> bool {
    true
}

fn default_epochs() -> usize {
    500
}

fn default_batch_size() -> usize {
    10
}

fn default_lr() -> f64 {
    1e-3
}

fn default_kernel_head_lr_scale() -> f64 {
    0.1
}

fn default_threshold_head_lr_scale() -> f64 {
    10.0
}

impl MetaTrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: default_batch_size(),
            lr: default_lr(),
            kernel_head_lr_scale: default_kernel_head_lr_scale(),
            threshold_head_lr_scale: default_threshold_head_lr_scale(),
            augment: default_augment(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.kernel_head_lr_scale > 0.0 && self.threshold_head_lr_scale > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MetaTrainOutcome {
    pub model: MetaModel,
    /// Mean minibatch loss over each epoch.
    pub loss_history: Vec<f64>,
}

/// Minibatch Adam over shuffled videos. The shuffle of epoch `e` is drawn
/// from the training seed, so runs are reproducible.
pub fn train(videos: &[&Video], model_config: MetaConfig, config: &MetaTrainConfig) -> Result<MetaTrainOutcome> {
    config.validate()?;
    if videos.is_empty() {
        return Err(invalid("no training videos"));
    }
    let mut model = MetaModel::init(model_config, config.seed)?;
    for v in videos {
        model.training_window(v)?;
    }
    let sizes: Vec<usize> = model.params.iter().map(Tensor::numel).collect();
    let kernel_head = 2 * model.config.channels.len();
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &sizes)
        .with_lr_scale(kernel_head, config.kernel_head_lr_scale)
        .with_lr_scale(kernel_head + 1, config.kernel_head_lr_scale)
        .with_lr_scale(kernel_head + 2, config.threshold_head_lr_scale)
        .with_lr_scale(kernel_head + 3, config.threshold_head_lr_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let owned: Vec<Video> = if config.augment {
                chunk
                    .iter()
                    .map(|&i| {
                        let t = rng.gen_range(0..8u8);
                        videos[i].map_frames(|f| f.dihedral(t))
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let batch: Vec<&Video> =
                if config.augment { owned.iter().collect() } else { chunk.iter().map(|&i| videos[i]).collect() };
            let (loss, grads) = model.batch_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            epoch_loss += loss;
            batches += 1;
            let mut params: Vec<&mut [f64]> = model.params.iter_mut().map(|p| p.data_mut()).collect();
            let grads: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut params, &grads);
            if model.params.iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
        }
        let mean = epoch_loss / batches as f64;
        history.push(mean);
        if epoch % 25 == 0 || epoch + 1 == config.epochs {
            info!("epoch {epoch}: loss {mean:.6e}");
        } else {
            debug!("epoch {epoch}: loss {mean:.6e}");
        }
    }
    Ok(MetaTrainOutcome { model, loss_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, GradcheckOptions};
    use crate::grid::Grid;

    fn toy_config() -> MetaConfig {
        MetaConfig { kernel_size: 3, channels: vec![2, 3], conv_size: 3, stride: 2, steepness: 5.0, layers: 3 }
    }

    fn disk_video(n: usize, r: f64, a: f64) -> Video {
        let c = (n / 2) as f64;
        let f0 = Grid::from_fn(n, n, |y, x| if (y as f64 - c).hypot(x as f64 - c) <= r { 1.0 } else { 0.0 });
        let p = DynParams::new(kernels::gaussian(3, 0.0, 0.0, 0.8, 0.8).unwrap(), a).unwrap();
        rollout(&f0, &p, 3, ThresholdMode::Hard).unwrap()
    }

    #[test]
    fn output_contract() {
        let model = MetaModel::init(MetaConfig::new(5), 1).unwrap();
        let v = disk_video(16, 4.0, 0.3);
        let (k, a) = model.encode(&v).unwrap();
        assert_eq!(k.size(), 5);
        assert!(a > 0.0 && a < 1.0);
        assert_eq!(model.encode(&v).unwrap(), (k, a));
        assert!(model.encode(&v.truncated(3).unwrap()).is_err());
        let (_, _, pred) = model.predict(&v, 6).unwrap();
        assert_eq!(pred.len(), 7);
    }

    #[test]
    fn fresh_model_emits_the_prior() {
        let model = MetaModel::init(MetaConfig::new(7), 2).unwrap();
        let (k, a) = model.encode(&disk_video(16, 5.0, 0.4)).unwrap();
        assert!((k.grid().sum() - 1.0).abs() < 0.05, "{}", k.grid().sum());
        assert!((a - 0.5).abs() < 0.01);
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let model = MetaModel::init(MetaConfig::new(15), 0).unwrap();
        let conv = 16 * 4 * 9 + 16 + 32 * 16 * 9 + 32 + 32 * 32 * 9 + 32;
        let heads = 225 * 32 + 225 + 32 + 1;
        assert_eq!(model.n_params(), conv + heads);
    }

    #[test]
    fn encoder_and_rollout_pass_gradcheck() {
        let config = toy_config();
        let model = MetaModel::init(config.clone(), 5).unwrap();
        // move the heads away from the init scale so every path carries signal
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params: Vec<Tensor> = model
            .params
            .iter()
            .map(|p| {
                let data = p.data().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
                Tensor::new(p.shape().to_vec(), data).unwrap()
            })
            .collect();
        let video = disk_video(8, 2.5, 0.35);
        let report = gradcheck(
            &params,
            |tape, ids| {
                let (k, a) = encoder_graph(tape, &config, ids, &video)?;
                video_loss(tape, &video, k, a, config.steepness, config.layers)
            },
            GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn one_step_moves_every_layer() {
        let videos: Vec<Video> = [(3.0, 0.3), (4.0, 0.6)].iter().map(|&(r, a)| disk_video(12, r, a)).collect();
        let refs: Vec<&Video> = videos.iter().collect();
        let config = MetaConfig { kernel_size: 3, ..MetaConfig::new(3) };
        let before = MetaModel::init(config.clone(), 4).unwrap();
        let mut tc = MetaTrainConfig::new(1);
        tc.seed = 4;
        let after = train(&refs, config, &tc).unwrap().model;
        for (b, a) in before.params.iter().zip(&after.params) {
            assert!(b.data().iter().zip(a.data()).any(|(x, y)| x != y));
        }
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let videos: Vec<Video> =
            [(3.0, 0.3), (4.0, 0.3), (4.0, 0.6), (5.0, 0.6)].iter().map(|&(r, a)| disk_video(12, r, a)).collect();
        let refs: Vec<&Video> = videos.iter().collect();
        let config = MetaConfig { steepness: 10.0, ..MetaConfig::new(3) };
        let mut tc = MetaTrainConfig::new(30);
        tc.batch_size = 2;
        let a = train(&refs, config.clone(), &tc).unwrap();
        let b = train(&refs, config, &tc).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.model, b.model);
        assert!(a.loss_history.last().unwrap() < &a.loss_history[0]);
    }

    #[test]
    fn encoding_is_per_sample() {
        let model = MetaModel::init(MetaConfig::new(3), 8).unwrap();
        let v1 = disk_video(12, 3.0, 0.3);
        let v2 = disk_video(12, 5.0, 0.6);
        let e1 = model.encode(&v1).unwrap();
        let _ = model.encode(&v2).unwrap();
        assert_eq!(model.encode(&v1).unwrap(), e1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let model = MetaModel::init(MetaConfig::new(5), 3).unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(MetaModel::load(dir.path()).unwrap(), model);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn encoded_threshold_stays_in_unit_interval(
            pixels in proptest::collection::vec(0.0..1.0f64, 4 * 64),
            seed in 0u64..1000,
        ) {
            let frames = pixels.chunks(64).map(|c| Grid::new(8, 8, c.to_vec()).unwrap()).collect();
            let model = MetaModel::init(toy_config(), seed).unwrap();
            let (k, a) = model.encode(&Video::new(frames).unwrap()).unwrap();
            proptest::prop_assert!(a > 0.0 && a < 1.0);
            proptest::prop_assert!(k.grid().data().iter().all(|v| v.is_finite()));
        }
    }
}
