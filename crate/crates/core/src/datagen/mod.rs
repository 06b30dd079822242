//! Synthetic threshold-dynamics datasets.
//!
//! A dataset is a set of (kernel, threshold) combinations, each with a
//! number of videos started from different initial shapes. Every video has a
//! clean version (exact hard rollout) and a corrupted copy under the chosen
//! noise condition. Generation is reproducible from the master seed alone:
//! combination `c` draws from ChaCha stream `COMBO_STREAM + c`, video `i`
//! from stream `i + 1`.

pub mod glyphs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, DynParams, ThresholdMode};
use crate::error::{invalid, Result};
use crate::grid::{conv2d_same, BinaryGrid, Grid, Video};
use crate::kernels::{self, Kernel};

pub use glyphs::render_digit;

const COMBO_STREAM: u64 = 1 << 40;

/// Fresh generator for one logical stream of a master seed.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Source of an initial frame.
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeSource {
    /// Grayscale raster, binarized at 0.5 and centered.
    Raster(Grid),
    /// Disk of the given radius around the frame's center pixel.
    Disk { radius: f64 },
}

/// Binary initial frame of `size`×`size` pixels.
pub fn initial_frame(source: &ShapeSource, size: usize) -> Result<BinaryGrid> {
    match source {
        ShapeSource::Raster(img) => {
            let binary = BinaryGrid::threshold(img, 0.5);
            if binary.measure() == 0.0 {
                return Err(invalid("initial shape raster is empty after binarization"));
            }
            BinaryGrid::try_from_grid(binary.as_grid().center_in(size, size)?)
        }
        ShapeSource::Disk { radius } => {
            let c = (size / 2) as f64;
            if !(*radius > 0.0) || *radius > c {
                return Err(invalid(format!("disk radius {radius} does not fit a {size}x{size} frame")));
            }
            let r2 = radius * radius;
            let g = Grid::from_fn(size, size, |y, x| {
                let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
                if d2 <= r2 {
                    1.0
                } else {
                    0.0
                }
            });
            BinaryGrid::try_from_grid(g)
        }
    }
}

/// Clean video of `n_frames` frames from a hard rollout.
pub fn generate_video(frame0: &Grid, kernel: &Kernel, threshold: f64, n_frames: usize) -> Result<Video> {
    if n_frames < 2 {
        return Err(invalid(format!("a video needs at least 2 frames, got {n_frames}")));
    }
    let params = DynParams::new(kernel.clone(), threshold)?;
    rollout(frame0, &params, n_frames - 1, ThresholdMode::Hard)
}

/// Convolves every frame with a centered unit-sum Gaussian.
pub fn gaussian_blur(video: &Video, blur_size: usize, blur_sigma: f64) -> Result<Video> {
    let k = kernels::gaussian(blur_size, 0.0, 0.0, blur_sigma, blur_sigma)?;
    let frames = video
        .frames()
        .iter()
        .map(|f| conv2d_same(f, k.grid()).map(|g| g.map(|v| v.clamp(0.0, 1.0))))
        .collect::<Result<Vec<_>>>()?;
    Video::new(frames)
}

/// Replaces each pixel, with probability `p`, by a fair coin flip in {0, 1}.
/// Pixels are drawn independently in every frame.
pub fn salt_pepper(video: &Video, p: f64, seed: u64) -> Result<Video> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("noise probability must be in [0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = video
        .frames()
        .iter()
        .map(|f| {
            let data = f
                .data()
                .iter()
                .map(|&v| {
                    if rng.gen_bool(p) {
                        if rng.gen_bool(0.5) {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        v
                    }
                })
                .collect();
            Grid::new(f.height(), f.width(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Video::new(frames)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    Blur {
        #[serde(default = "default_blur_size")]
        size: usize,
        #[serde(default = "default_blur_sigma")]
        sigma: f64,
    },
    SaltPepper {
        #[serde(default = "default_noise_p")]
        p: f64,
    },
}

fn default_blur_size() -> usize {
    5
}

fn default_blur_sigma() -> f64 {
    1.0
}

fn default_noise_p() -> f64 {
    0.3
}

impl NoiseSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            NoiseSpec::None => "none",
            NoiseSpec::Blur { .. } => "blur",
            NoiseSpec::SaltPepper { .. } => "salt_pepper",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseSpec::None => "No Noise",
            NoiseSpec::Blur { .. } => "Gaussian Blur",
            NoiseSpec::SaltPepper { .. } => "Salt-and-Pepper Noise",
        }
    }

    pub fn apply(&self, video: &Video, seed: u64) -> Result<Video> {
        match *self {
            NoiseSpec::None => Ok(video.clone()),
            NoiseSpec::Blur { size, sigma } => gaussian_blur(video, size, sigma),
            NoiseSpec::SaltPepper { p } => salt_pepper(video, p, seed),
        }
    }
}

/// Kernel families that can be sampled at random.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    SkewedGaussian,
    DoubleGaussian,
    Digit,
    Disk,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::Gaussian,
        KernelFamily::SkewedGaussian,
        KernelFamily::DoubleGaussian,
        KernelFamily::Digit,
        KernelFamily::Disk,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::SkewedGaussian => "skewed_gaussian",
            KernelFamily::DoubleGaussian => "double_gaussian",
            KernelFamily::Digit => "digit",
            KernelFamily::Disk => "disk",
        }
    }

    /// Draws a kernel of this family with parameters scaled to `size`.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Kernel> {
        let k = size as f64;
        match self {
            KernelFamily::Gaussian => {
                let sigma = rng.gen_range(0.12..0.18) * k;
                let m = rng.gen_range(-0.06..0.06) * k;
                kernels::gaussian(size, m, m, sigma, sigma)
            }
            KernelFamily::SkewedGaussian => {
                let narrow = rng.gen_range(0.08..0.13) * k;
                let wide = rng.gen_range(0.17..0.25) * k;
                let (sx, sy) = if rng.gen_bool(0.5) { (narrow, wide) } else { (wide, narrow) };
                kernels::gaussian(size, 0.0, 0.0, sx, sy)
            }
            KernelFamily::DoubleGaussian => {
                let d = rng.gen_range(0.12..0.22) * k;
                let theta = rng.gen_range(0.0..std::f64::consts::PI);
                let mu = (d * theta.cos(), d * theta.sin());
                let s1 = rng.gen_range(0.07..0.12) * k;
                let s2 = rng.gen_range(0.07..0.12) * k;
                let w = rng.gen_range(0.35..0.65);
                kernels::double_gaussian(size, mu, (-mu.0, -mu.1), (s1, s1), (s2, s2), w)
            }
            KernelFamily::Digit => {
                let digit = rng.gen_range(0..10u8);
                kernels::raster(&render_digit(digit, size, rng)?)
            }
            KernelFamily::Disk => {
                let radius = rng.gen_range(0.2..0.4) * k;
                let slack = ((k / 2.0 + 0.5 - radius) * 0.5).min(0.08 * k);
                let cx = rng.gen_range(-slack..=slack);
                let cy = rng.gen_range(-slack..=slack);
                kernels::disk(size, (cx, cy), radius)
            }
        }
    }
}

/// How the kernel of each combination is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian {
        size: usize,
        sigma_x: f64,
        sigma_y: f64,
        #[serde(default)]
        mu_x: f64,
        #[serde(default)]
        mu_y: f64,
    },
    DoubleGaussian {
        size: usize,
        mu1: (f64, f64),
        mu2: (f64, f64),
        sigma1: (f64, f64),
        sigma2: (f64, f64),
        weight: f64,
    },
    Disk {
        size: usize,
        #[serde(default)]
        center: (f64, f64),
        radius: f64,
    },
    Digit {
        size: usize,
        digit: u8,
    },
    Delta {
        size: usize,
    },
    /// Families cycled across combinations, parameters drawn at random.
    Random {
        size: usize,
        #[serde(default = "all_families")]
        families: Vec<KernelFamily>,
    },
}

fn all_families() -> Vec<KernelFamily> {
    KernelFamily::ALL.to_vec()
}

impl KernelSpec {
    pub fn size(&self) -> usize {
        match *self {
            KernelSpec::Gaussian { size, .. }
            | KernelSpec::DoubleGaussian { size, .. }
            | KernelSpec::Disk { size, .. }
            | KernelSpec::Digit { size, .. }
            | KernelSpec::Delta { size }
            | KernelSpec::Random { size, .. } => size,
        }
    }

    /// Kernel and family tag for combination `combo` (whose threshold index
    /// is `combo % n_thresholds`).
    fn resolve(&self, combo: usize, n_thresholds: usize, rng: &mut ChaCha8Rng) -> Result<(Kernel, String)> {
        Ok(match self {
            KernelSpec::Gaussian { size, sigma_x, sigma_y, mu_x, mu_y } => {
                let tag = if sigma_x == sigma_y { "gaussian" } else { "skewed_gaussian" };
                (kernels::gaussian(*size, *mu_x, *mu_y, *sigma_x, *sigma_y)?, tag.into())
            }
            KernelSpec::DoubleGaussian { size, mu1, mu2, sigma1, sigma2, weight } => {
                (kernels::double_gaussian(*size, *mu1, *mu2, *sigma1, *sigma2, *weight)?, "double_gaussian".into())
            }
            KernelSpec::Disk { size, center, radius } => (kernels::disk(*size, *center, *radius)?, "disk".into()),
            KernelSpec::Digit { size, digit } => (kernels::raster(&render_digit(*digit, *size, rng)?)?, "digit".into()),
            KernelSpec::Delta { size } => (Kernel::delta(*size)?, "delta".into()),
            KernelSpec::Random { size, families } => {
                if families.is_empty() {
                    return Err(invalid("random kernel spec needs at least one family"));
                }
                let family = families[(combo / n_thresholds.max(1)) % families.len()];
                (family.sample(*size, rng)?, family.tag().into())
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialShape {
    /// A random procedural digit rendered at `size`×`size`.
    Digit {
        #[serde(default = "default_digit_size")]
        size: usize,
    },
    /// A disk of random radius in `[min_radius, max_radius]`.
    Disk { min_radius: f64, max_radius: f64 },
}

fn default_digit_size() -> usize {
    28
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_frame_size")]
    pub frame_size: usize,
    #[serde(default = "default_n_frames")]
    pub n_frames: usize,
    pub kernel: KernelSpec,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "one")]
    pub combos: usize,
    pub videos_per_combo: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Overrides `test_fraction` when set.
    #[serde(default)]
    pub test_count: Option<usize>,
    #[serde(default = "default_initial")]
    pub initial: InitialShape,
    #[serde(default)]
    pub seed: u64,
}

fn default_frame_size() -> usize {
    64
}

fn default_n_frames() -> usize {
    7
}

pub fn default_thresholds() -> Vec<f64> {
    vec![0.2, 0.3, 0.5, 0.6]
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::None
}

fn one() -> usize {
    1
}

fn default_test_fraction() -> f64 {
    0.1
}

fn default_initial() -> InitialShape {
    InitialShape::Digit { size: default_digit_size() }
}

impl DatasetSpec {
    /// Single-dynamics spec: one kernel, one threshold.
    pub fn single(kernel: KernelSpec, threshold: f64, videos: usize, test_count: usize, seed: u64) -> Self {
        Self {
            frame_size: default_frame_size(),
            n_frames: default_n_frames(),
            kernel,
            thresholds: vec![threshold],
            noise: NoiseSpec::None,
            combos: 1,
            videos_per_combo: videos,
            test_fraction: default_test_fraction(),
            test_count: Some(test_count),
            initial: default_initial(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(invalid(format!("thresholds must be non-empty and in (0, 1): {:?}", self.thresholds)));
        }
        if self.combos == 0 || self.videos_per_combo == 0 {
            return Err(invalid("combos and videos_per_combo must be at least 1"));
        }
        if self.n_frames < 2 {
            return Err(invalid("n_frames must be at least 2"));
        }
        if self.kernel.size() % 2 == 0 || self.kernel.size() > self.frame_size {
            return Err(invalid(format!(
                "kernel size {} must be odd and at most the frame size {}",
                self.kernel.size(),
                self.frame_size
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(invalid(format!("test_fraction must be in [0, 1), got {}", self.test_fraction)));
        }
        if self.test_count.unwrap_or(0) >= self.total_videos() {
            return Err(invalid("test_count leaves no training videos"));
        }
        if let InitialShape::Digit { size } = self.initial {
            if size > self.frame_size {
                return Err(invalid(format!("digit size {size} exceeds frame size {}", self.frame_size)));
            }
        }
        if let NoiseSpec::SaltPepper { p } = self.noise {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("salt-and-pepper probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn total_videos(&self) -> usize {
        self.combos * self.videos_per_combo
    }

    pub fn n_test(&self) -> usize {
        self.test_count.unwrap_or_else(|| (self.total_videos() as f64 * self.test_fraction).round() as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub combo: usize,
    pub kernel_family: String,
    pub threshold: f64,
    pub noise: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub clean: Video,
    pub noisy: Video,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Combo {
    pub index: usize,
    pub family: String,
    pub threshold: f64,
    pub kernel: Kernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub combos: Vec<Combo>,
    pub samples: Vec<VideoSample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn train_samples(&self) -> Vec<&VideoSample> {
        self.train.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn test_samples(&self) -> Vec<&VideoSample> {
        self.test.iter().map(|&i| &self.samples[i]).collect()
    }
}

/// Test videos are taken from the end of each combination in turn, so every
/// combination is represented before any contributes a second test video.
fn split(combos: usize, per_combo: usize, n_test: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order = Vec::with_capacity(combos * per_combo);
    for rank in 0..per_combo {
        for c in 0..combos {
            order.push(c * per_combo + (per_combo - 1 - rank));
        }
    }
    let mut test: Vec<usize> = order[..n_test].to_vec();
    test.sort_unstable();
    let train = (0..combos * per_combo).filter(|i| test.binary_search(i).is_err()).collect();
    (train, test)
}

fn build_sample(spec: &DatasetSpec, combo: &Combo, index: usize) -> Result<VideoSample> {
    let seed = stream_rng(spec.seed, index as u64 + 1).gen::<u64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = match spec.initial {
        InitialShape::Digit { size } => ShapeSource::Raster(render_digit(rng.gen_range(0..10), size, &mut rng)?),
        InitialShape::Disk { min_radius, max_radius } => {
            ShapeSource::Disk { radius: rng.gen_range(min_radius..=max_radius) }
        }
    };
    let frame0 = initial_frame(&source, spec.frame_size)?.into_grid();
    let clean = generate_video(&frame0, &combo.kernel, combo.threshold, spec.n_frames)?;
    let noisy = spec.noise.apply(&clean, rng.gen())?;
    Ok(VideoSample {
        clean,
        noisy,
        meta: SampleMeta {
            combo: combo.index,
            kernel_family: combo.family.clone(),
            threshold: combo.threshold,
            noise: spec.noise.tag().into(),
            seed,
        },
    })
}

/// Builds every combination and video of `spec`. Videos are generated in
/// parallel; the result does not depend on the thread count.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let combos = (0..spec.combos)
        .map(|c| {
            let mut rng = stream_rng(spec.seed, COMBO_STREAM + c as u64);
            let (kernel, family) = spec.kernel.resolve(c, spec.thresholds.len(), &mut rng)?;
            Ok(Combo { index: c, family, threshold: spec.thresholds[c % spec.thresholds.len()], kernel })
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = (0..spec.total_videos())
        .into_par_iter()
        .map(|i| build_sample(spec, &combos[i / spec.videos_per_combo], i))
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = split(spec.combos, spec.videos_per_combo, spec.n_test());
    Ok(Dataset { spec: spec.clone(), combos, samples, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::step;

    fn gaussian_spec() -> KernelSpec {
        KernelSpec::Gaussian { size: 15, sigma_x: 2.0, sigma_y: 2.0, mu_x: 0.0, mu_y: 0.0 }
    }

    #[test]
    fn disk_initial_frame_counts_lattice_points() {
        let f = initial_frame(&ShapeSource::Disk { radius: 10.0 }, 64).unwrap();
        // integer points with x² + y² <= 100
        let mut count = 0;
        for y in -10i32..=10 {
            for x in -10i32..=10 {
                if x * x + y * y <= 100 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 317);
        assert_eq!(f.measure(), 317.0);
    }

    #[test]
    fn raster_initial_frame_placement() {
        let digit = Grid::filled(28, 28, 1.0);
        let f = initial_frame(&ShapeSource::Raster(digit), 64).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let inside = (18..46).contains(&y) && (18..46).contains(&x);
                assert_eq!(f.get(y, x), inside);
            }
        }
        assert!(initial_frame(&ShapeSource::Raster(Grid::zeros(28, 28)), 64).is_err());
        assert!(initial_frame(&ShapeSource::Raster(Grid::filled(70, 70, 1.0)), 64).is_err());
    }

    #[test]
    fn low_threshold_grows_and_half_threshold_thins_digits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let digit = render_digit(4, 28, &mut rng).unwrap();
        let f0 = initial_frame(&ShapeSource::Raster(digit), 64).unwrap().into_grid();
        let k = kernels::gaussian(15, 0.0, 0.0, 2.0, 2.0).unwrap();
        let grow = generate_video(&f0, &k, 0.2, 7).unwrap();
        let counts: Vec<f64> = grow.frames().iter().map(Grid::sum).collect();
        assert!(counts.windows(2).all(|w| w[1] >= w[0]), "{counts:?}");
        let shrink = generate_video(&f0, &k, 0.5, 7).unwrap();
        assert!(shrink.frame(6).sum() < shrink.frame(0).sum());

        let constant = generate_video(&f0, &Kernel::delta(15).unwrap(), 0.4, 5).unwrap();
        assert!(constant.frames().iter().all(|f| f == &f0));
    }

    #[test]
    fn blur_properties() {
        let f = initial_frame(&ShapeSource::Disk { radius: 8.0 }, 32).unwrap().into_grid();
        let v = Video::new(vec![f.clone()]).unwrap();
        let b = gaussian_blur(&v, 5, 1.0).unwrap();
        let bf = b.frame(0);
        assert!(bf.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(bf.data().iter().any(|&x| x > 0.0 && x < 1.0));
        // mass is preserved because the disk stays away from the border
        assert!((bf.sum() - f.sum()).abs() < 1e-9);
        assert_eq!(gaussian_blur(&v, 5, 1e-3).unwrap(), v);
    }

    #[test]
    fn blur_mass_loss_bounded_by_border_band() {
        let f = Grid::filled(16, 16, 1.0);
        let v = Video::new(vec![f.clone()]).unwrap();
        let b = gaussian_blur(&v, 5, 1.0).unwrap();
        let band: f64 = Grid::from_fn(16, 16, |y, x| {
            let d = y.min(x).min(15 - y).min(15 - x);
            if d < 2 {
                1.0
            } else {
                0.0
            }
        })
        .sum();
        let loss = f.sum() - b.frame(0).sum();
        assert!(loss > 0.0 && loss <= band);
    }

    #[test]
    fn salt_pepper_properties() {
        let f = Grid::filled(100, 100, 0.25);
        let v = Video::new(vec![f]).unwrap();
        assert_eq!(salt_pepper(&v, 0.0, 1).unwrap(), v);
        let full = salt_pepper(&v, 1.0, 1).unwrap();
        let ones = full.frame(0).sum();
        let (n, p) = (10_000.0, 0.5);
        let sd = (n * p * (1.0 - p) as f64).sqrt();
        assert!((ones - n * p).abs() <= 3.0 * sd, "{ones}");
        assert!(full.frame(0).is_binary());
        assert_eq!(salt_pepper(&v, 0.3, 9).unwrap(), salt_pepper(&v, 0.3, 9).unwrap());
        assert!(salt_pepper(&v, 1.5, 9).is_err());
    }

    #[test]
    fn split_counts_and_reproducibility() {
        let mut spec = DatasetSpec::single(gaussian_spec(), 0.3, 3, 0, 7);
        spec.test_count = None;
        spec.combos = 10;
        spec.frame_size = 32;
        spec.initial = InitialShape::Disk { min_radius: 4.0, max_radius: 8.0 };
        spec.n_frames = 3;
        let d = build_dataset(&spec).unwrap();
        assert_eq!(d.samples.len(), 30);
        assert_eq!((d.train.len(), d.test.len()), (27, 3));
        assert_eq!(build_dataset(&spec).unwrap(), d);
    }

    #[test]
    fn stratified_split_covers_every_combo() {
        let (train, test) = split(10, 10, 10);
        assert_eq!(test, (0..10).map(|c| c * 10 + 9).collect::<Vec<_>>());
        assert_eq!(train.len(), 90);
    }

    #[test]
    fn paper_scale_count() {
        let spec = DatasetSpec {
            combos: 100,
            videos_per_combo: 30,
            test_count: None,
            ..DatasetSpec::single(KernelSpec::Random { size: 31, families: all_families() }, 0.2, 30, 0, 1)
        };
        assert_eq!(spec.total_videos(), 3000);
        assert_eq!(spec.n_test(), 300);
    }

    #[test]
    fn clean_videos_regenerate_and_noise_only_touches_inputs() {
        let mut spec = DatasetSpec::single(KernelSpec::Random { size: 9, families: all_families() }, 0.3, 2, 0, 11);
        spec.thresholds = default_thresholds();
        spec.combos = 5;
        spec.test_count = Some(1);
        spec.frame_size = 40;
        spec.n_frames = 4;
        spec.noise = NoiseSpec::SaltPepper { p: 0.3 };
        let d = build_dataset(&spec).unwrap();
        for s in &d.samples {
            let combo = &d.combos[s.meta.combo];
            let params = DynParams::new(combo.kernel.clone(), combo.threshold).unwrap();
            for t in 0..s.clean.len() - 1 {
                let next = step(s.clean.frame(t), &params, ThresholdMode::Hard).unwrap();
                assert_eq!(&next, s.clean.frame(t + 1));
            }
            assert!(s.clean.frames().iter().all(Grid::is_binary));
            assert_eq!(s.noisy.len(), s.clean.len());
            assert_ne!(s.noisy, s.clean);
        }
        let families: Vec<&str> = d.combos.iter().map(|c| c.family.as_str()).collect();
        assert_eq!(families, ["gaussian", "gaussian", "gaussian", "gaussian", "skewed_gaussian"]);
    }

    #[test]
    fn every_family_samples_a_valid_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in KernelFamily::ALL {
            for size in [9, 15, 31] {
                let k = family.sample(size, &mut rng).unwrap();
                assert!((k.grid().sum() - 1.0).abs() < 1e-9);
                assert!(k.grid().min() >= 0.0);
                assert_eq!(k.size(), size);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = DatasetSpec::single(gaussian_spec(), 0.3, 3, 1, 0);
        assert!(spec.validate().is_ok());
        spec.thresholds = vec![1.2];
        assert!(spec.validate().is_err());
        let mut spec = DatasetSpec::single(gaussian_spec(), 0.3, 3, 3, 0);
        assert!(spec.validate().is_err());
        spec.test_count = Some(1);
        spec.frame_size = 13;
        assert!(spec.validate().is_err());
    }
}
