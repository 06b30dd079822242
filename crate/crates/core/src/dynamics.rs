//! Forward threshold dynamics: convolve, then threshold.
//!
//! `Hard` thresholding is the Heaviside step `conv >= a`; `Soft(s)` replaces
//! it with the logistic `1 / (1 + exp(-s (conv - a)))`, which is what the
//! trainers differentiate through.

use crate::error::{invalid, Result};
use crate::grid::{conv2d_same, Grid, Video};
use crate::kernels::Kernel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdMode {
    Hard,
    Soft(f64),
}

impl ThresholdMode {
    pub fn soft(steepness: f64) -> Result<Self> {
        if !(steepness > 0.0 && steepness.is_finite()) {
            return Err(invalid(format!("steepness must be positive, got {steepness}")));
        }
        Ok(Self::Soft(steepness))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynParams {
    kernel: Kernel,
    threshold: f64,
}

impl DynParams {
    pub fn new(kernel: Kernel, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid(format!("threshold must lie in (0, 1), got {threshold}")));
        }
        Ok(Self { kernel, threshold })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Logistic `1 / (1 + exp(-s (x - a)))`, evaluated without overflow.
pub fn sigmoid_threshold(x: f64, a: f64, s: f64) -> f64 {
    logistic(s * (x - a))
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One convolution-threshold update. Ties `conv == a` map to 1.
pub fn step(frame: &Grid, params: &DynParams, mode: ThresholdMode) -> Result<Grid> {
    let conv = conv2d_same(frame, params.kernel.grid())?;
    let a = params.threshold;
    Ok(match mode {
        ThresholdMode::Hard => conv.map(|v| if v >= a { 1.0 } else { 0.0 }),
        ThresholdMode::Soft(s) => {
            if !(s > 0.0) {
                return Err(invalid(format!("steepness must be positive, got {s}")));
            }
            conv.map(|v| sigmoid_threshold(v, a, s))
        }
    })
}

/// `[frame0, step(frame0), ..., step^n(frame0)]`.
pub fn rollout(frame0: &Grid, params: &DynParams, n_steps: usize, mode: ThresholdMode) -> Result<Video> {
    if n_steps == 0 {
        return Err(invalid("rollout needs at least one step"));
    }
    let mut frames = Vec::with_capacity(n_steps + 1);
    frames.push(frame0.clone());
    for t in 0..n_steps {
        let next = step(&frames[t], params, mode)?;
        frames.push(next);
    }
    Video::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinaryGrid;
    use crate::kernels::{disk, gaussian};

    fn point_frame() -> Grid {
        let mut g = Grid::zeros(11, 11);
        g.set(5, 5, 1.0);
        g
    }

    fn disk_frame(size: usize, radius: f64) -> Grid {
        let c = (size / 2) as f64;
        Grid::from_fn(size, size, |y, x| {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            if d2 <= radius * radius {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_threshold(0.3, 0.3, 7.0), 0.5);
        let s = 4.0;
        let v = sigmoid_threshold(0.2 + 3f64.ln() / s, 0.2, s);
        assert!((v - 0.75).abs() < 1e-12);
        assert!(sigmoid_threshold(0.4, 0.5, 100.0) < 1e-4);
        assert!(sigmoid_threshold(-1e6, 0.5, 100.0) >= 0.0);
        assert!(sigmoid_threshold(1e6, 0.5, 100.0) <= 1.0);
    }

    #[test]
    fn delta_kernel_is_identity_under_hard_step() {
        let frame = disk_frame(21, 6.0);
        let p = DynParams::new(Kernel::delta(3).unwrap(), 0.5).unwrap();
        assert_eq!(step(&frame, &p, ThresholdMode::Hard).unwrap(), frame);
    }

    #[test]
    fn point_grows_into_plus_sign() {
        let p = DynParams::new(disk(5, (0.0, 0.0), 1.2).unwrap(), 0.1).unwrap();
        let out = step(&point_frame(), &p, ThresholdMode::Hard).unwrap();
        let on = [(5, 5), (4, 5), (6, 5), (5, 4), (5, 6)];
        for y in 0..11 {
            for x in 0..11 {
                assert_eq!(out.get(y, x), if on.contains(&(y, x)) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn isolated_point_dies() {
        let p = DynParams::new(disk(5, (0.0, 0.0), 1.2).unwrap(), 0.6).unwrap();
        let out = step(&point_frame(), &p, ThresholdMode::Hard).unwrap();
        assert_eq!(out.sum(), 0.0);
    }

    #[test]
    fn tie_maps_to_one() {
        // conv value at the point is exactly 1/5
        let p = DynParams::new(disk(5, (0.0, 0.0), 1.2).unwrap(), 0.2).unwrap();
        let out = step(&point_frame(), &p, ThresholdMode::Hard).unwrap();
        assert_eq!(out.sum(), 5.0);
    }

    #[test]
    fn rollout_shapes_and_fixed_point() {
        let frame = disk_frame(15, 4.0);
        let p = DynParams::new(Kernel::delta(3).unwrap(), 0.7).unwrap();
        let v = rollout(&frame, &p, 1, ThresholdMode::Hard).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.frame(1), &step(&frame, &p, ThresholdMode::Hard).unwrap());
        let v = rollout(&frame, &p, 6, ThresholdMode::Hard).unwrap();
        assert!(v.frames().iter().all(|f| f == &frame));
        assert!(rollout(&frame, &p, 0, ThresholdMode::Hard).is_err());
    }

    #[test]
    fn disk_shrinks_to_extinction_at_half() {
        let frame = disk_frame(64, 10.0);
        let p = DynParams::new(gaussian(15, 0.0, 0.0, 2.0, 2.0).unwrap(), 0.5).unwrap();
        let mut current = frame;
        let mut counts = vec![current.sum()];
        for _ in 0..400 {
            current = step(&current, &p, ThresholdMode::Hard).unwrap();
            counts.push(current.sum());
            if current.sum() == 0.0 {
                break;
            }
        }
        assert_eq!(*counts.last().unwrap(), 0.0, "disk never vanished: {counts:?}");
        for w in counts.windows(2) {
            assert!(w[1] < w[0], "count did not strictly decrease: {counts:?}");
        }
    }

    #[test]
    fn hard_output_is_binary() {
        let frame = Grid::from_fn(16, 16, |y, x| ((y * 31 + x * 7) % 10) as f64 / 10.0);
        let p = DynParams::new(gaussian(5, 0.0, 0.0, 1.0, 1.0).unwrap(), 0.45).unwrap();
        let v = rollout(&frame, &p, 3, ThresholdMode::Hard).unwrap();
        for f in &v.frames()[1..] {
            assert!(BinaryGrid::try_from_grid(f.clone()).is_ok());
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(DynParams::new(Kernel::delta(3).unwrap(), 0.0).is_err());
        assert!(DynParams::new(Kernel::delta(3).unwrap(), 1.0).is_err());
        assert!(ThresholdMode::soft(0.0).is_err());
    }

    fn grid_from(bits: &[bool], n: usize) -> Grid {
        Grid::from_fn(n, n, |y, x| if bits[y * n + x] { 1.0 } else { 0.0 })
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn higher_threshold_gives_a_subset(
            bits in proptest::collection::vec(proptest::bool::ANY, 100),
            weights in proptest::collection::vec(0.0..1.0f64, 9),
            a in 0.01..0.98f64,
            da in 0.0..0.5f64,
        ) {
            let frame = grid_from(&bits, 10);
            let kernel = Kernel::raw(Grid::new(3, 3, weights).unwrap()).unwrap();
            let b = (a + da).min(0.99);
            let low = step(&frame, &DynParams::new(kernel.clone(), a).unwrap(), ThresholdMode::Hard).unwrap();
            let high = step(&frame, &DynParams::new(kernel, b).unwrap(), ThresholdMode::Hard).unwrap();
            proptest::prop_assert!(high.data().iter().zip(low.data()).all(|(h, l)| h <= l));
        }

        #[test]
        fn larger_set_gives_a_superset(
            small in proptest::collection::vec(proptest::bool::ANY, 100),
            extra in proptest::collection::vec(proptest::bool::ANY, 100),
            weights in proptest::collection::vec(0.0..1.0f64, 9),
            a in 0.01..0.99f64,
            s in 1.0..200.0f64,
        ) {
            let big: Vec<bool> = small.iter().zip(&extra).map(|(x, y)| *x || *y).collect();
            let params = DynParams::new(Kernel::raw(Grid::new(3, 3, weights).unwrap()).unwrap(), a).unwrap();
            for mode in [ThresholdMode::Hard, ThresholdMode::Soft(s)] {
                let lo = step(&grid_from(&small, 10), &params, mode).unwrap();
                let hi = step(&grid_from(&big, 10), &params, mode).unwrap();
                proptest::prop_assert!(lo.data().iter().zip(hi.data()).all(|(l, h)| l <= h));
            }
        }
    }
}
