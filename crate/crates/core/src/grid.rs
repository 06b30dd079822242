//! Dense 2D grids, binary masks, videos, and the same-size correlation
//! primitive that every other module is built on.
//!
//! Convolution here is cross-correlation with zero padding:
//! `out[p] = Σ_q kernel[q] · image[p + q − c]`, `c` the kernel center.
//! The slice-level routines are shared with the autodiff tape, which needs
//! the two adjoints as well.

use crate::error::{invalid, shape, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("grid must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(shape(format!("grid {height}x{width} needs {} values, got {}", height * width, data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid must be non-empty");
        assert!(value.is_finite());
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "grid must be non-empty");
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let v = f(y, x);
                assert!(v.is_finite(), "non-finite value at ({y}, {x})");
                data.push(v);
            }
        }
        Self { height, width, data }
    }

    /// Builds a grid from values known to be finite (internal fast path).
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        assert!(value.is_finite());
        self.data[y * self.width + x] = value;
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        Self::from_raw(self.height, self.width, data)
    }

    /// One of the eight symmetries of the square: bit 0 flips columns, bit 1
    /// flips rows, bit 2 transposes (applied last).
    pub fn dihedral(&self, t: u8) -> Grid {
        let (h, w) = self.shape();
        let src = |y: usize, x: usize| {
            let y = if t & 2 != 0 { h - 1 - y } else { y };
            let x = if t & 1 != 0 { w - 1 - x } else { x };
            self.get(y, x)
        };
        if t & 4 != 0 {
            Grid::from_fn(w, h, |r, c| src(c, r))
        } else {
            Grid::from_fn(h, w, src)
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `alpha * self + beta * other`, elementwise.
    pub fn lin_comb(&self, alpha: f64, other: &Grid, beta: f64) -> Result<Grid> {
        if self.shape() != other.shape() {
            return Err(shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect();
        Grid::new(self.height, self.width, data)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Pastes `self` into a zero canvas of the given size with its top-left
    /// corner at `(top, left)`.
    pub fn embed(&self, height: usize, width: usize, top: usize, left: usize) -> Result<Grid> {
        if top + self.height > height || left + self.width > width {
            return Err(invalid(format!(
                "{}x{} source does not fit at ({top}, {left}) in {height}x{width}",
                self.height, self.width
            )));
        }
        let mut out = vec![0.0; height * width];
        for y in 0..self.height {
            let dst = (top + y) * width + left;
            out[dst..dst + self.width].copy_from_slice(&self.data[y * self.width..(y + 1) * self.width]);
        }
        Ok(Grid::from_raw(height, width, out))
    }

    /// Centers `self` in a zero canvas of the given size.
    pub fn center_in(&self, height: usize, width: usize) -> Result<Grid> {
        if self.height > height || self.width > width {
            return Err(invalid(format!("{}x{} source larger than {height}x{width} frame", self.height, self.width)));
        }
        self.embed(height, width, (height - self.height) / 2, (width - self.width) / 2)
    }
}

/// A grid whose entries are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryGrid(Grid);

impl BinaryGrid {
    pub fn try_from_grid(grid: Grid) -> Result<Self> {
        if !grid.is_binary() {
            return Err(invalid("grid has entries other than 0 and 1"));
        }
        Ok(Self(grid))
    }

    /// Super-level set indicator `{grid >= level}`.
    pub fn threshold(grid: &Grid, level: f64) -> Self {
        Self(grid.map(|v| if v >= level { 1.0 } else { 0.0 }))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid::zeros(height, width))
    }

    pub fn as_grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.0.get(y, x) == 1.0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.0.set(y, x, if on { 1.0 } else { 0.0 });
    }

    /// Number of 1-pixels.
    pub fn measure(&self) -> f64 {
        measure(self)
    }
}

/// Number of 1-pixels of a binary grid.
pub fn measure(binary: &BinaryGrid) -> f64 {
    binary.0.sum()
}

/// An ordered sequence of equally sized frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    frames: Vec<Grid>,
}

impl Video {
    pub fn new(frames: Vec<Grid>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(invalid("video needs at least one frame"));
        };
        let s = first.shape();
        if let Some(i) = frames.iter().position(|f| f.shape() != s) {
            return Err(shape(format!("frame {i} is {:?}, frame 0 is {:?}", frames[i].shape(), s)));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Grid] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Grid> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &Grid {
        &self.frames[i]
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }

    /// Keeps the first `n` frames.
    pub fn truncated(&self, n: usize) -> Result<Video> {
        if n == 0 || n > self.len() {
            return Err(invalid(format!("cannot keep {n} of {} frames", self.len())));
        }
        Ok(Video { frames: self.frames[..n].to_vec() })
    }

    pub fn map_frames(&self, f: impl Fn(&Grid) -> Grid) -> Result<Video> {
        Video::new(self.frames.iter().map(f).collect())
    }
}

fn check_kernel(image: (usize, usize), kernel: (usize, usize)) -> Result<()> {
    let (ih, iw) = image;
    let (kh, kw) = kernel;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid(format!("kernel must have odd sides, got {kh}x{kw}")));
    }
    if kh > ih || kw > iw {
        return Err(invalid(format!("kernel {kh}x{kw} larger than image {ih}x{iw}")));
    }
    Ok(())
}

/// Same-size cross-correlation with zero padding.
pub fn conv2d_same(image: &Grid, kernel: &Grid) -> Result<Grid> {
    check_kernel(image.shape(), kernel.shape())?;
    let (h, w) = image.shape();
    let mut out = vec![0.0; h * w];
    correlate_same(image.data(), h, w, kernel.data(), kernel.height(), kernel.width(), &mut out);
    Grid::new(h, w, out)
}

/// Valid index range of `v` such that `0 <= v + d < n`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// `out += correlate(image, kernel)`.
pub(crate) fn correlate_same(image: &[f64], h: usize, w: usize, kernel: &[f64], kh: usize, kw: usize, out: &mut [f64]) {
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    for i in 0..kh {
        let dy = i as isize - ch;
        let (y0, y1) = span(h, dy);
        for j in 0..kw {
            let k = kernel[i * kw + j];
            if k == 0.0 {
                continue;
            }
            let dx = j as isize - cw;
            let (x0, x1) = span(w, dx);
            let len = x1 - x0;
            for y in y0..y1 {
                let src_row = (y as isize + dy) as usize * w;
                let src = &image[src_row + (x0 as isize + dx) as usize..][..len];
                let dst = &mut out[y * w + x0..][..len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
}

/// Adjoint of [`correlate_same`] with respect to the image:
/// `grad_image += Σ_q kernel[q] · grad_out[r − q + c]`.
pub(crate) fn correlate_same_grad_image(
    grad_out: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
    grad_image: &mut [f64],
) {
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    for i in 0..kh {
        let dy = i as isize - ch;
        let (y0, y1) = span(h, dy);
        for j in 0..kw {
            let k = kernel[i * kw + j];
            if k == 0.0 {
                continue;
            }
            let dx = j as isize - cw;
            let (x0, x1) = span(w, dx);
            let len = x1 - x0;
            for y in y0..y1 {
                let dst_row = (y as isize + dy) as usize * w;
                let dst = &mut grad_image[dst_row + (x0 as isize + dx) as usize..][..len];
                let src = &grad_out[y * w + x0..][..len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
}

/// Adjoint of [`correlate_same`] with respect to the kernel:
/// `grad_kernel[q] += Σ_p grad_out[p] · image[p + q − c]`.
pub(crate) fn correlate_same_grad_kernel(
    image: &[f64],
    grad_out: &[f64],
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    grad_kernel: &mut [f64],
) {
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    for i in 0..kh {
        let dy = i as isize - ch;
        let (y0, y1) = span(h, dy);
        for j in 0..kw {
            let dx = j as isize - cw;
            let (x0, x1) = span(w, dx);
            let len = x1 - x0;
            let mut acc = 0.0;
            for y in y0..y1 {
                let src_row = (y as isize + dy) as usize * w;
                let img = &image[src_row + (x0 as isize + dx) as usize..][..len];
                let g = &grad_out[y * w + x0..][..len];
                acc += img.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            }
            grad_kernel[i * kw + j] += acc;
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dihedral_group_actions() {
        let g = Grid::from_fn(2, 3, |y, x| (y * 3 + x) as f64);
        assert_eq!(g.dihedral(0), g);
        assert_eq!(g.dihedral(1).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(g.dihedral(2).data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.dihedral(4).shape(), (3, 2));
        assert_eq!(g.dihedral(4).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        for t in 0..4 {
            assert_eq!(g.dihedral(t).dihedral(t), g);
        }
    }

    /// Transforming the image and the kernel together commutes with the
    /// correlation.
    #[test]
    fn dihedral_commutes_with_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Grid::from_fn(9, 9, |_, _| rng.gen_range(0.0..1.0));
        let k = Grid::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        for t in 0..8 {
            let lhs = conv2d_same(&img.dihedral(t), &k.dihedral(t)).unwrap();
            let rhs = conv2d_same(&img, &k).unwrap().dihedral(t);
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Quadruple-loop reference for the correlation definition.
    pub(crate) fn naive_conv(image: &Grid, kernel: &Grid) -> Grid {
        let (h, w) = image.shape();
        let (kh, kw) = kernel.shape();
        let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
        Grid::from_fn(h, w, |y, x| {
            let mut acc = 0.0;
            for i in 0..kh {
                for j in 0..kw {
                    let sy = y as isize + i as isize - ch;
                    let sx = x as isize + j as isize - cw;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        acc += kernel.get(i, j) * image.get(sy as usize, sx as usize);
                    }
                }
            }
            acc
        })
    }

    fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid {
        Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_grid(&mut rng, 5, 5);
        let out = conv2d_same(&img, &Grid::filled(1, 1, 1.0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn box_filter_on_ones() {
        let img = Grid::filled(3, 3, 1.0);
        let k = Grid::filled(3, 3, 1.0 / 9.0);
        let out = conv2d_same(&img, &k).unwrap();
        assert!((out.get(1, 1) - 1.0).abs() < 1e-15);
        for (y, x) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert!((out.get(y, x) - 6.0 / 9.0).abs() < 1e-15);
        }
        for (y, x) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert!((out.get(y, x) - 4.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_8x8_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_grid(&mut rng, 8, 8);
        let k = random_grid(&mut rng, 3, 3);
        let fast = conv2d_same(&img, &k).unwrap();
        let slow = naive_conv(&img, &k);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_even_or_oversized_kernels() {
        let img = Grid::zeros(4, 4);
        assert!(conv2d_same(&img, &Grid::zeros(2, 3)).is_err());
        assert!(conv2d_same(&img, &Grid::zeros(5, 3)).is_err());
        assert!(conv2d_same(&img, &Grid::zeros(3, 3)).is_ok());
    }

    #[test]
    fn grid_rejects_bad_data() {
        assert!(Grid::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Grid::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Grid::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn measure_cases() {
        assert_eq!(BinaryGrid::zeros(4, 4).measure(), 0.0);
        let ones = BinaryGrid::try_from_grid(Grid::filled(4, 4, 1.0)).unwrap();
        assert_eq!(ones.measure(), 16.0);
        let checker = Grid::from_fn(4, 4, |y, x| ((y + x) % 2) as f64);
        assert_eq!(measure(&BinaryGrid::try_from_grid(checker).unwrap()), 8.0);
        assert!(BinaryGrid::try_from_grid(Grid::filled(2, 2, 0.5)).is_err());
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <conv(x, k), g> = <x, conv_adj_image(g, k)> = <k, conv_adj_kernel(x, g)>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w, kh, kw) = (9, 7, 5, 3);
        let x = random_grid(&mut rng, h, w);
        let k = random_grid(&mut rng, kh, kw);
        let g = random_grid(&mut rng, h, w);
        let y = conv2d_same(&x, &k).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let mut gx = vec![0.0; h * w];
        correlate_same_grad_image(g.data(), h, w, k.data(), kh, kw, &mut gx);
        let mid: f64 = x.data().iter().zip(&gx).map(|(a, b)| a * b).sum();
        let mut gk = vec![0.0; kh * kw];
        correlate_same_grad_kernel(x.data(), g.data(), h, w, kh, kw, &mut gk);
        let rhs: f64 = k.data().iter().zip(&gk).map(|(a, b)| a * b).sum();
        assert!((lhs - mid).abs() < 1e-12);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn sizes() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
        (1usize..=16, 1usize..=16, 0usize..=3, 0usize..=3, any::<u64>()).prop_filter_map(
            "kernel fits",
            |(h, w, a, b, seed)| {
                let (kh, kw) = (2 * a + 1, 2 * b + 1);
                (kh <= h && kw <= w).then_some((h, w, kh, kw, seed))
            },
        )
    }

    proptest! {
        #[test]
        fn matches_naive_oracle((h, w, kh, kw, seed) in sizes()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_grid(&mut rng, h, w);
            let k = random_grid(&mut rng, kh, kw);
            let fast = conv2d_same(&img, &k).unwrap();
            let slow = naive_conv(&img, &k);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn linear_in_image((h, w, kh, kw, seed) in sizes(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_grid(&mut rng, h, w);
            let y = random_grid(&mut rng, h, w);
            let k = random_grid(&mut rng, kh, kw);
            let lhs = conv2d_same(&x.lin_comb(alpha, &y, beta).unwrap(), &k).unwrap();
            let rhs = conv2d_same(&x, &k).unwrap()
                .lin_comb(alpha, &conv2d_same(&y, &k).unwrap(), beta).unwrap();
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }

        #[test]
        fn monotone_for_nonnegative_kernels((h, w, kh, kw, seed) in sizes()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Grid::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0));
            let y = x.lin_comb(1.0, &Grid::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0)), 1.0).unwrap();
            let k = Grid::from_fn(kh, kw, |_, _| rng.gen_range(0.0..1.0));
            let cx = conv2d_same(&x, &k).unwrap();
            let cy = conv2d_same(&y, &k).unwrap();
            for (a, b) in cx.data().iter().zip(cy.data()) {
                prop_assert!(a <= b);
            }
        }
    }
}
