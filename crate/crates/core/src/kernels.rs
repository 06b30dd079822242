//! Ground-truth kernel families and unit-sum normalization.
//!
//! Offsets are in pixels relative to the kernel center; `x` runs along
//! columns and `y` along rows.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    grid: Grid,
    normalized: bool,
}

impl Kernel {
    /// Wraps an arbitrary odd-sided grid without normalizing it. Used for
    /// learned kernels, which are unconstrained.
    pub fn raw(grid: Grid) -> Result<Self> {
        let (h, w) = grid.shape();
        if h % 2 == 0 || w % 2 == 0 {
            return Err(invalid(format!("kernel must have odd sides, got {h}x{w}")));
        }
        Ok(Self { grid, normalized: false })
    }

    /// Single 1 at the center of a `size`×`size` kernel.
    pub fn delta(size: usize) -> Result<Self> {
        check_size(size)?;
        let c = size / 2;
        let grid = Grid::from_fn(size, size, |y, x| if y == c && x == c { 1.0 } else { 0.0 });
        Ok(Self { grid, normalized: true })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn size(&self) -> usize {
        self.grid.height()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Divides by the entry sum. A kernel that is already normalized is
    /// returned untouched, which makes the operation idempotent bit for bit.
    pub fn normalize(self) -> Result<Self> {
        if self.normalized {
            return Ok(self);
        }
        normalize(&self.grid)
    }
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size % 2 == 0 {
        return Err(invalid(format!("kernel size must be odd, got {size}")));
    }
    Ok(())
}

fn check_sigma(sigma: (f64, f64)) -> Result<()> {
    if !(sigma.0 > 0.0 && sigma.1 > 0.0 && sigma.0.is_finite() && sigma.1.is_finite()) {
        return Err(invalid(format!("sigmas must be positive, got {sigma:?}")));
    }
    Ok(())
}

/// Unit-sum normalization of an odd-sided grid with positive sum.
pub fn normalize(grid: &Grid) -> Result<Kernel> {
    let (h, w) = grid.shape();
    if h % 2 == 0 || w % 2 == 0 {
        return Err(invalid(format!("kernel must have odd sides, got {h}x{w}")));
    }
    let total = grid.sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(invalid(format!("cannot normalize a kernel with sum {total}")));
    }
    Ok(Kernel { grid: grid.map(|v| v / total), normalized: true })
}

/// Samples the anisotropic Gaussian density at integer pixel offsets,
/// without normalization.
pub fn gaussian_density(size: usize, mu: (f64, f64), sigma: (f64, f64)) -> Result<Grid> {
    check_size(size)?;
    check_sigma(sigma)?;
    let c = (size / 2) as f64;
    let (sx, sy) = sigma;
    let scale = 1.0 / (2.0 * PI * sx * sy);
    Ok(Grid::from_fn(size, size, |row, col| {
        let x = col as f64 - c;
        let y = row as f64 - c;
        let ex = (x - mu.0).powi(2) / (2.0 * sx * sx);
        let ey = (y - mu.1).powi(2) / (2.0 * sy * sy);
        scale * (-ex - ey).exp()
    }))
}

/// Standard (`sigma_x == sigma_y`) or skewed Gaussian kernel.
pub fn gaussian(size: usize, mu_x: f64, mu_y: f64, sigma_x: f64, sigma_y: f64) -> Result<Kernel> {
    normalize(&gaussian_density(size, (mu_x, mu_y), (sigma_x, sigma_y))?)
}

/// Mixture `weight·G1 + (1 − weight)·G2` of two sampled Gaussians.
pub fn double_gaussian(
    size: usize,
    mu1: (f64, f64),
    mu2: (f64, f64),
    sigma1: (f64, f64),
    sigma2: (f64, f64),
    weight: f64,
) -> Result<Kernel> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(invalid(format!("mixture weight must be in [0, 1], got {weight}")));
    }
    let g1 = gaussian_density(size, mu1, sigma1)?;
    let g2 = gaussian_density(size, mu2, sigma2)?;
    normalize(&g1.lin_comb(weight, &g2, 1.0 - weight)?)
}

/// Indicator of the disk `|p − center| <= radius`, tested at pixel centers.
pub fn disk(size: usize, center: (f64, f64), radius: f64) -> Result<Kernel> {
    check_size(size)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    let half = (size / 2) as f64 + 0.5;
    if center.0.abs() + radius > half || center.1.abs() + radius > half {
        return Err(invalid(format!("disk at {center:?} with radius {radius} does not fit a {size}x{size} kernel")));
    }
    let c = (size / 2) as f64;
    let grid = Grid::from_fn(size, size, |row, col| {
        let dx = col as f64 - c - center.0;
        let dy = row as f64 - c - center.1;
        if dx * dx + dy * dy <= radius * radius {
            1.0
        } else {
            0.0
        }
    });
    if grid.sum() == 0.0 {
        return Err(invalid(format!("disk of radius {radius} covers no pixel center")));
    }
    normalize(&grid)
}

/// Kernel from a grayscale raster: negative values clamped to 0, then unit-sum.
pub fn raster(image: &Grid) -> Result<Kernel> {
    let clamped = image.map(|v| v.max(0.0));
    if clamped.sum() == 0.0 {
        return Err(invalid("raster kernel image is all zero"));
    }
    normalize(&clamped)
}
