//! Procedural handwritten-style digits.
//!
//! Each digit is a set of polylines in a unit box. Rendering applies a random
//! affine jitter and a random stroke width, then shades every pixel by its
//! distance to the nearest stroke with a one-pixel soft edge, which gives
//! grayscale rasters with the look of MNIST digits.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::grid::Grid;

type Polyline = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize) -> Polyline {
    (0..=n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn strokes(digit: u8) -> Vec<Polyline> {
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.28, 0.44, 16)],
        1 => vec![vec![(0.35, 0.2), (0.52, 0.05), (0.52, 0.95)]],
        2 => vec![vec![
            (0.2, 0.3),
            (0.3, 0.1),
            (0.5, 0.05),
            (0.7, 0.1),
            (0.78, 0.3),
            (0.68, 0.5),
            (0.2, 0.95),
            (0.82, 0.95),
        ]],
        3 => vec![vec![
            (0.2, 0.1),
            (0.65, 0.07),
            (0.78, 0.25),
            (0.68, 0.43),
            (0.4, 0.5),
            (0.7, 0.57),
            (0.8, 0.76),
            (0.66, 0.93),
            (0.2, 0.9),
        ]],
        4 => vec![vec![(0.66, 0.95), (0.66, 0.05), (0.15, 0.65), (0.86, 0.65)]],
        5 => vec![vec![(0.8, 0.05), (0.27, 0.05), (0.22, 0.45), (0.6, 0.4), (0.8, 0.6), (0.7, 0.9), (0.2, 0.9)]],
        6 => vec![vec![
            (0.7, 0.05),
            (0.35, 0.3),
            (0.2, 0.7),
            (0.35, 0.95),
            (0.65, 0.95),
            (0.8, 0.75),
            (0.65, 0.52),
            (0.35, 0.52),
            (0.22, 0.66),
        ]],
        7 => vec![vec![(0.15, 0.05), (0.85, 0.05), (0.4, 0.95)], vec![(0.35, 0.5), (0.72, 0.5)]],
        8 => vec![ellipse(0.5, 0.27, 0.22, 0.22, 14), ellipse(0.5, 0.71, 0.27, 0.24, 14)],
        _ => vec![ellipse(0.48, 0.3, 0.25, 0.23, 14), vec![(0.73, 0.3), (0.62, 0.95)]],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Renders `digit` (0–9) into a `size`×`size` grayscale raster in [0, 1].
pub fn render_digit<R: Rng + ?Sized>(digit: u8, size: usize, rng: &mut R) -> Result<Grid> {
    if digit > 9 {
        return Err(invalid(format!("digit must be 0-9, got {digit}")));
    }
    if size < 5 {
        return Err(invalid(format!("digit raster needs at least 5 pixels, got {size}")));
    }
    let n = size as f64;
    let box_side = 0.72 * n * rng.gen_range(0.88..1.05);
    let angle: f64 = rng.gen_range(-0.25..0.25);
    let shear: f64 = rng.gen_range(-0.2..0.2);
    let shift = (rng.gen_range(-0.04..0.04) * n, rng.gen_range(-0.04..0.04) * n);
    let half_width = (n / 28.0) * rng.gen_range(1.0..1.9);
    let (sin, cos) = angle.sin_cos();
    let center = (n / 2.0 + shift.0, n / 2.0 + shift.1);

    let to_pixels = |(u, v): (f64, f64)| {
        let (x, y) = ((u - 0.5) * box_side, (v - 0.5) * box_side);
        let x = x + shear * y;
        (center.0 + cos * x - sin * y, center.1 + sin * x + cos * y)
    };
    let lines: Vec<Polyline> = strokes(digit).into_iter().map(|l| l.into_iter().map(to_pixels).collect()).collect();

    Ok(Grid::from_fn(size, size, |row, col| {
        let p = (col as f64 + 0.5, row as f64 + 0.5);
        let d = lines
            .iter()
            .flat_map(|l| l.windows(2).map(|s| segment_distance(p, s[0], s[1])))
            .fold(f64::INFINITY, f64::min);
        (half_width - d + 0.5).clamp(0.0, 1.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_digit_renders_inside_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in 0..10 {
            let g = render_digit(d, 28, &mut rng).unwrap();
            let on = g.data().iter().filter(|&&v| v >= 0.5).count();
            assert!(on > 20, "digit {d} too faint: {on}");
            assert!(on < 400, "digit {d} too bold: {on}");
            for i in 0..28 {
                assert!(g.get(0, i) < 0.5 && g.get(27, i) < 0.5 && g.get(i, 0) < 0.5 && g.get(i, 27) < 0.5);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = render_digit(3, 15, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = render_digit(3, 15, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(render_digit(10, 15, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }
}
