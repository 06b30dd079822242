//! Hexcone HSV conversion and HSV range masks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `(h, s, v)` with `h` in degrees `[0, 360)` and `s, v` in [0, 1]. Gray
/// pixels (zero chroma) get hue 0; black gets saturation 0.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let h = if chroma == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { chroma / max };
    (if h >= 360.0 { h - 360.0 } else { h }, s, max)
}

pub fn rgb8_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    rgb_to_hsv(rgb[0] as f64 / 255.0, rgb[1] as f64 / 255.0, rgb[2] as f64 / 255.0)
}

/// Pixels with hue in `[hue_min, hue_max]` (wrapping through 360 when
/// `hue_min > hue_max`), saturation in `[sat_min, sat_max]` and value in
/// `[val_min, val_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsvMask {
    pub hue_min: f64,
    pub hue_max: f64,
    #[serde(default)]
    pub sat_min: f64,
    #[serde(default = "one")]
    pub sat_max: f64,
    #[serde(default)]
    pub val_min: f64,
    #[serde(default = "one")]
    pub val_max: f64,
}

fn one() -> f64 {
    1.0
}

impl HsvMask {
    /// Red through yellow: hue 340°–70°, s ≥ 0.4, v ≥ 0.5.
    pub fn fire() -> Self {
        Self { hue_min: 340.0, hue_max: 70.0, sat_min: 0.4, sat_max: 1.0, val_min: 0.5, val_max: 1.0 }
    }

    /// Saturated red for hand-drawn outlines: hue 340°–20°, s ≥ 0.5, v ≥ 0.4.
    pub fn red_outline() -> Self {
        Self { hue_min: 340.0, hue_max: 20.0, sat_min: 0.5, sat_max: 1.0, val_min: 0.4, val_max: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let hue_ok = |h: f64| (0.0..=360.0).contains(&h);
        let unit_ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if !(hue_ok(self.hue_min) && hue_ok(self.hue_max))
            || !unit_ok(self.sat_min, self.sat_max)
            || !unit_ok(self.val_min, self.val_max)
        {
            return Err(invalid(format!("malformed HSV mask {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, (h, s, v): (f64, f64, f64)) -> bool {
        let hue = if self.hue_min <= self.hue_max {
            (self.hue_min..=self.hue_max).contains(&h)
        } else {
            h >= self.hue_min || h <= self.hue_max
        };
        hue && (self.sat_min..=self.sat_max).contains(&s) && (self.val_min..=self.val_max).contains(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-12 && (a.2 - b.2).abs() < 1e-12
    }

    #[test]
    fn reference_colors() {
        assert!(close(rgb8_to_hsv([255, 0, 0]), (0.0, 1.0, 1.0)));
        assert!(close(rgb8_to_hsv([128, 128, 128]), (0.0, 0.0, 128.0 / 255.0)));
        // 60 · (128/255) / 1
        assert!(close(rgb8_to_hsv([255, 128, 0]), (60.0 * 128.0 / 255.0, 1.0, 1.0)));
        assert!((rgb8_to_hsv([255, 128, 0]).0 - 30.1).abs() < 0.05);
        assert!(close(rgb8_to_hsv([0, 255, 0]), (120.0, 1.0, 1.0)));
        assert!(close(rgb8_to_hsv([0, 0, 255]), (240.0, 1.0, 1.0)));
        assert!(close(rgb8_to_hsv([255, 0, 255]), (300.0, 1.0, 1.0)));
        assert!(close(rgb8_to_hsv([0, 0, 0]), (0.0, 0.0, 0.0)));
        let (h, _, _) = rgb8_to_hsv([255, 0, 1]);
        assert!(h > 359.0 && h < 360.0);
    }

    #[test]
    fn wrapping_hue_range() {
        let m = HsvMask::fire();
        assert!(m.contains((350.0, 1.0, 1.0)));
        assert!(m.contains((0.0, 1.0, 1.0)));
        assert!(m.contains((60.0, 0.5, 0.6)));
        assert!(!m.contains((120.0, 1.0, 1.0)));
        assert!(!m.contains((10.0, 0.2, 1.0)));
        let plain = HsvMask { hue_min: 100.0, hue_max: 140.0, ..m };
        assert!(plain.contains((120.0, 1.0, 1.0)));
        assert!(!plain.contains((350.0, 1.0, 1.0)));
        assert!(HsvMask { sat_min: 0.9, sat_max: 0.1, ..m }.validate().is_err());
    }
}
