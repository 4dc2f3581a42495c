//! Peak markers and ordinal labels drawn onto a copy of a frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PeakReport;
use crate::raster::GrayImage;

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;
/// Horizontal distance between consecutive digits.
const GLYPH_ADVANCE: i64 = 6;

/// 5×7 digit bitmaps, one byte per row; bit `0x10` is the leftmost column.
pub const DIGIT_GLYPHS: [[u8; GLYPH_HEIGHT]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E], // 0
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E], // 1
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F], // 2
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E], // 3
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02], // 4
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E], // 5
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E], // 6
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08], // 7
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E], // 8
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C], // 9
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayStyle {
    /// Value written into marker and label pixels.
    pub intensity: f64,
    pub marker_radius: usize,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle {
            intensity: 1.0,
            marker_radius: 6,
        }
    }
}

impl OverlayStyle {
    pub fn validate(&self) -> Result<()> {
        if self.marker_radius < 1 {
            return Err(Error::invalid("overlay style", "marker_radius must be >= 1"));
        }
        if !self.intensity.is_finite() {
            return Err(Error::invalid("overlay style", "intensity must be finite"));
        }
        Ok(())
    }
}

/// Top-left pixel of the label for a peak at `(row, col)`: right of the ring,
/// vertically centered on the peak.
pub fn label_origin(row: f64, col: f64, style: &OverlayStyle) -> (i64, i64) {
    (
        row.round() as i64 - (GLYPH_HEIGHT as i64 / 2),
        col.round() as i64 + style.marker_radius as i64 + 2,
    )
}

/// Offsets `(dr, dc)` of the marker ring: pixels whose distance from the
/// center is within half a pixel of the radius.
pub fn ring_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let rf = radius as f64;
    let mut out = Vec::new();
    for dr in -r - 1..=r + 1 {
        for dc in -r - 1..=r + 1 {
            let d = ((dr * dr + dc * dc) as f64).sqrt();
            if (d - rf).abs() < 0.5 {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Pixel offsets (relative to the label origin) lit by the decimal
/// rendering of `n`.
pub fn label_pixels(n: usize) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for (k, ch) in n.to_string().bytes().enumerate() {
        let glyph = &DIGIT_GLYPHS[(ch - b'0') as usize];
        for (gr, bits) in glyph.iter().enumerate() {
            for gc in 0..GLYPH_WIDTH {
                if bits & (0x10 >> gc) != 0 {
                    out.push((gr as i64, k as i64 * GLYPH_ADVANCE + gc as i64));
                }
            }
        }
    }
    out
}

/// Copy of `img` with a ring at each peak centroid and the peak's 1-based
/// ordinal next to it. Peaks are numbered in `(row, col)` order; pixels
/// falling outside the image are dropped.
pub fn render_overlay(img: &GrayImage, report: &PeakReport, style: &OverlayStyle) -> GrayImage {
    let mut out = img.clone();
    let (w, h) = img.dims();
    let mut put = |r: i64, c: i64| {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            out.set(r as usize, c as usize, style.intensity);
        }
    };
    let ring = ring_offsets(style.marker_radius.max(1));
    let mut centroids: Vec<(f64, f64)> = report.peaks.iter().map(|p| p.centroid).collect();
    centroids.sort_by(|a, b| a.partial_cmp(b).expect("finite centroids"));
    for (i, &(row, col)) in centroids.iter().enumerate() {
        let (cr, cc) = (row.round() as i64, col.round() as i64);
        for &(dr, dc) in &ring {
            put(cr + dr, cc + dc);
        }
        let (lr, lc) = label_origin(row, col, style);
        for (dr, dc) in label_pixels(i + 1) {
            put(lr + dr, lc + dc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Peak;

    fn peak(row: f64, col: f64) -> Peak {
        Peak {
            centroid: (row, col),
            area: 9,
            bbox: (0, 0, 0, 0),
            max_response: 1.0,
        }
    }

    fn report(centroids: &[(f64, f64)]) -> PeakReport {
        PeakReport {
            count: centroids.len(),
            peaks: centroids.iter().map(|&(r, c)| peak(r, c)).collect(),
        }
    }

    #[test]
    fn empty_report_is_identity() {
        let img = GrayImage::from_fn(20, 10, |r, c| (r * 20 + c) as f64 / 200.0);
        assert_eq!(render_overlay(&img, &report(&[]), &OverlayStyle::default()), img);
    }

    #[test]
    fn single_marker_stays_local() {
        let img = GrayImage::new(64, 64);
        let style = OverlayStyle { intensity: 1.0, marker_radius: 4 };
        let out = render_overlay(&img, &report(&[(10.0, 10.0)]), &style);
        let changed: Vec<(usize, usize)> = (0..64)
            .flat_map(|r| (0..64).map(move |c| (r, c)))
            .filter(|&(r, c)| out.get(r, c) != img.get(r, c))
            .collect();
        assert!(!changed.is_empty());
        for &(r, c) in &changed {
            // ring spans rows/cols 6..=14; the label sits at cols 16..=20, rows 7..=13
            assert!((6..=14).contains(&r) && (6..=20).contains(&c), "({r},{c})");
        }
        for (dr, dc) in ring_offsets(4) {
            let (r, c) = ((10 + dr) as usize, (10 + dc) as usize);
            assert_eq!(out.get(r, c), 1.0);
        }
        assert_eq!(img, GrayImage::new(64, 64));
    }

    #[test]
    fn ring_is_a_circle() {
        for radius in 1..8 {
            for (dr, dc) in ring_offsets(radius) {
                let d = ((dr * dr + dc * dc) as f64).sqrt();
                assert!((d - radius as f64).abs() < 0.5);
            }
            assert!(ring_offsets(radius).contains(&(radius as i64, 0)));
        }
    }

    #[test]
    fn multi_digit_labels_advance() {
        let one = label_pixels(1);
        let eleven = label_pixels(11);
        assert_eq!(eleven.len(), 2 * one.len());
        assert!(eleven.iter().any(|&(_, c)| c >= GLYPH_ADVANCE));
    }

    #[test]
    fn out_of_bounds_pixels_are_dropped() {
        let img = GrayImage::new(8, 8);
        let out = render_overlay(&img, &report(&[(0.0, 7.0)]), &OverlayStyle::default());
        assert_eq!(out.dims(), (8, 8));
    }

    #[test]
    fn glyphs_are_distinct() {
        for a in 0..10 {
            for b in a + 1..10 {
                assert_ne!(DIGIT_GLYPHS[a], DIGIT_GLYPHS[b]);
            }
        }
    }
}
