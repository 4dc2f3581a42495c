//! Synthetic etch-pit frames with ground truth.
//!
//! A frame is a bright, slightly tilted background with dark elliptical pits,
//! thin dark scratches, diffuse dark smudges ("blobs") and Gaussian noise.
//! Everything is drawn from a ChaCha8 stream seeded by the caller, so the same
//! `(spec, seed)` always produces the same pixels.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{DatasetManifest, FrameEntry, Split};
use crate::error::{Error, Result};
use crate::raster::{save_image, GrayImage};

/// Image class; selects the default scene parameters and which model a
/// frame is analyzed with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Normal beam incidence: circular pits.
    Accel0,
    /// Oblique (30°) incidence: elliptical pits of fixed eccentricity.
    Accel30,
    /// Open-air exposure: mixed shapes, more defects.
    Field,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Accel0, Category::Accel30, Category::Field];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Accel0 => "accel0",
            Category::Accel30 => "accel30",
            Category::Field => "field",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid("category", format!("'{s}' (expected accel0, accel30 or field)")))
    }
}

/// Parameters of a synthetic frame family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Side of the square frame in pixels.
    pub frame_size: usize,
    pub category: Category,
    /// Poisson mean of the number of pits.
    pub track_count_mean: f64,
    /// `[r_min, r_max]`: range of the pit semi-major axis.
    pub radius_range: [f64; 2],
    /// Pit eccentricity. Fixed for `accel30`, an upper bound for `field`
    /// (drawn uniformly from `[0, eccentricity]`), zero for `accel0`.
    pub eccentricity: f64,
    /// Fractional darkening at the pit floor.
    pub pit_contrast: f64,
    pub noise_sigma: f64,
    pub scratch_count_mean: f64,
    /// Peak-to-peak illumination change across the frame.
    pub gradient_amplitude: f64,
    /// Probability that a pit is placed straddling the frame edge.
    pub border_partial_fraction: f64,
    /// Per-frame background level is drawn uniformly from this range.
    #[serde(default = "default_background_range")]
    pub background_range: [f64; 2],
    /// Poisson mean of diffuse dark smudges.
    #[serde(default)]
    pub blob_count_mean: f64,
}

fn default_background_range() -> [f64; 2] {
    [0.6, 0.9]
}

impl SceneSpec {
    pub fn preset(category: Category) -> Self {
        let base = SceneSpec {
            frame_size: 512,
            category,
            track_count_mean: 12.0,
            radius_range: [7.0, 10.0],
            eccentricity: 0.0,
            pit_contrast: 0.5,
            noise_sigma: 0.02,
            scratch_count_mean: 1.0,
            gradient_amplitude: 0.02,
            border_partial_fraction: 0.1,
            background_range: default_background_range(),
            blob_count_mean: 0.0,
        };
        match category {
            Category::Accel0 => base,
            Category::Accel30 => SceneSpec {
                eccentricity: 0.5,
                ..base
            },
            Category::Field => SceneSpec {
                track_count_mean: 10.0,
                eccentricity: 0.6,
                noise_sigma: 0.03,
                scratch_count_mean: 3.0,
                gradient_amplitude: 0.03,
                blob_count_mean: 1.5,
                ..base
            },
        }
    }

    /// Field frames dominated by scratches and smudges, with few pits and a
    /// wide spread of background brightness.
    pub fn defect_heavy() -> Self {
        SceneSpec {
            track_count_mean: 6.0,
            scratch_count_mean: 6.0,
            blob_count_mean: 4.0,
            background_range: [0.5, 0.95],
            ..SceneSpec::preset(Category::Field)
        }
    }

    pub fn r_max(&self) -> f64 {
        self.radius_range[1]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("scene spec", reason));
        let [r_min, r_max] = self.radius_range;
        if !(r_min >= 2.0) {
            return bad(format!("r_min must be >= 2, got {r_min}"));
        }
        if !(r_max >= r_min) {
            return bad(format!("r_max ({r_max}) must be >= r_min ({r_min})"));
        }
        if !(self.frame_size as f64 > 4.0 * r_max) {
            return bad(format!(
                "frame_size {} must exceed 4*r_max = {}",
                self.frame_size,
                4.0 * r_max
            ));
        }
        if !(0.0..1.0).contains(&self.eccentricity) {
            return bad(format!("eccentricity must be in [0,1), got {}", self.eccentricity));
        }
        if self.category == Category::Accel0 && self.eccentricity != 0.0 {
            return bad("accel0 frames have circular pits (eccentricity 0)".into());
        }
        if !(self.pit_contrast > 0.0 && self.pit_contrast <= 1.0) {
            return bad(format!("pit_contrast must be in (0,1], got {}", self.pit_contrast));
        }
        if !(0.0..=1.0).contains(&self.border_partial_fraction) {
            return bad(format!(
                "border_partial_fraction must be in [0,1], got {}",
                self.border_partial_fraction
            ));
        }
        for (name, v) in [
            ("track_count_mean", self.track_count_mean),
            ("noise_sigma", self.noise_sigma),
            ("scratch_count_mean", self.scratch_count_mean),
            ("gradient_amplitude", self.gradient_amplitude),
            ("blob_count_mean", self.blob_count_mean),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let [lo, hi] = self.background_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("background_range must satisfy 0 < lo <= hi <= 1, got {lo}..{hi}"));
        }
        Ok(())
    }
}

/// One etch pit. Coordinates are `(row, col)` in pixels, with pixel centers
/// on integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub centroid: [f64; 2],
    /// `(a, b)` with `a >= b`; `a` lies along `rotation`.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis from the column axis, radians.
    pub rotation: f64,
    /// Fraction of the pit area inside the frame.
    pub visible_fraction: f64,
}

impl Track {
    pub fn circle(row: f64, col: f64, radius: f64) -> Self {
        Track {
            centroid: [row, col],
            semi_axes: [radius, radius],
            rotation: 0.0,
            visible_fraction: 1.0,
        }
    }

    /// `(row, col)` of the center.
    pub fn center(&self) -> (f64, f64) {
        (self.centroid[0], self.centroid[1])
    }

    /// Normalized elliptical radius of a point; `<= 1` inside the pit.
    fn rho(&self, row: f64, col: f64) -> (f64, f64, f64) {
        let (dy, dx) = (row - self.centroid[0], col - self.centroid[1]);
        let (s, c) = self.rotation.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let [a, b] = self.semi_axes;
        (((u / a).powi(2) + (v / b).powi(2)).sqrt(), u, v)
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        self.rho(row, col).0 <= 1.0
    }

    /// Pixel coverage with a one-pixel linear edge ramp.
    fn coverage(&self, row: f64, col: f64) -> f64 {
        let (rho, u, v) = self.rho(row, col);
        if rho == 0.0 {
            return 1.0;
        }
        let [a, b] = self.semi_axes;
        let grad = ((u / (a * a)).powi(2) + (v / (b * b)).powi(2)).sqrt() / rho;
        let signed_dist = (rho - 1.0) / grad;
        (0.5 - signed_dist).clamp(0.0, 1.0)
    }

    fn visible_fraction_in(&self, size: usize) -> f64 {
        const SUB: usize = 4;
        let a = self.semi_axes[0];
        let lo_r = (self.centroid[0] - a - 1.0).floor() as i64;
        let hi_r = (self.centroid[0] + a + 1.0).ceil() as i64;
        let lo_c = (self.centroid[1] - a - 1.0).floor() as i64;
        let hi_c = (self.centroid[1] + a + 1.0).ceil() as i64;
        let (mut inside, mut visible) = (0usize, 0usize);
        for r in lo_r..=hi_r {
            for c in lo_c..=hi_c {
                for i in 0..SUB {
                    for j in 0..SUB {
                        let y = r as f64 + (i as f64 + 0.5) / SUB as f64 - 0.5;
                        let x = c as f64 + (j as f64 + 0.5) / SUB as f64 - 0.5;
                        if self.contains(y, x) {
                            inside += 1;
                            let limit = size as f64 - 0.5;
                            if (-0.5..limit).contains(&y) && (-0.5..limit).contains(&x) {
                                visible += 1;
                            }
                        }
                    }
                }
            }
        }
        if inside == 0 {
            0.0
        } else {
            visible as f64 / inside as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tracks: Vec<Track>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn centroids(&self) -> Vec<(f64, f64)> {
        self.tracks.iter().map(Track::center).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::datastore::read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::datastore::write_json(path.as_ref(), self)
    }
}

/// Thin dark line segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scratch {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub width: f64,
    pub contrast: f64,
}

impl Scratch {
    fn coverage(&self, row: f64, col: f64) -> f64 {
        let (ay, ax) = self.start;
        let (by, bx) = self.end;
        let (dy, dx) = (by - ay, bx - ax);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((row - ay) * dy + (col - ax) * dx) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (py, px) = (ay + t * dy, ax + t * dx);
        let dist = ((row - py).powi(2) + (col - px).powi(2)).sqrt();
        (self.width / 2.0 + 0.5 - dist).clamp(0.0, 1.0)
    }
}

/// Diffuse Gaussian smudge.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: (f64, f64),
    pub sigma: f64,
    pub depth: f64,
}

/// Everything needed to render one frame. [`Scene::sample`] draws one from
/// a [`SceneSpec`]; tests build them by hand to place pits exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub background: f64,
    pub gradient_amplitude: f64,
    pub gradient_angle: f64,
    pub pit_contrast: f64,
    pub tracks: Vec<Track>,
    pub scratches: Vec<Scratch>,
    pub blobs: Vec<Blob>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
}

impl Scene {
    /// Flat, noise-free scene with the given pits.
    pub fn plain(size: usize, background: f64, pit_contrast: f64, tracks: Vec<Track>) -> Self {
        Scene {
            size,
            background,
            gradient_amplitude: 0.0,
            gradient_angle: 0.0,
            pit_contrast,
            tracks,
            scratches: Vec::new(),
            blobs: Vec::new(),
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    pub fn sample(spec: &SceneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = spec.frame_size;
        let sizef = size as f64;
        let [bg_lo, bg_hi] = spec.background_range;
        let background = bg_lo + (bg_hi - bg_lo) * rng.random::<f64>();
        let gradient_angle = rng.random::<f64>() * 2.0 * PI;
        let [r_min, r_max] = spec.radius_range;

        let n_tracks = poisson(&mut rng, spec.track_count_mean);
        let mut tracks: Vec<Track> = Vec::with_capacity(n_tracks);
        for _ in 0..n_tracks {
            let a = r_min + (r_max - r_min) * rng.random::<f64>();
            let ecc = match spec.category {
                Category::Accel0 => 0.0,
                Category::Accel30 => spec.eccentricity,
                Category::Field => spec.eccentricity * rng.random::<f64>(),
            };
            let b = a * (1.0 - ecc * ecc).sqrt();
            let rotation = if ecc > 0.0 { rng.random::<f64>() * PI } else { 0.0 };
            let on_border = rng.random::<f64>() < spec.border_partial_fraction;
            // Rejection-sample a position that keeps pits apart by at least
            // one maximal radius; give up on the pit after 100 tries.
            let mut placed = None;
            for _ in 0..100 {
                let (row, col) = if on_border {
                    let depth = 0.5 * a * rng.random::<f64>();
                    let along = a + 1.0 + (sizef - 3.0 - 2.0 * a) * rng.random::<f64>();
                    match rng.random_range(0..4u32) {
                        0 => (depth, along),
                        1 => (sizef - 1.0 - depth, along),
                        2 => (along, depth),
                        _ => (along, sizef - 1.0 - depth),
                    }
                } else {
                    let margin = a + 1.5;
                    let span = sizef - 1.0 - 2.0 * margin;
                    (
                        margin + span * rng.random::<f64>(),
                        margin + span * rng.random::<f64>(),
                    )
                };
                let clear = tracks.iter().all(|t| {
                    let d = ((t.centroid[0] - row).powi(2) + (t.centroid[1] - col).powi(2)).sqrt();
                    d >= t.semi_axes[0] + a + r_max
                });
                if clear {
                    placed = Some((row, col));
                    break;
                }
            }
            if let Some((row, col)) = placed {
                let mut track = Track {
                    centroid: [row, col],
                    semi_axes: [a, b],
                    rotation,
                    visible_fraction: 1.0,
                };
                if on_border {
                    track.visible_fraction = track.visible_fraction_in(size);
                }
                tracks.push(track);
            }
        }

        let n_scratches = poisson(&mut rng, spec.scratch_count_mean);
        let scratches = (0..n_scratches)
            .map(|_| {
                let start = (rng.random::<f64>() * sizef, rng.random::<f64>() * sizef);
                let length = sizef * (0.1 + 0.3 * rng.random::<f64>());
                let angle = rng.random::<f64>() * 2.0 * PI;
                let width = 1.0 + rng.random::<f64>();
                let contrast = spec.pit_contrast * (0.3 + 0.3 * rng.random::<f64>());
                let (s, c) = angle.sin_cos();
                Scratch {
                    start,
                    end: (start.0 + length * s, start.1 + length * c),
                    width,
                    contrast,
                }
            })
            .collect();

        let n_blobs = poisson(&mut rng, spec.blob_count_mean);
        let blobs = (0..n_blobs)
            .map(|_| Blob {
                center: (rng.random::<f64>() * sizef, rng.random::<f64>() * sizef),
                sigma: r_max * (0.5 + 0.5 * rng.random::<f64>()),
                depth: spec.pit_contrast * (0.3 + 0.3 * rng.random::<f64>()),
            })
            .collect();

        Ok(Scene {
            size,
            background,
            gradient_amplitude: spec.gradient_amplitude,
            gradient_angle,
            pit_contrast: spec.pit_contrast,
            tracks,
            scratches,
            blobs,
            noise_sigma: spec.noise_sigma,
            noise_seed: rng.random(),
        })
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            tracks: self.tracks.clone(),
        }
    }

    pub fn render(&self) -> GrayImage {
        let n = self.size;
        let half = n as f64 / 2.0;
        let (gs, gc) = self.gradient_angle.sin_cos();
        let mut img = GrayImage::from_fn(n, n, |r, c| {
            let t = ((c as f64 - half) * gc + (r as f64 - half) * gs) / n as f64;
            self.background + self.gradient_amplitude * t
        });

        // Darkest pit wins where pits overlap.
        let mut pit = GrayImage::new(n, n);
        for t in &self.tracks {
            let reach = t.semi_axes[0] + 2.0;
            for (r, c) in window(t.centroid[0], t.centroid[1], reach, n) {
                let cov = t.coverage(r as f64, c as f64);
                if cov > pit.get(r, c) {
                    pit.set(r, c, cov);
                }
            }
        }
        for (v, &p) in img.pixels_mut().iter_mut().zip(pit.pixels()) {
            *v *= 1.0 - self.pit_contrast * p;
        }

        for s in &self.scratches {
            let (cr, cc) = ((s.start.0 + s.end.0) / 2.0, (s.start.1 + s.end.1) / 2.0);
            let half_len =
                ((s.end.0 - s.start.0).powi(2) + (s.end.1 - s.start.1).powi(2)).sqrt() / 2.0;
            for (r, c) in window(cr, cc, half_len + s.width + 1.0, n) {
                let cov = s.coverage(r as f64, c as f64);
                if cov > 0.0 {
                    let v = img.get(r, c);
                    img.set(r, c, v * (1.0 - s.contrast * cov));
                }
            }
        }

        for b in &self.blobs {
            for (r, c) in window(b.center.0, b.center.1, 3.0 * b.sigma, n) {
                let d2 = (r as f64 - b.center.0).powi(2) + (c as f64 - b.center.1).powi(2);
                let v = img.get(r, c);
                img.set(r, c, v * (1.0 - b.depth * (-d2 / (2.0 * b.sigma * b.sigma)).exp()));
            }
        }

        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
            let normal = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            for v in img.pixels_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        img.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Pixel coordinates within `reach` of `(row, col)` (a square window),
/// clipped to an `n x n` frame.
fn window(row: f64, col: f64, reach: f64, n: usize) -> impl Iterator<Item = (usize, usize)> {
    let clip = |v: f64| v.clamp(0.0, (n - 1) as f64) as usize;
    let (r0, r1) = (clip((row - reach).floor()), clip((row + reach).ceil()));
    let (c0, c1) = (clip((col - reach).floor()), clip((col + reach).ceil()));
    (r0..=r1).flat_map(move |r| (c0..=c1).map(move |c| (r, c)))
}

/// Renders the frame for `(spec, seed)` and returns it with its pits.
pub fn generate_frame(spec: &SceneSpec, seed: u64) -> Result<(GrayImage, GroundTruth)> {
    let scene = Scene::sample(spec, seed)?;
    Ok((scene.render(), scene.truth()))
}

pub fn frame_id(category: Category, index: usize) -> String {
    format!("{category}-{index:04}")
}

/// Writes `count` frames (seed `base_seed + i`) as PGM files under
/// `out_dir/frames`, truth sidecars under `out_dir/truth`, and
/// `out_dir/manifest.json`.
pub fn generate_corpus(
    spec: &SceneSpec,
    count: usize,
    base_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("count", "must be positive"));
    }
    let out_dir = out_dir.as_ref();
    for sub in ["frames", "truth"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let entries = (0..count)
        .into_par_iter()
        .map(|i| -> Result<FrameEntry> {
            let id = frame_id(spec.category, i);
            let (img, truth) = generate_frame(spec, base_seed.wrapping_add(i as u64))?;
            let image_path = PathBuf::from("frames").join(format!("{id}.pgm"));
            let truth_path = PathBuf::from("truth").join(format!("{id}.json"));
            save_image(&img, out_dir.join(&image_path))?;
            truth.save(out_dir.join(&truth_path))?;
            Ok(FrameEntry {
                frame_id: id,
                image_path,
                truth_path,
                split: Split::Unassigned,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(
        format!("{}-s{base_seed}-n{count}", spec.category),
        spec.category.as_str(),
        entries,
        Some(spec.clone()),
    )
    .with_root(out_dir);
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(category: Category) -> SceneSpec {
        SceneSpec {
            frame_size: 64,
            track_count_mean: 0.0,
            noise_sigma: 0.0,
            scratch_count_mean: 0.0,
            gradient_amplitude: 0.0,
            blob_count_mean: 0.0,
            ..SceneSpec::preset(category)
        }
    }

    #[test]
    fn empty_spec_gives_constant_frame() {
        let (img, truth) = generate_frame(&quiet(Category::Accel0), 5).unwrap();
        assert!(truth.is_empty());
        let first = img.pixels()[0];
        assert!(img.pixels().iter().all(|&v| v == first));
        assert!((0.6..=0.9).contains(&first));
    }

    #[test]
    fn same_seed_same_frame() {
        let spec = SceneSpec {
            frame_size: 128,
            ..SceneSpec::preset(Category::Field)
        };
        let a = generate_frame(&spec, 99).unwrap();
        let b = generate_frame(&spec, 99).unwrap();
        assert_eq!(a.0.pixels(), b.0.pixels());
        assert_eq!(a.1, b.1);
        let c = generate_frame(&spec, 100).unwrap();
        assert_ne!(a.0.pixels(), c.0.pixels());
    }

    #[test]
    fn forced_pit_is_darker_inside() {
        let track = Track::circle(32.0, 32.0, 8.0);
        let scene = Scene::plain(64, 0.8, 0.5, vec![track.clone()]);
        let img = scene.render();
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
        for r in 0..64 {
            for c in 0..64 {
                if track.contains(r as f64, c as f64) {
                    inside += img.get(r, c);
                    n_in += 1;
                } else {
                    outside += img.get(r, c);
                    n_out += 1;
                }
            }
        }
        let gap = outside / n_out as f64 - inside / n_in as f64;
        assert!(gap >= 0.5 * 0.5, "gap {gap}");
    }

    #[test]
    fn shapes_follow_category() {
        for cat in Category::ALL {
            let spec = SceneSpec::preset(cat);
            for seed in 0..5 {
                let scene = Scene::sample(&spec, seed).unwrap();
                for t in &scene.tracks {
                    let [a, b] = t.semi_axes;
                    assert!(b <= a);
                    match cat {
                        Category::Accel0 => assert_eq!(a, b),
                        Category::Accel30 => {
                            assert!((b / a - (1.0 - 0.25f64).sqrt()).abs() < 1e-12)
                        }
                        Category::Field => assert!(b / a >= (1.0 - 0.36f64).sqrt() - 1e-12),
                    }
                    assert!(t.visible_fraction > 0.0 && t.visible_fraction <= 1.0);
                }
            }
        }
    }

    #[test]
    fn border_pits_are_partial() {
        let spec = SceneSpec {
            border_partial_fraction: 1.0,
            ..SceneSpec::preset(Category::Accel0)
        };
        let scene = Scene::sample(&spec, 1).unwrap();
        assert!(!scene.tracks.is_empty());
        for t in &scene.tracks {
            assert!(t.visible_fraction < 1.0 && t.visible_fraction > 0.4, "{t:?}");
        }
        let spec = SceneSpec {
            border_partial_fraction: 0.0,
            ..SceneSpec::preset(Category::Accel0)
        };
        for t in Scene::sample(&spec, 1).unwrap().tracks {
            assert_eq!(t.visible_fraction, 1.0);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let ok = SceneSpec::preset(Category::Accel0);
        let cases = [
            SceneSpec { radius_range: [1.0, 5.0], ..ok.clone() },
            SceneSpec { radius_range: [6.0, 5.0], ..ok.clone() },
            SceneSpec { frame_size: 40, ..ok.clone() },
            SceneSpec { eccentricity: 0.3, ..ok.clone() },
            SceneSpec { pit_contrast: 0.0, ..ok.clone() },
            SceneSpec { noise_sigma: -1.0, ..ok.clone() },
        ];
        for spec in cases {
            assert!(generate_frame(&spec, 0).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn category_parsing() {
        assert_eq!("accel30".parse::<Category>().unwrap(), Category::Accel30);
        assert!("accel45".parse::<Category>().is_err());
        assert_eq!(serde_json::to_string(&Category::Field).unwrap(), "\"field\"");
    }
}
