//! Enhancement (deconvolve by a Gaussian, convolve with a disk), thresholding
//! and connected-component peak counting.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fourier::{
    convolve, deconvolution_dc_gain, deconvolve_with, make_mask, MaskSpec, SolverOptions,
};
use crate::neural::{mlp_predict, MlpModel};
use crate::raster::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// On-disk form of [`PipelineConfig`]: everything derived from
/// `max_track_radius` may be omitted.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineConfigFile {
    max_track_radius: f64,
    #[serde(default = "default_sigma_factor")]
    sigma_factor: f64,
    #[serde(default = "default_disk_factor")]
    disk_factor: f64,
    mask_size: Option<usize>,
    #[serde(default = "default_lambda")]
    lambda: f64,
    min_peak_area: Option<f64>,
    #[serde(default = "default_connectivity")]
    connectivity: Connectivity,
    #[serde(default = "default_solver_tolerance")]
    solver_tolerance: f64,
}

fn default_sigma_factor() -> f64 {
    0.5
}
fn default_disk_factor() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    1e-3
}
fn default_connectivity() -> Connectivity {
    Connectivity::Eight
}
fn default_solver_tolerance() -> f64 {
    1e-3
}

impl TryFrom<PipelineConfigFile> for PipelineConfig {
    type Error = Error;

    fn try_from(f: PipelineConfigFile) -> Result<Self> {
        let mut cfg = PipelineConfig {
            max_track_radius: f.max_track_radius,
            sigma_factor: f.sigma_factor,
            disk_factor: f.disk_factor,
            mask_size: 0,
            lambda: f.lambda,
            min_peak_area: 0.0,
            connectivity: f.connectivity,
            solver_tolerance: f.solver_tolerance,
        };
        cfg.mask_size = f.mask_size.unwrap_or_else(|| default_mask_size(f.max_track_radius));
        cfg.min_peak_area = f
            .min_peak_area
            .unwrap_or_else(|| 0.25 * std::f64::consts::PI * cfg.disk_radius().powi(2));
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_mask_size(max_track_radius: f64) -> usize {
    if max_track_radius.is_finite() && max_track_radius > 0.0 {
        2 * (2.0 * max_track_radius).ceil() as usize + 1
    } else {
        0
    }
}

/// Settings of the enhancement and counting stages. Immutable once built;
/// all fields are resolved (no implicit defaults left).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PipelineConfigFile")]
pub struct PipelineConfig {
    /// Largest expected pit radius; the masks are scaled from it.
    pub max_track_radius: f64,
    /// Gaussian σ as a multiple of `max_track_radius`.
    pub sigma_factor: f64,
    /// Disk radius as a multiple of `max_track_radius`.
    pub disk_factor: f64,
    /// Side of both masks, odd.
    pub mask_size: usize,
    /// Deconvolution regularization, relative to the mask's peak power.
    pub lambda: f64,
    /// Components smaller than this many pixels are not counted.
    pub min_peak_area: f64,
    pub connectivity: Connectivity,
    /// Relative residual at which the deconvolution solver stops.
    pub solver_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_radius(10.0).expect("default radius is valid")
    }
}

impl PipelineConfig {
    /// Defaults scaled for pits up to `max_track_radius` pixels.
    pub fn for_radius(max_track_radius: f64) -> Result<Self> {
        PipelineConfigFile {
            max_track_radius,
            sigma_factor: default_sigma_factor(),
            disk_factor: default_disk_factor(),
            mask_size: None,
            lambda: default_lambda(),
            min_peak_area: None,
            connectivity: default_connectivity(),
            solver_tolerance: default_solver_tolerance(),
        }
        .try_into()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_factor * self.max_track_radius
    }

    pub fn disk_radius(&self) -> f64 {
        self.disk_factor * self.max_track_radius
    }

    pub fn gaussian_mask_spec(&self) -> MaskSpec {
        MaskSpec::Gaussian {
            size: self.mask_size,
            sigma: self.sigma(),
        }
    }

    pub fn disk_mask_spec(&self) -> MaskSpec {
        MaskSpec::Disk {
            size: self.mask_size,
            radius: self.disk_radius(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("pipeline config", reason));
        for (name, v) in [
            ("max_track_radius", self.max_track_radius),
            ("sigma_factor", self.sigma_factor),
            ("disk_factor", self.disk_factor),
            ("solver_tolerance", self.solver_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.mask_size % 2 == 0 {
            return bad(format!("mask_size must be odd, got {}", self.mask_size));
        }
        if (self.mask_size as f64) < 2.0 * self.disk_radius() + 1.0 {
            return bad(format!(
                "mask_size {} is smaller than the disk (needs >= {})",
                self.mask_size,
                2.0 * self.disk_radius() + 1.0
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.min_peak_area >= 0.0 && self.min_peak_area.is_finite()) {
            return bad(format!("min_peak_area must be finite and >= 0, got {}", self.min_peak_area));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("pipeline config", e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form. Ties
    /// annotations to the settings that produced their response maps.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Output of [`enhance`]: finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap(GrayImage);

impl ResponseMap {
    pub fn new(img: GrayImage) -> Result<Self> {
        if !img.is_finite() {
            return Err(Error::invalid("response map", "non-finite values"));
        }
        if img.min() < 0.0 {
            return Err(Error::invalid("response map", "negative values"));
        }
        Ok(ResponseMap(img))
    }

    pub fn image(&self) -> &GrayImage {
        &self.0
    }

    pub fn into_image(self) -> GrayImage {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn max(&self) -> f64 {
        self.0.max()
    }
}

/// Foreground mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMap {
    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(
                "binary map",
                format!("{} values for {width}x{height}", bits.len()),
            ));
        }
        Ok(BinaryMap { width, height, bits })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMap) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Row-major bits packed MSB-first into bytes.
    pub fn pack(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// `(row, col)`, weighted by the response.
    pub centroid: (f64, f64),
    pub area: usize,
    /// `(top, left, bottom, right)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
    pub max_response: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub count: usize,
    pub peaks: Vec<Peak>,
}

impl PeakReport {
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        self.peaks.iter().map(|p| p.centroid).collect()
    }
}

/// The enhancement chain on an already inverted image (pits bright), without
/// the final clamp. Linear in `inverted`.
///
/// The frame mean is taken out before filtering and its filtered value added
/// back afterwards, so the zero padding around the frame does not turn the
/// bright background into a border artifact.
pub fn response_unclamped(inverted: &GrayImage, cfg: &PipelineConfig) -> Result<GrayImage> {
    cfg.validate()?;
    let gauss = make_mask(&cfg.gaussian_mask_spec())?;
    let disk = make_mask(&cfg.disk_mask_spec())?;
    let mean = inverted.mean();
    let centered = inverted.map(|v| v - mean);
    let opts = SolverOptions {
        tolerance: cfg.solver_tolerance,
        max_iterations: 500,
    };
    let sharpened = deconvolve_with(&centered, &gauss, cfg.lambda, &opts)?.image;
    let mut out = convolve(&sharpened, &disk)?;
    let offset = mean * disk.sum() * deconvolution_dc_gain(&gauss, cfg.lambda);
    for v in out.pixels_mut() {
        *v += offset;
    }
    Ok(out)
}

/// Inverts polarity, deconvolves by the Gaussian mask, convolves with the
/// disk mask and clamps negatives to zero.
pub fn enhance(img: &GrayImage, cfg: &PipelineConfig) -> Result<ResponseMap> {
    if !img.is_finite() {
        return Err(Error::invalid("image", "non-finite pixels"));
    }
    let raw = response_unclamped(&img.map(|v| 1.0 - v), cfg)?;
    ResponseMap::new(raw.map(|v| v.max(0.0)))
}

pub fn average_intensity(resp: &ResponseMap) -> f64 {
    resp.image().mean()
}

/// Feature vector fed to the threshold model.
pub fn features(resp: &ResponseMap) -> Vec<f64> {
    vec![average_intensity(resp)]
}

/// Foreground where the response is strictly above `t`.
pub fn apply_threshold(resp: &ResponseMap, t: f64) -> BinaryMap {
    let (width, height) = resp.dims();
    BinaryMap {
        width,
        height,
        bits: resp.image().pixels().iter().map(|&v| v > t).collect(),
    }
}

/// Labels connected foreground components and reports those with at least
/// `cfg.min_peak_area` pixels, sorted by centroid `(row, col)`.
pub fn count_peaks(bin: &BinaryMap, cfg: &PipelineConfig, resp: &ResponseMap) -> Result<PeakReport> {
    if bin.dims() != resp.dims() {
        return Err(Error::DimensionMismatch {
            expected: bin.dims(),
            found: resp.dims(),
        });
    }
    let (w, h) = bin.dims();
    let values = resp.image().pixels();
    let offsets = cfg.connectivity.offsets();
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut peaks = Vec::new();
    for start in 0..w * h {
        if !bin.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut area = 0usize;
        let (mut top, mut left, mut bottom, mut right) = (h, w, 0, 0);
        let (mut wsum, mut wr, mut wc) = (0.0, 0.0, 0.0);
        let (mut gr, mut gc) = (0.0, 0.0);
        let mut max_response = f64::NEG_INFINITY;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            area += 1;
            top = top.min(r);
            bottom = bottom.max(r);
            left = left.min(c);
            right = right.max(c);
            let v = values[i];
            wsum += v;
            wr += v * r as f64;
            wc += v * c as f64;
            gr += r as f64;
            gc += c as f64;
            max_response = max_response.max(v);
            for &(dr, dc) in offsets {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if bin.bits[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if (area as f64) < cfg.min_peak_area {
            continue;
        }
        let centroid = if wsum > 0.0 {
            (wr / wsum, wc / wsum)
        } else {
            (gr / area as f64, gc / area as f64)
        };
        peaks.push(Peak {
            centroid,
            area,
            bbox: (top, left, bottom, right),
            max_response,
        });
    }
    peaks.sort_by(|a, b| a.centroid.partial_cmp(&b.centroid).expect("finite centroids"));
    Ok(PeakReport {
        count: peaks.len(),
        peaks,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameAnalysis {
    pub report: PeakReport,
    pub response: ResponseMap,
    pub threshold: f64,
}

/// Enhances `img`, predicts its threshold with `model`, and counts peaks.
pub fn analyze_frame(img: &GrayImage, cfg: &PipelineConfig, model: &MlpModel) -> Result<FrameAnalysis> {
    let response = enhance(img, cfg)?;
    analyze_response(response, cfg, model)
}

/// [`analyze_frame`] for a response map that is already computed.
pub fn analyze_response(
    response: ResponseMap,
    cfg: &PipelineConfig,
    model: &MlpModel,
) -> Result<FrameAnalysis> {
    let threshold = mlp_predict(model, &features(&response))?;
    if !threshold.is_finite() {
        return Err(Error::Numerical(format!("model predicted {threshold}")));
    }
    let report = count_peaks(&apply_threshold(&response, threshold), cfg, &response)?;
    Ok(FrameAnalysis {
        report,
        response,
        threshold,
    })
}
