//! 2D spectral engine: transforms, mask construction, linear convolution and
//! regularized deconvolution.
//!
//! Conventions:
//! - Transforms run on a zero-padded grid whose sides are powers of two.
//! - The forward transform is unnormalized; the inverse scales by `1/(W·H)`.
//! - Convolution is linear (no wraparound). The "same" output keeps the input
//!   size, with the kernel's origin at its center pixel `((h-1)/2, (w-1)/2)`.

use std::ops::Range;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// Smallest power of two `>= n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Frequency-domain image on a power-of-two grid.
#[derive(Clone, Debug)]
pub struct Spectrum {
    width: usize,
    height: usize,
    source: (usize, usize),
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)` of the image this spectrum was computed from.
    pub fn source_dims(&self) -> (usize, usize) {
        self.source
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }
}

/// Row/column FFT plans for one padded grid size.
///
/// `forward` and `inverse` accept row ranges so that transforms of
/// zero-padded inputs (or cropped outputs) skip rows that are known to be
/// zero (or unused).
struct Grid {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Grid {
    fn new(rows: usize, cols: usize) -> Self {
        debug_assert!(rows.is_power_of_two() && cols.is_power_of_two());
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn forward(&self, buf: &mut [Complex64], live_rows: Range<usize>) {
        run(&*self.row_fwd, &mut buf[live_rows.start * self.cols..live_rows.end * self.cols]);
        self.columns(buf, &*self.col_fwd);
    }

    /// Unnormalized inverse; rows outside `keep_rows` are left half-transformed.
    fn inverse(&self, buf: &mut [Complex64], keep_rows: Range<usize>) {
        self.columns(buf, &*self.col_inv);
        run(&*self.row_inv, &mut buf[keep_rows.start * self.cols..keep_rows.end * self.cols]);
    }

    fn columns(&self, buf: &mut [Complex64], fft: &dyn Fft<f64>) {
        let mut t = vec![Complex64::default(); buf.len()];
        transpose::transpose(buf, &mut t, self.cols, self.rows);
        run(fft, &mut t);
        transpose::transpose(&t, buf, self.rows, self.cols);
    }
}

fn run(fft: &dyn Fft<f64>, data: &mut [Complex64]) {
    if data.is_empty() {
        return;
    }
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
}

/// Forward 2D FFT of `img`, zero-padded to the next power of two per axis.
pub fn fft2(img: &GrayImage) -> Spectrum {
    let (w, h) = img.dims();
    let grid = Grid::new(next_pow2(h), next_pow2(w));
    let mut buf = vec![Complex64::default(); grid.len()];
    for row in 0..h {
        for col in 0..w {
            buf[row * grid.cols + col] = Complex64::new(img.get(row, col), 0.0);
        }
    }
    grid.forward(&mut buf, 0..h);
    Spectrum {
        width: grid.cols,
        height: grid.rows,
        source: (w, h),
        values: buf,
    }
}

/// Inverse of [`fft2`]: transforms back and crops to the source size,
/// returning the real part.
pub fn ifft2(spec: &Spectrum) -> GrayImage {
    let grid = Grid::new(spec.height, spec.width);
    let mut buf = spec.values.clone();
    let (w, h) = spec.source;
    grid.inverse(&mut buf, 0..h);
    let scale = 1.0 / grid.len() as f64;
    GrayImage::from_fn(w, h, |r, c| buf[r * grid.cols + c].re * scale)
}

/// Kernel shapes used by the enhancement chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskSpec {
    /// Sampled isotropic Gaussian, normalized to unit sum.
    Gaussian { size: usize, sigma: f64 },
    /// Binary disk: 1 within `radius` of the center, 0 elsewhere.
    Disk { size: usize, radius: f64 },
}

impl MaskSpec {
    pub fn size(&self) -> usize {
        match *self {
            MaskSpec::Gaussian { size, .. } | MaskSpec::Disk { size, .. } => size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.size();
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid("mask", format!("size must be odd, got {size}")));
        }
        match *self {
            MaskSpec::Gaussian { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::invalid("mask", format!("sigma must be positive, got {sigma}")))
            }
            MaskSpec::Disk { radius, .. }
                if !(radius > 0.0 && radius <= (size - 1) as f64 / 2.0) =>
            {
                Err(Error::invalid(
                    "mask",
                    format!("radius must be in (0, {}], got {radius}", (size - 1) / 2),
                ))
            }
            _ => Ok(()),
        }
    }
}

pub fn make_mask(spec: &MaskSpec) -> Result<GrayImage> {
    spec.validate()?;
    let size = spec.size();
    let c = (size - 1) as f64 / 2.0;
    let sq_dist = |r: usize, col: usize| {
        let (dy, dx) = (r as f64 - c, col as f64 - c);
        dx * dx + dy * dy
    };
    let mask = match *spec {
        MaskSpec::Gaussian { sigma, .. } => {
            let g = GrayImage::from_fn(size, size, |r, col| {
                (-sq_dist(r, col) / (2.0 * sigma * sigma)).exp()
            });
            let total = g.sum();
            g.map(|v| v / total)
        }
        MaskSpec::Disk { radius, .. } => GrayImage::from_fn(size, size, |r, col| {
            if sq_dist(r, col) <= radius * radius {
                1.0
            } else {
                0.0
            }
        }),
    };
    Ok(mask)
}

/// Real-input transform grid for the iterative solver.
///
/// Rows go through a real-to-complex FFT that keeps `cols/2 + 1` bins, and
/// the half spectrum is kept transposed (bin-major) so the column pass runs
/// on contiguous memory and only one transpose is needed each way.
struct HalfGrid {
    rows: usize,
    cols: usize,
    bins: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl HalfGrid {
    fn new(rows: usize, cols: usize) -> Self {
        debug_assert!(rows.is_power_of_two() && cols.is_power_of_two());
        let mut real = RealFftPlanner::<f64>::new();
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            bins: cols / 2 + 1,
            r2c: real.plan_fft_forward(cols),
            c2r: real.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn spectrum_len(&self) -> usize {
        self.rows * self.bins
    }

    /// Transposed half spectrum of a `w x h` image placed at `place`.
    fn forward(&self, input: &[f64], (w, h): (usize, usize), place: (usize, usize)) -> Vec<Complex64> {
        let mut rowspec = vec![Complex64::default(); self.spectrum_len()];
        let mut line = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for r in 0..h {
            line.fill(0.0);
            line[place.1..place.1 + w].copy_from_slice(&input[r * w..(r + 1) * w]);
            let dst = (r + place.0) * self.bins;
            self.r2c
                .process_with_scratch(&mut line, &mut rowspec[dst..dst + self.bins], &mut scratch)
                .expect("buffer sizes come from the plan");
        }
        let mut spec = vec![Complex64::default(); self.spectrum_len()];
        transpose::transpose(&rowspec, &mut spec, self.bins, self.rows);
        run(&*self.col_fwd, &mut spec);
        spec
    }

    /// Unnormalized inverse of a transposed half spectrum (consumed), reading
    /// the `w x h` window at `read` into `out`.
    fn inverse(&self, mut spec: Vec<Complex64>, (w, h): (usize, usize), read: (usize, usize), out: &mut [f64]) {
        run(&*self.col_inv, &mut spec);
        let mut rowspec = vec![Complex64::default(); self.spectrum_len()];
        transpose::transpose(&spec, &mut rowspec, self.rows, self.bins);
        let mut line = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        let scale = 1.0 / (self.rows * self.cols) as f64;
        for r in 0..h {
            let src = (r + read.0) * self.bins;
            let row = &mut rowspec[src..src + self.bins];
            // Rounding leaves tiny imaginary parts in the self-conjugate bins.
            row[0].im = 0.0;
            row[self.bins - 1].im = 0.0;
            self.c2r
                .process_with_scratch(row, &mut line, &mut scratch)
                .expect("buffer sizes come from the plan");
            for (o, v) in out[r * w..(r + 1) * w].iter_mut().zip(&line[read.1..read.1 + w]) {
                *o = v * scale;
            }
        }
    }
}

/// Spectral filtering of images of one size against one mask on the padded
/// linear-convolution grid. All gains used with it are conjugate-symmetric,
/// so real inputs give real outputs and the half spectrum suffices.
struct MaskOperator {
    grid: HalfGrid,
    mask_spectrum: Vec<Complex64>,
    dims: (usize, usize),
    /// Kernel center `(row, col)`.
    center: (usize, usize),
}

impl MaskOperator {
    fn new(img_dims: (usize, usize), mask: &GrayImage) -> Result<Self> {
        let (w, h) = img_dims;
        check_mask_fits(img_dims, mask)?;
        let (mw, mh) = mask.dims();
        let grid = HalfGrid::new(next_pow2(h + mh - 1), next_pow2(w + mw - 1));
        let mask_spectrum = grid.forward(mask.pixels(), (mw, mh), (0, 0));
        Ok(Self {
            grid,
            mask_spectrum,
            dims: img_dims,
            center: ((mh - 1) / 2, (mw - 1) / 2),
        })
    }

    fn max_power(&self) -> f64 {
        self.mask_spectrum.iter().map(|b| b.norm_sqr()).fold(0.0, f64::max)
    }

    fn spectrum(&self, input: &[f64], place: (usize, usize)) -> Vec<Complex64> {
        self.grid.forward(input, self.dims, place)
    }

    /// Multiplies every bin of `spec` by `gain(B)`, transforms back and reads
    /// the image-sized window at `read`.
    fn apply(
        &self,
        spec: &[Complex64],
        read: (usize, usize),
        gain: impl Fn(Complex64) -> Complex64,
        out: &mut [f64],
    ) {
        let filtered = spec
            .iter()
            .zip(&self.mask_spectrum)
            .map(|(&v, &b)| v * gain(b))
            .collect();
        self.grid.inverse(filtered, self.dims, read, out);
    }

    /// Places `input` at `place`, filters by `gain(B)` and reads at `read`.
    fn filter(
        &self,
        input: &[f64],
        place: (usize, usize),
        read: (usize, usize),
        gain: impl Fn(Complex64) -> Complex64,
        out: &mut [f64],
    ) {
        self.apply(&self.spectrum(input, place), read, gain, out);
    }

    /// "Same" linear convolution with the mask.
    fn forward_op(&self, x: &[f64], out: &mut [f64]) {
        self.filter(x, (0, 0), self.center, |b| b, out)
    }

    /// Adjoint of [`Self::forward_op`] (correlation with the mask).
    fn adjoint_op(&self, y: &[f64], out: &mut [f64]) {
        self.filter(y, self.center, (0, 0), |b| b.conj(), out);
    }
}

fn check_mask_fits((w, h): (usize, usize), mask: &GrayImage) -> Result<()> {
    let (mw, mh) = mask.dims();
    if mw > w || mh > h {
        return Err(Error::invalid(
            "mask",
            format!("mask {mw}x{mh} is larger than image {w}x{h}"),
        ));
    }
    Ok(())
}

/// Full complex-grid product of `a` and `b`, inverse transformed. Returns the
/// grid buffer (unscaled) and its row stride.
fn complex_product(a: &GrayImage, b: &GrayImage) -> (Vec<Complex64>, usize, f64) {
    let (w, h) = (a.width() + b.width() - 1, a.height() + b.height() - 1);
    let grid = Grid::new(next_pow2(h), next_pow2(w));
    let load = |img: &GrayImage| {
        let mut buf = vec![Complex64::default(); grid.len()];
        for r in 0..img.height() {
            for c in 0..img.width() {
                buf[r * grid.cols + c] = Complex64::new(img.get(r, c), 0.0);
            }
        }
        grid.forward(&mut buf, 0..img.height());
        buf
    };
    let mut fa = load(a);
    let fb = load(b);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    grid.inverse(&mut fa, 0..h);
    (fa, grid.cols, 1.0 / grid.len() as f64)
}

/// Reads a `w x h` window at `(r0, c0)` from a scaled complex grid, returning
/// the real parts and the largest imaginary magnitude.
fn read_window(buf: &[Complex64], stride: usize, scale: f64, (w, h): (usize, usize), (r0, c0): (usize, usize)) -> (GrayImage, f64) {
    let mut residue: f64 = 0.0;
    let img = GrayImage::from_fn(w, h, |r, c| {
        let v = buf[(r + r0) * stride + c + c0] * scale;
        residue = residue.max(v.im.abs());
        v.re
    });
    (img, residue)
}

fn check_imaginary_residue(residue: f64, out: &[f64]) -> Result<()> {
    let scale = out.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if residue > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "imaginary residue {residue:e} after inverse transform"
        )));
    }
    Ok(())
}

/// Linear convolution of `a` with mask `b`, cropped to `a`'s size around the
/// mask center ("same" policy).
pub fn convolve(a: &GrayImage, b: &GrayImage) -> Result<GrayImage> {
    check_mask_fits(a.dims(), b)?;
    let (buf, stride, scale) = complex_product(a, b);
    let center = ((b.height() - 1) / 2, (b.width() - 1) / 2);
    let (out, residue) = read_window(&buf, stride, scale, a.dims(), center);
    check_imaginary_residue(residue, out.pixels())?;
    Ok(out)
}

/// Full linear convolution, `(Wa+Wb-1) x (Ha+Hb-1)`.
pub fn convolve_full(a: &GrayImage, b: &GrayImage) -> Result<GrayImage> {
    let dims = (a.width() + b.width() - 1, a.height() + b.height() - 1);
    let (buf, stride, scale) = complex_product(a, b);
    let (out, residue) = read_window(&buf, stride, scale, dims, (0, 0));
    check_imaginary_residue(residue, out.pixels())?;
    Ok(out)
}

/// Stopping rule for the iterative deconvolution solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the normal-equation residual falls below this fraction of
    /// the right-hand side norm.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 2000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Deconvolution {
    pub image: GrayImage,
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side norm.
    pub relative_residual: f64,
}

/// Preconditioner floor relative to `max|B|²`, used when `lambda` is smaller.
const PRECONDITIONER_FLOOR: f64 = 1e-8;

fn check_deconv_inputs(f: &GrayImage, b: &GrayImage, lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(
            "lambda",
            format!("must be finite and non-negative, got {lambda}"),
        ));
    }
    if b.pixels().iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("mask", "deconvolution mask is all zero"));
    }
    if !f.is_finite() || !b.is_finite() {
        return Err(Error::invalid("image", "non-finite pixels"));
    }
    Ok(())
}

/// Regularized spectral division on the zero-padded grid, in one pass:
/// `A = F·conj(B) / (|B|² + λ·max|B|²)`, where `f` is treated as a "same"
/// convolution output (placed at the mask center offset) and everything
/// outside the frame is taken to be zero.
///
/// This ignores the part of the convolution that was cropped away, so it is
/// only a good inverse of [`convolve`] far from the borders. [`deconvolve`]
/// corrects for that.
pub fn deconvolve_binwise(f: &GrayImage, b: &GrayImage, lambda: f64) -> Result<GrayImage> {
    check_deconv_inputs(f, b, lambda)?;
    let op = MaskOperator::new(f.dims(), b)?;
    let floor = lambda * op.max_power();
    let mut out = vec![0.0; f.pixels().len()];
    op.filter(
        f.pixels(),
        op.center,
        (0, 0),
        |b| {
            let d = b.norm_sqr() + floor;
            if d > 0.0 {
                b.conj() / d
            } else {
                Complex64::default()
            }
        },
        &mut out,
    );
    GrayImage::from_vec(f.width(), f.height(), out)
}

/// Tikhonov-regularized deconvolution with the default solver options.
pub fn deconvolve(f: &GrayImage, b: &GrayImage, lambda: f64) -> Result<GrayImage> {
    deconvolve_with(f, b, lambda, &SolverOptions::default()).map(|d| d.image)
}

/// Solves `min_a ‖same(a ⊛ b) − f‖² + λ·max|B|²·‖a‖²` for an image `a` the
/// size of `f`.
///
/// The forward operator is exactly [`convolve`] (linear convolution, then the
/// centered crop), so image content near the borders is recovered as well as
/// the interior. The normal equations are solved by conjugate gradients,
/// preconditioned with the periodic inverse `1/(|B|² + max(λ, 1e-8)·max|B|²)`
/// and started from [`deconvolve_binwise`]. All spectral products use the
/// same zero-padded power-of-two grid as `convolve`.
pub fn deconvolve_with(
    f: &GrayImage,
    b: &GrayImage,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<Deconvolution> {
    check_deconv_inputs(f, b, lambda)?;
    let op = MaskOperator::new(f.dims(), b)?;
    let n = f.pixels().len();
    let max_power = op.max_power();
    let reg = lambda * max_power;
    let floor = lambda.max(PRECONDITIONER_FLOOR) * max_power;

    let precondition = |r: &[f64], out: &mut [f64]| {
        op.filter(r, (0, 0), (0, 0), |b| (1.0 / (b.norm_sqr() + floor)).into(), out);
    };
    let mut tmp = vec![0.0; n];
    let normal_op = |x: &[f64], tmp: &mut [f64], out: &mut [f64]| {
        op.forward_op(x, tmp);
        op.adjoint_op(tmp, out);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o += reg * xi;
        }
    };

    let f_spec = op.spectrum(f.pixels(), op.center);
    let mut rhs = vec![0.0; n];
    op.apply(&f_spec, (0, 0), |b| b.conj(), &mut rhs);
    let rhs_norm = norm(&rhs);
    if rhs_norm == 0.0 {
        return Ok(Deconvolution {
            image: GrayImage::new(f.width(), f.height()),
            iterations: 0,
            relative_residual: 0.0,
        });
    }

    let mut x = vec![0.0; n];
    op.apply(&f_spec, (0, 0), |b| b.conj() / (b.norm_sqr() + floor), &mut x);

    let mut ax = vec![0.0; n];
    normal_op(&x, &mut tmp, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = norm(&r) / rhs_norm;

    while residual > opts.tolerance && iterations < opts.max_iterations {
        normal_op(&p, &mut tmp, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0 && rz > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
        iterations += 1;
        residual = norm(&r) / rhs_norm;
    }

    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("deconvolution diverged".into()));
    }
    Ok(Deconvolution {
        image: GrayImage::from_vec(f.width(), f.height(), x)?,
        iterations,
        relative_residual: residual,
    })
}

/// DC gain of the regularized inverse for mask `b`: `B(0) / (B(0)² + λ·max|B|²)`.
pub fn deconvolution_dc_gain(b: &GrayImage, lambda: f64) -> f64 {
    let b0 = b.sum();
    // For a non-negative mask the spectrum peaks at DC.
    let max_power = if b.pixels().iter().all(|&v| v >= 0.0) {
        b0 * b0
    } else {
        let s = fft2(b);
        s.values().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max)
    };
    b0 / (b0 * b0 + lambda * max_power)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn constant_image_is_dc_only() {
        let img = GrayImage::filled(8, 8, 0.25);
        let s = fft2(&img);
        assert_eq!((s.width(), s.height()), (8, 8));
        assert!((s.get(0, 0).re - 0.25 * 64.0).abs() < 1e-12);
        for (i, v) in s.values().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "bin {i} = {v}");
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut img = GrayImage::new(8, 4);
        img.set(0, 0, 1.0);
        for v in fft2(&img).values() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn transform_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (w, h) in [(16, 16), (13, 7), (1, 5)] {
            let img = random_image(&mut rng, w, h);
            let back = ifft2(&fft2(&img));
            assert_eq!(back.dims(), (w, h));
            assert!(back.max_abs_diff(&img) <= 1e-10);
        }
    }

    #[test]
    fn gaussian_mask_sum_and_ratio() {
        for sigma in [0.7, 1.0, 2.5] {
            let m = make_mask(&MaskSpec::Gaussian { size: 9, sigma }).unwrap();
            assert!((m.sum() - 1.0).abs() < 1e-12);
        }
        let m = make_mask(&MaskSpec::Gaussian { size: 9, sigma: 1.0 }).unwrap();
        let ratio = m.get(4, 4) / m.get(4, 5);
        assert!((ratio - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn disk_mask_lattice_count() {
        let m = make_mask(&MaskSpec::Disk { size: 9, radius: 3.0 }).unwrap();
        // Lattice points with x² + y² <= 9.
        let expected = (-3i32..=3)
            .flat_map(|y| (-3i32..=3).map(move |x| (x, y)))
            .filter(|(x, y)| x * x + y * y <= 9)
            .count();
        assert_eq!(expected, 29);
        assert_eq!(m.sum() as usize, expected);
    }

    #[test]
    fn mask_spec_validation() {
        assert!(make_mask(&MaskSpec::Gaussian { size: 8, sigma: 1.0 }).is_err());
        assert!(make_mask(&MaskSpec::Gaussian { size: 9, sigma: 0.0 }).is_err());
        assert!(make_mask(&MaskSpec::Disk { size: 9, radius: 4.5 }).is_err());
        assert!(make_mask(&MaskSpec::Disk { size: 9, radius: 4.0 }).is_ok());
    }

    #[test]
    fn impulse_convolution_embeds_mask() {
        let mut a = GrayImage::new(15, 11);
        a.set(5, 7, 1.0);
        let b = make_mask(&MaskSpec::Gaussian { size: 5, sigma: 1.3 }).unwrap();
        let out = convolve(&a, &b).unwrap();
        for r in 0..11 {
            for c in 0..15 {
                let expected = if (3..8).contains(&r) && (5..10).contains(&c) {
                    b.get(r - 3, c - 5)
                } else {
                    0.0
                };
                assert!((out.get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversized_mask_is_rejected() {
        let a = GrayImage::new(4, 4);
        let b = GrayImage::new(5, 5);
        assert!(convolve(&a, &b).is_err());
    }

    #[test]
    fn full_convolution_preserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 5, 5);
        let full = convolve_full(&a, &b).unwrap();
        assert_eq!(full.dims(), (20, 20));
        let expected = a.sum() * b.sum();
        assert!((full.sum() - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn deconvolving_the_mask_gives_an_impulse() {
        let b = make_mask(&MaskSpec::Gaussian { size: 9, sigma: 2.0 }).unwrap();
        let a = deconvolve(&b, &b, 1e-12).unwrap();
        let peak = a.get(4, 4);
        assert_eq!(a.max(), peak);
        for r in 0..9usize {
            for c in 0..9usize {
                if r.abs_diff(4) > 1 || c.abs_diff(4) > 1 {
                    assert!(peak >= 10.0 * a.get(r, c).abs());
                }
            }
        }
    }

    #[test]
    fn stronger_regularization_damps_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_image(&mut rng, 16, 16);
        let b = make_mask(&MaskSpec::Gaussian { size: 5, sigma: 2.0 }).unwrap();
        let energy = |img: GrayImage| img.pixels().iter().map(|v| v * v).sum::<f64>();
        let weak = energy(deconvolve(&f, &b, 1e-6).unwrap());
        let strong = energy(deconvolve(&f, &b, 1.0).unwrap());
        assert!(strong < weak, "{strong} !< {weak}");
    }

    #[test]
    fn deconvolution_contract_errors() {
        let f = GrayImage::new(8, 8);
        let b = GrayImage::new(3, 3);
        assert!(deconvolve(&f, &b, 1e-3).is_err());
        let b = GrayImage::filled(3, 3, 1.0);
        assert!(deconvolve(&f, &b, -1.0).is_err());
        assert!(deconvolve(&f, &b, 1e-3).unwrap().pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_gain_matches_constant_interior() {
        let b = make_mask(&MaskSpec::Gaussian { size: 7, sigma: 1.5 }).unwrap();
        assert!((deconvolution_dc_gain(&b, 1e-3) - 1.0 / 1.001).abs() < 1e-12);
    }
}
