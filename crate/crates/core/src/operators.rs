//! Linear degradation operators: blur H, decimation S, the composed forward
//! map G = SH of the measurement model y = SHx + eta, and the normal operator
//! L = (1/sigma^2) (SH)^T SH driving the data-fit subproblem.
//!
//! Boundary handling for H is symmetric (mirror) extension with edge repeat;
//! constant images are exactly invariant under any normalized kernel. The
//! adjoint is the exact transpose of the gather pattern under that same
//! extension, so adjoint identities hold to rounding, not approximately.
//! Decimation point-samples at the top-left phase (offset 0); H carries all
//! filtering. All operators act on each frame independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::ImageVolume;

/// Mirror (symmetric, edge-repeating) index extension: -1 -> 0, -2 -> 1,
/// n -> n-1, n+1 -> n-2, ...
#[inline]
pub(crate) fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    Gaussian { stddev: f64 },
    Box { size: usize },
    Identity,
    Custom,
}

/// Odd-sized 2-D blur kernel, normalized to unit sum at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    rows: usize,
    cols: usize,
    taps: Vec<f64>, // row-major
    kind: KernelKind,
}

impl BlurKernel {
    pub fn identity() -> Self {
        Self {
            rows: 1,
            cols: 1,
            taps: vec![1.0],
            kind: KernelKind::Identity,
        }
    }

    /// Isotropic Gaussian taps g(i,j) = exp(-(i^2+j^2)/(2 stddev^2)) on an
    /// odd size x size grid, normalized to unit sum.
    pub fn gaussian(stddev: f64, size: usize) -> Result<Self> {
        if !(stddev > 0.0) || !stddev.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "gaussian stddev must be positive, got {stddev}"
            )));
        }
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        let r = (size / 2) as isize;
        let mut taps = Vec::with_capacity(size * size);
        for i in -r..=r {
            for j in -r..=r {
                taps.push((-((i * i + j * j) as f64) / (2.0 * stddev * stddev)).exp());
            }
        }
        Self::build(size, size, taps, KernelKind::Gaussian { stddev }, true)
    }

    pub fn boxcar(size: usize) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        Self::build(
            size,
            size,
            vec![1.0; size * size],
            KernelKind::Box { size },
            true,
        )
    }

    /// User-supplied taps in row-major order. `normalize` rescales to unit
    /// sum; pass `false` to keep the taps as given (they must then already
    /// sum to 1 within 1e-12).
    pub fn custom(rows: usize, cols: usize, taps: Vec<f64>, normalize: bool) -> Result<Self> {
        Self::build(rows, cols, taps, KernelKind::Custom, normalize)
    }

    fn build(
        rows: usize,
        cols: usize,
        mut taps: Vec<f64>,
        kind: KernelKind,
        normalize: bool,
    ) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 || rows == 0 || cols == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel sides must be odd, got {rows}x{cols}"
            )));
        }
        if taps.len() != rows * cols {
            return Err(Error::InvalidKernel(format!(
                "expected {} taps, got {}",
                rows * cols,
                taps.len()
            )));
        }
        if !taps.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidKernel("taps must be finite".into()));
        }
        let sum: f64 = taps.iter().sum();
        if normalize {
            if sum.abs() < 1e-300 {
                return Err(Error::InvalidKernel("taps sum to zero".into()));
            }
            for t in &mut taps {
                *t /= sum;
            }
        } else if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel(format!(
                "unnormalized taps sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            rows,
            cols,
            taps,
            kind,
        })
    }

    /// Loads a kernel from a plain-text file: first line `rows cols`, then
    /// row-major whitespace-separated taps.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut tokens = text.split_whitespace();
        let bad = |reason: &str| Error::Malformed {
            path: path.display().to_string(),
            reason: reason.into(),
        };
        let rows: usize = tokens
            .next()
            .ok_or_else(|| bad("missing rows"))?
            .parse()
            .map_err(|_| bad("bad rows"))?;
        let cols: usize = tokens
            .next()
            .ok_or_else(|| bad("missing cols"))?
            .parse()
            .map_err(|_| bad("bad cols"))?;
        let taps: Vec<f64> = tokens
            .map(|t| t.parse::<f64>().map_err(|_| bad("bad tap")))
            .collect::<Result<_>>()?;
        Self::custom(rows, cols, taps, true)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    #[inline]
    fn tap(&self, a: usize, b: usize) -> f64 {
        self.taps[a * self.cols + b]
    }
}

/// Degradation recipe defining G = SH plus the measurement noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationModel {
    pub kernel: BlurKernel,
    pub scale: usize,
    pub noise_sigma: f64,
}

impl DegradationModel {
    pub fn new(kernel: BlurKernel, scale: usize, noise_sigma: f64) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidParameter("scale must be >= 1".into()));
        }
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be nonnegative, got {noise_sigma}"
            )));
        }
        Ok(Self {
            kernel,
            scale,
            noise_sigma,
        })
    }
}

/// Matrix-free linear map over volumes with its exact adjoint.
pub trait LinearOperator {
    fn apply(&self, v: &ImageVolume) -> Result<ImageVolume>;
    fn apply_adjoint(&self, v: &ImageVolume) -> Result<ImageVolume>;
    /// (height, width) of the domain; frames pass through.
    fn input_shape(&self) -> (usize, usize);
    /// (height, width) of the range.
    fn output_shape(&self) -> (usize, usize);
}

fn check_kernel_fits(v: &ImageVolume, k: &BlurKernel) -> Result<()> {
    if k.rows > v.height() || k.cols > v.width() {
        return Err(Error::InvalidKernel(format!(
            "kernel {}x{} larger than frame {}x{}",
            k.rows,
            k.cols,
            v.height(),
            v.width()
        )));
    }
    Ok(())
}

/// Per-frame correlation with `k` under mirror extension.
pub fn apply_blur(v: &ImageVolume, k: &BlurKernel) -> Result<ImageVolume> {
    check_kernel_fits(v, k)?;
    let (h, w, t) = v.shape();
    let (rr, rc) = ((k.rows / 2) as isize, (k.cols / 2) as isize);
    let mut out = ImageVolume::zeros(h, w, t);
    let plane = h * w;
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(frame, chunk)| {
            for j in 0..w {
                for i in 0..h {
                    let mut acc = 0.0;
                    for a in 0..k.rows {
                        let si = mirror(i as isize + a as isize - rr, h);
                        for b in 0..k.cols {
                            let sj = mirror(j as isize + b as isize - rc, w);
                            acc += k.tap(a, b) * v.get(si, sj, frame);
                        }
                    }
                    chunk[j * h + i] = acc;
                }
            }
        });
    Ok(out)
}

/// Exact transpose of [`apply_blur`]'s gather: each input sample scatters its
/// weighted value back to the positions it was gathered from, including the
/// boundary folds of the mirror extension.
pub fn apply_blur_adjoint(v: &ImageVolume, k: &BlurKernel) -> Result<ImageVolume> {
    check_kernel_fits(v, k)?;
    let (h, w, t) = v.shape();
    let (rr, rc) = ((k.rows / 2) as isize, (k.cols / 2) as isize);
    let mut out = ImageVolume::zeros(h, w, t);
    let plane = h * w;
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(frame, chunk)| {
            for j in 0..w {
                for i in 0..h {
                    let x = v.get(i, j, frame);
                    for a in 0..k.rows {
                        let si = mirror(i as isize + a as isize - rr, h);
                        for b in 0..k.cols {
                            let sj = mirror(j as isize + b as isize - rc, w);
                            chunk[sj * h + si] += k.tap(a, b) * x;
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Point-sampling decimation at the top-left phase: out(i,j,t) = in(s*i, s*j, t).
pub fn decimate(v: &ImageVolume, s: usize) -> Result<ImageVolume> {
    if s == 0 {
        return Err(Error::InvalidParameter("scale must be >= 1".into()));
    }
    let (h, w, t) = v.shape();
    if h % s != 0 || w % s != 0 {
        return Err(Error::DimensionMismatch(format!(
            "scale {s} does not divide {h}x{w}"
        )));
    }
    ImageVolume::from_fn(h / s, w / s, t, |i, j, frame| v.get(s * i, s * j, frame))
}

/// Zero-filled upsampling, the exact adjoint of [`decimate`]:
/// out(s*i, s*j, t) = in(i,j,t), all other samples zero.
pub fn decimate_adjoint(v: &ImageVolume, s: usize) -> Result<ImageVolume> {
    if s == 0 {
        return Err(Error::InvalidParameter("scale must be >= 1".into()));
    }
    let (h, w, t) = v.shape();
    let mut out = ImageVolume::zeros(h * s, w * s, t);
    let (hh, hw) = (h * s, w * s);
    for frame in 0..t {
        for j in 0..w {
            for i in 0..h {
                let idx = frame * hh * hw + (s * j) * hh + s * i;
                out.data_mut()[idx] = v.get(i, j, frame);
            }
        }
    }
    Ok(out)
}

/// Noiseless forward map y = SHx.
pub fn forward(v: &ImageVolume, m: &DegradationModel) -> Result<ImageVolume> {
    decimate(&apply_blur(v, &m.kernel)?, m.scale)
}

/// Adjoint of the forward map: (SH)^T y = H^T S^T y.
pub fn forward_adjoint(v: &ImageVolume, m: &DegradationModel) -> Result<ImageVolume> {
    apply_blur_adjoint(&decimate_adjoint(v, m.scale)?, &m.kernel)
}

/// Normal operator L v = (1/sigma^2) H^T S^T S H v. Symmetric PSD.
/// Rejects sigma = 0: the likelihood weighting is undefined there; the solver
/// substitutes its configured sigma_min before calling this.
pub fn normal_apply(v: &ImageVolume, m: &DegradationModel) -> Result<ImageVolume> {
    if m.noise_sigma <= 0.0 {
        return Err(Error::InvalidParameter(
            "normal operator undefined for sigma = 0".into(),
        ));
    }
    forward_adjoint(&forward(v, m)?, m)?.scale(1.0 / (m.noise_sigma * m.noise_sigma))
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
/// Deterministic per seed: ChaCha12 keyed by the seed, Box-Muller transform,
/// samples consumed in vectorization order.
pub fn add_noise(v: &ImageVolume, sigma: f64, seed: u64) -> Result<ImageVolume> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pending: Option<f64> = None;
    let mut gauss = move || {
        if let Some(z) = pending.take() {
            return z;
        }
        let u1: f64 = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        pending = Some(r * theta.sin());
        r * theta.cos()
    };
    let (h, w, t) = v.shape();
    let data = v.data().iter().map(|&s| s + sigma * gauss()).collect();
    ImageVolume::new(h, w, t, data)
}

/// H as a [`LinearOperator`] on fixed spatial dimensions.
pub struct BlurOperator {
    pub kernel: BlurKernel,
    pub height: usize,
    pub width: usize,
}

impl LinearOperator for BlurOperator {
    fn apply(&self, v: &ImageVolume) -> Result<ImageVolume> {
        apply_blur(v, &self.kernel)
    }
    fn apply_adjoint(&self, v: &ImageVolume) -> Result<ImageVolume> {
        apply_blur_adjoint(v, &self.kernel)
    }
    fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    fn output_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// S as a [`LinearOperator`]; `height`/`width` are the HR (domain) sizes.
pub struct DecimateOperator {
    pub scale: usize,
    pub height: usize,
    pub width: usize,
}

impl LinearOperator for DecimateOperator {
    fn apply(&self, v: &ImageVolume) -> Result<ImageVolume> {
        decimate(v, self.scale)
    }
    fn apply_adjoint(&self, v: &ImageVolume) -> Result<ImageVolume> {
        decimate_adjoint(v, self.scale)
    }
    fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    fn output_shape(&self) -> (usize, usize) {
        (self.height / self.scale, self.width / self.scale)
    }
}

/// G = SH as a [`LinearOperator`]; `height`/`width` are the HR (domain) sizes.
pub struct ForwardOperator {
    pub model: DegradationModel,
    pub height: usize,
    pub width: usize,
}

impl LinearOperator for ForwardOperator {
    fn apply(&self, v: &ImageVolume) -> Result<ImageVolume> {
        forward(v, &self.model)
    }
    fn apply_adjoint(&self, v: &ImageVolume) -> Result<ImageVolume> {
        forward_adjoint(v, &self.model)
    }
    fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    fn output_shape(&self) -> (usize, usize) {
        (self.height / self.model.scale, self.width / self.model.scale)
    }
}
