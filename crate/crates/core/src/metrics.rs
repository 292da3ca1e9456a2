//! PSNR/MSE evaluation with optional border exclusion, and the bicubic
//! resampler used both as the solver initializer and as the baseline.
//!
//! PSNR(X,Y) = 10 log10(255^2 / MSE) with MSE averaged over the compared
//! samples; identical inputs return +inf. Bicubic uses the Keys kernel with
//! a = -0.5 and mirror boundary; upscaling by integer factor s places input
//! sample (i,j) at output sample (s*i, s*j), matching the decimation phase of
//! the operators module.

use crate::error::{Error, Result};
use crate::operators::mirror;
use crate::volume::ImageVolume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrOptions {
    /// Pixels excluded on each spatial side of every frame.
    pub border_crop: usize,
    /// Also report per-frame values.
    pub per_frame: bool,
}

impl Default for PsnrOptions {
    fn default() -> Self {
        Self {
            border_crop: 0,
            per_frame: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrReport {
    /// PSNR over all compared samples of the volume, in dB.
    pub overall: f64,
    /// Per-frame PSNR values when requested, plus their mean.
    pub per_frame: Option<Vec<f64>>,
    pub per_frame_mean: Option<f64>,
}

const PEAK: f64 = 255.0;

fn mse_over(
    x: &ImageVolume,
    y: &ImageVolume,
    crop: usize,
    frame: Option<usize>,
) -> (f64, usize) {
    let (h, w, t) = x.shape();
    let frames: Vec<usize> = match frame {
        Some(f) => vec![f],
        None => (0..t).collect(),
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    for &f in &frames {
        for j in crop..w - crop {
            for i in crop..h - crop {
                let d = x.get(i, j, f) - y.get(i, j, f);
                acc += d * d;
                count += 1;
            }
        }
    }
    (acc / count as f64, count)
}

fn mse_to_db(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

/// PSNR in dB over the (optionally border-cropped) volume.
pub fn psnr(x: &ImageVolume, y: &ImageVolume, opt: &PsnrOptions) -> Result<f64> {
    Ok(psnr_report(x, y, opt)?.overall)
}

pub fn psnr_report(x: &ImageVolume, y: &ImageVolume, opt: &PsnrOptions) -> Result<PsnrReport> {
    if !x.same_shape(y) {
        return Err(Error::DimensionMismatch(format!(
            "psnr: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (h, w, t) = x.shape();
    if opt.border_crop >= h.min(w).div_ceil(2) {
        return Err(Error::InvalidParameter(format!(
            "border crop {} too large for {h}x{w} frames",
            opt.border_crop
        )));
    }
    let (mse, _) = mse_over(x, y, opt.border_crop, None);
    let overall = mse_to_db(mse);
    let (per_frame, per_frame_mean) = if opt.per_frame {
        let vals: Vec<f64> = (0..t)
            .map(|f| mse_to_db(mse_over(x, y, opt.border_crop, Some(f)).0))
            .collect();
        let mean = vals.iter().sum::<f64>() / t as f64;
        (Some(vals), Some(mean))
    } else {
        (None, None)
    };
    Ok(PsnrReport {
        overall,
        per_frame,
        per_frame_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeDirection {
    Up,
    Down,
}

/// Keys cubic kernel, a = -0.5.
fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Resamples one axis of length `n_in` to `n_out`; `coord(o)` maps an output
/// index to its source coordinate on the input grid.
fn resample_axis(input: &[f64], n_in: usize, coord: impl Fn(usize) -> f64, out: &mut [f64]) {
    for (o, slot) in out.iter_mut().enumerate() {
        let xs = coord(o);
        let base = xs.floor();
        let frac = xs - base;
        let mut acc = 0.0;
        for k in -1..=2isize {
            let idx = mirror(base as isize + k, n_in);
            acc += keys(frac - k as f64) * input[idx];
        }
        *slot = acc;
    }
}

/// Per-frame separable bicubic resize by integer factor `s`.
pub fn bicubic_resize(v: &ImageVolume, s: usize, direction: ResizeDirection) -> Result<ImageVolume> {
    if s == 0 {
        return Err(Error::InvalidParameter("scale must be >= 1".into()));
    }
    if s == 1 {
        return Ok(v.clone());
    }
    let (h, w, t) = v.shape();
    let (oh, ow) = match direction {
        ResizeDirection::Up => (h * s, w * s),
        ResizeDirection::Down => {
            if h % s != 0 || w % s != 0 {
                return Err(Error::DimensionMismatch(format!(
                    "scale {s} does not divide {h}x{w}"
                )));
            }
            (h / s, w / s)
        }
    };
    let coord = |o: usize| -> f64 {
        match direction {
            ResizeDirection::Up => o as f64 / s as f64,
            ResizeDirection::Down => (o * s) as f64,
        }
    };
    let mut out = ImageVolume::zeros(oh, ow, t);
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; oh];
    let mut row_in = vec![0.0; w];
    let mut row_out = vec![0.0; ow];
    for frame in 0..t {
        // vertical pass: h x w -> oh x w
        let mut mid = vec![0.0; oh * w];
        for j in 0..w {
            for i in 0..h {
                col_in[i] = v.get(i, j, frame);
            }
            resample_axis(&col_in, h, coord, &mut col_out);
            mid[j * oh..(j + 1) * oh].copy_from_slice(&col_out);
        }
        // horizontal pass: oh x w -> oh x ow
        for i in 0..oh {
            for j in 0..w {
                row_in[j] = mid[j * oh + i];
            }
            resample_axis(&row_in, w, coord, &mut row_out);
            for j in 0..ow {
                out.data_mut()[frame * oh * ow + j * oh + i] = row_out[j];
            }
        }
    }
    Ok(out)
}
