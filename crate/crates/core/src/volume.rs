//! Grayscale image/video stack with a fixed vectorization convention.
//!
//! An [`ImageVolume`] holds `frames` grayscale frames of `height` x `width`
//! double-precision samples, nominal range [0, 255]. Storage is column-major
//! within a frame (all of column 0 top to bottom, then column 1, ...), with
//! frames concatenated in temporal order. Every linear operator in this crate
//! states its adjacency in terms of this one convention. A single image is the
//! `frames == 1` case; there is no separate image type.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    height: usize,
    width: usize,
    frames: usize,
    data: Vec<f64>,
}

impl ImageVolume {
    /// Builds a volume from pre-flattened data in the crate's vectorization
    /// order. Rejects empty dimensions, length mismatches and non-finite
    /// samples.
    pub fn new(height: usize, width: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || frames == 0 {
            return Err(Error::DimensionMismatch(format!(
                "volume dimensions must be positive, got {height}x{width}x{frames}"
            )));
        }
        if data.len() != height * width * frames {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match {height}x{width}x{frames}",
                data.len()
            )));
        }
        if !data.iter().all(|s| s.is_finite()) {
            return Err(Error::InvalidParameter(
                "volume samples must be finite".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            frames,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, frames: usize) -> Self {
        Self::new(height, width, frames, vec![0.0; height * width * frames])
            .expect("zero volume is always valid")
    }

    pub fn constant(height: usize, width: usize, frames: usize, value: f64) -> Result<Self> {
        Self::new(height, width, frames, vec![value; height * width * frames])
    }

    /// Builds a volume by evaluating `f(row, col, frame)` at every sample.
    pub fn from_fn<F>(height: usize, width: usize, frames: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        let mut data = vec![0.0; height * width * frames];
        for t in 0..frames {
            for j in 0..width {
                for i in 0..height {
                    data[t * height * width + j * height + i] = f(i, j, t);
                }
            }
        }
        Self::new(height, width, frames, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.frames)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are positive by construction
    }

    #[inline]
    pub fn index_of(&self, row: usize, col: usize, frame: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && frame < self.frames);
        frame * self.height * self.width + col * self.height + row
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, frame: usize) -> f64 {
        self.data[self.index_of(row, col, frame)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, index: usize) -> FrameView<'_> {
        assert!(index < self.frames, "frame index out of range");
        FrameView {
            parent: self,
            index,
        }
    }

    /// Flattens to the crate's lexicographic vector. The storage already uses
    /// this order, so the result is a copy of the raw samples.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Inverse of [`vectorize`](Self::vectorize); exact round-trip.
    pub fn devectorize(height: usize, width: usize, frames: usize, v: Vec<f64>) -> Result<Self> {
        Self::new(height, width, frames, v)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Elementwise map; the result is validated for finiteness.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.frames,
            self.data.iter().map(|&s| f(s)).collect(),
        )
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.require_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "sub")?;
        Self::new(
            self.height,
            self.width,
            self.frames,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        elementwise_axpy(1.0, self, other)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        self.map(|s| a * s)
    }
}

/// Returns `a * x + y` elementwise. Accumulation order is fixed (flat scan),
/// so results are bit-reproducible across runs on the same platform.
pub fn elementwise_axpy(a: f64, x: &ImageVolume, y: &ImageVolume) -> Result<ImageVolume> {
    if !x.same_shape(y) {
        return Err(Error::DimensionMismatch(format!(
            "axpy: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    ImageVolume::new(
        x.height,
        x.width,
        x.frames,
        x.data
            .iter()
            .zip(&y.data)
            .map(|(xs, ys)| a * xs + ys)
            .collect(),
    )
}

/// Read-only view of a single frame of a volume.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    parent: &'a ImageVolume,
    index: usize,
}

impl<'a> FrameView<'a> {
    pub fn height(&self) -> usize {
        self.parent.height
    }

    pub fn width(&self) -> usize {
        self.parent.width
    }

    pub fn frame_index(&self) -> usize {
        self.index
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.parent.get(row, col, self.index)
    }

    /// Copies the frame out as a single-frame volume.
    pub fn to_volume(&self) -> ImageVolume {
        let (h, w) = (self.parent.height, self.parent.width);
        let start = self.index * h * w;
        ImageVolume::new(h, w, 1, self.parent.data[start..start + h * w].to_vec())
            .expect("frame slice of a valid volume is valid")
    }
}
