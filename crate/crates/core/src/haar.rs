//! Single-level orthonormal 2D Haar transform.
//!
//! Each 2×2 pixel block `[[a, b], [c, d]]` maps to four coefficients
//!
//! ```text
//! LL = (a + b + c + d) / 2
//! LH = (a + b - c - d) / 2   top rows minus bottom rows
//! HL = (a - b + c - d) / 2   left columns minus right columns
//! HH = (a - b - c + d) / 2   diagonal
//! ```
//!
//! The 4×4 block matrix is orthogonal and symmetric, so the same formulas
//! invert the transform. The low band holds LL with shape `(C, H/2, W/2)`;
//! the high band stacks LH, HL and HH along the channel axis in that order,
//! giving `(3C, H/2, W/2)`.

use ndarray::{s, Array3, ArrayView3, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Shape `(C, H, W)` of a pixel tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Dimension("channel count must be positive".into()));
        }
        if height < 2 || width < 2 || height % 2 != 0 || width % 2 != 0 {
            return Err(Error::Dimension(format!(
                "height and width must be even and >= 2, got {height}x{width}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn low_dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height / 2, self.width / 2)
    }

    pub fn high_dims(&self) -> (usize, usize, usize) {
        (3 * self.channels, self.height / 2, self.width / 2)
    }

    /// Number of low-band coefficients.
    pub fn low_len(&self) -> usize {
        self.len() / 4
    }

    /// Number of high-band coefficients.
    pub fn high_len(&self) -> usize {
        3 * self.len() / 4
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.channels, self.height, self.width)
    }
}

/// Image state in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Pixels(Array3<f64>);

impl AsRef<[f64]> for Pixels {
    fn as_ref(&self) -> &[f64] {
        self.as_slice()
    }
}

impl Pixels {
    /// Wraps an array after checking the shape and that every entry is finite.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        ImageShape::new(c, h, w)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("pixel tensor contains non-finite entries".into()));
        }
        Ok(Self(data.as_standard_layout().into_owned()))
    }

    pub fn from_vec(shape: ImageShape, values: Vec<f64>) -> Result<Self> {
        let data = Array3::from_shape_vec(shape.dims(), values).map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(data)
    }

    pub(crate) fn from_raw(data: Array3<f64>) -> Self {
        debug_assert!(data.is_standard_layout());
        Self(data)
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Self(Array3::zeros(shape.dims()))
    }

    pub fn constant(shape: ImageShape, value: f64) -> Self {
        Self(Array3::from_elem(shape.dims(), value))
    }

    /// Standard Gaussian tensor scaled by `scale`.
    pub fn gaussian<R: Rng + ?Sized>(shape: ImageShape, scale: f64, rng: &mut R) -> Self {
        let values = (0..shape.len())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self(Array3::from_shape_vec(shape.dims(), values).expect("shape matches length"))
    }

    pub fn shape(&self) -> ImageShape {
        let (channels, height, width) = self.0.dim();
        ImageShape {
            channels,
            height,
            width,
        }
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array3<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("pixels are stored contiguously")
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `alpha * self + beta * other`.
    pub fn lincomb(&self, alpha: f64, other: &Pixels, beta: f64) -> Result<Pixels> {
        check_same(self.0.view(), other.0.view(), "pixels")?;
        let mut out = self.0.clone();
        Zip::from(&mut out)
            .and(&other.0)
            .for_each(|o, &y| *o = alpha * *o + beta * y);
        Ok(Pixels(out))
    }

    pub fn max_abs_diff(&self, other: &Pixels) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Paired low and high wavelet bands of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqState {
    pub low: Array3<f64>,
    pub high: Array3<f64>,
}

impl FreqState {
    /// Builds a state after checking that the bands come from a common image shape.
    pub fn new(low: Array3<f64>, high: Array3<f64>) -> Result<Self> {
        let state = Self {
            low: low.as_standard_layout().into_owned(),
            high: high.as_standard_layout().into_owned(),
        };
        state.image_shape()?;
        Ok(state)
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Self {
            low: Array3::zeros(shape.low_dims()),
            high: Array3::zeros(shape.high_dims()),
        }
    }

    /// Image shape implied by the band shapes.
    pub fn image_shape(&self) -> Result<ImageShape> {
        let (c, h2, w2) = self.low.dim();
        let (c3, hh, wh) = self.high.dim();
        if c3 != 3 * c || hh != h2 || wh != w2 || c == 0 || h2 == 0 || w2 == 0 {
            return Err(Error::Dimension(format!(
                "inconsistent bands: low {:?}, high {:?}",
                self.low.dim(),
                self.high.dim()
            )));
        }
        ImageShape::new(c, 2 * h2, 2 * w2)
    }

    /// Flattens to one vector: all low coefficients, then all high coefficients.
    pub fn to_vec(&self) -> Vec<f64> {
        self.low.iter().chain(self.high.iter()).copied().collect()
    }

    /// Inverse of [`FreqState::to_vec`].
    pub fn from_vec(shape: ImageShape, values: &[f64]) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                shape.len(),
                values.len()
            )));
        }
        let (lo, hi) = values.split_at(shape.low_len());
        Ok(Self {
            low: Array3::from_shape_vec(shape.low_dims(), lo.to_vec()).expect("low length"),
            high: Array3::from_shape_vec(shape.high_dims(), hi.to_vec()).expect("high length"),
        })
    }

    pub fn low_slice(&self) -> &[f64] {
        self.low.as_slice().expect("contiguous low band")
    }

    pub fn high_slice(&self) -> &[f64] {
        self.high.as_slice().expect("contiguous high band")
    }

    pub fn low_norm_sq(&self) -> f64 {
        self.low.iter().map(|v| v * v).sum()
    }

    pub fn high_norm_sq(&self) -> f64 {
        self.high.iter().map(|v| v * v).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.low_norm_sq() + self.high_norm_sq()
    }

    pub fn check_same_shape(&self, other: &FreqState) -> Result<()> {
        check_same(self.low.view(), other.low.view(), "low band")?;
        check_same(self.high.view(), other.high.view(), "high band")
    }

    /// Scales the low band by `low` and the high band by `high`.
    pub fn scale_bands(&self, low: f64, high: f64) -> FreqState {
        FreqState {
            low: self.low.mapv(|v| low * v),
            high: self.high.mapv(|v| high * v),
        }
    }

    /// Per-band `a_b * self_b + b_b * other_b`, with coefficient pairs `(low, high)`.
    pub fn lincomb(&self, a: (f64, f64), other: &FreqState, b: (f64, f64)) -> Result<FreqState> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        Zip::from(&mut out.low)
            .and(&other.low)
            .for_each(|o, &y| *o = a.0 * *o + b.0 * y);
        Zip::from(&mut out.high)
            .and(&other.high)
            .for_each(|o, &y| *o = a.1 * *o + b.1 * y);
        Ok(out)
    }

    pub fn sub(&self, other: &FreqState) -> Result<FreqState> {
        self.lincomb((1.0, 1.0), other, (-1.0, -1.0))
    }

    pub fn max_abs_diff(&self, other: &FreqState) -> f64 {
        self.low
            .iter()
            .zip(other.low.iter())
            .chain(self.high.iter().zip(other.high.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_same(a: ArrayView3<f64>, b: ArrayView3<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "{what} shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Forward transform `x -> (low, high)`.
pub fn dwt2(x: &Pixels) -> FreqState {
    let shape = x.shape();
    let (c, h2, w2) = shape.low_dims();
    let src = x.array();
    let mut low = Array3::zeros((c, h2, w2));
    let mut high = Array3::zeros((3 * c, h2, w2));
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let a = src[[ch, 2 * i, 2 * j]];
                let b = src[[ch, 2 * i, 2 * j + 1]];
                let cc = src[[ch, 2 * i + 1, 2 * j]];
                let d = src[[ch, 2 * i + 1, 2 * j + 1]];
                low[[ch, i, j]] = 0.5 * (a + b + cc + d);
                high[[ch, i, j]] = 0.5 * (a + b - cc - d);
                high[[c + ch, i, j]] = 0.5 * (a - b + cc - d);
                high[[2 * c + ch, i, j]] = 0.5 * (a - b - cc + d);
            }
        }
    }
    FreqState { low, high }
}

/// Inverse transform `(low, high) -> x`.
pub fn idwt2(state: &FreqState) -> Result<Pixels> {
    let shape = state.image_shape()?;
    let c = shape.channels;
    let (_, h2, w2) = shape.low_dims();
    let mut out = Array3::zeros(shape.dims());
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let ll = state.low[[ch, i, j]];
                let lh = state.high[[ch, i, j]];
                let hl = state.high[[c + ch, i, j]];
                let hh = state.high[[2 * c + ch, i, j]];
                out[[ch, 2 * i, 2 * j]] = 0.5 * (ll + lh + hl + hh);
                out[[ch, 2 * i, 2 * j + 1]] = 0.5 * (ll + lh - hl - hh);
                out[[ch, 2 * i + 1, 2 * j]] = 0.5 * (ll - lh + hl - hh);
                out[[ch, 2 * i + 1, 2 * j + 1]] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
    Ok(Pixels::from_raw(out))
}

/// Views of the three detail sub-bands `(LH, HL, HH)`.
pub fn detail_subbands(state: &FreqState) -> [ArrayView3<'_, f64>; 3] {
    let c = state.low.dim().0;
    [
        state.high.slice(s![0..c, .., ..]),
        state.high.slice(s![c..2 * c, .., ..]),
        state.high.slice(s![2 * c..3 * c, .., ..]),
    ]
}
