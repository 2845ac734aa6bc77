//! Channel-major feature maps and the plain (non-accelerated) layer
//! operations, generic over the scalar type.
//!
//! The same code computes the FP32 reference (`f32`/`f64`) and the integer
//! reference (`i64`) that the accelerator model is checked against.

use std::ops::{Add, Mul};

use num_traits::{Bounded, Zero};

use crate::error::{Error, Result};

/// Scalar usable by the reference layer operations.
pub trait Scalar:
    Copy + Zero + Add<Output = Self> + Mul<Output = Self> + PartialOrd + Bounded + Send + Sync
{
    /// Mean of a pooling window; integer types use floor division.
    fn window_mean(values: &[Self]) -> Self;
}

macro_rules! int_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn window_mean(values: &[Self]) -> Self {
                let sum: i128 = values.iter().map(|&v| v as i128).sum();
                sum.div_euclid(values.len() as i128) as $t
            }
        }
    )*};
}

macro_rules! float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn window_mean(values: &[Self]) -> Self {
                values.iter().copied().sum::<$t>() / values.len() as $t
            }
        }
    )*};
}

int_scalar!(u8, i32, i64);
float_scalar!(f32, f64);

/// A `channels x height x width` feature map stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Fmap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy + Zero> Fmap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Fmap {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values do not fill a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(Fmap {
            channels,
            height,
            width,
            data,
        })
    }

    /// Zero border of `pad` pixels on every side.
    pub fn padded(&self, pad: usize) -> Self {
        if pad == 0 {
            return self.clone();
        }
        let (h, w) = (self.height + 2 * pad, self.width + 2 * pad);
        let mut out = Fmap::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y + pad, x + pad, self.get(c, y, x));
                }
            }
        }
        out
    }

    pub fn map<U: Copy + Zero>(&self, f: impl Fn(T) -> U) -> Fmap<U> {
        Fmap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Copy> Fmap<T> {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    /// Channel-major flattening (`c`, then `y`, then `x`).
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// Pooling reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PoolKind {
    #[default]
    Max,
    Average,
}

impl std::str::FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolKind::Max),
            "average" | "avg" => Ok(PoolKind::Average),
            other => Err(Error::Config(format!("unknown pooling kind `{other}`"))),
        }
    }
}

/// Output side of a valid (unpadded, stride 1) convolution.
pub fn conv_output_side(input: usize, kernel: usize) -> Result<usize> {
    if kernel == 0 || kernel > input {
        return Err(Error::Shape(format!(
            "kernel {kernel} does not fit an input of side {input}"
        )));
    }
    Ok(input - kernel + 1)
}

/// Stride-1 valid convolution.
///
/// `weights` is `[out_channels][in_channels][kernel][kernel]`.
pub fn conv2d_valid<T: Scalar>(
    input: &Fmap<T>,
    weights: &[T],
    bias: &[T],
    out_channels: usize,
    kernel: usize,
) -> Result<Fmap<T>> {
    let (cin, h, w) = input.shape();
    let expected = out_channels * cin * kernel * kernel;
    if weights.len() != expected || bias.len() != out_channels {
        return Err(Error::Shape(format!(
            "conv weights {} (want {expected}) / bias {} (want {out_channels})",
            weights.len(),
            bias.len()
        )));
    }
    let oh = conv_output_side(h, kernel)?;
    let ow = conv_output_side(w, kernel)?;
    let mut out = Fmap::zeros(out_channels, oh, ow);
    for f in 0..out_channels {
        let wf = &weights[f * cin * kernel * kernel..(f + 1) * cin * kernel * kernel];
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[f];
                for c in 0..cin {
                    for r in 0..kernel {
                        for s in 0..kernel {
                            acc = acc + input.get(c, y + r, x + s) * wf[(c * kernel + r) * kernel + s];
                        }
                    }
                }
                out.set(f, y, x, acc);
            }
        }
    }
    Ok(out)
}

/// `weights` is `[out][in]`.
pub fn dense<T: Scalar>(input: &[T], weights: &[T], bias: &[T]) -> Result<Vec<T>> {
    let out_dim = bias.len();
    if weights.len() != out_dim * input.len() {
        return Err(Error::Shape(format!(
            "dense weights {} do not match {out_dim}x{}",
            weights.len(),
            input.len()
        )));
    }
    Ok(weights
        .chunks_exact(input.len())
        .zip(bias)
        .map(|(row, &b)| {
            row.iter()
                .zip(input)
                .fold(b, |acc, (&w, &x)| acc + w * x)
        })
        .collect())
}

/// Square-window pooling.
pub fn pool2d<T: Scalar>(input: &Fmap<T>, kind: PoolKind, size: usize, stride: usize) -> Result<Fmap<T>> {
    let (c, h, w) = input.shape();
    if size == 0 || stride == 0 || h < size || w < size || !(h - size).is_multiple_of(stride) || !(w - size).is_multiple_of(stride) {
        return Err(Error::Shape(format!(
            "{h}x{w} map is not divisible by a {size}x{size} window at stride {stride}"
        )));
    }
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = Fmap::zeros(c, oh, ow);
    let mut window = Vec::with_capacity(size * size);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                window.clear();
                for dy in 0..size {
                    for dx in 0..size {
                        window.push(input.get(ch, y * stride + dy, x * stride + dx));
                    }
                }
                let v = match kind {
                    PoolKind::Max => window
                        .iter()
                        .copied()
                        .fold(T::min_value(), |m, v| if v > m { v } else { m }),
                    PoolKind::Average => T::window_mean(&window),
                };
                out.set(ch, y, x, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_examples() {
        let m = Fmap::from_vec(1, 2, 2, vec![1u8, 2, 3, 4]).unwrap();
        assert_eq!(pool2d(&m, PoolKind::Max, 2, 2).unwrap().as_slice(), &[4]);
        assert_eq!(pool2d(&m, PoolKind::Average, 2, 2).unwrap().as_slice(), &[2]);
        let c = Fmap::from_vec(2, 4, 4, vec![7i64; 32]).unwrap();
        let p = pool2d(&c, PoolKind::Average, 2, 2).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 7));
        assert_eq!(p.shape(), (2, 2, 2));
        let odd = Fmap::<u8>::zeros(1, 5, 5);
        assert!(matches!(pool2d(&odd, PoolKind::Max, 2, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn negative_average_floors() {
        let m = Fmap::from_vec(1, 2, 2, vec![-1i64, 0, 0, 0]).unwrap();
        assert_eq!(pool2d(&m, PoolKind::Average, 2, 2).unwrap().as_slice(), &[-1]);
    }

    #[test]
    fn conv_identity_kernel() {
        let input = Fmap::from_vec(1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 4];
        k[0] = 1.0;
        let out = conv2d_valid(&input, &k, &[0.5], 1, 2).unwrap();
        assert_eq!(out.as_slice(), &[1.5, 2.5, 4.5, 5.5]);
    }

    #[test]
    fn dense_rows() {
        let y = dense(&[1i64, 2, 3], &[1, 0, 0, 0, 1, 1], &[10, -1]).unwrap();
        assert_eq!(y, vec![11, 4]);
        assert!(dense(&[1i64], &[1, 2], &[0]).is_err());
    }

    #[test]
    fn padding_places_image_in_centre() {
        let m = Fmap::from_vec(1, 1, 1, vec![9u8]).unwrap().padded(2);
        assert_eq!(m.shape(), (1, 5, 5));
        assert_eq!(m.get(0, 2, 2), 9);
        assert_eq!(m.as_slice().iter().map(|&v| u32::from(v)).sum::<u32>(), 9);
    }
}
