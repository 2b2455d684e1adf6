//! Dense row-major tensors and the two convolution kernels the detector
//! needs (forward and reverse mode), all with zero padding and stride 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v = *v * alpha);
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Converts through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Serialized form: shape plus flat data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl<T: Scalar> From<&Tensor<T>> for TensorRecord {
    fn from(t: &Tensor<T>) -> Self {
        Self {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

impl TensorRecord {
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| T::lit(v)).collect())
    }
}

/// Geometry of a square convolution over `[channels, size, size]` maps.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub size: usize,
}

impl ConvShape {
    fn offsets(&self, k: usize) -> (usize, usize, isize) {
        // valid output range for kernel tap k and the input shift
        let pad = (self.kernel / 2) as isize;
        let d = k as isize - pad;
        let lo = (-d).max(0) as usize;
        let hi = (self.size as isize - d).min(self.size as isize).max(0) as usize;
        (lo, hi, d)
    }
}

/// `out[co] = bias[co] + sum_ci conv(input[ci], weight[co, ci])`.
///
/// `weight` is `[out, in, k, k]`; `input` is `[in, size, size]`.
pub fn conv2d<T: Scalar>(shape: ConvShape, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let ConvShape {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        size: g,
    } = shape;
    let plane = g * g;
    debug_assert_eq!(input.len(), cin * plane);
    debug_assert_eq!(weight.len(), cout * cin * k * k);
    let mut out = vec![T::zero(); cout * plane];
    for co in 0..cout {
        let out_c = &mut out[co * plane..(co + 1) * plane];
        out_c.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let in_c = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let (y0, y1, dy) = shape.offsets(ky);
                for kx in 0..k {
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (x0, x1, dx) = shape.offsets(kx);
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let src = &in_c[iy * g + ix0..iy * g + ix0 + (x1 - x0)];
                        let dst = &mut out_c[y * g + x0..y * g + x1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reverse mode of [`conv2d`]. Accumulates into `d_weight` / `d_bias` and,
/// when requested, returns the gradient with respect to the input.
pub fn conv2d_backward<T: Scalar>(
    shape: ConvShape,
    input: &[T],
    weight: &[T],
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    want_input_grad: bool,
) -> Option<Vec<T>> {
    let ConvShape {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        size: g,
    } = shape;
    let plane = g * g;
    let mut d_in = want_input_grad.then(|| vec![T::zero(); cin * plane]);
    for co in 0..cout {
        let go = &d_out[co * plane..(co + 1) * plane];
        d_bias[co] = d_bias[co] + go.iter().copied().sum::<T>();
        for ci in 0..cin {
            let in_c = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let (y0, y1, dy) = shape.offsets(ky);
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let (x0, x1, dx) = shape.offsets(kx);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let src = &in_c[iy * g + ix0..iy * g + ix0 + (x1 - x0)];
                        let g_row = &go[y * g + x0..y * g + x1];
                        for (&a, &b) in g_row.iter().zip(src) {
                            acc = acc + a * b;
                        }
                    }
                    d_weight[widx] = d_weight[widx] + acc;
                    if let Some(d_in) = d_in.as_mut() {
                        let wv = weight[widx];
                        let d_in_c = &mut d_in[ci * plane..(ci + 1) * plane];
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let ix0 = (x0 as isize + dx) as usize;
                            let dst = &mut d_in_c[iy * g + ix0..iy * g + ix0 + (x1 - x0)];
                            let g_row = &go[y * g + x0..y * g + x1];
                            for (d, &a) in dst.iter_mut().zip(g_row) {
                                *d = *d + wv * a;
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}
