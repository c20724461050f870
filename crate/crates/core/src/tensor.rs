//! Dense NCHW tensors and the convolution/activation primitives the network
//! is written against.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Batch, channel, height, width extents of a [`Tensor4`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Number of elements belonging to one batch entry.
    pub const fn sample(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major `(N, C, H, W)` array of scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(shape_err!("every extent must be >= 1, got {shape}"));
        }
        if data.len() != shape.len() {
            return Err(shape_err!(
                "shape {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// A `(1, 1, 1, 1)` tensor.
    pub fn scalar(value: T) -> Self {
        Self::full(Shape4::new(1, 1, 1, 1), value)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// The `H x W` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of sample `n`, contiguous.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape.sample();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape.sample();
        &mut self.data[n * s..(n + 1) * s]
    }

    /// The single value of a `(1, 1, 1, 1)` tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.shape)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn expect_shape(&self, shape: Shape4) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err!("expected shape {shape}, got {}", self.shape));
        }
        Ok(())
    }

    /// Concatenate tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat of zero tensors"))?
            .shape;
        for p in parts {
            let s = p.shape;
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(shape_err!("cannot concat {s} with {first} along channels"));
            }
        }
        let c = parts.iter().map(|p| p.shape.c).sum();
        let shape = Shape4::new(first.n, c, first.h, first.w);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.sample(n));
            }
        }
        Ok(Self { shape, data })
    }

    /// Concatenate tensors along the batch axis.
    pub fn stack(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("stack of zero tensors"))?
            .shape;
        for p in parts {
            let s = p.shape;
            if s.c != first.c || s.h != first.h || s.w != first.w {
                return Err(shape_err!("cannot stack {s} with {first}"));
            }
        }
        let n = parts.iter().map(|p| p.shape.n).sum();
        let mut data = Vec::with_capacity(n * first.sample());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: Shape4::new(n, first.c, first.h, first.w),
            data,
        })
    }
}

/// Square convolution kernel with bias. Weights are laid out
/// `(out_channels, in_channels, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Result<Self> {
        Self::new(
            Tensor4::zeros(Shape4::new(out_channels, in_channels, k, k)),
            vec![T::zero(); out_channels],
        )
    }

    pub fn new(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let s = weight.shape();
        if s.h != s.w {
            return Err(shape_err!("kernel must be square, got {}x{}", s.h, s.w));
        }
        if s.h.is_multiple_of(2) {
            return Err(shape_err!("kernel size must be odd, got {}", s.h));
        }
        if bias.len() != s.n {
            return Err(shape_err!(
                "bias has {} entries for {} output channels",
                bias.len(),
                s.n
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn size(&self) -> usize {
        self.weight.shape().h
    }

    pub fn bias_tensor(&self) -> Tensor4<T> {
        Tensor4 {
            shape: Shape4::new(1, self.bias.len(), 1, 1),
            data: self.bias.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ConvKernel<U> {
        ConvKernel {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Unfold one sample `(C, H, W)` into a `(C*k*k, H*W)` column matrix with
/// zero padding of `(k-1)/2`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for oy in 0..h {
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h || x_lo >= x_hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let iy = iy - pad;
                    dst[..x_lo].fill(T::zero());
                    dst[x_hi..].fill(T::zero());
                    let src = &plane[iy * w..(iy + 1) * w];
                    dst[x_lo..x_hi].copy_from_slice(&src[x_lo + kx - pad..x_hi + kx - pad]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto a `(C, H, W)` sample.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for oy in 0..h {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    let src = &row[oy * w + x_lo..oy * w + x_hi];
                    let dst = &mut plane[iy * w + x_lo + kx - pad..iy * w + x_hi + kx - pad];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                }
            }
        }
    }
}

fn check_conv<T: Scalar>(x: Shape4, weight: &Tensor4<T>, bias: &[T]) -> Result<usize> {
    let ws = weight.shape();
    if x.c != ws.c {
        return Err(shape_err!(
            "convolution expects {} input channels, got {}",
            ws.c,
            x.c
        ));
    }
    if ws.h != ws.w || ws.h.is_multiple_of(2) {
        return Err(shape_err!("kernel must be square and odd, got {}x{}", ws.h, ws.w));
    }
    if bias.len() != ws.n {
        return Err(shape_err!("bias length {} != out channels {}", bias.len(), ws.n));
    }
    Ok(ws.h)
}

/// Stride-1 cross-correlation with zero "same" padding.
pub fn conv2d_same<T: Scalar>(x: &Tensor4<T>, kernel: &ConvKernel<T>) -> Result<Tensor4<T>> {
    conv2d_raw(x, &kernel.weight, &kernel.bias)
}

pub(crate) fn conv2d_raw<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
) -> Result<Tensor4<T>> {
    let k = check_conv(x.shape(), weight, bias)?;
    let s = x.shape();
    let out_c = weight.shape().n;
    let hw = s.plane();
    let ckk = s.c * k * k;
    let mut out = Tensor4::zeros(Shape4::new(s.n, out_c, s.h, s.w));
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
    for n in 0..s.n {
        let cols: &[T] = if k == 1 {
            x.sample(n)
        } else {
            im2col(x.sample(n), s.c, s.h, s.w, k, &mut col);
            &col
        };
        let dst = out.sample_mut(n);
        for (o, &b) in bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(b);
        }
        T::gemm(
            out_c,
            ckk,
            hw,
            T::one(),
            weight.data(),
            ckk as isize,
            1,
            cols,
            hw as isize,
            1,
            T::one(),
            dst,
            hw as isize,
            1,
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d_raw`]. Accumulates into `dweight`/`dbias`; returns
/// the input gradient when `want_dx` is set.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    dout: &Tensor4<T>,
    dweight: Option<&mut Tensor4<T>>,
    dbias: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Tensor4<T>> {
    let s = x.shape();
    let ws = weight.shape();
    let (out_c, k) = (ws.n, ws.h);
    let hw = s.plane();
    let ckk = s.c * k * k;

    if let Some(db) = dbias {
        for n in 0..s.n {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += dout.plane(n, o).iter().copied().sum::<T>();
            }
        }
    }

    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
    if let Some(dw) = dweight {
        for n in 0..s.n {
            let cols: &[T] = if k == 1 {
                x.sample(n)
            } else {
                im2col(x.sample(n), s.c, s.h, s.w, k, &mut col);
                &col
            };
            // dW (O x CKK) += dY (O x HW) * cols^T (HW x CKK)
            T::gemm(
                out_c,
                hw,
                ckk,
                T::one(),
                dout.sample(n),
                hw as isize,
                1,
                cols,
                1,
                hw as isize,
                T::one(),
                dw.data_mut(),
                ckk as isize,
                1,
            );
        }
    }

    if !want_dx {
        return None;
    }
    let mut dx = Tensor4::zeros(s);
    for n in 0..s.n {
        // dcols (CKK x HW) = W^T (CKK x O) * dY (O x HW)
        let target: &mut [T] = if k == 1 { dx.sample_mut(n) } else { &mut col };
        T::gemm(
            ckk,
            out_c,
            hw,
            T::one(),
            weight.data(),
            1,
            ckk as isize,
            dout.sample(n),
            hw as isize,
            1,
            T::zero(),
            target,
            hw as isize,
            1,
        );
        if k != 1 {
            col2im(&col, s.c, s.h, s.w, k, dx.sample_mut(n));
        }
    }
    Some(dx)
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

/// Mean over each `H x W` plane, giving shape `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let inv = T::one() / T::of(s.plane() as f64);
    let mut data = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            data.push(x.plane(n, c).iter().copied().sum::<T>() * inv);
        }
    }
    Tensor4 {
        shape: Shape4::new(s.n, s.c, 1, 1),
        data,
    }
}
