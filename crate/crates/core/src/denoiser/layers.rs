//! Layer kernels, generic over the float type so the gradient checker can run
//! the exact same code in `f64`.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Sum
    + num_traits::Float
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// `x * sigmoid(x)`.
#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// 3x3 convolution with zero "same" padding over `cin` planes of `h x w`.
    Conv3x3 {
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl Layer {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Layer::Conv3x3 { cin, cout, .. } => vec![cout, cin, 3, 3],
            Layer::Dense { inputs, outputs } => vec![outputs, inputs],
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv3x3 { cin, .. } => cin * 9,
            Layer::Dense { inputs, .. } => inputs,
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            Layer::Conv3x3 { cout, .. } => cout,
            Layer::Dense { outputs, .. } => outputs,
        }
    }

    /// Elements per output channel (spatial size for convs, 1 for dense).
    pub fn plane(&self) -> usize {
        match *self {
            Layer::Conv3x3 { h, w, .. } => h * w,
            Layer::Dense { .. } => 1,
        }
    }

    pub fn input_len(&self) -> usize {
        match *self {
            Layer::Conv3x3 { cin, h, w, .. } => cin * h * w,
            Layer::Dense { inputs, .. } => inputs,
        }
    }

    pub fn output_len(&self) -> usize {
        self.out_channels() * self.plane()
    }

    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], input: &[T], out: &mut [T]) {
        match *self {
            Layer::Conv3x3 { cin, cout, h, w } => {
                conv3x3_forward(weight, bias, input, cin, cout, h, w, out)
            }
            Layer::Dense { inputs, outputs } => {
                for o in 0..outputs {
                    let row = &weight[o * inputs..(o + 1) * inputs];
                    let dot: T = row.iter().zip(input).map(|(&a, &b)| a * b).sum();
                    out[o] = bias[o] + dot;
                }
            }
        }
    }

    /// Accumulates parameter gradients into `gw`/`gb` and, when requested,
    /// the input gradient into `gin`.
    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        input: &[T],
        gout: &[T],
        gw: &mut [T],
        gb: &mut [T],
        gin: Option<&mut [T]>,
    ) {
        match *self {
            Layer::Conv3x3 { cin, cout, h, w } => {
                conv3x3_backward(weight, input, gout, cin, cout, h, w, gw, gb, gin)
            }
            Layer::Dense { inputs, outputs } => {
                for o in 0..outputs {
                    let g = gout[o];
                    gb[o] += g;
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for (gwv, &x) in grow.iter_mut().zip(input) {
                        *gwv += g * x;
                    }
                }
                if let Some(gin) = gin {
                    for o in 0..outputs {
                        let g = gout[o];
                        let row = &weight[o * inputs..(o + 1) * inputs];
                        for (gi, &wv) in gin.iter_mut().zip(row) {
                            *gi += g * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix product `c = a * b + beta * c` with `a` of `m x k`
/// (or `k x m` when `ta`) and `b` of `k x n` (or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let rsc = n as isize;
    // SAFETY: the strides above address only the first m*k, k*n and m*n
    // elements, which the assertion guarantees exist.
    unsafe {
        if let (Some(a), Some(b), Some(c)) = (cast::<T, f32>(a), cast::<T, f32>(b), cast_mut::<T, f32>(c)) {
            let beta = beta.as_f64() as f32;
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1);
        } else if let (Some(a), Some(b), Some(c)) = (cast::<T, f64>(a), cast::<T, f64>(b), cast_mut::<T, f64>(c)) {
            let beta = beta.as_f64();
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1);
        } else {
            unreachable!("Real is implemented for f32 and f64 only");
        }
    }
}

fn cast<T: 'static, U: 'static>(v: &[T]) -> Option<&[U]> {
    (std::any::TypeId::of::<T>() == std::any::TypeId::of::<U>())
        // SAFETY: T and U are the same type.
        .then(|| unsafe { std::slice::from_raw_parts(v.as_ptr() as *const U, v.len()) })
}

fn cast_mut<T: 'static, U: 'static>(v: &mut [T]) -> Option<&mut [U]> {
    (std::any::TypeId::of::<T>() == std::any::TypeId::of::<U>())
        // SAFETY: T and U are the same type.
        .then(|| unsafe { std::slice::from_raw_parts_mut(v.as_mut_ptr() as *mut U, v.len()) })
}

/// Row/column ranges over which tap offset `d` stays inside the plane.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi)
}

/// Unfolds `cin` planes into a `(cin * 9) x (h * w)` patch matrix.
fn im2col<T: Real>(input: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut col = vec![T::zero(); cin * 9 * hw];
    for ci in 0..cin {
        let inp = &input[ci * hw..(ci + 1) * hw];
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let (y0, y1) = tap_range(dy, h);
            let (x0, x1) = tap_range(dx, w);
            let sx0 = (x0 as isize + dx) as usize;
            let row = &mut col[(ci * 9 + tap) * hw..(ci * 9 + tap + 1) * hw];
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                row[y * w + x0..y * w + x1].copy_from_slice(&inp[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the planes.
fn col2im_add<T: Real>(col: &[T], cin: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let (y0, y1) = tap_range(dy, h);
            let (x0, x1) = tap_range(dx, w);
            let sx0 = (x0 as isize + dx) as usize;
            let row = &col[(ci * 9 + tap) * hw..(ci * 9 + tap + 1) * hw];
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let dst = &mut plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                for (a, &b) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                    *a += b;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_forward<T: Real>(
    weight: &[T],
    bias: &[T],
    input: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let hw = h * w;
    for (co, o) in out[..cout * hw].chunks_mut(hw).enumerate() {
        o.fill(bias[co]);
    }
    let col = im2col(input, cin, h, w);
    gemm(cout, cin * 9, hw, weight, false, &col, false, T::one(), out);
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Real>(
    weight: &[T],
    input: &[T],
    gout: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    gw: &mut [T],
    gb: &mut [T],
    gin: Option<&mut [T]>,
) {
    let hw = h * w;
    let k = cin * 9;
    for (co, g) in gout[..cout * hw].chunks(hw).enumerate() {
        gb[co] += g.iter().copied().sum::<T>();
    }
    let col = im2col(input, cin, h, w);
    gemm(cout, hw, k, gout, false, &col, true, T::one(), gw);
    if let Some(gin) = gin {
        let mut gcol = vec![T::zero(); k * hw];
        gemm(k, cout, hw, weight, true, gout, false, T::zero(), &mut gcol);
        col2im_add(&gcol, cin, h, w, gin);
    }
}
