//! Dense kernels shared by the forward and backward passes.
//!
//! Matrices are row-major. The same code runs in `f32` for training and in
//! `f64` for finite-difference checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a · b + beta * c` over strided views.
    ///
    /// # Safety contract
    /// Callers go through [`gemm`], which bounds-checks every view first.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided read-only matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

pub struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

impl<'a, T> View<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(extent(rows, cols, rs, cs) <= data.len(), "view out of bounds");
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

impl<'a, T> ViewMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(extent(rows, cols, rs, cs) <= data.len(), "view out of bounds");
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }
}

/// `c = alpha * a · b + beta * c`. With `beta == 0` the old `c` is never read.
pub fn gemm<T: Real>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(a.rows, c.rows, "row count differs");
    assert_eq!(b.cols, c.cols, "column count differs");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for i in 0..c.rows {
            for j in 0..c.cols {
                let slot = &mut c.data[i * c.rs + j * c.cs];
                *slot = if beta == T::zero() { T::zero() } else { *slot * beta };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked at construction and the
    // output does not alias the inputs (it is a unique borrow).
    unsafe {
        T::raw_gemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn view(&self) -> View<'_, T> {
        View::new(&self.data, self.rows, self.cols, self.cols, 1)
    }

    pub fn view_mut(&mut self) -> ViewMut<'_, T> {
        ViewMut::new(&mut self.data, self.rows, self.cols, self.cols, 1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Weight matrix stored as `[fan_in, fan_out]`.
pub fn weight_view<T>(w: &[T], fan_in: usize, fan_out: usize) -> View<'_, T> {
    View::new(w, fan_in, fan_out, fan_out, 1)
}

/// `x · w + b`
pub fn linear<T: Real>(x: &Mat<T>, w: &[T], b: &[T]) -> Mat<T> {
    let fan_out = b.len();
    let mut y = Mat::zeros(x.rows, fan_out);
    for i in 0..x.rows {
        y.row_mut(i).copy_from_slice(b);
    }
    gemm(T::one(), x.view(), weight_view(w, x.cols, fan_out), T::one(), y.view_mut());
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn linear_backward<T: Real>(
    x: &Mat<T>,
    dy: &Mat<T>,
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
) -> Mat<T> {
    let (fan_in, fan_out) = (x.cols, dy.cols);
    gemm(
        T::one(),
        x.view().t(),
        dy.view(),
        T::one(),
        ViewMut::new(dw, fan_in, fan_out, fan_out, 1),
    );
    for i in 0..dy.rows {
        for (g, &d) in db.iter_mut().zip(dy.row(i)) {
            *g += d;
        }
    }
    let mut dx = Mat::zeros(x.rows, fan_in);
    gemm(T::one(), dy.view(), weight_view(w, fan_in, fan_out).t(), T::zero(), dx.view_mut());
    dx
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct NormCache<T> {
    pub xhat: Mat<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Real>(x: &Mat<T>, gain: &[T], bias: &[T]) -> (Mat<T>, NormCache<T>) {
    let d = x.cols;
    let inv_d = T::from_f64(1.0 / d as f64);
    let eps = T::from_f64(LAYER_NORM_EPS);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut y = Mat::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = (var + eps).sqrt().recip();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
        let yr = &mut y.data[i * d..(i + 1) * d];
        for j in 0..d {
            yr[j] = xhat.data[i * d + j] * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward<T: Real>(
    dy: &Mat<T>,
    cache: &NormCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Mat<T> {
    let d = dy.cols;
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut dx = Mat::zeros(dy.rows, d);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..dy.rows {
        let g = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
            dxhat[j] = g[j] * gain[j];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        let r = cache.rstd[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

/// In-place softmax of one row; `-inf` entries get probability zero.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    row.iter_mut().for_each(|v| *v *= inv);
}

/// `log softmax` of one row into a new vector.
pub fn log_softmax<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = row.iter().map(|&v| (v - max).exp()).sum::<T>();
    let lse = max + sum.ln();
    row.iter().map(|&v| v - lse).collect()
}
