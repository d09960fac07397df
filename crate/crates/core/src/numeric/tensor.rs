use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NumericError;

/// Scalar type the kernel is generic over. Training runs in `f32`; the
/// finite-difference oracle instantiates the same code with `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R = f32> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: &[usize], data: Vec<R>) -> Result<Self, NumericError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericError::ShapeMismatch {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, R::zero())
    }

    pub fn full(shape: &[usize], v: R) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: R) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = R::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix over the last axis.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.split_last() {
            Some((&c, rest)) => (rest.iter().product(), c),
            None => (1, 1),
        }
    }

    pub fn item(&self) -> R {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, NumericError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| S::of(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

/// `c += a · b` for `a: [m, k]`, `b: [k, n]`.
pub(crate) fn gemm<R: Real>(a: &[R], b: &[R], c: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == R::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c += aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
pub(crate) fn gemm_tn<R: Real>(a: &[R], b: &[R], c: &mut [R], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == R::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub(crate) fn gemm_nt<R: Real>(a: &[R], b: &[R], c: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(arow, brow);
        }
    }
}

#[inline]
pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Numerically stable softmax of one row in place.
pub fn softmax_in_place<R: Real>(row: &mut [R]) {
    let max = row.iter().fold(R::neg_infinity(), |m, &v| m.max(v));
    if max == R::neg_infinity() {
        row.iter_mut().for_each(|v| *v = R::zero());
        return;
    }
    let mut sum = R::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub fn softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<R: Real>(x: R) -> R {
    let u = R::of(GELU_C) * (x + R::of(GELU_A) * x * x * x);
    R::of(0.5) * x * (R::one() + u.tanh())
}

pub fn gelu_grad<R: Real>(x: R) -> R {
    let u = R::of(GELU_C) * (x + R::of(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = R::of(GELU_C) * (R::one() + R::of(3.0 * GELU_A) * x * x);
    R::of(0.5) * (R::one() + th) + R::of(0.5) * x * (R::one() - th * th) * du
}

pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_equal_logits() {
        assert_eq!(softmax(&[3.0f32; 4]), vec![0.25; 4]);
    }

    #[test]
    fn softmax_is_shift_stable() {
        let p = softmax(&[1000.0f64, 1001.0, 999.0]);
        let q = softmax(&[0.0f64, 1.0, -1.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn shape_checked() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    }
}
