use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of [`Array`]: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn of(x: f64) -> Self;

    fn erf(self) -> Self;

    /// `c = alpha * op(a) * op(b) + beta * c` with row-major storage, where
    /// `op(a)` is `m x k` and `op(b)` is `k x n`. A transposed operand is
    /// stored in its untransposed (`k x m` / `n x k`) layout.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // strides of the logical (rows x cols) operand
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $erf:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c[..m * n].iter_mut().for_each(|x| *x *= beta);
                    return;
                }
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                // SAFETY: bounds checked above; strides describe dense
                // row-major buffers of exactly those sizes.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, libm::erff);
impl_scalar!(f64, matrixmultiply::dgemm, libm::erf);

/// Dense row-major matrix. Vectors are `1 x n`, scalars `1 x 1`.
#[derive(Clone, PartialEq)]
pub struct Array<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Debug> Debug for Array<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Array[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Copy + Default> Array<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Array {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Data(format!(
                "{} values cannot fill a {rows}x{cols} array",
                data.len()
            )));
        }
        Ok(Array { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Array { rows, cols, data }
    }

    pub fn scalar(value: T) -> Self {
        Array {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
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

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn transposed(&self) -> Self {
        Array::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Array<U> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

impl<T: Scalar> Array<T> {
    pub fn cast<U: Scalar>(&self) -> Array<U> {
        self.map(|x| U::of(x.to_f64().unwrap_or(f64::NAN)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Array<f32> {
    pub fn to_f64(&self) -> Array<f64> {
        self.map(f64::from)
    }
}
