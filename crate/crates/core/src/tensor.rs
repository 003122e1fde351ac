//! Dense row-major tensors. Image batches use the `(batch, channels, height, width)` layout.

use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn empty() -> Self {
        Tensor {
            shape: vec![0],
            data: Vec::new(),
        }
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

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected rank-4 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected rank-2 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
    }

    pub fn add_scaled(&mut self, other: &Tensor<T>, s: T) {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += s * b);
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One row of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    /// The `i`-th item along the leading axis, as a flat slice.
    pub fn item(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0].max(1);
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0].max(1);
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Element at `(n, c, y, x)` of a rank-4 tensor.
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let (_, ch, h, w) = self.dims4();
        self.data[((n * ch + c) * h + y) * w + x]
    }

    /// Concatenate two rank-4 tensors along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        let (na, ca, ha, wa) = a.dims4();
        let (nb, cb, hb, wb) = b.dims4();
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} and {:?} along channels",
                a.shape, b.shape
            )));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..na {
            data.extend_from_slice(&a.data[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&b.data[n * cb * plane..(n + 1) * cb * plane]);
        }
        Ok(Tensor {
            shape: vec![na, ca + cb, ha, wa],
            data,
        })
    }

    /// Split a rank-4 tensor into its first `c0` channels and the rest.
    pub fn split_channels(&self, c0: usize) -> (Self, Self) {
        let (n, c, h, w) = self.dims4();
        assert!(c0 <= c);
        let plane = h * w;
        let mut a = Vec::with_capacity(n * c0 * plane);
        let mut b = Vec::with_capacity(n * (c - c0) * plane);
        for i in 0..n {
            let base = i * c * plane;
            a.extend_from_slice(&self.data[base..base + c0 * plane]);
            b.extend_from_slice(&self.data[base + c0 * plane..base + c * plane]);
        }
        (
            Tensor {
                shape: vec![n, c0, h, w],
                data: a,
            },
            Tensor {
                shape: vec![n, c - c0, h, w],
                data: b,
            },
        )
    }

    /// Stack equally shaped items along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Join along the leading axis; trailing dimensions must agree.
    pub fn concat_rows(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        if a.shape.is_empty() || a.shape[1..] != b.shape[1..] {
            return Err(Error::Shape(format!("cannot join {:?} and {:?}", a.shape, b.shape)));
        }
        let mut shape = a.shape.clone();
        shape[0] += b.shape[0];
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Ok(Tensor { shape, data })
    }

    /// Split the leading axis into `[0, n)` and `[n, len)`.
    pub fn split_rows(&self, n: usize) -> (Self, Self) {
        let stride = self.data.len() / self.shape[0].max(1);
        let mut head = self.shape.clone();
        let mut tail = self.shape.clone();
        head[0] = n;
        tail[0] = self.shape[0] - n;
        (
            Tensor {
                shape: head,
                data: self.data[..n * stride].to_vec(),
            },
            Tensor {
                shape: tail,
                data: self.data[n * stride..].to_vec(),
            },
        )
    }

    /// Select items along the leading axis.
    pub fn select(&self, idx: &[usize]) -> Self {
        let stride = self.data.len() / self.shape[0].max(1);
        let mut data = Vec::with_capacity(stride * idx.len());
        for &i in idx {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}
