use std::fmt;

use super::Real;
use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Rank-4 row-major array with an optional same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    /// A per-channel vector, shape `(1, len, 1, 1)`.
    pub fn vector(values: Vec<T>) -> Self {
        Tensor {
            shape: Shape::new(1, values.len(), 1, 1),
            data: values,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::vector(vec![value])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<T>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(Error::shape(
                    "tensor",
                    format!("gradient of length {} for shape {}", g.len(), self.shape),
                ));
            }
        }
        self.grad = grad;
        Ok(())
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, &d)| *a += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    /// The `(c, h, w)` plane of batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} -> {shape}", self.shape),
            ));
        }
        self.shape = shape;
        if self.grad.is_some() {
            self.grad = None;
        }
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks batch items with identical `(c, h, w)`.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors to stack"))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::shape("stack", format!("{s} vs {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(Shape::new(n, first.c, first.h, first.w), data)
    }

    /// Copies batch item `index` out as a `(1, c, h, w)` tensor.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let s = self.shape;
        if index >= s.n {
            return Err(Error::invalid(
                "batch_item",
                format!("index {index} out of range for batch of {}", s.n),
            ));
        }
        let len = s.c * s.plane();
        Tensor::new(
            Shape::new(1, s.c, s.h, s.w),
            self.data[index * len..(index + 1) * len].to_vec(),
        )
    }
}
