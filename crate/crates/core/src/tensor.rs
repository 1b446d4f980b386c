//! Dense rows x cols x channels arrays stored channel-planar, row-major.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Dimensions of a tensor: `rows` x `cols` x `channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Shape {
            rows,
            cols,
            channels,
        }
    }

    /// A flat vector of `len` elements, stored as `1 x len x 1`.
    pub const fn vector(len: usize) -> Self {
        Shape::new(1, len, 1)
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.channels)
    }
}

/// Element storage is `data[(ch * rows + i) * cols + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::default(); shape.len()],
        }
    }

    /// Returns `None` when `data.len()` does not match the shape.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Option<Self> {
        (data.len() == shape.len()).then_some(Tensor { shape, data })
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: Shape::vector(data.len()),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn index(&self, ch: usize, row: usize, col: usize) -> usize {
        (ch * self.shape.rows + row) * self.shape.cols + col
    }

    /// 0-based element access. Panics when out of range.
    pub fn get(&self, ch: usize, row: usize, col: usize) -> T {
        self.data[self.index(ch, row, col)]
    }

    pub fn set(&mut self, ch: usize, row: usize, col: usize, value: T) {
        let idx = self.index(ch, row, col);
        self.data[idx] = value;
    }

    /// 1-based access with implicit zero padding: any `(row, col)` outside
    /// `1..=rows` x `1..=cols` reads as zero.
    pub fn padded(&self, ch: usize, row: i64, col: i64) -> T {
        if row < 1 || col < 1 || row > self.shape.rows as i64 || col > self.shape.cols as i64 {
            T::default()
        } else {
            self.get(ch, (row - 1) as usize, (col - 1) as usize)
        }
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let p = self.shape.plane();
        &self.data[ch * p..(ch + 1) * p]
    }

    /// Same data viewed as a flat vector (channel-planar, row-major order).
    pub fn flatten(self) -> Self {
        Tensor {
            shape: Shape::vector(self.data.len()),
            data: self.data,
        }
    }

    pub fn reshape(self, shape: Shape) -> Option<Self> {
        (shape.len() == self.data.len()).then_some(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}
