//! Plain row-major 2D grids: similarity maps, Gaussian maps, the tracker's
//! location prior, image patches.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Grid2<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Grid2 {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Grid2 { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Grid2<U> {
        Grid2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid2<f64> {
    /// Bilinear sample at fractional position `(row, col)`, clamping to
    /// the border. Exact at integer positions and on constant grids.
    pub fn bilinear(&self, row: f64, col: f64) -> f64 {
        bilinear_fetch(self.rows, self.cols, row, col, |r, c| self.at(r, c))
    }

    /// Position and value of the maximum element (first in row-major
    /// order on exact ties).
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.at(r, c);
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        best
    }
}

/// Border-clamped bilinear interpolation over an abstract grid accessor.
///
/// Written in lerp form (`a + t * (b - a)`) so constant inputs come out
/// exactly constant.
pub fn bilinear_fetch(rows: usize, cols: usize, row: f64, col: f64, at: impl Fn(usize, usize) -> f64) -> f64 {
    debug_assert!(rows > 0 && cols > 0);
    let clamp = |v: f64, hi: usize| v.max(0.0).min((hi - 1) as f64);
    let row = clamp(row, rows);
    let col = clamp(col, cols);
    let r0 = row.floor() as usize;
    let c0 = col.floor() as usize;
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let fr = row - r0 as f64;
    let fc = col - c0 as f64;
    let top = {
        let a = at(r0, c0);
        a + fc * (at(r0, c1) - a)
    };
    let bottom = {
        let a = at(r1, c0);
        a + fc * (at(r1, c1) - a)
    };
    top + fr * (bottom - top)
}
