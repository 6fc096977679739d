//! Peak-normalized 2D Gaussian maps.
//!
//! These serve two roles: soft regression targets for the similarity map
//! (small sigma) and increments of the tracker's location prior (large
//! sigma). Values are `exp(-||u - mu||^2 / (2 sigma^2))` at integer pixel
//! centers `u`, so the continuous peak is 1 regardless of sigma — there
//! is no density prefactor.

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct GaussianMap {
    values: Grid2<f64>,
    center: (f64, f64),
    sigma: f64,
}

/// Evaluate a peak-normalized Gaussian on a `rows x cols` pixel grid.
///
/// `center` is `(row, col)` and may be subpixel or slightly off-grid;
/// `sigma` is in pixels and must be positive.
pub fn gaussian_map(rows: usize, cols: usize, center: (f64, f64), sigma: f64) -> Result<GaussianMap> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::config("gaussian map needs a non-empty grid".to_string()));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut values = Grid2::new(rows, cols);
    for r in 0..rows {
        let dr = r as f64 - center.0;
        let dr2 = dr * dr;
        for c in 0..cols {
            let dc = c as f64 - center.1;
            values.set(r, c, (-(dr2 + dc * dc) * inv).exp());
        }
    }
    Ok(GaussianMap {
        values,
        center,
        sigma,
    })
}

impl GaussianMap {
    pub fn values(&self) -> &Grid2<f64> {
        &self.values
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// As a `(1, 1, rows, cols)` tensor in the requested scalar type.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[1, 1, self.rows(), self.cols()],
            self.values.data().iter().map(|&v| T::from_real(v)).collect(),
        )
        .expect("grid length matches shape")
    }
}
