//! The Siamese similarity head: shared-weight embedding, cross-correlation
//! into a similarity map, Gaussian targets and both loss variants.

pub mod gaussian;
pub mod loss;
pub mod xcorr;

pub use gaussian::{gaussian_map, GaussianMap};
pub use loss::{binary_target, l2_loss, logistic_loss, LogisticWeighting};
pub use xcorr::{cross_correlate_batch, xcorr_backward, xcorr_direct, xcorr_fft, XcorrPath};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::nn::network::Network;
use crate::nn::tensor::{Scalar, Tensor};

/// Affine transform from similarity-map indices to search-patch pixel
/// coordinates: `pixel = stride * index + offset` per axis.
///
/// `offset` is the center of the template-sized window that map index 0
/// compares against, so map positions are directly comparable to
/// landmark positions in the search patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapGeometry {
    pub stride: usize,
    pub offset: (f64, f64),
}

impl MapGeometry {
    /// Geometry for a given network and template patch extent.
    pub fn for_network<T: Scalar>(net: &Network<T>, template_extent: (usize, usize)) -> Result<MapGeometry> {
        let stride = net.total_stride();
        let rf = net.receptive_field();
        let offset_of = |extent: usize| -> Result<f64> {
            let emb = net.output_extent(extent)?;
            // Extent of input actually covered by the embedding; trailing
            // pixels lost to valid-padding remainders do not shift it.
            let effective = (emb - 1) * stride + rf;
            Ok((effective - 1) as f64 / 2.0)
        };
        Ok(MapGeometry {
            stride,
            offset: (offset_of(template_extent.0)?, offset_of(template_extent.1)?),
        })
    }

    /// Map index -> search-patch pixel.
    pub fn map_to_patch(&self, index: (f64, f64)) -> (f64, f64) {
        (
            self.stride as f64 * index.0 + self.offset.0,
            self.stride as f64 * index.1 + self.offset.1,
        )
    }

    /// Search-patch pixel -> fractional map index.
    pub fn patch_to_map(&self, pixel: (f64, f64)) -> (f64, f64) {
        (
            (pixel.0 - self.offset.0) / self.stride as f64,
            (pixel.1 - self.offset.1) / self.stride as f64,
        )
    }
}

/// A single similarity map with its coordinate mapping back to the
/// search patch.
#[derive(Debug, Clone)]
pub struct SimilarityMap {
    pub values: Grid2<f64>,
    pub geometry: MapGeometry,
}

impl SimilarityMap {
    /// Wrap the first sample of a `(n, 1, mh, mw)` correlation output.
    pub fn from_tensor<T: Scalar>(map: &Tensor<T>, geometry: MapGeometry) -> Result<SimilarityMap> {
        let (_, c, mh, mw) = map.dims4()?;
        if c != 1 {
            return Err(Error::config(format!(
                "similarity map tensor must have one channel, got {:?}",
                map.shape()
            )));
        }
        let values = Grid2::from_vec(
            mh,
            mw,
            map.sample(0).iter().map(|v| v.to_real()).collect(),
        )?;
        Ok(SimilarityMap { values, geometry })
    }
}

/// Embed a single-channel patch with the shared network in eval mode.
///
/// The same network instance serves both the template and the search
/// branch, so identical parameters produce identical embeddings by
/// construction.
pub fn embed<T: Scalar>(net: &Network<T>, patch: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, h, w) = patch.dims4()?;
    if c != net.input_channels() {
        return Err(Error::config(format!(
            "patch has {c} channels but the network expects {}",
            net.input_channels()
        )));
    }
    let rf = net.receptive_field();
    if h < rf || w < rf {
        return Err(Error::config(format!(
            "patch extent {h}x{w} is smaller than the receptive field {rf}"
        )));
    }
    net.forward_eval(patch)
}
