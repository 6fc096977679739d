//! Loss functions over similarity maps.
//!
//! The primary loss regresses the map onto a peak-normalized Gaussian
//! target with L2; the pixel-wise logistic loss on a binary target is
//! kept as an ablation baseline (it does not converge on this problem,
//! which is the point of the ablation).

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::nn::tensor::{Scalar, Tensor};

/// `L = 1/2 sum_u (s(u) - g(u))^2` with gradient `dL/ds = s - g`.
///
/// Sums over every element of `s` (including the batch dimension when
/// given batched maps); callers that want a batch mean scale afterwards.
pub fn l2_loss<T: Scalar>(s: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if s.shape() != target.shape() {
        return Err(Error::config(format!(
            "l2 loss shape mismatch: map {:?} vs target {:?}",
            s.shape(),
            target.shape()
        )));
    }
    let mut grad = s.clone();
    let mut loss = T::zero();
    let half = T::from_real(0.5);
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss = loss + half * d * d;
        *g = d;
    }
    Ok((loss, grad))
}

/// Pixel weighting for the logistic baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogisticWeighting {
    /// Plain mean over all pixels.
    #[default]
    None,
    /// Inside and outside classes contribute 1/2 each regardless of the
    /// radius.
    ClassBalanced,
}

/// Binary ground truth for the logistic baseline: +1 within `radius` of
/// `center` (in map pixels, Euclidean), -1 elsewhere.
pub fn binary_target(rows: usize, cols: usize, center: (f64, f64), radius: f64) -> Result<Grid2<i8>> {
    if !(radius > 0.0) {
        return Err(Error::config(format!("binary target radius must be > 0, got {radius}")));
    }
    if radius >= rows.max(cols) as f64 {
        return Err(Error::config(format!(
            "binary target radius {radius} covers the whole {rows}x{cols} map"
        )));
    }
    let mut grid = Grid2::new(rows, cols);
    let mut inside = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
            let v: i8 = if d2 <= radius * radius { 1 } else { -1 };
            if v == 1 {
                inside += 1;
            }
            grid.set(r, c, v);
        }
    }
    if inside == 0 || inside == rows * cols {
        return Err(Error::config(format!(
            "binary target radius {radius} leaves an empty class ({inside} of {} inside)",
            rows * cols
        )));
    }
    Ok(grid)
}

/// Numerically stable `ln(1 + exp(-z))`.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Mean (optionally class-balanced) pixel-wise logistic loss of a single
/// map against a +1/-1 target, with gradient.
pub fn logistic_loss<T: Scalar>(
    s: &Tensor<T>,
    target: &Grid2<i8>,
    weighting: LogisticWeighting,
) -> Result<(T, Tensor<T>)> {
    let (n, c, h, w) = s.dims4()?;
    if n != 1 || c != 1 || h != target.rows() || w != target.cols() {
        return Err(Error::config(format!(
            "logistic loss shape mismatch: map {:?} vs target {}x{}",
            s.shape(),
            target.rows(),
            target.cols()
        )));
    }
    let total = (h * w) as f64;
    let inside = target.data().iter().filter(|&&v| v == 1).count() as f64;
    let outside = total - inside;
    let weight_of = |t: i8| -> f64 {
        match weighting {
            LogisticWeighting::None => 1.0 / total,
            LogisticWeighting::ClassBalanced => {
                if t == 1 {
                    0.5 / inside
                } else {
                    0.5 / outside
                }
            }
        }
    };
    let mut grad = Tensor::zeros(s.shape());
    let mut loss = 0.0f64;
    for (i, (&sv, &tv)) in s.data().iter().zip(target.data()).enumerate() {
        let t = tv as f64;
        let z = t * sv.to_real();
        let wgt = weight_of(tv);
        loss += wgt * softplus_neg(z);
        // d/ds ln(1 + exp(-t s)) = -t * sigmoid(-t s)
        let sig = 1.0 / (1.0 + z.exp());
        grad.data_mut()[i] = T::from_real(-t * sig * wgt);
    }
    Ok((T::from_real(loss), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::max_fd_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_map_and_target_give_zero_loss_and_gradient() {
        let s = Tensor::from_vec(&[1, 1, 2, 3], vec![0.1f64, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let (loss, grad) = l2_loss(&s, &s.clone()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_offset_gives_n_c2_over_2() {
        let n = 12usize;
        let c = 0.75f64;
        let s = Tensor::from_vec(&[1, 1, 3, 4], vec![c; n]).unwrap();
        let target = Tensor::zeros(&[1, 1, 3, 4]);
        let (loss, grad) = l2_loss(&s, &target).unwrap();
        assert!((loss - n as f64 * c * c / 2.0).abs() < 1e-12);
        assert!(grad.data().iter().all(|&v| v == c));
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s_data: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g_data: Vec<f64> = (0..49).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = Tensor::from_vec(&[1, 1, 7, 7], s_data.clone()).unwrap();
        let target = Tensor::from_vec(&[1, 1, 7, 7], g_data).unwrap();
        let (_, grad) = l2_loss(&s, &target).unwrap();
        let err = max_fd_error(&s_data, grad.data(), |x| {
            let t = Tensor::from_vec(&[1, 1, 7, 7], x.to_vec()).unwrap();
            l2_loss(&t, &target).unwrap().0
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn l2_shape_mismatch_is_config_error() {
        let a = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1, 1, 4, 3]);
        assert!(l2_loss(&a, &b).is_err());
    }

    #[test]
    fn perfect_margin_drives_logistic_loss_to_zero() {
        let target = binary_target(9, 9, (4.0, 4.0), 2.0).unwrap();
        let data: Vec<f64> = target.data().iter().map(|&t| 50.0 * t as f64).collect();
        let s = Tensor::from_vec(&[1, 1, 9, 9], data).unwrap();
        let (loss, _) = logistic_loss(&s, &target, LogisticWeighting::None).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn zero_map_costs_ln2_per_pixel() {
        let target = binary_target(7, 7, (3.0, 3.0), 1.5).unwrap();
        let s = Tensor::<f64>::zeros(&[1, 1, 7, 7]);
        for weighting in [LogisticWeighting::None, LogisticWeighting::ClassBalanced] {
            let (loss, _) = logistic_loss(&s, &target, weighting).unwrap();
            assert!((loss - 2.0f64.ln()).abs() < 1e-12, "{weighting:?}: {loss}");
        }
    }

    #[test]
    fn class_balanced_weights_match_direct_reweighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for radius in [1.0, 2.5, 4.0] {
            let target = binary_target(11, 11, (5.0, 5.0), radius).unwrap();
            let data: Vec<f64> = (0..121).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = Tensor::from_vec(&[1, 1, 11, 11], data.clone()).unwrap();
            let (loss, _) = logistic_loss(&s, &target, LogisticWeighting::ClassBalanced).unwrap();

            // Direct reweighted sum: each class contributes exactly 1/2
            // of its per-class mean.
            let mut per_class = [(0.0f64, 0usize); 2];
            for (&sv, &tv) in data.iter().zip(target.data()) {
                let idx = if tv == 1 { 0 } else { 1 };
                per_class[idx].0 += softplus_neg(tv as f64 * sv);
                per_class[idx].1 += 1;
            }
            let oracle = 0.5 * per_class[0].0 / per_class[0].1 as f64
                + 0.5 * per_class[1].0 / per_class[1].1 as f64;
            assert!((loss - oracle).abs() < 1e-12, "radius {radius}: {loss} vs {oracle}");
        }
    }

    #[test]
    fn oversized_radius_is_rejected() {
        assert!(binary_target(9, 9, (4.0, 4.0), 9.0).is_err());
        assert!(binary_target(9, 9, (4.0, 4.0), 8.0).is_err()); // no outside pixels left
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let target = binary_target(7, 7, (3.0, 3.0), 2.0).unwrap();
        let data: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let s = Tensor::from_vec(&[1, 1, 7, 7], data.clone()).unwrap();
        for weighting in [LogisticWeighting::None, LogisticWeighting::ClassBalanced] {
            let (_, grad) = logistic_loss(&s, &target, weighting).unwrap();
            let err = max_fd_error(&data, grad.data(), |x| {
                let t = Tensor::from_vec(&[1, 1, 7, 7], x.to_vec()).unwrap();
                logistic_loss(&t, &target, weighting).unwrap().0
            });
            assert!(err < 1e-6, "{weighting:?} rel err {err}");
        }
    }
}
