//! The full finite-difference verification suite: every layer, the
//! cross-correlation head, both losses, and the end-to-end training
//! gradient through the shared embedding network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::gradcheck::{check_batchnorm, check_conv2d, check_relu, max_fd_error, CheckReport};
use crate::nn::network::{toy_profile, Network};
use crate::nn::tensor::Tensor;
use crate::similarity::gaussian::gaussian_map;
use crate::similarity::loss::l2_loss;
use crate::similarity::xcorr::{xcorr_backward, xcorr_direct};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Gradient check of the cross-correlation head (both embeddings).
pub fn check_xcorr(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x3000));
    let temb = rand_tensor(&mut rng, &[1, 3, 4, 4]);
    let semb = rand_tensor(&mut rng, &[1, 3, 9, 8]);
    let map = xcorr_direct(&temb, &semb)?;
    let probe: Vec<f64> = (0..map.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad_map = Tensor::from_vec(map.shape(), probe.clone())?;
    let (gt, gs) = xcorr_backward(&temb, &semb, &grad_map)?;
    let loss = |t: &Tensor<f64>, s: &Tensor<f64>| -> f64 {
        xcorr_direct(t, s)
            .unwrap()
            .data()
            .iter()
            .zip(&probe)
            .map(|(v, p)| v * p)
            .sum()
    };
    let e_t = max_fd_error(temb.data(), gt.data(), |x| {
        loss(&Tensor::from_vec(temb.shape(), x.to_vec()).unwrap(), &semb)
    });
    let e_s = max_fd_error(semb.data(), gs.data(), |x| {
        loss(&temb, &Tensor::from_vec(semb.shape(), x.to_vec()).unwrap())
    });
    Ok(vec![
        CheckReport { name: format!("xcorr/template seed={seed}"), max_rel_error: e_t },
        CheckReport { name: format!("xcorr/search seed={seed}"), max_rel_error: e_s },
    ])
}

/// Gradient check of the L2 map loss.
pub fn check_l2(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x4000));
    let s = rand_tensor(&mut rng, &[1, 1, 7, 7]);
    let target = gaussian_map(7, 7, (3.2, 3.7), 1.5)?.to_tensor::<f64>();
    let (_, grad) = l2_loss(&s, &target)?;
    let err = max_fd_error(s.data(), grad.data(), |x| {
        let t = Tensor::from_vec(s.shape(), x.to_vec()).unwrap();
        l2_loss(&t, &target).unwrap().0
    });
    Ok(vec![CheckReport { name: format!("l2_loss/map seed={seed}"), max_rel_error: err }])
}

fn flat_params(net: &Network<f64>) -> Vec<f64> {
    net.param_slices().iter().flat_map(|s| s.iter().copied()).collect()
}

fn install_params(net: &mut Network<f64>, flat: &[f64]) {
    let mut offset = 0;
    for s in net.param_slices_mut() {
        s.copy_from_slice(&flat[offset..offset + s.len()]);
        offset += s.len();
    }
    debug_assert_eq!(offset, flat.len());
}

/// End-to-end Siamese training loss on a toy profile: embed template
/// and search in training mode, cross-correlate, L2 against a Gaussian
/// target. Everything in f64.
fn siamese_loss(
    reference: &Network<f64>,
    flat: &[f64],
    template: &Tensor<f64>,
    search: &Tensor<f64>,
    target: &Tensor<f64>,
) -> f64 {
    let mut net = reference.clone();
    install_params(&mut net, flat);
    let (temb, _) = net.forward_train(template).expect("toy forward");
    let (semb, _) = net.forward_train(search).expect("toy forward");
    let map = xcorr_direct(&temb, &semb).expect("embedding shapes agree");
    l2_loss(&map, target).expect("target shape agrees").0
}

/// Gradient check of the whole training path: d(loss)/d(every network
/// parameter) through both weight-shared branches, the correlation head
/// and the L2 loss.
pub fn check_end_to_end(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5000));
    let mut net = Network::<f64>::new(toy_profile())?;
    net.init_kaiming(seed.wrapping_add(17));

    // Redraw inputs until no ReLU input sits close to its kink: central
    // differences straddling a kink measure the wrong one-sided slope
    // for every upstream parameter at once.
    let (template, search) = loop {
        let template = rand_tensor(&mut rng, &[1, 1, 9, 9]);
        let search = rand_tensor(&mut rng, &[1, 1, 15, 15]);
        let mut probe_net = net.clone();
        let (_, tape_t) = probe_net.forward_train(&template)?;
        let (_, tape_s) = probe_net.forward_train(&search)?;
        let margin = tape_t.min_abs_relu_input().min(tape_s.min_abs_relu_input());
        if margin > 5e-4 {
            break (template, search);
        }
    };

    let temb_extent = net.output_extent(9)?;
    let semb_extent = net.output_extent(15)?;
    let map_extent = semb_extent - temb_extent + 1;
    let target = gaussian_map(
        map_extent,
        map_extent,
        (map_extent as f64 / 2.0, map_extent as f64 / 2.0 - 0.5),
        1.2,
    )?
    .to_tensor::<f64>();

    // Analytic gradients through both branches of the shared network.
    let mut work = net.clone();
    let (temb, tape_t) = work.forward_train(&template)?;
    let (semb, tape_s) = work.forward_train(&search)?;
    let map = xcorr_direct(&temb, &semb)?;
    let (_, grad_map) = l2_loss(&map, &target)?;
    let (grad_temb, grad_semb) = xcorr_backward(&temb, &semb, &grad_map)?;
    let (_, grads_s) = work.backward(&tape_s, &grad_semb)?;
    let (_, grads_t) = work.backward(&tape_t, &grad_temb)?;
    let mut grads = grads_s;
    grads.add_assign(&grads_t);
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();

    let flat = flat_params(&net);
    let err = max_fd_error(&flat, &analytic, |x| {
        siamese_loss(&net, x, &template, &search, &target)
    });
    Ok(vec![CheckReport {
        name: format!("end_to_end/params seed={seed}"),
        max_rel_error: err,
    }])
}

/// Run everything over the given seeds.
pub fn full_suite(seeds: &[u64]) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for &seed in seeds {
        reports.extend(check_conv2d(seed)?);
        reports.extend(check_batchnorm(seed)?);
        reports.extend(check_relu(seed)?);
        reports.extend(check_xcorr(seed)?);
        reports.extend(check_l2(seed)?);
        reports.extend(check_end_to_end(seed)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        for seed in [1, 2] {
            for r in check_end_to_end(seed).unwrap() {
                assert!(r.passed(), "{}: {:.3e}", r.name, r.max_rel_error);
            }
        }
    }

    #[test]
    fn full_suite_passes_on_one_seed() {
        for r in full_suite(&[3]).unwrap() {
            assert!(r.passed(), "{}: {:.3e}", r.name, r.max_rel_error);
        }
    }
}
