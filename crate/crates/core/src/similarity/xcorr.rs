//! Cross-correlation of template and search embeddings.
//!
//! The direct path is the reference semantics: a sliding inner product
//! over channels and template extent, no normalization. The FFT path is
//! numerically equivalent (must match the direct path to 1e-4 relative)
//! and much faster at tracking scale; `Auto` switches between them on
//! search-embedding area.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor};

/// Which cross-correlation implementation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XcorrPath {
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Search-embedding area at and above which `Auto` picks the FFT path.
pub const FFT_MIN_SEARCH_AREA: usize = 4096;

fn check_shapes<T: Scalar>(temb: &Tensor<T>, semb: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (tn, tc, th, tw) = temb.dims4()?;
    let (sn, sc, sh, sw) = semb.dims4()?;
    if tc != sc {
        return Err(Error::config(format!(
            "cross-correlation channel mismatch: template {:?} vs search {:?}",
            temb.shape(),
            semb.shape()
        )));
    }
    if tn != sn {
        return Err(Error::config(format!(
            "cross-correlation batch mismatch: template {tn} vs search {sn}"
        )));
    }
    if th > sh || tw > sw {
        return Err(Error::config(format!(
            "template embedding {th}x{tw} exceeds search embedding {sh}x{sw}"
        )));
    }
    Ok((tn, tc, th, tw, sh, sw, sh - th + 1, sw - tw + 1))
}

/// Cross-correlate per batch sample; output is `(n, 1, sh-th+1, sw-tw+1)`.
pub fn cross_correlate_batch<T: Scalar>(temb: &Tensor<T>, semb: &Tensor<T>, path: XcorrPath) -> Result<Tensor<T>> {
    let (_, _, _, _, sh, sw, _, _) = check_shapes(temb, semb)?;
    match path {
        XcorrPath::Direct => xcorr_direct(temb, semb),
        XcorrPath::Fft => xcorr_fft(temb, semb),
        XcorrPath::Auto => {
            if sh * sw >= FFT_MIN_SEARCH_AREA {
                xcorr_fft(temb, semb)
            } else {
                xcorr_direct(temb, semb)
            }
        }
    }
}

/// Reference sliding-window correlation. Accumulation order per output
/// position is channel, then template row, then template column.
pub fn xcorr_direct<T: Scalar>(temb: &Tensor<T>, semb: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, th, tw, sh, sw, mh, mw) = check_shapes(temb, semb)?;
    let mut out = Tensor::zeros(&[n, 1, mh, mw]);
    for i in 0..n {
        let t = temb.sample(i);
        let s = semb.sample(i);
        let o = out.sample_mut(i);
        for my in 0..mh {
            for mx in 0..mw {
                let mut acc = T::zero();
                for ch in 0..c {
                    let tp = &t[ch * th * tw..(ch + 1) * th * tw];
                    let sp = &s[ch * sh * sw..(ch + 1) * sh * sw];
                    for ky in 0..th {
                        let trow = &tp[ky * tw..(ky + 1) * tw];
                        let srow = &sp[(my + ky) * sw + mx..(my + ky) * sw + mx + tw];
                        for kx in 0..tw {
                            acc = acc + trow[kx] * srow[kx];
                        }
                    }
                }
                o[my * mw + mx] = acc;
            }
        }
    }
    Ok(out)
}

/// FFT-based correlation: per channel, multiply `conj(FFT(template))`
/// with `FFT(search)` and accumulate in the frequency domain; one inverse
/// transform recovers all offsets. Computed in f64 regardless of `T`.
pub fn xcorr_fft<T: Scalar>(temb: &Tensor<T>, semb: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, th, tw, sh, sw, mh, mw) = check_shapes(temb, semb)?;
    // No wraparound contamination as long as the transform covers the
    // search extent: offsets + template stay below fh x fw.
    let fh = next_fast_len(sh);
    let fw = next_fast_len(sw);

    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(fw);
    let col_fft = planner.plan_fft_forward(fh);
    let row_ifft = planner.plan_fft_inverse(fw);
    let col_ifft = planner.plan_fft_inverse(fh);

    let mut out = Tensor::zeros(&[n, 1, mh, mw]);
    let mut sbuf = vec![Complex::new(0.0f64, 0.0); fh * fw];
    let mut tbuf = vec![Complex::new(0.0f64, 0.0); fh * fw];
    let mut acc = vec![Complex::new(0.0f64, 0.0); fh * fw];
    let mut coltmp = vec![Complex::new(0.0f64, 0.0); fh];

    for i in 0..n {
        for v in acc.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        let t = temb.sample(i);
        let s = semb.sample(i);
        for ch in 0..c {
            load_plane(&mut sbuf, &s[ch * sh * sw..(ch + 1) * sh * sw], sh, sw, fh, fw);
            fft2(&mut sbuf, fh, fw, &*row_fft, &*col_fft, &mut coltmp);
            load_plane(&mut tbuf, &t[ch * th * tw..(ch + 1) * th * tw], th, tw, fh, fw);
            fft2(&mut tbuf, fh, fw, &*row_fft, &*col_fft, &mut coltmp);
            for (a, (tv, sv)) in acc.iter_mut().zip(tbuf.iter().zip(&sbuf)) {
                *a += tv.conj() * sv;
            }
        }
        fft2(&mut acc, fh, fw, &*row_ifft, &*col_ifft, &mut coltmp);
        let scale = 1.0 / (fh * fw) as f64;
        let o = out.sample_mut(i);
        for my in 0..mh {
            for mx in 0..mw {
                o[my * mw + mx] = T::from_real(acc[my * fw + mx].re * scale);
            }
        }
    }
    Ok(out)
}

fn load_plane<T: Scalar>(buf: &mut [Complex<f64>], plane: &[T], h: usize, w: usize, fh: usize, fw: usize) {
    debug_assert!(h <= fh && w <= fw);
    for v in buf.iter_mut() {
        *v = Complex::new(0.0, 0.0);
    }
    for y in 0..h {
        for x in 0..w {
            buf[y * fw + x] = Complex::new(plane[y * w + x].to_real(), 0.0);
        }
    }
}

fn fft2(
    buf: &mut [Complex<f64>],
    fh: usize,
    fw: usize,
    row_fft: &dyn rustfft::Fft<f64>,
    col_fft: &dyn rustfft::Fft<f64>,
    coltmp: &mut [Complex<f64>],
) {
    for row in buf.chunks_exact_mut(fw) {
        row_fft.process(row);
    }
    for x in 0..fw {
        for y in 0..fh {
            coltmp[y] = buf[y * fw + x];
        }
        col_fft.process(coltmp);
        for y in 0..fh {
            buf[y * fw + x] = coltmp[y];
        }
    }
}

/// Smallest length >= `n` whose prime factors are all in {2, 3, 5}.
fn next_fast_len(n: usize) -> usize {
    let mut len = n.max(1);
    loop {
        let mut m = len;
        for p in [2usize, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return len;
        }
        len += 1;
    }
}

/// Gradients of the correlation output with respect to both embeddings.
pub fn xcorr_backward<T: Scalar>(
    temb: &Tensor<T>,
    semb: &Tensor<T>,
    grad_map: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, th, tw, sh, sw, mh, mw) = check_shapes(temb, semb)?;
    let (gn, gc, gh, gw) = grad_map.dims4()?;
    if (gn, gc, gh, gw) != (n, 1, mh, mw) {
        return Err(Error::config(format!(
            "cross-correlation grad shape {:?} does not match map shape {:?}",
            grad_map.shape(),
            [n, 1, mh, mw]
        )));
    }
    let mut grad_t = Tensor::zeros(temb.shape());
    let mut grad_s = Tensor::zeros(semb.shape());
    for i in 0..n {
        let t = temb.sample(i);
        let s = semb.sample(i);
        let g = grad_map.sample(i);
        let gt = grad_t.sample_mut(i);
        for ch in 0..c {
            let sp = &s[ch * sh * sw..(ch + 1) * sh * sw];
            let gtp = &mut gt[ch * th * tw..(ch + 1) * th * tw];
            for my in 0..mh {
                for mx in 0..mw {
                    let gv = g[my * mw + mx];
                    if gv == T::zero() {
                        continue;
                    }
                    for ky in 0..th {
                        let srow = &sp[(my + ky) * sw + mx..(my + ky) * sw + mx + tw];
                        let grow = &mut gtp[ky * tw..(ky + 1) * tw];
                        for kx in 0..tw {
                            grow[kx] = grow[kx] + gv * srow[kx];
                        }
                    }
                }
            }
        }
        let gs = grad_s.sample_mut(i);
        for ch in 0..c {
            let tp = &t[ch * th * tw..(ch + 1) * th * tw];
            let gsp = &mut gs[ch * sh * sw..(ch + 1) * sh * sw];
            for my in 0..mh {
                for mx in 0..mw {
                    let gv = g[my * mw + mx];
                    if gv == T::zero() {
                        continue;
                    }
                    for ky in 0..th {
                        let trow = &tp[ky * tw..(ky + 1) * tw];
                        let gsrow = &mut gsp[(my + ky) * sw + mx..(my + ky) * sw + mx + tw];
                        for kx in 0..tw {
                            gsrow[kx] = gsrow[kx] + gv * trow[kx];
                        }
                    }
                }
            }
        }
    }
    Ok((grad_t, grad_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Independent brute-force oracle with the same accumulation order
    /// as the production direct path.
    fn oracle(temb: &Tensor<f64>, semb: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, th, tw) = temb.dims4().unwrap();
        let (_, _, sh, sw) = semb.dims4().unwrap();
        let (mh, mw) = (sh - th + 1, sw - tw + 1);
        let mut out = Tensor::zeros(&[n, 1, mh, mw]);
        for i in 0..n {
            for my in 0..mh {
                for mx in 0..mw {
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        for ky in 0..th {
                            for kx in 0..tw {
                                acc += temb.at4(i, ch, ky, kx) * semb.at4(i, ch, my + ky, mx + kx);
                            }
                        }
                    }
                    out.set4(i, 0, my, mx, acc);
                }
            }
        }
        out
    }

    #[test]
    fn self_correlation_is_squared_frobenius_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = rand_tensor(&mut rng, &[1, 2, 4, 4]);
        let m = xcorr_direct(&e, &e).unwrap();
        assert_eq!(m.shape(), &[1, 1, 1, 1]);
        let frob2: f64 = e.data().iter().map(|v| v * v).sum();
        assert!((m.data()[0] - frob2).abs() < 1e-12);
    }

    #[test]
    fn one_hot_template_over_zero_search_is_zero() {
        let mut t = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        t.set4(0, 0, 1, 1, 1.0);
        let s = Tensor::<f64>::zeros(&[1, 1, 7, 7]);
        let m = xcorr_direct(&t, &s).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_matches_oracle_exactly_on_small_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = rand_tensor(&mut rng, &[1, 2, 3, 3]);
        let s = rand_tensor(&mut rng, &[1, 2, 5, 5]);
        let m = xcorr_direct(&t, &s).unwrap();
        let o = oracle(&t, &s);
        assert_eq!(m.data(), o.data());
    }

    #[test]
    fn direct_matches_oracle_exactly_on_all_shapes_up_to_8() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for c in [1usize, 2] {
            for sh in 1..=8usize {
                for sw in 1..=8usize {
                    for th in 1..=sh {
                        for tw in 1..=sw {
                            let t = rand_tensor(&mut rng, &[1, c, th, tw]);
                            let s = rand_tensor(&mut rng, &[1, c, sh, sw]);
                            let m = xcorr_direct(&t, &s).unwrap();
                            let o = oracle(&t, &s);
                            assert_eq!(m.data(), o.data(), "c={c} t={th}x{tw} s={sh}x{sw}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fft_matches_direct_within_relative_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = rand_tensor(&mut rng, &[2, 3, 7, 5]);
        let s = rand_tensor(&mut rng, &[2, 3, 19, 24]);
        let d = xcorr_direct(&t, &s).unwrap();
        let f = xcorr_fft(&t, &s).unwrap();
        let max_abs = d.data().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for (a, b) in d.data().iter().zip(f.data()) {
            assert!((a - b).abs() <= 1e-9 * max_abs.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn channel_mismatch_is_a_config_error() {
        let t = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let s = Tensor::<f32>::zeros(&[1, 3, 5, 5]);
        assert!(xcorr_direct(&t, &s).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        use crate::nn::gradcheck::max_fd_error;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = rand_tensor(&mut rng, &[1, 2, 3, 3]);
        let s = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let m = xcorr_direct(&t, &s).unwrap();
        let probe: Vec<f64> = (0..m.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gmap = Tensor::from_vec(m.shape(), probe.clone()).unwrap();
        let (gt, gs) = xcorr_backward(&t, &s, &gmap).unwrap();
        let loss = |tt: &Tensor<f64>, ss: &Tensor<f64>| -> f64 {
            xcorr_direct(tt, ss)
                .unwrap()
                .data()
                .iter()
                .zip(&probe)
                .map(|(v, p)| v * p)
                .sum()
        };
        let et = max_fd_error(t.data(), gt.data(), |x| {
            loss(&Tensor::from_vec(t.shape(), x.to_vec()).unwrap(), &s)
        });
        let es = max_fd_error(s.data(), gs.data(), |x| {
            loss(&t, &Tensor::from_vec(s.shape(), x.to_vec()).unwrap())
        });
        assert!(et < 1e-6, "template grad rel err {et}");
        assert!(es < 1e-6, "search grad rel err {es}");
    }

    #[test]
    fn next_fast_len_prefers_small_factors() {
        assert_eq!(next_fast_len(93), 96);
        assert_eq!(next_fast_len(96), 96);
        assert_eq!(next_fast_len(97), 100);
        assert_eq!(next_fast_len(1), 1);
    }
}
