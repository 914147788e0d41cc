//! Centered discrete Fourier transforms.
//!
//! With t_k = (k − N/2)Δt and dual points s_j = (j − N/2)Δs, Δs = 2π/(NΔt),
//! the forward transform is V_j = Σ_k v_k e^{−i s_j t_k}. Both grids are
//! symmetric about 0, which keeps every phase convention in the calculus
//! explicit: no fftshift bookkeeping anywhere else in the crate.
//!
//! Identity used throughout: e^{−i s_j t_k} = (−1)^{N/2} (−1)^j (−1)^k e^{−2πijk/N},
//! so a centered transform is a plain FFT conjugated by alternating signs.

use crate::grid::AxisSpec;
use ndarray::{ArrayD, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place centered DFT of one even-length vector.
/// Forward computes Σ_k v_k e^{−i s_j t_k}; backward flips the sign of the
/// exponent. Neither direction normalizes: backward∘forward = N·id.
pub fn dft_centered(values: &mut [Complex64], forward: bool) {
    let n = values.len();
    assert!(n % 2 == 0, "centered transforms need even length");
    for (k, v) in values.iter_mut().enumerate() {
        if k % 2 == 1 {
            *v = -*v;
        }
    }
    let mut planner = FftPlanner::new();
    let fft = if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    };
    fft.process(values);
    let half_sign = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
    for (j, v) in values.iter_mut().enumerate() {
        let sign = if j % 2 == 1 { -half_sign } else { half_sign };
        *v *= sign;
    }
}

/// Centered DFT along one axis of an n-d array, in place.
pub fn dft_centered_axis(arr: &mut ArrayD<Complex64>, axis: usize, forward: bool) {
    let n = arr.shape()[axis];
    assert!(n % 2 == 0, "centered transforms need even length");
    let mut planner = FftPlanner::new();
    let fft = if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    };
    let half_sign = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let mut scratch = vec![Complex64::default(); n];
    for mut lane in arr.lanes_mut(Axis(axis)) {
        for (k, s) in scratch.iter_mut().enumerate() {
            *s = if k % 2 == 1 { -lane[k] } else { lane[k] };
        }
        fft.process(&mut scratch);
        for (j, s) in scratch.iter().enumerate() {
            let sign = if j % 2 == 1 { -half_sign } else { half_sign };
            lane[j] = *s * sign;
        }
    }
}

/// Translate samples along one axis: f(t) ↦ f(t + shift), via the spectral
/// phase e^{iτ·shift} on the trigonometric interpolant. Exact for band-limited
/// periodic data; wrap-around at the box edge is the caller's concern.
pub fn trig_shift_axis(arr: &mut ArrayD<Complex64>, axis: usize, spec: &AxisSpec, shift: f64) {
    if shift == 0.0 {
        return;
    }
    dft_centered_axis(arr, axis, true);
    let dual = spec.dual();
    let n = spec.n as f64;
    let mut phases = Vec::with_capacity(spec.n);
    for k in 0..spec.n {
        let tau = dual.coord(k);
        phases.push(Complex64::from_polar(1.0 / n, tau * shift));
    }
    for mut lane in arr.lanes_mut(Axis(axis)) {
        for (k, v) in lane.iter_mut().enumerate() {
            *v *= phases[k];
        }
    }
    dft_centered_axis(arr, axis, false);
}

/// Evaluate the axis interpolant on a new axis (possibly different N and
/// extent). Returns a fresh array with the axis length changed to `dst.n`.
pub fn trig_resample_axis(
    arr: &ArrayD<Complex64>,
    axis: usize,
    src: &AxisSpec,
    dst: &AxisSpec,
) -> ArrayD<Complex64> {
    let mut spec_side = arr.clone();
    dft_centered_axis(&mut spec_side, axis, true);
    let dual = src.dual();
    let inv_n = 1.0 / src.n as f64;
    // E[a][k] = e^{i τ_k t'_a} / N
    let eval: Vec<Vec<Complex64>> = (0..dst.n)
        .map(|a| {
            let t = dst.coord(a);
            (0..src.n)
                .map(|k| Complex64::from_polar(inv_n, dual.coord(k) * t))
                .collect()
        })
        .collect();
    let mut out_shape = arr.shape().to_vec();
    out_shape[axis] = dst.n;
    let mut out = ArrayD::<Complex64>::zeros(ndarray::IxDyn(&out_shape));
    let src_lanes: Vec<_> = spec_side.lanes(Axis(axis)).into_iter().collect();
    for (lane_idx, mut out_lane) in out.lanes_mut(Axis(axis)).into_iter().enumerate() {
        let src_lane = &src_lanes[lane_idx];
        for a in 0..dst.n {
            let mut acc = Complex64::default();
            for k in 0..src.n {
                acc += eval[a][k] * src_lane[k];
            }
            out_lane[a] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn naive_centered(values: &[Complex64], forward: bool) -> Vec<Complex64> {
        let n = values.len();
        let dt = 1.37; // arbitrary; phases only depend on (j−N/2)(k−N/2)2π/N
        let ds = 2.0 * std::f64::consts::PI / (n as f64 * dt);
        (0..n)
            .map(|j| {
                let s = (j as f64 - n as f64 / 2.0) * ds;
                values
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let t = (k as f64 - n as f64 / 2.0) * dt;
                        let ang = if forward { -s * t } else { s * t };
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_sum_both_directions() {
        for &n in &[6usize, 8, 10] {
            let vals: Vec<Complex64> = (0..n)
                .map(|k| Complex64::new((k as f64).sin() + 0.3, (k as f64 * 0.7).cos()))
                .collect();
            for &fwd in &[true, false] {
                let mut fast = vals.clone();
                dft_centered(&mut fast, fwd);
                let slow = naive_centered(&vals, fwd);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).norm() < 1e-10, "n={n} fwd={fwd}");
                }
            }
        }
    }

    #[test]
    fn backward_forward_is_n_times_identity() {
        let n = 16;
        let vals: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(k as f64, -(k as f64) * 0.5))
            .collect();
        let mut work = vals.clone();
        dft_centered(&mut work, true);
        dft_centered(&mut work, false);
        for (a, b) in work.iter().zip(&vals) {
            assert!((a / n as f64 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn spectral_shift_of_gaussian() {
        let spec = AxisSpec::new(64, 8.0).unwrap();
        let g = |t: f64| Complex64::new((-t * t / 2.0).exp(), 0.0);
        let mut arr = ArrayD::zeros(IxDyn(&[64]));
        for j in 0..64 {
            arr[IxDyn(&[j])] = g(spec.coord(j));
        }
        let s = 0.773;
        trig_shift_axis(&mut arr, 0, &spec, s);
        for j in 0..64 {
            let want = g(spec.coord(j) + s);
            assert!((arr[IxDyn(&[j])] - want).norm() < 1e-10);
        }
    }

    #[test]
    fn resample_gaussian_onto_finer_axis() {
        let src = AxisSpec::new(48, 6.0).unwrap();
        let dst = AxisSpec::new(64, 5.0).unwrap();
        let g = |t: f64| Complex64::new((-t * t).exp(), 0.0);
        let mut arr = ArrayD::zeros(IxDyn(&[48]));
        for j in 0..48 {
            arr[IxDyn(&[j])] = g(src.coord(j));
        }
        let out = trig_resample_axis(&arr, 0, &src, &dst);
        for a in 0..64 {
            let want = g(dst.coord(a));
            assert!((out[IxDyn(&[a])] - want).norm() < 1e-9);
        }
    }
}
