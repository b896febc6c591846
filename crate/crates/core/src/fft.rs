//! Thin wrappers around rustfft with a per-thread plan cache.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(PlanCache::default());
}

#[derive(Default)]
struct PlanCache {
    planner: Option<FftPlanner<f64>>,
    fwd: HashMap<usize, Arc<dyn Fft<f64>>>,
    inv: HashMap<usize, Arc<dyn Fft<f64>>>,
}

impl PlanCache {
    fn forward(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        let planner = self.planner.get_or_insert_with(FftPlanner::new);
        self.fwd
            .entry(n)
            .or_insert_with(|| planner.plan_fft_forward(n))
            .clone()
    }

    fn inverse(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        let planner = self.planner.get_or_insert_with(FftPlanner::new);
        self.inv
            .entry(n)
            .or_insert_with(|| planner.plan_fft_inverse(n))
            .clone()
    }
}

/// In-place forward FFT (unnormalized).
pub fn fft_inplace(buf: &mut [Complex64]) {
    let plan = PLANS.with(|p| p.borrow_mut().forward(buf.len()));
    plan.process(buf);
}

/// In-place inverse FFT, scaled by 1/N so that `ifft(fft(x)) == x`.
pub fn ifft_inplace(buf: &mut [Complex64]) {
    let plan = PLANS.with(|p| p.borrow_mut().inverse(buf.len()));
    plan.process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Signed frequency in Hz of FFT bin `idx` for an `n`-point transform at
/// sample rate `fs`. Bins above n/2 map to negative frequencies.
pub fn bin_freq_hz(idx: usize, n: usize, fs: f64) -> f64 {
    if idx < n.div_ceil(2) {
        idx as f64 * fs / n as f64
    } else {
        (idx as f64 - n as f64) * fs / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        let mut buf: Vec<Complex64> = (0..64)
            .map(|i| Complex64::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let orig = buf.clone();
        fft_inplace(&mut buf);
        ifft_inplace(&mut buf);
        for (a, b) in buf.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bin_frequencies() {
        // 8 bins at fs=8: 0 1 2 3 -4 -3 -2 -1
        let f: Vec<f64> = (0..8).map(|i| bin_freq_hz(i, 8, 8.0)).collect();
        assert_eq!(f, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
        // odd length: 0 1 2 -2 -1
        let f: Vec<f64> = (0..5).map(|i| bin_freq_hz(i, 5, 5.0)).collect();
        assert_eq!(f, vec![0.0, 1.0, 2.0, -2.0, -1.0]);
    }

    #[test]
    fn single_tone_lands_on_its_bin() {
        let n = 32;
        let k = 5;
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| {
                Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64)
            })
            .collect();
        fft_inplace(&mut buf);
        for (i, v) in buf.iter().enumerate() {
            if i == k {
                assert!((v.norm() - n as f64).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9);
            }
        }
    }
}
