//! Coherent receiver DSP.
//!
//! Stage order is fixed: LO phase-noise emulation → chromatic dispersion
//! compensation → subcarrier demux → matched filter → polarization demux
//! (data-aided LMS butterfly) → pilot-aided carrier recovery → real-valued
//! MIMO → SNR estimation. All adaptive stages are data-aided and
//! deterministic given their inputs.

use crate::fft::{bin_freq_hz, fft_inplace, ifft_inplace};
use crate::txchain::{rrc_gain, ChannelSignal, SubcarrierPlan, SymbolFrame};
use crate::waveform::DualPolWaveform;
use crate::{beta2_from_dispersion, lin_to_db};
use num_complex::Complex64;
use thiserror::Error;

/// SNR reports are capped here; a zero-error chain would otherwise divide
/// by zero.
const SNR_CAP_DB: f64 = 60.0;

/// Residual training MSE (relative to target power) above this aborts with
/// `NonConvergence`. Heavily impaired but still equalizable inputs sit well
/// below it; diverged or uncorrelated inputs sit at or above target power.
const CONVERGENCE_MSE: f64 = 0.75;

#[derive(Debug, Error)]
pub enum RxError {
    #[error("equalizer failed to converge: residual training MSE {mse:.3}")]
    NonConvergence { mse: f64 },
    #[error("sequence lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("configuration invalid: {0}")]
    InvalidConfig(String),
    #[error("sample rate {fs} Hz is not an integer multiple of baud {baud} Hz")]
    NonIntegerSps { fs: f64, baud: f64 },
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
}

/// Real-valued MIMO topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MimoMode {
    /// No MIMO stage.
    Off,
    /// 4 real tributaries (Iₓ, Qₓ, I_y, Q_y) per subcarrier, equalized
    /// independently. This is the single-carrier structure.
    Sc4x4,
    /// 8 real tributaries from each mirror-frequency subcarrier pair,
    /// equalized jointly; compensates image crosstalk between mirrors.
    Mc8x8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxChainConfig {
    /// LMS adaptation gain for both the butterfly and the real MIMO.
    pub lms_step: f64,
    /// Butterfly tap count (odd).
    pub pol_taps: usize,
    /// Real MIMO tap count (odd).
    pub mimo_taps: usize,
    pub mimo_mode: MimoMode,
    /// Moving-average window (in pilots) applied to the pilot phase track
    /// before linear interpolation; 1 keeps the raw pilot-wise estimates.
    pub cpe_smooth_pilots: usize,
    /// Frequency-offset search half-range, Hz.
    pub freq_search_hz: f64,
}

impl Default for RxChainConfig {
    fn default() -> Self {
        Self {
            lms_step: 1e-3,
            pol_taps: 31,
            mimo_taps: 51,
            mimo_mode: MimoMode::Off,
            cpe_smooth_pilots: 1,
            freq_search_hz: 1e9,
        }
    }
}

impl RxChainConfig {
    pub fn validate(&self) -> Result<(), RxError> {
        if self.pol_taps % 2 == 0 || self.mimo_taps % 2 == 0 {
            return Err(RxError::InvalidConfig("tap counts must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.lms_step) || self.lms_step == 0.0 {
            return Err(RxError::InvalidConfig("lms step must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-subcarrier and mean SNR. The mean is taken over linear SNRs and
/// converted to dB afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrReport {
    pub snr_db_per_subcarrier: Vec<f64>,
    pub snr_db_mean: f64,
    pub n_symbols_used: usize,
}

/// Multiply both polarizations by a Wiener phase process, emulating local
/// oscillator linewidth on the sampled waveform. Must run before CD
/// compensation: the interaction of the two stages is what generates
/// equalization-enhanced phase noise.
pub fn emulate_lo_linewidth(w: DualPolWaveform, linewidth_hz: f64, seed: u64) -> DualPolWaveform {
    crate::txchain::apply_phase_noise(w, linewidth_hz, seed)
}

/// Frequency-domain all-pass removing the accumulated dispersion of
/// `length_km` of fiber: phase −(β₂/2)(2πf)²L, the exact inverse of the
/// propagation operator at γ = 0.
pub fn cd_compensate(
    mut w: DualPolWaveform,
    dispersion_ps_nm_km: f64,
    length_km: f64,
    f0_hz: f64,
) -> DualPolWaveform {
    if dispersion_ps_nm_km == 0.0 || length_km == 0.0 || w.is_empty() {
        return w;
    }
    let beta2 = beta2_from_dispersion(dispersion_ps_nm_km, f0_hz);
    let n = w.len();
    fft_inplace(&mut w.x);
    fft_inplace(&mut w.y);
    for b in 0..n {
        let om = 2.0 * std::f64::consts::PI * bin_freq_hz(b, n, w.sample_rate_hz);
        let rot = Complex64::from_polar(1.0, -0.5 * beta2 * om * om * length_km * 1e3);
        w.x[b] *= rot;
        w.y[b] *= rot;
    }
    ifft_inplace(&mut w.x);
    ifft_inplace(&mut w.y);
    w
}

/// Shift the channel at absolute frequency `f_center_hz` out of a band
/// field and resample to `fs_out` (ideal brick-wall extraction).
pub fn extract_channel(
    band: &DualPolWaveform,
    f_center_hz: f64,
    fs_out: f64,
) -> Result<DualPolWaveform, RxError> {
    let mut w = band.clone();
    w.frequency_shift(band.center_freq_hz - f_center_hz);
    let mut out = w.resample(fs_out)?;
    out.center_freq_hz = f_center_hz;
    Ok(out)
}

/// Inverse of [`crate::txchain::subcarrier_mux`]: shift each subcarrier back
/// to baseband. Selectivity comes from the matched filter that follows.
pub fn subcarrier_demux(w: &DualPolWaveform, plan: &SubcarrierPlan) -> Vec<DualPolWaveform> {
    (0..plan.m_subcarriers)
        .map(|m| {
            let mut s = w.clone();
            s.frequency_shift(-plan.offset_hz(m));
            s
        })
        .collect()
}

/// Matched RRC filter and symbol-center downsampling. Returns the two
/// polarization symbol streams.
pub fn matched_filter_downsample(
    w: &DualPolWaveform,
    baud_hz: f64,
    rolloff: f64,
) -> Result<(Vec<Complex64>, Vec<Complex64>), RxError> {
    let sps_f = w.sample_rate_hz / baud_hz;
    let sps = sps_f.round() as usize;
    if sps == 0 || (sps_f - sps as f64).abs() > 1e-9 {
        return Err(RxError::NonIntegerSps { fs: w.sample_rate_hz, baud: baud_hz });
    }
    let n = w.len();
    let filter_one = |src: &[Complex64]| {
        let mut buf = src.to_vec();
        fft_inplace(&mut buf);
        for (b, v) in buf.iter_mut().enumerate() {
            *v *= rrc_gain(bin_freq_hz(b, n, w.sample_rate_hz), baud_hz, rolloff, sps_f);
        }
        ifft_inplace(&mut buf);
        buf.iter().step_by(sps).copied().collect::<Vec<_>>()
    };
    Ok((filter_one(&w.x), filter_one(&w.y)))
}

fn circ(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Number of full-rate LMS training passes: enough to reach roughly 12k
/// updates regardless of frame length, at least two.
fn training_passes(frame_len: usize) -> usize {
    (12_000 / frame_len.max(1)).max(2)
}

/// Step schedule for equalizers of static impairments: full-rate passes,
/// then one pass at an eighth of the step to shrink gradient noise before
/// the taps freeze.
fn training_schedule(frame_len: usize) -> Vec<f64> {
    let mut schedule = vec![1.0; training_passes(frame_len)];
    schedule.push(0.125);
    schedule
}

/// 2×2 complex butterfly FIR adapted by data-aided LMS. The training error
/// is derotated by a first-order phase tracker so the taps learn only the
/// static polarization channel: common laser phase is not a butterfly job
/// and must survive to the carrier recovery that follows (that ordering is
/// what exposes equalization-enhanced phase noise). The output pass runs
/// with frozen taps and no derotation. Symbol-spaced, cyclic.
pub fn pol_demux_lms(
    rx_x: &[Complex64],
    rx_y: &[Complex64],
    train_x: &[Complex64],
    train_y: &[Complex64],
    cfg: &RxChainConfig,
) -> Result<(Vec<Complex64>, Vec<Complex64>), RxError> {
    cfg.validate()?;
    let n = rx_x.len();
    if rx_y.len() != n || train_x.len() != n || train_y.len() != n {
        return Err(RxError::LengthMismatch { a: n, b: rx_y.len().min(train_x.len()) });
    }
    let taps = cfg.pol_taps;
    let half = (taps / 2) as isize;
    let zero = Complex64::new(0.0, 0.0);
    // w[out][in][tap]
    let mut wts = vec![vec![vec![zero; taps]; 2]; 2];
    wts[0][0][taps / 2] = Complex64::new(1.0, 0.0);
    wts[1][1][taps / 2] = Complex64::new(1.0, 0.0);
    let inputs = [rx_x, rx_y];
    let targets = [train_x, train_y];
    let filter_at = |wts: &Vec<Vec<Vec<Complex64>>>, out: usize, k: usize| {
        let mut acc = zero;
        for (inp, w_in) in inputs.iter().zip(&wts[out]) {
            for (t, w) in w_in.iter().enumerate() {
                acc += w * inp[circ(k as isize + t as isize - half, n)];
            }
        }
        acc
    };
    // First-order PLL gain for the training-error derotation.
    const PLL_GAIN: f64 = 0.1;
    let mut last_mse = 0.0;
    for step_scale in training_schedule(n) {
        let mu = cfg.lms_step * step_scale;
        let mut err_acc = 0.0;
        let mut phase = 0.0f64;
        for k in 0..n {
            let rot = Complex64::from_polar(1.0, phase);
            let mut eps = Complex64::new(0.0, 0.0);
            for out in 0..2 {
                let y = filter_at(&wts, out, k);
                let d = targets[out][k] * rot;
                let e = d - y;
                err_acc += e.norm_sqr();
                eps += y * d.conj();
                for (inp, w_in) in inputs.iter().zip(wts[out].iter_mut()) {
                    for (t, w) in w_in.iter_mut().enumerate() {
                        *w += mu * e * inp[circ(k as isize + t as isize - half, n)].conj();
                    }
                }
            }
            if eps.norm_sqr() > 0.0 {
                phase += PLL_GAIN * eps.arg();
            }
        }
        last_mse = err_acc / (2 * n) as f64;
    }
    let power: f64 =
        targets.iter().flat_map(|t| t.iter()).map(|s| s.norm_sqr()).sum::<f64>() / (2 * n) as f64;
    if last_mse > CONVERGENCE_MSE * power.max(1e-30) {
        return Err(RxError::NonConvergence { mse: last_mse / power.max(1e-30) });
    }
    let mut out_x: Vec<Complex64> = (0..n).map(|k| filter_at(&wts, 0, k)).collect();
    let mut out_y: Vec<Complex64> = (0..n).map(|k| filter_at(&wts, 1, k)).collect();
    // The tracker leaves the taps with an arbitrary constant phase
    // reference; align it once, data-aided. A single constant cannot
    // absorb any time-varying phase content.
    let acc: Complex64 = out_x
        .iter()
        .zip(train_x)
        .chain(out_y.iter().zip(train_y))
        .map(|(y, d)| y * d.conj())
        .sum();
    if acc.norm_sqr() > 0.0 {
        let align = Complex64::from_polar(1.0, -acc.arg());
        for v in out_x.iter_mut().chain(out_y.iter_mut()) {
            *v *= align;
        }
    }
    Ok((out_x, out_y))
}

/// Carrier recovery output.
#[derive(Debug, Clone)]
pub struct CarrierRecovery {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub freq_offset_hz: f64,
    /// Pilot-domain SNR after correction, dB.
    pub pilot_snr_db: f64,
    /// Set when the pilot SNR fell below 0 dB; estimates are then
    /// unreliable but still applied.
    pub low_pilot_snr: bool,
}

/// Pilot-aided frequency and phase recovery. The frequency offset comes
/// from a coarse spectral search refined by a linear fit of the unwrapped
/// pilot phase slope; the phase track is the pilot-wise phase error,
/// optionally smoothed, linearly interpolated across the payload.
pub fn carrier_recovery(
    rx_x: &[Complex64],
    rx_y: &[Complex64],
    frame: &SymbolFrame,
    symbol_rate_hz: f64,
    cfg: &RxChainConfig,
) -> Result<CarrierRecovery, RxError> {
    let n = rx_x.len();
    if rx_y.len() != n || frame.len() != n {
        return Err(RxError::LengthMismatch { a: n, b: frame.len() });
    }
    let pilots: Vec<usize> =
        frame.pilot_mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
    assert!(!pilots.is_empty(), "carrier recovery needs pilots");
    let ts = 1.0 / symbol_rate_hz;
    // Joint pilot correlations of both polarizations.
    let corr: Vec<Complex64> = pilots
        .iter()
        .map(|&p| rx_x[p] * frame.x[p].conj() + rx_y[p] * frame.y[p].conj())
        .collect();

    // Coarse frequency search on the pilot correlation spectrum. The
    // periodic pilot grid aliases with period 1/(spacing·ts), so the search
    // is clamped to the alias-free half-range; candidates are scanned from
    // 0 Hz outward so ties resolve to the smallest offset.
    let min_spacing =
        pilots.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(n).max(1) as f64;
    let alias_free = 0.45 / (min_spacing * ts);
    let search = cfg.freq_search_hz.min(alias_free);
    let t_total = n as f64 * ts;
    let df = 1.0 / (4.0 * t_total);
    let steps = (search / df).ceil() as i64;
    let mut best = (0.0f64, f64::NEG_INFINITY);
    for k in 0..=steps {
        for f in [k as f64 * df, -(k as f64) * df] {
            let sum: Complex64 = corr
                .iter()
                .zip(&pilots)
                .map(|(c, &p)| {
                    c * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * p as f64 * ts)
                })
                .sum();
            if sum.norm_sqr() > best.1 * (1.0 + 1e-12) {
                best = (f, sum.norm_sqr());
            }
            if k == 0 {
                break;
            }
        }
    }
    // Refine with a least-squares slope fit on the unwrapped residual
    // pilot phases (two rounds).
    let mut f_hat = best.0;
    for _ in 0..2 {
        let mut prev = 0.0;
        let mut unwrapped = Vec::with_capacity(pilots.len());
        for (c, &p) in corr.iter().zip(&pilots) {
            let res =
                c * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f_hat * p as f64 * ts);
            let mut th = res.arg();
            while th - prev > std::f64::consts::PI {
                th -= 2.0 * std::f64::consts::PI;
            }
            while th - prev < -std::f64::consts::PI {
                th += 2.0 * std::f64::consts::PI;
            }
            unwrapped.push(th);
            prev = th;
        }
        let tbar = pilots.iter().map(|&p| p as f64).sum::<f64>() / pilots.len() as f64;
        let ybar = unwrapped.iter().sum::<f64>() / unwrapped.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for (&p, &y) in pilots.iter().zip(&unwrapped) {
            num += (p as f64 - tbar) * (y - ybar);
            den += (p as f64 - tbar) * (p as f64 - tbar);
        }
        if den > 0.0 {
            f_hat += num / den / (2.0 * std::f64::consts::PI * ts);
        }
    }

    // Per-polarization pilot phase tracks after frequency removal.
    let phase_track = |rx: &[Complex64], tx: &[Complex64]| -> Vec<f64> {
        let mut prev = 0.0;
        let mut track = Vec::with_capacity(pilots.len());
        for &p in &pilots {
            let r = rx[p]
                * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f_hat * p as f64 * ts);
            let mut th = (r * tx[p].conj()).arg();
            while th - prev > std::f64::consts::PI {
                th -= 2.0 * std::f64::consts::PI;
            }
            while th - prev < -std::f64::consts::PI {
                th += 2.0 * std::f64::consts::PI;
            }
            track.push(th);
            prev = th;
        }
        // Centered moving average.
        let w = cfg.cpe_smooth_pilots.max(1);
        if w > 1 {
            let half = (w / 2) as isize;
            (0..track.len() as isize)
                .map(|i| {
                    let lo = (i - half).max(0) as usize;
                    let hi = ((i + half) as usize).min(track.len() - 1);
                    track[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect()
        } else {
            track
        }
    };
    let interp = |track: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; n];
        for k in 0..n {
            let (lo, hi) = match pilots.binary_search(&k) {
                Ok(i) => (i, i),
                Err(0) => (0, 0),
                Err(i) if i == pilots.len() => (i - 1, i - 1),
                Err(i) => (i - 1, i),
            };
            full[k] = if lo == hi {
                track[lo]
            } else {
                let t0 = pilots[lo] as f64;
                let t1 = pilots[hi] as f64;
                let a = (k as f64 - t0) / (t1 - t0);
                track[lo] * (1.0 - a) + track[hi] * a
            };
        }
        full
    };
    let apply = |rx: &[Complex64], phases: &[f64]| -> Vec<Complex64> {
        rx.iter()
            .enumerate()
            .map(|(k, v)| {
                v * Complex64::from_polar(
                    1.0,
                    -2.0 * std::f64::consts::PI * f_hat * k as f64 * ts - phases[k],
                )
            })
            .collect()
    };
    let out_x = apply(rx_x, &interp(&phase_track(rx_x, &frame.x)));
    let out_y = apply(rx_y, &interp(&phase_track(rx_y, &frame.y)));

    // Pilot-domain SNR sanity flag.
    let mut err = 0.0;
    let mut sig = 0.0;
    for &p in &pilots {
        err += (out_x[p] - frame.x[p]).norm_sqr() + (out_y[p] - frame.y[p]).norm_sqr();
        sig += frame.x[p].norm_sqr() + frame.y[p].norm_sqr();
    }
    let pilot_snr_db = if err > 0.0 { lin_to_db(sig / err) } else { SNR_CAP_DB };
    Ok(CarrierRecovery {
        x: out_x,
        y: out_y,
        freq_offset_hz: f_hat,
        pilot_snr_db,
        low_pilot_snr: pilot_snr_db < 0.0,
    })
}

/// Data-aided real-valued LMS MIMO over `inputs.len()` tributaries. Same
/// training schedule as the butterfly; cyclic, symbol-spaced.
pub fn real_mimo(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    taps: usize,
    step: f64,
) -> Result<Vec<Vec<f64>>, RxError> {
    let n_streams = inputs.len();
    assert_eq!(n_streams, targets.len(), "inputs and targets must pair up");
    let n = inputs[0].len();
    for s in inputs.iter().chain(targets.iter()) {
        if s.len() != n {
            return Err(RxError::LengthMismatch { a: n, b: s.len() });
        }
    }
    if taps % 2 == 0 {
        return Err(RxError::InvalidConfig("tap count must be odd".into()));
    }
    let half = (taps / 2) as isize;
    let mut wts = vec![vec![vec![0.0f64; taps]; n_streams]; n_streams];
    for (j, w_out) in wts.iter_mut().enumerate() {
        w_out[j][taps / 2] = 1.0;
    }
    let filter_at = |wts: &Vec<Vec<Vec<f64>>>, out: usize, k: usize| {
        let mut acc = 0.0;
        for (inp, w_in) in inputs.iter().zip(&wts[out]) {
            for (t, w) in w_in.iter().enumerate() {
                acc += w * inp[circ(k as isize + t as isize - half, n)];
            }
        }
        acc
    };
    let mut last_mse = 0.0;
    for step_scale in training_schedule(n) {
        let mu = step * step_scale;
        let mut err_acc = 0.0;
        for k in 0..n {
            for out in 0..n_streams {
                let e = targets[out][k] - filter_at(&wts, out, k);
                err_acc += e * e;
                for (inp, w_in) in inputs.iter().zip(wts[out].iter_mut()) {
                    for (t, w) in w_in.iter_mut().enumerate() {
                        *w += mu * e * inp[circ(k as isize + t as isize - half, n)];
                    }
                }
            }
        }
        last_mse = err_acc / (n_streams * n) as f64;
    }
    let power: f64 = targets.iter().flat_map(|t| t.iter()).map(|s| s * s).sum::<f64>()
        / (n_streams * n) as f64;
    if last_mse > CONVERGENCE_MSE * power.max(1e-30) {
        return Err(RxError::NonConvergence { mse: last_mse / power.max(1e-30) });
    }
    Ok((0..n_streams)
        .map(|out| (0..n).map(|k| filter_at(&wts, out, k)).collect())
        .collect())
}

/// One subcarrier's aligned receive/transmit symbol streams.
#[derive(Debug, Clone)]
pub struct AlignedSymbols {
    pub rx_x: Vec<Complex64>,
    pub rx_y: Vec<Complex64>,
    pub tx_x: Vec<Complex64>,
    pub tx_y: Vec<Complex64>,
    /// Positions included in the SNR measurement (payload).
    pub measure_mask: Vec<bool>,
}

/// Data-aided SNR: E[|x|²]/E[|x−x̂|²] per subcarrier, polarizations pooled;
/// the mean is taken in the linear domain. Reports are capped at 60 dB.
pub fn estimate_snr(subcarriers: &[AlignedSymbols]) -> Result<SnrReport, RxError> {
    let mut per = Vec::with_capacity(subcarriers.len());
    let mut used = 0usize;
    for sc in subcarriers {
        let n = sc.rx_x.len();
        if sc.rx_y.len() != n || sc.tx_x.len() != n || sc.tx_y.len() != n || sc.measure_mask.len() != n
        {
            return Err(RxError::LengthMismatch { a: n, b: sc.tx_x.len() });
        }
        let mut sig = 0.0;
        let mut err = 0.0;
        for k in 0..n {
            if !sc.measure_mask[k] {
                continue;
            }
            used += 1;
            sig += sc.tx_x[k].norm_sqr() + sc.tx_y[k].norm_sqr();
            err += (sc.rx_x[k] - sc.tx_x[k]).norm_sqr() + (sc.rx_y[k] - sc.tx_y[k]).norm_sqr();
        }
        let snr = if err > 0.0 { sig / err } else { f64::INFINITY };
        per.push(lin_to_db(snr).min(SNR_CAP_DB));
    }
    let mean_lin =
        per.iter().map(|db| crate::db_to_lin(*db)).sum::<f64>() / per.len().max(1) as f64;
    Ok(SnrReport {
        snr_db_per_subcarrier: per,
        snr_db_mean: lin_to_db(mean_lin).min(SNR_CAP_DB),
        n_symbols_used: used,
    })
}

/// Linear link parameters the receiver must undo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkLinear {
    pub dispersion_ps_nm_km: f64,
    pub length_km: f64,
    pub f0_hz: f64,
}

impl LinkLinear {
    pub fn none() -> Self {
        Self { dispersion_ps_nm_km: 0.0, length_km: 0.0, f0_hz: 193.775e12 }
    }
}

/// Digital LO linewidth emulation request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoEmulation {
    pub linewidth_hz: f64,
    pub seed: u64,
}

fn re_of(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).collect()
}

fn im_of(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.im).collect()
}

fn recombine(re: &[f64], im: &[f64]) -> Vec<Complex64> {
    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

/// Full data-aided receiver chain for one channel. `wave` is the extracted
/// channel field (dispersion still present); `tx` carries the transmitted
/// frames for the data-aided stages.
pub fn run_receiver(
    wave: DualPolWaveform,
    tx: &ChannelSignal,
    link: &LinkLinear,
    lo: Option<LoEmulation>,
    cfg: &RxChainConfig,
) -> Result<SnrReport, RxError> {
    cfg.validate()?;
    let mut w = wave;
    if let Some(lo) = lo {
        w = emulate_lo_linewidth(w, lo.linewidth_hz, lo.seed);
    }
    w = cd_compensate(w, link.dispersion_ps_nm_km, link.length_km, link.f0_hz);
    let plan = &tx.plan;
    let baud = plan.per_subcarrier_baud();
    let streams = subcarrier_demux(&w, plan);
    let mut recovered: Vec<(Vec<Complex64>, Vec<Complex64>)> = Vec::with_capacity(streams.len());
    for (m, s) in streams.iter().enumerate() {
        let frame = &tx.frames[m];
        let (mut rx_x, mut rx_y) = matched_filter_downsample(s, baud, plan.rolloff)?;
        // Data-aided gain normalization so the launch-power scaling does
        // not sit on the equalizer's shoulders.
        let p_rx: f64 = rx_x
            .iter()
            .zip(&rx_y)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .sum::<f64>()
            / rx_x.len() as f64;
        let p_tx: f64 = frame
            .x
            .iter()
            .zip(&frame.y)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .sum::<f64>()
            / frame.len() as f64;
        if p_rx > 0.0 {
            let g = (p_tx / p_rx).sqrt();
            for v in rx_x.iter_mut().chain(rx_y.iter_mut()) {
                *v *= g;
            }
        }
        let (px, py) = pol_demux_lms(&rx_x, &rx_y, &frame.x, &frame.y, cfg)?;
        let cr = carrier_recovery(&px, &py, frame, baud, cfg)?;
        recovered.push((cr.x, cr.y));
    }

    match cfg.mimo_mode {
        MimoMode::Off => {}
        MimoMode::Sc4x4 => {
            for (m, (sx, sy)) in recovered.iter_mut().enumerate() {
                let frame = &tx.frames[m];
                let inputs = vec![re_of(sx), im_of(sx), re_of(sy), im_of(sy)];
                let targets =
                    vec![re_of(&frame.x), im_of(&frame.x), re_of(&frame.y), im_of(&frame.y)];
                let out = real_mimo(&inputs, &targets, cfg.mimo_taps, cfg.lms_step)?;
                *sx = recombine(&out[0], &out[1]);
                *sy = recombine(&out[2], &out[3]);
            }
        }
        MimoMode::Mc8x8 => {
            let m_total = recovered.len();
            for m in 0..m_total.div_ceil(2) {
                let mirror = m_total - 1 - m;
                if mirror == m {
                    let (sx, sy) = recovered[m].clone();
                    let frame = &tx.frames[m];
                    let inputs = vec![re_of(&sx), im_of(&sx), re_of(&sy), im_of(&sy)];
                    let targets =
                        vec![re_of(&frame.x), im_of(&frame.x), re_of(&frame.y), im_of(&frame.y)];
                    let out = real_mimo(&inputs, &targets, cfg.mimo_taps, cfg.lms_step)?;
                    recovered[m] = (recombine(&out[0], &out[1]), recombine(&out[2], &out[3]));
                    continue;
                }
                let (ax, ay) = recovered[m].clone();
                let (bx, by) = recovered[mirror].clone();
                let fa = &tx.frames[m];
                let fb = &tx.frames[mirror];
                let inputs = vec![
                    re_of(&ax),
                    im_of(&ax),
                    re_of(&ay),
                    im_of(&ay),
                    re_of(&bx),
                    im_of(&bx),
                    re_of(&by),
                    im_of(&by),
                ];
                let targets = vec![
                    re_of(&fa.x),
                    im_of(&fa.x),
                    re_of(&fa.y),
                    im_of(&fa.y),
                    re_of(&fb.x),
                    im_of(&fb.x),
                    re_of(&fb.y),
                    im_of(&fb.y),
                ];
                let out = real_mimo(&inputs, &targets, cfg.mimo_taps, cfg.lms_step)?;
                recovered[m] = (recombine(&out[0], &out[1]), recombine(&out[2], &out[3]));
                recovered[mirror] = (recombine(&out[4], &out[5]), recombine(&out[6], &out[7]));
            }
        }
    }

    // Second carrier-recovery pass: the MIMO removes the impairments that
    // corrupted the first pass's pilots, so a refinement on the cleaned
    // symbols strips the residual phase-track jitter. A no-op for clean
    // chains.
    if cfg.mimo_mode != MimoMode::Off {
        for (m, (sx, sy)) in recovered.iter_mut().enumerate() {
            let cr = carrier_recovery(sx, sy, &tx.frames[m], baud, cfg)?;
            *sx = cr.x;
            *sy = cr.y;
        }
    }

    let aligned: Vec<AlignedSymbols> = recovered
        .into_iter()
        .zip(&tx.frames)
        .map(|((rx_x, rx_y), frame)| AlignedSymbols {
            rx_x,
            rx_y,
            tx_x: frame.x.clone(),
            tx_y: frame.y.clone(),
            measure_mask: frame.pilot_mask.iter().map(|&p| !p).collect(),
        })
        .collect();
    estimate_snr(&aligned)
}

/// Ideal-receiver normalized distortion power for nonlinear-coefficient
/// extraction: exact CD removal, matched filtering, then a data-aided
/// least-squares 2×2 polarization/phase alignment per subcarrier. Returns
/// E[|x−x̂|²]/E[|x|²] pooled over subcarriers.
pub fn ideal_receiver_nsr(
    wave: &DualPolWaveform,
    tx: &ChannelSignal,
    link: &LinkLinear,
) -> Result<f64, RxError> {
    let w = cd_compensate(wave.clone(), link.dispersion_ps_nm_km, link.length_km, link.f0_hz);
    let plan = &tx.plan;
    let baud = plan.per_subcarrier_baud();
    let mut err = 0.0;
    let mut sig = 0.0;
    for (m, s) in subcarrier_demux(&w, plan).iter().enumerate() {
        let frame = &tx.frames[m];
        let (rx_x, rx_y) = matched_filter_downsample(s, baud, plan.rolloff)?;
        let n = frame.len();
        if rx_x.len() != n {
            return Err(RxError::LengthMismatch { a: rx_x.len(), b: n });
        }
        // C = S R^H (R R^H)^{-1}, R = received 2xN, S = transmitted 2xN.
        let mut rr = [[Complex64::new(0.0, 0.0); 2]; 2];
        let mut sr = [[Complex64::new(0.0, 0.0); 2]; 2];
        for k in 0..n {
            let r = [rx_x[k], rx_y[k]];
            let t = [frame.x[k], frame.y[k]];
            for i in 0..2 {
                for j in 0..2 {
                    rr[i][j] += r[i] * r[j].conj();
                    sr[i][j] += t[i] * r[j].conj();
                }
            }
        }
        let det = rr[0][0] * rr[1][1] - rr[0][1] * rr[1][0];
        if det.norm() < 1e-30 {
            return Err(RxError::InvalidConfig("degenerate receive correlation".into()));
        }
        let inv = [
            [rr[1][1] / det, -rr[0][1] / det],
            [-rr[1][0] / det, rr[0][0] / det],
        ];
        let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = sr[i][0] * inv[0][j] + sr[i][1] * inv[1][j];
            }
        }
        for k in 0..n {
            let ex = c[0][0] * rx_x[k] + c[0][1] * rx_y[k] - frame.x[k];
            let ey = c[1][0] * rx_x[k] + c[1][1] * rx_y[k] - frame.y[k];
            err += ex.norm_sqr() + ey.norm_sqr();
            sig += frame.x[k].norm_sqr() + frame.y[k].norm_sqr();
        }
    }
    Ok(err / sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibersim::{propagate_span, FiberSpan, SsfmConfig};
    use crate::rng::{derive_rng, gaussian_pair};
    use crate::shaping::{Constellation, ShapedConstellation};
    use crate::txchain::{build_channel, generate_symbol_frame};

    fn shaped16() -> ShapedConstellation {
        ShapedConstellation::with_entropy(&Constellation::square_qam(16).unwrap(), 3.0).unwrap()
    }

    fn sc_channel(n_payload: usize, seed: u64) -> ChannelSignal {
        let plan = SubcarrierPlan::new(1, 8e9, 0.05).unwrap();
        build_channel(&shaped16(), &plan, n_payload, 32e9, 0.02, seed).unwrap()
    }

    #[test]
    fn cd_compensation_inverts_linear_propagation() {
        let mut ch = sc_channel(502, 1);
        ch.waveform.center_freq_hz = 193.775e12;
        ch.waveform.set_average_power_w(1e-3);
        let span = FiberSpan {
            length_km: 80.0,
            alpha_db_per_km: 0.0,
            gamma_per_w_km: 0.0,
            ..Default::default()
        };
        let propagated = propagate_span(ch.waveform.clone(), &span, &SsfmConfig::default()).unwrap();
        let restored = cd_compensate(propagated, span.dispersion_ps_nm_km, 80.0, span.ref_freq_hz);
        let nsr: f64 = restored
            .x
            .iter()
            .zip(&ch.waveform.x)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / ch.waveform.x.iter().map(|v| v.norm_sqr()).sum::<f64>();
        assert!(lin_to_db(1.0 / nsr) > 40.0, "evm snr {}", lin_to_db(1.0 / nsr));
    }

    #[test]
    fn cd_zero_is_identity_and_group_property_holds() {
        let ch = sc_channel(128, 2);
        let w = ch.waveform;
        let same = cd_compensate(w.clone(), 0.0, 100.0, 193.775e12);
        assert_eq!(same, w);
        // Compensating -L equals applying dispersion of +L.
        let a = cd_compensate(w.clone(), 17.0, -120.0, 193.775e12);
        let b = {
            let mut v = w.clone();
            let beta2 = beta2_from_dispersion(17.0, 193.775e12);
            let n = v.len();
            fft_inplace(&mut v.x);
            fft_inplace(&mut v.y);
            for bidx in 0..n {
                let om = 2.0 * std::f64::consts::PI * bin_freq_hz(bidx, n, v.sample_rate_hz);
                let rot = Complex64::from_polar(1.0, 0.5 * beta2 * om * om * 120.0e3);
                v.x[bidx] *= rot;
                v.y[bidx] *= rot;
            }
            ifft_inplace(&mut v.x);
            ifft_inplace(&mut v.y);
            v
        };
        for (p, q) in a.x.iter().zip(&b.x) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn mux_demux_roundtrip_exceeds_35_db() {
        let plan = SubcarrierPlan::new(8, 32e9, 0.05).unwrap();
        let ch = build_channel(&shaped16(), &plan, 256, 64e9, 0.02, 3).unwrap();
        let streams = subcarrier_demux(&ch.waveform, &plan);
        for (m, s) in streams.iter().enumerate() {
            let (rx_x, _) = matched_filter_downsample(s, plan.per_subcarrier_baud(), 0.05).unwrap();
            let frame = &ch.frames[m];
            let nsr: f64 = rx_x
                .iter()
                .zip(&frame.x)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / frame.x.iter().map(|v| v.norm_sqr()).sum::<f64>();
            assert!(lin_to_db(1.0 / nsr) > 35.0, "subcarrier {m}: {}", lin_to_db(1.0 / nsr));
        }
    }

    #[test]
    fn adjacent_subcarrier_leakage_below_minus_30_db() {
        // Only subcarrier 3 active; measure what lands in its neighbors.
        let plan = SubcarrierPlan::new(8, 32e9, 0.05).unwrap();
        let shaped = shaped16();
        let active = generate_symbol_frame(&shaped, 256, 0.0, 7);
        let zero_frame = SymbolFrame {
            x: vec![Complex64::new(0.0, 0.0); active.len()],
            y: vec![Complex64::new(0.0, 0.0); active.len()],
            pilot_mask: vec![false; active.len()],
        };
        let sps = (64e9 / plan.per_subcarrier_baud()).round() as usize;
        let streams: Vec<DualPolWaveform> = (0..8)
            .map(|m| {
                let f = if m == 3 { &active } else { &zero_frame };
                crate::txchain::rrc_modulate(f, plan.per_subcarrier_baud(), 0.05, sps).unwrap()
            })
            .collect();
        let muxed = crate::txchain::subcarrier_mux(&streams, &plan).unwrap();
        let demuxed = subcarrier_demux(&muxed, &plan);
        let power = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>() / v.len() as f64;
        let (sig, _) = matched_filter_downsample(&demuxed[3], plan.per_subcarrier_baud(), 0.05).unwrap();
        let p_sig = power(&sig);
        for m in [2usize, 4] {
            let (leak, _) =
                matched_filter_downsample(&demuxed[m], plan.per_subcarrier_baud(), 0.05).unwrap();
            let ratio = lin_to_db(power(&leak) / p_sig);
            assert!(ratio < -30.0, "leakage into {m}: {ratio} dB");
        }
    }

    #[test]
    fn butterfly_inverts_polarization_rotation() {
        let ch = sc_channel(502, 4);
        let frame = &ch.frames[0];
        // Pure 90 degree rotation (unit determinant): x' = y, y' = -x.
        // Swap resolution comes for free from the data-aided training.
        let rx_x: Vec<Complex64> = frame.y.clone();
        let rx_y: Vec<Complex64> = frame.x.iter().map(|v| -v).collect();
        let cfg = RxChainConfig::default();
        let (ox, oy) = pol_demux_lms(&rx_x, &rx_y, &frame.x, &frame.y, &cfg).unwrap();
        let nsr: f64 = ox
            .iter()
            .zip(&frame.x)
            .chain(oy.iter().zip(&frame.y))
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / (2.0 * frame.len() as f64);
        assert!(lin_to_db(1.0 / nsr) > 30.0, "evm snr {}", lin_to_db(1.0 / nsr));
    }

    #[test]
    fn butterfly_identity_channel_stays_identity() {
        let ch = sc_channel(128, 5);
        let frame = &ch.frames[0];
        let cfg = RxChainConfig::default();
        let (ox, _) = pol_demux_lms(&frame.x, &frame.y, &frame.x, &frame.y, &cfg).unwrap();
        for (a, b) in ox.iter().zip(&frame.x) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn butterfly_reports_non_convergence_on_garbage() {
        let frame = generate_symbol_frame(&shaped16(), 2000, 0.02, 2);
        let n = frame.len();
        let mut rng = derive_rng(1, &[]);
        let mut junk_x = Vec::with_capacity(n);
        let mut junk_y = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b) = gaussian_pair(&mut rng);
            let (c, d) = gaussian_pair(&mut rng);
            junk_x.push(Complex64::new(a, b));
            junk_y.push(Complex64::new(c, d));
        }
        let cfg = RxChainConfig::default();
        let r = pol_demux_lms(&junk_x, &junk_y, &frame.x, &frame.y, &cfg);
        assert!(matches!(r, Err(RxError::NonConvergence { .. })));
    }

    #[test]
    fn carrier_recovery_identity_without_impairments() {
        let ch = sc_channel(502, 6);
        let frame = &ch.frames[0];
        let cfg = RxChainConfig::default();
        let cr = carrier_recovery(&frame.x, &frame.y, frame, 8e9, &cfg).unwrap();
        assert!(cr.freq_offset_hz.abs() < 1e3, "offset {}", cr.freq_offset_hz);
        for (a, b) in cr.x.iter().zip(&frame.x) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn carrier_recovery_estimates_100_mhz_offset() {
        // 32 GBd with 2% pilots: the pilot grid resolves offsets to
        // +/-280 MHz without ambiguity.
        let ch = sc_channel(10_000, 7);
        let frame = &ch.frames[0];
        let baud = 32e9;
        let offset = 100e6;
        let rot = |v: &[Complex64]| -> Vec<Complex64> {
            v.iter()
                .enumerate()
                .map(|(k, s)| {
                    s * Complex64::from_polar(
                        1.0,
                        2.0 * std::f64::consts::PI * offset * k as f64 / baud,
                    )
                })
                .collect()
        };
        let cfg = RxChainConfig::default();
        let cr = carrier_recovery(&rot(&frame.x), &rot(&frame.y), frame, baud, &cfg).unwrap();
        assert!(
            (cr.freq_offset_hz - offset).abs() < 0.01 * offset,
            "estimated {}",
            cr.freq_offset_hz
        );
    }

    #[test]
    fn carrier_recovery_tracks_slow_wiener_phase() {
        let ch = sc_channel(4016, 8);
        let frame = &ch.frames[0];
        let baud = 8e9;
        let lw = 60e3;
        let mut rng = derive_rng(99, &[]);
        let sigma = (2.0 * std::f64::consts::PI * lw / baud).sqrt();
        let mut phase = 0.0;
        let mut rx_x = Vec::with_capacity(frame.len());
        let mut rx_y = Vec::with_capacity(frame.len());
        for k in 0..frame.len() {
            let (g, _) = gaussian_pair(&mut rng);
            phase += sigma * g;
            let rot = Complex64::from_polar(1.0, phase);
            rx_x.push(frame.x[k] * rot);
            rx_y.push(frame.y[k] * rot);
        }
        let cfg = RxChainConfig::default();
        let cr = carrier_recovery(&rx_x, &rx_y, frame, baud, &cfg).unwrap();
        let mut err = 0.0;
        let mut sig = 0.0;
        for k in 0..frame.len() {
            err += (cr.x[k] - frame.x[k]).norm_sqr();
            sig += frame.x[k].norm_sqr();
        }
        assert!(lin_to_db(sig / err) > 30.0, "residual snr {}", lin_to_db(sig / err));
    }

    #[test]
    fn lower_baud_accumulates_more_interpilot_phase_error() {
        // Same linewidth and pilot rate: the slower subcarrier spans more
        // time between pilots, so its residual is larger.
        let residual = |baud: f64, seed: u64| -> f64 {
            let ch = sc_channel(4016, seed);
            let frame = &ch.frames[0];
            let lw = 60e3;
            let mut rng = derive_rng(seed, &[1]);
            let sigma = (2.0 * std::f64::consts::PI * lw / baud).sqrt();
            let mut phase = 0.0;
            let mut rx_x = Vec::with_capacity(frame.len());
            let mut rx_y = Vec::with_capacity(frame.len());
            for k in 0..frame.len() {
                let (g, _) = gaussian_pair(&mut rng);
                phase += sigma * g;
                let rot = Complex64::from_polar(1.0, phase);
                rx_x.push(frame.x[k] * rot);
                rx_y.push(frame.y[k] * rot);
            }
            let cfg = RxChainConfig::default();
            let cr = carrier_recovery(&rx_x, &rx_y, frame, baud, &cfg).unwrap();
            let mut err = 0.0;
            for k in 0..frame.len() {
                err += (cr.x[k] - frame.x[k]).norm_sqr();
            }
            err / frame.len() as f64
        };
        let mut worse_for_slow = 0;
        for seed in 0..5 {
            if residual(15e9, 20 + seed) < residual(120e9, 20 + seed) {
                // lower baud should be the larger residual
            } else {
                worse_for_slow += 1;
            }
        }
        assert!(worse_for_slow >= 4, "15 GBd worse in {worse_for_slow}/5 trials");
    }

    #[test]
    fn real_mimo_identity_when_clean() {
        let ch = sc_channel(502, 9);
        let frame = &ch.frames[0];
        let inputs = vec![re_of(&frame.x), im_of(&frame.x), re_of(&frame.y), im_of(&frame.y)];
        let out = real_mimo(&inputs, &inputs, 51, 1e-3).unwrap();
        for (o, i) in out.iter().zip(&inputs) {
            for (a, b) in o.iter().zip(i) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn snr_estimator_definitional_cases() {
        // Perfect: capped at 60 dB.
        let ch = sc_channel(128, 10);
        let frame = &ch.frames[0];
        let perfect = AlignedSymbols {
            rx_x: frame.x.clone(),
            rx_y: frame.y.clone(),
            tx_x: frame.x.clone(),
            tx_y: frame.y.clone(),
            measure_mask: vec![true; frame.len()],
        };
        let r = estimate_snr(std::slice::from_ref(&perfect)).unwrap();
        assert_eq!(r.snr_db_mean, 60.0);

        // Unit-power symbols + noise of variance 0.1 -> 10 dB.
        let n = 200_000;
        let mut rng = derive_rng(3, &[7]);
        let mut tx = Vec::with_capacity(n);
        let mut rx = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b) = gaussian_pair(&mut rng);
            let s = Complex64::new(a, b) / (a * a + b * b).sqrt(); // unit power
            let (nr, ni) = gaussian_pair(&mut rng);
            tx.push(s);
            rx.push(s + Complex64::new(nr, ni) * (0.05f64).sqrt());
        }
        let noisy = AlignedSymbols {
            rx_x: rx.clone(),
            rx_y: rx,
            tx_x: tx.clone(),
            tx_y: tx,
            measure_mask: vec![true; n],
        };
        let r = estimate_snr(std::slice::from_ref(&noisy)).unwrap();
        assert!((r.snr_db_mean - 10.0).abs() < 0.05, "snr {}", r.snr_db_mean);

        // Linear-domain averaging: 10 dB and 13 dB -> 11.76 dB.
        let sub10 = noisy.clone();
        let mut sub13 = noisy.clone();
        for (r, t) in sub13.rx_x.iter_mut().zip(&sub13.tx_x) {
            *r = t + (r.clone() - t) * (0.5f64).sqrt();
        }
        for (r, t) in sub13.rx_y.iter_mut().zip(&sub13.tx_y) {
            *r = t + (r.clone() - t) * (0.5f64).sqrt();
        }
        let r = estimate_snr(&[sub10, sub13]).unwrap();
        let expected = lin_to_db((crate::db_to_lin(10.0) + crate::db_to_lin(13.0)) / 2.0);
        assert!((r.snr_db_mean - expected).abs() < 0.1, "mean {}", r.snr_db_mean);
    }

    #[test]
    fn back_to_back_chain_is_transparent() {
        let ch = sc_channel(2048, 11);
        let cfg = RxChainConfig { mimo_mode: MimoMode::Sc4x4, ..Default::default() };
        let report =
            run_receiver(ch.waveform.clone(), &ch, &LinkLinear::none(), None, &cfg).unwrap();
        assert!(report.snr_db_mean > 35.0, "b2b snr {}", report.snr_db_mean);
    }

    #[test]
    fn ideal_receiver_handles_rotation_and_scale() {
        let ch = sc_channel(502, 12);
        let mut w = ch.waveform.clone();
        // Constant polarization rotation plus gain: the LS alignment must
        // absorb it entirely.
        let a = Complex64::from_polar(0.8, 0.3);
        let b = Complex64::from_polar(0.6, -1.1);
        for i in 0..w.len() {
            let x = w.x[i];
            let y = w.y[i];
            w.x[i] = a * x + b * y;
            w.y[i] = -b.conj() * x + a.conj() * y;
        }
        w.scale(3.0);
        let nsr = ideal_receiver_nsr(&w, &ch, &LinkLinear::none()).unwrap();
        assert!(nsr < 1e-9, "nsr {nsr}");
    }
}
