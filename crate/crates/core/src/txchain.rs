//! Transmitter chain: shaped symbol frames with pilots, root-raised-cosine
//! pulse shaping, digital subcarrier multiplexing, WDM aggregation and
//! synthetic transmitter impairments.
//!
//! Pulse shaping and multiplexing are done spectrally on cyclic frames, so
//! a matched transmit/receive RRC pair is Nyquist-exact and subcarrier
//! offsets snap to the FFT bin grid.

use crate::fft::{bin_freq_hz, fft_inplace, ifft_inplace};
use crate::rng::{derive_rng, gaussian_pair};
use crate::shaping::{draw_symbol_index, ShapedConstellation};
use crate::waveform::DualPolWaveform;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TxError {
    #[error("subcarrier plan invalid: {0}")]
    InvalidPlan(String),
    #[error("samples per symbol {sps} below aliasing bound {min} for rolloff {rolloff}")]
    AliasingPrecondition { sps: f64, min: f64, rolloff: f64 },
    #[error("sample rate {fs} Hz is not an integer multiple of baud {baud} Hz")]
    NonIntegerSps { fs: f64, baud: f64 },
    #[error("subcarrier streams mismatched: {0}")]
    MismatchedStreams(String),
    #[error("channel slots overlap: [{lo0:.3e}, {hi0:.3e}] and [{lo1:.3e}, {hi1:.3e}] Hz")]
    SlotOverlap { lo0: f64, hi0: f64, lo1: f64, hi1: f64 },
    #[error("band sample rate {band_fs:.3e} Hz cannot hold a channel reaching {edge:.3e} Hz")]
    BandTooNarrow { band_fs: f64, edge: f64 },
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
}

/// Digital subcarrier layout of one WDM channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierPlan {
    pub m_subcarriers: usize,
    pub aggregate_baud_hz: f64,
    pub rolloff: f64,
    pub spacing_hz: f64,
}

impl SubcarrierPlan {
    /// Plan with the default spacing (R/M)·(1+rolloff).
    pub fn new(m_subcarriers: usize, aggregate_baud_hz: f64, rolloff: f64) -> Result<Self, TxError> {
        let per = aggregate_baud_hz / m_subcarriers as f64;
        Self::with_spacing(m_subcarriers, aggregate_baud_hz, rolloff, per * (1.0 + rolloff))
    }

    pub fn with_spacing(
        m_subcarriers: usize,
        aggregate_baud_hz: f64,
        rolloff: f64,
        spacing_hz: f64,
    ) -> Result<Self, TxError> {
        if m_subcarriers == 0 {
            return Err(TxError::InvalidPlan("need at least one subcarrier".into()));
        }
        if !(0.0..=1.0).contains(&rolloff) {
            return Err(TxError::InvalidPlan(format!("rolloff {rolloff} outside [0,1]")));
        }
        if aggregate_baud_hz <= 0.0 {
            return Err(TxError::InvalidPlan("aggregate baud must be positive".into()));
        }
        let per = aggregate_baud_hz / m_subcarriers as f64;
        if m_subcarriers > 1 && spacing_hz < per * (1.0 + rolloff) - 1e-6 {
            return Err(TxError::InvalidPlan(format!(
                "spacing {spacing_hz} Hz below non-overlap bound {} Hz",
                per * (1.0 + rolloff)
            )));
        }
        Ok(Self { m_subcarriers, aggregate_baud_hz, rolloff, spacing_hz })
    }

    pub fn per_subcarrier_baud(&self) -> f64 {
        self.aggregate_baud_hz / self.m_subcarriers as f64
    }

    /// Center frequency offset of subcarrier `m` from the channel center.
    pub fn offset_hz(&self, m: usize) -> f64 {
        (m as f64 - (self.m_subcarriers as f64 - 1.0) / 2.0) * self.spacing_hz
    }

    /// Total occupied bandwidth of the composite channel.
    pub fn occupied_bandwidth_hz(&self) -> f64 {
        (self.m_subcarriers as f64 - 1.0) * self.spacing_hz
            + self.per_subcarrier_baud() * (1.0 + self.rolloff)
    }
}

/// Synthetic transmitter impairment knobs. Zero disables each effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxImpairments {
    pub laser_linewidth_hz: f64,
    pub iq_skew_s: f64,
    /// DAC resolution in bits; 0 disables quantization.
    pub quant_bits: u32,
    /// Clipping threshold relative to the per-quadrature RMS.
    pub clip_ratio: f64,
}

impl Default for TxImpairments {
    fn default() -> Self {
        Self { laser_linewidth_hz: 0.0, iq_skew_s: 0.0, quant_bits: 0, clip_ratio: 3.0 }
    }
}

/// One dual-polarization symbol frame: payload symbols drawn i.i.d. from the
/// shaping distribution with unit-energy QPSK pilots at evenly spaced
/// positions. Both polarizations share pilot positions, not pilot values.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub pilot_mask: Vec<bool>,
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_pilots(&self) -> usize {
        self.pilot_mask.iter().filter(|&&m| m).count()
    }
}

/// Largest payload count whose frame (payload + round(rate·payload) pilots)
/// totals exactly `total` symbols, if one exists.
pub fn payload_for_frame_total(total: usize, pilot_rate: f64) -> Option<usize> {
    let guess = (total as f64 / (1.0 + pilot_rate)).round() as usize;
    (guess.saturating_sub(4)..=guess + 4)
        .filter(|&n| n > 0 && n + (pilot_rate * n as f64).round() as usize == total)
        .next_back()
}

/// Generate a dual-polarization frame of `n_payload` shaped symbols plus
/// `round(pilot_rate · n_payload)` QPSK pilots, evenly interleaved.
pub fn generate_symbol_frame(
    shaped: &ShapedConstellation,
    n_payload: usize,
    pilot_rate: f64,
    seed: u64,
) -> SymbolFrame {
    let mut rng = derive_rng(seed, &[0x6672616d65]);
    let mut x = Vec::with_capacity(n_payload);
    let mut y = Vec::with_capacity(n_payload);
    for _ in 0..n_payload {
        x.push(shaped.constellation.points[draw_symbol_index(shaped, &mut rng)]);
        y.push(shaped.constellation.points[draw_symbol_index(shaped, &mut rng)]);
    }
    frame_from_payload(x, y, pilot_rate, seed)
}

/// Interleave QPSK pilots (drawn from `pilot_seed`) into pre-drawn payload
/// symbol streams at evenly spaced positions.
pub fn frame_from_payload(
    payload_x: Vec<Complex64>,
    payload_y: Vec<Complex64>,
    pilot_rate: f64,
    pilot_seed: u64,
) -> SymbolFrame {
    let n_payload = payload_x.len();
    assert_eq!(n_payload, payload_y.len(), "payload polarizations must pair up");
    assert!(n_payload >= 1, "need at least one payload symbol");
    assert!((0.0..=0.1).contains(&pilot_rate), "pilot rate outside [0, 0.1]");
    let n_pilots = (pilot_rate * n_payload as f64).round() as usize;
    let total = n_payload + n_pilots;
    let mut pilot_mask = vec![false; total];
    for i in 0..n_pilots {
        pilot_mask[i * total / n_pilots] = true;
    }
    let mut rng = derive_rng(pilot_seed, &[0x70696c6f74]);
    let qpsk = |rng: &mut rand_chacha::ChaCha12Rng| {
        let b: u8 = rng.gen_range(0..4);
        let a = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(if b & 1 == 0 { a } else { -a }, if b & 2 == 0 { a } else { -a })
    };
    let mut x = Vec::with_capacity(total);
    let mut y = Vec::with_capacity(total);
    let mut payload = payload_x.into_iter().zip(payload_y);
    for &is_pilot in &pilot_mask {
        if is_pilot {
            x.push(qpsk(&mut rng));
            y.push(qpsk(&mut rng));
        } else {
            let (px, py) = payload.next().expect("payload length matches mask");
            x.push(px);
            y.push(py);
        }
    }
    SymbolFrame { x, y, pilot_mask }
}

/// Root-raised-cosine spectral gain at frequency `f` for symbol rate `baud`,
/// scaled so a matched transmit/receive pair samples back to the original
/// symbols exactly (gain² tiles to `sps` under baud-rate aliasing).
pub fn rrc_gain(f: f64, baud: f64, rolloff: f64, sps: f64) -> f64 {
    let af = f.abs();
    let lo = 0.5 * baud * (1.0 - rolloff);
    let hi = 0.5 * baud * (1.0 + rolloff);
    let rc = if rolloff == 0.0 {
        // Half gain at the exact band edge keeps the Nyquist tiling exact.
        let eps = 1e-9 * baud;
        if af < lo - eps {
            1.0
        } else if af <= lo + eps {
            0.5
        } else {
            0.0
        }
    } else if af <= lo {
        1.0
    } else if af < hi {
        0.5 * (1.0 + (std::f64::consts::PI / (baud * rolloff) * (af - lo)).cos())
    } else {
        0.0
    };
    (sps * rc).sqrt()
}

/// RRC-shape one dual-polarization symbol frame into a baseband waveform at
/// `samples_per_symbol · baud` Hz. Matched filtering in [`crate::rxdsp`]
/// recovers the symbols exactly (cyclic Nyquist pair).
pub fn rrc_modulate(
    frame: &SymbolFrame,
    baud_hz: f64,
    rolloff: f64,
    samples_per_symbol: usize,
) -> Result<DualPolWaveform, TxError> {
    let sps = samples_per_symbol as f64;
    let min = 2.0 * (1.0 + rolloff);
    if sps < min {
        return Err(TxError::AliasingPrecondition { sps, min, rolloff });
    }
    let n_sym = frame.len();
    let n = n_sym * samples_per_symbol;
    let fs = baud_hz * sps;
    let shape_one = |syms: &[Complex64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, s) in syms.iter().enumerate() {
            buf[k * samples_per_symbol] = *s;
        }
        fft_inplace(&mut buf);
        for (b, v) in buf.iter_mut().enumerate() {
            *v *= rrc_gain(bin_freq_hz(b, n, fs), baud_hz, rolloff, sps);
        }
        ifft_inplace(&mut buf);
        buf
    };
    Ok(DualPolWaveform {
        x: shape_one(&frame.x),
        y: shape_one(&frame.y),
        sample_rate_hz: fs,
        center_freq_hz: 0.0,
    })
}

/// Frequency-shift each baseband stream to its subcarrier offset and sum.
pub fn subcarrier_mux(
    streams: &[DualPolWaveform],
    plan: &SubcarrierPlan,
) -> Result<DualPolWaveform, TxError> {
    if streams.len() != plan.m_subcarriers {
        return Err(TxError::MismatchedStreams(format!(
            "plan expects {} streams, got {}",
            plan.m_subcarriers,
            streams.len()
        )));
    }
    let first = &streams[0];
    for s in streams {
        if s.len() != first.len() || (s.sample_rate_hz - first.sample_rate_hz).abs() > 1e-6 {
            return Err(TxError::MismatchedStreams(
                "streams differ in length or sample rate".into(),
            ));
        }
    }
    let mut out = DualPolWaveform::zeros(first.len(), first.sample_rate_hz, first.center_freq_hz);
    for (m, s) in streams.iter().enumerate() {
        let mut shifted = s.clone();
        shifted.frequency_shift(plan.offset_hz(m));
        for i in 0..out.len() {
            out.x[i] += shifted.x[i];
            out.y[i] += shifted.y[i];
        }
    }
    Ok(out)
}

/// Combine channels at absolute center frequencies into one full-band field
/// for split-step propagation. Per-channel power is preserved; slot overlap
/// and band overflow are rejected.
pub fn wdm_mux(
    channels: &[(DualPolWaveform, f64)],
    band_center_hz: f64,
    band_sample_rate_hz: f64,
) -> Result<DualPolWaveform, TxError> {
    assert!(!channels.is_empty(), "need at least one channel");
    // Occupied slots, measured spectrally on each channel.
    let mut slots: Vec<(f64, f64)> = Vec::new();
    for (w, f_ch) in channels {
        let bw = w.occupied_bandwidth_hz(0.9999);
        let lo = f_ch - band_center_hz - bw / 2.0;
        let hi = f_ch - band_center_hz + bw / 2.0;
        if lo.abs().max(hi.abs()) > band_sample_rate_hz / 2.0 {
            return Err(TxError::BandTooNarrow {
                band_fs: band_sample_rate_hz,
                edge: lo.abs().max(hi.abs()),
            });
        }
        slots.push((lo, hi));
    }
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.sort_by(|&a, &b| slots[a].0.partial_cmp(&slots[b].0).unwrap());
    for pair in order.windows(2) {
        let (a, b) = (slots[pair[0]], slots[pair[1]]);
        if a.1 > b.0 + 1e-3 {
            return Err(TxError::SlotOverlap { lo0: a.0, hi0: a.1, lo1: b.0, hi1: b.1 });
        }
    }
    let duration = channels[0].0.duration_s();
    let mut out: Option<DualPolWaveform> = None;
    for (w, f_ch) in channels {
        if ((w.duration_s() - duration) / duration).abs() > 1e-9 {
            return Err(TxError::MismatchedStreams("channel durations differ".into()));
        }
        let mut up = w.resample(band_sample_rate_hz)?;
        up.frequency_shift(f_ch - band_center_hz);
        match &mut out {
            None => {
                up.center_freq_hz = band_center_hz;
                out = Some(up);
            }
            Some(acc) => {
                for i in 0..acc.len() {
                    acc.x[i] += up.x[i];
                    acc.y[i] += up.y[i];
                }
            }
        }
    }
    Ok(out.expect("at least one channel"))
}

/// Multiply both polarizations by a common Wiener phase process of the given
/// linewidth (phase increment variance 2π·Δν·Tₛ per sample).
pub fn apply_phase_noise(mut w: DualPolWaveform, linewidth_hz: f64, seed: u64) -> DualPolWaveform {
    assert!(linewidth_hz >= 0.0, "linewidth must be non-negative");
    if linewidth_hz == 0.0 || w.is_empty() {
        return w;
    }
    let mut rng = derive_rng(seed, &[0x7068617365]);
    let sigma = (2.0 * std::f64::consts::PI * linewidth_hz / w.sample_rate_hz).sqrt();
    let mut phase = 0.0f64;
    let n = w.len();
    let mut i = 0;
    while i < n {
        let (g1, g2) = gaussian_pair(&mut rng);
        for g in [g1, g2] {
            if i >= n {
                break;
            }
            phase += sigma * g;
            let rot = Complex64::from_polar(1.0, phase);
            w.x[i] *= rot;
            w.y[i] *= rot;
            i += 1;
        }
    }
    w
}

/// Delay the Q quadrature of both polarizations by `skew_s` relative to I,
/// using an exact band-limited (frequency-domain linear phase) fractional
/// delay.
pub fn apply_iq_skew(mut w: DualPolWaveform, skew_s: f64) -> DualPolWaveform {
    if skew_s == 0.0 || w.is_empty() {
        return w;
    }
    let n = w.len();
    let fs = w.sample_rate_hz;
    let delay_imag = |pol: &mut [Complex64]| {
        let mut q: Vec<Complex64> = pol.iter().map(|v| Complex64::new(v.im, 0.0)).collect();
        fft_inplace(&mut q);
        for (b, v) in q.iter_mut().enumerate() {
            let f = bin_freq_hz(b, n, fs);
            let theta = -2.0 * std::f64::consts::PI * f * skew_s;
            if n % 2 == 0 && b == n / 2 {
                // Nyquist bin must stay real for a real-valued delay.
                *v *= theta.cos();
            } else {
                *v *= Complex64::from_polar(1.0, theta);
            }
        }
        ifft_inplace(&mut q);
        for (dst, src) in pol.iter_mut().zip(&q) {
            dst.im = src.re;
        }
    };
    delay_imag(&mut w.x);
    delay_imag(&mut w.y);
    w
}

/// Clip each quadrature at `clip_ratio · RMS` and round to a uniform grid of
/// step `clip level / 2^bits`. `bits == 0` disables the effect.
pub fn apply_quantization(mut w: DualPolWaveform, bits: u32, clip_ratio: f64) -> DualPolWaveform {
    if bits == 0 || w.is_empty() {
        return w;
    }
    assert!(clip_ratio > 0.0, "clip ratio must be positive");
    let levels = 2f64.powi(bits as i32);
    let n = w.len() as f64;
    let quantize = |v: f64, rms: f64| {
        if rms == 0.0 {
            return v;
        }
        let step = clip_ratio * rms / levels;
        (v / step).round().clamp(-levels, levels) * step
    };
    for stream in [&mut w.x, &mut w.y] {
        let rms_re = (stream.iter().map(|v| v.re * v.re).sum::<f64>() / n).sqrt();
        let rms_im = (stream.iter().map(|v| v.im * v.im).sum::<f64>() / n).sqrt();
        for v in stream.iter_mut() {
            v.re = quantize(v.re, rms_re);
            v.im = quantize(v.im, rms_im);
        }
    }
    w
}

/// Everything the data-aided receiver needs to know about one transmitted
/// channel: the subcarrier plan, the per-subcarrier symbol frames, and the
/// composite baseband waveform.
#[derive(Debug, Clone)]
pub struct ChannelSignal {
    pub plan: SubcarrierPlan,
    pub frames: Vec<SymbolFrame>,
    pub waveform: DualPolWaveform,
}

/// Build one channel: draw one aggregate payload stream, split it
/// round-robin over the subcarriers, shape each at the common channel
/// sample rate, and multiplex. Because the aggregate draw comes first, a
/// single-carrier and an M-subcarrier channel built from the same seed
/// transmit the same payload symbols over the same duration.
pub fn build_channel(
    shaped: &ShapedConstellation,
    plan: &SubcarrierPlan,
    n_payload_per_subcarrier: usize,
    sample_rate_hz: f64,
    pilot_rate: f64,
    seed: u64,
) -> Result<ChannelSignal, TxError> {
    let baud = plan.per_subcarrier_baud();
    let sps_f = sample_rate_hz / baud;
    let sps = sps_f.round() as usize;
    if (sps_f - sps as f64).abs() > 1e-9 || sps == 0 {
        return Err(TxError::NonIntegerSps { fs: sample_rate_hz, baud });
    }
    let m_total = plan.m_subcarriers;
    let n_total = n_payload_per_subcarrier * m_total;
    let mut rng = derive_rng(seed, &[0x6672616d65]);
    let mut agg_x = Vec::with_capacity(n_total);
    let mut agg_y = Vec::with_capacity(n_total);
    for _ in 0..n_total {
        agg_x.push(shaped.constellation.points[draw_symbol_index(shaped, &mut rng)]);
        agg_y.push(shaped.constellation.points[draw_symbol_index(shaped, &mut rng)]);
    }
    let mut frames = Vec::with_capacity(m_total);
    let mut streams = Vec::with_capacity(m_total);
    for m in 0..m_total {
        let px: Vec<Complex64> = agg_x.iter().skip(m).step_by(m_total).copied().collect();
        let py: Vec<Complex64> = agg_y.iter().skip(m).step_by(m_total).copied().collect();
        let frame =
            frame_from_payload(px, py, pilot_rate, crate::rng::derive_seed(seed, &[m as u64]));
        streams.push(rrc_modulate(&frame, baud, plan.rolloff, sps)?);
        frames.push(frame);
    }
    let waveform = subcarrier_mux(&streams, plan)?;
    Ok(ChannelSignal { plan: plan.clone(), frames, waveform })
}
