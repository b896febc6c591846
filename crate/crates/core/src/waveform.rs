//! Dual-polarization complex baseband waveform and its binary file format.
//!
//! Samples are in √W units: `|sample|²` is instantaneous power in watts.
//! The on-disk format ("FLW1") is little-endian: a 4-byte magic `FLW1`,
//! sample rate (f64), absolute center frequency (f64), sample count (u64),
//! followed by the samples interleaved per index as
//! `x.re, x.im, y.re, y.im` (f64 each).

use crate::fft::{bin_freq_hz, fft_inplace, ifft_inplace};
use num_complex::Complex64;
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("polarization lengths differ: x has {x}, y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("resampling {from} Hz -> {to} Hz does not give an integer sample count")]
    NonIntegerResample { from: f64, to: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected FLW1")]
    BadMagic,
    #[error("file truncated")]
    Truncated,
}

/// Complex baseband field of both polarizations at a common sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolWaveform {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
}

impl DualPolWaveform {
    pub fn new(
        x: Vec<Complex64>,
        y: Vec<Complex64>,
        sample_rate_hz: f64,
        center_freq_hz: f64,
    ) -> Result<Self, WaveformError> {
        if x.len() != y.len() {
            return Err(WaveformError::LengthMismatch { x: x.len(), y: y.len() });
        }
        Ok(Self { x, y, sample_rate_hz, center_freq_hz })
    }

    /// All-zero waveform of `n` samples.
    pub fn zeros(n: usize, sample_rate_hz: f64, center_freq_hz: f64) -> Self {
        Self {
            x: vec![Complex64::new(0.0, 0.0); n],
            y: vec![Complex64::new(0.0, 0.0); n],
            sample_rate_hz,
            center_freq_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Average total power (both polarizations), watts.
    pub fn average_power_w(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .sum();
        sum / self.len() as f64
    }

    /// Peak instantaneous total power, watts.
    pub fn peak_power_w(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, amplitude: f64) {
        for v in self.x.iter_mut().chain(self.y.iter_mut()) {
            *v *= amplitude;
        }
    }

    /// Scale so that the measured average power equals `target_w`.
    pub fn set_average_power_w(&mut self, target_w: f64) {
        let p = self.average_power_w();
        if p > 0.0 {
            self.scale((target_w / p).sqrt());
        }
    }

    /// Cyclic frequency shift by (approximately) `df_hz`, snapped to the
    /// nearest FFT bin so the shifted signal stays periodic. Returns the
    /// shift actually applied. Does not touch `center_freq_hz`.
    pub fn frequency_shift(&mut self, df_hz: f64) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let k = (df_hz * n as f64 / self.sample_rate_hz).round();
        let step = 2.0 * std::f64::consts::PI * k / n as f64;
        // Incremental rotation drifts over 10^4+ samples; recompute directly.
        for i in 0..n {
            let rot = Complex64::from_polar(1.0, step * i as f64);
            self.x[i] *= rot;
            self.y[i] *= rot;
        }
        k * self.sample_rate_hz / n as f64
    }

    /// Spectral resampling to `fs_new`, preserving duration. Downsampling
    /// crops the spectrum (ideal brick-wall); upsampling zero-pads it.
    pub fn resample(&self, fs_new: f64) -> Result<Self, WaveformError> {
        let n = self.len();
        let ratio = fs_new / self.sample_rate_hz;
        let n_new_f = n as f64 * ratio;
        let n_new = n_new_f.round() as usize;
        if n_new == 0 || (n_new_f - n_new as f64).abs() > 1e-6 {
            return Err(WaveformError::NonIntegerResample {
                from: self.sample_rate_hz,
                to: fs_new,
            });
        }
        if n_new == n {
            return Ok(self.clone());
        }
        let resample_one = |src: &[Complex64]| -> Vec<Complex64> {
            let mut spec = src.to_vec();
            fft_inplace(&mut spec);
            let mut out = vec![Complex64::new(0.0, 0.0); n_new];
            // Copy bins below the smaller Nyquist; drop the Nyquist bin itself.
            let keep = n.min(n_new);
            let pos = keep.div_ceil(2);
            let neg = keep / 2;
            let amp = n_new as f64 / n as f64;
            for i in 0..pos {
                out[i] = spec[i] * amp;
            }
            for i in 1..neg {
                out[n_new - i] = spec[n - i] * amp;
            }
            ifft_inplace(&mut out);
            out
        };
        Ok(Self {
            x: resample_one(&self.x),
            y: resample_one(&self.y),
            sample_rate_hz: fs_new,
            center_freq_hz: self.center_freq_hz,
        })
    }

    /// Serialize in the FLW1 layout described in the module docs.
    pub fn write_flw1<W: Write>(&self, w: &mut W) -> Result<(), WaveformError> {
        w.write_all(b"FLW1")?;
        w.write_all(&self.sample_rate_hz.to_le_bytes())?;
        w.write_all(&self.center_freq_hz.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (a, b) in self.x.iter().zip(&self.y) {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
            w.write_all(&b.re.to_le_bytes())?;
            w.write_all(&b.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_flw1<R: Read>(r: &mut R) -> Result<Self, WaveformError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| WaveformError::Truncated)?;
        if &magic != b"FLW1" {
            return Err(WaveformError::BadMagic);
        }
        let mut f8 = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64, WaveformError> {
            r.read_exact(&mut f8).map_err(|_| WaveformError::Truncated)?;
            Ok(f64::from_le_bytes(f8))
        };
        let sample_rate_hz = read_f64(r)?;
        let center_freq_hz = read_f64(r)?;
        let mut u8buf = [0u8; 8];
        r.read_exact(&mut u8buf).map_err(|_| WaveformError::Truncated)?;
        let n = u64::from_le_bytes(u8buf) as usize;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut sample = [0u8; 32];
        for _ in 0..n {
            r.read_exact(&mut sample).map_err(|_| WaveformError::Truncated)?;
            let f = |o: usize| f64::from_le_bytes(sample[o..o + 8].try_into().unwrap());
            x.push(Complex64::new(f(0), f(8)));
            y.push(Complex64::new(f(16), f(24)));
        }
        Self::new(x, y, sample_rate_hz, center_freq_hz)
    }

    /// Power spectrum |X(f)|²+|Y(f)|² per bin, and the bin frequencies.
    pub fn power_spectrum(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut sx = self.x.clone();
        let mut sy = self.y.clone();
        fft_inplace(&mut sx);
        fft_inplace(&mut sy);
        let p: Vec<f64> = sx
            .iter()
            .zip(&sy)
            .map(|(a, b)| (a.norm_sqr() + b.norm_sqr()) / (n as f64 * n as f64))
            .collect();
        let f: Vec<f64> = (0..n).map(|i| bin_freq_hz(i, n, self.sample_rate_hz)).collect();
        (p, f)
    }

    /// Width of the smallest symmetric band around 0 Hz containing
    /// `fraction` of the total power.
    pub fn occupied_bandwidth_hz(&self, fraction: f64) -> f64 {
        let (p, f) = self.power_spectrum();
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| f[a].abs().partial_cmp(&f[b].abs()).unwrap());
        let mut acc = 0.0;
        let mut half_width: f64 = 0.0;
        for idx in order {
            acc += p[idx];
            half_width = half_width.max(f[idx].abs());
            if acc >= fraction * total {
                break;
            }
        }
        let bin = self.sample_rate_hz / self.len() as f64;
        2.0 * half_width + bin
    }
}
