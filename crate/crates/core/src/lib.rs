//! Coherent optical transmission simulation at desk scale.
//!
//! The crate models a dual-polarization fiber link end to end: shaped QAM
//! transmitters (single-carrier or digital multi-carrier), split-step
//! Manakov propagation over amplified spans, a pilot-aided coherent
//! receiver DSP stack, and the closed-form SNR-versus-distance link model
//! that ties the pieces together.
//!
//! Modules:
//! - [`shaping`]: constellations, Maxwell-Boltzmann shaping, GMI estimation
//! - [`txchain`]: symbol frames, RRC pulse shaping, subcarrier/WDM muxing,
//!   transmitter impairments
//! - [`fibersim`]: split-step Fourier propagation, EDFAs, polarization
//!   scrambling
//! - [`rxdsp`]: chromatic dispersion compensation, polarization demux,
//!   carrier recovery, real-valued MIMO, SNR estimation
//! - [`linkmodel`]: nonlinear-coefficient fitting and the analytic SNR model
//! - [`waveform`]: the shared dual-polarization sample container and its
//!   binary serialization

pub mod fft;
pub mod fibersim;
pub mod linkmodel;
pub mod rng;
pub mod rxdsp;
pub mod shaping;
pub mod txchain;
pub mod waveform;

pub use waveform::DualPolWaveform;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Convert a dispersion coefficient from ps/(nm·km) to SI s/m².
pub fn dispersion_si(d_ps_nm_km: f64) -> f64 {
    d_ps_nm_km * 1e-6
}

/// Group-velocity dispersion β₂ (s²/m) from the dispersion coefficient
/// D (ps/nm/km) at reference frequency `f_hz`: β₂ = −D·λ²/(2πc).
pub fn beta2_from_dispersion(d_ps_nm_km: f64, f_hz: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / f_hz;
    -dispersion_si(d_ps_nm_km) * lambda * lambda / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT)
}

/// dB to linear power ratio.
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear power ratio to dB.
pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// dBm to mW.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}
