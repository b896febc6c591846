//! Analytic link machinery: nonlinear-coefficient extraction, nonlinear
//! threshold, ASE accounting and the closed-form SNR model with an
//! equalization-enhanced phase noise (EEPN) term.
//!
//! The model inverts the sum of three reciprocal-SNR contributions:
//! a back-to-back ceiling 1/(η·s₀), the EEPN term πcDRLΔϑ/(2ζMf₀²), and the
//! nonlinear-threshold term (3/2^(2/3))·(a·N₀²/M²)^(1/3).

use crate::{PLANCK, SPEED_OF_LIGHT};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinkModelError {
    #[error("distortion variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("launch power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("nonphysical parameter: {0}")]
    NonPhysical(String),
    #[error("nonlinear-coefficient table does not cover distance {0} km")]
    TableGap(f64),
    #[error("unknown scheme '{0}': expected SC or MC<m>")]
    BadScheme(String),
}

/// Signaling scheme: single carrier or M digital subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Sc,
    Mc(usize),
}

impl Scheme {
    pub fn subcarriers(&self) -> usize {
        match self {
            Scheme::Sc => 1,
            Scheme::Mc(m) => *m,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Sc => write!(f, "SC"),
            Scheme::Mc(m) => write!(f, "MC{m}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = LinkModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let u = s.trim().to_ascii_uppercase();
        if u == "SC" {
            return Ok(Scheme::Sc);
        }
        if let Some(m) = u.strip_prefix("MC") {
            if let Ok(m) = m.parse::<usize>() {
                if m >= 1 {
                    return Ok(Scheme::Mc(m));
                }
            }
        }
        Err(LinkModelError::BadScheme(s.to_string()))
    }
}

/// One fitted nonlinear coefficient: σ_N²[mW] = a_nli·P³[mW³].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NliFit {
    pub a_nli_per_mw2: f64,
    pub distance_km: f64,
    pub scheme: Scheme,
    pub entropy_bits: f64,
    /// Largest |deviation| of the fitted cubic law from the measured
    /// points, dB; 0 for single-point fits.
    pub residual_db: f64,
}

/// Single-point nonlinear coefficient: a = σ_N²/P³.
pub fn fit_anli(sigma_n2_mw: f64, launch_power_mw: f64) -> Result<f64, LinkModelError> {
    if sigma_n2_mw <= 0.0 {
        return Err(LinkModelError::NonPositiveVariance(sigma_n2_mw));
    }
    if launch_power_mw <= 0.0 {
        return Err(LinkModelError::NonPositivePower(launch_power_mw));
    }
    Ok(sigma_n2_mw / launch_power_mw.powi(3))
}

/// Least-squares fit of log σ² against 3·log P with the slope fixed at 3.
/// Returns the coefficient and the largest absolute residual in dB.
pub fn fit_anli_multi(points: &[(f64, f64)]) -> Result<(f64, f64), LinkModelError> {
    if points.is_empty() {
        return Err(LinkModelError::NonPhysical("no fit points".into()));
    }
    let mut acc = 0.0;
    for &(p_mw, sigma2_mw) in points {
        if sigma2_mw <= 0.0 {
            return Err(LinkModelError::NonPositiveVariance(sigma2_mw));
        }
        if p_mw <= 0.0 {
            return Err(LinkModelError::NonPositivePower(p_mw));
        }
        acc += sigma2_mw.log10() - 3.0 * p_mw.log10();
    }
    let log_a = acc / points.len() as f64;
    let residual_db = points
        .iter()
        .map(|&(p, s)| 10.0 * (s.log10() - (log_a + 3.0 * p.log10())).abs())
        .fold(0.0, f64::max);
    Ok((10f64.powf(log_a), residual_db))
}

/// Nonlinear threshold: the launch power maximizing
/// SNR(P) = P/(σ_ASE² + a·P³), namely (σ_ASE²/(2a))^(1/3).
pub fn nlt_power_mw(a_nli_per_mw2: f64, sigma_ase2_mw: f64) -> Result<f64, LinkModelError> {
    if a_nli_per_mw2 <= 0.0 {
        return Err(LinkModelError::NonPhysical(format!("a_nli {a_nli_per_mw2}")));
    }
    if sigma_ase2_mw <= 0.0 {
        return Err(LinkModelError::NonPhysical(format!("sigma_ase2 {sigma_ase2_mw}")));
    }
    Ok((sigma_ase2_mw / (2.0 * a_nli_per_mw2)).cbrt())
}

/// Accumulated ASE variance in watts over the given bandwidth, per
/// polarization: N₀ = n_spans·(G−1)·h·f₀·n_sp·B with
/// n_sp = NF·G/(2(G−1)). Dual-polarization budgets take twice this.
pub fn ase_variance_w(
    nf_db: f64,
    span_gain_db: f64,
    n_spans: usize,
    f0_hz: f64,
    bandwidth_hz: f64,
) -> f64 {
    let g = crate::db_to_lin(span_gain_db);
    if g <= 1.0 {
        return 0.0;
    }
    let nsp = crate::db_to_lin(nf_db) * g / (2.0 * (g - 1.0));
    n_spans as f64 * (g - 1.0) * PLANCK * f0_hz * nsp * bandwidth_hz
}

/// Full parameter set of the closed-form SNR model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrModelParams {
    /// SNR-ceiling improvement factor of MC relative to SC (linear).
    pub eta: f64,
    /// Back-to-back single-carrier SNR ceiling (linear).
    pub s0: f64,
    /// Channel frequency, Hz.
    pub f0_hz: f64,
    /// Dispersion coefficient, s/m² (SI).
    pub d_s_per_m2: f64,
    /// Single-carrier (aggregate) baud rate, symbols/s.
    pub r_baud: f64,
    /// Transmission distance, m.
    pub l_m: f64,
    /// Laser linewidth Δϑ, Hz.
    pub delta_theta_hz: f64,
    /// EEPN overestimation correction ζ.
    pub zeta: f64,
    /// Subcarrier count M.
    pub m: usize,
    /// Nonlinear coefficient, 1/mW².
    pub a_nli_per_mw2: f64,
    /// ASE variance, mW, in the same power normalization as s₀.
    pub n0_mw: f64,
}

impl SnrModelParams {
    fn validate(&self) -> Result<(), LinkModelError> {
        let positive = [
            ("eta", self.eta),
            ("s0", self.s0),
            ("f0_hz", self.f0_hz),
            ("r_baud", self.r_baud),
            ("zeta", self.zeta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(LinkModelError::NonPhysical(format!("{name} = {v}")));
            }
        }
        let non_negative = [
            ("d_s_per_m2", self.d_s_per_m2),
            ("l_m", self.l_m),
            ("delta_theta_hz", self.delta_theta_hz),
            ("a_nli_per_mw2", self.a_nli_per_mw2),
            ("n0_mw", self.n0_mw),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(LinkModelError::NonPhysical(format!("{name} = {v}")));
            }
        }
        if self.m == 0 {
            return Err(LinkModelError::NonPhysical("m = 0".into()));
        }
        Ok(())
    }
}

/// Reciprocal-SNR contributions of the three model terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrBreakdown {
    pub inv_ceiling: f64,
    pub inv_eepn: f64,
    pub inv_nli: f64,
    /// The modeled linear SNR: 1/(sum of the three terms).
    pub snr: f64,
}

/// EEPN reciprocal-SNR term: πcDRLΔϑ/(2ζMf₀²) (dimensionless).
pub fn eepn_term(p: &SnrModelParams) -> f64 {
    std::f64::consts::PI * SPEED_OF_LIGHT * p.d_s_per_m2 * p.r_baud * p.l_m * p.delta_theta_hz
        / (2.0 * p.zeta * p.m as f64 * p.f0_hz * p.f0_hz)
}

/// Evaluate the closed-form SNR model, reporting each term separately.
pub fn snr_model(p: &SnrModelParams) -> Result<SnrBreakdown, LinkModelError> {
    p.validate()?;
    let inv_ceiling = 1.0 / (p.eta * p.s0);
    let inv_eepn = eepn_term(p);
    let sigma2 = p.n0_mw / p.m as f64;
    let inv_nli = 3.0 / 2f64.powf(2.0 / 3.0) * (p.a_nli_per_mw2 * sigma2 * sigma2).cbrt();
    let snr = 1.0 / (inv_ceiling + inv_eepn + inv_nli);
    Ok(SnrBreakdown { inv_ceiling, inv_eepn, inv_nli, snr })
}

/// Interpolate the nonlinear coefficient at `distance_km` from a sorted
/// (distance, a_nli) table. No extrapolation: gaps are errors.
pub fn interp_anli(table: &[(f64, f64)], distance_km: f64) -> Result<f64, LinkModelError> {
    if table.is_empty() {
        return Err(LinkModelError::TableGap(distance_km));
    }
    let eps = 1e-9 * distance_km.abs().max(1.0);
    for w in table.windows(2) {
        debug_assert!(w[0].0 <= w[1].0, "table must be sorted by distance");
    }
    let (first, last) = (table[0], table[table.len() - 1]);
    if distance_km < first.0 - eps || distance_km > last.0 + eps {
        return Err(LinkModelError::TableGap(distance_km));
    }
    for w in table.windows(2) {
        if distance_km <= w[1].0 + eps {
            let (d0, a0) = w[0];
            let (d1, a1) = w[1];
            if (d1 - d0).abs() < eps {
                return Ok(a0);
            }
            let t = ((distance_km - d0) / (d1 - d0)).clamp(0.0, 1.0);
            return Ok(a0 + t * (a1 - a0));
        }
    }
    Ok(last.1)
}

/// One row of an SNR-versus-distance model curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePoint {
    pub distance_km: f64,
    pub a_nli_per_mw2: f64,
    pub n0_mw: f64,
    pub breakdown: SnrBreakdown,
}

/// Evaluate the model along a distance axis. The ASE variance scales
/// linearly with the span count (`distance/span_km`), and a_nli comes from
/// the interpolated per-distance table.
pub fn snr_vs_distance_curve(
    base: &SnrModelParams,
    span_km: f64,
    n0_per_span_mw: f64,
    anli_table: &[(f64, f64)],
    distances_km: &[f64],
) -> Result<Vec<DistancePoint>, LinkModelError> {
    if span_km <= 0.0 {
        return Err(LinkModelError::NonPhysical(format!("span_km = {span_km}")));
    }
    let mut out = Vec::with_capacity(distances_km.len());
    for &d in distances_km {
        let a = interp_anli(anli_table, d)?;
        let p = SnrModelParams {
            l_m: d * 1e3,
            a_nli_per_mw2: a,
            n0_mw: n0_per_span_mw * (d / span_km),
            ..*base
        };
        out.push(DistancePoint {
            distance_km: d,
            a_nli_per_mw2: a,
            n0_mw: p.n0_mw,
            breakdown: snr_model(&p)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn base_params() -> SnrModelParams {
        SnrModelParams {
            eta: 1.0,
            s0: 100.0,
            f0_hz: 193.775e12,
            d_s_per_m2: crate::dispersion_si(20.8),
            r_baud: 120e9,
            l_m: 10_890e3,
            delta_theta_hz: 60e3,
            zeta: 3.0,
            m: 1,
            a_nli_per_mw2: 1e-4,
            n0_mw: 1e-3,
        }
    }

    #[test]
    fn fit_anli_examples() {
        assert!((fit_anli(8.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        // Cubic law: doubling P with fixed a scales sigma^2 by 8.
        let a = 0.37;
        let p: f64 = 1.7;
        let s1 = a * p.powi(3);
        let s2 = a * (2.0 * p).powi(3);
        assert!((s2 / s1 - 8.0).abs() < 1e-12);
        let (fit, res) = fit_anli_multi(&[(p, s1), (2.0 * p, s2)]).unwrap();
        assert!((fit - a).abs() < 1e-12);
        assert!(res < 1e-9);
        assert!(fit_anli(-1.0, 1.0).is_err());
        assert!(fit_anli(1.0, 0.0).is_err());
    }

    #[test]
    fn nlt_examples_and_optimality() {
        assert!((nlt_power_mw(1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = derive_rng(5, &[]);
        for _ in 0..50 {
            let a = 10f64.powf(rng.gen_range(-6.0..-2.0));
            let s2 = 10f64.powf(rng.gen_range(-5.0..-1.0));
            let p_opt = nlt_power_mw(a, s2).unwrap();
            let snr = |p: f64| p / (s2 + a * p.powi(3));
            // At the optimum the nonlinear noise is exactly half the ASE.
            assert!((a * p_opt.powi(3) / (s2 / 2.0) - 1.0).abs() < 1e-12);
            for detune in [-0.05f64, 0.05] {
                let p = p_opt * 10f64.powf(detune);
                assert!(snr(p_opt) >= snr(p));
            }
        }
        assert!(nlt_power_mw(0.0, 1.0).is_err());
    }

    #[test]
    fn ase_variance_scalings_and_value() {
        let n0 = ase_variance_w(5.0, 0.157 * 55.0, 18, 193.775e12, 32e9);
        // Direct evaluation of the closed form.
        assert!((n0 - 8.539771743701575e-7).abs() / n0 < 1e-12, "n0 {n0}");
        let double_spans = ase_variance_w(5.0, 0.157 * 55.0, 36, 193.775e12, 32e9);
        assert!((double_spans / n0 - 2.0).abs() < 1e-12);
        let double_bw = ase_variance_w(5.0, 0.157 * 55.0, 18, 193.775e12, 64e9);
        assert!((double_bw / n0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snr_model_ceiling_only() {
        let p = SnrModelParams {
            delta_theta_hz: 0.0,
            a_nli_per_mw2: 0.0,
            n0_mw: 0.0,
            ..base_params()
        };
        let b = snr_model(&p).unwrap();
        assert!((b.snr - 100.0).abs() < 1e-9);
        assert_eq!(b.inv_eepn, 0.0);
        assert_eq!(b.inv_nli, 0.0);
    }

    #[test]
    fn eepn_term_oracle_value_and_scalings() {
        let p = base_params();
        // Independent arithmetic: same quantity, different grouping.
        let expected = {
            let num = std::f64::consts::PI
                * (SPEED_OF_LIGHT / p.f0_hz)
                * (p.d_s_per_m2 / p.f0_hz)
                * p.r_baud
                * p.l_m
                * p.delta_theta_hz;
            num / (2.0 * p.zeta)
        };
        let got = eepn_term(&p);
        assert!((got - expected).abs() / expected < 1e-12);
        assert!((got - 0.0068178516202909685).abs() / got < 1e-9, "eepn {got}");
        // Linear in L, R, linewidth; inverse in M and zeta.
        let scale = |f: &dyn Fn(&mut SnrModelParams)| {
            let mut q = p;
            f(&mut q);
            eepn_term(&q) / got
        };
        assert!((scale(&|q| q.l_m *= 3.0) - 3.0).abs() < 1e-12);
        assert!((scale(&|q| q.r_baud *= 2.0) - 2.0).abs() < 1e-12);
        assert!((scale(&|q| q.delta_theta_hz *= 5.0) - 5.0).abs() < 1e-12);
        assert!((scale(&|q| q.m = 8) - 0.125).abs() < 1e-12);
        assert!((scale(&|q| q.zeta = 6.0) - 0.5).abs() < 1e-12);
        assert!((scale(&|q| q.f0_hz *= 2.0) - 0.25).abs() < 1e-12);
        let zero = SnrModelParams { delta_theta_hz: 0.0, ..p };
        assert_eq!(eepn_term(&zero), 0.0);
    }

    #[test]
    fn eepn_ratio_m1_vs_m8_is_exactly_8() {
        let p1 = base_params();
        let p8 = SnrModelParams { m: 8, ..p1 };
        assert_eq!(eepn_term(&p1) / eepn_term(&p8), 8.0);
    }

    // Golden-section maximization of P/(sigma2 + a P^3); independent of the
    // closed form under test.
    fn max_snr_numeric(a: f64, sigma2: f64) -> f64 {
        let f = |p: f64| p / (sigma2 + a * p * p * p);
        let (mut lo, mut hi): (f64, f64) = (1e-12, 1e9);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        // Work in log-space for bracket robustness.
        let (mut a_, mut b_) = (lo.ln(), hi.ln());
        for _ in 0..300 {
            let c = b_ - phi * (b_ - a_);
            let d = a_ + phi * (b_ - a_);
            if f(c.exp()) >= f(d.exp()) {
                b_ = d;
            } else {
                a_ = c;
            }
        }
        lo = a_.exp();
        hi = b_.exp();
        f(0.5 * (lo + hi))
    }

    #[test]
    fn nli_term_equals_inverse_peak_snr() {
        let mut rng = derive_rng(7, &[]);
        for _ in 0..100 {
            let a = 10f64.powf(rng.gen_range(-7.0..-2.0));
            let n0 = 10f64.powf(rng.gen_range(-5.0..-1.0));
            let m = *[1usize, 2, 4, 8].iter().nth(rng.gen_range(0..4)).unwrap();
            let p = SnrModelParams {
                delta_theta_hz: 0.0,
                s0: 1e12,
                a_nli_per_mw2: a,
                n0_mw: n0,
                m,
                ..base_params()
            };
            let b = snr_model(&p).unwrap();
            let peak = max_snr_numeric(a, n0 / m as f64);
            assert!(
                (b.inv_nli - 1.0 / peak).abs() / b.inv_nli < 1e-12,
                "term {} vs 1/peak {}",
                b.inv_nli,
                1.0 / peak
            );
        }
    }

    #[test]
    fn model_rejects_nonphysical() {
        let p = SnrModelParams { s0: -1.0, ..base_params() };
        assert!(snr_model(&p).is_err());
        let p = SnrModelParams { m: 0, ..base_params() };
        assert!(snr_model(&p).is_err());
    }

    #[test]
    fn distance_curve_monotone_and_gap_checked() {
        let base = base_params();
        let table = vec![(500.0, 5e-5), (1000.0, 8e-5), (2000.0, 1.2e-4)];
        let distances = vec![500.0, 750.0, 1000.0, 1500.0, 2000.0];
        let rows = snr_vs_distance_curve(&base, 55.0, 2e-5, &table, &distances).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].breakdown.snr < w[0].breakdown.snr, "snr must fall with distance");
        }
        assert!(matches!(
            snr_vs_distance_curve(&base, 55.0, 2e-5, &table, &[2500.0]),
            Err(LinkModelError::TableGap(_))
        ));
        // zeta -> infinity kills the EEPN term.
        let no_eepn = SnrModelParams { zeta: 1e18, ..base };
        let rows2 = snr_vs_distance_curve(&no_eepn, 55.0, 2e-5, &table, &distances).unwrap();
        for r in &rows2 {
            assert!(r.breakdown.inv_eepn < 1e-20);
        }
        // The modeled SC-MC gap grows with distance at 250 kHz.
        let sc = SnrModelParams { delta_theta_hz: 250e3, m: 1, ..base };
        let mc = SnrModelParams { delta_theta_hz: 250e3, m: 8, ..base };
        let g = |d: f64| {
            let s = snr_vs_distance_curve(&sc, 55.0, 2e-5, &table, &[d]).unwrap()[0].breakdown.snr;
            let m = snr_vs_distance_curve(&mc, 55.0, 2e-5, &table, &[d]).unwrap()[0].breakdown.snr;
            crate::lin_to_db(m) - crate::lin_to_db(s)
        };
        assert!(g(2000.0) > g(500.0));
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("sc".parse::<Scheme>().unwrap(), Scheme::Sc);
        assert_eq!("MC8".parse::<Scheme>().unwrap(), Scheme::Mc(8));
        assert_eq!(Scheme::Mc(8).to_string(), "MC8");
        assert!("mc0".parse::<Scheme>().is_err());
        assert!("qam".parse::<Scheme>().is_err());
    }

    #[test]
    fn interp_anli_behaviour() {
        let table = vec![(100.0, 1.0), (200.0, 3.0)];
        assert!((interp_anli(&table, 150.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((interp_anli(&table, 100.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((interp_anli(&table, 200.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(interp_anli(&table, 99.0).is_err());
        assert!(interp_anli(&[], 100.0).is_err());
    }
}
