//! Temperature-dependent optical models for quantum-dot lines and the cavity
//! mode, and Lorentzian spectrum synthesis.
//!
//! Both the QD line and the cavity red-shift quadratically in temperature:
//! the QD moves by `α (T² − T_ref²)` and the cavity by the same amount divided
//! by a fixed ratio `r > 1`. Cavity loss grows linearly in `T² − T_ref²`.
//! QD lines inside the cavity linewidth are brightened by a Lorentzian
//! spectral-overlap Purcell factor.

mod peaks;

pub use peaks::{find_peaks, FittedPeak};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// QD shift coefficient fixed by 0 nm at 10 K and 1.8 nm at 40 K.
pub const DEFAULT_ALPHA_NM_PER_K2: f64 = 1.8 / (40.0 * 40.0 - 10.0 * 10.0);
/// Shift up to which QD emission intensity stays flat, nm.
pub const DEFAULT_ROLLOFF_SHIFT_NM: f64 = 1.4;
/// Largest usable QD shift, nm.
pub const DEFAULT_MAX_SHIFT_NM: f64 = 1.8;
/// Cold and fully broadened QD linewidths, nm.
pub const DEFAULT_FWHM0_NM: f64 = 0.04;
pub const BROADENED_FWHM_NM: f64 = 0.08;
/// QD shift divided by cavity shift at equal temperature.
pub const DEFAULT_SHIFT_RATIO: f64 = 2.917;
/// Cavity Q before and after heating to the 1.4 nm operating point.
pub const COLD_Q: f64 = 7600.0;
pub const HOT_Q: f64 = 4900.0;
/// Cavity Q used for the QD-to-cavity alignment scenes.
pub const ALIGNMENT_Q: f64 = 9000.0;
/// Peak Purcell enhancement on exact resonance.
pub const DEFAULT_PURCELL_F0: f64 = 5.0;
/// Fraction of base intensity left at `max_shift`.
pub const ROLLOFF_FLOOR: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("temperature {t} K is below the reference {t_ref} K")]
    BelowReference { t: f64, t_ref: f64 },
    #[error("tuning range exceeded for {id}: shift {shift_nm:.4} nm > {max_nm} nm")]
    TuningRangeExceeded {
        id: String,
        shift_nm: f64,
        max_nm: f64,
    },
    #[error("shift must be non-negative (got {0} nm)")]
    NegativeShift(f64),
    #[error("spectral window [{lo}, {hi}] nm is empty")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("need at least 2 samples (got {0})")]
    TooFewSamples(usize),
}

fn quadratic_term(t: f64, t_ref: f64) -> Result<f64, SpectralError> {
    if t < t_ref || t.is_nan() {
        return Err(SpectralError::BelowReference { t, t_ref });
    }
    Ok(t * t - t_ref * t_ref)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdState {
    pub id: String,
    /// Emission wavelength at the reference temperature, nm.
    pub lambda0_nm: f64,
    pub fwhm0_nm: f64,
    /// nm·K⁻².
    pub alpha: f64,
    /// FWHM growth per nm of shift.
    pub fwhm_slope: f64,
    pub base_intensity: f64,
    pub rolloff_shift_nm: f64,
    pub max_shift_nm: f64,
}

impl QdState {
    pub fn new(id: impl Into<String>, lambda0_nm: f64) -> Self {
        Self {
            id: id.into(),
            lambda0_nm,
            fwhm0_nm: DEFAULT_FWHM0_NM,
            alpha: DEFAULT_ALPHA_NM_PER_K2,
            fwhm_slope: (BROADENED_FWHM_NM - DEFAULT_FWHM0_NM) / DEFAULT_ROLLOFF_SHIFT_NM,
            base_intensity: 1.0,
            rolloff_shift_nm: DEFAULT_ROLLOFF_SHIFT_NM,
            max_shift_nm: DEFAULT_MAX_SHIFT_NM,
        }
    }

    pub fn shift_nm(&self, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
        Ok(self.alpha * quadratic_term(t, t_ref)?)
    }

    /// Rejects shifts beyond the usable tuning range.
    pub fn check_shift(&self, shift_nm: f64) -> Result<(), SpectralError> {
        if shift_nm > self.max_shift_nm {
            Err(SpectralError::TuningRangeExceeded {
                id: self.id.clone(),
                shift_nm,
                max_nm: self.max_shift_nm,
            })
        } else {
            Ok(())
        }
    }

    pub fn linewidth_at_shift(&self, shift_nm: f64) -> f64 {
        self.fwhm0_nm + self.fwhm_slope * shift_nm
    }

    /// Flat up to the roll-off shift, then linear down to 10% at `max_shift`.
    pub fn intensity_at_shift(&self, shift_nm: f64) -> Result<f64, SpectralError> {
        self.check_shift(shift_nm)?;
        if shift_nm <= self.rolloff_shift_nm {
            return Ok(self.base_intensity);
        }
        let span = self.max_shift_nm - self.rolloff_shift_nm;
        let frac = (shift_nm - self.rolloff_shift_nm) / span;
        Ok(self.base_intensity * (1.0 - (1.0 - ROLLOFF_FLOOR) * frac))
    }
}

pub fn qd_wavelength(qd: &QdState, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
    Ok(qd.lambda0_nm + qd.shift_nm(t, t_ref)?)
}

pub fn qd_linewidth(qd: &QdState, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
    Ok(qd.linewidth_at_shift(qd.shift_nm(t, t_ref)?))
}

pub fn qd_intensity(qd: &QdState, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
    qd.intensity_at_shift(qd.shift_nm(t, t_ref)?)
}

/// `1/Q` growth per K² that takes `q_cold` to `q_hot` over `delta_t2`.
pub fn calibrate_q_slope(q_cold: f64, q_hot: f64, delta_t2: f64) -> f64 {
    (1.0 / q_hot - 1.0 / q_cold) / delta_t2
}

/// `T² − T_ref²` at which the default QD has shifted by the roll-off shift,
/// i.e. the operating point the hot cavity Q was observed at.
fn default_hot_delta_t2() -> f64 {
    DEFAULT_ROLLOFF_SHIFT_NM / DEFAULT_ALPHA_NM_PER_K2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityState {
    pub lambda0_nm: f64,
    pub q0: f64,
    /// QD shift ÷ cavity shift at equal temperature.
    pub shift_ratio: f64,
    /// K⁻².
    pub q_slope: f64,
    /// Coefficient of the QD-like shift law the cavity follows, nm·K⁻².
    pub alpha: f64,
    pub purcell_f0: f64,
    /// Height of the cavity's own emission peak (0 hides it).
    pub peak_height: f64,
}

impl CavityState {
    pub fn new(lambda0_nm: f64, q0: f64) -> Self {
        Self {
            lambda0_nm,
            q0,
            shift_ratio: DEFAULT_SHIFT_RATIO,
            q_slope: calibrate_q_slope(COLD_Q, HOT_Q, default_hot_delta_t2()),
            alpha: DEFAULT_ALPHA_NM_PER_K2,
            purcell_f0: DEFAULT_PURCELL_F0,
            peak_height: 0.0,
        }
    }

    pub fn qd_like_shift(&self, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
        Ok(self.alpha * quadratic_term(t, t_ref)?)
    }

    pub fn wavelength_at(&self, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
        cavity_wavelength(self, self.qd_like_shift(t, t_ref)?)
    }

    pub fn fwhm_at(&self, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
        Ok(self.wavelength_at(t, t_ref)? / cavity_q(self, t, t_ref)?)
    }
}

pub fn cavity_wavelength(cav: &CavityState, qd_like_shift: f64) -> Result<f64, SpectralError> {
    if qd_like_shift < 0.0 || qd_like_shift.is_nan() {
        return Err(SpectralError::NegativeShift(qd_like_shift));
    }
    Ok(cav.lambda0_nm + qd_like_shift / cav.shift_ratio)
}

pub fn cavity_q(cav: &CavityState, t: f64, t_ref: f64) -> Result<f64, SpectralError> {
    Ok(1.0 / (1.0 / cav.q0 + cav.q_slope * quadratic_term(t, t_ref)?))
}

/// Emission enhancement of a line at `qd_lambda` by a Lorentzian cavity mode,
/// from 1 far off resonance to `f0` on resonance.
pub fn purcell_factor(qd_lambda: f64, cav_lambda: f64, cav_fwhm: f64, f0: f64) -> f64 {
    debug_assert!(cav_fwhm > 0.0 && f0 >= 1.0);
    let x = 2.0 * (qd_lambda - cav_lambda) / cav_fwhm;
    1.0 + (f0 - 1.0) / (1.0 + x * x)
}

#[inline]
pub fn lorentzian(lambda: f64, center: f64, fwhm: f64, height: f64) -> f64 {
    let x = 2.0 * (lambda - center) / fwhm;
    height / (1.0 + x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakKind {
    Qd,
    Cavity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub kind: PeakKind,
    pub id: String,
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub wavelengths_nm: Vec<f64>,
    pub intensities: Vec<f64>,
    pub peaks: Vec<Peak>,
}

impl Spectrum {
    pub fn peak(&self, id: &str) -> Option<&Peak> {
        self.peaks.iter().find(|p| p.id == id)
    }
}

/// Inclusive evenly spaced sample grid.
pub fn sample_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, SpectralError> {
    if n < 2 {
        return Err(SpectralError::TooFewSamples(n));
    }
    if !(hi > lo) {
        return Err(SpectralError::EmptyWindow { lo, hi });
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|k| if k + 1 == n { hi } else { lo + k as f64 * step })
        .collect())
}

/// Annotated peaks of a scene at structure temperature `t`.
pub fn scene_peaks(
    qds: &[QdState],
    cav: &CavityState,
    t: f64,
    t_ref: f64,
) -> Result<Vec<Peak>, SpectralError> {
    let cav_lambda = cav.wavelength_at(t, t_ref)?;
    let cav_fwhm = cav.fwhm_at(t, t_ref)?;
    let mut peaks = Vec::with_capacity(qds.len() + 1);
    for qd in qds {
        let shift = qd.shift_nm(t, t_ref)?;
        let center = qd.lambda0_nm + shift;
        let height = qd.intensity_at_shift(shift)?
            * purcell_factor(center, cav_lambda, cav_fwhm, cav.purcell_f0);
        peaks.push(Peak {
            kind: PeakKind::Qd,
            id: qd.id.clone(),
            center_nm: center,
            fwhm_nm: qd.linewidth_at_shift(shift),
            height,
        });
    }
    peaks.push(Peak {
        kind: PeakKind::Cavity,
        id: "cavity".into(),
        center_nm: cav_lambda,
        fwhm_nm: cav_fwhm,
        height: cav.peak_height,
    });
    Ok(peaks)
}

/// Samples the sum of every Lorentzian line in the scene over `window`.
pub fn synthesize_spectrum(
    qds: &[QdState],
    cav: &CavityState,
    t: f64,
    t_ref: f64,
    window: (f64, f64),
    n_samples: usize,
) -> Result<Spectrum, SpectralError> {
    let wavelengths_nm = sample_grid(window.0, window.1, n_samples)?;
    let peaks = scene_peaks(qds, cav, t, t_ref)?;
    let intensities = wavelengths_nm
        .iter()
        .map(|&l| {
            peaks
                .iter()
                .map(|p| lorentzian(l, p.center_nm, p.fwhm_nm, p.height))
                .sum()
        })
        .collect();
    Ok(Spectrum {
        wavelengths_nm,
        intensities,
        peaks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const T_REF: f64 = 10.0;

    fn qd() -> QdState {
        QdState::new("qd1", 930.0)
    }

    #[test]
    fn alpha_from_anchor_points() {
        assert!((DEFAULT_ALPHA_NM_PER_K2 - 1.2e-3).abs() < 1e-18);
    }

    #[test]
    fn wavelength_examples() {
        let q = qd();
        assert_eq!(qd_wavelength(&q, 10.0, T_REF).unwrap(), 930.0);
        assert!((q.shift_nm(40.0, T_REF).unwrap() - 1.8).abs() < 1e-12);
        assert!((q.shift_nm(25.0, T_REF).unwrap() - 0.63).abs() < 1e-12);
        assert!(matches!(
            qd_wavelength(&q, 9.0, T_REF),
            Err(SpectralError::BelowReference { .. })
        ));
    }

    #[test]
    fn linewidth_examples() {
        let q = qd();
        assert_eq!(q.linewidth_at_shift(0.0), 0.04);
        assert!((q.linewidth_at_shift(1.4) - 0.08).abs() < 1e-15);
        assert!((q.linewidth_at_shift(0.7) - 0.06).abs() < 1e-15);
        assert_eq!(qd_linewidth(&q, 10.0, T_REF).unwrap(), 0.04);
    }

    #[test]
    fn intensity_examples() {
        let q = qd();
        assert_eq!(q.intensity_at_shift(1.0).unwrap(), 1.0);
        assert_eq!(q.intensity_at_shift(1.4).unwrap(), 1.0);
        assert!((q.intensity_at_shift(1.8).unwrap() - 0.1).abs() < 1e-12);
        assert!((q.intensity_at_shift(1.6).unwrap() - 0.55).abs() < 1e-12);
        let err = q.intensity_at_shift(1.9).unwrap_err();
        assert!(err.to_string().starts_with("tuning range exceeded"));
    }

    #[test]
    fn cavity_wavelength_examples() {
        let c = CavityState::new(931.0, COLD_Q);
        assert_eq!(cavity_wavelength(&c, 0.0).unwrap(), 931.0);
        let d = cavity_wavelength(&c, 1.4).unwrap() - 931.0;
        assert!((d - 0.48).abs() < 0.005, "{d}");
        let half = cavity_wavelength(&c, 0.7).unwrap() - 931.0;
        assert!((half - d / 2.0).abs() < 1e-12);
        assert!(cavity_wavelength(&c, -0.1).is_err());
    }

    #[test]
    fn cavity_q_examples() {
        let c = CavityState::new(931.0, COLD_Q);
        assert_eq!(cavity_q(&c, 10.0, T_REF).unwrap(), 7600.0);
        // operating point: T² − 100 = 1.4 / 1.2e-3
        let t_hot = (100.0_f64 + 1.4 / 1.2e-3).sqrt();
        assert!((t_hot - 35.59).abs() < 1e-3);
        assert!((cavity_q(&c, t_hot, T_REF).unwrap() - 4900.0).abs() < 1e-6);
        assert!((c.q_slope - 6.214516e-8).abs() < 1e-13);
        // 1 mW point, T² − 100 = 388.89: 1/(1/7600 + 6.21452e-8 · 388.89) by hand
        let t1 = (100.0_f64 + 1.4 / 3.6e-3).sqrt();
        assert!((cavity_q(&c, t1, T_REF).unwrap() - 6420.69).abs() < 0.01);
    }

    #[test]
    fn purcell_examples() {
        assert_eq!(purcell_factor(930.0, 930.0, 0.1, 5.0), 5.0);
        assert!((purcell_factor(930.05, 930.0, 0.1, 5.0) - 3.0).abs() < 1e-9);
        let fwhm = 930.0 / 9000.0;
        // 1 + 4 / (1 + (0.5 / 0.103333)²)
        let f = purcell_factor(930.0, 930.25, fwhm, 5.0);
        assert!((f - 1.163846).abs() < 1e-6, "{f}");
    }

    #[test]
    fn scene_with_two_detuned_dots() {
        let cav = CavityState {
            peak_height: 0.3,
            ..CavityState::new(930.35, ALIGNMENT_Q)
        };
        let qds = [QdState::new("qd1", 930.10), QdState::new("qd2", 930.00)];
        let s = synthesize_spectrum(&qds, &cav, 10.0, T_REF, (929.5, 931.0), 3001).unwrap();
        assert_eq!(s.peaks.len(), 3);
        assert_eq!(s.peaks[2].kind, PeakKind::Cavity);
        let maxima = find_peaks(&s, 0.05);
        assert_eq!(maxima.len(), 3, "{maxima:?}");
        assert!(s.intensities.iter().all(|&v| v >= 0.0));
        assert!(s.wavelengths_nm.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn empty_scene_has_only_the_cavity() {
        let cav = CavityState {
            peak_height: 1.0,
            ..CavityState::new(930.0, ALIGNMENT_Q)
        };
        let s = synthesize_spectrum(&[], &cav, 10.0, T_REF, (929.0, 931.0), 201).unwrap();
        assert_eq!(s.peaks.len(), 1);
        let dark = CavityState::new(930.0, ALIGNMENT_Q);
        let s = synthesize_spectrum(&[], &dark, 10.0, T_REF, (929.0, 931.0), 201).unwrap();
        assert!(s.intensities.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_window_and_samples() {
        let cav = CavityState::new(930.0, ALIGNMENT_Q);
        assert_eq!(
            synthesize_spectrum(&[], &cav, 10.0, T_REF, (930.0, 931.0), 1).unwrap_err(),
            SpectralError::TooFewSamples(1)
        );
        assert!(synthesize_spectrum(&[], &cav, 10.0, T_REF, (931.0, 931.0), 10).is_err());
        let far = [qd()];
        assert!(synthesize_spectrum(&far, &cav, 41.0, T_REF, (929.0, 933.0), 10).is_err());
    }
}
