use serde::{Deserialize, Serialize};

use super::Spectrum;

/// A peak re-extracted from sampled intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedPeak {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub height: f64,
}

/// Local maxima above `min_height`, each refined by a parabola through the
/// sample and its two neighbours. FWHM comes from linear interpolation of the
/// half-maximum crossings on either side; a crossing outside the window falls
/// back to twice the one-sided half width.
pub fn find_peaks(spectrum: &Spectrum, min_height: f64) -> Vec<FittedPeak> {
    let x = &spectrum.wavelengths_nm;
    let y = &spectrum.intensities;
    let mut out = Vec::new();
    if y.len() < 3 {
        return out;
    }
    for k in 1..y.len() - 1 {
        if !(y[k] > y[k - 1] && y[k] >= y[k + 1] && y[k] >= min_height) {
            continue;
        }
        let (y0, y1, y2) = (y[k - 1], y[k], y[k + 1]);
        let h = x[k + 1] - x[k];
        let denom = y0 - 2.0 * y1 + y2;
        let offset = if denom != 0.0 {
            0.5 * (y0 - y2) / denom
        } else {
            0.0
        };
        let center = x[k] + offset * h;
        let height = y1 - 0.25 * (y0 - y2) * offset;

        let half = 0.5 * height;
        let left = (0..k)
            .rev()
            .find(|&i| y[i] < half)
            .map(|i| x[i] + (half - y[i]) / (y[i + 1] - y[i]) * (x[i + 1] - x[i]));
        let right = (k + 1..y.len())
            .find(|&i| y[i] < half)
            .map(|i| x[i - 1] + (y[i - 1] - half) / (y[i - 1] - y[i]) * (x[i] - x[i - 1]));
        let fwhm = match (left, right) {
            (Some(l), Some(r)) => r - l,
            (Some(l), None) => 2.0 * (center - l),
            (None, Some(r)) => 2.0 * (r - center),
            (None, None) => f64::NAN,
        };
        out.push(FittedPeak {
            center_nm: center,
            fwhm_nm: fwhm,
            height,
        });
    }
    out
}
