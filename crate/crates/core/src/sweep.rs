//! Spectra and peak tracks over an incident-power sweep.

use std::fmt::Write as _;

use crate::control::{temperature_from_power, ControlError, PowerMap};
use crate::exec::{map_ordered, Execution};
use crate::output::{fmt_sig, DIGITS};
use crate::spectral::{
    find_peaks, synthesize_spectrum, CavityState, Peak, QdState, SpectralError, Spectrum,
};

/// Inclusive evenly spaced powers.
pub fn power_grid(min_mw: f64, max_mw: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![min_mw];
    }
    let step = (max_mw - min_mw) / (steps - 1) as f64;
    (0..steps)
        .map(|k| {
            if k + 1 == steps {
                max_mw
            } else {
                min_mw + k as f64 * step
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub power_mw: f64,
    /// `None` when the power could not be simulated; see `warning`.
    pub temperature_k: Option<f64>,
    pub spectrum: Option<Spectrum>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub window_nm: (f64, f64),
    pub samples: usize,
    pub execution: Execution,
}

/// Sample window that covers every line over the full tuning range.
pub fn auto_window(qds: &[QdState], cav: &CavityState) -> (f64, f64) {
    let lo = qds
        .iter()
        .map(|q| q.lambda0_nm)
        .fold(cav.lambda0_nm, f64::min);
    let hi = qds
        .iter()
        .map(|q| q.lambda0_nm + q.max_shift_nm)
        .fold(cav.lambda0_nm, f64::max);
    (lo - 0.5, hi + 0.5)
}

fn row(
    map: &PowerMap,
    qds: &[QdState],
    cav: &CavityState,
    settings: &SweepSettings,
    p: f64,
) -> SweepRow {
    let simulate = || -> Result<(f64, Spectrum), ControlError> {
        let t = temperature_from_power(map, p)?;
        let s = synthesize_spectrum(
            qds,
            cav,
            t,
            map.t_bath,
            settings.window_nm,
            settings.samples,
        )?;
        Ok((t, s))
    };
    match simulate() {
        Ok((t, s)) => SweepRow {
            power_mw: p,
            temperature_k: Some(t),
            spectrum: Some(s),
            warning: None,
        },
        Err(e) => SweepRow {
            power_mw: p,
            temperature_k: None,
            spectrum: None,
            warning: Some(format!("{} mW: {e}", fmt_sig(p, DIGITS))),
        },
    }
}

/// One synthesized spectrum per power, in the order of `powers`. Powers the
/// model cannot reach produce a row with a warning instead of aborting.
pub fn run_sweep(
    map: &PowerMap,
    qds: &[QdState],
    cav: &CavityState,
    powers: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>, SpectralError> {
    // fail fast on a bad window rather than once per row
    crate::spectral::sample_grid(settings.window_nm.0, settings.window_nm.1, settings.samples)?;
    Ok(map_ordered(settings.execution, powers, |&p| {
        row(map, qds, cav, settings, p)
    }))
}

/// One tracked line in one sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub power_mw: f64,
    pub peak: Peak,
}

/// Peak positions per row, from the synthesis annotations or, with `refit`,
/// re-extracted from the sampled intensities (nearest fitted maximum to each
/// annotated line with non-zero height).
pub fn peak_track(rows: &[SweepRow], refit: bool) -> Vec<TrackPoint> {
    let mut out = Vec::new();
    for r in rows {
        let Some(s) = &r.spectrum else { continue };
        let fitted = if refit {
            find_peaks(s, 0.0)
        } else {
            Vec::new()
        };
        for p in &s.peaks {
            if p.height <= 0.0 {
                continue;
            }
            let peak = if refit {
                match fitted.iter().min_by(|a, b| {
                    (a.center_nm - p.center_nm)
                        .abs()
                        .total_cmp(&(b.center_nm - p.center_nm).abs())
                }) {
                    Some(f) => Peak {
                        center_nm: f.center_nm,
                        fwhm_nm: f.fwhm_nm,
                        height: f.height,
                        ..p.clone()
                    },
                    None => continue,
                }
            } else {
                p.clone()
            };
            out.push(TrackPoint {
                power_mw: r.power_mw,
                peak,
            });
        }
    }
    out
}

/// `power_mw,lambda_nm,intensity`; rows without a spectrum are omitted.
pub fn stacked_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("power_mw,lambda_nm,intensity\n");
    for r in rows {
        let Some(sp) = &r.spectrum else { continue };
        let p = fmt_sig(r.power_mw, DIGITS);
        for (l, i) in sp.wavelengths_nm.iter().zip(&sp.intensities) {
            writeln!(s, "{p},{},{}", fmt_sig(*l, DIGITS), fmt_sig(*i, DIGITS)).unwrap();
        }
    }
    s
}

pub fn track_csv(track: &[TrackPoint]) -> String {
    let mut s = String::from("power_mw,id,kind,center_nm,fwhm_nm,height\n");
    for t in track {
        let kind = match t.peak.kind {
            crate::spectral::PeakKind::Qd => "qd",
            crate::spectral::PeakKind::Cavity => "cavity",
        };
        writeln!(
            s,
            "{},{},{kind},{},{},{}",
            fmt_sig(t.power_mw, DIGITS),
            t.peak.id,
            fmt_sig(t.peak.center_nm, DIGITS),
            fmt_sig(t.peak.fwhm_nm, DIGITS),
            fmt_sig(t.peak.height, DIGITS)
        )
        .unwrap();
    }
    s
}

/// Least-squares slope of a track's centre against power, nm·mW⁻¹.
pub fn track_slope(track: &[TrackPoint], id: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = track
        .iter()
        .filter(|t| t.peak.id == id)
        .map(|t| (t.power_mw, t.peak.center_nm))
        .collect();
    crate::fit::fit_line(&pts).ok().map(|f| f.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::reference_map;
    use crate::spectral::{ALIGNMENT_Q, COLD_Q, DEFAULT_ALPHA_NM_PER_K2};

    fn settings(execution: Execution) -> SweepSettings {
        SweepSettings {
            window_nm: (929.5, 932.5),
            samples: 3001,
            execution,
        }
    }

    fn scene() -> (PowerMap, Vec<QdState>, CavityState) {
        let cav = CavityState {
            peak_height: 0.5,
            ..CavityState::new(931.0, COLD_Q)
        };
        (
            reference_map(DEFAULT_ALPHA_NM_PER_K2),
            vec![QdState::new("qd1", 930.0)],
            cav,
        )
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = power_grid(0.0, 3.0, 31);
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[30], 3.0);
        assert_eq!(power_grid(0.0, 0.0, 2), vec![0.0, 0.0]);
    }

    #[test]
    fn track_endpoints() {
        let (map, qds, cav) = scene();
        let rows = run_sweep(
            &map,
            &qds,
            &cav,
            &power_grid(0.0, 3.0, 31),
            &settings(Execution::Sequential),
        )
        .unwrap();
        let track = peak_track(&rows, false);
        let last = |id: &str| {
            track
                .iter()
                .rev()
                .find(|t| t.peak.id == id)
                .unwrap()
                .peak
                .center_nm
        };
        assert!((last("qd1") - 931.4).abs() < 1e-9);
        assert!((last("cavity") - 931.0 - 1.4 / 2.917).abs() < 1e-9);
        let slope = track_slope(&track, "qd1").unwrap();
        assert!((slope - 1.4 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn refit_tracks_within_budget() {
        let (map, qds, cav) = scene();
        let rows = run_sweep(
            &map,
            &qds,
            &cav,
            &power_grid(0.0, 3.0, 16),
            &settings(Execution::Sequential),
        )
        .unwrap();
        let slope = track_slope(&peak_track(&rows, true), "qd1").unwrap();
        assert!((slope / (1.4 / 3.0) - 1.0).abs() < 5e-3, "{slope}");
    }

    #[test]
    fn parallel_matches_sequential() {
        let (map, qds, _) = scene();
        let cav = CavityState::new(930.3, ALIGNMENT_Q);
        let p = power_grid(0.0, 2.0, 40);
        let a = run_sweep(&map, &qds, &cav, &p, &settings(Execution::Sequential)).unwrap();
        let b = run_sweep(&map, &qds, &cav, &p, &settings(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
        assert_eq!(stacked_csv(&a), stacked_csv(&b));
    }

    #[test]
    fn unreachable_rows_warn_and_continue() {
        let (map, qds, cav) = scene();
        let rows = run_sweep(
            &map,
            &qds,
            &cav,
            &[1.0, 3.9, 4.5],
            &settings(Execution::Sequential),
        )
        .unwrap();
        assert!(rows[0].spectrum.is_some());
        // 3.9 mW is past the QD's tuning range, 4.5 mW past the map's limit
        assert!(rows[1]
            .warning
            .as_deref()
            .unwrap()
            .contains("tuning range exceeded"));
        assert!(rows[2].warning.is_some());
        assert_eq!(stacked_csv(&rows).lines().count(), 1 + 3001);
    }
}
