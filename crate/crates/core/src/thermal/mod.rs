//! Steady-state heat conduction with temperature-dependent conductivity.
//!
//! Two models share the material law: a lumped isothermal-island model where
//! the bridges carry the whole thermal resistance, and a 2-D finite-volume
//! solve over a [`ThermalGrid`](crate::device::ThermalGrid).

mod cg;
mod solver;

pub use solver::{
    energy_residual, solve_power_sweep, solve_steady_state, SolveReport, SolverOptions,
    TemperatureField,
};

use thiserror::Error;

use crate::device::{DeviceError, DeviceLayout, MaterialModel};
use crate::roots::{bisect, RootError};

/// Upper end of the lumped-model bisection bracket, K.
pub const LUMPED_BRACKET_MAX_K: f64 = 1e4;
/// Width the lumped-model bisection is carried to, K.
pub const LUMPED_TOLERANCE_K: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermalError {
    #[error("temperature must be positive (got {0} K)")]
    NonPositiveTemperature(f64),
    #[error("invalid temperature bounds [{lo}, {hi}] K")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("absorbed power must be finite and non-negative (got {0} W)")]
    InvalidPower(f64),
    #[error("target temperature {target} K is below the bath at {bath} K")]
    BelowBath { target: f64, bath: f64 },
    #[error("no temperature below {max} K carries the requested power")]
    NoBracket { max: f64 },
    #[error("tolerance must be positive (got {0})")]
    InvalidTolerance(f64),
    #[error(
        "Picard iteration did not converge in {iterations} iterations (residual {residual:.3e})"
    )]
    NotConverged { iterations: usize, residual: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error(transparent)]
    Grid(#[from] DeviceError),
    #[error(transparent)]
    Root(#[from] RootError),
}

/// Conductivity `κ(T)` in W·K⁻¹·cm⁻¹.
pub fn kappa(material: &MaterialModel, t: f64) -> Result<f64, ThermalError> {
    if !(t > 0.0) {
        return Err(ThermalError::NonPositiveTemperature(t));
    }
    Ok(kappa_unchecked(material, t))
}

#[inline]
pub(crate) fn kappa_unchecked(material: &MaterialModel, t: f64) -> f64 {
    if material.exponent == 0.0 {
        material.kappa_ref
    } else {
        material.kappa_ref * (t / material.t_ref).powf(material.exponent)
    }
}

/// `∫ κ(T) dT` from `t_lo` to `t_hi`, W·cm⁻¹.
pub fn kappa_integral(material: &MaterialModel, t_lo: f64, t_hi: f64) -> Result<f64, ThermalError> {
    if !(t_lo > 0.0 && t_hi >= t_lo && t_hi.is_finite()) {
        return Err(ThermalError::InvalidBounds { lo: t_lo, hi: t_hi });
    }
    Ok(kappa_integral_unchecked(material, t_lo, t_hi))
}

pub(crate) fn kappa_integral_unchecked(material: &MaterialModel, t_lo: f64, t_hi: f64) -> f64 {
    let MaterialModel {
        kappa_ref,
        t_ref,
        exponent: p,
        ..
    } = *material;
    if p == -1.0 {
        kappa_ref * t_ref * (t_hi / t_lo).ln()
    } else {
        let q = p + 1.0;
        kappa_ref / (q * t_ref.powf(p)) * (t_hi.powf(q) - t_lo.powf(q))
    }
}

/// Island temperature for `p_abs_w` watts absorbed, bath at `t_bath`.
///
/// Solves `P = (Σ Aᵢ/Lᵢ) · ∫_{T_bath}^{T} κ` by bisection on
/// `[T_bath, 10⁴ K]`.
pub fn lumped_temperature(
    layout: &DeviceLayout,
    p_abs_w: f64,
    t_bath: f64,
) -> Result<f64, ThermalError> {
    if !(p_abs_w >= 0.0 && p_abs_w.is_finite()) {
        return Err(ThermalError::InvalidPower(p_abs_w));
    }
    if !(t_bath > 0.0) {
        return Err(ThermalError::NonPositiveTemperature(t_bath));
    }
    if p_abs_w == 0.0 {
        return Ok(t_bath);
    }
    let shape = layout.bridge_shape_factor_cm();
    let material = layout.material;
    let carried = |t: f64| shape * kappa_integral_unchecked(&material, t_bath, t) - p_abs_w;
    if !(carried(LUMPED_BRACKET_MAX_K) > 0.0) {
        return Err(ThermalError::NoBracket {
            max: LUMPED_BRACKET_MAX_K,
        });
    }
    Ok(bisect(
        carried,
        t_bath,
        LUMPED_BRACKET_MAX_K,
        LUMPED_TOLERANCE_K,
    )?)
}

/// Absorbed power that holds the island at `t_target`, W.
pub fn absorbed_power_for_temperature(
    layout: &DeviceLayout,
    t_target: f64,
    t_bath: f64,
) -> Result<f64, ThermalError> {
    if !(t_bath > 0.0) {
        return Err(ThermalError::NonPositiveTemperature(t_bath));
    }
    if t_target < t_bath {
        return Err(ThermalError::BelowBath {
            target: t_target,
            bath: t_bath,
        });
    }
    Ok(layout.bridge_shape_factor_cm() * kappa_integral(&layout.material, t_bath, t_target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{default_layout, DeviceLayout};

    fn close(a: f64, b: f64, rtol: f64) -> bool {
        (a - b).abs() <= rtol * b.abs().max(1e-300)
    }

    #[test]
    fn kappa_reference_point_and_power_law() {
        let m = MaterialModel::default();
        assert_eq!(kappa(&m, 10.0).unwrap(), 3e-2);
        assert!(close(kappa(&m, 20.0).unwrap(), 0.12, 1e-15));
        let flat = MaterialModel { exponent: 0.0, ..m };
        for t in [1.0, 10.0, 77.0] {
            assert_eq!(kappa(&flat, t).unwrap(), 3e-2);
        }
        assert!(matches!(
            kappa(&m, 0.0),
            Err(ThermalError::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn kappa_integral_closed_forms() {
        let m = MaterialModel::default();
        assert_eq!(kappa_integral(&m, 10.0, 10.0).unwrap(), 0.0);
        // 1e-4 · (40³ − 10³)
        assert!(close(kappa_integral(&m, 10.0, 40.0).unwrap(), 6.3, 1e-13));
        let flat = MaterialModel { exponent: 0.0, ..m };
        assert!(close(
            kappa_integral(&flat, 10.0, 20.0).unwrap(),
            0.3,
            1e-14
        ));
        assert!(kappa_integral(&m, 20.0, 10.0).is_err());
        assert!(kappa_integral(&m, 0.0, 10.0).is_err());
    }

    #[test]
    fn kappa_integral_matches_quadrature() {
        // composite Simpson on κ(T), independent of the closed form
        for p in [-1.0, 0.0, 1.3, 2.0, 3.0] {
            let m = MaterialModel {
                exponent: p,
                ..MaterialModel::default()
            };
            let (a, b, n) = (7.0, 45.0, 2000);
            let h = (b - a) / n as f64;
            let mut s = kappa(&m, a).unwrap() + kappa(&m, b).unwrap();
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * kappa(&m, a + k as f64 * h).unwrap();
            }
            let simpson = s * h / 3.0;
            assert!(
                close(kappa_integral(&m, a, b).unwrap(), simpson, 1e-10),
                "p = {p}"
            );
        }
    }

    #[test]
    fn lumped_no_heating_is_bath() {
        assert_eq!(
            lumped_temperature(&DeviceLayout::default(), 0.0, 10.0).unwrap(),
            10.0
        );
    }

    #[test]
    fn lumped_reference_values() {
        let l = DeviceLayout::default();
        // P = 1.44e-5 cm · 6.3 W/cm for 40 K
        let p40 = 1.44e-5 * 6.3;
        assert!((lumped_temperature(&l, p40, 10.0).unwrap() - 40.0).abs() < 2e-6);
        // 10 µW: T³ = 10³ + 3·10² · 1e-5 / (1.44e-5 · 3e-2) by hand
        let t = (1000.0_f64 + 300.0 * 1e-5 / (1.44e-5 * 3e-2)).cbrt();
        assert!((t - 19.9536).abs() < 1e-4);
        assert!((lumped_temperature(&l, 1e-5, 10.0).unwrap() - t).abs() < 2e-6);
    }

    #[test]
    fn absorbed_power_inverts_lumped() {
        let l = DeviceLayout::default();
        assert_eq!(absorbed_power_for_temperature(&l, 10.0, 10.0).unwrap(), 0.0);
        let p = absorbed_power_for_temperature(&l, 40.0, 10.0).unwrap();
        assert!(close(p, 9.072e-5, 1e-12), "{p}");
        for t in [12.0, 25.0, 80.0] {
            let p = absorbed_power_for_temperature(&l, t, 10.0).unwrap();
            assert!((lumped_temperature(&l, p, 10.0).unwrap() - t).abs() < 2e-6);
        }
        assert!(matches!(
            absorbed_power_for_temperature(&l, 9.0, 10.0),
            Err(ThermalError::BelowBath { .. })
        ));
    }

    #[test]
    fn width_scaling_is_exact() {
        let narrow = default_layout(320.0);
        let wide = default_layout(800.0);
        let pn = absorbed_power_for_temperature(&narrow, 30.0, 10.0).unwrap();
        let pw = absorbed_power_for_temperature(&wide, 30.0, 10.0).unwrap();
        assert!(close(pw / pn, 2.5, 1e-15));
    }

    #[test]
    fn missing_bracket_is_reported() {
        let mut l = DeviceLayout::default();
        l.material.exponent = -3.0;
        // κ falls off so fast the bridges saturate below 10⁴ K
        assert!(matches!(
            lumped_temperature(&l, 1.0, 10.0),
            Err(ThermalError::NoBracket { .. })
        ));
    }
}
