//! Incident heating power ↔ structure temperature, and inverse solvers that
//! choose powers for spectral targets.
//!
//! A [`PowerMap`] encodes the measured law `T² = T_bath² + β·P` for one
//! structure, with `P` the *incident* heating-laser power in mW. Combined with
//! the quadratic QD shift this makes every shift exactly linear in power,
//! `Δλ = α·β·P`, which the solvers here rely on.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{conductance_ratio, DeviceLayout};
use crate::roots::{bisect, RootError};
use crate::spectral::{purcell_factor, CavityState, QdState, SpectralError};
use crate::thermal::{absorbed_power_for_temperature, ThermalError};

/// Power range covered by the calibration data, mW.
pub const DEFAULT_P_MAX_MW: f64 = 4.0;
/// Measured ratio of QD shifts between 320 nm and 800 nm bridges at equal power.
pub const MEASURED_WIDTH_RATIO: f64 = 2.65;
/// Incident power at which the reference QD has shifted by 1.4 nm, mW.
pub const ANCHOR_POWER_MW: f64 = 3.0;
pub const ANCHOR_SHIFT_NM: f64 = 1.4;
/// Relaxation for the passes after the first in [`align_multi`].
pub const MULTI_DAMPING: f64 = 0.5;
/// Agreement required between the fixed-point and direct multi-structure
/// solutions, relative.
pub const MULTI_CROSS_CHECK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("{field} must be positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("power {power_mw} mW outside the calibrated range [0, {max_mw}] mW")]
    PowerOutOfRange { power_mw: f64, max_mw: f64 },
    #[error("tuning range exceeded for {id}: {shift_nm:.4} nm requested, {max_nm} nm available")]
    TuningRangeExceeded {
        id: String,
        shift_nm: f64,
        max_nm: f64,
    },
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("tolerance unreachable: {tol:e} nm is below the numeric resolution {resolution:e} nm")]
    ToleranceUnreachable { tol: f64, resolution: f64 },
    #[error("infeasible chip plan: {0}")]
    InfeasiblePlan(String),
    #[error("invalid crosstalk matrix: {0}")]
    InvalidCrosstalk(String),
    #[error("fixed-point iteration did not converge in {iterations} passes")]
    NotConverged { iterations: usize },
    #[error("cross-check failed: {0}")]
    CrossCheck(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Root(#[from] RootError),
}

fn positive(field: &'static str, value: f64) -> Result<(), ControlError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ControlError::NonPositive { field, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerMap {
    pub id: String,
    pub t_bath: f64,
    /// K²·mW⁻¹.
    pub beta: f64,
    pub p_max_mw: f64,
}

impl PowerMap {
    pub fn new(id: impl Into<String>, t_bath: f64, beta: f64) -> Result<Self, ControlError> {
        positive("t_bath", t_bath)?;
        positive("beta", beta)?;
        Ok(Self {
            id: id.into(),
            t_bath,
            beta,
            p_max_mw: DEFAULT_P_MAX_MW,
        })
    }

    /// Map for a structure whose QD shifts `ratio` times less at equal power.
    pub fn scaled(&self, id: impl Into<String>, ratio: f64) -> Result<Self, ControlError> {
        positive("ratio", ratio)?;
        Ok(Self {
            id: id.into(),
            beta: self.beta / ratio,
            ..self.clone()
        })
    }

    fn check_power(&self, p_mw: f64) -> Result<(), ControlError> {
        if p_mw >= 0.0 && p_mw <= self.p_max_mw {
            Ok(())
        } else {
            Err(ControlError::PowerOutOfRange {
                power_mw: p_mw,
                max_mw: self.p_max_mw,
            })
        }
    }
}

/// Reference 320 nm structure calibrated from its shift anchor.
pub fn reference_map(alpha: f64) -> PowerMap {
    let beta =
        calibrate_beta(ANCHOR_SHIFT_NM, ANCHOR_POWER_MW, alpha).expect("anchors are positive");
    PowerMap::new("w320", 10.0, beta).expect("reference map is valid")
}

/// Ratio by which the narrow-bridge structure heats more than the wide one
/// at equal power, taken from bridge geometry alone.
pub fn geometric_width_ratio(narrow: &DeviceLayout, wide: &DeviceLayout) -> f64 {
    conductance_ratio(wide, narrow)
}

pub fn temperature_from_power(map: &PowerMap, p_mw: f64) -> Result<f64, ControlError> {
    map.check_power(p_mw)?;
    Ok((map.t_bath * map.t_bath + map.beta * p_mw).sqrt())
}

/// `β = shift / (α·P)` from one (power, shift) anchor.
pub fn calibrate_beta(
    anchor_shift_nm: f64,
    anchor_power_mw: f64,
    alpha: f64,
) -> Result<f64, ControlError> {
    positive("anchor_shift", anchor_shift_nm)?;
    positive("anchor_power", anchor_power_mw)?;
    positive("alpha", alpha)?;
    Ok(anchor_shift_nm / (alpha * anchor_power_mw))
}

/// QD shift at incident power `p_mw`: `α·β·P`.
pub fn shift_from_power(map: &PowerMap, qd: &QdState, p_mw: f64) -> Result<f64, ControlError> {
    map.check_power(p_mw)?;
    let shift = qd.alpha * map.beta * p_mw;
    qd.check_shift(shift)?;
    Ok(shift)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerForShift {
    pub power_mw: f64,
    pub warnings: Vec<String>,
}

fn rolloff_warning(qd: &QdState, shift_nm: f64) -> Option<String> {
    (shift_nm > qd.rolloff_shift_nm).then(|| {
        format!(
            "{}: shift {:.4} nm is past the {} nm intensity roll-off (modelled decay)",
            qd.id, shift_nm, qd.rolloff_shift_nm
        )
    })
}

/// Incident power that shifts `qd` by `target_nm`.
///
/// Uses the closed form `P = target / (α·β)` and checks it against bisection
/// on [`shift_from_power`] to within `tol_nm`.
pub fn power_for_shift(
    map: &PowerMap,
    qd: &QdState,
    target_nm: f64,
    tol_nm: f64,
) -> Result<PowerForShift, ControlError> {
    positive("tol", tol_nm)?;
    if !(target_nm >= 0.0) || target_nm > qd.max_shift_nm {
        return Err(ControlError::TuningRangeExceeded {
            id: qd.id.clone(),
            shift_nm: target_nm,
            max_nm: qd.max_shift_nm,
        });
    }
    let power_mw = target_nm / qd.alpha / map.beta;
    map.check_power(power_mw)?;

    if target_nm > 0.0 {
        let slope = qd.alpha * map.beta;
        let hi = map.p_max_mw.min(qd.max_shift_nm / slope);
        let forward = |p: f64| qd.alpha * map.beta * p - target_nm;
        let bisected = bisect(forward, 0.0, hi, tol_nm / slope)?;
        let gap = (bisected - power_mw).abs() * slope;
        if gap > tol_nm {
            return Err(ControlError::CrossCheck(format!(
                "bisection and closed form differ by {gap:e} nm"
            )));
        }
    }
    Ok(PowerForShift {
        power_mw,
        warnings: rolloff_warning(qd, target_nm).into_iter().collect(),
    })
}

/// Per-structure heating plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSolution {
    pub powers_mw: BTreeMap<String, f64>,
    /// Achieved minus targeted wavelength per QD, nm.
    #[serde(skip)]
    pub detunings_nm: BTreeMap<String, f64>,
    /// Purcell factor of each QD line at the solution.
    #[serde(skip)]
    pub purcell: BTreeMap<String, f64>,
    pub residual_nm: f64,
    pub feasible: bool,
    pub warnings: Vec<String>,
}

impl TuningSolution {
    /// A record for a plan that could not be built.
    pub fn infeasible(reason: impl Into<String>) -> Self {
        Self {
            powers_mw: BTreeMap::new(),
            detunings_nm: BTreeMap::new(),
            purcell: BTreeMap::new(),
            residual_nm: f64::NAN,
            feasible: false,
            warnings: vec![reason.into()],
        }
    }
}

/// Smallest wavelength difference distinguishable near `lambda_nm`.
fn resolution_at(lambda_nm: f64) -> f64 {
    16.0 * f64::EPSILON * lambda_nm.abs()
}

/// Heats one structure until `qd` sits on the cavity resonance.
///
/// Both lines red-shift and the QD moves faster, so only a QD on the blue
/// side of the cavity can be aligned. The required `Δ(T²) = δ₀ / (α_qd −
/// α_cav/r)` is converted to power through the map and verified with the
/// forward model.
pub fn align_qd_to_cavity(
    map: &PowerMap,
    qd: &QdState,
    cav: &CavityState,
    tol_nm: f64,
) -> Result<TuningSolution, ControlError> {
    positive("tol", tol_nm)?;
    let resolution = resolution_at(cav.lambda0_nm);
    if tol_nm < resolution {
        return Err(ControlError::ToleranceUnreachable {
            tol: tol_nm,
            resolution,
        });
    }
    let t_bath = map.t_bath;
    let detuning0 = cav.lambda0_nm - qd.lambda0_nm;
    if detuning0 < 0.0 {
        return Err(ControlError::Unreachable(format!(
            "{} is {:.4} nm red of the cavity and both lines red-shift with the QD moving faster",
            qd.id, -detuning0
        )));
    }
    let closing_rate = qd.alpha - cav.alpha / cav.shift_ratio;
    if !(closing_rate > 0.0) {
        return Err(ControlError::Unreachable(format!(
            "{} does not gain on the cavity when heated",
            qd.id
        )));
    }
    let delta_t2 = detuning0 / closing_rate;
    let shift = qd.alpha * delta_t2;
    if shift > qd.max_shift_nm {
        return Err(ControlError::Unreachable(format!(
            "{} needs a {:.4} nm shift, beyond its {} nm range",
            qd.id, shift, qd.max_shift_nm
        )));
    }
    let power = delta_t2 / map.beta;
    if power > map.p_max_mw {
        return Err(ControlError::Unreachable(format!(
            "{} needs {:.4} mW, above the {} mW calibration limit",
            qd.id, power, map.p_max_mw
        )));
    }

    let gap_at = |p: f64| -> Result<f64, ControlError> {
        let t = temperature_from_power(map, p)?;
        Ok(qd.lambda0_nm + qd.shift_nm(t, t_bath)? - cav.wavelength_at(t, t_bath)?)
    };
    let residual = gap_at(power)?;
    if residual.abs() > tol_nm {
        return Err(ControlError::ToleranceUnreachable {
            tol: tol_nm,
            resolution: residual.abs(),
        });
    }
    if power > 0.0 {
        let bisected = bisect(
            |p| gap_at(p).unwrap_or(f64::NAN),
            0.0,
            map.p_max_mw.min(qd.max_shift_nm / (qd.alpha * map.beta)),
            1e-12,
        )?;
        if gap_at(bisected)?.abs() > tol_nm || (bisected - power).abs() > 1e-9 * power.max(1.0) {
            return Err(ControlError::CrossCheck(format!(
                "bisection gives {bisected} mW, closed form {power} mW"
            )));
        }
    }

    let t = temperature_from_power(map, power)?;
    let qd_lambda = qd.lambda0_nm + qd.shift_nm(t, t_bath)?;
    let f = purcell_factor(
        qd_lambda,
        cav.wavelength_at(t, t_bath)?,
        cav.fwhm_at(t, t_bath)?,
        cav.purcell_f0,
    );
    Ok(TuningSolution {
        powers_mw: BTreeMap::from([(map.id.clone(), power)]),
        detunings_nm: BTreeMap::from([(qd.id.clone(), residual)]),
        purcell: BTreeMap::from([(qd.id.clone(), f)]),
        residual_nm: residual.abs(),
        feasible: true,
        warnings: rolloff_warning(qd, shift).into_iter().collect(),
    })
}

/// T² gain on structure `i` per mW aimed at structure `j`, K²·mW⁻¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crosstalk {
    pub matrix: Vec<Vec<f64>>,
}

impl Crosstalk {
    /// Fully isolated structures.
    pub fn isolated(maps: &[PowerMap]) -> Self {
        let n = maps.len();
        let matrix = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { maps[i].beta } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { matrix }
    }

    /// Isolated structures plus a uniform leak of `fraction · β_i` into every
    /// other structure.
    pub fn uniform_leak(maps: &[PowerMap], fraction: f64) -> Self {
        let mut x = Self::isolated(maps);
        for (i, row) in x.matrix.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v = fraction * maps[i].beta;
                }
            }
        }
        x
    }

    pub fn validate(&self, maps: &[PowerMap]) -> Result<(), ControlError> {
        let n = maps.len();
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(ControlError::InvalidCrosstalk(format!(
                "expected a {n}×{n} matrix"
            )));
        }
        for (i, row) in self.matrix.iter().enumerate() {
            let d = row[i];
            if ((d - maps[i].beta) / maps[i].beta).abs() > 1e-12 {
                return Err(ControlError::InvalidCrosstalk(format!(
                    "diagonal entry {i} is {d}, structure beta is {}",
                    maps[i].beta
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j && !(v >= 0.0 && v < d) {
                    return Err(ControlError::InvalidCrosstalk(format!(
                        "entry ({i}, {j}) = {v} must lie in [0, {d})"
                    )));
                }
            }
        }
        Ok(())
    }

    fn is_diagonal(&self) -> bool {
        self.matrix
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().enumerate().all(|(j, &v)| i == j || v == 0.0))
    }
}

/// One QD wavelength target on one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTarget {
    pub structure: usize,
    pub qd: QdState,
    pub wavelength_nm: f64,
}

struct LinearPlan {
    /// Structure index of every unknown power.
    structures: Vec<usize>,
    /// Required T² gain per unknown, K².
    gains: Vec<f64>,
}

fn linear_plan(maps: &[PowerMap], targets: &[MultiTarget]) -> Result<LinearPlan, ControlError> {
    let mut structures = Vec::with_capacity(targets.len());
    let mut gains = Vec::with_capacity(targets.len());
    for t in targets {
        if t.structure >= maps.len() {
            return Err(ControlError::InfeasiblePlan(format!(
                "no structure {}",
                t.structure
            )));
        }
        if structures.contains(&t.structure) {
            return Err(ControlError::InfeasiblePlan(format!(
                "more than one target on structure {}",
                maps[t.structure].id
            )));
        }
        let shift = t.wavelength_nm - t.qd.lambda0_nm;
        if shift < 0.0 || shift > t.qd.max_shift_nm {
            return Err(ControlError::InfeasiblePlan(format!(
                "{} needs a {:.4} nm shift, outside [0, {}] nm",
                t.qd.id, shift, t.qd.max_shift_nm
            )));
        }
        structures.push(t.structure);
        gains.push(shift / t.qd.alpha);
    }
    Ok(LinearPlan { structures, gains })
}

/// Direct solve of the linear system `Σⱼ X(i,j) Pⱼ = Δ(T²)ᵢ` over the targeted
/// structures. Untargeted structures stay unheated.
pub fn solve_multi_direct(
    maps: &[PowerMap],
    crosstalk: &Crosstalk,
    targets: &[MultiTarget],
) -> Result<Vec<f64>, ControlError> {
    crosstalk.validate(maps)?;
    let plan = linear_plan(maps, targets)?;
    let n = plan.structures.len();
    let a = DMatrix::from_fn(n, n, |r, c| {
        crosstalk.matrix[plan.structures[r]][plan.structures[c]]
    });
    let b = DVector::from_column_slice(&plan.gains);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| ControlError::InfeasiblePlan("singular crosstalk sub-matrix".into()))?;
    let mut powers = vec![0.0; maps.len()];
    for (k, &s) in plan.structures.iter().enumerate() {
        powers[s] = x[k];
    }
    Ok(powers)
}

/// Chooses powers for several structures at once when heating one structure
/// also warms the others.
///
/// Damped fixed-point iteration: each pass solves each structure's own power
/// with the others' powers from the previous pass. The first pass is
/// undamped, so isolated structures are solved exactly in one pass; later
/// passes are relaxed by [`MULTI_DAMPING`]. The result is checked against
/// [`solve_multi_direct`].
pub fn align_multi(
    maps: &[PowerMap],
    crosstalk: &Crosstalk,
    targets: &[MultiTarget],
    tol_nm: f64,
    max_iter: usize,
) -> Result<TuningSolution, ControlError> {
    positive("tol", tol_nm)?;
    crosstalk.validate(maps)?;
    let plan = linear_plan(maps, targets)?;
    let x = &crosstalk.matrix;
    let n = maps.len();

    let achieved = |powers: &[f64], s: usize| -> f64 { (0..n).map(|j| x[s][j] * powers[j]).sum() };
    let gain_error = |powers: &[f64]| -> f64 {
        plan.structures
            .iter()
            .zip(&plan.gains)
            .map(|(&s, g)| (achieved(powers, s) - g).abs() / g.abs().max(1.0))
            .fold(0.0, f64::max)
    };

    let mut powers = vec![0.0; n];
    let mut converged = plan.structures.is_empty();
    let mut passes = 0;
    let decoupled = crosstalk.is_diagonal();
    while !converged && passes < max_iter {
        let relax = if passes == 0 { 1.0 } else { MULTI_DAMPING };
        let previous = powers.clone();
        for (&s, &g) in plan.structures.iter().zip(&plan.gains) {
            let others: f64 = (0..n)
                .filter(|&j| j != s)
                .map(|j| x[s][j] * previous[j])
                .sum();
            let own = (g - others) / x[s][s];
            powers[s] = previous[s] + relax * (own - previous[s]);
        }
        passes += 1;
        converged = decoupled || gain_error(&powers) <= 1e-14;
    }
    if !converged {
        return Err(ControlError::NotConverged { iterations: passes });
    }

    let direct = solve_multi_direct(maps, crosstalk, targets)?;
    for (s, (a, b)) in powers.iter().zip(&direct).enumerate() {
        if (a - b).abs() > MULTI_CROSS_CHECK * b.abs().max(1.0) {
            return Err(ControlError::CrossCheck(format!(
                "structure {}: iteration {a} mW, direct {b} mW",
                maps[s].id
            )));
        }
    }
    for (m, &p) in maps.iter().zip(&powers) {
        if !(p >= 0.0) || p > m.p_max_mw {
            return Err(ControlError::InfeasiblePlan(format!(
                "{} would need {p:.6} mW, outside [0, {}] mW",
                m.id, m.p_max_mw
            )));
        }
    }

    let mut solution = TuningSolution {
        powers_mw: maps
            .iter()
            .zip(&powers)
            .map(|(m, &p)| (m.id.clone(), p))
            .collect(),
        detunings_nm: BTreeMap::new(),
        purcell: BTreeMap::new(),
        residual_nm: 0.0,
        feasible: true,
        warnings: Vec::new(),
    };
    for t in targets {
        let shift = t.qd.alpha * achieved(&powers, t.structure);
        let miss = t.qd.lambda0_nm + shift - t.wavelength_nm;
        solution.residual_nm = solution.residual_nm.max(miss.abs());
        solution.detunings_nm.insert(t.qd.id.clone(), miss);
        solution.warnings.extend(rolloff_warning(&t.qd, shift));
    }
    if solution.residual_nm > tol_nm {
        solution.feasible = false;
        solution.warnings.push(format!(
            "residual {:e} nm exceeds tolerance {tol_nm:e} nm",
            solution.residual_nm
        ));
    }
    Ok(solution)
}

/// Fraction of `incident_mw` that must be absorbed to hold the structure at
/// `t_target` according to the lumped bridge model.
pub fn absorbed_fraction(
    layout: &DeviceLayout,
    t_target: f64,
    t_bath: f64,
    incident_mw: f64,
) -> Result<f64, ControlError> {
    positive("incident power", incident_mw)?;
    let absorbed_w = absorbed_power_for_temperature(layout, t_target, t_bath)?;
    Ok(absorbed_w * 1e3 / incident_mw)
}
