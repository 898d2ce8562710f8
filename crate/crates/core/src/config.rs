//! JSON device and scenario files.
//!
//! A device file describes one suspended structure together with its optical
//! scene. A scenario lists one or more structures, each pointing at a device
//! file and carrying a power-map calibration, plus per-command parameters.
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    calibrate_beta, geometric_width_ratio, ControlError, Crosstalk, PowerMap, DEFAULT_P_MAX_MW,
    MEASURED_WIDTH_RATIO,
};
use crate::device::{
    bridge_anchors, validate_layout, Bridge, DeviceError, DeviceLayout, HeatingPad, MaterialModel,
    Membrane, PadProfile, Point, QdSite, Rect, Side,
};
use crate::spectral::{CavityState, QdState};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl ConfigError {
    fn invalid(path: &Path, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembraneSpec {
    pub length_um: f64,
    pub width_um: f64,
    pub thickness_nm: f64,
}

/// Bridges are split evenly between the two long edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSpec {
    pub count: usize,
    pub width_nm: f64,
    pub length_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadSpec {
    pub x_um: f64,
    pub y_um: f64,
    pub w_um: f64,
    pub h_um: f64,
    #[serde(default = "uniform")]
    pub profile: PadProfile,
}

fn uniform() -> PadProfile {
    PadProfile::Uniform
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub kappa_ref: f64,
    pub t_ref: f64,
    pub exponent: f64,
    #[serde(default = "one")]
    pub body_scale: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        let m = MaterialModel::default();
        Self {
            kappa_ref: m.kappa_ref,
            t_ref: m.t_ref,
            exponent: m.exponent,
            body_scale: m.body_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySpec {
    pub lambda0_nm: f64,
    pub q0: f64,
    pub x_um: f64,
    pub y_um: f64,
    pub shift_ratio: Option<f64>,
    pub q_slope: Option<f64>,
    pub alpha: Option<f64>,
    pub purcell_f0: Option<f64>,
    pub peak_height: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdSpec {
    pub id: String,
    pub lambda0_nm: f64,
    pub x_um: f64,
    pub y_um: f64,
    pub fwhm0_nm: Option<f64>,
    pub alpha: Option<f64>,
    pub fwhm_slope: Option<f64>,
    pub base_intensity: Option<f64>,
    pub rolloff_shift_nm: Option<f64>,
    pub max_shift_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    pub membrane: MembraneSpec,
    pub bridges: BridgeSpec,
    pub pad: PadSpec,
    #[serde(default)]
    pub material: MaterialSpec,
    pub cavity: CavitySpec,
    pub qds: Vec<QdSpec>,
}

/// A device file resolved into simulation objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub layout: DeviceLayout,
    pub cavity: CavityState,
    pub qds: Vec<QdState>,
}

impl Device {
    pub fn qd(&self, id: &str) -> Option<&QdState> {
        self.qds.iter().find(|q| q.id == id)
    }
}

fn check_positive(path: &Path, field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            path,
            format!("{field} must be positive (got {v})"),
        ))
    }
}

impl DeviceFile {
    pub fn resolve(&self, path: &Path) -> Result<Device, ConfigError> {
        let b = &self.bridges;
        if b.count < 2 || !b.count.is_multiple_of(2) {
            return Err(ConfigError::invalid(
                path,
                format!("bridges.count must be an even number ≥ 2 (got {})", b.count),
            ));
        }
        let membrane = Membrane {
            length_um: self.membrane.length_um,
            width_um: self.membrane.width_um,
            thickness_nm: self.membrane.thickness_nm,
        };
        let mut bridges = Vec::with_capacity(b.count);
        for side in [Side::Bottom, Side::Top] {
            for x in bridge_anchors(membrane.length_um, b.count / 2) {
                bridges.push(Bridge {
                    width_nm: b.width_nm,
                    length_um: b.length_um,
                    side,
                    anchor_x_um: x,
                });
            }
        }
        let mut seen = BTreeMap::new();
        for q in &self.qds {
            if seen.insert(q.id.as_str(), ()).is_some() {
                return Err(ConfigError::invalid(
                    path,
                    format!("duplicate QD id {:?}", q.id),
                ));
            }
            if q.id == "cavity" {
                return Err(ConfigError::invalid(path, "QD id \"cavity\" is reserved"));
            }
        }
        let m = &self.material;
        let layout = DeviceLayout {
            membrane,
            bridges,
            pad: HeatingPad {
                rect: Rect {
                    x_um: self.pad.x_um,
                    y_um: self.pad.y_um,
                    w_um: self.pad.w_um,
                    h_um: self.pad.h_um,
                },
                profile: self.pad.profile,
            },
            material: MaterialModel {
                kappa_ref: m.kappa_ref,
                t_ref: m.t_ref,
                exponent: m.exponent,
                body_scale: m.body_scale,
            },
            cavity_position: Point::new(self.cavity.x_um, self.cavity.y_um),
            qd_positions: self
                .qds
                .iter()
                .map(|q| QdSite {
                    id: q.id.clone(),
                    position: Point::new(q.x_um, q.y_um),
                })
                .collect(),
        };
        let layout = validate_layout(layout)
            .map_err(|e: DeviceError| ConfigError::invalid(path, e.to_string()))?;

        let c = &self.cavity;
        check_positive(path, "cavity.lambda0_nm", c.lambda0_nm)?;
        check_positive(path, "cavity.q0", c.q0)?;
        let defaults = CavityState::new(c.lambda0_nm, c.q0);
        let cavity = CavityState {
            shift_ratio: c.shift_ratio.unwrap_or(defaults.shift_ratio),
            q_slope: c.q_slope.unwrap_or(defaults.q_slope),
            alpha: c.alpha.unwrap_or(defaults.alpha),
            purcell_f0: c.purcell_f0.unwrap_or(defaults.purcell_f0),
            peak_height: c.peak_height.unwrap_or(defaults.peak_height),
            ..defaults
        };
        check_positive(path, "cavity.shift_ratio", cavity.shift_ratio)?;
        check_positive(path, "cavity.alpha", cavity.alpha)?;
        if cavity.purcell_f0 < 1.0 || cavity.q_slope < 0.0 || cavity.peak_height < 0.0 {
            return Err(ConfigError::invalid(
                path,
                "cavity needs purcell_f0 ≥ 1, q_slope ≥ 0 and peak_height ≥ 0",
            ));
        }

        let mut qds = Vec::with_capacity(self.qds.len());
        for q in &self.qds {
            check_positive(path, "qd lambda0_nm", q.lambda0_nm)?;
            let d = QdState::new(q.id.clone(), q.lambda0_nm);
            let qd = QdState {
                fwhm0_nm: q.fwhm0_nm.unwrap_or(d.fwhm0_nm),
                alpha: q.alpha.unwrap_or(d.alpha),
                fwhm_slope: q.fwhm_slope.unwrap_or(d.fwhm_slope),
                base_intensity: q.base_intensity.unwrap_or(d.base_intensity),
                rolloff_shift_nm: q.rolloff_shift_nm.unwrap_or(d.rolloff_shift_nm),
                max_shift_nm: q.max_shift_nm.unwrap_or(d.max_shift_nm),
                ..d
            };
            check_positive(path, "qd fwhm0_nm", qd.fwhm0_nm)?;
            check_positive(path, "qd alpha", qd.alpha)?;
            if !(qd.rolloff_shift_nm > 0.0 && qd.max_shift_nm > qd.rolloff_shift_nm) {
                return Err(ConfigError::invalid(
                    path,
                    format!("{}: need 0 < rolloff_shift_nm < max_shift_nm", qd.id),
                ));
            }
            qds.push(qd);
        }
        Ok(Device {
            layout,
            cavity,
            qds,
        })
    }
}

pub fn load_device(path: &Path) -> Result<Device, ConfigError> {
    read_json::<DeviceFile>(path)?.resolve(path)
}

/// How a structure's `β` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Calibration {
    Beta {
        beta: f64,
    },
    Anchor {
        anchor_shift_nm: f64,
        anchor_power_mw: f64,
    },
    /// `β` of another structure divided by a width ratio.
    Scaled {
        relative_to: String,
        ratio: WidthRatio,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WidthRatio {
    Named(RatioKind),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioKind {
    /// Measured shift ratio between 320 nm and 800 nm bridges.
    Measured,
    /// Bridge-conductance ratio of the two devices.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub id: String,
    pub device: PathBuf,
    pub calibration: Calibration,
    #[serde(default = "default_p_max")]
    pub p_max_mw: f64,
}

fn default_p_max() -> f64 {
    DEFAULT_P_MAX_MW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSpec {
    pub structure: Option<String>,
    pub power_abs_mw: f64,
    #[serde(default = "default_dx")]
    pub dx_um: f64,
    #[serde(default = "default_thermal_tol")]
    pub tol: f64,
}

fn default_dx() -> f64 {
    0.1
}

fn default_thermal_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub structure: Option<String>,
    pub power_min_mw: f64,
    pub power_max_mw: f64,
    pub steps: usize,
    pub window_nm: Option<(f64, f64)>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    2001
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    QdToCavity,
    QdToQd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdToCavitySpec {
    pub structure: Option<String>,
    pub qd: String,
    /// Optional lower bound on the cavity Q at the solution.
    pub min_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdRef {
    pub structure: String,
    pub qd: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdToQdSpec {
    pub qds: Vec<QdRef>,
    /// Common wavelength; defaults to the reddest starting line.
    pub wavelength_nm: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSpec {
    pub target: Option<TargetKind>,
    #[serde(default = "default_tune_tol")]
    pub tol_nm: f64,
    pub qd_to_cavity: Option<QdToCavitySpec>,
    pub qd_to_qd: Option<QdToQdSpec>,
}

fn default_tune_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub bath_k: f64,
    pub structures: Vec<StructureSpec>,
    pub crosstalk: Option<Vec<Vec<f64>>>,
    pub thermal: Option<ThermalSpec>,
    pub sweep: Option<SweepSpec>,
    pub tune: Option<TuneSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub device_path: PathBuf,
    pub device: Device,
    pub map: PowerMap,
}

/// A scenario with every device loaded and every power map calibrated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub path: PathBuf,
    pub bath_k: f64,
    pub structures: Vec<Structure>,
    pub crosstalk: Crosstalk,
    pub thermal: Option<ThermalSpec>,
    pub sweep: Option<SweepSpec>,
    pub tune: Option<TuneSpec>,
}

impl Scenario {
    pub fn structure_index(&self, id: &str) -> Option<usize> {
        self.structures.iter().position(|s| s.map.id == id)
    }

    /// Named structure, or the first one when `id` is `None`.
    pub fn structure(&self, id: Option<&str>) -> Result<&Structure, ConfigError> {
        match id {
            None => Ok(&self.structures[0]),
            Some(id) => self
                .structure_index(id)
                .map(|i| &self.structures[i])
                .ok_or_else(|| {
                    ConfigError::invalid(&self.path, format!("unknown structure {id:?}"))
                }),
        }
    }

    pub fn maps(&self) -> Vec<PowerMap> {
        self.structures.iter().map(|s| s.map.clone()).collect()
    }
}

fn beta_of(
    path: &Path,
    spec: &StructureSpec,
    device: &Device,
    done: &[(String, f64, DeviceLayout)],
) -> Result<f64, ConfigError> {
    let control =
        |e: ControlError| ConfigError::invalid(path, format!("structure {}: {e}", spec.id));
    match &spec.calibration {
        Calibration::Beta { beta } => {
            check_positive(path, "beta", *beta)?;
            Ok(*beta)
        }
        Calibration::Anchor {
            anchor_shift_nm,
            anchor_power_mw,
        } => {
            let qd = device.qds.first().ok_or_else(|| {
                ConfigError::invalid(
                    path,
                    format!("structure {}: anchor calibration needs a QD", spec.id),
                )
            })?;
            calibrate_beta(*anchor_shift_nm, *anchor_power_mw, qd.alpha).map_err(control)
        }
        Calibration::Scaled { relative_to, ratio } => {
            let (_, base_beta, base_layout) = done
                .iter()
                .find(|(id, ..)| id == relative_to)
                .ok_or_else(|| {
                    ConfigError::invalid(
                        path,
                        format!(
                            "structure {}: {relative_to:?} must be listed before it",
                            spec.id
                        ),
                    )
                })?;
            let r = match ratio {
                WidthRatio::Named(RatioKind::Measured) => MEASURED_WIDTH_RATIO,
                WidthRatio::Named(RatioKind::Geometric) => {
                    geometric_width_ratio(base_layout, &device.layout)
                }
                WidthRatio::Value(v) => *v,
            };
            check_positive(path, "ratio", r)?;
            Ok(base_beta / r)
        }
    }
}

impl ScenarioFile {
    pub fn resolve(&self, path: &Path) -> Result<Scenario, ConfigError> {
        check_positive(path, "bath_k", self.bath_k)?;
        if self.structures.is_empty() {
            return Err(ConfigError::invalid(
                path,
                "at least one structure is required",
            ));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut structures = Vec::with_capacity(self.structures.len());
        let mut done: Vec<(String, f64, DeviceLayout)> = Vec::new();
        for spec in &self.structures {
            if done.iter().any(|(id, ..)| *id == spec.id) {
                return Err(ConfigError::invalid(
                    path,
                    format!("duplicate structure id {:?}", spec.id),
                ));
            }
            let device_path = base.join(&spec.device);
            let device = load_device(&device_path)?;
            let beta = beta_of(path, spec, &device, &done)?;
            check_positive(path, "p_max_mw", spec.p_max_mw)?;
            let map = PowerMap {
                id: spec.id.clone(),
                t_bath: self.bath_k,
                beta,
                p_max_mw: spec.p_max_mw,
            };
            done.push((spec.id.clone(), beta, device.layout.clone()));
            structures.push(Structure {
                device_path,
                device,
                map,
            });
        }
        let maps: Vec<PowerMap> = structures.iter().map(|s| s.map.clone()).collect();
        let crosstalk = match &self.crosstalk {
            None => Crosstalk::isolated(&maps),
            Some(m) => Crosstalk { matrix: m.clone() },
        };
        crosstalk
            .validate(&maps)
            .map_err(|e| ConfigError::invalid(path, e.to_string()))?;

        let scenario = Scenario {
            path: path.to_path_buf(),
            bath_k: self.bath_k,
            structures,
            crosstalk,
            thermal: self.thermal.clone(),
            sweep: self.sweep.clone(),
            tune: self.tune.clone(),
        };
        scenario.check_references()?;
        Ok(scenario)
    }
}

impl Scenario {
    fn check_references(&self) -> Result<(), ConfigError> {
        if let Some(t) = &self.thermal {
            self.structure(t.structure.as_deref())?;
        }
        if let Some(s) = &self.sweep {
            self.structure(s.structure.as_deref())?;
            if !(s.power_min_mw <= s.power_max_mw) || s.steps < 2 {
                return Err(ConfigError::invalid(
                    &self.path,
                    "sweep needs power_min_mw ≤ power_max_mw and steps ≥ 2",
                ));
            }
        }
        if let Some(t) = &self.tune {
            if let Some(c) = &t.qd_to_cavity {
                let s = self.structure(c.structure.as_deref())?;
                if s.device.qd(&c.qd).is_none() {
                    return Err(ConfigError::invalid(
                        &self.path,
                        format!("QD {:?} is not on structure {}", c.qd, s.map.id),
                    ));
                }
            }
            if let Some(q) = &t.qd_to_qd {
                for r in &q.qds {
                    let s = self.structure(Some(&r.structure))?;
                    if s.device.qd(&r.qd).is_none() {
                        return Err(ConfigError::invalid(
                            &self.path,
                            format!("QD {:?} is not on structure {}", r.qd, s.map.id),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    read_json::<ScenarioFile>(path)?.resolve(path)
}
