//! Suspended-membrane geometry, material model and rasterization.
//!
//! Coordinates are in micrometres with the origin at the lower-left corner of
//! the membrane: `x` runs along the long edge, `y` across it. Bridges hang off
//! the two long edges (`y = 0` and `y = width`) and end at the chip, which is
//! held at bath temperature.

mod grid;

pub use grid::{rasterize, Cell, CellKind, ThermalGrid};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default bridge width of the better-isolated structure.
pub const DEFAULT_BRIDGE_WIDTH_NM: f64 = 320.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("{field} must be positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("pad out of bounds")]
    PadOutOfBounds,
    #[error("no heat path: the layout has no bridges")]
    NoHeatPath,
    #[error("bridge {index} has zero width")]
    ZeroWidthBridge { index: usize },
    #[error("bridge {index} does not attach to the membrane edge")]
    BridgeOutOfBounds { index: usize },
    #[error("position of {name} lies outside the membrane")]
    PositionOutside { name: String },
    #[error("cell pitch must be positive and finite (got {0})")]
    InvalidPitch(f64),
    #[error("cell pitch {dx_um} µm is too coarse: {feature} maps to zero cells")]
    TooCoarse { feature: String, dx_um: f64 },
    #[error("{count} cells have no conduction path to a bath-anchored cell")]
    Disconnected { count: usize },
    #[error("absorbed power must be finite and non-negative (got {0} W)")]
    InvalidPower(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x_um: f64,
    pub y_um: f64,
}

impl Point {
    pub const fn new(x_um: f64, y_um: f64) -> Self {
        Self { x_um, y_um }
    }
}

/// Axis-aligned rectangle given by its lower-left corner and extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_um: f64,
    pub y_um: f64,
    pub w_um: f64,
    pub h_um: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p.x_um >= self.x_um
            && p.x_um <= self.x_um + self.w_um
            && p.y_um >= self.y_um
            && p.y_um <= self.y_um + self.h_um
    }

    pub fn center(&self) -> Point {
        Point::new(self.x_um + 0.5 * self.w_um, self.y_um + 0.5 * self.h_um)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membrane {
    pub length_um: f64,
    pub width_um: f64,
    pub thickness_nm: f64,
}

impl Default for Membrane {
    fn default() -> Self {
        Self {
            length_um: 12.0,
            width_um: 4.0,
            thickness_nm: 150.0,
        }
    }
}

impl Membrane {
    pub fn contains(&self, p: Point) -> bool {
        p.x_um >= 0.0 && p.x_um <= self.length_um && p.y_um >= 0.0 && p.y_um <= self.width_um
    }
}

/// Long edge of the membrane a bridge is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `y = 0`; the bridge extends towards negative `y`.
    Bottom,
    /// `y = width`; the bridge extends towards positive `y`.
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub width_nm: f64,
    pub length_um: f64,
    pub side: Side,
    /// Position of the bridge centre line along the membrane's long edge.
    pub anchor_x_um: f64,
}

impl Bridge {
    /// Cross-section in cm² for a bridge cut from a slab of the given thickness.
    pub fn area_cm2(&self, thickness_nm: f64) -> f64 {
        (self.width_nm * 1e-7) * (thickness_nm * 1e-7)
    }

    /// Geometric conductance factor `A / L` in cm. Multiplying by a
    /// conductivity in W·K⁻¹·cm⁻¹ gives W/K.
    pub fn shape_factor_cm(&self, thickness_nm: f64) -> f64 {
        self.area_cm2(thickness_nm) / (self.length_um * 1e-4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PadProfile {
    Uniform,
    Gaussian { sigma_um: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingPad {
    pub rect: Rect,
    pub profile: PadProfile,
}

/// Power-law conductivity `κ(T) = κ_ref · (T / T_ref)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    /// W·K⁻¹·cm⁻¹ at `t_ref`.
    pub kappa_ref: f64,
    pub t_ref: f64,
    pub exponent: f64,
    /// Conductivity multiplier for the membrane body relative to the bridges.
    pub body_scale: f64,
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            kappa_ref: 3e-2,
            t_ref: 10.0,
            exponent: 2.0,
            body_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdSite {
    pub id: String,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLayout {
    pub membrane: Membrane,
    pub bridges: Vec<Bridge>,
    pub pad: HeatingPad,
    pub material: MaterialModel,
    pub cavity_position: Point,
    pub qd_positions: Vec<QdSite>,
}

impl Default for DeviceLayout {
    fn default() -> Self {
        default_layout(DEFAULT_BRIDGE_WIDTH_NM)
    }
}

/// Evenly spaced bridge centres along an edge of length `length_um`.
pub fn bridge_anchors(length_um: f64, per_side: usize) -> Vec<f64> {
    (0..per_side)
        .map(|k| length_um * (k as f64 + 0.5) / per_side as f64)
        .collect()
}

/// The reference device: a 12 µm × 4 µm × 150 nm membrane held by six 2 µm
/// bridges (three per long side), a 3 µm square pad at the `x = 0` end and
/// the cavity 2 µm from the opposite end.
pub fn default_layout(bridge_width_nm: f64) -> DeviceLayout {
    let membrane = Membrane::default();
    let mut bridges = Vec::with_capacity(6);
    for side in [Side::Bottom, Side::Top] {
        for x in bridge_anchors(membrane.length_um, 3) {
            bridges.push(Bridge {
                width_nm: bridge_width_nm,
                length_um: 2.0,
                side,
                anchor_x_um: x,
            });
        }
    }
    let mid = 0.5 * membrane.width_um;
    DeviceLayout {
        membrane,
        bridges,
        pad: HeatingPad {
            rect: Rect {
                x_um: 0.0,
                y_um: mid - 1.5,
                w_um: 3.0,
                h_um: 3.0,
            },
            profile: PadProfile::Uniform,
        },
        material: MaterialModel::default(),
        cavity_position: Point::new(membrane.length_um - 2.0, mid),
        qd_positions: vec![QdSite {
            id: "qd1".into(),
            position: Point::new(membrane.length_um - 2.0, mid),
        }],
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), DeviceError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DeviceError::NonPositive { field, value })
    }
}

/// Checks every layout invariant and hands the layout back unchanged.
pub fn validate_layout(layout: DeviceLayout) -> Result<DeviceLayout, DeviceError> {
    let m = &layout.membrane;
    positive("membrane.length_um", m.length_um)?;
    positive("membrane.width_um", m.width_um)?;
    positive("membrane.thickness_nm", m.thickness_nm)?;

    if layout.bridges.is_empty() {
        return Err(DeviceError::NoHeatPath);
    }
    for (index, b) in layout.bridges.iter().enumerate() {
        if !(b.width_nm > 0.0 && b.width_nm.is_finite()) {
            return Err(DeviceError::ZeroWidthBridge { index });
        }
        positive("bridge.length_um", b.length_um)?;
        let half = 0.5 * b.width_nm * 1e-3;
        if b.anchor_x_um - half < 0.0 || b.anchor_x_um + half > m.length_um {
            return Err(DeviceError::BridgeOutOfBounds { index });
        }
    }

    let pad = &layout.pad;
    positive("pad.w_um", pad.rect.w_um)?;
    positive("pad.h_um", pad.rect.h_um)?;
    let r = pad.rect;
    let corners = [
        Point::new(r.x_um, r.y_um),
        Point::new(r.x_um + r.w_um, r.y_um + r.h_um),
    ];
    if !corners.iter().all(|&c| m.contains(c)) {
        return Err(DeviceError::PadOutOfBounds);
    }
    if let PadProfile::Gaussian { sigma_um } = pad.profile {
        positive("pad.profile.sigma_um", sigma_um)?;
    }

    let mat = &layout.material;
    positive("material.kappa_ref", mat.kappa_ref)?;
    positive("material.t_ref", mat.t_ref)?;
    positive("material.body_scale", mat.body_scale)?;
    if !mat.exponent.is_finite() {
        return Err(DeviceError::NonPositive {
            field: "material.exponent (finite)",
            value: mat.exponent,
        });
    }

    if !m.contains(layout.cavity_position) {
        return Err(DeviceError::PositionOutside {
            name: "cavity".into(),
        });
    }
    for qd in &layout.qd_positions {
        if !m.contains(qd.position) {
            return Err(DeviceError::PositionOutside {
                name: qd.id.clone(),
            });
        }
    }
    Ok(layout)
}

impl DeviceLayout {
    /// Total bridge shape factor `Σ Aᵢ / Lᵢ` in cm.
    pub fn bridge_shape_factor_cm(&self) -> f64 {
        self.bridges
            .iter()
            .map(|b| b.shape_factor_cm(self.membrane.thickness_nm))
            .sum()
    }

    /// Lumped bridge conductance at the reference conductivity, W/K.
    pub fn reference_conductance(&self) -> f64 {
        self.material.kappa_ref * self.bridge_shape_factor_cm()
    }

    /// Same layout with every bridge set to a new width.
    pub fn with_bridge_width(mut self, width_nm: f64) -> Self {
        for b in &mut self.bridges {
            b.width_nm = width_nm;
        }
        self
    }
}

/// Ratio of lumped bridge conductances `G(a) / G(b)`.
pub fn conductance_ratio(a: &DeviceLayout, b: &DeviceLayout) -> f64 {
    a.reference_conductance() / b.reference_conductance()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_device() {
        let l = DeviceLayout::default();
        assert_eq!(l.membrane.length_um, 12.0);
        assert_eq!(l.membrane.width_um, 4.0);
        assert_eq!(l.membrane.thickness_nm, 150.0);
        assert_eq!(l.bridges.len(), 6);
        assert!(l
            .bridges
            .iter()
            .all(|b| b.length_um == 2.0 && b.width_nm == 320.0));
        assert_eq!(l.bridges.iter().filter(|b| b.side == Side::Top).count(), 3);
        assert_eq!(l.material, MaterialModel::default());
        validate_layout(l).unwrap();
    }

    #[test]
    fn wide_bridge_variant() {
        let l = default_layout(800.0);
        assert!(l.bridges.iter().all(|b| b.width_nm == 800.0));
    }

    #[test]
    fn shape_factor_of_reference_device() {
        // 6 · (320 nm · 150 nm) / 2 µm, worked in cm by hand
        let expected = 6.0 * (3.2e-5 * 1.5e-5) / 2e-4;
        let got = DeviceLayout::default().bridge_shape_factor_cm();
        assert!((got - expected).abs() < 1e-18, "{got}");
        assert!((got - 1.44e-5).abs() < 1e-18);
    }

    #[test]
    fn conductance_ratio_is_width_ratio() {
        let r = conductance_ratio(&default_layout(800.0), &default_layout(320.0));
        assert_eq!(r, 2.5);
    }

    #[test]
    fn pad_outside_is_rejected() {
        let mut l = DeviceLayout::default();
        l.pad.rect.x_um = 10.5;
        let err = validate_layout(l).unwrap_err();
        assert_eq!(err, DeviceError::PadOutOfBounds);
        assert_eq!(err.to_string(), "pad out of bounds");
    }

    #[test]
    fn empty_bridge_list_is_rejected() {
        let mut l = DeviceLayout::default();
        l.bridges.clear();
        let err = validate_layout(l).unwrap_err();
        assert!(err.to_string().starts_with("no heat path"));
    }

    #[test]
    fn zero_width_bridge_is_rejected() {
        let mut l = DeviceLayout::default();
        l.bridges[2].width_nm = 0.0;
        assert_eq!(
            validate_layout(l).unwrap_err(),
            DeviceError::ZeroWidthBridge { index: 2 }
        );
    }

    #[test]
    fn qd_outside_is_rejected() {
        let mut l = DeviceLayout::default();
        l.qd_positions[0].position.y_um = -1.0;
        assert!(matches!(
            validate_layout(l),
            Err(DeviceError::PositionOutside { .. })
        ));
    }
}
