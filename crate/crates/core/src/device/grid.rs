use std::collections::VecDeque;

use super::{validate_layout, DeviceError, DeviceLayout, MaterialModel, PadProfile, Point, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Void,
    Membrane,
    Bridge,
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub kind: CellKind,
    pub thickness_nm: f64,
    /// Absorbed power deposited in this cell, W.
    pub source_w: f64,
    /// Held at bath temperature by the solver.
    pub anchored: bool,
    /// Conductivity multiplier relative to the material model.
    pub kappa_scale: f64,
}

impl Cell {
    pub const VOID: Cell = Cell {
        kind: CellKind::Void,
        thickness_nm: 0.0,
        source_w: 0.0,
        anchored: false,
        kappa_scale: 0.0,
    };

    pub fn solid(kind: CellKind, thickness_nm: f64) -> Self {
        Cell {
            kind,
            thickness_nm,
            source_w: 0.0,
            anchored: false,
            kappa_scale: 1.0,
        }
    }

    pub fn is_solid(&self) -> bool {
        self.kind != CellKind::Void
    }
}

/// Square-cell raster of the solve domain, stored row-major (`y` outer).
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalGrid {
    nx: usize,
    ny: usize,
    dx_um: f64,
    origin: Point,
    cells: Vec<Cell>,
    material: MaterialModel,
}

impl ThermalGrid {
    /// An all-void grid.
    pub fn void(nx: usize, ny: usize, dx_um: f64, origin: Point) -> Self {
        Self {
            nx,
            ny,
            dx_um,
            origin,
            cells: vec![Cell::VOID; nx * ny],
            material: MaterialModel::default(),
        }
    }

    /// Builds a grid from explicit cells and checks that every solid cell can
    /// reach an anchored one.
    pub fn from_cells(
        nx: usize,
        ny: usize,
        dx_um: f64,
        origin: Point,
        cells: Vec<Cell>,
    ) -> Result<Self, DeviceError> {
        if !(dx_um > 0.0 && dx_um.is_finite()) {
            return Err(DeviceError::InvalidPitch(dx_um));
        }
        assert_eq!(cells.len(), nx * ny, "cell count must equal nx * ny");
        let grid = Self {
            nx,
            ny,
            dx_um,
            origin,
            cells,
            material: MaterialModel::default(),
        };
        grid.check_connected()?;
        Ok(grid)
    }

    /// A straight one-cell-wide bar of `n_links + 1` cells along `x`: the
    /// first cell is anchored, the last receives `power_w`. Centre-to-centre
    /// length is `n_links · dx_um`.
    pub fn bar(n_links: usize, dx_um: f64, thickness_nm: f64, power_w: f64) -> Self {
        let n = n_links + 1;
        let mut cells = vec![Cell::solid(CellKind::Bridge, thickness_nm); n];
        cells[0].anchored = true;
        cells[n - 1].source_w = power_w;
        Self::from_cells(n, 1, dx_um, Point::new(0.0, 0.0), cells).expect("bar is connected")
    }

    /// Replaces the conductivity model used by the solver.
    pub fn with_material(mut self, material: MaterialModel) -> Self {
        self.material = material;
        self
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx_um(&self) -> f64 {
        self.dx_um
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[self.index(i, j)]
    }

    pub fn center(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        Point::new(
            self.origin.x_um + (i as f64 + 0.5) * self.dx_um,
            self.origin.y_um + (j as f64 + 0.5) * self.dx_um,
        )
    }

    /// Index of the cell whose square contains `p`, if any.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let fx = (p.x_um - self.origin.x_um) / self.dx_um;
        let fy = (p.y_um - self.origin.y_um) / self.dx_um;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        (i < self.nx && j < self.ny).then(|| self.index(i, j))
    }

    /// 4-neighbourhood of a cell that lies inside the grid.
    pub fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.coords(idx);
        let (nx, ny) = (self.nx, self.ny);
        [
            (i > 0).then(|| idx - 1),
            (i + 1 < nx).then(|| idx + 1),
            (j > 0).then(|| idx - nx),
            (j + 1 < ny).then(|| idx + nx),
        ]
        .into_iter()
        .flatten()
    }

    pub fn solid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_solid()).count()
    }

    pub fn count(&self, kind: CellKind) -> usize {
        self.cells.iter().filter(|c| c.kind == kind).count()
    }

    pub fn solid_area_um2(&self) -> f64 {
        self.solid_count() as f64 * self.dx_um * self.dx_um
    }

    pub fn total_source_w(&self) -> f64 {
        self.cells.iter().map(|c| c.source_w).sum()
    }

    /// Copy with every source multiplied by `factor`.
    pub fn scaled_sources(&self, factor: f64) -> Self {
        let mut g = self.clone();
        for c in &mut g.cells {
            c.source_w *= factor;
        }
        g
    }

    /// Every solid cell must have a 4-connected path to an anchored cell;
    /// otherwise the steady state is unbounded.
    pub fn check_connected(&self) -> Result<(), DeviceError> {
        let mut seen = vec![false; self.cells.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for (idx, c) in self.cells.iter().enumerate() {
            if c.is_solid() && c.anchored {
                seen[idx] = true;
                queue.push_back(idx);
            }
        }
        while let Some(idx) = queue.pop_front() {
            for n in self.neighbours(idx) {
                if !seen[n] && self.cells[n].is_solid() {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        let count = self
            .cells
            .iter()
            .zip(&seen)
            .filter(|(c, s)| c.is_solid() && !**s)
            .count();
        if count == 0 {
            Ok(())
        } else {
            Err(DeviceError::Disconnected { count })
        }
    }
}

/// Half-open interval test on a cell centre, with a little slack so that
/// centres sitting on an edge through rounding are classified consistently.
fn within(v: f64, lo: f64, hi: f64) -> bool {
    const SLACK: f64 = 1e-9;
    v >= lo - SLACK && v < hi - SLACK
}

/// Rasterizes a layout at pitch `dx_um`, depositing `absorbed_w` over the
/// pad cells according to the pad profile.
///
/// Cells are classified by the position of their centre. Bridges are snapped
/// to the grid so that each one is exactly `round(width / dx)` cells wide and
/// `round(length / dx)` cells long; the outermost row of every bridge is
/// anchored to the bath.
pub fn rasterize(
    layout: &DeviceLayout,
    dx_um: f64,
    absorbed_w: f64,
) -> Result<ThermalGrid, DeviceError> {
    if !(dx_um > 0.0 && dx_um.is_finite()) {
        return Err(DeviceError::InvalidPitch(dx_um));
    }
    if !(absorbed_w >= 0.0 && absorbed_w.is_finite()) {
        return Err(DeviceError::InvalidPower(absorbed_w));
    }
    let layout = validate_layout(layout.clone())?;
    let m = layout.membrane;
    let t = m.thickness_nm;

    let reach = |side: Side| {
        layout
            .bridges
            .iter()
            .filter(|b| b.side == side)
            .map(|b| (b.length_um / dx_um).round() as usize)
            .max()
            .unwrap_or(0)
    };
    let below = reach(Side::Bottom);
    let above = reach(Side::Top);
    let nx = (m.length_um / dx_um).round() as usize;
    let nw = (m.width_um / dx_um).round() as usize;
    if nx == 0 || nw == 0 {
        return Err(DeviceError::TooCoarse {
            feature: "membrane".into(),
            dx_um,
        });
    }
    let ny = below + nw + above;
    let origin = Point::new(0.0, -(below as f64) * dx_um);
    let mut grid = ThermalGrid::void(nx, ny, dx_um, origin).with_material(layout.material);

    for j in below..below + nw {
        for i in 0..nx {
            let idx = grid.index(i, j);
            let c = grid.center(idx);
            if within(c.x_um, 0.0, m.length_um) && within(c.y_um, 0.0, m.width_um) {
                let mut cell = Cell::solid(CellKind::Membrane, t);
                cell.kappa_scale = layout.material.body_scale;
                grid.cells[idx] = cell;
            }
        }
    }

    for (k, b) in layout.bridges.iter().enumerate() {
        let cols = (b.width_nm * 1e-3 / dx_um).round() as usize;
        let rows = (b.length_um / dx_um).round() as usize;
        if cols == 0 || rows == 0 {
            return Err(DeviceError::TooCoarse {
                feature: format!("bridge {k}"),
                dx_um,
            });
        }
        let start = (b.anchor_x_um / dx_um - cols as f64 / 2.0).round().max(0.0) as usize;
        let start = start.min(nx - cols.min(nx));
        for r in 0..rows {
            let j = match b.side {
                Side::Bottom => below - 1 - r,
                Side::Top => below + nw + r,
            };
            for i in start..(start + cols).min(nx) {
                let idx = grid.index(i, j);
                let mut cell = Cell::solid(CellKind::Bridge, t);
                cell.anchored = r + 1 == rows;
                grid.cells[idx] = cell;
            }
        }
    }

    let rect = layout.pad.rect;
    let mut pad_cells = Vec::new();
    for j in below..below + nw {
        for i in 0..nx {
            let idx = grid.index(i, j);
            let c = grid.center(idx);
            if grid.cells[idx].kind == CellKind::Membrane
                && within(c.x_um, rect.x_um, rect.x_um + rect.w_um)
                && within(c.y_um, rect.y_um, rect.y_um + rect.h_um)
            {
                grid.cells[idx].kind = CellKind::Pad;
                pad_cells.push(idx);
            }
        }
    }
    if pad_cells.is_empty() {
        return Err(DeviceError::TooCoarse {
            feature: "pad".into(),
            dx_um,
        });
    }

    let centre = rect.center();
    let weights: Vec<f64> = pad_cells
        .iter()
        .map(|&idx| match layout.pad.profile {
            PadProfile::Uniform => 1.0,
            PadProfile::Gaussian { sigma_um } => {
                let c = grid.center(idx);
                let r2 = (c.x_um - centre.x_um).powi(2) + (c.y_um - centre.y_um).powi(2);
                (-r2 / (2.0 * sigma_um * sigma_um)).exp()
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    for (&idx, w) in pad_cells.iter().zip(&weights) {
        grid.cells[idx].source_w = absorbed_w * w / total;
    }

    grid.check_connected()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{default_layout, DeviceLayout, PadProfile};

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }

    #[test]
    fn void_grid_has_no_solid_cells() {
        let g = ThermalGrid::void(12, 4, 1.0, Point::new(0.0, 0.0));
        assert_eq!(g.solid_count(), 0);
        assert!(g.check_connected().is_ok());
        assert_eq!(g.total_source_w(), 0.0);
    }

    #[test]
    fn default_membrane_block_at_point_one() {
        let g = rasterize(&DeviceLayout::default(), 0.1, 1e-5).unwrap();
        // 120 × 40 membrane block (pad included), counted directly
        let body = g.count(CellKind::Membrane) + g.count(CellKind::Pad);
        assert_eq!(body, 120 * 40);
        assert_eq!(g.nx(), 120);
        assert_eq!(g.ny(), 20 + 40 + 20);
    }

    #[test]
    fn bridges_are_three_by_twenty() {
        let g = rasterize(&DeviceLayout::default(), 0.1, 0.0).unwrap();
        assert_eq!(g.count(CellKind::Bridge), 6 * 3 * 20);
        // one anchored row of 3 per bridge
        let anchored = g.cells().iter().filter(|c| c.anchored).count();
        assert_eq!(anchored, 6 * 3);
        // the bridge at x = 2 µm, bottom side: columns counted across row 0
        let row0: Vec<usize> = (0..g.nx())
            .filter(|&i| g.cell(i, 0).kind == CellKind::Bridge)
            .collect();
        assert_eq!(row0.len(), 9);
        assert_eq!(&row0[..3], &[19, 20, 21]);
    }

    #[test]
    fn source_sums_to_requested_power() {
        for profile in [PadProfile::Uniform, PadProfile::Gaussian { sigma_um: 0.7 }] {
            let mut l = DeviceLayout::default();
            l.pad.profile = profile;
            for dx in [0.1, 0.05, 0.2] {
                let g = rasterize(&l, dx, 1e-5).unwrap();
                assert!(rel(g.total_source_w(), 1e-5) < 1e-12);
                assert!(g
                    .cells()
                    .iter()
                    .all(|c| c.source_w == 0.0 || c.kind == CellKind::Pad));
            }
        }
    }

    #[test]
    fn refinement_keeps_area() {
        let l = DeviceLayout::default();
        let a = rasterize(&l, 0.1, 0.0).unwrap().solid_area_um2();
        let b = rasterize(&l, 0.05, 0.0).unwrap().solid_area_um2();
        assert!(rel(b, a) < 0.05, "{a} vs {b}");
    }

    #[test]
    fn too_coarse_pitch_is_rejected() {
        let err = rasterize(&DeviceLayout::default(), 1.0, 0.0).unwrap_err();
        assert!(matches!(err, DeviceError::TooCoarse { .. }), "{err}");
        assert!(matches!(
            rasterize(&DeviceLayout::default(), 0.0, 0.0),
            Err(DeviceError::InvalidPitch(_))
        ));
    }

    #[test]
    fn wide_bridges_rasterize_wider() {
        let g = rasterize(&default_layout(800.0), 0.1, 0.0).unwrap();
        assert_eq!(g.count(CellKind::Bridge), 6 * 8 * 20);
    }

    #[test]
    fn orphan_cell_is_detected() {
        let mut cells = vec![Cell::solid(CellKind::Bridge, 150.0); 3];
        cells[0].anchored = true;
        cells[1] = Cell::VOID;
        let err = ThermalGrid::from_cells(3, 1, 0.1, Point::new(0.0, 0.0), cells).unwrap_err();
        assert_eq!(err, DeviceError::Disconnected { count: 1 });
    }

    #[test]
    fn locate_maps_points_to_cells() {
        let g = rasterize(&DeviceLayout::default(), 0.1, 0.0).unwrap();
        let idx = g.locate(Point::new(10.0, 2.0)).unwrap();
        let c = g.center(idx);
        assert!((c.x_um - 10.05).abs() < 1e-12 && (c.y_um - 2.05).abs() < 1e-12);
        assert!(g.locate(Point::new(-0.1, 0.0)).is_none());
    }
}
