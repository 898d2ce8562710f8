use serde::{Deserialize, Serialize};

use super::cg::{self, Csr};
use super::{kappa_unchecked, ThermalError};
use crate::device::{CellKind, Point, ThermalGrid};
use crate::exec::{map_ordered, Execution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the largest relative temperature change per iteration and
    /// the energy residual are both below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation applied on iterations that reverse the previous update.
    pub damping: f64,
    /// Relative residual for each inner linear solve.
    pub linear_rtol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            damping: 0.5,
            linear_rtol: 1e-13,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }

    pub fn with_max_iter(self, max_iter: usize) -> Self {
        Self { max_iter, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `|boundary outflux − Σq| / Σq` recomputed from the final field.
    pub residual: f64,
    pub converged: bool,
    /// Largest relative temperature change in the last iteration.
    pub max_change: f64,
}

impl SolveReport {
    pub fn ensure_converged(&self) -> Result<(), ThermalError> {
        if self.converged {
            Ok(())
        } else {
            Err(ThermalError::NotConverged {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

/// Steady-state temperature per grid cell; void cells carry no value.
#[derive(Debug, Clone)]
pub struct TemperatureField {
    grid: ThermalGrid,
    bath_k: f64,
    values: Vec<f64>,
}

impl TemperatureField {
    pub fn uniform(grid: &ThermalGrid, bath_k: f64) -> Self {
        let values = grid
            .cells()
            .iter()
            .map(|c| if c.is_solid() { bath_k } else { f64::NAN })
            .collect();
        Self {
            grid: grid.clone(),
            bath_k,
            values,
        }
    }

    pub fn grid(&self) -> &ThermalGrid {
        &self.grid
    }

    pub fn bath_k(&self) -> f64 {
        self.bath_k
    }

    pub fn value(&self, idx: usize) -> Option<f64> {
        self.grid.cells()[idx].is_solid().then(|| self.values[idx])
    }

    /// Temperature of the solid cell containing `p`.
    pub fn at(&self, p: Point) -> Option<f64> {
        self.grid.locate(p).and_then(|idx| self.value(idx))
    }

    /// Solid cells in row-major order with their centres.
    pub fn solid_cells(&self) -> impl Iterator<Item = (usize, Point, f64)> + '_ {
        self.grid
            .cells()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_solid())
            .map(|(idx, _)| (idx, self.grid.center(idx), self.values[idx]))
    }

    pub fn max_k(&self) -> f64 {
        self.solid_cells()
            .map(|(_, _, t)| t)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_k(&self) -> f64 {
        self.solid_cells()
            .map(|(_, _, t)| t)
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean temperature over cells of one kind, or `None` if there are none.
    pub fn mean_over(&self, kind: CellKind) -> Option<f64> {
        let (sum, n) = self
            .grid
            .cells()
            .iter()
            .zip(&self.values)
            .filter(|(c, _)| c.kind == kind)
            .fold((0.0, 0usize), |(s, n), (_, &t)| (s + t, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Per-cell `κ(T)·scale·thickness` in W/K (square cells: face length equals
/// centre spacing).
fn cell_conductance(grid: &ThermalGrid, values: &[f64]) -> Vec<f64> {
    let m = grid.material();
    grid.cells()
        .iter()
        .zip(values)
        .map(|(c, &t)| {
            if c.is_solid() {
                kappa_unchecked(m, t) * c.kappa_scale * c.thickness_nm * 1e-7
            } else {
                0.0
            }
        })
        .collect()
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Recomputes the heat leaving through anchored cells from the field itself
/// and compares it with the injected power.
pub fn energy_residual(field: &TemperatureField) -> f64 {
    let grid = &field.grid;
    let injected = grid.total_source_w();
    if injected == 0.0 {
        return 0.0;
    }
    let w = cell_conductance(grid, &field.values);
    let mut outflux = 0.0;
    for (idx, c) in grid.cells().iter().enumerate() {
        if !(c.is_solid() && c.anchored) {
            continue;
        }
        outflux += c.source_w;
        for n in grid.neighbours(idx) {
            let nc = &grid.cells()[n];
            if nc.is_solid() && !nc.anchored {
                outflux += harmonic(w[idx], w[n]) * (field.values[n] - field.bath_k);
            }
        }
    }
    ((outflux - injected) / injected).abs()
}

struct Assembly {
    /// Cell index of every unknown.
    cells: Vec<usize>,
    /// Unknown index per cell.
    slot: Vec<Option<usize>>,
    matrix: Csr,
    /// For each stored entry, the neighbouring cell it couples to (`None` on
    /// the diagonal).
    partner: Vec<Option<usize>>,
}

impl Assembly {
    fn new(grid: &ThermalGrid) -> Self {
        let slot: Vec<Option<usize>> = {
            let mut next = 0;
            grid.cells()
                .iter()
                .map(|c| {
                    (c.is_solid() && !c.anchored).then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        };
        let cells: Vec<usize> = (0..slot.len()).filter(|&i| slot[i].is_some()).collect();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut partner = Vec::new();
        for (row, &idx) in cells.iter().enumerate() {
            let mut entries: Vec<(usize, Option<usize>)> = vec![(row, None)];
            for n in grid.neighbours(idx) {
                if let Some(col) = slot[n] {
                    entries.push((col, Some(n)));
                }
            }
            entries.sort_by_key(|e| e.0);
            for (col, p) in entries {
                cols.push(col);
                partner.push(p);
            }
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        Self {
            cells,
            slot,
            matrix: Csr {
                row_ptr,
                cols,
                vals: vec![0.0; nnz],
            },
            partner,
        }
    }

    /// Fills matrix values and returns the right-hand side for conductances
    /// frozen at `values`.
    fn fill(&mut self, grid: &ThermalGrid, values: &[f64], bath: f64) -> Vec<f64> {
        let w = cell_conductance(grid, values);
        let mut rhs = vec![0.0; self.cells.len()];
        for (row, &idx) in self.cells.iter().enumerate() {
            let mut diag = 0.0;
            rhs[row] = grid.cells()[idx].source_w;
            for n in grid.neighbours(idx) {
                let nc = &grid.cells()[n];
                if !nc.is_solid() {
                    continue;
                }
                let g = harmonic(w[idx], w[n]);
                diag += g;
                if self.slot[n].is_none() {
                    rhs[row] += g * bath;
                }
            }
            let span = self.matrix.row_ptr[row]..self.matrix.row_ptr[row + 1];
            for k in span {
                self.matrix.vals[k] = match self.partner[k] {
                    None => diag,
                    Some(n) => -harmonic(w[idx], w[n]),
                };
            }
        }
        rhs
    }
}

/// Steady state of `∇·(κ(T) t ∇T) + q = 0` on `grid` with anchored cells at
/// `t_bath`, by Picard iteration on the conductivity.
///
/// Non-convergence within `max_iter` is reported through
/// [`SolveReport::converged`] with the last iterate returned, so callers can
/// inspect it; use [`SolveReport::ensure_converged`] to turn it into an error.
pub fn solve_steady_state(
    grid: &ThermalGrid,
    t_bath: f64,
    opts: &SolverOptions,
) -> Result<(TemperatureField, SolveReport), ThermalError> {
    if !(opts.tol > 0.0) {
        return Err(ThermalError::InvalidTolerance(opts.tol));
    }
    if !(t_bath > 0.0) {
        return Err(ThermalError::NonPositiveTemperature(t_bath));
    }
    if grid.cells().iter().any(|c| !(c.source_w >= 0.0)) {
        return Err(ThermalError::InvalidPower(grid.total_source_w()));
    }
    grid.check_connected()?;

    let mut field = TemperatureField::uniform(grid, t_bath);
    let mut asm = Assembly::new(grid);
    let n = asm.cells.len();
    if n == 0 || grid.total_source_w() == 0.0 {
        let report = SolveReport {
            iterations: 0,
            residual: energy_residual(&field),
            converged: true,
            max_change: 0.0,
        };
        return Ok((field, report));
    }

    let mut x: Vec<f64> = asm.cells.iter().map(|&i| field.values[i]).collect();
    let mut prev_delta = vec![0.0; n];
    let mut report = SolveReport {
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
        max_change: f64::INFINITY,
    };
    let cg_limit = 20 * n + 100;

    for it in 1..=opts.max_iter {
        let rhs = asm.fill(grid, &field.values, t_bath);
        let current = x.clone();
        cg::solve(&asm.matrix, &rhs, &mut x, opts.linear_rtol, cg_limit)
            .map_err(ThermalError::LinearSolve)?;

        let delta: Vec<f64> = x.iter().zip(&current).map(|(a, b)| a - b).collect();
        let reversal: f64 = delta.iter().zip(&prev_delta).map(|(a, b)| a * b).sum();
        let relax = if reversal < 0.0 { opts.damping } else { 1.0 };

        let mut max_change: f64 = 0.0;
        for k in 0..n {
            x[k] = current[k] + relax * delta[k];
            max_change = max_change.max(((x[k] - current[k]) / x[k]).abs());
            field.values[asm.cells[k]] = x[k];
        }
        prev_delta = delta;

        report.iterations = it;
        report.max_change = max_change;
        report.residual = energy_residual(&field);
        if max_change < opts.tol && report.residual <= opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((field, report))
}

/// Solves the same grid at several absorbed powers, reusing the grid's source
/// distribution as the spatial profile.
pub fn solve_power_sweep(
    grid: &ThermalGrid,
    powers_w: &[f64],
    t_bath: f64,
    opts: &SolverOptions,
    exec: Execution,
) -> Vec<Result<(TemperatureField, SolveReport), ThermalError>> {
    let total = grid.total_source_w();
    map_ordered(exec, powers_w, |&p| {
        if !(p >= 0.0 && p.is_finite()) || (total == 0.0 && p > 0.0) {
            return Err(ThermalError::InvalidPower(p));
        }
        let scaled = if total == 0.0 {
            grid.clone()
        } else {
            grid.scaled_sources(p / total)
        };
        solve_steady_state(&scaled, t_bath, opts)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{rasterize, DeviceLayout, MaterialModel};
    use crate::thermal::kappa_integral;

    #[test]
    fn zero_source_is_uniform_bath() {
        let g = rasterize(&DeviceLayout::default(), 0.2, 0.0).unwrap();
        let (f, r) = solve_steady_state(&g, 10.0, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.residual, 0.0);
        assert!(f.solid_cells().all(|(_, _, t)| t == 10.0));
    }

    #[test]
    fn constant_kappa_bar_is_exact() {
        // linear problem: every link carries P, ΔT per link = P / (κ t)
        let material = MaterialModel {
            exponent: 0.0,
            ..MaterialModel::default()
        };
        let p = 1e-7;
        let g = ThermalGrid::bar(8, 0.25, 150.0, p).with_material(material);
        let (f, r) = solve_steady_state(&g, 10.0, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        let link = p / (3e-2 * 150e-7);
        for k in 0..=8 {
            let expected = 10.0 + k as f64 * link;
            assert!((f.value(k).unwrap() - expected).abs() < 1e-9 * expected);
        }
    }

    #[test]
    fn anchored_cells_hold_bath() {
        let g = rasterize(&DeviceLayout::default(), 0.2, 1e-5).unwrap();
        let (f, _) = solve_steady_state(&g, 10.0, &SolverOptions::default()).unwrap();
        for (idx, c) in g.cells().iter().enumerate() {
            if c.anchored {
                assert_eq!(f.value(idx), Some(10.0));
            }
        }
        assert_eq!(f.min_k(), 10.0);
    }

    #[test]
    fn single_iteration_is_flagged() {
        let g = rasterize(&DeviceLayout::default(), 0.2, 1e-5).unwrap();
        let opts = SolverOptions::default().with_max_iter(1);
        let (f, r) = solve_steady_state(&g, 10.0, &opts).unwrap();
        assert!(!r.converged);
        assert!(r.residual > opts.tol);
        assert_eq!(r.residual, energy_residual(&f));
        assert!(r.ensure_converged().is_err());
    }

    #[test]
    fn bar_end_temperature_close_to_closed_form() {
        let m = MaterialModel::default();
        let (n, dx) = (64, 2.0 / 64.0);
        let thickness = 150.0;
        let p = 2e-7;
        let g = ThermalGrid::bar(n, dx, thickness, p);
        let (f, r) =
            solve_steady_state(&g, 10.0, &SolverOptions::default().with_tol(1e-12)).unwrap();
        assert!(r.converged, "{r:?}");
        let shape = (dx * 1e-4) * (thickness * 1e-7) / (2.0 * 1e-4);
        let t_end = f.value(n).unwrap();
        let carried = shape * kappa_integral(&m, 10.0, t_end).unwrap();
        assert!(((carried - p) / p).abs() < 1e-2, "{carried} vs {p}");
    }

    #[test]
    fn invalid_inputs() {
        let g = ThermalGrid::bar(4, 0.1, 150.0, 1e-8);
        assert!(matches!(
            solve_steady_state(&g, 10.0, &SolverOptions::default().with_tol(0.0)),
            Err(ThermalError::InvalidTolerance(_))
        ));
        assert!(solve_steady_state(&g, -1.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn sweep_matches_individual_solves() {
        let g = rasterize(&DeviceLayout::default(), 0.25, 1e-5).unwrap();
        let opts = SolverOptions::default();
        let powers = [0.0, 5e-6, 1e-5];
        let par = solve_power_sweep(&g, &powers, 10.0, &opts, Execution::Parallel);
        let seq = solve_power_sweep(&g, &powers, 10.0, &opts, Execution::Sequential);
        for (a, b) in par.iter().zip(&seq) {
            let (fa, _) = a.as_ref().unwrap();
            let (fb, _) = b.as_ref().unwrap();
            let va: Vec<f64> = fa.solid_cells().map(|c| c.2).collect();
            let vb: Vec<f64> = fb.solid_cells().map(|c| c.2).collect();
            assert_eq!(va, vb);
        }
    }
}
