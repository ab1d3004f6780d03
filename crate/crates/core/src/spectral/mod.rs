//! Ground states of H(ξ), the dispersion E(ξ), finite-difference gradients
//! and shifted resolvent solves (H(ξ−k) + |k| − E)⁻¹η.

mod eigen;
mod minres;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eigen::{dense_spectrum, lowest_eigenpair, residual_norm, GroundStateRecord, Method, SolverInfo, SolverOptions};
pub use minres::{minres, MinresOutput};

use crate::error::{Error, Result};
use crate::field::{dot3, norm3, FiberModel};
use crate::format::float;
use crate::quadrature::Vec3;
use crate::sparse::C64;

/// Fixed spinor of the Lanczos start vector.
pub const START_SPINOR: [C64; 2] = [C64::new(0.8, 0.0), C64::new(0.6, 0.0)];

/// Ground-state record of H(ξ) for one total momentum.
pub fn ground_state(model: &FiberModel, xi: Vec3, opts: &SolverOptions) -> Result<GroundStateRecord> {
    let fiber = model.hamiltonian(xi);
    let start = model.carrier().vacuum(START_SPINOR);
    let mut record = lowest_eigenpair(&fiber.h, Some(&start), opts)?;
    record.xi = xi;
    Ok(record)
}

/// E(ξ) alone: a single eigenpair, no cluster resolution.
pub fn ground_energy(model: &FiberModel, xi: Vec3, opts: &SolverOptions) -> Result<f64> {
    let single = SolverOptions { n_wanted: 1, max_cluster: 1, ..opts.clone() };
    Ok(ground_state(model, xi, &single)?.energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub xi: Vec3,
    pub energy: f64,
    pub n_expect: f64,
    pub v_expect: Vec3,
    pub gap: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl DispersionRow {
    pub fn from_record(model: &FiberModel, record: &GroundStateRecord) -> Self {
        let ops = &model.ops;
        let psi = &record.vector;
        let v_expect = std::array::from_fn(|i| {
            let vpsi = ops.apply_velocity(record.xi, i, psi);
            crate::linalg::dot(psi, &vpsi).re
        });
        Self {
            xi: record.xi,
            energy: record.energy,
            n_expect: ops.number.expectation(psi),
            v_expect,
            gap: record.gap,
            iterations: record.solver.iterations,
            residual: record.solver.residual,
        }
    }

    /// t(ξ) = E(ξ) − ξ²
    pub fn t(&self) -> f64 {
        self.energy - dot3(self.xi, self.xi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionFailure {
    pub xi: Vec3,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DispersionTable {
    pub rows: Vec<DispersionRow>,
    pub failures: Vec<DispersionFailure>,
}

pub const DISPERSION_HEADER: &str = "xi_x,xi_y,xi_z,E,t,N_expect,gap,iters,residual";

impl DispersionTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(DISPERSION_HEADER);
        out.push('\n');
        for row in &self.rows {
            let gap = row.gap.map(float).unwrap_or_else(|| "NaN".into());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                float(row.xi[0]),
                float(row.xi[1]),
                float(row.xi[2]),
                float(row.energy),
                float(row.t()),
                float(row.n_expect),
                gap,
                row.iterations,
                float(row.residual)
            );
        }
        out
    }

    pub fn row(&self, xi: Vec3) -> Option<&DispersionRow> {
        self.rows.iter().find(|r| r.xi == xi)
    }
}

/// Removes repeated momenta, keeping first occurrences.
pub fn unique_momenta(xis: &[Vec3]) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::with_capacity(xis.len());
    for xi in xis {
        if !out.iter().any(|o| o == xi) {
            out.push(*xi);
        }
    }
    out
}

/// Sampled E(ξ); rows are solved independently and in parallel.
pub fn dispersion(model: &FiberModel, xis: &[Vec3], opts: &SolverOptions) -> Result<DispersionTable> {
    dispersion_with(model, xis, |xi| ground_state(model, xi, opts))
}

/// As [`dispersion`], with a caller-supplied record source (e.g. a cache).
pub fn dispersion_with<F>(model: &FiberModel, xis: &[Vec3], solve: F) -> Result<DispersionTable>
where
    F: Fn(Vec3) -> Result<GroundStateRecord> + Sync,
{
    if xis.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    let xis = unique_momenta(xis);
    let results: Vec<(Vec3, Result<GroundStateRecord>)> = xis.par_iter().map(|&xi| (xi, solve(xi))).collect();
    let mut table = DispersionTable::default();
    for (xi, result) in results {
        match result {
            Ok(record) => table.rows.push(DispersionRow::from_record(model, &record)),
            Err(err) => table.failures.push(DispersionFailure { xi, error: err.to_string() }),
        }
    }
    Ok(table)
}

/// Default FD step 1e-3·max(1, |ξ|).
pub fn default_fd_step(xi: Vec3) -> f64 {
    1e-3 * norm3(xi).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdGradient {
    /// Central differences at step h.
    pub gradient: Vec3,
    pub step: f64,
    /// Richardson extrapolation from steps h and h/2, when requested.
    pub richardson: Option<Vec3>,
    /// |D(h) − D(h/2)|·4/3 per axis, the O(h²) truncation estimate.
    pub error_estimate: Option<Vec3>,
}

/// ∇E(ξ) by central differences (E(ξ+he_i) − E(ξ−he_i))/(2h).
pub fn fd_gradient(model: &FiberModel, xi: Vec3, h: f64, richardson: bool, opts: &SolverOptions) -> Result<FdGradient> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("FD step must be positive, got {h}")));
    }
    let central = |step: f64| -> Result<Vec3> {
        let mut g = [0.0; 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = xi;
            let mut minus = xi;
            plus[i] += step;
            minus[i] -= step;
            *gi = (ground_energy(model, plus, opts)? - ground_energy(model, minus, opts)?) / (2.0 * step);
        }
        Ok(g)
    };
    let gradient = central(h)?;
    let (richardson, error_estimate) = if richardson {
        let half = central(h / 2.0)?;
        let extrap = std::array::from_fn(|i| (4.0 * half[i] - gradient[i]) / 3.0);
        let est = std::array::from_fn(|i| (gradient[i] - half[i]).abs() * 4.0 / 3.0);
        (Some(extrap), Some(est))
    } else {
        (None, None)
    };
    Ok(FdGradient { gradient, step: h, richardson, error_estimate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedSolve {
    pub x: Vec<C64>,
    /// Lowest eigenvalue of H(ξ−k) + |k| − E, i.e. E(ξ−k) + |k| − E.
    pub lowest: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Lowest eigenvalue of the shifted operator H(ξ−k) + |k| − E.
pub fn shifted_lowest(model: &FiberModel, xi: Vec3, k: Vec3, energy: f64, opts: &SolverOptions) -> Result<f64> {
    let shifted = [xi[0] - k[0], xi[1] - k[1], xi[2] - k[2]];
    Ok(ground_energy(model, shifted, opts)? + norm3(k) - energy)
}

/// Solves (H(ξ−k) + |k| − E) x = η by preconditioned MINRES.
///
/// Fails with [`Error::IndefiniteShift`] when the shifted operator is not
/// positive definite, i.e. k̂ outside the gapped cone or |k| too large.
pub fn solve_shifted(
    model: &FiberModel,
    xi: Vec3,
    k: Vec3,
    energy: f64,
    eta: &[C64],
    tol: f64,
    opts: &SolverOptions,
) -> Result<ShiftedSolve> {
    let lowest = shifted_lowest(model, xi, k, energy, opts)?;
    solve_shifted_with_lowest(model, xi, k, energy, eta, tol, opts, lowest)
}

/// [`solve_shifted`] with a precomputed lowest eigenvalue of the shifted operator.
#[allow(clippy::too_many_arguments)]
pub fn solve_shifted_with_lowest(
    model: &FiberModel,
    xi: Vec3,
    k: Vec3,
    energy: f64,
    eta: &[C64],
    tol: f64,
    opts: &SolverOptions,
    lowest: f64,
) -> Result<ShiftedSolve> {
    if eta.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: eta.len() });
    }
    if lowest <= 0.0 {
        return Err(Error::IndefiniteShift { lowest });
    }
    let shifted = [xi[0] - k[0], xi[1] - k[1], xi[2] - k[2]];
    let fiber = model.hamiltonian(shifted);
    let out = minres(&fiber.h, norm3(k) - energy, eta, tol, opts.max_iter, true)?;
    Ok(ShiftedSolve { x: out.x, lowest, iterations: out.iterations, residual: out.residual })
}
