//! Numerical checks of the fiber-Hamiltonian identities on computed ground
//! states, and the infrared sweep of the soft-photon number ⟨N⟩(σ).

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dot3, norm3, CouplingParams, FiberModel, FieldDiscretization};
use crate::fock::{FockBasis, FockBasisOptions};
use crate::format::float;
use crate::linalg::{self, axpy, dot, norm};
use crate::quadrature::{directions, is_antipodal, AngularScheme, RadialScheme, Vec3};
use crate::sparse::{SparseOperator, C64, ONE, ZERO};
use crate::spectral::{self, DispersionTable, GroundStateRecord, SolverOptions, START_SPINOR};

/// Default ε for the gapped cone S_ε.
pub const DEFAULT_CONE_EPS: f64 = 0.5;

/// Minimum number of valid rows for the IR fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Where a report was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub xi: Vec3,
    pub e: f64,
    pub grid: String,
}

impl Provenance {
    pub fn of(model: &FiberModel, xi: Vec3) -> Self {
        Self { xi, e: model.params().e, grid: model.provenance_hash() }
    }
}

/// One scalar residual checked against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Filled in by the runner; empty when produced outside a configured run.
    #[serde(default)]
    pub config_hash: String,
    pub provenance: Provenance,
}

impl IdentityReport {
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64, provenance: Provenance) -> Self {
        // negative residuals clamp to zero; NaN stays and fails
        let value = if value < 0.0 { 0.0 } else { value };
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value.is_finite() && value <= tolerance,
            config_hash: String::new(),
            provenance,
        }
    }
}

// ---------------------------------------------------------------- cones

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub grad: Vec3,
    pub eps: f64,
}

impl ConeSpec {
    pub fn new(grad: Vec3, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("cone eps must lie in (0,1), got {eps}")));
        }
        Ok(Self { grad, eps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeMembership {
    pub in_s_eps: bool,
    pub in_k: bool,
}

/// S_ε = {ω : ω·∇E ≤ 1 − ε}; K = {ω : −|∇E|/2 ≤ ω·∇E ≤ 0}.
pub fn cone_membership(omega: Vec3, spec: &ConeSpec) -> Result<ConeMembership> {
    let n = norm3(omega);
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::NonUnit { norm: n });
    }
    let p = dot3(omega, spec.grad);
    let in_s_eps = p <= 1.0 - spec.eps;
    let in_k = -0.5 * norm3(spec.grad) <= p && p <= 0.0;
    debug_assert!(!in_k || in_s_eps);
    Ok(ConeMembership { in_s_eps, in_k })
}

/// Relative floor below which a finite-difference gradient component is
/// treated as solver noise.
pub const GRADIENT_NOISE_FLOOR: f64 = 1e-8;

/// Zeroes gradient components below 10⁻⁸·max(1, |∇E|), so that directions
/// orthogonal to ∇E by symmetry land on the boundary of K instead of on a
/// side picked by round-off.
pub fn snap_gradient(grad: Vec3) -> Vec3 {
    let floor = GRADIENT_NOISE_FLOOR * norm3(grad).max(1.0);
    grad.map(|g| if g.abs() <= floor { 0.0 } else { g })
}

// ---------------------------------------------------------------- Feynman–Hellmann

/// max_i ‖2P₀v_iP₀ − (∇E)_i P₀‖ on the ground cluster, divided by max(1, |∇E|).
pub fn feynman_hellmann_check(
    model: &FiberModel,
    gs: &GroundStateRecord,
    grad: Vec3,
    tolerance: f64,
) -> Result<IdentityReport> {
    let d = gs.cluster.len();
    if d == 0 {
        return Err(Error::EmptyCluster);
    }
    let mut worst: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        let vc: Vec<Vec<C64>> = gs.cluster.iter().map(|c| model.ops.apply_velocity(gs.xi, i, c)).collect();
        let m = DMatrix::from_fn(d, d, |a, b| {
            let diag = if a == b { C64::new(g, 0.0) } else { ZERO };
            C64::new(2.0, 0.0) * dot(&gs.cluster[a], &vc[b]) - diag
        });
        // hermitize before the eigen-solve; the compression is hermitian up to round-off
        let m = (&m + m.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(m);
        worst = eig.eigenvalues.iter().fold(worst, |acc, v| acc.max(v.abs()));
    }
    let value = worst / norm3(grad).max(1.0);
    Ok(IdentityReport::new("feynman_hellmann", value, tolerance, Provenance::of(model, gs.xi)))
}

// ---------------------------------------------------------------- pull-through

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullThroughReport {
    pub channel: usize,
    /// Relative defect of the pull-through relation on ψ.
    pub r: f64,
    /// Norm of ψ on photon numbers ≥ n_max − 1, where the identity is not exact.
    pub topweight: f64,
    /// E(ξ−k) + |k| − E(ξ).
    pub lowest: f64,
    pub report: IdentityReport,
}

/// r = ‖(H(ξ−k)+|k|−E) a_μψ + e g (2ε·v(ξ) − i(k∧ε)·σ)ψ‖ / (e g‖ψ‖ + ‖a_μψ‖).
///
/// Passes when r ≤ 10·topweight + 10·tol. Fails with
/// [`Error::IndefiniteShift`] when the shifted operator has no gap.
pub fn pull_through_residual(
    model: &FiberModel,
    gs: &GroundStateRecord,
    mu: usize,
    opts: &SolverOptions,
) -> Result<PullThroughReport> {
    let channels = model.modes().num_channels();
    if mu >= channels {
        return Err(Error::ChannelOutOfRange { index: mu, channels });
    }
    let (mode, _) = model.modes().channel(mu);
    let xi = gs.xi;
    let lowest = spectral::shifted_lowest(model, xi, mode.k, gs.energy, opts)?;
    if lowest <= 0.0 {
        return Err(Error::IndefiniteShift { lowest });
    }
    let psi = &gs.vector;
    let shifted = [xi[0] - mode.k[0], xi[1] - mode.k[1], xi[2] - mode.k[2]];
    let h_shift = model.hamiltonian(shifted);
    let a_psi = model.carrier().apply_annihilation(mu, psi)?;
    let mut lhs = h_shift.h.apply(&a_psi);
    axpy(C64::new(mode.kmag - gs.energy, 0.0), &a_psi, &mut lhs);
    let source = model.ops.source_term(xi, mu, psi);
    axpy(ONE, &source, &mut lhs);

    let eg = (model.params().e * mode.coupling).abs();
    let denom = eg * norm(psi) + norm(&a_psi);
    let num = norm(&lhs);
    let r = if num == 0.0 { 0.0 } else { num / denom };
    let topweight = model.carrier().weight_at_or_above(psi, model.n_max().saturating_sub(1));
    let tolerance = 10.0 * topweight + 10.0 * opts.tol;
    let report = IdentityReport::new(format!("pull_through[{mu}]"), r, tolerance, Provenance::of(model, xi));
    Ok(PullThroughReport { channel: mu, r, topweight, lowest, report })
}

/// ⟨η, a_μψ⟩ against −⟨(H(ξ−k)+|k|−E)⁻¹η, e g (2ε·v − i(k∧ε)·σ)ψ⟩.
///
/// The deviation is scaled by lowest/(‖η‖(e g‖ψ‖ + ‖a_μψ‖)), which bounds it
/// by r plus the solver error; the tolerance is that bound.
pub fn eta_form_check(
    model: &FiberModel,
    gs: &GroundStateRecord,
    mu: usize,
    eta: &[C64],
    tol: f64,
    opts: &SolverOptions,
) -> Result<IdentityReport> {
    let pt = pull_through_residual(model, gs, mu, opts)?;
    let (mode, _) = model.modes().channel(mu);
    let psi = &gs.vector;
    let a_psi = model.carrier().apply_annihilation(mu, psi)?;
    let lhs = dot(eta, &a_psi);
    let solve = spectral::solve_shifted_with_lowest(model, gs.xi, mode.k, gs.energy, eta, tol, opts, pt.lowest)?;
    let source = model.ops.source_term(gs.xi, mu, psi);
    let rhs = -dot(&solve.x, &source);

    let eg = (model.params().e * mode.coupling).abs();
    let denom = norm(eta) * (eg * norm(psi) + norm(&a_psi));
    let dev = (lhs - rhs).norm();
    let value = if dev == 0.0 { 0.0 } else { dev * pt.lowest / denom };
    let source_ratio = if denom == 0.0 { 0.0 } else { norm(&source) * norm(eta) / denom };
    let tolerance = pt.r + tol * source_ratio.max(1.0) + 1e-12;
    Ok(IdentityReport::new(format!("pull_through_eta[{mu}]"), value, tolerance, Provenance::of(model, gs.xi)))
}

/// Largest defect of the operator pull-through identity over all channels,
/// applied to a seeded random basis of the photon layers ≤ n_max − 2.
pub fn pull_through_subspace_check(model: &FiberModel, xi: Vec3, seed: u64, tolerance: f64) -> Result<IdentityReport> {
    let carrier = model.carrier();
    let n_max = model.n_max();
    let prov = Provenance::of(model, xi);
    if n_max < 2 {
        return Ok(IdentityReport::new("pull_through_subspace", 0.0, tolerance, prov));
    }
    let low: Vec<usize> = (0..carrier.dim()).filter(|&i| carrier.photon_number(i) <= n_max - 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Vec<C64>> = (0..low.len())
        .map(|_| {
            let mut v = vec![ZERO; carrier.dim()];
            for &i in &low {
                v[i] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            linalg::normalize(&mut v);
            v
        })
        .collect();
    let h = model.hamiltonian(xi);
    let h_psi: Vec<Vec<C64>> = probes.iter().map(|p| h.h.apply(p)).collect();

    let modes = model.modes();
    let worst = (0..modes.len())
        .into_par_iter()
        .map(|m| -> Result<f64> {
            let k = modes.modes()[m].k;
            let kmag = modes.modes()[m].kmag;
            let h_shift = model.hamiltonian([xi[0] - k[0], xi[1] - k[1], xi[2] - k[2]]);
            let mut worst: f64 = 0.0;
            for mu in [2 * m, 2 * m + 1] {
                for (psi, hpsi) in probes.iter().zip(&h_psi) {
                    let mut defect = carrier.apply_annihilation(mu, hpsi)?;
                    let a_psi = carrier.apply_annihilation(mu, psi)?;
                    let rhs = h_shift.h.apply(&a_psi);
                    axpy(-ONE, &rhs, &mut defect);
                    axpy(C64::new(-kmag, 0.0), &a_psi, &mut defect);
                    axpy(-ONE, &model.ops.source_term(xi, mu, psi), &mut defect);
                    worst = worst.max(norm(&defect));
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(IdentityReport::new("pull_through_subspace", worst, tolerance, prov))
}

// ---------------------------------------------------------------- resolvent limit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventRow {
    pub kmag: f64,
    /// (E(ξ−k) + |k| − E(ξ))/|k|.
    pub gap_ratio: f64,
    /// ⟨η₁, Q(k)η₂⟩ with Q(k) = |k|(H(ξ−k)+|k|−E)⁻¹.
    pub q: C64,
    pub deviation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventLimitReport {
    pub omega: Vec3,
    /// (1 − ω·∇E)⁻¹⟨η₁, P₀η₂⟩.
    pub target: C64,
    pub rows: Vec<ResolventRow>,
    /// Deviation non-increasing as |k| decreases.
    pub monotone: IdentityReport,
    /// Gap ratio bounded below by ε − 0.1.
    pub gap: IdentityReport,
}

/// Probes Q(k) = |k|(H(ξ−k)+|k|−E)⁻¹ along k = |k|ω for a decreasing |k|
/// sequence, with η₁ = η₂ = vacuum ⊗ fixed spinor.
#[allow(clippy::too_many_arguments)]
pub fn resolvent_limit_check(
    model: &FiberModel,
    gs: &GroundStateRecord,
    grad: Vec3,
    omega: Vec3,
    kmags: &[f64],
    eps: f64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<ResolventLimitReport> {
    let cone = ConeSpec::new(grad, eps)?;
    if !cone_membership(omega, &cone)?.in_s_eps {
        return Err(Error::InvalidParameter(format!(
            "direction ({}, {}, {}) lies outside the gapped cone",
            omega[0], omega[1], omega[2]
        )));
    }
    if kmags.is_empty() || kmags.iter().any(|k| !(*k > 0.0)) || kmags.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("|k| sequence must be positive and strictly decreasing".into()));
    }
    if gs.cluster.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let probe = model.carrier().vacuum(START_SPINOR);
    let p0 = gs.cluster.iter().fold(ZERO, |acc, c| acc + dot(&probe, c) * dot(c, &probe));
    let target = p0 / (1.0 - dot3(omega, grad));

    let rows = kmags
        .par_iter()
        .map(|&kmag| -> Result<ResolventRow> {
            let k = [kmag * omega[0], kmag * omega[1], kmag * omega[2]];
            let solve = spectral::solve_shifted(model, gs.xi, k, gs.energy, &probe, tol, opts)?;
            let q = dot(&probe, &solve.x) * kmag;
            Ok(ResolventRow {
                kmag,
                gap_ratio: solve.lowest / kmag,
                q,
                deviation: (q - target).norm(),
                iterations: solve.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let prov = Provenance::of(model, gs.xi);
    let rise = rows.windows(2).map(|w| w[1].deviation - w[0].deviation).fold(0.0, f64::max);
    let monotone = IdentityReport::new("resolvent_limit.monotone", rise, tol, prov.clone());
    let min_ratio = rows.iter().map(|r| r.gap_ratio).fold(f64::INFINITY, f64::min);
    let gap = IdentityReport::new("resolvent_limit.gap_ratio", (eps - 0.1) - min_ratio, 0.0, prov);
    Ok(ResolventLimitReport { omega, target, rows, monotone, gap })
}

// ---------------------------------------------------------------- mode amplitudes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAmplitude {
    pub channel: usize,
    pub kmag: f64,
    pub khat: Vec3,
    pub in_k: bool,
    pub eps_dot_grad: f64,
    /// ε·∇E vanishes (to 10⁻⁶ of max(1, |∇E|)); the prediction is then exactly zero.
    pub predicted_zero: bool,
    /// ‖a_μψ‖
    pub measured: f64,
    /// |e| g |ε·∇E| / (|k|(1 − k̂·∇E))
    pub predicted: f64,
    /// measured/predicted, when the prediction is nonzero.
    pub ratio: Option<f64>,
}

pub fn mode_amplitude_report(model: &FiberModel, gs: &GroundStateRecord, grad: Vec3) -> Result<Vec<ModeAmplitude>> {
    let modes = model.modes();
    let e = model.params().e;
    let grad_norm = norm3(grad);
    (0..modes.num_channels())
        .map(|mu| {
            let (mode, _) = modes.channel(mu);
            let khat = mode.khat();
            let eps = modes.channel_polarization(mu);
            let eps_dot_grad = dot3(eps, grad);
            let along = dot3(khat, grad);
            let in_k = -0.5 * grad_norm <= along && along <= 0.0;
            let predicted_zero = eps_dot_grad.abs() <= 1e-6 * grad_norm.max(1.0);
            let measured = norm(&model.carrier().apply_annihilation(mu, &gs.vector)?);
            let predicted = if predicted_zero {
                0.0
            } else {
                (e * mode.coupling * eps_dot_grad).abs() / (mode.kmag * (1.0 - along))
            };
            let ratio = (predicted > 0.0).then(|| measured / predicted);
            Ok(ModeAmplitude {
                channel: mu,
                kmag: mode.kmag,
                khat,
                in_k,
                eps_dot_grad,
                predicted_zero,
                measured,
                predicted,
                ratio,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- ⟨N⟩ two ways

/// ⟨ψ, Nψ⟩ against Σ_μ ‖a_μψ‖², relative.
pub fn number_two_way_check(model: &FiberModel, xi: Vec3, psi: &[C64], tolerance: f64) -> Result<IdentityReport> {
    let diag = model.ops.number.expectation(psi);
    let mut sum = 0.0;
    for mu in 0..model.modes().num_channels() {
        sum += norm(&model.carrier().apply_annihilation(mu, psi)?).powi(2);
    }
    let dev = (diag - sum).abs();
    let value = if dev == 0.0 { 0.0 } else { dev / diag.abs().max(sum.abs()) };
    Ok(IdentityReport::new("number_two_way", value, tolerance, Provenance::of(model, xi)))
}

// ---------------------------------------------------------------- structural checks

/// Largest |H_ij − conj(H_ji)| of H(ξ); exact assembly gives zero.
pub fn hermiticity_check(model: &FiberModel, xi: Vec3) -> IdentityReport {
    let h = model.hamiltonian(xi).h;
    let worst = h.triplets().map(|(r, c, v)| (v - h.get(c, r).conj()).norm()).fold(0.0, f64::max);
    IdentityReport::new("hermiticity", worst, 0.0, Provenance::of(model, xi))
}

/// Largest deviation of the truncated canonical commutation relations:
/// [a_μ, a_ν*] = δ_μν on photon numbers ≤ n_max − 1, [a_μ, a_ν] = 0, and
/// creation equal to the adjoint of annihilation.
pub fn ccr_deviation(basis: &FockBasis) -> Result<f64> {
    let m = basis.num_channels();
    // photon numbers ≤ n_max − 1 carry the exact commutator; none when n_max = 0
    let low = basis.n_max().checked_sub(1);
    let a: Vec<SparseOperator> = (0..m).map(|mu| basis.annihilation(mu)).collect::<Result<_>>()?;
    let c: Vec<SparseOperator> = (0..m).map(|mu| basis.creation(mu)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for mu in 0..m {
        for (r, col, v) in a[mu].triplets() {
            worst = worst.max((c[mu].get(col, r) - v.conj()).norm());
        }
        for (r, col, v) in c[mu].triplets() {
            worst = worst.max((a[mu].get(col, r) - v.conj()).norm());
        }
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|mu| (0..m).map(move |nu| (mu, nu))).collect();
    let dev = pairs
        .par_iter()
        .map(|&(mu, nu)| -> Result<f64> {
            let mut worst: f64 = 0.0;
            let comm = SparseOperator::linear_combination(&[(ONE, &a[mu].matmul(&c[nu])?), (-ONE, &c[nu].matmul(&a[mu])?)])?;
            for (r, col, v) in comm.triplets() {
                if low.is_some_and(|low| basis.total(r) <= low && basis.total(col) <= low) {
                    let expected = if mu == nu && r == col { 1.0 } else { 0.0 };
                    worst = worst.max((v - expected).norm());
                }
            }
            if let (true, Some(low)) = (mu == nu, low) {
                for i in basis.sector(0).start..basis.sector(low).end {
                    worst = worst.max((comm.get(i, i) - 1.0).norm());
                }
            }
            let aa = SparseOperator::linear_combination(&[(ONE, &a[mu].matmul(&a[nu])?), (-ONE, &a[nu].matmul(&a[mu])?)])?;
            worst = aa.triplets().fold(worst, |acc, (_, _, v)| acc.max(v.norm()));
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(dev.into_iter().fold(worst, f64::max))
}

pub fn ccr_check(basis: &FockBasis, tolerance: f64, provenance: Provenance) -> Result<IdentityReport> {
    Ok(IdentityReport::new("ccr", ccr_deviation(basis)?, tolerance, provenance))
}

// ---------------------------------------------------------------- concavity

/// Largest midpoint violation (t(ξ₁)+t(ξ₂))/2 − t((ξ₁+ξ₂)/2) of t = E − ξ² over
/// every pair of rows whose midpoint is also tabulated. Passes at ≤ 2·tol.
pub fn concavity_probe(table: &DispersionTable, tol: f64, provenance: Provenance) -> Result<IdentityReport> {
    let rows = &table.rows;
    let mut worst: Option<(f64, Vec3)> = None;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let mid: Vec3 = std::array::from_fn(|a| 0.5 * (rows[i].xi[a] + rows[j].xi[a]));
            let scale = norm3(mid).max(1.0);
            let Some(m) = rows.iter().position(|r| (0..3).all(|a| (r.xi[a] - mid[a]).abs() <= 1e-12 * scale)) else {
                continue;
            };
            if m == i || m == j {
                continue;
            }
            let violation = 0.5 * (rows[i].t() + rows[j].t()) - rows[m].t();
            if worst.is_none_or(|(w, _)| violation > w) {
                worst = Some((violation, rows[m].xi));
            }
        }
    }
    let (violation, at) = worst.ok_or(Error::NoCollinearTriples)?;
    Ok(IdentityReport::new("concavity", violation, 2.0 * tol, Provenance { xi: at, ..provenance }))
}

// ---------------------------------------------------------------- IR sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrSweepConfig {
    pub xi: Vec3,
    /// Strictly decreasing IR cutoffs.
    pub sigmas: Vec<f64>,
    /// Coupling; its `sigma_ir` is replaced per row.
    pub params: CouplingParams,
    pub angular: AngularScheme,
    pub shells_per_decade: f64,
    pub n_max: usize,
    pub c_max: Option<u8>,
}

impl IrSweepConfig {
    /// Logarithmic shells covering [σ, Λ] at the configured density, rounded up.
    pub fn shells_for(&self, sigma: f64) -> usize {
        let decades = (self.params.lambda_uv / sigma).log10();
        ((self.shells_per_decade * decades - 1e-9).ceil() as usize).max(1)
    }

    pub fn discretization(&self, sigma: f64) -> FieldDiscretization {
        FieldDiscretization {
            radial: RadialScheme::Logarithmic,
            shells: self.shells_for(sigma),
            angular: self.angular,
            antipodal_symmetric: is_antipodal(&directions(self.angular), 1e-12),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::InvalidParameter("σ list is empty".into()));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0) || *s >= self.params.lambda_uv) {
            return Err(Error::InvalidParameter("every σ must lie in (0, lambda_uv)".into()));
        }
        if self.sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("σ list must be strictly decreasing".into()));
        }
        if !(self.shells_per_decade > 0.0) {
            return Err(Error::InvalidParameter("shells per decade must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrSweepRow {
    pub sigma: f64,
    pub energy: f64,
    pub n_expect: f64,
    pub min_kmag: f64,
    pub shells: usize,
    pub n_max: usize,
    pub dim: usize,
    pub iterations: usize,
    pub residual: f64,
}

impl IrSweepRow {
    pub fn log_inv_sigma(&self) -> f64 {
        (1.0 / self.sigma).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub sigma: f64,
    pub error: String,
}

/// Ordinary least squares ⟨N⟩ = slope·ln(1/σ) + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrSweepReport {
    pub xi: Vec3,
    pub rows: Vec<IrSweepRow>,
    pub failures: Vec<SweepFailure>,
    /// Present when at least [`MIN_FIT_POINTS`] rows succeeded.
    pub fit: Option<LogFit>,
}

pub const IR_SWEEP_HEADER: &str = "sigma,log_inv_sigma,E,N_expect,min_k,shells,n_max,dim,iters,residual";

impl IrSweepReport {
    pub fn require_fit(&self) -> Result<&LogFit> {
        self.fit.as_ref().ok_or(Error::InsufficientPoints { needed: MIN_FIT_POINTS, got: self.rows.len() })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(IR_SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                float(r.sigma),
                float(r.log_inv_sigma()),
                float(r.energy),
                float(r.n_expect),
                float(r.min_kmag),
                r.shells,
                r.n_max,
                r.dim,
                r.iterations,
                float(r.residual)
            );
        }
        out
    }
}

pub fn fit_log_linear(rows: &[IrSweepRow]) -> Result<LogFit> {
    if rows.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints { needed: MIN_FIT_POINTS, got: rows.len() });
    }
    let n = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(IrSweepRow::log_inv_sigma).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.n_expect).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("IR fit needs distinct σ values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { if ss_res == 0.0 { 1.0 } else { 0.0 } } else { 1.0 - ss_res / syy };
    Ok(LogFit { slope, intercept, r_squared, points: rows.len() })
}

/// Rebuilds the grid down to each σ, solves for the ground state at ξ and
/// records ⟨N⟩. Failed rows are reported, not fatal.
pub fn ir_sweep(config: &IrSweepConfig, opts: &SolverOptions) -> Result<IrSweepReport> {
    ir_sweep_with(config, |model, _| spectral::ground_state(model, config.xi, opts))
}

/// [`ir_sweep`] with a caller-supplied ground-state solve per (model, σ).
pub fn ir_sweep_with<F>(config: &IrSweepConfig, solve: F) -> Result<IrSweepReport>
where
    F: Fn(&FiberModel, f64) -> Result<GroundStateRecord> + Sync,
{
    config.validate()?;
    let basis_opts = FockBasisOptions { c_max: config.c_max, ..FockBasisOptions::default() };
    let outcomes: Vec<std::result::Result<IrSweepRow, SweepFailure>> = config
        .sigmas
        .par_iter()
        .map(|&sigma| {
            let run = || -> Result<IrSweepRow> {
                let params = CouplingParams { sigma_ir: sigma, ..config.params };
                let model = FiberModel::build(config.discretization(sigma), params, config.n_max, &basis_opts)?;
                let gs = solve(&model, sigma)?;
                Ok(IrSweepRow {
                    sigma,
                    energy: gs.energy,
                    n_expect: model.ops.number.expectation(&gs.vector),
                    min_kmag: model.modes().min_kmag(),
                    shells: model.discretization.shells,
                    n_max: config.n_max,
                    dim: model.dim(),
                    iterations: gs.solver.iterations,
                    residual: gs.solver.residual,
                })
            };
            run().map_err(|e| SweepFailure { sigma, error: e.to_string() })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    let fit = fit_log_linear(&rows).ok();
    Ok(IrSweepReport { xi: config.xi, rows, failures, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_vector;
    use crate::spectral::{dispersion, fd_gradient, DispersionRow};

    fn model(e: f64, spin: bool, shells: usize, n_max: usize) -> FiberModel {
        FiberModel::build(
            FieldDiscretization {
                radial: RadialScheme::Linear,
                shells,
                angular: AngularScheme::Axes6,
                antipodal_symmetric: true,
            },
            CouplingParams { e, lambda_uv: 1.0, sigma_ir: 0.1, spin },
            n_max,
            &FockBasisOptions::default(),
        )
        .unwrap()
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn cone_examples() {
        let spec = ConeSpec::new([0.6, 0.0, 0.0], 0.1).unwrap();
        assert!(cone_membership([0.0, 1.0, 0.0], &spec).unwrap().in_k);
        assert!(!cone_membership([1.0, 0.0, 0.0], &spec).unwrap().in_k);
        for d in directions(AngularScheme::Product { n_theta: 6, n_phi: 8 }) {
            assert!(cone_membership(d.unit, &spec).unwrap().in_s_eps);
        }
        assert!(matches!(cone_membership([1.0, 1.0, 0.0], &spec), Err(Error::NonUnit { .. })));
        assert!(ConeSpec::new([0.0; 3], 1.0).is_err());
    }

    #[test]
    fn gradient_snapping() {
        assert_eq!(snap_gradient([0.6, 2e-12, -3e-12]), [0.6, 0.0, 0.0]);
        assert_eq!(snap_gradient([1e-9, 0.0, 0.0]), [0.0; 3]);
        let spec = ConeSpec::new(snap_gradient([0.6, -2e-12, 0.0]), 0.5).unwrap();
        assert!(cone_membership([0.0, 1.0, 0.0], &spec).unwrap().in_k);
        assert!(cone_membership([0.0, -1.0, 0.0], &spec).unwrap().in_k);
    }

    #[test]
    fn report_json_schema() {
        let r = IdentityReport::new("x", 1e-12, 1e-10, Provenance { xi: [0.3, 0.0, 0.0], e: 0.2, grid: "ab".into() });
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["name", "value", "tolerance", "pass", "config_hash", "provenance"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["provenance"]["grid"], "ab");
        assert!(r.pass);
        assert!(!IdentityReport::new("nan", f64::NAN, 1.0, r.provenance.clone()).pass);
    }

    #[test]
    fn feynman_hellmann_free() {
        let m = model(0.0, true, 1, 2);
        let gs = spectral::ground_state(&m, [0.3, 0.0, 0.0], &opts()).unwrap();
        assert_eq!(gs.cluster_size(), 2);
        let r = feynman_hellmann_check(&m, &gs, [0.6, 0.0, 0.0], 1e-8).unwrap();
        assert!(r.pass, "{r:?}");
        let bad = feynman_hellmann_check(&m, &gs, [0.7, 0.0, 0.0], 1e-8).unwrap();
        assert!(!bad.pass);
    }

    #[test]
    fn feynman_hellmann_weak_coupling() {
        let m = model(0.2, false, 1, 2);
        let xi = [0.3, 0.0, 0.0];
        let gs = spectral::ground_state(&m, xi, &opts()).unwrap();
        let grad = fd_gradient(&m, xi, 1e-3, true, &opts()).unwrap();
        let r = feynman_hellmann_check(&m, &gs, grad.richardson.unwrap(), 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn pull_through_free_is_zero() {
        let m = model(0.0, true, 1, 2);
        let gs = spectral::ground_state(&m, [0.3, 0.0, 0.0], &opts()).unwrap();
        for mu in 0..m.modes().num_channels() {
            let r = pull_through_residual(&m, &gs, mu, &opts()).unwrap();
            assert_eq!(r.r, 0.0);
            assert!(r.report.pass);
        }
    }

    #[test]
    fn pull_through_subspace_exact() {
        for spin in [false, true] {
            let m = model(1.0, spin, 1, 3);
            let r = pull_through_subspace_check(&m, [0.2, -0.1, 0.05], 9, 1e-10).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn pull_through_defect_detected_on_top_layer() {
        // above the exact subspace the truncation shows up
        let m = model(1.0, false, 1, 2);
        let top = m.carrier().basis.sector(2);
        let mut psi = vec![ZERO; m.dim()];
        psi[top.start] = ONE;
        let d = m.ops.pull_through_defect([0.2, 0.0, 0.0], 0, &psi).unwrap();
        assert!(norm(&d) > 1e-3);
    }

    #[test]
    fn pull_through_eta_form() {
        let m = model(0.2, false, 1, 3);
        let xi = [0.3, 0.0, 0.0];
        let gs = spectral::ground_state(&m, xi, &opts()).unwrap();
        let eta = random_vector(m.dim(), 5);
        for mu in [0, 3, 7] {
            let pt = pull_through_residual(&m, &gs, mu, &opts()).unwrap();
            let r = eta_form_check(&m, &gs, mu, &eta, 1e-10, &opts()).unwrap();
            assert!(r.pass, "{r:?} {pt:?}");
        }
    }

    #[test]
    fn indefinite_shift_propagates() {
        let m = model(0.0, false, 1, 1);
        let mut gs = spectral::ground_state(&m, [0.3, 0.0, 0.0], &opts()).unwrap();
        gs.energy += 10.0;
        assert!(matches!(pull_through_residual(&m, &gs, 0, &opts()), Err(Error::IndefiniteShift { .. })));
    }

    #[test]
    fn resolvent_free_closed_form() {
        let m = model(0.0, false, 1, 2);
        let xi = [0.3, 0.0, 0.0];
        let grad = [0.6, 0.0, 0.0];
        let gs = spectral::ground_state(&m, xi, &opts()).unwrap();
        for (omega, limit) in [([0.0, 1.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.6)] {
            let rep = resolvent_limit_check(&m, &gs, grad, omega, &[0.2, 0.1, 0.05], 0.5, 1e-12, &opts()).unwrap();
            for row in &rep.rows {
                assert!((row.gap_ratio - (limit + row.kmag)).abs() < 1e-10);
                assert!((row.q.re - 1.0 / (limit + row.kmag)).abs() < 1e-10);
            }
            assert!((rep.target.re - 1.0 / limit).abs() < 1e-12);
            assert!(rep.monotone.pass && rep.gap.pass);
        }
        let outside = resolvent_limit_check(&m, &gs, grad, [1.0, 0.0, 0.0], &[0.1], 0.5, 1e-12, &opts());
        assert!(outside.is_err());
    }

    #[test]
    fn mode_amplitudes_vanish_without_coupling() {
        let m = model(0.0, false, 1, 2);
        let gs = spectral::ground_state(&m, [0.3, 0.0, 0.0], &opts()).unwrap();
        for a in mode_amplitude_report(&m, &gs, [0.6, 0.0, 0.0]).unwrap() {
            assert_eq!(a.measured, 0.0);
            assert_eq!(a.predicted, 0.0);
        }
    }

    #[test]
    fn number_two_ways_agree() {
        let m = model(0.5, true, 1, 3);
        let psi = random_vector(m.dim(), 2);
        let r = number_two_way_check(&m, [0.0; 3], &psi, 1e-10).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn structural_checks_pass() {
        let m = model(0.7, true, 1, 2);
        assert!(hermiticity_check(&m, [0.1, 0.2, 0.3]).pass);
        let basis = FockBasis::enumerate(4, 3).unwrap();
        assert!(ccr_deviation(&basis).unwrap() <= 1e-12);
        assert_eq!(ccr_deviation(&FockBasis::enumerate(3, 0).unwrap()).unwrap(), 0.0);
    }

    fn synthetic_table(t: impl Fn(f64) -> f64) -> DispersionTable {
        let rows = (0..9)
            .map(|j| {
                let x = -0.4 + 0.1 * j as f64;
                DispersionRow {
                    xi: [x, 0.0, 0.0],
                    energy: x * x + t(x),
                    n_expect: 0.0,
                    v_expect: [0.0; 3],
                    gap: None,
                    iterations: 0,
                    residual: 0.0,
                }
            })
            .collect();
        DispersionTable { rows, failures: vec![] }
    }

    fn prov() -> Provenance {
        Provenance { xi: [0.0; 3], e: 0.0, grid: String::new() }
    }

    #[test]
    fn concavity_detects_fault() {
        let ok = concavity_probe(&synthetic_table(|x| -x * x), 1e-10, prov()).unwrap();
        assert!(ok.pass);
        let mut bad = synthetic_table(|x| -0.05 * x);
        bad.rows[4].energy -= 1e-3;
        let r = concavity_probe(&bad, 1e-10, prov()).unwrap();
        assert!(!r.pass);
        assert!((r.value - 1e-3).abs() < 1e-4, "{}", r.value);
        let mut lone = synthetic_table(|_| 0.0);
        lone.rows.truncate(2);
        assert_eq!(concavity_probe(&lone, 1e-10, prov()).unwrap_err(), Error::NoCollinearTriples);
    }

    #[test]
    fn concavity_on_free_dispersion() {
        let m = model(0.0, false, 1, 2);
        let xis: Vec<Vec3> = (0..9).map(|j| [-0.4 + 0.1 * j as f64, 0.0, 0.0]).collect();
        let table = dispersion(&m, &xis, &opts()).unwrap();
        let r = concavity_probe(&table, 1e-10, Provenance::of(&m, [0.0; 3])).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn fit_refuses_three_points() {
        let row = |s: f64, n: f64| IrSweepRow {
            sigma: s,
            energy: 0.0,
            n_expect: n,
            min_kmag: s,
            shells: 1,
            n_max: 2,
            dim: 1,
            iterations: 0,
            residual: 0.0,
        };
        let rows = vec![row(0.1, 1.0), row(0.05, 2.0), row(0.025, 3.0)];
        let err = fit_log_linear(&rows).unwrap_err();
        assert_eq!(err.to_string(), "need ≥ 4 points, got 3");
        let mut rows = rows;
        rows.push(row(0.0125, 4.0));
        let fit = fit_log_linear(&rows).unwrap();
        assert!((fit.slope - 1.0 / 2f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_ir_sweep_is_flat() {
        let cfg = IrSweepConfig {
            xi: [0.3, 0.0, 0.0],
            sigmas: vec![0.1, 0.05, 0.025, 0.0125],
            params: CouplingParams { e: 0.0, lambda_uv: 1.0, sigma_ir: 0.1, spin: false },
            angular: AngularScheme::Axes6,
            shells_per_decade: 2.0,
            n_max: 1,
            c_max: None,
        };
        assert_eq!(cfg.shells_for(0.1), 2);
        assert_eq!(cfg.shells_for(0.05), 3);
        let rep = ir_sweep(&cfg, &opts()).unwrap();
        assert_eq!(rep.rows.len(), 4);
        let fit = rep.require_fit().unwrap();
        assert_eq!(fit.slope, 0.0);
        assert!(rep.rows.iter().all(|r| r.n_expect == 0.0));
        assert!(rep.to_csv().starts_with(IR_SWEEP_HEADER));
        let bad = IrSweepConfig { sigmas: vec![0.05, 0.1], ..cfg };
        assert!(ir_sweep(&bad, &opts()).is_err());
    }
}
