//! Discretized transverse photon field and the fiber Hamiltonian
//!
//! ```text
//! H(ξ) = (ξ − P_f + eA)² + e σ·B + H_f,    v(ξ) = ξ − P_f + eA
//! ```
//!
//! with A = A(0), B = B(0) built from a finite set of modes on σ ≤ |k| ≤ Λ.
//! Each spatial mode m carries two polarization channels; channel μ = 2m + λ.
//! The quadrature weight is folded into the coupling amplitude
//! g_m = ρ(|k_m|)/√(2|k_m|)·√w_m, so discrete sums Σ_μ ‖a_μψ‖² mimic ∫‖a_kψ‖²dk.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockBasis, FockBasisOptions};
use crate::linalg;
use crate::quadrature::{self, AngularScheme, RadialScheme, Vec3};
use crate::sparse::{pauli, SparseOperator, C64, I, ONE, SPIN_IDENTITY, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub e: f64,
    pub lambda_uv: f64,
    pub sigma_ir: f64,
    pub spin: bool,
}

impl CouplingParams {
    pub fn validate(&self) -> Result<()> {
        if !self.e.is_finite() {
            return Err(Error::InvalidParameter("coupling e must be finite".into()));
        }
        if !(self.lambda_uv > 0.0 && self.lambda_uv.is_finite()) {
            return Err(Error::InvalidParameter("lambda_uv must be positive".into()));
        }
        if !(self.sigma_ir > 0.0) {
            return Err(Error::InvalidParameter("sigma_ir must be positive".into()));
        }
        if self.sigma_ir >= self.lambda_uv {
            return Err(Error::InvalidParameter(format!(
                "sigma_ir ({}) must be smaller than lambda_uv ({})",
                self.sigma_ir, self.lambda_uv
            )));
        }
        Ok(())
    }

    /// ρ(k) = (2π)^{-3/2} χ_[0,Λ](|k|)
    pub fn rho(&self, kmag: f64) -> f64 {
        if kmag <= self.lambda_uv {
            (2.0 * PI).powf(-1.5)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldDiscretization {
    pub radial: RadialScheme,
    pub shells: usize,
    pub angular: AngularScheme,
    pub antipodal_symmetric: bool,
}

impl FieldDiscretization {
    pub fn validate(&self) -> Result<()> {
        if self.shells == 0 {
            return Err(Error::InvalidParameter("shell count must be ≥ 1".into()));
        }
        let dirs = quadrature::directions(self.angular);
        let total: f64 = dirs.iter().map(|d| d.weight).sum();
        if (total - 4.0 * PI).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "angular weights of {} sum to {total}",
                self.angular
            )));
        }
        if self.antipodal_symmetric && !quadrature::is_antipodal(&dirs, 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "angular scheme {} is not closed under ω → −ω",
                self.angular
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: Vec3,
    pub kmag: f64,
    pub weight: f64,
    pub polarization: [Vec3; 2],
    pub coupling: f64,
}

impl Mode {
    pub fn khat(&self) -> Vec3 {
        [self.k[0] / self.kmag, self.k[1] / self.kmag, self.k[2] / self.kmag]
    }
}

#[derive(Debug, Clone)]
pub struct ModeSet {
    modes: Vec<Mode>,
    /// Radius of the innermost shell node.
    min_kmag: f64,
}

impl ModeSet {
    pub fn build(d: &FieldDiscretization, p: &CouplingParams) -> Result<Self> {
        d.validate()?;
        p.validate()?;
        let dirs = quadrature::directions(d.angular);
        let shells = quadrature::shells(d.radial, d.shells, p.sigma_ir, p.lambda_uv);
        let mut modes = Vec::with_capacity(shells.len() * dirs.len());
        for shell in &shells {
            for dir in &dirs {
                let r = shell.node;
                let weight = shell.radial_volume() * dir.weight;
                let polarization = polarization_frame(dir.unit)?;
                let coupling = p.rho(r) / (2.0 * r).sqrt() * weight.sqrt();
                modes.push(Mode {
                    k: [r * dir.unit[0], r * dir.unit[1], r * dir.unit[2]],
                    kmag: r,
                    weight,
                    polarization: [polarization.0, polarization.1],
                    coupling,
                });
            }
        }
        let min_kmag = shells.first().map(|s| s.node).unwrap_or(0.0);
        Ok(Self { modes, min_kmag })
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        2 * self.modes.len()
    }

    pub fn min_kmag(&self) -> f64 {
        self.min_kmag
    }

    /// Channel μ → (mode, polarization index).
    pub fn channel(&self, mu: usize) -> (&Mode, usize) {
        (&self.modes[mu / 2], mu % 2)
    }

    pub fn channel_polarization(&self, mu: usize) -> Vec3 {
        let (mode, lambda) = self.channel(mu);
        mode.polarization[lambda]
    }

    /// k_m ∧ ε_{λ,m} for channel μ.
    pub fn channel_curl(&self, mu: usize) -> Vec3 {
        let (mode, lambda) = self.channel(mu);
        cross(mode.k, mode.polarization[lambda])
    }

    /// Audit dump: one row per spatial mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,kx,ky,kz,k_abs,w,g,eps1_x,eps1_y,eps1_z,eps2_x,eps2_y,eps2_z\n");
        for (m, mode) in self.modes.iter().enumerate() {
            let mut fields = vec![m.to_string()];
            fields.extend(mode.k.iter().map(|&x| crate::format::float(x)));
            fields.push(crate::format::float(mode.kmag));
            fields.push(crate::format::float(mode.weight));
            fields.push(crate::format::float(mode.coupling));
            for eps in &mode.polarization {
                fields.extend(eps.iter().map(|&x| crate::format::float(x)));
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

/// Transverse frame (ε₁, ε₂) completing k̂ to a right-handed orthonormal basis.
///
/// ε₁ = k̂×ẑ/|k̂×ẑ|, ε₂ = k̂×ε₁; at the poles (x̂, ŷ) for +ẑ and (x̂, −ŷ) for −ẑ.
pub fn polarization_frame(khat: Vec3) -> Result<(Vec3, Vec3)> {
    let n = norm3(khat);
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::NonUnit { norm: n });
    }
    let c = cross(khat, [0.0, 0.0, 1.0]);
    let cn = norm3(c);
    if cn < 1e-8 {
        return Ok(if khat[2] > 0.0 {
            ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        } else {
            ([1.0, 0.0, 0.0], [0.0, -1.0, 0.0])
        });
    }
    let e1 = [c[0] / cn, c[1] / cn, c[2] / cn];
    let e2 = cross(khat, e1);
    Ok((e1, e2))
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// State space: Fock basis, optionally tensored with ℂ² (spin index first).
#[derive(Debug, Clone)]
pub struct Carrier {
    pub basis: FockBasis,
    pub spin: bool,
}

impl Carrier {
    pub fn dim(&self) -> usize {
        self.basis.len() * if self.spin { 2 } else { 1 }
    }

    pub fn fock_index(&self, i: usize) -> usize {
        i % self.basis.len()
    }

    pub fn photon_number(&self, i: usize) -> usize {
        self.basis.total(self.fock_index(i))
    }

    /// Embeds a Fock operator into the carrier.
    pub fn lift(&self, op: &SparseOperator) -> SparseOperator {
        if self.spin {
            op.kron_spin(&SPIN_IDENTITY)
        } else {
            op.clone()
        }
    }

    /// Vacuum ⊗ spinor (spinor ignored without spin).
    pub fn vacuum(&self, spinor: [C64; 2]) -> Vec<C64> {
        let mut v = vec![ZERO; self.dim()];
        v[0] = spinor[0];
        if self.spin {
            v[self.basis.len()] = spinor[1];
        }
        linalg::normalize(&mut v);
        v
    }

    /// Applies (I₂ ⊗) a_μ.
    pub fn apply_annihilation(&self, mu: usize, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let n = self.basis.len();
        let mut out = Vec::with_capacity(x.len());
        for block in x.chunks(n) {
            out.extend(self.basis.apply_annihilation(mu, block)?);
        }
        Ok(out)
    }

    /// Applies (c·σ) ⊗ I for a real vector c; zero map without spin.
    pub fn apply_spin_dot(&self, c: Vec3, x: &[C64]) -> Vec<C64> {
        if !self.spin {
            return vec![ZERO; x.len()];
        }
        let n = self.basis.len();
        let (up, down) = x.split_at(n);
        let off_minus = C64::new(c[0], -c[1]);
        let off_plus = C64::new(c[0], c[1]);
        let mut out = Vec::with_capacity(x.len());
        out.extend(up.iter().zip(down).map(|(u, d)| c[2] * u + off_minus * d));
        out.extend(up.iter().zip(down).map(|(u, d)| off_plus * u - c[2] * d));
        out
    }

    /// Norm of the components with photon number ≥ `n`.
    pub fn weight_at_or_above(&self, x: &[C64], n: usize) -> f64 {
        x.iter()
            .enumerate()
            .filter(|(i, _)| self.photon_number(*i) >= n)
            .map(|(_, z)| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// A, B, H_f, P_f, N on the carrier, plus the ξ-independent pieces of H(ξ).
#[derive(Debug, Clone)]
pub struct FieldOperators {
    pub carrier: Carrier,
    pub modes: ModeSet,
    pub params: CouplingParams,
    pub a: [SparseOperator; 3],
    pub b: [SparseOperator; 3],
    pub h_f: SparseOperator,
    pub p_f: [SparseOperator; 3],
    pub number: SparseOperator,
    /// X_i = P_f,i − e A_i, so that v_i(ξ) = ξ_i − X_i.
    x: [SparseOperator; 3],
    /// Σ_i X_i X_i + e σ·B + H_f, i.e. T(0) = H(0).
    t0: SparseOperator,
    b_fock: [SparseOperator; 3],
}

impl FieldOperators {
    pub fn assemble(modes: ModeSet, basis: FockBasis, params: CouplingParams) -> Result<Self> {
        params.validate()?;
        if basis.num_channels() != modes.num_channels() {
            return Err(Error::DimensionMismatch { expected: modes.num_channels(), got: basis.num_channels() });
        }
        let carrier = Carrier { basis, spin: params.spin };
        let basis = &carrier.basis;
        let channels = modes.num_channels();

        // A_i and B_i from ladder entries (t = s − e_μ, s), placed symmetrically.
        let mut a_trip: [Vec<(usize, usize, C64)>; 3] = Default::default();
        let mut b_trip: [Vec<(usize, usize, C64)>; 3] = Default::default();
        let mut lowered = vec![0u8; channels];
        for pos in 0..basis.len() {
            let occ = basis.occupations(pos);
            for mu in 0..channels {
                let n = occ[mu];
                if n == 0 {
                    continue;
                }
                lowered.copy_from_slice(occ);
                lowered[mu] -= 1;
                let t = basis.index_of(&lowered).expect("lowered state in basis");
                let (mode, _) = modes.channel(mu);
                let amp = mode.coupling * (n as f64).sqrt();
                let eps = modes.channel_polarization(mu);
                let curl = modes.channel_curl(mu);
                for i in 0..3 {
                    if eps[i] != 0.0 {
                        let v = C64::new(amp * eps[i], 0.0);
                        a_trip[i].push((t, pos, v));
                        a_trip[i].push((pos, t, v));
                    }
                    if curl[i] != 0.0 {
                        let v = I * (amp * curl[i]);
                        b_trip[i].push((t, pos, v));
                        b_trip[i].push((pos, t, -v));
                    }
                }
            }
        }
        let dim = basis.len();
        let [a0, a1, a2] = a_trip.map(|t| SparseOperator::from_triplets(dim, t, true));
        let [b0, b1, b2] = b_trip.map(|t| SparseOperator::from_triplets(dim, t, true));

        let kabs: Vec<f64> = (0..channels).map(|mu| modes.channel(mu).0.kmag).collect();
        let h_f = basis.diagonal_operator(&kabs)?;
        let p_f: Vec<SparseOperator> = (0..3)
            .map(|i| {
                let w: Vec<f64> = (0..channels).map(|mu| modes.channel(mu).0.k[i]).collect();
                basis.diagonal_operator(&w)
            })
            .collect::<Result<_>>()?;
        let number = basis.number_operator();

        let a = [carrier.lift(&a0), carrier.lift(&a1), carrier.lift(&a2)];
        let b_fock = [b0, b1, b2];
        let b = [carrier.lift(&b_fock[0]), carrier.lift(&b_fock[1]), carrier.lift(&b_fock[2])];
        let h_f = carrier.lift(&h_f);
        let p_f = [carrier.lift(&p_f[0]), carrier.lift(&p_f[1]), carrier.lift(&p_f[2])];
        let number = carrier.lift(&number);

        let e = C64::new(params.e, 0.0);
        let x: [SparseOperator; 3] = std::array::from_fn(|i| {
            SparseOperator::linear_combination(&[(ONE, &p_f[i]), (-e, &a[i])]).expect("same carrier")
        });

        let mut parts: Vec<SparseOperator> = Vec::new();
        for xi in &x {
            parts.push(xi.matmul(xi)?);
        }
        if params.spin && params.e != 0.0 {
            let s = pauli();
            for i in 0..3 {
                parts.push(b_fock[i].kron_spin(&s[i]));
            }
        }
        let mut terms: Vec<(C64, &SparseOperator)> = Vec::new();
        for (j, part) in parts.iter().enumerate() {
            terms.push((if j < 3 { ONE } else { e }, part));
        }
        terms.push((ONE, &h_f));
        let t0 = SparseOperator::linear_combination(&terms)?.hermitize();

        Ok(Self { carrier, modes, params, a, b, h_f, p_f, number, x, t0, b_fock })
    }

    pub fn dim(&self) -> usize {
        self.carrier.dim()
    }

    /// v_i(ξ) = ξ_i − (P_f)_i + e A_i.
    pub fn velocity(&self, xi: Vec3) -> [SparseOperator; 3] {
        let id = SparseOperator::identity(self.dim());
        std::array::from_fn(|i| {
            SparseOperator::linear_combination(&[(C64::new(xi[i], 0.0), &id), (-ONE, &self.x[i])])
                .expect("same carrier")
        })
    }

    /// Applies v_i(ξ) without assembling it.
    pub fn apply_velocity(&self, xi: Vec3, i: usize, x: &[C64]) -> Vec<C64> {
        let mut out = self.x[i].apply(x);
        for (o, xv) in out.iter_mut().zip(x) {
            *o = xi[i] * xv - *o;
        }
        out
    }

    /// H(ξ) = ξ² − 2ξ·X + T(0), the expansion of (ξ − X)² + eσ·B + H_f.
    pub fn hamiltonian(&self, xi: Vec3) -> FiberHamiltonian {
        let id = SparseOperator::identity(self.dim());
        let xi2 = dot3(xi, xi);
        let mut terms: Vec<(C64, &SparseOperator)> = vec![(ONE, &self.t0), (C64::new(xi2, 0.0), &id)];
        for i in 0..3 {
            if xi[i] != 0.0 {
                terms.push((C64::new(-2.0 * xi[i], 0.0), &self.x[i]));
            }
        }
        let h = SparseOperator::linear_combination(&terms).expect("same carrier").hermitize();
        FiberHamiltonian { xi, h, v: self.velocity(xi), params: self.params }
    }

    /// Σ_i v_i v_i + e σ·B + H_f assembled term by term from products.
    pub fn hamiltonian_from_parts(&self, xi: Vec3) -> Result<SparseOperator> {
        let v = self.velocity(xi);
        let mut parts = Vec::new();
        for vi in &v {
            parts.push(vi.matmul(vi)?);
        }
        if self.params.spin {
            let s = pauli();
            for i in 0..3 {
                parts.push(self.b_fock[i].kron_spin(&s[i]));
            }
        }
        let e = C64::new(self.params.e, 0.0);
        let mut terms: Vec<(C64, &SparseOperator)> = Vec::new();
        for (j, part) in parts.iter().enumerate() {
            terms.push((if j < 3 { ONE } else { e }, part));
        }
        terms.push((ONE, &self.h_f));
        SparseOperator::linear_combination(&terms)
    }

    /// Defect of the truncated pull-through identity applied to `psi`:
    ///
    /// a_μ H(ξ)ψ − (H(ξ−k_m) + |k_m|) a_μψ − e g_m (2ε·v(ξ) − i(k_m∧ε)·σ)ψ.
    ///
    /// Vanishes for ψ supported on photon number ≤ n_max − 2.
    pub fn pull_through_defect(&self, xi: Vec3, mu: usize, psi: &[C64]) -> Result<Vec<C64>> {
        let (mode, _) = self.modes.channel(mu);
        let shifted = [xi[0] - mode.k[0], xi[1] - mode.k[1], xi[2] - mode.k[2]];
        let h = self.hamiltonian(xi);
        let h_shift = self.hamiltonian(shifted);

        let lhs = self.carrier.apply_annihilation(mu, &h.h.apply(psi))?;
        let a_psi = self.carrier.apply_annihilation(mu, psi)?;
        let mut rhs = h_shift.h.apply(&a_psi);
        linalg::axpy(C64::new(mode.kmag, 0.0), &a_psi, &mut rhs);
        let source = self.source_term(xi, mu, psi);
        let mut out = linalg::sub(&lhs, &rhs);
        linalg::axpy(-ONE, &source, &mut out);
        Ok(out)
    }

    /// e g_m (2ε·v(ξ) − i(k_m∧ε)·σ)ψ
    pub fn source_term(&self, xi: Vec3, mu: usize, psi: &[C64]) -> Vec<C64> {
        let (mode, _) = self.modes.channel(mu);
        let eps = self.modes.channel_polarization(mu);
        let curl = self.modes.channel_curl(mu);
        let eg = self.params.e * mode.coupling;
        let mut out = vec![ZERO; psi.len()];
        if eg == 0.0 {
            return out;
        }
        for i in 0..3 {
            if eps[i] != 0.0 {
                let vpsi = self.apply_velocity(xi, i, psi);
                linalg::axpy(C64::new(2.0 * eg * eps[i], 0.0), &vpsi, &mut out);
            }
        }
        if self.carrier.spin {
            let spin_part = self.carrier.apply_spin_dot(curl, psi);
            linalg::axpy(-I * eg, &spin_part, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FiberHamiltonian {
    pub xi: Vec3,
    pub h: SparseOperator,
    pub v: [SparseOperator; 3],
    pub params: CouplingParams,
}

/// Mode set, basis and assembled field operators for one discretization;
/// produces H(ξ) for any total momentum.
#[derive(Debug, Clone)]
pub struct FiberModel {
    pub discretization: FieldDiscretization,
    pub ops: FieldOperators,
}

impl FiberModel {
    pub fn build(
        discretization: FieldDiscretization,
        params: CouplingParams,
        n_max: usize,
        basis_opts: &FockBasisOptions,
    ) -> Result<Self> {
        let modes = ModeSet::build(&discretization, &params)?;
        let basis = FockBasis::enumerate_with(modes.num_channels(), n_max, basis_opts)?;
        let ops = FieldOperators::assemble(modes, basis, params)?;
        Ok(Self { discretization, ops })
    }

    pub fn params(&self) -> &CouplingParams {
        &self.ops.params
    }

    pub fn carrier(&self) -> &Carrier {
        &self.ops.carrier
    }

    pub fn modes(&self) -> &ModeSet {
        &self.ops.modes
    }

    pub fn dim(&self) -> usize {
        self.ops.dim()
    }

    pub fn n_max(&self) -> usize {
        self.ops.carrier.basis.n_max()
    }

    pub fn hamiltonian(&self, xi: Vec3) -> FiberHamiltonian {
        self.ops.hamiltonian(xi)
    }

    /// FNV-1a digest of the discretization and coupling, for provenance.
    pub fn provenance_hash(&self) -> String {
        let d = &self.discretization;
        let p = self.params();
        let desc = format!(
            "{}|{}|{}|{}|{:016x}|{:016x}|{:016x}|{}|{}|{}",
            d.radial,
            d.shells,
            d.angular,
            d.antipodal_symmetric,
            p.e.to_bits(),
            p.lambda_uv.to_bits(),
            p.sigma_ir.to_bits(),
            p.spin,
            self.n_max(),
            self.ops.carrier.basis.c_max()
        );
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in desc.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, random_vector};

    fn disc(angular: AngularScheme, shells: usize) -> FieldDiscretization {
        FieldDiscretization { radial: RadialScheme::Linear, shells, angular, antipodal_symmetric: true }
    }

    fn params(e: f64, spin: bool) -> CouplingParams {
        CouplingParams { e, lambda_uv: 1.0, sigma_ir: 0.1, spin }
    }

    fn model(e: f64, spin: bool, shells: usize, n_max: usize) -> FiberModel {
        FiberModel::build(disc(AngularScheme::Axes6, shells), params(e, spin), n_max, &FockBasisOptions::default())
            .unwrap()
    }

    #[test]
    fn mode_set_nodes_and_weights() {
        let ms = ModeSet::build(&disc(AngularScheme::Axes6, 2), &params(0.1, false)).unwrap();
        assert_eq!(ms.len(), 12);
        assert_eq!(ms.num_channels(), 24);
        let mut radii: Vec<f64> = ms.modes().iter().map(|m| m.kmag).collect();
        radii.dedup();
        assert_eq!(radii.len(), 2);
        assert!((radii[0] - 0.325).abs() < 1e-15 && (radii[1] - 0.775).abs() < 1e-15);

        // independent oracle: cell volumes of each linear shell × 4π/6
        let dr = 0.45;
        let mut expected = Vec::new();
        for j in 0..2 {
            let lo = 0.1 + dr * j as f64;
            let hi = lo + dr;
            let vol = 4.0 * PI / 3.0 * (hi * hi * hi - lo * lo * lo) / 6.0;
            expected.push(vol);
        }
        for (m, mode) in ms.modes().iter().enumerate() {
            let w = expected[m / 6];
            assert!((mode.weight - w).abs() < 1e-14);
            let g = (2.0 * PI).powf(-1.5) / (2.0 * mode.kmag).sqrt() * w.sqrt();
            assert!((mode.coupling - g).abs() < 1e-15);
            assert!(mode.coupling > 0.0);
        }
        let total: f64 = ms.modes().iter().map(|m| m.weight).sum();
        assert!((total - 4.0 * PI / 3.0 * (1.0 - 0.001)).abs() < 1e-10);
    }

    #[test]
    fn weight_sum_log_scheme() {
        let d = FieldDiscretization {
            radial: RadialScheme::Logarithmic,
            shells: 7,
            angular: AngularScheme::Icosa12,
            antipodal_symmetric: true,
        };
        let ms = ModeSet::build(&d, &params(0.1, false)).unwrap();
        let total: f64 = ms.modes().iter().map(|m| m.weight).sum();
        assert!((total - 4.0 * PI / 3.0 * (1.0 - 0.001)).abs() < 1e-10);
        assert!(ms.modes().iter().all(|m| m.kmag >= 0.1 && m.kmag <= 1.0));
    }

    #[test]
    fn rejects_inverted_cutoffs() {
        let p = CouplingParams { e: 0.1, lambda_uv: 0.05, sigma_ir: 0.1, spin: false };
        assert!(ModeSet::build(&disc(AngularScheme::Axes6, 1), &p).is_err());
        let d = FieldDiscretization {
            radial: RadialScheme::Linear,
            shells: 1,
            angular: AngularScheme::Product { n_theta: 2, n_phi: 3 },
            antipodal_symmetric: true,
        };
        assert!(ModeSet::build(&d, &params(0.1, false)).is_err());
    }

    #[test]
    fn frame_examples() {
        assert_eq!(polarization_frame([0.0, 0.0, 1.0]).unwrap(), ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]));
        assert_eq!(polarization_frame([0.0, 0.0, -1.0]).unwrap(), ([1.0, 0.0, 0.0], [0.0, -1.0, 0.0]));
        let (e1, e2) = polarization_frame([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(e1, [0.0, -1.0, 0.0]);
        assert_eq!(e2, [0.0, 0.0, -1.0]);
        let det = dot3([1.0, 0.0, 0.0], cross(e1, e2));
        assert_eq!(det, 1.0);
        assert!(matches!(polarization_frame([1.0, 1.0, 0.0]), Err(Error::NonUnit { .. })));
    }

    #[test]
    fn mode_set_transversality_and_antipodes() {
        let d = FieldDiscretization {
            radial: RadialScheme::Logarithmic,
            shells: 3,
            angular: AngularScheme::Product { n_theta: 3, n_phi: 6 },
            antipodal_symmetric: true,
        };
        let ms = ModeSet::build(&d, &params(0.1, false)).unwrap();
        for mode in ms.modes() {
            for eps in &mode.polarization {
                assert!(dot3(mode.k, *eps).abs() < 1e-12);
            }
            // multiset closed under k → −k
            let neg = [-mode.k[0], -mode.k[1], -mode.k[2]];
            assert!(ms.modes().iter().any(|o| (0..3).all(|i| (o.k[i] - neg[i]).abs() < 1e-12)));
        }
    }

    #[test]
    fn field_operators_hermitian() {
        for spin in [false, true] {
            let m = model(0.5, spin, 1, 2);
            for i in 0..3 {
                assert!(m.ops.a[i].hermitian() && m.ops.a[i].is_hermitian());
                assert!(m.ops.b[i].hermitian() && m.ops.b[i].is_hermitian());
                assert!(m.ops.p_f[i].is_hermitian());
            }
            assert!(m.ops.h_f.is_hermitian() && m.ops.number.is_hermitian());
            let h = m.hamiltonian([0.2, -0.1, 0.05]);
            assert!(h.h.hermitian() && h.h.is_hermitian());
            assert!(h.h.spot_check_hermitian(1000, 3));
        }
    }

    #[test]
    fn vacuum_two_point_function() {
        // ⟨Ω, A_i A_j Ω⟩ = Σ_{m,λ} g_m² ε_i ε_j by direct summation
        let m = model(0.7, false, 2, 2);
        let omega = m.carrier().vacuum([ONE, ZERO]);
        for i in 0..3 {
            for j in 0..3 {
                let aj = m.ops.a[j].apply(&omega);
                let ai = m.ops.a[i].apply(&omega);
                let value = linalg::dot(&ai, &aj);
                let mut oracle = 0.0;
                for mode in m.modes().modes() {
                    for eps in &mode.polarization {
                        oracle += mode.coupling * mode.coupling * eps[i] * eps[j];
                    }
                }
                assert!((value.re - oracle).abs() < 1e-15 && value.im.abs() < 1e-15);
            }
            assert_eq!(m.ops.b[i].expectation(&omega), 0.0);
        }
    }

    #[test]
    fn free_hamiltonian_is_diagonal() {
        let m = model(0.0, false, 2, 2);
        let xi = [0.3, 0.1, 0.0];
        let h = m.hamiltonian(xi);
        let basis = &m.carrier().basis;
        for (r, c, v) in h.h.triplets() {
            assert_eq!(r, c, "off-diagonal entry {v} at ({r}, {c})");
        }
        for pos in 0..basis.len() {
            let occ = basis.occupations(pos);
            let mut p = [0.0; 3];
            let mut hf = 0.0;
            for (mu, &n) in occ.iter().enumerate() {
                let (mode, _) = m.modes().channel(mu);
                for i in 0..3 {
                    p[i] += mode.k[i] * n as f64;
                }
                hf += mode.kmag * n as f64;
            }
            let d = [xi[0] - p[0], xi[1] - p[1], xi[2] - p[2]];
            let expected = dot3(d, d) + hf;
            assert!((h.h.get(pos, pos).re - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn vacuum_energy_expectation() {
        let e = 0.4;
        let m = model(e, false, 2, 2);
        let xi = [0.3, 0.0, 0.0];
        let omega = m.carrier().vacuum([ONE, ZERO]);
        let value = m.hamiltonian(xi).h.expectation(&omega);
        let oracle: f64 = 0.09
            + e * e * m.modes().modes().iter().map(|md| 2.0 * md.coupling * md.coupling).sum::<f64>();
        assert!((value - oracle).abs() < 1e-14);
    }

    #[test]
    fn velocity_is_affine_in_xi() {
        let m = model(0.3, true, 1, 2);
        let xi = [0.3, -0.2, 0.1];
        let k = [0.05, 0.1, -0.07];
        let v = m.ops.velocity(xi);
        let v_shift = m.ops.velocity([xi[0] - k[0], xi[1] - k[1], xi[2] - k[2]]);
        for i in 0..3 {
            let diff = SparseOperator::linear_combination(&[(ONE, &v[i]), (-ONE, &v_shift[i])]).unwrap();
            for (r, c, val) in diff.triplets() {
                assert_eq!(r, c);
                assert!((val.re - k[i]).abs() < 1e-15 && val.im == 0.0);
            }
        }
    }

    #[test]
    fn hamiltonian_matches_parts() {
        for spin in [false, true] {
            let m = model(0.8, spin, 1, 2);
            let xi = [0.25, -0.1, 0.3];
            let h = m.hamiltonian(xi).h;
            let parts = m.ops.hamiltonian_from_parts(xi).unwrap();
            let diff = SparseOperator::linear_combination(&[(ONE, &h), (-ONE, &parts)]).unwrap();
            assert!(diff.triplets().all(|(_, _, v)| v.norm() < 1e-13));
        }
    }

    #[test]
    fn zero_coupling_decouples_field() {
        let m0 = model(0.0, false, 1, 2);
        let h0 = m0.hamiltonian([0.2, 0.0, 0.0]).h;
        assert!(m0.ops.a.iter().all(|a| a.nnz() > 0));
        assert!(h0.triplets().all(|(r, c, _)| r == c));
    }

    #[test]
    fn pull_through_identity_below_top_layers() {
        for spin in [false, true] {
            for e in [0.2, 1.0] {
                let m = model(e, spin, 1, 3);
                let carrier = m.carrier();
                let xi = [0.3, 0.1, -0.2];
                for seed in 0..3 {
                    let mut psi = random_vector(m.dim(), seed);
                    for (i, z) in psi.iter_mut().enumerate() {
                        if carrier.photon_number(i) > 1 {
                            *z = ZERO;
                        }
                    }
                    linalg::normalize(&mut psi);
                    for mu in 0..m.modes().num_channels() {
                        let defect = m.ops.pull_through_defect(xi, mu, &psi).unwrap();
                        assert!(norm(&defect) < 1e-12, "spin={spin} e={e} mu={mu}: {}", norm(&defect));
                    }
                }
            }
        }
    }

    #[test]
    fn pull_through_fails_on_top_layer() {
        let m = model(0.5, false, 1, 2);
        let psi: Vec<C64> = (0..m.dim())
            .map(|i| if m.carrier().photon_number(i) == 2 { ONE } else { ZERO })
            .collect();
        let worst = (0..m.modes().num_channels())
            .map(|mu| norm(&m.ops.pull_through_defect([0.3, 0.0, 0.0], mu, &psi).unwrap()))
            .fold(0.0, f64::max);
        assert!(worst > 1e-6);
    }

    #[test]
    fn mode_csv_has_header_and_rows() {
        let ms = ModeSet::build(&disc(AngularScheme::Axes6, 1), &params(0.1, false)).unwrap();
        let csv = ms.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("m,kx,ky,kz,k_abs,w,g,"));
        assert_eq!(lines[1].split(',').count(), 13);
    }
}
