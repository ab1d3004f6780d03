//! Property tests for the structural invariants of the Fock space, the mode
//! frame, the cone geometry and the fiber Hamiltonian.

use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;

use fiberspec::diagnostics::{ccr_deviation, cone_membership, ConeSpec};
use fiberspec::field::{cross, dot3, norm3, polarization_frame};
use fiberspec::linalg::{dot, norm, random_vector};
use fiberspec::quadrature::shells;
use fiberspec::sparse::ZERO;
use fiberspec::{
    AngularScheme, CouplingParams, FiberModel, FieldDiscretization, FockBasis, FockBasisOptions, RadialScheme, Vec3,
};

fn unit(theta: f64, phi: f64) -> Vec3 {
    let s = theta.sin();
    let v = [s * phi.cos(), s * phi.sin(), theta.cos()];
    let n = norm3(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn direction() -> impl Strategy<Value = Vec3> {
    (0.0..=PI, 0.0..2.0 * PI).prop_map(|(t, p)| unit(t, p))
}

fn coupled_model() -> &'static FiberModel {
    static MODEL: OnceLock<FiberModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        FiberModel::build(
            FieldDiscretization {
                radial: RadialScheme::Linear,
                shells: 1,
                angular: AngularScheme::Icosa12,
                antipodal_symmetric: true,
            },
            CouplingParams { e: 0.7, lambda_uv: 1.0, sigma_ir: 0.1, spin: true },
            2,
            &FockBasisOptions::default(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn frame_is_orthonormal_and_right_handed(k in direction()) {
        let (e1, e2) = polarization_frame(k).unwrap();
        for (a, b, want) in [(e1, e1, 1.0), (e2, e2, 1.0), (e1, e2, 0.0), (e1, k, 0.0), (e2, k, 0.0)] {
            prop_assert!((dot3(a, b) - want).abs() <= 1e-12);
        }
        prop_assert!((dot3(k, cross(e1, e2)) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn k_lies_inside_s_eps(
        w in direction(),
        g in direction(),
        gmag in 0.0..0.99f64,
        eps in 0.01..0.99f64,
    ) {
        let spec = ConeSpec::new([g[0] * gmag, g[1] * gmag, g[2] * gmag], eps).unwrap();
        let m = cone_membership(w, &spec).unwrap();
        prop_assert!(!m.in_k || m.in_s_eps);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fock_index_round_trips(m in 1usize..9, n_max in 0usize..5) {
        let basis = FockBasis::enumerate(m, n_max).unwrap();
        for pos in 0..basis.len() {
            prop_assert!(basis.total(pos) <= n_max);
            prop_assert_eq!(basis.index_of(basis.occupations(pos)), Some(pos));
        }
    }

    #[test]
    fn creation_is_adjoint_of_annihilation(m in 1usize..7, n_max in 0usize..4, mu_seed in 0usize..64) {
        let basis = FockBasis::enumerate(m, n_max).unwrap();
        let mu = mu_seed % m;
        let a = basis.annihilation(mu).unwrap();
        let adag = basis.creation(mu).unwrap();
        prop_assert_eq!(adag.nnz(), a.nnz());
        for (r, c, v) in a.triplets() {
            prop_assert_eq!(adag.get(c, r), v.conj());
        }
    }

    #[test]
    fn truncated_ccr_holds(m in 1usize..7, n_max in 0usize..4) {
        let basis = FockBasis::enumerate(m, n_max).unwrap();
        prop_assert!(ccr_deviation(&basis).unwrap() <= 1e-12);
    }

    #[test]
    fn number_expectation_two_ways(m in 1usize..7, n_max in 0usize..4, seed in any::<u64>()) {
        let basis = FockBasis::enumerate(m, n_max).unwrap();
        let psi = random_vector(basis.len(), seed);
        let direct = dot(&psi, &basis.number_operator().apply(&psi)).re;
        let summed: f64 = (0..m).map(|mu| norm(&basis.apply_annihilation(mu, &psi).unwrap()).powi(2)).sum();
        prop_assert!((direct - summed).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn velocity_shifts_with_momentum(
        xi in prop::array::uniform3(-1.0..1.0f64),
        k in prop::array::uniform3(-1.0..1.0f64),
        seed in any::<u64>(),
    ) {
        let model = coupled_model();
        let psi = random_vector(model.dim(), seed);
        let shifted = [xi[0] - k[0], xi[1] - k[1], xi[2] - k[2]];
        for i in 0..3 {
            let lhs = model.ops.apply_velocity(shifted, i, &psi);
            let rhs = model.ops.apply_velocity(xi, i, &psi);
            let worst = lhs.iter().zip(&rhs).zip(&psi).map(|((l, r), p)| (l - (r - p * k[i])).norm()).fold(0.0, f64::max);
            prop_assert!(worst <= 1e-13);
        }
    }

    #[test]
    fn hamiltonian_is_hermitian_and_matches_product_form(xi in prop::array::uniform3(-1.0..1.0f64)) {
        let model = coupled_model();
        let h = model.hamiltonian(xi).h;
        prop_assert!(h.is_hermitian());
        let parts = model.ops.hamiltonian_from_parts(xi).unwrap();
        let worst = h.triplets().map(|(r, c, v)| (v - parts.get(r, c)).norm())
            .chain(parts.triplets().map(|(r, c, v)| (v - h.get(r, c)).norm()))
            .fold(0.0, f64::max);
        prop_assert!(worst <= 1e-12);
    }

    #[test]
    fn shells_tile_the_annulus(count in 1usize..12, sigma in 1e-4..0.5f64, log in any::<bool>()) {
        let scheme = if log { RadialScheme::Logarithmic } else { RadialScheme::Linear };
        let cells = shells(scheme, count, sigma, 1.0);
        prop_assert_eq!(cells.len(), count);
        prop_assert_eq!(cells[0].lo, sigma);
        prop_assert_eq!(cells[count - 1].hi, 1.0);
        for w in cells.windows(2) {
            prop_assert_eq!(w[0].hi, w[1].lo);
        }
        let volume: f64 = cells.iter().map(|c| c.radial_volume()).sum();
        prop_assert!((volume - (1.0 - sigma.powi(3)) / 3.0).abs() <= 1e-14);
        prop_assert!(cells.iter().all(|c| c.lo < c.node && c.node < c.hi));
    }
}

#[test]
fn vacuum_is_annihilated() {
    for m in 1..=6 {
        let basis = FockBasis::enumerate(m, 3).unwrap();
        let mut vacuum = vec![ZERO; basis.len()];
        vacuum[0] = fiberspec::C64::new(1.0, 0.0);
        for mu in 0..m {
            assert!(basis.apply_annihilation(mu, &vacuum).unwrap().iter().all(|z| *z == ZERO));
        }
    }
}
