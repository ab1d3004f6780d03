//! Preconditioned MINRES for hermitian systems (H + s·I) x = b.
//!
//! Follows the Paige–Saunders recurrences with a diagonal (Jacobi)
//! preconditioner. Convergence is declared on the true relative residual
//! ‖b − (H + s)x‖/‖b‖, checked whenever the recurrence estimate drops
//! below the target.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::sparse::{SparseOperator, C64, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct MinresOutput {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn minres(
    op: &SparseOperator,
    shift: f64,
    b: &[C64],
    tol: f64,
    max_iter: usize,
    precondition: bool,
) -> Result<MinresOutput> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(MinresOutput { x: vec![ZERO; n], iterations: 0, residual: 0.0 });
    }

    let diag: Vec<f64> = op.diagonal().iter().map(|d| d.re + shift).collect();
    let inv_diag: Option<Vec<f64>> = if precondition && diag.iter().all(|&d| d > 0.0) {
        Some(diag.iter().map(|d| 1.0 / d).collect())
    } else {
        None
    };
    let apply_a = |v: &[C64]| -> Vec<C64> {
        let mut y = op.apply(v);
        axpy(C64::new(shift, 0.0), v, &mut y);
        y
    };
    let apply_m_inv = |v: &[C64]| -> Vec<C64> {
        match &inv_diag {
            Some(d) => v.iter().zip(d).map(|(z, s)| z * s).collect(),
            None => v.to_vec(),
        }
    };
    let true_residual = |x: &[C64]| -> f64 {
        let ax = apply_a(x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        norm(&r) / bnorm
    };

    let mut x = vec![ZERO; n];
    let mut r1 = b.to_vec();
    let mut y = apply_m_inv(&r1);
    let beta1 = dot(&r1, &y).re.sqrt();
    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![ZERO; n];
    let mut w2 = vec![ZERO; n];
    let mut best = f64::INFINITY;

    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        let v: Vec<C64> = y.iter().map(|z| z * s).collect();
        y = apply_a(&v);
        if itn >= 2 {
            axpy(C64::new(-beta / oldb, 0.0), &r1, &mut y);
        }
        let alfa = dot(&v, &y).re;
        axpy(C64::new(-alfa / beta, 0.0), &r2, &mut y);
        r1 = std::mem::replace(&mut r2, y.clone());
        y = apply_m_inv(&r2);
        oldb = beta;
        beta = dot(&r2, &y).re.max(0.0).sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, w.clone());
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
        }
        axpy(C64::new(phi, 0.0), &w, &mut x);

        let estimate = phibar / beta1;
        if estimate <= tol || beta == 0.0 || itn == max_iter {
            let r = true_residual(&x);
            best = best.min(r);
            if r <= tol {
                return Ok(MinresOutput { x, iterations: itn, residual: r });
            }
            if beta == 0.0 {
                break;
            }
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: best })
}
