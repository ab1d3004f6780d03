//! Lowest eigenpairs of hermitian sparse operators.
//!
//! Dimensions up to `dense_threshold` go through a dense hermitian
//! eigensolver (faer); above it, restarted Lanczos with full reorthogonalization,
//! one eigenpair at a time with the converged ones locked out of the Krylov
//! space. Eigenvalues within `gap_tol = 1e-8·max(1,|E|)` of the lowest form
//! the ground cluster; the solver keeps going until it has `n_wanted` pairs
//! and has stepped past the cluster.

use faer::{c64, Mat, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, norm, normalize, orthogonalize};
use crate::quadrature::Vec3;
use crate::sparse::{SparseOperator, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub n_wanted: usize,
    pub seed: u64,
    pub dense_threshold: usize,
    pub method: Method,
    pub krylov_dim: usize,
    pub max_cluster: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            n_wanted: 2,
            seed: 42,
            dense_threshold: 2000,
            method: Method::Auto,
            krylov_dim: 300,
            max_cluster: 8,
        }
    }
}

impl SolverOptions {
    pub fn gap_tol(energy: f64) -> f64 {
        1e-8 * energy.abs().max(1.0)
    }

    fn use_dense(&self, dim: usize) -> bool {
        match self.method {
            Method::Dense => true,
            Method::Lanczos => false,
            Method::Auto => dim <= self.dense_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub iterations: usize,
    pub residual: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateRecord {
    pub xi: Vec3,
    pub energy: f64,
    pub vector: Vec<C64>,
    /// Orthonormal basis of the near-degenerate ground subspace (`vector` first).
    pub cluster: Vec<Vec<C64>>,
    /// All computed eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Distance from E to the first eigenvalue above the cluster, when computed.
    pub gap: Option<f64>,
    pub solver: SolverInfo,
}

impl GroundStateRecord {
    pub fn cluster_size(&self) -> usize {
        self.cluster.len()
    }
}

/// Lowest eigenpairs of `h`. `start` seeds Lanczos (noise of relative size
/// 1e-3 is added from `opts.seed`); ignored on the dense path.
pub fn lowest_eigenpair(h: &SparseOperator, start: Option<&[C64]>, opts: &SolverOptions) -> Result<GroundStateRecord> {
    if h.dim() == 0 {
        return Err(Error::InvalidParameter("empty operator".into()));
    }
    if !h.hermitian() || !h.spot_check_hermitian(1000, opts.seed) {
        return Err(Error::NotHermitian);
    }
    let wanted = opts.n_wanted.max(1).min(h.dim());
    let pairs = if opts.use_dense(h.dim()) {
        dense_pairs(h, wanted, opts.max_cluster)?
    } else {
        lanczos_pairs(h, start, wanted, opts)?
    };
    Ok(assemble_record(h, pairs, wanted))
}

struct Pairs {
    values: Vec<f64>,
    vectors: Vec<Vec<C64>>,
    iterations: usize,
    method: Method,
}

fn assemble_record(h: &SparseOperator, pairs: Pairs, wanted: usize) -> GroundStateRecord {
    let energy = pairs.values[0];
    let gap_tol = SolverOptions::gap_tol(energy);
    let cluster_len = pairs.values.iter().take_while(|&&v| v - energy <= gap_tol).count();
    let gap = pairs.values.get(cluster_len).map(|v| v - energy);
    let vector = pairs.vectors[0].clone();
    let residual = pairs
        .vectors
        .iter()
        .zip(&pairs.values)
        .take(cluster_len.max(1))
        .map(|(x, &lambda)| residual_norm(h, x, lambda))
        .fold(0.0, f64::max);
    let keep = wanted.max(cluster_len + usize::from(gap.is_some()));
    GroundStateRecord {
        xi: [0.0; 3],
        energy,
        vector,
        cluster: pairs.vectors[..cluster_len].to_vec(),
        eigenvalues: pairs.values[..keep.min(pairs.values.len())].to_vec(),
        gap,
        solver: SolverInfo { iterations: pairs.iterations, residual, method: pairs.method },
    }
}

pub fn residual_norm(h: &SparseOperator, x: &[C64], lambda: f64) -> f64 {
    let mut r = h.apply(x);
    axpy(C64::new(-lambda, 0.0), x, &mut r);
    norm(&r)
}

/// Full dense diagonalization; also the test oracle for the Lanczos path.
///
/// Diagonal operators (the free field) are solved exactly by sorting.
pub fn dense_spectrum(h: &SparseOperator) -> Result<(Vec<f64>, Vec<Vec<C64>>)> {
    let dim = h.dim();
    if h.triplets().all(|(r, c, _)| r == c) {
        let diag = h.diagonal();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| diag[a].re.total_cmp(&diag[b].re).then(a.cmp(&b)));
        let values = order.iter().map(|&i| diag[i].re).collect();
        let vectors = order
            .iter()
            .map(|&i| {
                let mut v = vec![ZERO; dim];
                v[i] = C64::new(1.0, 0.0);
                v
            })
            .collect();
        return Ok((values, vectors));
    }
    let mut m = Mat::<c64>::zeros(dim, dim);
    for (r, c, v) in h.triplets() {
        m[(r, c)] = c64::new(v.re, v.im);
    }
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NoConvergence { iterations: 0, residual: f64::NAN })?;
    let (s, u) = (eig.S().column_vector(), eig.U());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| s[a].re.total_cmp(&s[b].re).then(a.cmp(&b)));
    let values = order.iter().map(|&i| s[i].re).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<C64> = (0..dim).map(|r| C64::new(u[(r, i)].re, u[(r, i)].im)).collect();
            normalize(&mut v);
            v
        })
        .collect();
    Ok((values, vectors))
}

fn dense_pairs(h: &SparseOperator, wanted: usize, max_cluster: usize) -> Result<Pairs> {
    let (values, vectors) = dense_spectrum(h)?;
    let e0 = values[0];
    let gap_tol = SolverOptions::gap_tol(e0);
    let cluster = values.iter().take_while(|&&v| v - e0 <= gap_tol).count().min(max_cluster);
    let keep = wanted.max(cluster + 1).min(values.len());
    Ok(Pairs {
        values: values[..keep].to_vec(),
        vectors: vectors.into_iter().take(keep).collect(),
        iterations: 0,
        method: Method::Dense,
    })
}

fn lanczos_pairs(h: &SparseOperator, start: Option<&[C64]>, wanted: usize, opts: &SolverOptions) -> Result<Pairs> {
    let dim = h.dim();
    let noise = linalg::random_vector(dim, opts.seed);
    let mut base: Vec<C64> = match start {
        Some(s) if s.len() == dim => s.to_vec(),
        Some(s) => return Err(Error::DimensionMismatch { expected: dim, got: s.len() }),
        None => {
            let mut v = vec![ZERO; dim];
            v[0] = C64::new(1.0, 0.0);
            v
        }
    };
    normalize(&mut base);
    let noise_norm = norm(&noise);
    axpy(C64::new(1e-3 / noise_norm, 0.0), &noise, &mut base);

    let mut values: Vec<f64> = Vec::new();
    let mut vectors: Vec<Vec<C64>> = Vec::new();
    let mut iterations = 0;
    loop {
        let budget = opts.max_iter.saturating_sub(iterations);
        if budget == 0 {
            return Err(Error::NoConvergence { iterations, residual: f64::INFINITY });
        }
        let run = lanczos_lowest(h, &base, &vectors, opts.tol, budget, opts.krylov_dim.max(2))?;
        iterations += run.iterations;
        values.push(run.value);
        vectors.push(run.vector);

        // Keep pairs sorted; deflation may find them out of order.
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        values = order.iter().map(|&i| values[i]).collect();
        vectors = order.iter().map(|&i| vectors[i].clone()).collect();

        let e0 = values[0];
        let gap_tol = SolverOptions::gap_tol(e0);
        let cluster = values.iter().take_while(|&&v| v - e0 <= gap_tol).count();
        let stepped_past = cluster < values.len() || cluster >= opts.max_cluster;
        if values.len() >= wanted && (stepped_past || values.len() == dim) {
            break;
        }
        if values.len() == dim {
            break;
        }
    }
    Ok(Pairs { values, vectors, iterations, method: Method::Lanczos })
}

struct LanczosRun {
    value: f64,
    vector: Vec<C64>,
    iterations: usize,
}

/// Lowest eigenpair of `h` restricted to the orthogonal complement of `locked`.
fn lanczos_lowest(
    h: &SparseOperator,
    start: &[C64],
    locked: &[Vec<C64>],
    tol: f64,
    max_iter: usize,
    krylov_dim: usize,
) -> Result<LanczosRun> {
    let dim = h.dim();
    let capacity = dim - locked.len();
    if capacity == 0 {
        return Err(Error::InvalidParameter("no space left after deflation".into()));
    }
    let krylov_dim = krylov_dim.min(capacity);

    let mut q = start.to_vec();
    orthogonalize(&mut q, locked);
    if normalize(&mut q) < 1e-12 {
        q = linalg::random_vector(dim, 0x5eed + locked.len() as u64);
        orthogonalize(&mut q, locked);
        normalize(&mut q);
    }

    let mut iterations = 0;
    let mut best_residual = f64::INFINITY;
    loop {
        let mut basis: Vec<Vec<C64>> = vec![q.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut ritz: Option<(f64, Vec<f64>)>;
        loop {
            let j = basis.len() - 1;
            let mut w = h.apply(&basis[j]);
            let alpha = dot(&basis[j], &w).re;
            axpy(C64::new(-alpha, 0.0), &basis[j], &mut w);
            if j > 0 {
                axpy(C64::new(-betas[j - 1], 0.0), &basis[j - 1], &mut w);
            }
            orthogonalize(&mut w, locked);
            orthogonalize(&mut w, &basis);
            let beta = norm(&w);
            alphas.push(alpha);
            iterations += 1;

            let size = alphas.len();
            let scale = alphas.iter().map(|a| a.abs()).fold(1.0, f64::max);
            let breakdown = beta <= 1e-13 * scale;
            let full = size >= krylov_dim || iterations >= max_iter;
            if breakdown || full || size % 5 == 0 {
                let (theta, s) = tridiagonal_lowest(&alphas, &betas);
                let estimate = (beta * s[size - 1]).abs();
                let converged_estimate = estimate <= 0.5 * tol * theta.abs().max(1.0);
                ritz = Some((theta, s));
                if converged_estimate || breakdown || full {
                    break;
                }
            }
            betas.push(beta);
            let inv = 1.0 / beta;
            basis.push(w.iter().map(|z| z * inv).collect());
        }

        let (_, s) = ritz.expect("ritz pair computed before exit");
        let mut x = vec![ZERO; dim];
        for (coef, v) in s.iter().zip(&basis) {
            axpy(C64::new(*coef, 0.0), v, &mut x);
        }
        orthogonalize(&mut x, locked);
        normalize(&mut x);
        let value = h.expectation(&x);
        let residual = residual_norm(h, &x, value);
        best_residual = best_residual.min(residual);
        if residual <= tol * value.abs().max(1.0) {
            return Ok(LanczosRun { value, vector: x, iterations });
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence { iterations, residual: best_residual });
        }
        q = x;
    }
}

/// Lowest eigenpair of the symmetric tridiagonal matrix (alphas, betas).
fn tridiagonal_lowest(alphas: &[f64], betas: &[f64]) -> (f64, Vec<f64>) {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    (theta, eig.eigenvectors.column(idx).iter().copied().collect())
}
