//! Row-compressed complex sparse matrices.
//!
//! Entries are stored iff structurally nonzero: assembly sums duplicates and
//! drops exact zeros, nothing else. The `hermitian` flag is metadata set by
//! constructors that assemble symmetric pairs; [`SparseOperator::is_hermitian`]
//! checks it entrywise.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
    hermitian: bool,
}

impl SparseOperator {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>, hermitian: bool) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut iter = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside dimension {dim}");
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != ZERO {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..dim {
            indptr[r + 1] += indptr[r];
        }
        Self { dim, indptr, indices, values, hermitian }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indptr: vec![0; dim + 1],
            indices: Vec::new(),
            values: Vec::new(),
            hermitian: true,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![ONE; dim])
    }

    /// Diagonal matrix; hermitian iff every entry is real.
    pub fn from_diagonal(diag: &[C64]) -> Self {
        let hermitian = diag.iter().all(|d| d.im == 0.0);
        let triplets = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(diag.len(), triplets, hermitian)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => ZERO,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *out = acc;
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let triplets = self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.dim, triplets, self.hermitian)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out.hermitian = self.hermitian && s.im == 0.0;
        out.drop_zeros();
        out
    }

    /// Σ_j c_j·op_j. The result is flagged hermitian when every term is
    /// hermitian with a real coefficient.
    pub fn linear_combination(terms: &[(C64, &SparseOperator)]) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return Err(Error::InvalidParameter("empty linear combination".into()));
        };
        let dim = first.dim;
        for (_, op) in terms {
            if op.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: op.dim });
            }
        }
        let hermitian = terms.iter().all(|(c, op)| op.hermitian && c.im == 0.0);
        let mut acc = RowAccumulator::new(dim);
        let mut out = Builder::new(dim);
        for r in 0..dim {
            for (c, op) in terms {
                for (col, v) in op.row(r) {
                    acc.add(col, *c * v);
                }
            }
            acc.drain_into(&mut out);
        }
        Ok(out.finish(hermitian))
    }

    /// Sparse product `self · rhs` (row-wise Gustavson accumulation).
    pub fn matmul(&self, rhs: &SparseOperator) -> Result<Self> {
        if self.dim != rhs.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: rhs.dim });
        }
        let mut acc = RowAccumulator::new(self.dim);
        let mut out = Builder::new(self.dim);
        for r in 0..self.dim {
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    acc.add(c, a * b);
                }
            }
            acc.drain_into(&mut out);
        }
        Ok(out.finish(false))
    }

    /// Replaces the matrix by (M + M†)/2. Exact when M is already hermitian
    /// up to summation-order rounding; afterwards M equals M† bitwise.
    pub fn hermitize(&self) -> Self {
        let adj = self.adjoint();
        let half = C64::new(0.5, 0.0);
        let mut out = Self::linear_combination(&[(half, self), (half, &adj)])
            .expect("adjoint has matching dimension");
        out.hermitian = true;
        out
    }

    /// Kronecker product `spin ⊗ self`, spin factor first.
    pub fn kron_spin(&self, spin: &[[C64; 2]; 2]) -> Self {
        let n = self.dim;
        let mut triplets = Vec::with_capacity(4 * self.nnz());
        for (s1, srow) in spin.iter().enumerate() {
            for (s2, &sv) in srow.iter().enumerate() {
                if sv == ZERO {
                    continue;
                }
                for (r, c, v) in self.triplets() {
                    triplets.push((s1 * n + r, s2 * n + c, sv * v));
                }
            }
        }
        let spin_hermitian = spin[0][0].im == 0.0
            && spin[1][1].im == 0.0
            && spin[0][1] == spin[1][0].conj();
        Self::from_triplets(2 * n, triplets, self.hermitian && spin_hermitian)
    }

    /// Entrywise comparison with the conjugate transpose.
    pub fn is_hermitian(&self) -> bool {
        self.triplets().all(|(r, c, v)| self.get(c, r) == v.conj())
    }

    /// Checks `samples` seeded random stored entries against their transposed partners.
    pub fn spot_check_hermitian(&self, samples: usize, seed: u64) -> bool {
        if self.nnz() == 0 {
            return true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows_with_entries: Vec<usize> =
            (0..self.dim).filter(|&r| self.indptr[r + 1] > self.indptr[r]).collect();
        (0..samples).all(|_| {
            let r = rows_with_entries[rng.random_range(0..rows_with_entries.len())];
            let k = rng.random_range(self.indptr[r]..self.indptr[r + 1]);
            let c = self.indices[k];
            self.get(c, r) == self.values[k].conj()
        })
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// ⟨x, A x⟩ (real part, exact for hermitian A up to rounding).
    pub fn expectation(&self, x: &[C64]) -> f64 {
        crate::linalg::dot(x, &self.apply(x)).re
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|v| *v != ZERO) {
            return;
        }
        let triplets = self.triplets().collect();
        *self = Self::from_triplets(self.dim, triplets, self.hermitian);
    }
}

struct RowAccumulator {
    values: Vec<C64>,
    occupied: Vec<bool>,
    touched: Vec<usize>,
}

impl RowAccumulator {
    fn new(dim: usize) -> Self {
        Self { values: vec![ZERO; dim], occupied: vec![false; dim], touched: Vec::new() }
    }

    fn add(&mut self, col: usize, v: C64) {
        if !self.occupied[col] {
            self.occupied[col] = true;
            self.touched.push(col);
        }
        self.values[col] += v;
    }

    fn drain_into(&mut self, out: &mut Builder) {
        self.touched.sort_unstable();
        for &c in &self.touched {
            let v = std::mem::replace(&mut self.values[c], ZERO);
            self.occupied[c] = false;
            if v != ZERO {
                out.indices.push(c);
                out.values.push(v);
            }
        }
        self.touched.clear();
        out.indptr.push(out.indices.len());
    }
}

struct Builder {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl Builder {
    fn new(dim: usize) -> Self {
        let mut indptr = Vec::with_capacity(dim + 1);
        indptr.push(0);
        Self { dim, indptr, indices: Vec::new(), values: Vec::new() }
    }

    fn finish(self, hermitian: bool) -> SparseOperator {
        debug_assert_eq!(self.indptr.len(), self.dim + 1);
        SparseOperator {
            dim: self.dim,
            indptr: self.indptr,
            indices: self.indices,
            values: self.values,
            hermitian,
        }
    }
}

pub fn pauli() -> [[[C64; 2]; 2]; 3] {
    [
        [[ZERO, ONE], [ONE, ZERO]],
        [[ZERO, -I], [I, ZERO]],
        [[ONE, ZERO], [ZERO, -ONE]],
    ]
}

pub const SPIN_IDENTITY: [[C64; 2]; 2] = [[ONE, ZERO], [ZERO, ONE]];
