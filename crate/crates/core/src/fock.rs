//! Truncated symmetric Fock space over finitely many mode channels.
//!
//! States are occupation-number vectors with total photon number ≤ `n_max`
//! (and optionally each occupation ≤ `c_max`). The ordering is graded by
//! total, then descending lexicographic in the occupations, so each photon
//! sector is a contiguous index range and the vacuum sits at index 0.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sparse::{SparseOperator, C64, ZERO};

pub const DEFAULT_MAX_STATES: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupationState {
    occupations: Vec<u8>,
    total: usize,
}

impl OccupationState {
    pub fn new(occupations: Vec<u8>) -> Self {
        let total = occupations.iter().map(|&n| n as usize).sum();
        Self { occupations, total }
    }

    pub fn occupations(&self) -> &[u8] {
        &self.occupations
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

#[derive(Debug, Clone)]
pub struct FockBasisOptions {
    /// Per-channel occupation cap; `None` means `n_max`.
    pub c_max: Option<u8>,
    pub max_states: usize,
}

impl Default for FockBasisOptions {
    fn default() -> Self {
        Self { c_max: None, max_states: DEFAULT_MAX_STATES }
    }
}

#[derive(Debug, Clone)]
pub struct FockBasis {
    num_channels: usize,
    n_max: u8,
    c_max: u8,
    /// Flat occupation table, `num_channels` bytes per state.
    occupations: Vec<u8>,
    totals: Vec<u8>,
    /// `sector_start[n]..sector_start[n + 1]` holds the n-photon states.
    sector_start: Vec<usize>,
    index: HashMap<Box<[u8]>, usize>,
}

impl FockBasis {
    pub fn enumerate(num_channels: usize, n_max: usize) -> Result<Self> {
        Self::enumerate_with(num_channels, n_max, &FockBasisOptions::default())
    }

    pub fn enumerate_with(num_channels: usize, n_max: usize, opts: &FockBasisOptions) -> Result<Self> {
        if num_channels == 0 {
            return Err(Error::InvalidParameter("channel count must be ≥ 1".into()));
        }
        let n_max = u8::try_from(n_max)
            .map_err(|_| Error::InvalidParameter(format!("n_max = {n_max} exceeds 255")))?;
        let c_max = opts.c_max.unwrap_or(n_max).min(n_max);

        let size = count_states(num_channels, n_max as usize, c_max as usize);
        if size > opts.max_states as u128 {
            return Err(Error::Capacity {
                size: usize::try_from(size).unwrap_or(usize::MAX),
                max: opts.max_states,
            });
        }
        let size = size as usize;

        let mut occupations = Vec::with_capacity(size * num_channels);
        let mut totals = Vec::with_capacity(size);
        let mut sector_start = Vec::with_capacity(n_max as usize + 2);
        let mut current = vec![0u8; num_channels];
        for n in 0..=n_max {
            sector_start.push(totals.len());
            compositions(&mut current, 0, n, c_max, &mut |occ| {
                occupations.extend_from_slice(occ);
                totals.push(n);
            });
        }
        sector_start.push(totals.len());
        debug_assert_eq!(totals.len(), size);

        let index = (0..size)
            .map(|pos| {
                let occ = &occupations[pos * num_channels..(pos + 1) * num_channels];
                (Box::<[u8]>::from(occ), pos)
            })
            .collect();

        Ok(Self { num_channels, n_max, c_max, occupations, totals, sector_start, index })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn n_max(&self) -> usize {
        self.n_max as usize
    }

    pub fn c_max(&self) -> usize {
        self.c_max as usize
    }

    pub fn len(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    pub fn occupations(&self, pos: usize) -> &[u8] {
        &self.occupations[pos * self.num_channels..(pos + 1) * self.num_channels]
    }

    pub fn state(&self, pos: usize) -> OccupationState {
        OccupationState::new(self.occupations(pos).to_vec())
    }

    pub fn total(&self, pos: usize) -> usize {
        self.totals[pos] as usize
    }

    pub fn index_of(&self, occupations: &[u8]) -> Option<usize> {
        self.index.get(occupations).copied()
    }

    /// Index range of the n-photon sector.
    pub fn sector(&self, n: usize) -> std::ops::Range<usize> {
        if n > self.n_max as usize {
            return self.len()..self.len();
        }
        self.sector_start[n]..self.sector_start[n + 1]
    }

    fn check_channel(&self, mu: usize) -> Result<()> {
        if mu >= self.num_channels {
            return Err(Error::ChannelOutOfRange { index: mu, channels: self.num_channels });
        }
        Ok(())
    }

    /// Matrix of a_μ: ⟨s − e_μ| a_μ |s⟩ = √s_μ.
    pub fn annihilation(&self, mu: usize) -> Result<SparseOperator> {
        self.check_channel(mu)?;
        let mut triplets = Vec::new();
        let mut lowered = vec![0u8; self.num_channels];
        for pos in 0..self.len() {
            let occ = self.occupations(pos);
            let n = occ[mu];
            if n == 0 {
                continue;
            }
            lowered.copy_from_slice(occ);
            lowered[mu] -= 1;
            let target = self.index[&lowered[..]];
            triplets.push((target, pos, C64::new((n as f64).sqrt(), 0.0)));
        }
        Ok(SparseOperator::from_triplets(self.len(), triplets, false))
    }

    /// a_μ*, the conjugate transpose of [`FockBasis::annihilation`].
    pub fn creation(&self, mu: usize) -> Result<SparseOperator> {
        Ok(self.annihilation(mu)?.adjoint())
    }

    /// Diagonal Σ_μ w_μ s_μ.
    pub fn diagonal_operator(&self, weights: &[f64]) -> Result<SparseOperator> {
        if weights.len() != self.num_channels {
            return Err(Error::LengthMismatch { expected: self.num_channels, got: weights.len() });
        }
        let diag: Vec<C64> = (0..self.len())
            .map(|pos| {
                let v = self
                    .occupations(pos)
                    .iter()
                    .zip(weights)
                    .filter(|(&n, _)| n != 0)
                    .map(|(&n, w)| n as f64 * w)
                    .sum::<f64>();
                C64::new(v, 0.0)
            })
            .collect();
        Ok(SparseOperator::from_diagonal(&diag))
    }

    pub fn number_operator(&self) -> SparseOperator {
        self.diagonal_operator(&vec![1.0; self.num_channels])
            .expect("weights sized to channel count")
    }

    /// Applies a_μ to a vector without assembling the matrix.
    pub fn apply_annihilation(&self, mu: usize, x: &[C64]) -> Result<Vec<C64>> {
        self.check_channel(mu)?;
        if x.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: x.len() });
        }
        let mut out = vec![ZERO; self.len()];
        let mut lowered = vec![0u8; self.num_channels];
        for (pos, &xv) in x.iter().enumerate() {
            let occ = self.occupations(pos);
            let n = occ[mu];
            if n == 0 || xv == ZERO {
                continue;
            }
            lowered.copy_from_slice(occ);
            lowered[mu] -= 1;
            out[self.index[&lowered[..]]] += xv * (n as f64).sqrt();
        }
        Ok(out)
    }
}

/// Kronecker product with a 2×2 spin matrix, spin factor first.
pub fn tensor_with_spin(op: &SparseOperator, spin: &[[C64; 2]; 2]) -> SparseOperator {
    op.kron_spin(spin)
}

/// Writes every composition of `remaining` into `current[at..]` with parts
/// ≤ `cap`, in descending lexicographic order.
fn compositions(current: &mut [u8], at: usize, remaining: u8, cap: u8, emit: &mut impl FnMut(&[u8])) {
    if at + 1 == current.len() {
        if remaining <= cap {
            current[at] = remaining;
            emit(current);
            current[at] = 0;
        }
        return;
    }
    let slots_after = (current.len() - at - 1) as u32;
    for n in (0..=remaining.min(cap)).rev() {
        if (remaining - n) as u32 > slots_after * cap as u32 {
            break;
        }
        current[at] = n;
        compositions(current, at + 1, remaining - n, cap, emit);
    }
    current[at] = 0;
}

/// Number of occupation vectors over `m` channels with total ≤ n_max and
/// every entry ≤ cap.
pub fn count_states(m: usize, n_max: usize, cap: usize) -> u128 {
    // ways[n] = compositions of n into the channels processed so far
    let mut ways = vec![0u128; n_max + 1];
    ways[0] = 1;
    for _ in 0..m {
        let mut next = vec![0u128; n_max + 1];
        for (n, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for k in 0..=cap.min(n_max - n) {
                next[n + k] = next[n + k].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0u128, |a, &b| a.saturating_add(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::pauli;

    fn binomial(n: u64, k: u64) -> u64 {
        (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
    }

    /// Brute-force oracle: every vector in {0..=n_max}^M, filtered by total.
    fn brute_force_count(m: usize, n_max: usize) -> usize {
        let mut count = 0;
        let mut v = vec![0usize; m];
        loop {
            if v.iter().sum::<usize>() <= n_max {
                count += 1;
            }
            let mut i = 0;
            loop {
                if i == m {
                    return count;
                }
                v[i] += 1;
                if v[i] <= n_max {
                    break;
                }
                v[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn single_channel() {
        let b = FockBasis::enumerate(1, 2).unwrap();
        let states: Vec<&[u8]> = (0..b.len()).map(|p| b.occupations(p)).collect();
        assert_eq!(states, vec![&[0u8][..], &[1], &[2]]);
    }

    #[test]
    fn two_channels_graded_order() {
        let b = FockBasis::enumerate(2, 2).unwrap();
        let states: Vec<Vec<u8>> = (0..b.len()).map(|p| b.occupations(p).to_vec()).collect();
        assert_eq!(
            states,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(b.sector(1), 1..3);
        assert_eq!(b.sector(2), 3..6);
    }

    #[test]
    fn size_matches_brute_force() {
        assert_eq!(brute_force_count(6, 3), 84);
        assert_eq!(FockBasis::enumerate(6, 3).unwrap().len(), 84);
        for m in 1..=5 {
            for n in 0..=4 {
                let expected: u64 = (0..=n as u64).map(|k| binomial(m as u64 + k - 1, k)).sum();
                assert_eq!(FockBasis::enumerate(m, n).unwrap().len() as u64, expected);
                assert_eq!(brute_force_count(m, n) as u64, expected);
            }
        }
    }

    #[test]
    fn occupancy_cap_truncates() {
        let opts = FockBasisOptions { c_max: Some(1), ..Default::default() };
        let b = FockBasis::enumerate_with(3, 3, &opts).unwrap();
        // subsets of 3 channels
        assert_eq!(b.len(), 8);
        assert!((0..b.len()).all(|p| b.occupations(p).iter().all(|&n| n <= 1)));
    }

    #[test]
    fn capacity_error() {
        let opts = FockBasisOptions { max_states: 100, ..Default::default() };
        let err = FockBasis::enumerate_with(10, 3, &opts).unwrap_err();
        assert_eq!(err, Error::Capacity { size: 286, max: 100 });
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(FockBasis::enumerate(0, 2).is_err());
        assert!(FockBasis::enumerate(1, 256).is_err());
        let b = FockBasis::enumerate(2, 1).unwrap();
        assert!(matches!(b.annihilation(2), Err(Error::ChannelOutOfRange { .. })));
        assert!(matches!(b.diagonal_operator(&[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn annihilation_single_channel_entries() {
        let b = FockBasis::enumerate(1, 2).unwrap();
        let a = b.annihilation(0).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), C64::new(1.0, 0.0));
        assert_eq!(a.get(1, 2), C64::new(2f64.sqrt(), 0.0));
        assert!(!a.hermitian());
    }

    #[test]
    fn vacuum_column_is_zero() {
        let b = FockBasis::enumerate(3, 2).unwrap();
        for mu in 0..3 {
            let a = b.annihilation(mu).unwrap();
            assert!((0..b.len()).all(|r| a.get(r, 0) == ZERO));
        }
    }

    #[test]
    fn commutator_is_identity_below_top_layer() {
        // dense multiplication oracle
        let b = FockBasis::enumerate(2, 3).unwrap();
        for mu in 0..2 {
            let a = b.annihilation(mu).unwrap().to_dense();
            let ad = a.adjoint();
            let comm = &a * &ad - &ad * &a;
            let below: Vec<usize> = (0..b.len()).filter(|&p| b.total(p) < 3).collect();
            for &r in &below {
                for &c in &below {
                    let expected = if r == c { 1.0 } else { 0.0 };
                    assert!((comm[(r, c)] - C64::new(expected, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diagonal_operators() {
        let b = FockBasis::enumerate(1, 2).unwrap();
        let hf = b.diagonal_operator(&[0.5]).unwrap();
        assert_eq!(hf.get(2, 2), C64::new(1.0, 0.0));
        assert!(hf.hermitian());

        let b = FockBasis::enumerate(2, 2).unwrap();
        let n = b.number_operator();
        let d: Vec<f64> = n.diagonal().iter().map(|z| z.re).collect();
        assert_eq!(d, vec![0.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let px = b.diagonal_operator(&[0.3, -0.2]).unwrap();
        assert_eq!(px.get(0, 0), ZERO);
        assert!((px.get(4, 4).re - 0.1).abs() < 1e-15);
    }

    #[test]
    fn spin_tensor_examples() {
        let b = FockBasis::enumerate(2, 1).unwrap();
        let n = b.number_operator();
        let id2 = [[C64::new(1.0, 0.0), ZERO], [ZERO, C64::new(1.0, 0.0)]];
        let nn = tensor_with_spin(&n, &id2);
        let d: Vec<f64> = nn.diagonal().iter().map(|z| z.re).collect();
        assert_eq!(d, vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(nn.nnz(), 4);

        let s = pauli();
        let one = SparseOperator::identity(b.len());
        let s3 = tensor_with_spin(&one, &s[2]);
        let d: Vec<f64> = s3.diagonal().iter().map(|z| z.re).collect();
        assert_eq!(d, vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);

        // [σ1, σ2] = 2iσ3 through assembled products
        let s1 = tensor_with_spin(&one, &s[0]);
        let s2 = tensor_with_spin(&one, &s[1]);
        let comm = SparseOperator::linear_combination(&[
            (C64::new(1.0, 0.0), &s1.matmul(&s2).unwrap()),
            (C64::new(-1.0, 0.0), &s2.matmul(&s1).unwrap()),
        ])
        .unwrap();
        let target = s3.scale(C64::new(0.0, 2.0));
        assert_eq!(comm.to_dense(), target.to_dense());
    }

    #[test]
    fn apply_annihilation_matches_matrix() {
        let b = FockBasis::enumerate(3, 3).unwrap();
        let x = crate::linalg::random_vector(b.len(), 5);
        for mu in 0..3 {
            let via_matrix = b.annihilation(mu).unwrap().apply(&x);
            let direct = b.apply_annihilation(mu, &x).unwrap();
            for (u, v) in via_matrix.iter().zip(&direct) {
                assert!((u - v).norm() < 1e-14);
            }
        }
    }
}
