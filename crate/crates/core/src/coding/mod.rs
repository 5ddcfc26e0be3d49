//! Generator matrices for (N, K) erasure codes over the reals.
//!
//! A generator is a `k × n` grid whose column `j` holds the coefficients
//! worker `j` uses to combine the `k` information blocks. Three schemes are
//! provided:
//!
//! ```text
//! SystematicMds   [ I_k | V ]    V[r][m] = (m+1)^r
//! VandermondeRs   G[r][j] = (j+1)^r
//! Rlnc            [ I_k | B ]    B[r][m] ~ fair coin in {0, 1}, no zero column
//! ```
//!
//! The systematic MDS extension uses positive, distinct Vandermonde nodes;
//! every square minor of such a matrix is nonzero, so any `k` columns of
//! `[I_k | V]` are independent.

mod rank;
mod solve;

pub use rank::{RankTracker, PIVOT_TOLERANCE};
pub use solve::{decode, solve_dense};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Construction scheme of a [`GeneratorMatrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    SystematicMds,
    VandermondeRs,
    Rlnc,
}

impl Scheme {
    pub fn tag(self) -> u8 {
        match self {
            Scheme::SystematicMds => 0,
            Scheme::VandermondeRs => 1,
            Scheme::Rlnc => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Scheme::SystematicMds),
            1 => Ok(Scheme::VandermondeRs),
            2 => Ok(Scheme::Rlnc),
            other => Err(Error::invalid(format!("unknown scheme tag {other}"))),
        }
    }

    /// `true` when the first `k` columns are the identity.
    pub fn is_systematic(self) -> bool {
        matches!(self, Scheme::SystematicMds | Scheme::Rlnc)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::SystematicMds => "mds",
            Scheme::VandermondeRs => "rs",
            Scheme::Rlnc => "rlnc",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mds" | "systematic-mds" | "systematic_mds" => Ok(Scheme::SystematicMds),
            "rs" | "vandermonde" | "vandermonde-rs" | "vandermonde_rs" => Ok(Scheme::VandermondeRs),
            "rlnc" => Ok(Scheme::Rlnc),
            other => Err(Error::invalid(format!("unknown scheme '{other}'"))),
        }
    }
}

/// The `k × n` coefficient grid of an (n, k) code.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    k: usize,
    n: usize,
    /// Row-major, `k` rows of `n` entries.
    coeffs: Vec<f64>,
    scheme: Scheme,
    seed: u64,
}

fn check_dims(k: usize, n: usize) -> Result<()> {
    if k == 0 || n < k {
        return Err(Error::InvalidDimensions { k, n });
    }
    Ok(())
}

impl GeneratorMatrix {
    /// `[I_k | V]` with extension column `m` equal to `((m+1)^0, ..., (m+1)^{k-1})`.
    pub fn systematic_mds(k: usize, n: usize) -> Result<Self> {
        check_dims(k, n)?;
        let mut coeffs = vec![0.0; k * n];
        for r in 0..k {
            coeffs[r * n + r] = 1.0;
            for m in 0..n - k {
                coeffs[r * n + k + m] = ((m + 1) as f64).powi(r as i32);
            }
        }
        Ok(Self { k, n, coeffs, scheme: Scheme::SystematicMds, seed: 0 })
    }

    /// Classic real Reed-Solomon generator, `G[r][j] = (j+1)^r`.
    pub fn vandermonde_rs(k: usize, n: usize) -> Result<Self> {
        check_dims(k, n)?;
        let mut coeffs = vec![0.0; k * n];
        for r in 0..k {
            for j in 0..n {
                coeffs[r * n + j] = ((j + 1) as f64).powi(r as i32);
            }
        }
        Ok(Self { k, n, coeffs, scheme: Scheme::VandermondeRs, seed: 0 })
    }

    /// Systematic binary random linear code. Each redundant entry is an
    /// independent fair coin; an all-zero column is redrawn.
    pub fn rlnc(k: usize, n: usize, seed: u64) -> Result<Self> {
        check_dims(k, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = vec![0.0; k * n];
        for r in 0..k {
            coeffs[r * n + r] = 1.0;
        }
        let mut column = vec![false; k];
        for j in k..n {
            loop {
                column.iter_mut().for_each(|bit| *bit = rng.random::<bool>());
                if column.iter().any(|&bit| bit) {
                    break;
                }
            }
            for (r, &bit) in column.iter().enumerate() {
                coeffs[r * n + j] = if bit { 1.0 } else { 0.0 };
            }
        }
        Ok(Self { k, n, coeffs, scheme: Scheme::Rlnc, seed })
    }

    /// Builds the generator for `scheme`; `seed` is only used by RLNC.
    pub fn build(scheme: Scheme, k: usize, n: usize, seed: u64) -> Result<Self> {
        match scheme {
            Scheme::SystematicMds => Self::systematic_mds(k, n),
            Scheme::VandermondeRs => Self::vandermonde_rs(k, n),
            Scheme::Rlnc => Self::rlnc(k, n, seed),
        }
    }

    /// Wraps an explicit coefficient grid given as `k` rows of `n` values.
    pub fn from_rows(rows: &[Vec<f64>], scheme: Scheme, seed: u64) -> Result<Self> {
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        check_dims(k, n)?;
        if rows.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("ragged generator rows"));
        }
        let coeffs = rows.iter().flatten().copied().collect();
        Ok(Self { k, n, coeffs, scheme, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn coeff(&self, row: usize, col: usize) -> f64 {
        self.coeffs[row * self.n + col]
    }

    /// Column `j`: the coefficients worker `j` applies to blocks `0..k`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.k).map(|r| self.coeff(r, j)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.coeffs.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Returns `Some(i)` when column `j` is the unit vector `e_i`.
    pub fn unit_index(&self, j: usize) -> Option<usize> {
        let mut hit = None;
        for r in 0..self.k {
            let c = self.coeff(r, j);
            if c == 1.0 && hit.is_none() {
                hit = Some(r);
            } else if c != 0.0 {
                return None;
            }
        }
        hit
    }

    /// `true` when every coefficient is an integer exactly representable in f64.
    pub fn is_integral(&self) -> bool {
        self.coeffs.iter().all(|&c| is_exact_integer(c))
    }

    /// Picks pivots greedily in ascending worker-id order. Returns `None`
    /// when the selected columns have rank below `k`.
    pub fn decodable(&self, worker_ids: &[usize]) -> Result<Option<DecodableSet>> {
        let mut seen = vec![false; self.n];
        for &id in worker_ids {
            if id >= self.n {
                return Err(Error::invalid(format!("worker id {id} out of range 0..{}", self.n)));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::invalid(format!("duplicate worker id {id}")));
            }
        }
        if worker_ids.len() < self.k {
            return Ok(None);
        }
        let mut tracker = RankTracker::new(self);
        for id in (0..self.n).filter(|&id| seen[id]) {
            if tracker.push(id) && tracker.is_full() {
                break;
            }
        }
        Ok(tracker.into_decodable(worker_ids.to_vec()))
    }

    /// Wire layout: `u32 k, u32 n, u8 scheme, u64 seed, k*n f64`, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 8 * self.coeffs.len());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.push(self.scheme.tag());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Parses [`GeneratorMatrix::to_bytes`] output; returns the matrix and
    /// the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let short = || Error::protocol("truncated generator matrix");
        if bytes.len() < 17 {
            return Err(short());
        }
        let k = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let scheme = Scheme::from_tag(bytes[8])?;
        let seed = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        check_dims(k, n).map_err(|e| Error::protocol(e.to_string()))?;
        let len = k.checked_mul(n).and_then(|c| c.checked_mul(8)).ok_or_else(short)?;
        let body = bytes.get(17..17 + len).ok_or_else(short)?;
        let coeffs = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self { k, n, coeffs, scheme, seed }, 17 + len))
    }
}

pub(crate) fn is_exact_integer(c: f64) -> bool {
    c.is_finite() && c.fract() == 0.0 && c.abs() <= 9_007_199_254_740_992.0
}

/// A set of responders whose generator columns span the full code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodableSet {
    /// Responders in the order they were considered.
    pub worker_ids: Vec<usize>,
    /// Exactly `k` linearly independent columns, ascending.
    pub pivot_columns: Vec<usize>,
}

impl DecodableSet {
    pub fn extra_workers(&self, k: usize) -> usize {
        self.worker_ids.len().saturating_sub(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == size)
            .map(|m| (0..n).filter(|&i| m & (1 << i) != 0).collect())
            .collect()
    }

    #[test]
    fn systematic_mds_matches_worked_examples() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        assert_eq!(g.rows(), vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]);
        let g = GeneratorMatrix::systematic_mds(2, 4).unwrap();
        assert_eq!(g.rows(), vec![vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0, 2.0]]);
        let g = GeneratorMatrix::systematic_mds(3, 3).unwrap();
        assert_eq!(
            g.rows(),
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]
        );
    }

    #[test]
    fn vandermonde_examples() {
        let g = GeneratorMatrix::vandermonde_rs(2, 3).unwrap();
        assert_eq!(g.rows(), vec![vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]]);
        let g = GeneratorMatrix::vandermonde_rs(1, 4).unwrap();
        assert_eq!(g.rows(), vec![vec![1.0; 4]]);
        let g = GeneratorMatrix::vandermonde_rs(3, 3).unwrap();
        assert_eq!(
            g.rows(),
            vec![vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 3.0], vec![1.0, 4.0, 9.0]]
        );
    }

    #[test]
    fn invalid_dimensions_rejected() {
        for scheme in [Scheme::SystematicMds, Scheme::VandermondeRs, Scheme::Rlnc] {
            assert!(matches!(
                GeneratorMatrix::build(scheme, 3, 2, 0),
                Err(Error::InvalidDimensions { k: 3, n: 2 })
            ));
            assert!(GeneratorMatrix::build(scheme, 0, 2, 0).is_err());
        }
    }

    #[test]
    fn rlnc_small_cases() {
        for seed in 0..200 {
            let g = GeneratorMatrix::rlnc(2, 3, seed).unwrap();
            let c = g.column(2);
            assert!(c == [0.0, 1.0] || c == [1.0, 0.0] || c == [1.0, 1.0], "{c:?}");
            assert_eq!(&g.column(0), &[1.0, 0.0]);
            assert_eq!(&g.column(1), &[0.0, 1.0]);
        }
        let g = GeneratorMatrix::rlnc(4, 4, 99).unwrap();
        assert_eq!(g, {
            let mut id = GeneratorMatrix::systematic_mds(4, 4).unwrap();
            id.scheme = Scheme::Rlnc;
            id.seed = 99;
            id
        });
    }

    #[test]
    fn rlnc_is_binary_and_deterministic() {
        let a = GeneratorMatrix::rlnc(16, 22, 7).unwrap();
        let b = GeneratorMatrix::rlnc(16, 22, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        for j in 16..22 {
            let ones = a.column(j).iter().filter(|&&c| c == 1.0).count();
            assert!((1..=16).contains(&ones));
            assert!(a.column(j).iter().all(|&c| c == 0.0 || c == 1.0));
        }
        assert_ne!(a, GeneratorMatrix::rlnc(16, 22, 8).unwrap());
    }

    #[test]
    fn rlnc_mean_ones_per_column() {
        let (mut ones, mut cols) = (0usize, 0usize);
        for seed in 0..1000 {
            let g = GeneratorMatrix::rlnc(16, 22, seed).unwrap();
            for j in 16..22 {
                ones += g.column(j).iter().filter(|&&c| c == 1.0).count();
                cols += 1;
            }
        }
        let mean = ones as f64 / cols as f64;
        assert!((7.5..=8.5).contains(&mean), "mean {mean}");
    }

    #[test]
    fn decodable_examples() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let ds = g.decodable(&[0, 2]).unwrap().unwrap();
        assert_eq!(ds.pivot_columns, vec![0, 2]);
        assert!(g.decodable(&[0]).unwrap().is_none());

        let dup = GeneratorMatrix::from_rows(
            &[vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0, 1.0]],
            Scheme::Rlnc,
            0,
        )
        .unwrap();
        assert!(dup.decodable(&[2, 3]).unwrap().is_none());
        let ds = dup.decodable(&[3, 2, 0]).unwrap().unwrap();
        assert_eq!(ds.pivot_columns, vec![0, 2]);
        assert_eq!(ds.worker_ids, vec![3, 2, 0]);
    }

    #[test]
    fn decodable_rejects_bad_ids() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        assert!(matches!(g.decodable(&[0, 3]), Err(Error::InvalidArgument(_))));
        assert!(matches!(g.decodable(&[1, 1]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mds_any_k_exhaustive() {
        for k in 1..=4 {
            for n in k..=7 {
                for g in [
                    GeneratorMatrix::systematic_mds(k, n).unwrap(),
                    GeneratorMatrix::vandermonde_rs(k, n).unwrap(),
                ] {
                    for subset in all_subsets(n, k) {
                        let ds = g.decodable(&subset).unwrap();
                        assert!(ds.is_some(), "{:?} k={k} n={n} {subset:?}", g.scheme());
                    }
                }
            }
        }
    }

    #[test]
    fn unit_columns_detected() {
        let g = GeneratorMatrix::systematic_mds(3, 5).unwrap();
        assert_eq!(g.unit_index(1), Some(1));
        assert_eq!(g.unit_index(3), None);
        let rs = GeneratorMatrix::vandermonde_rs(1, 2).unwrap();
        assert_eq!(rs.unit_index(1), Some(0));
    }

    #[test]
    fn byte_layout() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(bytes.len(), 17 + 6 * 8);
        assert_eq!(&bytes[0..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(bytes[8], 0);
        let (back, used) = GeneratorMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, g);
        assert!(GeneratorMatrix::from_bytes(&bytes[..20]).is_err());
    }
}
