//! Incremental rank tracking over generator columns.
//!
//! Integer-valued generators (systematic MDS, RLNC, small Vandermonde) are
//! reduced with fraction-free elimination in `i128`, falling back to
//! arbitrary precision on overflow. Anything else uses floating-point
//! elimination with a relative pivot threshold.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};

use super::{is_exact_integer, DecodableSet, GeneratorMatrix};

/// Relative threshold below which a reduced column counts as dependent.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
enum Basis {
    Small(Vec<(usize, Vec<i128>)>),
    Big(Vec<(usize, Vec<BigInt>)>),
    Float(Vec<(usize, Vec<f64>)>),
}

/// Tracks the rank of a growing set of generator columns.
#[derive(Clone, Debug)]
pub struct RankTracker {
    k: usize,
    /// Column-major copy of the generator.
    columns: Vec<Vec<f64>>,
    basis: Basis,
    arrived: Vec<usize>,
    accepted: Vec<usize>,
}

impl RankTracker {
    pub fn new(g: &GeneratorMatrix) -> Self {
        let columns: Vec<Vec<f64>> = (0..g.n()).map(|j| g.column(j)).collect();
        let basis = if g.is_integral() { Basis::Small(Vec::new()) } else { Basis::Float(Vec::new()) };
        Self { k: g.k(), columns, basis, arrived: Vec::new(), accepted: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rank(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_full(&self) -> bool {
        self.accepted.len() == self.k
    }

    /// Worker ids in the order they were pushed.
    pub fn arrived(&self) -> &[usize] {
        &self.arrived
    }

    /// Worker ids whose columns raised the rank, in push order.
    pub fn accepted(&self) -> &[usize] {
        &self.accepted
    }

    /// Adds column `id`; returns `true` if the rank grew. Panics if `id`
    /// is out of range.
    pub fn push(&mut self, id: usize) -> bool {
        self.arrived.push(id);
        if self.is_full() {
            return false;
        }
        let grew = match &mut self.basis {
            Basis::Small(rows) => match reduce_small(rows, &self.columns[id]) {
                Some(grew) => grew,
                None => {
                    let mut big = Vec::with_capacity(self.k);
                    for &prev in &self.accepted {
                        let grew = reduce_big(&mut big, &self.columns[prev]);
                        debug_assert!(grew);
                    }
                    let grew = reduce_big(&mut big, &self.columns[id]);
                    self.basis = Basis::Big(big);
                    grew
                }
            },
            Basis::Big(rows) => reduce_big(rows, &self.columns[id]),
            Basis::Float(rows) => reduce_float(rows, &self.columns[id]),
        };
        if grew {
            self.accepted.push(id);
        }
        grew
    }

    /// Converts a full tracker into a [`DecodableSet`] whose pivots are
    /// chosen greedily in ascending id order over the arrived set.
    pub fn into_decodable(self, worker_ids: Vec<usize>) -> Option<DecodableSet> {
        if !self.is_full() {
            return None;
        }
        let mut sorted = self.arrived.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let mut fresh = RankTracker {
            k: self.k,
            basis: match self.basis {
                Basis::Float(_) => Basis::Float(Vec::new()),
                _ => Basis::Small(Vec::new()),
            },
            columns: self.columns,
            arrived: Vec::new(),
            accepted: Vec::new(),
        };
        for id in sorted {
            fresh.push(id);
            if fresh.is_full() {
                break;
            }
        }
        let mut pivot_columns = fresh.accepted;
        pivot_columns.sort_unstable();
        Some(DecodableSet { worker_ids, pivot_columns })
    }
}

fn to_small(column: &[f64]) -> Vec<i128> {
    column
        .iter()
        .map(|&c| {
            debug_assert!(is_exact_integer(c));
            c as i128
        })
        .collect()
}

fn gcd_normalize_small(v: &mut [i128]) {
    let g = v.iter().fold(0i128, |acc, &x| acc.gcd(&x));
    if g > 1 {
        v.iter_mut().for_each(|x| *x /= g);
    }
}

/// `None` signals overflow; the caller retries in arbitrary precision.
fn reduce_small(rows: &mut Vec<(usize, Vec<i128>)>, column: &[f64]) -> Option<bool> {
    let mut v = to_small(column);
    for (pivot, row) in rows.iter() {
        let vp = v[*pivot];
        if vp == 0 {
            continue;
        }
        let bp = row[*pivot];
        let g = bp.gcd(&vp);
        let (a, b) = (bp / g, vp / g);
        for (x, &r) in v.iter_mut().zip(row) {
            *x = a.checked_mul(*x)?.checked_sub(b.checked_mul(r)?)?;
        }
        gcd_normalize_small(&mut v);
    }
    match v.iter().position(|&x| x != 0) {
        Some(pivot) => {
            rows.push((pivot, v));
            Some(true)
        }
        None => Some(false),
    }
}

fn reduce_big(rows: &mut Vec<(usize, Vec<BigInt>)>, column: &[f64]) -> bool {
    let mut v: Vec<BigInt> = column.iter().map(|&c| BigInt::from(c as i128)).collect();
    for (pivot, row) in rows.iter() {
        if v[*pivot].is_zero() {
            continue;
        }
        let g = row[*pivot].gcd(&v[*pivot]);
        let a = &row[*pivot] / &g;
        let b = &v[*pivot] / &g;
        for (x, r) in v.iter_mut().zip(row) {
            *x = &a * &*x - &b * r;
        }
        let g = v.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
        if !g.is_zero() && g.abs() != BigInt::from(1) {
            v.iter_mut().for_each(|x| *x = &*x / &g);
        }
    }
    match v.iter().position(|x| !x.is_zero()) {
        Some(pivot) => {
            rows.push((pivot, v));
            true
        }
        None => false,
    }
}

fn reduce_float(rows: &mut Vec<(usize, Vec<f64>)>, column: &[f64]) -> bool {
    let scale = column.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return false;
    }
    let mut v = column.to_vec();
    for (pivot, row) in rows.iter() {
        let factor = v[*pivot] / row[*pivot];
        if factor != 0.0 {
            for (x, r) in v.iter_mut().zip(row) {
                *x -= factor * r;
            }
        }
        v[*pivot] = 0.0;
    }
    let (pivot, peak) = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bm), (i, x)| if x.abs() > bm { (i, x.abs()) } else { (bi, bm) });
    if peak <= PIVOT_TOLERANCE * scale {
        return false;
    }
    rows.push((pivot, v));
    true
}
