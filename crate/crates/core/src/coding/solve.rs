use std::collections::HashMap;

use super::{DecodableSet, GeneratorMatrix, PIVOT_TOLERANCE};
use crate::error::{Error, Result};

/// Solves `A · U = B` in place by Gaussian elimination with partial
/// pivoting. `a` is `m × m` row-major, `b` holds `m` right-hand-side rows
/// of equal length. On success `b` holds `U`.
pub fn solve_dense(a: &mut [f64], b: &mut [Vec<f64>]) -> Result<()> {
    let m = b.len();
    if a.len() != m * m {
        return Err(Error::invalid(format!("system matrix has {} entries, expected {}", a.len(), m * m)));
    }
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m > 0 && scale == 0.0 {
        return Err(Error::NotDecodable);
    }
    for col in 0..m {
        let pivot_row = (col..m)
            .max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))
            .unwrap();
        if a[pivot_row * m + col].abs() <= PIVOT_TOLERANCE * scale {
            return Err(Error::NotDecodable);
        }
        if pivot_row != col {
            for c in 0..m {
                a.swap(pivot_row * m + c, col * m + c);
            }
            b.swap(pivot_row, col);
        }
        let pivot = a[col * m + col];
        for row in col + 1..m {
            let factor = a[row * m + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[row * m + col] = 0.0;
            for c in col + 1..m {
                a[row * m + c] -= factor * a[col * m + c];
            }
            let (upper, lower) = b.split_at_mut(row);
            for (x, &p) in lower[0].iter_mut().zip(&upper[col]) {
                *x -= factor * p;
            }
        }
    }
    for col in (0..m).rev() {
        let pivot = a[col * m + col];
        let (upper, lower) = b.split_at_mut(col + 1);
        let target = &mut upper[col];
        for (offset, solved) in lower.iter().enumerate() {
            let coef = a[col * m + col + 1 + offset];
            if coef != 0.0 {
                for (x, &s) in target.iter_mut().zip(solved) {
                    *x -= coef * s;
                }
            }
        }
        target.iter_mut().for_each(|x| *x /= pivot);
    }
    Ok(())
}

/// Recovers the `k` per-block products `u_0..u_{k-1}` from the partial
/// products of the pivot workers in `ds`.
///
/// Each pivot column `j` contributes the equation `Σ_r G[r][j] · u_r = p_j`.
/// When every pivot column is a unit vector the partials are returned as-is.
pub fn decode(
    g: &GeneratorMatrix,
    ds: &DecodableSet,
    partials: &HashMap<usize, Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let k = g.k();
    if ds.pivot_columns.len() != k {
        return Err(Error::invalid(format!(
            "decodable set has {} pivots, expected {k}",
            ds.pivot_columns.len()
        )));
    }
    let mut rhs = Vec::with_capacity(k);
    for &j in &ds.pivot_columns {
        if j >= g.n() {
            return Err(Error::invalid(format!("pivot column {j} out of range")));
        }
        let p = partials
            .get(&j)
            .ok_or_else(|| Error::protocol(format!("missing partial product for worker {j}")))?;
        rhs.push(p.clone());
    }
    let d = rhs[0].len();
    if rhs.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("partial products have mismatched lengths"));
    }

    let units: Option<Vec<usize>> = ds.pivot_columns.iter().map(|&j| g.unit_index(j)).collect();
    if let Some(units) = units {
        let mut out = vec![Vec::new(); k];
        let mut filled = vec![false; k];
        for (slot, p) in units.into_iter().zip(rhs.iter_mut()) {
            if std::mem::replace(&mut filled[slot], true) {
                return Err(Error::NotDecodable);
            }
            out[slot] = std::mem::take(p);
        }
        return Ok(out);
    }

    let mut a = vec![0.0; k * k];
    for (row, &j) in ds.pivot_columns.iter().enumerate() {
        for r in 0..k {
            a[row * k + r] = g.coeff(r, j);
        }
    }
    solve_dense(&mut a, &mut rhs)?;
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(pivots: &[usize]) -> DecodableSet {
        DecodableSet { worker_ids: pivots.to_vec(), pivot_columns: pivots.to_vec() }
    }

    #[test]
    fn decodes_worked_example() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let partials = HashMap::from([(0, vec![1.0, 2.0]), (2, vec![4.0, 6.0])]);
        let u = decode(&g, &ds(&[0, 2]), &partials).unwrap();
        assert_eq!(u, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn identity_pivots_pass_through() {
        let g = GeneratorMatrix::systematic_mds(3, 5).unwrap();
        let partials = HashMap::from([(0, vec![1.5]), (1, vec![-2.0]), (2, vec![7.25])]);
        let u = decode(&g, &ds(&[0, 1, 2]), &partials).unwrap();
        assert_eq!(u, vec![vec![1.5], vec![-2.0], vec![7.25]]);
    }

    #[test]
    fn decodes_from_redundant_columns_only() {
        let g = GeneratorMatrix::systematic_mds(2, 4).unwrap();
        let partials = HashMap::from([(2, vec![11.0]), (3, vec![21.0])]);
        let u = decode(&g, &ds(&[2, 3]), &partials).unwrap();
        assert!((u[0][0] - 1.0).abs() < 1e-12 && (u[1][0] - 10.0).abs() < 1e-12, "{u:?}");
    }

    #[test]
    fn missing_partial_is_protocol_error() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let partials = HashMap::from([(0, vec![1.0])]);
        assert!(matches!(decode(&g, &ds(&[0, 2]), &partials), Err(Error::Protocol(_))));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let partials = HashMap::from([(0, vec![1.0]), (2, vec![1.0, 2.0])]);
        assert!(matches!(decode(&g, &ds(&[0, 2]), &partials), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn singular_system_is_not_decodable() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![vec![1.0], vec![2.0]];
        assert!(matches!(solve_dense(&mut a, &mut b), Err(Error::NotDecodable)));
    }

    #[test]
    fn solve_needs_pivoting() {
        let mut a = vec![0.0, 1.0, 1.0, 0.0];
        let mut b = vec![vec![3.0], vec![5.0]];
        solve_dense(&mut a, &mut b).unwrap();
        assert_eq!(b, vec![vec![5.0], vec![3.0]]);
    }
}
