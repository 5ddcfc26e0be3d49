//! Encoding-bandwidth cost model and decodability-overhead estimates.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coding::{GeneratorMatrix, RankTracker, Scheme};
use crate::error::{Error, Result};

/// Code families priced by the bandwidth model. `Lt` appears only here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CostScheme {
    Mds,
    Rlnc,
    Lt,
}

impl fmt::Display for CostScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostScheme::Mds => "mds",
            CostScheme::Rlnc => "rlnc",
            CostScheme::Lt => "lt",
        })
    }
}

impl FromStr for CostScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mds" | "rs" => Ok(CostScheme::Mds),
            "rlnc" => Ok(CostScheme::Rlnc),
            "lt" => Ok(CostScheme::Lt),
            other => Err(Error::invalid(format!("unknown cost scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthReport {
    pub scheme: CostScheme,
    pub n: usize,
    pub k: usize,
    /// Expected sub-matrix transfers per redundant worker and operand.
    pub per_redundant_worker: f64,
    pub total: f64,
}

/// Per-worker transfer cost: `k` for MDS, `k/2` for RLNC, `log2 k` for LT.
pub fn bandwidth_cost(scheme: CostScheme, n: usize, k: usize) -> Result<BandwidthReport> {
    if k == 0 || n < k {
        return Err(Error::InvalidDimensions { k, n });
    }
    let kf = k as f64;
    let per = match scheme {
        CostScheme::Mds => kf,
        CostScheme::Rlnc => kf / 2.0,
        CostScheme::Lt => kf.log2(),
    };
    Ok(BandwidthReport { scheme, n, k, per_redundant_worker: per, total: (n - k) as f64 * per })
}

pub const SCALE_N: usize = 220;
pub const SCALE_K: usize = 160;

pub fn scale_table() -> Vec<BandwidthReport> {
    bandwidth_table(SCALE_N, SCALE_K).expect("fixed dimensions are valid")
}

pub fn bandwidth_table(n: usize, k: usize) -> Result<Vec<BandwidthReport>> {
    [CostScheme::Mds, CostScheme::Rlnc, CostScheme::Lt].into_iter().map(|s| bandwidth_cost(s, n, k)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompletionModel {
    /// Every permutation of the `n` workers is equally likely.
    UniformRandomOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverheadEstimate {
    pub scheme: Scheme,
    pub n: usize,
    pub k: usize,
    pub trials: u64,
    pub completion_model: CompletionModel,
    pub mean_extra_workers: f64,
    pub stderr: f64,
}

/// Arrivals beyond `k` needed before the prefix of `order` is decodable.
/// `None` if the whole order never reaches rank `k`.
pub fn extra_workers_for_order(g: &GeneratorMatrix, order: &[usize]) -> Option<usize> {
    let mut tracker = RankTracker::new(g);
    for (consumed, &id) in order.iter().enumerate() {
        tracker.push(id);
        if tracker.is_full() {
            return Some(consumed + 1 - g.k());
        }
    }
    None
}

/// Mean arrivals beyond `k` under a uniformly random completion order.
///
/// RLNC draws a fresh generator per trial; the other schemes are fixed.
/// Trial `t` uses its own ChaCha stream of `seed`, so results do not depend
/// on the thread count.
pub fn monte_carlo_extra_workers(scheme: Scheme, n: usize, k: usize, trials: u64, seed: u64) -> Result<OverheadEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let fixed = match scheme {
        Scheme::Rlnc => {
            GeneratorMatrix::rlnc(k, n, 0)?;
            None
        }
        other => Some(GeneratorMatrix::build(other, k, n, 0)?),
    };
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            let drawn;
            let g = match &fixed {
                Some(g) => g,
                None => {
                    drawn = GeneratorMatrix::rlnc(k, n, rng.next_u64()).expect("validated above");
                    &drawn
                }
            };
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            // A systematic generator always reaches rank k once every worker has answered.
            extra_workers_for_order(g, &order).map_or(f64::NAN, |e| e as f64)
        })
        .collect();
    if samples.iter().any(|s| s.is_nan()) {
        return Err(Error::NotDecodable);
    }
    let m = trials as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = if trials > 1 { samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    Ok(OverheadEstimate {
        scheme,
        n,
        k,
        trials,
        completion_model: CompletionModel::UniformRandomOrder,
        mean_extra_workers: mean,
        stderr: (var / m).sqrt(),
    })
}

pub fn write_bandwidth_csv(w: impl Write, reports: &[BandwidthReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "n", "k", "per_worker", "total"]).map_err(csv_err)?;
    for r in reports {
        out.write_record([
            r.scheme.to_string(),
            r.n.to_string(),
            r.k.to_string(),
            r.per_redundant_worker.to_string(),
            r.total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_overhead_csv(w: impl Write, estimates: &[OverheadEstimate]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "n", "k", "trials", "mean_extra", "stderr"]).map_err(csv_err)?;
    for e in estimates {
        out.write_record([
            e.scheme.to_string(),
            e.n.to_string(),
            e.k.to_string(),
            e.trials.to_string(),
            e.mean_extra_workers.to_string(),
            e.stderr.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_model_examples() {
        let mds = bandwidth_cost(CostScheme::Mds, 22, 16).unwrap();
        assert_eq!((mds.per_redundant_worker, mds.total), (16.0, 96.0));
        let rlnc = bandwidth_cost(CostScheme::Rlnc, 22, 16).unwrap();
        assert_eq!((rlnc.per_redundant_worker, rlnc.total), (8.0, 48.0));
        assert_eq!(bandwidth_cost(CostScheme::Rlnc, 9, 9).unwrap().total, 0.0);
        assert!(bandwidth_cost(CostScheme::Lt, 3, 4).is_err());
    }

    #[test]
    fn scale_numbers() {
        let t = scale_table();
        assert_eq!(t[0].total, 9600.0);
        assert_eq!(t[1].total, 4800.0);
        // 60 * (7 + log2 1.25), evaluated independently.
        assert!((t[2].total - 439.315_685_693_241_8).abs() < 1e-9);
    }

    #[test]
    fn extra_workers_hand_example() {
        let g = GeneratorMatrix::from_rows(&[vec![1., 0., 1., 1.], vec![0., 1., 1., 1.]], Scheme::Rlnc, 0).unwrap();
        assert_eq!(extra_workers_for_order(&g, &[2, 3, 0, 1]), Some(1));
        assert_eq!(extra_workers_for_order(&g, &[0, 1, 2, 3]), Some(0));
        assert_eq!(extra_workers_for_order(&g, &[2, 3]), None);
    }

    #[test]
    fn mds_overhead_is_zero() {
        for (n, k) in [(5, 3), (22, 16), (8, 8)] {
            let e = monte_carlo_extra_workers(Scheme::SystematicMds, n, k, 200, 1).unwrap();
            assert_eq!(e.mean_extra_workers, 0.0);
            assert_eq!(e.stderr, 0.0);
        }
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let a = monte_carlo_extra_workers(Scheme::Rlnc, 10, 6, 500, 3).unwrap();
        let b = monte_carlo_extra_workers(Scheme::Rlnc, 10, 6, 500, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_extra_workers > 0.0);
    }

    #[test]
    fn stderr_shrinks_with_trials() {
        let small = monte_carlo_extra_workers(Scheme::Rlnc, 12, 8, 1_000, 9).unwrap();
        let large = monte_carlo_extra_workers(Scheme::Rlnc, 12, 8, 16_000, 9).unwrap();
        let ratio = small.stderr / large.stderr;
        // Expected ratio is sqrt(16) = 4.
        assert!((3.0..5.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_bandwidth_csv(&mut buf, &bandwidth_table(22, 16).unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "scheme,n,k,per_worker,total");
        assert_eq!(lines[1], "mds,22,16,16,96");
        assert_eq!(lines[2], "rlnc,22,16,8,48");
        assert_eq!(lines.len(), 4);
    }
}
