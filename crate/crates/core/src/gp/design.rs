use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Latin hypercube design of `n` points in the box `bounds` (one `(lo, hi)`
/// per dimension): every dimension has exactly one point per equal-width
/// stratum.
pub fn latin_hypercube(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::input("latin hypercube needs n >= 1"));
    }
    if bounds.is_empty() {
        return Err(Error::input("latin hypercube needs at least one dimension"));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::input(format!("invalid design bounds [{lo}, {hi}]")));
        }
    }
    let mut r = rng::rng(seed);
    let mut out = DMatrix::zeros(n, bounds.len());
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut r);
        for (i, s) in strata.into_iter().enumerate() {
            let t = (s as f64 + r.random_range(0.0..1.0)) / n as f64;
            out[(i, j)] = lo + (hi - lo) * t;
        }
    }
    Ok(out)
}
