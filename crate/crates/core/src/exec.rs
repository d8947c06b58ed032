//! Data-parallel helpers with a sequential fallback.
//!
//! All hot per-element/per-vertex loops go through [`map_indexed`], which runs
//! on rayon when the `parallel` feature is enabled and falls back to a plain
//! loop otherwise. Results are returned in index order in both modes, and any
//! reduction over them is performed serially by the caller, so numerical
//! output is bitwise identical with and without the feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Always-sequential twin of [`map_indexed`]; kept as a benchmark baseline.
pub fn map_indexed_serial<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let f = |i: usize| (i as f64).sin() * (i as f64 + 0.5).sqrt();
        let a = map_indexed(10_000, f);
        let b = map_indexed_serial(10_000, f);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
