//! Data-parallel map/reduce helpers with a sequential fallback.
//!
//! Both code paths always exist; the `parallel` feature selects which one
//! backs the default entry points. Reductions are written so that the two
//! paths return bit-identical results: maps preserve input order, sums fold
//! sequentially over the collected outputs, and the max reduction breaks ties
//! by the lowest index.

/// Order-preserving map.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_par<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Default map: parallel when the feature is enabled.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(items, f)
    }
}

/// Index of the item with the largest key; ties go to the lowest index.
/// Deterministic across thread counts because the reduction is on the
/// materialized (ordered) key vector.
pub fn argmax_by_key<T, F>(items: &[T], key: F) -> Option<(usize, f64)>
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let keys = map(items, key);
    let mut best: Option<(usize, f64)> = None;
    for (i, &k) in keys.iter().enumerate() {
        match best {
            Some((_, b)) if k <= b => {}
            _ => best = Some((i, k)),
        }
    }
    best
}

/// Max key over all items (e.g. sup error over a grid). NaN keys propagate.
pub fn max_key<T, F>(items: &[T], key: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let keys = map(items, key);
    keys.iter().fold(f64::NEG_INFINITY, |a, &b| {
        if b.is_nan() || a.is_nan() {
            f64::NAN
        } else {
            a.max(b)
        }
    })
}

/// Sum of mapped values, folded in input order for determinism.
pub fn sum_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    map(items, f).iter().sum()
}

/// Evenly spaced grid of `count >= 2` points covering [lo, hi] inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2, "grid needs at least two points");
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Cartesian grid over a 2-D box, row-major.
pub fn grid2(xr: (f64, f64), yr: (f64, f64), count: usize) -> Vec<[f64; 2]> {
    let xs = linspace(xr.0, xr.1, count);
    let ys = linspace(yr.0, yr.1, count);
    let mut out = Vec::with_capacity(count * count);
    for &x in &xs {
        for &y in &ys {
            out.push([x, y]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_matches_default() {
        let items: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let a = map_seq(&items, |x| x * x);
        let b = map(&items, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(
            sum_by(&items, |x| x * 2.0),
            map_seq(&items, |x| x * 2.0).iter().sum::<f64>()
        );
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        let items = vec![1.0, 3.0, 3.0, 2.0];
        assert_eq!(argmax_by_key(&items, |&x| x), Some((1, 3.0)));
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.0, 1.0, 101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 1.0);
        assert_eq!(g[50], 0.5);
    }

    #[test]
    fn grid2_is_row_major() {
        let g = grid2((0.0, 1.0), (10.0, 11.0), 2);
        assert_eq!(g, vec![[0.0, 10.0], [0.0, 11.0], [1.0, 10.0], [1.0, 11.0]]);
    }
}
