use crate::calculus::DegenerateTable;
use crate::scalar::Scalar;

/// Five-number summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats<T> {
    pub min: T,
    pub q1: T,
    pub median: T,
    pub q3: T,
    pub max: T,
    pub n: usize,
}

/// CDFs of `τ` over states with a competitor absent (`ω_k = 0`) and present.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCdf<T> {
    pub competitor: usize,
    pub absent: Vec<(T, T)>,
    pub present: Vec<(T, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneitySummary<T> {
    /// Empirical CDF of all degenerate ATEs as `(τ, F(τ))` steps.
    pub cdf: Vec<(T, T)>,
    pub split: Vec<SplitCdf<T>>,
    /// Box statistics by number of advertising competitors.
    pub by_count: Vec<(usize, BoxStats<T>)>,
    /// Pooled ATE and the fraction of degenerate ATEs at or below it.
    pub pooled: Option<(T, T)>,
}

fn ecdf<T: Scalar>(mut v: Vec<T>) -> Vec<(T, T)> {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite ATEs"));
    let n = T::of_usize(v.len());
    v.iter().enumerate().map(|(i, &x)| (x, T::of_usize(i + 1) / n)).collect()
}

/// Quantile with linear interpolation between order statistics.
fn quantile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * T::of(h - lo as f64)
}

pub fn box_stats<T: Scalar>(mut v: Vec<T>) -> Option<BoxStats<T>> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite ATEs"));
    Some(BoxStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
        n: v.len(),
    })
}

/// Distribution of degenerate ATEs over states of the world, split by each
/// competitor's presence and by the number of competitors advertising.
pub fn heterogeneity_summary<T: Scalar>(table: &DegenerateTable<T>, pooled: Option<T>) -> HeterogeneitySummary<T> {
    let states: Vec<(crate::bits::Bits, T)> = table.states().map(|(s, &t)| (*s, t)).collect();
    let all: Vec<T> = states.iter().map(|(_, t)| *t).collect();
    let split = table
        .present_coords()
        .into_iter()
        .map(|k| SplitCdf {
            competitor: k,
            absent: ecdf(states.iter().filter(|(s, _)| !s.get(k)).map(|(_, t)| *t).collect()),
            present: ecdf(states.iter().filter(|(s, _)| s.get(k)).map(|(_, t)| *t).collect()),
        })
        .collect();
    let max_count = table.present.count_ones();
    let by_count = (0..=max_count)
        .filter_map(|c| {
            box_stats(states.iter().filter(|(s, _)| s.count_ones() == c).map(|(_, t)| *t).collect()).map(|b| (c, b))
        })
        .collect();
    let pooled = pooled.map(|p| {
        let below = all.iter().filter(|&&t| t <= p).count();
        (p, T::of_usize(below) / T::of_usize(all.len().max(1)))
    });
    HeterogeneitySummary { cdf: ecdf(all), split, by_count, pooled }
}
