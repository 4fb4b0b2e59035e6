//! Small statistical helpers shared by tests, the harness and the chain fits.

use std::collections::BTreeMap;

/// Standard error of a Bernoulli frequency estimate.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Normal-approximation confidence interval for a frequency.
pub fn proportion_ci(hits: usize, n: usize, z: f64) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    let s = binomial_sigma(p, n).max(1.0 / n as f64);
    ((p - z * s).max(0.0), (p + z * s).min(1.0))
}

/// Total-variation distance between two probability vectors.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Normalized histogram of configuration codes in `0..size`.
pub fn empirical_law(codes: impl IntoIterator<Item = usize>, size: usize) -> Vec<f64> {
    let mut counts = vec![0usize; size];
    let mut n = 0usize;
    for c in codes {
        counts[c] += 1;
        n += 1;
    }
    counts.into_iter().map(|c| c as f64 / n.max(1) as f64).collect()
}

/// Expected TV distance of an `n`-sample empirical law from its source, a
/// bias floor that grows with the number of cells: roughly
/// `Σ sqrt(p(1-p)/(2πn))`.
pub fn tv_noise_floor(law: &[f64], n: usize) -> f64 {
    law.iter()
        .map(|&p| (p * (1.0 - p) / (2.0 * std::f64::consts::PI * n as f64)).sqrt())
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r2: f64,
    pub n: usize,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_se = (sse / (nf - 2.0) / sxx).sqrt();
    Some(LinearFit { slope, intercept, slope_se, r2, n })
}

/// Empirical survival function `t ↦ P(T > t)` for `t = 0..=max`, with
/// right-censored observations (`None`) counted as exceeding every `t`
/// below the cap.
pub fn survival(samples: &[Option<u64>], cap: u64) -> Vec<(u64, f64)> {
    let n = samples.len() as f64;
    let mut hist: BTreeMap<u64, usize> = BTreeMap::new();
    for s in samples.iter().flatten() {
        *hist.entry(*s).or_default() += 1;
    }
    let mut alive = samples.len();
    let mut out = Vec::new();
    for t in 0..cap {
        alive -= hist.get(&t).copied().unwrap_or(0);
        out.push((t, alive as f64 / n));
    }
    out
}

/// Maximum-likelihood constant hazard for a tail sample shifted by `t0`:
/// observations are `T - t0` for `T > t0`, treated as geometric on
/// `{1, 2, ...}`. Returns `(log survival slope, standard error)` where the
/// slope is `log(1 - h)`.
pub fn geometric_tail_mle(samples: &[Option<u64>], t0: u64, cap: u64) -> Option<(f64, f64)> {
    let mut events = 0f64;
    let mut exposure = 0f64;
    for s in samples {
        match *s {
            Some(t) if t > t0 => {
                events += 1.0;
                exposure += (t - t0) as f64;
            }
            None if cap > t0 => exposure += (cap - t0) as f64,
            _ => {}
        }
    }
    if events < 2.0 || exposure <= events {
        return None;
    }
    let h = events / exposure;
    let slope = (1.0 - h).ln();
    // Delta method: Var(h) ≈ h²(1-h)/events, d log(1-h)/dh = -1/(1-h).
    let se = (h * h * (1.0 - h) / events).sqrt() / (1.0 - h);
    Some((slope, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|a| 2.0 - 0.5 * a).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn survival_counts_censoring() {
        let s = [Some(1), Some(2), None, Some(1)];
        let sv = survival(&s, 4);
        assert_eq!(sv[0], (0, 1.0));
        assert_eq!(sv[1], (1, 0.5));
        assert_eq!(sv[2], (2, 0.25));
        assert_eq!(sv[3], (3, 0.25));
    }

    #[test]
    fn tv_basic() {
        assert!((tv_distance(&[0.5, 0.5], &[1.0, 0.0]) - 0.5).abs() < 1e-15);
    }
}
