//! Exact small-window probabilities.
//!
//! Configurations on an ordered site list `S` are encoded little-endian:
//! bit `i` of the code is the value at `S[i]`.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{ConcreteSet, IntensitySpec, MomentReport};
use crate::lattice::Site;

pub const LAW_MAX_SITES: usize = 4;
pub const LAW_MAX_SETS: usize = 24;
pub const IE_MAX_SITES: usize = 20;
pub const IE_LAW_MAX_SITES: usize = 12;
const UPSET_MAX_ELEMENTS: usize = 16;

/// A probability known to lie in `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(x: f64) -> Interval {
        Interval { lo: x, hi: x }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }
}

/// Joint law of a binary field on a finite site list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactLaw {
    pub sites: Vec<Site>,
    pub weights: Vec<f64>,
    /// Bound on the absolute error of every weight (from tail truncation).
    pub error: f64,
}

impl ExactLaw {
    pub fn point_mass(sites: Vec<Site>, code: usize) -> ExactLaw {
        let mut weights = vec![0.0; 1 << sites.len()];
        weights[code] = 1.0;
        ExactLaw { sites, weights, error: 0.0 }
    }

    /// Independent Bernoulli(`q[i]`) at each site.
    pub fn product(sites: Vec<Site>, q: &[f64]) -> ExactLaw {
        assert_eq!(sites.len(), q.len());
        let n = sites.len();
        let weights = (0..1usize << n)
            .map(|x| (0..n).map(|i| if x >> i & 1 == 1 { q[i] } else { 1.0 - q[i] }).product())
            .collect();
        ExactLaw { sites, weights, error: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn all_one(&self) -> f64 {
        *self.weights.last().unwrap()
    }

    pub fn all_zero(&self) -> f64 {
        self.weights[0]
    }

    /// `P(value at site i = 1)`.
    pub fn marginal(&self, i: usize) -> f64 {
        self.weights.iter().enumerate().filter(|(x, _)| x >> i & 1 == 1).map(|(_, w)| w).sum()
    }

    /// Law of the sub-field on `keep` (indices into `sites`, in the given order).
    pub fn project(&self, keep: &[usize]) -> ExactLaw {
        let mut weights = vec![0.0; 1 << keep.len()];
        for (x, w) in self.weights.iter().enumerate() {
            let y = keep.iter().enumerate().fold(0, |acc, (j, &i)| acc | ((x >> i & 1) << j));
            weights[y] += w;
        }
        ExactLaw { sites: keep.iter().map(|&i| self.sites[i]).collect(), weights, error: self.error * (1 << (self.len() - keep.len())) as f64 }
    }

    /// Law of `X ∨ ξ` with `ξ` independent Bernoulli(`eps[i]`).
    pub fn or_independent(&self, eps: &[f64]) -> ExactLaw {
        let n = self.len();
        let mut weights = vec![0.0; 1 << n];
        for (x, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let free = !x & ((1 << n) - 1);
            let mut sub = free;
            loop {
                let mut pr = w;
                for i in 0..n {
                    if free >> i & 1 == 1 {
                        pr *= if sub >> i & 1 == 1 { eps[i] } else { 1.0 - eps[i] };
                    }
                }
                weights[x | sub] += pr;
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & free;
            }
        }
        ExactLaw { sites: self.sites.clone(), weights, error: self.error * (1 << n) as f64 }
    }

    /// One CSV row per configuration: the bitstring (site 0 first) and its
    /// probability.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["config", "probability"])?;
        for (x, p) in self.weights.iter().enumerate() {
            let bits: String = (0..self.len()).map(|i| if x >> i & 1 == 1 { '1' } else { '0' }).collect();
            w.write_record([bits, format!("{p:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relevant sets grouped by the subset of `S` they hit.
struct MaskProducts {
    /// `(mask, Π (1 - p_A))` over sets hitting exactly `mask`.
    groups: Vec<(usize, f64)>,
    neglected: f64,
}

fn mask_products(spec: &IntensitySpec, sites: &[Site], budget: f64) -> Result<MaskProducts> {
    let e = spec.sets_meeting(sites, budget)?;
    let mut by_mask: HashMap<usize, f64> = HashMap::new();
    for a in &e.sets {
        let m = hit_mask(a, sites);
        *by_mask.entry(m).or_insert(1.0) *= 1.0 - a.p;
    }
    let mut groups: Vec<(usize, f64)> = by_mask.into_iter().collect();
    groups.sort_by_key(|g| g.0);
    Ok(MaskProducts { groups, neglected: e.neglected })
}

pub fn hit_mask(a: &ConcreteSet, sites: &[Site]) -> usize {
    sites.iter().enumerate().filter(|(_, s)| a.contains(**s)).fold(0, |m, (i, _)| m | 1 << i)
}

/// `P(X̄_T ≡ 0)` for every `T ⊆ S` (indexed by mask), without truncation
/// correction.
fn all_zero_table(mp: &MaskProducts, n: usize) -> Vec<f64> {
    (0..1usize << n)
        .map(|t| mp.groups.iter().filter(|(m, _)| m & t != 0).map(|(_, f)| f).product())
        .collect()
}

/// `P(X̄_S ≡ 0) = Π_{A ∩ S ≠ ∅} (1 - p_A)`.
pub fn prob_all_zero(spec: &IntensitySpec, sites: &[Site], budget: f64) -> Result<Interval> {
    if sites.is_empty() {
        return Ok(Interval::point(1.0));
    }
    let mp = mask_products(spec, sites, budget)?;
    let p: f64 = mp.groups.iter().map(|g| g.1).product();
    Ok(Interval { lo: (p * (1.0 - mp.neglected)).max(0.0), hi: p })
}

/// `P(X̄_S ≡ 1) = Σ_{T ⊆ S} (-1)^{|T|} P(X̄_T ≡ 0)`.
pub fn prob_all_one(spec: &IntensitySpec, sites: &[Site], budget: f64) -> Result<Interval> {
    let n = sites.len();
    if n == 0 {
        return Ok(Interval::point(1.0));
    }
    if n > IE_MAX_SITES {
        return Err(Error::CapExceeded(format!("{n} sites > {IE_MAX_SITES}")));
    }
    let mp = mask_products(spec, sites, budget / (1u64 << n) as f64)?;
    let z = all_zero_table(&mp, n);
    let v: f64 = z
        .iter()
        .enumerate()
        .map(|(t, p)| if (t as u32).count_ones() % 2 == 0 { *p } else { -p })
        .sum();
    let err = mp.neglected * (1u64 << n) as f64;
    Ok(Interval { lo: (v - err).max(0.0), hi: (v + err).min(1.0) })
}

/// Joint law of `X̄_S` by enumerating all configurations of the sets
/// meeting `S`.
pub fn exact_law(spec: &IntensitySpec, sites: &[Site], budget: f64) -> Result<ExactLaw> {
    let n = sites.len();
    if n > LAW_MAX_SITES {
        return Err(Error::CapExceeded(format!("{n} sites > {LAW_MAX_SITES}")));
    }
    let e = spec.sets_meeting(sites, budget)?;
    if e.sets.len() > LAW_MAX_SETS {
        return Err(Error::CapExceeded(format!("{} relevant sets > {LAW_MAX_SETS}", e.sets.len())));
    }
    let masks: Vec<usize> = e.sets.iter().map(|a| hit_mask(a, sites)).collect();
    let mut weights = vec![0.0; 1 << n];
    for conf in 0u32..(1u32 << e.sets.len()) {
        let mut pr = 1.0;
        let mut x = 0usize;
        for (j, a) in e.sets.iter().enumerate() {
            if conf >> j & 1 == 1 {
                pr *= a.p;
                x |= masks[j];
            } else {
                pr *= 1.0 - a.p;
            }
        }
        weights[x] += pr;
    }
    Ok(ExactLaw { sites: sites.to_vec(), weights, error: e.neglected })
}

/// Joint law of `X̄_S` by inclusion-exclusion:
/// `P(X̄ = 1 on O, 0 on Z) = Σ_{T ⊆ O} (-1)^{|T|} P(X̄_{Z ∪ T} ≡ 0)`.
pub fn exact_law_ie(spec: &IntensitySpec, sites: &[Site], budget: f64) -> Result<ExactLaw> {
    let n = sites.len();
    if n > IE_LAW_MAX_SITES {
        return Err(Error::CapExceeded(format!("{n} sites > {IE_LAW_MAX_SITES}")));
    }
    let full = (1usize << n) - 1;
    let mp = mask_products(spec, sites, budget / (1u64 << n) as f64)?;
    let z = all_zero_table(&mp, n);
    let mut weights = vec![0.0; 1 << n];
    for (x, w) in weights.iter_mut().enumerate() {
        let zeros = full & !x;
        let mut t = x;
        let mut acc = 0.0;
        loop {
            let s = if t.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += s * z[zeros | t];
            if t == 0 {
                break;
            }
            t = (t - 1) & x;
        }
        *w = acc.max(0.0);
    }
    Ok(ExactLaw { sites: sites.to_vec(), weights, error: mp.neglected * (1u64 << n) as f64 })
}

/// Enumeration when within caps, inclusion-exclusion otherwise.
pub fn law_of_union(spec: &IntensitySpec, sites: &[Site], budget: f64) -> Result<ExactLaw> {
    match exact_law(spec, sites, budget) {
        Err(Error::CapExceeded(_)) => exact_law_ie(spec, sites, budget),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dominance {
    pub dominated: bool,
    /// A violating up-set, as a list of element indices.
    pub witness: Option<Vec<usize>>,
}

/// Stochastic order check `mu ⪯ nu` on the Boolean lattice `{0,1}^S` by
/// enumerating every up-set.
pub fn check_dominance(mu: &ExactLaw, nu: &ExactLaw) -> Result<Dominance> {
    if mu.sites != nu.sites {
        return Err(Error::SiteMismatch);
    }
    if mu.len() > LAW_MAX_SITES {
        return Err(Error::CapExceeded(format!("{} sites > {LAW_MAX_SITES}", mu.len())));
    }
    let tol = 1e-12 + mu.error + nu.error;
    check_dominance_poset(&mu.weights, &nu.weights, |a, b| a & !b == 0, tol)
}

/// Independent check of `mu ⪯ nu` via Strassen's theorem: a monotone
/// coupling exists iff the max flow from `mu` to `nu` along order pairs is 1.
pub fn check_dominance_flow(mu: &ExactLaw, nu: &ExactLaw) -> Result<bool> {
    if mu.sites != nu.sites {
        return Err(Error::SiteMismatch);
    }
    let tol = 1e-9 + mu.error + nu.error;
    Ok(dominance_flow_poset(&mu.weights, &nu.weights, |a, b| a & !b == 0, tol))
}

/// Every up-set of the finite poset `(0..n, leq)`, as bit masks.
pub fn up_sets(n: usize, leq: impl Fn(usize, usize) -> bool) -> Result<Vec<u32>> {
    if n > UPSET_MAX_ELEMENTS {
        return Err(Error::CapExceeded(format!("{n} poset elements > {UPSET_MAX_ELEMENTS}")));
    }
    let above: Vec<u32> = (0..n)
        .map(|a| (0..n).filter(|&b| leq(a, b)).fold(0u32, |m, b| m | 1 << b))
        .collect();
    let mut out = Vec::new();
    'outer: for u in 0u32..(1u32 << n) {
        let mut rest = u;
        while rest != 0 {
            let a = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            if above[a] & !u != 0 {
                continue 'outer;
            }
        }
        out.push(u);
    }
    Ok(out)
}

/// `mu ⪯ nu` on an arbitrary finite poset by up-set enumeration.
pub fn check_dominance_poset(mu: &[f64], nu: &[f64], leq: impl Fn(usize, usize) -> bool, tol: f64) -> Result<Dominance> {
    if mu.len() != nu.len() {
        return Err(Error::SiteMismatch);
    }
    let mut worst: Option<(f64, u32)> = None;
    for u in up_sets(mu.len(), &leq)? {
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..mu.len() {
            if u >> i & 1 == 1 {
                a += mu[i];
                b += nu[i];
            }
        }
        let gap = a - b;
        if gap > tol && worst.is_none_or(|w| gap > w.0) {
            worst = Some((gap, u));
        }
    }
    Ok(match worst {
        None => Dominance { dominated: true, witness: None },
        Some((_, u)) => Dominance {
            dominated: false,
            witness: Some((0..mu.len()).filter(|i| u >> i & 1 == 1).collect()),
        },
    })
}

/// Max-flow (Edmonds-Karp) feasibility of a monotone coupling.
pub fn dominance_flow_poset(mu: &[f64], nu: &[f64], leq: impl Fn(usize, usize) -> bool, tol: f64) -> bool {
    let n = mu.len();
    let (src, sink) = (2 * n, 2 * n + 1);
    let size = 2 * n + 2;
    let mut cap = vec![vec![0.0f64; size]; size];
    let big = 2.0;
    for i in 0..n {
        cap[src][i] = mu[i];
        cap[n + i][sink] = nu[i];
        for j in 0..n {
            if leq(i, j) {
                cap[i][n + j] = big;
            }
        }
    }
    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; size];
        prev[src] = src;
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            for v in 0..size {
                if prev[v] == usize::MAX && cap[u][v] > 1e-15 {
                    prev[v] = u;
                    q.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = sink;
        while v != src {
            cap[prev[v]][v] -= push;
            cap[v][prev[v]] += push;
            v = prev[v];
        }
        flow += push;
    }
    let total: f64 = mu.iter().sum();
    flow >= total - tol
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreakReport {
    pub best_set: Vec<Site>,
    pub delta_hat: f64,
    pub gamma: f64,
    pub lambda_c: f64,
}

/// `max_S P(X̄_S ≡ 1)^{1/|S|}` over the candidates (lower endpoints of the
/// exact intervals).
pub fn streak_density(spec: &IntensitySpec, candidates: &[Vec<Site>], budget: f64) -> Result<StreakReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate sets".into()));
    }
    let mut best: Option<(f64, &Vec<Site>)> = None;
    for s in candidates {
        if s.is_empty() {
            return Err(Error::InvalidArgument("empty candidate set".into()));
        }
        let p = prob_all_one(spec, s, budget)?.lo;
        let d = p.powf(1.0 / s.len() as f64);
        if best.is_none_or(|b| d > b.0) {
            best = Some((d, s));
        }
    }
    let (delta_hat, set) = best.unwrap();
    let MomentReport { lambda_c, gamma, .. } = spec.moment_report(&[])?;
    Ok(StreakReport { best_set: set.clone(), delta_hat, gamma, lambda_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::ShapeOrbit;

    fn line(xs: &[i64]) -> Vec<Site> {
        xs.iter().map(|&x| Site::line(x)).collect()
    }

    fn pair01(p: f64) -> IntensitySpec {
        IntensitySpec::one_d(vec![ShapeOrbit::line(&[0, 1], p).unwrap()]).unwrap()
    }

    fn singleton(p: f64) -> IntensitySpec {
        IntensitySpec::one_d(vec![ShapeOrbit::line(&[0], p).unwrap()]).unwrap()
    }

    #[test]
    fn all_zero_examples() {
        let s = pair01(0.1);
        assert!((prob_all_zero(&s, &line(&[0]), 0.0).unwrap().hi - 0.81).abs() < 1e-15);
        assert!((prob_all_zero(&s, &line(&[0, 1]), 0.0).unwrap().hi - 0.729).abs() < 1e-15);
        assert_eq!(prob_all_zero(&s, &[], 0.0).unwrap(), Interval::point(1.0));
    }

    #[test]
    fn all_one_examples() {
        assert!((prob_all_one(&pair01(0.5), &line(&[0, 1]), 0.0).unwrap().mid() - 0.625).abs() < 1e-15);
        assert!((prob_all_one(&singleton(0.5), &line(&[0, 1, 2, 3]), 0.0).unwrap().mid() - 0.0625).abs() < 1e-15);
        assert_eq!(prob_all_one(&pair01(0.5), &[], 0.0).unwrap(), Interval::point(1.0));
    }

    #[test]
    fn law_examples() {
        let l = exact_law(&pair01(0.5), &line(&[0, 1]), 0.0).unwrap();
        let want = [0.125, 0.125, 0.125, 0.625];
        for (a, b) in l.weights.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((l.marginal(0) - 0.75).abs() < 1e-15);
        let e = exact_law(&IntensitySpec::empty(1), &line(&[0, 1, 2]), 0.0).unwrap();
        assert_eq!(e.weights[0], 1.0);
        let b = exact_law(&singleton(0.3), &line(&[0]), 0.0).unwrap();
        assert!((b.weights[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn dominance_examples() {
        let s = line(&[0]);
        let b3 = ExactLaw::product(s.clone(), &[0.3]);
        let b5 = ExactLaw::product(s, &[0.5]);
        assert!(check_dominance(&b3, &b3).unwrap().dominated);
        assert!(check_dominance(&b3, &b5).unwrap().dominated);
        let r = check_dominance(&b5, &b3).unwrap();
        assert!(!r.dominated);
        assert_eq!(r.witness, Some(vec![1]));
    }

    #[test]
    fn dedekind_counts() {
        let sub = |a: usize, b: usize| a & !b == 0;
        assert_eq!(up_sets(4, sub).unwrap().len(), 6);
        assert_eq!(up_sets(8, sub).unwrap().len(), 20);
        assert_eq!(up_sets(16, sub).unwrap().len(), 168);
    }

    #[test]
    fn streaks() {
        let r = streak_density(&singleton(0.5), &[line(&[1]), line(&[1, 2]), line(&[1, 2, 3, 4])], 0.0).unwrap();
        assert!((r.delta_hat - 0.5).abs() < 1e-12);
        let r = streak_density(&IntensitySpec::empty(1), &[line(&[0])], 0.0).unwrap();
        assert_eq!(r.delta_hat, 0.0);
        let r = streak_density(&pair01(0.5), &[line(&[0]), line(&[0, 1])], 0.0).unwrap();
        assert!((r.delta_hat - 0.625f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.best_set, line(&[0, 1]));
        assert!(streak_density(&pair01(0.5), &[], 0.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let l = exact_law(&pair01(0.5), &line(&[0, 1]), 0.0).unwrap();
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("config,probability\n00,"));
        assert!(text.contains("\n10,1.25"));
    }
}
