//! Direct sampling of the included-set configuration on a window and of the
//! derived fields X̄, X̂, X̃ and Y = X̃ ∨ ξ.

use std::collections::HashSet;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::ExactLaw;
use crate::intensity::{ConcreteSet, HullCache, IntensitySpec, Source};
use crate::lattice::{self, Site, Window};
use crate::rng::{self, tag};
use crate::stats;

/// A set whose connected hull meets the window, with its footprint.
#[derive(Clone, Debug)]
struct Relevant {
    set: ConcreteSet,
    key: Vec<i64>,
    members: Vec<usize>,
    hull_members: Vec<usize>,
}

/// Precomputed enumeration for repeated sampling on one window.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    window: Window,
    sites: Vec<Site>,
    sets: Vec<Relevant>,
    split: i64,
    horizon: u64,
    neglected_per_site: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldSample {
    pub window: Window,
    pub sites: Vec<Site>,
    pub included: Vec<Vec<Site>>,
    pub bar_x: Vec<bool>,
    /// Included sets containing the site, shifted so the site is the origin.
    pub hat_x: Vec<Vec<Vec<Site>>>,
    /// Union of included sets with diameter below the split.
    pub bar_x_low: Vec<bool>,
    /// Union of included sets with diameter at least the split.
    pub bar_x_high: Vec<bool>,
    pub tilde_x: Vec<bool>,
    pub y: Vec<bool>,
    pub split: i64,
    pub epsilon: f64,
    pub truncation_radius: u64,
    pub neglected_per_site: f64,
    pub seed: u64,
}

impl FieldSampler {
    /// Enumerates every set whose hull meets `window`. For infinite pair
    /// tails, gaps are enumerated until the mass of omitted pairs whose hull
    /// covers any fixed site is at most `budget`.
    pub fn new(spec: &IntensitySpec, window: Window, split: i64, budget: f64) -> Result<FieldSampler> {
        if window.dim != spec.dimension() {
            return Err(Error::InvalidArgument("window and spec dimensions differ".into()));
        }
        let sites = window.sites();
        let mut hulls = HullCache::default();
        let mut sets = Vec::new();
        let mut push = |set: ConcreteSet, hulls: &mut HullCache| -> Result<()> {
            let members: Vec<usize> = set.cells.iter().filter_map(|c| window.index(*c)).collect();
            let hull_members: Vec<usize> = if set.diameter() >= split {
                hulls.hull(&set.cells, window.dim)?.iter().filter_map(|c| window.index(*c)).collect()
            } else {
                vec![]
            };
            if !members.is_empty() || !hull_members.is_empty() {
                let key = set.rng_key();
                sets.push(Relevant { set, key, members, hull_members });
            }
            Ok(())
        };
        for (i, o) in spec.orbits().iter().enumerate() {
            if o.p() == 0.0 {
                continue;
            }
            let (lo, hi) = lattice::bounding_box(o.cells());
            for tx in window.lo.0 - hi.0..=window.hi.0 - lo.0 {
                for ty in window.lo.1 - hi.1..=window.hi.1 - lo.1 {
                    let cells = lattice::translate(o.cells(), Site(tx, ty));
                    push(ConcreteSet { cells, p: o.p(), source: Source::Orbit(i) }, &mut hulls)?;
                }
            }
        }
        let mut horizon = 0;
        let mut neglected_per_site = 0.0;
        if let Some(t) = spec.pair_tail() {
            horizon = match t.last() {
                Some(l) => l,
                None => {
                    if budget <= 0.0 {
                        return Err(Error::ZeroBudget);
                    }
                    let mut h = t.start() - 1;
                    while t.hull_tail(h + 1) > budget {
                        h += 1;
                    }
                    neglected_per_site = t.hull_tail(h + 1);
                    h
                }
            };
            for n in t.start()..=horizon {
                let p = t.p(n);
                if p == 0.0 {
                    continue;
                }
                let n = n as i64;
                for a in window.lo.0 - n..=window.hi.0 {
                    let cells = vec![Site::line(a), Site::line(a + n)];
                    push(ConcreteSet { cells, p, source: Source::Pair(n as u64) }, &mut hulls)?;
                }
            }
        }
        Ok(FieldSampler { window, sites, sets, split, horizon, neglected_per_site })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn relevant_sets(&self) -> usize {
        self.sets.len()
    }

    fn included(&self, seed: u64) -> impl Iterator<Item = &Relevant> + '_ {
        self.sets.iter().filter(move |r| rng::uniform(seed, tag::SET, &r.key) < r.set.p)
    }

    /// X̄ on the window only.
    pub fn sample_bar(&self, seed: u64) -> Vec<bool> {
        let mut bar = vec![false; self.sites.len()];
        for r in self.included(seed) {
            for &i in &r.members {
                bar[i] = true;
            }
        }
        bar
    }

    /// X̄ on the window as a little-endian code (windows up to 64 sites).
    pub fn sample_bar_code(&self, seed: u64) -> usize {
        let mut code = 0usize;
        for r in self.included(seed) {
            for &i in &r.members {
                code |= 1 << i;
            }
        }
        code
    }

    pub fn xi(&self, seed: u64, epsilon: f64) -> Vec<bool> {
        self.sites.iter().map(|v| rng::bernoulli(epsilon, seed, tag::XI, &[v.0, v.1])).collect()
    }

    pub fn sample(&self, seed: u64, epsilon: f64) -> FieldSample {
        let n = self.sites.len();
        let mut s = FieldSample {
            window: self.window,
            sites: self.sites.clone(),
            included: vec![],
            bar_x: vec![false; n],
            hat_x: vec![vec![]; n],
            bar_x_low: vec![false; n],
            bar_x_high: vec![false; n],
            tilde_x: vec![false; n],
            y: vec![false; n],
            split: self.split,
            epsilon,
            truncation_radius: self.horizon,
            neglected_per_site: self.neglected_per_site,
            seed,
        };
        for r in self.included(seed) {
            s.included.push(r.set.cells.clone());
            let high = r.set.diameter() >= self.split;
            for &i in &r.members {
                s.bar_x[i] = true;
                if high {
                    s.bar_x_high[i] = true;
                } else {
                    s.bar_x_low[i] = true;
                }
                let v = self.sites[i];
                s.hat_x[i].push(r.set.cells.iter().map(|c| c.sub(v)).collect());
            }
            for &i in &r.hull_members {
                s.tilde_x[i] = true;
            }
        }
        for h in &mut s.hat_x {
            h.sort();
        }
        let xi = self.xi(seed, epsilon);
        for i in 0..n {
            s.y[i] = s.tilde_x[i] || xi[i];
        }
        s
    }
}

impl FieldSample {
    /// Pointwise relations between the derived fields; returns the first
    /// violation.
    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.sites.len() {
            let v = self.sites[i];
            let bad = |what: &str| Err(Error::Invariant(format!("{what} at {v}")));
            if self.bar_x[i] != !self.hat_x[i].is_empty() {
                return bad("hatX/barX mismatch");
            }
            if self.bar_x[i] != (self.bar_x_low[i] || self.bar_x_high[i]) {
                return bad("barX split mismatch");
            }
            if self.bar_x_high[i] && !self.tilde_x[i] {
                return bad("barX above tildeX");
            }
            if self.split <= 0 && self.bar_x[i] && !self.tilde_x[i] {
                return bad("barX above tildeX");
            }
            if self.tilde_x[i] && !self.y[i] {
                return bad("tildeX above Y");
            }
            let covered = self.included.iter().any(|a| a.contains(&v));
            if covered != self.bar_x[i] {
                return bad("barX differs from union of included sets");
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "barX", "tildeX", "Y"])?;
        for i in 0..self.sites.len() {
            let s = self.sites[i];
            w.write_record([
                s.0.to_string(),
                s.1.to_string(),
                (self.bar_x[i] as u8).to_string(),
                (self.tilde_x[i] as u8).to_string(),
                (self.y[i] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "window": self.window,
            "split": self.split,
            "epsilon": self.epsilon,
            "truncation_radius": self.truncation_radius,
            "neglected_per_site": self.neglected_per_site,
            "included_sets": self.included.len(),
        })
    }
}

/// One draw of the configuration on `window`, with hulls of every set.
pub fn sample_field(spec: &IntensitySpec, window: Window, seed: u64, budget: f64) -> Result<FieldSample> {
    Ok(FieldSampler::new(spec, window, 0, budget)?.sample(seed, 0.0))
}

/// One draw with X̃ built from sets of diameter at least `split` and
/// `Y = X̃ ∨ ξ(ε)`.
pub fn sample_tilde(spec: &IntensitySpec, window: Window, split: i64, epsilon: f64, seed: u64, budget: f64) -> Result<FieldSample> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon}")));
    }
    Ok(FieldSampler::new(spec, window, split, budget)?.sample(seed, epsilon))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoupledField {
    /// Condition on X̃ vanishing on the boundary.
    Tilde,
    /// Condition on Y vanishing on the boundary.
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecouplingReport {
    pub inside: Vec<Site>,
    pub boundary: Vec<Site>,
    pub outside: Vec<Site>,
    pub field: DecoupledField,
    pub exact: bool,
    /// TV distance between the conditional joint law of (inside, outside)
    /// and the product of its marginals.
    pub tv: f64,
    /// Expected TV of an independent sample of the same size (zero in exact
    /// mode).
    pub noise_floor: f64,
    pub hits: usize,
    pub consistent: bool,
}

/// Outer vertex boundary of `u`.
pub fn boundary(u: &[Site], dim: u8) -> Vec<Site> {
    let inside: HashSet<Site> = u.iter().copied().collect();
    let mut b: Vec<Site> = u.iter().flat_map(|s| s.neighbours(dim)).filter(|s| !inside.contains(s)).collect();
    lattice::normalize(&mut b);
    b
}

fn choose_sites(window: &Window, u: &[Site]) -> Result<(Vec<Site>, Vec<Site>, Vec<Site>)> {
    if u.is_empty() {
        return Err(Error::InvalidArgument("empty region".into()));
    }
    let bd = boundary(u, window.dim);
    if !u.iter().chain(&bd).all(|s| window.contains(*s)) {
        return Err(Error::InvalidArgument("region and boundary must lie in the window".into()));
    }
    let mut inside = u.to_vec();
    lattice::normalize(&mut inside);
    inside.truncate(2);
    let blocked: HashSet<Site> = u.iter().chain(&bd).copied().collect();
    let mut rest: Vec<Site> = window.sites().into_iter().filter(|s| !blocked.contains(s)).collect();
    rest.sort_by_key(|s| (u.iter().map(|x| x.dist(*s)).min().unwrap(), *s));
    rest.truncate(2);
    if rest.is_empty() {
        return Err(Error::InvalidArgument("no outside sites in the window".into()));
    }
    Ok((inside, bd, rest))
}

/// Joint law of the chosen field on `sites` by enumerating the sets whose
/// hull meets them.
fn exact_field_law(spec: &IntensitySpec, sites: &[Site], split: i64, epsilon: f64, field: DecoupledField) -> Result<ExactLaw> {
    let (lo, hi) = lattice::bounding_box(sites);
    let window = Window::new(spec.dimension(), lo, hi)?;
    let sampler = FieldSampler::new(spec, window, split, 0.0)?;
    let idx: Vec<usize> = sites.iter().map(|s| window.index(*s).unwrap()).collect();
    let sets: Vec<(f64, usize)> = sampler
        .sets
        .iter()
        .map(|r| {
            let m = idx.iter().enumerate().filter(|(_, i)| r.hull_members.contains(i)).fold(0, |m, (j, _)| m | 1 << j);
            (r.set.p, m)
        })
        .filter(|&(_, m)| m != 0)
        .collect();
    if sets.len() > crate::exact::LAW_MAX_SETS {
        return Err(Error::CapExceeded(format!("{} sets", sets.len())));
    }
    let mut weights = vec![0.0; 1 << sites.len()];
    for conf in 0u32..(1 << sets.len()) {
        let mut pr = 1.0;
        let mut x = 0;
        for (j, &(p, m)) in sets.iter().enumerate() {
            if conf >> j & 1 == 1 {
                pr *= p;
                x |= m;
            } else {
                pr *= 1.0 - p;
            }
        }
        weights[x] += pr;
    }
    let law = ExactLaw { sites: sites.to_vec(), weights, error: 0.0 };
    Ok(match field {
        DecoupledField::Tilde => law,
        DecoupledField::Y => law.or_independent(&vec![epsilon; sites.len()]),
    })
}

/// TV between a joint law over (inside, outside) codes and the product of
/// its two marginals.
fn independence_tv(joint: &[f64], n_in: usize, n_out: usize) -> (f64, Vec<f64>) {
    let total: f64 = joint.iter().sum();
    let mut a = vec![0.0; 1 << n_in];
    let mut b = vec![0.0; 1 << n_out];
    for (c, w) in joint.iter().enumerate() {
        a[c & ((1 << n_in) - 1)] += w / total;
        b[c >> n_in] += w / total;
    }
    let prod: Vec<f64> = (0..joint.len()).map(|c| a[c & ((1 << n_in) - 1)] * b[c >> n_in]).collect();
    let norm: Vec<f64> = joint.iter().map(|w| w / total).collect();
    (stats::tv_distance(&norm, &prod), prod)
}

/// Checks that the inside and outside of `u` are independent given a zero
/// boundary. `n_samples = 0` selects exact enumeration.
#[allow(clippy::too_many_arguments)]
pub fn decoupling_test(
    spec: &IntensitySpec,
    window: Window,
    split: i64,
    epsilon: f64,
    u: &[Site],
    field: DecoupledField,
    n_samples: usize,
    seed: u64,
) -> Result<DecouplingReport> {
    let (inside, bd, outside) = choose_sites(&window, u)?;
    let (ni, nb, no) = (inside.len(), bd.len(), outside.len());
    let mut order = inside.clone();
    order.extend(&outside);
    order.extend(&bd);
    if n_samples == 0 {
        let law = exact_field_law(spec, &order, split, epsilon, field)?;
        let mut joint = vec![0.0; 1 << (ni + no)];
        for (x, w) in law.weights.iter().enumerate() {
            if x >> (ni + no) == 0 {
                joint[x] += w;
            }
        }
        if joint.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InsufficientSample { hits: 0, needed: 1 });
        }
        let (tv, _) = independence_tv(&joint, ni, no);
        return Ok(DecouplingReport { inside, boundary: bd, outside, field, exact: true, tv, noise_floor: 0.0, hits: 0, consistent: tv < 1e-12 });
    }
    let sampler = FieldSampler::new(spec, window, split, 1e-9)?;
    let pos = |s: &Site| window.index(*s).unwrap();
    let mut joint = vec![0.0; 1 << (ni + no)];
    let mut hits = 0usize;
    for r in 0..n_samples {
        let f = sampler.sample(rng::replica_seed(seed, r as u64), epsilon);
        let val = |s: &Site| match field {
            DecoupledField::Tilde => f.tilde_x[pos(s)],
            DecoupledField::Y => f.y[pos(s)],
        };
        if bd.iter().any(val) {
            continue;
        }
        hits += 1;
        let code = order[..ni + no].iter().enumerate().filter(|(_, s)| val(s)).fold(0, |c, (j, _)| c | 1 << j);
        joint[code] += 1.0;
    }
    const MIN_HITS: usize = 100;
    if hits < MIN_HITS {
        return Err(Error::InsufficientSample { hits, needed: MIN_HITS });
    }
    let (tv, prod) = independence_tv(&joint, ni, no);
    let noise_floor = stats::tv_noise_floor(&prod, hits);
    let _ = nb;
    Ok(DecouplingReport { inside, boundary: bd, outside, field, exact: false, tv, noise_floor, hits, consistent: tv <= 3.0 * noise_floor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact;
    use crate::intensity::ShapeOrbit;

    fn spec(shapes: &[(&[i64], f64)]) -> IntensitySpec {
        IntensitySpec::one_d(shapes.iter().map(|(c, p)| ShapeOrbit::line(c, *p).unwrap()).collect()).unwrap()
    }

    #[test]
    fn empty_spec_is_empty() {
        let f = sample_field(&IntensitySpec::empty(1), Window::interval(0, 9).unwrap(), 1, 0.0).unwrap();
        assert!(f.bar_x.iter().all(|b| !b));
        assert!(f.hat_x.iter().all(|h| h.is_empty()));
    }

    #[test]
    fn singleton_density() {
        let s = spec(&[(&[0], 0.5)]);
        let f = sample_field(&s, Window::interval(1, 10_000).unwrap(), 3, 0.0).unwrap();
        let m = f.bar_x.iter().filter(|b| **b).count() as f64 / 1e4;
        assert!((m - 0.5).abs() < 3.0 * stats::binomial_sigma(0.5, 10_000));
    }

    #[test]
    fn pair_window_frequency() {
        let s = spec(&[(&[0, 1], 0.5)]);
        let fs = FieldSampler::new(&s, Window::interval(0, 1).unwrap(), 0, 0.0).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|&r| fs.sample_bar_code(rng::replica_seed(9, r)) == 3).count();
        let p = hits as f64 / n as f64;
        let want = exact::prob_all_one(&s, &[Site::line(0), Site::line(1)], 0.0).unwrap().mid();
        assert!((p - want).abs() < 3.0 * stats::binomial_sigma(want, n as usize));
    }

    #[test]
    fn hulls_paint_intervals() {
        let s = spec(&[(&[0, 5], 0.2)]);
        let w = Window::interval(0, 40).unwrap();
        for seed in 0..20 {
            let f = sample_tilde(&s, w, 2, 0.0, seed, 0.0).unwrap();
            f.check_invariants().unwrap();
            for a in &f.included {
                for x in a[0].0..=a[1].0 {
                    if let Some(i) = w.index(Site::line(x)) {
                        assert!(f.tilde_x[i]);
                    }
                }
            }
            assert_eq!(f.y, f.tilde_x);
            let all = sample_tilde(&s, w, 2, 1.0, seed, 0.0).unwrap();
            assert!(all.y.iter().all(|b| *b));
        }
    }

    #[test]
    fn deterministic() {
        let s = IntensitySpec::pairs(crate::intensity::PairTail::geometric(0.5, 0.5)).unwrap();
        let w = Window::interval(-5, 5).unwrap();
        let a = sample_tilde(&s, w, 1, 0.2, 42, 1e-6).unwrap();
        let b = sample_tilde(&s, w, 1, 0.2, 42, 1e-6).unwrap();
        assert_eq!(a, b);
        a.check_invariants().unwrap();
    }

    #[test]
    fn decoupling_exact_and_mc() {
        let s = spec(&[(&[0, 1], 0.3)]);
        let w = Window::interval(-4, 4).unwrap();
        let u = [Site::line(0)];
        let r = decoupling_test(&s, w, 0, 0.0, &u, DecoupledField::Tilde, 0, 0).unwrap();
        assert!(r.exact && r.tv < 1e-12);
        assert_eq!(r.boundary, vec![Site::line(-1), Site::line(1)]);
        let r = decoupling_test(&IntensitySpec::empty(1), w, 0, 0.1, &u, DecoupledField::Y, 0, 0).unwrap();
        assert!(r.tv < 1e-12);
        let r = decoupling_test(&s, w, 0, 0.0, &u, DecoupledField::Tilde, 20_000, 5).unwrap();
        assert!(r.consistent, "{r:?}");
    }
}
