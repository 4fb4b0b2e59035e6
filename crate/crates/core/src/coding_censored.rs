//! Censored tri-state fields `Z^L` and the dyadic refinement that resolves
//! their `*` symbols.
//!
//! `Z^L_v = *` when `U_v ≤ ε_{v,L}` and otherwise the union of the sets
//! included inside `L`. The refinement starts from singletons and merges
//! dyadic intervals two at a time. Each merge draws the parent field given
//! the children's values under a monotone coupling: pinned `0`/`1` values
//! are kept and `*` values are redrawn from the residual mass.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::ExposureModel;
use crate::error::{Error, Result};
use crate::exact::{self, LAW_MAX_SETS};
use crate::intensity::{ConcreteSet, IntensitySpec, Weight};
use crate::lattice::{self, Site, Window};
use crate::rng::{self, tag};

const TOL: f64 = 1e-12;

/// A value of a censored field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Tri {
    Zero,
    One,
    Star,
}

impl Tri {
    /// `0 ≺ *` and `1 ≺ *`; `0` and `1` are incomparable.
    pub fn leq(self, other: Tri) -> bool {
        self == other || other == Tri::Star
    }

    pub fn digit(self) -> usize {
        match self {
            Tri::Zero => 0,
            Tri::One => 1,
            Tri::Star => 2,
        }
    }

    pub fn from_digit(d: usize) -> Tri {
        match d {
            0 => Tri::Zero,
            1 => Tri::One,
            _ => Tri::Star,
        }
    }

    pub fn from_bit(b: bool) -> Tri {
        if b { Tri::One } else { Tri::Zero }
    }

    pub fn is_resolved(self) -> bool {
        self != Tri::Star
    }
}

impl fmt::Display for Tri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tri::Zero => "0",
            Tri::One => "1",
            Tri::Star => "*",
        })
    }
}

/// Base-3 code of a tri-state vector, first site least significant.
pub fn tri_code(values: &[Tri]) -> usize {
    values.iter().rev().fold(0, |acc, t| acc * 3 + t.digit())
}

/// Coordinatewise `⪯` on codes of length `n`.
pub fn tri_code_leq(a: usize, b: usize, n: usize) -> bool {
    let (mut a, mut b) = (a, b);
    for _ in 0..n {
        if !Tri::from_digit(a % 3).leq(Tri::from_digit(b % 3)) {
            return false;
        }
        a /= 3;
        b /= 3;
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TriStateField {
    pub domain: Vec<Site>,
    pub values: Vec<Tri>,
}

impl TriStateField {
    /// Value at `v`; `*` outside the domain.
    pub fn get(&self, v: Site) -> Tri {
        self.domain.iter().position(|&s| s == v).map_or(Tri::Star, |i| self.values[i])
    }

    pub fn stars(&self) -> usize {
        self.values.iter().filter(|t| **t == Tri::Star).count()
    }
}

fn singleton_p(spec: &IntensitySpec) -> Result<f64> {
    let p0 = spec.singleton_p();
    if p0 <= 0.0 {
        return Err(Error::InvalidArgument("censoring needs p_{0} > 0".into()));
    }
    let m = spec.moment_sum(-p0.ln(), Weight::Size)?;
    if !m.is_finite() {
        return Err(Error::Divergent("Σ p_A p0^{-|A|}".into()));
    }
    Ok(p0)
}

fn weight(a: &ConcreteSet, p0: f64) -> f64 {
    a.p / (1.0 - a.p) * p0.powi(-(a.size() as i32))
}

/// `ε_{v,L} = Σ_{A ∋ v, A ⊄ L} p_A/(1-p_A) · p0^{-|A|}`.
///
/// Tail pairs are summed until the remaining mass is below `1e-17`; that
/// remainder is added with the factor of its largest term.
pub fn censor_prob(spec: &IntensitySpec, v: Site, l: &[Site]) -> Result<f64> {
    let p0 = singleton_p(spec)?;
    let inside: HashSet<Site> = l.iter().copied().collect();
    let e = spec.translates_through(v, None, 1e-17)?;
    let mut sum: f64 = e
        .sets
        .iter()
        .filter(|a| !a.cells.iter().all(|c| inside.contains(c)))
        .map(|a| weight(a, p0))
        .sum();
    if e.neglected > 0.0 {
        let pmax = spec.pair_tail().map_or(0.0, |t| t.p(e.horizon + 1));
        sum += e.neglected / (1.0 - pmax) / (p0 * p0);
    }
    Ok(sum)
}

/// Sets with positive probability lying inside `l` and meeting `v`.
fn sets_inside(spec: &IntensitySpec, v: Site, l: &HashSet<Site>, diam: i64) -> Result<Vec<ConcreteSet>> {
    Ok(spec
        .translates_through(v, Some(diam), 0.0)?
        .sets
        .into_iter()
        .filter(|a| a.p > 0.0 && a.cells.iter().all(|c| l.contains(c)))
        .collect())
}

/// Samples `Z^L` from the uniforms `(U_v)_{v ∈ L}` and the set indicators
/// of the sets inside `L`.
pub fn sample_zl(spec: &IntensitySpec, l: &[Site], seed: u64) -> Result<TriStateField> {
    let inside: HashSet<Site> = l.iter().copied().collect();
    let diam = lattice::diameter(l);
    let mut values = Vec::with_capacity(l.len());
    for &v in l {
        let eps = censor_prob(spec, v, l)?;
        if rng::uniform(seed, tag::CENSOR, &[v.0, v.1]) <= eps {
            values.push(Tri::Star);
            continue;
        }
        let hit = sets_inside(spec, v, &inside, diam)?
            .iter()
            .any(|a| rng::bernoulli(a.p, seed, tag::SET, &a.rng_key()));
        values.push(Tri::from_bit(hit));
    }
    Ok(TriStateField { domain: l.to_vec(), values })
}

/// Exact law of `Z^L` restricted to `observe ⊂ L`, indexed by [`tri_code`].
pub fn exact_censored_law(spec: &IntensitySpec, l: &[Site], observe: &[Site]) -> Result<Vec<f64>> {
    let inside: HashSet<Site> = l.iter().copied().collect();
    if observe.iter().any(|v| !inside.contains(v)) {
        return Err(Error::InvalidArgument("observed site outside the domain".into()));
    }
    let diam = lattice::diameter(l);
    let mut seen = HashSet::new();
    let mut sets = Vec::new();
    for &v in observe {
        for a in sets_inside(spec, v, &inside, diam)? {
            if seen.insert(a.key()) {
                sets.push(a);
            }
        }
    }
    if sets.len() > LAW_MAX_SETS {
        return Err(Error::CapExceeded(format!("{} sets inside the domain", sets.len())));
    }
    let n = observe.len();
    let masks: Vec<usize> = sets.iter().map(|a| exact::hit_mask(a, observe)).collect();
    let mut binary = vec![0.0; 1 << n];
    for conf in 0u32..(1u32 << sets.len()) {
        let mut pr = 1.0;
        let mut x = 0usize;
        for (j, a) in sets.iter().enumerate() {
            if conf >> j & 1 == 1 {
                pr *= a.p;
                x |= masks[j];
            } else {
                pr *= 1.0 - a.p;
            }
        }
        binary[x] += pr;
    }
    let eps: Vec<f64> = observe.iter().map(|&v| censor_prob(spec, v, l).map(|e| e.min(1.0))).collect::<Result<_>>()?;
    Ok(censor_binary_law(&binary, &eps))
}

/// Tri-state law obtained by censoring each site of a binary law
/// independently with probability `eps[i]`.
pub fn censor_binary_law(binary: &[f64], eps: &[f64]) -> Vec<f64> {
    let n = eps.len();
    let size = 3usize.pow(n as u32);
    let mut out = vec![0.0; size];
    for (code, o) in out.iter_mut().enumerate() {
        let mut c = code;
        let digits: Vec<usize> = (0..n)
            .map(|_| {
                let d = c % 3;
                c /= 3;
                d
            })
            .collect();
        for (x, &w) in binary.iter().enumerate() {
            let mut pr = w;
            for i in 0..n {
                pr *= match digits[i] {
                    2 => eps[i],
                    d if d == (x >> i & 1) => 1.0 - eps[i],
                    _ => 0.0,
                };
            }
            *o += pr;
        }
    }
    out
}

/// Per-level fields of one refinement run.
#[derive(Clone, Debug, Serialize)]
pub struct RefinementTrace {
    pub window: Window,
    /// `levels[n][i]`: value at the `i`-th window site after `n` merges.
    pub levels: Vec<Vec<Tri>>,
    /// First level at which each site holds `0` or `1`.
    pub resolution: Vec<Option<u32>>,
}

impl RefinementTrace {
    pub fn final_field(&self) -> &[Tri] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn star_density(&self) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| l.iter().filter(|t| **t == Tri::Star).count() as f64 / l.len().max(1) as f64)
            .collect()
    }

    /// True when no resolved value ever changes.
    pub fn is_monotone(&self) -> bool {
        self.levels.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b.leq(*a)))
    }
}

/// Crossing sets of the class `[0, 2ⁿ)`, stored relative to its left end.
#[derive(Clone, Debug)]
struct MergeTemplate {
    /// `ε` at each offset for the parent and for the child holding it.
    eps_parent: Vec<f64>,
    eps_child: Vec<f64>,
    crossing: Vec<ConcreteSet>,
}

/// State of one class: its values and the non-singleton sets included in it.
#[derive(Clone, Debug)]
struct ClassState {
    lo: i64,
    values: Vec<Tri>,
    included: Vec<ConcreteSet>,
}

/// Dyadic refinement on intervals of length `2^levels` (1D only).
#[derive(Clone, Debug)]
pub struct Refiner {
    levels: u32,
    p0: f64,
    eps0: f64,
    templates: Vec<MergeTemplate>,
}

impl Refiner {
    pub fn new(spec: &IntensitySpec, levels: u32) -> Result<Refiner> {
        if spec.dimension() != 1 {
            return Err(Error::InvalidArgument("refinement is one-dimensional".into()));
        }
        if levels > 20 {
            return Err(Error::InvalidArgument(format!("{levels} levels")));
        }
        let p0 = singleton_p(spec)?;
        let eps0 = censor_prob(spec, Site::ORIGIN, &[Site::ORIGIN])?.min(1.0);
        let mut templates = Vec::new();
        for n in 1..=levels {
            let len = 1i64 << n;
            let half = len / 2;
            let parent: Vec<Site> = (0..len).map(Site::line).collect();
            let left: Vec<Site> = (0..half).map(Site::line).collect();
            let right: Vec<Site> = (half..len).map(Site::line).collect();
            let mut eps_parent = Vec::with_capacity(len as usize);
            let mut eps_child = Vec::with_capacity(len as usize);
            for x in 0..len {
                let child = if x < half { &left } else { &right };
                eps_parent.push(censor_prob(spec, Site::line(x), &parent)?.min(1.0));
                eps_child.push(censor_prob(spec, Site::line(x), child)?.min(1.0));
            }
            let parent_set: HashSet<Site> = parent.iter().copied().collect();
            let mut crossing = Vec::new();
            for &v in &left {
                for a in sets_inside(spec, v, &parent_set, len - 1)? {
                    if a.size() > 1 && a.max().0 >= half && a.min() == v {
                        crossing.push(a);
                    }
                }
            }
            templates.push(MergeTemplate { eps_parent, eps_child, crossing });
        }
        Ok(Refiner { levels, p0, eps0, templates })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// `ε` of a site at each level (offset 0 of its class at level 0, then
    /// the given offset inside each parent class).
    pub fn eps_chain(&self, offset: i64) -> Vec<f64> {
        let mut out = vec![self.eps0];
        for t in &self.templates {
            let o = offset.rem_euclid(t.eps_parent.len() as i64) as usize;
            out.push(t.eps_parent[o]);
        }
        out
    }

    pub fn run(&self, lo: i64, seed: u64) -> Result<RefinementTrace> {
        let len = 1i64 << self.levels;
        let window = Window::interval(lo, lo + len - 1)?;
        let mut classes: Vec<ClassState> = (0..len)
            .map(|i| {
                let x = lo + i;
                let value = if rng::uniform(seed, tag::CENSOR, &[x, 0]) <= self.eps0 {
                    Tri::Star
                } else {
                    let key = [1, x, 0];
                    Tri::from_bit(rng::bernoulli(self.p0, seed, tag::SET, &key))
                };
                ClassState { lo: x, values: vec![value], included: Vec::new() }
            })
            .collect();
        let mut levels = vec![classes.iter().map(|c| c.values[0]).collect::<Vec<_>>()];
        for (n, t) in self.templates.iter().enumerate() {
            let level = n as u32 + 1;
            let pairs: Vec<(ClassState, ClassState)> = {
                let mut it = classes.into_iter();
                let mut v = Vec::new();
                while let (Some(a), Some(b)) = (it.next(), it.next()) {
                    v.push((a, b));
                }
                v
            };
            classes = pairs
                .into_par_iter()
                .map(|(a, b)| self.merge(t, level, a, b, seed))
                .collect::<Result<Vec<_>>>()?;
            levels.push(classes.iter().flat_map(|c| c.values.iter().copied()).collect());
        }
        let mut resolution = vec![None; len as usize];
        for (n, l) in levels.iter().enumerate() {
            for (i, v) in l.iter().enumerate() {
                if v.is_resolved() && resolution[i].is_none() {
                    resolution[i] = Some(n as u32);
                }
            }
        }
        let trace = RefinementTrace { window, levels, resolution };
        if !trace.is_monotone() {
            return Err(Error::Invariant("refinement changed a resolved value".into()));
        }
        Ok(trace)
    }

    fn merge(&self, t: &MergeTemplate, level: u32, a: ClassState, b: ClassState, seed: u64) -> Result<ClassState> {
        let lo = a.lo;
        let mut values = a.values;
        values.extend(b.values);
        let mut included = a.included;
        included.extend(b.included);
        let len = values.len();
        let mut covered = vec![false; len];
        for s in &included {
            for c in &s.cells {
                covered[(c.0 - lo) as usize] = true;
            }
        }
        // Coordinates of the exposure model: sites not covered by the
        // children's sets, where the crossing sets can still matter.
        let mut coord = vec![usize::MAX; len];
        let mut free = Vec::new();
        for i in 0..len {
            if !covered[i] {
                coord[i] = free.len();
                free.push(i);
            }
        }
        let by = Site::line(lo);
        let crossing: Vec<ConcreteSet> = t
            .crossing
            .iter()
            .map(|s| ConcreteSet { cells: lattice::translate(&s.cells, by), p: s.p, source: s.source })
            .collect();
        let mut model_sets = Vec::new();
        let mut detached = Vec::new();
        for (k, s) in crossing.iter().enumerate() {
            let cells: Vec<usize> =
                s.cells.iter().map(|c| coord[(c.0 - lo) as usize]).filter(|&j| j != usize::MAX).collect();
            if cells.is_empty() {
                detached.push(k);
            } else {
                model_sets.push((k, cells));
            }
        }
        let model = ExposureModel::new(
            vec![self.p0; free.len()],
            model_sets.iter().map(|(k, c)| (c.clone(), crossing[*k].p)).collect(),
        )?;
        let lvl = level as i64;
        let mut y: Vec<Option<bool>> = vec![None; free.len()];
        let mut parent = vec![Tri::Star; len];
        for i in 0..len {
            let (em, el) = (t.eps_parent[i], t.eps_child[i]);
            let (a, c) = if covered[i] {
                ([0.0, 1.0 - em, em], [0.0, 1.0 - el, el])
            } else {
                let q = model.conditional(&y, coord[i])?;
                ([(1.0 - em) * (1.0 - q), (1.0 - em) * q, em], [(1.0 - self.p0) * (1.0 - el), self.p0 * (1.0 - el), el])
            };
            let x = lo + i as i64;
            parent[i] = match values[i] {
                Tri::Zero | Tri::One => {
                    let d = values[i].digit();
                    if a[d] < c[d] - TOL {
                        return Err(Error::Invariant(format!(
                            "pinned {} at {x} outside the parent support ({} < {})",
                            values[i], a[d], c[d]
                        )));
                    }
                    values[i]
                }
                Tri::Star => {
                    let u = rng::uniform(seed, tag::MERGE, &[lvl, 0, x]) * c[2];
                    let r0 = (a[0] - c[0]).max(0.0);
                    let r1 = (a[1] - c[1]).max(0.0);
                    if u < r0 {
                        Tri::Zero
                    } else if u < r0 + r1 {
                        Tri::One
                    } else {
                        Tri::Star
                    }
                }
            };
            if !covered[i] && parent[i] != Tri::Star {
                y[coord[i]] = Some(parent[i] == Tri::One);
            }
        }
        // Latent values under the remaining stars, then the crossing sets.
        for j in 0..free.len() {
            if y[j].is_none() {
                let q = model.conditional(&y, j)?;
                let x = lo + free[j] as i64;
                y[j] = Some(rng::uniform(seed, tag::MERGE, &[lvl, 1, x]) < q);
            }
        }
        let full: Vec<bool> = y.iter().map(|v| v.unwrap_or(false)).collect();
        let chosen = model.sample_sets_given(&full, |m| {
            let mut key = vec![lvl, 2];
            key.extend(crossing[model_sets[m].0].rng_key());
            rng::uniform(seed, tag::MERGE, &key)
        })?;
        for (m, inc) in chosen.into_iter().enumerate() {
            if inc {
                included.push(crossing[model_sets[m].0].clone());
            }
        }
        for k in detached {
            let mut key = vec![lvl, 3];
            key.extend(crossing[k].rng_key());
            if rng::bernoulli(crossing[k].p, seed, tag::MERGE, &key) {
                included.push(crossing[k].clone());
            }
        }
        Ok(ClassState { lo, values: parent, included })
    }
}

pub fn refine(spec: &IntensitySpec, window: Window, seed: u64, levels: u32) -> Result<RefinementTrace> {
    if window.dim != 1 || window.len() != 1usize << levels {
        return Err(Error::InvalidArgument(format!("refinement window must have 2^{levels} sites")));
    }
    Refiner::new(spec, levels)?.run(window.lo.0, seed)
}

/// Aggregates over independent refinement runs.
#[derive(Clone, Debug, Serialize)]
pub struct CensoredSummary {
    pub replicas: usize,
    pub levels: u32,
    /// Mean `*` density per level.
    pub star_density: Vec<f64>,
    /// Number of sites first resolved at each level.
    pub resolved_at: Vec<usize>,
    /// Sites still `*` at the end.
    pub unresolved: usize,
    pub monotone_runs: usize,
    /// Offsets (inside the window) of the observed sites.
    pub observe: Vec<usize>,
    /// Counts of the final field on the observed sites, by [`tri_code`].
    pub law_counts: Vec<usize>,
}

impl CensoredSummary {
    pub fn final_law(&self) -> Vec<f64> {
        let n = self.replicas.max(1) as f64;
        self.law_counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn write_star_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "star_density"])?;
        for (n, d) in self.star_density.iter().enumerate() {
            w.write_record([n.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_resolution_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "sites"])?;
        for (k, c) in self.resolved_at.iter().enumerate() {
            w.write_record([k.to_string(), c.to_string()])?;
        }
        w.write_record(["unresolved".to_string(), self.unresolved.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

pub fn run_censored(
    spec: &IntensitySpec,
    window: Window,
    seed: u64,
    levels: u32,
    replicas: usize,
    observe: &[usize],
) -> Result<CensoredSummary> {
    if window.dim != 1 || window.len() != 1usize << levels {
        return Err(Error::InvalidArgument(format!("refinement window must have 2^{levels} sites")));
    }
    if observe.iter().any(|&i| i >= window.len()) || observe.len() > 8 {
        return Err(Error::InvalidArgument("observed offsets".into()));
    }
    let refiner = Refiner::new(spec, levels)?;
    let mut star_density = vec![0.0; levels as usize + 1];
    let mut resolved_at = vec![0usize; levels as usize + 1];
    let mut unresolved = 0;
    let mut law_counts = vec![0usize; 3usize.pow(observe.len() as u32)];
    let mut monotone_runs = 0;
    for r in 0..replicas {
        let trace = refiner.run(window.lo.0, rng::replica_seed(seed, r as u64))?;
        for (s, d) in star_density.iter_mut().zip(trace.star_density()) {
            *s += d / replicas as f64;
        }
        for &res in &trace.resolution {
            match res {
                Some(k) => resolved_at[k as usize] += 1,
                None => unresolved += 1,
            }
        }
        monotone_runs += trace.is_monotone() as usize;
        let fin = trace.final_field();
        let obs: Vec<Tri> = observe.iter().map(|&i| fin[i]).collect();
        law_counts[tri_code(&obs)] += 1;
    }
    Ok(CensoredSummary {
        replicas,
        levels,
        star_density,
        resolved_at,
        unresolved,
        monotone_runs,
        observe: observe.to_vec(),
        law_counts,
    })
}

/// Law of `X̄` on `sites` embedded in the tri-state code space.
pub fn binary_law_as_tri(law: &[f64], n: usize) -> Vec<f64> {
    censor_binary_law(law, &vec![0.0; n])
}
