//! Translation-invariant intensities `(p_A)` on Z and Z².
//!
//! A spec is a list of shape orbits (a canonical shape plus the probability
//! of each of its translates) and, in one dimension, an optional tail of
//! pairs `p_n = p_{{0,n}}`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, Site};

/// Work limits for the 2D hull search.
pub const HULL_MAX_CELLS: usize = 6;
pub const HULL_MAX_AREA: i64 = 49;
const HULL_MAX_GROUPS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOrbit", into = "RawOrbit")]
pub struct ShapeOrbit {
    cells: Vec<Site>,
    p: f64,
}

impl ShapeOrbit {
    /// Builds the orbit of `cells`; any translate may be passed.
    pub fn new(cells: &[Site], p: f64) -> Result<ShapeOrbit> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidSpec(format!("orbit probability {p} outside [0,1)")));
        }
        Ok(ShapeOrbit { cells: lattice::canonicalize(cells)?, p })
    }

    pub fn line(xs: &[i64], p: f64) -> Result<ShapeOrbit> {
        let cells: Vec<Site> = xs.iter().map(|&x| Site::line(x)).collect();
        ShapeOrbit::new(&cells, p)
    }

    pub fn cells(&self) -> &[Site] {
        &self.cells
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn size(&self) -> usize {
        self.cells.len()
    }

    pub fn diameter(&self) -> i64 {
        lattice::diameter(&self.cells)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawCell {
    Int(i64),
    Tuple(Vec<i64>),
}

#[derive(Serialize, Deserialize)]
struct RawOrbit {
    cells: Vec<RawCell>,
    p: f64,
}

impl TryFrom<RawOrbit> for ShapeOrbit {
    type Error = Error;
    fn try_from(r: RawOrbit) -> Result<ShapeOrbit> {
        let mut cells = Vec::with_capacity(r.cells.len());
        for c in r.cells {
            cells.push(match c {
                RawCell::Int(x) => Site::line(x),
                RawCell::Tuple(v) => match v.as_slice() {
                    [x] => Site::line(*x),
                    [x, y] => Site(*x, *y),
                    _ => return Err(Error::InvalidSpec("cells must have 1 or 2 coordinates".into())),
                },
            });
        }
        ShapeOrbit::new(&cells, r.p)
    }
}

impl From<ShapeOrbit> for RawOrbit {
    fn from(o: ShapeOrbit) -> RawOrbit {
        let two_d = o.cells.iter().any(|c| c.1 != 0);
        let cells = o
            .cells
            .iter()
            .map(|c| if two_d { RawCell::Tuple(vec![c.0, c.1]) } else { RawCell::Tuple(vec![c.0]) })
            .collect();
        RawOrbit { cells, p: o.p }
    }
}

/// Pair probabilities `p_n` for `n ≥ start`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum PairTail {
    /// `p_n = c·rⁿ`.
    Geometric {
        c: f64,
        r: f64,
        #[serde(default = "one")]
        start: u64,
    },
    /// `p_n = values[n - start]`, zero beyond the list.
    List {
        #[serde(default = "one")]
        start: u64,
        values: Vec<f64>,
    },
    /// `p_n = 1 - (1 - base_n)^power`.
    Scaled { base: Box<PairTail>, power: f64 },
}

fn one() -> u64 {
    1
}

impl PairTail {
    pub fn geometric(c: f64, r: f64) -> PairTail {
        PairTail::Geometric { c, r, start: 1 }
    }

    pub fn start(&self) -> u64 {
        match self {
            PairTail::Geometric { start, .. } | PairTail::List { start, .. } => (*start).max(1),
            PairTail::Scaled { base, .. } => base.start(),
        }
    }

    /// Last index with possibly non-zero mass, `None` for infinite tails.
    pub fn last(&self) -> Option<u64> {
        match self {
            PairTail::Geometric { c, .. } => (*c == 0.0).then_some(0),
            PairTail::List { start, values } => {
                let s = (*start).max(1);
                Some(values.iter().rposition(|&v| v > 0.0).map_or(0, |i| s + i as u64))
            }
            PairTail::Scaled { base, .. } => base.last(),
        }
    }

    pub fn p(&self, n: u64) -> f64 {
        if n < self.start() {
            return 0.0;
        }
        match self {
            PairTail::Geometric { c, r, .. } => c * r.powf(n as f64),
            PairTail::List { values, .. } => {
                values.get((n - self.start()) as usize).copied().unwrap_or(0.0)
            }
            PairTail::Scaled { base, power } => 1.0 - (1.0 - base.p(n)).powf(*power),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PairTail::Geometric { c, r, start } => {
                if !(*r > 0.0 && *r < 1.0) || *c < 0.0 {
                    return Err(Error::InvalidSpec(format!("geometric tail needs c ≥ 0, 0 < r < 1 (c={c}, r={r})")));
                }
                if c * r.powf((*start).max(1) as f64) >= 1.0 {
                    return Err(Error::InvalidSpec("pair probability ≥ 1".into()));
                }
            }
            PairTail::List { values, .. } => {
                if values.iter().any(|v| !(0.0..1.0).contains(v)) {
                    return Err(Error::InvalidSpec("pair probability outside [0,1)".into()));
                }
            }
            PairTail::Scaled { base, power } => {
                if *power <= 0.0 {
                    return Err(Error::InvalidSpec("scaling exponent must be positive".into()));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// `Σ_{n ≥ from} p_n ρⁿ`, `+∞` when divergent. Closed form for
    /// geometric tails; for scaled tails the series is summed until the
    /// analytic remainder bound is below double precision.
    pub fn weighted_tail(&self, from: u64, rho: f64) -> f64 {
        let from = from.max(self.start());
        match self {
            PairTail::Geometric { c, r, .. } => {
                if *c == 0.0 {
                    return 0.0;
                }
                let q = r * rho;
                if q >= 1.0 {
                    f64::INFINITY
                } else {
                    c * q.powf(from as f64) / (1.0 - q)
                }
            }
            PairTail::List { values, .. } => {
                let s = self.start();
                values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (s + i as u64, v))
                    .filter(|&(n, _)| n >= from)
                    .map(|(n, v)| v * rho.powf(n as f64))
                    .sum()
            }
            PairTail::Scaled { base, power } => {
                let base_tail = base.weighted_tail(from, rho);
                if base_tail.is_infinite() {
                    return f64::INFINITY;
                }
                if let Some(last) = base.last() {
                    return (from..=last).map(|n| self.p(n) * rho.powf(n as f64)).sum();
                }
                // p_n ≤ max(1, power)·base_n bounds the remainder.
                let k = power.max(1.0);
                let mut sum = 0.0;
                let mut n = from;
                loop {
                    sum += self.p(n) * rho.powf(n as f64);
                    n += 1;
                    let rest = k * base.weighted_tail(n, rho);
                    if rest <= 1e-17 * sum.max(1e-300) || n - from > 5_000_000 {
                        return sum;
                    }
                }
            }
        }
    }

    /// `Σ_{n ≥ from} p_n`.
    pub fn tail(&self, from: u64) -> f64 {
        self.weighted_tail(from, 1.0)
    }

    /// `Σ_{n ≥ from} (n + 1) p_n`: the mass of pairs of gap at least `from`
    /// whose hull covers a fixed site.
    pub fn hull_tail(&self, from: u64) -> f64 {
        let from = from.max(self.start());
        match self {
            PairTail::Geometric { c, r, .. } => {
                let m = from as f64;
                c * r.powf(m) * ((m + 1.0) / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)))
            }
            PairTail::List { .. } => match self.last() {
                Some(last) if last >= from => (from..=last).map(|n| (n + 1) as f64 * self.p(n)).sum(),
                _ => 0.0,
            },
            PairTail::Scaled { base, power } => {
                if let Some(last) = base.last() {
                    return (from..=last).map(|n| (n + 1) as f64 * self.p(n)).sum();
                }
                let k = power.max(1.0);
                let mut sum = 0.0;
                let mut n = from;
                loop {
                    sum += (n + 1) as f64 * self.p(n);
                    n += 1;
                    if k * base.hull_tail(n) <= 1e-17 * sum.max(1e-300) || n - from > 5_000_000 {
                        return sum;
                    }
                }
            }
        }
    }

    fn scaled(&self, c: f64) -> PairTail {
        match self {
            PairTail::List { start, values } => PairTail::List {
                start: *start,
                values: values.iter().map(|&v| 1.0 - (1.0 - v).powf(c)).collect(),
            },
            PairTail::Scaled { base, power } => PairTail::Scaled { base: base.clone(), power: power * c },
            other => PairTail::Scaled { base: Box::new(other.clone()), power: c },
        }
    }
}

/// Where a concrete set comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Source {
    Orbit(usize),
    Pair(u64),
}

/// A concrete finite set with its inclusion probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcreteSet {
    /// Sorted cells.
    pub cells: Vec<Site>,
    pub p: f64,
    pub source: Source,
}

impl ConcreteSet {
    pub fn min(&self) -> Site {
        self.cells[0]
    }

    pub fn max(&self) -> Site {
        *self.cells.last().unwrap()
    }

    pub fn diameter(&self) -> i64 {
        lattice::diameter(&self.cells)
    }

    pub fn contains(&self, v: Site) -> bool {
        self.cells.binary_search(&v).is_ok()
    }

    pub fn size(&self) -> usize {
        self.cells.len()
    }

    /// Identity used for hashing: source plus position.
    pub fn key(&self) -> (Source, Site) {
        (self.source, self.min())
    }

    /// Coordinates used as the RNG key for this set's inclusion variable.
    pub fn rng_key(&self) -> Vec<i64> {
        let mut k = Vec::with_capacity(2 * self.cells.len() + 1);
        k.push(self.cells.len() as i64);
        for c in &self.cells {
            k.push(c.0);
            k.push(c.1);
        }
        k
    }
}

/// Result of enumerating sets, with the probability mass left out.
#[derive(Clone, Debug, Default)]
pub struct Enumeration {
    pub sets: Vec<ConcreteSet>,
    pub neglected: f64,
    /// Largest pair gap enumerated (0 without a tail).
    pub horizon: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Size,
    Diam,
    ConnectedSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdVariant {
    Pairs,
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct IntensitySpec {
    dimension: u8,
    orbits: Vec<ShapeOrbit>,
    pair_tail: Option<PairTail>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    dimension: u8,
    #[serde(default)]
    orbits: Vec<ShapeOrbit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_tail: Option<PairTail>,
}

impl TryFrom<RawSpec> for IntensitySpec {
    type Error = Error;
    fn try_from(r: RawSpec) -> Result<IntensitySpec> {
        IntensitySpec::new(r.dimension, r.orbits, r.pair_tail)
    }
}

impl From<IntensitySpec> for RawSpec {
    fn from(s: IntensitySpec) -> RawSpec {
        RawSpec { dimension: s.dimension, orbits: s.orbits, pair_tail: s.pair_tail }
    }
}

impl IntensitySpec {
    pub fn new(dimension: u8, orbits: Vec<ShapeOrbit>, pair_tail: Option<PairTail>) -> Result<IntensitySpec> {
        if dimension != 1 && dimension != 2 {
            return Err(Error::InvalidSpec(format!("dimension {dimension}")));
        }
        let mut seen = HashSet::new();
        for o in &orbits {
            if dimension == 1 && o.cells.iter().any(|c| c.1 != 0) {
                return Err(Error::InvalidSpec("two-dimensional cells in a 1D spec".into()));
            }
            if !seen.insert(o.cells.clone()) {
                return Err(Error::InvalidSpec(format!("duplicate orbit {:?}", o.cells)));
            }
        }
        if let Some(t) = &pair_tail {
            if dimension != 1 {
                return Err(Error::InvalidSpec("pair tails are one-dimensional".into()));
            }
            t.validate()?;
            for o in &orbits {
                if o.cells.len() == 2 && t.p(o.cells[1].0 as u64) > 0.0 {
                    return Err(Error::InvalidSpec(format!("orbit {:?} duplicates a tail pair", o.cells)));
                }
            }
        }
        Ok(IntensitySpec { dimension, orbits, pair_tail })
    }

    pub fn empty(dimension: u8) -> IntensitySpec {
        IntensitySpec { dimension, orbits: vec![], pair_tail: None }
    }

    pub fn one_d(orbits: Vec<ShapeOrbit>) -> Result<IntensitySpec> {
        IntensitySpec::new(1, orbits, None)
    }

    pub fn pairs(tail: PairTail) -> Result<IntensitySpec> {
        IntensitySpec::new(1, vec![], Some(tail))
    }

    pub fn from_json(text: &str) -> Result<IntensitySpec> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn dimension(&self) -> u8 {
        self.dimension
    }

    pub fn orbits(&self) -> &[ShapeOrbit] {
        &self.orbits
    }

    pub fn pair_tail(&self) -> Option<&PairTail> {
        self.pair_tail.as_ref()
    }

    /// True when infinitely many sets contain a site.
    pub fn has_infinite_tail(&self) -> bool {
        self.pair_tail.as_ref().is_some_and(|t| t.last().is_none())
    }

    /// Largest diameter of any set with positive probability, `None` when
    /// unbounded.
    pub fn max_diameter(&self) -> Option<i64> {
        let orb = self.orbits.iter().filter(|o| o.p > 0.0).map(|o| o.diameter()).max().unwrap_or(0);
        match &self.pair_tail {
            None => Some(orb),
            Some(t) => t.last().map(|l| orb.max(l as i64)),
        }
    }

    /// `p_{{0}}`.
    pub fn singleton_p(&self) -> f64 {
        self.orbits.iter().find(|o| o.cells.len() == 1).map_or(0.0, |o| o.p)
    }

    /// Keeps only sets satisfying `keep(size, diameter)`; tail pairs have
    /// size 2 and diameter `n`.
    pub fn restrict(&self, keep: impl Fn(usize, i64) -> bool) -> IntensitySpec {
        let orbits = self.orbits.iter().filter(|o| keep(o.size(), o.diameter())).cloned().collect();
        let pair_tail = self.pair_tail.as_ref().and_then(|t| {
            let last = t.last()?;
            let values: Vec<f64> = (1..=last).map(|n| if keep(2, n as i64) { t.p(n) } else { 0.0 }).collect();
            values.iter().any(|&v| v > 0.0).then_some(PairTail::List { start: 1, values })
        });
        IntensitySpec { dimension: self.dimension, orbits, pair_tail }
    }

    /// Orbits plus any tail pairs as explicit orbits (finite tails only).
    pub fn flatten_tail(&self) -> Result<IntensitySpec> {
        let mut orbits = self.orbits.clone();
        if let Some(t) = &self.pair_tail {
            let last = t.last().ok_or_else(|| Error::InvalidArgument("infinite pair tail".into()))?;
            for n in t.start()..=last {
                if t.p(n) > 0.0 {
                    orbits.push(ShapeOrbit::line(&[0, n as i64], t.p(n))?);
                }
            }
        }
        IntensitySpec::new(self.dimension, orbits, None)
    }

    /// `Σ_{A ∋ 0} p_A`.
    pub fn site_mass(&self) -> f64 {
        let orb: f64 = self.orbits.iter().map(|o| o.size() as f64 * o.p).sum();
        orb + self.pair_tail.as_ref().map_or(0.0, |t| 2.0 * t.tail(1))
    }

    /// `p_n = Σ_{A ∋ 0, |A| = n} p_A` for each size present.
    pub fn size_profile(&self) -> BTreeMap<usize, f64> {
        let mut m = BTreeMap::new();
        for o in &self.orbits {
            *m.entry(o.size()).or_insert(0.0) += o.size() as f64 * o.p;
        }
        if let Some(t) = &self.pair_tail {
            *m.entry(2).or_insert(0.0) += 2.0 * t.tail(1);
        }
        m.retain(|_, v| *v > 0.0);
        m
    }

    fn pair_cells(v: Site, n: u64, left: bool) -> Vec<Site> {
        let n = n as i64;
        if left {
            vec![Site(v.0 - n, 0), v]
        } else {
            vec![v, Site(v.0 + n, 0)]
        }
    }

    fn tail_cutoff(&self, diam_cap: Option<i64>, budget: f64) -> Result<(u64, f64)> {
        let Some(t) = &self.pair_tail else { return Ok((0, 0.0)) };
        let cap = diam_cap.map(|c| c.max(0) as u64);
        if let Some(last) = t.last() {
            return Ok((cap.map_or(last, |c| c.min(last)), 0.0));
        }
        if cap.is_none() && budget <= 0.0 {
            return Err(Error::ZeroBudget);
        }
        let mut n = t.start() - 1;
        loop {
            if let Some(c) = cap {
                if n >= c {
                    return Ok((c, 0.0));
                }
            }
            let rest = 2.0 * t.tail(n + 1);
            if rest <= budget {
                let lost = match cap {
                    Some(c) => 2.0 * (t.tail(n + 1) - t.tail(c + 1)).max(0.0),
                    None => rest,
                };
                return Ok((n, lost));
            }
            n += 1;
        }
    }

    /// Every concrete set `A ∋ v` with `diam A ≤ diam_cap`. Tail pairs are
    /// enumerated until the neglected mass is at most `budget`.
    pub fn translates_through(&self, v: Site, diam_cap: Option<i64>, budget: f64) -> Result<Enumeration> {
        let mut sets = Vec::new();
        for (i, o) in self.orbits.iter().enumerate() {
            if o.p == 0.0 || diam_cap.is_some_and(|c| o.diameter() > c) {
                continue;
            }
            for c in &o.cells {
                let cells = lattice::translate(&o.cells, v.sub(*c));
                sets.push(ConcreteSet { cells, p: o.p, source: Source::Orbit(i) });
            }
        }
        let (horizon, neglected) = self.tail_cutoff(diam_cap, budget)?;
        if let Some(t) = &self.pair_tail {
            for n in t.start()..=horizon {
                let p = t.p(n);
                if p == 0.0 {
                    continue;
                }
                for left in [false, true] {
                    sets.push(ConcreteSet { cells: Self::pair_cells(v, n, left), p, source: Source::Pair(n) });
                }
            }
        }
        Ok(Enumeration { sets, neglected, horizon })
    }

    /// Every concrete set meeting `sites`, each once, in a fixed order.
    /// The neglected mass bounds `Σ p_A` over omitted sets meeting `sites`.
    pub fn sets_meeting(&self, sites: &[Site], budget: f64) -> Result<Enumeration> {
        let per_site = if sites.is_empty() { budget } else { budget / sites.len() as f64 };
        let mut seen = HashSet::new();
        let mut out = Enumeration::default();
        for &v in sites {
            let e = self.translates_through(v, None, per_site)?;
            out.neglected += e.neglected;
            out.horizon = out.horizon.max(e.horizon);
            for s in e.sets {
                if seen.insert(s.key()) {
                    out.sets.push(s);
                }
            }
        }
        out.sets.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(out)
    }

    /// Sets whose minimum is `v` (one representative per orbit and pair).
    pub fn sets_with_min(&self, v: Site, budget: f64) -> Result<Enumeration> {
        let mut sets = Vec::new();
        for (i, o) in self.orbits.iter().enumerate() {
            if o.p > 0.0 {
                sets.push(ConcreteSet { cells: lattice::translate(&o.cells, v), p: o.p, source: Source::Orbit(i) });
            }
        }
        let (horizon, neglected2) = self.tail_cutoff(None, 2.0 * budget)?;
        if let Some(t) = &self.pair_tail {
            for n in t.start()..=horizon {
                if t.p(n) > 0.0 {
                    sets.push(ConcreteSet { cells: Self::pair_cells(v, n, false), p: t.p(n), source: Source::Pair(n) });
                }
            }
        }
        Ok(Enumeration { sets, neglected: neglected2 / 2.0, horizon })
    }

    /// `Σ_{A ∋ 0} p_A e^{λ·w(A)}`, `+∞` when divergent.
    pub fn moment_sum(&self, lambda: f64, weight: Weight) -> Result<f64> {
        let mut total = 0.0;
        for o in &self.orbits {
            if o.p == 0.0 {
                continue;
            }
            let w = match weight {
                Weight::Size => o.size() as f64,
                Weight::Diam => o.diameter() as f64,
                Weight::ConnectedSize => connected_hull(&o.cells, self.dimension)?.len() as f64,
            };
            total += o.size() as f64 * o.p * (lambda * w).exp();
        }
        if let Some(t) = &self.pair_tail {
            let e = lambda.exp();
            total += 2.0
                * match weight {
                    Weight::Size => e * e * t.tail(1),
                    Weight::Diam => t.weighted_tail(1, e),
                    // The 1D hull of {0,n} has n + 1 cells.
                    Weight::ConnectedSize => e * t.weighted_tail(1, e),
                };
        }
        Ok(total)
    }

    /// Level thresholds `N_k`.
    ///
    /// Pairs: smallest `N ≥ 1` with `Σ_{n ≥ N} p_n ≤ k⁻⁴`.
    /// General: smallest `N ≥ 0` with `Σ_{A ∋ 0, diam A ≥ N} p_A k^{2|A|} ≤ 1`.
    pub fn tail_threshold(&self, k: u32, variant: ThresholdVariant) -> Result<i64> {
        if k == 0 {
            return Err(Error::InvalidArgument("level k must be ≥ 1".into()));
        }
        let kf = k as f64;
        match variant {
            ThresholdVariant::Pairs => {
                let bound = kf.powi(-4);
                let Some(t) = &self.pair_tail else { return Ok(1) };
                let total = t.tail(1);
                if !total.is_finite() {
                    return Err(Error::ThresholdUndefined(k));
                }
                let mut n = 1u64;
                while !leq(t.tail(n), bound) {
                    n += 1;
                }
                Ok(n as i64)
            }
            ThresholdVariant::General => {
                let mass = |from: i64| -> f64 { self.general_level_mass(kf, from, None) };
                if !mass(0).is_finite() {
                    return Err(Error::ThresholdUndefined(k));
                }
                let mut n = 0i64;
                while !leq(mass(n), 1.0) {
                    n += 1;
                }
                Ok(n)
            }
        }
    }

    /// `Σ_{A ∋ 0, from ≤ diam A < to} p_A k^{2|A|}`.
    pub fn general_level_mass(&self, k: f64, from: i64, to: Option<i64>) -> f64 {
        let inside = |d: i64| d >= from && to.is_none_or(|t| d < t);
        let mut s: f64 = self
            .orbits
            .iter()
            .filter(|o| inside(o.diameter()))
            .map(|o| o.size() as f64 * o.p * k.powi(2 * o.size() as i32))
            .sum();
        if let Some(t) = &self.pair_tail {
            let lo = from.max(1) as u64;
            let part = match to {
                None => t.tail(lo),
                Some(hi) if hi as u64 > lo => t.tail(lo) - t.tail(hi as u64),
                _ => 0.0,
            };
            s += 2.0 * k.powi(4) * part;
        }
        s
    }

    /// `p_A ↦ 1 - (1 - p_A)^c` for every set.
    pub fn scale(&self, c: f64) -> Result<IntensitySpec> {
        if c <= 0.0 || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("scaling exponent {c}")));
        }
        let orbits = self
            .orbits
            .iter()
            .map(|o| ShapeOrbit { cells: o.cells.clone(), p: 1.0 - (1.0 - o.p).powf(c) })
            .collect();
        let pair_tail = self.pair_tail.as_ref().map(|t| t.scaled(c));
        let out = IntensitySpec::new(self.dimension, orbits, pair_tail)?;
        if !out.site_mass().is_finite() {
            return Err(Error::Divergent("scaled intensity".into()));
        }
        Ok(out)
    }

    /// `λ_c` and `γ` for this spec together with the requested moment sums.
    pub fn moment_report(&self, queries: &[(f64, Weight)]) -> Result<MomentReport> {
        let profile = self.size_profile();
        // Sizes are bounded for every supported family, so p_n vanishes
        // eventually and the lim sup defining λ_c is +∞.
        let lambda_c = f64::INFINITY;
        let gamma = profile
            .iter()
            .map(|(&n, &p)| (1.0 + n as f64 / p).ln() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let mut sums = Vec::new();
        for &(l, w) in queries {
            sums.push((l, w, self.moment_sum(l, w)?));
        }
        Ok(MomentReport { lambda_c, gamma, sums })
    }
}

fn leq(a: f64, b: f64) -> bool {
    a <= b * (1.0 + 1e-12)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub lambda_c: f64,
    pub gamma: f64,
    pub sums: Vec<(f64, Weight, f64)>,
}

pub fn canonicalize_shape(cells: &[Site]) -> Result<Vec<Site>> {
    lattice::canonicalize(cells)
}

/// `log(3Δ - 1)`, or 0 when the one-dimensional improvement applies.
pub fn lambda_star(max_degree: u32, one_d: bool) -> Result<f64> {
    if max_degree < 2 {
        return Err(Error::InvalidArgument("degree must be ≥ 2".into()));
    }
    if one_d {
        return Ok(0.0);
    }
    Ok((3.0 * max_degree as f64 - 1.0).ln())
}

/// A minimum-size connected superset of `cells` (4-neighbour connectivity
/// in the plane). Among optimal hulls inside the bounding box the
/// lexicographically least sorted cell list is returned.
///
/// Clamping coordinates into the bounding box maps connected sets to
/// connected sets without increasing their size, so an optimal hull always
/// exists inside the box.
pub fn connected_hull(cells: &[Site], dim: u8) -> Result<Vec<Site>> {
    let mut a = cells.to_vec();
    lattice::normalize(&mut a);
    if a.is_empty() {
        return Err(Error::EmptyShape);
    }
    let (lo, hi) = lattice::bounding_box(&a);
    if dim == 1 {
        return Ok((lo.0..=hi.0).map(Site::line).collect());
    }
    if lattice::is_connected(&a, 2) {
        return Ok(a);
    }
    let area = (hi.0 - lo.0 + 1) * (hi.1 - lo.1 + 1);
    if a.len() > HULL_MAX_CELLS || area > HULL_MAX_AREA {
        return Err(Error::HullTooLarge(format!("{} cells, bounding box area {area}", a.len())));
    }
    let grid = BoxGraph::new(lo, hi);
    let mut allowed = vec![true; grid.len()];
    let mut forced: Vec<bool> = vec![false; grid.len()];
    for c in &a {
        forced[grid.index(*c)] = true;
    }
    let best = grid.steiner(&allowed, &forced)?;
    let mut size = a.len();
    for i in 0..grid.len() {
        if forced[i] {
            continue;
        }
        if size == best {
            allowed[i] = false;
            continue;
        }
        forced[i] = true;
        if grid.steiner(&allowed, &forced)? == best {
            size += 1;
        } else {
            forced[i] = false;
            allowed[i] = false;
        }
    }
    let hull: Vec<Site> = (0..grid.len()).filter(|&i| forced[i]).map(|i| grid.site(i)).collect();
    debug_assert_eq!(hull.len(), best);
    Ok(hull)
}

/// `|c(A)|`.
pub fn hull_size(cells: &[Site], dim: u8) -> Result<usize> {
    Ok(connected_hull(cells, dim)?.len())
}

/// Cells of a box with 4-neighbour adjacency, indexed in lexicographic order.
struct BoxGraph {
    lo: Site,
    w: i64,
    h: i64,
}

impl BoxGraph {
    fn new(lo: Site, hi: Site) -> BoxGraph {
        BoxGraph { lo, w: hi.0 - lo.0 + 1, h: hi.1 - lo.1 + 1 }
    }

    fn len(&self) -> usize {
        (self.w * self.h) as usize
    }

    fn index(&self, s: Site) -> usize {
        ((s.0 - self.lo.0) * self.h + (s.1 - self.lo.1)) as usize
    }

    fn site(&self, i: usize) -> Site {
        let i = i as i64;
        Site(self.lo.0 + i / self.h, self.lo.1 + i % self.h)
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let s = self.site(i);
        s.neighbours(2).filter_map(move |n| {
            let (dx, dy) = (n.0 - self.lo.0, n.1 - self.lo.1);
            (dx >= 0 && dx < self.w && dy >= 0 && dy < self.h).then(|| self.index(n))
        })
    }

    /// Minimum number of cells of a connected set made of allowed cells
    /// containing every forced cell (Dreyfus-Wagner over the components of
    /// the forced cells, each contracted to one terminal).
    fn steiner(&self, allowed: &[bool], forced: &[bool]) -> Result<usize> {
        let n = self.len();
        // Terminal groups = connected components of forced cells.
        let mut group = vec![usize::MAX; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for s in 0..n {
            if !forced[s] || group[s] != usize::MAX {
                continue;
            }
            let g = groups.len();
            let mut stack = vec![s];
            group[s] = g;
            let mut members = vec![];
            while let Some(c) = stack.pop() {
                members.push(c);
                for m in self.neighbours(c) {
                    if forced[m] && group[m] == usize::MAX {
                        group[m] = g;
                        stack.push(m);
                    }
                }
            }
            groups.push(members);
        }
        let t = groups.len();
        let base: usize = groups.iter().map(|g| g.len()).sum();
        if t <= 1 {
            return Ok(base);
        }
        if t > HULL_MAX_GROUPS {
            return Err(Error::HullTooLarge(format!("{t} terminal groups")));
        }
        // Node set: free allowed cells plus one node per group. Node weight:
        // 1 for free cells, 0 for groups (their cells are counted in `base`).
        let free: Vec<usize> = (0..n).filter(|&i| allowed[i] && !forced[i]).collect();
        let mut node_of = vec![usize::MAX; n];
        for (j, &c) in free.iter().enumerate() {
            node_of[c] = j;
        }
        let nodes = free.len() + t;
        for (g, members) in groups.iter().enumerate() {
            for &c in members {
                node_of[c] = free.len() + g;
            }
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes];
        for c in 0..n {
            if node_of[c] == usize::MAX {
                continue;
            }
            for m in self.neighbours(c) {
                if node_of[m] != usize::MAX && node_of[m] != node_of[c] {
                    adj[node_of[c]].insert(node_of[m]);
                }
            }
        }
        let weight = |v: usize| if v < free.len() { 1u32 } else { 0 };
        const INF: u32 = u32::MAX / 4;
        let full = (1usize << t) - 1;
        let mut dp = vec![vec![INF; nodes]; full + 1];
        for g in 0..t {
            dp[1 << g][free.len() + g] = 0;
        }
        for mask in 1..=full {
            let row_min = {
                let mut row = dp[mask].clone();
                let mut sub = (mask - 1) & mask;
                while sub > 0 {
                    if sub < (mask ^ sub) {
                        for v in 0..nodes {
                            let c = dp[sub][v] + dp[mask ^ sub][v];
                            let c = c.saturating_sub(weight(v));
                            if c < row[v] {
                                row[v] = c;
                            }
                        }
                    }
                    sub = (sub - 1) & mask;
                }
                row
            };
            dp[mask] = dijkstra(&adj, row_min, &weight);
        }
        let best = dp[full].iter().copied().min().unwrap_or(INF);
        if best >= INF {
            return Err(Error::Invariant("hull terminals disconnected".into()));
        }
        Ok(base + best as usize)
    }
}

/// Node-weighted relaxation: `d[v] = min(d[v], d[u] + w(v))` over edges.
fn dijkstra(adj: &[BTreeSet<usize>], mut d: Vec<u32>, weight: &impl Fn(usize) -> u32) -> Vec<u32> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut heap: BinaryHeap<Reverse<(u32, usize)>> = d.iter().enumerate().map(|(v, &x)| Reverse((x, v))).collect();
    while let Some(Reverse((dv, v))) = heap.pop() {
        if dv > d[v] {
            continue;
        }
        for &u in &adj[v] {
            let c = dv + weight(u);
            if c < d[u] {
                d[u] = c;
                heap.push(Reverse((c, u)));
            }
        }
    }
    d
}

/// Hulls of every orbit, cached by canonical shape.
#[derive(Default)]
pub struct HullCache {
    map: HashMap<Vec<Site>, Vec<Site>>,
}

impl HullCache {
    /// Hull of the translate `cells`, computed on the canonical shape and
    /// translated back.
    pub fn hull(&mut self, cells: &[Site], dim: u8) -> Result<Vec<Site>> {
        let min = *cells.iter().min().ok_or(Error::EmptyShape)?;
        let canon = lattice::canonicalize(cells)?;
        if !self.map.contains_key(&canon) {
            let h = connected_hull(&canon, dim)?;
            self.map.insert(canon.clone(), h);
        }
        Ok(lattice::translate(&self.map[&canon], min))
    }
}
