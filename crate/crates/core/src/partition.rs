//! Random partition of Z^d into finite classes from a greedy `(r, r)`-net.
//!
//! Centres are the greedy maximal independent set of the graph "distance
//! `≤ r`" taken in increasing order of IID uniforms `W`; classes are the ℓ∞
//! Voronoi cells of the centres, ties broken by a second IID uniform `U`.
//! Everything is evaluated lazily with memoization, so decisions are exact
//! for any site of the infinite lattice.

use rustc_hash::FxHashMap as HashMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{ball, Site, Window};
use crate::rng::{self, tag};

/// Bounding box of the sites a value depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub lo: Site,
    pub hi: Site,
}

impl Footprint {
    pub fn point(v: Site) -> Footprint {
        Footprint { lo: v, hi: v }
    }

    pub fn ball(v: Site, r: i64, dim: u8) -> Footprint {
        let ry = if dim == 1 { 0 } else { r };
        Footprint { lo: Site(v.0 - r, v.1 - ry), hi: Site(v.0 + r, v.1 + ry) }
    }

    pub fn join(self, o: Footprint) -> Footprint {
        Footprint {
            lo: Site(self.lo.0.min(o.lo.0), self.lo.1.min(o.lo.1)),
            hi: Site(self.hi.0.max(o.hi.0), self.hi.1.max(o.hi.1)),
        }
    }

    /// Largest ℓ∞ distance from `v` to a site of the box.
    pub fn reach(&self, v: Site) -> u64 {
        let dx = (v.0 - self.lo.0).abs().max((self.hi.0 - v.0).abs());
        let dy = (v.1 - self.lo.1).abs().max((self.hi.1 - v.1).abs());
        dx.max(dy) as u64
    }
}

/// Memo table: dense around the first site stored, hashed elsewhere.
#[derive(Clone, Debug)]
struct Memo<T> {
    origin: Option<Site>,
    half: i64,
    dense: Vec<Option<T>>,
    spill: HashMap<Site, T>,
}

impl<T: Clone> Memo<T> {
    fn new(half: i64) -> Memo<T> {
        Memo { origin: None, half, dense: Vec::new(), spill: HashMap::default() }
    }

    fn slot(&self, v: Site) -> Option<usize> {
        let o = self.origin?;
        let (dx, dy) = (v.0 - o.0 + self.half, v.1 - o.1 + self.half);
        let side = 2 * self.half + 1;
        ((0..side).contains(&dx) && (0..side).contains(&dy)).then(|| (dx * side + dy) as usize)
    }

    fn get(&self, v: Site) -> Option<&T> {
        match self.slot(v) {
            Some(i) => self.dense[i].as_ref(),
            None => self.spill.get(&v),
        }
    }

    fn insert(&mut self, v: Site, x: T) {
        if self.origin.is_none() {
            self.origin = Some(v);
            let side = (2 * self.half + 1) as usize;
            self.dense = vec![None; side * side];
        }
        match self.slot(v) {
            Some(i) => self.dense[i] = Some(x),
            None => {
                self.spill.insert(v, x);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Net {
    pub dim: u8,
    pub r: i64,
    seed: u64,
    salt: i64,
    /// `W` on the dense box of the memo tables.
    weight: Vec<f64>,
    /// Offsets of the `r`-ball sorted by norm.
    rings: Vec<(Site, i64)>,
    centre: Memo<(bool, Footprint)>,
    class: Memo<(Site, Footprint)>,
    cells: HashMap<Site, (Vec<Site>, Footprint)>,
    min: Memo<(Site, Footprint)>,
}

impl Net {
    /// `salt` separates independent partitions drawn from the same seed.
    pub fn new(dim: u8, r: i64, seed: u64, salt: i64) -> Result<Net> {
        if r < 1 || !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("net needs r ≥ 1 and d ∈ {{1, 2}}, got r = {r}, d = {dim}")));
        }
        let half = if dim == 1 { 0 } else { 6 * r };
        let mut rings: Vec<(Site, i64)> = ball(Site(0, 0), r, dim).map(|o| (o, o.dist(Site(0, 0)))).collect();
        rings.sort_by_key(|&(o, d)| (d, o));
        Ok(Net {
            dim,
            r,
            seed,
            salt,
            weight: Vec::new(),
            rings,
            centre: Memo::new(half),
            class: Memo::new(half),
            cells: HashMap::default(),
            min: Memo::new(half),
        })
    }

    pub fn w(&self, v: Site) -> f64 {
        rng::uniform(self.seed, tag::NET_W, &[self.salt, v.0, v.1])
    }

    fn anchor(&mut self, v: Site) {
        if self.centre.origin.is_some() {
            return;
        }
        for m in [&mut self.centre.origin, &mut self.class.origin, &mut self.min.origin] {
            *m = Some(v);
        }
        let side = (2 * self.centre.half + 1) as usize;
        self.centre.dense = vec![None; side * side];
        self.class.dense = vec![None; side * side];
        self.min.dense = vec![None; side * side];
        let h = self.centre.half;
        self.weight = Vec::with_capacity(side * side);
        for dx in -h..=h {
            for dy in -h..=h {
                self.weight.push(self.w(Site(v.0 + dx, v.1 + dy)));
            }
        }
    }

    #[inline]
    fn w_cached(&self, v: Site) -> f64 {
        match self.centre.slot(v) {
            Some(i) => self.weight[i],
            None => self.w(v),
        }
    }

    pub fn u(&self, v: Site) -> f64 {
        rng::uniform(self.seed, tag::NET_U, &[self.salt, v.0, v.1])
    }

    pub fn is_centre(&mut self, v: Site) -> bool {
        self.centre_fp(v).0
    }

    /// `v` is a centre iff no earlier site within distance `r` is one.
    pub fn centre_fp(&mut self, v: Site) -> (bool, Footprint) {
        if let Some(&x) = self.centre.get(v) {
            return x;
        }
        self.anchor(v);
        let ry = if self.dim == 1 { 0 } else { self.r };
        let wv = self.w_cached(v);
        let mut fp = Footprint::ball(v, self.r, self.dim);
        let mut is = true;
        let mut unsettled = false;
        // Settled earlier neighbours first, then recursion.
        'scan: for pass in 0..2 {
            for dx in -self.r..=self.r {
                for dy in -ry..=ry {
                    let u = Site(v.0 + dx, v.1 + dy);
                    let wu = self.w_cached(u);
                    if !(wu < wv || (wu == wv && u < v)) {
                        continue;
                    }
                    let known = self.centre.get(u).copied();
                    let (c, f) = match (pass, known) {
                        (_, Some(x)) => x,
                        (0, None) => {
                            unsettled = true;
                            continue;
                        }
                        _ => self.centre_fp(u),
                    };
                    fp = fp.join(f);
                    if c {
                        is = false;
                        break 'scan;
                    }
                }
            }
            if !unsettled {
                break;
            }
        }
        self.centre.insert(v, (is, fp));
        (is, fp)
    }

    /// Centre of the class containing `x`.
    pub fn class_of(&mut self, x: Site) -> Site {
        self.class_fp(x).0
    }

    pub fn class_fp(&mut self, x: Site) -> (Site, Footprint) {
        if let Some(&c) = self.class.get(x) {
            return c;
        }
        let mut best: Option<(i64, f64, Site)> = None;
        let mut fp = Footprint::point(x);
        // Offsets by increasing distance: stop after the first ring holding a centre.
        for i in 0..self.rings.len() {
            let (o, d) = self.rings[i];
            if best.is_some_and(|b| d > b.0) {
                break;
            }
            let c = x.add(o);
            let (is, f) = self.centre_fp(c);
            fp = fp.join(f);
            if is {
                let key = (d, self.u(c), c);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
        let centre = best.expect("every site lies within r of a centre").2;
        self.class.insert(x, (centre, fp));
        (centre, fp)
    }

    /// Sites of the class with centre `c`, in lexicographic order.
    pub fn cells(&mut self, c: Site) -> Vec<Site> {
        self.cells_fp(c).0
    }

    pub fn cells_fp(&mut self, c: Site) -> (Vec<Site>, Footprint) {
        if let Some(x) = self.cells.get(&c) {
            return x.clone();
        }
        let mut out = Vec::new();
        let mut fp = Footprint::point(c);
        for x in ball(c, self.r, self.dim) {
            let (cx, f) = self.class_fp(x);
            fp = fp.join(f);
            if cx == c {
                out.push(x);
            }
        }
        out.sort();
        self.cells.insert(c, (out.clone(), fp));
        (out, fp)
    }

    /// Lexicographic minimum of the class containing `x`.
    pub fn class_min(&mut self, x: Site) -> Site {
        self.class_min_fp(x).0
    }

    pub fn class_min_fp(&mut self, x: Site) -> (Site, Footprint) {
        let (c, f) = self.class_fp(x);
        if let Some(&(m, g)) = self.min.get(c) {
            return (m, f.join(g));
        }
        // The ball is scanned in lexicographic order, so the first cell of
        // the class is its minimum.
        let mut g = Footprint::point(c);
        let mut m = c;
        for y in ball(c, self.r, self.dim) {
            let (cy, h) = self.class_fp(y);
            g = g.join(h);
            if cy == c {
                m = y;
                break;
            }
        }
        self.min.insert(c, (m, g));
        (m, f.join(g))
    }

    /// Class minima of the classes meeting `B_r(v)`, sorted.
    pub fn classes_meeting_ball(&mut self, v: Site, r: i64) -> (Vec<Site>, Footprint) {
        let mut fp = Footprint::point(v);
        let mut out = Vec::new();
        for x in ball(v, r, self.dim) {
            let (m, f) = self.class_min_fp(x);
            fp = fp.join(f);
            out.push(m);
        }
        out.sort();
        out.dedup();
        (out, fp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionSample {
    pub window: Window,
    pub r: i64,
    /// Centre of the class of each window site.
    pub class_id: Vec<Site>,
    /// `M_v`, the lexicographic minimum of the class of `v`.
    pub class_min: Vec<Site>,
    /// Centres in the window with their `W` values, in increasing `W`.
    pub trace: Vec<(Site, f64)>,
    /// Largest number of classes met by a radius-`r` ball centred in the window.
    pub max_classes_per_ball: usize,
    pub max_class_size: usize,
}

/// Samples the partition on a window and checks, exactly, that the centres
/// form an `(r, r)`-net and that every `r`-ball centred in the window meets
/// at most `5^d` classes.
pub fn sample_partition(dim: u8, r: i64, window: Window, seed: u64) -> Result<PartitionSample> {
    if window.dim != dim {
        return Err(Error::InvalidArgument("window dimension differs from d".into()));
    }
    let mut net = Net::new(dim, r, seed, 0)?;
    let sites = window.sites();
    let mut class_id = Vec::with_capacity(sites.len());
    let mut class_min = Vec::with_capacity(sites.len());
    let mut trace = Vec::new();
    let mut max_classes_per_ball = 0;
    let mut max_class_size = 0;
    let bound = 5usize.pow(dim as u32);
    for &v in &sites {
        let c = net.class_of(v);
        if c.dist(v) > r {
            return Err(Error::Invariant(format!("{v} is farther than {r} from its centre {c}")));
        }
        let cells = net.cells(c);
        if !cells.contains(&v) {
            return Err(Error::Invariant(format!("{v} missing from the cells of {c}")));
        }
        max_class_size = max_class_size.max(cells.len());
        class_id.push(c);
        class_min.push(cells[0]);
        if net.is_centre(v) {
            trace.push((v, net.w(v)));
            for u in ball(v, r, dim) {
                if u != v && net.is_centre(u) {
                    return Err(Error::Invariant(format!("centres {u} and {v} within distance {r}")));
                }
            }
        }
        let (meet, _) = net.classes_meeting_ball(v, r);
        if meet.len() > bound {
            return Err(Error::Invariant(format!("ball around {v} meets {} classes", meet.len())));
        }
        max_classes_per_ball = max_classes_per_ball.max(meet.len());
    }
    trace.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    Ok(PartitionSample { window, r, class_id, class_min, trace, max_classes_per_ball, max_class_size })
}
