//! Sequential exposure of `Y = X̄ ∨ ξ` on a finite list of coordinates.
//!
//! Coordinates are exposed in index order. The conditional probability of
//! `Y_j = 1` given the exposed past is computed exactly:
//!
//! ```text
//! P(Y_O ≡ 1 | Y_Z ≡ 0) = Σ_{T ⊆ O} (-1)^{|T|} Π_{v ∈ T} (1-ε_v) Π_{A live, A ∩ T ≠ ∅} (1-p_A)
//! ```
//!
//! where the live sets are those avoiding `Z`. The sum factorizes over the
//! connected components of `O` under the live sets, so only components
//! touched by the sets through `j` enter the ratio.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Largest component handled by inclusion-exclusion.
pub const COMPONENT_CAP: usize = 24;

#[derive(Clone, Debug)]
pub struct ExposureModel {
    eps: Vec<f64>,
    /// Coordinates of each set (sorted, deduplicated).
    sets: Vec<Vec<usize>>,
    probs: Vec<f64>,
    /// Sets containing each coordinate.
    cover: Vec<Vec<usize>>,
}

impl ExposureModel {
    /// `sets` are given by their coordinates; coordinates outside
    /// `0..eps.len()` are not allowed.
    pub fn new(eps: Vec<f64>, sets: Vec<(Vec<usize>, f64)>) -> Result<ExposureModel> {
        let n = eps.len();
        if eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidArgument("sprinkling density outside [0,1]".into()));
        }
        let mut cover = vec![Vec::new(); n];
        let mut cells = Vec::new();
        let mut probs = Vec::new();
        for (mut c, p) in sets {
            c.sort_unstable();
            c.dedup();
            if c.is_empty() || p == 0.0 {
                continue;
            }
            if c.iter().any(|&x| x >= n) {
                return Err(Error::InvalidArgument("set coordinate out of range".into()));
            }
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("set probability {p}")));
            }
            for &x in &c {
                cover[x].push(cells.len());
            }
            cells.push(c);
            probs.push(p);
        }
        Ok(ExposureModel { eps, sets: cells, probs, cover })
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn set_cells(&self, a: usize) -> &[usize] {
        &self.sets[a]
    }

    pub fn set_p(&self, a: usize) -> f64 {
        self.probs[a]
    }

    /// `P(Y_j = 1 | Y_i = y[i] for every exposed i)`. Unexposed coordinates
    /// are `None`.
    pub fn conditional(&self, y: &[Option<bool>], j: usize) -> Result<f64> {
        let live = |a: usize| self.sets[a].iter().all(|&x| y[x] != Some(false));
        let through: Vec<usize> = self.cover[j].iter().copied().filter(|&a| live(a)).collect();
        let keep = (1.0 - self.eps[j]) * through.iter().map(|&a| 1.0 - self.probs[a]).product::<f64>();
        if keep == 0.0 || through.is_empty() {
            return Ok(1.0 - keep);
        }
        let ones = |x: usize| y[x] == Some(true) && self.eps[x] < 1.0;
        let touched = self.components_touching(&through, &ones, &live);
        if touched.is_empty() {
            return Ok(1.0 - keep);
        }
        let before = self.cover_prob(&touched, &live)?;
        let after = self.cover_prob(&touched, &|a: usize| live(a) && !self.sets[a].contains(&j))?;
        if before <= 0.0 {
            return Err(Error::Invariant("conditioning on a null event".into()));
        }
        let q = 1.0 - keep * after / before;
        Ok(q.clamp(0.0, 1.0))
    }

    /// Union of the components of `{x : ones(x)}` (under live sets) that meet
    /// one of `seeds`.
    fn components_touching(&self, seeds: &[usize], ones: &impl Fn(usize) -> bool, live: &impl Fn(usize) -> bool) -> Vec<usize> {
        let mut seen_site: HashMap<usize, ()> = HashMap::new();
        let mut seen_set: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<usize> = Vec::new();
        for &a in seeds {
            seen_set.insert(a, ());
            for &x in &self.sets[a] {
                if ones(x) && seen_site.insert(x, ()).is_none() {
                    stack.push(x);
                }
            }
        }
        let mut out = Vec::new();
        while let Some(x) = stack.pop() {
            out.push(x);
            for &a in &self.cover[x] {
                if !live(a) || seen_set.insert(a, ()).is_some() {
                    continue;
                }
                for &u in &self.sets[a] {
                    if ones(u) && seen_site.insert(u, ()).is_none() {
                        stack.push(u);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// `P(every coordinate of o is covered by ξ or by an allowed set)`, with
    /// disallowed sets treated as absent.
    pub fn cover_prob(&self, o: &[usize], allowed: &impl Fn(usize) -> bool) -> Result<f64> {
        if o.is_empty() {
            return Ok(1.0);
        }
        let mut local: HashMap<usize, usize> = HashMap::with_capacity(o.len());
        for (i, &x) in o.iter().enumerate() {
            local.insert(x, i);
        }
        // Allowed sets meeting o, as masks over local indices.
        let mut masks: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut seen = HashMap::new();
        for &x in o {
            for &a in &self.cover[x] {
                if allowed(a) && seen.insert(a, ()).is_none() {
                    let m: Vec<usize> = self.sets[a].iter().filter_map(|u| local.get(u).copied()).collect();
                    masks.push((m, self.probs[a]));
                }
            }
        }
        // Components by union-find.
        let mut parent: Vec<usize> = (0..o.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (m, _) in &masks {
            for w in m.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut comps: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..o.len() {
            let r = find(&mut parent, i);
            comps.entry(r).or_default().push(i);
        }
        let mut total = 1.0;
        let mut comp_list: Vec<Vec<usize>> = comps.into_values().collect();
        comp_list.sort();
        for comp in comp_list {
            let root = find(&mut parent, comp[0]);
            let mut pos = vec![usize::MAX; o.len()];
            for (k, &i) in comp.iter().enumerate() {
                pos[i] = k;
            }
            let mut groups: HashMap<u64, f64> = HashMap::new();
            for (m, p) in &masks {
                if m.is_empty() || find(&mut parent, m[0]) != root {
                    continue;
                }
                let bits = m.iter().fold(0u64, |b, &i| b | 1 << pos[i]);
                *groups.entry(bits).or_insert(1.0) *= 1.0 - p;
            }
            let eps: Vec<f64> = comp.iter().map(|&i| self.eps[o[i]]).collect();
            total *= cover_component(&eps, groups.into_iter().map(|(m, keep)| (m, 1.0 - keep)).collect())?;
            if total == 0.0 {
                break;
            }
        }
        Ok(total)
    }

    /// Samples the set indicators given a full realization `y`, one set at a
    /// time in index order. `u(a)` supplies the uniform for set `a`.
    pub fn sample_sets_given(&self, y: &[bool], mut u: impl FnMut(usize) -> f64) -> Result<Vec<bool>> {
        let n_sets = self.sets.len();
        let live: Vec<bool> = (0..n_sets).map(|a| self.sets[a].iter().all(|&x| y[x])).collect();
        let mut decided: Vec<Option<bool>> = vec![None; n_sets];
        let mut covered = vec![false; self.len()];
        let mut out = vec![false; n_sets];
        for a in 0..n_sets {
            if !live[a] {
                decided[a] = Some(false);
                continue;
            }
            // Remaining requirement: ones not yet covered by an included set.
            let need = |x: usize| y[x] && !covered[x] && self.eps[x] < 1.0;
            let open = |b: usize| live[b] && decided[b].is_none();
            let touched = self.components_touching(&[a], &need, &open);
            let p = self.probs[a];
            let pr = if touched.is_empty() {
                p
            } else {
                let before = self.cover_prob(&touched, &open)?;
                let rest: Vec<usize> = touched.iter().copied().filter(|x| !self.sets[a].contains(x)).collect();
                let with = self.cover_prob(&rest, &|b: usize| open(b) && b != a)?;
                if before <= 0.0 {
                    return Err(Error::Invariant("conditioning on a null event".into()));
                }
                (p * with / before).clamp(0.0, 1.0)
            };
            let inc = u(a) < pr;
            decided[a] = Some(inc);
            out[a] = inc;
            if inc {
                for &x in &self.sets[a] {
                    covered[x] = true;
                }
            }
        }
        Ok(out)
    }

    /// Law of `Y` implied by the sequential conditionals, by walking every
    /// path (at most 16 coordinates). Used to test the engine.
    pub fn path_law(&self) -> Result<Vec<f64>> {
        let n = self.len();
        if n > 16 {
            return Err(Error::CapExceeded(format!("{n} coordinates")));
        }
        let mut law = vec![0.0; 1 << n];
        let mut y = vec![None; n];
        self.walk(0, 1.0, 0, &mut y, &mut law)?;
        Ok(law)
    }

    fn walk(&self, j: usize, pr: f64, code: usize, y: &mut Vec<Option<bool>>, law: &mut [f64]) -> Result<()> {
        if pr == 0.0 {
            return Ok(());
        }
        if j == self.len() {
            law[code] += pr;
            return Ok(());
        }
        let q = self.conditional(y, j)?;
        y[j] = Some(true);
        self.walk(j + 1, pr * q, code | 1 << j, y, law)?;
        y[j] = Some(false);
        self.walk(j + 1, pr * (1.0 - q), code, y, law)?;
        y[j] = None;
        Ok(())
    }
}

/// `P(all sites covered)` for one component, sites indexed `0..eps.len()`,
/// groups given as `(mask, probability that some set in the group is
/// included)`.
fn cover_component(eps: &[f64], mut groups: Vec<(u64, f64)>) -> Result<f64> {
    let mut alive: u64 = if eps.len() == 64 { u64::MAX } else { (1u64 << eps.len()) - 1 };
    let mut factor = 1.0;
    // Sites with ξ ≡ 1 are always covered.
    for (i, &e) in eps.iter().enumerate() {
        if e >= 1.0 {
            alive &= !(1 << i);
        }
    }
    // A site without sprinkling that only one group can cover forces that
    // group; factoring it out avoids cancellation in the alternating sum.
    loop {
        groups.retain(|g| g.0 & alive != 0);
        for g in &mut groups {
            g.0 &= alive;
        }
        let mut forced = None;
        for i in 0..eps.len() {
            if alive >> i & 1 == 0 || eps[i] > 0.0 {
                continue;
            }
            let mut it = groups.iter().enumerate().filter(|(_, g)| g.0 >> i & 1 == 1);
            match (it.next(), it.next()) {
                (None, _) => return Ok(0.0),
                (Some((gi, _)), None) => {
                    forced = Some(gi);
                    break;
                }
                _ => {}
            }
        }
        match forced {
            Some(gi) => {
                let (m, p) = groups.swap_remove(gi);
                factor *= p;
                alive &= !m;
            }
            None => break,
        }
    }
    if alive == 0 {
        return Ok(factor);
    }
    // Re-index the surviving sites and merge identical masks.
    let idx: Vec<usize> = (0..eps.len()).filter(|&i| alive >> i & 1 == 1).collect();
    let c = idx.len();
    if c > COMPONENT_CAP {
        return Err(Error::CapExceeded(format!("component of {c} sites")));
    }
    let compress = |m: u64| idx.iter().enumerate().fold(0usize, |b, (k, &i)| b | (((m >> i & 1) as usize) << k));
    let size = 1usize << c;
    // h[S] = Π over groups with mask ⊆ S of (1 - p).
    let mut h = vec![1.0f64; size];
    let mut all_keep = 1.0;
    for &(m, p) in &groups {
        h[compress(m)] *= 1.0 - p;
        all_keep *= 1.0 - p;
    }
    for b in 0..c {
        for s in 0..size {
            if s >> b & 1 == 1 {
                h[s] *= h[s ^ (1 << b)];
            }
        }
    }
    let full = size - 1;
    let e: Vec<f64> = idx.iter().map(|&i| 1.0 - eps[i]).collect();
    let mut sum = 0.0;
    for t in 0..size {
        // Π over groups meeting T of (1 - p) = all_keep / h[complement of T].
        let hc = h[full ^ t];
        let meet = if hc > 0.0 { all_keep / hc } else { 0.0 };
        let mut term = meet;
        for (k, ek) in e.iter().enumerate() {
            if t >> k & 1 == 1 {
                term *= ek;
            }
        }
        if t.count_ones() % 2 == 1 {
            sum -= term;
        } else {
            sum += term;
        }
    }
    Ok(factor * sum.max(0.0))
}
