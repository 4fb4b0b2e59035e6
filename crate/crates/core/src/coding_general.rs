//! Finitary coding on Z^d (d ≤ 2) by diameter levels.
//!
//! Level `k` holds the sets with `N_k ≤ diam A < N_{k+1}`. The lattice is cut
//! into classes by a greedy-net partition with `r = N_{k+1}`; each class `L`
//! couples the sets with minimum in `L` to gates on `L* = B_r(L)`. A site
//! whose `ℓ` gates are all closed outputs 0 without further inspection.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap as HashMap;
use std::io::Write;

use serde::Serialize;

use crate::coupling::ExposureModel;
use crate::error::{Error, Result};
use crate::intensity::{IntensitySpec, ThresholdVariant};
use crate::lattice::{Site, Window};
use crate::partition::{Footprint, Net};
use crate::rng::{self, tag};

const TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneralLevel {
    pub k: u32,
    /// Diameters in `[lo, hi)`.
    pub lo: i64,
    pub hi: i64,
    /// Partition radius `N_{k+1}`.
    pub r: i64,
    /// Sprinkle density `k⁻²`.
    pub eps: f64,
    /// Gate density `ε + (1 - ε)k⁻²`.
    pub t: f64,
    /// Shapes with minimum at the origin, with probabilities.
    pub shapes: Vec<(Vec<Site>, f64)>,
}

impl GeneralLevel {
    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneralPlan {
    pub dim: u8,
    /// `N_1, …, N_{k_max+1}`.
    pub thresholds: Vec<i64>,
    pub levels: Vec<GeneralLevel>,
    /// Number of gates per site.
    pub ell: usize,
    /// Mass through a site of the sets sampled directly above `k_max`.
    pub residual: f64,
}

pub fn build_general(spec: &IntensitySpec, k_max: u32, ell: Option<usize>, budget: f64) -> Result<GeneralPlan> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let dim = spec.dimension();
    let thresholds = (1..=k_max + 1)
        .map(|k| spec.tail_threshold(k, ThresholdVariant::General))
        .collect::<Result<Vec<_>>>()?;
    let origin = spec.sets_with_min(Site(0, 0), budget)?;
    let mut levels = Vec::new();
    for k in 1..=k_max {
        let (lo, hi) = (thresholds[k as usize - 1], thresholds[k as usize]);
        let eps = (k as f64).powi(-2);
        let shapes = origin
            .sets
            .iter()
            .filter(|a| a.p > 0.0 && (lo..hi).contains(&a.diameter()))
            .map(|a| (a.cells.clone(), a.p))
            .collect();
        levels.push(GeneralLevel { k, lo, hi, r: hi.max(1), eps, t: (eps + (1.0 - eps) * eps).min(1.0), shapes });
    }
    let top = thresholds[k_max as usize];
    let through = spec.translates_through(Site(0, 0), None, budget)?;
    let residual = through.sets.iter().filter(|a| a.diameter() >= top).map(|a| a.p).sum::<f64>() + through.neglected;
    let ell = ell.unwrap_or(5usize.pow(dim as u32));
    if ell == 0 {
        return Err(Error::InvalidArgument("ℓ must be positive".into()));
    }
    Ok(GeneralPlan { dim, thresholds, levels, ell, residual })
}

/// Included sets of one class and the region their computation read.
#[derive(Clone, Debug)]
struct ClassDraw {
    sets: Vec<Vec<Site>>,
    footprint: Footprint,
}

/// Lazy evaluation of one level for one seed.
struct LevelState<'a> {
    level: &'a GeneralLevel,
    ell: usize,
    seed: u64,
    net: Net,
    ranks: HashMap<Site, (Vec<Site>, Footprint)>,
    draws: HashMap<Site, ClassDraw>,
}

impl<'a> LevelState<'a> {
    fn new(level: &'a GeneralLevel, dim: u8, ell: usize, seed: u64) -> Result<LevelState<'a>> {
        Ok(LevelState {
            level,
            ell,
            seed,
            net: Net::new(dim, level.r, seed, level.k as i64)?,
            ranks: HashMap::default(),
            draws: HashMap::default(),
        })
    }

    fn k(&self) -> i64 {
        self.level.k as i64
    }

    /// `W_{v,j}`, `1 ≤ j ≤ ℓ`.
    fn gate(&self, v: Site, j: usize) -> bool {
        rng::bernoulli(self.level.t, self.seed, tag::GATE, &[self.k(), v.0, v.1, j as i64])
    }

    /// `𝓜_v`: minima of the classes `L` with `v ∈ L*`, sorted.
    fn m(&mut self, v: Site) -> (Vec<Site>, Footprint) {
        if let Some(x) = self.ranks.get(&v) {
            return x.clone();
        }
        let x = self.net.classes_meeting_ball(v, self.level.r);
        self.ranks.insert(v, x.clone());
        x
    }

    /// `W^u_v` for the class with minimum `u`.
    fn class_gate(&mut self, u: Site, v: Site) -> Result<(bool, Footprint)> {
        let (m, fp) = self.m(v);
        let j = m.binary_search(&u).map_err(|_| Error::Invariant(format!("class {u} does not reach {v}")))? + 1;
        if j > self.ell {
            return Err(Error::Invariant(format!("{} classes meet the ball around {v}, ℓ = {}", m.len(), self.ell)));
        }
        Ok((self.gate(v, j), fp))
    }

    /// `φ_L(U_u, W^u)` for the class with centre `c`.
    fn draw(&mut self, c: Site) -> Result<ClassDraw> {
        if let Some(d) = self.draws.get(&c) {
            return Ok(d.clone());
        }
        let (cells, mut fp) = self.net.cells_fp(c);
        let u = cells[0];
        let mut family: Vec<(Vec<Site>, f64, Site, usize)> = Vec::new();
        for &x in &cells {
            for (s, (shape, p)) in self.level.shapes.iter().enumerate() {
                family.push((shape.iter().map(|&y| y.add(x)).collect(), *p, x, s));
            }
        }
        let mut covered: Vec<Site> = family.iter().flat_map(|f| f.0.iter().copied()).collect();
        covered.sort();
        covered.dedup();
        let index: HashMap<Site, usize> = covered.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let sets: Vec<(Vec<usize>, f64)> = family.iter().map(|f| (f.0.iter().map(|s| index[s]).collect(), f.1)).collect();
        let model = ExposureModel::new(vec![self.level.eps; covered.len()], sets)?;
        let mut past: Vec<Option<bool>> = vec![None; covered.len()];
        for (j, &w) in covered.iter().enumerate() {
            let q = model.conditional(&past, j)?;
            if q > self.level.t + TOL {
                return Err(Error::Invariant(format!(
                    "level {}: conditional {q} above gate density {} at {w}",
                    self.level.k, self.level.t
                )));
            }
            // The uniform is drawn first; the gate is read only when it matters.
            let y = q > 0.0 && rng::uniform(self.seed, tag::COUPLE, &[self.k(), u.0, u.1, w.0, w.1]) < q / self.level.t && {
                let (g, f) = self.class_gate(u, w)?;
                fp = fp.join(f);
                g
            };
            past[j] = Some(y);
        }
        let y: Vec<bool> = past.into_iter().map(|b| b.unwrap()).collect();
        let k = self.k();
        let seed = self.seed;
        let inc = model.sample_sets_given(&y, |a| {
            let (_, _, x, s) = &family[a];
            rng::uniform(seed, tag::SEQ, &[k, x.0, x.1, *s as i64])
        })?;
        let sets = family.into_iter().zip(inc).filter(|(_, i)| *i).map(|(f, _)| f.0).collect();
        let d = ClassDraw { sets, footprint: fp };
        self.draws.insert(c, d.clone());
        Ok(d)
    }

    /// At `k = 1` the sprinkle has density 1, every gate is open and the
    /// class coupling reduces to independent draws of the sets, so the sets
    /// through `v` are read directly.
    fn site_unsprinkled(&self, v: Site) -> (bool, bool, u64) {
        let mut bit = false;
        let mut fp = Footprint::point(v);
        for (s, (shape, p)) in self.level.shapes.iter().enumerate() {
            for &c in shape {
                let x = v.sub(c);
                for &y in shape {
                    fp = fp.join(Footprint::point(y.add(x)));
                }
                bit |= rng::uniform(self.seed, tag::SEQ, &[self.k(), x.0, x.1, s as i64]) < *p;
            }
        }
        (bit, true, fp.reach(v))
    }

    /// `(X̄^k_v, gate flag, radius)`.
    fn site(&mut self, v: Site, verify: bool) -> Result<(bool, bool, u64)> {
        if self.level.t >= 1.0 {
            return Ok(self.site_unsprinkled(v));
        }
        let open = (1..=self.ell).any(|j| self.gate(v, j));
        if !open && !verify {
            return Ok((false, false, 0));
        }
        let (m, mut fp) = self.m(v);
        let mut bit = false;
        for &u in &m {
            let (g, _) = self.class_gate(u, v)?;
            if !g && !verify {
                continue;
            }
            let c = self.net.class_of(u);
            let d = self.draw(c)?;
            fp = fp.join(d.footprint);
            let hit = d.sets.iter().any(|a| a.contains(&v));
            if hit && !g {
                return Err(Error::Invariant(format!("closed gate of class {u} at {v} but a set covers it")));
            }
            bit |= hit;
        }
        if !open {
            if bit {
                return Err(Error::Invariant(format!("all gates closed at {v} but X̄^{} = 1", self.level.k)));
            }
            return Ok((false, false, 0));
        }
        Ok((bit, true, fp.reach(v)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelOutput {
    pub bits: Vec<bool>,
    pub gate: Vec<bool>,
    pub radius: Vec<u64>,
}

pub fn code_level_general(plan: &GeneralPlan, level: usize, window: Window, seed: u64, verify: bool) -> Result<LevelOutput> {
    let lv = &plan.levels[level];
    let n = window.len();
    let mut out = LevelOutput { bits: vec![false; n], gate: vec![false; n], radius: vec![0; n] };
    if lv.is_empty() {
        return Ok(out);
    }
    let mut st = LevelState::new(lv, plan.dim, plan.ell, seed)?;
    for (i, v) in window.sites().into_iter().enumerate() {
        let (b, g, r) = st.site(v, verify)?;
        out.bits[i] = b;
        out.gate[i] = g;
        out.radius[i] = r;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneralCodingReport {
    pub window: Window,
    pub radius: Vec<u64>,
    pub gate: Vec<Vec<bool>>,
    pub level_k: Vec<u32>,
    pub ell: usize,
    /// Sites covered by a directly sampled set above `k_max`.
    pub corrected: Vec<bool>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct GeneralCoder {
    pub plan: GeneralPlan,
    spec: IntensitySpec,
    budget: f64,
}

impl GeneralCoder {
    pub fn new(spec: &IntensitySpec, k_max: u32, ell: Option<usize>, budget: f64) -> Result<GeneralCoder> {
        Ok(GeneralCoder { plan: build_general(spec, k_max, ell, budget)?, spec: spec.clone(), budget })
    }

    pub fn code(&self, window: Window, seed: u64, verify: bool) -> Result<(Vec<bool>, GeneralCodingReport)> {
        if window.dim != self.plan.dim {
            return Err(Error::InvalidArgument("window dimension differs from the spec".into()));
        }
        let n = window.len();
        let sites = window.sites();
        let low = self.plan.thresholds[0];
        let top = *self.plan.thresholds.last().unwrap();
        let mut bits = vec![false; n];
        let mut radius = vec![0u64; n];
        let mut corrected = vec![false; n];
        // Level 0 and everything above k_max: direct sampling.
        for a in self.spec.sets_meeting(&sites, self.budget)?.sets {
            let d = a.diameter();
            if d >= low && d < top {
                continue;
            }
            if !rng::bernoulli(a.p, seed, tag::SET, &a.rng_key()) {
                continue;
            }
            for c in &a.cells {
                if let Some(i) = window.index(*c) {
                    bits[i] = true;
                    if d >= top {
                        corrected[i] = true;
                        radius[i] = radius[i].max(d as u64);
                    }
                }
            }
        }
        let mut gate = Vec::new();
        for l in 0..self.plan.levels.len() {
            let out = code_level_general(&self.plan, l, window, seed, verify)?;
            for i in 0..n {
                bits[i] |= out.bits[i];
                radius[i] = radius[i].max(out.radius[i]);
            }
            gate.push(out.gate);
        }
        let report = GeneralCodingReport {
            window,
            radius,
            gate,
            level_k: self.plan.levels.iter().map(|l| l.k).collect(),
            ell: self.plan.ell,
            corrected,
            residual: self.plan.residual,
        };
        Ok((bits, report))
    }
}

pub fn code_general(spec: &IntensitySpec, window: Window, seed: u64, k_max: u32) -> Result<(Vec<bool>, GeneralCodingReport)> {
    GeneralCoder::new(spec, k_max, None, 1e-12)?.code(window, seed, false)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GeneralSummary {
    pub replicas: usize,
    pub sites: usize,
    pub level_k: Vec<u32>,
    pub gate_open: Vec<usize>,
    /// `1 - (1 - t_k)^ℓ` per level.
    pub gate_bound: Vec<f64>,
    pub radius_hist: BTreeMap<u64, usize>,
    pub law_counts: Vec<usize>,
}

impl GeneralSummary {
    pub fn gate_rate(&self, level: usize) -> f64 {
        self.gate_open[level] as f64 / (self.replicas * self.sites) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "gate_rate", "bound"])?;
        for (l, k) in self.level_k.iter().enumerate() {
            w.write_record([k.to_string(), self.gate_rate(l).to_string(), self.gate_bound[l].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_general(spec: &IntensitySpec, window: Window, seed: u64, k_max: u32, replicas: usize, verify: bool) -> Result<GeneralSummary> {
    let coder = GeneralCoder::new(spec, k_max, None, 1e-12)?;
    let n = window.len();
    let mut s = GeneralSummary {
        replicas,
        sites: n,
        level_k: coder.plan.levels.iter().map(|l| l.k).collect(),
        gate_open: vec![0; coder.plan.levels.len()],
        gate_bound: coder.plan.levels.iter().map(|l| 1.0 - (1.0 - l.t).powi(coder.plan.ell as i32)).collect(),
        law_counts: if n <= 16 { vec![0; 1 << n] } else { vec![] },
        ..Default::default()
    };
    for r in 0..replicas {
        let (bits, rep) = coder.code(window, rng::replica_seed(seed, r as u64), verify)?;
        for (l, g) in rep.gate.iter().enumerate() {
            s.gate_open[l] += g.iter().filter(|&&b| b).count();
        }
        for &rad in &rep.radius {
            *s.radius_hist.entry(rad).or_insert(0) += 1;
        }
        if n <= 16 {
            let code = bits.iter().enumerate().fold(0, |a, (i, &b)| a | (b as usize) << i);
            s.law_counts[code] += 1;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::ShapeOrbit;

    pub fn spec2d() -> IntensitySpec {
        let o = |c: &[(i64, i64)], p| ShapeOrbit::new(&c.iter().map(|&(x, y)| Site(x, y)).collect::<Vec<_>>(), p).unwrap();
        IntensitySpec::new(
            2,
            vec![
                o(&[(0, 0)], 0.2),
                o(&[(0, 0), (1, 0)], 0.02),
                o(&[(0, 0), (0, 1)], 0.02),
                o(&[(0, 0), (2, 2)], 0.001),
                o(&[(0, 0), (3, 0)], 0.0002),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn plan_levels() {
        let p = build_general(&spec2d(), 7, None, 0.0).unwrap();
        assert_eq!(p.thresholds, vec![0, 2, 2, 2, 3, 3, 3, 4]);
        let nonempty: Vec<u32> = p.levels.iter().filter(|l| !l.is_empty()).map(|l| l.k).collect();
        assert_eq!(nonempty, vec![1, 4, 7]);
        assert_eq!(p.ell, 25);
        assert_eq!(p.residual, 0.0);
    }

    #[test]
    fn verified_paths() {
        let coder = GeneralCoder::new(&spec2d(), 7, None, 0.0).unwrap();
        for seed in 0..30 {
            coder.code(Window::rect(0, 0, 3, 3).unwrap(), seed, true).unwrap();
        }
    }

    #[test]
    fn empty_spec() {
        let (bits, rep) = code_general(&IntensitySpec::empty(2), Window::rect(0, 0, 3, 3).unwrap(), 4, 3).unwrap();
        assert!(bits.iter().all(|b| !b));
        assert!(rep.radius.iter().all(|&r| r == 0));
    }

    #[test]
    fn single_site_marginal_1d() {
        let spec = IntensitySpec::one_d(vec![
            ShapeOrbit::line(&[0], 0.1).unwrap(),
            ShapeOrbit::line(&[0, 1], 0.05).unwrap(),
            ShapeOrbit::line(&[0, 3], 0.01).unwrap(),
        ])
        .unwrap();
        let s = run_general(&spec, Window::interval(0, 0).unwrap(), 2, 8, 40_000, false).unwrap();
        let p = 1.0 - 0.9 * 0.95f64.powi(2) * 0.99f64.powi(2);
        let hat = s.law_counts[1] as f64 / s.replicas as f64;
        assert!((hat - p).abs() < 4.0 * crate::stats::binomial_sigma(p, s.replicas), "{hat} vs {p}");
    }
}
