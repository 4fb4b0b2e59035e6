//! Finitary coding of 1D pair intensities `p_{{0,n}} = p_n`.
//!
//! Pairs are grouped into levels `I_k = [N_k, N_{k+1})`. At level `k` every
//! site `i` owns the pairs `{i, i+n}`, `n ∈ I_k`, and couples them
//! monotonically with independent gates `W_{i,0} ~ Bern(min(1, 2k⁻²))` and
//! `W_{i+n,n} ~ Bern(min(1, k²p_n))`. A site whose own gates are all closed
//! outputs 0 without looking anywhere else.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{IntensitySpec, PairTail, ThresholdVariant};
use crate::lattice::Window;
use crate::rng::{self, tag};

const TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Level {
    pub k: u32,
    /// `I_k = [lo, hi)`.
    pub lo: u64,
    pub hi: u64,
}

impl Level {
    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn offsets(&self) -> std::ops::Range<u64> {
        self.lo..self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelPlan {
    /// `N_1, …, N_{k_max+1}`.
    pub thresholds: Vec<u64>,
    /// Offsets below `N_1`, emitted as a block factor.
    pub block: Level,
    pub levels: Vec<Level>,
    /// Offsets from `N_{k_max+1}` on are sampled directly.
    pub correction_from: u64,
    /// `Σ_{n ≥ N_{k_max+1}} p_n`.
    pub residual: f64,
}

fn pair_tail(spec: &IntensitySpec) -> Result<PairTail> {
    if spec.dimension() != 1 || !spec.orbits().is_empty() {
        return Err(Error::InvalidSpec("pairs coding needs a 1D spec with only a pair tail".into()));
    }
    Ok(spec.pair_tail().cloned().unwrap_or(PairTail::List { start: 1, values: vec![] }))
}

pub fn build_levels(spec: &IntensitySpec, k_max: u32) -> Result<LevelPlan> {
    let tail = pair_tail(spec)?;
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let thresholds = (1..=k_max + 1)
        .map(|k| spec.tail_threshold(k, ThresholdVariant::Pairs).map(|n| n as u64))
        .collect::<Result<Vec<_>>>()?;
    let levels = (0..k_max as usize)
        .map(|i| Level { k: i as u32 + 1, lo: thresholds[i], hi: thresholds[i + 1] })
        .collect();
    let correction_from = thresholds[k_max as usize];
    Ok(LevelPlan {
        block: Level { k: 0, lo: 1, hi: thresholds[0] },
        levels,
        correction_from,
        residual: tail.tail(correction_from),
        thresholds,
    })
}

/// Per-site coupling of the pairs of one level with their gates.
///
/// Coordinates are `0` (site `i` covered by one of its right pairs, plus an
/// independent `Bern(k⁻²)` sprinkle) and `n ∈ I_k` (pair `{i, i+n}` present),
/// exposed in that order. One uniform per coordinate drives both the field
/// and the gate, so `y ≤ w` coordinatewise.
#[derive(Clone, Debug)]
pub struct LevelCoder {
    pub level: Level,
    pub p: Vec<f64>,
    /// Sprinkle density on coordinate 0.
    pub eps0: f64,
    pub t0: f64,
    pub t: Vec<f64>,
    q0: f64,
    /// `Π_{m ≥ n, m ∈ I_k} (1 - p_m)` indexed like `p`.
    suffix: Vec<f64>,
}

impl LevelCoder {
    pub fn new(tail: &PairTail, level: Level) -> LevelCoder {
        let kf = level.k as f64;
        let eps0 = kf.powi(-2);
        let p: Vec<f64> = level.offsets().map(|n| tail.p(n)).collect();
        let mut suffix = vec![1.0; p.len() + 1];
        for i in (0..p.len()).rev() {
            suffix[i] = suffix[i + 1] * (1.0 - p[i]);
        }
        let q0 = 1.0 - (1.0 - eps0) * suffix[0];
        LevelCoder {
            t0: (2.0 * eps0).min(1.0),
            t: p.iter().map(|&pn| (kf * kf * pn).min(1.0)).collect(),
            level,
            p,
            eps0,
            q0,
            suffix,
        }
    }

    pub fn width(&self) -> usize {
        self.p.len()
    }

    /// `P(Y_j = 1 | Y_0 = y0, Y_m = y_m for earlier m)`; index 0 is the
    /// sprinkled coordinate, `j ≥ 1` is offset `lo + j - 1`.
    pub fn conditional(&self, past: &[bool], j: usize) -> f64 {
        if j == 0 {
            return self.q0;
        }
        if !past[0] {
            return 0.0;
        }
        let i = j - 1;
        if past[1..j].iter().any(|&b| b) {
            return self.p[i];
        }
        self.p[i] / (1.0 - (1.0 - self.eps0) * self.suffix[i])
    }

    fn threshold(&self, j: usize) -> f64 {
        if j == 0 {
            self.t0
        } else {
            self.t[j - 1]
        }
    }

    /// Law of `Y` given gates `w` (length `width + 1`), as probabilities over
    /// codes with bit `j` for coordinate `j`. Exhaustive, for small widths.
    pub fn phi_law(&self, w: &[bool]) -> Result<Vec<f64>> {
        let n = self.width() + 1;
        if n > 16 || w.len() != n {
            return Err(Error::CapExceeded(format!("phi law over {n} coordinates")));
        }
        let mut law = vec![0.0; 1 << n];
        for code in 0..1usize << n {
            let y: Vec<bool> = (0..n).map(|j| code >> j & 1 == 1).collect();
            let mut pr = 1.0;
            for j in 0..n {
                let a = self.gated_prob(&y, j, w[j])?;
                pr *= if y[j] { a } else { 1.0 - a };
            }
            law[code] = pr;
        }
        Ok(law)
    }

    fn gated_prob(&self, past: &[bool], j: usize, w: bool) -> Result<f64> {
        if !w {
            return Ok(0.0);
        }
        let q = self.conditional(past, j);
        let t = self.threshold(j);
        if q > t + TOL {
            return Err(Error::Invariant(format!(
                "level {} coordinate {j}: conditional {q} above gate density {t}",
                self.level.k
            )));
        }
        Ok(if t > 0.0 { (q / t).min(1.0) } else { 0.0 })
    }
}

/// Gates and uniforms of one level, addressed by the seed.
struct LevelField<'a> {
    coder: &'a LevelCoder,
    seed: u64,
}

impl LevelField<'_> {
    fn key(&self, i: i64, j: usize) -> [i64; 3] {
        [self.coder.level.k as i64, i, j as i64]
    }

    /// Gate `W_{i,0}` (`j = 0`) or `W_{i,n}` for `n = lo + j - 1`.
    fn gate(&self, i: i64, j: usize) -> bool {
        rng::bernoulli(self.coder.threshold(j), self.seed, tag::GATE, &self.key(i, j))
    }

    /// Runs the coupling of site `i` through coordinate `upto`; returns the
    /// values and the largest offset inspected.
    fn phi(&self, i: i64, upto: usize) -> Result<(Vec<bool>, u64)> {
        let mut y = Vec::with_capacity(upto + 1);
        let mut reach = 0u64;
        for j in 0..=upto {
            let gate_site = if j == 0 { i } else { i + (self.coder.level.lo + j as u64 - 1) as i64 };
            let w = self.gate(gate_site, j);
            reach = reach.max((gate_site - i).unsigned_abs());
            y.push(false);
            let a = self.coder.gated_prob(&y, j, w)?;
            let u = rng::uniform(self.seed, tag::COUPLE, &self.key(i, j));
            y[j] = u < a;
            if j == 0 && !y[0] {
                // Every later coordinate is 0 without inspection.
                y.resize(upto + 1, false);
                break;
            }
        }
        Ok((y, reach))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelOutput {
    pub bits: Vec<bool>,
    pub gate: Vec<bool>,
    /// Largest distance inspected from each site (0 when the gate is closed).
    pub radius: Vec<u64>,
}

/// Emits `X̄^k` on the window.
pub fn code_level(coder: &LevelCoder, window: Window, seed: u64, verify: bool) -> Result<LevelOutput> {
    let n = window.len();
    let mut out = LevelOutput { bits: vec![false; n], gate: vec![false; n], radius: vec![0; n] };
    if coder.level.is_empty() {
        return Ok(out);
    }
    let f = LevelField { coder, seed };
    let width = coder.width();
    for (idx, v) in window.sites().into_iter().enumerate() {
        let i = v.0;
        let own: Vec<bool> = (0..=width).map(|j| f.gate(i, j)).collect();
        let open = own.iter().any(|&g| g);
        out.gate[idx] = open;
        if !open {
            if verify && direct_bit(&f, i)? {
                return Err(Error::Invariant(format!("closed gate at {i} but X̄^{} = 1", coder.level.k)));
            }
            continue;
        }
        let mut bit = false;
        let mut radius = 0u64;
        if own[0] {
            let (y, reach) = f.phi(i, width)?;
            bit |= y[1..].iter().any(|&b| b);
            radius = radius.max(reach);
        }
        for j in 1..=width {
            if !own[j] {
                continue;
            }
            let off = coder.level.lo + j as u64 - 1;
            let (y, reach) = f.phi(i - off as i64, j)?;
            bit |= y[j];
            radius = radius.max(off + reach);
        }
        if verify && bit != direct_bit(&f, i)? {
            return Err(Error::Invariant(format!("gated and ungated outputs differ at {i}")));
        }
        out.bits[idx] = bit;
        out.radius[idx] = radius;
    }
    Ok(out)
}

/// `X̄^k_i` recomputed from the full couplings of every site involved.
fn direct_bit(f: &LevelField, i: i64) -> Result<bool> {
    let width = f.coder.width();
    let (y, _) = f.phi(i, width)?;
    let mut bit = y[1..].iter().any(|&b| b);
    for j in 1..=width {
        let off = (f.coder.level.lo + j as u64 - 1) as i64;
        let (y, _) = f.phi(i - off, width)?;
        bit |= y[j];
    }
    Ok(bit)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CodingReport {
    pub window: Window,
    /// Coding radius over the coded levels and the correction layer.
    pub radius: Vec<u64>,
    /// Range of the level-0 block factor at each site (largest offset of a
    /// present pair below `N_1`).
    pub block_radius: Vec<u64>,
    /// `gate[l][i]`: gate flag of level `levels[l]` at site `i`.
    pub gate: Vec<Vec<bool>>,
    pub level_k: Vec<u32>,
    /// Sites touched by a pair of the correction layer.
    pub corrected: Vec<bool>,
    /// `Σ_{k ≤ k_max} 3k⁻²`.
    pub gate_budget: f64,
    pub residual: f64,
}

/// Direct sampling of the pairs `{i, i+n}` with `n` in `offsets` that meet
/// the window: returns per-site coverage and the largest offset covering it.
fn direct_pairs(tail: &PairTail, offsets: impl Iterator<Item = u64>, window: Window, seed: u64) -> (Vec<bool>, Vec<u64>) {
    let n = window.len();
    let (a, b) = (window.lo.0, window.hi.0);
    let mut bits = vec![false; n];
    let mut reach = vec![0u64; n];
    for off in offsets {
        let p = tail.p(off);
        if p <= 0.0 {
            continue;
        }
        let o = off as i64;
        let mut starts: Vec<i64> = (a..=b).collect();
        starts.extend((a - o..=b - o).filter(|s| *s < a));
        starts.sort_unstable();
        starts.dedup();
        for s in starts {
            if rng::bernoulli(p, seed, tag::CORRECTION, &[s, o]) {
                for c in [s, s + o] {
                    if let Some(idx) = window.index(crate::lattice::Site::line(c)) {
                        bits[idx] = true;
                        reach[idx] = reach[idx].max(off);
                    }
                }
            }
        }
    }
    (bits, reach)
}

/// Largest offset whose tail mass exceeds `budget`.
fn horizon(tail: &PairTail, from: u64, budget: f64) -> u64 {
    if let Some(last) = tail.last() {
        return last + 1;
    }
    let mut n = from;
    while tail.tail(n) > budget {
        n += 1;
    }
    n
}

/// Pairs coding on a 1D window: block factor for offsets below `N_1`,
/// gated couplings for levels `1..=k_max`, and direct sampling above.
#[derive(Clone, Debug)]
pub struct PairsCoder {
    pub plan: LevelPlan,
    tail: PairTail,
    coders: Vec<LevelCoder>,
    correction_to: u64,
}

impl PairsCoder {
    pub fn new(spec: &IntensitySpec, k_max: u32, budget: f64) -> Result<PairsCoder> {
        let plan = build_levels(spec, k_max)?;
        let tail = pair_tail(spec)?;
        let coders = plan.levels.iter().map(|l| LevelCoder::new(&tail, l.clone())).collect();
        let correction_to = horizon(&tail, plan.correction_from, budget).max(plan.correction_from);
        Ok(PairsCoder { plan, tail, coders, correction_to })
    }

    pub fn coders(&self) -> &[LevelCoder] {
        &self.coders
    }

    pub fn code(&self, window: Window, seed: u64, verify: bool) -> Result<(Vec<bool>, CodingReport)> {
        if window.dim != 1 {
            return Err(Error::InvalidArgument("pairs coding runs on 1D windows".into()));
        }
        let (mut bits, block_radius) = direct_pairs(&self.tail, self.plan.block.offsets(), window, seed);
        let mut radius = vec![0u64; window.len()];
        let mut gate = Vec::new();
        for c in &self.coders {
            let out = code_level(c, window, seed, verify)?;
            for i in 0..bits.len() {
                bits[i] |= out.bits[i];
                radius[i] = radius[i].max(out.radius[i]);
            }
            gate.push(out.gate);
        }
        let (corr, reach) = direct_pairs(&self.tail, self.plan.correction_from..self.correction_to, window, seed);
        for i in 0..bits.len() {
            bits[i] |= corr[i];
            radius[i] = radius[i].max(reach[i]);
        }
        let report = CodingReport {
            window,
            radius,
            block_radius,
            gate,
            level_k: self.plan.levels.iter().map(|l| l.k).collect(),
            corrected: corr,
            gate_budget: self.plan.levels.iter().map(|l| 3.0 / (l.k as f64).powi(2)).sum(),
            residual: self.plan.residual,
        };
        Ok((bits, report))
    }
}

pub fn code_pairs(spec: &IntensitySpec, window: Window, seed: u64, k_max: u32) -> Result<(Vec<bool>, CodingReport)> {
    PairsCoder::new(spec, k_max, 1e-12)?.code(window, seed, false)
}

/// Aggregate over replicas.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PairsSummary {
    pub replicas: usize,
    pub sites: usize,
    pub level_k: Vec<u32>,
    pub gate_open: Vec<usize>,
    pub radius_hist: BTreeMap<u64, usize>,
    /// Counts of window configurations (bit `i` for site `i`), windows of at
    /// most 16 sites.
    pub law_counts: Vec<usize>,
    pub gate_budget: f64,
    pub residual: f64,
}

impl PairsSummary {
    pub fn gate_rate(&self, level: usize) -> f64 {
        self.gate_open[level] as f64 / (self.replicas * self.sites) as f64
    }

    /// Empirical `P(R > r)` per site.
    pub fn radius_exceeds(&self, r: u64) -> f64 {
        let total: usize = self.radius_hist.values().sum();
        let above: usize = self.radius_hist.range(r + 1..).map(|(_, c)| c).sum();
        above as f64 / total.max(1) as f64
    }

    pub fn write_radius_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["radius", "count"])?;
        for (r, c) in &self.radius_hist {
            w.write_record([r.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_gates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "gate_rate", "bound"])?;
        for (l, k) in self.level_k.iter().enumerate() {
            w.write_record([k.to_string(), self.gate_rate(l).to_string(), (3.0 / (*k as f64).powi(2)).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_pairs(spec: &IntensitySpec, window: Window, seed: u64, k_max: u32, replicas: usize, verify: bool) -> Result<PairsSummary> {
    let coder = PairsCoder::new(spec, k_max, 1e-12)?;
    let n = window.len();
    let mut s = PairsSummary {
        replicas,
        sites: n,
        level_k: coder.plan.levels.iter().map(|l| l.k).collect(),
        gate_open: vec![0; coder.plan.levels.len()],
        law_counts: if n <= 16 { vec![0; 1 << n] } else { vec![] },
        residual: coder.plan.residual,
        ..Default::default()
    };
    for r in 0..replicas {
        let (bits, rep) = coder.code(window, rng::replica_seed(seed, r as u64), verify)?;
        s.gate_budget = rep.gate_budget;
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

    fn geo() -> IntensitySpec {
        IntensitySpec::pairs(PairTail::geometric(1.0, 0.5)).unwrap()
    }

    #[test]
    fn thresholds() {
        let plan = build_levels(&geo(), 6).unwrap();
        assert_eq!(plan.thresholds, vec![1, 5, 8, 9, 11, 12, 13]);
        assert!(plan.block.is_empty());
        assert_eq!(plan.levels[0], Level { k: 1, lo: 1, hi: 5 });
        let empty = IntensitySpec::pairs(PairTail::List { start: 1, values: vec![] }).unwrap_or(IntensitySpec::empty(1));
        let plan = build_levels(&empty, 4).unwrap();
        assert!(plan.levels.iter().all(|l| l.is_empty()));
    }

    #[test]
    fn conditionals_below_gates() {
        let spec = geo();
        let plan = build_levels(&spec, 6).unwrap();
        let tail = spec.pair_tail().unwrap();
        for l in plan.levels.iter().filter(|l| !l.is_empty()) {
            let c = LevelCoder::new(tail, l.clone());
            let n = c.width() + 1;
            for code in 0..1usize << n {
                let y: Vec<bool> = (0..n).map(|j| code >> j & 1 == 1).collect();
                for j in 0..n {
                    assert!(c.conditional(&y, j) <= c.threshold(j) + TOL);
                }
            }
        }
    }

    #[test]
    fn closed_gate_is_zero_and_verified() {
        let spec = geo();
        let coder = PairsCoder::new(&spec, 5, 1e-12).unwrap();
        let w = Window::interval(0, 9).unwrap();
        for seed in 0..300 {
            let (bits, rep) = coder.code(w, seed, true).unwrap();
            for (l, g) in rep.gate.iter().enumerate() {
                let out = code_level(&coder.coders[l], w, seed, false).unwrap();
                for i in 0..w.len() {
                    if !g[i] {
                        assert!(!out.bits[i]);
                        assert_eq!(out.radius[i], 0);
                    }
                }
            }
            assert_eq!(bits.len(), 10);
        }
    }

    #[test]
    fn single_site_marginal() {
        let spec = geo();
        let w = Window::interval(0, 0).unwrap();
        let s = run_pairs(&spec, w, 11, 4, 100_000, false).unwrap();
        let p: f64 = 1.0 - (1..60).map(|n| (1.0 - 0.5f64.powi(n)).powi(2)).product::<f64>();
        let hat = s.law_counts[1] as f64 / s.replicas as f64;
        assert!((hat - p).abs() < 4.0 * crate::stats::binomial_sigma(p, s.replicas));
    }

    #[test]
    fn empty_spec_radius_zero() {
        let spec = IntensitySpec::empty(1);
        let (bits, rep) = code_pairs(&spec, Window::interval(0, 7).unwrap(), 1, 3).unwrap();
        assert!(bits.iter().all(|b| !b));
        // Level 1 gates are open with probability one but find nothing.
        assert!(rep.radius.iter().all(|&r| r == 0));
    }
}
