//! Domination of `Y = X̄ ∨ ξ(ε)` by independent Bernoulli fields.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::coupling::ExposureModel;
use crate::error::{Error, Result};
use crate::intensity::IntensitySpec;
use crate::lattice::{self, Site, Window};
use crate::rng::{self, tag};

/// Per-site sprinkling densities `ε_v ∈ (0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Epsilon {
    Uniform(f64),
    Map { values: BTreeMap<Site, f64>, default: f64 },
}

impl Epsilon {
    pub fn at(&self, v: Site) -> f64 {
        match self {
            Epsilon::Uniform(e) => *e,
            Epsilon::Map { values, default } => values.get(&v).copied().unwrap_or(*default),
        }
    }

    fn floor(&self) -> f64 {
        match self {
            Epsilon::Uniform(e) => *e,
            Epsilon::Map { values, default } => values.values().copied().fold(*default, f64::min),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |e: f64| e > 0.0 && e <= 1.0;
        let good = match self {
            Epsilon::Uniform(e) => ok(*e),
            Epsilon::Map { values, default } => ok(*default) && values.values().all(|&e| ok(e)),
        };
        if good {
            Ok(())
        } else {
            Err(Error::InvalidArgument("ε must lie in (0, 1]".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaProfile {
    pub sites: Vec<Site>,
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
    /// Product over `u ≺ v` only (lexicographic order) instead of `u ≠ v`.
    pub sequential: bool,
    /// Sites where the bound is `≥ 1` and says nothing.
    pub vacuous: Vec<bool>,
}

impl DeltaProfile {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "epsilon", "delta", "vacuous"])?;
        for i in 0..self.sites.len() {
            w.write_record([
                self.sites[i].0.to_string(),
                self.sites[i].1.to_string(),
                self.epsilon[i].to_string(),
                self.delta[i].to_string(),
                (self.vacuous[i] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `δ_v = ε_v + (1 - ε_v) Σ_{A ∋ v} p_A Π_{u ∈ A, u ≠ v} ε_u⁻¹`, or with the
/// product restricted to `u ≺ v` in the sequential variant. Truncated tail
/// pairs are accounted for by adding `neglected / inf ε` to the sum.
pub fn delta_bound(spec: &IntensitySpec, sites: &[Site], eps: &Epsilon, sequential: bool, budget: f64) -> Result<DeltaProfile> {
    eps.validate()?;
    let mut delta = Vec::with_capacity(sites.len());
    let mut epsilon = Vec::with_capacity(sites.len());
    for &v in sites {
        let e = spec.translates_through(v, None, budget)?;
        let mut sum = 0.0;
        for a in &e.sets {
            let f: f64 = a
                .cells
                .iter()
                .filter(|&&u| u != v && (!sequential || u < v))
                .map(|&u| 1.0 / eps.at(u))
                .product();
            sum += a.p * f;
        }
        sum += e.neglected / eps.floor();
        if !sum.is_finite() {
            return Err(Error::Divergent(format!("Σ p_A Π ε⁻¹ at {v}")));
        }
        let ev = eps.at(v);
        epsilon.push(ev);
        delta.push(ev + (1.0 - ev) * sum);
    }
    let vacuous = delta.iter().map(|&d| d >= 1.0).collect();
    Ok(DeltaProfile { sites: sites.to_vec(), epsilon, delta, sequential, vacuous })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingSample {
    pub y: Vec<bool>,
    pub z: Vec<bool>,
    /// Conditional probability of `Y_v = 1` given the exposed past.
    pub q: Vec<f64>,
}

/// Sequential monotone coupling of `Y` and an independent Bernoulli(`δ`)
/// field on a window: one uniform per site sets `y_v = 1{u < q_v}` and
/// `z_v = 1{u < δ_v}`.
#[derive(Clone, Debug)]
pub struct MonotoneCoupler {
    pub sites: Vec<Site>,
    pub delta: DeltaProfile,
    model: ExposureModel,
    pub neglected: f64,
}

impl MonotoneCoupler {
    pub fn new(spec: &IntensitySpec, window: Window, eps: &Epsilon, sequential: bool, budget: f64) -> Result<MonotoneCoupler> {
        let sites = window.sites();
        let delta = delta_bound(spec, &sites, eps, sequential, budget)?;
        let e = spec.sets_meeting(&sites, budget)?;
        let sets = e
            .sets
            .iter()
            .map(|a| {
                let m = hit_mask_vec(a, &window);
                (m, a.p)
            })
            .collect();
        let model = ExposureModel::new(delta.epsilon.clone(), sets)?;
        Ok(MonotoneCoupler { sites, delta, model, neglected: e.neglected })
    }

    pub fn sample(&self, seed: u64) -> Result<CouplingSample> {
        let n = self.sites.len();
        let mut past = vec![None; n];
        let mut out = CouplingSample { y: vec![false; n], z: vec![false; n], q: vec![0.0; n] };
        for j in 0..n {
            let q = self.model.conditional(&past, j)?;
            let d = self.delta.delta[j];
            if q > d + 1e-12 {
                return Err(Error::Invariant(format!(
                    "P(Y=1 | past) = {q} exceeds δ = {d} at {}",
                    self.sites[j]
                )));
            }
            let v = self.sites[j];
            let u = rng::uniform(seed, tag::COUPLE, &[v.0, v.1]);
            out.q[j] = q;
            out.y[j] = u < q;
            out.z[j] = u < d;
            if out.y[j] && !out.z[j] {
                return Err(Error::Invariant(format!("y > z at {v}")));
            }
            past[j] = Some(out.y[j]);
        }
        Ok(out)
    }

    pub fn model(&self) -> &ExposureModel {
        &self.model
    }
}

fn hit_mask_vec(a: &crate::intensity::ConcreteSet, window: &Window) -> Vec<usize> {
    a.cells.iter().filter_map(|c| window.index(*c)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CouplingRun {
    pub samples: usize,
    pub exposures: usize,
    pub y_le_z: usize,
    pub max_q_minus_delta: f64,
    /// Frequency of each configuration of `y` (little-endian code), for
    /// windows of at most 16 sites.
    pub y_counts: Vec<usize>,
}

/// Runs `n_samples` independent couplings and aggregates them.
pub fn sample_monotone_coupling(
    spec: &IntensitySpec,
    window: Window,
    eps: &Epsilon,
    sequential: bool,
    seed: u64,
    n_samples: usize,
) -> Result<CouplingRun> {
    let c = MonotoneCoupler::new(spec, window, eps, sequential, 1e-12)?;
    let n = c.sites.len();
    let mut run = CouplingRun {
        max_q_minus_delta: f64::NEG_INFINITY,
        y_counts: if n <= 16 { vec![0; 1 << n] } else { vec![] },
        ..Default::default()
    };
    for r in 0..n_samples {
        let s = c.sample(rng::replica_seed(seed, r as u64))?;
        run.samples += 1;
        run.exposures += n;
        run.y_le_z += s.y.iter().zip(&s.z).filter(|(y, z)| !**y || **z).count();
        for j in 0..n {
            run.max_q_minus_delta = run.max_q_minus_delta.max(s.q[j] - c.delta.delta[j]);
        }
        if n <= 16 {
            let code = s.y.iter().enumerate().fold(0, |a, (i, &b)| a | (b as usize) << i);
            run.y_counts[code] += 1;
        }
    }
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IidDensity {
    /// Sets of diameter below `split` form the bounded piece.
    pub split: i64,
    pub q_bounded: f64,
    pub q_unbounded: f64,
    pub tail_sum: f64,
    pub density: f64,
}

/// Density of an IID field dominating X̄: sets with `diam < N` are split
/// evenly over their sites (`p_A^{1/|A|}` per site), the rest is handled by
/// the sprinkling bound with `ε = e^{-λ}`.
pub fn dominating_iid_density(spec: &IntensitySpec, lambda: f64) -> Result<IidDensity> {
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument("λ must be positive".into()));
    }
    if !spec.moment_sum(lambda, crate::intensity::Weight::Size)?.is_finite() {
        return Err(Error::Divergent(format!("no exponential moment at λ = {lambda}")));
    }
    let el = lambda.exp();
    let tail = |n: i64| -> f64 {
        let mut s: f64 = spec
            .orbits()
            .iter()
            .filter(|o| o.diameter() >= n)
            .map(|o| o.size() as f64 * o.p() * el.powi(o.size() as i32))
            .sum();
        if let Some(t) = spec.pair_tail() {
            s += 2.0 * el * el * t.tail(n.max(1) as u64);
        }
        s
    };
    let mut split = 0i64;
    while tail(split) > 1.0 {
        split += 1;
    }
    // Bounded piece: every set through 0 with diam < N, once per site it covers.
    let mut keep = 1.0;
    for o in spec.orbits() {
        if o.diameter() < split {
            keep *= (1.0 - o.p().powf(1.0 / o.size() as f64)).powi(o.size() as i32);
        }
    }
    if let Some(t) = spec.pair_tail() {
        for n in t.start()..split.max(0) as u64 {
            keep *= (1.0 - t.p(n).sqrt()).powi(2);
        }
    }
    let q_bounded = 1.0 - keep;
    let tail_sum = tail(split);
    let e = 1.0 / el;
    let q_unbounded = e + e * (1.0 - e) * tail_sum;
    let density = 1.0 - (1.0 - q_bounded) * (1.0 - q_unbounded);
    Ok(IidDensity { split, q_bounded, q_unbounded, tail_sum, density })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessReport {
    pub n: usize,
    pub beta: f64,
    pub side: i64,
    pub dim: u8,
    pub b: Vec<Site>,
    pub d: Vec<Site>,
    /// `[N]^d ∖ D`.
    pub s: Vec<Site>,
    /// `Σ_{v ∈ [N]^d} P(v ∉ Y_B)`.
    pub expected_uncovered: f64,
    /// Union-bound lower estimate of `P([N]^d ∖ Y_B ⊆ D)`.
    pub cover_bound: f64,
    /// `p_n = Σ_{A ∋ 0, |A| = n} p_A`.
    pub p_n: f64,
    /// `p_n / (n + p_n)`.
    pub pz_bound: f64,
    /// `P(Z_0 ≠ ∅)` computed exactly.
    pub z0_exact: f64,
    /// `cover_bound · pz_bound^{|B|}`, a lower bound on `P(X̄_S ≡ 1)`.
    pub bound: f64,
    /// Same with the exact `P(Z_0 ≠ ∅)`.
    pub bound_exact_z: f64,
    pub b_within_allowance: bool,
    pub d_within_allowance: bool,
}

impl WitnessReport {
    /// `bound^{1/|S|}`.
    pub fn per_site(&self) -> f64 {
        if self.s.is_empty() {
            return 1.0;
        }
        self.bound.powf(1.0 / self.s.len() as f64)
    }

    pub fn per_site_exact_z(&self) -> f64 {
        if self.s.is_empty() {
            return 1.0;
        }
        self.bound_exact_z.powf(1.0 / self.s.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["role", "x", "y"])?;
        for (role, list) in [("B", &self.b), ("D", &self.d)] {
            for s in list {
                w.write_record([role.to_string(), s.0.to_string(), s.1.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Randomized search for a set `S = [N]^d ∖ D` with an explicit lower bound
/// on `P(X̄_S ≡ 1)`, following the covering argument: random centres `B`,
/// sets `Y_b` drawn proportionally to `p_A` among size-`n` sets with
/// coordinatewise minimum `b`, and `D` the sites least likely covered.
pub fn witness_search(spec: &IntensitySpec, n: usize, beta: f64, side: i64, seed: u64, n_trials: usize) -> Result<WitnessReport> {
    if beta < 10.0 {
        return Err(Error::InvalidArgument("β must be at least 10".into()));
    }
    if side < 1 || n_trials == 0 {
        return Err(Error::InvalidArgument("need N ≥ 1 and at least one trial".into()));
    }
    let dim = spec.dimension();
    let flat = spec.flatten_tail()?;
    // Size-n shapes placed with coordinatewise minimum at the origin.
    let mut shapes: Vec<(Vec<Site>, f64)> = Vec::new();
    for o in flat.orbits().iter().filter(|o| o.size() == n && o.p() > 0.0) {
        let (lo, _) = lattice::bounding_box(o.cells());
        shapes.push((o.cells().iter().map(|c| c.sub(lo)).collect(), o.p()));
    }
    if shapes.is_empty() {
        return Err(Error::InvalidArgument(format!("no sets of size {n} with positive probability")));
    }
    let mass: f64 = shapes.iter().map(|s| s.1).sum();
    let p_n = n as f64 * mass;
    let pz_bound = p_n / (n as f64 + p_n);
    let z0_exact = 1.0 - shapes.iter().map(|s| 1.0 - s.1).product::<f64>();

    let window = if dim == 1 { Window::interval(0, side - 1)? } else { Window::rect(0, 0, side, side)? };
    let cube = window.sites();
    let volume = cube.len() as f64;
    // P(v ∈ Y_b) depends on v - b only.
    let mut hit: std::collections::HashMap<Site, f64> = std::collections::HashMap::new();
    for (cells, p) in &shapes {
        for c in cells {
            *hit.entry(*c).or_insert(0.0) += p / mass;
        }
    }
    let density = (2.0 * beta / n as f64).min(1.0);
    let b_allow = 8.0 * beta * volume / n as f64;
    let d_allow = (8.0 * (-beta).exp() * volume).floor() as usize;

    let mut best: Option<WitnessReport> = None;
    for trial in 0..n_trials {
        let b: Vec<Site> = cube
            .iter()
            .copied()
            .filter(|s| rng::bernoulli(density, seed, tag::WITNESS, &[trial as i64, s.0, s.1]))
            .collect();
        let miss: Vec<f64> = cube
            .iter()
            .map(|&v| {
                b.iter()
                    .map(|&c| 1.0 - hit.get(&v.sub(c)).copied().unwrap_or(0.0))
                    .product()
            })
            .collect();
        let expected_uncovered: f64 = miss.iter().sum();
        let mut order: Vec<usize> = (0..cube.len()).collect();
        order.sort_by(|&i, &j| miss[j].partial_cmp(&miss[i]).unwrap().then(i.cmp(&j)));
        let mut in_d = vec![false; cube.len()];
        for &i in order.iter().take(d_allow) {
            in_d[i] = true;
        }
        let d: Vec<Site> = (0..cube.len()).filter(|&i| in_d[i]).map(|i| cube[i]).collect();
        let s: Vec<Site> = (0..cube.len()).filter(|&i| !in_d[i]).map(|i| cube[i]).collect();
        let outside: f64 = (0..cube.len()).filter(|&i| !in_d[i]).map(|i| miss[i]).sum();
        let cover_bound = (1.0 - outside).max(0.0);
        let bound = cover_bound * pz_bound.powi(b.len() as i32);
        let bound_exact_z = cover_bound * z0_exact.powi(b.len() as i32);
        let rep = WitnessReport {
            n,
            beta,
            side,
            dim,
            b_within_allowance: b.len() as f64 <= b_allow,
            d_within_allowance: d.len() as f64 <= 8.0 * (-beta).exp() * volume,
            b,
            d,
            s,
            expected_uncovered,
            cover_bound,
            p_n,
            pz_bound,
            z0_exact,
            bound,
            bound_exact_z,
        };
        let better = match &best {
            None => true,
            Some(cur) => (rep.b_within_allowance, rep.bound_exact_z) > (cur.b_within_allowance, cur.bound_exact_z),
        };
        if better {
            best = Some(rep);
        }
    }
    Ok(best.unwrap())
}

/// `P(X̄_S ≡ 1)` estimated from `replicas` direct samples: `(hits, n)`.
pub fn estimate_all_one(spec: &IntensitySpec, sites: &[Site], replicas: usize, seed: u64, budget: f64) -> Result<(usize, usize)> {
    let (lo, hi) = lattice::bounding_box(sites);
    let window = Window::new(spec.dimension(), lo, hi)?;
    let fs = crate::sampler::FieldSampler::new(spec, window, i64::MAX, budget)?;
    let idx: Vec<usize> = sites.iter().map(|s| window.index(*s).unwrap()).collect();
    let mut hits = 0;
    for r in 0..replicas {
        let bar = fs.sample_bar(rng::replica_seed(seed, r as u64));
        if idx.iter().all(|&i| bar[i]) {
            hits += 1;
        }
    }
    Ok((hits, replicas))
}

/// Exact `P(X̄_S ≡ 1)` for a witness set when `|S|` is small enough.
pub fn exact_all_one(spec: &IntensitySpec, sites: &[Site]) -> Result<f64> {
    Ok(crate::exact::prob_all_one(spec, sites, 1e-12)?.lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{self, ExactLaw};
    use crate::intensity::{PairTail, ShapeOrbit};

    fn pair01(p: f64) -> IntensitySpec {
        IntensitySpec::one_d(vec![ShapeOrbit::line(&[0, 1], p).unwrap()]).unwrap()
    }

    #[test]
    fn delta_examples() {
        let s = pair01(0.1);
        let v = [Site::line(0)];
        let d = delta_bound(&s, &v, &Epsilon::Uniform(0.5), false, 0.0).unwrap();
        assert!((d.delta[0] - 0.7).abs() < 1e-12);
        let d = delta_bound(&s, &v, &Epsilon::Uniform(0.5), true, 0.0).unwrap();
        assert!((d.delta[0] - 0.65).abs() < 1e-12);
        let d = delta_bound(&s, &v, &Epsilon::Uniform(1.0), false, 0.0).unwrap();
        assert_eq!(d.delta[0], 1.0);
        assert!(d.vacuous[0]);
    }

    #[test]
    fn empty_spec_coupling_is_diagonal() {
        let w = Window::interval(0, 5).unwrap();
        let c = MonotoneCoupler::new(&IntensitySpec::empty(1), w, &Epsilon::Uniform(0.3), true, 0.0).unwrap();
        for seed in 0..200 {
            let s = c.sample(seed).unwrap();
            assert_eq!(s.y, s.z);
        }
    }

    #[test]
    fn coupling_marginal_is_y() {
        let s = pair01(0.1);
        let w = Window::interval(0, 1).unwrap();
        let run = sample_monotone_coupling(&s, w, &Epsilon::Uniform(0.5), true, 3, 100_000).unwrap();
        assert_eq!(run.y_le_z, run.exposures);
        let law = exact::exact_law(&s, &w.sites(), 0.0).unwrap().or_independent(&[0.5, 0.5]);
        let emp: Vec<f64> = run.y_counts.iter().map(|&c| c as f64 / run.samples as f64).collect();
        assert!(crate::stats::tv_distance(&emp, &law.weights) < 0.01);
    }

    #[test]
    fn iid_density_pairs() {
        let s = IntensitySpec::pairs(PairTail::geometric(1.0, 0.25)).unwrap();
        let r = dominating_iid_density(&s, 2f64.ln()).unwrap();
        assert_eq!(r.split, 2);
        assert!((r.q_bounded - 0.75).abs() < 1e-12);
        assert!((r.tail_sum - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.q_unbounded - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.density - 11.0 / 12.0).abs() < 1e-12);
        let e = dominating_iid_density(&IntensitySpec::empty(1), 1.0).unwrap();
        assert!((e.density - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn iid_density_dominates_site_law() {
        let s = pair01(0.2);
        let r = dominating_iid_density(&s, 1.0).unwrap();
        assert!(r.density < 1.0);
        let sites: Vec<Site> = (0..3).map(Site::line).collect();
        let law = exact::exact_law(&s, &sites, 0.0).unwrap();
        let prod = ExactLaw::product(sites, &[r.density; 3]);
        assert!(exact::check_dominance(&law, &prod).unwrap().dominated);
    }

    #[test]
    fn witness_singletons() {
        let s = IntensitySpec::one_d(vec![ShapeOrbit::line(&[0], 0.5).unwrap()]).unwrap();
        let w = witness_search(&s, 1, 10.0, 4, 1, 3).unwrap();
        assert_eq!(w.b.len(), 4);
        assert!(w.d.is_empty());
        assert!((w.pz_bound - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.bound - (1.0f64 / 3.0).powi(4)).abs() < 1e-15);
        assert!((w.bound_exact_z - 0.0625).abs() < 1e-15);
        assert!(witness_search(&s, 2, 10.0, 4, 1, 3).is_err());
    }
}
