//! The ten acceptance criteria, one test each. Every test writes a single
//! `criterion N ... PASS|FAIL` line straight to stderr so the lines show up
//! even when libtest captures output.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use poisrep::coding_censored::{self, censor_prob, sample_zl, Refiner, Tri};
use poisrep::coding_general;
use poisrep::coding_pairs;
use poisrep::domination::{self, Epsilon, MonotoneCoupler};
use poisrep::exact::{self, ExactLaw};
use poisrep::harness::{bundled_spec, example15_spec, heavy_tail};
use poisrep::intensity::{connected_hull, Source};
use poisrep::lattice::is_connected;
use poisrep::markov1d::{self, Chain, CrossState, Member};
use poisrep::partition::sample_partition;
use poisrep::{rng, stats, IntensitySpec, PairTail, ShapeOrbit, Site, Window};

fn report(n: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {n:>2} {name:<28} {} ({:.1}s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn line(xs: &[i64]) -> Vec<Site> {
    xs.iter().map(|&x| Site::line(x)).collect()
}

fn pair(p: f64) -> IntensitySpec {
    IntensitySpec::one_d(vec![ShapeOrbit::line(&[0, 1], p).unwrap()]).unwrap()
}

/// Windows of 1 to 3 sites inside `[0, 4]` with minimum 0.
fn small_windows() -> Vec<Vec<Site>> {
    let mut out = vec![line(&[0])];
    for a in 1..5 {
        out.push(line(&[0, a]));
        for b in a + 1..5 {
            out.push(line(&[0, a, b]));
        }
    }
    out
}

#[test]
fn criterion_01_oracle_agreement() {
    let t = Instant::now();
    let mut failures = Vec::new();
    // Sets meeting {0,1}: {-1,0}, {0,1}, {1,2}; covered iff {0,1} is in or both others are.
    let by_hand = 0.5 + 0.5 * 0.25;
    let v = exact::prob_all_one(&pair(0.5), &line(&[0, 1]), 0.0).unwrap();
    if (v.lo - by_hand).abs() > 1e-15 || (v.hi - by_hand).abs() > 1e-15 {
        failures.push(format!("pair-half on {{0,1}}: {v:?}"));
    }
    let names = ["pair-half", "singleton-half", "four-ninths", "mixed-1d", "geometric-half"];
    let mut windows = 0;
    for (si, name) in names.iter().enumerate() {
        let spec = bundled_spec(name).unwrap();
        for (wi, sites) in small_windows().iter().enumerate() {
            let ex = exact::prob_all_one(&spec, sites, 1e-12).unwrap();
            let seed = rng::hash(101, 0, &[si as i64, wi as i64]);
            let (hits, n) = domination::estimate_all_one(&spec, sites, 100_000, seed, 1e-12).unwrap();
            let f = hits as f64 / n as f64;
            let sigma = stats::binomial_sigma(ex.mid(), n).max(1.0 / n as f64);
            if f < ex.lo - 4.0 * sigma || f > ex.hi + 4.0 * sigma {
                failures.push(format!("{name} {sites:?}: MC {f} vs [{}, {}]", ex.lo, ex.hi));
            }
            windows += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    let detail = format!("{windows} windows over {} specs at 1e5 replicas; {failures:?}", names.len());
    report(1, "oracle agreement", failures.is_empty(), &detail, t);
}

#[test]
fn criterion_02_domination() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let spec = pair(0.1);
    let eps = Epsilon::Uniform(0.5);
    // Two sets through v, each of size 2: δ = ε + (1-ε)·(0.1·2 + 0.1·2).
    let sim = domination::delta_bound(&spec, &[Site::line(0)], &eps, false, 0.0).unwrap();
    if sim.delta[0] != 0.5 + 0.5 * 0.4 {
        failures.push(format!("simultaneous δ = {}", sim.delta[0]));
    }
    let w3 = Window::interval(0, 2).unwrap();
    let seq = domination::delta_bound(&spec, &w3.sites(), &eps, true, 0.0).unwrap();
    if (seq.delta[1] - (0.5 + 0.5 * 0.3)).abs() > 1e-15 {
        failures.push(format!("sequential δ = {}", seq.delta[1]));
    }

    let window = Window::interval(0, 9).unwrap();
    let run = domination::sample_monotone_coupling(&spec, window, &eps, true, 22, 100_000).unwrap();
    if run.exposures < 1_000_000 || run.y_le_z != run.exposures {
        failures.push(format!("y ≤ z in {}/{}", run.y_le_z, run.exposures));
    }
    if run.max_q_minus_delta > 1e-12 {
        failures.push(format!("max q - δ = {}", run.max_q_minus_delta));
    }

    let mut certified = 0;
    for name in ["pair-tenth", "mixed-1d", "four-ninths"] {
        let spec = bundled_spec(name).unwrap();
        for sites in small_windows() {
            let hi = sites.last().unwrap().0;
            let w = Window::interval(0, hi).unwrap();
            let c = MonotoneCoupler::new(&spec, w, &eps, true, 1e-12).unwrap();
            let idx: Vec<usize> = sites.iter().map(|s| w.index(*s).unwrap()).collect();
            let eps_v = vec![0.5; w.len()];
            let y = exact::law_of_union(&spec, &w.sites(), 1e-12).unwrap().or_independent(&eps_v);
            let walked = c.model().path_law().unwrap();
            let walk_tv = stats::tv_distance(&walked, &y.weights);
            if walk_tv > 1e-9 {
                failures.push(format!("{name} path law differs from the union law by {walk_tv}"));
            }
            let y = y.project(&idx);
            let delta: Vec<f64> = idx.iter().map(|&i| c.delta.delta[i]).collect();
            let prod = ExactLaw::product(sites.clone(), &delta);
            let d = exact::check_dominance(&y, &prod).unwrap();
            if !d.dominated {
                failures.push(format!("{name} {sites:?}: Y not below product(δ)"));
            }
            certified += 1;
        }
    }
    let detail = format!(
        "δ = {} / {}, {} exposures, {certified} windows certified; {failures:?}",
        sim.delta[0], seq.delta[1], run.exposures
    );
    report(2, "domination", failures.is_empty(), &detail, t);
}

#[test]
fn criterion_03_iid_density() {
    let t = Instant::now();
    let mut failures = Vec::new();
    // p_n = 4^-n pairs, λ = ln 2 (e^λ = 2): the tail 2·e^{2λ}·Σ_{m≥n} 4^-m is
    // 8/3 at n = 1 and 2/3 at n = 2, so N = 2. The gap-1 pair leaves
    // 1 - q_bounded = (1 - 1/2)² = 1/4 and q_unbounded = 1/2 + 1/4·2/3 = 2/3,
    // giving 1 - (1/4)·(1/3) = 11/12.
    let quarter = bundled_spec("geometric-quarter").unwrap();
    let d = domination::dominating_iid_density(&quarter, 2f64.ln()).unwrap();
    if (d.density - 11.0 / 12.0).abs() > 1e-12 {
        failures.push(format!("geometric-quarter density {}", d.density));
    }
    let cases: Vec<(&str, IntensitySpec, f64)> = vec![
        ("pair-tenth", bundled_spec("pair-tenth").unwrap(), 1.0),
        ("mixed-1d", bundled_spec("mixed-1d").unwrap(), 1.0),
        ("four-ninths", bundled_spec("four-ninths").unwrap(), 0.5),
        ("geometric-quarter", quarter.clone(), 2f64.ln()),
        ("geometric-half", bundled_spec("geometric-half").unwrap(), 0.3),
    ];
    let mut certified = 0;
    for (name, spec, lambda) in &cases {
        let d = domination::dominating_iid_density(spec, *lambda).unwrap();
        if d.density >= 1.0 {
            failures.push(format!("{name}: density {}", d.density));
            continue;
        }
        for sites in small_windows() {
            let law = exact::law_of_union(spec, &sites, 1e-12).unwrap();
            let prod = ExactLaw::product(sites.clone(), &vec![d.density; sites.len()]);
            if !exact::check_dominance(&law, &prod).unwrap().dominated {
                failures.push(format!("{name} {sites:?}"));
            }
            certified += 1;
        }
    }
    let detail = format!("density 11/12 = {:.6}, {certified} windows certified; {failures:?}", d.density);
    report(3, "iid density", failures.is_empty(), &detail, t);
}

fn density(spec: &IntensitySpec) -> f64 {
    1.0 - exact::prob_all_zero(spec, &[Site::line(0)], 1e-14).unwrap().lo
}

fn per_site(spec: &IntensitySpec, n: i64) -> f64 {
    let s: Vec<Site> = (0..n).map(Site::line).collect();
    exact::prob_all_one(spec, &s, 1e-14).unwrap().lo.powf(1.0 / n as f64)
}

#[test]
fn criterion_04_witness_and_heavy_tail() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let heavy = IntensitySpec::new(1, vec![], Some(heavy_tail(0.3, 64))).unwrap();
    let target = density(&heavy);
    // Geometric gaps on the same support, scaled to the same site density.
    let light_spec = |c: f64| {
        let values = (1..=64).map(|n| c * 0.5f64.powi(n)).collect();
        IntensitySpec::new(1, vec![], Some(PairTail::List { start: 1, values })).unwrap()
    };
    let (mut lo, mut hi) = (0.0, 1.9);
    for _ in 0..60 {
        let c = 0.5 * (lo + hi);
        if density(&light_spec(c)) < target {
            lo = c;
        } else {
            hi = c;
        }
    }
    let light = light_spec(lo);
    let matched = density(&light);
    if (matched - target).abs() > 1e-9 {
        failures.push(format!("density match {matched} vs {target}"));
    }

    let mut witnessed = Vec::new();
    for (name, spec) in [("heavy", &heavy), ("light", &light)] {
        for side in [4, 6] {
            let w = domination::witness_search(spec, 2, 10.0, side, 41, 10).unwrap();
            let s: Vec<Site> = w.s.clone();
            let (hits, n) = domination::estimate_all_one(spec, &s, 20_000, 43, 1e-12).unwrap();
            let (_, ci_hi) = stats::proportion_ci(hits, n, 4.0);
            if w.bound > ci_hi {
                failures.push(format!("{name} side {side}: certified {} above CI upper {ci_hi}", w.bound));
            }
            witnessed.push(format!("{name}/{side}: {:.3e} ≤ {:.3e}", w.bound, ci_hi));
        }
    }

    let n = 12;
    let (h, l) = (per_site(&heavy, n), per_site(&light, n));
    if h <= l {
        failures.push(format!("per-site heavy {h} ≤ light {l}"));
    }
    let detail = format!("{witnessed:?}; per-site at n = {n}: heavy {h:.4} > light {l:.4} at density {target:.4}; {failures:?}");
    report(4, "witness and heavy tail", failures.is_empty(), &detail, t);
}

#[test]
fn criterion_05_pairs_coding() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let spec = bundled_spec("geometric-half").unwrap();
    let window = Window::interval(0, 2).unwrap();
    let s = coding_pairs::run_pairs(&spec, window, 5, 6, 100_000, false).unwrap();
    let trials = s.replicas * s.sites;
    let mut rates = Vec::new();
    for (i, &k) in s.level_k.iter().enumerate() {
        if !(2..=6).contains(&k) {
            continue;
        }
        let bound = 3.0 / (k * k) as f64;
        let rate = s.gate_rate(i);
        rates.push(format!("k{k} {rate:.4}"));
        if rate > bound + 3.0 * stats::binomial_sigma(bound.min(1.0), trials) {
            failures.push(format!("level {k}: {rate} > 3k⁻² = {bound}"));
        }
    }
    let law = exact::law_of_union(&spec, &window.sites(), 1e-12).unwrap();
    let emp: Vec<f64> = s.law_counts.iter().map(|&n| n as f64 / s.replicas as f64).collect();
    let tv = stats::tv_distance(&emp, &law.weights);
    if tv > 0.01 {
        failures.push(format!("TV {tv}"));
    }
    let radii: Vec<u64> = s.radius_hist.keys().copied().collect();
    let tail: Vec<f64> = radii.iter().map(|&r| s.radius_exceeds(r)).collect();
    if tail.windows(2).any(|w| w[1] > w[0]) {
        failures.push("radius tail not monotone".into());
    }
    let secs = t.elapsed().as_secs_f64();
    if secs >= 300.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    let detail = format!("gates {rates:?}, TV {tv:.4}, max radius {:?}; {failures:?}", radii.last());
    report(5, "pairs coding", failures.is_empty(), &detail, t);
}

#[test]
fn criterion_06_general_coding() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0;
    for seed in 0..1000u64 {
        let r = 1 + (seed % 3) as i64;
        let x0 = (seed as i64 * 7) % 23 - 11;
        let y0 = (seed as i64 * 13) % 19 - 9;
        match sample_partition(2, r, Window::rect(x0, y0, 4, 4).unwrap(), seed) {
            Ok(p) => worst = worst.max(p.max_classes_per_ball),
            Err(e) => failures.push(format!("partition seed {seed}: {e}")),
        }
    }
    if worst > 25 {
        failures.push(format!("{worst} classes per ball"));
    }

    let spec = bundled_spec("plane").unwrap();
    let window = Window::rect(0, 0, 2, 2).unwrap();
    let s = coding_general::run_general(&spec, window, 6, 7, 20_000, false).unwrap();
    let trials = s.replicas * s.sites;
    for (i, &k) in s.level_k.iter().enumerate() {
        let (rate, bound) = (s.gate_rate(i), s.gate_bound[i]);
        if rate > bound + 4.0 * stats::binomial_sigma(bound.min(1.0), trials) {
            failures.push(format!("level {k}: gate rate {rate} > {bound}"));
        }
    }
    let law = exact::law_of_union(&spec, &window.sites(), 1e-12).unwrap();
    let emp: Vec<f64> = s.law_counts.iter().map(|&n| n as f64 / s.replicas as f64).collect();
    let tv = stats::tv_distance(&emp, &law.weights);
    if tv > 0.01 {
        failures.push(format!("TV {tv}"));
    }
    let detail = format!("1000 partitions, max {worst} classes per ball, TV {tv:.4} on 2×2; {failures:?}");
    report(6, "general coding", failures.is_empty(), &detail, t);
}

#[test]
fn criterion_07_censored_coding() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let spec = bundled_spec("four-ninths").unwrap();
    let l = line(&[0, 1]);
    // Only {-1, 0} leaves L: ε = (0.1 / 0.9) / 0.5².
    let by_hand = 0.1 / 0.9 / 0.25;
    let eps = censor_prob(&spec, Site::line(0), &l).unwrap();
    if (eps - by_hand).abs() > 1e-15 {
        failures.push(format!("ε = {eps}"));
    }
    let n = 100_000;
    let stars = (0..n).filter(|&s| sample_zl(&spec, &l, s).unwrap().values[0] == Tri::Star).count();
    let f = stars as f64 / n as f64;
    if (f - eps).abs() > 4.0 * stats::binomial_sigma(eps, n as usize) {
        failures.push(format!("*-rate {f} vs {eps}"));
    }

    let levels = 3;
    let refiner = Refiner::new(&spec, levels).unwrap();
    let window = Window::interval(0, 7).unwrap();
    let observe = [3usize, 4];
    let s = coding_censored::run_censored(&spec, window, 7, levels, 100_000, &observe).unwrap();
    if s.monotone_runs != s.replicas {
        failures.push(format!("monotone {}/{}", s.monotone_runs, s.replicas));
    }
    let law = exact::law_of_union(&spec, &line(&[3, 4]), 1e-12).unwrap();
    let target = coding_censored::binary_law_as_tri(&law.weights, 2);
    let tv = stats::tv_distance(&s.final_law(), &target);
    if tv > 0.01 {
        failures.push(format!("final TV {tv}"));
    }
    let chain = refiner.eps_chain(3);
    let detail = format!("*-rate {f:.4} vs {eps:.4}, monotone {}/{}, TV {tv:.4}, ε chain {chain:?}; {failures:?}", s.monotone_runs, s.replicas);
    report(7, "censored coding", failures.is_empty(), &detail, t);
}

#[test]
fn criterion_08_markov_chain() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let single = IntensitySpec::one_d(vec![ShapeOrbit::line(&[0], 0.5).unwrap()]).unwrap();
    let n = 20_000;
    let r = markov1d::return_time_stats(&single, n, 60, 81, None).unwrap();
    for &(tt, sv) in r.survival.iter().take(8) {
        let p = 0.5f64.powi(tt as i32);
        if (sv - p).abs() > 4.0 * stats::binomial_sigma(p, n).max(1.0 / n as f64) {
            failures.push(format!("singleton P(T > {tt}) = {sv} vs {p}"));
        }
    }

    let spec = bundled_spec("geometric-chain").unwrap();
    let w = markov1d::w_chain_check(&spec, 10_000, 82).unwrap();
    if w.mismatches != 0 {
        failures.push(format!("{} W mismatches", w.mismatches));
    }

    let chain = Chain::new(&spec, 1e-12).unwrap();
    let m = 20_000;
    let counts: Vec<f64> = (0..m).map(|k| chain.stationary_state(rng::replica_seed(83, k)).len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / m as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / m as f64;
    // Σ_n 2·p_n·(1 + n) over pairs {0, n} with p_n = 0.6·0.5ⁿ, counted once
    // per set: Σ 0.6·0.5ⁿ·(1 + n) = 0.6·(1 + 2) = 1.8.
    let expect = 1.8;
    if (mean - expect).abs() > 4.0 * (var / m as f64).sqrt() + chain.stationary_neglected() {
        failures.push(format!("crossing mean {mean} vs {expect}"));
    }
    if (chain.expected_crossing() - expect).abs() > 1e-9 {
        failures.push(format!("expected_crossing {}", chain.expected_crossing()));
    }

    let b = CrossState::from_members(vec![
        Member { shape: Source::Pair(3), offset: -1 },
        Member { shape: Source::Pair(1), offset: 0 },
    ]);
    let a = markov1d::return_time_stats(&spec, 20_000, 400, 84, None).unwrap();
    let bb = markov1d::return_time_stats(&spec, 20_000, 400, 85, Some(&b)).unwrap();
    let (sa, sb) = (a.mle.unwrap(), bb.mle.unwrap());
    let z = (sa.0 - sb.0).abs() / (sa.1 * sa.1 + sb.1 * sb.1).sqrt();
    if z > 4.0 {
        failures.push(format!("slopes {} vs {} (z = {z})", sa.0, sb.0));
    }
    let detail = format!(
        "W steps {} mismatches {}, crossing mean {mean:.4} vs {expect}, slopes {:.4}/{:.4} (z = {z:.2}); {failures:?}",
        w.steps, w.mismatches, sa.0, sb.0
    );
    report(8, "markov chain", failures.is_empty(), &detail, t);
}

#[test]
fn criterion_09_example_family() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let ks = [2usize, 3, 4];
    let spec = example15_spec(1.0, &ks).unwrap();
    let mut rows = Vec::new();
    for &k in &ks {
        let sites: Vec<Site> = (0..k as i64).map(|i| Site::line(i * k as i64)).collect();
        let pa = (-(k as f64)).exp();
        let ex = exact::prob_all_one(&spec, &sites, 1e-12).unwrap();
        let (hits, n) = domination::estimate_all_one(&spec, &sites, 100_000, 90 + k as u64, 1e-12).unwrap();
        let (_, ci_hi) = stats::proportion_ci(hits, n, 4.0);
        if ex.lo < pa || ci_hi < pa {
            failures.push(format!("k = {k}: exact {} MC upper {ci_hi} vs {pa}", ex.lo));
        }
        rows.push(format!("k{k} {:.4} ≥ {pa:.4}", ex.lo));
    }
    let detail = format!("{rows:?}; {failures:?}");
    report(9, "example family", failures.is_empty(), &detail, t);
}

/// Bit `y·5 + x` of a 5×5 box.
fn bit(x: i64, y: i64) -> u32 {
    1 << (y * 5 + x)
}

fn mask_connected(m: u32) -> bool {
    if m == 0 {
        return false;
    }
    const NOT_LEFT: u32 = !(1 | 1 << 5 | 1 << 10 | 1 << 15 | 1 << 20);
    const NOT_RIGHT: u32 = !(1 << 4 | 1 << 9 | 1 << 14 | 1 << 19 | 1 << 24);
    let mut r = m & m.wrapping_neg();
    loop {
        let grow = r | (r << 1 & NOT_LEFT) | (r >> 1 & NOT_RIGHT) | (r << 5) | (r >> 5);
        let next = grow & m;
        if next == r {
            return r == m;
        }
        r = next;
    }
}

/// `best[m]` = size of the smallest connected subset of the 5×5 box
/// containing `m`. Clamping coordinates onto the box maps a connected superset
/// to a connected superset that is no larger, so the box suffices.
fn brute_force_hulls() -> Vec<u8> {
    let n = 1usize << 25;
    let mut best = vec![u8::MAX; n];
    for m in 1..n as u32 {
        if mask_connected(m) {
            best[m as usize] = m.count_ones() as u8;
        }
    }
    for b in 0..25 {
        for m in 0..n {
            if m & (1 << b) == 0 {
                best[m] = best[m].min(best[m | 1 << b]);
            }
        }
    }
    best
}

#[test]
fn criterion_10_connected_hull() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let best = brute_force_hulls();
    let cells: Vec<Site> = (0..5).flat_map(|y| (0..5).map(move |x| Site(x, y))).collect();
    let mut shapes = 0;
    let mut seen = HashSet::new();
    for a in 0..25 {
        for b in a..25 {
            for c in b..25 {
                for d in c..25 {
                    let mut idx = vec![a, b, c, d];
                    idx.dedup();
                    if !seen.insert(idx.clone()) {
                        continue;
                    }
                    let shape: Vec<Site> = idx.iter().map(|&i| cells[i]).collect();
                    let mask = shape.iter().fold(0, |m, s| m | bit(s.0, s.1));
                    let want = best[mask as usize];
                    let hull = connected_hull(&shape, 2).unwrap();
                    let hull_set: HashSet<Site> = hull.iter().copied().collect();
                    let ok = hull.len() == want as usize
                        && hull_set.len() == hull.len()
                        && shape.iter().all(|s| hull_set.contains(s))
                        && is_connected(&hull, 2);
                    if !ok {
                        failures.push(format!("{shape:?}: hull {hull:?}, brute force size {want}"));
                    }
                    shapes += 1;
                }
            }
        }
    }

    let mut ones = 0;
    for k in 0..1000u64 {
        let size = 1 + (rng::hash(100, 0, &[k as i64]) % 6) as usize;
        let mut xs: Vec<i64> = (0..size).map(|j| (rng::hash(100, 1, &[k as i64, j as i64]) % 40) as i64 - 20).collect();
        xs.sort();
        xs.dedup();
        let hull = connected_hull(&line(&xs), 1).unwrap();
        let lo = xs[0];
        let hi = *xs.last().unwrap();
        if hull != (lo..=hi).map(Site::line).collect::<Vec<_>>() {
            failures.push(format!("1D {xs:?}: {hull:?}"));
        }
        ones += 1;
    }
    let detail = format!("{shapes} planar shapes and {ones} 1D shapes; {} failures {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>());
    report(10, "connected hull", failures.is_empty(), &detail, t);
}
