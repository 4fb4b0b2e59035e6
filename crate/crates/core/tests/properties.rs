use std::collections::BTreeSet;

use proptest::prelude::*;

use poisrep::coding_censored::{censor_prob, exact_censored_law, tri_code_leq};
use poisrep::coding_pairs::{build_levels, LevelCoder};
use poisrep::domination::{self, Epsilon, MonotoneCoupler};
use poisrep::exact::{self, ExactLaw};
use poisrep::intensity::connected_hull;
use poisrep::lattice::is_connected;
use poisrep::markov1d;
use poisrep::sampler::sample_field;
use poisrep::{IntensitySpec, PairTail, ShapeOrbit, Site, Window};

fn orbit_strategy() -> impl Strategy<Value = (Vec<i64>, f64)> {
    (prop::collection::btree_set(0i64..4, 1..=3), 0.05f64..0.6).prop_map(|(c, p)| (c.into_iter().collect(), p))
}

fn spec_strategy() -> impl Strategy<Value = IntensitySpec> {
    prop::collection::vec(orbit_strategy(), 1..=2).prop_map(|os| {
        let mut shapes = BTreeSet::new();
        let orbits = os
            .iter()
            .filter(|(c, _)| shapes.insert(c.iter().map(|x| x - c[0]).collect::<Vec<_>>()))
            .map(|(c, p)| ShapeOrbit::line(c, *p).unwrap())
            .collect();
        IntensitySpec::one_d(orbits).unwrap()
    })
}

fn sites_strategy() -> impl Strategy<Value = Vec<Site>> {
    prop::collection::btree_set(0i64..4, 1..=3).prop_map(|s| s.into_iter().map(Site::line).collect())
}

/// Every translate of every orbit that meets `sites`, with its probability.
fn sets_meeting(spec: &IntensitySpec, sites: &[Site]) -> Vec<(Vec<i64>, f64)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for o in spec.orbits() {
        for c in o.cells() {
            for s in sites {
                let shift = s.0 - c.0;
                let cells: Vec<i64> = o.cells().iter().map(|x| x.0 + shift).collect();
                if seen.insert(cells.clone()) {
                    out.push((cells, o.p()));
                }
            }
        }
    }
    out
}

/// Law of X̄ on `sites` by summing over every inclusion pattern.
fn brute_force_law(spec: &IntensitySpec, sites: &[Site]) -> Vec<f64> {
    let sets = sets_meeting(spec, sites);
    let mut law = vec![0.0; 1 << sites.len()];
    for pattern in 0..1usize << sets.len() {
        let mut pr = 1.0;
        let mut code = 0;
        for (j, (cells, p)) in sets.iter().enumerate() {
            if pattern >> j & 1 == 1 {
                pr *= p;
                for (i, s) in sites.iter().enumerate() {
                    if cells.contains(&s.0) {
                        code |= 1 << i;
                    }
                }
            } else {
                pr *= 1.0 - p;
            }
        }
        law[code] += pr;
    }
    law
}

fn random_law(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1 << n).prop_map(|w| {
        let t: f64 = w.iter().sum::<f64>().max(1e-9);
        w.iter().map(|x| x / t).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn union_law_matches_enumeration(spec in spec_strategy(), sites in sites_strategy()) {
        let brute = brute_force_law(&spec, &sites);
        let law = exact::law_of_union(&spec, &sites, 0.0).unwrap();
        for (a, b) in law.weights.iter().zip(&brute) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let one = exact::prob_all_one(&spec, &sites, 0.0).unwrap();
        let zero = exact::prob_all_zero(&spec, &sites, 0.0).unwrap();
        prop_assert!((one.mid() - brute[brute.len() - 1]).abs() < 1e-12);
        prop_assert!((zero.mid() - brute[0]).abs() < 1e-12);
        prop_assert!((law.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominance_checks_agree(n in 1usize..=3, mu in random_law(3), nu in random_law(3)) {
        let sites: Vec<Site> = (0..n as i64).map(Site::line).collect();
        let cut = |w: &[f64]| ExactLaw { sites: vec![Site::line(0), Site::line(1), Site::line(2)], weights: w.to_vec(), error: 0.0 }
            .project(&(0..n).collect::<Vec<_>>());
        let (mu, nu) = (cut(&mu), cut(&nu));
        prop_assert_eq!(&mu.sites, &sites);
        let by_upsets = exact::check_dominance(&mu, &nu).unwrap().dominated;
        let by_flow = exact::check_dominance_flow(&mu, &nu).unwrap();
        prop_assert_eq!(by_upsets, by_flow);
        prop_assert!(exact::check_dominance(&mu, &mu).unwrap().dominated);
    }

    #[test]
    fn coupling_law_and_domination(spec in spec_strategy(), eps in 0.05f64..1.0, hi in 0i64..3, seed in any::<u64>()) {
        let w = Window::interval(0, hi).unwrap();
        let c = MonotoneCoupler::new(&spec, w, &Epsilon::Uniform(eps), true, 0.0).unwrap();
        let y = exact::law_of_union(&spec, &w.sites(), 0.0).unwrap().or_independent(&vec![eps; w.len()]);
        let walked = c.model().path_law().unwrap();
        for (a, b) in walked.iter().zip(&y.weights) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // A vacuous bound (δ ≥ 1) dominates trivially.
        let delta: Vec<f64> = c.delta.delta.iter().map(|d| d.min(1.0)).collect();
        let prod = ExactLaw::product(w.sites(), &delta);
        prop_assert!(exact::check_dominance(&y, &prod).unwrap().dominated);
        let s = c.sample(seed).unwrap();
        prop_assert!(s.y.iter().zip(&s.z).all(|(y, z)| !*y || *z));
    }

    #[test]
    fn iid_density_dominates(spec in spec_strategy(), lambda in 0.2f64..2.0, sites in sites_strategy()) {
        let d = domination::dominating_iid_density(&spec, lambda).unwrap();
        prop_assert!(d.density <= 1.0);
        let law = exact::law_of_union(&spec, &sites, 0.0).unwrap();
        let prod = ExactLaw::product(sites.clone(), &vec![d.density; sites.len()]);
        prop_assert!(exact::check_dominance(&law, &prod).unwrap().dominated);
    }

    #[test]
    fn hull_is_translation_equivariant(cells in prop::collection::btree_set((0i64..4, 0i64..4), 1..=4), dx in -20i64..20, dy in -20i64..20) {
        let shape: Vec<Site> = cells.iter().map(|&(x, y)| Site(x, y)).collect();
        let moved: Vec<Site> = shape.iter().map(|s| Site(s.0 + dx, s.1 + dy)).collect();
        let h = connected_hull(&shape, 2).unwrap();
        let hm = connected_hull(&moved, 2).unwrap();
        let mut shifted: Vec<Site> = h.iter().map(|s| Site(s.0 + dx, s.1 + dy)).collect();
        shifted.sort();
        let mut hm_sorted = hm.clone();
        hm_sorted.sort();
        prop_assert_eq!(shifted, hm_sorted);
        prop_assert!(is_connected(&h, 2));
        prop_assert!(shape.iter().all(|s| h.contains(s)));
    }

    #[test]
    fn hull_in_one_d_is_the_interval(xs in prop::collection::btree_set(-50i64..50, 1..8)) {
        let xs: Vec<i64> = xs.into_iter().collect();
        let cells: Vec<Site> = xs.iter().map(|&x| Site::line(x)).collect();
        let h = connected_hull(&cells, 1).unwrap();
        let want: Vec<Site> = (xs[0]..=xs[xs.len() - 1]).map(Site::line).collect();
        prop_assert_eq!(h, want);
    }

    #[test]
    fn censor_prob_shrinks_with_the_domain(p1 in 0.2f64..0.9, p2 in 0.01f64..0.15, lo in 0i64..3, grow in 1i64..4) {
        let spec = IntensitySpec::one_d(vec![
            ShapeOrbit::line(&[0], p1).unwrap(),
            ShapeOrbit::line(&[0, 1], p2).unwrap(),
            ShapeOrbit::line(&[0, 2], p2 / 2.0).unwrap(),
        ]).unwrap();
        let v = Site::line(2);
        let l: Vec<Site> = (lo..=2).map(Site::line).collect();
        let m: Vec<Site> = (lo - grow..=2 + grow).map(Site::line).collect();
        let el = censor_prob(&spec, v, &l).unwrap();
        let em = censor_prob(&spec, v, &m).unwrap();
        prop_assert!(em <= el + 1e-15);
        prop_assert!(em >= 0.0);
    }

    #[test]
    fn censored_laws_are_ordered(p1 in 0.3f64..0.9, p2 in 0.01f64..0.15) {
        let spec = IntensitySpec::one_d(vec![
            ShapeOrbit::line(&[0], p1).unwrap(),
            ShapeOrbit::line(&[0, 1], p2).unwrap(),
        ]).unwrap();
        let observe = [Site::line(1), Site::line(2)];
        let l: Vec<Site> = (1..=2).map(Site::line).collect();
        let m: Vec<Site> = (0..=3).map(Site::line).collect();
        let zl = exact_censored_law(&spec, &l, &observe).unwrap();
        let zm = exact_censored_law(&spec, &m, &observe).unwrap();
        let d = exact::check_dominance_poset(&zm, &zl, |a, b| tri_code_leq(a, b, 2), 1e-12).unwrap();
        prop_assert!(d.dominated);
    }

    #[test]
    fn gated_laws_mix_to_the_level_law(c in 0.1f64..1.0, r in 0.2f64..0.7, pick in 0usize..5) {
        let tail = PairTail::geometric(c, r);
        let plan = build_levels(&IntensitySpec::pairs(tail.clone()).unwrap(), 5).unwrap();
        let level = plan.levels[pick].clone();
        prop_assume!(!level.is_empty() && level.hi - level.lo <= 8);
        let coder = LevelCoder::new(&tail, level);
        let n = coder.width() + 1;
        // Level law: coordinate 0 is "some pair of the level present, or the
        // sprinkle"; coordinate j is pair `lo + j - 1`.
        let mut target = vec![0.0; 1 << n];
        for pattern in 0..1usize << (n - 1) {
            let mut pr = 1.0;
            for j in 0..n - 1 {
                pr *= if pattern >> j & 1 == 1 { coder.p[j] } else { 1.0 - coder.p[j] };
            }
            let base = pattern << 1;
            if pattern != 0 {
                target[base | 1] += pr;
            } else {
                target[1] += pr * coder.eps0;
                target[0] += pr * (1.0 - coder.eps0);
            }
        }
        let mut mixed = vec![0.0; 1 << n];
        let thresholds: Vec<f64> = std::iter::once(coder.t0).chain(coder.t.iter().copied()).collect();
        for wcode in 0..1usize << n {
            let w: Vec<bool> = (0..n).map(|j| wcode >> j & 1 == 1).collect();
            let pw: f64 = (0..n).map(|j| if w[j] { thresholds[j] } else { 1.0 - thresholds[j] }).product();
            let phi = coder.phi_law(&w).unwrap();
            for (y, &q) in phi.iter().enumerate() {
                prop_assert!(q == 0.0 || y & !wcode == 0);
                mixed[y] += pw * q;
            }
        }
        for (a, b) in mixed.iter().zip(&target) {
            prop_assert!((a - b).abs() < 1e-12, "{:?} vs {:?}", mixed, target);
        }
    }

    #[test]
    fn field_invariants_hold(spec in spec_strategy(), seed in any::<u64>(), hi in 0i64..12) {
        let w = Window::interval(0, hi).unwrap();
        let a = sample_field(&spec, w, seed, 0.0).unwrap();
        a.check_invariants().unwrap();
        prop_assert_eq!(a, sample_field(&spec, w, seed, 0.0).unwrap());
    }

    #[test]
    fn w_recursion_tracks_the_chain(spec in spec_strategy(), seed in any::<u64>()) {
        let r = markov1d::w_chain_check(&spec, 500, seed).unwrap();
        prop_assert_eq!(r.mismatches, 0);
        prop_assert_eq!(r.state_returns, r.w_returns);
    }
}
