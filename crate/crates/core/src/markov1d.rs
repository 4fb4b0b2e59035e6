//! The crossing-set chain on Z.
//!
//! `X̌_i` holds the included sets `A` (translated by `-i`) whose minimum is
//! non-positive and whose maximum is non-negative. One step shifts every
//! member left, drops those whose maximum falls below zero and adds the
//! fresh sets with minimum zero.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{IntensitySpec, Source};
use crate::rng::{self, tag};
use crate::stats::{self, LinearFit};

/// Minimum number of surviving observations for a point to enter the fit.
pub const FIT_MIN_ALIVE: usize = 100;

/// Tail fits start once the empirical survival has fallen to this level, so
/// the early transient of the start state does not bias the slope.
pub const TAIL_ONSET: f64 = 0.25;

/// A set of the state: its shape and the position of its minimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Member {
    pub shape: Source,
    pub offset: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct CrossState {
    /// Sorted, no duplicates.
    pub members: Vec<Member>,
}

impl CrossState {
    pub fn empty() -> CrossState {
        CrossState::default()
    }

    pub fn from_members(mut members: Vec<Member>) -> CrossState {
        members.sort_unstable();
        members.dedup();
        CrossState { members }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }
}

/// The chain's view of a spec: shape diameters and the fresh-set list.
#[derive(Clone, Debug)]
pub struct Chain {
    spec: IntensitySpec,
    /// Shapes with minimum zero: `(shape, diameter, p)`.
    fresh: Vec<(Source, i64, f64)>,
    /// Mass of fresh sets left out per step.
    pub neglected_per_step: f64,
}

fn shape_code(s: Source) -> i64 {
    match s {
        Source::Orbit(i) => i as i64,
        Source::Pair(n) => -(n as i64),
    }
}

impl Chain {
    /// `budget` bounds the omitted fresh-set mass per step (infinite tails).
    pub fn new(spec: &IntensitySpec, budget: f64) -> Result<Chain> {
        if spec.dimension() != 1 {
            return Err(Error::InvalidArgument("the crossing chain is one-dimensional".into()));
        }
        let mut mass: f64 = spec.orbits().iter().map(|o| o.p() * o.diameter() as f64).sum();
        if let Some(t) = spec.pair_tail() {
            mass += t.hull_tail(1) - t.tail(1);
        }
        if !mass.is_finite() {
            return Err(Error::NotCountable("Σ_{min A = 0} p_A diam A diverges".into()));
        }
        let mut fresh = Vec::new();
        for (i, o) in spec.orbits().iter().enumerate() {
            if o.p() > 0.0 {
                fresh.push((Source::Orbit(i), o.diameter(), o.p()));
            }
        }
        let mut neglected = 0.0;
        if let Some(t) = spec.pair_tail() {
            let horizon = match t.last() {
                Some(l) => l,
                None => {
                    if budget <= 0.0 {
                        return Err(Error::ZeroBudget);
                    }
                    let mut n = t.start();
                    while t.tail(n + 1) > budget {
                        n += 1;
                    }
                    neglected = t.tail(n + 1);
                    n
                }
            };
            for n in t.start()..=horizon {
                let p = t.p(n);
                if p > 0.0 {
                    fresh.push((Source::Pair(n), n as i64, p));
                }
            }
        }
        Ok(Chain { spec: spec.clone(), fresh, neglected_per_step: neglected })
    }

    pub fn diameter(&self, s: Source) -> i64 {
        match s {
            Source::Orbit(i) => self.spec.orbits()[i].diameter(),
            Source::Pair(n) => n as i64,
        }
    }

    fn max_of(&self, m: &Member) -> i64 {
        m.offset + self.diameter(m.shape)
    }

    /// Fresh sets with minimum zero drawn from `seed`.
    pub fn fresh_sets(&self, seed: u64) -> Vec<Member> {
        self.fresh
            .iter()
            .filter(|(s, _, p)| rng::bernoulli(*p, seed, tag::CHAIN, &[shape_code(*s)]))
            .map(|&(shape, _, _)| Member { shape, offset: 0 })
            .collect()
    }

    /// Shift, drop and add `fresh`.
    pub fn advance(&self, state: &CrossState, fresh: &[Member]) -> CrossState {
        let mut members: Vec<Member> = state
            .members
            .iter()
            .filter(|m| self.max_of(m) >= 1)
            .map(|m| Member { shape: m.shape, offset: m.offset - 1 })
            .collect();
        members.extend_from_slice(fresh);
        CrossState::from_members(members)
    }

    pub fn step(&self, state: &CrossState, seed: u64) -> CrossState {
        self.advance(state, &self.fresh_sets(seed))
    }

    /// `X̌_0` drawn directly: each set with `min ≤ 0 ≤ max` independently.
    pub fn stationary_state(&self, seed: u64) -> CrossState {
        let mut members = Vec::new();
        for &(shape, d, p) in &self.fresh {
            for offset in -d..=0 {
                if rng::bernoulli(p, seed, tag::CHAIN, &[-1, shape_code(shape), offset]) {
                    members.push(Member { shape, offset });
                }
            }
        }
        CrossState::from_members(members)
    }

    /// Mass of `X̌_0` omitted by the truncation: `Σ_{n > H} (n+1) p_n`.
    pub fn stationary_neglected(&self) -> f64 {
        match self.spec.pair_tail() {
            Some(t) if t.last().is_none() => {
                let h = self.fresh.iter().filter_map(|(s, _, _)| match s {
                    Source::Pair(n) => Some(*n),
                    _ => None,
                });
                t.hull_tail(h.max().unwrap_or(0) + 1)
            }
            _ => 0.0,
        }
    }

    /// `Σ_{min A = 0} p_A (1 + diam A)` over the enumerated shapes.
    pub fn expected_crossing(&self) -> f64 {
        self.fresh.iter().map(|&(_, d, p)| p * (1 + d) as f64).sum()
    }

    /// True when some member contains the origin.
    pub fn covers_origin(&self, state: &CrossState) -> bool {
        state.members.iter().any(|m| match m.shape {
            Source::Orbit(i) => self.spec.orbits()[i].cells().iter().any(|c| c.0 + m.offset == 0),
            Source::Pair(n) => m.offset == 0 || m.offset + n as i64 == 0,
        })
    }

    /// Largest maximum of a member, `-1` for the empty state.
    pub fn w_of(&self, state: &CrossState) -> i64 {
        state.members.iter().map(|m| self.max_of(m)).max().unwrap_or(-1)
    }

    fn step_seed(seed: u64, run: u64, t: u64) -> u64 {
        rng::hash(seed, tag::CHAIN, &[run as i64, t as i64])
    }

    /// Hitting time of `∅` after time 0 from `start`, `None` past `t_cap`.
    pub fn hitting_time(&self, start: &CrossState, t_cap: u64, seed: u64, run: u64) -> Option<u64> {
        let mut s = start.clone();
        for t in 1..=t_cap {
            s = self.step(&s, Self::step_seed(seed, run, t));
            if s.is_empty() {
                return Some(t);
            }
        }
        None
    }
}

pub fn step(spec: &IntensitySpec, state: &CrossState, seed: u64) -> Result<CrossState> {
    Ok(Chain::new(spec, 1e-12)?.step(state, seed))
}

pub fn stationary_state(spec: &IntensitySpec, seed: u64) -> Result<CrossState> {
    Ok(Chain::new(spec, 1e-12)?.stationary_state(seed))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReturnTimeStats {
    /// `None` marks a run censored at the cap.
    pub samples: Vec<Option<u64>>,
    pub t_cap: u64,
    /// `(t, P̂(T > t))`.
    pub survival: Vec<(u64, f64)>,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub r2: Option<f64>,
    /// Constant-hazard MLE of the log-survival slope, with its standard error.
    pub mle: Option<(f64, f64)>,
    /// Total-variation bound from the fresh-set truncation over all steps.
    pub tv_bound: f64,
}

impl ReturnTimeStats {
    pub fn censored(&self) -> usize {
        self.samples.iter().filter(|s| s.is_none()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "survival"])?;
        for (t, s) in &self.survival {
            w.write_record([t.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First `t` with `P̂(T > t) ≤` [`TAIL_ONSET`], or the cap.
pub fn tail_onset(survival: &[(u64, f64)], t_cap: u64) -> u64 {
    survival.iter().find(|(_, s)| *s <= TAIL_ONSET).map_or(t_cap, |&(t, _)| t)
}

/// Log-linear fit of `P̂(T > t)` over the `t` past the tail onset where at
/// least [`FIT_MIN_ALIVE`] observations exceed `t`.
pub fn fit_tail(samples: &[Option<u64>], t_cap: u64) -> (Vec<(u64, f64)>, Option<LinearFit>) {
    let surv = stats::survival(samples, t_cap);
    let n = samples.len() as f64;
    let onset = tail_onset(&surv, t_cap);
    let (xs, ys): (Vec<f64>, Vec<f64>) = surv
        .iter()
        .filter(|(t, s)| *t >= onset && s * n >= FIT_MIN_ALIVE as f64)
        .map(|&(t, s)| (t as f64, s.ln()))
        .unzip();
    (surv, stats::linear_fit(&xs, &ys))
}

/// Return times to `∅` (or hitting times from `start`) over independent runs.
pub fn return_time_stats(
    spec: &IntensitySpec,
    n_runs: usize,
    t_cap: u64,
    seed: u64,
    start: Option<&CrossState>,
) -> Result<ReturnTimeStats> {
    let chain = Chain::new(spec, 1e-12)?;
    let empty = CrossState::empty();
    let start = start.unwrap_or(&empty);
    let samples: Vec<Option<u64>> =
        (0..n_runs as u64).into_par_iter().map(|r| chain.hitting_time(start, t_cap, seed, r)).collect();
    if samples.iter().all(|s| s.is_none()) {
        return Err(Error::AllCensored(t_cap));
    }
    if samples.iter().flatten().any(|&t| t < 1) {
        return Err(Error::Invariant("return time below 1".into()));
    }
    let (survival, fit) = fit_tail(&samples, t_cap);
    if survival.windows(2).any(|w| w[1].1 > w[0].1) {
        return Err(Error::Invariant("empirical survival increased".into()));
    }
    let mle = stats::geometric_tail_mle(&samples, tail_onset(&survival, t_cap), t_cap);
    let steps: u64 = samples.iter().map(|s| s.unwrap_or(t_cap)).sum();
    Ok(ReturnTimeStats {
        slope: fit.as_ref().map(|f| f.slope),
        slope_se: fit.as_ref().map(|f| f.slope_se),
        r2: fit.as_ref().map(|f| f.r2),
        samples,
        t_cap,
        survival,
        mle,
        tv_bound: (steps as f64 * chain.neglected_per_step).min(1.0),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WChainReport {
    pub steps: u64,
    pub mismatches: u64,
    /// Return times to `∅` read from the state.
    pub state_returns: Vec<u64>,
    /// Return times of `W` to `-1`.
    pub w_returns: Vec<u64>,
    pub w_path: Vec<i64>,
}

/// Runs the chain from `∅` next to `W_n = max(W_{n-1} - 1, M_n)` on the
/// same fresh draws and checks that `W_n` is the largest maximum in the
/// state at every step.
pub fn w_chain_check(spec: &IntensitySpec, n_steps: u64, seed: u64) -> Result<WChainReport> {
    let chain = Chain::new(spec, 1e-12)?;
    let mut state = CrossState::empty();
    let mut w = -1i64;
    let mut report = WChainReport { steps: n_steps, mismatches: 0, state_returns: vec![], w_returns: vec![], w_path: vec![] };
    let (mut last_state, mut last_w) = (0u64, 0u64);
    for t in 1..=n_steps {
        let fresh = chain.fresh_sets(Chain::step_seed(seed, 0, t));
        let m = fresh.iter().map(|f| chain.diameter(f.shape)).max().unwrap_or(-1).max(-1);
        w = (w - 1).max(m);
        state = chain.advance(&state, &fresh);
        if chain.w_of(&state) != w {
            report.mismatches += 1;
        }
        if state.is_empty() {
            report.state_returns.push(t - last_state);
            last_state = t;
        }
        if w == -1 {
            report.w_returns.push(t - last_w);
            last_w = t;
        }
        report.w_path.push(w);
    }
    if report.mismatches > 0 || report.state_returns != report.w_returns {
        return Err(Error::Invariant(format!("W recursion disagrees with the chain at {} steps", report.mismatches)));
    }
    Ok(report)
}
