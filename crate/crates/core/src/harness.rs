//! Experiment configs, the scenario catalog and artifact output.
//!
//! A run writes CSV files plus `summary.json` and `manifest.json` into its
//! output directory. Nothing time-dependent is written, so a fixed config
//! reproduces every byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coding_censored::{self, binary_law_as_tri};
use crate::coding_general;
use crate::coding_pairs;
use crate::domination::{self, Epsilon};
use crate::error::Error;
use crate::exact::{self, ExactLaw};
use crate::intensity::{IntensitySpec, PairTail, ShapeOrbit};
use crate::lattice::{Site, Window};
use crate::markov1d::{self, Chain, CrossState};
use crate::rng;
use crate::sampler;
use crate::stats;

/// Width of the Monte Carlo acceptance bands, in standard deviations.
pub const SIGMA_BAND: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("tolerance check failed: {0}")]
    Tolerance(String),
}

impl HarnessError {
    /// 3 for invariant failures, 4 for failed checks and 2 for everything
    /// else (bad configs, inputs beyond the exact caps, I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Run(e) if e.is_invariant() => 3,
            HarnessError::Run(_) => 2,
            HarnessError::Tolerance(_) => 4,
        }
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> HarnessError {
        HarnessError::Config(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> HarnessError {
        HarnessError::Run(Error::Io(e))
    }
}

pub type HResult<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Sample,
    Oracle,
    Dominate,
    CodePairs,
    CodeGeneral,
    Censored,
    Markov,
    #[serde(rename = "example-1.5")]
    Example15,
    Streaks,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Sample => "sample",
            Kind::Oracle => "oracle",
            Kind::Dominate => "dominate",
            Kind::CodePairs => "code-pairs",
            Kind::CodeGeneral => "code-general",
            Kind::Censored => "censored",
            Kind::Markov => "markov",
            Kind::Example15 => "example-1.5",
            Kind::Streaks => "streaks",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// Inline spec, a path to a spec file, or `bundled:<name>`.
    #[serde(default)]
    pub spec: Option<Value>,
    pub seed: u64,
    pub replicas: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Kind-specific parameters; unknown keys are rejected.
    #[serde(default)]
    pub params: Value,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> HResult<ExperimentConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> HResult<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn resolve_spec(&self) -> HResult<Option<IntensitySpec>> {
        let Some(v) = &self.spec else { return Ok(None) };
        let spec = match v {
            Value::String(s) => match s.strip_prefix("bundled:") {
                Some(name) => bundled_spec(name).ok_or_else(|| HarnessError::Config(format!("unknown bundled spec {name}")))?,
                None => {
                    let text = fs::read_to_string(s).map_err(|e| HarnessError::Config(format!("{s}: {e}")))?;
                    IntensitySpec::from_json(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                }
            },
            other => IntensitySpec::from_json(&other.to_string()).map_err(|e| HarnessError::Config(e.to_string()))?,
        };
        Ok(Some(spec))
    }

    fn need_spec(&self) -> HResult<IntensitySpec> {
        self.resolve_spec()?.ok_or_else(|| HarnessError::Config(format!("kind {} needs a spec", self.kind.name())))
    }

    fn params<T: DeserializeOwned>(&self) -> HResult<T> {
        let v = if self.params.is_null() { json!({}) } else { self.params.clone() };
        serde_json::from_value(v).map_err(|e| HarnessError::Config(format!("params for {}: {e}", self.kind.name())))
    }
}

/// Interval `[lo, hi]` in 1D or rectangle with corners `lo`, `hi` in 2D.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowParam {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl WindowParam {
    fn window(&self) -> HResult<Window> {
        let site = |v: &[i64]| match v {
            [x] => Ok(Site::line(*x)),
            [x, y] => Ok(Site(*x, *y)),
            _ => Err(HarnessError::Config("window corners need 1 or 2 coordinates".into())),
        };
        let dim = self.lo.len() as u8;
        Window::new(dim, site(&self.lo)?, site(&self.hi)?).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn cells(v: &[Vec<i64>]) -> HResult<Vec<Site>> {
    v.iter()
        .map(|c| match c.as_slice() {
            [x] => Ok(Site::line(*x)),
            [x, y] => Ok(Site(*x, *y)),
            _ => Err(HarnessError::Config("cells need 1 or 2 coordinates".into())),
        })
        .collect()
}

fn default_budget() -> f64 {
    1e-12
}

fn line_window() -> WindowParam {
    WindowParam { lo: vec![0], hi: vec![2] }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleParams {
    #[serde(default = "line_window")]
    window: WindowParam,
    #[serde(default = "default_budget")]
    budget: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleParams {
    /// Site lists; each list is one query.
    windows: Vec<Vec<Vec<i64>>>,
    #[serde(default = "default_budget")]
    budget: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DominateParams {
    #[serde(default = "line_window")]
    window: WindowParam,
    #[serde(default = "half")]
    eps: f64,
    #[serde(default = "yes")]
    sequential: bool,
    #[serde(default)]
    lambda: Option<f64>,
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodePairsParams {
    #[serde(default = "line_window")]
    window: WindowParam,
    #[serde(default = "six")]
    k_max: u32,
    #[serde(default)]
    verify: bool,
}

fn six() -> u32 {
    6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeGeneralParams {
    window: WindowParam,
    #[serde(default = "seven")]
    k_max: u32,
    #[serde(default)]
    verify: bool,
}

fn seven() -> u32 {
    7
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CensoredParams {
    #[serde(default)]
    lo: i64,
    #[serde(default = "three")]
    levels: u32,
    #[serde(default = "centre_pair")]
    observe: Vec<usize>,
}

fn three() -> u32 {
    3
}

fn centre_pair() -> Vec<usize> {
    vec![3, 4]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkovParams {
    #[serde(default = "thousand")]
    t_cap: u64,
    #[serde(default = "ten_thousand")]
    w_steps: u64,
    /// Optional non-empty start for the hitting-time comparison:
    /// `(orbit index, offset)` members.
    #[serde(default)]
    start: Vec<(usize, i64)>,
}

fn thousand() -> u64 {
    1000
}

fn ten_thousand() -> u64 {
    10_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Example15Params {
    #[serde(default = "one")]
    lambda: f64,
    #[serde(default = "ks")]
    ks: Vec<usize>,
}

fn one() -> f64 {
    1.0
}

fn ks() -> Vec<usize> {
    vec![2, 3, 4]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreaksParams {
    #[serde(default = "eight")]
    max_len: usize,
    #[serde(default)]
    witness: Option<WitnessParams>,
}

fn eight() -> usize {
    8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WitnessParams {
    n: usize,
    #[serde(default = "ten")]
    beta: f64,
    side: i64,
    #[serde(default = "ten_usize")]
    trials: usize,
}

fn ten() -> f64 {
    10.0
}

fn ten_usize() -> usize {
    10
}

/// One checked statement of a run.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

/// A Monte Carlo frequency with its confidence band, or an exact value.
#[derive(Clone, Debug, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub exact: bool,
}

impl Estimate {
    pub fn frequency(hits: usize, n: usize) -> Estimate {
        let (ci_lo, ci_hi) = stats::proportion_ci(hits, n, SIGMA_BAND);
        Estimate { value: hits as f64 / n.max(1) as f64, ci_lo, ci_hi, exact: false }
    }

    pub fn exact(value: f64) -> Estimate {
        Estimate { value, ci_lo: value, ci_hi: value, exact: true }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub kind: Kind,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub summary: Value,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Artifacts {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Artifacts {
    fn new(dir: Option<PathBuf>) -> HResult<Artifacts> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Artifacts { dir, files: Vec::new() })
    }

    /// Calls `f` with a writer for `name`, or with a sink when no output
    /// directory is configured.
    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> crate::Result<()>) -> HResult<()> {
        match &self.dir {
            Some(d) => {
                let mut file = fs::File::create(d.join(name))?;
                f(&mut file)?;
                self.files.push(name.to_string());
            }
            None => f(&mut std::io::sink())?,
        }
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> HResult<()> {
        let text = serde_json::to_string_pretty(v)? + "\n";
        self.write(name, |w| Ok(w.write_all(text.as_bytes())?))
    }
}

/// Runs one experiment and writes its artifacts.
pub fn run(config: &ExperimentConfig) -> HResult<RunOutcome> {
    if config.replicas == 0 && !matches!(config.kind, Kind::Oracle | Kind::Streaks) {
        return Err(HarnessError::Config("replica count must be positive".into()));
    }
    let mut art = Artifacts::new(config.out.clone())?;
    let (summary, checks, budget) = match config.kind {
        Kind::Sample => run_sample(config, &mut art)?,
        Kind::Oracle => run_oracle(config, &mut art)?,
        Kind::Dominate => run_dominate(config, &mut art)?,
        Kind::CodePairs => run_code_pairs(config, &mut art)?,
        Kind::CodeGeneral => run_code_general(config, &mut art)?,
        Kind::Censored => run_censored(config, &mut art)?,
        Kind::Markov => run_markov(config, &mut art)?,
        Kind::Example15 => run_example15(config, &mut art)?,
        Kind::Streaks => run_streaks(config, &mut art)?,
    };
    art.json("summary.json", &json!({ "summary": summary, "checks": checks }))?;
    let spec = config.resolve_spec()?.map(|s| serde_json::from_str::<Value>(&s.to_json()).unwrap_or(Value::Null));
    let manifest = json!({
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "kind": config.kind,
        "seed": config.seed,
        "replicas": config.replicas,
        "truncation_budget": budget,
        "spec": spec,
        "params": config.params,
        "files": art.files.iter().cloned().chain(["manifest.json".to_string()]).collect::<Vec<_>>(),
    });
    art.json("manifest.json", &manifest)?;
    Ok(RunOutcome { kind: config.kind, files: art.files, checks, summary })
}

/// Like [`run`], but failed checks become a tolerance error.
pub fn run_checked(config: &ExperimentConfig) -> HResult<RunOutcome> {
    let out = run(config)?;
    if let Some(c) = out.checks.iter().find(|c| !c.passed) {
        return Err(HarnessError::Tolerance(format!("{}: {}", c.name, c.detail)));
    }
    Ok(out)
}

type KindResult = HResult<(Value, Vec<Check>, f64)>;

fn run_sample(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: SampleParams = c.params()?;
    let spec = c.need_spec()?;
    let window = p.window.window()?;
    let fs = sampler::FieldSampler::new(&spec, window, 0, p.budget)?;
    let n = window.len();
    let mut ones = vec![0usize; n];
    let mut all_one = 0usize;
    for r in 0..c.replicas {
        let s = fs.sample(rng::replica_seed(c.seed, r as u64), 0.0);
        if r == 0 {
            art.write("first_sample.csv", |w| s.write_csv(w))?;
        }
        for (k, &b) in s.bar_x.iter().enumerate() {
            ones[k] += b as usize;
        }
        all_one += s.bar_x.iter().all(|&b| b) as usize;
    }
    let sites = window.sites();
    let density: Vec<Estimate> = ones.iter().map(|&h| Estimate::frequency(h, c.replicas)).collect();
    art.write("density.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["site_x", "site_y", "density", "ci_lo", "ci_hi"])?;
        for (s, e) in sites.iter().zip(&density) {
            w.write_record([s.0.to_string(), s.1.to_string(), e.value.to_string(), e.ci_lo.to_string(), e.ci_hi.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let summary = json!({ "density": density, "all_one": Estimate::frequency(all_one, c.replicas) });
    Ok((summary, vec![], p.budget))
}

fn run_oracle(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: OracleParams = c.params()?;
    let spec = c.need_spec()?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (i, w) in p.windows.iter().enumerate() {
        let sites = cells(w)?;
        let one = exact::prob_all_one(&spec, &sites, p.budget)?;
        let zero = exact::prob_all_zero(&spec, &sites, p.budget)?;
        let mc = if c.replicas > 0 {
            let (hits, n) = domination::estimate_all_one(&spec, &sites, c.replicas, rng::hash(c.seed, 0, &[i as i64]), p.budget)?;
            let e = Estimate::frequency(hits, n);
            let sigma = stats::binomial_sigma(one.lo, n).max(1.0 / n as f64);
            let ok = e.value >= one.lo - SIGMA_BAND * sigma && e.value <= one.hi + SIGMA_BAND * sigma;
            checks.push(Check::new(format!("oracle window {i}"), ok, format!("MC {} vs exact [{}, {}]", e.value, one.lo, one.hi)));
            Some(e)
        } else {
            None
        };
        rows.push(json!({ "sites": sites, "all_one": one, "all_zero": zero, "monte_carlo": mc }));
    }
    art.write("oracle.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["window", "all_one_lo", "all_one_hi", "all_zero_lo", "all_zero_hi", "mc", "mc_ci_lo", "mc_ci_hi"])?;
        for (i, r) in rows.iter().enumerate() {
            let f = |v: &Value| v.as_f64().map_or(String::new(), |x| x.to_string());
            w.write_record([
                i.to_string(),
                f(&r["all_one"]["lo"]),
                f(&r["all_one"]["hi"]),
                f(&r["all_zero"]["lo"]),
                f(&r["all_zero"]["hi"]),
                f(&r["monte_carlo"]["value"]),
                f(&r["monte_carlo"]["ci_lo"]),
                f(&r["monte_carlo"]["ci_hi"]),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok((json!({ "windows": rows }), checks, p.budget))
}

fn run_dominate(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: DominateParams = c.params()?;
    let spec = c.need_spec()?;
    let window = p.window.window()?;
    let eps = Epsilon::Uniform(p.eps);
    let budget = 1e-12;
    let profile = domination::delta_bound(&spec, &window.sites(), &eps, p.sequential, budget)?;
    art.write("delta.csv", |w| profile.write_csv(w))?;
    let run = domination::sample_monotone_coupling(&spec, window, &eps, p.sequential, c.seed, c.replicas)?;
    let mut checks = vec![
        Check::new("y ≤ z", run.y_le_z == run.exposures, format!("{}/{}", run.y_le_z, run.exposures)),
        Check::new("q ≤ δ", run.max_q_minus_delta <= 1e-12, format!("max q - δ = {}", run.max_q_minus_delta)),
    ];
    let mut density = None;
    if let Some(lambda) = p.lambda {
        let d = domination::dominating_iid_density(&spec, lambda)?;
        checks.push(Check::new("density < 1", d.density < 1.0, d.density.to_string()));
        if window.len() <= 3 {
            let law = exact::law_of_union(&spec, &window.sites(), budget)?;
            let prod = ExactLaw::product(window.sites(), &vec![d.density; window.len()]);
            let dom = exact::check_dominance(&law, &prod)?;
            checks.push(Check::new("X̄ ⪯ product", dom.dominated, format!("{:?}", dom.witness)));
        }
        density = Some(d);
    }
    let summary = json!({ "delta": profile, "coupling": run, "iid_density": density });
    Ok((summary, checks, budget))
}

fn run_code_pairs(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: CodePairsParams = c.params()?;
    let spec = c.need_spec()?;
    let window = p.window.window()?;
    let s = coding_pairs::run_pairs(&spec, window, c.seed, p.k_max, c.replicas, p.verify)?;
    art.write("radius.csv", |w| s.write_radius_csv(w))?;
    art.write("gates.csv", |w| s.write_gates_csv(w))?;
    let mut checks = Vec::new();
    let trials = s.replicas * s.sites;
    for (i, &k) in s.level_k.iter().enumerate() {
        if k < 2 {
            continue;
        }
        let failure = s.gate_rate(i);
        let bound = 3.0 / (k * k) as f64;
        let ok = failure <= bound + 3.0 * stats::binomial_sigma(bound.min(1.0), trials);
        checks.push(Check::new(format!("gate failure level {k}"), ok, format!("{failure} vs 3k⁻² = {bound}")));
    }
    let law = exact::law_of_union(&spec, &window.sites(), 1e-12);
    if let (Ok(law), true) = (law, window.len() <= 3) {
        let emp: Vec<f64> = s.law_counts.iter().map(|&n| n as f64 / s.replicas as f64).collect();
        let tv = stats::tv_distance(&emp, &law.weights);
        let floor = stats::tv_noise_floor(&law.weights, s.replicas);
        checks.push(Check::new("coded law", tv <= 0.01_f64.max(2.0 * floor), format!("TV {tv}")));
    }
    Ok((serde_json::to_value(&s)?, checks, 1e-12))
}

fn run_code_general(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: CodeGeneralParams = c.params()?;
    let spec = c.need_spec()?;
    let window = p.window.window()?;
    let s = coding_general::run_general(&spec, window, c.seed, p.k_max, c.replicas, p.verify)?;
    art.write("general.csv", |w| s.write_csv(w))?;
    let mut checks = Vec::new();
    let trials = s.replicas * s.sites;
    for (i, &k) in s.level_k.iter().enumerate() {
        let rate = s.gate_rate(i);
        let bound = s.gate_bound[i];
        let ok = rate <= bound + SIGMA_BAND * stats::binomial_sigma(bound.min(1.0), trials);
        checks.push(Check::new(format!("gate rate level {k}"), ok, format!("{rate} vs {bound}")));
    }
    if window.len() <= 4 {
        let law = exact::law_of_union(&spec, &window.sites(), 1e-12)?;
        let emp: Vec<f64> = s.law_counts.iter().map(|&n| n as f64 / s.replicas as f64).collect();
        let tv = stats::tv_distance(&emp, &law.weights);
        let floor = stats::tv_noise_floor(&law.weights, s.replicas);
        checks.push(Check::new("coded law", tv <= 0.01_f64.max(2.0 * floor), format!("TV {tv}")));
    }
    Ok((serde_json::to_value(&s)?, checks, 1e-12))
}

fn run_censored(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: CensoredParams = c.params()?;
    let spec = c.need_spec()?;
    let len = 1i64 << p.levels;
    let window = Window::interval(p.lo, p.lo + len - 1)?;
    let s = coding_censored::run_censored(&spec, window, c.seed, p.levels, c.replicas, &p.observe)?;
    art.write("star_density.csv", |w| s.write_star_csv(w))?;
    art.write("resolution.csv", |w| s.write_resolution_csv(w))?;
    let sites: Vec<Site> = p.observe.iter().map(|&i| Site::line(p.lo + i as i64)).collect();
    let law = exact::law_of_union(&spec, &sites, 1e-12)?;
    let target = binary_law_as_tri(&law.weights, sites.len());
    let tv = stats::tv_distance(&s.final_law(), &target);
    let checks = vec![
        Check::new("monotone", s.monotone_runs == s.replicas, format!("{}/{}", s.monotone_runs, s.replicas)),
        Check::new("final law", tv <= 0.01, format!("TV {tv}")),
    ];
    Ok((json!({ "refinement": s, "final_tv": tv }), checks, 1e-17))
}

fn run_markov(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: MarkovParams = c.params()?;
    let spec = c.need_spec()?;
    let chain = Chain::new(&spec, 1e-12)?;
    let from_empty = markov1d::return_time_stats(&spec, c.replicas, p.t_cap, c.seed, None)?;
    art.write("survival.csv", |w| from_empty.write_csv(w))?;
    let w = markov1d::w_chain_check(&spec, p.w_steps, c.seed)?;
    let mut count = 0usize;
    let mut count_sq = 0.0;
    for r in 0..c.replicas {
        let n = chain.stationary_state(rng::replica_seed(c.seed, r as u64)).len();
        count += n;
        count_sq += (n * n) as f64;
    }
    let n = c.replicas as f64;
    let mean = count as f64 / n;
    let sd = ((count_sq / n - mean * mean).max(0.0) / n).sqrt();
    let expect = chain.expected_crossing();
    let mut checks = vec![
        Check::new("W recursion", w.mismatches == 0, format!("{} mismatches", w.mismatches)),
        Check::new(
            "crossing mean",
            (mean - expect).abs() <= SIGMA_BAND * sd.max(1.0 / n) + chain.stationary_neglected(),
            format!("{mean} vs {expect}"),
        ),
    ];
    let mut from_start = None;
    if !p.start.is_empty() {
        let members = p
            .start
            .iter()
            .map(|&(i, offset)| markov1d::Member { shape: crate::intensity::Source::Orbit(i), offset })
            .collect();
        let b = CrossState::from_members(members);
        let st = markov1d::return_time_stats(&spec, c.replicas, p.t_cap, c.seed ^ 0x5eed, Some(&b))?;
        if let (Some(a), Some(b)) = (from_empty.mle, st.mle) {
            let z = (a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt();
            checks.push(Check::new("slopes agree", z <= SIGMA_BAND, format!("{} vs {} (z = {z})", a.0, b.0)));
        }
        from_start = Some(st);
    }
    let strip = |s: &markov1d::ReturnTimeStats| json!({
        "t_cap": s.t_cap, "censored": s.censored(), "slope": s.slope, "slope_se": s.slope_se,
        "r2": s.r2, "mle": s.mle, "tv_bound": s.tv_bound,
    });
    let summary = json!({
        "from_empty": strip(&from_empty),
        "from_start": from_start.as_ref().map(strip),
        "w_chain": { "steps": w.steps, "mismatches": w.mismatches, "returns": w.state_returns.len() },
        "crossing_mean": Estimate { value: mean, ci_lo: mean - SIGMA_BAND * sd, ci_hi: mean + SIGMA_BAND * sd, exact: false },
        "crossing_expected": expect,
    });
    Ok((summary, checks, 1e-12))
}

/// The spec slice with `p_A = e^{-λ|A|}` on translates of
/// `A_k = {0, k, 2k, …, (k-1)k}`.
pub fn example15_spec(lambda: f64, ks: &[usize]) -> crate::Result<IntensitySpec> {
    let orbits = ks
        .iter()
        .map(|&k| {
            let cells: Vec<i64> = (0..k as i64).map(|i| i * k as i64).collect();
            ShapeOrbit::line(&cells, (-lambda * k as f64).exp())
        })
        .collect::<crate::Result<Vec<_>>>()?;
    IntensitySpec::one_d(orbits)
}

fn run_example15(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: Example15Params = c.params()?;
    if p.ks.iter().any(|&k| k < 1) || p.lambda <= 0.0 {
        return Err(HarnessError::Config("need λ > 0 and k ≥ 1".into()));
    }
    let spec = match c.resolve_spec()? {
        Some(s) => s,
        None => example15_spec(p.lambda, &p.ks)?,
    };
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &k in &p.ks {
        let sites: Vec<Site> = (0..k as i64).map(|i| Site::line(i * k as i64)).collect();
        let pa = (-p.lambda * k as f64).exp();
        let ex = exact::prob_all_one(&spec, &sites, 1e-12)?;
        let (hits, n) = domination::estimate_all_one(&spec, &sites, c.replicas, rng::hash(c.seed, 1, &[k as i64]), 1e-12)?;
        let mc = Estimate::frequency(hits, n);
        checks.push(Check::new(format!("k = {k} exact"), ex.lo >= pa - 1e-15, format!("{} ≥ {pa}", ex.lo)));
        checks.push(Check::new(format!("k = {k} MC"), mc.ci_hi >= pa, format!("CI upper {} ≥ {pa}", mc.ci_hi)));
        rows.push((k, pa, ex, mc));
    }
    art.write("example15.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["k", "p_A", "exact_lo", "exact_hi", "mc", "mc_ci_lo", "mc_ci_hi"])?;
        for (k, pa, ex, mc) in &rows {
            w.write_record([
                k.to_string(),
                pa.to_string(),
                ex.lo.to_string(),
                ex.hi.to_string(),
                mc.value.to_string(),
                mc.ci_lo.to_string(),
                mc.ci_hi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let summary = json!({
        "rows": rows.iter().map(|(k, pa, ex, mc)| json!({ "k": k, "p_A": pa, "exact": ex, "monte_carlo": mc })).collect::<Vec<_>>()
    });
    Ok((summary, checks, 1e-12))
}

fn run_streaks(c: &ExperimentConfig, art: &mut Artifacts) -> KindResult {
    let p: StreaksParams = c.params()?;
    let spec = c.need_spec()?;
    if spec.dimension() != 1 || p.max_len == 0 {
        return Err(HarnessError::Config("streaks need a 1D spec and max_len ≥ 1".into()));
    }
    let candidates: Vec<Vec<Site>> = (1..=p.max_len as i64).map(|n| (0..n).map(Site::line).collect()).collect();
    let mut per_len = Vec::new();
    for s in &candidates {
        let v = exact::prob_all_one(&spec, s, 1e-12)?;
        per_len.push((s.len(), v.lo, v.lo.powf(1.0 / s.len() as f64)));
    }
    let report = exact::streak_density(&spec, &candidates, 1e-12)?;
    art.write("streaks.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["length", "p_all_one", "per_site"])?;
        for (n, pr, d) in &per_len {
            w.write_record([n.to_string(), pr.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut checks = Vec::new();
    let mut witness = None;
    if let Some(wp) = p.witness {
        let wr = domination::witness_search(&spec, wp.n, wp.beta, wp.side, c.seed, wp.trials)?;
        art.write("witness.csv", |w| wr.write_csv(w))?;
        if c.replicas > 0 {
            let mut set: Vec<Site> = wr.b.clone();
            set.retain(|s| !wr.d.contains(s));
            let (hits, n) = domination::estimate_all_one(&spec, &set, c.replicas, c.seed, 1e-12)?;
            let mc = Estimate::frequency(hits, n);
            checks.push(Check::new("certified ≤ MC", wr.bound <= mc.ci_hi, format!("{} ≤ {}", wr.bound, mc.ci_hi)));
        }
        witness = Some(wr);
    }
    let summary = json!({ "streak": report, "per_length": per_len, "witness": witness });
    Ok((summary, checks, 1e-12))
}

/// Specs referenced by the scenario catalog as `bundled:<name>`.
pub fn bundled_spec(name: &str) -> Option<IntensitySpec> {
    let line = |xs: &[i64], p: f64| ShapeOrbit::line(xs, p).unwrap();
    let plane = |c: &[(i64, i64)], p: f64| ShapeOrbit::new(&c.iter().map(|&(x, y)| Site(x, y)).collect::<Vec<_>>(), p).unwrap();
    let spec = match name {
        "pair-half" => IntensitySpec::one_d(vec![line(&[0, 1], 0.5)]),
        "pair-tenth" => IntensitySpec::one_d(vec![line(&[0, 1], 0.1)]),
        "singleton-half" => IntensitySpec::one_d(vec![line(&[0], 0.5)]),
        "four-ninths" => IntensitySpec::one_d(vec![line(&[0], 0.5), line(&[0, 1], 0.1)]),
        "mixed-1d" => IntensitySpec::one_d(vec![line(&[0], 0.2), line(&[0, 1], 0.1), line(&[0, 2], 0.05), line(&[0, 1, 3], 0.02)]),
        "geometric-half" => IntensitySpec::pairs(PairTail::geometric(1.0, 0.5)),
        "geometric-quarter" => IntensitySpec::pairs(PairTail::geometric(1.0, 0.25)),
        "geometric-chain" => IntensitySpec::new(1, vec![], Some(PairTail::geometric(0.6, 0.5))),
        "heavy-tail" => IntensitySpec::new(1, vec![], Some(heavy_tail(0.3, 64))),
        "plane" => IntensitySpec::new(
            2,
            vec![
                plane(&[(0, 0)], 0.2),
                plane(&[(0, 0), (1, 0)], 0.02),
                plane(&[(0, 0), (0, 1)], 0.02),
                plane(&[(0, 0), (2, 2)], 0.001),
                plane(&[(0, 0), (3, 0)], 0.0002),
            ],
            None,
        ),
        _ => return None,
    };
    spec.ok()
}

/// `p_n = c·n⁻³` for `n ≤ last`: no exponential moment survives a growing
/// cutoff.
pub fn heavy_tail(c: f64, last: u64) -> PairTail {
    PairTail::List { start: 1, values: (1..=last).map(|n| c / (n * n * n) as f64).collect() }
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub name: &'static str,
    /// The result the scenario reproduces.
    pub anchor: &'static str,
    pub config: Value,
}

impl Scenario {
    pub fn config(&self) -> HResult<ExperimentConfig> {
        Ok(serde_json::from_value(self.config.clone())?)
    }
}

pub fn catalog() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "example-1.5",
            anchor: "single exponential moment is not sufficient: P(X̄_{A_k} ≡ 1) ≥ e^{-λk}",
            config: json!({ "kind": "example-1.5", "seed": 15, "replicas": 100000, "params": { "lambda": 1.0, "ks": [2, 3, 4] } }),
        },
        Scenario {
            name: "streak-lower-bound",
            anchor: "streak density lower bound and the witness certificate",
            config: json!({ "kind": "streaks", "spec": "bundled:heavy-tail", "seed": 3, "replicas": 20000,
                "params": { "max_len": 8, "witness": { "n": 2, "beta": 10.0, "side": 4, "trials": 10 } } }),
        },
        Scenario {
            name: "pairs-coding-budget",
            anchor: "finitary coding of pair processes: gate failures at most 3k⁻²",
            config: json!({ "kind": "code-pairs", "spec": "bundled:geometric-half", "seed": 5, "replicas": 100000,
                "params": { "window": { "lo": [0], "hi": [2] }, "k_max": 6 } }),
        },
        Scenario {
            name: "oracle-pair",
            anchor: "inclusion-exclusion values for a single pair orbit",
            config: json!({ "kind": "oracle", "spec": "bundled:pair-half", "seed": 1, "replicas": 100000,
                "params": { "windows": [[[0]], [[0], [1]], [[0], [1], [2]]] } }),
        },
        Scenario {
            name: "sequential-domination",
            anchor: "domination by a product measure under sequential exposure",
            config: json!({ "kind": "dominate", "spec": "bundled:pair-tenth", "seed": 2, "replicas": 100000,
                "params": { "window": { "lo": [0], "hi": [2] }, "eps": 0.5, "sequential": true, "lambda": 1.0 } }),
        },
        Scenario {
            name: "iid-density",
            anchor: "domination by an IID field under an exponential moment",
            config: json!({ "kind": "dominate", "spec": "bundled:geometric-quarter", "seed": 4, "replicas": 10000,
                "params": { "window": { "lo": [0], "hi": [2] }, "eps": 0.5, "lambda": std::f64::consts::LN_2 } }),
        },
        Scenario {
            name: "general-coding-2d",
            anchor: "finitary coding on the plane via nets and class gates",
            config: json!({ "kind": "code-general", "spec": "bundled:plane", "seed": 6, "replicas": 20000,
                "params": { "window": { "lo": [0, 0], "hi": [1, 1] }, "k_max": 7 } }),
        },
        Scenario {
            name: "censored-refinement",
            anchor: "censored fields and the multiscale refinement for large singleton probability",
            config: json!({ "kind": "censored", "spec": "bundled:four-ninths", "seed": 7, "replicas": 100000,
                "params": { "levels": 3, "observe": [3, 4] } }),
        },
        Scenario {
            name: "markov-return-times",
            anchor: "exponential return times of the crossing-set chain",
            config: json!({ "kind": "markov", "spec": "bundled:geometric-chain", "seed": 8, "replicas": 20000,
                "params": { "t_cap": 400, "w_steps": 10000 } }),
        },
        Scenario {
            name: "sample-window",
            anchor: "direct sampling of the union process",
            config: json!({ "kind": "sample", "spec": "bundled:mixed-1d", "seed": 9, "replicas": 10000,
                "params": { "window": { "lo": [0], "hi": [7] } } }),
        },
    ]
}

pub fn scenario(name: &str) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_contents() {
        let c = catalog();
        assert!(c.len() >= 8);
        for name in ["example-1.5", "streak-lower-bound", "pairs-coding-budget"] {
            assert!(scenario(name).is_some(), "{name}");
        }
        for s in &c {
            assert!(!s.anchor.is_empty());
            s.config().unwrap();
        }
    }

    #[test]
    fn bundled_specs_resolve() {
        for name in ["pair-half", "pair-tenth", "singleton-half", "four-ninths", "mixed-1d", "geometric-half", "geometric-quarter", "geometric-chain", "heavy-tail", "plane"] {
            assert!(bundled_spec(name).is_some(), "{name}");
        }
    }

    #[test]
    fn config_errors_map_to_exit_two() {
        let bad = ExperimentConfig::from_json(r#"{"kind": "oracle", "seed": 1}"#).unwrap_err();
        assert_eq!(bad.exit_code(), 2);
        let cfg = ExperimentConfig::from_json(r#"{"kind": "oracle", "seed": 1, "replicas": 0, "spec": "bundled:pair-half", "params": {"windows": [[[0]]], "bogus": 1}}"#).unwrap();
        assert_eq!(run(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn oracle_pair_value() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "oracle", "seed": 1, "replicas": 0, "spec": "bundled:pair-half", "params": {"windows": [[[0], [1]]]}}"#).unwrap();
        let out = run(&cfg).unwrap();
        let v = out.summary["windows"][0]["all_one"]["lo"].as_f64().unwrap();
        assert!((v - 0.625).abs() < 1e-12);
    }

    #[test]
    fn deterministic_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = scenario("example-1.5").unwrap().config().unwrap();
        cfg.replicas = 2000;
        let read = |d: &Path| {
            let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(d)
                .unwrap()
                .map(|e| e.unwrap().path())
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
                .collect();
            v.sort();
            v
        };
        cfg.out = Some(dir.path().join("a"));
        run(&cfg).unwrap();
        cfg.out = Some(dir.path().join("b"));
        run(&cfg).unwrap();
        assert_eq!(read(&dir.path().join("a")), read(&dir.path().join("b")));
    }
}
