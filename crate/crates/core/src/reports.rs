//! Scenario runner and report emitter behind the `jtame` binary.
//!
//! A run reads a TOML configuration, executes one [`Scenario`], writes CSV
//! and JSON artifacts into an output directory and returns a [`RunReport`].
//! Every check carries the tolerance it was judged with and the module
//! invariant it exercises; the exit status is 1 iff a check fails.
//!
//! Configuration schema:
//!
//! ```toml
//! seed = 7                 # required for randomized scenarios unless --seed is given
//! grid_scale = 1.0         # multiplies every grid resolution
//!
//! [tolerances]             # optional; defaults are 1e-12 / 1e-9 / 1e-6
//! structural = 1e-12
//! derived = 1e-9
//! sampled = 1e-6
//!
//! [scenario]
//! kind = "inflate-trivial" # linear-sweep | isotopy-sweep | inflate-trivial |
//!                          # inflate-negative | inflate-positive-bound | prepare
//! t_target = 5.0
//! eps1 = 0.5
//! eps2 = 1.0
//! [scenario.model]
//! r_max = 0.3
//! family = { skew = { kind = "constant", a = 0.8, b = 0.0 }, twist = [1.5, 0.0] }
//! ```

use crate::inflation::{
    build_profile_negative, build_profile_positive, build_profile_trivial, class_shift, exterior_derivative_defect, estimate_epsilons, omega_f, positive_case_bound, positive_obstruction,
    verify_tameness, BundleCase, EpsilonPair, ModelGrid, NormalModel, ObstructionSweep,
};
use crate::jet_extension::{
    check_section, extend_diffeo, extend_section, jet_residual, random_automorphism, random_normal_jet, TubeGrid,
};
use crate::linalg::{blocks, max_abs, skew_block, spectral_norm};
use crate::linear_core::{
    acs_norm_bound_check, block_form_norm, compat_projection, euclidean_margin, iota, is_invariant, is_tame, local_margin, random_symplectic,
    skew_from_block, skew_norm, split, AcsMatrix, SkewPart, TwoForm,
};
use crate::linear_isotopy::{composition_defect, composition_defect_exact, lemma_step_bound, n_of_t, psi, psi_norm_defect, IsotopyContext};
use crate::model::{AcsFamily, SkewProfile};
use crate::pipeline::{choose_params_with, prepare, CurveField, PipelineError, PipelineTrace, StepRecord};
use crate::jet_extension::{calibrate_constants_seeded, CALIBRATION_BATTERY};
use crate::tolerance::Tolerances;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Seed used by `selftest` when none is given.
pub const SELFTEST_SEED: u64 = 0x7365_6c66;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: String, source: std::io::Error },
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("cannot write artifact: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ReportError {
    /// Usage, configuration and precondition errors all map to 2.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn pre<E: std::fmt::Display>(e: E) -> ReportError {
    ReportError::Precondition(e.to_string())
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub grid_scale: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub scenario: Option<Scenario>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ReportError> {
        toml::from_str(text).map_err(|e| ReportError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::ReadConfig { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }
}

/// Model family, radius and grid for the inflation scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: AcsFamily,
    pub r_max: f64,
    #[serde(default)]
    pub grid: ModelGrid,
}

fn default_n_values() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, 1.99]
}
fn default_placements() -> usize {
    16
}
fn default_one() -> f64 {
    1.0
}
fn default_times() -> usize {
    11
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_tuples() -> usize {
    1000
}
fn default_r_positive() -> f64 {
    0.4
}
fn default_eps1_sweep() -> Vec<f64> {
    vec![0.3, 0.5, 0.7, 0.9]
}
fn default_positive_grid() -> ModelGrid {
    ModelGrid {
        n_r: 256,
        n_theta: 16,
        n_z: 4,
        r_min_ratio: 1e-10,
    }
}
fn default_tube() -> TubeGrid {
    TubeGrid::new(16, 13, 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    LinearSweep(LinearSweep),
    IsotopySweep(IsotopySweep),
    InflateTrivial(InflateTrivial),
    InflateNegative(InflateNegative),
    InflatePositiveBound(InflatePositiveBound),
    Prepare(PrepareScenario),
}

/// Margin law for `J_B` with `|B| = N` over a list of `N`, plus random
/// symplectic placements of each tame `J_B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSweep {
    #[serde(default = "default_n_values")]
    pub n_values: Vec<f64>,
    #[serde(default = "default_placements")]
    pub placements: usize,
}

/// `Ψ_t` on an evenly spaced time grid of `[0, 1/2]`, plus random tuples
/// for the step lemma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsotopySweep {
    #[serde(default = "default_one")]
    pub n: f64,
    #[serde(default = "default_times")]
    pub times: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tuples")]
    pub tuples: usize,
}

/// `eps1`, `eps2` declare the constants the profile is built for; they
/// default to the measured ones and must dominate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflateTrivial {
    pub t_target: f64,
    pub model: ModelSpec,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflateNegative {
    pub m: u32,
    pub m_prime: f64,
    pub model: ModelSpec,
}

/// Obstruction sweep over head values on the worst-case model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflatePositiveBound {
    pub m: u32,
    pub eps1: f64,
    pub m_prime: Vec<f64>,
    #[serde(default = "default_r_positive")]
    pub r_max: f64,
    #[serde(default = "default_positive_grid")]
    pub grid: ModelGrid,
    #[serde(default = "default_eps1_sweep")]
    pub eps1_sweep: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareScenario {
    pub family: AcsFamily,
    #[serde(default = "default_tube")]
    pub grid: TubeGrid,
}

impl Scenario {
    pub fn kind(&self) -> &'static str {
        match self {
            Scenario::LinearSweep(_) => "linear-sweep",
            Scenario::IsotopySweep(_) => "isotopy-sweep",
            Scenario::InflateTrivial(_) => "inflate-trivial",
            Scenario::InflateNegative(_) => "inflate-negative",
            Scenario::InflatePositiveBound(_) => "inflate-positive-bound",
            Scenario::Prepare(_) => "prepare",
        }
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self, Scenario::LinearSweep(_) | Scenario::IsotopySweep(_) | Scenario::Prepare(_))
    }

    /// Checks the parameters against the target module's preconditions.
    pub fn validate(&self) -> Result<(), ReportError> {
        let bad = |msg: String| Err(ReportError::Precondition(msg));
        match self {
            Scenario::LinearSweep(s) => {
                if s.n_values.is_empty() || s.n_values.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
                    return bad("linear-sweep needs a non-empty list of finite N ≥ 0".into());
                }
            }
            Scenario::IsotopySweep(s) => {
                if !(0.0..2.0).contains(&s.n) {
                    return bad(format!("isotopy needs 0 ≤ N < 2 (tame), got N = {}", s.n));
                }
                if s.times < 2 || !(s.epsilon > 0.0 && s.epsilon.is_finite()) {
                    return bad("isotopy-sweep needs times ≥ 2 and epsilon > 0".into());
                }
            }
            Scenario::InflateTrivial(s) => {
                if !(s.t_target >= 0.0 && s.t_target.is_finite()) {
                    return bad(format!("t_target = {} must be a finite number ≥ 0", s.t_target));
                }
                if s.eps1.is_some() != s.eps2.is_some() {
                    return bad("declare both eps1 and eps2 or neither".into());
                }
                if let (Some(e1), Some(e2)) = (s.eps1, s.eps2) {
                    EpsilonPair::new(e1, e2, 1.0).map_err(pre)?;
                }
            }
            Scenario::InflateNegative(s) => {
                if s.m == 0 {
                    return bad("m must be a positive integer".into());
                }
                let bound = 1.0 / s.m as f64;
                if !(0.0..bound).contains(&s.m_prime) {
                    return bad(format!("M' = {} violates 0 ≤ M' < 1/m = {bound} (inflation bound −ω(Z)/(Z·Z))", s.m_prime));
                }
            }
            Scenario::InflatePositiveBound(s) => {
                if s.m == 0 || !(s.eps1 > 0.0 && s.eps1 < 1.0) || s.eps1_sweep.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                    return bad("positive bound needs m ≥ 1 and every ε₁ in (0, 1)".into());
                }
                if s.m_prime.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
                    return bad("head values M' must be finite and ≥ 0".into());
                }
            }
            Scenario::Prepare(s) => {
                let n = s.family.skew.n_max();
                if n >= 2.0 {
                    return bad(format!("prepare needs N < 2 along Z (tame), got sup N = {n}"));
                }
                if s.grid.n_z < 4 || !(s.grid.radius > 0.0) {
                    return bad("prepare grid needs n_z ≥ 4 and radius > 0".into());
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Report types

/// Which tolerance a check or output is judged with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Structural,
    Derived,
    Sampled,
    /// A literal threshold fixed by the check itself.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `|value − reference| ≤ tolerance`.
    Close,
    /// `|value − reference| ≤ tolerance·|reference|`.
    Relative,
    /// `value ≤ reference + tolerance`.
    AtMost,
    /// `value < reference`.
    Below,
    /// `value > reference`.
    Above,
    /// `value = reference` exactly.
    Equal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub invariant: String,
    pub relation: Relation,
    pub value: f64,
    pub reference: f64,
    pub tier: Tier,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub name: String,
    pub value: f64,
    pub tier: Tier,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: Option<u64>,
    pub grid_scale: f64,
    pub tolerances: Tolerances,
    pub scenarios: Vec<Scenario>,
    pub outputs: Vec<Output>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub passed: bool,
}

impl RunReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }

    /// One line per check and a closing summary.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{} {} value={:e} {:?} reference={:e} tol={:e} [{}]",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.relation,
                    c.reference,
                    c.tolerance,
                    c.invariant
                )
            })
            .collect();
        let failed = self.failures().count();
        lines.push(format!(
            "{}: {} checks, {} failed",
            if self.passed { "PASS" } else { "FAIL" },
            self.checks.len(),
            failed
        ));
        lines
    }
}

/// Mutable state of one run.
pub struct Run {
    tol: Tolerances,
    seed: Option<u64>,
    grid_scale: f64,
    out: PathBuf,
    prefix: String,
    outputs: Vec<Output>,
    checks: Vec<Check>,
    artifacts: Vec<String>,
}

impl Run {
    pub fn new(tol: Tolerances, seed: Option<u64>, grid_scale: f64, out: PathBuf) -> Self {
        Self {
            tol,
            seed,
            grid_scale,
            out,
            prefix: String::new(),
            outputs: Vec::new(),
            checks: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    fn tolerance(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Structural => self.tol.structural,
            Tier::Derived => self.tol.derived,
            Tier::Sampled => self.tol.sampled,
            Tier::Fixed => 0.0,
        }
    }

    fn name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn rng(&self, salt: u64) -> Result<ChaCha8Rng, ReportError> {
        let seed = self.seed.ok_or_else(|| ReportError::Config("randomized scenarios need a seed (config `seed` or --seed)".into()))?;
        Ok(ChaCha8Rng::seed_from_u64(seed ^ salt))
    }

    pub fn output(&mut self, name: &str, value: f64, tier: Tier) {
        let tolerance = self.tolerance(tier);
        self.outputs.push(Output { name: self.name(name), value, tier, tolerance });
    }

    fn push(&mut self, name: &str, invariant: &str, relation: Relation, value: f64, reference: f64, tier: Tier, tolerance: f64) {
        let passed = match relation {
            Relation::Close => (value - reference).abs() <= tolerance,
            Relation::Relative => (value - reference).abs() <= tolerance * reference.abs(),
            Relation::AtMost => value <= reference + tolerance,
            Relation::Below => value < reference,
            Relation::Above => value > reference,
            Relation::Equal => value == reference,
        };
        self.checks.push(Check {
            name: self.name(name),
            invariant: invariant.to_string(),
            relation,
            value,
            reference,
            tier,
            tolerance,
            passed,
        });
    }

    pub fn close(&mut self, name: &str, invariant: &str, value: f64, reference: f64, tier: Tier) {
        let t = self.tolerance(tier);
        self.push(name, invariant, Relation::Close, value, reference, tier, t);
    }

    pub fn relative(&mut self, name: &str, invariant: &str, value: f64, reference: f64, rel: f64) {
        self.push(name, invariant, Relation::Relative, value, reference, Tier::Fixed, rel);
    }

    pub fn at_most(&mut self, name: &str, invariant: &str, value: f64, bound: f64, tier: Tier) {
        let t = self.tolerance(tier);
        self.push(name, invariant, Relation::AtMost, value, bound, tier, t);
    }

    pub fn below(&mut self, name: &str, invariant: &str, value: f64, bound: f64) {
        self.push(name, invariant, Relation::Below, value, bound, Tier::Fixed, 0.0);
    }

    pub fn above(&mut self, name: &str, invariant: &str, value: f64, bound: f64) {
        self.push(name, invariant, Relation::Above, value, bound, Tier::Fixed, 0.0);
    }

    pub fn equal(&mut self, name: &str, invariant: &str, value: f64, reference: f64) {
        self.push(name, invariant, Relation::Equal, value, reference, Tier::Fixed, 0.0);
    }

    pub fn holds(&mut self, name: &str, invariant: &str, ok: bool) {
        self.equal(name, invariant, if ok { 1.0 } else { 0.0 }, 1.0);
    }

    fn file_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}_{name}", self.prefix)
        }
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), ReportError> {
        let file = self.file_name(name);
        fs::create_dir_all(&self.out)?;
        let mut w = csv::Writer::from_path(self.out.join(&file))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.artifacts.push(file);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ReportError> {
        let file = self.file_name(name);
        fs::create_dir_all(&self.out)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.out.join(&file), text)?;
        self.artifacts.push(file);
        Ok(())
    }

    fn finish(self, command: &str, scenarios: Vec<Scenario>) -> Result<RunReport, ReportError> {
        let passed = self.checks.iter().all(|c| c.passed);
        let mut report = RunReport {
            command: command.to_string(),
            seed: self.seed,
            grid_scale: self.grid_scale,
            tolerances: self.tol,
            scenarios,
            outputs: self.outputs,
            checks: self.checks,
            artifacts: self.artifacts,
            passed,
        };
        report.artifacts.push("report.json".into());
        fs::create_dir_all(&self.out)?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(self.out.join("report.json"), text)?;
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Scenario runners

#[derive(Serialize)]
struct LinearRow {
    n: f64,
    expected_margin: f64,
    margin: f64,
    tame: bool,
    norm: f64,
    norm_closed_form: f64,
    placement_margin_error: Option<f64>,
    placement_skew_error: Option<f64>,
}

fn run_linear(run: &mut Run, s: &LinearSweep) -> Result<(), ReportError> {
    let mut rng = run.rng(0x6c69_6e)?;
    let w = TwoForm::standard();
    let mut rows = Vec::new();
    let (mut worst_margin, mut worst_place, mut worst_skew, mut worst_norm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut tame_law = true;
    let mut norm_chain = true;
    for &n in &s.n_values {
        let j = AcsMatrix::block_skew(n, 0.0);
        let (margin, _) = euclidean_margin(w.matrix(), j.matrix());
        let expected = 1.0 - 0.5 * n;
        worst_margin = worst_margin.max((margin - expected).abs());
        let tame = is_tame(&w, &j);
        tame_law &= tame == (n < 2.0 && expected > crate::tolerance::STRUCTURAL);
        let norm = spectral_norm(j.matrix());
        let closed = block_form_norm(n);
        worst_norm = worst_norm.max((norm - closed).abs());
        norm_chain &= acs_norm_bound_check(&j);
        let (mut pm, mut ps) = (None, None);
        if n < 2.0 {
            let (mut em, mut es) = (0.0f64, 0.0f64);
            for _ in 0..s.placements {
                let phase = rng.random::<f64>() * std::f64::consts::TAU;
                let p = random_symplectic(&mut rng, 0.6);
                let p_inv = p.try_inverse().ok_or_else(|| pre("singular placement"))?;
                let jp = AcsMatrix::block_form(&skew_block(n * phase.cos(), n * phase.sin())).conjugate(&p, &p_inv);
                let basis = [p.column(0).into_owned(), p.column(1).into_owned()];
                let sd = split(&w, &jp, basis).map_err(pre)?;
                let sk = skew_norm(&sd).map_err(pre)?;
                let (m, _) = local_margin(w.matrix(), jp.matrix(), &sd.g).map_err(pre)?;
                em = em.max((m - expected).abs());
                es = es.max((sk.n - n).abs());
            }
            worst_place = worst_place.max(em);
            worst_skew = worst_skew.max(es);
            pm = Some(em);
            ps = Some(es);
        }
        rows.push(LinearRow {
            n,
            expected_margin: expected,
            margin,
            tame,
            norm,
            norm_closed_form: closed,
            placement_margin_error: pm,
            placement_skew_error: ps,
        });
    }
    run.write_csv("linear_sweep.csv", &rows)?;
    run.output("max_margin_error", worst_margin, Tier::Derived);
    run.close("margin_law", "linear_core: eigen-margin of (ω₀, J_B) equals 1 − N/2", worst_margin, 0.0, Tier::Derived);
    run.holds("tame_iff_n_below_2", "linear_core: J_B is ω₀-tame iff N < 2", tame_law);
    run.close("norm_closed_form", "linear_core: ‖J_B‖ = (N + √(N² + 4))/2", worst_norm, 0.0, Tier::Derived);
    run.holds("norm_chain", "linear_core: ‖J_B‖ ≤ √(1 + N + N²) ≤ 1 + N", norm_chain);
    if s.placements > 0 {
        run.close("placement_margin", "linear_core: margin in the canonical metric is placement-invariant", worst_place, 0.0, Tier::Derived);
        run.close("placement_skew", "linear_core: skew norm N is placement-invariant", worst_skew, 0.0, Tier::Derived);
    }
    Ok(())
}

#[derive(Serialize)]
struct IsotopyRow {
    t: f64,
    alpha: f64,
    n_of_t: f64,
    n_expected: f64,
    n_measured: f64,
    pullback_defect: f64,
    psi_defect: f64,
    psi_defect_bound: f64,
}

#[derive(Serialize)]
struct LemmaSummary {
    tuples: usize,
    violations: usize,
    max_defect_over_epsilon: f64,
    max_oracle_error: f64,
}

fn run_isotopy(run: &mut Run, s: &IsotopySweep) -> Result<(), ReportError> {
    let ctx = IsotopyContext::from_skew(&SkewPart::new(s.n, 0.0)).map_err(pre)?;
    let w0 = TwoForm::standard();
    let mut rows = Vec::new();
    let (mut pull, mut nerr, mut over) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for k in 0..s.times {
        let t = 0.5 * k as f64 / (s.times - 1) as f64;
        let st = psi(&ctx, t).map_err(pre)?;
        let wt = ctx.omega_t(t);
        let defect = (st.psi.transpose() * wt.matrix() * st.psi - w0.matrix()).amax() / st.alpha.powi(2).max(1.0);
        let product = st.psi_inverse * ctx.j_b().matrix() * st.psi;
        let measured = skew_from_block(&blocks(&product).1).map_err(pre)?.n;
        let expected = (1.0 - 2.0 * t).abs() * st.alpha * s.n;
        let nd = psi_norm_defect(&ctx, t).map_err(pre)?;
        pull = pull.max(defect);
        nerr = nerr.max((measured - expected).abs()).max((st.n_of_t - expected).abs());
        over = over.max(nd.value - nd.bound);
        rows.push(IsotopyRow {
            t,
            alpha: st.alpha,
            n_of_t: st.n_of_t,
            n_expected: expected,
            n_measured: measured,
            pullback_defect: defect,
            psi_defect: nd.value,
            psi_defect_bound: nd.bound,
        });
    }
    run.write_csv("isotopy_sweep.csv", &rows)?;
    run.close("pullback", "linear_isotopy: Ψ_tᵀ ω_t Ψ_t = ω₀", pull, 0.0, Tier::Structural);
    run.close("skew_of_pullback", "linear_isotopy: N(t) = |1 − 2t|·α(t)·N", nerr, 0.0, Tier::Derived);
    run.equal("n_at_half", "linear_isotopy: N(1/2) = 0 exactly", n_of_t(0.5, s.n).map_err(pre)?, 0.0);
    run.at_most("psi_defect_bound", "linear_isotopy: ‖Ψ_t − Id‖ ≤ ((α − 1)² + (tNα)²)^½", over, 0.0, Tier::Sampled);

    let mut rng = run.rng(0x6973_6f)?;
    let lemma = step_lemma_sweep(&mut rng, s.tuples)?;
    run.write_json("step_lemma.json", &lemma)?;
    run.output("lemma_max_defect_over_epsilon", lemma.max_defect_over_epsilon, Tier::Sampled);
    run.equal("step_lemma", "linear_isotopy: |t − t'| < (ε/√2)(1/N − 1/2) ⇒ ‖Ψ_tΨ_{t'}⁻¹ − Id‖ < ε", lemma.violations as f64, 0.0);
    run.close("composition_oracle", "linear_isotopy: sphere maximum matches the closed-form composition defect", lemma.max_oracle_error, 0.0, Tier::Sampled);
    Ok(())
}

fn step_lemma_sweep<R: Rng>(rng: &mut R, tuples: usize) -> Result<LemmaSummary, ReportError> {
    let mut out = LemmaSummary {
        tuples,
        violations: 0,
        max_defect_over_epsilon: 0.0,
        max_oracle_error: 0.0,
    };
    for _ in 0..tuples {
        let n = rng.random_range(0.01..1.99);
        let eps = rng.random_range(0.01..1.0);
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let ctx = IsotopyContext::from_skew(&SkewPart::new(n * phase.cos(), n * phase.sin())).map_err(pre)?;
        let bound = lemma_step_bound(n, eps).map_err(pre)?;
        let t_prime = rng.random_range(0.0..=0.5);
        let step = rng.random::<f64>() * bound.min(0.5);
        let t = if rng.random::<bool>() { t_prime + step } else { t_prime - step }.clamp(0.0, 0.5);
        let direct = composition_defect(&ctx, t_prime, t).map_err(pre)?;
        let exact = composition_defect_exact(n, t_prime, t).map_err(pre)?;
        if direct >= eps {
            out.violations += 1;
        }
        out.max_defect_over_epsilon = out.max_defect_over_epsilon.max(direct / eps);
        out.max_oracle_error = out.max_oracle_error.max((direct - exact).abs());
    }
    Ok(out)
}

fn model_of(case: BundleCase, spec: &ModelSpec, scale: f64) -> Result<NormalModel, ReportError> {
    NormalModel::new(case, spec.r_max, spec.grid.scaled(scale), spec.family).map_err(pre)
}

fn run_trivial(run: &mut Run, s: &InflateTrivial) -> Result<(), ReportError> {
    let model = model_of(BundleCase::Trivial, &s.model, run.grid_scale)?;
    let measured = estimate_epsilons(&model).map_err(pre)?;
    let eps = match (s.eps1, s.eps2) {
        (Some(e1), Some(e2)) => EpsilonPair::new(e1, e2, measured.valid_radius).map_err(pre)?,
        _ => measured,
    };
    let (profile, support) = build_profile_trivial(s.t_target, &eps).map_err(pre)?;
    let field = omega_f(&model, &profile).map_err(pre)?;
    let rep = verify_tameness(&field, &model, &eps);
    let shift = class_shift(&profile, &model);
    let cap = rep
        .rows
        .iter()
        .map(|r| r.f * r.r * r.r * eps.eps2 * eps.eps2 / (1.0 - eps.eps1).powi(2))
        .fold(0.0, f64::max);
    let (f_edge, _) = profile.eval(support);
    run.write_csv("profile.csv", &rep.rows)?;
    run.output("eps1_measured", measured.eps1, Tier::Sampled);
    run.output("eps2_measured", measured.eps2, Tier::Sampled);
    run.output("support_radius", support, Tier::Fixed);
    run.output("class_shift", shift, Tier::Fixed);
    run.output("min_margin", rep.tameness.margin, Tier::Derived);
    run.at_most("eps1_dominates", "inflation: declared ε₁ bounds ½‖J₀ᵀB‖_g on the model", measured.eps1, eps.eps1, Tier::Fixed);
    run.at_most("eps2_dominates", "inflation: declared ε₂ bounds ½‖J₀ᵀC‖/r on the model", measured.eps2, eps.eps2, Tier::Fixed);
    run.below("feasibility_cap", "inflation: f(r)·r²ε₂²/(1 − ε₁)² < 1 pointwise", cap, 1.0);
    run.relative("class_shift", "inflation: ∫(f − 1) over the disk equals t within 1%", shift, s.t_target, 1e-2);
    run.close("class_shift_oracle", "inflation: grid quadrature agrees with the solved plateau integral", shift, s.t_target, Tier::Sampled);
    run.equal("boundary_value", "inflation: f = 1 near the support radius", f_edge, 1.0);
    run.above("margins_positive", "inflation: ω_f tames J at every grid point", rep.tameness.margin, 0.0);
    run.above("sufficient_condition", "inflation: ε₁ + ε₂ r√f < 1 on the grid", rep.sufficient_min, 0.0);
    Ok(())
}

fn run_negative(run: &mut Run, s: &InflateNegative) -> Result<(), ReportError> {
    let case = BundleCase::Negative(s.m);
    let model = model_of(case, &s.model, run.grid_scale)?;
    let eps = estimate_epsilons(&model).map_err(pre)?.for_negative_bundle(s.m, s.m_prime);
    let profile = build_profile_negative(s.m, s.m_prime, &eps).map_err(pre)?;
    let field = omega_f(&model, &profile).map_err(pre)?;
    let rep = verify_tameness(&field, &model, &eps);
    let c = profile.log_slope().unwrap_or(0.0);
    let support = profile.support_radius;
    let constraint = rep
        .rows
        .iter()
        .filter(|r| r.r <= support)
        .map(|r| eps.eps2 * (r.r * r.r + c).sqrt())
        .fold(0.0, f64::max);
    let slope = rep.rows.iter().map(|r| -r.f_prime * r.r).fold(0.0, f64::max);
    let monotone = rep.rows.windows(2).all(|w| w[1].f <= w[0].f);
    let a_range = rep.rows.iter().all(|r| r.a > 0.0 && r.a <= 1.0 && r.b >= 1.0);
    let shift = class_shift(&profile, &model);
    let rejected = build_profile_negative(s.m, 1.01 / s.m as f64, &eps).is_err();
    run.write_csv("profile.csv", &rep.rows)?;
    run.output("eps1", eps.eps1, Tier::Sampled);
    run.output("eps2_rescaled", eps.eps2, Tier::Sampled);
    run.output("log_slope_c", c, Tier::Fixed);
    run.output("class_shift", shift, Tier::Fixed);
    run.output("min_margin", rep.tameness.margin, Tier::Derived);
    run.close("head_value", "inflation: f(0) = M'", profile.head, s.m_prime, Tier::Structural);
    run.below("log_constraint", "inflation: ε₂√(r² + c) < 1 − ε₁ on the support", constraint, 1.0 - eps.eps1);
    run.at_most("slope_bound", "inflation: −f'(r)·r ≤ c", slope, c * (1.0 + 1e-12), Tier::Fixed);
    run.holds("non_increasing", "inflation: f is non-increasing", monotone && profile.non_increasing);
    run.holds("coefficient_range", "inflation: 0 < a ≤ 1 ≤ b in the negative case", a_range);
    run.relative("class_shift", "inflation: class shifts by f(0)·PD(Z)", shift, s.m_prime, 1e-3);
    run.above("margins_positive", "inflation: ω_f tames J at every grid point", rep.tameness.margin, 0.0);
    run.above("sufficient_condition", "inflation: ε₁√a + rε₂√b < 1 on the grid", rep.sufficient_min, 0.0);
    run.holds("bound_rejected", "inflation: M' ≥ 1/m is rejected", rejected);
    Ok(())
}

#[derive(Serialize)]
struct BoundRow {
    eps1: f64,
    m: u32,
    bound: f64,
}

fn run_positive(run: &mut Run, s: &InflatePositiveBound) -> Result<(), ReportError> {
    let grid = s.grid.scaled(run.grid_scale);
    let bound = positive_case_bound(s.m, s.eps1);
    let mut sweeps: Vec<ObstructionSweep> = Vec::new();
    for &mp in &s.m_prime {
        sweeps.push(positive_obstruction(s.m, s.eps1, mp, s.r_max, grid).map_err(pre)?);
    }
    run.write_csv("obstruction.csv", &sweeps)?;
    run.output("bound", bound, Tier::Structural);
    run.close(
        "bound_formula",
        "inflation: bound = ((1 − ε₁²)/ε₁²)/m",
        bound,
        (1.0 - s.eps1 * s.eps1) / (s.eps1 * s.eps1) / s.m as f64,
        Tier::Structural,
    );
    // Heads within 10% of the bound are reported but not judged.
    for sw in &sweeps {
        let tag = format!("m_prime_{}", sw.m_prime);
        if sw.m_prime <= 0.9 * bound {
            run.above(&format!("{tag}.sufficient_holds"), "inflation: M' below the bound passes the sufficient condition", sw.sufficient_min, 0.0);
            run.above(&format!("{tag}.tame"), "inflation: M' below the bound is tame on the worst-case model", sw.margin, 0.0);
        } else if sw.m_prime >= 1.1 * bound {
            run.at_most(&format!("{tag}.sufficient_fails"), "inflation: M' above the bound fails the sufficient condition", sw.sufficient_min, 0.0, Tier::Fixed);
            run.below(&format!("{tag}.fails_near_zero"), "inflation: the sufficient condition already fails as r → 0", sw.sufficient_inner, 0.0);
            run.at_most(&format!("{tag}.worst_case_untame"), "inflation: M' above the bound is not tame on the worst-case model", sw.margin, 0.0, Tier::Fixed);
        }
    }
    let mut rows = Vec::new();
    for m in 1..=3u32 {
        for &e in &s.eps1_sweep {
            rows.push(BoundRow { eps1: e, m, bound: positive_case_bound(m, e) });
        }
    }
    let mut sorted = s.eps1_sweep.clone();
    sorted.sort_by(f64::total_cmp);
    let dec_eps = sorted.windows(2).all(|w| positive_case_bound(s.m, w[1]) < positive_case_bound(s.m, w[0]));
    let dec_m = (1..3u32).all(|m| positive_case_bound(m + 1, s.eps1) < positive_case_bound(m, s.eps1));
    run.write_csv("bound_sweep.csv", &rows)?;
    run.holds("decreasing_in_eps1", "inflation: the bound is strictly decreasing in ε₁", dec_eps);
    run.holds("decreasing_in_m", "inflation: the bound is strictly decreasing in m", dec_m);
    Ok(())
}

/// Mirrors [`StepRecord`] with flat columns for CSV.
#[derive(Serialize)]
struct StepRow {
    step: usize,
    t_from: f64,
    t_to: f64,
    theta: f64,
    retries: usize,
    input_defect: f64,
    c1_defect: f64,
    margin_before: f64,
    margin_after: f64,
    max_margin_change: f64,
    n_along_z: f64,
}

impl From<&StepRecord> for StepRow {
    fn from(s: &StepRecord) -> Self {
        Self {
            step: s.step,
            t_from: s.t_from,
            t_to: s.t_to,
            theta: s.theta,
            retries: s.retries,
            input_defect: s.input_defect,
            c1_defect: s.c1_defect,
            margin_before: s.margin_before,
            margin_after: s.margin_after,
            max_margin_change: s.max_margin_change,
            n_along_z: s.n_along_z,
        }
    }
}

/// Pullback tolerance for the final structure along `Z`.
pub const Z_MATCH_TOL: f64 = 1e-8;

fn run_prepare(run: &mut Run, s: &PrepareScenario) -> Result<(), ReportError> {
    let grid = TubeGrid::new(s.grid.n_z, s.grid.n_w, s.grid.radius).scaled(run.grid_scale);
    let seed = run.rng(0)?.random::<u64>();
    let curve = CurveField::new(s.family, grid).map_err(pre)?;
    let whitney = calibrate_constants_seeded(&grid, seed, CALIBRATION_BATTERY);
    let params = choose_params_with(&curve, whitney).map_err(pre)?;
    let steps = params.partition.steps();
    let trace: PipelineTrace = match prepare(&curve, &params) {
        Ok((prepared, trace)) => {
            let sm = prepared.summary;
            run.output("final_n_along_z", sm.final_n_along_z, Tier::Sampled);
            run.output("z_match_error", sm.z_match_error, Tier::Fixed);
            run.output("epsilon", params.epsilon, Tier::Fixed);
            run.output("steps", steps as f64, Tier::Fixed);
            run.at_most("final_n", "pipeline: N along Z vanishes after the last step", sm.final_n_along_z, 0.0, Tier::Sampled);
            run.above("margins_positive", "pipeline: every intermediate structure is tame", sm.min_margin, 0.0);
            run.at_most("z_match", "pipeline: final J along Z is the fiberwise Ψ_{1/2} pullback", sm.z_match_error, Z_MATCH_TOL, Tier::Fixed);
            run.equal("outside_unchanged", "pipeline: J is unchanged outside the tube", sm.outside_change, 0.0);
            run.equal("step_count", "pipeline: one diffeomorphism per partition step", sm.steps as f64, steps as f64);
            trace
        }
        Err(PipelineError::RetriesExhausted { step, violation, trace }) => {
            run.output("failed_step", step as f64, Tier::Fixed);
            let invariant = format!("pipeline: every step passes within the retry budget ({violation})");
            run.holds("terminates", &invariant, false);
            *trace
        }
        Err(e) => return Err(pre(e)),
    };
    let worst_change = trace.steps.iter().map(|r| r.max_margin_change).fold(0.0, f64::max);
    let min_after = trace.steps.iter().map(|r| r.margin_after).fold(trace.initial_margin, f64::min);
    run.below("stability", "pipeline: each step changes the margin by less than η", worst_change, params.eta);
    run.above("step_margins", "pipeline: margin stays positive after every step", min_after, 0.0);
    let rows: Vec<StepRow> = trace.steps.iter().map(StepRow::from).collect();
    run.write_csv("steps.csv", &rows)?;
    run.write_json("trace.json", &trace)?;
    Ok(())
}

/// Runs one scenario, prefixing check names and artifacts with `label`.
pub fn run_scenario(run: &mut Run, label: &str, sc: &Scenario) -> Result<(), ReportError> {
    sc.validate()?;
    let saved = std::mem::replace(&mut run.prefix, label.to_string());
    let res = match sc {
        Scenario::LinearSweep(s) => run_linear(run, s),
        Scenario::IsotopySweep(s) => run_isotopy(run, s),
        Scenario::InflateTrivial(s) => run_trivial(run, s),
        Scenario::InflateNegative(s) => run_negative(run, s),
        Scenario::InflatePositiveBound(s) => run_positive(run, s),
        Scenario::Prepare(s) => run_prepare(run, s),
    };
    run.prefix = saved;
    res
}

// ---------------------------------------------------------------------------
// Selftest extras

fn selftest_linear_extras(run: &mut Run) -> Result<(), ReportError> {
    let mut rng = run.rng(0x6578_74)?;
    let w = TwoForm::standard();
    let (mut invol, mut compat) = (0.0f64, true);
    for _ in 0..32 {
        let n = rng.random_range(0.0..1.9);
        let p = random_symplectic(&mut rng, 0.5);
        let p_inv = p.try_inverse().ok_or_else(|| pre("singular placement"))?;
        let j = AcsMatrix::block_skew(n, 0.0).conjugate(&p, &p_inv);
        let once = iota(&w, &j).map_err(pre)?;
        let twice = iota(&once, &j).map_err(pre)?;
        invol = invol.max(max_abs(&(twice.matrix() - w.matrix())) / max_abs(w.matrix()).max(max_abs(once.matrix())));
        compat &= is_invariant(&compat_projection(&w, &j).map_err(pre)?, &j);
    }
    run.prefix = "linear_core".into();
    run.close("iota_involution", "linear_core: ι(ι(ω)) = ω", invol, 0.0, Tier::Structural);
    run.holds("projection_compatible", "linear_core: π(ω) is J-invariant", compat);
    run.prefix.clear();
    Ok(())
}

fn selftest_closedness(run: &mut Run) -> Result<(), ReportError> {
    let e = EpsilonPair::new(0.3, 0.5, 0.5).map_err(pre)?;
    let profiles = [
        build_profile_trivial(2.0, &e).map_err(pre)?.0,
        build_profile_negative(1, 0.4, &e).map_err(pre)?,
        build_profile_positive(1, 0.5, &e).map_err(pre)?,
    ];
    let (mut worst, mut min_order) = (0.0f64, f64::INFINITY);
    for prof in &profiles {
        let r = 0.5 * prof.support_radius.min(0.2);
        let p = [0.37, -0.2, 0.6 * r, 0.8 * r];
        let h = r * 1e-2;
        let d1 = exterior_derivative_defect(prof.case, prof, p, h);
        let d2 = exterior_derivative_defect(prof.case, prof, p, h / 2.0);
        worst = worst.max(d1);
        if d1 > 1e-12 {
            min_order = min_order.min((d1 / d2).log2());
        }
    }
    run.prefix = "inflation".into();
    run.at_most("closedness", "inflation: discrete dω_f vanishes within grid error", worst, 0.0, Tier::Sampled);
    if min_order.is_finite() {
        run.above("closedness_order", "inflation: the dω_f defect is O(h²)", min_order, 1.8);
    }
    run.prefix.clear();
    Ok(())
}

#[derive(Serialize)]
struct JetRow {
    jet: usize,
    k: f64,
    max_value_ratio: f64,
    max_gradient: f64,
    residual_coarse: f64,
    residual_mid: f64,
    residual_fine: f64,
    order: f64,
}

/// Steps of the residual convergence study.
pub const RESIDUAL_STEPS: [f64; 3] = [0.016, 0.008, 0.004];

fn selftest_jets(run: &mut Run, count: usize) -> Result<(), ReportError> {
    let mut rng = run.rng(0x6a65_74)?;
    let grid = TubeGrid::new(16, 13, 0.5).scaled(run.grid_scale);
    let mut rows = Vec::new();
    let (mut value_excess, mut grad_excess, mut min_order) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..count {
        let scale = rng.random_range(0.05..0.5);
        let jet = random_normal_jet(&mut rng, grid.n_z, scale);
        let sec = extend_section(&jet, 0.45, &grid).map_err(pre)?;
        let rep = check_section(&sec, &grid);
        let r: Vec<f64> = RESIDUAL_STEPS.iter().map(|&h| jet_residual(&sec, &jet, h)).collect();
        let order = (r[0] / r[1]).log2().min((r[1] / r[2]).log2());
        value_excess = value_excess.max(rep.max_value_ratio - 2.0 * rep.bounds.k);
        grad_excess = grad_excess.max(rep.max_gradient - 6.0 * rep.bounds.k);
        min_order = min_order.min(order);
        rows.push(JetRow {
            jet: i,
            k: rep.bounds.k,
            max_value_ratio: rep.max_value_ratio,
            max_gradient: rep.max_gradient,
            residual_coarse: r[0],
            residual_mid: r[1],
            residual_fine: r[2],
            order,
        });
    }
    let phi = random_automorphism(&mut rng, grid.n_z, 0.05);
    let (_, drep) = extend_diffeo(&phi, 0.2, &grid, None).map_err(pre)?;
    run.prefix = "jet_extension".into();
    run.write_csv("battery.csv", &rows)?;
    run.at_most("value_bound", "jet_extension: ‖f̃(p)‖ ≤ 2K·r(p)", value_excess, 0.0, Tier::Sampled);
    run.at_most("gradient_bound", "jet_extension: ‖∇f̃‖ ≤ 6K", grad_excess, 0.0, Tier::Sampled);
    run.above("residual_order", "jet_extension: jet-matching residual decays at order ≥ 1.8", min_order, 1.8);
    run.above("diffeo_jacobian", "jet_extension: the extended map has positive Jacobian", drep.min_det, 0.0);
    run.at_most("diffeo_roundtrip", "jet_extension: Newton inverse round-trips", drep.roundtrip_error, 0.0, Tier::Sampled);
    run.prefix.clear();
    Ok(())
}

/// Reduced battery over every module. Deterministic for a fixed seed.
pub fn selftest_scenarios() -> Vec<(&'static str, Scenario)> {
    let trivial_model = ModelSpec {
        family: AcsFamily::new(SkewProfile::Constant { a: 0.8, b: 0.0 }, [1.5, 0.0]),
        r_max: 0.3,
        grid: ModelGrid {
            n_r: 128,
            n_theta: 16,
            n_z: 4,
            r_min_ratio: 1e-10,
        },
    };
    let negative_model = ModelSpec {
        family: AcsFamily::new(SkewProfile::Constant { a: 0.6, b: 0.0 }, [1.0, 0.0]),
        ..trivial_model.clone()
    };
    vec![
        ("linear", Scenario::LinearSweep(LinearSweep { n_values: default_n_values(), placements: 8 })),
        ("isotopy", Scenario::IsotopySweep(IsotopySweep { n: 1.0, times: 11, epsilon: 0.1, tuples: 200 })),
        (
            "inflate_trivial",
            Scenario::InflateTrivial(InflateTrivial { t_target: 5.0, model: trivial_model, eps1: Some(0.5), eps2: Some(1.0) }),
        ),
        ("inflate_negative", Scenario::InflateNegative(InflateNegative { m: 2, m_prime: 0.4, model: negative_model })),
        (
            "inflate_positive",
            Scenario::InflatePositiveBound(InflatePositiveBound {
                m: 1,
                eps1: 0.5,
                m_prime: vec![0.1, 6.0],
                r_max: default_r_positive(),
                grid: ModelGrid { n_r: 96, n_theta: 8, n_z: 2, r_min_ratio: 1e-8 },
                eps1_sweep: default_eps1_sweep(),
            }),
        ),
        (
            "prepare",
            Scenario::Prepare(PrepareScenario { family: AcsFamily::constant(1.0, 0.0), grid: TubeGrid::new(12, 9, 0.5) }),
        ),
    ]
}

// ---------------------------------------------------------------------------
// Entry points

/// Subcommands of the binary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Linear,
    Isotopy,
    Inflate,
    Prepare,
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Linear => "linear",
            Command::Isotopy => "isotopy",
            Command::Inflate => "inflate",
            Command::Prepare => "prepare",
            Command::Selftest => "selftest",
        }
    }

    fn accepts(&self, sc: &Scenario) -> bool {
        matches!(
            (self, sc),
            (Command::Linear, Scenario::LinearSweep(_))
                | (Command::Isotopy, Scenario::IsotopySweep(_))
                | (Command::Inflate, Scenario::InflateTrivial(_) | Scenario::InflateNegative(_) | Scenario::InflatePositiveBound(_))
                | (Command::Prepare, Scenario::Prepare(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub grid_scale: Option<f64>,
}

/// Resolves the configuration and flags, runs the command and writes
/// `report.json` next to the other artifacts.
pub fn execute(cmd: Command, opts: &RunOptions) -> Result<RunReport, ReportError> {
    let config = match &opts.config {
        Some(p) => Config::load(p)?,
        None if cmd == Command::Selftest => Config::default(),
        None => return Err(ReportError::Config(format!("`{}` needs --config <path>", cmd.name()))),
    };
    let grid_scale = opts.grid_scale.or(config.grid_scale).unwrap_or(1.0);
    if !(grid_scale > 0.0 && grid_scale.is_finite()) {
        return Err(ReportError::Config(format!("grid scale must be a positive number, got {grid_scale}")));
    }
    let t = config.tolerances;
    if [t.structural, t.derived, t.sampled].iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(ReportError::Config("tolerances must be finite and ≥ 0".into()));
    }
    let mut seed = opts.seed.or(config.seed);
    if cmd == Command::Selftest {
        if config.scenario.is_some() {
            return Err(ReportError::Config("selftest takes no [scenario]".into()));
        }
        seed = seed.or(Some(SELFTEST_SEED));
        let mut run = Run::new(t, seed, grid_scale, opts.out.clone());
        selftest_linear_extras(&mut run)?;
        let scenarios = selftest_scenarios();
        for (label, sc) in &scenarios {
            run_scenario(&mut run, label, sc)?;
        }
        selftest_closedness(&mut run)?;
        selftest_jets(&mut run, 10)?;
        return run.finish("selftest", scenarios.into_iter().map(|(_, s)| s).collect());
    }
    let sc = config.scenario.ok_or_else(|| ReportError::Config("config has no [scenario] table".into()))?;
    if !cmd.accepts(&sc) {
        return Err(ReportError::Config(format!("scenario kind `{}` does not belong to `{}`", sc.kind(), cmd.name())));
    }
    if sc.is_randomized() && seed.is_none() {
        return Err(ReportError::Config(format!("scenario `{}` is randomized and needs a seed", sc.kind())));
    }
    let mut run = Run::new(t, seed, grid_scale, opts.out.clone());
    run_scenario(&mut run, "", &sc)?;
    run.finish(cmd.name(), vec![sc])
}
