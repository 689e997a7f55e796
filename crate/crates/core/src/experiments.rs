//! Experiment orchestration: versioned JSON configuration, the volume-grid
//! sweeps behind every estimator, trend verdicts over the grid, and
//! bit-stable CSV/JSON emission.
//!
//! Determinism contract: (config bytes, seed) fully determine every output
//! byte. All parallel reductions are indexed collects, so the worker count
//! never reorders a sum.

use crate::disorder::{
    check_perturbation_condition, DisorderFamily, FieldSchedule, DEFAULT_THIRD_MOMENT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::gibbs::{free_energy_stats, ChainSettings, ReplicaObservable};
use crate::hamiltonian::{ModelParams, DEFAULT_PSPIN_BUDGET};
use crate::ibp;
use crate::identities::{
    delta_concentration, energy_ergodicity, gg_residual, nu_estimate, self_averaging,
    ultrametricity_violation, EstimatorConfig, FSpec, Mode, ModelInputs, PsiSpec,
};
use crate::lattice::Lattice;
use crate::numeric::{jackknife_scalar, sample_variance};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// The one supported config schema version.
pub const CONFIG_VERSION: u32 = 1;

/// Short content hash stamped on every output row.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(12);
    for b in &digest[..6] {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Which disorder-averaged measure a target runs under: the base Gibbs
/// measure or the one carrying the rank-p perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Nu,
    NuAlpha,
}

impl Measure {
    fn id(&self) -> &'static str {
        match self {
            Measure::Nu => "nu",
            Measure::NuAlpha => "nu_alpha",
        }
    }
}

fn default_measure() -> Measure {
    Measure::Nu
}

/// Rule applied to a value series over the volume grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rule {
    /// Every consecutive pair may rise by at most 3 combined sigma.
    MonotoneNonIncrease3Sigma,
    /// Last value below the first beyond 3 combined sigma.
    EndpointDecrease3Sigma,
    /// Last value at or below a fixed threshold.
    FinalBelowThreshold { threshold: f64 },
    /// Every value at or below its per-volume bound.
    VarianceBound,
    /// A certification sweep reported zero violated cells.
    ZeroViolations,
    /// The schedule checker returned PASS.
    ConditionPass,
}

impl Rule {
    fn id(&self) -> String {
        match self {
            Rule::MonotoneNonIncrease3Sigma => "monotone_non_increase_3sigma".into(),
            Rule::EndpointDecrease3Sigma => "endpoint_decrease_3sigma".into(),
            Rule::FinalBelowThreshold { threshold } => {
                format!("final_below_threshold:{threshold}")
            }
            Rule::VarianceBound => "variance_bound".into(),
            Rule::ZeroViolations => "zero_violations".into(),
            Rule::ConditionPass => "condition_pass".into(),
        }
    }
}

/// How c_n scales with the volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CnRule {
    VolumePower { exponent: f64 },
    Constant { value: f64 },
}

impl Default for CnRule {
    fn default() -> Self {
        CnRule::VolumePower { exponent: -0.25 }
    }
}

impl CnRule {
    pub fn value(&self, volume: u64) -> f64 {
        match self {
            CnRule::VolumePower { exponent } => (volume as f64).powf(*exponent),
            CnRule::Constant { value } => *value,
        }
    }
}

fn default_alpha() -> Vec<f64> {
    vec![1.0, 1.0]
}

fn default_p_max() -> u32 {
    3
}

/// Model block: geometry, couplings, field schedule, perturbation shape.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub d: usize,
    pub beta: f64,
    pub mu: f64,
    /// Field amplitude decay: mu - h(n) = |V_n|^(-gamma).
    pub gamma: f64,
    pub family: DisorderFamily,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_p_max")]
    pub p_max: u32,
    #[serde(default)]
    pub c_n: CnRule,
}

fn default_m() -> usize {
    2
}

fn default_sweeps() -> usize {
    200
}

fn default_burn_in() -> u64 {
    1000
}

fn default_thin() -> u64 {
    10
}

fn default_budget() -> u64 {
    DEFAULT_PSPIN_BUDGET
}

fn default_cap() -> u64 {
    crate::gibbs::DEFAULT_VOLUME_CAP
}

fn default_table_samples() -> usize {
    256
}

/// Estimator block: mode, replica count, disorder draws, chain schedule.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    pub mode: Mode,
    #[serde(default = "default_m")]
    pub m: usize,
    pub n_disorder: usize,
    /// Replica sets recorded per realization in MCMC mode.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_cap")]
    pub cap: u64,
    #[serde(default = "default_table_samples")]
    pub table_samples: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GgResidualTarget {
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default)]
    pub m: Option<usize>,
    pub f: String,
    pub psi: String,
    #[serde(default = "default_true")]
    pub paired: bool,
    #[serde(default)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaConcentrationTarget {
    pub p: u32,
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfAveragingTarget {
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyErgodicityTarget {
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UltrametricityTarget {
    pub epsilon: f64,
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeEnergyVarianceTarget {
    #[serde(default)]
    pub n_disorder: Option<usize>,
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuObservableTarget {
    /// "site_spin:<x>", "bond:<x>,<y>", or "overlap".
    pub observable: String,
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbpCertifyTarget {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionCheckTarget {
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
}

/// One entry of the targets block, keyed by estimator name.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    GgResidual(GgResidualTarget),
    DeltaConcentration(DeltaConcentrationTarget),
    SelfAveraging(SelfAveragingTarget),
    EnergyErgodicity(EnergyErgodicityTarget),
    UltrametricityViolation(UltrametricityTarget),
    FreeEnergyVariance(FreeEnergyVarianceTarget),
    NuObservable(NuObservableTarget),
    IbpCertify(IbpCertifyTarget),
    ConditionCheck(ConditionCheckTarget),
}

fn default_csv_name() -> String {
    "results.csv".into()
}

fn default_summary_name() -> String {
    "summary.json".into()
}

/// Output file names, resolved against the output directory at write time.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_csv_name")]
    pub csv: String,
    #[serde(default = "default_summary_name")]
    pub summary: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            csv: default_csv_name(),
            summary: default_summary_name(),
        }
    }
}

/// A full experiment: model, estimator, targets, volume grid, seed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub model: ModelBlock,
    pub estimator: EstimatorBlock,
    pub targets: Vec<TargetSpec>,
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    /// Parses and validates; schema errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; returns the config and its content hash.
    pub fn from_path(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: format!("not valid UTF-8: {e}"),
        })?;
        Ok((Self::from_json(&text)?, config_hash(&bytes)))
    }

    fn config_err(path: &str, message: impl Into<String>) -> Error {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Structural checks beyond the serde schema.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Self::config_err(
                "version",
                format!(
                    "unsupported version {}, expected {CONFIG_VERSION}",
                    self.version
                ),
            ));
        }
        let m = &self.model;
        if m.d < 1 {
            return Err(Self::config_err("model.d", "dimension must be >= 1"));
        }
        if !(m.beta >= 0.0) {
            return Err(Self::config_err("model.beta", "beta must be >= 0"));
        }
        if !(m.mu > 0.0) {
            return Err(Self::config_err("model.mu", "mu must be > 0"));
        }
        if !(m.gamma > 0.0) {
            return Err(Self::config_err("model.gamma", "gamma must be > 0"));
        }
        if m.p_max < 1 {
            return Err(Self::config_err("model.p_max", "p_max must be >= 1"));
        }
        if m.alpha.len() + 1 != m.p_max as usize {
            return Err(Self::config_err(
                "model.alpha",
                format!(
                    "expected {} weights for p_max = {}, got {}",
                    m.p_max - 1,
                    m.p_max,
                    m.alpha.len()
                ),
            ));
        }
        if m.alpha.iter().any(|a| a.abs() > 1.0) {
            return Err(Self::config_err(
                "model.alpha",
                "weights must lie in [-1, 1]",
            ));
        }
        if self.estimator.n_disorder < 2 {
            return Err(Self::config_err(
                "estimator.n_disorder",
                "need at least 2 disorder draws",
            ));
        }
        if self.estimator.m < 1 {
            return Err(Self::config_err("estimator.m", "need at least one replica"));
        }
        if !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Self::config_err(
                "n_grid",
                "sides must be strictly increasing",
            ));
        }
        let needs_grid = self
            .targets
            .iter()
            .any(|t| !matches!(t, TargetSpec::IbpCertify(_)));
        if needs_grid && self.n_grid.is_empty() {
            return Err(Self::config_err("n_grid", "volume-grid targets need sides"));
        }
        for (i, n) in self.n_grid.iter().enumerate() {
            let volume = (*n as u128).pow(m.d as u32);
            if self.estimator.mode == Mode::Exact && volume > self.estimator.cap as u128 {
                return Err(Self::config_err(
                    &format!("n_grid[{i}]"),
                    format!(
                        "exact mode needs |V_n| <= {}, got {volume}",
                        self.estimator.cap
                    ),
                ));
            }
        }
        for (i, t) in self.targets.iter().enumerate() {
            let path = format!("targets[{i}]");
            match t {
                TargetSpec::GgResidual(g) => {
                    let f = FSpec::from_name(&g.f)
                        .map_err(|e| Self::config_err(&format!("{path}.f"), e.to_string()))?;
                    PsiSpec::from_name(&g.psi)
                        .map_err(|e| Self::config_err(&format!("{path}.psi"), e.to_string()))?;
                    let m_eff = g.m.unwrap_or(self.estimator.m);
                    if m_eff < f.min_replicas().max(2) {
                        return Err(Self::config_err(
                            &format!("{path}.m"),
                            format!("f = {} needs m >= {}", g.f, f.min_replicas().max(2)),
                        ));
                    }
                }
                TargetSpec::DeltaConcentration(dt) => {
                    if dt.p < 1 {
                        return Err(Self::config_err(&format!("{path}.p"), "p must be >= 1"));
                    }
                }
                TargetSpec::UltrametricityViolation(u) => {
                    if !(u.epsilon > 0.0) {
                        return Err(Self::config_err(
                            &format!("{path}.epsilon"),
                            "epsilon must be > 0",
                        ));
                    }
                }
                TargetSpec::FreeEnergyVariance(fv) => {
                    if fv.n_disorder.is_some_and(|nd| nd < 2) {
                        return Err(Self::config_err(
                            &format!("{path}.n_disorder"),
                            "need at least 2 draws",
                        ));
                    }
                }
                TargetSpec::NuObservable(o) => {
                    parse_observable(&o.observable).map_err(|e| {
                        Self::config_err(&format!("{path}.observable"), e.to_string())
                    })?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn schedule(&self) -> Result<FieldSchedule> {
        FieldSchedule::new(self.model.mu, self.model.gamma)
    }

    /// Model parameters for one volume under the requested measure.
    fn params_for(&self, measure: Measure, volume: u64) -> Result<ModelParams> {
        let sched = self.schedule()?;
        let h = sched.h(volume);
        match measure {
            Measure::Nu => ModelParams::base(self.model.beta, self.model.mu, h),
            Measure::NuAlpha => ModelParams::new(
                self.model.beta,
                self.model.mu,
                h,
                self.model.alpha.clone(),
                self.model.c_n.value(volume),
                self.model.p_max,
            ),
        }
    }

    fn estimator_config(&self) -> EstimatorConfig {
        let e = &self.estimator;
        EstimatorConfig {
            mode: e.mode,
            n_disorder: e.n_disorder,
            seed: self.seed,
            budget: e.budget,
            cap: e.cap,
            chain: ChainSettings {
                burn_in: e.burn_in,
                thin: e.thin,
            },
            n_sets: e.sweeps,
            table_samples: e.table_samples,
        }
    }
}

fn parse_observable(text: &str) -> Result<(ReplicaObservable, usize)> {
    if text == "overlap" {
        return Ok((ReplicaObservable::Overlap { a: 0, b: 1 }, 2));
    }
    if let Some(site) = text.strip_prefix("site_spin:") {
        let site: u32 = site
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad site in `{text}`")))?;
        return Ok((ReplicaObservable::SiteSpin { replica: 0, site }, 1));
    }
    if let Some(pair) = text.strip_prefix("bond:") {
        let parts: Vec<&str> = pair.split(',').collect();
        if parts.len() == 2 {
            if let (Ok(x), Ok(y)) = (parts[0].parse::<u32>(), parts[1].parse::<u32>()) {
                return Ok((ReplicaObservable::SpinProduct(vec![(0, x), (0, y)]), 1));
            }
        }
        return Err(Error::InvalidParameter(format!("bad bond in `{text}`")));
    }
    Err(Error::InvalidParameter(format!(
        "unknown observable `{text}`; use site_spin:<x>, bond:<x>,<y>, or overlap"
    )))
}

/// One emitted estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub target: String,
    pub quantity: String,
    pub n: usize,
    pub volume: u64,
    pub measure: String,
    pub mode: String,
    pub value: f64,
    pub std_error: f64,
    pub n_disorder: usize,
}

/// Verdict for one quantity series over the grid.
#[derive(Debug, Clone, Serialize)]
pub struct TrendVerdict {
    pub target: String,
    pub quantity: String,
    pub rule: String,
    pub grid: Vec<usize>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Per-volume bounds, only for bound-comparison rules.
    pub bounds: Vec<f64>,
    pub pass: bool,
}

fn combined_sigma(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn apply_rule(rule: &Rule, values: &[f64], ses: &[f64], bounds: &[f64]) -> bool {
    match rule {
        Rule::MonotoneNonIncrease3Sigma => (1..values.len())
            .all(|i| values[i] <= values[i - 1] + 3.0 * combined_sigma(ses[i], ses[i - 1])),
        Rule::EndpointDecrease3Sigma => {
            if values.len() < 2 {
                return false;
            }
            let (first, last) = (values[0], values[values.len() - 1]);
            first - last > 3.0 * combined_sigma(ses[0], ses[ses.len() - 1])
        }
        Rule::FinalBelowThreshold { threshold } => values.last().is_some_and(|v| *v <= *threshold),
        Rule::VarianceBound => {
            values.len() == bounds.len() && values.iter().zip(bounds).all(|(v, b)| v <= b)
        }
        Rule::ZeroViolations => values.iter().all(|v| *v == 0.0),
        Rule::ConditionPass => values.iter().all(|v| *v == 1.0),
    }
}

/// Everything a finished run emits.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: String,
    pub summary: String,
    pub verdicts: Vec<TrendVerdict>,
    pub all_pass: bool,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    version: u32,
    seed: u64,
    config_hash: &'a str,
    mode: Mode,
    n_grid: &'a [usize],
    verdicts: &'a [TrendVerdict],
    all_pass: bool,
}

struct SeriesPoint {
    n: usize,
    volume: u64,
    value: f64,
    std_error: f64,
}

/// A named value series plus the rows that back it.
struct TargetOutput {
    rows: Vec<ResultRow>,
    verdicts: Vec<TrendVerdict>,
}

fn verdict_from_series(
    target: &str,
    quantity: &str,
    rule: &Rule,
    points: &[SeriesPoint],
    bounds: Vec<f64>,
) -> TrendVerdict {
    let values: Vec<f64> = points.iter().map(|p| p.value).collect();
    let ses: Vec<f64> = points.iter().map(|p| p.std_error).collect();
    let pass = apply_rule(rule, &values, &ses, &bounds);
    TrendVerdict {
        target: target.into(),
        quantity: quantity.into(),
        rule: rule.id(),
        grid: points.iter().map(|p| p.n).collect(),
        values,
        std_errors: ses,
        bounds,
        pass,
    }
}

fn rows_from_series(
    target: &str,
    quantity: &str,
    measure: &str,
    mode: Mode,
    n_disorder: usize,
    points: &[SeriesPoint],
) -> Vec<ResultRow> {
    let mode = match mode {
        Mode::Exact => "exact",
        Mode::Mcmc => "mcmc",
    };
    points
        .iter()
        .map(|p| ResultRow {
            target: target.into(),
            quantity: quantity.into(),
            n: p.n,
            volume: p.volume,
            measure: measure.into(),
            mode: mode.into(),
            value: p.value,
            std_error: p.std_error,
            n_disorder,
        })
        .collect()
}

fn grid_volumes(config: &ExperimentConfig) -> Vec<(usize, u64)> {
    config
        .n_grid
        .iter()
        .map(|&n| (n, (n as u64).pow(config.model.d as u32)))
        .collect()
}

fn run_target(config: &ExperimentConfig, spec: &TargetSpec) -> Result<TargetOutput> {
    let cfg = config.estimator_config();
    let family = config.model.family;
    let d = config.model.d;
    let grid = grid_volumes(config);
    let mode = config.estimator.mode;

    // evaluates `eval` at every grid volume under `measure`
    let sweep =
        |measure: Measure,
         eval: &dyn Fn(&ModelInputs, &EstimatorConfig) -> Result<Vec<(String, f64, f64)>>|
         -> Result<Vec<(String, Vec<SeriesPoint>)>> {
            let mut series: Vec<(String, Vec<SeriesPoint>)> = Vec::new();
            for &(n, volume) in &grid {
                let lat = Lattice::build(d, n)?;
                let inputs = ModelInputs {
                    lat: &lat,
                    family,
                    params: config.params_for(measure, volume)?,
                };
                for (quantity, value, std_error) in eval(&inputs, &cfg)? {
                    match series.iter_mut().find(|(q, _)| *q == quantity) {
                        Some((_, pts)) => pts.push(SeriesPoint {
                            n,
                            volume,
                            value,
                            std_error,
                        }),
                        None => series.push((
                            quantity,
                            vec![SeriesPoint {
                                n,
                                volume,
                                value,
                                std_error,
                            }],
                        )),
                    }
                }
            }
            Ok(series)
        };

    match spec {
        TargetSpec::GgResidual(g) => {
            let f = FSpec::from_name(&g.f)?;
            let psi = PsiSpec::from_name(&g.psi)?;
            let m_eff = g.m.unwrap_or(config.estimator.m);
            let target = format!(
                "gg_residual[m={m_eff},f={},psi={},measure={}]",
                g.f,
                g.psi,
                g.measure.id()
            );
            let rule = g.rule.unwrap_or(Rule::EndpointDecrease3Sigma);
            let series = sweep(g.measure, &|inputs, cfg| {
                let rep = gg_residual(inputs, cfg, m_eff, &f, &psi, g.paired)?;
                Ok(vec![("residual".into(), rep.residual, rep.std_error)])
            })?;
            let (_, points) = &series[0];
            // the trend statement is about the magnitude of the residual
            let abs_points: Vec<SeriesPoint> = points
                .iter()
                .map(|p| SeriesPoint {
                    n: p.n,
                    volume: p.volume,
                    value: p.value.abs(),
                    std_error: p.std_error,
                })
                .collect();
            Ok(TargetOutput {
                rows: rows_from_series(
                    &target,
                    "residual",
                    g.measure.id(),
                    mode,
                    cfg.n_disorder,
                    points,
                ),
                verdicts: vec![verdict_from_series(
                    &target,
                    "abs_residual",
                    &rule,
                    &abs_points,
                    Vec::new(),
                )],
            })
        }
        TargetSpec::DeltaConcentration(dt) => {
            let target = format!(
                "delta_concentration[p={},measure={}]",
                dt.p,
                dt.measure.id()
            );
            let rule = dt.rule.unwrap_or(Rule::MonotoneNonIncrease3Sigma);
            let series = sweep(dt.measure, &|inputs, cfg| {
                let rep = delta_concentration(inputs, cfg, dt.p)?;
                Ok(vec![("abs_deviation".into(), rep.value, rep.std_error)])
            })?;
            let (_, points) = &series[0];
            Ok(TargetOutput {
                rows: rows_from_series(
                    &target,
                    "abs_deviation",
                    dt.measure.id(),
                    mode,
                    cfg.n_disorder,
                    points,
                ),
                verdicts: vec![verdict_from_series(
                    &target,
                    "abs_deviation",
                    &rule,
                    points,
                    Vec::new(),
                )],
            })
        }
        TargetSpec::SelfAveraging(sa) => {
            let target = format!("self_averaging[measure={}]", sa.measure.id());
            let rule = sa.rule.unwrap_or(Rule::MonotoneNonIncrease3Sigma);
            let series = sweep(sa.measure, &|inputs, cfg| {
                let rep = self_averaging(inputs, cfg)?;
                Ok(vec![
                    (
                        "overlap_variance".into(),
                        rep.overlap_variance,
                        rep.overlap_std_error,
                    ),
                    (
                        "magnetization_variance".into(),
                        rep.magnetization_variance,
                        rep.magnetization_std_error,
                    ),
                ])
            })?;
            let mut rows = Vec::new();
            let mut verdicts = Vec::new();
            for (quantity, points) in &series {
                rows.extend(rows_from_series(
                    &target,
                    quantity,
                    sa.measure.id(),
                    mode,
                    cfg.n_disorder,
                    points,
                ));
                verdicts.push(verdict_from_series(
                    &target,
                    quantity,
                    &rule,
                    points,
                    Vec::new(),
                ));
            }
            Ok(TargetOutput { rows, verdicts })
        }
        TargetSpec::EnergyErgodicity(ee) => {
            let target = format!("energy_ergodicity[measure={}]", ee.measure.id());
            let rule = ee.rule.unwrap_or(Rule::MonotoneNonIncrease3Sigma);
            let series = sweep(ee.measure, &|inputs, cfg| {
                let rep = energy_ergodicity(inputs, cfg)?;
                Ok(vec![("abs_deviation".into(), rep.value, rep.std_error)])
            })?;
            let (_, points) = &series[0];
            Ok(TargetOutput {
                rows: rows_from_series(
                    &target,
                    "abs_deviation",
                    ee.measure.id(),
                    mode,
                    cfg.n_disorder,
                    points,
                ),
                verdicts: vec![verdict_from_series(
                    &target,
                    "abs_deviation",
                    &rule,
                    points,
                    Vec::new(),
                )],
            })
        }
        TargetSpec::UltrametricityViolation(u) => {
            let target = format!(
                "ultrametricity_violation[eps={},measure={}]",
                u.epsilon,
                u.measure.id()
            );
            // the indicator's effective cutoff is the smallest overlap-lattice
            // step above epsilon and moves non-monotonically with volume, so
            // per-step monotonicity is not meaningful; compare the endpoints
            let rule = u.rule.unwrap_or(Rule::EndpointDecrease3Sigma);
            let series = sweep(u.measure, &|inputs, cfg| {
                let rep = ultrametricity_violation(inputs, cfg, u.epsilon)?;
                Ok(vec![(
                    "violation_prob".into(),
                    rep.violation_prob,
                    rep.std_error,
                )])
            })?;
            let (_, points) = &series[0];
            Ok(TargetOutput {
                rows: rows_from_series(
                    &target,
                    "violation_prob",
                    u.measure.id(),
                    mode,
                    cfg.n_disorder,
                    points,
                ),
                verdicts: vec![verdict_from_series(
                    &target,
                    "violation_prob",
                    &rule,
                    points,
                    Vec::new(),
                )],
            })
        }
        TargetSpec::FreeEnergyVariance(fv) => {
            let n_disorder = fv.n_disorder.unwrap_or(cfg.n_disorder);
            let target = format!("free_energy_variance[measure={}]", fv.measure.id());
            let rule = fv.rule.unwrap_or(Rule::VarianceBound);
            let mut points = Vec::new();
            let mut bounds = Vec::new();
            for &(n, volume) in &grid {
                let lat = Lattice::build(d, n)?;
                let params = config.params_for(fv.measure, volume)?;
                let stats = free_energy_stats(
                    &lat,
                    family,
                    &params,
                    cfg.budget,
                    cfg.cap,
                    n_disorder,
                    config.seed,
                )?;
                let (var, se) = jackknife_scalar(&stats.log_z_samples, sample_variance);
                points.push(SeriesPoint {
                    n,
                    volume,
                    value: var,
                    std_error: se,
                });
                bounds.push(2.0 * config.model.mu.powi(2) * (volume as f64).powf(1.5));
            }
            Ok(TargetOutput {
                rows: rows_from_series(
                    &target,
                    "var_free_energy",
                    fv.measure.id(),
                    mode,
                    n_disorder,
                    &points,
                ),
                verdicts: vec![verdict_from_series(
                    &target,
                    "var_free_energy",
                    &rule,
                    &points,
                    bounds,
                )],
            })
        }
        TargetSpec::NuObservable(o) => {
            let (obs, min_m) = parse_observable(&o.observable)?;
            let m_eff = config.estimator.m.max(min_m);
            let target = format!("nu[{},measure={}]", o.observable, o.measure.id());
            let series = sweep(o.measure, &|inputs, cfg| {
                let est = nu_estimate(inputs, cfg, &obs, m_eff)?;
                Ok(vec![("estimate".into(), est.value, est.std_error)])
            })?;
            let (_, points) = &series[0];
            let mut verdicts = Vec::new();
            if let Some(rule) = &o.rule {
                verdicts.push(verdict_from_series(
                    &target,
                    "estimate",
                    rule,
                    points,
                    Vec::new(),
                ));
            }
            Ok(TargetOutput {
                rows: rows_from_series(
                    &target,
                    "estimate",
                    o.measure.id(),
                    mode,
                    cfg.n_disorder,
                    points,
                ),
                verdicts,
            })
        }
        TargetSpec::IbpCertify(_) => {
            let summary = ibp::sweep_certify(&ibp::default_grid());
            let mk = |quantity: &str, value: f64| ResultRow {
                target: "ibp_certify".into(),
                quantity: quantity.into(),
                n: 0,
                volume: 0,
                measure: "-".into(),
                mode: "-".into(),
                value,
                std_error: 0.0,
                n_disorder: 0,
            };
            let rows = vec![
                mk("holds", summary.holds as f64),
                mk("violations", summary.violations as f64),
                mk("precondition_errors", summary.precondition_errors as f64),
            ];
            let verdict = TrendVerdict {
                target: "ibp_certify".into(),
                quantity: "violations".into(),
                rule: Rule::ZeroViolations.id(),
                grid: Vec::new(),
                values: vec![summary.violations as f64],
                std_errors: vec![0.0],
                bounds: Vec::new(),
                pass: summary.violations == 0,
            };
            Ok(TargetOutput {
                rows,
                verdicts: vec![verdict],
            })
        }
        TargetSpec::ConditionCheck(cc) => {
            let sched = config.schedule()?;
            let report = check_perturbation_condition(
                &sched,
                family,
                d,
                &config.n_grid,
                cc.eps.unwrap_or(1.0),
                cc.threshold.unwrap_or(DEFAULT_THIRD_MOMENT_THRESHOLD),
            )?;
            let rows: Vec<ResultRow> = report
                .rows
                .iter()
                .map(|r| ResultRow {
                    target: "condition_check".into(),
                    quantity: "truncated_third_moment".into(),
                    n: r.n,
                    volume: r.volume,
                    measure: "-".into(),
                    mode: "-".into(),
                    value: r.third_moment_avg,
                    std_error: 0.0,
                    n_disorder: 0,
                })
                .collect();
            let verdict = TrendVerdict {
                target: "condition_check".into(),
                quantity: "verdict".into(),
                rule: Rule::ConditionPass.id(),
                grid: report.rows.iter().map(|r| r.n).collect(),
                values: vec![if report.passed() { 1.0 } else { 0.0 }],
                std_errors: vec![0.0],
                bounds: Vec::new(),
                pass: report.passed(),
            };
            Ok(TargetOutput {
                rows,
                verdicts: vec![verdict],
            })
        }
    }
}

fn format_csv(rows: &[ResultRow], seed: u64, hash: &str) -> String {
    let mut out = String::from(
        "target,quantity,n,volume,measure,mode,value,std_error,n_disorder,seed,config_hash\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.target,
            r.quantity,
            r.n,
            r.volume,
            r.measure,
            r.mode,
            r.value,
            r.std_error,
            r.n_disorder,
            seed,
            hash
        )
        .unwrap();
    }
    out
}

fn run_inner(config: &ExperimentConfig, hash: &str) -> Result<RunOutput> {
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    for spec in &config.targets {
        let out = run_target(config, spec)?;
        rows.extend(out.rows);
        verdicts.extend(out.verdicts);
    }
    let all_pass = verdicts.iter().all(|v| v.pass);
    let summary = RunSummary {
        version: CONFIG_VERSION,
        seed: config.seed,
        config_hash: hash,
        mode: config.estimator.mode,
        n_grid: &config.n_grid,
        verdicts: &verdicts,
        all_pass,
    };
    let mut summary = serde_json::to_string_pretty(&summary)?;
    summary.push('\n');
    Ok(RunOutput {
        csv: format_csv(&rows, config.seed, hash),
        summary,
        verdicts,
        all_pass,
    })
}

/// Evaluates every target of the config. `workers` sets the worker count;
/// zero means the library default. Outputs are byte-identical across
/// worker counts.
pub fn run(config: &ExperimentConfig, hash: &str, workers: usize) -> Result<RunOutput> {
    if workers == 0 {
        return run_inner(config, hash);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(config, hash))
}

/// Writes the run outputs under `out_dir` (current directory when absent),
/// using the configured file names. Returns the two paths.
pub fn write_outputs(
    config: &ExperimentConfig,
    out: &RunOutput,
    out_dir: Option<&Path>,
) -> Result<(PathBuf, PathBuf)> {
    let dir = out_dir.unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(&config.output.csv);
    let summary_path = dir.join(&config.output.summary);
    std::fs::write(&csv_path, &out.csv)?;
    std::fs::write(&summary_path, &out.summary)?;
    Ok((csv_path, summary_path))
}

/// The acceptance fixture: d=1 Rademacher chain, four volumes, exact mode.
pub fn standard_fixture_json() -> String {
    r#"{
  "version": 1,
  "seed": 7,
  "model": {
    "d": 1,
    "beta": 0.5,
    "mu": 1.0,
    "gamma": 0.25,
    "family": "rademacher",
    "alpha": [1.0, 1.0],
    "p_max": 3,
    "c_n": { "kind": "volume_power", "exponent": -0.25 }
  },
  "estimator": {
    "mode": "exact",
    "m": 2,
    "n_disorder": 400
  },
  "targets": [
    { "gg_residual": { "f": "r12", "psi": "id", "measure": "nu" } },
    { "gg_residual": { "f": "r12", "psi": "pow2", "measure": "nu" } },
    { "gg_residual": { "f": "r12", "psi": "id", "measure": "nu_alpha" } },
    { "gg_residual": { "f": "r12", "psi": "pow2", "measure": "nu_alpha" } },
    { "delta_concentration": { "p": 1, "measure": "nu" } },
    { "delta_concentration": { "p": 2, "measure": "nu_alpha" } },
    { "self_averaging": { "measure": "nu" } },
    { "energy_ergodicity": { "measure": "nu" } },
    { "ultrametricity_violation": { "epsilon": 0.2, "measure": "nu" } },
    { "free_energy_variance": { "n_disorder": 200, "measure": "nu" } },
    { "condition_check": {} }
  ],
  "n_grid": [6, 10, 14, 18],
  "output": { "csv": "results.csv", "summary": "summary.json" }
}
"#
    .into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_config(targets: &str) -> String {
        format!(
            r#"{{
  "version": 1,
  "seed": 11,
  "model": {{ "d": 1, "beta": 0.4, "mu": 1.0, "gamma": 0.25, "family": "rademacher" }},
  "estimator": {{ "mode": "exact", "n_disorder": 8 }},
  "targets": [{targets}],
  "n_grid": [3, 5]
}}"#
        )
    }

    #[test]
    fn standard_fixture_parses_and_validates() {
        let config = ExperimentConfig::from_json(&standard_fixture_json()).unwrap();
        assert_eq!(config.n_grid, vec![6, 10, 14, 18]);
        assert_eq!(config.targets.len(), 11);
        assert_eq!(config.estimator.mode, Mode::Exact);
    }

    #[test]
    fn unknown_keys_are_rejected_with_field_paths() {
        let bad = tiny_config(r#"{ "gg_residual": { "f": "r12", "psi": "id", "typo": 1 } }"#);
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("targets[0]"), "{err}");
        assert!(err.contains("typo"), "{err}");

        let bad = tiny_config("").replace(r#""beta": 0.4"#, r#""beta": 0.4, "betta": 1"#);
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("model"), "{err}");
    }

    #[test]
    fn schema_violations_name_the_field() {
        let bad = tiny_config("").replace(r#""version": 1"#, r#""version": 2"#);
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        let bad = tiny_config(r#"{ "delta_concentration": { "p": 0 } }"#);
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("targets[0].p"), "{err}");

        let bad = tiny_config("").replace("[3, 5]", "[5, 3]");
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("n_grid"), "{err}");
    }

    #[test]
    fn exact_mode_capacity_is_enforced() {
        let bad = tiny_config("").replace("[3, 5]", "[3, 30]");
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("n_grid[1]"), "{err}");
    }

    #[test]
    fn empty_targets_give_empty_outputs() {
        let config = ExperimentConfig::from_json(&tiny_config("")).unwrap();
        let out = run(&config, "abcdefabcdef", 0).unwrap();
        assert_eq!(
            out.csv,
            "target,quantity,n,volume,measure,mode,value,std_error,n_disorder,seed,config_hash\n"
        );
        assert!(out.verdicts.is_empty());
        assert!(out.all_pass);
    }

    #[test]
    fn small_run_emits_rows_and_verdicts() {
        let config = ExperimentConfig::from_json(&tiny_config(
            r#"{ "gg_residual": { "f": "r12", "psi": "id" } },
               { "self_averaging": {} },
               { "condition_check": {} }"#,
        ))
        .unwrap();
        let out = run(&config, "deadbeef0000", 0).unwrap();
        // gg: 2 rows; self_averaging: 2 quantities x 2 volumes; condition: 2
        let lines: Vec<&str> = out.csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 4 + 2);
        assert!(lines[1].ends_with(",11,deadbeef0000"));
        // verdicts: gg 1, self_averaging 2, condition 1
        assert_eq!(out.verdicts.len(), 4);
        let condition = out.verdicts.iter().find(|v| v.target == "condition_check");
        assert!(condition.unwrap().pass);
    }

    #[test]
    fn outputs_are_identical_across_worker_counts() {
        let config = ExperimentConfig::from_json(&tiny_config(
            r#"{ "delta_concentration": { "p": 1 } },
               { "ultrametricity_violation": { "epsilon": 0.2 } }"#,
        ))
        .unwrap();
        let a = run(&config, "cafe00000001", 1).unwrap();
        let b = run(&config, "cafe00000001", 8).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn variance_bound_rule_compares_to_volume_bound() {
        let config = ExperimentConfig::from_json(&tiny_config(
            r#"{ "free_energy_variance": { "n_disorder": 24 } }"#,
        ))
        .unwrap();
        let out = run(&config, "000000000000", 0).unwrap();
        let v = &out.verdicts[0];
        assert_eq!(v.bounds.len(), 2);
        assert_relative_eq!(v.bounds[0], 2.0 * 3f64.powf(1.5), epsilon = 1e-12);
        assert!(v.pass, "variance {:?} vs bounds {:?}", v.values, v.bounds);
    }

    #[test]
    fn rules_evaluate_series_correctly() {
        let flat = [1.0, 1.0, 1.0];
        let ses = [0.1, 0.1, 0.1];
        assert!(apply_rule(
            &Rule::MonotoneNonIncrease3Sigma,
            &flat,
            &ses,
            &[]
        ));
        assert!(!apply_rule(&Rule::EndpointDecrease3Sigma, &flat, &ses, &[]));

        let down = [1.0, 0.6, 0.1];
        assert!(apply_rule(
            &Rule::MonotoneNonIncrease3Sigma,
            &down,
            &ses,
            &[]
        ));
        assert!(apply_rule(&Rule::EndpointDecrease3Sigma, &down, &ses, &[]));

        let spike = [1.0, 2.0, 0.1];
        assert!(!apply_rule(
            &Rule::MonotoneNonIncrease3Sigma,
            &spike,
            &ses,
            &[]
        ));

        // a rise within noise is tolerated by the monotone rule
        let wiggle = [1.0, 1.2, 0.9];
        assert!(apply_rule(
            &Rule::MonotoneNonIncrease3Sigma,
            &wiggle,
            &ses,
            &[]
        ));

        assert!(apply_rule(
            &Rule::FinalBelowThreshold { threshold: 0.5 },
            &down,
            &ses,
            &[]
        ));
        assert!(apply_rule(
            &Rule::VarianceBound,
            &[1.0, 2.0],
            &[0.0, 0.0],
            &[1.5, 2.5]
        ));
        assert!(!apply_rule(
            &Rule::VarianceBound,
            &[1.0, 3.0],
            &[0.0, 0.0],
            &[1.5, 2.5]
        ));
    }

    #[test]
    fn config_hash_is_stable_and_short() {
        let h = config_hash(b"fixture");
        assert_eq!(h.len(), 12);
        assert_eq!(h, config_hash(b"fixture"));
        assert_ne!(h, config_hash(b"fixture2"));
    }

    #[test]
    fn observable_parsing_round_trips() {
        assert!(parse_observable("overlap").is_ok());
        assert!(parse_observable("site_spin:3").is_ok());
        assert!(parse_observable("bond:0,1").is_ok());
        assert!(parse_observable("bond:0").is_err());
        assert!(parse_observable("r12").is_err());
    }
}
