//! Estimators for the limit statements: Ghirlanda-Guerra residuals,
//! concentration of the disorder energies, energy ergodicity,
//! self-averaging, and ultrametricity violation.
//!
//! Every estimate is a disorder average of per-realization Gibbs
//! quantities. In exact mode the per-realization values come from
//! enumeration passes: replica expectations of overlap polynomials reduce
//! to contractions of single-replica moments (means, pair and triple
//! correlations), so no multi-replica enumeration is ever performed.
//! Combinations outside that catalog, and all of MCMC mode, estimate the
//! same quantities from sampled replica sets.

use crate::disorder::{sample_field, DisorderFamily};
use crate::error::{Error, Result};
use crate::gibbs::{
    ChainSettings, ExactEnsemble, McmcEnsemble, ReplicaObservable, ReplicaSet, SingleReplicaMoments,
};
use crate::hamiltonian::{ModelParams, PSpinDisorder, SpinPolynomial};
use crate::lattice::Lattice;
use crate::numeric::{jackknife, mean, sample_variance, KahanSum};
use crate::overlaps::{delta_field_polynomial, delta_rank_polynomial, overlap, OverlapArray};
use crate::rng::{domain, realization_context, CounterRng};
use crate::{gibbs, overlaps};
use rayon::prelude::*;
use serde::Serialize;

/// Replica function f from the registered library; values are clamped to
/// [-1, 1] at evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FSpec {
    One,
    Overlap12,
    Overlap12Squared,
    /// Indicator of R_{1,2} >= t.
    Threshold(f64),
    /// Product R_{1,2} R_{3,4}; needs four replicas.
    ProductR12R34,
}

impl FSpec {
    pub fn from_name(name: &str) -> Result<Self> {
        if let Some(t) = name.strip_prefix("threshold:") {
            let t: f64 = t
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad threshold in f spec {name}")))?;
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "threshold {t} outside [-1, 1]"
                )));
            }
            return Ok(FSpec::Threshold(t));
        }
        match name {
            "one" => Ok(FSpec::One),
            "r12" => Ok(FSpec::Overlap12),
            "r12_sq" => Ok(FSpec::Overlap12Squared),
            "r12_r34" => Ok(FSpec::ProductR12R34),
            _ => Err(Error::InvalidParameter(format!("unknown f spec {name}"))),
        }
    }

    pub fn id(&self) -> String {
        match self {
            FSpec::One => "one".into(),
            FSpec::Overlap12 => "r12".into(),
            FSpec::Overlap12Squared => "r12_sq".into(),
            FSpec::Threshold(t) => format!("threshold:{t}"),
            FSpec::ProductR12R34 => "r12_r34".into(),
        }
    }

    /// Smallest replica count the function reads.
    pub fn min_replicas(&self) -> usize {
        match self {
            FSpec::ProductR12R34 => 4,
            _ => 2,
        }
    }

    pub fn eval(&self, arr: &OverlapArray) -> f64 {
        let v = match self {
            FSpec::One => 1.0,
            FSpec::Overlap12 => arr.get(0, 1),
            FSpec::Overlap12Squared => arr.get(0, 1).powi(2),
            FSpec::Threshold(t) => {
                if arr.get(0, 1) >= *t {
                    1.0
                } else {
                    0.0
                }
            }
            FSpec::ProductR12R34 => arr.get(0, 1) * arr.get(2, 3),
        };
        v.clamp(-1.0, 1.0)
    }
}

/// Overlap map psi from the registered library; maps [-1, 1] into itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiSpec {
    Id,
    /// r^p with 1 <= p <= 6.
    Power(u32),
    /// Indicator of r >= t.
    Threshold(f64),
}

impl PsiSpec {
    pub fn power(p: u32) -> Result<Self> {
        if !(1..=6).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "overlap powers are registered for 1 <= p <= 6, got {p}"
            )));
        }
        Ok(PsiSpec::Power(p))
    }

    pub fn from_name(name: &str) -> Result<Self> {
        if let Some(t) = name.strip_prefix("threshold:") {
            let t: f64 = t.parse().map_err(|_| {
                Error::InvalidParameter(format!("bad threshold in psi spec {name}"))
            })?;
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "threshold {t} outside [-1, 1]"
                )));
            }
            return Ok(PsiSpec::Threshold(t));
        }
        if let Some(p) = name.strip_prefix("pow") {
            let p: u32 = p
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad power in psi spec {name}")))?;
            return PsiSpec::power(p);
        }
        match name {
            "id" => Ok(PsiSpec::Id),
            _ => Err(Error::InvalidParameter(format!("unknown psi spec {name}"))),
        }
    }

    pub fn id(&self) -> String {
        match self {
            PsiSpec::Id => "id".into(),
            PsiSpec::Power(p) => format!("pow{p}"),
            PsiSpec::Threshold(t) => format!("threshold:{t}"),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let r = r.clamp(-1.0, 1.0);
        match self {
            PsiSpec::Id => r,
            PsiSpec::Power(p) => r.powi(*p as i32),
            PsiSpec::Threshold(t) => {
                if r >= *t {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// How per-realization Gibbs quantities are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Mcmc,
}

/// Estimator settings shared by all operations.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub mode: Mode,
    pub n_disorder: usize,
    pub seed: u64,
    pub budget: u64,
    pub cap: u64,
    /// MCMC only: sweep schedule and replica sets per realization.
    pub chain: ChainSettings,
    pub n_sets: usize,
    /// Exact mode only: table draws per realization for combinations
    /// outside the exact catalog.
    pub table_samples: usize,
}

impl EstimatorConfig {
    pub fn exact(n_disorder: usize, seed: u64) -> Self {
        Self {
            mode: Mode::Exact,
            n_disorder,
            seed,
            budget: crate::hamiltonian::DEFAULT_PSPIN_BUDGET,
            cap: gibbs::DEFAULT_VOLUME_CAP,
            chain: ChainSettings::default(),
            n_sets: 200,
            table_samples: 256,
        }
    }

    pub fn mcmc(n_disorder: usize, seed: u64, n_sets: usize) -> Self {
        Self {
            mode: Mode::Mcmc,
            n_sets,
            ..Self::exact(n_disorder, seed)
        }
    }
}

/// Model inputs for one volume; the measure (with or without the rank-p
/// perturbation) is carried by the parameters.
pub struct ModelInputs<'a> {
    pub lat: &'a Lattice,
    pub family: DisorderFamily,
    pub params: ModelParams,
}

/// One realization's ensemble with lazily computed moment contractions.
struct Realization {
    ens: ExactEnsemble,
    moments: SingleReplicaMoments,
    quad: std::cell::OnceCell<(f64, f64)>,
    triple_sq: std::cell::OnceCell<f64>,
}

impl Realization {
    fn build(inputs: &ModelInputs, cfg: &EstimatorConfig, ctx: u64) -> Result<Self> {
        let g = sample_field(inputs.family, inputs.lat, cfg.seed, ctx);
        let xi = PSpinDisorder::new(inputs.family, cfg.seed, ctx);
        let ens =
            ExactEnsemble::enumerate(inputs.lat, &g, &xi, &inputs.params, cfg.budget, cfg.cap)?;
        let moments = ens.single_replica_moments();
        Ok(Self {
            ens,
            moments,
            quad: Default::default(),
            triple_sq: Default::default(),
        })
    }

    fn n(&self) -> f64 {
        self.moments.n as f64
    }

    /// <R_12> = (1/N) sum m_x^2.
    fn s1(&self) -> f64 {
        self.moments.m.iter().map(|v| v * v).sum::<f64>() / self.n()
    }

    /// <R_12^2> = (1/N^2) sum C_xy^2.
    fn s2(&self) -> f64 {
        self.moments.c.iter().map(|v| v * v).sum::<f64>() / (self.n() * self.n())
    }

    /// <R_12 R_13> = m' C m / N^2.
    fn u11(&self) -> f64 {
        let n = self.moments.n;
        let mut acc = 0.0;
        for x in 0..n {
            let mut row = 0.0;
            for y in 0..n {
                row += self.moments.c[x * n + y] * self.moments.m[y];
            }
            acc += self.moments.m[x] * row;
        }
        acc / (self.n() * self.n())
    }

    fn quad(&self) -> (f64, f64) {
        *self.quad.get_or_init(|| {
            self.ens
                .quadratic_form_moments(&self.moments.c, &self.moments.m)
        })
    }

    fn triple_sq_sum(&self) -> f64 {
        *self.triple_sq.get_or_init(|| {
            self.ens
                .triple_correlations()
                .iter()
                .map(|t| t * t)
                .sum::<f64>()
        })
    }

    /// <R_12^3> from triple correlations: the ordered triple sum splits
    /// into 6 strict triples per unordered one plus (3N - 2) sum m^2 from
    /// repeated indices.
    fn s3(&self) -> f64 {
        let n = self.n();
        let msq: f64 = self.moments.m.iter().map(|v| v * v).sum();
        (6.0 * self.triple_sq_sum() + (3.0 * n - 2.0) * msq) / (n * n * n)
    }

    /// <R_12 psi(R_13)> for psi in the exact catalog.
    fn pattern_cross(&self, psi: &PsiSpec) -> Option<f64> {
        match psi {
            PsiSpec::Id | PsiSpec::Power(1) => Some(self.u11()),
            PsiSpec::Power(2) => {
                let (e_ql, _) = self.quad();
                Some(e_ql / self.n().powi(3))
            }
            _ => None,
        }
    }

    /// <R_12 psi(R_12)> for psi in the exact catalog.
    fn pattern_same(&self, psi: &PsiSpec) -> Option<f64> {
        match psi {
            PsiSpec::Id | PsiSpec::Power(1) => Some(self.s2()),
            PsiSpec::Power(2) => Some(self.s3()),
            _ => None,
        }
    }

    /// <R_12^2 psi(R_13)>.
    fn pattern_sq_cross(&self, psi: &PsiSpec) -> Option<f64> {
        match psi {
            PsiSpec::Id | PsiSpec::Power(1) => {
                let (e_ql, _) = self.quad();
                Some(e_ql / self.n().powi(3))
            }
            PsiSpec::Power(2) => {
                let (_, e_q2) = self.quad();
                Some(e_q2 / self.n().powi(4))
            }
            _ => None,
        }
    }

    /// <R_12^2 psi(R_12)>.
    fn pattern_sq_same(&self, psi: &PsiSpec) -> Option<f64> {
        match psi {
            PsiSpec::Id | PsiSpec::Power(1) => Some(self.s3()),
            _ => None,
        }
    }

    /// <psi(R_12)> for psi in the exact catalog.
    fn pair_value(&self, psi: &PsiSpec) -> Option<f64> {
        match psi {
            PsiSpec::Id | PsiSpec::Power(1) => Some(self.s1()),
            PsiSpec::Power(2) => Some(self.s2()),
            PsiSpec::Power(3) => Some(self.s3()),
            _ => None,
        }
    }
}

/// The four residual ingredients for one realization:
/// [ <f psi(R_{1,m+1})>, <f>, <psi(R_{1,2})>, sum_{l=2}^m <f psi(R_{1,l})> ].
fn gg_terms_exact(real: &Realization, m: usize, f: &FSpec, psi: &PsiSpec) -> Option<[f64; 4]> {
    let extra = (m - 2) as f64;
    match f {
        FSpec::One => {
            let v = real.pair_value(psi)?;
            Some([v, 1.0, v, (m - 1) as f64 * v])
        }
        FSpec::Overlap12 => {
            let cross = real.pattern_cross(psi)?;
            let same = real.pattern_same(psi)?;
            let pv = real.pair_value(psi)?;
            Some([cross, real.s1(), pv, same + extra * cross])
        }
        FSpec::Overlap12Squared => {
            let cross = real.pattern_sq_cross(psi)?;
            let same = real.pattern_sq_same(psi)?;
            let pv = real.pair_value(psi)?;
            Some([cross, real.s2(), pv, same + extra * cross])
        }
        _ => None,
    }
}

/// The same four ingredients averaged over sampled (m+1)-replica sets.
fn gg_terms_from_sets(sets: &[ReplicaSet], m: usize, f: &FSpec, psi: &PsiSpec) -> Result<[f64; 4]> {
    let mut acc = [
        KahanSum::new(),
        KahanSum::new(),
        KahanSum::new(),
        KahanSum::new(),
    ];
    for set in sets {
        let arr = set.overlap_array()?;
        let f_val = f.eval(&arr);
        acc[0].add(f_val * psi.eval(arr.get(0, m)));
        acc[1].add(f_val);
        acc[2].add(psi.eval(arr.get(0, 1)));
        let mut third = 0.0;
        for l in 1..m {
            third += f_val * psi.eval(arr.get(0, l));
        }
        acc[3].add(third);
    }
    let count = sets.len() as f64;
    Ok([
        acc[0].value() / count,
        acc[1].value() / count,
        acc[2].value() / count,
        acc[3].value() / count,
    ])
}

fn check_replica_count(m: usize, f: &FSpec) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "residuals need m >= 2 replicas, got {m}"
        )));
    }
    if m < f.min_replicas() {
        return Err(Error::InvalidParameter(format!(
            "f spec {} reads {} replicas but m = {m}",
            f.id(),
            f.min_replicas()
        )));
    }
    Ok(())
}

/// Runs `per_realization` over all disorder draws of one group in
/// parallel, merged by index. Group k shifts the realization indices so
/// independent-draw estimators see disjoint streams.
fn map_realizations<T: Send>(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
    group: u64,
    per_realization: impl Fn(usize, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if cfg.n_disorder < 2 {
        return Err(Error::InvalidParameter("need n_disorder >= 2".into()));
    }
    let volume = inputs.lat.volume();
    (0..cfg.n_disorder)
        .into_par_iter()
        .map(|r| {
            let ctx = realization_context(volume, group * cfg.n_disorder as u64 + r as u64);
            per_realization(r, ctx)
        })
        .collect()
}

/// Per-realization replica sets in MCMC mode.
fn mcmc_sets(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
    ctx: u64,
    replicas: usize,
) -> Result<Vec<ReplicaSet>> {
    let g = sample_field(inputs.family, inputs.lat, cfg.seed, ctx);
    let xi = PSpinDisorder::new(inputs.family, cfg.seed, ctx);
    let poly =
        crate::hamiltonian::exponent_polynomial(inputs.lat, &g, &xi, &inputs.params, cfg.budget)?;
    let mut ens = McmcEnsemble::new(&poly, replicas, cfg.chain, cfg.seed, ctx);
    Ok(ens.sets(cfg.n_sets))
}

/// Per-realization replica sets drawn from the exact table.
fn table_sets(
    real: &Realization,
    cfg: &EstimatorConfig,
    ctx: u64,
    replicas: usize,
) -> Vec<ReplicaSet> {
    let sampler = real.ens.sampler();
    let mut rng = CounterRng::keyed(&[cfg.seed, domain::TABLE_SAMPLE, ctx]);
    (0..cfg.table_samples)
        .map(|_| sampler.draw_set(replicas, &mut rng))
        .collect()
}

/// Disorder-averaged estimate with its standard error.
#[derive(Debug, Clone, Serialize)]
pub struct NuEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_disorder: usize,
}

fn summarize(values: &[f64]) -> NuEstimate {
    NuEstimate {
        value: mean(values),
        std_error: (sample_variance(values) / values.len() as f64).sqrt(),
        n_disorder: values.len(),
    }
}

/// nu of a factorized replica observable: the disorder average of the
/// inner replica expectation.
pub fn nu_estimate(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
    obs: &ReplicaObservable,
    m: usize,
) -> Result<NuEstimate> {
    let values = map_realizations(inputs, cfg, 0, |_, ctx| match cfg.mode {
        Mode::Exact => {
            let real = Realization::build(inputs, cfg, ctx)?;
            gibbs::expectation(&real.ens, obs, m)
        }
        Mode::Mcmc => {
            let sets = mcmc_sets(inputs, cfg, ctx, m)?;
            let mut acc = KahanSum::new();
            for set in &sets {
                acc.add(eval_observable_on_set(obs, set)?);
            }
            Ok(acc.value() / sets.len() as f64)
        }
    })?;
    Ok(summarize(&values))
}

fn eval_observable_on_set(obs: &ReplicaObservable, set: &ReplicaSet) -> Result<f64> {
    Ok(match obs {
        ReplicaObservable::One => 1.0,
        ReplicaObservable::SiteSpin { replica, site } => {
            set.configs()[*replica].sign(*site as usize)
        }
        ReplicaObservable::SpinProduct(factors) => factors
            .iter()
            .map(|&(replica, site)| set.configs()[replica].sign(site as usize))
            .product(),
        ReplicaObservable::Overlap { a, b } => overlap(&set.configs()[*a], &set.configs()[*b])?,
    })
}

/// A Ghirlanda-Guerra residual estimate.
#[derive(Debug, Clone, Serialize)]
pub struct GgResidualReport {
    pub m: usize,
    pub f_spec: String,
    pub psi_spec: String,
    pub residual: f64,
    pub std_error: f64,
    pub n_disorder: usize,
    pub mode: Mode,
    /// Common disorder draws across the three nu-terms.
    pub paired: bool,
    /// Whether every term came from the exact contraction catalog.
    pub exact_terms: bool,
    pub seed: u64,
}

fn residual_from_means(means: &[f64], m: usize) -> f64 {
    means[0] - means[1] * means[2] / m as f64 - means[3] / m as f64
}

/// Residual of the extended identity:
/// nu(f psi(R_{1,m+1})) - (1/m) nu(f) nu(psi(R_{1,2}))
/// - (1/m) sum_{l=2}^m nu(f psi(R_{1,l})).
pub fn gg_residual(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
    m: usize,
    f: &FSpec,
    psi: &PsiSpec,
    paired: bool,
) -> Result<GgResidualReport> {
    check_replica_count(m, f)?;
    let mut exact_terms = cfg.mode == Mode::Exact;

    let records: Vec<Vec<f64>> = if paired {
        let rows = map_realizations(inputs, cfg, 0, |_, ctx| -> Result<([f64; 4], bool)> {
            match cfg.mode {
                Mode::Exact => {
                    let real = Realization::build(inputs, cfg, ctx)?;
                    if let Some(terms) = gg_terms_exact(&real, m, f, psi) {
                        Ok((terms, true))
                    } else {
                        let sets = table_sets(&real, cfg, ctx, m + 1);
                        Ok((gg_terms_from_sets(&sets, m, f, psi)?, false))
                    }
                }
                Mode::Mcmc => {
                    let sets = mcmc_sets(inputs, cfg, ctx, m + 1)?;
                    Ok((gg_terms_from_sets(&sets, m, f, psi)?, false))
                }
            }
        })?;
        exact_terms = rows.iter().all(|(_, exact)| *exact) && exact_terms;
        rows.into_iter().map(|(t, _)| t.to_vec()).collect()
    } else {
        // each term from its own disorder group
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(4);
        for term in 0..4u64 {
            let col = map_realizations(inputs, cfg, term, |_, ctx| -> Result<f64> {
                let terms = match cfg.mode {
                    Mode::Exact => {
                        let real = Realization::build(inputs, cfg, ctx)?;
                        if let Some(t) = gg_terms_exact(&real, m, f, psi) {
                            t
                        } else {
                            let sets = table_sets(&real, cfg, ctx, m + 1);
                            gg_terms_from_sets(&sets, m, f, psi)?
                        }
                    }
                    Mode::Mcmc => {
                        let sets = mcmc_sets(inputs, cfg, ctx, m + 1)?;
                        gg_terms_from_sets(&sets, m, f, psi)?
                    }
                };
                Ok(terms[term as usize])
            })?;
            columns.push(col);
        }
        exact_terms = false;
        (0..cfg.n_disorder)
            .map(|r| columns.iter().map(|c| c[r]).collect())
            .collect()
    };

    let (residual, std_error) = jackknife(&records, |means| residual_from_means(means, m));
    Ok(GgResidualReport {
        m,
        f_spec: f.id(),
        psi_spec: psi.id(),
        residual,
        std_error,
        n_disorder: cfg.n_disorder,
        mode: cfg.mode,
        paired,
        exact_terms,
        seed: cfg.seed,
    })
}

/// Concentration estimate nu(|X - nu(X)|) for an observable polynomial.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub value: f64,
    pub std_error: f64,
    /// The phase-one scalar nu(X).
    pub center: f64,
    pub n_disorder: usize,
    pub mode: Mode,
    pub seed: u64,
}

/// Two-phase paired estimator of nu(|X - nu(X)|), where X is built per
/// realization by `build_poly`.
fn abs_deviation_estimate(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
    build_poly: impl Fn(u64) -> Result<SpinPolynomial> + Sync,
) -> Result<ConcentrationReport> {
    let phase_one = map_realizations(inputs, cfg, 0, |_, ctx| {
        let poly = build_poly(ctx)?;
        match cfg.mode {
            Mode::Exact => {
                let real = Realization::build(inputs, cfg, ctx)?;
                Ok(real.ens.expectation_poly(&poly))
            }
            Mode::Mcmc => {
                let sets = mcmc_sets(inputs, cfg, ctx, 1)?;
                let mut acc = KahanSum::new();
                for set in &sets {
                    acc.add(poly.evaluate(&set.configs()[0].to_signs()));
                }
                Ok(acc.value() / sets.len() as f64)
            }
        }
    })?;
    let center = mean(&phase_one);

    let phase_two = map_realizations(inputs, cfg, 0, |_, ctx| {
        let poly = build_poly(ctx)?;
        match cfg.mode {
            Mode::Exact => {
                let real = Realization::build(inputs, cfg, ctx)?;
                Ok(real.ens.expectation_map(&poly, |v| (v - center).abs()))
            }
            Mode::Mcmc => {
                let sets = mcmc_sets(inputs, cfg, ctx, 1)?;
                let mut acc = KahanSum::new();
                for set in &sets {
                    acc.add((poly.evaluate(&set.configs()[0].to_signs()) - center).abs());
                }
                Ok(acc.value() / sets.len() as f64)
            }
        }
    })?;
    let summary = summarize(&phase_two);
    Ok(ConcentrationReport {
        value: summary.value,
        std_error: summary.std_error,
        center,
        n_disorder: cfg.n_disorder,
        mode: cfg.mode,
        seed: cfg.seed,
    })
}

/// Concentration of the rank-p disorder energy:
/// nu(|Delta_{n;p} - nu(Delta_{n;p})|).
pub fn delta_concentration(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
    p: u32,
) -> Result<ConcentrationReport> {
    if p < 1 {
        return Err(Error::InvalidParameter("concentration needs p >= 1".into()));
    }
    abs_deviation_estimate(inputs, cfg, |ctx| {
        if p == 1 {
            let g = sample_field(inputs.family, inputs.lat, cfg.seed, ctx);
            Ok(delta_field_polynomial(&g))
        } else {
            let xi = PSpinDisorder::new(inputs.family, cfg.seed, ctx);
            delta_rank_polynomial(inputs.lat, &xi, p, cfg.budget)
        }
    })
}

/// Ergodicity of the bond energy density:
/// nu(|(beta/|V_n|) sum_edges (s_x s_y - nu(s_x s_y))|).
pub fn energy_ergodicity(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
) -> Result<ConcentrationReport> {
    let beta = inputs.params.beta();
    let n = inputs.lat.volume() as f64;
    let edges = inputs.lat.edges().to_vec();
    abs_deviation_estimate(inputs, cfg, move |_| {
        let mut terms = std::collections::BTreeMap::new();
        for &(x, y) in &edges {
            terms.insert(vec![x, y], beta / n);
        }
        Ok(SpinPolynomial::from_terms(n as u32, 0.0, terms))
    })
}

/// Self-averaging of the overlap and the magnetization:
/// nu(<(X - <X>)^2>) for X = R_{1,2} and X = m(sigma).
#[derive(Debug, Clone, Serialize)]
pub struct SelfAveragingReport {
    pub overlap_variance: f64,
    pub overlap_std_error: f64,
    pub magnetization_variance: f64,
    pub magnetization_std_error: f64,
    pub n_disorder: usize,
    pub mode: Mode,
    pub seed: u64,
}

pub fn self_averaging(inputs: &ModelInputs, cfg: &EstimatorConfig) -> Result<SelfAveragingReport> {
    let pairs = map_realizations(inputs, cfg, 0, |_, ctx| -> Result<(f64, f64)> {
        match cfg.mode {
            Mode::Exact => {
                let real = Realization::build(inputs, cfg, ctx)?;
                let n = real.moments.n;
                let nf = n as f64;
                let overlap_var = real.s2() - real.s1().powi(2);
                let mean_mag: f64 = real.moments.m.iter().sum::<f64>() / nf;
                let mean_mag_sq: f64 = real.moments.c.iter().sum::<f64>() / (nf * nf);
                Ok((overlap_var, mean_mag_sq - mean_mag * mean_mag))
            }
            Mode::Mcmc => {
                let sets = mcmc_sets(inputs, cfg, ctx, 2)?;
                let overlaps: Vec<f64> = sets
                    .iter()
                    .map(|s| overlap(&s.configs()[0], &s.configs()[1]))
                    .collect::<Result<_>>()?;
                let mags: Vec<f64> = sets
                    .iter()
                    .map(|s| overlaps::magnetization(&s.configs()[0]))
                    .collect();
                let ov = mean(&overlaps.iter().map(|r| r * r).collect::<Vec<_>>())
                    - mean(&overlaps).powi(2);
                let mg =
                    mean(&mags.iter().map(|v| v * v).collect::<Vec<_>>()) - mean(&mags).powi(2);
                Ok((ov, mg))
            }
        }
    })?;
    let ov: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mg: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ov_s = summarize(&ov);
    let mg_s = summarize(&mg);
    Ok(SelfAveragingReport {
        overlap_variance: ov_s.value,
        overlap_std_error: ov_s.std_error,
        magnetization_variance: mg_s.value,
        magnetization_std_error: mg_s.std_error,
        n_disorder: cfg.n_disorder,
        mode: cfg.mode,
        seed: cfg.seed,
    })
}

/// Estimated probability of an epsilon-quantified ultrametricity
/// violation among three replicas.
#[derive(Debug, Clone, Serialize)]
pub struct UltrametricityReport {
    pub epsilon: f64,
    pub violation_prob: f64,
    pub std_error: f64,
    pub n_disorder: usize,
    pub samples_per_realization: usize,
    pub mode: Mode,
    pub seed: u64,
}

pub fn ultrametricity_violation(
    inputs: &ModelInputs,
    cfg: &EstimatorConfig,
    epsilon: f64,
) -> Result<UltrametricityReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let indicator = |arr: &OverlapArray| -> f64 {
        if arr.get(1, 2) < arr.get(0, 1).min(arr.get(0, 2)) - epsilon {
            1.0
        } else {
            0.0
        }
    };
    let samples = match cfg.mode {
        Mode::Exact => cfg.table_samples,
        Mode::Mcmc => cfg.n_sets,
    };
    let values = map_realizations(inputs, cfg, 0, |_, ctx| -> Result<f64> {
        let sets = match cfg.mode {
            Mode::Exact => {
                let real = Realization::build(inputs, cfg, ctx)?;
                table_sets(&real, cfg, ctx, 3)
            }
            Mode::Mcmc => mcmc_sets(inputs, cfg, ctx, 3)?,
        };
        let mut acc = 0.0;
        for set in &sets {
            acc += indicator(&set.overlap_array()?);
        }
        Ok(acc / sets.len() as f64)
    })?;
    let summary = summarize(&values);
    Ok(UltrametricityReport {
        epsilon,
        violation_prob: summary.value,
        std_error: summary.std_error,
        n_disorder: cfg.n_disorder,
        samples_per_realization: samples,
        mode: cfg.mode,
        seed: cfg.seed,
    })
}
