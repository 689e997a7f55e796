//! Gibbs measures over spin configurations: exact enumeration for small
//! volumes, Glauber chains for sampling, replica draws, and free-energy
//! statistics.
//!
//! Exact mode walks configurations in Gray-code order so each step flips
//! one spin and advances the exponent by the polynomial's flip delta; the
//! probability table is indexed by configuration bitmask. The running
//! exponent is re-anchored with a full evaluation every few thousand steps
//! to keep incremental drift below the 1e-12 probability contracts.

use crate::disorder::{sample_field, DisorderFamily, FieldRealization};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    exponent_polynomial, ModelParams, PSpinDisorder, SpinConfiguration, SpinPolynomial,
};
use crate::lattice::Lattice;
use crate::numeric::{log_sum_exp, mean, sample_variance, KahanSum};
use crate::overlaps::{overlap_array, OverlapArray};
use crate::rng::{domain, realization_context, CounterRng};
use rayon::prelude::*;
use serde::Serialize;

/// Largest volume exact enumeration accepts by default (2^24 table).
pub const DEFAULT_VOLUME_CAP: u64 = 24;
/// Steps between full re-evaluations of the running exponent.
const REANCHOR_INTERVAL: usize = 4096;

/// A family of replicas drawn from one Gibbs ensemble (same disorder).
#[derive(Debug, Clone)]
pub struct ReplicaSet {
    configs: Vec<SpinConfiguration>,
}

impl ReplicaSet {
    pub fn new(configs: Vec<SpinConfiguration>) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::InvalidParameter("replica set needs m >= 1".into()));
        }
        if configs.iter().any(|c| c.len() != configs[0].len()) {
            return Err(Error::SizeMismatch(
                "replicas with unequal site counts".into(),
            ));
        }
        Ok(Self { configs })
    }

    pub fn m(&self) -> usize {
        self.configs.len()
    }

    pub fn configs(&self) -> &[SpinConfiguration] {
        &self.configs
    }

    pub fn overlap_array(&self) -> Result<OverlapArray> {
        overlap_array(&self.configs)
    }
}

/// Exact Gibbs ensemble: one probability per configuration bitmask plus
/// the log partition function.
#[derive(Debug, Clone)]
pub struct ExactEnsemble {
    n: usize,
    table: Vec<f64>,
    log_z: f64,
    sum_error: f64,
    poly: SpinPolynomial,
}

impl ExactEnsemble {
    /// Enumerates the measure for one disorder realization.
    pub fn enumerate(
        lat: &Lattice,
        g: &FieldRealization,
        xi: &PSpinDisorder,
        params: &ModelParams,
        budget: u64,
        cap: u64,
    ) -> Result<Self> {
        let poly = exponent_polynomial(lat, g, xi, params, budget)?;
        Self::from_polynomial(poly, cap)
    }

    /// Enumerates the measure whose exponent is the given polynomial.
    pub fn from_polynomial(poly: SpinPolynomial, cap: u64) -> Result<Self> {
        let n = poly.n_sites() as usize;
        if n as u64 > cap {
            return Err(Error::CapExceeded {
                volume: n as u64,
                cap,
            });
        }
        if n == 0 || n >= 64 {
            return Err(Error::InvalidParameter(format!(
                "enumeration needs 1..=63 sites, got {n}"
            )));
        }
        let mut table = poly.table_of_values();
        let log_z = log_sum_exp(&table);
        let mut total = KahanSum::new();
        for v in table.iter_mut() {
            *v = (*v - log_z).exp();
            total.add(*v);
        }
        Ok(Self {
            n,
            table,
            log_z,
            sum_error: (total.value() - 1.0).abs(),
            poly,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    /// Log partition function; the free energy of this realization.
    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.table
    }

    pub fn probability(&self, mask: u64) -> f64 {
        self.table[mask as usize]
    }

    /// |sum of probabilities - 1| under compensated summation.
    pub fn probability_sum_error(&self) -> f64 {
        self.sum_error
    }

    pub fn exponent(&self) -> &SpinPolynomial {
        &self.poly
    }

    /// Normalization and positivity contract.
    pub fn validate(&self) -> Result<()> {
        if self.sum_error > 1e-12 {
            return Err(Error::ExactUnavailable(format!(
                "probabilities sum to 1 +/- {} (contract 1e-12)",
                self.sum_error
            )));
        }
        if self.table.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::ExactUnavailable(
                "a configuration probability underflowed to zero".into(),
            ));
        }
        Ok(())
    }

    /// Walks all configurations in Gray order, tracking each observable
    /// polynomial incrementally, and visits (mask, probability, values).
    pub fn gray_pass<F: FnMut(usize, f64, &[f64])>(
        &self,
        observables: &[&SpinPolynomial],
        mut visit: F,
    ) {
        let size = self.table.len();
        let mut signs = vec![-1.0f64; self.n];
        let mut values: Vec<KahanSum> = observables
            .iter()
            .map(|o| {
                let mut k = KahanSum::new();
                k.add(o.evaluate(&signs));
                k
            })
            .collect();
        let mut current: Vec<f64> = values.iter().map(|k| k.value()).collect();
        visit(0, self.table[0], &current);
        for i in 1..size {
            let site = i.trailing_zeros();
            for (o, k) in observables.iter().zip(values.iter_mut()) {
                k.add(o.flip_delta(site, &signs));
            }
            signs[site as usize] = -signs[site as usize];
            if i % REANCHOR_INTERVAL == 0 {
                for (o, k) in observables.iter().zip(values.iter_mut()) {
                    let fresh = o.evaluate(&signs);
                    *k = KahanSum::new();
                    k.add(fresh);
                }
            }
            for (c, k) in current.iter_mut().zip(values.iter()) {
                *c = k.value();
            }
            visit(i ^ (i >> 1), self.table[i ^ (i >> 1)], &current);
        }
    }

    /// Expectation of a polynomial observable.
    pub fn expectation_poly(&self, obs: &SpinPolynomial) -> f64 {
        self.expectation_map(obs, |v| v)
    }

    /// Expectation of f(observable) for a scalar map f.
    pub fn expectation_map(&self, obs: &SpinPolynomial, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = KahanSum::new();
        self.gray_pass(&[obs], |_, p, vals| acc.add(p * f(vals[0])));
        acc.value()
    }

    /// Expectation of the product of spins over a sorted site subset.
    pub fn subset_expectation(&self, sites: &[u32]) -> f64 {
        let mut acc = KahanSum::new();
        for (mask, &p) in self.table.iter().enumerate() {
            let mut prod = p;
            for &s in sites {
                prod *= if mask >> s & 1 == 1 { 1.0 } else { -1.0 };
            }
            acc.add(prod);
        }
        acc.value()
    }

    /// Character sums F[S] with E[prod_{x in S} s_x] = (-1)^|S| F[S], for
    /// every subset mask S at once; O(size log size).
    fn character_sums(&self) -> Vec<f64> {
        let mut f = self.table.clone();
        crate::numeric::walsh_transform(&mut f);
        f
    }

    /// Single-spin means and pair correlations in one transform pass.
    pub fn single_replica_moments(&self) -> SingleReplicaMoments {
        let n = self.n;
        let f = self.character_sums();
        let m: Vec<f64> = (0..n).map(|x| -f[1usize << x]).collect();
        let mut c = vec![0.0f64; n * n];
        for x in 0..n {
            c[x * n + x] = 1.0;
            for y in (x + 1)..n {
                let v = f[(1usize << x) | (1usize << y)];
                c[x * n + y] = v;
                c[y * n + x] = v;
            }
        }
        SingleReplicaMoments { n, m, c }
    }

    /// One pass computing E[(s'Cs)(m's)] and E[(s'Cs)^2] for a symmetric
    /// matrix C and vector m, via incremental maintenance of w = Cs.
    pub fn quadratic_form_moments(&self, c: &[f64], m: &[f64]) -> (f64, f64) {
        let n = self.n;
        debug_assert_eq!(c.len(), n * n);
        debug_assert_eq!(m.len(), n);
        let mut signs = vec![-1.0f64; n];
        let mut w: Vec<f64> = (0..n)
            .map(|x| -c[x * n..(x + 1) * n].iter().sum::<f64>())
            .collect();
        let mut q: f64 = c.iter().sum();
        let mut l: f64 = -m.iter().sum::<f64>();
        let mut e_ql = KahanSum::new();
        let mut e_q2 = KahanSum::new();
        let size = self.table.len();
        for i in 0..size {
            if i > 0 {
                let s = i.trailing_zeros() as usize;
                let delta = -2.0 * signs[s];
                q += 2.0 * delta * w[s] + 4.0 * c[s * n + s];
                for (wx, cx) in w.iter_mut().zip(&c[s * n..(s + 1) * n]) {
                    *wx += delta * cx;
                }
                l += delta * m[s];
                signs[s] = -signs[s];
                if i % REANCHOR_INTERVAL == 0 {
                    for x in 0..n {
                        w[x] = c[x * n..(x + 1) * n]
                            .iter()
                            .zip(&signs)
                            .map(|(cv, sv)| cv * sv)
                            .sum();
                    }
                    q = signs.iter().zip(&w).map(|(s, w)| s * w).sum();
                    l = signs.iter().zip(m).map(|(s, m)| s * m).sum();
                }
            }
            let p = self.table[i ^ (i >> 1)];
            e_ql.add(p * q * l);
            e_q2.add(p * q * q);
        }
        (e_ql.value(), e_q2.value())
    }

    /// Third-order correlations over strictly increasing triples x < y < z,
    /// flattened lexicographically.
    pub fn triple_correlations(&self) -> Vec<f64> {
        let n = self.n;
        let f = self.character_sums();
        let mut t = Vec::with_capacity(n * (n - 1) * (n - 2) / 6);
        for x in 0..n {
            for y in (x + 1)..n {
                let pair = (1usize << x) | (1usize << y);
                for z in (y + 1)..n {
                    t.push(-f[pair | (1usize << z)]);
                }
            }
        }
        t
    }

    /// Cumulative table for drawing configurations.
    pub fn sampler(&self) -> TableSampler {
        let mut cum = Vec::with_capacity(self.table.len());
        let mut acc = KahanSum::new();
        for &p in &self.table {
            acc.add(p);
            cum.push(acc.value());
        }
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        TableSampler { cum, n: self.n }
    }
}

/// Per-realization single-replica moments: means and pair correlations.
#[derive(Debug, Clone)]
pub struct SingleReplicaMoments {
    pub n: usize,
    /// m[x] is the Gibbs mean spin at x.
    pub m: Vec<f64>,
    /// Full n x n correlation matrix, unit diagonal.
    pub c: Vec<f64>,
}

/// Inverse-CDF sampler over an exact probability table.
#[derive(Debug, Clone)]
pub struct TableSampler {
    cum: Vec<f64>,
    n: usize,
}

impl TableSampler {
    pub fn draw(&self, rng: &mut CounterRng) -> SpinConfiguration {
        let u = rng.next_f64();
        let idx = self.cum.partition_point(|&c| c < u).min(self.cum.len() - 1);
        SpinConfiguration::from_mask(idx as u64, self.n)
    }

    /// m independent replicas from the same table.
    pub fn draw_set(&self, m: usize, rng: &mut CounterRng) -> ReplicaSet {
        ReplicaSet::new((0..m).map(|_| self.draw(rng)).collect()).expect("m >= 1")
    }
}

/// Largest single-flip detailed-balance violation over random transitions,
/// using the exact table for both the stationary weights and the heat-bath
/// transition probabilities.
pub fn detailed_balance_audit(ens: &ExactEnsemble, trials: usize, seed: u64) -> f64 {
    let n = ens.n_sites();
    let size = ens.probabilities().len() as u64;
    let mut rng = CounterRng::keyed(&[seed, domain::AUDIT]);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mask = rng.next_u64_raw() & (size - 1);
        let site = rng.next_u64_raw() % n as u64;
        let other = mask ^ (1u64 << site);
        let p1 = ens.probability(mask);
        let p2 = ens.probability(other);
        let denom = p1 + p2;
        if denom == 0.0 {
            continue;
        }
        let forward = p1 * (p2 / denom) / n as f64;
        let backward = p2 * (p1 / denom) / n as f64;
        worst = worst.max((forward - backward).abs());
    }
    worst
}

/// Sweep schedule for Glauber chains.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChainSettings {
    pub burn_in: u64,
    pub thin: u64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            thin: 10,
        }
    }
}

/// One heat-bath chain with its own stream.
#[derive(Debug, Clone)]
pub struct GlauberChain {
    signs: Vec<f64>,
    rng: CounterRng,
}

impl GlauberChain {
    /// Chain keyed by (seed, chain domain, context, index); the initial
    /// state is drawn uniformly from the same stream.
    pub fn new(n: usize, seed: u64, context: u64, index: u64) -> Self {
        let mut rng = CounterRng::keyed(&[seed, domain::CHAIN, context, index]);
        let signs = SpinConfiguration::random(n, &mut rng).to_signs();
        Self { signs, rng }
    }

    /// One sequential heat-bath sweep: sites in order, each spin resampled
    /// from its conditional P(s = +1 | rest) = 1/(1 + exp(-2b)).
    pub fn sweep(&mut self, poly: &SpinPolynomial) {
        for s in 0..self.signs.len() {
            let b = poly.local_field(s as u32, &self.signs);
            let p_up = 1.0 / (1.0 + (-2.0 * b).exp());
            self.signs[s] = if self.rng.next_f64() < p_up {
                1.0
            } else {
                -1.0
            };
        }
    }

    pub fn configuration(&self) -> SpinConfiguration {
        SpinConfiguration::from_signs(&self.signs)
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }
}

/// m parallel chains over one realization's exponent, emitting thinned
/// replica sets after burn-in.
pub struct McmcEnsemble<'a> {
    poly: &'a SpinPolynomial,
    chains: Vec<GlauberChain>,
    settings: ChainSettings,
    warmed: bool,
}

impl<'a> McmcEnsemble<'a> {
    pub fn new(
        poly: &'a SpinPolynomial,
        m: usize,
        settings: ChainSettings,
        seed: u64,
        context: u64,
    ) -> Self {
        let n = poly.n_sites() as usize;
        let chains = (0..m)
            .map(|i| GlauberChain::new(n, seed, context, i as u64))
            .collect();
        Self {
            poly,
            chains,
            settings,
            warmed: false,
        }
    }

    /// Next thinned replica set; the first call pays the burn-in.
    pub fn next_set(&mut self) -> ReplicaSet {
        if !self.warmed {
            for _ in 0..self.settings.burn_in {
                for chain in &mut self.chains {
                    chain.sweep(self.poly);
                }
            }
            self.warmed = true;
        }
        for _ in 0..self.settings.thin.max(1) {
            for chain in &mut self.chains {
                chain.sweep(self.poly);
            }
        }
        ReplicaSet::new(self.chains.iter().map(|c| c.configuration()).collect())
            .expect("chains are non-empty")
    }

    pub fn sets(&mut self, count: usize) -> Vec<ReplicaSet> {
        (0..count).map(|_| self.next_set()).collect()
    }
}

/// Replica observables with exact factorized evaluation.
#[derive(Debug, Clone)]
pub enum ReplicaObservable {
    One,
    /// Spin of one replica at one site.
    SiteSpin {
        replica: usize,
        site: u32,
    },
    /// Product of single-site spins across replicas.
    SpinProduct(Vec<(usize, u32)>),
    /// Overlap of two replicas.
    Overlap {
        a: usize,
        b: usize,
    },
}

/// Replica expectation under the product measure: independent replicas
/// share one realization, so factorized observables reduce to products of
/// single-replica passes.
pub fn expectation(ens: &ExactEnsemble, obs: &ReplicaObservable, m: usize) -> Result<f64> {
    let check = |replica: usize| -> Result<()> {
        if replica >= m {
            return Err(Error::InvalidParameter(format!(
                "replica index {replica} with m = {m}"
            )));
        }
        Ok(())
    };
    match obs {
        ReplicaObservable::One => Ok(1.0),
        ReplicaObservable::SiteSpin { replica, site } => {
            check(*replica)?;
            Ok(ens.subset_expectation(&[*site]))
        }
        ReplicaObservable::SpinProduct(factors) => {
            let mut per_replica: std::collections::BTreeMap<usize, Vec<u32>> = Default::default();
            for &(replica, site) in factors {
                check(replica)?;
                per_replica.entry(replica).or_default().push(site);
            }
            let mut value = 1.0;
            for sites in per_replica.values_mut() {
                sites.sort_unstable();
                // s^2 = 1: keep odd-multiplicity sites
                let mut odd: Vec<u32> = Vec::new();
                for &s in sites.iter() {
                    if odd.last() == Some(&s) {
                        odd.pop();
                    } else {
                        odd.push(s);
                    }
                }
                if !odd.is_empty() {
                    value *= ens.subset_expectation(&odd);
                }
            }
            Ok(value)
        }
        ReplicaObservable::Overlap { a, b } => {
            check(*a)?;
            check(*b)?;
            if a == b {
                return Ok(1.0);
            }
            let moments = ens.single_replica_moments();
            let n = moments.n as f64;
            Ok(moments.m.iter().map(|v| v * v).sum::<f64>() / n)
        }
    }
}

/// Disorder statistics of the log partition function at one volume.
#[derive(Debug, Clone, Serialize)]
pub struct FreeEnergyStats {
    pub volume: u64,
    pub n_disorder: usize,
    pub mean_log_z: f64,
    pub var_log_z: f64,
    /// Free-energy density samples, log Z / |V_n|.
    pub mean_density: f64,
    pub se_density: f64,
    pub log_z_samples: Vec<f64>,
}

/// Enumerates n_disorder realizations in parallel and reports log-Z
/// statistics; realization r uses the stream context (volume, r).
pub fn free_energy_stats(
    lat: &Lattice,
    family: DisorderFamily,
    params: &ModelParams,
    budget: u64,
    cap: u64,
    n_disorder: usize,
    seed: u64,
) -> Result<FreeEnergyStats> {
    if n_disorder < 2 {
        return Err(Error::InvalidParameter(
            "need at least 2 disorder draws".into(),
        ));
    }
    let samples: Result<Vec<f64>> = (0..n_disorder)
        .into_par_iter()
        .map(|r| {
            let ctx = realization_context(lat.volume(), r as u64);
            let g = sample_field(family, lat, seed, ctx);
            let xi = PSpinDisorder::new(family, seed, ctx);
            let ens = ExactEnsemble::enumerate(lat, &g, &xi, params, budget, cap)?;
            Ok(ens.log_partition())
        })
        .collect();
    let samples = samples?;
    let volume = lat.volume();
    let densities: Vec<f64> = samples.iter().map(|f| f / volume as f64).collect();
    Ok(FreeEnergyStats {
        volume,
        n_disorder,
        mean_log_z: mean(&samples),
        var_log_z: sample_variance(&samples),
        mean_density: mean(&densities),
        se_density: (sample_variance(&densities) / n_disorder as f64).sqrt(),
        log_z_samples: samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::DEFAULT_PSPIN_BUDGET;
    use crate::numeric::batch_means_std_error;
    use approx::assert_relative_eq;

    fn zero_xi() -> PSpinDisorder {
        PSpinDisorder::new(DisorderFamily::Zero, 0, 0)
    }

    fn enumerate_plain(lat: &Lattice, g: &FieldRealization, params: &ModelParams) -> ExactEnsemble {
        ExactEnsemble::enumerate(lat, g, &zero_xi(), params, DEFAULT_PSPIN_BUDGET, 24).unwrap()
    }

    #[test]
    fn single_site_zero_field_is_fair() {
        let lat = Lattice::build(1, 1).unwrap();
        let params = ModelParams::base(1.0, 1.0, 0.5).unwrap();
        let ens = enumerate_plain(&lat, &FieldRealization::zeros(1), &params);
        assert_relative_eq!(ens.log_partition(), 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(ens.probability(0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(ens.probability(1), 0.5, epsilon = 1e-12);
        ens.validate().unwrap();
    }

    #[test]
    fn single_site_field_gives_tanh() {
        let lat = Lattice::build(1, 1).unwrap();
        let params = ModelParams::base(0.3, 1.0, 0.2).unwrap();
        let g = FieldRealization::from_values(vec![1.3], DisorderFamily::Zero);
        let b = params.field_coupling() * 1.3;
        let ens = enumerate_plain(&lat, &g, &params);
        assert_relative_eq!(ens.log_partition(), (2.0 * b.cosh()).ln(), epsilon = 1e-12);
        let spin = expectation(
            &ens,
            &ReplicaObservable::SiteSpin {
                replica: 0,
                site: 0,
            },
            1,
        )
        .unwrap();
        assert_relative_eq!(spin, b.tanh(), epsilon = 1e-12);
    }

    #[test]
    fn two_site_bond_correlation_is_tanh_beta() {
        // d=1, n=2, zero field: <s_1 s_2> = tanh(beta)
        let lat = Lattice::build(1, 2).unwrap();
        let params = ModelParams::base(0.7, 1.0, 0.5).unwrap();
        let ens = enumerate_plain(&lat, &FieldRealization::zeros(2), &params);
        let corr = ens.subset_expectation(&[0, 1]);
        assert_relative_eq!(corr, 0.7f64.tanh(), epsilon = 1e-12);
        assert_relative_eq!(corr, 0.60437, epsilon = 1e-5);
    }

    #[test]
    fn probabilities_match_direct_per_mask_evaluation() {
        let lat = Lattice::build(1, 10).unwrap();
        let params = ModelParams::base(0.6, 1.0, 0.4).unwrap();
        let g = sample_field(DisorderFamily::Gaussian, &lat, 3, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        ens.validate().unwrap();

        let poly = ens.exponent();
        let mut exps = Vec::with_capacity(1 << 10);
        for mask in 0..(1u64 << 10) {
            let cfg = SpinConfiguration::from_mask(mask, 10);
            exps.push(poly.evaluate(&cfg.to_signs()));
        }
        let log_z = log_sum_exp(&exps);
        assert_relative_eq!(log_z, ens.log_partition(), epsilon = 1e-12);
        for mask in 0..(1usize << 10) {
            assert_relative_eq!(
                ens.probability(mask as u64),
                (exps[mask] - log_z).exp(),
                epsilon = 1e-12,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn zero_field_measure_is_flip_symmetric() {
        let lat = Lattice::build(2, 3).unwrap();
        let params = ModelParams::base(0.5, 1.0, 0.5).unwrap();
        let ens = enumerate_plain(&lat, &FieldRealization::zeros(9), &params);
        let moments = ens.single_replica_moments();
        for &mx in &moments.m {
            assert!(mx.abs() < 1e-12, "site mean {mx} under flip symmetry");
        }
    }

    #[test]
    fn independent_spins_factorize_at_beta_zero() {
        let lat = Lattice::build(1, 6).unwrap();
        let params = ModelParams::base(0.0, 1.0, 0.3).unwrap();
        let g = sample_field(DisorderFamily::Gaussian, &lat, 11, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        let moments = ens.single_replica_moments();
        let b = params.field_coupling();
        for (x, &gx) in g.values().iter().enumerate() {
            assert_relative_eq!(moments.m[x], (b * gx).tanh(), epsilon = 1e-12);
        }
        for x in 0..6 {
            for y in (x + 1)..6 {
                assert_relative_eq!(
                    moments.c[x * 6 + y],
                    moments.m[x] * moments.m[y],
                    epsilon = 1e-12
                );
            }
        }
        // <R_12> = (1/N) sum tanh^2(b g_x)
        let overlap = expectation(&ens, &ReplicaObservable::Overlap { a: 0, b: 1 }, 2).unwrap();
        let closed: f64 = g
            .values()
            .iter()
            .map(|gx| (b * gx).tanh().powi(2))
            .sum::<f64>()
            / 6.0;
        assert_relative_eq!(overlap, closed, epsilon = 1e-12);
    }

    #[test]
    fn replica_products_factorize() {
        let lat = Lattice::build(1, 5).unwrap();
        let params = ModelParams::base(0.4, 1.0, 0.5).unwrap();
        let g = sample_field(DisorderFamily::Uniform, &lat, 17, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        let single = expectation(
            &ens,
            &ReplicaObservable::SiteSpin {
                replica: 0,
                site: 2,
            },
            2,
        )
        .unwrap();
        let product = expectation(
            &ens,
            &ReplicaObservable::SpinProduct(vec![(0, 2), (1, 2)]),
            2,
        )
        .unwrap();
        assert_relative_eq!(product, single * single, epsilon = 1e-12);
        // repeated site within one replica cancels
        let squared = expectation(
            &ens,
            &ReplicaObservable::SpinProduct(vec![(0, 1), (0, 1)]),
            1,
        )
        .unwrap();
        assert_relative_eq!(squared, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn free_energy_monotone_in_beta_without_field() {
        let lat = Lattice::build(1, 8).unwrap();
        let g = FieldRealization::zeros(8);
        let mut last = f64::NEG_INFINITY;
        for i in 0..6 {
            let beta = 0.2 * i as f64;
            let params = ModelParams::base(beta, 1.0, 0.5).unwrap();
            let f = enumerate_plain(&lat, &g, &params).log_partition();
            assert!(f >= last - 1e-12, "log Z decreased when beta grew");
            last = f;
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let lat = Lattice::build(1, 12).unwrap();
        let params = ModelParams::base(0.5, 1.0, 0.5).unwrap();
        let err = ExactEnsemble::enumerate(
            &lat,
            &FieldRealization::zeros(12),
            &zero_xi(),
            &params,
            DEFAULT_PSPIN_BUDGET,
            10,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::CapExceeded {
                volume: 12,
                cap: 10
            }
        ));
    }

    #[test]
    fn quadratic_pass_matches_direct_table_loop() {
        let lat = Lattice::build(1, 6).unwrap();
        let params = ModelParams::base(0.5, 1.0, 0.4).unwrap();
        let g = sample_field(DisorderFamily::Gaussian, &lat, 29, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        let moments = ens.single_replica_moments();
        let (e_ql, e_q2) = ens.quadratic_form_moments(&moments.c, &moments.m);

        let mut d_ql = 0.0;
        let mut d_q2 = 0.0;
        for mask in 0..(1u64 << 6) {
            let signs = SpinConfiguration::from_mask(mask, 6).to_signs();
            let mut q = 0.0;
            for x in 0..6 {
                for y in 0..6 {
                    q += signs[x] * moments.c[x * 6 + y] * signs[y];
                }
            }
            let l: f64 = signs.iter().zip(&moments.m).map(|(s, m)| s * m).sum();
            let p = ens.probability(mask);
            d_ql += p * q * l;
            d_q2 += p * q * q;
        }
        assert_relative_eq!(e_ql, d_ql, epsilon = 1e-10, max_relative = 1e-10);
        assert_relative_eq!(e_q2, d_q2, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn triple_pass_matches_direct_table_loop() {
        let lat = Lattice::build(1, 5).unwrap();
        let params = ModelParams::base(0.6, 1.0, 0.5).unwrap();
        let g = sample_field(DisorderFamily::Rademacher, &lat, 41, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        let t = ens.triple_correlations();
        let mut idx = 0;
        for x in 0..5u32 {
            for y in (x + 1)..5 {
                for z in (y + 1)..5 {
                    assert_relative_eq!(
                        t[idx],
                        ens.subset_expectation(&[x, y, z]),
                        epsilon = 1e-12
                    );
                    idx += 1;
                }
            }
        }
        assert_eq!(idx, t.len());
    }

    #[test]
    fn sampler_reproduces_the_table() {
        let lat = Lattice::build(1, 3).unwrap();
        let params = ModelParams::base(0.5, 1.0, 0.4).unwrap();
        let g = sample_field(DisorderFamily::Gaussian, &lat, 53, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        let sampler = ens.sampler();
        let mut rng = CounterRng::keyed(&[9, domain::TABLE_SAMPLE, 0]);
        let draws = 40_000;
        let mut counts = [0u32; 8];
        for _ in 0..draws {
            let cfg = sampler.draw(&mut rng);
            let mut mask = 0usize;
            for x in 0..3 {
                if cfg.sign(x) > 0.0 {
                    mask |= 1 << x;
                }
            }
            counts[mask] += 1;
        }
        for mask in 0..8u64 {
            let p = ens.probability(mask);
            let freq = counts[mask as usize] as f64 / draws as f64;
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (freq - p).abs() < 4.0 * sd + 1e-9,
                "mask {mask}: frequency {freq} vs probability {p}"
            );
        }
    }

    #[test]
    fn detailed_balance_holds_on_the_audit_fixture() {
        let lat = Lattice::build(1, 8).unwrap();
        let params = ModelParams::base(0.5, 1.0, 0.4).unwrap();
        let g = sample_field(DisorderFamily::Rademacher, &lat, 7, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        let worst = detailed_balance_audit(&ens, 5000, 7);
        assert!(worst <= 1e-12, "detailed balance violation {worst}");
    }

    #[test]
    fn chains_at_zero_coupling_emit_fair_coins() {
        let lat = Lattice::build(1, 6).unwrap();
        let params = ModelParams::base(0.0, 1.0, 0.5).unwrap();
        let g = FieldRealization::zeros(6);
        let poly = crate::hamiltonian::base_polynomial(&lat, &g, &params);
        let mut chain = GlauberChain::new(6, 3, 0, 0);
        let samples = 4000;
        let mut means = vec![0.0f64; 6];
        for _ in 0..samples {
            chain.sweep(&poly);
            for (mx, s) in means.iter_mut().zip(chain.signs()) {
                *mx += s;
            }
        }
        let sd = 1.0 / (samples as f64).sqrt();
        for mx in means.iter().map(|m| m / samples as f64) {
            assert!(mx.abs() < 4.0 * sd, "site mean {mx} vs fair-coin sd {sd}");
        }
    }

    #[test]
    fn mcmc_agrees_with_enumeration_on_the_chain_fixture() {
        let lat = Lattice::build(1, 8).unwrap();
        let params = ModelParams::base(0.5, 1.0, 0.4).unwrap();
        let g = sample_field(DisorderFamily::Rademacher, &lat, 7, 0);
        let ens = enumerate_plain(&lat, &g, &params);
        let moments = ens.single_replica_moments();
        let exact_overlap =
            expectation(&ens, &ReplicaObservable::Overlap { a: 0, b: 1 }, 2).unwrap();

        let mut mcmc = McmcEnsemble::new(ens.exponent(), 2, ChainSettings::default(), 19, 0);
        let sets = mcmc.sets(4000);
        let spin0: Vec<f64> = sets.iter().map(|s| s.configs()[0].sign(0)).collect();
        let bond01: Vec<f64> = sets
            .iter()
            .map(|s| s.configs()[0].sign(0) * s.configs()[0].sign(1))
            .collect();
        let r12: Vec<f64> = sets
            .iter()
            .map(|s| crate::overlaps::overlap(&s.configs()[0], &s.configs()[1]).unwrap())
            .collect();

        for (series, exact, label) in [
            (&spin0, moments.m[0], "site mean"),
            (&bond01, moments.c[1], "bond correlation"),
            (&r12, exact_overlap, "overlap"),
        ] {
            let est = mean(series);
            let se = batch_means_std_error(series, 50).max(1e-4);
            assert!(
                (est - exact).abs() < 4.0 * se,
                "{label}: mcmc {est} vs exact {exact} (se {se})"
            );
        }
    }

    #[test]
    fn free_energy_stats_degenerate_cases() {
        let lat = Lattice::build(1, 4).unwrap();
        let params = ModelParams::base(0.5, 1.0, 0.5).unwrap();
        let stats = free_energy_stats(
            &lat,
            DisorderFamily::Zero,
            &params,
            DEFAULT_PSPIN_BUDGET,
            24,
            20,
            5,
        )
        .unwrap();
        assert!(
            stats.var_log_z < 1e-24,
            "zero disorder must have zero variance"
        );

        // single site, beta = 0, Rademacher: log Z = log 2cosh(mu - h) for
        // both signs of g
        let single = Lattice::build(1, 1).unwrap();
        let params0 = ModelParams::base(0.0, 1.0, 0.4).unwrap();
        let stats0 = free_energy_stats(
            &single,
            DisorderFamily::Rademacher,
            &params0,
            DEFAULT_PSPIN_BUDGET,
            24,
            50,
            11,
        )
        .unwrap();
        let expected = (2.0 * 0.6f64.cosh()).ln();
        assert_relative_eq!(stats0.mean_log_z, expected, epsilon = 1e-12);
        assert!(stats0.var_log_z < 1e-24);
    }

    #[test]
    fn replica_set_validation() {
        let a = SpinConfiguration::all_plus(4);
        let b = SpinConfiguration::all_plus(5);
        assert!(ReplicaSet::new(vec![]).is_err());
        assert!(ReplicaSet::new(vec![a.clone(), b]).is_err());
        let rs = ReplicaSet::new(vec![a.clone(), a]).unwrap();
        assert_eq!(rs.m(), 2);
        let arr = rs.overlap_array().unwrap();
        arr.validate().unwrap();
    }
}
