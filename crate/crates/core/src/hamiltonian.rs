//! Energy exponents for the perturbed random-field Ising model.
//!
//! The Gibbs weight of a configuration is exp of
//!
//!   beta * sum_<xy> s_x s_y + (mu - h) * sum_x g_x s_x
//!     + c_n * sum_{p=2}^{P_max} alpha_p 2^(-p) H_p(s),
//!
//! H_p(s) = |V_n|^(-(p-1)/2) * sum over all ordered p-tuples of
//! xi_{x1..xp} s_x1 ... s_xp, diagonal tuples included.
//!
//! Because s_x^2 = 1, any such exponent collapses to a multilinear
//! polynomial over site subsets; [`SpinPolynomial`] stores that reduced form
//! and serves O(subsets-at-site) spin-flip deltas to the enumeration and
//! chain kernels.

use crate::disorder::{DisorderFamily, FieldRealization};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::numeric::KahanSum;
use crate::rng::{domain, CounterRng};
use std::collections::BTreeMap;

/// Default cap on the number of coupling terms a rank-p sum may touch.
pub const DEFAULT_PSPIN_BUDGET: u64 = 10_000_000;

/// Model parameters: coupling, field schedule values, and the perturbation
/// envelope.
#[derive(Debug, Clone)]
pub struct ModelParams {
    beta: f64,
    mu: f64,
    h: f64,
    /// alpha[p - 2] is the weight of the rank-p term, |alpha_p| <= 1.
    alpha: Vec<f64>,
    c_n: f64,
    p_max: u32,
}

impl ModelParams {
    /// Full constructor. `alpha` carries the weights for p = 2..=p_max, so
    /// its length must be p_max - 1 (empty for p_max = 1).
    ///
    /// beta = 0 is admitted: the zero-coupling boundary is a reference point
    /// several exactness fixtures depend on.
    pub fn new(beta: f64, mu: f64, h: f64, alpha: Vec<f64>, c_n: f64, p_max: u32) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be >= 0, got {beta}"
            )));
        }
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be > 0, got {mu}")));
        }
        if !(mu - h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mu - h must be > 0, got mu = {mu}, h = {h}"
            )));
        }
        if p_max < 1 {
            return Err(Error::InvalidParameter("p_max must be >= 1".into()));
        }
        if alpha.len() != (p_max as usize).saturating_sub(1) {
            return Err(Error::InvalidParameter(format!(
                "alpha must list p = 2..={p_max}: expected {} weights, got {}",
                p_max - 1,
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !(a.abs() <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "perturbation weights must satisfy |alpha_p| <= 1, got {bad}"
            )));
        }
        if !(c_n >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c_n must be >= 0, got {c_n}"
            )));
        }
        Ok(Self {
            beta,
            mu,
            h,
            alpha,
            c_n,
            p_max,
        })
    }

    /// Unperturbed model (P_max = 1, no rank-p terms).
    pub fn base(beta: f64, mu: f64, h: f64) -> Result<Self> {
        Self::new(beta, mu, h, Vec::new(), 0.0, 1)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Field coupling mu - h; always positive.
    pub fn field_coupling(&self) -> f64 {
        self.mu - self.h
    }

    pub fn alpha(&self, p: u32) -> f64 {
        debug_assert!((2..=self.p_max).contains(&p));
        self.alpha[(p - 2) as usize]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn c_n(&self) -> f64 {
        self.c_n
    }

    pub fn p_max(&self) -> u32 {
        self.p_max
    }

    /// Whether any rank-p term is active.
    pub fn has_perturbation(&self) -> bool {
        self.c_n != 0.0 && self.alpha.iter().any(|a| *a != 0.0)
    }

    /// Tail bound c_n sqrt(|V_n|) 2^(-P_max) on the discarded ranks,
    /// reported alongside perturbed results.
    pub fn truncation_bound(&self, volume: u64) -> f64 {
        self.c_n * (volume as f64).sqrt() * 0.5f64.powi(self.p_max as i32)
    }
}

/// Bit-packed spin configuration; bit 1 encodes s = +1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    words: Vec<u64>,
    len: usize,
}

impl SpinConfiguration {
    pub fn all_plus(len: usize) -> Self {
        let mut cfg = Self {
            words: vec![!0u64; len.div_ceil(64)],
            len,
        };
        cfg.mask_tail();
        cfg
    }

    pub fn all_minus(len: usize) -> Self {
        Self {
            words: vec![0u64; len.div_ceil(64)],
            len,
        }
    }

    /// Packs +/-1 signs; any positive sign sets the bit.
    pub fn from_signs(signs: &[f64]) -> Self {
        let mut cfg = Self::all_minus(signs.len());
        for (i, &s) in signs.iter().enumerate() {
            if s > 0.0 {
                cfg.words[i / 64] |= 1u64 << (i % 64);
            }
        }
        cfg
    }

    /// Unpacks the low `len` bits of a mask (bit 1 = spin up). Supports the
    /// exact-enumeration tables, which index configurations by mask.
    pub fn from_mask(mask: u64, len: usize) -> Self {
        assert!(len <= 64, "mask constructor covers at most 64 sites");
        let mut cfg = Self {
            words: vec![mask; usize::from(len > 0)],
            len,
        };
        cfg.mask_tail();
        cfg
    }

    /// Uniformly random configuration from the given stream.
    pub fn random(len: usize, rng: &mut CounterRng) -> Self {
        let mut cfg = Self {
            words: (0..len.div_ceil(64)).map(|_| rng.next_u64_raw()).collect(),
            len,
        };
        cfg.mask_tail();
        cfg
    }

    fn mask_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Spin at `i` as +/-1.
    pub fn sign(&self, i: usize) -> f64 {
        debug_assert!(i < self.len);
        if self.words[i / 64] >> (i % 64) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn set(&mut self, i: usize, up: bool) {
        debug_assert!(i < self.len);
        if up {
            self.words[i / 64] |= 1u64 << (i % 64);
        } else {
            self.words[i / 64] &= !(1u64 << (i % 64));
        }
    }

    /// Signs as a dense +/-1 vector.
    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.sign(i)).collect()
    }

    /// Number of +1 spins.
    pub fn count_plus(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

/// On-demand rank-p couplings: xi for an ordered tuple (x1..xp) is drawn
/// from the stream keyed by (seed, PSPIN domain, context, p, x1, .., xp),
/// so no tensor is ever stored and any subset can be regenerated in any
/// order.
#[derive(Debug, Clone)]
pub struct PSpinDisorder {
    family: DisorderFamily,
    seed: u64,
    context: u64,
}

impl PSpinDisorder {
    pub fn new(family: DisorderFamily, seed: u64, context: u64) -> Self {
        Self {
            family,
            seed,
            context,
        }
    }

    pub fn family(&self) -> DisorderFamily {
        self.family
    }

    /// Coupling for one ordered tuple.
    pub fn xi(&self, p: u32, tuple: &[u32]) -> f64 {
        debug_assert_eq!(tuple.len(), p as usize);
        let mut key = Vec::with_capacity(4 + tuple.len());
        key.push(self.seed);
        key.push(domain::PSPIN);
        key.push(self.context);
        key.push(p as u64);
        key.extend(tuple.iter().map(|&x| x as u64));
        self.family.sample_keyed(&key)
    }
}

/// Multilinear polynomial over spins: constant + sum over site subsets of
/// coeff * prod_{x in subset} s_x. Terms are unique sorted subsets; a CSR
/// index from sites to terms serves the flip kernels.
#[derive(Debug, Clone)]
pub struct SpinPolynomial {
    n_sites: u32,
    constant: f64,
    coeffs: Vec<f64>,
    term_sites: Vec<u32>,
    term_off: Vec<u32>,
    site_terms: Vec<u32>,
    site_off: Vec<u32>,
}

impl SpinPolynomial {
    /// Builds from accumulated subset coefficients. Zero coefficients are
    /// dropped; subsets must be sorted and duplicate-free.
    pub fn from_terms(n_sites: u32, constant: f64, terms: BTreeMap<Vec<u32>, f64>) -> Self {
        let mut coeffs = Vec::new();
        let mut term_sites = Vec::new();
        let mut term_off = vec![0u32];
        for (sites, coeff) in terms {
            if coeff == 0.0 || sites.is_empty() {
                continue;
            }
            debug_assert!(sites.windows(2).all(|w| w[0] < w[1]));
            debug_assert!(*sites.last().unwrap() < n_sites);
            coeffs.push(coeff);
            term_sites.extend_from_slice(&sites);
            term_off.push(term_sites.len() as u32);
        }

        let mut degree = vec![0u32; n_sites as usize];
        for &s in &term_sites {
            degree[s as usize] += 1;
        }
        let mut site_off = Vec::with_capacity(n_sites as usize + 1);
        site_off.push(0u32);
        for &d in &degree {
            site_off.push(site_off.last().unwrap() + d);
        }
        let mut cursor: Vec<u32> = site_off[..n_sites as usize].to_vec();
        let mut site_terms = vec![0u32; term_sites.len()];
        for t in 0..coeffs.len() {
            for &s in &term_sites[term_off[t] as usize..term_off[t + 1] as usize] {
                site_terms[cursor[s as usize] as usize] = t as u32;
                cursor[s as usize] += 1;
            }
        }

        Self {
            n_sites,
            constant,
            coeffs,
            term_sites,
            term_off,
            site_terms,
            site_off,
        }
    }

    /// Merges several polynomials over the same site set.
    pub fn merged(parts: &[&SpinPolynomial]) -> Self {
        let n_sites = parts.first().map_or(0, |p| p.n_sites);
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let mut constant = 0.0;
        for part in parts {
            assert_eq!(
                part.n_sites, n_sites,
                "merging polynomials over different sites"
            );
            constant += part.constant;
            for t in 0..part.coeffs.len() {
                let sites = part.term_sites
                    [part.term_off[t] as usize..part.term_off[t + 1] as usize]
                    .to_vec();
                *map.entry(sites).or_insert(0.0) += part.coeffs[t];
            }
        }
        Self::from_terms(n_sites, constant, map)
    }

    pub fn n_sites(&self) -> u32 {
        self.n_sites
    }

    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Full evaluation with compensated summation.
    pub fn evaluate(&self, signs: &[f64]) -> f64 {
        debug_assert_eq!(signs.len(), self.n_sites as usize);
        let mut acc = KahanSum::new();
        acc.add(self.constant);
        for t in 0..self.coeffs.len() {
            let mut prod = self.coeffs[t];
            for &s in &self.term_sites[self.term_off[t] as usize..self.term_off[t + 1] as usize] {
                prod *= signs[s as usize];
            }
            acc.add(prod);
        }
        acc.value()
    }

    /// Coefficient of s_site in the exponent given the other spins:
    /// sum over terms containing the site of coeff * prod of the remaining
    /// signs. Drives both heat-bath conditionals and flip deltas.
    #[inline]
    pub fn local_field(&self, site: u32, signs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &t in &self.site_terms
            [self.site_off[site as usize] as usize..self.site_off[site as usize + 1] as usize]
        {
            let mut prod = self.coeffs[t as usize];
            for &s in &self.term_sites
                [self.term_off[t as usize] as usize..self.term_off[t as usize + 1] as usize]
            {
                if s != site {
                    prod *= signs[s as usize];
                }
            }
            acc += prod;
        }
        acc
    }

    /// Exponent change when flipping `site` out of the state `signs`.
    #[inline]
    pub fn flip_delta(&self, site: u32, signs: &[f64]) -> f64 {
        -2.0 * signs[site as usize] * self.local_field(site, signs)
    }

    /// Values at every configuration, indexed by spin mask (set bit means
    /// +1). The coefficients are the character spectrum, so one transform
    /// evaluates all 2^n configurations at once.
    pub fn table_of_values(&self) -> Vec<f64> {
        let n = self.n_sites as usize;
        assert!(n < 31, "dense value table needs under 31 sites, got {n}");
        let size = 1usize << n;
        let mut a = vec![0.0f64; size];
        a[0] = self.constant;
        for t in 0..self.coeffs.len() {
            let sites = &self.term_sites[self.term_off[t] as usize..self.term_off[t + 1] as usize];
            let mut mask = 0usize;
            for &s in sites {
                mask |= 1usize << s;
            }
            // chi_S picks up (-1)^|S| relative to the (+,-) kernel
            let sign = if sites.len() % 2 == 1 { -1.0 } else { 1.0 };
            a[mask] += sign * self.coeffs[t];
        }
        crate::numeric::walsh_transform(&mut a);
        a
    }
}

/// Base exponent beta sum_<xy> s_x s_y + (mu - h) sum_x g_x s_x, computed
/// directly from the lattice (the reference route; enumeration goes through
/// the polynomial form instead).
pub fn base_exponent(
    sigma: &SpinConfiguration,
    lat: &Lattice,
    g: &FieldRealization,
    params: &ModelParams,
) -> Result<f64> {
    let n = lat.volume() as usize;
    if sigma.len() != n || g.values().len() != n {
        return Err(Error::SizeMismatch(format!(
            "lattice has {n} sites, configuration {} and field {}",
            sigma.len(),
            g.values().len()
        )));
    }
    let mut bond = KahanSum::new();
    for &(x, y) in lat.edges() {
        bond.add(sigma.sign(x as usize) * sigma.sign(y as usize));
    }
    let mut field = KahanSum::new();
    for (x, &gx) in g.values().iter().enumerate() {
        field.add(gx * sigma.sign(x));
    }
    Ok(params.beta() * bond.value() + params.field_coupling() * field.value())
}

/// Normalized rank-p sum H_p(s) = |V_n|^(-(p-1)/2) sum_(x1..xp) xi s..s by
/// direct summation over all ordered tuples, within `budget` terms.
pub fn pspin_term(
    sigma: &SpinConfiguration,
    lat: &Lattice,
    xi: &PSpinDisorder,
    p: u32,
    budget: u64,
) -> Result<f64> {
    if p < 1 {
        return Err(Error::InvalidParameter("p must be >= 1".into()));
    }
    let n = lat.volume();
    if sigma.len() as u64 != n {
        return Err(Error::SizeMismatch(format!(
            "lattice has {n} sites, configuration {}",
            sigma.len()
        )));
    }
    let needed = (n as u128).pow(p);
    if needed > budget as u128 {
        return Err(Error::BudgetExceeded { p, needed, budget });
    }

    let signs: Vec<f64> = sigma.to_signs();
    let mut tuple = vec![0u32; p as usize];
    let mut acc = KahanSum::new();
    let mut max_abs_xi = 0.0f64;
    loop {
        let coupling = xi.xi(p, &tuple);
        max_abs_xi = max_abs_xi.max(coupling.abs());
        let mut prod = coupling;
        for &x in &tuple {
            prod *= signs[x as usize];
        }
        acc.add(prod);

        // odometer over V_n^p
        let mut k = p as usize;
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            if (tuple[k] as u64) + 1 < n {
                tuple[k] += 1;
                for t in tuple.iter_mut().skip(k + 1) {
                    *t = 0;
                }
                break;
            }
            if k == 0 {
                tuple.clear();
                break;
            }
        }
        if tuple.is_empty() {
            break;
        }
    }

    let value = acc.value() * (n as f64).powf(-((p as f64 - 1.0) / 2.0));
    // deterministic worst case: every coupling aligned with the spin product
    debug_assert!(value.abs() <= (n as f64).powf((p as f64 + 1.0) / 2.0) * max_abs_xi + 1e-9);
    Ok(value)
}

/// Full perturbed exponent: base plus c_n sum_p alpha_p 2^(-p) H_p.
pub fn perturbed_exponent(
    sigma: &SpinConfiguration,
    lat: &Lattice,
    g: &FieldRealization,
    xi: &PSpinDisorder,
    params: &ModelParams,
    budget: u64,
) -> Result<f64> {
    let mut total = base_exponent(sigma, lat, g, params)?;
    if params.has_perturbation() {
        for p in 2..=params.p_max() {
            let a = params.alpha(p);
            if a == 0.0 {
                continue;
            }
            total +=
                params.c_n() * a * 0.5f64.powi(p as i32) * pspin_term(sigma, lat, xi, p, budget)?;
        }
    }
    Ok(total)
}

/// Reduced polynomial of the base exponent.
pub fn base_polynomial(
    lat: &Lattice,
    g: &FieldRealization,
    params: &ModelParams,
) -> SpinPolynomial {
    let mut terms: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    if params.beta() != 0.0 {
        for &(x, y) in lat.edges() {
            *terms.entry(vec![x, y]).or_insert(0.0) += params.beta();
        }
    }
    let coupling = params.field_coupling();
    for (x, &gx) in g.values().iter().enumerate() {
        if gx != 0.0 {
            *terms.entry(vec![x as u32]).or_insert(0.0) += coupling * gx;
        }
    }
    SpinPolynomial::from_terms(lat.volume() as u32, 0.0, terms)
}

/// Folds the rank-p tuple sum, scaled by `scale`, into subset terms via
/// odd-multiplicity reduction. Tuples whose sites all repeat an even number
/// of times contribute to the constant.
fn accumulate_rank_terms(
    lat: &Lattice,
    xi: &PSpinDisorder,
    p: u32,
    scale: f64,
    budget: u64,
    terms: &mut BTreeMap<Vec<u32>, f64>,
    constant: &mut KahanSum,
) -> Result<()> {
    let n = lat.volume();
    let needed = (n as u128).pow(p);
    if needed > budget as u128 {
        return Err(Error::BudgetExceeded { p, needed, budget });
    }
    let mut tuple = vec![0u32; p as usize];
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    loop {
        let coupling = xi.xi(p, &tuple);
        counts.clear();
        for &x in &tuple {
            *counts.entry(x).or_insert(0) += 1;
        }
        let odd: Vec<u32> = counts
            .iter()
            .filter(|&(_, c)| c % 2 == 1)
            .map(|(&x, _)| x)
            .collect();
        if odd.is_empty() {
            constant.add(scale * coupling);
        } else {
            *terms.entry(odd).or_insert(0.0) += scale * coupling;
        }

        let mut k = p as usize;
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            if (tuple[k] as u64) + 1 < n {
                tuple[k] += 1;
                for t in tuple.iter_mut().skip(k + 1) {
                    *t = 0;
                }
                break;
            }
            if k == 0 {
                tuple.clear();
                break;
            }
        }
        if tuple.is_empty() {
            break;
        }
    }
    Ok(())
}

/// Reduced polynomial of scale * sum over ordered p-tuples of xi s..s.
/// The caller chooses the normalization through `scale`.
pub fn rank_sum_polynomial(
    lat: &Lattice,
    xi: &PSpinDisorder,
    p: u32,
    scale: f64,
    budget: u64,
) -> Result<SpinPolynomial> {
    let mut terms = BTreeMap::new();
    let mut constant = KahanSum::new();
    accumulate_rank_terms(lat, xi, p, scale, budget, &mut terms, &mut constant)?;
    Ok(SpinPolynomial::from_terms(
        lat.volume() as u32,
        constant.value(),
        terms,
    ))
}

/// Reduced polynomial of the rank-p perturbation, all active p folded in
/// with their c_n alpha_p 2^(-p) |V_n|^(-(p-1)/2) prefactors.
pub fn perturbation_polynomial(
    lat: &Lattice,
    xi: &PSpinDisorder,
    params: &ModelParams,
    budget: u64,
) -> Result<SpinPolynomial> {
    let n = lat.volume();
    let mut terms: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut constant = KahanSum::new();
    for p in 2..=params.p_max() {
        let a = params.alpha(p);
        if a == 0.0 || params.c_n() == 0.0 {
            continue;
        }
        let scale =
            params.c_n() * a * 0.5f64.powi(p as i32) * (n as f64).powf(-((p as f64 - 1.0) / 2.0));
        accumulate_rank_terms(lat, xi, p, scale, budget, &mut terms, &mut constant)?;
    }
    Ok(SpinPolynomial::from_terms(
        lat.volume() as u32,
        constant.value(),
        terms,
    ))
}

/// Reduced polynomial of the full exponent for the given realization.
pub fn exponent_polynomial(
    lat: &Lattice,
    g: &FieldRealization,
    xi: &PSpinDisorder,
    params: &ModelParams,
    budget: u64,
) -> Result<SpinPolynomial> {
    let base = base_polynomial(lat, g, params);
    if !params.has_perturbation() {
        return Ok(base);
    }
    let pert = perturbation_polynomial(lat, xi, params, budget)?;
    Ok(SpinPolynomial::merged(&[&base, &pert]))
}
