//! Replica overlaps, magnetization, and the disorder-energy observables.
//!
//! The overlap of two configurations is the normalized site-wise dot
//! product R = (1/|V_n|) sum_x s_a(x) s_b(x); on bit-packed words this is
//! 1 - 2 popcount(a xor b)/|V_n|. The Delta observables pair a
//! configuration with the field (rank 1) or the rank-p couplings.

use crate::disorder::FieldRealization;
use crate::error::{Error, Result};
use crate::hamiltonian::{
    pspin_term, rank_sum_polynomial, PSpinDisorder, SpinConfiguration, SpinPolynomial,
};
use crate::lattice::Lattice;
use crate::numeric::KahanSum;
use std::collections::BTreeMap;

/// Symmetric array of pairwise overlaps between m replicas.
#[derive(Debug, Clone)]
pub struct OverlapArray {
    m: usize,
    values: Vec<f64>,
}

impl OverlapArray {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < self.m && b < self.m);
        self.values[a * self.m + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Structural check: symmetric, unit diagonal, entries in [-1, 1].
    pub fn validate(&self) -> Result<()> {
        for a in 0..self.m {
            if (self.get(a, a) - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "overlap array diagonal entry ({a},{a}) is {}",
                    self.get(a, a)
                )));
            }
            for b in 0..a {
                let v = self.get(a, b);
                if (v - self.get(b, a)).abs() > 1e-12 || v.abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "overlap array entry ({a},{b}) = {v} breaks symmetry or range"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Overlap of two equal-length configurations via xor and popcount.
pub fn overlap(a: &SpinConfiguration, b: &SpinConfiguration) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(format!(
            "overlap of configurations with {} and {} sites",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::SizeMismatch(
            "overlap of empty configurations".into(),
        ));
    }
    let disagreements: u32 = a
        .words()
        .iter()
        .zip(b.words())
        .map(|(wa, wb)| (wa ^ wb).count_ones())
        .sum();
    Ok(1.0 - 2.0 * disagreements as f64 / a.len() as f64)
}

/// All pairwise overlaps of a replica family.
pub fn overlap_array(configs: &[SpinConfiguration]) -> Result<OverlapArray> {
    let m = configs.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "overlap array needs at least 2 replicas, got {m}"
        )));
    }
    let mut values = vec![1.0; m * m];
    for a in 0..m {
        for b in 0..a {
            let r = overlap(&configs[a], &configs[b])?;
            values[a * m + b] = r;
            values[b * m + a] = r;
        }
    }
    Ok(OverlapArray { m, values })
}

/// Mean spin (1/|V_n|) sum_x s_x; equals the overlap with the all-plus
/// configuration.
pub fn magnetization(sigma: &SpinConfiguration) -> f64 {
    debug_assert!(!sigma.is_empty());
    let n = sigma.len() as f64;
    (2.0 * sigma.count_plus() as f64 - n) / n
}

/// Field-energy density Delta = (1/|V_n|) sum_x g_x s_x.
pub fn delta_n(sigma: &SpinConfiguration, g: &FieldRealization) -> Result<f64> {
    if sigma.len() != g.values().len() {
        return Err(Error::SizeMismatch(format!(
            "delta over {} spins with {} field values",
            sigma.len(),
            g.values().len()
        )));
    }
    let mut acc = KahanSum::new();
    for (x, &gx) in g.values().iter().enumerate() {
        acc.add(gx * sigma.sign(x));
    }
    let value = acc.value() / sigma.len() as f64;
    assert!(
        value.abs() <= g.max_abs() + 1e-12,
        "field-energy density {value} exceeds the max field amplitude"
    );
    Ok(value)
}

/// Rank-p disorder-energy density |V_n|^(-(p+1)/2) sum over ordered
/// p-tuples of xi s..s; the rank-1 case is delta_n with g in place of xi.
pub fn delta_np(
    sigma: &SpinConfiguration,
    lat: &Lattice,
    xi: &PSpinDisorder,
    p: u32,
    budget: u64,
) -> Result<f64> {
    if p < 2 {
        return Err(Error::InvalidParameter(
            "rank-p disorder energy needs p >= 2; rank 1 is the field version".into(),
        ));
    }
    // pspin_term carries |V_n|^(-(p-1)/2); one more 1/|V_n| completes it
    Ok(pspin_term(sigma, lat, xi, p, budget)? / lat.volume() as f64)
}

/// Delta as a polynomial in the spins, for incremental tracking during
/// enumeration. Rank 1 variant over the field.
pub fn delta_field_polynomial(g: &FieldRealization) -> SpinPolynomial {
    let n = g.values().len();
    let mut terms: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (x, &gx) in g.values().iter().enumerate() {
        if gx != 0.0 {
            terms.insert(vec![x as u32], gx / n as f64);
        }
    }
    SpinPolynomial::from_terms(n as u32, 0.0, terms)
}

/// Delta as a polynomial in the spins, rank p >= 2 over the couplings.
pub fn delta_rank_polynomial(
    lat: &Lattice,
    xi: &PSpinDisorder,
    p: u32,
    budget: u64,
) -> Result<SpinPolynomial> {
    if p < 2 {
        return Err(Error::InvalidParameter(
            "rank-p disorder energy needs p >= 2; rank 1 is the field version".into(),
        ));
    }
    let n = lat.volume() as f64;
    rank_sum_polynomial(lat, xi, p, n.powf(-((p as f64 + 1.0) / 2.0)), budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::DisorderFamily;
    use crate::rng::CounterRng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(signs: &[f64]) -> SpinConfiguration {
        SpinConfiguration::from_signs(signs)
    }

    #[test]
    fn overlap_of_identical_and_opposite() {
        let a = cfg(&[1.0, -1.0, 1.0, 1.0]);
        let mut b = a.clone();
        assert_relative_eq!(overlap(&a, &b).unwrap(), 1.0);
        for i in 0..4 {
            b.flip(i);
        }
        assert_relative_eq!(overlap(&a, &b).unwrap(), -1.0);
    }

    #[test]
    fn overlap_half_agreement_is_zero() {
        let a = cfg(&[1.0, 1.0, -1.0, -1.0]);
        let b = cfg(&[1.0, -1.0, 1.0, -1.0]);
        assert_relative_eq!(overlap(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn overlap_rejects_mismatched_lengths() {
        let a = cfg(&[1.0, 1.0]);
        let b = cfg(&[1.0, 1.0, 1.0]);
        assert!(overlap(&a, &b).is_err());
    }

    /// Word kernel against the naive site loop on many random pairs.
    #[test]
    fn popcount_kernel_matches_naive_sum() {
        let mut rng = CounterRng::keyed(&[424]);
        for trial in 0..10_000u32 {
            let len = (trial % 64 + 1) as usize;
            let a = SpinConfiguration::random(len, &mut rng);
            let b = SpinConfiguration::random(len, &mut rng);
            let naive: f64 = (0..len).map(|i| a.sign(i) * b.sign(i)).sum::<f64>() / len as f64;
            assert_relative_eq!(overlap(&a, &b).unwrap(), naive, epsilon = 1e-12);
        }
    }

    #[test]
    fn overlap_array_matches_double_loop_oracle() {
        let mut rng = CounterRng::keyed(&[77, 1]);
        let configs: Vec<SpinConfiguration> = (0..3)
            .map(|_| SpinConfiguration::random(4, &mut rng))
            .collect();
        let arr = overlap_array(&configs).unwrap();
        arr.validate().unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mut naive = 0.0;
                for x in 0..4 {
                    naive += configs[a].sign(x) * configs[b].sign(x);
                }
                naive /= 4.0;
                assert_relative_eq!(arr.get(a, b), naive, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identical_replicas_give_all_ones() {
        let a = cfg(&[1.0, -1.0, 1.0]);
        let arr = overlap_array(&[a.clone(), a]).unwrap();
        assert_eq!(arr.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn replica_label_permutation_permutes_the_array() {
        let mut rng = CounterRng::keyed(&[11]);
        let c: Vec<SpinConfiguration> = (0..4)
            .map(|_| SpinConfiguration::random(6, &mut rng))
            .collect();
        let arr = overlap_array(&c).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<SpinConfiguration> = perm.iter().map(|&i| c[i].clone()).collect();
        let arr_p = overlap_array(&permuted).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert_relative_eq!(arr_p.get(a, b), arr.get(perm[a], perm[b]));
            }
        }
    }

    #[test]
    fn magnetization_basics() {
        assert_relative_eq!(magnetization(&SpinConfiguration::all_plus(5)), 1.0);
        assert_relative_eq!(magnetization(&cfg(&[1.0, -1.0, 1.0, -1.0])), 0.0);
        let mut rng = CounterRng::keyed(&[2]);
        let s = SpinConfiguration::random(9, &mut rng);
        let ones = SpinConfiguration::all_plus(9);
        assert_relative_eq!(
            magnetization(&s),
            overlap(&s, &ones).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn delta_field_arithmetic() {
        let g = FieldRealization::from_values(vec![1.0, -1.0, 0.5], DisorderFamily::Zero);
        let d = delta_n(&SpinConfiguration::all_plus(3), &g).unwrap();
        assert_relative_eq!(d, 0.5 / 3.0, epsilon = 1e-12);
        let zero = FieldRealization::zeros(3);
        assert_relative_eq!(
            delta_n(&SpinConfiguration::all_plus(3), &zero).unwrap(),
            0.0
        );
    }

    #[test]
    fn delta_rank_two_matches_naive_oracle() {
        let lat = Lattice::build(1, 3).unwrap();
        let xi = PSpinDisorder::new(DisorderFamily::Gaussian, 99, 0);
        let mut rng = CounterRng::keyed(&[5]);
        let sigma = SpinConfiguration::random(3, &mut rng);
        let signs = sigma.to_signs();
        let mut naive = 0.0;
        for x in 0..3u32 {
            for y in 0..3u32 {
                naive += xi.xi(2, &[x, y]) * signs[x as usize] * signs[y as usize];
            }
        }
        naive /= 27f64.sqrt(); // |V_n|^(-(p+1)/2) at p = 2
        let got = delta_np(&sigma, &lat, &xi, 2, 1_000_000).unwrap();
        assert_relative_eq!(got, naive, epsilon = 1e-12);
    }

    #[test]
    fn delta_polynomials_agree_with_direct_values() {
        let lat = Lattice::build(1, 4).unwrap();
        let g = FieldRealization::from_values(vec![0.3, -1.2, 0.8, 0.1], DisorderFamily::Zero);
        let xi = PSpinDisorder::new(DisorderFamily::Uniform, 6, 0);
        let pf = delta_field_polynomial(&g);
        let pr = delta_rank_polynomial(&lat, &xi, 2, 1_000_000).unwrap();
        let mut rng = CounterRng::keyed(&[8]);
        for _ in 0..10 {
            let sigma = SpinConfiguration::random(4, &mut rng);
            let signs = sigma.to_signs();
            assert_relative_eq!(
                pf.evaluate(&signs),
                delta_n(&sigma, &g).unwrap(),
                epsilon = 1e-12
            );
            assert_relative_eq!(
                pr.evaluate(&signs),
                delta_np(&sigma, &lat, &xi, 2, 1_000_000).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_bounded(bits_a in prop::collection::vec(any::<bool>(), 1..80),
                                            bits_b in prop::collection::vec(any::<bool>(), 1..80)) {
            let len = bits_a.len().min(bits_b.len());
            let signs = |bits: &[bool]| -> Vec<f64> {
                bits[..len].iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
            };
            let a = SpinConfiguration::from_signs(&signs(&bits_a));
            let b = SpinConfiguration::from_signs(&signs(&bits_b));
            let rab = overlap(&a, &b).unwrap();
            let rba = overlap(&b, &a).unwrap();
            prop_assert!((rab - rba).abs() < 1e-15);
            prop_assert!(rab.abs() <= 1.0 + 1e-15);
            prop_assert!((overlap(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        }
    }
}
