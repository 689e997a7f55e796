//! Disorder families, field-strength schedules, and the decay condition.
//!
//! Every family is centered with unit variance and matches the moments of a
//! standard Gaussian up to a declared order. Truncated absolute moments
//! E(|g|^j : |g| >= K) come in closed form for the atomic and uniform
//! families and by adaptive quadrature for the Gaussian.

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::numeric::paneled_simpson;
use crate::rng::{domain, CounterRng};
use serde::{Deserialize, Serialize};

const SQRT3: f64 = 1.732_050_807_568_877_2;
/// Quadrature target for continuous-family moments.
const QUAD_TOL: f64 = 1.0e-13;
/// Integration endpoint for the Gaussian; the density at 40 is ~1e-348.
const GAUSS_CUT: f64 = 40.0;
/// Highest moment order the bookkeeping supports (k + 1 for k up to 6).
pub const MAX_MOMENT: u32 = 7;

/// Centered unit-variance disorder distributions.
///
/// `TwoPointAsymmetric` takes the value sqrt(3) with probability 1/4 and
/// -1/sqrt(3) with probability 3/4; its third moment 2/sqrt(3) breaks the
/// Gaussian match at order 3. `Zero` is the degenerate test family; its
/// variance check is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderFamily {
    Rademacher,
    Uniform,
    Gaussian,
    TwoPointAsymmetric,
    Zero,
}

impl DisorderFamily {
    /// All non-degenerate families, in reporting order.
    pub const ALL: [DisorderFamily; 4] = [
        DisorderFamily::Rademacher,
        DisorderFamily::Uniform,
        DisorderFamily::Gaussian,
        DisorderFamily::TwoPointAsymmetric,
    ];

    /// Parses a CLI/config name and verifies the family's declared match
    /// order against its exact moments.
    pub fn from_name(name: &str) -> Result<Self> {
        let fam = match name {
            "rademacher" => DisorderFamily::Rademacher,
            "uniform" => DisorderFamily::Uniform,
            "gaussian" => DisorderFamily::Gaussian,
            "two_point_asymmetric" | "two_point" => DisorderFamily::TwoPointAsymmetric,
            "zero" => DisorderFamily::Zero,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown disorder family `{other}`"
                )))
            }
        };
        fam.verify_match_order()?;
        Ok(fam)
    }

    pub fn name(&self) -> &'static str {
        match self {
            DisorderFamily::Rademacher => "rademacher",
            DisorderFamily::Uniform => "uniform",
            DisorderFamily::Gaussian => "gaussian",
            DisorderFamily::TwoPointAsymmetric => "two_point_asymmetric",
            DisorderFamily::Zero => "zero",
        }
    }

    /// Number of leading moments that agree with the standard Gaussian.
    /// The Gaussian itself is capped at 6 for bookkeeping.
    pub fn match_order(&self) -> u32 {
        match self {
            DisorderFamily::Rademacher => 3,
            DisorderFamily::Uniform => 3,
            DisorderFamily::Gaussian => 6,
            DisorderFamily::TwoPointAsymmetric => 2,
            DisorderFamily::Zero => 0,
        }
    }

    /// Atoms (value, probability) for the discrete families.
    pub fn atoms(&self) -> Option<&'static [(f64, f64)]> {
        const RADEMACHER: [(f64, f64); 2] = [(1.0, 0.5), (-1.0, 0.5)];
        const TWO_POINT: [(f64, f64); 2] = [(SQRT3, 0.25), (-1.0 / SQRT3, 0.75)];
        const ZERO: [(f64, f64); 1] = [(0.0, 1.0)];
        match self {
            DisorderFamily::Rademacher => Some(&RADEMACHER),
            DisorderFamily::TwoPointAsymmetric => Some(&TWO_POINT),
            DisorderFamily::Zero => Some(&ZERO),
            _ => None,
        }
    }

    /// Signed moment E g^j, exact (quadrature only for the Gaussian's even
    /// orders, where the closed form (j-1)!! is used instead).
    pub fn moment(&self, j: u32) -> Result<f64> {
        if j > MAX_MOMENT {
            return Err(Error::UnsupportedMoment(j));
        }
        if let Some(atoms) = self.atoms() {
            return Ok(atoms.iter().map(|&(x, p)| p * x.powi(j as i32)).sum());
        }
        Ok(match self {
            DisorderFamily::Uniform => {
                if j % 2 == 1 {
                    0.0
                } else {
                    SQRT3.powi(j as i32) / (j as f64 + 1.0)
                }
            }
            DisorderFamily::Gaussian => {
                if j % 2 == 1 {
                    0.0
                } else {
                    // (j-1)!! for even j
                    (1..=j).filter(|i| i % 2 == 1).map(|i| i as f64).product()
                }
            }
            _ => unreachable!("atomic families handled above"),
        })
    }

    /// Absolute moment E |g|^j.
    pub fn abs_moment(&self, j: u32) -> Result<f64> {
        self.truncated_abs_moment(j, 0.0)
    }

    /// Truncated absolute moment E(|g|^j : |g| >= K).
    ///
    /// Closed form for atomic and uniform families; adaptive quadrature for
    /// the Gaussian, accurate to well below 1e-9.
    pub fn truncated_abs_moment(&self, j: u32, cutoff: f64) -> Result<f64> {
        if j > MAX_MOMENT {
            return Err(Error::UnsupportedMoment(j));
        }
        if cutoff < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "truncation cutoff must be >= 0, got {cutoff}"
            )));
        }
        if let Some(atoms) = self.atoms() {
            return Ok(atoms
                .iter()
                .filter(|&&(x, _)| x.abs() >= cutoff)
                .map(|&(x, p)| p * x.abs().powi(j as i32))
                .sum());
        }
        Ok(match self {
            DisorderFamily::Uniform => {
                if cutoff >= SQRT3 {
                    0.0
                } else {
                    // folded density 1/sqrt(3) on [0, sqrt(3)]
                    (SQRT3.powi(j as i32 + 1) - cutoff.powi(j as i32 + 1))
                        / ((j as f64 + 1.0) * SQRT3)
                }
            }
            DisorderFamily::Gaussian => {
                if cutoff >= GAUSS_CUT {
                    0.0
                } else {
                    let integrand = |t: f64| t.powi(j as i32) * (-0.5 * t * t).exp();
                    2.0 * paneled_simpson(&integrand, cutoff, GAUSS_CUT, 1.0, QUAD_TOL)
                        / (2.0 * std::f64::consts::PI).sqrt()
                }
            }
            _ => unreachable!("atomic families handled above"),
        })
    }

    /// E f(g), exact for atomic families and by quadrature otherwise.
    /// Workhorse for the integration-by-parts left-hand sides.
    pub fn expect(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.expect_tol(f, QUAD_TOL)
    }

    /// E f(g) to an explicit quadrature tolerance. Nested integrals must
    /// pass an outer tolerance well above the inner quadrature noise or
    /// the adaptive refinement chases that noise instead of converging.
    pub fn expect_tol(&self, f: &dyn Fn(f64) -> f64, tol: f64) -> f64 {
        if let Some(atoms) = self.atoms() {
            return atoms.iter().map(|&(x, p)| p * f(x)).sum();
        }
        match self {
            DisorderFamily::Uniform => {
                paneled_simpson(&|x| f(x), -SQRT3, SQRT3, 0.5, tol) / (2.0 * SQRT3)
            }
            DisorderFamily::Gaussian => {
                let norm = (2.0 * std::f64::consts::PI).sqrt();
                paneled_simpson(
                    &|x| f(x) * (-0.5 * x * x).exp(),
                    -GAUSS_CUT,
                    GAUSS_CUT,
                    1.0,
                    tol,
                ) / norm
            }
            _ => unreachable!("atomic families handled above"),
        }
    }

    /// Checks mean, variance, and the declared Gaussian match order against
    /// exact moments; the order must also be sharp (order + 1 must differ)
    /// for the finite-order families.
    pub fn verify_match_order(&self) -> Result<()> {
        if *self == DisorderFamily::Zero {
            return Ok(()); // degenerate test family; variance check disabled
        }
        let k = self.match_order();
        for j in 1..=k {
            let want = DisorderFamily::Gaussian.moment(j)?;
            let got = self.moment(j)?;
            if (got - want).abs() > 1.0e-12 {
                return Err(Error::InvalidParameter(format!(
                    "family {} declares match order {k} but moment {j} is {got}, Gaussian {want}",
                    self.name()
                )));
            }
        }
        if k < 6 {
            let want = DisorderFamily::Gaussian.moment(k + 1)?;
            let got = self.moment(k + 1)?;
            if (got - want).abs() < 1.0e-12 {
                return Err(Error::InvalidParameter(format!(
                    "family {} declares match order {k} but moment {} also matches",
                    self.name(),
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// One draw from the stream named by `key`.
    pub fn sample_keyed(&self, key: &[u64]) -> f64 {
        let mut rng = CounterRng::keyed(key);
        self.sample(&mut rng)
    }

    /// One draw from an existing stream.
    pub fn sample(&self, rng: &mut CounterRng) -> f64 {
        match self {
            DisorderFamily::Rademacher => {
                if rng.next_u64_raw() & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            DisorderFamily::Uniform => (2.0 * rng.next_f64() - 1.0) * SQRT3,
            DisorderFamily::Gaussian => {
                use rand::Rng;
                rng.sample(rand_distr::StandardNormal)
            }
            DisorderFamily::TwoPointAsymmetric => {
                if rng.next_f64() < 0.25 {
                    SQRT3
                } else {
                    -1.0 / SQRT3
                }
            }
            DisorderFamily::Zero => 0.0,
        }
    }
}

/// One external-field realization g: V_n -> R, drawn site by site from
/// streams keyed by (seed, FIELD domain, context, site).
#[derive(Debug, Clone)]
pub struct FieldRealization {
    values: Vec<f64>,
    family: DisorderFamily,
    seed: u64,
}

impl FieldRealization {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn family(&self) -> DisorderFamily {
        self.family
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// A constant-zero realization (used by zero-coupling fixtures).
    pub fn zeros(volume: u64) -> Self {
        Self {
            values: vec![0.0; volume as usize],
            family: DisorderFamily::Zero,
            seed: 0,
        }
    }

    /// Wraps explicit values; for fixtures and oracle cross-checks.
    pub fn from_values(values: Vec<f64>, family: DisorderFamily) -> Self {
        Self {
            values,
            family,
            seed: 0,
        }
    }
}

/// Draws the site fields for one realization. `context` distinguishes
/// realizations sharing a master seed (e.g. packs (n, r)); sites with equal
/// (seed, context, index) reproduce identical values in any sampling order.
pub fn sample_field(
    fam: DisorderFamily,
    lat: &Lattice,
    seed: u64,
    context: u64,
) -> FieldRealization {
    let values = (0..lat.volume())
        .map(|site| fam.sample_keyed(&[seed, domain::FIELD, context, site]))
        .collect();
    FieldRealization {
        values,
        family: fam,
        seed,
    }
}

/// Field-strength schedule h(n) = mu - |V_n|^(-gamma).
///
/// The decay exponent gamma is not constrained to the regime where the decay
/// condition holds; the checker exists to classify schedules, so failing
/// ones must be constructible.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FieldSchedule {
    mu: f64,
    gamma: f64,
}

impl FieldSchedule {
    pub fn new(mu: f64, gamma: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be > 0, got {mu}")));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be > 0, got {gamma}"
            )));
        }
        Ok(Self { mu, gamma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// mu - h(n) = |V_n|^(-gamma); always positive.
    pub fn field_amplitude(&self, volume: u64) -> f64 {
        (volume as f64).powf(-self.gamma)
    }

    /// h(n) for the given volume.
    pub fn h(&self, volume: u64) -> f64 {
        self.mu - self.field_amplitude(volume)
    }
}

/// Default cutoff for the third-moment clause of the decay condition.
pub const DEFAULT_THIRD_MOMENT_THRESHOLD: f64 = 1.0e-3;

/// Per-volume row of a decay-condition check.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionRow {
    pub n: usize,
    pub volume: u64,
    pub h: f64,
    pub field_amplitude: f64,
    /// (mu - h) * sqrt(|V_n|); must grow for the field to stay relevant.
    pub growth: f64,
    /// (1/|V_n|) sum_x E(|g_x|^3 : |g_x| >= eps/(mu - h)); sites are i.i.d.
    /// so the average equals the single-site value.
    pub third_moment_avg: f64,
}

/// Outcome of a decay-condition check over a volume ladder.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub family: String,
    pub mu: f64,
    pub gamma: f64,
    pub d: usize,
    pub eps: f64,
    pub threshold: f64,
    pub rows: Vec<ConditionRow>,
    pub verdict: String,
    /// 1-based index of the first violated clause when the verdict is FAIL.
    pub failed_clause: Option<u8>,
    pub reason: Option<String>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.verdict == "PASS"
    }
}

/// Classifies a schedule against the three decay clauses on a finite volume
/// ladder: (1) h rises toward mu from below, (2) (mu - h) sqrt(|V_n|) grows,
/// (3) the truncated third-moment average is non-increasing and ends below
/// `threshold`.
pub fn check_perturbation_condition(
    sched: &FieldSchedule,
    fam: DisorderFamily,
    d: usize,
    ns: &[usize],
    eps: f64,
    threshold: f64,
) -> Result<ConditionReport> {
    if d < 1 {
        return Err(Error::InvalidDimension(d));
    }
    if ns.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two volumes to check trends".into(),
        ));
    }
    if !ns.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(
            "volume ladder must be strictly increasing".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be > 0, got {eps}"
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be > 0, got {threshold}"
        )));
    }

    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        if n < 1 {
            return Err(Error::InvalidSide(n));
        }
        let volume_wide = (n as u128).pow(d as u32);
        if volume_wide > u64::MAX as u128 {
            return Err(Error::VolumeOverflow {
                volume: volume_wide,
                capacity: u64::MAX,
            });
        }
        let volume = volume_wide as u64;
        let amplitude = sched.field_amplitude(volume);
        let cutoff = eps / amplitude;
        rows.push(ConditionRow {
            n,
            volume,
            h: sched.h(volume),
            field_amplitude: amplitude,
            growth: amplitude * (volume as f64).sqrt(),
            third_moment_avg: fam.truncated_abs_moment(3, cutoff)?,
        });
    }

    let mut failed_clause = None;
    let mut reason = None;
    // clause 1: h(n) below mu, strictly increasing toward it
    for (i, row) in rows.iter().enumerate() {
        if row.h >= sched.mu() {
            failed_clause = Some(1);
            reason = Some(format!("h({}) = {} is not below mu", row.n, row.h));
            break;
        }
        if i > 0 && row.h <= rows[i - 1].h {
            failed_clause = Some(1);
            reason = Some(format!("h is not increasing at n = {}", row.n));
            break;
        }
    }
    // clause 2: (mu - h) sqrt(|V_n|) strictly increasing
    if failed_clause.is_none() {
        for i in 1..rows.len() {
            if rows[i].growth <= rows[i - 1].growth {
                failed_clause = Some(2);
                reason = Some(format!(
                    "(mu - h) sqrt(|V_n|) does not grow at n = {}: {} -> {}",
                    rows[i].n,
                    rows[i - 1].growth,
                    rows[i].growth
                ));
                break;
            }
        }
    }
    // clause 3: truncated third moments non-increasing, final below threshold
    if failed_clause.is_none() {
        for i in 1..rows.len() {
            if rows[i].third_moment_avg > rows[i - 1].third_moment_avg + 1.0e-12 {
                failed_clause = Some(3);
                reason = Some(format!("truncated third moment rises at n = {}", rows[i].n));
                break;
            }
        }
        if failed_clause.is_none() {
            let last = rows.last().unwrap();
            if last.third_moment_avg > threshold {
                failed_clause = Some(3);
                reason = Some(format!(
                    "final truncated third moment {} exceeds threshold {threshold}",
                    last.third_moment_avg
                ));
            }
        }
    }

    Ok(ConditionReport {
        family: fam.name().to_string(),
        mu: sched.mu(),
        gamma: sched.gamma(),
        d,
        eps,
        threshold,
        rows,
        verdict: if failed_clause.is_none() {
            "PASS"
        } else {
            "FAIL"
        }
        .to_string(),
        failed_clause,
        reason,
    })
}
