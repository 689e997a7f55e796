//! Shared numerical kernels: compensated summation, adaptive quadrature,
//! log-sum-exp, and error estimators for sample means.

/// Neumaier-compensated accumulator. The running error term keeps long
/// reductions accurate to a few ulps independent of length.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum of `xs` with compensation.
pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// log(sum_i exp(e_i)) with max shift; safe for exponents of either sign
/// far beyond the bare exp range.
pub fn log_sum_exp(exponents: &[f64]) -> f64 {
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut acc = KahanSum::new();
    for &e in exponents {
        acc.add((e - m).exp());
    }
    m + acc.value().ln()
}

/// Adaptive Simpson quadrature of `f` on [a, b] to absolute tolerance `tol`.
///
/// Plain recursive bisection with the Richardson error estimate; adequate for
/// the smooth integrands used here (polynomial times a bounded density).
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            return left + right + err / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }

    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Adaptive Simpson over [a, b] split into panels of width at most
/// `max_panel`, each integrated to a proportional share of `tol`.
///
/// The split protects against integrands whose mass sits far from the
/// interval midpoints, where a single coarse estimate of the whole window
/// can terminate the recursion at zero.
pub fn paneled_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, max_panel: f64, tol: f64) -> f64 {
    assert!(max_panel > 0.0 && b >= a);
    let panels = ((b - a) / max_panel).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    let per_panel = tol / panels as f64;
    let mut acc = KahanSum::new();
    for i in 0..panels {
        let lo = a + i as f64 * width;
        let hi = if i + 1 == panels { b } else { lo + width };
        acc.add(adaptive_simpson(f, lo, hi, per_panel));
    }
    acc.value()
}

/// In-place Walsh butterfly with the (a+b, a-b) kernel; output[c] =
/// sum_S input[S] * (-1)^popcount(S & c). Self-inverse up to 1/len.
/// Length must be a power of two.
pub fn walsh_transform(f: &mut [f64]) {
    debug_assert!(f.len().is_power_of_two());
    let size = f.len();
    let mut half = 1;
    while half < size {
        for block in (0..size).step_by(half * 2) {
            for i in block..block + half {
                let (a, b) = (f[i], f[i + half]);
                f[i] = a + b;
                f[i + half] = a - b;
            }
        }
        half *= 2;
    }
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    kahan_sum(xs.iter().cloned()) / xs.len() as f64
}

/// Unbiased sample variance (zero for fewer than two points).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    kahan_sum(xs.iter().map(|x| (x - mu) * (x - mu))) / (n - 1) as f64
}

/// Standard error of the mean for i.i.d. samples.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of a correlated-sequence mean by non-overlapping batch
/// means. Falls back to the i.i.d. estimate when there are too few samples
/// to form `batches` batches.
pub fn batch_means_std_error(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2);
    if xs.len() < 2 * b {
        return std_error(xs);
    }
    let len = xs.len() / b;
    let bm: Vec<f64> = (0..b).map(|i| mean(&xs[i * len..(i + 1) * len])).collect();
    (sample_variance(&bm) / b as f64).sqrt()
}

/// Delete-one jackknife for a statistic of per-realization record vectors.
///
/// `records` holds one vector of term values per realization; `stat` maps the
/// across-realization mean vector to the scalar of interest. Returns
/// `(estimate, std_error)` where the estimate uses all realizations.
pub fn jackknife<F>(records: &[Vec<f64>], stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let r = records.len();
    assert!(r > 0, "jackknife needs at least one realization");
    let width = records[0].len();
    let mut totals = vec![KahanSum::new(); width];
    for rec in records {
        assert_eq!(rec.len(), width, "ragged jackknife records");
        for (t, &v) in totals.iter_mut().zip(rec) {
            t.add(v);
        }
    }
    let totals: Vec<f64> = totals.iter().map(|t| t.value()).collect();
    let full: Vec<f64> = totals.iter().map(|t| t / r as f64).collect();
    let estimate = stat(&full);
    if r < 2 {
        return (estimate, 0.0);
    }
    let mut loo = Vec::with_capacity(r);
    let mut scratch = vec![0.0; width];
    for rec in records {
        for i in 0..width {
            scratch[i] = (totals[i] - rec[i]) / (r - 1) as f64;
        }
        loo.push(stat(&scratch));
    }
    let loo_mean = mean(&loo);
    let ssq = kahan_sum(loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)));
    let se = ((r - 1) as f64 / r as f64 * ssq).sqrt();
    (estimate, se)
}

/// Delete-one jackknife for a statistic evaluated directly on the sample,
/// for quantities that are not functions of coordinate means (for example
/// a sample variance). O(n) stat calls on n-1 points each.
pub fn jackknife_scalar<F>(xs: &[f64], stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    assert!(n >= 2, "scalar jackknife needs at least two points");
    let estimate = stat(xs);
    let mut scratch = Vec::with_capacity(n - 1);
    let mut loo = Vec::with_capacity(n);
    for i in 0..n {
        scratch.clear();
        scratch.extend_from_slice(&xs[..i]);
        scratch.extend_from_slice(&xs[i + 1..]);
        loo.push(stat(&scratch));
    }
    let loo_mean = mean(&loo);
    let ssq = kahan_sum(loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)));
    let se = ((n - 1) as f64 / n as f64 * ssq).sqrt();
    (estimate, se)
}
