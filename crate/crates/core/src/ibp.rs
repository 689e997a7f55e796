//! Certification of the approximate integration-by-parts inequalities for
//! moment-matched variables: the univariate gap |E y f(y) - E f'(y)| and
//! the bivariate gap |E x y f(x,y) - E d^2f/dxdy| against their explicit
//! bounds built from derivative sup-norms and truncated absolute moments.
//!
//! The shipped test functions are trigonometric, so every sup-norm is a
//! closed-form power of the frequency and no norm estimation enters the
//! certified bounds.

use crate::disorder::DisorderFamily;
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Quadrature tolerance for gap left-hand sides.
const LHS_TOL: f64 = 1e-12;
/// Outer tolerance for nested bivariate quadrature; must dominate the
/// inner quadrature noise.
const OUTER_TOL: f64 = 1e-10;
/// Slack added to the right-hand side in the holds check.
const HOLD_TOL: f64 = 1e-9;

fn factorial(n: u32) -> f64 {
    (1..=n as u64).product::<u64>() as f64
}

/// Smooth test function of one variable with exact derivatives and
/// closed-form derivative sup-norms.
#[derive(Clone)]
pub struct TestFunction1D {
    label: String,
    max_order: u32,
    // j-th derivative at y; j = 0 is the function itself
    deriv: Arc<dyn Fn(u32, f64) -> f64 + Send + Sync>,
    sup: Arc<dyn Fn(u32) -> f64 + Send + Sync>,
}

impl TestFunction1D {
    pub fn new(
        label: impl Into<String>,
        max_order: u32,
        deriv: impl Fn(u32, f64) -> f64 + Send + Sync + 'static,
        sup: impl Fn(u32) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            max_order,
            deriv: Arc::new(deriv),
            sup: Arc::new(sup),
        }
    }

    /// f(y) = sin(a y); the j-th derivative is a^j sin(a y + j pi/2) with
    /// sup-norm a^j.
    pub fn sine(a: f64) -> Self {
        assert!(a > 0.0);
        Self::new(
            format!("sin({a}y)"),
            8,
            move |j, y| a.powi(j as i32) * (a * y + j as f64 * std::f64::consts::FRAC_PI_2).sin(),
            move |j| a.powi(j as i32),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.deriv)(0, y)
    }

    pub fn derivative(&self, j: u32, y: f64) -> f64 {
        assert!(j <= self.max_order, "derivative order {j} not tracked");
        (self.deriv)(j, y)
    }

    pub fn sup_norm(&self, j: u32) -> f64 {
        assert!(j <= self.max_order);
        (self.sup)(j)
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }
}

/// The univariate grid functions: sin(a y) for a in {1/2, 1, 2}.
pub fn sine_library() -> Vec<TestFunction1D> {
    [0.5, 1.0, 2.0]
        .iter()
        .map(|&a| TestFunction1D::sine(a))
        .collect()
}

/// Smooth test function of two variables with exact mixed partials; an
/// optional product factorization u(x) v(y) enables separable evaluation
/// of the gap with one-dimensional integrals only.
#[derive(Clone)]
pub struct TestFunction2D {
    label: String,
    max_order: u32,
    // partial d^{i+j} f / dx^i dy^j
    deriv: Arc<dyn Fn(u32, u32, f64, f64) -> f64 + Send + Sync>,
    sup: Arc<dyn Fn(u32, u32) -> f64 + Send + Sync>,
    product: Option<(TestFunction1D, TestFunction1D)>,
}

impl TestFunction2D {
    pub fn new(
        label: impl Into<String>,
        max_order: u32,
        deriv: impl Fn(u32, u32, f64, f64) -> f64 + Send + Sync + 'static,
        sup: impl Fn(u32, u32) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            max_order,
            deriv: Arc::new(deriv),
            sup: Arc::new(sup),
            product: None,
        }
    }

    /// f(x, y) = sin(a x) sin(b y) with sup-norms a^i b^j.
    pub fn product_sine(a: f64, b: f64) -> Self {
        assert!(a > 0.0 && b > 0.0);
        let u = TestFunction1D::sine(a);
        let v = TestFunction1D::sine(b);
        let (ud, vd) = (u.clone(), v.clone());
        let mut f = Self::new(
            format!("sin({a}x)sin({b}y)"),
            8,
            move |i, j, x, y| ud.derivative(i, x) * vd.derivative(j, y),
            move |i, j| a.powi(i as i32) * b.powi(j as i32),
        );
        f.product = Some((u, v));
        f
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.deriv)(0, 0, x, y)
    }

    pub fn partial(&self, i: u32, j: u32, x: f64, y: f64) -> f64 {
        assert!(i + j <= self.max_order, "partial ({i},{j}) not tracked");
        (self.deriv)(i, j, x, y)
    }

    pub fn sup_norm(&self, i: u32, j: u32) -> f64 {
        assert!(i + j <= self.max_order);
        (self.sup)(i, j)
    }
}

/// The bivariate grid functions: sin(a x) sin(a y) for a in {1/2, 1, 2}.
pub fn product_sine_library() -> Vec<TestFunction2D> {
    [0.5, 1.0, 2.0]
        .iter()
        .map(|&a| TestFunction2D::product_sine(a, a))
        .collect()
}

/// One certified inequality: the measured gap, the assembled bound, and
/// the inputs that produced them.
#[derive(Debug, Clone, Serialize)]
pub struct IbpBoundReport {
    pub kind: String,
    pub family_x: String,
    pub family_y: Option<String>,
    pub function: String,
    pub k: u32,
    pub cutoff_1: f64,
    pub cutoff_2: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn check_order(fam: DisorderFamily, k: u32) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "the inequalities need k >= 2, got {k}"
        )));
    }
    if fam.match_order() < k {
        return Err(Error::MatchOrderTooSmall {
            family: fam.name().into(),
            match_order: fam.match_order(),
            k,
        });
    }
    Ok(())
}

fn check_cutoff(label: &str, value: f64) -> Result<()> {
    if !(value >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "{label} must be >= 1, got {value}"
        )));
    }
    Ok(())
}

fn finite_norm(label: &str, value: f64) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sup-norm {label} must be finite and >= 0, got {value}"
        )));
    }
    Ok(value)
}

/// Gap and bound for one variable:
/// |E y f(y) - E f'(y)|
///   <= 2 (|f^(k-1)| + |f^(k)|) / (k-1)! * E(|y|^k : |y| >= K)
///    + (k+1) K / k! * |f^(k)| * E|y|^k.
pub fn univariate_gap(
    fam: DisorderFamily,
    f: &TestFunction1D,
    k: u32,
    cutoff: f64,
) -> Result<IbpBoundReport> {
    check_order(fam, k)?;
    check_cutoff("K", cutoff)?;
    if f.max_order() < k {
        return Err(Error::InvalidParameter(format!(
            "function {} tracks derivatives to order {}, need {k}",
            f.label(),
            f.max_order()
        )));
    }
    let norm_km1 = finite_norm("f^(k-1)", f.sup_norm(k - 1))?;
    let norm_k = finite_norm("f^(k)", f.sup_norm(k))?;

    let lhs = (fam.expect_tol(&|y| y * f.eval(y), LHS_TOL)
        - fam.expect_tol(&|y| f.derivative(1, y), LHS_TOL))
    .abs();
    let tail = fam.truncated_abs_moment(k, cutoff)?;
    let moment = fam.abs_moment(k)?;
    let rhs = 2.0 * (norm_km1 + norm_k) / factorial(k - 1) * tail
        + (k + 1) as f64 * cutoff / factorial(k) * norm_k * moment;
    debug_assert!(rhs >= 0.0);
    Ok(IbpBoundReport {
        kind: "univariate".into(),
        family_x: fam.name().into(),
        family_y: None,
        function: f.label().into(),
        k,
        cutoff_1: cutoff,
        cutoff_2: None,
        lhs,
        rhs,
        holds: lhs <= rhs + HOLD_TOL,
    })
}

/// Gap for two independent variables, with the five-term bound assembled
/// from the four named partial sup-norms and truncated moments.
pub fn bivariate_gap(
    fam_x: DisorderFamily,
    fam_y: DisorderFamily,
    f: &TestFunction2D,
    k: u32,
    cutoff_1: f64,
    cutoff_2: f64,
) -> Result<IbpBoundReport> {
    check_order(fam_x, k)?;
    check_order(fam_y, k)?;
    check_cutoff("K1", cutoff_1)?;
    check_cutoff("K2", cutoff_2)?;
    if f.max_order < k + 1 {
        return Err(Error::InvalidParameter(format!(
            "function {} tracks partials to order {}, need {}",
            f.label(),
            f.max_order,
            k + 1
        )));
    }
    // the four norms appearing in the bound
    let n_y_km1 = finite_norm("d^(k-1)f/dy^(k-1)", f.sup_norm(0, k - 1))?;
    let n_y_k = finite_norm("d^k f/dy^k", f.sup_norm(0, k))?;
    let n_xy_k = finite_norm("d^k f/dx^(k-1)dy", f.sup_norm(k - 1, 1))?;
    let n_xy_k1 = finite_norm("d^(k+1)f/dx^k dy", f.sup_norm(k, 1))?;

    let lhs = match &f.product {
        Some((u, v)) => {
            // E xy u(x)v(y) = E[x u(x)] E[y v(y)] and likewise for the
            // mixed partial, by independence
            let ex = fam_x.expect_tol(&|x| x * u.eval(x), LHS_TOL);
            let ey = fam_y.expect_tol(&|y| y * v.eval(y), LHS_TOL);
            let dx = fam_x.expect_tol(&|x| u.derivative(1, x), LHS_TOL);
            let dy = fam_y.expect_tol(&|y| v.derivative(1, y), LHS_TOL);
            (ex * ey - dx * dy).abs()
        }
        None => {
            let first = fam_x.expect_tol(
                &|x| x * fam_y.expect_tol(&|y| y * f.eval(x, y), LHS_TOL),
                OUTER_TOL,
            );
            let second = fam_x.expect_tol(
                &|x| fam_y.expect_tol(&|y| f.partial(1, 1, x, y), LHS_TOL),
                OUTER_TOL,
            );
            (first - second).abs()
        }
    };

    let x_tail_1 = fam_x.truncated_abs_moment(1, cutoff_1)?;
    let y_tail_k = fam_y.truncated_abs_moment(k, cutoff_2)?;
    let x_tail_k2 = fam_x.truncated_abs_moment(k, cutoff_2)?;
    let y_moment_k = fam_y.abs_moment(k)?;
    let x_moment_k = fam_x.abs_moment(k)?;
    let y_tail_k1 = fam_y.truncated_abs_moment(k + 1, cutoff_2)?;
    let x_tail_k1 = fam_x.truncated_abs_moment(k + 1, cutoff_1)?;

    let pre = (k + 1) as f64 / factorial(k);
    let rhs = 2.0 / factorial(k - 1) * (n_y_km1 + n_y_k) * x_tail_1 * y_tail_k
        + 2.0 / factorial(k - 1) * (n_xy_k + n_xy_k1) * x_tail_k2
        + 2.0 * pre * cutoff_1 * (cutoff_2 * n_y_k * y_moment_k + n_xy_k1 * x_moment_k)
        + pre * cutoff_1 * (n_y_k * y_tail_k1 + n_xy_k1 * x_moment_k)
        + pre * (cutoff_2 * n_y_k * x_tail_1 * y_moment_k + n_xy_k1 * x_tail_k1);
    debug_assert!(rhs >= 0.0);
    Ok(IbpBoundReport {
        kind: "bivariate".into(),
        family_x: fam_x.name().into(),
        family_y: Some(fam_y.name().into()),
        function: f.label().into(),
        k,
        cutoff_1,
        cutoff_2: Some(cutoff_2),
        lhs,
        rhs,
        holds: lhs <= rhs + HOLD_TOL,
    })
}

/// One sweep cell: either a certified report or a precondition error,
/// with the inputs echoed either way.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub kind: String,
    pub family_x: String,
    pub family_y: Option<String>,
    pub function: String,
    pub k: u32,
    pub cutoff_1: f64,
    pub cutoff_2: Option<f64>,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub holds: Option<bool>,
    pub error: Option<String>,
}

impl SweepCell {
    fn from_outcome(
        kind: &str,
        family_x: DisorderFamily,
        family_y: Option<DisorderFamily>,
        function: &str,
        k: u32,
        cutoff_1: f64,
        cutoff_2: Option<f64>,
        outcome: Result<IbpBoundReport>,
    ) -> Self {
        match outcome {
            Ok(rep) => Self {
                kind: rep.kind,
                family_x: rep.family_x,
                family_y: rep.family_y,
                function: rep.function,
                k: rep.k,
                cutoff_1: rep.cutoff_1,
                cutoff_2: rep.cutoff_2,
                lhs: Some(rep.lhs),
                rhs: Some(rep.rhs),
                holds: Some(rep.holds),
                error: None,
            },
            Err(e) => Self {
                kind: kind.into(),
                family_x: family_x.name().into(),
                family_y: family_y.map(|f| f.name().into()),
                function: function.into(),
                k,
                cutoff_1,
                cutoff_2,
                lhs: None,
                rhs: None,
                holds: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Sweep inputs: explicit cell lists for both inequalities.
pub struct SweepGrid {
    pub univariate: Vec<(DisorderFamily, TestFunction1D, u32, f64)>,
    pub bivariate: Vec<(
        DisorderFamily,
        DisorderFamily,
        TestFunction2D,
        u32,
        f64,
        f64,
    )>,
}

/// The default grid: every non-degenerate family (and family pair), the
/// trigonometric libraries, k in {2, 3}, cutoffs in {1, 2, 5}.
pub fn default_grid() -> SweepGrid {
    let families = [
        DisorderFamily::Rademacher,
        DisorderFamily::Uniform,
        DisorderFamily::Gaussian,
        DisorderFamily::TwoPointAsymmetric,
    ];
    let ks = [2u32, 3];
    let cutoffs = [1.0, 2.0, 5.0];
    let mut univariate = Vec::new();
    for &fam in &families {
        for f in sine_library() {
            for &k in &ks {
                for &cut in &cutoffs {
                    univariate.push((fam, f.clone(), k, cut));
                }
            }
        }
    }
    let mut bivariate = Vec::new();
    for &fx in &families {
        for &fy in &families {
            for f in product_sine_library() {
                for &k in &ks {
                    for &cut in &cutoffs {
                        bivariate.push((fx, fy, f.clone(), k, cut, cut));
                    }
                }
            }
        }
    }
    SweepGrid {
        univariate,
        bivariate,
    }
}

/// Sweep result: all cells in grid order plus outcome counts.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub cells: Vec<SweepCell>,
    pub holds: usize,
    pub violations: usize,
    pub precondition_errors: usize,
}

/// Evaluates every cell of the grid in parallel, preserving grid order.
pub fn sweep_certify(grid: &SweepGrid) -> SweepSummary {
    let uni: Vec<SweepCell> = grid
        .univariate
        .par_iter()
        .map(|(fam, f, k, cut)| {
            SweepCell::from_outcome(
                "univariate",
                *fam,
                None,
                f.label(),
                *k,
                *cut,
                None,
                univariate_gap(*fam, f, *k, *cut),
            )
        })
        .collect();
    let biv: Vec<SweepCell> = grid
        .bivariate
        .par_iter()
        .map(|(fx, fy, f, k, c1, c2)| {
            SweepCell::from_outcome(
                "bivariate",
                *fx,
                Some(*fy),
                f.label(),
                *k,
                *c1,
                Some(*c2),
                bivariate_gap(*fx, *fy, f, *k, *c1, *c2),
            )
        })
        .collect();
    let mut cells = uni;
    cells.extend(biv);
    let holds = cells.iter().filter(|c| c.holds == Some(true)).count();
    let violations = cells.iter().filter(|c| c.holds == Some(false)).count();
    let precondition_errors = cells.iter().filter(|c| c.error.is_some()).count();
    SweepSummary {
        cells,
        holds,
        violations,
        precondition_errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sine_derivatives_match_finite_differences() {
        let h = 1e-5;
        for f in sine_library() {
            for j in 0..4 {
                for &y in &[-1.3, -0.4, 0.2, 0.9, 2.1] {
                    let fd = (f.derivative(j, y + h) - f.derivative(j, y - h)) / (2.0 * h);
                    let exact = f.derivative(j + 1, y);
                    assert!(
                        (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                        "{} deriv {} at {y}: fd {fd} vs {exact}",
                        f.label(),
                        j + 1
                    );
                }
            }
        }
    }

    #[test]
    fn product_sine_partials_match_finite_differences() {
        let f = TestFunction2D::product_sine(0.5, 2.0);
        let h = 1e-5;
        for i in 0..3u32 {
            for j in 0..2u32 {
                for &(x, y) in &[(0.3, -0.7), (-1.1, 0.4), (0.9, 1.6)] {
                    let fd = (f.partial(i, j, x + h, y) - f.partial(i, j, x - h, y)) / (2.0 * h);
                    let exact = f.partial(i + 1, j, x, y);
                    assert!(
                        (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                        "partial ({},{j}) at ({x},{y})",
                        i + 1
                    );
                }
            }
        }
    }

    #[test]
    fn univariate_two_point_sine_frozen_values() {
        // two-point evaluation: lhs = |sin 1 - cos 1|; with K = 2 the
        // k = 3 tail vanishes and rhs = 4 * 2 / 6 = 4/3
        let rep = univariate_gap(
            DisorderFamily::Rademacher,
            &TestFunction1D::sine(1.0),
            3,
            2.0,
        )
        .unwrap();
        assert_relative_eq!(rep.lhs, (1f64.sin() - 1f64.cos()).abs(), epsilon = 1e-12);
        assert_relative_eq!(rep.rhs, 4.0 / 3.0, epsilon = 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn univariate_square_function_gap_vanishes() {
        // f(y) = y^2: E y^3 = 0 = E 2y for the symmetric two-point family
        let square = TestFunction1D::new(
            "y^2",
            4,
            |j, y| match j {
                0 => y * y,
                1 => 2.0 * y,
                2 => 2.0,
                _ => 0.0,
            },
            |j| match j {
                2 => 2.0,
                3 | 4 => 0.0,
                _ => f64::INFINITY,
            },
        );
        let rep = univariate_gap(DisorderFamily::Rademacher, &square, 3, 2.0).unwrap();
        assert!(rep.lhs <= 1e-15);
        assert!(rep.holds);
    }

    #[test]
    fn gaussian_gap_is_quadrature_noise() {
        for f in sine_library() {
            for k in [2, 3] {
                for cut in [1.0, 5.0] {
                    let rep = univariate_gap(DisorderFamily::Gaussian, &f, k, cut).unwrap();
                    assert!(
                        rep.lhs <= 1e-6,
                        "{} k={k} K={cut}: lhs {}",
                        f.label(),
                        rep.lhs
                    );
                    assert!(rep.holds);
                }
            }
        }
    }

    #[test]
    fn bivariate_two_point_sine_frozen_values() {
        // lhs = |sin^2 1 - cos^2 1| = |cos 2|; at K1 = K2 = 2 all tails
        // vanish and the five terms reduce to 8 + 4/3 = 28/3
        let rep = bivariate_gap(
            DisorderFamily::Rademacher,
            DisorderFamily::Rademacher,
            &TestFunction2D::product_sine(1.0, 1.0),
            3,
            2.0,
            2.0,
        )
        .unwrap();
        assert_relative_eq!(rep.lhs, 2f64.cos().abs(), epsilon = 1e-12);
        assert_relative_eq!(rep.rhs, 28.0 / 3.0, epsilon = 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn bivariate_xy_function_gap_vanishes() {
        // f = xy: E (xy)^2 = 1 and E d^2f/dxdy = 1; the four norms in the
        // bound are all zero at k = 3, so rhs = 0 as well
        let f = TestFunction2D::new(
            "xy",
            6,
            |i, j, x, y| match (i, j) {
                (0, 0) => x * y,
                (1, 0) => y,
                (0, 1) => x,
                (1, 1) => 1.0,
                _ => 0.0,
            },
            |i, j| match (i, j) {
                (0, 0) | (1, 0) | (0, 1) => f64::INFINITY,
                (1, 1) => 1.0,
                _ => 0.0,
            },
        );
        let rep = bivariate_gap(
            DisorderFamily::Rademacher,
            DisorderFamily::Rademacher,
            &f,
            3,
            2.0,
            2.0,
        )
        .unwrap();
        assert!(rep.lhs <= 1e-15);
        assert_relative_eq!(rep.rhs, 0.0, epsilon = 1e-15);
        assert!(rep.holds);
    }

    #[test]
    fn gaussian_pair_gap_is_quadrature_noise() {
        for f in product_sine_library() {
            let rep = bivariate_gap(
                DisorderFamily::Gaussian,
                DisorderFamily::Gaussian,
                &f,
                2,
                1.0,
                1.0,
            )
            .unwrap();
            assert!(rep.lhs <= 1e-6, "{}: lhs {}", f.label(), rep.lhs);
            assert!(rep.holds);
        }
    }

    #[test]
    fn nested_quadrature_agrees_with_separable_path() {
        // strip the product structure so the gap runs the nested route,
        // then compare against the separable evaluation
        for (fx, fy) in [
            (DisorderFamily::Rademacher, DisorderFamily::Gaussian),
            (DisorderFamily::Uniform, DisorderFamily::Uniform),
        ] {
            let sep = TestFunction2D::product_sine(1.0, 1.0);
            let mut nested = sep.clone();
            nested.product = None;
            let a = bivariate_gap(fx, fy, &sep, 2, 1.0, 1.0).unwrap();
            let b = bivariate_gap(fx, fy, &nested, 2, 1.0, 1.0).unwrap();
            assert!(
                (a.lhs - b.lhs).abs() <= 1e-8,
                "{} x {}: separable {} vs nested {}",
                fx.name(),
                fy.name(),
                a.lhs,
                b.lhs
            );
            assert_relative_eq!(a.rhs, b.rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn gap_is_invariant_under_sign_flip_of_even_functions() {
        // cos(a y) is even; reflecting y negates odd derivatives, which
        // cannot change either expectation under a symmetric family
        let a = 0.7f64;
        let cos_f = TestFunction1D::new(
            "cos(0.7y)",
            6,
            move |j, y| {
                a.powi(j as i32) * (a * y + (j + 1) as f64 * std::f64::consts::FRAC_PI_2).sin()
            },
            move |j| a.powi(j as i32),
        );
        let flipped = {
            let f = cos_f.clone();
            TestFunction1D::new(
                "cos(0.7y) flipped",
                6,
                move |j, y| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * f.derivative(j, -y)
                },
                {
                    let f = cos_f.clone();
                    move |j| f.sup_norm(j)
                },
            )
        };
        for fam in [DisorderFamily::Uniform, DisorderFamily::Rademacher] {
            let plain = univariate_gap(fam, &cos_f, 2, 1.0).unwrap();
            let refl = univariate_gap(fam, &flipped, 2, 1.0).unwrap();
            assert_relative_eq!(plain.lhs, refl.lhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn bound_factors_shrink_with_the_cutoff() {
        // each truncated-moment factor in the bounds is non-increasing in
        // its cutoff; the full rhs need not be monotone
        for fam in [
            DisorderFamily::Rademacher,
            DisorderFamily::Uniform,
            DisorderFamily::Gaussian,
            DisorderFamily::TwoPointAsymmetric,
        ] {
            for j in 1..=4u32 {
                let mut prev = f64::INFINITY;
                for cut in [1.0, 2.0, 5.0] {
                    let t = fam.truncated_abs_moment(j, cut).unwrap();
                    assert!(t <= prev + 1e-12, "{} j={j} K={cut}", fam.name());
                    prev = t;
                }
            }
        }
    }

    #[test]
    fn low_match_order_family_is_rejected() {
        let err = univariate_gap(
            DisorderFamily::TwoPointAsymmetric,
            &TestFunction1D::sine(1.0),
            3,
            2.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("match order"));
        let err = bivariate_gap(
            DisorderFamily::Gaussian,
            DisorderFamily::TwoPointAsymmetric,
            &TestFunction2D::product_sine(1.0, 1.0),
            3,
            1.0,
            1.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("match order"));
    }

    #[test]
    fn default_sweep_has_no_violations() {
        let summary = sweep_certify(&default_grid());
        assert_eq!(summary.violations, 0);
        // the asymmetric two-point family stops at match order 2, so its
        // k = 3 cells surface precondition errors without affecting others
        assert!(summary.precondition_errors > 0);
        assert_eq!(
            summary.holds + summary.precondition_errors,
            summary.cells.len()
        );
        let expected_errors: usize = summary
            .cells
            .iter()
            .filter(|c| {
                c.k == 3
                    && (c.family_x == "two_point_asymmetric"
                        || c.family_y.as_deref() == Some("two_point_asymmetric"))
            })
            .count();
        assert_eq!(summary.precondition_errors, expected_errors);
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = serde_json::to_string(&sweep_certify(&default_grid())).unwrap();
        let b = serde_json::to_string(&sweep_certify(&default_grid())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_grid_gives_empty_summary() {
        let summary = sweep_certify(&SweepGrid {
            univariate: Vec::new(),
            bivariate: Vec::new(),
        });
        assert!(summary.cells.is_empty());
        assert_eq!(
            summary.holds + summary.violations + summary.precondition_errors,
            0
        );
    }
}
