//! Power-law state curves and the AMM surface they induce.
//!
//! A curve is anchored at a reserve state `(x0, y0)` with exponent `c`:
//! `f(x) = y0 (x / x0)^-c`. Its state set coincides with the zero set of
//! `A(x, y) = x^c y - x0^c y0`, which is the surface trades move along.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{positive, Error, Result};

/// Relative tolerance for "the state lies on the curve".
pub const ON_CURVE_TOLERANCE: f64 = 1e-9;

/// Default tolerance used by [`check_amm_axioms`].
pub const DEFAULT_AXIOM_TOLERANCE: f64 = 1e-8;

/// Admissible range `[a, b]` for provider constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    a: f64,
    b: f64,
}

impl Bounds {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a > 0.0 && a < b && b.is_finite() {
            Ok(Self { a, b })
        } else {
            Err(Error::InvalidBounds { a, b })
        }
    }

    pub fn lower(&self) -> f64 {
        self.a
    }

    pub fn upper(&self) -> f64 {
        self.b
    }

    pub fn contains(&self, c: f64) -> bool {
        c >= self.a && c <= self.b
    }

    pub fn check(&self, c: f64) -> Result<f64> {
        if self.contains(c) {
            Ok(c)
        } else {
            Err(Error::OutOfBounds {
                c,
                a: self.a,
                b: self.b,
            })
        }
    }
}

/// Reserves held by the pool: `x` of the durable asset, `y` of the perishable one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoolState {
    pub x: f64,
    pub y: f64,
}

impl PoolState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_positive(&self) -> bool {
        self.x > 0.0 && self.y > 0.0
    }
}

/// Exponent and anchor of one state curve, with the cached invariant `k = x0^c y0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    c: f64,
    x0: f64,
    y0: f64,
    k: f64,
}

impl CurveParams {
    pub fn new(c: f64, x0: f64, y0: f64) -> Result<Self> {
        positive("curve exponent", c)?;
        positive("anchor x0", x0)?;
        positive("anchor y0", y0)?;
        Ok(Self {
            c,
            x0,
            y0,
            k: x0.powf(c) * y0,
        })
    }

    pub fn anchored_at(c: f64, anchor: PoolState) -> Result<Self> {
        Self::new(c, anchor.x, anchor.y)
    }

    pub fn exponent(&self) -> f64 {
        self.c
    }

    pub fn anchor(&self) -> PoolState {
        PoolState::new(self.x0, self.y0)
    }

    pub fn invariant(&self) -> f64 {
        self.k
    }

    /// `f(x) = y0 (x / x0)^-c`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        positive("x", x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: f64) -> f64 {
        self.y0 * (x / self.x0).powf(-self.c)
    }

    /// `A(x, y) = x^c y - k`; zero exactly on the curve's state set.
    pub fn surface(&self, x: f64, y: f64) -> Result<f64> {
        positive("x", x)?;
        positive("y", y)?;
        Ok(self.surface_unchecked(x, y))
    }

    fn surface_unchecked(&self, x: f64, y: f64) -> f64 {
        x.powf(self.c) * y - self.k
    }

    /// Relative distance of a state from the curve, `|A(x, y)| / k`.
    pub fn residual(&self, state: PoolState) -> f64 {
        (state.x.powf(self.c) * state.y - self.k).abs() / self.k
    }

    pub fn contains(&self, state: PoolState) -> bool {
        state.is_positive() && self.residual(state) <= ON_CURVE_TOLERANCE
    }

    /// Instantaneous price of one unit of Y in X: `|f'(x)| = c f(x) / x`.
    pub fn spot_price(&self, x: f64) -> Result<f64> {
        let y = self.eval(x)?;
        Ok(self.c * y / x)
    }

    /// Curvature `f''(x) = c (c + 1) f(x) / x^2`.
    pub fn slippage(&self, x: f64) -> Result<f64> {
        let y = self.eval(x)?;
        Ok(self.c * (self.c + 1.0) * y / (x * x))
    }

    /// Reserve of X required to hold `y` units of Y on this curve.
    fn x_for_y(&self, y: f64) -> f64 {
        (self.k / y).powf(1.0 / self.c)
    }

    /// X that must be paid to withdraw `n` whole units of Y from `state`.
    pub fn cost_to_buy_units(&self, state: PoolState, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain {
                what: "units to buy",
                value: 0.0,
            });
        }
        self.require_on_curve(state)?;
        let remaining = state.y - n as f64;
        if remaining <= 0.0 {
            return Err(Error::InsufficientInventory {
                requested: n,
                available: state.y,
            });
        }
        Ok(self.x_for_y(remaining) - state.x)
    }

    /// X paid out by the pool for `n` whole units of Y sold into it.
    pub fn proceeds_to_sell_units(&self, state: PoolState, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain {
                what: "units to sell",
                value: 0.0,
            });
        }
        self.require_on_curve(state)?;
        Ok(state.x - self.x_for_y(state.y + n as f64))
    }

    /// State reached after buying `n` units; the X side is recomputed from
    /// the invariant so the result is on the curve to rounding.
    pub fn state_after_buy(&self, state: PoolState, n: u64) -> Result<PoolState> {
        let dx = self.cost_to_buy_units(state, n)?;
        Ok(PoolState::new(state.x + dx, state.y - n as f64))
    }

    pub fn state_after_sell(&self, state: PoolState, n: u64) -> Result<PoolState> {
        let dx = self.proceeds_to_sell_units(state, n)?;
        Ok(PoolState::new(state.x - dx, state.y + n as f64))
    }

    /// New curve with exponent `new_c` through `anchor`.
    pub fn rebase(&self, new_c: f64, anchor: PoolState, bounds: &Bounds) -> Result<Self> {
        bounds.check(new_c)?;
        Self::anchored_at(new_c, anchor)
    }

    fn require_on_curve(&self, state: PoolState) -> Result<()> {
        positive("reserve x", state.x)?;
        positive("reserve y", state.y)?;
        if self.residual(state) > ON_CURVE_TOLERANCE {
            return Err(Error::OffCurve {
                residual: self.residual(state),
            });
        }
        Ok(())
    }
}

/// Arithmetic and geometric means under the same weights.
///
/// Weights must be nonnegative and sum to one; values nonnegative.
pub fn weighted_means(values: &[f64], weights: &[f64]) -> (f64, f64) {
    assert_eq!(values.len(), weights.len());
    let arithmetic = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let geometric = values
        .iter()
        .zip(weights)
        .map(|(v, w)| if *w == 0.0 { 1.0 } else { v.powf(*w) })
        .product();
    (arithmetic, geometric)
}

/// Sampling plan for [`check_amm_axioms`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub points_per_axis: usize,
    /// Random distinct grid pairs fed to the midpoint convexity test.
    pub convexity_pairs: usize,
    /// Stride over grid points at which second partials are probed.
    pub derivative_stride: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_range: (1.0, 200.0),
            y_range: (1.0, 200.0),
            points_per_axis: 100,
            convexity_pairs: 20_000,
            derivative_stride: 7,
            seed: 0x5eed,
        }
    }
}

impl GridSpec {
    fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        let (lo, hi) = range;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub monotone_ok: bool,
    pub convexity_ok: bool,
    pub differentiability_ok: bool,
    pub worst_violation: f64,
    pub samples_checked: usize,
    pub degenerate_pairs_skipped: usize,
}

impl AxiomReport {
    pub fn all_ok(&self) -> bool {
        self.monotone_ok && self.convexity_ok && self.differentiability_ok
    }
}

const CONVEXITY_WEIGHTS: [f64; 3] = [0.25, 0.5, 0.75];

/// Numerically certifies that the surface of `params` behaves like an AMM:
/// strictly increasing in both coordinates, strictly convex superlevel sets,
/// and second partials that converge under step refinement.
///
/// Violations are scale-free: each is divided by the magnitude of `x^c y`
/// (or of the normalized derivative) at the sample.
pub fn check_amm_axioms(params: &CurveParams, grid: &GridSpec, tolerance: f64) -> AxiomReport {
    let n = grid.points_per_axis.max(2);
    let xs = GridSpec::axis(grid.x_range, n);
    let ys = GridSpec::axis(grid.y_range, n);
    let c = params.exponent();
    let product = |x: f64, y: f64| x.powf(c) * y;

    let mut samples = 0usize;

    // Strict monotonicity along each axis between grid neighbours.
    let mut monotone_worst = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            let here = params.surface_unchecked(x, y);
            let scale = product(x, y);
            if i + 1 < n {
                let right = params.surface_unchecked(xs[i + 1], y);
                monotone_worst = monotone_worst.max(strict_gap(here, right, scale));
                samples += 1;
            }
            if j + 1 < n {
                let up = params.surface_unchecked(x, ys[j + 1]);
                monotone_worst = monotone_worst.max(strict_gap(here, up, scale));
                samples += 1;
            }
        }
    }

    // Midpoint test on superlevel sets {A >= beta}, beta >= 0.
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let mut convex_worst = 0.0f64;
    let mut skipped = 0usize;
    let k = params.invariant();
    for _ in 0..grid.convexity_pairs {
        let p1 = (xs[rng.random_range(0..n)], ys[rng.random_range(0..n)]);
        let p2 = (xs[rng.random_range(0..n)], ys[rng.random_range(0..n)]);
        if p1 == p2 {
            skipped += 1;
            continue;
        }
        let (m1, m2) = (product(p1.0, p1.1), product(p2.0, p2.1));
        // beta = min(A(p1), A(p2)); both points must be in a superlevel set with beta >= 0.
        let level = m1.min(m2);
        if level < k {
            continue;
        }
        for t in CONVEXITY_WEIGHTS {
            let mid = (t * p1.0 + (1.0 - t) * p2.0, t * p1.1 + (1.0 - t) * p2.1);
            convex_worst = convex_worst.max(strict_gap(level, product(mid.0, mid.1), level));
            samples += 1;
        }
    }

    // Second partials: Richardson estimates at h and h/2 must agree.
    let mut deriv_worst = 0.0f64;
    let stride = grid.derivative_stride.max(1);
    for &x in xs.iter().step_by(stride) {
        for &y in ys.iter().step_by(stride) {
            deriv_worst = deriv_worst.max(second_partial_drift(params, x, y));
            samples += 1;
        }
    }

    let worst = monotone_worst.max(convex_worst).max(deriv_worst);
    AxiomReport {
        monotone_ok: monotone_worst <= tolerance,
        convexity_ok: convex_worst <= tolerance,
        differentiability_ok: deriv_worst <= tolerance,
        worst_violation: worst,
        samples_checked: samples,
        degenerate_pairs_skipped: skipped,
    }
}

/// Relative amount by which `lower < upper` fails; 0 when strict.
fn strict_gap(lower: f64, upper: f64, scale: f64) -> f64 {
    if upper > lower {
        0.0
    } else {
        (lower - upper) / scale.abs().max(f64::MIN_POSITIVE)
    }
}

/// Largest change in a normalized second partial of `A` between two
/// Richardson-extrapolated finite-difference estimates.
fn second_partial_drift(params: &CurveParams, x: f64, y: f64) -> f64 {
    // The constant k drops out of every partial; differencing x^c y alone
    // keeps roundoff proportional to the local magnitude.
    let c = params.exponent();
    let a = |x: f64, y: f64| x.powf(c) * y;
    let m = a(x, y);
    let base_x = x * 2e-3;
    let base_y = y * 2e-3;

    let dxx = |h: f64| (a(x + h, y) - 2.0 * a(x, y) + a(x - h, y)) / (h * h);
    let dyy = |h: f64| (a(x, y + h) - 2.0 * a(x, y) + a(x, y - h)) / (h * h);
    let dxy = |hx: f64, hy: f64| {
        (a(x + hx, y + hy) - a(x + hx, y - hy) - a(x - hx, y + hy) + a(x - hx, y - hy))
            / (4.0 * hx * hy)
    };
    let richardson = |coarse: f64, fine: f64| (4.0 * fine - coarse) / 3.0;

    let xx = |s: f64| richardson(dxx(base_x * s), dxx(base_x * s / 2.0)) * x * x / m;
    let yy = |s: f64| richardson(dyy(base_y * s), dyy(base_y * s / 2.0)) * y * y / m;
    let xy = |s: f64| {
        richardson(
            dxy(base_x * s, base_y * s),
            dxy(base_x * s / 2.0, base_y * s / 2.0),
        ) * x
            * y
            / m
    };
    // Normalized partials are O(c^2), so the drift is already scale-free up to c.
    let norm = params.exponent().max(1.0).powi(2);
    [
        (xx(1.0) - xx(0.5)).abs(),
        (yy(1.0) - yy(0.5)).abs(),
        (xy(1.0) - xy(0.5)).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
        / norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    /// Bisection on `g(x') = x'^c * y' - k`, independent of the closed form.
    fn solve_x_on_surface(c: f64, k: f64, y: f64) -> f64 {
        let (mut lo, mut hi) = (1e-12f64, 1e12f64);
        for _ in 0..400 {
            let mid = (lo * hi).sqrt();
            if mid.powf(c) * y > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (lo * hi).sqrt()
    }

    #[test]
    fn eval_examples() {
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        assert_eq!(p.eval(100.0).unwrap(), 50.0);
        let y = p.eval(200.0).unwrap();
        assert!(rel(y, 25.0) < 1e-15);
        assert!(p.surface(200.0, y).unwrap().abs() < 1e-9);

        let p = CurveParams::new(2.0, 10.0, 10.0).unwrap();
        let y = p.eval(20.0).unwrap();
        assert!(rel(y, 2.5) < 1e-15);
        assert!(rel(20.0f64.powi(2) * y, 1000.0) < 1e-12);
    }

    #[test]
    fn eval_rejects_nonpositive() {
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        assert!(matches!(p.eval(0.0), Err(Error::Domain { .. })));
        assert!(matches!(p.eval(-1.0), Err(Error::Domain { .. })));
        assert!(p.surface(1.0, 0.0).is_err());
        assert!(p.spot_price(0.0).is_err());
        assert!(p.slippage(-3.0).is_err());
        assert!(CurveParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn surface_examples() {
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        assert_eq!(p.surface(100.0, 50.0).unwrap(), 0.0);
        assert!((p.surface(100.0, 51.0).unwrap() - 100.0).abs() < 1e-9);
        let p = CurveParams::new(2.0, 10.0, 10.0).unwrap();
        assert!((p.surface(10.0, 9.0).unwrap() + 100.0).abs() < 1e-9);
    }

    #[test]
    fn spot_price_examples() {
        let p = CurveParams::new(2.0, 100.0, 50.0).unwrap();
        assert!(rel(p.spot_price(100.0).unwrap(), 1.0) < 1e-15);
        let p = CurveParams::new(1.0, 100.0, 100.0).unwrap();
        assert!(rel(p.spot_price(100.0).unwrap(), 1.0) < 1e-15);

        // Central difference oracle at x = 200.
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        let h = 1e-5;
        let fd = (p.eval(200.0 + h).unwrap() - p.eval(200.0 - h).unwrap()) / (2.0 * h);
        assert!(rel(fd.abs(), 0.125) < 1e-8);
        assert!(rel(p.spot_price(200.0).unwrap(), 0.125) < 1e-15);
    }

    #[test]
    fn slippage_examples() {
        let p = CurveParams::new(2.0, 100.0, 50.0).unwrap();
        assert!(rel(p.slippage(100.0).unwrap(), 0.03) < 1e-14);
        let p = CurveParams::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.slippage(1.0).unwrap(), 2.0);

        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        let h = 1e-2;
        let fd = (p.eval(100.0 + h).unwrap() - 2.0 * p.eval(100.0).unwrap()
            + p.eval(100.0 - h).unwrap())
            / (h * h);
        assert!(rel(fd, 0.01) < 1e-6);
        assert!(rel(p.slippage(100.0).unwrap(), 0.01) < 1e-15);
    }

    #[test]
    fn cost_to_buy_examples() {
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        let s = PoolState::new(100.0, 50.0);
        let dx = p.cost_to_buy_units(s, 1).unwrap();
        let oracle = solve_x_on_surface(1.0, 5000.0, 49.0) - 100.0;
        assert!((dx - oracle).abs() < 1e-9);
        assert!((dx - 2.0408163265).abs() < 1e-9);

        assert!(p.cost_to_buy_units(s, 49).is_ok());
        assert!(matches!(
            p.cost_to_buy_units(s, 50),
            Err(Error::InsufficientInventory { requested: 50, .. })
        ));
        assert!(matches!(p.cost_to_buy_units(s, 0), Err(Error::Domain { .. })));

        let p = CurveParams::new(2.0, 10.0, 10.0).unwrap();
        let s = PoolState::new(10.0, 10.0);
        let dx = p.cost_to_buy_units(s, 5).unwrap();
        assert!((dx - 4.1421356).abs() < 1e-7);
        let after = p.state_after_buy(s, 5).unwrap();
        assert!(p.residual(after) < 1e-12);
    }

    #[test]
    fn proceeds_to_sell_examples() {
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        let s = PoolState::new(100.0, 50.0);
        let dx = p.proceeds_to_sell_units(s, 1).unwrap();
        assert!((dx - 1.9607843).abs() < 1e-7);
        assert!(p.surface(100.0 - dx, 51.0).unwrap().abs() / 5000.0 < 1e-12);

        let p = CurveParams::new(2.0, 10.0, 10.0).unwrap();
        let dx = p
            .proceeds_to_sell_units(PoolState::new(10.0, 10.0), 10)
            .unwrap();
        assert!((dx - 2.9289322).abs() < 1e-7);
    }

    #[test]
    fn buy_then_sell_round_trip() {
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        let s = PoolState::new(100.0, 50.0);
        let paid = p.cost_to_buy_units(s, 1).unwrap();
        let mid = p.state_after_buy(s, 1).unwrap();
        let back = p.proceeds_to_sell_units(mid, 1).unwrap();
        assert!(rel(back, paid) < 1e-12);
    }

    #[test]
    fn rebase_examples() {
        let bounds = Bounds::new(0.5, 4.0).unwrap();
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        let same = p.rebase(1.0, PoolState::new(100.0, 50.0), &bounds).unwrap();
        assert_eq!(same, p);

        let q = p.rebase(2.0, PoolState::new(100.0, 50.0), &bounds).unwrap();
        assert!(rel(q.invariant(), 500_000.0) < 1e-15);
        assert!(q.contains(PoolState::new(100.0, 50.0)));

        assert!(matches!(
            p.rebase(4.1, PoolState::new(100.0, 50.0), &bounds),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(1.0, 1.0).is_err());
        assert!(Bounds::new(0.0, 1.0).is_err());
        assert!(Bounds::new(2.0, 1.0).is_err());
        let b = Bounds::new(0.5, 2.0).unwrap();
        assert!(b.contains(0.5) && b.contains(2.0) && !b.contains(2.0001));
    }

    #[test]
    fn axioms_hold_on_default_grid() {
        for c in [0.5, 1.0, 1.7, 2.0] {
            let p = CurveParams::new(c, 50.0, 80.0).unwrap();
            let report = check_amm_axioms(&p, &GridSpec::default(), DEFAULT_AXIOM_TOLERANCE);
            assert!(report.all_ok(), "c={c}: {report:?}");
            assert!(report.worst_violation <= 1e-8);
        }
    }

    #[test]
    fn axiom_checker_detects_a_decreasing_surface() {
        // Negative exponents are rejected by the constructor, so forge one.
        let bad = CurveParams {
            c: -1.0,
            x0: 1.0,
            y0: 1.0,
            k: 1.0,
        };
        let report = check_amm_axioms(&bad, &GridSpec::default(), DEFAULT_AXIOM_TOLERANCE);
        assert!(!report.monotone_ok);
        assert!(report.worst_violation > 1e-8);
    }

    #[test]
    fn degenerate_pairs_are_skipped() {
        let p = CurveParams::new(1.0, 1.0, 1.0).unwrap();
        let grid = GridSpec {
            points_per_axis: 2,
            convexity_pairs: 400,
            ..GridSpec::default()
        };
        let report = check_amm_axioms(&p, &grid, DEFAULT_AXIOM_TOLERANCE);
        assert!(report.degenerate_pairs_skipped > 0);
        assert!(report.all_ok());
    }

    #[test]
    fn monotone_in_x_example() {
        let p = CurveParams::new(1.0, 100.0, 50.0).unwrap();
        let lo = p.surface(100.0, 50.0).unwrap() + p.invariant();
        let hi = p.surface(101.0, 50.0).unwrap() + p.invariant();
        assert_eq!((lo, hi), (5000.0, 5050.0));
        assert!(hi > lo);
    }

    #[test]
    fn weighted_am_gm_equality_when_all_equal() {
        let (am, gm) = weighted_means(&[3.0, 3.0, 3.0], &[0.2, 0.3, 0.5]);
        assert!((am - gm).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weighted_am_gm(
            values in prop::collection::vec(0.0f64..1e3, 1..8),
            raw in prop::collection::vec(0.0f64..1.0, 8),
        ) {
            let raw = &raw[..values.len()];
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let (am, gm) = weighted_means(&values, &weights);
            prop_assert!(am >= gm - 1e-9 * am.max(1.0));
        }

        #[test]
        fn eval_lies_on_surface(
            c in 0.05f64..6.0,
            x0 in 0.1f64..1e4,
            y0 in 0.1f64..1e4,
            x in 0.1f64..1e4,
        ) {
            let p = CurveParams::new(c, x0, y0).unwrap();
            let y = p.eval(x).unwrap();
            prop_assert!(p.surface(x, y).unwrap().abs() / p.invariant() <= 1e-9);
        }

        #[test]
        fn spot_price_matches_finite_difference(
            c in 0.1f64..4.0,
            x0 in 1.0f64..1e3,
            y0 in 1.0f64..1e3,
            log_x in -3.0f64..3.0,
        ) {
            let p = CurveParams::new(c, x0, y0).unwrap();
            let x = x0 * log_x.exp();
            let h = x * 1e-6;
            let fd = (p.eval(x + h).unwrap() - p.eval(x - h).unwrap()) / (2.0 * h);
            let spot = p.spot_price(x).unwrap();
            prop_assert!((spot - fd.abs()).abs() / spot <= 1e-6);
        }

        #[test]
        fn buy_sell_conserves_state(
            c in 0.25f64..4.0,
            x in 1.0f64..1e4,
            y in 2.0f64..500.0,
            n in 1u64..50,
        ) {
            prop_assume!((n as f64) < y);
            let p = CurveParams::new(c, x, y).unwrap();
            let s = PoolState::new(x, y);
            let mid = p.state_after_buy(s, n).unwrap();
            let back = p.state_after_sell(mid, n).unwrap();
            prop_assert!(rel(back.x, x) <= 1e-9);
            prop_assert!(rel(back.y, y) <= 1e-12);
        }

        #[test]
        fn higher_exponent_raises_price_and_slippage(
            c2 in 0.05f64..5.0,
            gap in 1e-3f64..5.0,
            x0 in 0.1f64..1e4,
            y0 in 0.1f64..1e4,
        ) {
            let c1 = c2 + gap;
            let p1 = CurveParams::new(c1, x0, y0).unwrap();
            let p2 = CurveParams::new(c2, x0, y0).unwrap();
            prop_assert!(p1.spot_price(x0).unwrap() > p2.spot_price(x0).unwrap());
            prop_assert!(p1.slippage(x0).unwrap() > p2.slippage(x0).unwrap());
        }
    }
}
