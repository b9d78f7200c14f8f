//! Product-rectangle and product-trapezoid weights for the fractional Adams
//! schemes, plus the gamma function they are normalised by.
//!
//! Every weight family here depends on the step index only through a lag,
//! except the first corrector weight. Tables are therefore one-dimensional
//! and built once per solve.

use serde::Serialize;

use crate::error::{FdeError, Result};
use crate::scalar::{pow_nonneg, Scalar};

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function via the Lanczos approximation (g = 7, nine terms), with
/// the reflection formula below 1/2. Relative error is below 1e-13 on
/// (0, 10] in double precision.
pub fn gamma<T: Scalar>(x: T) -> Result<T> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(FdeError::GammaDomain(x.to_f64_lossy()));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let pi = T::lit(std::f64::consts::PI);
    if x < half {
        // Γ(x)Γ(1-x) = π / sin(πx)
        return pi / ((pi * x).sin() * gamma_unchecked(T::one() - x));
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS_COEFFS[0]);
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::of_usize(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    let sqrt_two_pi = T::lit((2.0 * std::f64::consts::PI).sqrt());
    sqrt_two_pi * t.powf(x + half) * (-t).exp() * acc
}

/// A fractional order in (0, 1] with its gamma constants precomputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FracOrder<T: Scalar> {
    beta: T,
    gamma_beta: T,
    gamma_beta_plus1: T,
    gamma_beta_plus2: T,
}

impl<T: Scalar> FracOrder<T> {
    pub fn new(beta: T) -> Result<Self> {
        if !(beta > T::zero() && beta <= T::one()) {
            return Err(FdeError::InvalidOrder(beta.to_f64_lossy()));
        }
        Ok(Self {
            beta,
            gamma_beta: gamma(beta)?,
            gamma_beta_plus1: gamma(beta + T::one())?,
            gamma_beta_plus2: gamma(beta + T::lit(2.0))?,
        })
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// Γ(β)
    pub fn gamma_beta(&self) -> T {
        self.gamma_beta
    }

    /// Γ(β+1)
    pub fn gamma_beta_plus1(&self) -> T {
        self.gamma_beta_plus1
    }

    /// Γ(β+2)
    pub fn gamma_beta_plus2(&self) -> T {
        self.gamma_beta_plus2
    }

    /// `h^β / β`, the common factor of the rectangle-rule weights.
    pub fn rectangle_scale(&self, h: T) -> T {
        h.powf(self.beta) / self.beta
    }

    /// `h^β / (β(β+1))`, the common factor of the trapezoid-rule weights.
    pub fn trapezoid_scale(&self, h: T) -> T {
        h.powf(self.beta) / (self.beta * (self.beta + T::one()))
    }
}

/// Uniform grid `t_k = k h`, `k = 0..=N`, over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid<T: Scalar> {
    horizon: T,
    steps: usize,
    step: T,
    #[serde(skip)]
    times: Vec<T>,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(FdeError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(FdeError::InvalidGrid("step count must be positive".into()));
        }
        let n = T::of_usize(steps);
        let times = (0..=steps)
            .map(|k| horizon * (T::of_usize(k) / n))
            .collect();
        Ok(Self {
            horizon,
            steps,
            step: horizon / n,
            times,
        })
    }

    /// Grid from a requested step size. `N = round(T/h)` and `h` is then
    /// recomputed as `T/N` so that the last node lands on `T`.
    pub fn from_step(horizon: T, step: T) -> Result<Self> {
        if !(step > T::zero()) || !step.is_finite() {
            return Err(FdeError::InvalidGrid(format!(
                "step must be positive, got {step}"
            )));
        }
        let ratio = (horizon / step).round();
        let steps = ratio
            .to_usize()
            .filter(|&n| n > 0)
            .ok_or_else(|| FdeError::InvalidGrid(format!("T/h = {} steps", horizon / step)))?;
        Self::new(horizon, steps)
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size `h = T/N`.
    pub fn step(&self) -> T {
        self.step
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn time(&self, k: usize) -> T {
        self.times[k]
    }
}

/// Rectangle-rule predictor weight for lag `m = k - j >= 1`:
/// `(h^β/β)(m^β - (m-1)^β)`.
pub fn predictor_weight<T: Scalar>(order: &FracOrder<T>, h: T, lag: usize) -> Result<T> {
    if lag == 0 {
        return Err(FdeError::WeightIndex("predictor lag must be >= 1".into()));
    }
    Ok(rectangle_weight(order.rectangle_scale(h), order.beta, lag))
}

#[inline]
fn rectangle_weight<T: Scalar>(scale: T, beta: T, lag: usize) -> T {
    let m = T::of_usize(lag);
    scale * (pow_nonneg(m, beta) - pow_nonneg(m - T::one(), beta))
}

#[inline]
fn trapezoid_interior<T: Scalar>(scale: T, beta: T, lag: usize) -> T {
    let m = T::of_usize(lag);
    let p = beta + T::one();
    scale
        * (pow_nonneg(m + T::one(), p) + pow_nonneg(m - T::one(), p)
            - T::lit(2.0) * pow_nonneg(m, p))
}

#[inline]
fn trapezoid_head<T: Scalar>(scale: T, beta: T, k: usize) -> T {
    let kf = T::of_usize(k);
    let km1 = kf - T::one();
    scale * (pow_nonneg(km1, beta + T::one()) - (km1 - beta) * pow_nonneg(kf, beta))
}

/// Trapezoid-rule corrector weight `η_{j,k}` for `0 <= j <= k`, `k >= 1`.
pub fn corrector_weight<T: Scalar>(order: &FracOrder<T>, h: T, j: usize, k: usize) -> Result<T> {
    if k == 0 || j > k {
        return Err(FdeError::WeightIndex(format!(
            "corrector weight needs 0 <= j <= k, k >= 1; got j={j}, k={k}"
        )));
    }
    let scale = order.trapezoid_scale(h);
    Ok(if j == k {
        scale
    } else if j == 0 {
        trapezoid_head(scale, order.beta, k)
    } else {
        trapezoid_interior(scale, order.beta, k - j)
    })
}

/// Backward rectangle weight `b_{j,k+1}` for the reverse-time sweep, defined
/// for `N-k <= j <= N`. Equal to the predictor weight at lag `j-(N-k-1)`.
pub fn backward_weight<T: Scalar>(
    order: &FracOrder<T>,
    h: T,
    j: usize,
    k: usize,
    n: usize,
) -> Result<T> {
    if k >= n || j + k < n || j > n {
        return Err(FdeError::WeightIndex(format!(
            "backward weight needs N-k <= j <= N, k < N; got j={j}, k={k}, N={n}"
        )));
    }
    predictor_weight(order, h, backward_lag(j, k, n))
}

/// Lag `j - (N-k-1)` under which a backward weight mirrors a predictor weight.
#[inline]
pub fn backward_lag(j: usize, k: usize, n: usize) -> usize {
    j + k + 1 - n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    PredictorMu,
    CorrectorEta,
    BackwardB,
}

/// Lag-indexed weights for one solve. For the rectangle families
/// `offsets[m-1]` holds lag `m`; for the corrector it holds the interior
/// weight at lag `m`, with the tail weight stored apart and the head weight
/// produced per step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable<T: Scalar> {
    kind: WeightKind,
    offsets: Vec<T>,
    tail: Option<T>,
    order: FracOrder<T>,
    h: T,
}

impl<T: Scalar> WeightTable<T> {
    pub fn predictor(order: FracOrder<T>, h: T, n: usize) -> Self {
        Self::rectangle(WeightKind::PredictorMu, order, h, n)
    }

    pub fn backward(order: FracOrder<T>, h: T, n: usize) -> Self {
        Self::rectangle(WeightKind::BackwardB, order, h, n)
    }

    fn rectangle(kind: WeightKind, order: FracOrder<T>, h: T, n: usize) -> Self {
        let scale = order.rectangle_scale(h);
        let offsets = (1..=n)
            .map(|m| rectangle_weight(scale, order.beta, m))
            .collect();
        Self {
            kind,
            offsets,
            tail: None,
            order,
            h,
        }
    }

    pub fn corrector(order: FracOrder<T>, h: T, n: usize) -> Self {
        let scale = order.trapezoid_scale(h);
        let offsets = (1..=n)
            .map(|m| trapezoid_interior(scale, order.beta, m))
            .collect();
        Self {
            kind: WeightKind::CorrectorEta,
            offsets,
            tail: Some(scale),
            order,
            h,
        }
    }

    /// Builds a table from raw offsets. Used by fault-injection checks.
    pub fn from_offsets(kind: WeightKind, order: FracOrder<T>, h: T, offsets: Vec<T>) -> Self {
        let tail = (kind == WeightKind::CorrectorEta).then(|| order.trapezoid_scale(h));
        Self {
            kind,
            offsets,
            tail,
            order,
            h,
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn order(&self) -> &FracOrder<T> {
        &self.order
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[T] {
        &self.offsets
    }

    /// Weight at lag `m >= 1`.
    #[inline]
    pub fn lag(&self, m: usize) -> T {
        self.offsets[m - 1]
    }

    /// `η_{0,k}`; computed on demand.
    pub fn corrector_head(&self, k: usize) -> T {
        trapezoid_head(self.order.trapezoid_scale(self.h), self.order.beta, k)
    }

    /// `η_{k,k}`
    pub fn corrector_tail(&self) -> T {
        self.tail
            .unwrap_or_else(|| self.order.trapezoid_scale(self.h))
    }

    /// `b_{j,k+1}` read through the mirror lag.
    pub fn backward_at(&self, j: usize, k: usize, n: usize) -> T {
        self.lag(backward_lag(j, k, n))
    }

    /// Slots charged when the table is held in memory.
    pub fn slots(&self) -> u64 {
        self.offsets.len() as u64 + u64::from(self.tail.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(beta: f64) -> FracOrder<f64> {
        FracOrder::new(beta).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn gamma_closed_forms() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert!(rel(gamma(1.0).unwrap(), 1.0) < 1e-14);
        assert!(rel(gamma(0.5).unwrap(), sqrt_pi) < 1e-13);
        assert!(rel(gamma(1.5).unwrap(), 0.5 * sqrt_pi) < 1e-13);
        assert!(rel(gamma(5.0).unwrap(), 24.0) < 1e-13);
        assert!(rel(gamma(10.0).unwrap(), 362_880.0) < 1e-12);
        assert!(rel(gamma(0.25).unwrap(), 3.625_609_908_221_908_3) < 1e-13);
        assert!(rel(gamma(0.1).unwrap(), 9.513_507_698_668_731_8) < 1e-13);
    }

    #[test]
    fn gamma_functional_equation() {
        for i in 1..200 {
            let x = i as f64 * 0.045;
            let lhs = gamma(x + 1.0).unwrap();
            let rhs = x * gamma(x).unwrap();
            assert!(rel(lhs, rhs) < 1e-12, "x={x}");
        }
    }

    #[test]
    fn gamma_rejects_nonpositive() {
        assert!(matches!(gamma(0.0), Err(FdeError::GammaDomain(_))));
        assert!(matches!(gamma(-1.5), Err(FdeError::GammaDomain(_))));
        assert!(gamma(f64::NAN).is_err());
    }

    #[test]
    fn frac_order_validation() {
        assert!(FracOrder::new(0.0).is_err());
        assert!(FracOrder::new(1.0 + 1e-12).is_err());
        assert!(FracOrder::new(-0.3).is_err());
        let one = order(1.0);
        assert!((one.gamma_beta() - 1.0).abs() < 1e-14);
        for beta in [0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
            let o = order(beta);
            assert!(rel(o.gamma_beta_plus1(), beta * o.gamma_beta()) < 1e-12);
            assert!(rel(o.gamma_beta_plus2(), (beta + 1.0) * o.gamma_beta_plus1()) < 1e-12);
        }
    }

    #[test]
    fn grid_endpoints_and_rounding() {
        let g = TimeGrid::new(2.0f64, 200).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert!((g.time(200) - 2.0).abs() <= 1e-12 * 2.0);
        assert!(g.times().windows(2).all(|w| w[1] > w[0]));

        let g = TimeGrid::from_step(1.0f64, 0.3).unwrap();
        assert_eq!(g.steps(), 3);
        assert!((g.step() - 1.0 / 3.0).abs() < 1e-15);
        assert!(TimeGrid::<f64>::new(0.0, 3).is_err());
        assert!(TimeGrid::<f64>::new(1.0, 0).is_err());
        assert!(TimeGrid::from_step(1.0, 5.0).is_err());
    }

    #[test]
    fn predictor_weight_examples() {
        assert!((predictor_weight(&order(1.0), 0.1, 3).unwrap() - 0.1).abs() < 1e-15);
        assert!((predictor_weight(&order(0.5), 1.0, 1).unwrap() - 2.0).abs() < 1e-15);
        assert!(
            (predictor_weight(&order(0.5), 1.0, 2).unwrap() - 0.828_427_124_746_190_1).abs()
                < 1e-12
        );
        assert!(predictor_weight(&order(0.5), 1.0, 0).is_err());
    }

    #[test]
    fn corrector_weight_examples() {
        let o = order(1.0);
        assert!((corrector_weight(&o, 0.1, 4, 4).unwrap() - 0.05).abs() < 1e-15);
        for j in 1..7 {
            assert!((corrector_weight(&o, 0.1, j, 7).unwrap() - 0.1).abs() < 1e-15);
        }
        assert!((corrector_weight(&o, 0.1, 0, 2).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(
            corrector_weight(&o, 0.1, 3, 2),
            Err(FdeError::WeightIndex(_))
        ));
        assert!(corrector_weight(&o, 0.1, 0, 0).is_err());
    }

    #[test]
    fn backward_weight_examples() {
        let n = 10;
        for k in 0..n {
            for j in (n - k)..=n {
                let b = backward_weight(&order(1.0), 0.1, j, k, n).unwrap();
                assert!((b - 0.1).abs() < 1e-15);
            }
        }
        let o = order(0.5);
        assert!((backward_weight(&o, 1.0, 6, 4, 10).unwrap() - 2.0).abs() < 1e-15);
        assert!(
            (backward_weight(&o, 1.0, 7, 4, 10).unwrap() - 0.828_427_124_746_190_1).abs() < 1e-12
        );
        assert!(backward_weight(&o, 1.0, 5, 4, 10).is_err());
        assert!(backward_weight(&o, 1.0, 11, 4, 10).is_err());
        assert!(backward_weight(&o, 1.0, 10, 10, 10).is_err());
    }

    #[test]
    fn beta_one_reduces_to_euler_and_trapezoid() {
        let o = order(1.0);
        let h = 0.013;
        let mu = WeightTable::predictor(o, h, 500);
        assert!(mu.offsets().iter().all(|&w| (w - h).abs() < 1e-14));
        let eta = WeightTable::corrector(o, h, 500);
        for k in 1..=500 {
            assert!((eta.corrector_head(k) - h / 2.0).abs() < 1e-14);
        }
        assert!((eta.corrector_tail() - h / 2.0).abs() < 1e-14);
        assert!(eta.offsets()[..499].iter().all(|&w| (w - h).abs() < 1e-14));
    }

    #[test]
    fn predictor_weights_decay_for_fractional_order() {
        for beta in [0.2, 0.5, 0.9] {
            let t = WeightTable::predictor(order(beta), 0.01, 2000);
            assert!(t.offsets().windows(2).all(|w| w[1] < w[0]));
            assert!(t.offsets().iter().all(|&w| w > 0.0));
            let c = WeightTable::corrector(order(beta), 0.01, 2000);
            assert!(c.offsets()[..1999].iter().all(|&w| w > 0.0));
            assert!((1..200).all(|k| c.corrector_head(k) > 0.0));
        }
    }

    #[test]
    fn generic_over_f32() {
        let o = FracOrder::<f32>::new(0.5).unwrap();
        assert!((o.gamma_beta() - std::f32::consts::PI.sqrt()).abs() < 1e-5);
        let w = predictor_weight(&o, 1.0f32, 2).unwrap();
        assert!((w - 0.828_427_1).abs() < 1e-5);
    }
}
