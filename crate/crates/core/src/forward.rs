//! Forward solvers for `D^β z = f(t, z; θ)` on a uniform grid: the
//! fractional Adams-Bashforth predictor and the one-correction PECE scheme.
//!
//! History sums are evaluated directly, so a solve costs O(N²) weighted
//! additions on top of the N (predictor) or 2N (PECE) evaluations of `f`.

use std::io::{self, Write};
use std::time::Instant;

use serde::Serialize;

use crate::dynamics::{check_params, check_state, Dynamics, ParamVector};
use crate::error::{FdeError, Result};
use crate::format::fmt_sig17;
use crate::instrumentation::InstrumentationCounters;
use crate::quadrature::{gamma, FracOrder, TimeGrid, WeightTable};
use crate::scalar::{all_finite, pow_nonneg, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Predictor,
    Pece,
}

impl std::str::FromStr for Method {
    type Err = FdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predictor" => Ok(Method::Predictor),
            "pece" => Ok(Method::Pece),
            other => Err(FdeError::InvalidConfig(format!(
                "unknown method '{other}' (expected predictor or pece)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T: Scalar> {
    order: FracOrder<T>,
    grid: TimeGrid<T>,
    method: Method,
    memory_window: Option<usize>,
}

impl<T: Scalar> SolverConfig<T> {
    /// `memory_window`, when present, keeps only the `K` most recent lags in
    /// every history sum; `z_0` stays as the anchor term.
    pub fn new(
        order: FracOrder<T>,
        grid: TimeGrid<T>,
        method: Method,
        memory_window: Option<usize>,
    ) -> Result<Self> {
        if let Some(k) = memory_window {
            if k == 0 || k > grid.steps() {
                return Err(FdeError::InvalidConfig(format!(
                    "memory window {k} must lie in 1..={}",
                    grid.steps()
                )));
            }
        }
        Ok(Self {
            order,
            grid,
            method,
            memory_window,
        })
    }

    /// Shorthand for a full-history configuration.
    pub fn full(beta: T, horizon: T, steps: usize, method: Method) -> Result<Self> {
        Self::new(
            FracOrder::new(beta)?,
            TimeGrid::new(horizon, steps)?,
            method,
            None,
        )
    }

    pub fn order(&self) -> &FracOrder<T> {
        &self.order
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn memory_window(&self) -> Option<usize> {
        self.memory_window
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// First history index entering the sum for step `k`.
    #[inline]
    pub(crate) fn window_start(&self, k: usize) -> usize {
        match self.memory_window {
            Some(w) => k.saturating_sub(w),
            None => 0,
        }
    }
}

/// Stored forward solution. `states` holds `z_0..z_N`; `derivs` holds
/// `f(t_j, z_j; θ)` for `j = 0..N-1`. Both are flat, row-major by grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    dim: usize,
    states: Vec<T>,
    derivs: Vec<T>,
    config: SolverConfig<T>,
    counters: InstrumentationCounters,
}

impl<T: Scalar> Trajectory<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.config.grid.steps()
    }

    pub fn config(&self) -> &SolverConfig<T> {
        &self.config
    }

    pub fn counters(&self) -> &InstrumentationCounters {
        &self.counters
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn deriv(&self, j: usize) -> &[T] {
        &self.derivs[j * self.dim..(j + 1) * self.dim]
    }

    pub fn initial_state(&self) -> &[T] {
        self.state(0)
    }

    pub fn final_state(&self) -> &[T] {
        self.state(self.steps())
    }

    pub fn derivs_len(&self) -> usize {
        self.derivs.len() / self.dim
    }

    pub fn states(&self) -> impl Iterator<Item = &[T]> {
        self.states.chunks_exact(self.dim)
    }

    /// Slots the stored states and derivatives occupy.
    pub fn retained_slots(&self) -> u64 {
        (self.states.len() + self.derivs.len()) as u64
    }

    /// Writes `t,z0,...,z{d-1}` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim).map(|i| format!("z{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (k, z) in self.states().enumerate() {
            let mut row = fmt_sig17(self.config.grid.time(k).to_f64_lossy());
            for &v in z {
                row.push(',');
                row.push_str(&fmt_sig17(v.to_f64_lossy()));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

struct ForwardRun<'a, T: Scalar, D: Dynamics<T> + ?Sized> {
    spec: &'a D,
    theta: &'a [T],
    cfg: &'a SolverConfig<T>,
    dim: usize,
    states: Vec<T>,
    derivs: Vec<T>,
    counters: InstrumentationCounters,
}

impl<'a, T: Scalar, D: Dynamics<T> + ?Sized> ForwardRun<'a, T, D> {
    fn start(
        spec: &'a D,
        theta: &'a ParamVector<T>,
        z0: &[T],
        cfg: &'a SolverConfig<T>,
    ) -> Result<Self> {
        check_params(spec, theta)?;
        check_state(spec, z0, "initial state")?;
        if !all_finite(z0) {
            return Err(FdeError::NonFiniteState { step: 0 });
        }
        let dim = spec.dim();
        let n = cfg.grid.steps();
        let mut states = Vec::with_capacity((n + 1) * dim);
        states.extend_from_slice(z0);
        let mut counters = InstrumentationCounters::new();
        // One activation workspace, reused for every evaluation.
        counters.charge_retained(spec.activation_footprint() as u64);
        counters.charge_retained(dim as u64);
        Ok(Self {
            spec,
            theta,
            cfg,
            dim,
            states,
            derivs: Vec::with_capacity(n * dim),
            counters,
        })
    }

    fn eval_into(&mut self, t: T, z: &[T], out: &mut [T]) {
        self.spec.eval(t, z, self.theta, out);
        self.counters.f_evals += 1;
    }

    fn push_deriv(&mut self, j: usize) {
        let mut f = vec![T::zero(); self.dim];
        let z = self.states[j * self.dim..(j + 1) * self.dim].to_vec();
        self.eval_into(self.cfg.grid.time(j), &z, &mut f);
        self.derivs.extend_from_slice(&f);
        self.counters.charge_retained(self.dim as u64);
    }

    fn push_state(&mut self, k: usize, z: &[T]) -> Result<()> {
        if !all_finite(z) {
            return Err(FdeError::NonFiniteState { step: k });
        }
        self.states.extend_from_slice(z);
        self.counters.charge_retained(self.dim as u64);
        Ok(())
    }

    /// `acc = Σ_{j=start}^{k-1} w(k-j) f_j`, accumulated in ascending `j`.
    fn history_sum(&self, k: usize, start: usize, weight: impl Fn(usize) -> T, acc: &mut [T]) {
        acc.iter_mut().for_each(|a| *a = T::zero());
        for j in start..k {
            let w = weight(j);
            let f = &self.derivs[j * self.dim..(j + 1) * self.dim];
            for (a, &fj) in acc.iter_mut().zip(f) {
                *a += w * fj;
            }
        }
    }

    fn finish(mut self, started: Instant) -> Result<Trajectory<T>> {
        self.counters
            .release_retained(self.spec.activation_footprint() as u64)?;
        self.counters.wall_time_ns = started.elapsed().as_nanos() as u64;
        Ok(Trajectory {
            dim: self.dim,
            states: self.states,
            derivs: self.derivs,
            config: self.cfg.clone(),
            counters: self.counters,
        })
    }
}

/// Dispatches on `cfg.method`.
pub fn solve<T: Scalar, D: Dynamics<T> + ?Sized>(
    spec: &D,
    theta: &ParamVector<T>,
    z0: &[T],
    cfg: &SolverConfig<T>,
) -> Result<Trajectory<T>> {
    match cfg.method {
        Method::Predictor => solve_predictor(spec, theta, z0, cfg),
        Method::Pece => solve_pece(spec, theta, z0, cfg),
    }
}

/// `z_k = z_0 + Γ(β)⁻¹ Σ_{j<k} μ_{k-j} f(t_j, z_j; θ)`.
pub fn solve_predictor<T: Scalar, D: Dynamics<T> + ?Sized>(
    spec: &D,
    theta: &ParamVector<T>,
    z0: &[T],
    cfg: &SolverConfig<T>,
) -> Result<Trajectory<T>> {
    if cfg.method != Method::Predictor {
        return Err(FdeError::InvalidConfig(
            "solve_predictor needs method = predictor".into(),
        ));
    }
    let started = Instant::now();
    let n = cfg.grid.steps();
    let mu = WeightTable::predictor(cfg.order, cfg.grid.step(), n);
    let gamma_beta = cfg.order.gamma_beta();
    let mut run = ForwardRun::start(spec, theta, z0, cfg)?;
    let dim = run.dim;
    let mut acc = vec![T::zero(); dim];
    let mut z = vec![T::zero(); dim];
    for k in 1..=n {
        run.push_deriv(k - 1);
        run.history_sum(k, cfg.window_start(k), |j| mu.lag(k - j), &mut acc);
        for i in 0..dim {
            z[i] = z0[i] + acc[i] / gamma_beta;
        }
        run.push_state(k, &z)?;
    }
    run.finish(started)
}

/// Predict with the rectangle rule, evaluate, correct once with the
/// product-trapezoid rule, evaluate. The corrected state at `t_N` is not
/// evaluated, so a solve costs exactly `2N` evaluations of `f`.
pub fn solve_pece<T: Scalar, D: Dynamics<T> + ?Sized>(
    spec: &D,
    theta: &ParamVector<T>,
    z0: &[T],
    cfg: &SolverConfig<T>,
) -> Result<Trajectory<T>> {
    if cfg.method != Method::Pece {
        return Err(FdeError::InvalidConfig(
            "solve_pece needs method = pece".into(),
        ));
    }
    let started = Instant::now();
    let n = cfg.grid.steps();
    let h = cfg.grid.step();
    let mu = WeightTable::predictor(cfg.order, h, n);
    let eta = WeightTable::corrector(cfg.order, h, n);
    let eta_tail = eta.corrector_tail();
    let gamma_beta = cfg.order.gamma_beta();
    let mut run = ForwardRun::start(spec, theta, z0, cfg)?;
    let dim = run.dim;
    let mut acc = vec![T::zero(); dim];
    let mut zp = vec![T::zero(); dim];
    let mut fp = vec![T::zero(); dim];
    let mut z = vec![T::zero(); dim];
    run.push_deriv(0);
    for k in 1..=n {
        let start = cfg.window_start(k);
        run.history_sum(k, start, |j| mu.lag(k - j), &mut acc);
        for i in 0..dim {
            zp[i] = z0[i] + acc[i] / gamma_beta;
        }
        if !all_finite(&zp) {
            return Err(FdeError::NonFiniteState { step: k });
        }
        run.eval_into(cfg.grid.time(k), &zp, &mut fp);

        let head = eta.corrector_head(k);
        run.history_sum(
            k,
            start,
            |j| if j == 0 { head } else { eta.lag(k - j) },
            &mut acc,
        );
        for i in 0..dim {
            z[i] = z0[i] + (acc[i] + eta_tail * fp[i]) / gamma_beta;
        }
        run.push_state(k, &z)?;
        if k < n {
            run.push_deriv(k);
        }
    }
    run.finish(started)
}

/// Max-norm residual `|D^β z(t_k) - f(t_k, z_k)|` over `k = 1..N`, with the
/// Caputo derivative of the stored trajectory taken by the L1 scheme.
/// A diagnostic only; it does not touch the solve counters.
#[allow(clippy::needless_range_loop)]
pub fn caputo_residual<T: Scalar, D: Dynamics<T> + ?Sized>(
    traj: &Trajectory<T>,
    spec: &D,
    theta: &ParamVector<T>,
) -> Result<T> {
    check_params(spec, theta)?;
    if spec.dim() != traj.dim {
        return Err(FdeError::TrajectoryMismatch(format!(
            "trajectory dimension {} vs system dimension {}",
            traj.dim,
            spec.dim()
        )));
    }
    let n = traj.steps();
    if n < 2 {
        return Err(FdeError::InvalidGrid(
            "caputo residual needs at least two steps".into(),
        ));
    }
    let beta = traj.config.order.beta();
    let h = traj.config.grid.step();
    let one_minus = T::one() - beta;
    let scale = T::one() / (gamma(T::lit(2.0) - beta)? * h.powf(beta));
    // L1 lag weights a_m = (m+1)^{1-β} - m^{1-β}
    let a: Vec<T> = (0..n)
        .map(|m| {
            let m = T::of_usize(m);
            pow_nonneg(m + T::one(), one_minus) - pow_nonneg(m, one_minus)
        })
        .collect();
    let d = traj.dim;
    let mut f = vec![T::zero(); d];
    let mut worst = T::zero();
    for k in 1..=n {
        spec.eval(traj.config.grid.time(k), traj.state(k), theta, &mut f);
        for i in 0..d {
            let mut caputo = T::zero();
            for j in 0..k {
                caputo += a[k - j - 1] * (traj.state(j + 1)[i] - traj.state(j)[i]);
            }
            worst = worst.max((scale * caputo - f[i]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearSystem, LotkaVolterra};

    fn scalar_decay() -> (LinearSystem, ParamVector<f64>) {
        (LinearSystem::new(1).unwrap(), ParamVector::new(vec![-1.0]))
    }

    struct Zero;
    impl Dynamics<f64> for Zero {
        fn dim(&self) -> usize {
            2
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, _z: &[f64], _th: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn vjp_state(&self, _t: f64, _z: &[f64], _th: &[f64], _l: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn vjp_params(&self, _t: f64, _z: &[f64], _th: &[f64], _l: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    #[test]
    fn predictor_single_euler_step() {
        let (s, th) = scalar_decay();
        let cfg = SolverConfig::full(1.0, 0.1, 1, Method::Predictor).unwrap();
        let tr = solve_predictor(&s, &th, &[1.0], &cfg).unwrap();
        assert!((tr.final_state()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn predictor_euler_product() {
        let (s, th) = scalar_decay();
        let cfg = SolverConfig::full(1.0, 1.0, 10, Method::Predictor).unwrap();
        let tr = solve_predictor(&s, &th, &[1.0], &cfg).unwrap();
        assert!((tr.final_state()[0] - 0.348_678_440_1).abs() < 1e-10);
        assert_eq!(tr.counters().f_evals, 10);
    }

    #[test]
    fn pece_first_step_by_hand() {
        let (s, th) = scalar_decay();
        let cfg = SolverConfig::full(1.0, 0.1, 1, Method::Pece).unwrap();
        let tr = solve_pece(&s, &th, &[1.0], &cfg).unwrap();
        assert!((tr.final_state()[0] - 0.905).abs() < 1e-15);
        assert_eq!(tr.counters().f_evals, 2);
    }

    #[test]
    fn zero_dynamics_stay_put() {
        for method in [Method::Predictor, Method::Pece] {
            for beta in [0.3, 1.0] {
                let cfg = SolverConfig::full(beta, 1.0, 17, method).unwrap();
                let tr = solve(&Zero, &ParamVector::new(vec![0.0]), &[1.5, -2.0], &cfg).unwrap();
                assert!(tr.states().all(|z| z == [1.5, -2.0]));
                assert_eq!(
                    caputo_residual(&tr, &Zero, &ParamVector::new(vec![0.0])).unwrap(),
                    0.0
                );
            }
        }
    }

    #[test]
    fn evaluation_counts_and_storage() {
        let lv = LotkaVolterra::new();
        let th = ParamVector::new(LotkaVolterra::TRUE_PARAMS.to_vec());
        let n = 37;
        let cfg = SolverConfig::full(0.6, 1.0, n, Method::Predictor).unwrap();
        let tr = solve(&lv, &th, &[1.0, 2.0], &cfg).unwrap();
        assert_eq!(tr.counters().f_evals, n as u64);
        assert_eq!(tr.derivs_len(), n);
        assert_eq!(
            tr.counters().peak_retained_slots,
            ((n + 1) * 2 + n * 2) as u64
        );

        let tr = solve(
            &lv,
            &th,
            &[1.0, 2.0],
            &cfg.clone().with_method(Method::Pece),
        )
        .unwrap();
        assert_eq!(tr.counters().f_evals, 2 * n as u64);
        assert_eq!(tr.derivs_len(), n);
    }

    #[test]
    fn stored_derivs_match_recomputation() {
        let lv = LotkaVolterra::new();
        let th = ParamVector::new(vec![1.1, 0.4, 0.9, 0.35]);
        for method in [Method::Predictor, Method::Pece] {
            let cfg = SolverConfig::full(0.5, 2.0, 50, method).unwrap();
            let tr = solve(&lv, &th, &[2.0, 1.5], &cfg).unwrap();
            assert_eq!(tr.initial_state(), &[2.0, 1.5]);
            let mut f = [0.0; 2];
            for j in 0..tr.derivs_len() {
                lv.eval(cfg.grid().time(j), tr.state(j), &th, &mut f);
                assert_eq!(tr.deriv(j), &f);
            }
        }
    }

    #[test]
    fn full_width_window_is_bit_identical() {
        let lv = LotkaVolterra::new();
        let th = ParamVector::new(LotkaVolterra::TRUE_PARAMS.to_vec());
        for method in [Method::Predictor, Method::Pece] {
            let full = SolverConfig::full(0.5, 2.0, 120, method).unwrap();
            let windowed =
                SolverConfig::new(*full.order(), full.grid().clone(), method, Some(120)).unwrap();
            let a = solve(&lv, &th, &[3.0, 0.8], &full).unwrap();
            let b = solve(&lv, &th, &[3.0, 0.8], &windowed).unwrap();
            assert!(a.states().zip(b.states()).all(|(x, y)| x == y));
        }
    }

    #[test]
    fn narrow_window_changes_the_solution() {
        let (s, th) = scalar_decay();
        let full = SolverConfig::full(0.5, 1.0, 100, Method::Predictor).unwrap();
        let narrow = SolverConfig::new(
            *full.order(),
            full.grid().clone(),
            Method::Predictor,
            Some(5),
        )
        .unwrap();
        let a = solve(&s, &th, &[1.0], &full).unwrap();
        let b = solve(&s, &th, &[1.0], &narrow).unwrap();
        assert_ne!(a.final_state(), b.final_state());
        assert!(SolverConfig::new(
            *full.order(),
            full.grid().clone(),
            Method::Predictor,
            Some(101)
        )
        .is_err());
        assert!(SolverConfig::new(
            *full.order(),
            full.grid().clone(),
            Method::Predictor,
            Some(0)
        )
        .is_err());
    }

    #[test]
    fn blow_up_reports_step() {
        let s = LinearSystem::new(1).unwrap();
        let th = ParamVector::new(vec![1e200]);
        let cfg = SolverConfig::full(1.0, 1.0, 10, Method::Predictor).unwrap();
        match solve(&s, &th, &[1e200], &cfg) {
            Err(FdeError::NonFiniteState { step }) => assert_eq!(step, 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn method_and_dimension_checks() {
        let (s, th) = scalar_decay();
        let cfg = SolverConfig::full(1.0, 1.0, 4, Method::Pece).unwrap();
        assert!(solve_predictor(&s, &th, &[1.0], &cfg).is_err());
        assert!(matches!(
            solve(&s, &th, &[1.0, 2.0], &cfg),
            Err(FdeError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            solve(&s, &ParamVector::new(vec![1.0, 2.0]), &[1.0], &cfg),
            Err(FdeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn caputo_residual_refines() {
        let (s, th) = scalar_decay();
        let fine = SolverConfig::full(1.0, 1.0, 1000, Method::Predictor).unwrap();
        let coarse = SolverConfig::full(1.0, 1.0, 2, Method::Predictor).unwrap();
        let r_fine = caputo_residual(&solve(&s, &th, &[1.0], &fine).unwrap(), &s, &th).unwrap();
        let r_coarse = caputo_residual(&solve(&s, &th, &[1.0], &coarse).unwrap(), &s, &th).unwrap();
        assert!(r_fine <= 1e-2, "{r_fine}");
        assert!(r_coarse > r_fine);
        let one = SolverConfig::full(1.0, 1.0, 1, Method::Predictor).unwrap();
        assert!(caputo_residual(&solve(&s, &th, &[1.0], &one).unwrap(), &s, &th).is_err());
    }

    #[test]
    fn csv_layout() {
        let (s, th) = scalar_decay();
        let cfg = SolverConfig::full(1.0, 0.2, 2, Method::Predictor).unwrap();
        let tr = solve(&s, &th, &[1.0], &cfg).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,z0");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,1");
        assert_eq!(lines[3], "0.20000000000000001,0.80999999999999994");
    }

    #[test]
    fn f32_solve_tracks_f64() {
        let s = LinearSystem::new(1).unwrap();
        let c64 = SolverConfig::full(0.5f64, 1.0, 50, Method::Pece).unwrap();
        let c32 = SolverConfig::full(0.5f32, 1.0, 50, Method::Pece).unwrap();
        let a = solve(&s, &ParamVector::new(vec![-1.0f64]), &[1.0], &c64).unwrap();
        let b = solve(&s, &ParamVector::new(vec![-1.0f32]), &[1.0], &c32).unwrap();
        assert!((a.final_state()[0] - b.final_state()[0] as f64).abs() < 1e-5);
    }
}
