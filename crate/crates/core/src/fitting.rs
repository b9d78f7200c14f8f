//! Parameter recovery by gradient descent on terminal-state data.
//!
//! A dataset is a list of `(z0, z(T))` pairs generated with known
//! parameters. Each epoch solves every pair forward with the current θ,
//! scores the terminal MSE, averages the per-pair gradients in pair order
//! and takes one optimizer step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{solve_adjoint, AccumulationMode};
use crate::direct::grad_via_unrolled;
use crate::dynamics::{check_params, Dynamics, ParamVector, TerminalMse};
use crate::error::{FdeError, Result};
use crate::format::{sig17, sig17_vec};
use crate::forward::{solve, SolverConfig};
use crate::scalar::{all_finite, Scalar};

/// Retries per dataset slot when a sampled trajectory blows up.
pub const RESAMPLE_RETRIES: usize = 10;

/// Range the starting parameters are drawn from.
pub const THETA_INIT_RANGE: (f64, f64) = (0.1, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = FdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(FdeError::InvalidConfig(format!(
                "unknown optimizer '{other}' (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    Adjoint,
    Direct,
}

impl std::str::FromStr for GradMode {
    type Err = FdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjoint" => Ok(GradMode::Adjoint),
            "direct" => Ok(GradMode::Direct),
            other => Err(FdeError::InvalidConfig(format!(
                "unknown gradient mode '{other}' (expected adjoint or direct)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Number of trajectories in the dataset.
    pub batch: usize,
    /// Initial conditions are drawn componentwise from `[init_low, init_high]`.
    pub init_low: f64,
    pub init_high: f64,
    pub seed: u64,
    pub grad_mode: GradMode,
    /// Only used with [`GradMode::Adjoint`].
    pub accum: AccumulationMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            optimizer: Optimizer::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch: 16,
            init_low: 0.5,
            init_high: 5.0,
            seed: 0,
            grad_mode: GradMode::Adjoint,
            accum: AccumulationMode::UnitWeight,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FdeError::InvalidConfig(msg));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch < 1 {
            return bad("batch must be at least 1".into());
        }
        if !(self.init_low < self.init_high)
            || !self.init_low.is_finite()
            || !self.init_high.is_finite()
        {
            return bad(format!(
                "initial-condition range [{}, {}] is empty",
                self.init_low, self.init_high
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decay rates must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        Ok(())
    }
}

/// One `(z0, z(T))` observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation<T: Scalar> {
    pub z0: Vec<T>,
    pub z_final: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    #[serde(serialize_with = "sig17_vec")]
    pub theta_hat: Vec<f64>,
    #[serde(serialize_with = "sig17_vec")]
    pub loss_history: Vec<f64>,
    pub grad_mode: GradMode,
    #[serde(serialize_with = "sig17")]
    pub final_loss: f64,
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(p: usize) -> Self {
        Self {
            m: vec![T::zero(); p],
            v: vec![T::zero(); p],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    state: &mut AdamState<T>,
    cfg: &FitConfig,
) {
    let b1 = T::lit(cfg.adam_beta1);
    let b2 = T::lit(cfg.adam_beta2);
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.adam_eps);
    state.t += 1;
    let c1 = T::one() - b1.powi(state.t as i32);
    let c2 = T::one() - b2.powi(state.t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

pub fn sgd_step<T: Scalar>(theta: &mut [T], grad: &[T], cfg: &FitConfig) {
    let lr = T::lit(cfg.lr);
    for (t, &g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

/// Draws `cfg.batch` initial conditions and records the terminal states
/// under `true_theta`. A slot whose trajectory blows up is redrawn up to
/// [`RESAMPLE_RETRIES`] times.
pub fn generate_synthetic_data<T, D>(
    spec: &D,
    true_theta: &ParamVector<T>,
    cfg: &FitConfig,
    solver_cfg: &SolverConfig<T>,
) -> Result<Vec<Observation<T>>>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
{
    cfg.validate()?;
    check_params(spec, true_theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = spec.dim();
    let mut data = Vec::with_capacity(cfg.batch);
    for slot in 0..cfg.batch {
        let mut last_err = None;
        for _ in 0..=RESAMPLE_RETRIES {
            let z0: Vec<T> = (0..d)
                .map(|_| T::lit(rng.gen_range(cfg.init_low..cfg.init_high)))
                .collect();
            match solve(spec, true_theta, &z0, solver_cfg) {
                Ok(tr) => {
                    data.push(Observation {
                        z0,
                        z_final: tr.final_state().to_vec(),
                    });
                    last_err = None;
                    break;
                }
                Err(e) if e.is_numerical() => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = last_err {
            return Err(FdeError::InvalidConfig(format!(
                "dataset slot {slot} blew up after {RESAMPLE_RETRIES} retries: {e}"
            )));
        }
    }
    Ok(data)
}

/// Starting parameters, uniform on [`THETA_INIT_RANGE`]. Uses its own
/// stream so the draw does not depend on how many data samples were taken.
pub fn sample_initial_theta<T: Scalar>(param_dim: usize, seed: u64) -> ParamVector<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (lo, hi) = THETA_INIT_RANGE;
    ParamVector::new(
        (0..param_dim)
            .map(|_| T::lit(rng.gen_range(lo..hi)))
            .collect(),
    )
}

/// Mean terminal MSE over the dataset and its gradient in θ.
pub fn batch_loss_and_grad<T, D>(
    spec: &D,
    theta: &ParamVector<T>,
    data: &[Observation<T>],
    solver_cfg: &SolverConfig<T>,
    grad_mode: GradMode,
    accum: AccumulationMode,
) -> Result<(T, Vec<T>)>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
{
    if data.is_empty() {
        return Err(FdeError::InvalidConfig("dataset is empty".into()));
    }
    let per_pair = data
        .par_iter()
        .map(|obs| {
            let tr = solve(spec, theta, &obs.z0, solver_cfg)?;
            let loss = TerminalMse::new(obs.z_final.clone())?;
            let value = crate::dynamics::TerminalLoss::eval(&loss, tr.final_state());
            let grad = match grad_mode {
                GradMode::Adjoint => solve_adjoint(&tr, spec, theta, &loss, accum)?.grad,
                GradMode::Direct => grad_via_unrolled(&tr, spec, theta, &loss)?.grad,
            };
            Ok((value, grad.into_inner()))
        })
        .collect::<Result<Vec<_>>>()?;
    let p = spec.param_dim();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); p];
    for (l, g) in &per_pair {
        loss += *l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += *b;
        }
    }
    let m = T::of_usize(data.len());
    loss /= m;
    grad.iter_mut().for_each(|g| *g /= m);
    Ok((loss, grad))
}

/// Full-batch training loop: one optimizer step per epoch.
pub fn fit_parameters<T, D>(
    data: &[Observation<T>],
    spec: &D,
    theta_init: &ParamVector<T>,
    cfg: &FitConfig,
    solver_cfg: &SolverConfig<T>,
) -> Result<FitResult>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
{
    cfg.validate()?;
    check_params(spec, theta_init)?;
    if data.is_empty() {
        return Err(FdeError::InvalidConfig("dataset is empty".into()));
    }
    let mut theta = theta_init.clone();
    let mut adam = AdamState::new(theta.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) =
            batch_loss_and_grad(spec, &theta, data, solver_cfg, cfg.grad_mode, cfg.accum).map_err(
                |e| {
                    if e.is_numerical() {
                        FdeError::FitDiverged { epoch }
                    } else {
                        e
                    }
                },
            )?;
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(FdeError::FitDiverged { epoch });
        }
        history.push(loss.to_f64_lossy());
        match cfg.optimizer {
            Optimizer::Adam => adam_step(&mut theta, &grad, &mut adam, cfg),
            Optimizer::Sgd => sgd_step(&mut theta, &grad, cfg),
        }
        if !all_finite(&theta) {
            return Err(FdeError::FitDiverged { epoch });
        }
    }
    let (final_loss, _) =
        batch_loss_and_grad(spec, &theta, data, solver_cfg, cfg.grad_mode, cfg.accum).map_err(
            |e| {
                if e.is_numerical() {
                    FdeError::FitDiverged { epoch: cfg.epochs }
                } else {
                    e
                }
            },
        )?;
    Ok(FitResult {
        theta_hat: theta.iter().map(|v| v.to_f64_lossy()).collect(),
        loss_history: history,
        grad_mode: cfg.grad_mode,
        final_loss: final_loss.to_f64_lossy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LotkaVolterra, TerminalLoss};
    use crate::forward::Method;

    fn lv_cfg(steps: usize) -> SolverConfig<f64> {
        SolverConfig::full(0.5, 2.0, steps, Method::Predictor).unwrap()
    }

    fn truth() -> ParamVector<f64> {
        ParamVector::new(LotkaVolterra::TRUE_PARAMS.to_vec())
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let cfg = FitConfig::default();
        let mut theta = vec![0.3f64, -1.2];
        let mut st = AdamState::new(2);
        adam_step(&mut theta, &[0.0, 0.0], &mut st, &cfg);
        assert_eq!(theta, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        let cfg = FitConfig::default();
        let mut theta = vec![1.0f64];
        let mut st = AdamState::new(1);
        adam_step(&mut theta, &[1.0], &mut st, &cfg);
        assert!((1.0 - theta[0] - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn adam_moves_against_constant_grad() {
        let cfg = FitConfig::default();
        let mut theta = vec![0.0f64];
        let mut st = AdamState::new(1);
        adam_step(&mut theta, &[-2.0], &mut st, &cfg);
        let first = theta[0];
        adam_step(&mut theta, &[-2.0], &mut st, &cfg);
        assert!(first > 0.0 && theta[0] > first);
    }

    #[test]
    fn sgd_step_scales_grad() {
        let cfg = FitConfig {
            lr: 0.5,
            optimizer: Optimizer::Sgd,
            ..FitConfig::default()
        };
        let mut theta = vec![1.0f64, 1.0];
        sgd_step(&mut theta, &[2.0, -1.0], &cfg);
        assert_eq!(theta, vec![0.0, 1.5]);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig {
            epochs: 0,
            ..FitConfig::default()
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            lr: 0.0,
            ..FitConfig::default()
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            init_low: 5.0,
            init_high: 5.0,
            ..FitConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn synthetic_data_is_reproducible() {
        let cfg = FitConfig {
            batch: 1,
            seed: 7,
            ..FitConfig::default()
        };
        let spec = LotkaVolterra::new();
        let a = generate_synthetic_data(&spec, &truth(), &cfg, &lv_cfg(50)).unwrap();
        let b = generate_synthetic_data(&spec, &truth(), &cfg, &lv_cfg(50)).unwrap();
        assert_eq!(a, b);
        assert!(a[0].z0.iter().all(|&v| (0.5..5.0).contains(&v)));
    }

    #[test]
    fn fixed_point_stays_put() {
        let spec = LotkaVolterra::new();
        let z0 = LotkaVolterra::fixed_point(&truth()).to_vec();
        let tr = solve(&spec, &truth(), &z0, &lv_cfg(200)).unwrap();
        for (a, b) in tr.final_state().iter().zip(&z0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_theta_in_range_and_seeded() {
        let a: ParamVector<f64> = sample_initial_theta(4, 3);
        let b: ParamVector<f64> = sample_initial_theta(4, 3);
        let c: ParamVector<f64> = sample_initial_theta(4, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&v| (0.1..1.5).contains(&v)));
    }

    #[test]
    fn starting_at_truth_stays_at_truth() {
        let spec = LotkaVolterra::new();
        let cfg = FitConfig {
            epochs: 3,
            batch: 4,
            seed: 11,
            ..FitConfig::default()
        };
        let sc = lv_cfg(40);
        let data = generate_synthetic_data(&spec, &truth(), &cfg, &sc).unwrap();
        let res = fit_parameters(&data, &spec, &truth(), &cfg, &sc).unwrap();
        assert_eq!(res.loss_history.len(), 3);
        assert_eq!(res.loss_history[0], 0.0);
        assert_eq!(res.theta_hat, LotkaVolterra::TRUE_PARAMS.to_vec());
    }

    #[test]
    fn fit_is_deterministic() {
        let spec = LotkaVolterra::new();
        let cfg = FitConfig {
            epochs: 4,
            batch: 5,
            seed: 2,
            ..FitConfig::default()
        };
        let sc = lv_cfg(40);
        let data = generate_synthetic_data(&spec, &truth(), &cfg, &sc).unwrap();
        let init = sample_initial_theta(4, cfg.seed);
        let a = fit_parameters(&data, &spec, &init, &cfg, &sc).unwrap();
        let b = fit_parameters(&data, &spec, &init, &cfg, &sc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_gradient_matches_mean_of_pairs() {
        let spec = LotkaVolterra::new();
        let cfg = FitConfig {
            batch: 3,
            seed: 5,
            ..FitConfig::default()
        };
        let sc = lv_cfg(30);
        let data = generate_synthetic_data(&spec, &truth(), &cfg, &sc).unwrap();
        let theta = ParamVector::new(vec![0.9, 0.6, 1.1, 0.25]);
        let (loss, grad) = batch_loss_and_grad(
            &spec,
            &theta,
            &data,
            &sc,
            GradMode::Direct,
            AccumulationMode::UnitWeight,
        )
        .unwrap();
        let mut want_l = 0.0;
        let mut want_g = [0.0; 4];
        for obs in &data {
            let tr = solve(&spec, &theta, &obs.z0, &sc).unwrap();
            let l = TerminalMse::new(obs.z_final.clone()).unwrap();
            want_l += l.eval(tr.final_state()) / 3.0;
            let g = grad_via_unrolled(&tr, &spec, &theta, &l).unwrap().grad;
            for i in 0..4 {
                want_g[i] += g[i] / 3.0;
            }
        }
        assert!((loss - want_l).abs() < 1e-14);
        for i in 0..4 {
            assert!((grad[i] - want_g[i]).abs() < 1e-12 * (1.0 + want_g[i].abs()));
        }
    }

    #[test]
    fn divergence_reports_epoch() {
        let spec = LotkaVolterra::new();
        let cfg = FitConfig {
            epochs: 2,
            batch: 2,
            seed: 1,
            ..FitConfig::default()
        };
        let sc = lv_cfg(40);
        let data = generate_synthetic_data(&spec, &truth(), &cfg, &sc).unwrap();
        let wild = ParamVector::new(vec![1e200, 0.5, 1.0, 0.3]);
        let err = fit_parameters(&data, &spec, &wild, &cfg, &sc).unwrap_err();
        assert_eq!(err, FdeError::FitDiverged { epoch: 0 });
    }
}
