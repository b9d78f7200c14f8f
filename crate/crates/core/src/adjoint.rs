//! Reverse-time adjoint sweep for parameter gradients.
//!
//! The costate solves the right-sided Caputo problem
//! `D^β_right λ = λ ∂f/∂z` backwards from `λ(T) = dL/dz(T)`, written as a
//! Volterra equation and discretised with the product rectangle rule:
//!
//! ```text
//! λ_{N-k-1} = λ(T) + Γ(β)⁻¹ Σ_{j=N-k}^{N} b_{j,k+1} λ_j (∂f/∂z)_j
//! g_{N-k-1} = g_{N-k} + λ_{N-k} (∂f/∂θ)_{N-k}
//! ```
//!
//! The stored forward trajectory supplies every `z_j`; Jacobians are only
//! touched through VJPs. Each `λ_j (∂f/∂z)_j` is computed once and kept,
//! which is the `N d` history the sweep holds.

use std::time::Instant;

use serde::Serialize;

use crate::dynamics::{check_params, Dynamics, ParamVector, TerminalLoss};
use crate::error::{FdeError, Result};
use crate::forward::Trajectory;
use crate::instrumentation::InstrumentationCounters;
use crate::quadrature::WeightTable;
use crate::scalar::{all_finite, Scalar};

/// How the parameter integral is accumulated.
///
/// `UnitWeight` (CLI name `paper`) adds `λ_j (∂f/∂θ)_j` with unit weight,
/// as the Euler update is usually written; `HWeighted` multiplies every term by `h` and so
/// converges to `∫ λ ∂f/∂θ dt`. The two differ by exactly the factor `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccumulationMode {
    #[default]
    #[serde(rename = "paper")]
    UnitWeight,
    HWeighted,
}

impl std::str::FromStr for AccumulationMode {
    type Err = FdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(AccumulationMode::UnitWeight),
            "h-weighted" => Ok(AccumulationMode::HWeighted),
            other => Err(FdeError::InvalidConfig(format!(
                "unknown accumulation mode '{other}' (expected paper or h-weighted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointRun<T: Scalar> {
    dim: usize,
    lambdas: Vec<T>,
    pub grad: ParamVector<T>,
    pub counters: InstrumentationCounters,
}

impl<T: Scalar> AdjointRun<T> {
    /// `λ_k` at grid index `k`.
    pub fn lambda(&self, k: usize) -> &[T] {
        &self.lambdas[k * self.dim..(k + 1) * self.dim]
    }

    pub fn steps(&self) -> usize {
        self.lambdas.len() / self.dim - 1
    }

    /// `λ_N, λ_{N-1}, ..., λ_0`, the order the sweep produces them in.
    pub fn lambdas_reversed(&self) -> impl Iterator<Item = &[T]> {
        self.lambdas.chunks_exact(self.dim).rev()
    }

    /// Counters for the forward solve followed by this sweep, with the
    /// trajectory held throughout.
    pub fn pipeline_counters(&self, traj: &Trajectory<T>) -> InstrumentationCounters {
        traj.counters()
            .followed_by(traj.retained_slots(), &self.counters)
    }
}

pub(crate) fn check_sweep_inputs<T, D, L>(
    traj: &Trajectory<T>,
    spec: &D,
    theta: &ParamVector<T>,
    loss: &L,
) -> Result<()>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
    L: TerminalLoss<T> + ?Sized,
{
    check_params(spec, theta)?;
    if traj.dim() != spec.dim() {
        return Err(FdeError::TrajectoryMismatch(format!(
            "trajectory dimension {} vs system dimension {}",
            traj.dim(),
            spec.dim()
        )));
    }
    if loss.dim() != spec.dim() {
        return Err(FdeError::DimensionMismatch {
            what: "terminal loss",
            expected: spec.dim(),
            got: loss.dim(),
        });
    }
    let n = traj.steps();
    if traj.states().count() != n + 1 || traj.derivs_len() < n {
        return Err(FdeError::TrajectoryMismatch(format!(
            "trajectory does not cover the {n}-step grid"
        )));
    }
    Ok(())
}

/// Full-history adjoint sweep.
pub fn solve_adjoint<T, D, L>(
    traj: &Trajectory<T>,
    spec: &D,
    theta: &ParamVector<T>,
    loss: &L,
    accum: AccumulationMode,
) -> Result<AdjointRun<T>>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
    L: TerminalLoss<T> + ?Sized,
{
    sweep(traj, spec, theta, loss, accum, None)
}

/// Adjoint sweep with the backward history truncated to the `window` most
/// recent terms, `j = N-k .. min(N-k+K-1, N)`. `window = N+1` reproduces
/// [`solve_adjoint`] bit for bit.
pub fn solve_adjoint_windowed<T, D, L>(
    traj: &Trajectory<T>,
    spec: &D,
    theta: &ParamVector<T>,
    loss: &L,
    accum: AccumulationMode,
    window: usize,
) -> Result<AdjointRun<T>>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
    L: TerminalLoss<T> + ?Sized,
{
    let n = traj.steps();
    if window == 0 || window > n + 1 {
        return Err(FdeError::InvalidConfig(format!(
            "adjoint window {window} must lie in 1..={}",
            n + 1
        )));
    }
    sweep(traj, spec, theta, loss, accum, Some(window))
}

fn sweep<T, D, L>(
    traj: &Trajectory<T>,
    spec: &D,
    theta: &ParamVector<T>,
    loss: &L,
    accum: AccumulationMode,
    window: Option<usize>,
) -> Result<AdjointRun<T>>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
    L: TerminalLoss<T> + ?Sized,
{
    check_sweep_inputs(traj, spec, theta, loss)?;
    let started = Instant::now();
    let cfg = traj.config();
    let n = traj.steps();
    let d = traj.dim();
    let p = spec.param_dim();
    let h = cfg.grid().step();
    let gamma_beta = cfg.order().gamma_beta();
    let b = WeightTable::backward(*cfg.order(), h, n + 1);
    let step_scale = match accum {
        AccumulationMode::UnitWeight => T::one(),
        AccumulationMode::HWeighted => h,
    };

    let mut counters = InstrumentationCounters::new();
    counters.charge_retained(p as u64);
    counters.charge_retained(d as u64);
    counters.charge_retained(spec.activation_footprint() as u64);

    let mut lambda_t = vec![T::zero(); d];
    loss.grad(traj.final_state(), &mut lambda_t);
    if !all_finite(&lambda_t) {
        return Err(FdeError::NonFiniteAdjoint { index: n });
    }

    let mut lambdas = vec![T::zero(); (n + 1) * d];
    lambdas[n * d..].copy_from_slice(&lambda_t);
    // products[j] = λ_j (∂f/∂z)_j, filled from j = N downwards
    let mut products = vec![T::zero(); (n + 1) * d];
    let mut grad = vec![T::zero(); p];
    let mut param_term = vec![T::zero(); p];
    let mut lambda = lambda_t.clone();
    let mut acc = vec![T::zero(); d];

    for k in 0..n {
        let j = n - k;
        let t_j = cfg.grid().time(j);
        let z_j = traj.state(j);

        spec.vjp_state(t_j, z_j, theta, &lambda, &mut products[j * d..(j + 1) * d]);
        counters.vjp_state_evals += 1;
        counters.charge_retained(d as u64);

        spec.vjp_params(t_j, z_j, theta, &lambda, &mut param_term);
        counters.vjp_params_evals += 1;
        for (g, &term) in grad.iter_mut().zip(&param_term) {
            *g += step_scale * term;
        }

        let first = n - k;
        let last = match window {
            Some(w) => (first + w - 1).min(n),
            None => n,
        };
        acc.iter_mut().for_each(|a| *a = T::zero());
        for jj in first..=last {
            let w = b.backward_at(jj, k, n);
            for (a, &v) in acc.iter_mut().zip(&products[jj * d..(jj + 1) * d]) {
                *a += w * v;
            }
        }
        for i in 0..d {
            lambda[i] = lambda_t[i] + acc[i] / gamma_beta;
        }
        if !all_finite(&lambda) {
            return Err(FdeError::NonFiniteAdjoint { index: n - k - 1 });
        }
        lambdas[(n - k - 1) * d..(n - k) * d].copy_from_slice(&lambda);
    }

    if !all_finite(&grad) {
        return Err(FdeError::NonFiniteAdjoint { index: 0 });
    }
    counters.wall_time_ns = started.elapsed().as_nanos() as u64;
    Ok(AdjointRun {
        dim: d,
        lambdas,
        grad: ParamVector::new(grad),
        counters,
    })
}
