//! Exact reverse-mode sweep through the unrolled predictor recurrence.
//!
//! Transposing `z_k = z_0 + Γ(β)⁻¹ Σ_{j<k} μ_{k-j} f_j` gives, for
//! `j = N-1, ..., 0`,
//!
//! ```text
//! w_j  = Γ(β)⁻¹ Σ_{k>j} μ_{k-j} z̄_k
//! z̄_j += w_j ∂f/∂z (t_j, z_j)
//! θ̄   += w_j ∂f/∂θ (t_j, z_j)
//! ```
//!
//! starting from `z̄_N = dL/dz_N`. The result is the gradient of the
//! discretised loss up to rounding. Memory is charged as if every step's
//! activations were kept for the sweep, as tape-based autodiff would.

use std::time::Instant;

use crate::adjoint::check_sweep_inputs;
use crate::dynamics::{Dynamics, ParamVector, TerminalLoss};
use crate::error::{FdeError, Result};
use crate::forward::{Method, Trajectory};
use crate::instrumentation::InstrumentationCounters;
use crate::quadrature::WeightTable;
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct CotangentSweep<T: Scalar> {
    dim: usize,
    wbar: Vec<T>,
    pub grad: ParamVector<T>,
    pub counters: InstrumentationCounters,
}

impl<T: Scalar> CotangentSweep<T> {
    /// Weighted cotangent `w_j`, `j = 0..N-1`.
    pub fn wbar(&self, j: usize) -> &[T] {
        &self.wbar[j * self.dim..(j + 1) * self.dim]
    }

    pub fn pipeline_counters(&self, traj: &Trajectory<T>) -> InstrumentationCounters {
        traj.counters()
            .followed_by(traj.retained_slots(), &self.counters)
    }
}

pub fn grad_via_unrolled<T, D, L>(
    traj: &Trajectory<T>,
    spec: &D,
    theta: &ParamVector<T>,
    loss: &L,
) -> Result<CotangentSweep<T>>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
    L: TerminalLoss<T> + ?Sized,
{
    check_sweep_inputs(traj, spec, theta, loss)?;
    let cfg = traj.config();
    if cfg.method() != Method::Predictor {
        return Err(FdeError::TrajectoryMismatch(
            "unrolled differentiation supports predictor trajectories only".into(),
        ));
    }
    let started = Instant::now();
    let n = traj.steps();
    let d = traj.dim();
    let p = spec.param_dim();
    let mu = WeightTable::predictor(*cfg.order(), cfg.grid().step(), n);
    let gamma_beta = cfg.order().gamma_beta();

    let mut counters = InstrumentationCounters::new();
    counters.charge_retained((n * spec.activation_footprint()) as u64);
    counters.charge_retained(p as u64);
    counters.charge_retained(d as u64);

    // zbar[k] for k = 1..=N; z̄_0 only feeds the initial-state gradient.
    let mut zbar = vec![T::zero(); (n + 1) * d];
    loss.grad(traj.final_state(), &mut zbar[n * d..]);
    if !all_finite(&zbar[n * d..]) {
        return Err(FdeError::NonFiniteCotangent { index: n });
    }
    counters.charge_retained((n * d) as u64);

    let mut wbar = vec![T::zero(); n * d];
    let mut grad = vec![T::zero(); p];
    let mut state_term = vec![T::zero(); d];
    let mut param_term = vec![T::zero(); p];

    for j in (0..n).rev() {
        let last = match cfg.memory_window() {
            Some(w) => (j + w).min(n),
            None => n,
        };
        let w_j = &mut wbar[j * d..(j + 1) * d];
        for k in (j + 1)..=last {
            let weight = mu.lag(k - j);
            for (w, &zb) in w_j.iter_mut().zip(&zbar[k * d..(k + 1) * d]) {
                *w += weight * zb;
            }
        }
        w_j.iter_mut().for_each(|w| *w /= gamma_beta);

        let t_j = cfg.grid().time(j);
        let z_j = traj.state(j);
        spec.vjp_state(t_j, z_j, theta, w_j, &mut state_term);
        counters.vjp_state_evals += 1;
        spec.vjp_params(t_j, z_j, theta, w_j, &mut param_term);
        counters.vjp_params_evals += 1;

        for (zb, &s) in zbar[j * d..(j + 1) * d].iter_mut().zip(&state_term) {
            *zb += s;
        }
        for (g, &s) in grad.iter_mut().zip(&param_term) {
            *g += s;
        }
        if !all_finite(w_j) || !all_finite(&zbar[j * d..(j + 1) * d]) {
            return Err(FdeError::NonFiniteCotangent { index: j });
        }
    }
    if !all_finite(&grad) {
        return Err(FdeError::NonFiniteCotangent { index: 0 });
    }
    counters.wall_time_ns = started.elapsed().as_nanos() as u64;
    Ok(CotangentSweep {
        dim: d,
        wbar,
        grad: ParamVector::new(grad),
        counters,
    })
}
