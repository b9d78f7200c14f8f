//! Right-hand sides, their vector-Jacobian products, and terminal losses.

use std::ops::{Deref, DerefMut};

use serde::Serialize;

use crate::error::{FdeError, Result};
use crate::scalar::Scalar;

/// Flattened parameter vector θ.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct ParamVector<T: Scalar>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![T::zero(); p])
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T: Scalar> From<Vec<T>> for ParamVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

impl<T: Scalar> Deref for ParamVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Scalar> DerefMut for ParamVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

/// Dynamics `f(t, z; θ)` of the fractional system `D^β z = f`.
///
/// Implementations write into `out`, overwriting it. The cotangent `lambda`
/// contracts the Jacobians from the left: `vjp_state` returns `λᵀ ∂f/∂z`
/// (length `d`) and `vjp_params` returns `λᵀ ∂f/∂θ` (length `p`).
/// Implementations must be reentrant; solves may call them from several
/// threads at once.
pub trait Dynamics<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    fn eval(&self, t: T, z: &[T], theta: &[T], out: &mut [T]);

    fn vjp_state(&self, t: T, z: &[T], theta: &[T], lambda: &[T], out: &mut [T]);

    fn vjp_params(&self, t: T, z: &[T], theta: &[T], lambda: &[T], out: &mut [T]);

    /// Declared number of intermediates one evaluation would keep alive
    /// under tape-based autodiff. Only the memory counters read it.
    fn activation_footprint(&self) -> usize {
        0
    }
}

pub(crate) fn check_params<T: Scalar, D: Dynamics<T> + ?Sized>(
    spec: &D,
    theta: &[T],
) -> Result<()> {
    if theta.len() != spec.param_dim() {
        return Err(FdeError::DimensionMismatch {
            what: "parameter vector",
            expected: spec.param_dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_state<T: Scalar, D: Dynamics<T> + ?Sized>(
    spec: &D,
    z: &[T],
    what: &'static str,
) -> Result<()> {
    if z.len() != spec.dim() {
        return Err(FdeError::DimensionMismatch {
            what,
            expected: spec.dim(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Scalar loss of the terminal state only.
pub trait TerminalLoss<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z_terminal: &[T]) -> T;

    /// Writes `dL/dz(T)` into `out`.
    fn grad(&self, z_terminal: &[T], out: &mut [T]);
}

/// `f(t, z; θ) = A z` with `A` read row-major from θ (`p = d²`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSystem {
    dim: usize,
    footprint: usize,
}

impl LinearSystem {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FdeError::InvalidConfig(
                "linear system needs dimension >= 1".into(),
            ));
        }
        Ok(Self { dim, footprint: 0 })
    }

    pub fn with_footprint(mut self, footprint: usize) -> Self {
        self.footprint = footprint;
        self
    }
}

pub fn make_linear_system(dim: usize) -> Result<LinearSystem> {
    LinearSystem::new(dim)
}

impl<T: Scalar> Dynamics<T> for LinearSystem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        self.dim * self.dim
    }

    fn eval(&self, _t: T, z: &[T], theta: &[T], out: &mut [T]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = theta[i * d..(i + 1) * d]
                .iter()
                .zip(z)
                .map(|(&a, &x)| a * x)
                .sum();
        }
    }

    fn vjp_state(&self, _t: T, _z: &[T], theta: &[T], lambda: &[T], out: &mut [T]) {
        let d = self.dim;
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|i| lambda[i] * theta[i * d + j]).sum();
        }
    }

    fn vjp_params(&self, _t: T, z: &[T], _theta: &[T], lambda: &[T], out: &mut [T]) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = lambda[i] * z[j];
            }
        }
    }

    fn activation_footprint(&self) -> usize {
        self.footprint
    }
}

/// Predator-prey system `D^β x = x(a - c y)`, `D^β y = -y(b - d x)`,
/// θ = `[a, b, c, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LotkaVolterra {
    footprint: usize,
}

impl LotkaVolterra {
    pub const TRUE_PARAMS: [f64; 4] = [1.0, 0.5, 1.0, 0.3];

    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_footprint(mut self, footprint: usize) -> Self {
        self.footprint = footprint;
        self
    }

    /// Interior equilibrium `[b/d, a/c]`.
    pub fn fixed_point<T: Scalar>(theta: &[T]) -> [T; 2] {
        [theta[1] / theta[3], theta[0] / theta[2]]
    }
}

pub fn make_lotka_volterra() -> LotkaVolterra {
    LotkaVolterra::new()
}

impl<T: Scalar> Dynamics<T> for LotkaVolterra {
    fn dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        4
    }

    fn eval(&self, _t: T, z: &[T], theta: &[T], out: &mut [T]) {
        let (x, y) = (z[0], z[1]);
        let (a, b, c, d) = (theta[0], theta[1], theta[2], theta[3]);
        out[0] = x * (a - c * y);
        out[1] = -y * (b - d * x);
    }

    fn vjp_state(&self, _t: T, z: &[T], theta: &[T], lambda: &[T], out: &mut [T]) {
        let (x, y) = (z[0], z[1]);
        let (a, b, c, d) = (theta[0], theta[1], theta[2], theta[3]);
        let (l0, l1) = (lambda[0], lambda[1]);
        // ∂f/∂z = [[a - c y, -c x], [d y, -(b - d x)]]
        out[0] = l0 * (a - c * y) + l1 * (d * y);
        out[1] = -l0 * (c * x) - l1 * (b - d * x);
    }

    fn vjp_params(&self, _t: T, z: &[T], _theta: &[T], lambda: &[T], out: &mut [T]) {
        let (x, y) = (z[0], z[1]);
        let (l0, l1) = (lambda[0], lambda[1]);
        // ∂f/∂θ = [[x, 0, -x y, 0], [0, -y, 0, x y]]
        out[0] = l0 * x;
        out[1] = -l1 * y;
        out[2] = -l0 * x * y;
        out[3] = l1 * x * y;
    }

    fn activation_footprint(&self) -> usize {
        self.footprint
    }
}

/// `L = (1/d) Σ (z_i - target_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalMse<T: Scalar> {
    target: Vec<T>,
}

impl<T: Scalar> TerminalMse<T> {
    pub fn new(target: Vec<T>) -> Result<Self> {
        if target.is_empty() {
            return Err(FdeError::DimensionMismatch {
                what: "loss target",
                expected: 1,
                got: 0,
            });
        }
        Ok(Self { target })
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }
}

pub fn make_terminal_mse<T: Scalar>(target: Vec<T>) -> Result<TerminalMse<T>> {
    TerminalMse::new(target)
}

impl<T: Scalar> TerminalLoss<T> for TerminalMse<T> {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn eval(&self, z: &[T]) -> T {
        let d = T::of_usize(self.target.len());
        z.iter()
            .zip(&self.target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / d
    }

    fn grad(&self, z: &[T], out: &mut [T]) {
        let scale = T::lit(2.0) / T::of_usize(self.target.len());
        for ((o, &a), &b) in out.iter_mut().zip(z).zip(&self.target) {
            *o = scale * (a - b);
        }
    }
}

/// `L = w · z(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalLinear<T: Scalar> {
    weights: Vec<T>,
}

impl<T: Scalar> TerminalLinear<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(FdeError::DimensionMismatch {
                what: "loss weights",
                expected: 1,
                got: 0,
            });
        }
        Ok(Self { weights })
    }
}

impl<T: Scalar> TerminalLoss<T> for TerminalLinear<T> {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn eval(&self, z: &[T]) -> T {
        z.iter().zip(&self.weights).map(|(&a, &w)| a * w).sum()
    }

    fn grad(&self, _z: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.weights);
    }
}

/// Builtin systems addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Linear(LinearSystem),
    LotkaVolterra(LotkaVolterra),
}

impl Builtin {
    /// `"linear"` (of dimension `linear_dim`) or `"lotka-volterra"`.
    pub fn by_name(name: &str, linear_dim: usize) -> Result<Self> {
        match name {
            "linear" => Ok(Builtin::Linear(LinearSystem::new(linear_dim)?)),
            "lotka-volterra" | "lv" => Ok(Builtin::LotkaVolterra(LotkaVolterra::new())),
            other => Err(FdeError::InvalidConfig(format!(
                "unknown system '{other}' (expected 'linear' or 'lotka-volterra')"
            ))),
        }
    }

    pub fn with_footprint(self, footprint: usize) -> Self {
        match self {
            Builtin::Linear(s) => Builtin::Linear(s.with_footprint(footprint)),
            Builtin::LotkaVolterra(s) => Builtin::LotkaVolterra(s.with_footprint(footprint)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Linear(_) => "linear",
            Builtin::LotkaVolterra(_) => "lotka-volterra",
        }
    }
}

impl<T: Scalar> Dynamics<T> for Builtin {
    fn dim(&self) -> usize {
        match self {
            Builtin::Linear(s) => Dynamics::<T>::dim(s),
            Builtin::LotkaVolterra(s) => Dynamics::<T>::dim(s),
        }
    }

    fn param_dim(&self) -> usize {
        match self {
            Builtin::Linear(s) => Dynamics::<T>::param_dim(s),
            Builtin::LotkaVolterra(s) => Dynamics::<T>::param_dim(s),
        }
    }

    fn eval(&self, t: T, z: &[T], theta: &[T], out: &mut [T]) {
        match self {
            Builtin::Linear(s) => s.eval(t, z, theta, out),
            Builtin::LotkaVolterra(s) => s.eval(t, z, theta, out),
        }
    }

    fn vjp_state(&self, t: T, z: &[T], theta: &[T], lambda: &[T], out: &mut [T]) {
        match self {
            Builtin::Linear(s) => s.vjp_state(t, z, theta, lambda, out),
            Builtin::LotkaVolterra(s) => s.vjp_state(t, z, theta, lambda, out),
        }
    }

    fn vjp_params(&self, t: T, z: &[T], theta: &[T], lambda: &[T], out: &mut [T]) {
        match self {
            Builtin::Linear(s) => s.vjp_params(t, z, theta, lambda, out),
            Builtin::LotkaVolterra(s) => s.vjp_params(t, z, theta, lambda, out),
        }
    }

    fn activation_footprint(&self) -> usize {
        match self {
            Builtin::Linear(s) => Dynamics::<T>::activation_footprint(s),
            Builtin::LotkaVolterra(s) => Dynamics::<T>::activation_footprint(s),
        }
    }
}
