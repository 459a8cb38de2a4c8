//! Finite-horizon constrained approximate dynamic programming.
//!
//! For stage costs
//!
//! ```text
//! l_i(x, u) = ½uᵀR_iu + Ω_iᵀu + ½xᵀQ_ix + Γ_iᵀx,    l_N(x) = ½xᵀQ_Nx + Γ_Nᵀx
//! ```
//!
//! dynamics `x⁺ = F(x) + G(x)u` and one constraint `a_i(x) + b_i(x)ᵀu ≥ 0` per
//! stage, the backward recursion keeps the cost-to-go in the quadratic form
//! `½xᵀP_ix + T_iᵀx`. Each stage policy is then available in closed form:
//!
//! ```text
//! W_i(x) = (R_i + GᵀP_{i+1}G)⁻¹
//! k_i(x) = −W_i [Gᵀ(P_{i+1}F + T_{i+1}) + Ω_i]
//! λ_i(x) = max{0, (−a_i − b_iᵀk_i) / (b_iᵀW_ib_i)}
//! u_i*(x) = k_i + λ_i W_i b_i
//! ```
//!
//! `P_i, T_i` come from linearizing the softplus-smoothed policy `ũ_i*` and
//! closed-loop map `F̃_i*` around the nominal state `x̄_i`.

use alloc::vec::Vec;

use nalgebra::Cholesky;

use crate::{Error, Matrix, Vector};

/// Below this norm `b(x)` is treated as exactly zero.
pub const DEGENERATE_B: f64 = 1e-12;

/// `(1/η)·log(1 + e^{ηz})`, evaluated without overflow for any `z`.
pub fn softplus(z: f64, eta: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-eta * libm::fabs(z))) / eta
}

fn is_psd<const D: usize>(m: &Matrix<D, D>, tolerance: f64) -> bool {
    Cholesky::new(m + Matrix::<D, D>::identity() * tolerance).is_some()
}

// Eigen-decomposition of static matrices needs type-level dimension bounds
// that const generics cannot express, so go through a dynamic copy.
fn symmetric_eigen<const D: usize>(m: &Matrix<D, D>) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    nalgebra::DMatrix::from_column_slice(D, D, m.as_slice()).symmetric_eigen()
}

fn symmetric_eigenvalues<const D: usize>(m: &Matrix<D, D>) -> nalgebra::DVector<f64> {
    symmetric_eigen(m).eigenvalues
}

fn all_finite<const R: usize, const C: usize>(m: &Matrix<R, C>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Quadratic stage cost `½uᵀRu + Ωᵀu + ½xᵀQx + Γᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost<const N: usize, const M: usize> {
    pub q: Matrix<N, N>,
    pub r: Matrix<M, M>,
    pub omega: Vector<M>,
    pub gamma: Vector<N>,
}

impl<const N: usize, const M: usize> StageCost<N, M> {
    /// Symmetrizes `Q` and `R` and checks `Q ⪰ 0`, `R ≻ 0`.
    pub fn new(
        q: Matrix<N, N>,
        r: Matrix<M, M>,
        omega: Vector<M>,
        gamma: Vector<N>,
    ) -> Result<Self, Error> {
        let q = q.symmetric_part();
        let r = r.symmetric_part();
        if !(all_finite(&q) && all_finite(&r) && all_finite(&omega) && all_finite(&gamma)) {
            return Err(Error::InvalidCost("stage cost has non-finite entries"));
        }
        if !is_psd(&q, 1e-10) {
            return Err(Error::InvalidCost("state weight Q is not positive semidefinite"));
        }
        if Cholesky::new(r).is_none() {
            return Err(Error::InvalidCost("control weight R is not positive definite"));
        }
        Ok(Self { q, r, omega, gamma })
    }

    pub fn evaluate(&self, x: &Vector<N>, u: &Vector<M>) -> f64 {
        0.5 * u.dot(&(self.r * u)) + self.omega.dot(u) + 0.5 * x.dot(&(self.q * x)) + self.gamma.dot(x)
    }
}

/// Quadratic terminal cost `½xᵀQ_Nx + Γ_Nᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost<const N: usize> {
    pub q: Matrix<N, N>,
    pub gamma: Vector<N>,
}

impl<const N: usize> TerminalCost<N> {
    pub fn new(q: Matrix<N, N>, gamma: Vector<N>) -> Result<Self, Error> {
        let q = q.symmetric_part();
        if !(all_finite(&q) && all_finite(&gamma)) {
            return Err(Error::InvalidCost("terminal cost has non-finite entries"));
        }
        if !is_psd(&q, 1e-10) {
            return Err(Error::InvalidCost("terminal weight Q_N is not positive semidefinite"));
        }
        Ok(Self { q, gamma })
    }

    pub fn evaluate(&self, x: &Vector<N>) -> f64 {
        0.5 * x.dot(&(self.q * x)) + self.gamma.dot(x)
    }
}

/// Approximate cost-to-go `½xᵀPx + Tᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueQuadratic<const N: usize> {
    pub p: Matrix<N, N>,
    pub t: Vector<N>,
}

impl<const N: usize> ValueQuadratic<N> {
    pub fn evaluate(&self, x: &Vector<N>) -> f64 {
        0.5 * x.dot(&(self.p * x)) + self.t.dot(x)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.p).min()
    }
}

impl<const N: usize> From<&TerminalCost<N>> for ValueQuadratic<N> {
    fn from(terminal: &TerminalCost<N>) -> Self {
        Self {
            p: terminal.q,
            t: terminal.gamma,
        }
    }
}

/// Discrete control-affine dynamics `x⁺ = F(x) + G(x)u`.
pub trait DiscreteDynamics<const N: usize, const M: usize> {
    fn drift(&self, x: &Vector<N>) -> Vector<N>;
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, M>;

    fn step(&self, x: &Vector<N>, u: &Vector<M>) -> Vector<N> {
        self.drift(x) + self.input_matrix(x) * u
    }
}

impl<T, const N: usize, const M: usize> DiscreteDynamics<N, M> for &T
where
    T: DiscreteDynamics<N, M> + ?Sized,
{
    fn drift(&self, x: &Vector<N>) -> Vector<N> {
        (**self).drift(x)
    }
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, M> {
        (**self).input_matrix(x)
    }
}

/// Dynamics given by two closures.
#[derive(Clone, Copy)]
pub struct FnDynamics<F, G> {
    pub drift: F,
    pub input: G,
}

impl<F, G, const N: usize, const M: usize> DiscreteDynamics<N, M> for FnDynamics<F, G>
where
    F: Fn(&Vector<N>) -> Vector<N>,
    G: Fn(&Vector<N>) -> Matrix<N, M>,
{
    fn drift(&self, x: &Vector<N>) -> Vector<N> {
        (self.drift)(x)
    }
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, M> {
        (self.input)(x)
    }
}

/// `x⁺ = Ax + Bu`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics<const N: usize, const M: usize> {
    pub a: Matrix<N, N>,
    pub b: Matrix<N, M>,
}

impl<const N: usize, const M: usize> DiscreteDynamics<N, M> for LinearDynamics<N, M> {
    fn drift(&self, x: &Vector<N>) -> Vector<N> {
        self.a * x
    }
    fn input_matrix(&self, _x: &Vector<N>) -> Matrix<N, M> {
        self.b
    }
}

/// The affine constraint data `(a(x), b(x))` at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintTerms<const M: usize> {
    pub a: f64,
    pub b: Vector<M>,
}

impl<const M: usize> ConstraintTerms<M> {
    /// `a + bᵀu`; the constraint holds when this is nonnegative.
    pub fn value(&self, u: &Vector<M>) -> f64 {
        self.a + self.b.dot(u)
    }
}

/// Per-stage constraint `a_i(x) + b_i(x)ᵀu ≥ 0`.
pub trait StageConstraint<const N: usize, const M: usize> {
    fn terms(&self, stage: usize, x: &Vector<N>) -> Result<ConstraintTerms<M>, Error>;
}

impl<T, const N: usize, const M: usize> StageConstraint<N, M> for &T
where
    T: StageConstraint<N, M> + ?Sized,
{
    fn terms(&self, stage: usize, x: &Vector<N>) -> Result<ConstraintTerms<M>, Error> {
        (**self).terms(stage, x)
    }
}

/// `a = 1`, `b = 0`: the constraint is trivially satisfied.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unconstrained;

impl<const N: usize, const M: usize> StageConstraint<N, M> for Unconstrained {
    fn terms(&self, _stage: usize, _x: &Vector<N>) -> Result<ConstraintTerms<M>, Error> {
        Ok(ConstraintTerms {
            a: 1.0,
            b: Vector::zeros(),
        })
    }
}

/// Constraint given by a closure of `(stage, x)`.
#[derive(Clone, Copy)]
pub struct FnConstraint<F>(pub F);

impl<F, const N: usize, const M: usize> StageConstraint<N, M> for FnConstraint<F>
where
    F: Fn(usize, &Vector<N>) -> ConstraintTerms<M>,
{
    fn terms(&self, stage: usize, x: &Vector<N>) -> Result<ConstraintTerms<M>, Error> {
        Ok((self.0)(stage, x))
    }
}

/// `k = −W [Gᵀ(P F + T) + Ω]`, the unconstrained minimizer of the approximate stage cost.
pub fn nominal_gain<const N: usize, const M: usize>(
    w: &Matrix<M, M>,
    input: &Matrix<N, M>,
    drift: &Vector<N>,
    next: &ValueQuadratic<N>,
    omega: &Vector<M>,
) -> Vector<M> {
    -(w * (input.transpose() * (next.p * drift + next.t) + omega))
}

/// The argument `(−a − bᵀk)/(bᵀWb)` of the multiplier's max/softplus.
///
/// Returns `None` when `‖b‖ < degenerate_b` and `a > 0`; the multiplier is
/// then zero. A degenerate `b` with `a ≤ 0` is infeasible.
pub fn multiplier_argument<const M: usize>(
    stage: usize,
    terms: &ConstraintTerms<M>,
    k: &Vector<M>,
    w: &Matrix<M, M>,
    degenerate_b: f64,
) -> Result<Option<f64>, Error> {
    if terms.b.norm() < degenerate_b {
        return if terms.a > 0.0 {
            Ok(None)
        } else {
            Err(Error::Infeasible { stage, a: terms.a })
        };
    }
    let bwb = terms.b.dot(&(w * terms.b));
    Ok(Some((-terms.a - terms.b.dot(k)) / bwb))
}

/// `λ = max{0, (−a − bᵀk)/(bᵀWb)}`.
pub fn multiplier<const M: usize>(
    stage: usize,
    terms: &ConstraintTerms<M>,
    k: &Vector<M>,
    w: &Matrix<M, M>,
    degenerate_b: f64,
) -> Result<f64, Error> {
    Ok(multiplier_argument(stage, terms, k, w, degenerate_b)?.map_or(0.0, |z| z.max(0.0)))
}

/// `J̃_i(x,u) = l_i(x,u) + ½x⁺ᵀP_{i+1}x⁺ + T_{i+1}ᵀx⁺` with `x⁺ = F(x) + G(x)u`.
pub fn approx_stage_cost<D, const N: usize, const M: usize>(
    dynamics: &D,
    cost: &StageCost<N, M>,
    next: &ValueQuadratic<N>,
    x: &Vector<N>,
    u: &Vector<M>,
) -> f64
where
    D: DiscreteDynamics<N, M> + ?Sized,
{
    cost.evaluate(x, u) + next.evaluate(&dynamics.step(x, u))
}

/// All intermediate quantities of a stage policy at one state.
///
/// Computing this once and deriving `u*`, `ũ*` and `k` from it avoids
/// re-factoring `W` for each.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEvaluation<const N: usize, const M: usize> {
    pub drift: Vector<N>,
    pub input: Matrix<N, M>,
    pub w: Matrix<M, M>,
    pub k: Vector<M>,
    pub terms: ConstraintTerms<M>,
    /// Multiplier argument; `None` when `b(x)` is degenerate.
    pub z: Option<f64>,
}

impl<const N: usize, const M: usize> StageEvaluation<N, M> {
    pub fn lambda(&self) -> f64 {
        self.z.map_or(0.0, |z| z.max(0.0))
    }

    pub fn smoothed_lambda(&self, eta: f64) -> f64 {
        self.z.map_or(0.0, |z| softplus(z, eta))
    }

    /// `u* = k + λWb`.
    pub fn control(&self) -> Vector<M> {
        self.k + self.w * self.terms.b * self.lambda()
    }

    /// `ũ* = k + λ̃Wb`.
    pub fn smoothed_control(&self, eta: f64) -> Vector<M> {
        self.k + self.w * self.terms.b * self.smoothed_lambda(eta)
    }

    /// `F(x) + G(x)u`.
    pub fn successor(&self, u: &Vector<M>) -> Vector<N> {
        self.drift + self.input * u
    }
}

/// Jacobians of the smoothed stage policy at the nominal state.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLinearization<const N: usize, const M: usize> {
    /// `K_i = ∂ũ_i*/∂x`.
    pub gain: Matrix<M, N>,
    /// `Ã_i = ∂F̃_i*/∂x`.
    pub closed_loop: Matrix<N, N>,
}

/// Smoothed policy oracle handed to a [`Linearization`]: `x ↦ (ũ*(x), F̃*(x))`.
pub type SmoothedPolicy<'a, const N: usize, const M: usize> =
    dyn Fn(&Vector<N>) -> Result<(Vector<M>, Vector<N>), Error> + 'a;

/// Strategy for `K_i` and `Ã_i`.
///
/// [`CentralDifference`] differentiates the smoothed policy numerically.
/// Implement this trait to supply analytic derivatives instead.
pub trait Linearization<const N: usize, const M: usize> {
    fn linearize(
        &self,
        stage: usize,
        nominal: &Vector<N>,
        smoothed: &SmoothedPolicy<'_, N, M>,
    ) -> Result<StageLinearization<N, M>, Error>;
}

/// Central differences with step `relative_step·(1 + ‖x̄‖)`, optionally
/// refined by one Richardson extrapolation against the half step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralDifference {
    pub relative_step: f64,
    pub richardson: bool,
}

impl Default for CentralDifference {
    fn default() -> Self {
        Self {
            relative_step: 1e-5,
            richardson: true,
        }
    }
}

impl CentralDifference {
    fn column<const N: usize, const M: usize>(
        stage: usize,
        coordinate: usize,
        nominal: &Vector<N>,
        step: f64,
        smoothed: &SmoothedPolicy<'_, N, M>,
    ) -> Result<(Vector<M>, Vector<N>), Error> {
        let mut plus = *nominal;
        plus[coordinate] += step;
        let mut minus = *nominal;
        minus[coordinate] -= step;
        let width = plus[coordinate] - minus[coordinate];
        let (u_plus, f_plus) = smoothed(&plus)?;
        let (u_minus, f_minus) = smoothed(&minus)?;
        let du = (u_plus - u_minus) / width;
        let df = (f_plus - f_minus) / width;
        if !(all_finite(&du) && all_finite(&df)) {
            return Err(Error::NonFiniteJacobian { stage, coordinate });
        }
        Ok((du, df))
    }
}

impl<const N: usize, const M: usize> Linearization<N, M> for CentralDifference {
    fn linearize(
        &self,
        stage: usize,
        nominal: &Vector<N>,
        smoothed: &SmoothedPolicy<'_, N, M>,
    ) -> Result<StageLinearization<N, M>, Error> {
        let step = self.relative_step * (1.0 + nominal.norm());
        let mut gain = Matrix::<M, N>::zeros();
        let mut closed_loop = Matrix::<N, N>::zeros();
        for j in 0..N {
            let (mut du, mut df) = Self::column(stage, j, nominal, step, smoothed)?;
            if self.richardson {
                let (du_half, df_half) = Self::column(stage, j, nominal, 0.5 * step, smoothed)?;
                du = (du_half * 4.0 - du) / 3.0;
                df = (df_half * 4.0 - df) / 3.0;
            }
            gain.set_column(j, &du);
            closed_loop.set_column(j, &df);
        }
        Ok(StageLinearization { gain, closed_loop })
    }
}

/// Numerical safeguards of the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// `‖b(x)‖` below this counts as `b = 0`.
    pub degenerate_b: f64,
    /// Cap on the Frobenius condition estimate `‖S‖_F‖S⁻¹‖_F` of `S = R + GᵀPG`.
    pub max_condition: f64,
    /// Eigenvalues of `P_i` below `−psd_tolerance` are clipped to zero.
    pub psd_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            degenerate_b: DEGENERATE_B,
            max_condition: 1e14,
            psd_tolerance: 1e-10,
        }
    }
}

/// Result of a backward pass: everything needed to evaluate `u_i*(x)` for
/// any stage and state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySequence<const N: usize, const M: usize> {
    values: Vec<ValueQuadratic<N>>,
    costs: Vec<StageCost<N, M>>,
    linearizations: Vec<StageLinearization<N, M>>,
    nominal: Vec<Vector<N>>,
    eta: f64,
}

impl<const N: usize, const M: usize> PolicySequence<N, M> {
    /// Number of stages `N`.
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// `(P_i, T_i)` for `i` in `0..=N`.
    pub fn value(&self, i: usize) -> &ValueQuadratic<N> {
        &self.values[i]
    }

    pub fn values(&self) -> &[ValueQuadratic<N>] {
        &self.values
    }

    pub fn cost(&self, i: usize) -> &StageCost<N, M> {
        &self.costs[i]
    }

    /// `(K_i, Ã_i)` computed during the recursion.
    pub fn linearization(&self, i: usize) -> &StageLinearization<N, M> {
        &self.linearizations[i]
    }

    pub fn nominal(&self) -> &[Vector<N>] {
        &self.nominal
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn stage(&self, i: usize) -> Result<(&StageCost<N, M>, &ValueQuadratic<N>), Error> {
        if i >= self.len() {
            return Err(Error::InvalidConfig("stage index out of range"));
        }
        Ok((&self.costs[i], &self.values[i + 1]))
    }
}

/// The C-ADP solver: dynamics, constraint, and the linearization strategy.
///
/// `N` and `M` are the state and control dimensions.
#[derive(Debug, Clone)]
pub struct Cadp<const N: usize, const M: usize, D, C, L = CentralDifference> {
    pub dynamics: D,
    pub constraint: C,
    pub linearization: L,
    pub settings: SolverSettings,
}

impl<const N: usize, const M: usize, D, C> Cadp<N, M, D, C>
where
    D: DiscreteDynamics<N, M>,
    C: StageConstraint<N, M>,
{
    pub fn new(dynamics: D, constraint: C) -> Self {
        Self {
            dynamics,
            constraint,
            linearization: CentralDifference::default(),
            settings: SolverSettings::default(),
        }
    }
}

impl<const N: usize, const M: usize, D, C, L> Cadp<N, M, D, C, L> {
    pub fn with_linearization<L2>(self, linearization: L2) -> Cadp<N, M, D, C, L2> {
        Cadp {
            dynamics: self.dynamics,
            constraint: self.constraint,
            linearization,
            settings: self.settings,
        }
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }
}

impl<const N: usize, const M: usize, D, C, L> Cadp<N, M, D, C, L> {
    fn weight_inverse(
        &self,
        stage: usize,
        r: &Matrix<M, M>,
        input: &Matrix<N, M>,
        p_next: &Matrix<N, N>,
    ) -> Result<Matrix<M, M>, Error> {
        let s = (r + input.transpose() * p_next * input).symmetric_part();
        let w = Cholesky::new(s)
            .ok_or(Error::NotPositiveDefinite { stage })?
            .inverse()
            .symmetric_part();
        let condition = s.norm() * w.norm();
        if !(condition <= self.settings.max_condition) {
            return Err(Error::IllConditioned { stage, condition });
        }
        Ok(w)
    }

    fn enforce_psd(&self, p: Matrix<N, N>) -> Matrix<N, N> {
        let p = p.symmetric_part();
        let floor = self.settings.psd_tolerance;
        if is_psd(&p, floor) {
            return p;
        }
        let eigen = symmetric_eigen(&p);
        let clipped = eigen.eigenvalues.map(|l| if l < -floor { 0.0 } else { l });
        let rebuilt = &eigen.eigenvectors
            * nalgebra::DMatrix::from_diagonal(&clipped)
            * eigen.eigenvectors.transpose();
        Matrix::<N, N>::from_column_slice(rebuilt.as_slice()).symmetric_part()
    }
}

impl<const N: usize, const M: usize, D, C, L> Cadp<N, M, D, C, L>
where
    D: DiscreteDynamics<N, M>,
    C: StageConstraint<N, M>,
    L: Linearization<N, M>,
{
    /// `W_i(x) = (R_i + G(x)ᵀP_{i+1}G(x))⁻¹`.
    pub fn gain_w(
        &self,
        stage: usize,
        x: &Vector<N>,
        cost: &StageCost<N, M>,
        p_next: &Matrix<N, N>,
    ) -> Result<Matrix<M, M>, Error> {
        self.weight_inverse(stage, &cost.r, &self.dynamics.input_matrix(x), p_next)
    }

    /// Evaluates `F, G, W, k, a, b` and the multiplier argument at `x`.
    pub fn evaluate(
        &self,
        stage: usize,
        cost: &StageCost<N, M>,
        next: &ValueQuadratic<N>,
        x: &Vector<N>,
    ) -> Result<StageEvaluation<N, M>, Error> {
        let drift = self.dynamics.drift(x);
        let input = self.dynamics.input_matrix(x);
        let w = self.weight_inverse(stage, &cost.r, &input, &next.p)?;
        let k = nominal_gain(&w, &input, &drift, next, &cost.omega);
        let terms = self.constraint.terms(stage, x)?;
        let z = multiplier_argument(stage, &terms, &k, &w, self.settings.degenerate_b)?;
        Ok(StageEvaluation {
            drift,
            input,
            w,
            k,
            terms,
            z,
        })
    }

    /// One step of the backward recursion: `(P_i, T_i)` from `(P_{i+1}, T_{i+1})`.
    pub fn riccati_step(
        &self,
        stage: usize,
        next: &ValueQuadratic<N>,
        nominal: &Vector<N>,
        cost: &StageCost<N, M>,
        eta: f64,
    ) -> Result<(ValueQuadratic<N>, StageLinearization<N, M>), Error> {
        let smoothed = |x: &Vector<N>| {
            let e = self.evaluate(stage, cost, next, x)?;
            let u = e.smoothed_control(eta);
            Ok((u, e.successor(&u)))
        };
        let lin = self.linearization.linearize(stage, nominal, &smoothed)?;

        let at_nominal = self.evaluate(stage, cost, next, nominal)?;
        let u_bar = at_nominal.control();
        let f_bar = at_nominal.successor(&u_bar);

        let k = &lin.gain;
        let a = &lin.closed_loop;
        let p = cost.q + k.transpose() * cost.r * k + a.transpose() * next.p * a;
        let t = a.transpose() * (next.p * (f_bar - a * nominal) + next.t)
            + k.transpose() * (cost.r * u_bar - cost.r * (k * nominal) + cost.omega)
            + cost.gamma;
        let value = ValueQuadratic {
            p: self.enforce_psd(p),
            t,
        };
        Ok((value, lin))
    }

    /// Runs the recursion from `P_N = Q_N, T_N = Γ_N` down to stage 0.
    pub fn backward_pass(
        &self,
        nominal: &[Vector<N>],
        costs: &[StageCost<N, M>],
        terminal: &TerminalCost<N>,
        eta: f64,
    ) -> Result<PolicySequence<N, M>, Error> {
        let horizon = costs.len();
        if horizon == 0 {
            return Err(Error::InvalidConfig("horizon must have at least one stage"));
        }
        if nominal.len() != horizon {
            return Err(Error::LengthMismatch {
                what: "nominal trajectory",
                expected: horizon,
                found: nominal.len(),
            });
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig("softplus sharpness must be positive"));
        }

        let mut values = Vec::with_capacity(horizon + 1);
        let mut linearizations = Vec::with_capacity(horizon);
        values.push(ValueQuadratic::from(terminal));
        for i in (0..horizon).rev() {
            let next = values.last().expect("terminal value pushed above");
            let (value, lin) = self.riccati_step(i, next, &nominal[i], &costs[i], eta)?;
            values.push(value);
            linearizations.push(lin);
        }
        values.reverse();
        linearizations.reverse();

        Ok(PolicySequence {
            values,
            costs: costs.to_vec(),
            linearizations,
            nominal: nominal.to_vec(),
            eta,
        })
    }

    pub fn stage_evaluation(
        &self,
        policy: &PolicySequence<N, M>,
        i: usize,
        x: &Vector<N>,
    ) -> Result<StageEvaluation<N, M>, Error> {
        let (cost, next) = policy.stage(i)?;
        self.evaluate(i, cost, next, x)
    }

    /// `u_i*(x)`, the exact constrained minimizer of `J̃_i(x, ·)`.
    pub fn control(
        &self,
        policy: &PolicySequence<N, M>,
        i: usize,
        x: &Vector<N>,
    ) -> Result<Vector<M>, Error> {
        Ok(self.stage_evaluation(policy, i, x)?.control())
    }

    /// `ũ_i*(x)` with the softplus multiplier.
    pub fn smoothed_control(
        &self,
        policy: &PolicySequence<N, M>,
        i: usize,
        x: &Vector<N>,
    ) -> Result<Vector<M>, Error> {
        Ok(self.stage_evaluation(policy, i, x)?.smoothed_control(policy.eta))
    }

    /// `F̃_i*(x) = F(x) + G(x)ũ_i*(x)`.
    pub fn closed_loop_map(
        &self,
        policy: &PolicySequence<N, M>,
        i: usize,
        x: &Vector<N>,
    ) -> Result<Vector<N>, Error> {
        let e = self.stage_evaluation(policy, i, x)?;
        Ok(e.successor(&e.smoothed_control(policy.eta)))
    }

    /// `(K_i, Ã_i)` of stage `i` linearized at an arbitrary state.
    pub fn stage_jacobians(
        &self,
        policy: &PolicySequence<N, M>,
        i: usize,
        at: &Vector<N>,
    ) -> Result<StageLinearization<N, M>, Error> {
        let (cost, next) = policy.stage(i)?;
        let eta = policy.eta;
        let smoothed = |x: &Vector<N>| {
            let e = self.evaluate(i, cost, next, x)?;
            let u = e.smoothed_control(eta);
            Ok((u, e.successor(&u)))
        };
        self.linearization.linearize(i, at, &smoothed)
    }

    /// `J̃_i(x, u)` for stage `i` of `policy`.
    pub fn approx_stage_cost(
        &self,
        policy: &PolicySequence<N, M>,
        i: usize,
        x: &Vector<N>,
        u: &Vector<M>,
    ) -> Result<f64, Error> {
        let (cost, next) = policy.stage(i)?;
        Ok(approx_stage_cost(&self.dynamics, cost, next, x, u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cost(q: f64, r: f64) -> StageCost<1, 1> {
        StageCost::new(
            Matrix::<1, 1>::new(q),
            Matrix::<1, 1>::new(r),
            Vector::<1>::zeros(),
            Vector::<1>::zeros(),
        )
        .unwrap()
    }

    fn scalar_solver(
        a: f64,
        b: f64,
    ) -> Cadp<1, 1, LinearDynamics<1, 1>, Unconstrained> {
        Cadp::new(
            LinearDynamics {
                a: Matrix::<1, 1>::new(a),
                b: Matrix::<1, 1>::new(b),
            },
            Unconstrained,
        )
    }

    #[test]
    fn softplus_reference_values() {
        assert!((softplus(0.0, 1.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(10.0, 1.0) - 10.000_045_398_899_218).abs() < 1e-12);
        // log1p(e^-50) = 1.9287498479639178e-22
        let tail = softplus(-50.0, 1.0);
        assert!(tail.is_finite());
        assert!((tail - 1.928_749_847_963_917_8e-22).abs() < 1e-34);
        assert!(softplus(1e6, 50.0).is_finite());
        assert_eq!(softplus(-1e6, 50.0), 0.0);
    }

    #[test]
    fn gain_w_scalar_and_identity() {
        let solver = scalar_solver(1.0, 1.0);
        let cost = scalar_cost(1.0, 2.0);
        let w = solver
            .gain_w(0, &Vector::<1>::new(0.3), &cost, &Matrix::<1, 1>::new(3.0))
            .unwrap();
        assert!((w[(0, 0)] - 0.2).abs() < 1e-15);

        let zero_input = Cadp::new(
            LinearDynamics {
                a: Matrix::<2, 2>::identity(),
                b: Matrix::<2, 2>::zeros(),
            },
            Unconstrained,
        );
        let cost = StageCost::<2, 2>::new(
            Matrix::identity(),
            Matrix::identity(),
            Vector::zeros(),
            Vector::zeros(),
        )
        .unwrap();
        let w = zero_input
            .gain_w(0, &Vector::<2>::new(1.0, -1.0), &cost, &Matrix::<2, 2>::identity())
            .unwrap();
        assert_eq!(w, Matrix::<2, 2>::identity());
    }

    #[test]
    fn ill_conditioned_weight_reports_stage() {
        let solver = scalar_solver(1.0, 1.0).with_settings(SolverSettings {
            max_condition: 10.0,
            ..SolverSettings::default()
        });
        let cost = StageCost::<1, 1>::new(
            Matrix::<1, 1>::new(1.0),
            Matrix::<1, 1>::new(1.0),
            Vector::zeros(),
            Vector::zeros(),
        )
        .unwrap();
        // a 1×1 matrix has Frobenius condition estimate exactly 1
        assert!(solver.gain_w(7, &Vector::<1>::new(0.0), &cost, &Matrix::<1, 1>::new(2.0)).is_ok());

        let wide = Cadp::new(
            LinearDynamics {
                a: Matrix::<2, 2>::identity(),
                b: Matrix::<2, 2>::identity(),
            },
            Unconstrained,
        )
        .with_settings(SolverSettings {
            max_condition: 1e6,
            ..SolverSettings::default()
        });
        let cost = StageCost::<2, 2>::new(
            Matrix::identity(),
            Matrix::<2, 2>::new(1.0, 0.0, 0.0, 1e-9),
            Vector::zeros(),
            Vector::zeros(),
        )
        .unwrap();
        let err = wide
            .gain_w(4, &Vector::zeros(), &cost, &Matrix::<2, 2>::zeros())
            .unwrap_err();
        assert!(matches!(err, Error::IllConditioned { stage: 4, .. }));
    }

    #[test]
    fn nominal_gain_cases() {
        let next = ValueQuadratic {
            p: Matrix::<1, 1>::new(1.0),
            t: Vector::<1>::zeros(),
        };
        let w = Matrix::<1, 1>::new(0.5); // (R + GᵀPG)⁻¹ with R = P = G = 1
        let k = nominal_gain(
            &w,
            &Matrix::<1, 1>::new(1.0),
            &Vector::<1>::new(2.0),
            &next,
            &Vector::<1>::zeros(),
        );
        assert!((k[0] + 1.0).abs() < 1e-15);

        let k = nominal_gain(
            &Matrix::<2, 2>::identity(),
            &Matrix::<3, 2>::repeat(1.0),
            &Vector::<3>::zeros(),
            &ValueQuadratic {
                p: Matrix::identity(),
                t: Vector::zeros(),
            },
            &Vector::zeros(),
        );
        assert_eq!(k, Vector::<2>::zeros());
    }

    #[test]
    fn multiplier_cases() {
        let w = Matrix::<1, 1>::new(1.0);
        let degenerate = ConstraintTerms {
            a: 1.0,
            b: Vector::<1>::zeros(),
        };
        assert_eq!(multiplier(0, &degenerate, &Vector::zeros(), &w, DEGENERATE_B).unwrap(), 0.0);

        let active = ConstraintTerms {
            a: -1.0,
            b: Vector::<1>::new(1.0),
        };
        let k = Vector::<1>::zeros();
        let lambda = multiplier(0, &active, &k, &w, DEGENERATE_B).unwrap();
        assert_eq!(lambda, 1.0);
        let u = k + w * active.b * lambda;
        assert_eq!(u[0], 1.0);
        assert_eq!(active.value(&u), 0.0);

        let infeasible = ConstraintTerms {
            a: -0.5,
            b: Vector::<1>::new(1e-13),
        };
        assert_eq!(
            multiplier(3, &infeasible, &k, &w, DEGENERATE_B),
            Err(Error::Infeasible { stage: 3, a: -0.5 })
        );
    }

    #[test]
    fn scalar_lqr_riccati_step() {
        let solver = scalar_solver(1.0, 1.0);
        let next = ValueQuadratic {
            p: Matrix::<1, 1>::new(1.0),
            t: Vector::<1>::zeros(),
        };
        let (value, lin) = solver
            .riccati_step(0, &next, &Vector::<1>::zeros(), &scalar_cost(1.0, 1.0), 1.0)
            .unwrap();
        assert!((value.p[(0, 0)] - 1.5).abs() < 1e-12);
        assert!(value.t[0].abs() < 1e-15);
        assert!((lin.gain[(0, 0)] + 0.5).abs() < 1e-10);
        assert!((lin.closed_loop[(0, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn riccati_step_without_forcing_has_zero_linear_term() {
        let solver = Cadp::new(
            FnDynamics {
                drift: |x: &Vector<2>| Vector::<2>::new(x[0] + 0.1 * libm::sin(x[1]), 0.9 * x[1]),
                input: |x: &Vector<2>| Matrix::<2, 1>::new(0.0, 1.0 + 0.1 * x[0] * x[0]),
            },
            FnConstraint(|_, x: &Vector<2>| ConstraintTerms {
                a: 5.0 + x[0],
                b: Vector::<1>::new(1.0),
            }),
        );
        let cost = StageCost::<2, 1>::new(
            Matrix::identity(),
            Matrix::<1, 1>::new(1.0),
            Vector::zeros(),
            Vector::zeros(),
        )
        .unwrap();
        let next = ValueQuadratic {
            p: Matrix::<2, 2>::identity() * 2.0,
            t: Vector::zeros(),
        };
        let (value, _) = solver
            .riccati_step(0, &next, &Vector::zeros(), &cost, 1.0)
            .unwrap();
        assert!(value.t.norm() < 1e-12, "T = {}", value.t);
    }

    #[test]
    fn backward_pass_rejects_bad_inputs() {
        let solver = scalar_solver(1.0, 1.0);
        let terminal = TerminalCost::new(Matrix::<1, 1>::new(1.0), Vector::zeros()).unwrap();
        let costs = [scalar_cost(1.0, 1.0), scalar_cost(1.0, 1.0)];
        let err = solver
            .backward_pass(&[Vector::zeros()], &costs, &terminal, 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 2, found: 1, .. }));
        assert!(solver
            .backward_pass(&[Vector::zeros(); 2], &costs, &terminal, 0.0)
            .is_err());
        assert!(solver.backward_pass(&[], &[], &terminal, 1.0).is_err());
    }

    #[test]
    fn cost_validation() {
        assert!(StageCost::<1, 1>::new(
            Matrix::<1, 1>::new(-1.0),
            Matrix::<1, 1>::new(1.0),
            Vector::zeros(),
            Vector::zeros()
        )
        .is_err());
        assert!(StageCost::<1, 1>::new(
            Matrix::<1, 1>::new(1.0),
            Matrix::<1, 1>::new(0.0),
            Vector::zeros(),
            Vector::zeros()
        )
        .is_err());
        assert!(TerminalCost::<2>::new(Matrix::<2, 2>::new(1.0, 2.0, 2.0, 1.0), Vector::zeros()).is_err());
        // asymmetric input is symmetrized, not rejected
        let c = StageCost::<2, 1>::new(
            Matrix::<2, 2>::new(1.0, 0.4, 0.0, 1.0),
            Matrix::<1, 1>::new(1.0),
            Vector::zeros(),
            Vector::zeros(),
        )
        .unwrap();
        assert_eq!(c.q[(0, 1)], c.q[(1, 0)]);
    }

    #[test]
    fn psd_clipping_removes_negative_eigenvalues() {
        let solver = Cadp::new(
            LinearDynamics {
                a: Matrix::<2, 2>::identity(),
                b: Matrix::<2, 1>::zeros(),
            },
            Unconstrained,
        );
        let p = Matrix::<2, 2>::new(1.0, 0.0, 0.0, -1e-6);
        let fixed = solver.enforce_psd(p);
        assert!(symmetric_eigenvalues(&fixed).min() >= -1e-10);
        let untouched = Matrix::<2, 2>::new(2.0, 1.0, 1.0, 2.0);
        assert_eq!(solver.enforce_psd(untouched), untouched);
    }
}
