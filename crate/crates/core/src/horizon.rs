//! Receding-horizon control with the C-ADP solver.
//!
//! The continuous plant is discretized by forward Euler over the planning step
//! `T_p`, a slack input `δ` is appended to the control, and every update period
//! `T_s` the solver runs one forward pass (rolling the previous policy out from
//! the measured state) and one backward pass. Between updates the control is
//! `v*(t, x) = [I 0]·u*_{0,k}(x)`.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::plant::ContinuousDynamics;
use crate::sim::{ControlSample, FeedbackController};
use crate::solver::{
    Cadp, DiscreteDynamics, Linearization, PolicySequence, StageConstraint, StageCost, TerminalCost,
};
use crate::{Error, Matrix, Vector};

/// Timing and regularization of the receding-horizon problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonConfig {
    /// Horizon length `T` in seconds.
    pub horizon: f64,
    /// Planning step `T_p`.
    pub planning_step: f64,
    /// Update period `T_s ∈ (0, T_p]`.
    pub update_period: f64,
    /// Softplus sharpness `η` used for the linearization.
    pub eta: f64,
    /// Slack weight `r_δ`.
    pub slack_weight: f64,
    /// Multiply sampled stage and terminal costs by `T_p` (Riemann sum of the
    /// running cost). Off by default: the costs are used as sampled.
    pub riemann_scaling: bool,
}

impl HorizonConfig {
    /// `N = T/T_p`; fails unless the ratio is an integer.
    pub fn stages(&self) -> Result<usize, Error> {
        let ratio = self.horizon / self.planning_step;
        let n = libm::round(ratio);
        if !(n >= 1.0) || libm::fabs(ratio - n) > 1e-9 * n {
            return Err(Error::InvalidConfig("horizon must be an integer multiple of the planning step"));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<usize, Error> {
        if !(self.planning_step > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidConfig("horizon and planning step must be positive"));
        }
        if !(self.update_period > 0.0 && self.update_period <= self.planning_step * (1.0 + 1e-12)) {
            return Err(Error::InvalidConfig("update period must lie in (0, T_p]"));
        }
        if !(self.eta > 0.0 && self.slack_weight > 0.0) {
            return Err(Error::InvalidConfig("eta and slack weight must be positive"));
        }
        self.stages()
    }
}

/// Running-cost coefficients at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSample<const N: usize, const L: usize> {
    pub q: Matrix<N, N>,
    pub gamma: Vector<N>,
    pub r_v: Matrix<L, L>,
    pub omega_v: Vector<L>,
}

/// Time-varying running cost `½vᵀR_vv + Ω_vᵀv + ½xᵀQx + Γᵀx`.
pub trait RunningCost<const N: usize, const L: usize> {
    fn sample(&self, t: f64) -> CostSample<N, L>;
}

/// Time-invariant running cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantCost<const N: usize, const L: usize>(pub CostSample<N, L>);

impl<const N: usize, const L: usize> ConstantCost<N, L> {
    /// Tracking cost `½(x − x_d)ᵀQ(x − x_d) + ½vᵀR_vv` up to a constant, i.e. `Γ = −Qx_d`.
    pub fn tracking(q: Matrix<N, N>, target: &Vector<N>, r_v: Matrix<L, L>) -> Self {
        Self(CostSample {
            q,
            gamma: -(q * target),
            r_v,
            omega_v: Vector::zeros(),
        })
    }
}

impl<const N: usize, const L: usize> RunningCost<N, L> for ConstantCost<N, L> {
    fn sample(&self, _t: f64) -> CostSample<N, L> {
        self.0.clone()
    }
}

impl<T, const N: usize, const L: usize> RunningCost<N, L> for &T
where
    T: RunningCost<N, L> + ?Sized,
{
    fn sample(&self, t: f64) -> CostSample<N, L> {
        (**self).sample(t)
    }
}

/// Forward-Euler discretization `F(x) = x + T_p f(x)`, `G(x) = T_p g(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Euler<P, const L: usize> {
    pub plant: P,
    pub step: f64,
}

pub fn discretize<P, const N: usize, const L: usize>(plant: P, step: f64) -> Result<Euler<P, L>, Error>
where
    P: ContinuousDynamics<N, L>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("planning step must be positive"));
    }
    Ok(Euler { plant, step })
}

impl<P, const N: usize, const L: usize> DiscreteDynamics<N, L> for Euler<P, L>
where
    P: ContinuousDynamics<N, L>,
{
    fn drift(&self, x: &Vector<N>) -> Vector<N> {
        x + self.plant.drift(x) * self.step
    }
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, L> {
        self.plant.input_matrix(x) * self.step
    }
}

/// Appends a zero column for the slack: `G(x) = [g_d(x) 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithSlack<D, const L: usize>(pub D);

pub fn augment_with_slack<D, const N: usize, const L: usize>(dynamics: D) -> WithSlack<D, L>
where
    D: DiscreteDynamics<N, L>,
{
    WithSlack(dynamics)
}

impl<D, const N: usize, const L: usize, const M: usize> DiscreteDynamics<N, M> for WithSlack<D, L>
where
    D: DiscreteDynamics<N, L>,
{
    fn drift(&self, x: &Vector<N>) -> Vector<N> {
        self.0.drift(x)
    }
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, M> {
        const { assert!(M == L + 1, "slack-augmented input must have one extra column") };
        let mut g = Matrix::<N, M>::zeros();
        g.fixed_columns_mut::<L>(0).copy_from(&self.0.input_matrix(x));
        g
    }
}

/// The discretized, slack-augmented dynamics of a plant.
pub type PlanningModel<P, const L: usize> = WithSlack<Euler<P, L>, L>;

/// Stage costs `l_{i,k}` sampled at `kT_s + iT_p` and the terminal cost at `kT_s + T`.
///
/// `R_{i,k} = blockdiag(R_v, r_δ)` and `Ω_{i,k} = [Ω_v; 0]`.
pub fn sample_stage_costs<R, const N: usize, const L: usize, const M: usize>(
    update: usize,
    config: &HorizonConfig,
    running: &R,
) -> Result<(Vec<StageCost<N, M>>, TerminalCost<N>), Error>
where
    R: RunningCost<N, L> + ?Sized,
{
    const { assert!(M == L + 1, "stage control must be inputs plus slack") };
    let stages = config.validate()?;
    let start = update as f64 * config.update_period;
    let scale = if config.riemann_scaling {
        config.planning_step
    } else {
        1.0
    };
    let mut costs = Vec::with_capacity(stages);
    for i in 0..stages {
        let c = running.sample(start + i as f64 * config.planning_step);
        let mut r = Matrix::<M, M>::zeros();
        r.fixed_view_mut::<L, L>(0, 0).copy_from(&c.r_v);
        r[(L, L)] = config.slack_weight;
        let mut omega = Vector::<M>::zeros();
        omega.fixed_rows_mut::<L>(0).copy_from(&c.omega_v);
        costs.push(StageCost::new(c.q * scale, r * scale, omega * scale, c.gamma * scale)?);
    }
    let end = running.sample(start + stages as f64 * config.planning_step);
    let terminal = TerminalCost::new(end.q * scale, end.gamma * scale)?;
    Ok((costs, terminal))
}

/// `x̄_0 = x_now`, `x̄_{i+1} = F(x̄_i) + G(x̄_i)u*_i(x̄_i)` under a previous policy.
pub fn forward_pass<D, C, Lin, const N: usize, const M: usize>(
    solver: &Cadp<N, M, D, C, Lin>,
    policy: &PolicySequence<N, M>,
    x_now: &Vector<N>,
) -> Result<Vec<Vector<N>>, Error>
where
    D: DiscreteDynamics<N, M>,
    C: StageConstraint<N, M>,
    Lin: Linearization<N, M>,
{
    let n = policy.len();
    let mut nominal = Vec::with_capacity(n);
    nominal.push(*x_now);
    for i in 0..n - 1 {
        let x = nominal[i];
        let e = solver
            .stage_evaluation(policy, i, &x)
            .map_err(|cause| Error::ForwardPass {
                stage: i,
                cause: Box::new(cause),
            })?;
        nominal.push(e.successor(&e.control()));
    }
    Ok(nominal)
}

/// Rolls the discrete dynamics out for `stages` steps under `v(x)` with zero slack.
pub fn nominal_rollout<D, const N: usize, const L: usize>(
    dynamics: &D,
    x0: &Vector<N>,
    stages: usize,
    control: impl Fn(&Vector<N>) -> Vector<L>,
) -> Vec<Vector<N>>
where
    D: DiscreteDynamics<N, L> + ?Sized,
{
    let mut nominal = Vec::with_capacity(stages);
    let mut x = *x0;
    for _ in 0..stages {
        nominal.push(x);
        x = dynamics.step(&x, &control(&x));
    }
    nominal
}

/// `(v, δ)` from a stacked control `[v; δ]`.
pub fn extract_control<const L: usize, const M: usize>(u: &Vector<M>) -> (Vector<L>, f64) {
    const { assert!(M == L + 1, "stacked control must be inputs plus slack") };
    (u.fixed_rows::<L>(0).into_owned(), u[L])
}

/// Solver state across updates.
pub struct RecedingHorizon<const N: usize, const L: usize, const M: usize, P, C, R, Lin = crate::solver::CentralDifference> {
    pub solver: Cadp<N, M, PlanningModel<P, L>, C, Lin>,
    pub config: HorizonConfig,
    pub running: R,
    policy: Option<PolicySequence<N, M>>,
}

impl<const N: usize, const L: usize, const M: usize, P, C, R> RecedingHorizon<N, L, M, P, C, R>
where
    P: ContinuousDynamics<N, L>,
    C: StageConstraint<N, M>,
    R: RunningCost<N, L>,
{
    pub fn new(plant: P, constraint: C, running: R, config: HorizonConfig) -> Result<Self, Error> {
        config.validate()?;
        let model = augment_with_slack(discretize(plant, config.planning_step)?);
        Ok(Self {
            solver: Cadp::new(model, constraint),
            config,
            running,
            policy: None,
        })
    }
}

impl<const N: usize, const L: usize, const M: usize, P, C, R, Lin> RecedingHorizon<N, L, M, P, C, R, Lin>
where
    P: ContinuousDynamics<N, L>,
    C: StageConstraint<N, M>,
    R: RunningCost<N, L>,
    Lin: Linearization<N, M>,
{
    pub fn with_linearization<L2>(self, linearization: L2) -> RecedingHorizon<N, L, M, P, C, R, L2> {
        RecedingHorizon {
            solver: self.solver.with_linearization(linearization),
            config: self.config,
            running: self.running,
            policy: None,
        }
    }

    pub fn plant(&self) -> &P {
        &self.solver.dynamics.0.plant
    }

    pub fn policy(&self) -> Option<&PolicySequence<N, M>> {
        self.policy.as_ref()
    }

    /// One update: forward pass from `x_now` under the stored policy (or the
    /// supplied `initial` nominal when there is none), then a backward pass.
    pub fn rh_update(
        &mut self,
        update: usize,
        x_now: &Vector<N>,
        initial: Option<&[Vector<N>]>,
    ) -> Result<&PolicySequence<N, M>, Error> {
        let (costs, terminal) = sample_stage_costs(update, &self.config, &self.running)?;
        let nominal = match (&self.policy, initial) {
            (_, Some(nominal)) => nominal.to_vec(),
            (Some(previous), None) => forward_pass(&self.solver, previous, x_now)?,
            (None, None) => return Err(Error::NoPolicy),
        };
        let policy = self
            .solver
            .backward_pass(&nominal, &costs, &terminal, self.config.eta)?;
        Ok(self.policy.insert(policy))
    }

    /// `(v*, δ*)` of the current window plus the `λ = 0` branch of `v`.
    pub fn control(&self, x: &Vector<N>) -> Result<ControlSample<L>, Error> {
        let policy = self.policy.as_ref().ok_or(Error::NoPolicy)?;
        let e = self.solver.stage_evaluation(policy, 0, x)?;
        let (v, delta) = extract_control::<L, M>(&e.control());
        let (desired, _) = extract_control::<L, M>(&e.k);
        Ok(ControlSample {
            v,
            delta,
            desired,
            constraint: e.terms.value(&e.control()),
        })
    }
}

/// Initial nominal control used before the first policy exists.
pub type NominalControl<const N: usize, const L: usize> = Box<dyn Fn(&Vector<N>) -> Vector<L> + Send + Sync>;

/// Receding-horizon C-ADP as a sampled-data feedback controller.
pub struct CadpController<const N: usize, const L: usize, const M: usize, P, C, R, Lin = crate::solver::CentralDifference> {
    pub horizon: RecedingHorizon<N, L, M, P, C, R, Lin>,
    initial_control: NominalControl<N, L>,
}

impl<const N: usize, const L: usize, const M: usize, P, C, R, Lin> CadpController<N, L, M, P, C, R, Lin>
where
    P: ContinuousDynamics<N, L>,
    C: StageConstraint<N, M>,
    R: RunningCost<N, L>,
    Lin: Linearization<N, M>,
{
    /// `initial_control` seeds the first nominal trajectory.
    pub fn new(horizon: RecedingHorizon<N, L, M, P, C, R, Lin>, initial_control: NominalControl<N, L>) -> Self {
        Self {
            horizon,
            initial_control,
        }
    }
}

impl<const N: usize, const L: usize, const M: usize, P, C, R, Lin> FeedbackController<N, L>
    for CadpController<N, L, M, P, C, R, Lin>
where
    P: ContinuousDynamics<N, L>,
    C: StageConstraint<N, M>,
    R: RunningCost<N, L>,
    Lin: Linearization<N, M>,
{
    fn update_period(&self) -> f64 {
        self.horizon.config.update_period
    }

    fn refresh(&mut self, update: usize, _t: f64, x: &Vector<N>) -> Result<(), Error> {
        if self.horizon.policy().is_none() {
            let stages = self.horizon.config.stages()?;
            let nominal = nominal_rollout(&self.horizon.solver.dynamics.0, x, stages, &self.initial_control);
            self.horizon.rh_update(update, x, Some(&nominal))?;
        } else {
            self.horizon.rh_update(update, x, None)?;
        }
        Ok(())
    }

    fn control(&self, _t: f64, x: &Vector<N>) -> Result<ControlSample<L>, Error> {
        self.horizon.control(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::FnPlant;
    use crate::solver::Unconstrained;

    fn config() -> HorizonConfig {
        HorizonConfig {
            horizon: 1.0,
            planning_step: 0.05,
            update_period: 0.05,
            eta: 1.0,
            slack_weight: 1e3,
            riemann_scaling: false,
        }
    }

    #[test]
    fn stage_count_and_validation() {
        assert_eq!(config().validate().unwrap(), 20);
        assert!(HorizonConfig { horizon: 1.01, ..config() }.validate().is_err());
        assert!(HorizonConfig { update_period: 0.06, ..config() }.validate().is_err());
        assert!(HorizonConfig { eta: 0.0, ..config() }.validate().is_err());
        let benchmark = HorizonConfig {
            horizon: 20.0,
            ..config()
        };
        assert_eq!(benchmark.stages().unwrap(), 400);
    }

    #[test]
    fn euler_examples() {
        let still = discretize(
            FnPlant {
                drift: |_: &Vector<1>| Vector::<1>::zeros(),
                input: |_: &Vector<1>| Matrix::<1, 1>::new(1.0),
            },
            0.05,
        )
        .unwrap();
        assert_eq!(DiscreteDynamics::<1, 1>::drift(&still, &Vector::<1>::new(3.0))[0], 3.0);
        let growth = discretize(
            FnPlant {
                drift: |x: &Vector<1>| *x,
                input: |_: &Vector<1>| Matrix::<1, 1>::new(1.0),
            },
            0.05,
        )
        .unwrap();
        assert!((DiscreteDynamics::<1, 1>::drift(&growth, &Vector::<1>::new(2.0))[0] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn slack_column_is_inert() {
        let model = augment_with_slack(
            discretize(
                FnPlant {
                    drift: |x: &Vector<2>| Vector::<2>::new(x[1], -x[0]),
                    input: |x: &Vector<2>| Matrix::<2, 1>::new(0.0, 1.0 + x[0] * x[0]),
                },
                0.1,
            )
            .unwrap(),
        );
        let x = Vector::<2>::new(0.3, -0.4);
        let g: Matrix<2, 2> = model.input_matrix(&x);
        assert_eq!(g.column(1).into_owned(), Vector::<2>::zeros());
        let a = model.step(&x, &Vector::<2>::new(0.7, 1.0));
        let b = model.step(&x, &Vector::<2>::new(0.7, -1e6));
        assert_eq!(a, b);
        assert_eq!(g.column(0) * 0.7, model.0.input_matrix(&x) * Vector::<1>::new(0.7));
    }

    #[test]
    fn stage_cost_sampling_is_block_diagonal() {
        let running = ConstantCost::tracking(
            Matrix::<2, 2>::identity(),
            &Vector::<2>::new(1.0, 2.0),
            Matrix::<1, 1>::new(80.0),
        );
        let (costs, terminal) = sample_stage_costs::<_, 2, 1, 2>(3, &config(), &running).unwrap();
        assert_eq!(costs.len(), 20);
        assert!(costs.iter().all(|c| *c == costs[0]));
        assert_eq!(costs[0].r, Matrix::<2, 2>::new(80.0, 0.0, 0.0, 1e3));
        assert_eq!(costs[0].gamma, Vector::<2>::new(-1.0, -2.0));
        assert_eq!(costs[0].omega, Vector::<2>::zeros());
        assert_eq!(terminal.q, Matrix::<2, 2>::identity());
    }

    #[test]
    fn sampling_times_follow_update_index() {
        struct Clock;
        impl RunningCost<1, 1> for Clock {
            fn sample(&self, t: f64) -> CostSample<1, 1> {
                CostSample {
                    q: Matrix::<1, 1>::new(1.0),
                    gamma: Vector::<1>::new(t),
                    r_v: Matrix::<1, 1>::new(1.0),
                    omega_v: Vector::<1>::zeros(),
                }
            }
        }
        let cfg = HorizonConfig {
            update_period: 0.01,
            ..config()
        };
        let (costs, terminal) = sample_stage_costs::<_, 1, 1, 2>(0, &cfg, &Clock).unwrap();
        assert_eq!(costs[0].gamma[0], 0.0);
        let (costs, _) = sample_stage_costs::<_, 1, 1, 2>(2, &cfg, &Clock).unwrap();
        assert!((costs[1].gamma[0] - 0.07).abs() < 1e-15);
        assert!((terminal.gamma[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_pass_of_frozen_system_is_constant() {
        let plant = FnPlant {
            drift: |_: &Vector<2>| Vector::<2>::zeros(),
            input: |_: &Vector<2>| Matrix::<2, 1>::zeros(),
        };
        let running = ConstantCost::tracking(Matrix::<2, 2>::identity(), &Vector::zeros(), Matrix::<1, 1>::new(1.0));
        let mut rh = RecedingHorizon::<2, 1, 2, _, _, _>::new(plant, Unconstrained, running, config()).unwrap();
        let x = Vector::<2>::new(0.5, -0.5);
        let nominal = vec_of(x, 20);
        rh.rh_update(0, &x, Some(&nominal)).unwrap();
        let rolled = forward_pass(&rh.solver, rh.policy().unwrap(), &x).unwrap();
        assert_eq!(rolled.len(), 20);
        assert!(rolled.iter().all(|r| *r == x));
    }

    fn vec_of(x: Vector<2>, n: usize) -> Vec<Vector<2>> {
        (0..n).map(|_| x).collect()
    }

    #[test]
    fn extract_partitions_stacked_control() {
        let (v, d) = extract_control::<2, 3>(&Vector::<3>::new(1.0, 2.0, 3.0));
        assert_eq!(v, Vector::<2>::new(1.0, 2.0));
        assert_eq!(d, 3.0);
    }
}
