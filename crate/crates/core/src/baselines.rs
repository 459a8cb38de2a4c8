//! Goal-seeking control that ignores obstacles, made safe by a
//! minimum-intervention filter on the same affine barrier constraint.

use crate::plant::ContinuousDynamics;
use crate::robot::{robot_f, RobotParams};
use crate::sim::{ControlSample, FeedbackController};
use crate::solver::{ConstraintTerms, StageConstraint, DEGENERATE_B};
use crate::{Error, Vector};

/// Gains of the goal-seeking control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveGains {
    pub k_p: f64,
    pub k_d: f64,
}

impl Default for NaiveGains {
    fn default() -> Self {
        Self { k_p: 0.4, k_d: 0.75 }
    }
}

/// Voltages that produce the desired point acceleration
/// `a_d = −k_p tanh(q − q_d) − k_d tanh(q̇)` in free space.
///
/// The desired `ṡ_d, ω̇_d` follow from differentiating `q̇`; the voltages then
/// solve `M v_d + [f_4(x); f_5(x)] = [ṡ_d; ω̇_d]`, cancelling the damping.
pub fn naive_control(x: &Vector<5>, goal: &Vector<2>, gains: &NaiveGains, p: &RobotParams) -> Vector<2> {
    let f = robot_f(x, p);
    let (sin, cos) = libm::sincos(x[2]);
    let (s, w) = (x[3], x[4]);
    let ax = -gains.k_p * libm::tanh(x[0] - goal[0]) - gains.k_d * libm::tanh(f[0]);
    let ay = -gains.k_p * libm::tanh(x[1] - goal[1]) - gains.k_d * libm::tanh(f[1]);
    let s_dot = cos * ax + sin * ay + p.l_d * w * w;
    let w_dot = (-sin * ax + cos * ay - s * w) / p.l_d;
    let rhs = Vector::<2>::new(s_dot - f[3], w_dot - f[4]);
    p.input_gain()
        .lu()
        .solve(&rhs)
        .expect("input gain is invertible for physical parameters")
}

/// `argmin ‖v − v_d‖² + r_δδ²` subject to `a + b_vᵀv + b_δδ ≥ 0`.
///
/// With a single affine constraint the KKT conditions give the minimizer in
/// closed form: either `(v_d, 0)` is feasible, or the constraint is active and
/// the correction is along `H⁻¹b` with `H = diag(I, r_δ)`.
pub fn min_intervention_filter<const L: usize, const M: usize>(
    desired: &Vector<L>,
    terms: &ConstraintTerms<M>,
    r_delta: f64,
) -> Result<(Vector<L>, f64), Error> {
    const { assert!(M == L + 1, "constraint must cover inputs plus slack") };
    if !(r_delta > 0.0) {
        return Err(Error::InvalidConfig("slack weight must be positive"));
    }
    let b_v = terms.b.fixed_rows::<L>(0).into_owned();
    let b_delta = terms.b[L];
    let slack = terms.a + b_v.dot(desired);
    if slack >= 0.0 {
        return Ok((*desired, 0.0));
    }
    let curvature = b_v.norm_squared() + b_delta * b_delta / r_delta;
    if curvature < DEGENERATE_B * DEGENERATE_B {
        return Err(Error::Infeasible { stage: 0, a: slack });
    }
    let mu = -slack / curvature;
    Ok((desired + b_v * mu, mu * b_delta / r_delta))
}

/// Naive goal seeking passed through [`min_intervention_filter`] at every tick.
#[derive(Debug, Clone)]
pub struct NaiveCbfController<C> {
    pub constraint: C,
    pub params: RobotParams,
    pub goal: Vector<2>,
    pub gains: NaiveGains,
    pub slack_weight: f64,
    /// The filter is memoryless; this only sets how often `refresh` is called.
    pub update_period: f64,
}

impl<C> FeedbackController<5, 2> for NaiveCbfController<C>
where
    C: StageConstraint<5, 3>,
{
    fn update_period(&self) -> f64 {
        self.update_period
    }

    fn refresh(&mut self, _update: usize, _t: f64, _x: &Vector<5>) -> Result<(), Error> {
        Ok(())
    }

    fn control(&self, _t: f64, x: &Vector<5>) -> Result<ControlSample<2>, Error> {
        let desired = naive_control(x, &self.goal, &self.gains, &self.params);
        let terms = self.constraint.terms(0, x)?;
        let (v, delta) = min_intervention_filter(&desired, &terms, self.slack_weight)?;
        Ok(ControlSample {
            v,
            delta,
            desired,
            constraint: terms.a + terms.b.fixed_rows::<2>(0).dot(&v) + terms.b[2] * delta,
        })
    }
}

/// Goal-seeking voltages as a plain closure, for seeding nominal trajectories.
pub fn naive_policy(goal: Vector<2>, gains: NaiveGains, params: RobotParams) -> impl Fn(&Vector<5>) -> Vector<2> + Send + Sync {
    move |x| naive_control(x, &goal, &gains, &params)
}

/// Residual `M v + [f_4; f_5] − [ṡ_d; ω̇_d]` is what the naive control zeroes;
/// this evaluates the achieved `[ṡ, ω̇]` under `v`.
pub fn speed_rates<P: ContinuousDynamics<5, 2>>(plant: &P, x: &Vector<5>, v: &Vector<2>) -> Vector<2> {
    plant.derivative(x, v).fixed_rows::<2>(3).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_equilibrium_gives_zero_voltage() {
        let v = naive_control(
            &Vector::<5>::new(1.0, 2.0, 0.0, 0.0, 0.0),
            &Vector::<2>::new(1.0, 2.0),
            &NaiveGains::default(),
            &RobotParams::default(),
        );
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn inactive_filter_passes_through() {
        let terms = ConstraintTerms {
            a: 1.0,
            b: Vector::<2>::new(1.0, 0.5),
        };
        let (v, d) = min_intervention_filter(&Vector::<1>::new(0.3), &terms, 1.0).unwrap();
        assert_eq!(v[0], 0.3);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn active_scalar_filter() {
        let terms = ConstraintTerms {
            a: -1.0,
            b: Vector::<2>::new(1.0, 0.0),
        };
        let (v, d) = min_intervention_filter(&Vector::<1>::zeros(), &terms, 1.0).unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(d, 0.0);
        assert_eq!(terms.a + terms.b[0] * v[0], 0.0);
    }

    #[test]
    fn degenerate_infeasible_filter_errors() {
        let terms = ConstraintTerms {
            a: -1.0,
            b: Vector::<3>::zeros(),
        };
        assert!(min_intervention_filter(&Vector::<2>::zeros(), &terms, 1.0).is_err());
    }
}
