//! Sampled-data closed loop: zero-order hold on a continuous plant.

use alloc::vec::Vec;

use crate::plant::{rk4_step, ContinuousDynamics};
use crate::{Error, Vector};

/// Control returned by a feedback controller at one ZOH tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSample<const L: usize> {
    pub v: Vector<L>,
    pub delta: f64,
    /// The reference the controller deviates from: the `λ = 0` branch for
    /// C-ADP, the goal-seeking control for a filter.
    pub desired: Vector<L>,
    /// `a(x) + b(x)ᵀ[v; δ]` as seen by the controller.
    pub constraint: f64,
}

/// A controller refreshed every `update_period` and queried at every tick.
pub trait FeedbackController<const N: usize, const L: usize> {
    fn update_period(&self) -> f64;

    /// Called at `t = kT_s`, before the first `control` call of window `k`.
    fn refresh(&mut self, update: usize, t: f64, x: &Vector<N>) -> Result<(), Error>;

    fn control(&self, t: f64, x: &Vector<N>) -> Result<ControlSample<L>, Error>;
}

/// Safe-set bookkeeping for logging and the initial-state check.
pub trait SafetyMonitor<const N: usize, const L: usize> {
    /// `[ψ_0(x), …, ψ_{d−1}(x)]`.
    fn chain_values(&self, x: &Vector<N>) -> Result<Vec<f64>, Error>;

    /// `ψ(x, v, δ)`.
    fn constraint_value(&self, x: &Vector<N>, v: &Vector<L>, delta: f64) -> Result<f64, Error>;
}

impl<T, const N: usize, const L: usize> SafetyMonitor<N, L> for &T
where
    T: SafetyMonitor<N, L> + ?Sized,
{
    fn chain_values(&self, x: &Vector<N>) -> Result<Vec<f64>, Error> {
        (**self).chain_values(x)
    }
    fn constraint_value(&self, x: &Vector<N>, v: &Vector<L>, delta: f64) -> Result<f64, Error> {
        (**self).constraint_value(x, v, delta)
    }
}

/// Wall-clock source in seconds; `()` is a clock that never advances.
pub trait Clock {
    fn now(&self) -> f64;
}

impl Clock for () {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Simulation timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    /// Zero-order-hold rate in Hz.
    pub zoh_rate: f64,
    /// RK4 steps per hold period.
    pub substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 120.0,
            zoh_rate: 100.0,
            substeps: 5,
        }
    }
}

impl SimConfig {
    pub fn period(&self) -> f64 {
        1.0 / self.zoh_rate
    }

    pub fn ticks(&self) -> usize {
        libm::round(self.duration * self.zoh_rate) as usize
    }
}

/// One ZOH tick of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow<const N: usize, const L: usize> {
    pub t: f64,
    pub x: Vector<N>,
    pub v: Vector<L>,
    pub delta: f64,
    pub desired: Vector<L>,
    /// Chain values `ψ_0..ψ_{d−1}` at `x`.
    pub chain: Vec<f64>,
    /// `ψ(x, v, δ)`.
    pub constraint: f64,
    /// Wall time of the policy refresh at this tick, if one happened.
    pub solve_ms: Option<f64>,
    /// `‖v_new − v_old‖` across a policy refresh at this tick.
    pub jump: Option<f64>,
}

impl<const N: usize, const L: usize> LogRow<N, L> {
    pub fn is_update(&self) -> bool {
        self.solve_ms.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClosedLoopLog<const N: usize, const L: usize> {
    pub rows: Vec<LogRow<N, L>>,
}

impl<const N: usize, const L: usize> ClosedLoopLog<N, L> {
    pub fn final_state(&self) -> Option<&Vector<N>> {
        self.rows.last().map(|r| &r.x)
    }

    pub fn min_psi0(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.chain.first().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve_times_ms(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().filter_map(|r| r.solve_ms)
    }
}

/// A run that stopped early, with everything logged up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SimAbort<const N: usize, const L: usize> {
    pub error: Error,
    pub partial: ClosedLoopLog<N, L>,
}

/// States beyond this magnitude count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Runs `controller` on `plant` from `x0` with a zero-order hold.
///
/// The controller is refreshed at `t = kT_s` and queried once per hold tick;
/// the plant is integrated with RK4 between ticks. Solver latency is measured
/// with `clock` and logged, not injected into the loop.
pub fn run_closed_loop<P, C, S, K, const N: usize, const L: usize>(
    plant: &P,
    controller: &mut C,
    monitor: &S,
    x0: &Vector<N>,
    config: &SimConfig,
    clock: &K,
) -> Result<ClosedLoopLog<N, L>, SimAbort<N, L>>
where
    P: ContinuousDynamics<N, L> + ?Sized,
    C: FeedbackController<N, L> + ?Sized,
    S: SafetyMonitor<N, L> + ?Sized,
    K: Clock + ?Sized,
{
    let mut log = ClosedLoopLog { rows: Vec::new() };
    let abort = |error, log: ClosedLoopLog<N, L>| SimAbort { error, partial: log };

    let initial = match monitor.chain_values(x0) {
        Ok(v) => v,
        Err(e) => return Err(abort(e, log)),
    };
    if let Some((level, &value)) = initial.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(abort(Error::UnsafeInitialState { level, value }, log));
    }
    if !(config.zoh_rate > 0.0 && config.duration >= 0.0 && config.substeps > 0) {
        return Err(abort(Error::InvalidConfig("invalid simulation timing"), log));
    }
    let update_period = controller.update_period();
    if !(update_period > 0.0) {
        return Err(abort(Error::InvalidConfig("update period must be positive"), log));
    }

    let period = config.period();
    let h = period / config.substeps as f64;
    let ticks = config.ticks();
    log.rows.reserve(ticks + 1);
    let mut x = *x0;
    let mut update = 0usize;

    for tick in 0..=ticks {
        let t = tick as f64 * period;
        let mut solve_ms = None;
        let mut before = None;
        if t >= update as f64 * update_period - 1e-9 * period {
            if update > 0 {
                before = controller.control(t, &x).ok();
            }
            let start = clock.now();
            if let Err(e) = controller.refresh(update, t, &x) {
                return Err(abort(e, log));
            }
            solve_ms = Some((clock.now() - start) * 1e3);
            update += 1;
        }
        let sample = match controller.control(t, &x) {
            Ok(s) => s,
            Err(e) => return Err(abort(e, log)),
        };
        let chain = match monitor.chain_values(&x) {
            Ok(c) => c,
            Err(e) => return Err(abort(e, log)),
        };
        let constraint = match monitor.constraint_value(&x, &sample.v, sample.delta) {
            Ok(c) => c,
            Err(e) => return Err(abort(e, log)),
        };
        let jump = before.map(|b: ControlSample<L>| (sample.v - b.v).norm());
        let v = sample.v;
        log.rows.push(LogRow {
            t,
            x,
            v,
            delta: sample.delta,
            desired: sample.desired,
            chain,
            constraint,
            solve_ms,
            jump,
        });
        if tick == ticks {
            break;
        }
        for _ in 0..config.substeps {
            x = rk4_step(plant, &x, &v, h);
        }
        if x.iter().any(|c| !c.is_finite() || libm::fabs(*c) > DIVERGENCE_LIMIT) {
            let time = (tick + 1) as f64 * period;
            return Err(abort(Error::StateDiverged { time }, log));
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::FnPlant;
    use crate::Matrix;
    use alloc::vec;

    struct Proportional {
        gain: f64,
        refreshes: usize,
    }

    impl FeedbackController<1, 1> for Proportional {
        fn update_period(&self) -> f64 {
            0.05
        }
        fn refresh(&mut self, _update: usize, _t: f64, _x: &Vector<1>) -> Result<(), Error> {
            self.refreshes += 1;
            Ok(())
        }
        fn control(&self, _t: f64, x: &Vector<1>) -> Result<ControlSample<1>, Error> {
            Ok(ControlSample {
                v: -*x * self.gain,
                delta: 0.0,
                desired: Vector::zeros(),
                constraint: 0.0,
            })
        }
    }

    struct Interval;

    impl SafetyMonitor<1, 1> for Interval {
        fn chain_values(&self, x: &Vector<1>) -> Result<Vec<f64>, Error> {
            Ok(vec![1.0 - x[0] * x[0]])
        }
        fn constraint_value(&self, x: &Vector<1>, v: &Vector<1>, _delta: f64) -> Result<f64, Error> {
            Ok(-2.0 * x[0] * v[0] + 1.0 - x[0] * x[0])
        }
    }

    fn integrator() -> FnPlant<fn(&Vector<1>) -> Vector<1>, fn(&Vector<1>) -> Matrix<1, 1>> {
        FnPlant {
            drift: |_| Vector::<1>::zeros(),
            input: |_| Matrix::<1, 1>::new(1.0),
        }
    }

    #[test]
    fn refresh_schedule_and_grid() {
        let mut ctrl = Proportional {
            gain: 1.0,
            refreshes: 0,
        };
        let cfg = SimConfig {
            duration: 1.0,
            ..SimConfig::default()
        };
        let log = run_closed_loop(&integrator(), &mut ctrl, &Interval, &Vector::<1>::new(0.5), &cfg, &()).unwrap();
        assert_eq!(log.rows.len(), 101);
        assert_eq!(ctrl.refreshes, 21);
        assert!(log.rows.windows(2).all(|w| w[1].t > w[0].t));
        assert!(log.rows[0].is_update() && log.rows[5].is_update() && !log.rows[4].is_update());
        // ZOH on ẋ = −x: x_{k+1} = x_k(1 − 0.01) exactly
        let expected = 0.5 * libm::pow(0.99, 100.0);
        assert!((log.final_state().unwrap()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn unsafe_start_is_rejected() {
        let mut ctrl = Proportional {
            gain: 1.0,
            refreshes: 0,
        };
        let err = run_closed_loop(
            &integrator(),
            &mut ctrl,
            &Interval,
            &Vector::<1>::new(2.0),
            &SimConfig::default(),
            &(),
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::UnsafeInitialState { level: 0, .. }));
        assert!(err.partial.rows.is_empty());
    }

    #[test]
    fn divergence_aborts_with_time() {
        let mut ctrl = Proportional {
            gain: -1e5,
            refreshes: 0,
        };
        let err = run_closed_loop(
            &integrator(),
            &mut ctrl,
            &Interval,
            &Vector::<1>::new(0.5),
            &SimConfig::default(),
            &(),
        )
        .unwrap_err();
        match err.error {
            Error::StateDiverged { time } => assert!(time > 0.0 && time < 1.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(!err.partial.rows.is_empty());
    }
}
