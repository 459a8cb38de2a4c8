//! One closed-loop run of one method from one start.

use std::fmt;
use std::time::Instant;

use cadp_core::baselines::{naive_policy, NaiveCbfController, NaiveGains};
use cadp_core::horizon::{CadpController, RecedingHorizon};
use cadp_core::robot::{RobotParams, RobotPlant};
use cadp_core::sim::{run_closed_loop, Clock, FeedbackController, SimConfig};
use cadp_core::solver::CentralDifference;
use cadp_core::Vector;
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;
use crate::trace::TraceRow;
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Receding-horizon C-ADP.
    Cadp,
    /// Goal-seeking control behind a minimum-intervention filter.
    #[value(name = "naive_cbf")]
    NaiveCbf,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Cadp, Method::NaiveCbf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Cadp => "cadp",
            Method::NaiveCbf => "naive_cbf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub id: usize,
    pub method: Method,
    pub start_index: usize,
    pub start: [f64; 5],
    pub seed: u64,
    pub duration: f64,
}

impl TrialSpec {
    pub fn trace_name(&self) -> String {
        format!("{:03}_{}_{:02}.csv", self.id, self.method, self.start_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub spec: TrialSpec,
    pub rows: Vec<TraceRow>,
    /// The abort reason, if the run stopped early.
    pub failure: Option<String>,
    /// Wall time of the whole run, seconds.
    pub wall_s: f64,
}

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub fn run_trial(scenario: &Scenario, spec: &TrialSpec, clock: &dyn Clock) -> Result<TrialOutcome, BenchError> {
    let params = RobotParams::default();
    let plant = RobotPlant::new(params);
    let limits = scenario.limits();
    let (_, chain) = scenario.world()?;
    let sim = SimConfig {
        duration: spec.duration,
        zoh_rate: scenario.sim.zoh_rate,
        substeps: scenario.sim.substeps,
    };
    let x0 = Vector::<5>::from(spec.start);

    let mut controller: Box<dyn FeedbackController<5, 2> + '_> = match spec.method {
        Method::Cadp => {
            let horizon =
                RecedingHorizon::<5, 2, 3, _, _, _>::new(plant, &chain, scenario.running_cost(), scenario.horizon_config())?
                    .with_linearization(CentralDifference {
                        richardson: scenario.horizon.richardson,
                        ..CentralDifference::default()
                    });
            let seed = naive_policy(limits.goal, NaiveGains::default(), params);
            Box::new(CadpController::new(horizon, Box::new(seed)))
        }
        // memoryless, so a single refresh at t = 0 is enough
        Method::NaiveCbf => Box::new(NaiveCbfController {
            constraint: &chain,
            params,
            goal: limits.goal,
            gains: NaiveGains::default(),
            slack_weight: scenario.weights.r_delta,
            update_period: spec.duration.max(sim.period()) * 2.0,
        }),
    };

    let started = Instant::now();
    let (log, failure) = match run_closed_loop(&plant, controller.as_mut(), &chain, &x0, &sim, clock) {
        Ok(log) => (log, None),
        Err(abort) => (abort.partial, Some(abort.error.to_string())),
    };
    if let Some(reason) = &failure {
        log::warn!("trial {} ({}) aborted: {reason}", spec.id, spec.method);
    }
    Ok(TrialOutcome {
        spec: spec.clone(),
        rows: log.rows.iter().map(TraceRow::from).collect(),
        failure,
        wall_s: started.elapsed().as_secs_f64(),
    })
}
