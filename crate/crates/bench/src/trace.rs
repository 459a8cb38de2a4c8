//! Per-trial trace CSV.
//!
//! Columns, in order:
//! `t, qx, qy, gamma, s, omega, v_r, v_l, delta, psi0, solve_ms, vd_r, vd_l, constraint, update`.
//! `solve_ms` is empty except on policy-update ticks, `vd_*` is the
//! unconstrained branch of the control and `update` is 1 on refresh ticks.

use std::path::Path;

use cadp_core::sim::LogRow;
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const TRACE_COLUMNS: [&str; 15] = [
    "t",
    "qx",
    "qy",
    "gamma",
    "s",
    "omega",
    "v_r",
    "v_l",
    "delta",
    "psi0",
    "solve_ms",
    "vd_r",
    "vd_l",
    "constraint",
    "update",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub qx: f64,
    pub qy: f64,
    pub gamma: f64,
    pub s: f64,
    pub omega: f64,
    pub v_r: f64,
    pub v_l: f64,
    pub delta: f64,
    pub psi0: f64,
    pub solve_ms: Option<f64>,
    pub vd_r: f64,
    pub vd_l: f64,
    pub constraint: f64,
    pub update: u8,
}

impl TraceRow {
    pub fn state(&self) -> [f64; 5] {
        [self.qx, self.qy, self.gamma, self.s, self.omega]
    }

    pub fn v(&self) -> [f64; 2] {
        [self.v_r, self.v_l]
    }

    pub fn desired(&self) -> [f64; 2] {
        [self.vd_r, self.vd_l]
    }

    pub fn is_update(&self) -> bool {
        self.update != 0
    }
}

impl From<&LogRow<5, 2>> for TraceRow {
    fn from(r: &LogRow<5, 2>) -> Self {
        Self {
            t: r.t,
            qx: r.x[0],
            qy: r.x[1],
            gamma: r.x[2],
            s: r.x[3],
            omega: r.x[4],
            v_r: r.v[0],
            v_l: r.v[1],
            delta: r.delta,
            psi0: r.chain.first().copied().unwrap_or(f64::NAN),
            solve_ms: r.solve_ms,
            vd_r: r.desired[0],
            vd_l: r.desired[1],
            constraint: r.constraint,
            update: r.is_update() as u8,
        }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::csv(path, e))?;
    if rows.is_empty() {
        w.write_record(TRACE_COLUMNS).map_err(|e| BenchError::csv(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| BenchError::csv(path, e))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::csv(path, e))?;
    let headers = r.headers().map_err(|e| BenchError::csv(path, e))?;
    if headers.iter().ne(TRACE_COLUMNS) {
        return Err(BenchError::Config(format!("{}: unexpected trace columns", path.display())));
    }
    r.deserialize()
        .collect::<Result<Vec<TraceRow>, _>>()
        .map_err(|e| BenchError::csv(path, e))
}
