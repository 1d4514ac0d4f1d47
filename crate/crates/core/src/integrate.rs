//! Explicit Runge-Kutta time stepping of dg/dt = Q_c(g).

use crate::collision::CollisionWorkspace;
use crate::conserve::ConstraintSystem;
use crate::diagnostics::{moments, MomentSet};
use crate::grid::State;
use crate::kernel::KernelSpec;
use crate::{Error, Result};
use std::time::{Duration, Instant};

/// Explicit time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk2,
    Rk4,
}

impl Method {
    pub fn order(self) -> u32 {
        match self {
            Method::Euler => 1,
            Method::Rk2 => 2,
            Method::Rk4 => 4,
        }
    }
}

/// Requested step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// cfl / (m0 (2 sqrt(d) L)^lambda)
    Auto { cfl: f64 },
}

/// Default CFL number of [`StepSize::Auto`].
pub const DEFAULT_CFL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt: StepSize,
    pub t_end: f64,
    /// Apply the conservation correction at every stage (otherwise once per step).
    pub conserve_every_stage: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk4,
            dt: StepSize::Auto { cfl: DEFAULT_CFL },
            t_end: 1.0,
            conserve_every_stage: true,
        }
    }
}

/// Q_c(g): the corrected collision operator.
pub fn rhs(s: &State, ws: &CollisionWorkspace, cs: &ConstraintSystem) -> Result<Vec<f64>> {
    cs.conserve_discrete(&ws.q_u(s)?)
}

/// Step size from the worst-case loss frequency m0 (2 sqrt(d) L)^lambda.
pub fn auto_dt(s: &State, spec: &KernelSpec, cfl: f64) -> Result<f64> {
    let grid = s.grid();
    let m0 = grid.integrate(s.values());
    if m0.is_nan() || m0 <= 0.0 {
        return Err(Error::InvalidArgument(format!("automatic step needs positive mass, got {m0}")));
    }
    if !(cfl > 0.0 && cfl.is_finite()) {
        return Err(Error::InvalidArgument(format!("cfl must be positive, got {cfl}")));
    }
    let reach = 2.0 * (grid.dim() as f64).sqrt() * grid.half_width();
    Ok(cfl / (m0 * reach.powf(spec.lambda())))
}

fn axpy(base: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    base.iter().zip(x).map(|(b, xi)| b + a * xi).collect()
}

/// Advance `s` by `dt`.
pub fn step(s: &State, method: Method, dt: f64, conserve_every_stage: bool, ws: &CollisionWorkspace, cs: &ConstraintSystem) -> Result<State> {
    let grid = s.grid().clone();
    let eval = |values: Vec<f64>| -> Result<Vec<f64>> {
        let st = State::new(grid.clone(), values, s.t).map_err(|_| Error::BlowUp { t: s.t })?;
        let q = ws.q_u(&st)?;
        if conserve_every_stage {
            cs.conserve_discrete(&q)
        } else {
            Ok(q)
        }
    };
    let g = s.values();
    let mut increment = match method {
        Method::Euler => eval(g.to_vec())?,
        Method::Rk2 => {
            let k1 = eval(g.to_vec())?;
            eval(axpy(g, 0.5 * dt, &k1))?
        }
        Method::Rk4 => {
            let k1 = eval(g.to_vec())?;
            let k2 = eval(axpy(g, 0.5 * dt, &k1))?;
            let k3 = eval(axpy(g, 0.5 * dt, &k2))?;
            let k4 = eval(axpy(g, dt, &k3))?;
            (0..g.len()).map(|j| (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0).collect()
        }
    };
    if !conserve_every_stage {
        increment = cs.conserve_discrete(&increment)?;
    }
    let next = axpy(g, dt, &increment);
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::BlowUp { t: s.t + dt });
    }
    State::new(grid, next, s.t + dt)
}

/// Observer invoked during [`run`].
pub trait DiagnosticSink {
    /// Called with the initial state (step 0), every `cadence` steps and at the end.
    fn record(&mut self, s: &State, step: usize) -> Result<()>;

    /// Called once after the last record, also when the run aborts.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&State, usize) -> Result<()>> DiagnosticSink for F {
    fn record(&mut self, s: &State, step: usize) -> Result<()> {
        self(s, step)
    }
}

/// Outcome of [`run`].
#[derive(Debug)]
pub struct RunSummary {
    /// Last successfully computed state.
    pub final_state: State,
    pub steps: usize,
    pub dt: f64,
    /// Moments at every recorded step.
    pub moments: Vec<MomentSet>,
    pub wall_time: Duration,
    /// Error that stopped the run early, if any.
    pub abort: Option<Error>,
}

/// Integrate to `cfg.t_end` with a uniform step no larger than the request.
pub fn run(
    initial: &State,
    cfg: &IntegratorConfig,
    ws: &CollisionWorkspace,
    cs: &ConstraintSystem,
    cadence: usize,
    sinks: &mut [&mut dyn DiagnosticSink],
) -> Result<RunSummary> {
    if !(cfg.t_end >= 0.0 && cfg.t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("final time must be nonnegative, got {}", cfg.t_end)));
    }
    let requested = match cfg.dt {
        StepSize::Fixed(dt) => dt,
        StepSize::Auto { cfl } => auto_dt(initial, ws.spec(), cfl)?,
    };
    if !(requested > 0.0 && requested.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {requested}")));
    }
    let steps = (cfg.t_end / requested).ceil() as usize;
    let dt = if steps == 0 { requested } else { cfg.t_end / steps as f64 };
    let cadence = cadence.max(1);
    let lambda = ws.spec().lambda();
    let start = Instant::now();
    let mut state = initial.clone();
    let mut series = vec![moments(&state, lambda, &[])];
    for sink in sinks.iter_mut() {
        sink.record(&state, 0)?;
    }
    let mut abort = None;
    let mut done = 0;
    for i in 1..=steps {
        match step(&state, cfg.method, dt, cfg.conserve_every_stage, ws, cs) {
            Ok(mut next) => {
                next.t = initial.t + i as f64 * dt;
                state = next;
                done = i;
            }
            Err(e) => {
                abort = Some(e);
                break;
            }
        }
        if i % cadence == 0 || i == steps {
            series.push(moments(&state, lambda, &[]));
            for sink in sinks.iter_mut() {
                sink.record(&state, i)?;
            }
        }
    }
    for sink in sinks.iter_mut() {
        sink.finish()?;
    }
    Ok(RunSummary { final_state: state, steps: done, dt, moments: series, wall_time: start.elapsed(), abort })
}
