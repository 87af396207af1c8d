//! Closed-loop runs of the DeePC controller against a simulated plant.
//!
//! Each run first applies `T_ini` zero inputs from `x0` to fill the
//! controller buffers (not logged), then logs one record per step. Steps
//! before `control_start` keep the input at zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::behavior::{HankelBlocks, MetricWindow, WindowMetrics};
use crate::deepc::{Controller, ControllerConfig};
use crate::error::{Error, Result};
use crate::plant::{check_divergence, NoiseModel, PlantModel};
use crate::rng::stream;

/// Piecewise-constant output noise: segment `i` is active from its start
/// step until the next segment starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    segments: Vec<(usize, NoiseModel)>,
}

impl NoiseSchedule {
    pub fn new(segments: Vec<(usize, NoiseModel)>) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(Error::InvalidArgument("noise schedule is empty".into()));
        };
        if first.0 != 0 {
            return Err(Error::InvalidArgument(format!(
                "noise schedule must start at step 0, starts at {}",
                first.0
            )));
        }
        for w in segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidArgument(format!(
                    "noise schedule start steps must increase strictly ({} after {})",
                    w[1].0, w[0].0
                )));
            }
        }
        for (_, n) in &segments {
            n.validate()?;
        }
        Ok(Self { segments })
    }

    pub fn constant(noise: NoiseModel) -> Self {
        Self {
            segments: vec![(0, noise)],
        }
    }

    pub fn segments(&self) -> &[(usize, NoiseModel)] {
        &self.segments
    }

    pub fn at(&self, step: usize) -> &NoiseModel {
        let idx = self.segments.partition_point(|(s, _)| *s <= step);
        &self.segments[idx - 1].1
    }

    /// First step of the last segment, if there is more than one.
    pub fn last_switch(&self) -> Option<usize> {
        (self.segments.len() > 1).then(|| self.segments.last().expect("nonempty").0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub x0: DVector<f64>,
    /// Constant output reference.
    pub setpoint: DVector<f64>,
    pub steps: usize,
    pub control_start: usize,
    pub noise: NoiseSchedule,
    pub seed: u64,
}

impl Scenario {
    fn validate(&self, model: &PlantModel) -> Result<()> {
        if self.x0.len() != model.n_state() {
            return Err(Error::dim("initial state", model.n_state(), self.x0.len()));
        }
        if self.setpoint.len() != model.n_outputs() {
            return Err(Error::dim(
                "setpoint",
                model.n_outputs(),
                self.setpoint.len(),
            ));
        }
        Ok(())
    }
}

/// Chooses λ_g before each solve. `metrics` are the window metrics after
/// the previous step (none until the window is full).
pub trait LambdaPolicy {
    fn choose(&mut self, step: usize, metrics: Option<WindowMetrics>) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct FixedLambda(pub f64);

impl LambdaPolicy for FixedLambda {
    fn choose(&mut self, _step: usize, _metrics: Option<WindowMetrics>) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub lambda_g: f64,
    pub metrics: Option<WindowMetrics>,
    /// `open_loop`, `fallback`, or the solver status.
    pub status: String,
    pub iterations: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub reference: DVector<f64>,
}

impl StepRecord {
    /// Tuning objective `|a·energy − b·M|`.
    pub fn objective(&self, a: f64, b: f64) -> Option<f64> {
        self.metrics.map(|m| tuning_objective(a, b, m))
    }
}

pub fn tuning_objective(a: f64, b: f64, m: WindowMetrics) -> f64 {
    (a * m.energy - b * m.rmse).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub window_n: usize,
}

impl RunLog {
    /// J per logged step, `None` until the window is full.
    pub fn objectives(&self, a: f64, b: f64) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.objective(a, b)).collect()
    }

    /// Recomputes the window metrics with a different window length.
    /// The applied inputs do not depend on the window, so this is exact.
    pub fn rewindow(&self, n: usize) -> Result<RunLog> {
        let mut w = MetricWindow::new(n)?;
        let mut records = self.records.clone();
        for r in &mut records {
            r.metrics =
                w.push_and_measure(r.reference.as_slice(), r.y.as_slice(), r.u.as_slice())?;
        }
        Ok(RunLog {
            records,
            window_n: n,
        })
    }
}

/// Runs the closed loop with λ_g chosen by `policy` at every controlled step.
pub fn run_closed_loop(
    model: &PlantModel,
    blocks: &HankelBlocks,
    config: &ControllerConfig,
    scenario: &Scenario,
    policy: &mut dyn LambdaPolicy,
) -> Result<RunLog> {
    scenario.validate(model)?;
    let (m, p) = (model.n_inputs(), model.n_outputs());
    if blocks.n_inputs() != m || blocks.n_outputs() != p {
        return Err(Error::InvalidArgument(format!(
            "data blocks are {}-input/{}-output but the plant is {m}-input/{p}-output",
            blocks.n_inputs(),
            blocks.n_outputs()
        )));
    }
    let mut rng = stream(scenario.seed, 2);
    let mut x = scenario.x0.clone();
    let zero_u = DVector::zeros(m);

    // Pre-roll under the first noise segment.
    let t_ini = config.t_ini;
    let mut init_y = DMatrix::zeros(p, t_ini);
    for t in 0..t_ini {
        let d = scenario.noise.at(0).sample(p, &mut rng);
        let (xn, y) = model.step(&x, &zero_u, &d)?;
        init_y.set_column(t, &y);
        x = xn;
    }
    let mut ctrl = Controller::new(
        blocks.clone(),
        config.clone(),
        &DMatrix::zeros(m, t_ini),
        &init_y,
    )?;

    let mut records = Vec::with_capacity(scenario.steps);
    let mut metrics = None;
    for k in 0..scenario.steps {
        let (u, lambda_g, status, iterations) = if k < scenario.control_start {
            (zero_u.clone(), f64::NAN, "open_loop".to_string(), 0)
        } else {
            let lambda_g = policy.choose(k, metrics);
            let out = ctrl.compute(&scenario.setpoint, lambda_g)?;
            let status = if out.fallback {
                "fallback".to_string()
            } else {
                out.status.as_str().to_string()
            };
            (out.u, lambda_g, status, out.iterations)
        };
        let d = scenario.noise.at(k).sample(p, &mut rng);
        let (xn, y) = model.step(&x, &u, &d)?;
        check_divergence(&xn, k)?;
        x = xn;
        metrics = ctrl.observe(&u, &y, &scenario.setpoint)?;
        records.push(StepRecord {
            k,
            lambda_g,
            metrics,
            status,
            iterations,
            u,
            y,
            reference: scenario.setpoint.clone(),
        });
    }
    Ok(RunLog {
        records,
        window_n: config.window_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_g: f64,
    pub mean_j: f64,
    pub mean_m: f64,
    pub mean_energy: f64,
    pub samples: usize,
}

/// Window-averaged metrics of one fixed-λ run.
pub fn summarize_fixed(log: &RunLog, lambda_g: f64, a: f64, b: f64) -> SweepRow {
    let (mut j, mut mm, mut e, mut n) = (0.0, 0.0, 0.0, 0usize);
    for r in &log.records {
        if let Some(w) = r.metrics {
            j += tuning_objective(a, b, w);
            mm += w.rmse;
            e += w.energy;
            n += 1;
        }
    }
    let d = n.max(1) as f64;
    SweepRow {
        lambda_g,
        mean_j: if n == 0 { f64::NAN } else { j / d },
        mean_m: if n == 0 { f64::NAN } else { mm / d },
        mean_energy: if n == 0 { f64::NAN } else { e / d },
        samples: n,
    }
}

/// One fixed-λ closed-loop run per grid value, all under the scenario seed.
#[allow(clippy::too_many_arguments)]
pub fn lambda_sweep(
    model: &PlantModel,
    blocks: &HankelBlocks,
    config: &ControllerConfig,
    scenario: &Scenario,
    grid: &[f64],
    a: f64,
    b: f64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("λ grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "λ grid must increase strictly".into(),
        ));
    }
    grid.iter()
        .map(|&lambda| {
            let log = run_closed_loop(model, blocks, config, scenario, &mut FixedLambda(lambda))?;
            Ok(summarize_fixed(&log, lambda, a, b))
        })
        .collect()
}
