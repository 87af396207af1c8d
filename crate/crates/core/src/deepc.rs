//! Regularized DeePC: problem assembly, one-shot solves and the
//! receding-horizon controller.
//!
//! The optimal-control problem is posed in soft-constrained form
//!
//! ```text
//! ½‖A g − b‖² + λ_g‖g‖₁,   A = [√λ_y·Up; √λ_y·Yp; √R·Uf; √Q·Yf]
//!                          b = [√λ_y·u_ini; √λ_y·y_ini; √R·u_r; √Q·y_r]
//! ```
//!
//! with optional per-channel input bounds applied to every block of `Uf g`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::behavior::{HankelBlocks, MetricWindow, WindowMetrics};
use crate::error::{Error, Result};
use crate::solver::{
    CompositeLasso, LassoSolution, LinearBox, SolveStatus, SolverSettings, WarmStart,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    /// Output tracking weight.
    pub q: f64,
    /// Input effort weight.
    pub r: f64,
    /// Weight of the initial-condition residual.
    pub lambda_y: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q: 100.0,
            r: 1.0,
            lambda_y: 1e3,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("Q", self.q), ("R", self.r), ("lambda_y", self.lambda_y)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel input limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBounds {
    pub fn symmetric(limit: f64, channels: usize) -> Self {
        Self {
            lo: vec![-limit; channels],
            hi: vec![limit; channels],
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.lo.len() != channels {
            return Err(Error::dim("input lower bounds", channels, self.lo.len()));
        }
        if self.hi.len() != channels {
            return Err(Error::dim("input upper bounds", channels, self.hi.len()));
        }
        if self.lo.iter().chain(&self.hi).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("input bounds"));
        }
        Ok(())
    }

    pub fn is_consistent(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| l <= h)
    }

    /// Bounds repeated over a horizon of `t_f` steps.
    pub fn tiled(&self, t_f: usize) -> LinearBox {
        let m = self.lo.len();
        LinearBox {
            lo: DVector::from_fn(m * t_f, |i, _| self.lo[i % m]),
            hi: DVector::from_fn(m * t_f, |i, _| self.hi[i % m]),
        }
    }

    pub fn clamp(&self, u: &mut DVector<f64>) {
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.max(self.lo[i]).min(self.hi[i]);
        }
    }
}

/// One receding-horizon optimization instance.
#[derive(Debug, Clone)]
pub struct DeePCProblem<'a> {
    pub blocks: &'a HankelBlocks,
    pub u_ini: DVector<f64>,
    pub y_ini: DVector<f64>,
    pub u_r: DVector<f64>,
    pub y_r: DVector<f64>,
    pub weights: Weights,
    pub lambda_g: f64,
    pub bounds: Option<InputBounds>,
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub g: DVector<f64>,
    pub u_f: DVector<f64>,
    pub y_f: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub box_dual: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn assemble<'a>(
    blocks: &'a HankelBlocks,
    u_ini: DVector<f64>,
    y_ini: DVector<f64>,
    u_r: DVector<f64>,
    y_r: DVector<f64>,
    weights: Weights,
    lambda_g: f64,
    bounds: Option<InputBounds>,
) -> Result<DeePCProblem<'a>> {
    let (m, p) = (blocks.n_inputs(), blocks.n_outputs());
    let (t_ini, t_f) = (blocks.t_ini, blocks.t_f);
    for (ctx, v, len) in [
        ("u_ini", &u_ini, m * t_ini),
        ("y_ini", &y_ini, p * t_ini),
        ("u_r", &u_r, m * t_f),
        ("y_r", &y_r, p * t_f),
    ] {
        if v.len() != len {
            return Err(Error::dim(ctx, len, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(ctx));
        }
    }
    weights.validate()?;
    if !(lambda_g >= 0.0) || !lambda_g.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda_g must be finite and nonnegative, got {lambda_g}"
        )));
    }
    if let Some(b) = &bounds {
        b.validate(m)?;
    }
    Ok(DeePCProblem {
        blocks,
        u_ini,
        y_ini,
        u_r,
        y_r,
        weights,
        lambda_g,
        bounds,
    })
}

/// `[√λ_y·Up; √λ_y·Yp; √R·Uf; √Q·Yf]`
pub fn lsq_matrix(blocks: &HankelBlocks, weights: &Weights) -> DMatrix<f64> {
    let parts = [
        (&blocks.up, weights.lambda_y.sqrt()),
        (&blocks.yp, weights.lambda_y.sqrt()),
        (&blocks.uf, weights.r.sqrt()),
        (&blocks.yf, weights.q.sqrt()),
    ];
    let rows = parts.iter().map(|(b, _)| b.nrows()).sum();
    let mut a = DMatrix::zeros(rows, blocks.n_cols());
    let mut at = 0;
    for (blk, w) in parts {
        a.rows_mut(at, blk.nrows()).copy_from(&(blk * w));
        at += blk.nrows();
    }
    a
}

pub fn lsq_rhs(
    weights: &Weights,
    u_ini: &DVector<f64>,
    y_ini: &DVector<f64>,
    u_r: &DVector<f64>,
    y_r: &DVector<f64>,
) -> DVector<f64> {
    let sy = weights.lambda_y.sqrt();
    let parts = [
        (u_ini, sy),
        (y_ini, sy),
        (u_r, weights.r.sqrt()),
        (y_r, weights.q.sqrt()),
    ];
    let len = parts.iter().map(|(v, _)| v.len()).sum();
    let mut b = DVector::zeros(len);
    let mut at = 0;
    for (v, w) in parts {
        b.rows_mut(at, v.len()).copy_from(&(v * w));
        at += v.len();
    }
    b
}

impl DeePCProblem<'_> {
    pub fn lsq_matrix(&self) -> DMatrix<f64> {
        lsq_matrix(self.blocks, &self.weights)
    }

    pub fn rhs(&self) -> DVector<f64> {
        lsq_rhs(
            &self.weights,
            &self.u_ini,
            &self.y_ini,
            &self.u_r,
            &self.y_r,
        )
    }

    pub fn input_box(&self) -> Option<LinearBox> {
        self.bounds.as_ref().map(|b| b.tiled(self.blocks.t_f))
    }
}

/// Solves a single problem from a cold start.
pub fn solve(problem: &DeePCProblem<'_>, settings: &SolverSettings) -> Result<ControlSolution> {
    let constraint = problem.bounds.as_ref().map(|_| problem.blocks.uf.clone());
    let mut lasso = CompositeLasso::new(problem.lsq_matrix(), constraint)?;
    let bx = problem.input_box();
    let sol = lasso.solve(
        &problem.rhs(),
        problem.lambda_g,
        bx.as_ref(),
        settings,
        None,
    )?;
    Ok(control_solution(problem.blocks, sol))
}

fn control_solution(blocks: &HankelBlocks, sol: LassoSolution) -> ControlSolution {
    ControlSolution {
        u_f: &blocks.uf * &sol.g,
        y_f: &blocks.yf * &sol.g,
        g: sol.g,
        objective: sol.objective,
        iterations: sol.iterations,
        status: sol.status,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        box_dual: sol.box_dual,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub t_ini: usize,
    pub t_f: usize,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub bounds: Option<InputBounds>,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Length of the metric window.
    #[serde(default = "default_window")]
    pub window_n: usize,
    #[serde(default = "default_warm")]
    pub warm_start: bool,
}

fn default_window() -> usize {
    MetricWindow::DEFAULT_LEN
}

fn default_warm() -> bool {
    true
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            t_ini: 4,
            t_f: 12,
            weights: Weights::default(),
            bounds: None,
            solver: SolverSettings::default(),
            window_n: default_window(),
            warm_start: true,
        }
    }
}

/// Outcome of one controller evaluation.
#[derive(Debug, Clone)]
pub struct ControlOutcome {
    pub u: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    /// The solver failed and the previous input was held.
    pub fallback: bool,
}

/// Receding-horizon DeePC controller. Holds the last `T_ini` input/output
/// samples and the metric window.
#[derive(Debug, Clone)]
pub struct Controller {
    blocks: HankelBlocks,
    config: ControllerConfig,
    lasso: CompositeLasso,
    input_box: Option<LinearBox>,
    u_hist: VecDeque<DVector<f64>>,
    y_hist: VecDeque<DVector<f64>>,
    last_u: DVector<f64>,
    warm: Option<WarmStart>,
    window: MetricWindow,
    u_r: DVector<f64>,
}

impl Controller {
    /// `init_u`/`init_y` hold at least `T_ini` past samples (one per
    /// column); the most recent `T_ini` are used.
    pub fn new(
        blocks: HankelBlocks,
        config: ControllerConfig,
        init_u: &DMatrix<f64>,
        init_y: &DMatrix<f64>,
    ) -> Result<Self> {
        let (m, p) = (blocks.n_inputs(), blocks.n_outputs());
        if blocks.t_ini != config.t_ini || blocks.t_f != config.t_f {
            return Err(Error::InvalidArgument(format!(
                "blocks built for (T_ini, T_f) = ({}, {}) but controller configured for ({}, {})",
                blocks.t_ini, blocks.t_f, config.t_ini, config.t_f
            )));
        }
        config.weights.validate()?;
        config.solver.validate()?;
        if init_u.nrows() != m {
            return Err(Error::dim("initial input rows", m, init_u.nrows()));
        }
        if init_y.nrows() != p {
            return Err(Error::dim("initial output rows", p, init_y.nrows()));
        }
        if init_u.ncols() < config.t_ini || init_y.ncols() < config.t_ini {
            return Err(Error::InvalidArgument(format!(
                "controller needs {} initial samples",
                config.t_ini
            )));
        }
        let input_box = match &config.bounds {
            Some(b) => {
                b.validate(m)?;
                if !b.is_consistent() {
                    log::warn!("input bounds have lo > hi; every solve will report infeasible");
                }
                Some(b.tiled(config.t_f))
            }
            None => None,
        };
        let constraint = input_box.as_ref().map(|_| blocks.uf.clone());
        let lasso = CompositeLasso::new(lsq_matrix(&blocks, &config.weights), constraint)?;
        let take = |mat: &DMatrix<f64>| -> VecDeque<DVector<f64>> {
            let start = mat.ncols() - config.t_ini;
            (start..mat.ncols())
                .map(|j| mat.column(j).into_owned())
                .collect()
        };
        let u_hist = take(init_u);
        let y_hist = take(init_y);
        let last_u = u_hist.back().cloned().expect("T_ini > 0");
        Ok(Self {
            window: MetricWindow::new(config.window_n)?,
            u_r: DVector::zeros(m * config.t_f),
            blocks,
            config,
            lasso,
            input_box,
            u_hist,
            y_hist,
            last_u,
            warm: None,
        })
    }

    pub fn blocks(&self) -> &HankelBlocks {
        &self.blocks
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn window(&self) -> &MetricWindow {
        &self.window
    }

    pub fn last_input(&self) -> &DVector<f64> {
        &self.last_u
    }

    /// Input reference over the horizon (defaults to zero).
    pub fn set_input_reference(&mut self, u_r: DVector<f64>) -> Result<()> {
        if u_r.len() != self.u_r.len() {
            return Err(Error::dim("input reference", self.u_r.len(), u_r.len()));
        }
        self.u_r = u_r;
        Ok(())
    }

    fn stacked(hist: &VecDeque<DVector<f64>>) -> DVector<f64> {
        let q = hist[0].len();
        let mut v = DVector::zeros(q * hist.len());
        for (k, s) in hist.iter().enumerate() {
            v.rows_mut(k * q, q).copy_from(s);
        }
        v
    }

    /// Current problem instance for output setpoint `setpoint`.
    pub fn problem(&self, setpoint: &DVector<f64>, lambda_g: f64) -> Result<DeePCProblem<'_>> {
        let p = self.blocks.n_outputs();
        if setpoint.len() != p {
            return Err(Error::dim("output setpoint", p, setpoint.len()));
        }
        let y_r = DVector::from_fn(p * self.config.t_f, |i, _| setpoint[i % p]);
        assemble(
            &self.blocks,
            Self::stacked(&self.u_hist),
            Self::stacked(&self.y_hist),
            self.u_r.clone(),
            y_r,
            self.config.weights,
            lambda_g,
            self.config.bounds.clone(),
        )
    }

    /// Solves at the current buffers and returns the first input of the
    /// optimal plan. Does not touch the buffers.
    pub fn compute(&mut self, setpoint: &DVector<f64>, lambda_g: f64) -> Result<ControlOutcome> {
        let problem = self.problem(setpoint, lambda_g)?;
        let b = problem.rhs();
        let warm = if self.config.warm_start {
            self.warm.as_ref()
        } else {
            None
        };
        let sol = self.lasso.solve(
            &b,
            lambda_g,
            self.input_box.as_ref(),
            &self.config.solver,
            warm,
        )?;
        let m = self.blocks.n_inputs();
        if sol.status == SolveStatus::Infeasible {
            let mut u = self.last_u.clone();
            if let Some(bounds) = &self.config.bounds {
                bounds.clamp(&mut u);
            }
            log::warn!("DeePC solve infeasible; holding the previous input");
            return Ok(ControlOutcome {
                u,
                status: sol.status,
                iterations: sol.iterations,
                objective: sol.objective,
                fallback: true,
            });
        }
        let mut u = self.blocks.uf.rows(0, m) * &sol.g;
        // The box holds only to solver tolerance (or not at all after
        // max_iter); the applied input must respect it exactly.
        if let Some(bounds) = &self.config.bounds {
            bounds.clamp(&mut u);
        }
        self.warm = Some(sol.warm);
        Ok(ControlOutcome {
            u,
            status: sol.status,
            iterations: sol.iterations,
            objective: sol.objective,
            fallback: false,
        })
    }

    /// Records an applied input and the output it produced. Returns the
    /// window metrics once the window is full.
    pub fn observe(
        &mut self,
        u: &DVector<f64>,
        y: &DVector<f64>,
        setpoint: &DVector<f64>,
    ) -> Result<Option<WindowMetrics>> {
        if u.len() != self.blocks.n_inputs() {
            return Err(Error::dim("applied input", self.blocks.n_inputs(), u.len()));
        }
        if y.len() != self.blocks.n_outputs() {
            return Err(Error::dim(
                "measured output",
                self.blocks.n_outputs(),
                y.len(),
            ));
        }
        self.u_hist.pop_front();
        self.u_hist.push_back(u.clone());
        self.y_hist.pop_front();
        self.y_hist.push_back(y.clone());
        self.last_u = u.clone();
        self.window
            .push_and_measure(setpoint.as_slice(), y.as_slice(), u.as_slice())
    }

    /// Receives the measurement produced by the previously applied input,
    /// then solves and returns the next input.
    pub fn control_step(
        &mut self,
        y: &DVector<f64>,
        setpoint: &DVector<f64>,
        lambda_g: f64,
    ) -> Result<(ControlOutcome, Option<WindowMetrics>)> {
        let u_prev = self.last_u.clone();
        let metrics = self.observe(&u_prev, y, setpoint)?;
        let out = self.compute(setpoint, lambda_g)?;
        self.last_u = out.u.clone();
        Ok((out, metrics))
    }
}
