//! Experiment specs and the collect → train → evaluate pipeline.
//!
//! A spec is a TOML document; unknown keys are rejected. The bundled specs
//! encode the benchmark scenarios and can be used by name.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::behavior::{partition, HankelBlocks};
use crate::closed_loop::{
    run_closed_loop, summarize_fixed, FixedLambda, NoiseSchedule, RunLog, Scenario,
};
use crate::deepc::{ControllerConfig, InputBounds, Weights};
use crate::error::{Error, Result};
use crate::io;
use crate::plant::{
    excite, second_order, triple_mass_spring, Benchmark, NoiseKind, NoiseModel, PlantModel,
    SpringParams, Trajectory,
};
use crate::rng::derive;
use crate::sarsa::{
    collect_segments, load_table, run_online, save_table, state_ranges, train_closed_loop,
    train_offline, uniform_actions, uniform_edges, Backup, QTable, TunerConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub seed: u64,
    /// Logged closed-loop steps of the evaluation run.
    pub steps: usize,
    /// Seconds per step, used only for labeling.
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    /// Steps before this one run open loop with zero input.
    #[serde(default)]
    pub control_start_step: usize,
    /// Length of the trailing window used for steady-state figures.
    #[serde(default = "default_steady")]
    pub steady_state_steps: usize,
    /// Output subdirectory; defaults to `name`.
    #[serde(default)]
    pub output_dir: Option<String>,
    pub plant: PlantSection,
    #[serde(default)]
    pub collection: CollectionSection,
    pub noise: Vec<NoiseEntry>,
    #[serde(default)]
    pub deepc: DeepcSection,
    #[serde(default)]
    pub tuner: TunerSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub mode: Mode,
}

fn default_dt() -> f64 {
    0.005
}
fn default_steady() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub benchmark: Benchmark,
    /// Initial state; zeros when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Constant output reference; zeros when absent.
    #[serde(default)]
    pub setpoint: Option<Vec<f64>>,
    /// Overrides for the torsional chain constants.
    #[serde(default)]
    pub spring: Option<SpringParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionSection {
    pub length_steps: usize,
    pub input_mean: f64,
    pub input_variance: f64,
}

impl Default for CollectionSection {
    fn default() -> Self {
        Self {
            length_steps: 600,
            input_mean: 0.0,
            input_variance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEntry {
    pub start_step: usize,
    pub kind: NoiseKind,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepcSection {
    pub t_ini: usize,
    pub t_f: usize,
    pub q: f64,
    pub r: f64,
    pub lambda_y: f64,
    /// Symmetric per-channel input limit.
    pub input_limit: Option<f64>,
    pub window_n: usize,
    pub max_iter: usize,
}

impl Default for DeepcSection {
    fn default() -> Self {
        let c = ControllerConfig::default();
        Self {
            t_ini: c.t_ini,
            t_f: c.t_f,
            q: c.weights.q,
            r: c.weights.r,
            lambda_y: c.weights.lambda_y,
            input_limit: None,
            window_n: c.window_n,
            max_iter: c.solver.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerSection {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    pub action_step: f64,
    pub action_count: usize,
    pub bins: usize,
    pub backup: Backup,
    pub freeze_online: bool,
    pub initial_lambda: f64,
}

impl Default for TunerSection {
    fn default() -> Self {
        let t = TunerConfig::new(vec![1.0], 1.0, 1.0);
        Self {
            alpha: t.alpha,
            gamma: t.gamma,
            epsilon: t.epsilon,
            a: t.a,
            b: t.b,
            action_step: 0.006,
            action_count: 101,
            bins: crate::sarsa::DEFAULT_BINS,
            backup: t.backup,
            freeze_online: t.freeze_online,
            initial_lambda: t.initial_lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Length of each fixed-λ collection segment.
    pub points_per_action: usize,
    /// Replay passes over the fixed-λ segments.
    pub replay_passes: usize,
    /// ε-greedy closed-loop training episodes after the replay.
    pub episodes: usize,
    pub episode_steps: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            points_per_action: 1000,
            replay_passes: 1,
            episodes: 10,
            episode_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    FixedLambda { value: f64 },
    Sdeepc,
    Sweep { param: SweepParam, grid: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    LambdaG,
    N,
    Epsilon,
    Alpha,
    Gamma,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [
        SweepParam::LambdaG,
        SweepParam::N,
        SweepParam::Epsilon,
        SweepParam::Alpha,
        SweepParam::Gamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::LambdaG => "lambda_g",
            SweepParam::N => "n",
            SweepParam::Epsilon => "epsilon",
            SweepParam::Alpha => "alpha",
            SweepParam::Gamma => "gamma",
        }
    }
}

const BUNDLED: [(&str, &str); 7] = [
    (
        "second_order_gaussian",
        include_str!("../specs/second_order_gaussian.toml"),
    ),
    (
        "second_order_baseline",
        include_str!("../specs/second_order_baseline.toml"),
    ),
    (
        "second_order_uniform",
        include_str!("../specs/second_order_uniform.toml"),
    ),
    ("spring", include_str!("../specs/spring.toml")),
    (
        "second_order_lambda_sweep",
        include_str!("../specs/second_order_lambda_sweep.toml"),
    ),
    (
        "second_order_n_sweep",
        include_str!("../specs/second_order_n_sweep.toml"),
    ),
    (
        "second_order_epsilon_sweep",
        include_str!("../specs/second_order_epsilon_sweep.toml"),
    ),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Reads a spec from a file, or from the bundled set when `source` names
/// one and no such file exists.
pub fn load_spec(source: &str) -> Result<ExperimentSpec> {
    let path = Path::new(source);
    let text = if path.exists() {
        io::read_file(path)?
    } else if let Some(s) = bundled(source) {
        s.to_string()
    } else {
        return Err(Error::Spec(format!(
            "`{source}` is neither a file nor a bundled spec ({})",
            bundled_names().join(", ")
        )));
    };
    parse_spec(&text)
}

pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            return bad(format!("name `{}` is not a plain file name", self.name));
        }
        if let Some(d) = &self.output_dir {
            if d.is_empty() || d.contains("..") {
                return bad(format!(
                    "output_dir `{d}` must be a relative path inside the output root"
                ));
            }
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return bad(format!("dt_s must be positive, got {}", self.dt_s));
        }
        let model = self.model()?;
        let (n, p) = (model.n_state(), model.n_outputs());
        if let Some(x0) = &self.plant.x0 {
            if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
                return bad(format!("plant.x0 needs {n} finite entries"));
            }
        }
        if let Some(r) = &self.plant.setpoint {
            if r.len() != p || r.iter().any(|v| !v.is_finite()) {
                return bad(format!("plant.setpoint needs {p} finite entries"));
            }
        }
        if self.plant.spring.is_some() && self.plant.benchmark != Benchmark::TripleMassSpring {
            return bad("plant.spring applies only to triple_mass_spring".into());
        }
        self.schedule()
            .map_err(|e| Error::Spec(format!("noise: {e}")))?;
        NoiseModel::gaussian(self.collection.input_mean, self.collection.input_variance)
            .map_err(|e| Error::Spec(format!("collection: {e}")))?;
        let d = &self.deepc;
        let depth = d.t_ini + d.t_f;
        if d.t_ini == 0 || d.t_f == 0 {
            return bad("deepc.t_ini and deepc.t_f must be positive".into());
        }
        if self.collection.length_steps < depth + 1 {
            return bad(format!(
                "collection.length_steps {} is too short for depth {depth}",
                self.collection.length_steps
            ));
        }
        if let Some(l) = d.input_limit {
            if !(l >= 0.0) || !l.is_finite() {
                return bad(format!(
                    "deepc.input_limit must be finite and nonnegative, got {l}"
                ));
            }
        }
        if d.window_n == 0 || d.max_iter == 0 {
            return bad("deepc.window_n and deepc.max_iter must be positive".into());
        }
        Weights {
            q: d.q,
            r: d.r,
            lambda_y: d.lambda_y,
        }
        .validate()
        .map_err(|e| Error::Spec(format!("deepc: {e}")))?;
        let t = &self.tuner;
        if t.action_count == 0 || !(t.action_step > 0.0) || !t.action_step.is_finite() {
            return bad("tuner.action_step must be positive and tuner.action_count nonzero".into());
        }
        if t.bins < 2 {
            return bad("tuner.bins must be at least 2".into());
        }
        self.tuner_config(1.0, 1.0)
            .validate()
            .map_err(|e| Error::Spec(format!("tuner: {e}")))?;
        if let Mode::FixedLambda { value } = self.mode {
            if !(value >= 0.0) || !value.is_finite() {
                return bad(format!(
                    "mode.value must be finite and nonnegative, got {value}"
                ));
            }
        }
        if let Mode::Sweep { param, grid } = &self.mode {
            if grid.is_empty() {
                return bad("mode.grid is empty".into());
            }
            if grid.iter().any(|v| !v.is_finite()) {
                return bad("mode.grid holds a non-finite value".into());
            }
            for &v in grid {
                let ok = match param {
                    SweepParam::LambdaG => v >= 0.0,
                    SweepParam::N => v >= 1.0 && v.fract() == 0.0,
                    SweepParam::Epsilon | SweepParam::Gamma => (0.0..=1.0).contains(&v),
                    SweepParam::Alpha => v > 0.0 && v <= 1.0,
                };
                if !ok {
                    return bad(format!(
                        "mode.grid value {v} is invalid for {}",
                        param.name()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<PlantModel> {
        match self.plant.benchmark {
            Benchmark::SecondOrder => Ok(second_order()),
            Benchmark::TripleMassSpring => {
                triple_mass_spring(&self.plant.spring.unwrap_or_default())
            }
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let segs = self
            .noise
            .iter()
            .map(|e| Ok((e.start_step, NoiseModel::new(e.kind, e.mean, e.variance)?)))
            .collect::<Result<Vec<_>>>()?;
        NoiseSchedule::new(segs)
    }

    pub fn controller(&self) -> ControllerConfig {
        let d = &self.deepc;
        let mut c = ControllerConfig {
            t_ini: d.t_ini,
            t_f: d.t_f,
            weights: Weights {
                q: d.q,
                r: d.r,
                lambda_y: d.lambda_y,
            },
            window_n: d.window_n,
            ..ControllerConfig::default()
        };
        c.solver.max_iter = d.max_iter;
        c
    }

    pub fn actions(&self) -> Vec<f64> {
        uniform_actions(self.tuner.action_step, self.tuner.action_count)
    }

    /// Tuner with bin ranges `[0, energy_hi]` and `[0, rmse_hi]`.
    pub fn tuner_config(&self, energy_hi: f64, rmse_hi: f64) -> TunerConfig {
        let t = &self.tuner;
        TunerConfig {
            alpha: t.alpha,
            gamma: t.gamma,
            epsilon: t.epsilon,
            a: t.a,
            b: t.b,
            window_n: self.deepc.window_n,
            energy_edges: uniform_edges(energy_hi, t.bins),
            rmse_edges: uniform_edges(rmse_hi, t.bins),
            actions: self.actions(),
            backup: t.backup,
            freeze_online: t.freeze_online,
            initial_lambda: t.initial_lambda,
        }
    }

    /// Evaluation scenario under the spec seed.
    pub fn scenario(&self, model: &PlantModel) -> Result<Scenario> {
        let vec_or_zero = |v: &Option<Vec<f64>>, n| {
            v.as_ref()
                .map_or_else(|| DVector::zeros(n), |v| DVector::from_vec(v.clone()))
        };
        Ok(Scenario {
            x0: vec_or_zero(&self.plant.x0, model.n_state()),
            setpoint: vec_or_zero(&self.plant.setpoint, model.n_outputs()),
            steps: self.steps,
            control_start: self.control_start_step,
            noise: self.schedule()?,
            seed: self.seed,
        })
    }

    pub fn output_subdir(&self) -> &str {
        self.output_dir.as_deref().unwrap_or(&self.name)
    }
}

/// Collected behavioral data and the objects derived from it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: PlantModel,
    pub trajectory: Trajectory,
    pub trajectory_csv: String,
    pub blocks: HankelBlocks,
    pub config: ControllerConfig,
}

/// Excites the plant under the first scheduled noise model and builds the
/// Hankel blocks.
pub fn collect(spec: &ExperimentSpec) -> Result<Prepared> {
    let model = spec.model()?;
    let d = &spec.deepc;
    let input = NoiseModel::gaussian(spec.collection.input_mean, spec.collection.input_variance)?;
    let schedule = spec.schedule()?;
    let output = *schedule.at(0);
    let trajectory = excite(
        &model,
        spec.collection.length_steps,
        d.t_ini + d.t_f,
        &input,
        &output,
        spec.seed,
    )?;
    let blocks = partition(&trajectory.inputs, &trajectory.outputs, d.t_ini, d.t_f)?;
    let mut config = spec.controller();
    if let Some(l) = d.input_limit {
        config.bounds = Some(InputBounds::symmetric(l, model.n_inputs()));
    }
    Ok(Prepared {
        trajectory_csv: io::trajectory_to_csv(&trajectory),
        model,
        trajectory,
        blocks,
        config,
    })
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub table: QTable,
    pub tuner: TunerConfig,
    /// Mean J per replay pass, then per closed-loop episode.
    pub curve: Vec<(String, f64)>,
    pub transitions: usize,
}

fn training_scenario(spec: &ExperimentSpec, model: &PlantModel) -> Result<Scenario> {
    let base = spec.scenario(model)?;
    Ok(Scenario {
        noise: NoiseSchedule::constant(*base.noise.at(0)),
        seed: derive(spec.seed, 10),
        ..base
    })
}

/// Offline stage: fixed-λ segments under the initial noise, replayed into
/// a fresh table, then refined by closed-loop ε-greedy episodes.
pub fn train(spec: &ExperimentSpec, prep: &Prepared) -> Result<Trained> {
    let sc = training_scenario(spec, &prep.model)?;
    let tr = &spec.training;
    let segments = collect_segments(
        &prep.model,
        &prep.blocks,
        &prep.config,
        &sc,
        &spec.actions(),
        tr.points_per_action,
    )?;
    train_from_segments(spec, prep, &segments, spec.tuner_config(1.0, 1.0))
}

/// Training with explicit segments; `template` supplies everything except
/// the bin edges, which come from the segments.
pub fn train_from_segments(
    spec: &ExperimentSpec,
    prep: &Prepared,
    segments: &[crate::sarsa::TrainingSegment],
    template: TunerConfig,
) -> Result<Trained> {
    let (ehi, mhi) = state_ranges(segments, template.window_n)?;
    let tuner = TunerConfig {
        energy_edges: uniform_edges(ehi, spec.tuner.bins),
        rmse_edges: uniform_edges(mhi, spec.tuner.bins),
        ..template
    };
    let offline = train_offline(segments, &tuner, spec.training.replay_passes)?;
    let mut curve: Vec<(String, f64)> = offline
        .episode_mean_j
        .iter()
        .enumerate()
        .map(|(i, j)| (format!("replay_{i}"), *j))
        .collect();
    let mut config = prep.config.clone();
    config.window_n = tuner.window_n;
    let sc = Scenario {
        steps: spec.training.episode_steps,
        ..training_scenario(spec, &prep.model)?
    };
    let (table, episodes) = train_closed_loop(
        &prep.model,
        &prep.blocks,
        &config,
        &sc,
        offline.table,
        &tuner,
        spec.training.episodes,
    )?;
    curve.extend(
        episodes
            .iter()
            .enumerate()
            .map(|(i, j)| (format!("episode_{i}"), *j)),
    );
    let transitions = offline.transitions
        + spec.training.episodes * spec.training.episode_steps.saturating_sub(tuner.window_n);
    Ok(Trained {
        table,
        tuner,
        curve,
        transitions,
    })
}

/// One evaluation run; `trained` is required for S-DeePC and ignored for a
/// fixed λ_g.
pub fn evaluate(
    prep: &Prepared,
    scenario: &Scenario,
    lambda: Option<f64>,
    trained: Option<&Trained>,
) -> Result<RunLog> {
    match (lambda, trained) {
        (Some(l), _) => run_closed_loop(
            &prep.model,
            &prep.blocks,
            &prep.config,
            scenario,
            &mut FixedLambda(l),
        ),
        (None, Some(t)) => {
            let mut config = prep.config.clone();
            config.window_n = t.tuner.window_n;
            run_online(
                &prep.model,
                &prep.blocks,
                &config,
                scenario,
                t.table.clone(),
                &t.tuner,
            )
            .map(|(log, _)| log)
        }
        (None, None) => Err(Error::InvalidArgument(
            "S-DeePC evaluation needs a trained table".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub method: String,
    pub seed: u64,
    pub steps: usize,
    pub dt_s: f64,
    /// Number of J values behind `mean_j`.
    pub j_samples: usize,
    pub mean_j: Option<f64>,
    pub max_j: Option<f64>,
    pub steady_state: Option<Band>,
    /// First step after which J stays within ±10% of the steady-state mean.
    pub convergence_step: Option<usize>,
    pub noise_switch_step: Option<usize>,
    /// Peak J from the last noise switch on.
    pub post_switch_peak_j: Option<f64>,
    pub mean_lambda_g: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub steps: usize,
    pub samples: usize,
    pub mean_j: f64,
    pub min_j: f64,
    pub max_j: f64,
}

/// Fraction of the steady-state mean that bounds the convergence band.
pub const CONVERGENCE_BAND: f64 = 0.1;

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn steady_band(j: &[Option<f64>], steps: usize) -> Option<Band> {
    let tail: Vec<f64> = j[j.len().saturating_sub(steps)..]
        .iter()
        .flatten()
        .copied()
        .collect();
    Some(Band {
        steps: steps.min(j.len()),
        samples: tail.len(),
        mean_j: mean(&tail)?,
        min_j: tail.iter().copied().fold(f64::INFINITY, f64::min),
        max_j: tail.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// First step `k` such that every J from `k` on lies within
/// `±CONVERGENCE_BAND · reference`; `None` if the last sample is outside.
pub fn convergence_step(j: &[Option<f64>], reference: f64) -> Option<usize> {
    let tol = CONVERGENCE_BAND * reference.abs();
    let mut start = None;
    for (k, v) in j.iter().enumerate() {
        match v {
            Some(v) if (v - reference).abs() <= tol => {
                start.get_or_insert(k);
            }
            _ => start = None,
        }
    }
    start
}

pub fn summarize(
    spec: &ExperimentSpec,
    method: &str,
    seed: u64,
    log: &RunLog,
    noise_switch: Option<usize>,
) -> Summary {
    let j = log.objectives(spec.tuner.a, spec.tuner.b);
    let vals: Vec<f64> = j.iter().flatten().copied().collect();
    let band = steady_band(&j, spec.steady_state_steps);
    let lam: Vec<f64> = log
        .records
        .iter()
        .map(|r| r.lambda_g)
        .filter(|l| !l.is_nan())
        .collect();
    Summary {
        name: spec.name.clone(),
        method: method.to_string(),
        seed,
        steps: log.records.len(),
        dt_s: spec.dt_s,
        j_samples: vals.len(),
        mean_j: mean(&vals),
        max_j: vals.iter().copied().reduce(f64::max),
        steady_state: band,
        convergence_step: band.and_then(|b| convergence_step(&j, b.mean_j)),
        noise_switch_step: noise_switch,
        post_switch_peak_j: noise_switch
            .and_then(|s| j.iter().skip(s).flatten().copied().reduce(f64::max)),
        mean_lambda_g: mean(&lam),
    }
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes") + "\n"
    }
}

pub fn method_name(spec: &ExperimentSpec) -> String {
    match &spec.mode {
        Mode::FixedLambda { value } => format!("fixed_lambda_{value}"),
        Mode::Sdeepc => "sdeepc".to_string(),
        Mode::Sweep { param, .. } => format!("sweep_{}", param.name()),
    }
}

/// Files written under the run directory.
pub mod files {
    pub const TRAJECTORY: &str = "trajectory.csv";
    pub const BLOCKS_DIR: &str = "blocks";
    pub const LOG: &str = "log.csv";
    pub const SUMMARY: &str = "summary.json";
    pub const QTABLE: &str = "qtable.bin";
    pub const TRAINING: &str = "training.csv";
    pub const SWEEP: &str = "sweep.csv";
    pub const COMPARE: &str = "compare.csv";
    pub const COMPARE_SUMMARY: &str = "compare_summary.csv";
}

/// Writes the trajectory and block export.
pub fn write_collection(dir: &Path, prep: &Prepared) -> Result<()> {
    io::write_file(&dir.join(files::TRAJECTORY), &prep.trajectory_csv)?;
    io::export_blocks(
        &dir.join(files::BLOCKS_DIR),
        &prep.blocks,
        io::sha256_hex(prep.trajectory_csv.as_bytes()),
    )
}

pub fn write_training(dir: &Path, trained: &Trained) -> Result<()> {
    save_table(&dir.join(files::QTABLE), &trained.table, &trained.tuner)?;
    let rows: Vec<Vec<String>> = trained
        .curve
        .iter()
        .map(|(stage, j)| vec![stage.clone(), io::fmt_f64(*j)])
        .collect();
    io::write_file(
        &dir.join(files::TRAINING),
        io::table_to_csv(&["stage".into(), "mean_j".into()], &rows),
    )
}

/// Loads a table saved by [`write_training`], checking it fits the spec.
pub fn load_trained(path: &Path, spec: &ExperimentSpec) -> Result<Trained> {
    let (table, tuner) = load_table(path)?;
    if tuner.actions != spec.actions() || tuner.window_n != spec.deepc.window_n {
        return Err(Error::Spec(format!(
            "table {} was trained for a different action grid or window",
            path.display()
        )));
    }
    Ok(Trained {
        table,
        tuner,
        curve: Vec::new(),
        transitions: 0,
    })
}

/// Everything a single run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub summary: Summary,
    pub trained: Option<Trained>,
}

/// Runs a `fixed_lambda` or `sdeepc` spec and writes its artifacts to `dir`.
pub fn run(spec: &ExperimentSpec, dir: &Path, table: Option<&Path>) -> Result<RunOutcome> {
    let prep = collect(spec)?;
    write_collection(dir, &prep)?;
    let scenario = spec.scenario(&prep.model)?;
    let (lambda, trained) = match &spec.mode {
        Mode::FixedLambda { value } => (Some(*value), None),
        Mode::Sdeepc => {
            let t = match table {
                Some(p) => load_trained(p, spec)?,
                None => train(spec, &prep)?,
            };
            write_training(dir, &t)?;
            (None, Some(t))
        }
        Mode::Sweep { .. } => {
            return Err(Error::Spec("sweep specs run through `sweep`".into()));
        }
    };
    let log = evaluate_or_empty(&prep, &scenario, lambda, trained.as_ref())?;
    let summary = summarize(
        spec,
        &method_name(spec),
        spec.seed,
        &log,
        scenario.noise.last_switch(),
    );
    let (m, p) = (prep.model.n_inputs(), prep.model.n_outputs());
    io::write_file(
        &dir.join(files::LOG),
        io::step_log_to_csv(&log, spec.tuner.a, spec.tuner.b, m, p),
    )?;
    io::write_file(&dir.join(files::SUMMARY), summary.to_json())?;
    Ok(RunOutcome {
        log,
        summary,
        trained,
    })
}

fn evaluate_or_empty(
    prep: &Prepared,
    scenario: &Scenario,
    lambda: Option<f64>,
    trained: Option<&Trained>,
) -> Result<RunLog> {
    if scenario.steps == 0 {
        return Ok(RunLog {
            records: Vec::new(),
            window_n: prep.config.window_n,
        });
    }
    evaluate(prep, scenario, lambda, trained)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub mean_j: f64,
    pub mean_m: f64,
    pub mean_energy: f64,
    pub samples: usize,
    pub steady_state_j: Option<f64>,
}

/// Runs `jobs` copies of `f` over `0..count`, returning results in index
/// order so output does not depend on scheduling.
pub fn par_map<T: Send>(
    count: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, count.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                slots
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}

fn point_from_log(value: f64, log: &RunLog, spec: &ExperimentSpec) -> SweepPoint {
    let row = summarize_fixed(log, value, spec.tuner.a, spec.tuner.b);
    let j = log.objectives(spec.tuner.a, spec.tuner.b);
    SweepPoint {
        value,
        mean_j: row.mean_j,
        mean_m: row.mean_m,
        mean_energy: row.mean_energy,
        samples: row.samples,
        steady_state_j: steady_band(&j, spec.steady_state_steps).map(|b| b.mean_j),
    }
}

/// One row per grid value. λ_g sweeps use fixed-λ runs; every other
/// parameter is swept through the full S-DeePC pipeline, sharing one
/// collection (window changes are exact re-evaluations of the same
/// fixed-λ segments).
pub fn sweep(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<SweepPoint>> {
    let Mode::Sweep { param, grid } = &spec.mode else {
        return Err(Error::Spec("`sweep` needs mode.kind = \"sweep\"".into()));
    };
    let prep = collect(spec)?;
    let scenario = spec.scenario(&prep.model)?;
    if *param == SweepParam::LambdaG {
        return par_map(grid.len(), jobs, |i| {
            let log = evaluate_or_empty(&prep, &scenario, Some(grid[i]), None)?;
            Ok(point_from_log(grid[i], &log, spec))
        });
    }
    let sc = training_scenario(spec, &prep.model)?;
    let segments = collect_segments(
        &prep.model,
        &prep.blocks,
        &prep.config,
        &sc,
        &spec.actions(),
        spec.training.points_per_action,
    )?;
    par_map(grid.len(), jobs, |i| {
        let v = grid[i];
        let mut s = spec.clone();
        match param {
            SweepParam::N => s.deepc.window_n = v as usize,
            SweepParam::Epsilon => s.tuner.epsilon = v,
            SweepParam::Alpha => s.tuner.alpha = v,
            SweepParam::Gamma => s.tuner.gamma = v,
            SweepParam::LambdaG => unreachable!("handled above"),
        }
        let mut p = prep.clone();
        p.config.window_n = s.deepc.window_n;
        let trained = train_from_segments(&s, &p, &segments, s.tuner_config(1.0, 1.0))?;
        let log = evaluate_or_empty(&p, &scenario, None, Some(&trained))?;
        Ok(point_from_log(v, &log, &s))
    })
}

pub fn sweep_to_csv(param: SweepParam, rows: &[SweepPoint]) -> String {
    let header: Vec<String> = [
        param.name(),
        "mean_j",
        "mean_m",
        "mean_energy",
        "samples",
        "steady_state_j",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                io::fmt_f64(r.value),
                io::fmt_f64(r.mean_j),
                io::fmt_f64(r.mean_m),
                io::fmt_f64(r.mean_energy),
                r.samples.to_string(),
                r.steady_state_j.map(io::fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    io::table_to_csv(&header, &body)
}

/// Reads back the `(value, mean_j)` columns of a sweep CSV.
pub fn sweep_from_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse("sweep csv", e.to_string()))?;
        let get = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse("sweep csv", format!("line {}: bad field {k}", i + 2)))
        };
        out.push((get(0)?, get(1)?));
    }
    Ok(out)
}

pub fn write_sweep(dir: &Path, spec: &ExperimentSpec, rows: &[SweepPoint]) -> Result<()> {
    let Mode::Sweep { param, .. } = &spec.mode else {
        return Err(Error::Spec("not a sweep spec".into()));
    };
    io::write_file(&dir.join(files::SWEEP), sweep_to_csv(*param, rows))
}

/// Scenario fields that must agree across compared specs.
fn scenario_key(
    spec: &ExperimentSpec,
) -> (
    Benchmark,
    usize,
    u64,
    &Vec<NoiseEntry>,
    Option<&SpringParams>,
    &Option<Vec<f64>>,
) {
    (
        spec.plant.benchmark,
        spec.steps,
        spec.seed,
        &spec.noise,
        spec.plant.spring.as_ref(),
        &spec.plant.x0,
    )
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub logs: Vec<RunLog>,
    pub summaries: Vec<Summary>,
}

/// Runs each spec (no sweeps) on the shared scenario. Tables are trained
/// per spec in memory; nothing is read from or written to earlier runs.
pub fn compare(specs: &[ExperimentSpec], jobs: usize) -> Result<Comparison> {
    let Some(first) = specs.first() else {
        return Err(Error::Spec("compare needs at least one spec".into()));
    };
    for s in specs {
        if scenario_key(s) != scenario_key(first) {
            return Err(Error::Spec(format!(
                "`{}` and `{}` differ in plant, steps, seed, initial state or noise schedule",
                first.name, s.name
            )));
        }
        if matches!(s.mode, Mode::Sweep { .. }) {
            return Err(Error::Spec(format!(
                "`{}` is a sweep and cannot be compared",
                s.name
            )));
        }
    }
    let runs = par_map(specs.len(), jobs, |i| {
        let spec = &specs[i];
        let prep = collect(spec)?;
        let scenario = spec.scenario(&prep.model)?;
        let (lambda, trained) = match spec.mode {
            Mode::FixedLambda { value } => (Some(value), None),
            _ => (None, Some(train(spec, &prep)?)),
        };
        let log = evaluate_or_empty(&prep, &scenario, lambda, trained.as_ref())?;
        let summary = summarize(
            spec,
            &method_name(spec),
            spec.seed,
            &log,
            scenario.noise.last_switch(),
        );
        Ok((log, summary))
    })?;
    let mut methods: Vec<String> = Vec::new();
    for s in specs {
        let mut m = format!("{}:{}", s.name, method_name(s));
        let base = m.clone();
        let mut k = 2;
        while methods.contains(&m) {
            m = format!("{base}#{k}");
            k += 1;
        }
        methods.push(m);
    }
    let (logs, summaries) = runs.into_iter().unzip();
    Ok(Comparison {
        methods,
        logs,
        summaries,
    })
}

impl Comparison {
    pub fn to_csv(&self, a: f64, b: f64) -> String {
        let header: Vec<String> = std::iter::once("k".to_string())
            .chain(self.methods.iter().map(|m| format!("J[{m}]")))
            .collect();
        let js: Vec<Vec<Option<f64>>> = self.logs.iter().map(|l| l.objectives(a, b)).collect();
        let steps = js.iter().map(Vec::len).max().unwrap_or(0);
        let rows: Vec<Vec<String>> = (0..steps)
            .map(|k| {
                std::iter::once(k.to_string())
                    .chain(js.iter().map(|j| {
                        j.get(k)
                            .copied()
                            .flatten()
                            .map(io::fmt_f64)
                            .unwrap_or_default()
                    }))
                    .collect()
            })
            .collect();
        io::table_to_csv(&header, &rows)
    }

    pub fn summary_csv(&self) -> String {
        let header: Vec<String> = [
            "method",
            "convergence_step",
            "mean_j",
            "post_switch_peak_j",
            "steady_state_mean_j",
            "steady_state_min_j",
            "steady_state_max_j",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let opt = |v: Option<f64>| v.map(io::fmt_f64).unwrap_or_default();
        let rows: Vec<Vec<String>> = self
            .methods
            .iter()
            .zip(&self.summaries)
            .map(|(m, s)| {
                let b = s.steady_state;
                vec![
                    m.clone(),
                    s.convergence_step
                        .map(|c| c.to_string())
                        .unwrap_or_default(),
                    opt(s.mean_j),
                    opt(s.post_switch_peak_j),
                    opt(b.map(|b| b.mean_j)),
                    opt(b.map(|b| b.min_j)),
                    opt(b.map(|b| b.max_j)),
                ]
            })
            .collect();
        io::table_to_csv(&header, &rows)
    }

    pub fn write(&self, dir: &Path, a: f64, b: f64) -> Result<()> {
        io::write_file(&dir.join(files::COMPARE), self.to_csv(a, b))?;
        io::write_file(&dir.join(files::COMPARE_SUMMARY), self.summary_csv())
    }
}
