//! Tabular SARSA over the state `(input energy bin, RMSE bin)` with the
//! λ_g grid as the action set.
//!
//! Offline training replays fixed-λ closed-loop segments and can then run
//! ε-greedy training episodes in the closed loop; the online stage keeps
//! learning while it picks λ_g ε-greedily at every step.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{HankelBlocks, WindowMetrics};
use crate::closed_loop::{run_closed_loop, FixedLambda, LambdaPolicy, RunLog, Scenario};
use crate::deepc::ControllerConfig;
use crate::error::{Error, Result};
use crate::plant::PlantModel;
use crate::rng::{derive, stream, SimRng};

/// Bins per state axis, as in the reference table layout.
pub const DEFAULT_BINS: usize = 101;

/// Quantile of the training data used as the upper end of the bin range.
pub const EDGE_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backup {
    /// Bootstrap from the realized next action.
    #[default]
    Sarsa,
    /// Bootstrap from the best next action.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    pub window_n: usize,
    pub energy_edges: Vec<f64>,
    pub rmse_edges: Vec<f64>,
    pub actions: Vec<f64>,
    #[serde(default)]
    pub backup: Backup,
    /// Stop updating the table during the online stage.
    #[serde(default)]
    pub freeze_online: bool,
    /// λ_g used while the metric window is still filling.
    #[serde(default = "default_initial_lambda")]
    pub initial_lambda: f64,
}

fn default_initial_lambda() -> f64 {
    0.03
}

/// `{step·i : i = 1..=count}`
pub fn uniform_actions(step: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|i| step * i as f64).collect()
}

/// `bins − 1` edges splitting `[0, hi]` into equal bins; values above `hi`
/// fall into the last bin.
pub fn uniform_edges(hi: f64, bins: usize) -> Vec<f64> {
    let hi = if hi > 0.0 && hi.is_finite() {
        hi
    } else {
        1e-12
    };
    (1..bins).map(|i| hi * i as f64 / bins as f64).collect()
}

impl TunerConfig {
    pub fn new(actions: Vec<f64>, energy_hi: f64, rmse_hi: f64) -> Self {
        Self {
            alpha: 0.53,
            gamma: 0.86,
            epsilon: 0.35,
            a: 1.0,
            b: 1.0,
            window_n: 40,
            energy_edges: uniform_edges(energy_hi, DEFAULT_BINS),
            rmse_edges: uniform_edges(rmse_hi, DEFAULT_BINS),
            actions,
            backup: Backup::Sarsa,
            freeze_online: false,
            initial_lambda: default_initial_lambda(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return bad("objective coefficients must be finite and nonnegative".into());
        }
        if self.window_n == 0 {
            return bad("window length must be positive".into());
        }
        for (name, e) in [("energy", &self.energy_edges), ("rmse", &self.rmse_edges)] {
            if e.iter().any(|v| !v.is_finite()) || e.windows(2).any(|w| !(w[1] > w[0])) {
                return bad(format!(
                    "{name} edges must be finite and strictly increasing"
                ));
            }
        }
        if self.actions.is_empty()
            || self.actions.iter().any(|v| !(*v > 0.0) || !v.is_finite())
            || self.actions.windows(2).any(|w| !(w[1] > w[0]))
        {
            return bad("action grid must be nonempty, positive and strictly increasing".into());
        }
        if !(self.initial_lambda >= 0.0 && self.initial_lambda.is_finite()) {
            return bad("initial lambda must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.energy_edges.len() + 1,
            self.rmse_edges.len() + 1,
            self.actions.len(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RLState {
    pub energy_raw: f64,
    pub rmse_raw: f64,
    pub energy_bin: usize,
    pub rmse_bin: usize,
}

/// Number of edges strictly below `v`.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|e| *e < v)
}

pub fn discretize(energy: f64, rmse: f64, config: &TunerConfig) -> Result<RLState> {
    if energy.is_nan() || rmse.is_nan() {
        return Err(Error::NonFinite("tuner state"));
    }
    if energy < 0.0 || rmse < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tuner state must be nonnegative, got ({energy}, {rmse})"
        )));
    }
    Ok(RLState {
        energy_raw: energy,
        rmse_raw: rmse,
        energy_bin: bin_index(&config.energy_edges, energy),
        rmse_bin: bin_index(&config.rmse_edges, rmse),
    })
}

pub fn reward(s: &RLState, a: f64, b: f64) -> f64 {
    -(a * s.energy_raw - b * s.rmse_raw).abs()
}

/// Dense `(energy bin, rmse bin, action)` table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    dims: [usize; 3],
    values: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"SDPC";
const HEADER_LEN: usize = 16;

impl QTable {
    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        let len = checked_len(dims)?;
        Ok(Self {
            dims,
            values: vec![0.0; len],
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn offset(&self, e: usize, r: usize, a: usize) -> usize {
        assert!(
            e < self.dims[0] && r < self.dims[1] && a < self.dims[2],
            "table index ({e}, {r}, {a}) outside {:?}",
            self.dims
        );
        (e * self.dims[1] + r) * self.dims[2] + a
    }

    pub fn get(&self, s: &RLState, a: usize) -> f64 {
        self.values[self.offset(s.energy_bin, s.rmse_bin, a)]
    }

    pub fn row(&self, s: &RLState) -> &[f64] {
        let start = self.offset(s.energy_bin, s.rmse_bin, 0);
        &self.values[start..start + self.dims[2]]
    }

    pub fn set(&mut self, s: &RLState, a: usize, v: f64) {
        let i = self.offset(s.energy_bin, s.rmse_bin, a);
        self.values[i] = v;
    }

    /// Lowest index among the maxima of the state's row.
    pub fn greedy(&self, s: &RLState) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (i, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = i;
            }
        }
        best
    }

    /// Greedy over the entries that have been updated (nonzero), lowest
    /// index among ties; `fallback` when the state was never visited.
    pub fn greedy_visited(&self, s: &RLState, fallback: usize) -> usize {
        let row = self.row(s);
        let mut best: Option<usize> = None;
        for (i, v) in row.iter().enumerate() {
            if *v != 0.0 && best.is_none_or(|b| *v > row[b]) {
                best = Some(i);
            }
        }
        best.unwrap_or(fallback)
    }

    pub fn nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::parse("Q-table", m);
        if bytes.len() < HEADER_LEN {
            return Err(err(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(err("bad magic".into()));
        }
        let dim = |i: usize| {
            let b: [u8; 4] = bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes");
            u32::from_le_bytes(b) as usize
        };
        let dims = [dim(0), dim(1), dim(2)];
        let len = checked_len(dims)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != len * 8 {
            return Err(err(format!(
                "dims {dims:?} need {} payload bytes, found {}",
                len * 8,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q-table entries"));
        }
        Ok(Self { dims, values })
    }
}

fn checked_len(dims: [usize; 3]) -> Result<usize> {
    if dims.iter().any(|d| *d == 0 || *d > u32::MAX as usize) {
        return Err(Error::InvalidArgument(format!(
            "invalid table dims {dims:?}"
        )));
    }
    dims.iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .filter(|n| *n <= (1 << 28))
        .ok_or_else(|| Error::InvalidArgument(format!("table dims {dims:?} are too large")))
}

/// JSON sidecar stored next to the binary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QTableSidecar {
    pub dims: [usize; 3],
    pub tuner: TunerConfig,
}

impl QTableSidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)
            .map_err(|e| Error::parse("Q-table sidecar", e.to_string()))?;
        s.tuner.validate()?;
        if s.tuner.dims() != s.dims {
            return Err(Error::parse(
                "Q-table sidecar",
                format!(
                    "dims {:?} disagree with the bin edges and grid {:?}",
                    s.dims,
                    s.tuner.dims()
                ),
            ));
        }
        Ok(s)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

pub fn save_table(path: &Path, q: &QTable, tuner: &TunerConfig) -> Result<()> {
    if q.dims() != tuner.dims() {
        return Err(Error::dim("table actions", tuner.dims()[2], q.dims()[2]));
    }
    let side = QTableSidecar {
        dims: q.dims(),
        tuner: tuner.clone(),
    };
    let json = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    std::fs::write(path, q.to_bytes()).map_err(|e| Error::io(path, e))?;
    let sp = sidecar_path(path);
    std::fs::write(&sp, json + "\n").map_err(|e| Error::io(&sp, e))
}

pub fn load_table(path: &Path) -> Result<(QTable, TunerConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let q = QTable::from_bytes(&bytes)?;
    let side = QTableSidecar::from_json(&text)?;
    if q.dims() != side.dims {
        return Err(Error::parse(
            "Q-table",
            format!(
                "table dims {:?} disagree with sidecar dims {:?}",
                q.dims(),
                side.dims
            ),
        ));
    }
    Ok((q, side.tuner))
}

/// One temporal-difference update; returns the new cell value.
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update(
    q: &mut QTable,
    s_prev: &RLState,
    a_taken: usize,
    r: f64,
    s_next: &RLState,
    a_next: usize,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let old = q.get(s_prev, a_taken);
    let next = q.get(s_next, a_next);
    let v = old + alpha * (r + gamma * next - old);
    q.set(s_prev, a_taken, v);
    v
}

fn backup_action(q: &QTable, s_next: &RLState, a_next: usize, mode: Backup) -> usize {
    match mode {
        Backup::Sarsa => a_next,
        Backup::Max => q.greedy(s_next),
    }
}

/// ε-greedy: a uniform action with probability ε, otherwise the greedy one
/// among visited entries (`fallback` for an unvisited state).
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    s: &RLState,
    epsilon: f64,
    fallback: usize,
    rng: &mut R,
) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.dims()[2])
    } else {
        q.greedy_visited(s, fallback)
    }
}

/// Index of the grid action closest to `lambda`, lowest on ties.
pub fn nearest_action(actions: &[f64], lambda: f64) -> usize {
    (0..actions.len()).fold(0, |b, i| {
        if (actions[i] - lambda).abs() < (actions[b] - lambda).abs() {
            i
        } else {
            b
        }
    })
}

/// Closed-loop log recorded at one fixed action.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSegment {
    pub action: usize,
    pub log: RunLog,
}

/// Runs one fixed-λ segment of `points` steps per action, each restarted
/// from the scenario's initial state with its own derived seed.
pub fn collect_segments(
    model: &PlantModel,
    blocks: &HankelBlocks,
    config: &ControllerConfig,
    scenario: &Scenario,
    actions: &[f64],
    points: usize,
) -> Result<Vec<TrainingSegment>> {
    actions
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let sc = Scenario {
                steps: points,
                seed: derive(scenario.seed, 1000 + i as u64),
                ..scenario.clone()
            };
            let log = run_closed_loop(model, blocks, config, &sc, &mut FixedLambda(lambda))?;
            Ok(TrainingSegment { action: i, log })
        })
        .collect()
}

/// `EDGE_QUANTILE` of the energy and RMSE values seen in `segments`.
pub fn state_ranges(segments: &[TrainingSegment], window_n: usize) -> Result<(f64, f64)> {
    let mut e = Vec::new();
    let mut m = Vec::new();
    for seg in segments {
        for w in seg
            .log
            .rewindow(window_n)?
            .records
            .iter()
            .filter_map(|r| r.metrics)
        {
            e.push(w.energy);
            m.push(w.rmse);
        }
    }
    if e.is_empty() {
        return Err(Error::InvalidArgument(
            "training data holds no full metric window".into(),
        ));
    }
    Ok((
        quantile(&mut e, EDGE_QUANTILE),
        quantile(&mut m, EDGE_QUANTILE),
    ))
}

/// Nearest-rank quantile.
pub fn quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub table: QTable,
    /// Mean J over all replayed transitions, per episode.
    pub episode_mean_j: Vec<f64>,
    pub transitions: usize,
}

/// Replays every segment once per episode, in grid order; each quintuple is
/// `(s_k, a, R_{k+1}, s_{k+1}, a)` since the action is fixed within a segment.
pub fn train_offline(
    segments: &[TrainingSegment],
    tuner: &TunerConfig,
    episodes: usize,
) -> Result<TrainingOutcome> {
    tuner.validate()?;
    if segments.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let mut table = QTable::zeros(tuner.dims())?;
    // States depend only on the data, so discretize once.
    let mut streams = Vec::with_capacity(segments.len());
    for seg in segments {
        if seg.action >= tuner.actions.len() {
            return Err(Error::InvalidArgument(format!(
                "segment action {} outside the {}-action grid",
                seg.action,
                tuner.actions.len()
            )));
        }
        let states = seg
            .log
            .rewindow(tuner.window_n)?
            .records
            .iter()
            .filter_map(|r| r.metrics)
            .map(|w| discretize(w.energy, w.rmse, tuner))
            .collect::<Result<Vec<_>>>()?;
        streams.push((seg.action, states));
    }
    let mut episode_mean_j = Vec::with_capacity(episodes);
    let mut transitions = 0;
    for _ in 0..episodes {
        let (mut sum, mut count) = (0.0, 0usize);
        for (a, states) in &streams {
            for w in states.windows(2) {
                let r = reward(&w[1], tuner.a, tuner.b);
                let next = backup_action(&table, &w[1], *a, tuner.backup);
                sarsa_update(
                    &mut table,
                    &w[0],
                    *a,
                    r,
                    &w[1],
                    next,
                    tuner.alpha,
                    tuner.gamma,
                );
                sum -= r;
                count += 1;
            }
        }
        transitions += count;
        episode_mean_j.push(if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        });
    }
    Ok(TrainingOutcome {
        table,
        episode_mean_j,
        transitions,
    })
}

/// Continues training `table` with ε-greedy SARSA acting in the closed loop,
/// one episode per derived seed; returns the per-episode mean J.
///
/// Fixed-λ replay only ever scores the action that produced a state, so
/// these episodes are what fill in alternatives for commonly visited states.
pub fn train_closed_loop(
    model: &PlantModel,
    blocks: &HankelBlocks,
    config: &ControllerConfig,
    scenario: &Scenario,
    table: QTable,
    tuner: &TunerConfig,
    episodes: usize,
) -> Result<(QTable, Vec<f64>)> {
    let tuner = TunerConfig {
        freeze_online: false,
        ..tuner.clone()
    };
    let mut table = table;
    let mut curve = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let sc = Scenario {
            seed: derive(scenario.seed, 2000 + ep as u64),
            ..scenario.clone()
        };
        let (log, policy) = run_online(model, blocks, config, &sc, table, &tuner)?;
        let j: Vec<f64> = log
            .objectives(tuner.a, tuner.b)
            .into_iter()
            .flatten()
            .collect();
        curve.push(if j.is_empty() {
            f64::NAN
        } else {
            j.iter().sum::<f64>() / j.len() as f64
        });
        table = policy.table;
    }
    Ok((table, curve))
}

/// Online stage policy: learns along the realized trajectory and picks
/// λ_g ε-greedily from the current table.
#[derive(Debug, Clone)]
pub struct SarsaPolicy {
    pub table: QTable,
    tuner: TunerConfig,
    rng: SimRng,
    prev: Option<(RLState, usize)>,
    initial: f64,
    fallback: usize,
    /// Reward computed at each controlled step (none while the window fills).
    pub rewards: Vec<Option<f64>>,
}

impl SarsaPolicy {
    pub fn new(table: QTable, tuner: TunerConfig, seed: u64) -> Result<Self> {
        tuner.validate()?;
        if table.dims() != tuner.dims() {
            return Err(Error::InvalidArgument(format!(
                "table dims {:?} do not match the tuner's {:?}",
                table.dims(),
                tuner.dims()
            )));
        }
        Ok(Self {
            table,
            initial: tuner.initial_lambda,
            fallback: nearest_action(&tuner.actions, tuner.initial_lambda),
            tuner,
            rng: stream(seed, 3),
            prev: None,
            rewards: Vec::new(),
        })
    }

    pub fn tuner(&self) -> &TunerConfig {
        &self.tuner
    }

    fn act(&mut self, metrics: WindowMetrics) -> f64 {
        let t = &self.tuner;
        let Ok(s) = discretize(metrics.energy, metrics.rmse, t) else {
            log::warn!("non-finite window metrics; keeping the initial λ_g");
            self.rewards.push(None);
            return self.initial;
        };
        let r = reward(&s, t.a, t.b);
        let a = select_action(&self.table, &s, t.epsilon, self.fallback, &mut self.rng);
        if let Some((ps, pa)) = self.prev {
            if !t.freeze_online {
                let next = backup_action(&self.table, &s, a, t.backup);
                sarsa_update(&mut self.table, &ps, pa, r, &s, next, t.alpha, t.gamma);
            }
        }
        self.prev = Some((s, a));
        self.rewards.push(Some(r));
        t.actions[a]
    }
}

impl LambdaPolicy for SarsaPolicy {
    fn choose(&mut self, _step: usize, metrics: Option<WindowMetrics>) -> f64 {
        match metrics {
            Some(m) => self.act(m),
            None => {
                self.rewards.push(None);
                self.initial
            }
        }
    }
}

/// Online stage: one closed-loop run driven by a [`SarsaPolicy`].
pub fn run_online(
    model: &PlantModel,
    blocks: &HankelBlocks,
    config: &ControllerConfig,
    scenario: &Scenario,
    table: QTable,
    tuner: &TunerConfig,
) -> Result<(RunLog, SarsaPolicy)> {
    if config.window_n != tuner.window_n {
        return Err(Error::InvalidArgument(format!(
            "controller window {} differs from the tuner window {}",
            config.window_n, tuner.window_n
        )));
    }
    let mut policy = SarsaPolicy::new(table, tuner.clone(), scenario.seed)?;
    let log = run_closed_loop(model, blocks, config, scenario, &mut policy)?;
    Ok((log, policy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuner(actions: usize) -> TunerConfig {
        TunerConfig {
            energy_edges: vec![1.0, 2.0, 3.0],
            rmse_edges: vec![0.5],
            ..TunerConfig::new(uniform_actions(0.01, actions), 1.0, 1.0)
        }
    }

    fn state(e: usize, r: usize) -> RLState {
        RLState {
            energy_raw: 0.0,
            rmse_raw: 0.0,
            energy_bin: e,
            rmse_bin: r,
        }
    }

    #[test]
    fn discretize_counts_edges_below() {
        let t = tuner(3);
        assert_eq!(discretize(2.5, 0.0, &t).unwrap().energy_bin, 2);
        assert_eq!(discretize(0.5, 0.0, &t).unwrap().energy_bin, 0);
        assert_eq!(discretize(2.0, 0.0, &t).unwrap().energy_bin, 1);
        assert_eq!(discretize(9.0, 0.7, &t).unwrap().energy_bin, 3);
        assert_eq!(discretize(9.0, 0.7, &t).unwrap().rmse_bin, 1);
        assert!(discretize(f64::NAN, 0.0, &t).is_err());
        assert!(discretize(-1.0, 0.0, &t).is_err());
    }

    #[test]
    fn reward_examples() {
        let s = RLState {
            energy_raw: 0.5,
            rmse_raw: 0.2,
            energy_bin: 0,
            rmse_bin: 0,
        };
        assert_eq!(reward(&s, 1.0, 1.0), -(0.5f64 - 0.2).abs());
        assert_eq!(reward(&s, 0.4, 1.0), 0.0);
    }

    #[test]
    fn greedy_prefers_lowest_index_on_ties() {
        let mut q = QTable::zeros([1, 1, 4]).unwrap();
        assert_eq!(q.greedy(&state(0, 0)), 0);
        q.set(&state(0, 0), 2, 1.0);
        q.set(&state(0, 0), 3, 1.0);
        assert_eq!(q.greedy(&state(0, 0)), 2);
    }

    #[test]
    fn uniform_edges_shape() {
        let e = uniform_edges(1.0, 101);
        assert_eq!(e.len(), 100);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert!(e[99] < 1.0);
        assert_eq!(uniform_edges(0.0, 3).len(), 2);
    }

    #[test]
    fn config_validation() {
        let mut t = tuner(3);
        assert!(t.validate().is_ok());
        t.alpha = 0.0;
        assert!(t.validate().is_err());
        let mut t = tuner(3);
        t.actions = vec![0.1, 0.1];
        assert!(t.validate().is_err());
        let mut t = tuner(3);
        t.energy_edges = vec![1.0, 1.0];
        assert!(t.validate().is_err());
        assert_eq!(tuner(5).dims(), [4, 2, 5]);
    }

    #[test]
    fn bytes_round_trip_and_rejections() {
        let mut q = QTable::zeros([2, 3, 4]).unwrap();
        q.set(&state(1, 2), 3, -0.25);
        let bytes = q.to_bytes();
        assert_eq!(&bytes[..4], b"SDPC");
        assert_eq!(bytes.len(), 16 + 8 * 24);
        assert_eq!(QTable::from_bytes(&bytes).unwrap(), q);
        assert!(QTable::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(QTable::from_bytes(&bad).is_err());
        let mut nan = bytes.clone();
        nan[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(QTable::from_bytes(&nan).is_err());
        let mut huge = bytes;
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(QTable::from_bytes(&huge).is_err());
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.bin");
        let t = tuner(3);
        let mut q = QTable::zeros(t.dims()).unwrap();
        q.set(&state(3, 1), 2, -1.5);
        save_table(&path, &q, &t).unwrap();
        let (q2, t2) = load_table(&path).unwrap();
        assert_eq!(q2, q);
        assert_eq!(t2, t);

        // A sidecar describing a different grid is rejected.
        let other = tuner(4);
        let side = QTableSidecar {
            dims: other.dims(),
            tuner: other,
        };
        std::fs::write(sidecar_path(&path), serde_json::to_string(&side).unwrap()).unwrap();
        assert!(load_table(&path).is_err());
    }

    #[test]
    fn quantile_nearest_rank() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&mut v, 0.99), 99.0);
        let mut one = vec![3.0];
        assert_eq!(quantile(&mut one, 0.99), 3.0);
    }

    #[test]
    fn zero_episodes_leave_zero_table() {
        let t = tuner(2);
        let log = RunLog {
            records: Vec::new(),
            window_n: t.window_n,
        };
        let seg = vec![TrainingSegment { action: 0, log }];
        let out = train_offline(&seg, &t, 0).unwrap();
        assert_eq!(out.table.nonzero(), 0);
        assert!(train_offline(&[], &t, 1).is_err());
    }
}
