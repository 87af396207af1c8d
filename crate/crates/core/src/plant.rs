//! Discrete-time LTI plants with additive output disturbances.
//!
//! A plant evolves as `x(t+1) = A x(t) + B u(t)` and reports
//! `y(t) = C x(t) + D u(t) + d(t)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Any state component above this magnitude aborts a simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    lag: usize,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        lag: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "state matrix must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::dim("B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dim("C columns", n, c.ncols()));
        }
        let (m, p) = (b.ncols(), c.nrows());
        if m == 0 || p == 0 {
            return Err(Error::InvalidArgument(
                "plant needs at least one input and one output".into(),
            ));
        }
        if d.nrows() != p {
            return Err(Error::dim("D rows", p, d.nrows()));
        }
        if d.ncols() != m {
            return Err(Error::dim("D columns", m, d.ncols()));
        }
        if lag == 0 {
            return Err(Error::InvalidArgument("lag must be positive".into()));
        }
        for mat in [&a, &b, &c, &d] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("plant matrices"));
            }
        }
        Ok(Self { a, b, c, d, lag })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_state(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn lag(&self) -> usize {
        self.lag
    }

    /// One plant transition. Returns `(x_next, y)`.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.n_state() {
            return Err(Error::dim("state vector", self.n_state(), x.len()));
        }
        if u.len() != self.n_inputs() {
            return Err(Error::dim("input vector", self.n_inputs(), u.len()));
        }
        if d.len() != self.n_outputs() {
            return Err(Error::dim("disturbance vector", self.n_outputs(), d.len()));
        }
        let x_next = &self.a * x + &self.b * u;
        let y = &self.c * x + &self.d * u + d;
        Ok((x_next, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    Uniform,
}

/// Additive i.i.d. disturbance with a given mean and variance.
///
/// Uniform noise with mean `μ` and variance `θ` is drawn from
/// `[μ - √(3θ), μ + √(3θ)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub variance: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        kind: NoiseKind::None,
        mean: 0.0,
        variance: 0.0,
    };

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, mean, variance)
    }

    pub fn uniform(mean: f64, variance: f64) -> Result<Self> {
        Self::new(NoiseKind::Uniform, mean, variance)
    }

    pub fn new(kind: NoiseKind, mean: f64, variance: f64) -> Result<Self> {
        let noise = Self {
            kind,
            mean,
            variance,
        };
        noise.validate()?;
        Ok(noise)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.variance.is_finite() {
            return Err(Error::NonFinite("noise parameters"));
        }
        if self.variance < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be nonnegative, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    /// Same distribution family with the variance multiplied by `factor`.
    pub fn scaled_variance(&self, factor: f64) -> Self {
        Self {
            variance: self.variance * factor,
            ..*self
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> DVector<f64> {
        match self.kind {
            NoiseKind::None => DVector::zeros(dim),
            NoiseKind::Gaussian => {
                let normal = Normal::new(self.mean, self.variance.sqrt())
                    .expect("validated standard deviation");
                DVector::from_fn(dim, |_, _| normal.sample(rng))
            }
            NoiseKind::Uniform => {
                let half = (3.0 * self.variance).sqrt();
                if half == 0.0 {
                    return DVector::from_element(dim, self.mean);
                }
                let uniform = Uniform::new_inclusive(self.mean - half, self.mean + half)
                    .expect("validated interval");
                DVector::from_fn(dim, |_, _| uniform.sample(rng))
            }
        }
    }
}

/// Input/output record of one plant run. Column `t` of `inputs` and
/// `outputs` is the sample at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, seed: u64) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(Error::dim(
                "trajectory length",
                inputs.ncols(),
                outputs.ncols(),
            ));
        }
        if inputs.ncols() == 0 {
            return Err(Error::InvalidArgument("trajectory is empty".into()));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory samples"));
        }
        Ok(Self {
            inputs,
            outputs,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.nrows()
    }

    /// Stacked `[u; y]` samples, one column per step.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (m, p) = (self.n_inputs(), self.n_outputs());
        let mut w = DMatrix::zeros(m + p, self.len());
        w.rows_mut(0, m).copy_from(&self.inputs);
        w.rows_mut(m, p).copy_from(&self.outputs);
        w
    }
}

/// Runs `model` from `x0` under the input sequence `u_seq` (one column per
/// step), adding output noise drawn from a stream seeded by `seed`.
pub fn simulate(
    model: &PlantModel,
    u_seq: &DMatrix<f64>,
    x0: &DVector<f64>,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Trajectory> {
    noise.validate()?;
    if u_seq.ncols() == 0 {
        return Err(Error::InvalidArgument("input sequence is empty".into()));
    }
    if u_seq.nrows() != model.n_inputs() {
        return Err(Error::dim(
            "input sequence rows",
            model.n_inputs(),
            u_seq.nrows(),
        ));
    }
    if x0.len() != model.n_state() {
        return Err(Error::dim("initial state", model.n_state(), x0.len()));
    }
    let mut rng = stream(seed, 0);
    let p = model.n_outputs();
    let mut outputs = DMatrix::zeros(p, u_seq.ncols());
    let mut x = x0.clone();
    for t in 0..u_seq.ncols() {
        let u = u_seq.column(t).into_owned();
        let d = noise.sample(p, &mut rng);
        let (x_next, y) = model.step(&x, &u, &d)?;
        check_divergence(&x_next, t)?;
        outputs.set_column(t, &y);
        x = x_next;
    }
    Trajectory::new(u_seq.clone(), outputs, seed)
}

pub(crate) fn check_divergence(x: &DVector<f64>, step: usize) -> Result<()> {
    let magnitude = x.amax();
    if !magnitude.is_finite() || magnitude > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { step, magnitude });
    }
    Ok(())
}

/// Data-collection run: random inputs from `input_noise`, noisy outputs,
/// starting at rest. `depth` is the Hankel depth the data is meant for.
pub fn excite(
    model: &PlantModel,
    length: usize,
    depth: usize,
    input_noise: &NoiseModel,
    output_noise: &NoiseModel,
    seed: u64,
) -> Result<Trajectory> {
    input_noise.validate()?;
    if length < depth || length == 0 {
        return Err(Error::InvalidArgument(format!(
            "excitation length {length} is shorter than the Hankel depth {depth}"
        )));
    }
    let m = model.n_inputs();
    let recommended = (m + 1) * depth + model.n_state() - 1;
    if length < recommended {
        log::warn!(
            "excitation length {length} below the recommended {recommended} samples for depth {depth}"
        );
    }
    let mut rng = stream(seed, 1);
    let mut u_seq = DMatrix::zeros(m, length);
    for t in 0..length {
        u_seq.set_column(t, &input_noise.sample(m, &mut rng));
    }
    let x0 = DVector::zeros(model.n_state());
    simulate(model, &u_seq, &x0, output_noise, seed)
}

/// Named benchmark plants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    SecondOrder,
    TripleMassSpring,
}

impl Benchmark {
    pub const ALL: [Benchmark; 2] = [Benchmark::SecondOrder, Benchmark::TripleMassSpring];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::SecondOrder => "second_order",
            Benchmark::TripleMassSpring => "triple_mass_spring",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::UnknownBenchmark {
                name: name.to_string(),
                available: Self::ALL.map(Benchmark::name).join(", "),
            })
    }
}

/// Physical constants of the three-disc torsional chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringParams {
    #[serde(default = "SpringParams::default_inertia")]
    pub inertia: f64,
    #[serde(default = "SpringParams::default_stiffness")]
    pub spring_constant: f64,
    #[serde(default = "SpringParams::default_friction")]
    pub friction: f64,
    #[serde(default = "SpringParams::default_dt")]
    pub sample_time_s: f64,
}

impl SpringParams {
    fn default_inertia() -> f64 {
        2.25e-4
    }
    fn default_stiffness() -> f64 {
        2.7
    }
    fn default_friction() -> f64 {
        1.5e-4
    }
    fn default_dt() -> f64 {
        0.01
    }
}

impl Default for SpringParams {
    fn default() -> Self {
        Self {
            inertia: Self::default_inertia(),
            spring_constant: Self::default_stiffness(),
            friction: Self::default_friction(),
            sample_time_s: Self::default_dt(),
        }
    }
}

pub fn make_benchmark(name: &str) -> Result<PlantModel> {
    match Benchmark::from_name(name)? {
        Benchmark::SecondOrder => Ok(second_order()),
        Benchmark::TripleMassSpring => triple_mass_spring(&SpringParams::default()),
    }
}

/// The 2-state, 2-input, 2-output benchmark.
pub fn second_order() -> PlantModel {
    let a = DMatrix::from_row_slice(2, 2, &[0.49, 4.0, -0.066, 1.5]);
    let b = DMatrix::identity(2, 2) * 0.01;
    let c = DMatrix::identity(2, 2);
    let d = DMatrix::zeros(2, 2);
    PlantModel::new(a, b, c, d, 1).expect("benchmark matrices are consistent")
}

/// Zero-order-hold discretization of three inertias joined by two torsional
/// springs, motors acting on the outer discs, disc angles measured.
/// State is `(θ1, θ2, θ3, ω1, ω2, ω3)`.
pub fn triple_mass_spring(params: &SpringParams) -> Result<PlantModel> {
    let SpringParams {
        inertia,
        spring_constant: k,
        friction,
        sample_time_s: dt,
    } = *params;
    if !(inertia > 0.0 && k >= 0.0 && friction >= 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid spring parameters {params:?}"
        )));
    }
    let kj = k / inertia;
    let cj = friction / inertia;
    let mut ac = DMatrix::zeros(6, 6);
    for i in 0..3 {
        ac[(i, i + 3)] = 1.0;
        ac[(i + 3, i + 3)] = -cj;
    }
    let stiffness = [[-kj, kj, 0.0], [kj, -2.0 * kj, kj], [0.0, kj, -kj]];
    for (i, row) in stiffness.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            ac[(i + 3, j)] = *v;
        }
    }
    let mut bc = DMatrix::zeros(6, 2);
    bc[(3, 0)] = 1.0 / inertia;
    bc[(5, 1)] = 1.0 / inertia;

    // exp([[Ac, Bc], [0, 0]] dt) = [[Ad, Bd], [0, I]]
    let mut aug = DMatrix::zeros(8, 8);
    aug.view_mut((0, 0), (6, 6)).copy_from(&(&ac * dt));
    aug.view_mut((0, 6), (6, 2)).copy_from(&(&bc * dt));
    let phi = aug.exp();
    let ad = phi.view((0, 0), (6, 6)).into_owned();
    let bd = phi.view((0, 6), (6, 2)).into_owned();

    let mut c = DMatrix::zeros(3, 6);
    for i in 0..3 {
        c[(i, i)] = 1.0;
    }
    PlantModel::new(ad, bd, c, DMatrix::zeros(3, 2), 2)
}

/// Deterministic derived stream for independent runs of the same seed.
pub fn run_seed(seed: u64, run: u64) -> u64 {
    crate::rng::derive(seed, run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_dynamics() {
        let model = second_order();
        let z = DVector::zeros(2);
        let (x, y) = model.step(&z, &z, &z).unwrap();
        assert_eq!(x, z);
        assert_eq!(y, z);
    }

    #[test]
    fn benchmark_columns() {
        let model = second_order();
        let z = DVector::zeros(2);
        let (x, y) = model
            .step(&DVector::from_vec(vec![1.0, 0.0]), &z, &z)
            .unwrap();
        assert_eq!(x.as_slice(), &[0.49, -0.066]);
        assert_eq!(y.as_slice(), &[1.0, 0.0]);
        let (x, y) = model
            .step(&DVector::from_vec(vec![0.0, 1.0]), &z, &z)
            .unwrap();
        assert_eq!(x.as_slice(), &[4.0, 1.5]);
        assert_eq!(y.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let model = second_order();
        let err = model
            .step(&DVector::zeros(3), &DVector::zeros(2), &DVector::zeros(2))
            .unwrap_err();
        assert!(err.to_string().contains("state vector"), "{err}");
    }

    #[test]
    fn make_benchmark_names() {
        let so = make_benchmark("second_order").unwrap();
        assert_eq!(
            so.a(),
            &DMatrix::from_row_slice(2, 2, &[0.49, 4.0, -0.066, 1.5])
        );
        assert_eq!(so.b(), &(DMatrix::identity(2, 2) * 0.01));
        let spring = make_benchmark("triple_mass_spring").unwrap();
        assert_eq!(
            (
                spring.n_inputs(),
                spring.n_outputs(),
                spring.n_state(),
                spring.lag()
            ),
            (2, 3, 6, 2)
        );
        let err = make_benchmark("unknown").unwrap_err().to_string();
        assert!(err.contains("second_order") && err.contains("triple_mass_spring"));
    }

    #[test]
    fn spring_rigid_mode_is_preserved() {
        // Equal angles at rest is an equilibrium of the chain.
        let spring = triple_mass_spring(&SpringParams::default()).unwrap();
        let x = DVector::from_vec(vec![10.0, 10.0, 10.0, 0.0, 0.0, 0.0]);
        let (x_next, _) = spring
            .step(&x, &DVector::zeros(2), &DVector::zeros(3))
            .unwrap();
        assert_relative_eq!(x_next, x, epsilon = 1e-9);
    }

    #[test]
    fn simulate_zero_input_is_zero() {
        let model = second_order();
        let u = DMatrix::zeros(2, 50);
        let traj = simulate(&model, &u, &DVector::zeros(2), &NoiseModel::NONE, 3).unwrap();
        assert!(traj.outputs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn simulate_is_deterministic() {
        let model = second_order();
        let noise = NoiseModel::gaussian(0.0, 1e-6).unwrap();
        let u = DMatrix::from_fn(2, 100, |i, j| ((i + j) as f64).sin() * 0.01);
        let x0 = DVector::from_vec(vec![0.1, -0.2]);
        let a = simulate(&model, &u, &x0, &noise, 42).unwrap();
        let b = simulate(&model, &u, &x0, &noise, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, &u, &x0, &noise, 43).unwrap();
        assert_ne!(a.outputs, c.outputs);
    }

    #[test]
    fn simulate_reports_divergence_step() {
        let a = DMatrix::from_element(1, 1, 10.0);
        let model = PlantModel::new(
            a,
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            1,
        )
        .unwrap();
        let err = simulate(
            &model,
            &DMatrix::zeros(1, 20),
            &DVector::from_element(1, 1.0),
            &NoiseModel::NONE,
            0,
        )
        .unwrap_err();
        // 10^9 is reached at step 8, exceeded at step 9.
        assert!(matches!(err, Error::Divergence { step: 9, .. }), "{err}");
    }

    #[test]
    fn excite_rejects_short_runs() {
        let model = second_order();
        let g = NoiseModel::gaussian(0.0, 1e-3).unwrap();
        assert!(excite(&model, 10, 16, &g, &NoiseModel::NONE, 0).is_err());
        let t = excite(&model, 600, 16, &g, &NoiseModel::NONE, 0).unwrap();
        assert_eq!(t.len(), 600);
        assert_eq!(
            t,
            excite(&model, 600, 16, &g, &NoiseModel::NONE, 0).unwrap()
        );
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(NoiseModel::gaussian(0.0, -1.0).is_err());
        assert!(NoiseModel::uniform(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn empirical_noise_moments() {
        let samples = 200_000;
        for noise in [
            NoiseModel::gaussian(0.3, 2e-2).unwrap(),
            NoiseModel::uniform(-1.0, 1e-5).unwrap(),
        ] {
            let mut rng = stream(11, 0);
            let v = noise.sample(samples, &mut rng);
            let mean = v.mean();
            let var = v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
            let stderr = (noise.variance / samples as f64).sqrt();
            assert!(
                (mean - noise.mean).abs() < 5.0 * stderr,
                "{noise:?}: mean {mean}"
            );
            assert!(
                (var / noise.variance - 1.0).abs() < 0.05,
                "{noise:?}: var {var}"
            );
        }
        let mut rng = stream(11, 0);
        assert!(NoiseModel::NONE
            .sample(100, &mut rng)
            .iter()
            .all(|s| *s == 0.0));
    }

    #[test]
    fn uniform_support_matches_variance() {
        let noise = NoiseModel::uniform(0.0, 1e-5).unwrap();
        let half = (3e-5f64).sqrt();
        let mut rng = stream(5, 0);
        let v = noise.sample(10_000, &mut rng);
        assert!(v.iter().all(|s| s.abs() <= half));
        assert!(v.amax() > 0.99 * half);
    }
}
