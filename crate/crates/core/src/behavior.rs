//! Hankel-matrix behavioral representation of recorded trajectories.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default relative singular-value threshold for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Block Hankel matrix of depth `depth` from `data` (one q-vector per
/// column). Block `(i, j)` holds sample `i + j`.
pub fn hankel(data: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    let (q, len) = data.shape();
    if depth == 0 {
        return Err(Error::InvalidArgument(
            "Hankel depth must be positive".into(),
        ));
    }
    if depth > len {
        return Err(Error::InvalidArgument(format!(
            "Hankel depth {depth} exceeds trajectory length {len}"
        )));
    }
    let cols = len - depth + 1;
    let mut h = DMatrix::zeros(q * depth, cols);
    for j in 0..cols {
        for i in 0..depth {
            h.view_mut((i * q, j), (q, 1))
                .copy_from(&data.column(i + j));
        }
    }
    Ok(h)
}

/// Number of singular values above `tol * σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * smax).count()
}

/// Singular values of `m` in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Persistency {
    Pass { rank: usize },
    Fail { rank: usize, required: usize },
}

impl Persistency {
    pub fn passed(&self) -> bool {
        matches!(self, Persistency::Pass { .. })
    }

    pub fn rank(&self) -> usize {
        match *self {
            Persistency::Pass { rank } | Persistency::Fail { rank, .. } => rank,
        }
    }
}

/// Rank test of the depth-`depth` Hankel matrix of stacked `[u; y]` data
/// against `m * depth + n_state`.
pub fn persistency_check(
    w_d: &DMatrix<f64>,
    depth: usize,
    n_inputs: usize,
    n_state: usize,
    tol: f64,
) -> Result<Persistency> {
    let h = hankel(w_d, depth)?;
    let required = n_inputs * depth + n_state;
    let rank = numerical_rank(&h, tol);
    Ok(if rank == required {
        Persistency::Pass { rank }
    } else {
        Persistency::Fail { rank, required }
    })
}

/// The past/future split of a depth `t_ini + t_f` Hankel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlocks {
    pub up: DMatrix<f64>,
    pub uf: DMatrix<f64>,
    pub yp: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    pub t_ini: usize,
    pub t_f: usize,
}

impl HankelBlocks {
    pub fn n_cols(&self) -> usize {
        self.up.ncols()
    }
    pub fn n_inputs(&self) -> usize {
        self.up.nrows() / self.t_ini
    }
    pub fn n_outputs(&self) -> usize {
        self.yp.nrows() / self.t_ini
    }

    pub fn from_parts(
        up: DMatrix<f64>,
        uf: DMatrix<f64>,
        yp: DMatrix<f64>,
        yf: DMatrix<f64>,
        t_ini: usize,
        t_f: usize,
    ) -> Result<Self> {
        if t_ini == 0 || t_f == 0 {
            return Err(Error::InvalidArgument(
                "T_ini and T_f must be positive".into(),
            ));
        }
        let n = up.ncols();
        for (name, blk) in [("Uf", &uf), ("Yp", &yp), ("Yf", &yf)] {
            if blk.ncols() != n {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {} columns, Up has {n}",
                    blk.ncols()
                )));
            }
        }
        if up.nrows() % t_ini != 0 || yp.nrows() % t_ini != 0 {
            return Err(Error::InvalidArgument(
                "past block rows not divisible by T_ini".into(),
            ));
        }
        let (m, p) = (up.nrows() / t_ini, yp.nrows() / t_ini);
        if m == 0 || p == 0 {
            return Err(Error::InvalidArgument("empty past blocks".into()));
        }
        if uf.nrows() != m * t_f {
            return Err(Error::dim("Uf rows", m * t_f, uf.nrows()));
        }
        if yf.nrows() != p * t_f {
            return Err(Error::dim("Yf rows", p * t_f, yf.nrows()));
        }
        Ok(Self {
            up,
            uf,
            yp,
            yf,
            t_ini,
            t_f,
        })
    }
}

pub fn partition(
    u_d: &DMatrix<f64>,
    y_d: &DMatrix<f64>,
    t_ini: usize,
    t_f: usize,
) -> Result<HankelBlocks> {
    if t_ini == 0 || t_f == 0 {
        return Err(Error::InvalidArgument(
            "T_ini and T_f must be positive".into(),
        ));
    }
    if u_d.ncols() != y_d.ncols() {
        return Err(Error::dim("output samples", u_d.ncols(), y_d.ncols()));
    }
    let depth = t_ini + t_f;
    if u_d.ncols() < depth {
        return Err(Error::InvalidArgument(format!(
            "trajectory of length {} too short for T_ini + T_f = {depth}",
            u_d.ncols()
        )));
    }
    let (m, p) = (u_d.nrows(), y_d.nrows());
    let hu = hankel(u_d, depth)?;
    let hy = hankel(y_d, depth)?;
    HankelBlocks::from_parts(
        hu.rows(0, m * t_ini).into_owned(),
        hu.rows(m * t_ini, m * t_f).into_owned(),
        hy.rows(0, p * t_ini).into_owned(),
        hy.rows(p * t_ini, p * t_f).into_owned(),
        t_ini,
        t_f,
    )
}

/// Best rank-`target_rank` approximation in Frobenius norm.
pub fn low_rank_denoise(h: &DMatrix<f64>, target_rank: usize) -> Result<DMatrix<f64>> {
    if target_rank == 0 {
        return Err(Error::InvalidArgument(
            "target rank must be positive".into(),
        ));
    }
    let full = h.nrows().min(h.ncols());
    if target_rank > full {
        return Err(Error::InvalidArgument(format!(
            "target rank {target_rank} exceeds min dimension {full}"
        )));
    }
    let svd = h.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    // nalgebra does not guarantee sorted singular values.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let mut out = DMatrix::zeros(h.nrows(), h.ncols());
    for &k in order.iter().take(target_rank) {
        out += svd.singular_values[k] * u.column(k) * v_t.row(k);
    }
    Ok(out)
}

/// Sliding window over the last `n` (reference, measured output, input)
/// samples, producing the tracking RMSE and the input energy.
#[derive(Debug, Clone)]
pub struct MetricWindow {
    len: usize,
    // Squared tracking error summed over output components, per sample.
    sq_err: VecDeque<f64>,
    // uᵀu per sample.
    sq_input: VecDeque<f64>,
    n_outputs: Option<usize>,
    n_inputs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMetrics {
    pub rmse: f64,
    pub energy: f64,
}

impl MetricWindow {
    pub const DEFAULT_LEN: usize = 40;

    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument(
                "metric window length must be positive".into(),
            ));
        }
        Ok(Self {
            len,
            sq_err: VecDeque::with_capacity(len + 1),
            sq_input: VecDeque::with_capacity(len + 1),
            n_outputs: None,
            n_inputs: None,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn fill(&self) -> usize {
        self.sq_err.len()
    }

    pub fn is_full(&self) -> bool {
        self.fill() == self.len
    }

    pub fn clear(&mut self) {
        self.sq_err.clear();
        self.sq_input.clear();
    }

    pub fn push(&mut self, y_ref: &[f64], y_meas: &[f64], u: &[f64]) -> Result<()> {
        if y_ref.len() != y_meas.len() {
            return Err(Error::dim("measured output", y_ref.len(), y_meas.len()));
        }
        check_dim(&mut self.n_outputs, y_ref.len(), "output sample")?;
        check_dim(&mut self.n_inputs, u.len(), "input sample")?;
        let e: f64 = y_ref.iter().zip(y_meas).map(|(r, y)| (r - y).powi(2)).sum();
        let q: f64 = u.iter().map(|v| v * v).sum();
        if self.is_full() {
            self.sq_err.pop_front();
            self.sq_input.pop_front();
        }
        self.sq_err.push_back(e);
        self.sq_input.push_back(q);
        Ok(())
    }

    /// RMSE over all `n · p` error components and `√(Σ uᵀu)`, once full.
    pub fn metrics(&self) -> Option<WindowMetrics> {
        if !self.is_full() {
            return None;
        }
        let p = self.n_outputs.unwrap_or(1) as f64;
        let err: f64 = self.sq_err.iter().sum();
        let energy: f64 = self.sq_input.iter().sum();
        Some(WindowMetrics {
            rmse: (err / (self.len as f64 * p)).sqrt(),
            energy: energy.sqrt(),
        })
    }

    pub fn push_and_measure(
        &mut self,
        y_ref: &[f64],
        y_meas: &[f64],
        u: &[f64],
    ) -> Result<Option<WindowMetrics>> {
        self.push(y_ref, y_meas, u)?;
        Ok(self.metrics())
    }
}

fn check_dim(slot: &mut Option<usize>, found: usize, context: &'static str) -> Result<()> {
    match *slot {
        Some(expected) if expected != found => Err(Error::dim(context, expected, found)),
        Some(_) => Ok(()),
        None => {
            *slot = Some(found);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    // Fills the matrix straight from the index definition.
    fn hankel_oracle(data: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
        let (q, t) = data.shape();
        DMatrix::from_fn(q * depth, t - depth + 1, |r, c| data[(r % q, r / q + c)])
    }

    #[test]
    fn scalar_hankel() {
        let h = hankel(&scalar(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2).unwrap();
        assert_eq!(
            h,
            DMatrix::from_row_slice(2, 4, &[1., 2., 3., 4., 2., 3., 4., 5.])
        );
    }

    #[test]
    fn full_depth_is_one_column() {
        let w = scalar(&[1.0, 2.0, 3.0]);
        let h = hankel(&w, 3).unwrap();
        assert_eq!(h.shape(), (3, 1));
        assert_eq!(h.as_slice(), &[1.0, 2.0, 3.0]);
        assert!(hankel(&w, 4).is_err());
        assert!(hankel(&w, 0).is_err());
    }

    #[test]
    fn vector_hankel_matches_index_oracle() {
        let w = DMatrix::from_row_slice(2, 4, &[1., 2., 3., 4., 10., 20., 30., 40.]);
        let h = hankel(&w, 2).unwrap();
        assert_eq!(h.shape(), (4, 3));
        assert_eq!(h, hankel_oracle(&w, 2));
        assert_eq!(h.column(0).as_slice(), &[1., 10., 2., 20.]);
    }

    #[test]
    fn zero_data_fails_with_rank_zero() {
        let w = DMatrix::zeros(4, 100);
        let r = persistency_check(&w, 16, 2, 2, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(
            r,
            Persistency::Fail {
                rank: 0,
                required: 34
            }
        );
    }

    #[test]
    fn rank_bounded_by_columns() {
        // 20 samples at depth 16 leave 5 columns, far below 2·16 + 2.
        let w = DMatrix::from_fn(4, 20, |i, j| ((i * 31 + j * 17) as f64).sin());
        let r = persistency_check(&w, 16, 2, 2, DEFAULT_RANK_TOL).unwrap();
        assert!(!r.passed());
        assert!(r.rank() <= 5);
    }

    #[test]
    fn partition_small_case() {
        let u = scalar(&[1.0, 2.0, 3.0]);
        let y = scalar(&[4.0, 5.0, 6.0]);
        let b = partition(&u, &y, 1, 1).unwrap();
        assert_eq!(b.up, scalar(&[1.0, 2.0]));
        assert_eq!(b.uf, scalar(&[2.0, 3.0]));
        assert_eq!(b.yp, scalar(&[4.0, 5.0]));
        assert_eq!(b.yf, scalar(&[5.0, 6.0]));
        assert!(partition(&u, &y, 2, 2).is_err());
    }

    #[test]
    fn denoise_fixed_point_and_full_rank() {
        let a = DMatrix::from_fn(10, 3, |i, j| ((i + 2 * j) as f64).cos());
        let b = DMatrix::from_fn(3, 8, |i, j| ((3 * i + j) as f64).sin());
        let h = &a * &b;
        assert_relative_eq!(low_rank_denoise(&h, 3).unwrap(), h, epsilon = 1e-10);
        let full = DMatrix::from_fn(6, 5, |i, j| ((i * 7 + j * 3) as f64).sin());
        assert_relative_eq!(low_rank_denoise(&full, 5).unwrap(), full, epsilon = 1e-10);
        assert!(low_rank_denoise(&full, 0).is_err());
        assert!(low_rank_denoise(&full, 6).is_err());
    }

    #[test]
    fn denoise_error_is_tail_energy() {
        use rand::Rng;
        let mut rng = crate::rng::stream(9, 0);
        let h = DMatrix::from_fn(10, 8, |_, _| rng.random_range(-1.0..1.0));
        // Tail energy from the eigenvalues of HᵀH, independent of the SVD path.
        let eig = (h.transpose() * &h).symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = ev[3..].iter().sum::<f64>().sqrt();
        let approx3 = low_rank_denoise(&h, 3).unwrap();
        assert_relative_eq!((&h - approx3).norm(), tail, epsilon = 1e-10);
    }

    #[test]
    fn metric_window_behaviour() {
        let mut w = MetricWindow::new(3).unwrap();
        assert_eq!(w.push_and_measure(&[1.0], &[1.0], &[0.0]).unwrap(), None);
        assert_eq!(w.push_and_measure(&[1.0], &[1.0], &[0.0]).unwrap(), None);
        let m = w.push_and_measure(&[1.0], &[1.0], &[0.0]).unwrap().unwrap();
        assert_eq!(m.rmse, 0.0);
        let mut w = MetricWindow::new(4).unwrap();
        let mut last = None;
        for _ in 0..6 {
            last = w.push_and_measure(&[0.5], &[0.25], &[2.0]).unwrap();
        }
        let m = last.unwrap();
        assert_eq!(m.rmse, 0.25);
        assert_eq!(m.energy, 4.0);
        assert!(w.push(&[0.5, 1.0], &[0.25, 1.0], &[2.0]).is_err());
        assert!(w.push(&[0.5], &[0.25, 1.0], &[2.0]).is_err());
        assert_eq!(MetricWindow::DEFAULT_LEN, 40);
    }

    #[test]
    fn multi_output_errors_are_flattened() {
        let mut w = MetricWindow::new(2).unwrap();
        w.push(&[0.0, 0.0], &[3.0, 4.0], &[0.0]).unwrap();
        let m = w
            .push_and_measure(&[0.0, 0.0], &[3.0, 4.0], &[0.0])
            .unwrap()
            .unwrap();
        assert_relative_eq!(m.rmse, (12.5f64).sqrt(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn hankel_shift_structure(q in 1usize..4, t in 2usize..30, depth_frac in 0.0f64..1.0, seed in 0u64..1000) {
            use rand::Rng;
            let depth = 1 + ((t - 1) as f64 * depth_frac) as usize;
            let mut rng = crate::rng::stream(seed, 0);
            let w = DMatrix::from_fn(q, t, |_, _| rng.random_range(-1.0..1.0));
            let h = hankel(&w, depth).unwrap();
            prop_assert_eq!(&h, &hankel_oracle(&w, depth));
            for i in 0..h.nrows().saturating_sub(q) {
                for j in 0..h.ncols().saturating_sub(1) {
                    prop_assert_eq!(h[(i + q, j)], h[(i, j + 1)]);
                }
            }
        }

        #[test]
        fn partition_restacks_to_hankel(t_ini in 1usize..5, t_f in 1usize..6, extra in 0usize..20, seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, 1);
            let t = t_ini + t_f + extra;
            let u = DMatrix::from_fn(2, t, |_, _| rng.random_range(-1.0..1.0));
            let y = DMatrix::from_fn(3, t, |_, _| rng.random_range(-1.0..1.0));
            let b = partition(&u, &y, t_ini, t_f).unwrap();
            let n = t - t_ini - t_f + 1;
            for blk in [&b.up, &b.uf, &b.yp, &b.yf] {
                prop_assert_eq!(blk.ncols(), n);
            }
            let hu = hankel(&u, t_ini + t_f).unwrap();
            let hy = hankel(&y, t_ini + t_f).unwrap();
            let mut su = DMatrix::zeros(hu.nrows(), n);
            su.rows_mut(0, b.up.nrows()).copy_from(&b.up);
            su.rows_mut(b.up.nrows(), b.uf.nrows()).copy_from(&b.uf);
            let mut sy = DMatrix::zeros(hy.nrows(), n);
            sy.rows_mut(0, b.yp.nrows()).copy_from(&b.yp);
            sy.rows_mut(b.yp.nrows(), b.yf.nrows()).copy_from(&b.yf);
            prop_assert_eq!(su, hu);
            prop_assert_eq!(sy, hy);
        }

        #[test]
        fn rank_cannot_exceed_dimensions(t in 17usize..40, seed in 0u64..100) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, 2);
            let w = DMatrix::from_fn(4, t, |_, _| rng.random_range(-1.0..1.0));
            let r = persistency_check(&w, 16, 2, 2, DEFAULT_RANK_TOL).unwrap();
            // 34 > min(64, t - 15) whenever t < 49
            if 34 > (t - 15).min(64) {
                prop_assert!(!r.passed());
            }
        }

        #[test]
        fn rmse_is_permutation_invariant(errs in proptest::collection::vec(-1.0f64..1.0, 8), rot in 0usize..8) {
            let mut a = MetricWindow::new(8).unwrap();
            let mut b = MetricWindow::new(8).unwrap();
            for e in &errs {
                a.push(&[0.0], &[*e], &[0.0]).unwrap();
            }
            for i in 0..8 {
                b.push(&[0.0], &[errs[(i + rot) % 8]], &[0.0]).unwrap();
            }
            let (ma, mb) = (a.metrics().unwrap(), b.metrics().unwrap());
            prop_assert!((ma.rmse - mb.rmse).abs() <= 1e-15);
        }

        #[test]
        fn denoise_is_optimal(seed in 0u64..200) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, 3);
            let l = DMatrix::from_fn(9, 2, |_, _| rng.random_range(-1.0..1.0));
            let r = DMatrix::from_fn(2, 7, |_, _| rng.random_range(-1.0..1.0));
            let low = &l * &r;
            let h = &low + DMatrix::from_fn(9, 7, |_, _| rng.random_range(-0.1..0.1));
            let best = low_rank_denoise(&h, 2).unwrap();
            prop_assert!((&h - &best).norm() <= (&h - &low).norm() + 1e-12);
        }
    }
}
