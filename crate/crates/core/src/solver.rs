//! Alternating-direction solver for
//!
//! ```text
//! minimize   ½‖A g − b‖² + λ‖g‖₁
//! subject to lo ≤ C g ≤ hi
//! ```
//!
//! The splitting introduces `z₁ = g` (ℓ1 prox, soft threshold) and
//! `z₂ = C g` (box projection). The g-update solves
//! `(AᵀA + ρ(I + CᵀC)) g = r` through the Woodbury identity, so only a
//! `(rows(A) + rows(C))`-sized system is ever factored and a change of ρ
//! costs one small Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest factor applied to the tolerances while waiting for the exact
/// refinement to succeed.
const MIN_TIGHTEN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub adaptive_rho: bool,
    /// Residuals are evaluated (and ρ possibly adapted) every this many iterations.
    pub check_interval: usize,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_iter: 4000,
            adaptive_rho: true,
            check_interval: 5,
            relaxation: 1.6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.eps_abs >= 0.0
            && self.eps_rel >= 0.0
            && self.eps_abs + self.eps_rel > 0.0
            && self.max_iter > 0
            && self.check_interval > 0
            && self.relaxation > 0.0
            && self.relaxation < 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid solver settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// Iterates carried between consecutive solves of related problems.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub g: DVector<f64>,
    pub z_l1: DVector<f64>,
    pub z_box: DVector<f64>,
    pub y_l1: DVector<f64>,
    pub y_box: DVector<f64>,
    pub rho: f64,
}

impl WarmStart {
    fn adopt(&mut self, p: &Polished) {
        self.g.copy_from(&p.g);
        self.z_l1.copy_from(&p.g);
        self.y_l1.copy_from(&p.y_l1);
        if !p.cg.is_empty() {
            self.z_box.copy_from(&p.cg);
            self.y_box.copy_from(&p.y_box);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub g: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Multiplier of the box constraint on `C g`.
    pub box_dual: DVector<f64>,
    /// True when the returned point comes from the exact reduced solve.
    pub polished: bool,
    pub warm: WarmStart,
}

/// Box `lo ≤ C g ≤ hi` on a linear image of `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl LinearBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("box upper bounds", lo.len(), hi.len()));
        }
        if lo.iter().chain(hi.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("box bounds"));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        self.lo.iter().zip(self.hi.iter()).all(|(l, h)| l <= h)
    }

    pub fn project(&self, v: &mut DVector<f64>) {
        for ((x, l), h) in v.iter_mut().zip(self.lo.iter()).zip(self.hi.iter()) {
            *x = x.clamp(*l, *h);
        }
    }

    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        v.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .map(|(x, (l, h))| (l - x).max(x - h).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// ½‖A g − b‖² + λ‖g‖₁
pub fn lasso_objective(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, g: &DVector<f64>) -> f64 {
    0.5 * (a * g - b).norm_squared() + lambda * g.lp_norm(1)
}

/// Largest violation of the ℓ1 optimality condition: with
/// `s = −(Aᵀ(A g − b) + Cᵀ y)`, every coordinate must satisfy
/// `s_i = λ·sign(g_i)` where `|g_i| > zero_tol` and `|s_i| ≤ λ` elsewhere.
/// Also checks that the box multiplier only acts on active bounds.
pub fn l1_certificate_violation(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    constraint: Option<(&DMatrix<f64>, &LinearBox, &DVector<f64>)>,
    g: &DVector<f64>,
    zero_tol: f64,
) -> f64 {
    let mut s = -(a.transpose() * (a * g - b));
    let mut worst: f64 = 0.0;
    if let Some((c, bx, y)) = constraint {
        s -= c.transpose() * y;
        let cg = c * g;
        let ymax = y.amax().max(f64::MIN_POSITIVE);
        for j in 0..y.len() {
            // A multiplier that is not negligible must sit on its bound.
            if y[j] > 1e-9 * ymax && cg[j] < bx.hi[j] - zero_tol {
                worst = worst.max(y[j]);
            }
            if y[j] < -1e-9 * ymax && cg[j] > bx.lo[j] + zero_tol {
                worst = worst.max(-y[j]);
            }
        }
    }
    for (si, gi) in s.iter().zip(g.iter()) {
        let v = if gi.abs() > zero_tol {
            (si - lambda * gi.signum()).abs()
        } else {
            (si.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Reusable solver for a fixed pair `(A, C)`; `b`, λ and the box vary
/// per call.
#[derive(Debug, Clone)]
pub struct CompositeLasso {
    a: DMatrix<f64>,
    c: Option<DMatrix<f64>>,
    // [A; C]
    stacked: DMatrix<f64>,
    // [A; C][A; C]ᵀ
    gram: DMatrix<f64>,
    factor: Option<(f64, Cholesky<f64, Dyn>)>,
}

impl CompositeLasso {
    pub fn new(a: DMatrix<f64>, c: Option<DMatrix<f64>>) -> Result<Self> {
        let n = a.ncols();
        if n == 0 || a.nrows() == 0 {
            return Err(Error::InvalidArgument("empty least-squares matrix".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("least-squares matrix"));
        }
        let s = match &c {
            Some(c) => {
                if c.ncols() != n {
                    return Err(Error::dim("constraint matrix columns", n, c.ncols()));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("constraint matrix"));
                }
                c.nrows()
            }
            None => 0,
        };
        let r = a.nrows();
        let mut stacked = DMatrix::zeros(r + s, n);
        stacked.rows_mut(0, r).copy_from(&a);
        if let Some(c) = &c {
            stacked.rows_mut(r, s).copy_from(c);
        }
        let gram = &stacked * stacked.transpose();
        Ok(Self {
            a,
            c,
            stacked,
            gram,
            factor: None,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn constraint(&self) -> Option<&DMatrix<f64>> {
        self.c.as_ref()
    }

    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    fn n_box(&self) -> usize {
        self.c.as_ref().map_or(0, |c| c.nrows())
    }

    /// Cholesky factor of S(ρ) = ρI + W Wᵀ with W = [A; √ρ C].
    fn factor(&mut self, rho: f64) -> Result<&Cholesky<f64, Dyn>> {
        let stale = !matches!(&self.factor, Some((r, _)) if *r == rho);
        if stale {
            let (r, s) = (self.n_rows(), self.n_box());
            let mut m = self.gram.clone();
            let sr = rho.sqrt();
            if s > 0 {
                m.view_mut((0, r), (r, s)).scale_mut(sr);
                m.view_mut((r, 0), (s, r)).scale_mut(sr);
                m.view_mut((r, r), (s, s)).scale_mut(rho);
            }
            for i in 0..r + s {
                m[(i, i)] += rho;
            }
            let chol = Cholesky::new(m).ok_or(Error::NonFinite("ADMM system factorization"))?;
            self.factor = Some((rho, chol));
        }
        Ok(&self.factor.as_ref().expect("factor just set").1)
    }

    pub fn solve(
        &mut self,
        b: &DVector<f64>,
        lambda: f64,
        bounds: Option<&LinearBox>,
        settings: &SolverSettings,
        warm: Option<&WarmStart>,
    ) -> Result<LassoSolution> {
        settings.validate()?;
        let (r, s, n) = (self.n_rows(), self.n_box(), self.n_vars());
        if b.len() != r {
            return Err(Error::dim("right-hand side", r, b.len()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "regularization weight must be finite and nonnegative, got {lambda}"
            )));
        }
        match (bounds, s) {
            (None, 0) => {}
            (Some(bx), s) if bx.len() == s && s > 0 => {}
            (Some(bx), s) => return Err(Error::dim("box bounds", s, bx.len())),
            (None, s) => return Err(Error::dim("box bounds", s, 0)),
        }
        if let Some(bx) = bounds {
            if !self.box_feasible(bx) {
                return Ok(self.infeasible(b, lambda, s));
            }
        }

        let mut state = match warm {
            Some(w) if w.g.len() == n && w.z_box.len() == s => w.clone(),
            _ => WarmStart {
                g: DVector::zeros(n),
                z_l1: DVector::zeros(n),
                z_box: DVector::zeros(s),
                y_l1: DVector::zeros(n),
                y_box: DVector::zeros(s),
                rho: settings.rho,
            },
        };
        if let Some(bx) = bounds {
            bx.project(&mut state.z_box);
        }

        let atb = self.a.tr_mul(b);
        // [A; C] Aᵀ b
        let w_atb = &self.stacked * &atb;
        let alpha = settings.relaxation;

        // ρ restarts from the configured value: a ρ adapted to the previous
        // right-hand side is often badly scaled for the next one.
        let mut rho = settings.rho;
        // Below this the factorization of ρI + WWᵀ loses definiteness in
        // floating point.
        let rho_floor = 1e-12 * self.gram.diagonal().amax().max(1e-300);
        let rho_floor = rho_floor.max(1e-8);
        let mut cg = DVector::zeros(s);
        let mut w0 = DVector::zeros(n);
        let mut rhs_small = DVector::zeros(r + s);
        let mut back = DVector::zeros(r + s);
        let mut sw0 = DVector::zeros(r + s);
        let mut gram_w2 = DVector::zeros(r + s);
        let mut best: Option<(f64, WarmStart, f64, f64)> = None;
        let mut status = SolveStatus::MaxIter;
        let mut residuals = (f64::INFINITY, f64::INFINITY);
        let mut iter = 0;
        let mut last_guess: Option<ActiveGuess> = None;
        let mut polished = false;
        let mut tighten = 1.0;
        if warm.is_some() {
            let guess = ActiveGuess::from_state(&state, bounds);
            if let Some(p) = self.refine(b, &atb, lambda, bounds, &state, &guess) {
                state.adopt(&p);
                let objective = lasso_objective(&self.a, b, lambda, &state.g);
                return Ok(LassoSolution {
                    g: state.g.clone(),
                    objective,
                    iterations: 0,
                    status: SolveStatus::Converged,
                    primal_residual: 0.0,
                    dual_residual: p.stationarity,
                    box_dual: state.y_box.clone(),
                    polished: true,
                    warm: state,
                });
            }
            last_guess = Some(guess);
        }

        while iter < settings.max_iter {
            iter += 1;
            let sr = rho.sqrt();
            // w0 = ρ z₁ − y₁, w2 = ρ z₂ − y₂
            w0.copy_from(&state.z_l1);
            w0.scale_mut(rho);
            w0 -= &state.y_l1;
            let w2 = &state.z_box * rho - &state.y_box;

            // [A; C] rhs with rhs = Aᵀb + w0 + Cᵀ w2
            sw0.gemv(1.0, &self.stacked, &w0, 0.0);
            if s > 0 {
                gram_w2.gemv(1.0, &self.gram.columns(r, s), &w2, 0.0);
            }
            let mut w_rhs = &w_atb + &sw0;
            if s > 0 {
                w_rhs += &gram_w2;
            }
            // v = S⁻¹ [A rhs; √ρ C rhs]
            rhs_small.copy_from(&w_rhs);
            if s > 0 {
                rhs_small.rows_mut(r, s).scale_mut(sr);
            }
            let v = self.factor(rho)?.solve(&rhs_small);

            // g = (rhs − Aᵀ v₁ − √ρ Cᵀ v₂) / ρ
            //   = (Aᵀ(b − v₁) + w0 + Cᵀ(w2 − √ρ v₂)) / ρ
            back.rows_mut(0, r).copy_from(&(b - v.rows(0, r)));
            if s > 0 {
                back.rows_mut(r, s).copy_from(&(&w2 - v.rows(r, s) * sr));
            }
            let mut g = w0.clone();
            g.gemv_tr(1.0, &self.stacked, &back, 1.0);
            g.scale_mut(1.0 / rho);
            if s > 0 {
                // C g from already computed pieces: (C Aᵀ b + C w0 + [C Aᵀ, C Cᵀ] back') / ρ
                // reduces to C·g; evaluate directly through the Gram rows.
                let cg_full = self.gram.rows(r, s) * &back + sw0.rows(r, s);
                cg.copy_from(&(cg_full / rho));
            }

            // Relaxed iterates and prox steps.
            let g_rel = &g * alpha + &state.z_l1 * (1.0 - alpha);
            let thresh = lambda / rho;
            for i in 0..n {
                let v = g_rel[i] + state.y_l1[i] / rho;
                let z = soft_threshold(v, thresh);
                state.y_l1[i] += rho * (g_rel[i] - z);
                state.z_l1[i] = z;
            }
            if let Some(bx) = bounds {
                let c_rel = &cg * alpha + &state.z_box * (1.0 - alpha);
                let mut z = &c_rel + &state.y_box / rho;
                bx.project(&mut z);
                state.y_box += (&c_rel - &z) * rho;
                state.z_box = z;
            }
            state.g = g;

            let last = iter == settings.max_iter;
            if iter % settings.check_interval != 0 && !last {
                continue;
            }

            // Exact solve on the support guessed by the current iterate.
            let guess = ActiveGuess::from_state(&state, bounds);
            if last_guess.as_ref() != Some(&guess) {
                if let Some(p) = self.refine(b, &atb, lambda, bounds, &state, &guess) {
                    state.adopt(&p);
                    residuals = (0.0, p.stationarity);
                    polished = true;
                    status = SolveStatus::Converged;
                    break;
                }
                last_guess = Some(guess);
            }

            let chk = self.residuals(&atb, &state, &cg, bounds, settings);
            residuals = (chk.primal, chk.dual);
            let merit = (chk.primal / chk.eps_primal).max(chk.dual / chk.eps_dual);
            if best.as_ref().is_none_or(|(m, ..)| merit < *m) {
                best = Some((merit, state.clone(), chk.primal, chk.dual));
            }
            if chk.primal <= tighten * chk.eps_primal
                && chk.dual <= tighten * chk.eps_dual
                && chk.box_violation <= settings.eps_abs.max(f64::EPSILON)
            {
                // The refinement has not certified this point yet: keep
                // iterating on tighter tolerances for a better support guess.
                if tighten > MIN_TIGHTEN {
                    tighten *= 0.1;
                } else {
                    status = SolveStatus::Converged;
                    break;
                }
            }
            if settings.adaptive_rho {
                let np = chk.primal / chk.primal_scale.max(1e-300);
                let nd = chk.dual / chk.dual_scale.max(1e-300);
                if np > 10.0 * nd && rho < 1e8 {
                    rho *= 2.0;
                } else if nd > 10.0 * np && rho > rho_floor {
                    rho *= 0.5;
                }
            }
        }
        state.rho = rho;

        if status != SolveStatus::Converged {
            if let Some((_, b_state, p, d)) = best {
                state = b_state;
                state.rho = rho;
                residuals = (p, d);
            }
        }
        let objective = lasso_objective(&self.a, b, lambda, &state.g);
        Ok(LassoSolution {
            g: state.g.clone(),
            objective,
            iterations: iter,
            status,
            primal_residual: residuals.0,
            dual_residual: residuals.1,
            box_dual: state.y_box.clone(),
            polished,
            warm: state,
        })
    }

    fn box_feasible(&self, bx: &LinearBox) -> bool {
        if !bx.is_consistent() {
            return false;
        }
        // A zero constraint row pins C g to 0 on that row.
        let c = self.c.as_ref().expect("box implies constraint matrix");
        (0..c.nrows())
            .all(|j| c.row(j).iter().any(|v| *v != 0.0) || (bx.lo[j] <= 0.0 && 0.0 <= bx.hi[j]))
    }

    fn infeasible(&self, b: &DVector<f64>, lambda: f64, s: usize) -> LassoSolution {
        let n = self.n_vars();
        let g = DVector::zeros(n);
        LassoSolution {
            objective: lasso_objective(&self.a, b, lambda, &g),
            g: g.clone(),
            iterations: 0,
            status: SolveStatus::Infeasible,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            box_dual: DVector::zeros(s),
            polished: false,
            warm: WarmStart {
                g: g.clone(),
                z_l1: g.clone(),
                z_box: DVector::zeros(s),
                y_l1: g,
                y_box: DVector::zeros(s),
                rho: 1.0,
            },
        }
    }

    fn residuals(
        &self,
        atb: &DVector<f64>,
        st: &WarmStart,
        cg: &DVector<f64>,
        bounds: Option<&LinearBox>,
        settings: &SolverSettings,
    ) -> Residuals {
        let ag = &self.a * &st.g;
        let atag = self.a.tr_mul(&ag);
        let mut kty = st.y_l1.clone();
        if let Some(c) = &self.c {
            kty.gemv_tr(1.0, c, &st.y_box, 1.0);
        }
        let dual = (&atag - atb + &kty).amax();
        let mut primal = (&st.g - &st.z_l1).amax();
        let mut kg = st.g.amax();
        let mut z = st.z_l1.amax();
        let mut box_violation = 0.0;
        if let Some(bx) = bounds {
            primal = primal.max((cg - &st.z_box).amax());
            kg = kg.max(cg.amax());
            z = z.max(st.z_box.amax());
            box_violation = bx.violation(cg);
        }
        let primal_scale = kg.max(z);
        // AᵀA g and Aᵀb nearly cancel at the optimum and can exceed λ by
        // orders of magnitude, so the relative dual test uses their
        // difference instead of the individual terms.
        let dual_scale = (&atag - atb).amax().max(kty.amax());
        Residuals {
            primal,
            dual,
            eps_primal: settings.eps_abs + settings.eps_rel * primal_scale,
            eps_dual: settings.eps_abs + settings.eps_rel * dual_scale,
            primal_scale,
            dual_scale,
            box_violation,
        }
    }

    /// Exact refinement for the unconstrained case: sign search started
    /// from `start`. Each step solves the normal equations on the current
    /// support with fixed signs, then line-searches towards that point,
    /// stopping at the first sign change that lowers the objective. A zero
    /// coordinate enters when it violates `|∂_i| ≤ λ`.
    fn sign_search(&self, b: &DVector<f64>, lambda: f64, start: &DVector<f64>) -> Option<Polished> {
        let n = self.n_vars();
        let rows = self.n_rows();
        let tol = 1e-9 * lambda.max(1.0);
        let mut x = start.clone();
        for _ in 0..(4 * rows + 16) {
            let r = &self.a * &x - b;
            let grad = self.a.tr_mul(&r);
            let mut support: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
            // Checked every pass: an entering coordinate can land on the
            // opposite sign to the one it was solved with.
            let exact = support
                .iter()
                .all(|&i| (grad[i] + lambda * x[i].signum()).abs() <= tol);
            let mut signs: Vec<f64> = support.iter().map(|&i| x[i].signum()).collect();
            if exact {
                let (mut worst, mut at) = (lambda + tol, None);
                for i in 0..n {
                    if x[i] == 0.0 && grad[i].abs() > worst {
                        worst = grad[i].abs();
                        at = Some(i);
                    }
                }
                let Some(i) = at else {
                    let stationarity = support
                        .iter()
                        .map(|&i| (grad[i] + lambda * x[i].signum()).abs())
                        .fold(0.0, f64::max);
                    return Some(Polished {
                        y_l1: -grad,
                        g: x,
                        cg: DVector::zeros(0),
                        y_box: DVector::zeros(0),
                        stationarity,
                    });
                };
                if support.len() >= rows {
                    return None;
                }
                support.push(i);
                signs.push(-grad[i].signum());
            }

            let a_s = self.a.select_columns(support.iter());
            let mut rhs = a_s.tr_mul(b);
            for (k, sg) in signs.iter().enumerate() {
                rhs[k] -= lambda * sg;
            }
            let target = Cholesky::new(a_s.tr_mul(&a_s))?.solve(&rhs);
            if target.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let current = DVector::from_iterator(support.len(), support.iter().map(|&i| x[i]));
            let objective =
                |v: &DVector<f64>| 0.5 * (&a_s * v - b).norm_squared() + lambda * v.lp_norm(1);
            let mut best_t = 1.0;
            let mut best_f = objective(&target);
            let mut best_zero = None;
            for k in 0..support.len() {
                let (c, t) = (current[k], target[k]);
                if c != 0.0 && c * t < 0.0 {
                    let step = c / (c - t);
                    let mut v = &current + (&target - &current) * step;
                    v[k] = 0.0;
                    let f = objective(&v);
                    if f < best_f {
                        best_f = f;
                        best_t = step;
                        best_zero = Some(k);
                    }
                }
            }
            let next = &current + (&target - &current) * best_t;
            for (k, &i) in support.iter().enumerate() {
                x[i] = if Some(k) == best_zero { 0.0 } else { next[k] };
            }
        }
        None
    }

    /// Solves the stationarity system restricted to a guessed support and
    /// active bound set, then accepts the point only if it satisfies every
    /// optimality condition of the full problem.
    fn refine(
        &self,
        b: &DVector<f64>,
        atb: &DVector<f64>,
        lambda: f64,
        bounds: Option<&LinearBox>,
        st: &WarmStart,
        guess: &ActiveGuess,
    ) -> Option<Polished> {
        if guess.support.len() > self.n_rows() {
            return None;
        }
        if bounds.is_some() {
            return self.polish(b, atb, lambda, bounds, guess);
        }
        let mut start = DVector::zeros(self.n_vars());
        for (i, _) in &guess.support {
            start[*i] = st.z_l1[*i];
        }
        self.sign_search(b, lambda, &start)
    }

    fn polish(
        &self,
        b: &DVector<f64>,
        atb: &DVector<f64>,
        lambda: f64,
        bounds: Option<&LinearBox>,
        guess: &ActiveGuess,
    ) -> Option<Polished> {
        let n = self.n_vars();
        let k = guess.support.len();
        let act = guess.active.len();
        // More support columns than rows leaves the reduced system singular.
        if act > k || k > self.n_rows() {
            return None;
        }
        let mut g = DVector::zeros(n);
        let mut y_box = DVector::zeros(self.n_box());
        if k > 0 {
            let a_s = self.a.select_columns(guess.support.iter().map(|(i, _)| i));
            let dim = k + act;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (k, k)).copy_from(&a_s.tr_mul(&a_s));
            let mut rhs = DVector::zeros(dim);
            for (row, (i, sign)) in guess.support.iter().enumerate() {
                rhs[row] = atb[*i] - lambda * *sign as f64;
            }
            if act > 0 {
                let c = self.c.as_ref()?;
                let bx = bounds?;
                for (row, (j, upper)) in guess.active.iter().enumerate() {
                    for (col, (i, _)) in guess.support.iter().enumerate() {
                        kkt[(k + row, col)] = c[(*j, *i)];
                        kkt[(col, k + row)] = c[(*j, *i)];
                    }
                    rhs[k + row] = if *upper { bx.hi[*j] } else { bx.lo[*j] };
                }
            }
            let x = kkt.lu().solve(&rhs)?;
            if x.iter().any(|v| !v.is_finite()) {
                return None;
            }
            for (row, (i, sign)) in guess.support.iter().enumerate() {
                if x[row] * *sign as f64 <= 0.0 {
                    return None;
                }
                g[*i] = x[row];
            }
            for (row, (j, upper)) in guess.active.iter().enumerate() {
                let nu = x[k + row];
                if (*upper && nu < 0.0) || (!*upper && nu > 0.0) {
                    return None;
                }
                y_box[*j] = nu;
            }
        }

        let r = &self.a * &g - b;
        let mut s = -self.a.tr_mul(&r);
        let mut cg = DVector::zeros(self.n_box());
        if let Some(c) = &self.c {
            s.gemv_tr(-1.0, c, &y_box, 1.0);
            cg = c * &g;
        }
        let scale = lambda.max(s.amax()).max(1.0);
        let tol = 1e-9 * scale;
        if let Some(bx) = bounds {
            let bound_scale = bx.lo.amax().max(bx.hi.amax()).max(1.0);
            if bx.violation(&cg) > 1e-9 * bound_scale {
                return None;
            }
            bx.project(&mut cg);
        }
        let mut stationarity: f64 = 0.0;
        let mut on_support = vec![false; n];
        for (i, sign) in &guess.support {
            on_support[*i] = true;
            stationarity = stationarity.max((s[*i] - lambda * *sign as f64).abs());
        }
        for i in 0..n {
            if !on_support[i] {
                let excess = s[i].abs() - lambda;
                if excess > tol {
                    return None;
                }
                stationarity = stationarity.max(excess.max(0.0));
            }
        }
        Some(Polished {
            g,
            cg,
            y_l1: s,
            y_box,
            stationarity,
        })
    }
}

/// Support with signs, and active bounds (`true` for the upper bound),
/// read off the current iterate.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ActiveGuess {
    support: Vec<(usize, i8)>,
    active: Vec<(usize, bool)>,
}

impl ActiveGuess {
    fn from_state(st: &WarmStart, bounds: Option<&LinearBox>) -> Self {
        let support = st
            .z_l1
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, if *v > 0.0 { 1 } else { -1 }))
            .collect();
        let mut active = Vec::new();
        if let Some(bx) = bounds {
            for j in 0..bx.len() {
                let (z, y) = (st.z_box[j], st.y_box[j]);
                if z - bx.lo[j] < -y {
                    active.push((j, false));
                } else if bx.hi[j] - z < y {
                    active.push((j, true));
                }
            }
        }
        Self { support, active }
    }
}

struct Polished {
    g: DVector<f64>,
    cg: DVector<f64>,
    y_l1: DVector<f64>,
    y_box: DVector<f64>,
    stationarity: f64,
}

struct Residuals {
    primal: f64,
    dual: f64,
    eps_primal: f64,
    eps_dual: f64,
    primal_scale: f64,
    dual_scale: f64,
    box_violation: f64,
}

#[inline]
pub fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}
