//! Reference solvers that share no code with the ADMM implementation.

use nalgebra::{DMatrix, DVector};

fn soft(v: f64, k: f64) -> f64 {
    v.signum() * (v.abs() - k).max(0.0)
}

fn spectral_norm_sq(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    gram.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn objective(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, g: &DVector<f64>) -> f64 {
    0.5 * (a * g - b).norm_squared() + lambda * g.iter().map(|v| v.abs()).sum::<f64>()
}

/// Accelerated proximal gradient with function-value restarts, stopped
/// when the prox-gradient step moves the iterate by less than `tol`.
pub fn fista(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let n = a.ncols();
    let lip = spectral_norm_sq(a).max(1e-300);
    let step = 1.0 / lip;
    let mut x = DVector::zeros(n);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(a, b, lambda, &x);
    for _ in 0..max_iter {
        let grad = a.transpose() * (a * &y - b);
        let x_new = (&y - grad * step).map(|v| soft(v, step * lambda));
        let f_new = objective(a, b, lambda, &x_new);
        let moved = (&x_new - &x).amax();
        if f_new > f_prev {
            // restart momentum
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        x = x_new;
        f_prev = f_new;
        if moved < tol {
            break;
        }
    }
    x
}

/// Primal–dual proximal splitting (Condat–Vũ) for the ℓ1 problem with the
/// box `lo ≤ C g ≤ hi`: forward step on the smooth term, prox of the ℓ1
/// term, and the conjugate prox of the box indicator on the dual side.
#[allow(clippy::too_many_arguments)]
pub fn primal_dual(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    c: &DMatrix<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let n = a.ncols();
    let lip = spectral_norm_sq(a).max(1e-12);
    let cn = spectral_norm_sq(c).max(1e-12);
    let sigma = lip / cn;
    let tau = 0.99 / (0.5 * lip + sigma * cn);
    let mut x = DVector::zeros(n);
    let mut v = DVector::zeros(c.nrows());
    for _ in 0..max_iter {
        let grad = a.transpose() * (a * &x - b) + c.transpose() * &v;
        let x_new = (&x - grad * tau).map(|t| soft(t, tau * lambda));
        let w = &v + c * (&x_new * 2.0 - &x) * sigma;
        let mut v_new = w.clone();
        for j in 0..v_new.len() {
            let p = (w[j] / sigma).clamp(lo[j], hi[j]);
            v_new[j] = w[j] - sigma * p;
        }
        let moved = (&x_new - &x)
            .amax()
            .max((&v_new - &v).amax() / sigma.max(1.0));
        x = x_new;
        v = v_new;
        if moved < tol {
            break;
        }
    }
    x
}
