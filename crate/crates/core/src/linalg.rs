//! Matrix-free Krylov solvers with reductions whose result does not depend
//! on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fixed reduction block; partial sums are combined in block order.
const CHUNK: usize = 4096;

/// Sum with a fixed blocking, independent of the thread count.
pub fn det_sum(x: &[f64]) -> f64 {
    if x.len() <= CHUNK {
        return x.iter().sum();
    }
    let partial: Vec<f64> = x.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    partial.iter().sum()
}

/// Dot product with the same blocking as [`det_sum`].
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    if x.len() <= CHUNK {
        return x.iter().zip(y).map(|(a, b)| a * b).sum();
    }
    let partial: Vec<f64> = x
        .par_chunks(CHUNK)
        .zip(y.par_chunks(CHUNK))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

/// Convergence controls for the iterative solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative residual target `|b - A x| <= tol |b|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 5000 }
    }
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator with Jacobi preconditioner `inv_diag`. `x` holds the initial
/// guess on entry. Returns the iteration count.
pub fn conjugate_gradient<A>(
    apply: A,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    opts: SolverOptions,
) -> Result<usize>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
    let target = opts.tol * b_norm;
    if dot(&r, &r).sqrt() <= target {
        return Ok(0);
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=opts.max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence { iterations: it, residual: dot(&r, &r).sqrt() / b_norm });
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(p.par_iter()).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(ap.par_iter()).for_each(|(ri, a)| *ri -= alpha * a);
        let res = dot(&r, &r).sqrt();
        if res <= target {
            return Ok(it);
        }
        z.par_iter_mut()
            .zip(r.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(zi, (ri, d))| *zi = ri * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: dot(&r, &r).sqrt() / b_norm })
}

/// Right-preconditioned BiCGSTAB for general nonsymmetric operators.
pub fn bicgstab<A>(
    apply: A,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    opts: SolverOptions,
) -> Result<usize>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let target = opts.tol * b_norm;
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
    if dot(&r, &r).sqrt() <= target {
        return Ok(0);
    }
    let mut r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=opts.max_iter {
        let mut rho_new = dot(&r_hat, &r);
        if rho_new.abs() <= 1e-30 * dot(&r, &r) || omega == 0.0 {
            // breakdown: restart with the current residual as shadow vector
            r_hat.copy_from_slice(&r);
            rho_new = dot(&r, &r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|x| *x = 0.0);
            p.iter_mut().for_each(|x| *x = 0.0);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(r.par_iter().zip(v.par_iter()))
            .for_each(|(pi, (ri, vi))| *pi = ri + beta * (*pi - omega * vi));
        y.par_iter_mut()
            .zip(p.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(yi, (pi, d))| *yi = pi * d);
        apply(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        s.par_iter_mut()
            .zip(r.par_iter().zip(v.par_iter()))
            .for_each(|(si, (ri, vi))| *si = ri - alpha * vi);
        if dot(&s, &s).sqrt() <= target {
            x.par_iter_mut().zip(y.par_iter()).for_each(|(xi, yi)| *xi += alpha * yi);
            return Ok(it);
        }
        zs.par_iter_mut()
            .zip(s.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(zi, (si, d))| *zi = si * d);
        apply(&zs, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        x.par_iter_mut()
            .zip(y.par_iter().zip(zs.par_iter()))
            .for_each(|(xi, (yi, zi))| *xi += alpha * yi + omega * zi);
        r.par_iter_mut()
            .zip(s.par_iter().zip(t.par_iter()))
            .for_each(|(ri, (si, ti))| *ri = si - omega * ti);
        if dot(&r, &r).sqrt() <= target {
            return Ok(it);
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: dot(&r, &r).sqrt() / b_norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(shift: f64) -> impl Fn(&[f64], &mut [f64]) {
        move |x: &[f64], y: &mut [f64]| {
            let n = x.len();
            for i in 0..n {
                let l = if i == 0 { 0.0 } else { x[i - 1] };
                let r = if i + 1 == n { 0.0 } else { x[i + 1] };
                y[i] = (2.0 + shift) * x[i] - l - r;
            }
        }
    }

    #[test]
    fn det_sum_is_blocked() {
        let x: Vec<f64> = (0..20_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let serial: f64 = x.chunks(CHUNK).map(|c| c.iter().sum::<f64>()).sum();
        assert_eq!(det_sum(&x), serial);
        assert_eq!(dot(&x, &x), x.chunks(CHUNK).map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>());
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 200;
        let op = laplacian_1d(0.1);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut b = vec![0.0; n];
        op(&x_true, &mut b);
        let mut x = vec![0.0; n];
        let inv = vec![1.0 / 2.1; n];
        conjugate_gradient(&op, &inv, &b, &mut x, SolverOptions::default()).unwrap();
        let err = x.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 200;
        let op = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i == 0 { 0.0 } else { x[i - 1] };
                let r = if i + 1 == n { 0.0 } else { x[i + 1] };
                y[i] = 3.0 * x[i] - 1.3 * l - 0.7 * r;
            }
        };
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).cos()).collect();
        let mut b = vec![0.0; n];
        op(&x_true, &mut b);
        let mut x = b.clone();
        let inv = vec![1.0 / 3.0; n];
        bicgstab(op, &inv, &b, &mut x, SolverOptions::default()).unwrap();
        let err = x.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let op = laplacian_1d(0.0);
        let mut x = vec![1.0; 10];
        let it = conjugate_gradient(&op, &[0.5; 10], &[0.0; 10], &mut x, SolverOptions::default()).unwrap();
        assert_eq!(it, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
