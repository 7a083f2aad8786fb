//! Small numerical kernels shared across modules: a classic RK4 step, a
//! damped Gauss-Newton solver with finite-difference Jacobians, and matrix
//! functions (exponential, logarithm, real Schur based eigenvalue edits).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// One classic fourth-order Runge-Kutta step of `ẋ = f(t, x)`.
pub fn rk4_step<F>(f: &mut F, t: f64, x: &[f64], h: f64, out: &mut [f64]) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    Rk4::new(x.len()).step(f, t, x, h, out)
}

/// RK4 stepper with preallocated stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub fn step<F>(&mut self, f: &mut F, t: f64, x: &[f64], h: f64, out: &mut [f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = x.len();
        let Rk4 { k1, k2, k3, k4, tmp } = self;
        f(t, x, k1)?;
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        f(t + 0.5 * h, tmp, k2)?;
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        f(t + 0.5 * h, tmp, k3)?;
        for j in 0..n {
            tmp[j] = x[j] + h * k3[j];
        }
        f(t + h, tmp, k4)?;
        for j in 0..n {
            out[j] = x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 200,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest singular value of the last Jacobian, relative to the largest.
    pub jacobian_conditioning: f64,
}

fn finite_difference_jacobian<F>(f: &mut F, x: &[f64], fx: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let m = fx.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..n {
        let h = step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        f(&xp, &mut fp)?;
        xp[j] = x[j] - h;
        f(&xp, &mut fm)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Levenberg-damped Gauss-Newton on `F(x) = 0` with `m` residuals.
///
/// Rank-deficient directions (gauge symmetries) are handled by the damping;
/// the outcome reports convergence instead of failing.
pub fn solve_nonlinear<F>(mut f: F, x0: &[f64], m: usize, opts: NewtonOptions) -> Result<NewtonOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = vec![0.0; m];
    f(&x, &mut fx)?;
    let mut norm = l2(&fx);
    let mut mu = 1e-8;
    let mut conditioning = 1.0;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut ftrial = vec![0.0; m];
    while iterations < opts.max_iterations && norm > opts.tolerance {
        iterations += 1;
        let jac = finite_difference_jacobian(&mut f, &x, &fx, opts.fd_step)?;
        let sv = jac.clone().svd(false, false).singular_values;
        let smax = sv.max();
        conditioning = if smax > 0.0 { sv.min() / smax } else { 0.0 };
        let jt = jac.transpose();
        let gradient = &jt * DVector::from_column_slice(&fx);
        let normal = &jt * &jac;
        let scale = normal.diagonal().max().max(1e-300);
        let mut improved = false;
        for _ in 0..40 {
            let mut lhs = normal.clone();
            for d in 0..n {
                lhs[(d, d)] += mu * scale;
            }
            let Some(chol) = lhs.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&gradient));
            for d in 0..n {
                trial[d] = x[d] + step[d];
            }
            if f(&trial, &mut ftrial).is_ok() {
                let tn = l2(&ftrial);
                if tn.is_finite() && tn < norm {
                    x.copy_from_slice(&trial);
                    fx.copy_from_slice(&ftrial);
                    norm = tn;
                    mu = (mu / 10.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(NewtonOutcome {
        x,
        residual_norm: norm,
        iterations,
        converged: norm <= opts.tolerance,
        jacobian_conditioning: conditioning,
    })
}

pub(crate) fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Matrix exponential (Padé with scaling and squaring).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    a.exp()
}

/// `∫₀^h exp(A s) ds` via the exponential of the augmented matrix
/// `[[A, I], [0, 0]]`, valid for singular `A`.
pub fn expm_integral(a: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    for i in 0..n {
        aug[(i, n + i)] = h;
    }
    let e = expm(&aug);
    e.view((0, n), (n, n)).into_owned()
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect()
}

/// Whether a real matrix has an eigenvalue on the closed negative real axis,
/// where the principal logarithm is undefined or not real.
pub fn has_nonpositive_real_eigenvalue(a: &DMatrix<f64>) -> bool {
    let scale = a.norm().max(1.0);
    eigenvalues(a)
        .iter()
        .any(|z| z.re <= 0.0 && z.im.abs() <= 1e-12 * scale)
}

/// Principal square root by the Denman-Beavers iteration.
fn sqrtm(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse()?;
        let zi = z.clone().try_inverse()?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).norm() / y_next.norm().max(1e-300);
        y = y_next;
        z = z_next;
        if delta < 1e-15 {
            return Some(y);
        }
    }
    if y.iter().all(|v| v.is_finite()) {
        Some(y)
    } else {
        None
    }
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Returns `None` when `a` has an eigenvalue on the closed negative real
/// axis.
pub fn logm(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if has_nonpositive_real_eigenvalue(a) {
        return None;
    }
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut squarings = 0;
    while (&x - &id).norm() > 0.1 {
        x = sqrtm(&x)?;
        squarings += 1;
        if squarings > 60 {
            return None;
        }
    }
    // log(I + Y) = 2 atanh(Z) with Z = Y (2I + Y)^{-1}; the odd series in Z
    // converges fast for ||Y|| <= 0.1.
    let y = &x - &id;
    let z = &y * (&id * 2.0 + &y).try_inverse()?;
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut sum = z.clone();
    for k in 1..40 {
        term = &term * &z2;
        let add = &term / (2 * k + 1) as f64;
        sum += &add;
        if add.norm() < 1e-18 * sum.norm().max(1e-300) {
            break;
        }
    }
    let log = sum * 2.0 * 2f64.powi(squarings);
    log.iter().all(|v| v.is_finite()).then_some(log)
}

/// Reflects eigenvalues with positive real part into the left half plane,
/// working on the real Schur form so the result stays real.
///
/// Returns the edited matrix and the number of reflected eigenvalues.
pub fn reflect_unstable(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = a.nrows();
    if n == 0 {
        return (a.clone(), 0);
    }
    let (q, mut t) = a.clone().schur().unpack();
    let mut reflected = 0;
    let mut i = 0;
    while i < n {
        let block2 = i + 1 < n && t[(i + 1, i)].abs() > 1e-300;
        if block2 {
            let alpha = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
            if alpha > 0.0 {
                t[(i, i)] -= 2.0 * alpha;
                t[(i + 1, i + 1)] -= 2.0 * alpha;
                reflected += 2;
            }
            i += 2;
        } else {
            if t[(i, i)] > 0.0 {
                t[(i, i)] = -t[(i, i)];
                reflected += 1;
            }
            i += 1;
        }
    }
    if reflected == 0 {
        return (a.clone(), 0);
    }
    (&q * t * q.transpose(), reflected)
}

/// Solves `A X = B` for square `A`, failing on singular systems.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Dimension("singular linear system".into()))
}
