//! Hammerstein-Wiener normal form: error coordinates in, linear dynamics,
//! complex-phase integrator, exponential output map.

mod json;
mod simulate;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{eigenvalues, expm, expm_integral, logm, solve};
use crate::signal::{complex_power, DqSeries};

pub use json::Provenance;
pub use simulate::{
    equilibrium, equilibrium_ports, simulate_closed_loop, simulate_closed_loop_ports, simulate_open_loop, ClosedLoopOptions, ClosedLoopOutput, Equilibrium, MultiPortOutput,
    OpenLoopOutput, PhaseRule,
};

/// Power and voltage setpoints of a grid-forming device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setpoints {
    pub p: f64,
    pub q: f64,
    /// Voltage magnitude.
    pub v: f64,
}

impl Default for Setpoints {
    fn default() -> Self {
        Self { p: 0.5, q: 0.0, v: 1.0 }
    }
}

impl Setpoints {
    pub fn nu(&self) -> f64 {
        self.v * self.v
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.q.is_finite()) {
            return Err(Error::param("setpoints", "p and q must be finite"));
        }
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(Error::param("setpoints.v", format!("must be positive, got {}", self.v)));
        }
        Ok(())
    }
}

/// `e = (P − Pˢ, Q − Qˢ, |v|² − vˢ²)`.
pub fn error_coordinates(v: Complex64, i: Complex64, sp: &Setpoints) -> [f64; 3] {
    let s = complex_power(v, i);
    [s.p - sp.p, s.q - sp.q, s.nu - sp.nu()]
}

/// Uniformly sampled error-coordinate input.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub e: Vec<[f64; 3]>,
    pub dt: f64,
}

impl ErrorSeries {
    pub fn from_dq(series: &DqSeries, sp: &Setpoints) -> Self {
        Self {
            e: series
                .samples()
                .iter()
                .map(|s| error_coordinates(s.v, s.i, sp))
                .collect(),
            dt: series.dt(),
        }
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }
}

/// Continuous-time normal form `ẋ = A x + B e`, `Θ̇ = C x + D e`, `v = e^Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HwNormalForm {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: Vec<Complex64>,
    pub d: [Complex64; 3],
    pub setpoints: Setpoints,
    pub provenance: Provenance,
}

/// Zero-order-hold discretization of a [`HwNormalForm`].
#[derive(Debug, Clone, PartialEq)]
pub struct HwDiscrete {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub c: Vec<Complex64>,
    pub d: [Complex64; 3],
    pub dt: f64,
    pub setpoints: Setpoints,
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &[Complex64]) -> Result<usize> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != 3 || c.len() != n {
        return Err(Error::Dimension(format!(
            "A {}x{}, B {}x{}, C 1x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.len()
        )));
    }
    Ok(n)
}

fn all_finite(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &[Complex64], d: &[Complex64; 3]) -> bool {
    a.iter().chain(b.iter()).all(|v| v.is_finite())
        && c.iter().chain(d.iter()).all(|z| z.re.is_finite() && z.im.is_finite())
}

impl HwNormalForm {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: Vec<Complex64>,
        d: [Complex64; 3],
        setpoints: Setpoints,
    ) -> Result<Self> {
        check_shapes(&a, &b, &c)?;
        if !all_finite(&a, &b, &c, &d) {
            return Err(Error::NonFinite("normal-form matrices"));
        }
        setpoints.validate()?;
        Ok(Self {
            a,
            b,
            c,
            d,
            setpoints,
            provenance: Provenance::default(),
        })
    }

    /// Model with all matrices zero.
    pub fn zeros(n_ivars: usize, setpoints: Setpoints) -> Self {
        Self {
            a: DMatrix::zeros(n_ivars, n_ivars),
            b: DMatrix::zeros(n_ivars, 3),
            c: vec![Complex64::new(0.0, 0.0); n_ivars],
            d: [Complex64::new(0.0, 0.0); 3],
            setpoints,
            provenance: Provenance::default(),
        }
    }

    pub fn n_ivars(&self) -> usize {
        self.a.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        eigenvalues(&self.a)
    }

    /// Frobenius norm of the direct feedthrough `D`.
    pub fn feedthrough_norm(&self) -> f64 {
        self.d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Exact zero-order-hold discretization at step `dt`.
    pub fn discretize(&self, dt: f64) -> Result<HwDiscrete> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        let a_d = expm(&(&self.a * dt));
        let b_d = expm_integral(&self.a, dt) * &self.b;
        Ok(HwDiscrete {
            a_d,
            b_d,
            c: self.c.clone(),
            d: self.d,
            dt,
            setpoints: self.setpoints,
        })
    }

    /// Markov parameters of the discretized map `e → η`: `h₀ = D`,
    /// `h_k = C A_d^{k−1} B_d`.
    pub fn markov_parameters(&self, dt: f64, count: usize) -> Result<Vec<[Complex64; 3]>> {
        Ok(self.discretize(dt)?.markov_parameters(count))
    }
}

impl HwDiscrete {
    pub fn n_ivars(&self) -> usize {
        self.a_d.nrows()
    }

    pub fn markov_parameters(&self, count: usize) -> Vec<[Complex64; 3]> {
        let n = self.n_ivars();
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d);
        let mut power_b = self.b_d.clone();
        for _ in 1..count {
            let mut h = [Complex64::new(0.0, 0.0); 3];
            for (j, hj) in h.iter_mut().enumerate() {
                for r in 0..n {
                    *hj += self.c[r] * power_b[(r, j)];
                }
            }
            out.push(h);
            power_b = &self.a_d * power_b;
        }
        out
    }

    /// Continuous-time model with the same sampled behaviour. The second
    /// value is `true` when the matrix logarithm was unavailable and the
    /// bilinear inverse was used instead.
    pub fn to_continuous(&self) -> Result<(HwNormalForm, bool)> {
        let n = self.n_ivars();
        let dt = self.dt;
        let id = DMatrix::<f64>::identity(n, n);
        let (a, b, fallback) = match logm(&self.a_d) {
            Some(log) => {
                let a = log / dt;
                let integral = expm_integral(&a, dt);
                match solve(&integral, &self.b_d) {
                    Ok(b) => (a, b, false),
                    Err(_) => bilinear(&self.a_d, &self.b_d, dt, &id)?,
                }
            }
            None => bilinear(&self.a_d, &self.b_d, dt, &id)?,
        };
        let model = HwNormalForm::new(a, b, self.c.clone(), self.d, self.setpoints)?;
        Ok((model, fallback))
    }
}

fn bilinear(
    a_d: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    dt: f64,
    id: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
    let plus = a_d + id;
    let a = solve(&plus.transpose(), &(a_d - id).transpose())?.transpose() * (2.0 / dt);
    let b = solve(&plus, b_d)? * (2.0 / dt);
    Ok((a, b, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn error_coordinate_examples() {
        let c = |re, im| Complex64::new(re, im);
        assert_eq!(
            error_coordinates(c(1.0, 0.0), c(1.0, 0.0), &Setpoints { p: 1.0, q: 0.0, v: 1.0 }),
            [0.0, 0.0, 0.0]
        );
        assert_eq!(
            error_coordinates(c(1.0, 0.0), c(0.5, -0.5), &Setpoints { p: 0.0, q: 0.0, v: 1.0 }),
            [0.5, 0.5, 0.0]
        );
        let e = error_coordinates(c(0.9, 0.0), c(0.0, 0.0), &Setpoints { p: 0.0, q: 0.0, v: 1.0 });
        assert_abs_diff_eq!(e[2], -0.19, epsilon = 1e-15);
    }

    #[test]
    fn discretize_limit_cases() {
        let sp = Setpoints::default();
        let b = dmatrix![1.0, 2.0, 3.0];
        let m = HwNormalForm::new(dmatrix![0.0], b.clone(), vec![Complex64::new(1.0, 0.0)], [Complex64::new(0.0, 0.0); 3], sp)
            .unwrap();
        let d = m.discretize(0.01).unwrap();
        assert_abs_diff_eq!(d.a_d[(0, 0)], 1.0, epsilon = 1e-15);
        for j in 0..3 {
            assert_abs_diff_eq!(d.b_d[(0, j)], 0.01 * b[(0, j)], epsilon = 1e-15);
        }
        let m = HwNormalForm::new(dmatrix![-1.0], b.clone(), vec![Complex64::new(1.0, 0.0)], [Complex64::new(0.0, 0.0); 3], sp)
            .unwrap();
        let d = m.discretize(1.0).unwrap();
        let e1 = (-1.0f64).exp();
        assert_abs_diff_eq!(d.a_d[(0, 0)], e1, epsilon = 1e-14);
        for j in 0..3 {
            assert_abs_diff_eq!(d.b_d[(0, j)], (1.0 - e1) * b[(0, j)], epsilon = 1e-14);
        }
    }

    #[test]
    fn continuous_round_trip() {
        let a = dmatrix![-3.0, 1.0; -2.0, -0.5];
        let b = dmatrix![1.0, 0.0, 0.3; 0.0, -1.0, 0.2];
        let c = vec![Complex64::new(0.5, 1.0), Complex64::new(-0.2, 0.1)];
        let m = HwNormalForm::new(a, b, c, [Complex64::new(0.1, 0.0); 3], Setpoints::default()).unwrap();
        let (back, fallback) = m.discretize(1e-3).unwrap().to_continuous().unwrap();
        assert!(!fallback);
        assert!((back.a - &m.a).norm() < 1e-9);
        assert!((back.b - &m.b).norm() < 1e-9);
    }

    #[test]
    fn negative_real_discrete_pole_uses_bilinear() {
        let d = HwDiscrete {
            a_d: dmatrix![-0.5],
            b_d: dmatrix![1.0, 0.0, 0.0],
            c: vec![Complex64::new(1.0, 0.0)],
            d: [Complex64::new(0.0, 0.0); 3],
            dt: 1e-3,
            setpoints: Setpoints::default(),
        };
        let (m, fallback) = d.to_continuous().unwrap();
        assert!(fallback);
        assert_abs_diff_eq!(m.a[(0, 0)], 2.0 / 1e-3 * (-1.5 / 0.5), epsilon = 1e-9);
    }

    #[test]
    fn invalid_shapes_and_values() {
        let sp = Setpoints::default();
        assert!(HwNormalForm::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), vec![Complex64::new(0.0, 0.0); 2], [Complex64::new(0.0, 0.0); 3], sp).is_err());
        assert!(HwNormalForm::new(dmatrix![f64::NAN], DMatrix::zeros(1, 3), vec![Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0); 3], sp).is_err());
        assert!(Setpoints { v: 0.0, ..sp }.validate().is_err());
    }

    #[test]
    fn markov_parameters_of_scalar_system() {
        let m = HwNormalForm::new(
            dmatrix![-5.0],
            dmatrix![1.0, 0.0, 0.0],
            vec![Complex64::new(2.0, 1.0)],
            [Complex64::new(0.0, 0.0); 3],
            Setpoints::default(),
        )
        .unwrap();
        let dt = 1e-3;
        let h = m.markov_parameters(dt, 4).unwrap();
        let ad = (-5.0 * dt).exp();
        let bd = (1.0 - ad) / 5.0;
        for (k, hk) in h.iter().enumerate().skip(1) {
            let expected = Complex64::new(2.0, 1.0) * ad.powi(k as i32 - 1) * bd;
            assert!((hk[0] - expected).norm() < 1e-15);
            assert_eq!(hk[1], Complex64::new(0.0, 0.0));
        }
    }
}
