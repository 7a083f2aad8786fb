//! Subspace initialization (PO-MOESP) of the linear map `e → η`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::normalform::{HwDiscrete, HwNormalForm, Setpoints};
use crate::numerics::{eigenvalues, reflect_unstable};
use crate::signal::{complex_frequency, to_phase, DqSeries};

/// Upper bound on Hankel columns; longer data is strided.
const MAX_HANKEL_COLUMNS: usize = 40_000;
/// Rows per incremental QR update.
const CHUNK: usize = 2048;

/// Complex frequency of each record by central differences of its
/// unwrapped phase.
pub fn estimate_eta(records: &[&DqSeries]) -> Result<Vec<Vec<Complex64>>> {
    records.iter().map(|s| complex_frequency(&to_phase(s)?)).collect()
}

#[derive(Debug, Clone)]
pub struct SubspaceInit {
    pub model: HwNormalForm,
    /// Singular values of the projected output block, largest first.
    pub singular_values: Vec<f64>,
    /// Eigenvalues moved to the left half plane.
    pub reflected: usize,
    /// The matrix logarithm failed and the bilinear inverse was used.
    pub bilinear_fallback: bool,
}

/// Accumulates the triangular factor `R` of a tall matrix fed in row
/// blocks, so only `R` and one block are held in memory.
struct IncrementalQr {
    cols: usize,
    r: Option<DMatrix<f64>>,
    pending: Vec<f64>,
    rows: usize,
}

impl IncrementalQr {
    fn new(cols: usize) -> Self {
        Self { cols, r: None, pending: Vec::new(), rows: 0 }
    }

    fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols);
        self.pending.extend_from_slice(row);
        self.rows += 1;
        if self.rows == CHUNK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.rows == 0 {
            return;
        }
        let block = DMatrix::from_row_slice(self.rows, self.cols, &self.pending);
        let stacked = match self.r.take() {
            Some(r) => {
                let mut s = DMatrix::zeros(r.nrows() + block.nrows(), self.cols);
                s.rows_mut(0, r.nrows()).copy_from(&r);
                s.rows_mut(r.nrows(), block.nrows()).copy_from(&block);
                s
            }
            None => block,
        };
        self.r = Some(stacked.qr().r());
        self.pending.clear();
        self.rows = 0;
    }

    /// Square upper-triangular factor, zero-padded when fewer rows than
    /// columns were pushed.
    fn finish(mut self) -> DMatrix<f64> {
        self.flush();
        let mut out = DMatrix::zeros(self.cols, self.cols);
        if let Some(r) = self.r {
            let k = r.nrows().min(self.cols);
            out.rows_mut(0, k).copy_from(&r.rows(0, k));
        }
        out
    }
}

fn check_excitation(e_records: &[&[[f64; 3]]]) -> Result<()> {
    let total: usize = e_records.iter().map(|e| e.len()).sum();
    let mut mean = [0.0; 3];
    for e in e_records.iter().flat_map(|r| r.iter()) {
        for c in 0..3 {
            mean[c] += e[c] / total as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(3, 3);
    for e in e_records.iter().flat_map(|r| r.iter()) {
        for a in 0..3 {
            for b in 0..3 {
                cov[(a, b)] += (e[a] - mean[a]) * (e[b] - mean[b]);
            }
        }
    }
    let names = ["P", "Q", "|v|^2"];
    let scale = cov.diagonal().max();
    for c in 0..3 {
        if !(cov[(c, c)] > 1e-14 * total as f64) {
            return Err(Error::RankDeficient(format!("error channel {} is not excited", names[c])));
        }
    }
    let sym = cov.symmetric_eigenvalues();
    if sym.min() < 1e-10 * scale {
        return Err(Error::RankDeficient("error channels P, Q, |v|^2 are collinear".into()));
    }
    Ok(())
}

/// Pure feedthrough fit `η ≈ D e` by least squares.
fn feedthrough(e_records: &[&[[f64; 3]]], eta: &[Vec<Complex64>]) -> Result<[Complex64; 3]> {
    let mut qr = IncrementalQr::new(5);
    for (e, y) in e_records.iter().zip(eta) {
        for (ek, yk) in e.iter().zip(y) {
            qr.push(&[ek[0], ek[1], ek[2], yk.re, yk.im]);
        }
    }
    let r = qr.finish();
    let r11 = r.view((0, 0), (3, 3)).into_owned();
    let rhs = r.view((0, 3), (3, 2)).into_owned();
    let sol = r11
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::RankDeficient("singular feedthrough regression".into()))?;
    Ok([0, 1, 2].map(|j| Complex64::new(sol[(j, 0)], sol[(j, 1)])))
}

/// Discrete-time PO-MOESP fit of `x_{k+1} = A_d x_k + B_d e_k`,
/// `η_k = C x_k + D e_k` with `x_0 = 0` in every record, converted to
/// continuous time and stabilized.
pub fn subspace_init(
    e_records: &[&[[f64; 3]]],
    eta_records: &[Vec<Complex64>],
    n_ivars: usize,
    hankel_rows: usize,
    dt: f64,
    setpoints: Setpoints,
) -> Result<SubspaceInit> {
    if e_records.len() != eta_records.len() {
        return Err(Error::LengthMismatch { left: e_records.len(), right: eta_records.len() });
    }
    for (e, y) in e_records.iter().zip(eta_records) {
        if e.len() != y.len() {
            return Err(Error::LengthMismatch { left: e.len(), right: y.len() });
        }
    }
    let total: usize = e_records.iter().map(|e| e.len()).sum();
    let n_params = n_ivars * n_ivars + 5 * n_ivars + 6;
    if total < 10 * n_params {
        return Err(Error::TooFewSamples { needed: 10 * n_params, got: total });
    }
    check_excitation(e_records)?;
    if n_ivars == 0 {
        let d = feedthrough(e_records, eta_records)?;
        let model = HwNormalForm::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, 3), Vec::new(), d, setpoints)?;
        return Ok(SubspaceInit { model, singular_values: Vec::new(), reflected: 0, bilinear_fallback: false });
    }
    let i = hankel_rows;
    if i <= n_ivars {
        return Err(Error::param("hankel_rows", format!("{i} must exceed n_ivars {n_ivars}")));
    }

    // Block-Hankel columns, rows ordered [U_f, U_p, Y_p, Y_f].
    let columns: usize = e_records.iter().map(|e| (e.len() + 1).saturating_sub(2 * i)).sum();
    if columns == 0 {
        return Err(Error::TooFewSamples { needed: 2 * i, got: e_records.iter().map(|e| e.len()).max().unwrap_or(0) });
    }
    let stride = columns.div_ceil(MAX_HANKEL_COLUMNS);
    let (mu, ly) = (3, 2);
    let rows = 2 * i * (mu + ly);
    let mut qr = IncrementalQr::new(rows);
    let mut col = vec![0.0; rows];
    let mut counter = 0usize;
    for (e, y) in e_records.iter().zip(eta_records) {
        let cols_here = (e.len() + 1).saturating_sub(2 * i);
        for j in 0..cols_here {
            counter += 1;
            if (counter - 1) % stride != 0 {
                continue;
            }
            for b in 0..i {
                let uf = &e[j + i + b];
                let up = &e[j + b];
                for c in 0..3 {
                    col[3 * b + c] = uf[c];
                    col[3 * i + 3 * b + c] = up[c];
                }
                let yp = y[j + b];
                let yf = y[j + i + b];
                col[6 * i + 2 * b] = yp.re;
                col[6 * i + 2 * b + 1] = yp.im;
                col[8 * i + 2 * b] = yf.re;
                col[8 * i + 2 * b + 1] = yf.im;
            }
            qr.push(&col);
        }
    }
    // H = L Qᵀ with L = Rᵀ.
    let l = qr.finish().transpose();
    let l32 = l.view((8 * i, 3 * i), (2 * i, 5 * i)).into_owned();
    let svd = l32.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Optimization("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    if singular_values.len() < n_ivars || !(singular_values[n_ivars - 1] > 1e-12 * singular_values[0]) {
        return Err(Error::RankDeficient(format!("data support fewer than {n_ivars} internal variables")));
    }
    let gamma = DMatrix::from_fn(2 * i, n_ivars, |r, c| u[(r, order[c])] * singular_values[c].sqrt());

    let c_mat = gamma.rows(0, ly).into_owned();
    let upper = gamma.rows(0, ly * (i - 1)).into_owned();
    let lower = gamma.rows(ly, ly * (i - 1)).into_owned();
    let a_d = upper
        .svd(true, true)
        .solve(&lower, 1e-12)
        .map_err(|m| Error::Optimization(m.to_string()))?;

    let (b_d, d) = fit_input_matrices(&a_d, &c_mat, e_records, eta_records)?;
    let c: Vec<Complex64> = (0..n_ivars).map(|k| Complex64::new(c_mat[(0, k)], c_mat[(1, k)])).collect();
    let discrete = HwDiscrete { a_d, b_d, c, d, dt, setpoints };
    let (mut model, bilinear_fallback) = discrete.to_continuous()?;
    let (a, reflected) = reflect_unstable(&model.a);
    if reflected > 0 {
        log::info!("subspace init: reflected {reflected} unstable eigenvalue(s)");
        model.a = a;
    }
    debug_assert!(eigenvalues(&model.a).iter().all(|z| z.re <= 1e-9));
    Ok(SubspaceInit { model, singular_values, reflected, bilinear_fallback })
}

/// Least squares for `B_d` and `D` given `A_d` and `C`, with zero initial
/// state in each record.
fn fit_input_matrices(
    a_d: &DMatrix<f64>,
    c: &DMatrix<f64>,
    e_records: &[&[[f64; 3]]],
    eta_records: &[Vec<Complex64>],
) -> Result<(DMatrix<f64>, [Complex64; 3])> {
    let n = a_d.nrows();
    // Unknowns: B_d row-major (3n), then D as 2×3 row-major (6).
    let k = 3 * n + 6;
    let mut qr = IncrementalQr::new(k + 1);
    let mut row = vec![0.0; k + 1];
    for (e, y) in e_records.iter().zip(eta_records) {
        // Z[j] evolves as Z_{t+1} = A_d Z_t + I e_j,t; output sensitivity to
        // column j of B_d is C Z[j].
        let mut z: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); 3];
        for (ek, yk) in e.iter().zip(y) {
            let s: Vec<DMatrix<f64>> = z.iter().map(|zj| c * zj).collect();
            for out in 0..2 {
                row.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..n {
                    for j in 0..3 {
                        row[3 * r + j] = s[j][(out, r)];
                    }
                }
                for j in 0..3 {
                    row[3 * n + 3 * out + j] = ek[j];
                }
                row[k] = if out == 0 { yk.re } else { yk.im };
                qr.push(&row);
            }
            for (j, zj) in z.iter_mut().enumerate() {
                let mut next = a_d * &*zj;
                for r in 0..n {
                    next[(r, r)] += ek[j];
                }
                *zj = next;
            }
        }
    }
    let r = qr.finish();
    let r11 = r.view((0, 0), (k, k)).into_owned();
    let rhs: DVector<f64> = r.view((0, k), (k, 1)).column(0).into_owned();
    let eps = 1e-12 * r11.diagonal().abs().max();
    let sol = r11
        .svd(true, true)
        .solve(&rhs, eps)
        .map_err(|m| Error::Optimization(m.to_string()))?;
    let b_d = DMatrix::from_fn(n, 3, |r, j| sol[3 * r + j]);
    let d = [0, 1, 2].map(|j| Complex64::new(sol[3 * n + j], sol[3 * n + 3 + j]));
    Ok((b_d, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn excitation(rng: &mut impl Rng, len: usize) -> Vec<[f64; 3]> {
        (0..len).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect()
    }

    /// Output of the discrete system from zero state.
    fn respond(m: &HwDiscrete, e: &[[f64; 3]]) -> Vec<Complex64> {
        let n = m.n_ivars();
        let mut x = DVector::<f64>::zeros(n);
        e.iter()
            .map(|ek| {
                let u = DVector::from_column_slice(ek);
                let mut y = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    y += m.c[r] * x[r];
                }
                for j in 0..3 {
                    y += m.d[j] * ek[j];
                }
                x = &m.a_d * &x + &m.b_d * u;
                y
            })
            .collect()
    }

    #[test]
    fn recovers_first_order_system() {
        let truth = HwNormalForm::new(
            DMatrix::from_element(1, 1, -5.0),
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            vec![Complex64::new(2.0, 1.0)],
            [Complex64::new(0.0, 0.0); 3],
            Setpoints::default(),
        )
        .unwrap();
        let disc = truth.discretize(1e-3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let es: Vec<_> = (0..3).map(|_| excitation(&mut rng, 1500)).collect();
        let ys: Vec<_> = es.iter().map(|e| respond(&disc, e)).collect();
        let refs: Vec<&[[f64; 3]]> = es.iter().map(|e| e.as_slice()).collect();
        let init = subspace_init(&refs, &ys, 1, 20, 1e-3, Setpoints::default()).unwrap();
        let got = init.model.markov_parameters(1e-3, 50).unwrap();
        let want = disc.markov_parameters(50);
        let scale = want.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
            assert!((g - w).norm() < 1e-6 * scale, "{g} vs {w}");
        }
        assert!(!init.bilinear_fallback);
        assert_eq!(init.reflected, 0);
    }

    #[test]
    fn zero_input_is_rank_deficient() {
        let e = vec![[0.0; 3]; 500];
        let y = vec![Complex64::new(0.0, 0.0); 500];
        let err = subspace_init(&[e.as_slice()], &[y], 1, 20, 1e-3, Setpoints::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
    }

    #[test]
    fn collinear_channels_are_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let e: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                [a, 2.0 * a, rng.random_range(-1.0..1.0)]
            })
            .collect();
        let y = vec![Complex64::new(0.0, 0.0); 500];
        let err = subspace_init(&[e.as_slice()], &[y], 1, 20, 1e-3, Setpoints::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(m) if m.contains("collinear")));
    }

    #[test]
    fn zero_order_is_feedthrough() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let e = excitation(&mut rng, 400);
        let d = [Complex64::new(0.5, -1.0), Complex64::new(0.0, 2.0), Complex64::new(-3.0, 0.25)];
        let y: Vec<Complex64> = e.iter().map(|ek| d[0] * ek[0] + d[1] * ek[1] + d[2] * ek[2]).collect();
        let init = subspace_init(&[e.as_slice()], &[y], 0, 20, 1e-3, Setpoints::default()).unwrap();
        assert_eq!(init.model.n_ivars(), 0);
        for (a, b) in init.model.d.iter().zip(&d) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn unstable_modes_are_reflected() {
        let truth = HwNormalForm::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -8.0]),
            DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, -1.0]),
            vec![Complex64::new(1.0, 0.5), Complex64::new(-0.5, 1.0)],
            [Complex64::new(0.1, 0.0); 3],
            Setpoints::default(),
        )
        .unwrap();
        let disc = truth.discretize(1e-3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let e = excitation(&mut rng, 800);
        let y = respond(&disc, &e);
        let init = subspace_init(&[e.as_slice()], &[y], 2, 20, 1e-3, Setpoints::default()).unwrap();
        assert!(init.reflected >= 1);
        assert!(init.model.eigenvalues().iter().all(|z| z.re <= 0.0));
    }

    #[test]
    fn too_few_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let e = excitation(&mut rng, 50);
        let y = vec![Complex64::new(0.0, 0.0); 50];
        assert!(matches!(
            subspace_init(&[e.as_slice()], &[y], 2, 20, 1e-3, Setpoints::default()),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn eta_of_rotating_record() {
        let w = 2.0;
        let dt = 1e-3;
        let v: Vec<Complex64> = (0..200).map(|k| Complex64::new(0.0, w * k as f64 * dt).exp()).collect();
        let i = vec![Complex64::new(0.0, 0.0); 200];
        let s = DqSeries::from_parts(0.0, dt, &v, &i).unwrap();
        let eta = estimate_eta(&[&s]).unwrap();
        assert!(eta[0].iter().all(|z| (z - Complex64::new(0.0, w)).norm() < 1e-9));
        let flat = DqSeries::from_parts(0.0, dt, &vec![Complex64::new(1.0, 0.0); 50], &i[..50]).unwrap();
        assert!(estimate_eta(&[&flat]).unwrap()[0].iter().all(|z| z.norm() == 0.0));
    }
}
