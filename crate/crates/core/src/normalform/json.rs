//! JSON persistence of continuous-time models.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{HwNormalForm, Setpoints};
use crate::error::{Error, Result};

/// Where a model came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub training_seed: Option<u64>,
    pub data_manifest_hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComplexParts {
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    n_ivars: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: ComplexParts,
    #[serde(rename = "D")]
    d: ComplexParts,
    setpoints: Setpoints,
    provenance: Provenance,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::Model(format!("{name} has {} rows, expected {nrows}", rows.len())));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Model(format!(
                "{name} row {r} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

fn complex(name: &str, parts: &ComplexParts, len: usize) -> Result<Vec<Complex64>> {
    if parts.re.len() != len || parts.im.len() != len {
        return Err(Error::Model(format!(
            "{name} has {}/{} real/imaginary entries, expected {len}",
            parts.re.len(),
            parts.im.len()
        )));
    }
    Ok(parts.re.iter().zip(&parts.im).map(|(&re, &im)| Complex64::new(re, im)).collect())
}

impl HwNormalForm {
    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            n_ivars: self.n_ivars(),
            a: rows(&self.a),
            b: rows(&self.b),
            c: ComplexParts {
                re: self.c.iter().map(|z| z.re).collect(),
                im: self.c.iter().map(|z| z.im).collect(),
            },
            d: ComplexParts {
                re: self.d.iter().map(|z| z.re).collect(),
                im: self.d.iter().map(|z| z.im).collect(),
            },
            setpoints: self.setpoints,
            provenance: self.provenance.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        let n = doc.n_ivars;
        let a = matrix("A", &doc.a, n, n)?;
        let b = matrix("B", &doc.b, n, 3)?;
        let c = complex("C", &doc.c, n)?;
        let d = complex("D", &doc.d, 3)?;
        let mut model = HwNormalForm::new(a, b, c, [d[0], d[1], d[2]], doc.setpoints)
            .map_err(|e| Error::Model(e.to_string()))?;
        model.provenance = doc.provenance;
        Ok(model)
    }
}
