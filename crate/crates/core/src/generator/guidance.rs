use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{GeneratorError, Result};

/// Per-cell logits over the codebook, one row per masked cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    cells: Vec<usize>,
    values: Array2<f64>,
}

impl Logits {
    pub fn new(cells: Vec<usize>, values: Array2<f64>) -> Result<Self> {
        if cells.len() != values.nrows() {
            return Err(GeneratorError::ShapeMismatch(format!(
                "{} cells but {} logit rows",
                cells.len(),
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeneratorError::ShapeMismatch("non-finite logit".into()));
        }
        Ok(Self { cells, values })
    }

    pub fn empty(k: usize) -> Self {
        Self { cells: Vec::new(), values: Array2::zeros((0, k)) }
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn codebook_size(&self) -> usize {
        self.values.ncols()
    }
}

/// Guidance strength `t ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CfgScale(f64);

impl CfgScale {
    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t >= 0.0 {
            Ok(Self(t))
        } else {
            Err(GeneratorError::Config(format!("cfg scale must be finite and >= 0, got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for CfgScale {
    type Error = GeneratorError;

    fn try_from(t: f64) -> Result<Self> {
        Self::new(t)
    }
}

impl From<CfgScale> for f64 {
    fn from(t: CfgScale) -> f64 {
        t.0
    }
}

/// `u + t·((text − u) + (audio − u))`, elementwise.
///
/// Pass `uncond` in place of a missing condition to drop its term.
pub fn cfg_combine(uncond: &Logits, text: &Logits, audio: &Logits, t: CfgScale) -> Result<Logits> {
    if uncond.cells != text.cells
        || uncond.cells != audio.cells
        || uncond.values.dim() != text.values.dim()
        || uncond.values.dim() != audio.values.dim()
    {
        return Err(GeneratorError::CellMismatch);
    }
    let t = t.0;
    let mut out = uncond.values.clone();
    ndarray::Zip::from(&mut out)
        .and(&text.values)
        .and(&audio.values)
        .for_each(|u, &x, &a| {
            let base = *u;
            *u = base + t * ((x - base) + (a - base));
        });
    Ok(Logits { cells: uncond.cells.clone(), values: out })
}
