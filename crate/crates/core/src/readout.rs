//! Linear readout trained by ridge-regularized least squares.
//!
//! `W_out = D Xᵀ (X Xᵀ + λI)⁻¹`, computed by a Cholesky solve of the
//! symmetric system `(X Xᵀ + λI) W_outᵀ = X Dᵀ`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted Cholesky pivot, relative to the largest diagonal entry
/// of the system. Below this the system is treated as rank-deficient.
const PIVOT_TOL: f64 = 1e-12;

const MODEL_HEADER: &str = "wout v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// `N × T` states, one column per time step.
    pub x: DMatrix<f64>,
    /// `N_out × T` targets.
    pub d: DMatrix<f64>,
}

impl TrainingBatch {
    pub fn new(x: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != d.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} state columns vs {} target columns",
                x.ncols(),
                d.ncols()
            )));
        }
        if x.iter().chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("training batch has non-finite entries".into()));
        }
        Ok(TrainingBatch { x, d })
    }
}

/// How the ridge parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum Ridge {
    /// `λ` used as given.
    Absolute(f64),
    /// `λ = factor · trace(X Xᵀ) / N`.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

impl Ridge {
    pub fn resolve(&self, gram: &DMatrix<f64>) -> f64 {
        match *self {
            Ridge::Absolute(l) => l,
            Ridge::Relative(f) => {
                let n = gram.nrows().max(1) as f64;
                f * gram.trace() / n
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    /// `N_out × N` (or `N_out × (N + 1)` with the bias column last).
    pub w_out: DMatrix<f64>,
    pub ridge_lambda: f64,
    pub augment_bias: bool,
}

fn with_bias(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone().insert_row(x.nrows(), 1.0);
    out.row_mut(x.nrows()).fill(1.0);
    out
}

/// Fits the readout. Rows of `X` are features, columns are time steps.
pub fn fit(batch: &TrainingBatch, ridge: Ridge, augment_bias: bool) -> Result<ReadoutModel> {
    let x = if augment_bias { with_bias(&batch.x) } else { batch.x.clone() };
    let (n, t) = (x.nrows(), x.ncols());
    if t < n {
        log::warn!("fitting {n} features on only {t} samples; the system is underdetermined without ridge");
    }
    let gram = &x * x.transpose();
    let lambda = ridge.resolve(&gram);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("ridge lambda {lambda} must be >= 0")));
    }
    let rhs = &x * batch.d.transpose();
    let w_t = solve_spd(gram, lambda, rhs)?;
    Ok(ReadoutModel {
        w_out: w_t.transpose(),
        ridge_lambda: lambda,
        augment_bias,
    })
}

/// Solves `(A + λI) Z = B` for symmetric positive (semi)definite `A`.
fn solve_spd(mut a: DMatrix<f64>, lambda: f64, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let scale = (0..n).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    if n == 0 {
        return Ok(b);
    }
    if scale <= 0.0 {
        return Err(Error::SingularSystem("X Xᵀ + λI is zero".into()));
    }
    let chol = Cholesky::new(a).ok_or_else(|| Error::SingularSystem("X Xᵀ + λI is not positive definite".into()))?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= PIVOT_TOL * scale {
        return Err(Error::SingularSystem(format!(
            "X Xᵀ + λI is rank-deficient (pivot ratio {:.3e})",
            min_pivot / scale
        )));
    }
    Ok(chol.solve(&b))
}

impl ReadoutModel {
    pub fn outputs(&self) -> usize {
        self.w_out.nrows()
    }

    /// Number of state features expected by [`predict`].
    pub fn inputs(&self) -> usize {
        self.w_out.ncols() - self.augment_bias as usize
    }

    /// `y = W_out · [x; 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, model expects {}",
                x.len(),
                self.inputs()
            )));
        }
        let mut y = DVector::zeros(self.outputs());
        for (j, col) in self.w_out.column_iter().enumerate() {
            let xj = if j < x.len() { x[j] } else { 1.0 };
            y.axpy(xj, &col, 1.0);
        }
        Ok(y)
    }

    /// Predictions for every column of an `N × T` state matrix.
    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.inputs() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} rows, model expects {}",
                x.nrows(),
                self.inputs()
            )));
        }
        if self.augment_bias {
            let n = self.inputs();
            let w = self.w_out.columns(0, n);
            let bias = self.w_out.column(n);
            let mut y = w * x;
            for mut col in y.column_iter_mut() {
                col += bias;
            }
            Ok(y)
        } else {
            Ok(&self.w_out * x)
        }
    }

    /// Text form: header `wout v1 N_out N lambda bias`, then one row per output.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MODEL_HEADER} {} {} {} {}\n",
            self.outputs(),
            self.inputs(),
            self.ridge_lambda,
            self.augment_bias as u8
        );
        for row in self.w_out.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::malformed(origin, reason);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty model file".into()))?;
        let rest = header
            .strip_prefix(MODEL_HEADER)
            .ok_or_else(|| bad(format!("missing `{MODEL_HEADER}` header")))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("header needs N_out N lambda bias".into()));
        }
        let n_out: usize = fields[0].parse().map_err(|_| bad("bad N_out".into()))?;
        let n: usize = fields[1].parse().map_err(|_| bad("bad N".into()))?;
        let lambda: f64 = fields[2].parse().map_err(|_| bad("bad lambda".into()))?;
        let augment_bias = match fields[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("bias flag must be 0 or 1".into())),
        };
        let cols = n + augment_bias as usize;
        let mut data = Vec::with_capacity(n_out * cols);
        for r in 0..n_out {
            let line = lines.next().ok_or_else(|| bad(format!("missing row {r}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("row {r}: bad number {t:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(bad(format!("row {r}: expected {cols} values, got {}", row.len())));
            }
            data.extend(row);
        }
        if lines.next().is_some() {
            return Err(bad("trailing data".into()));
        }
        let w_out = DMatrix::from_row_slice(n_out, cols, &data);
        if w_out.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite weight".into()));
        }
        Ok(ReadoutModel {
            w_out,
            ridge_lambda: lambda,
            augment_bias,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

/// `E_LR = ½ Σ_n ‖d(n) − W x(n)‖²`.
pub fn squared_error(w: &DMatrix<f64>, batch: &TrainingBatch) -> f64 {
    0.5 * (&batch.d - w * &batch.x).norm_squared()
}

/// Analytic gradient of [`squared_error`]: `−(D − W X) Xᵀ`.
pub fn squared_error_gradient(w: &DMatrix<f64>, batch: &TrainingBatch) -> DMatrix<f64> {
    -(&batch.d - w * &batch.x) * batch.x.transpose()
}
