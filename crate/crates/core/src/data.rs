use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inputs `x` (n x D), responses `y` and optional gradients (n x D).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub grad: Option<DMatrix<f64>>,
}

impl TrainingSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, grad: Option<DMatrix<f64>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidParameter("empty training inputs".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "training responses",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if let Some(g) = &grad {
            if g.nrows() != x.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "training gradient rows",
                    expected: x.nrows(),
                    found: g.nrows(),
                });
            }
            if g.ncols() != x.ncols() {
                return Err(Error::DimensionMismatch {
                    context: "training gradient columns",
                    expected: x.ncols(),
                    found: g.ncols(),
                });
            }
        }
        let finite = x.iter().chain(y.iter()).chain(grad.iter().flat_map(|g| g.iter())).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("training data contains non-finite values".into()));
        }
        Ok(TrainingSet { x, y, grad })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn y_mean(&self) -> f64 {
        self.y.mean()
    }

    /// `[y - center; dy/dx1; ...; dy/dxD]`, or just `y - center`.
    pub fn stacked(&self, center: f64, with_grad: bool) -> Result<DVector<f64>> {
        let n = self.n();
        if !with_grad {
            return Ok(self.y.add_scalar(-center));
        }
        let g = self.grad.as_ref().ok_or_else(|| {
            Error::InvalidParameter("gradient-enhanced model requires training gradients".into())
        })?;
        let mut v = DVector::zeros(n * (1 + self.dim()));
        v.rows_mut(0, n).copy_from(&self.y.add_scalar(-center));
        for d in 0..self.dim() {
            v.rows_mut((d + 1) * n, n).copy_from(&g.column(d));
        }
        Ok(v)
    }
}
