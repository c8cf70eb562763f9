use nalgebra::{DMatrix, DVector};

use super::EvalError;

/// Ridge-regularized linear map from features to targets, with an
/// unpenalized intercept (features and targets are centered before the fit).
#[derive(Clone, Debug)]
pub struct LinearProbe {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    weights: DMatrix<f64>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, EvalError> {
    let width = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || width == 0 {
        return Err(EvalError::InvalidInput(format!("empty {what}")));
    }
    if rows.iter().any(|r| r.len() != width) {
        return Err(EvalError::InvalidInput(format!("ragged {what} rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), width, rows.iter().flatten().copied()))
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()))
}

fn center(m: &mut DMatrix<f64>, mean: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        row -= mean.transpose();
    }
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], ridge: f64) -> Result<Self, EvalError> {
        if x.len() != y.len() {
            return Err(EvalError::InvalidInput(format!("{} feature rows but {} target rows", x.len(), y.len())));
        }
        if !(ridge > 0.0) {
            return Err(EvalError::InvalidInput(format!("ridge {ridge} must be positive")));
        }
        let mut xm = to_matrix(x, "features")?;
        let mut ym = to_matrix(y, "targets")?;
        let (x_mean, y_mean) = (column_means(&xm), column_means(&ym));
        center(&mut xm, &x_mean);
        center(&mut ym, &y_mean);
        let mut gram = xm.transpose() * &xm;
        for i in 0..gram.nrows() {
            gram[(i, i)] += ridge;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| EvalError::Probe("regularized Gram matrix is not positive definite".into()))?;
        let weights = chol.solve(&(xm.transpose() * ym));
        Ok(Self { x_mean, y_mean, weights })
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EvalError> {
        let mut xm = to_matrix(x, "features")?;
        if xm.ncols() != self.x_mean.len() {
            return Err(EvalError::InvalidInput(format!(
                "probe expects {} features, got {}",
                self.x_mean.len(),
                xm.ncols()
            )));
        }
        center(&mut xm, &self.x_mean);
        let mut out = xm * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.y_mean.transpose();
        }
        Ok(out.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Fits one-hot targets for `labels` and returns the probe plus the
    /// sorted class list its outputs follow.
    pub fn fit_classifier(x: &[Vec<f64>], labels: &[String], ridge: f64) -> Result<(Self, Vec<String>), EvalError> {
        let mut classes = labels.to_vec();
        classes.sort();
        classes.dedup();
        let y: Vec<Vec<f64>> = labels
            .iter()
            .map(|l| classes.iter().map(|c| if c == l { 1.0 } else { 0.0 }).collect())
            .collect();
        Ok((Self::fit(x, &y, ridge)?, classes))
    }

    /// Fraction of rows whose highest output is the true class.
    pub fn accuracy(&self, classes: &[String], x: &[Vec<f64>], labels: &[String]) -> Result<f64, EvalError> {
        let pred = self.predict(x)?;
        let hits = pred
            .iter()
            .zip(labels)
            .filter(|(p, l)| {
                let best = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i);
                best.is_some_and(|i| classes[i] == **l)
            })
            .count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

/// Coefficient of determination pooled over all target columns:
/// `1 - SSE / SST`, with SST taken around the per-column means of `truth`.
pub fn r_squared(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64, EvalError> {
    let t = to_matrix(truth, "targets")?;
    let p = to_matrix(pred, "predictions")?;
    if p.shape() != t.shape() {
        return Err(EvalError::InvalidInput("prediction and target shapes differ".into()));
    }
    let mean = column_means(&t);
    let mut sse = 0.0;
    let mut sst = 0.0;
    for r in 0..t.nrows() {
        for c in 0..t.ncols() {
            sse += (p[(r, c)] - t[(r, c)]).powi(2);
            sst += (t[(r, c)] - mean[c]).powi(2);
        }
    }
    if sst == 0.0 {
        return Err(EvalError::InvalidInput("targets have zero variance".into()));
    }
    Ok(1.0 - sse / sst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_an_exact_affine_map() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![2.0 * r[0] - r[1] + 3.0]).collect();
        let p = LinearProbe::fit(&x, &y, 1e-9).unwrap();
        let r2 = r_squared(&p.predict(&x).unwrap(), &y).unwrap();
        assert!((r2 - 1.0).abs() < 1e-9, "{r2}");
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let y = vec![vec![1.0], vec![2.0], vec![3.0]];
        let pred = vec![vec![2.0]; 3];
        assert_eq!(r_squared(&pred, &y).unwrap(), 0.0);
    }

    #[test]
    fn classifier_separates_linearly_separable_classes() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 3) as f64 * 5.0 + (i as f64) * 0.01]).collect();
        let labels: Vec<String> = (0..12).map(|i| format!("s{}", i % 3)).collect();
        let (p, classes) = LinearProbe::fit_classifier(&x, &labels, 1e-6).unwrap();
        // One feature cannot carve three one-vs-rest regions; two of three
        // classes sit at the extremes and stay recoverable.
        let acc = p.accuracy(&classes, &x, &labels).unwrap();
        assert!(acc >= 2.0 / 3.0 - 1e-12, "{acc}");
    }
}
