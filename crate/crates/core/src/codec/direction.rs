//! Attribute directions from a linear separator on latent codes.

use nalgebra::{DMatrix, DVector};

use super::latent::LatentCode;
use crate::error::{invalid, shape_err, Error, Result};

/// L2 penalty on the separator weights (the intercept is not penalized).
pub const DIRECTION_L2: f64 = 1e-2;

/// Unit normal of an L2-regularized logistic-regression separator fitted to
/// `(code, label)` pairs, oriented toward the `true` class.
///
/// The objective `mean(logloss) + λ/2·‖w‖²` is strictly convex in `w`, so
/// Newton's method converges to a unique optimum regardless of sample order.
pub fn attribute_direction(codes: &[LatentCode], labels: &[bool]) -> Result<Vec<f64>> {
    if codes.len() != labels.len() {
        return shape_err(format!("{} codes with {} labels", codes.len(), labels.len()));
    }
    let Some(first) = codes.first() else {
        return Err(Error::Empty("no latent codes".into()));
    };
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return invalid("attribute direction needs both classes");
    }
    let d = first.dim();
    if codes.iter().any(|c| c.dim() != d) {
        return shape_err("latent codes of mixed dimension");
    }
    let n = codes.len();
    let nf = n as f64;
    // Columns 0..d are the weights, column d the intercept.
    let mut theta = DVector::<f64>::zeros(d + 1);
    for _ in 0..100 {
        let mut grad = DVector::<f64>::zeros(d + 1);
        let mut hess = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut row = DVector::<f64>::zeros(d + 1);
        for (code, &label) in codes.iter().zip(labels) {
            row.rows_mut(0, d).copy_from_slice(code.as_slice());
            row[d] = 1.0;
            let eta = row.dot(&theta);
            let p = crate::diffcore::kernels::sigmoid(eta);
            let y = if label { 1.0 } else { 0.0 };
            grad.axpy((p - y) / nf, &row, 1.0);
            hess.ger(p * (1.0 - p) / nf, &row, &row, 1.0);
        }
        for j in 0..d {
            grad[j] += DIRECTION_L2 * theta[j];
            hess[(j, j)] += DIRECTION_L2;
        }
        // Keeps the intercept block invertible for degenerate codes.
        hess[(d, d)] += 1e-12;
        let chol = hess
            .cholesky()
            .ok_or_else(|| Error::NonFinite("singular Hessian in attribute direction".into()))?;
        let step = chol.solve(&grad);
        theta -= &step;
        if step.norm() <= 1e-12 * (1.0 + theta.norm()) {
            break;
        }
    }
    let w: Vec<f64> = theta.rows(0, d).iter().copied().collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::NonFinite("attribute direction has zero norm".into()));
    }
    Ok(w.into_iter().map(|v| v / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters() -> (Vec<LatentCode>, Vec<bool>) {
        let mut codes = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let jitter = 0.01 * ((i as f64) * 1.7).sin();
            let jitter2 = 0.01 * ((i as f64) * 0.3).cos();
            codes.push(LatentCode::new(vec![-1.0 + jitter, jitter2]));
            labels.push(false);
            codes.push(LatentCode::new(vec![1.0 - jitter2, jitter]));
            labels.push(true);
        }
        (codes, labels)
    }

    #[test]
    fn axis_separated_clusters() {
        let (codes, labels) = clusters();
        let v = attribute_direction(&codes, &labels).unwrap();
        assert!(v[0] >= 0.99, "{v:?}");
    }

    #[test]
    fn flipping_labels_negates_direction() {
        let (codes, labels) = clusters();
        let v = attribute_direction(&codes, &labels).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let w = attribute_direction(&codes, &flipped).unwrap();
        for (a, b) in v.iter().zip(&w) {
            assert!((a + b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let (codes, _) = clusters();
        assert!(attribute_direction(&codes, &vec![true; codes.len()]).is_err());
        assert!(attribute_direction(&[], &[]).is_err());
    }
}
