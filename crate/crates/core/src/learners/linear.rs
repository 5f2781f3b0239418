use super::linalg::{cholesky_solve, rank_one_upper, symmetrize};
use super::{DesignEncoder, Features};
use crate::error::Result;

/// Minimises `mean((y - X b)^2) + ridge * |b|^2` over the encoded design.
pub(super) fn fit(encoder: &DesignEncoder, x: &Features, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let p = encoder.width();
    let n = y.len() as f64;
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for (i, &t) in y.iter().enumerate() {
        encoder.encode_row(x.row(i), &mut row);
        rank_one_upper(&mut xtx, &row, 1.0 / n);
        for (acc, r) in xty.iter_mut().zip(&row) {
            *acc += r * t / n;
        }
    }
    symmetrize(&mut xtx, p);
    let max_diag = (0..p).map(|j| xtx[j * p + j]).fold(0.0, f64::max);
    for j in 0..p {
        xtx[j * p + j] += ridge;
    }
    let min_pivot = if ridge > 0.0 { 0.0 } else { 1e-10 * max_diag.max(1.0) };
    cholesky_solve(&xtx, &xty, p, min_pivot)
}

#[cfg(test)]
mod tests {
    use crate::error::Error;
    use crate::learners::{fit, predict, Features, LearnerSpec, Loss};

    #[test]
    fn exact_line_recovered() {
        // y = 2x + 1; the normal equations give intercept 1 and slope 2.
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 0.5 - 1.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let x = Features::from_column("x", xs);
        let m = fit(&LearnerSpec::Linear { ridge: 0.0 }, Loss::SquaredError, &x, &y).unwrap();
        let c = m.coefficients().unwrap();
        assert!((c[0] - 1.0).abs() < 1e-10 && (c[1] - 2.0).abs() < 1e-10, "{c:?}");
        for (p, t) in predict(&m, &x).unwrap().iter().zip(&y) {
            assert!((p - t).abs() <= 1e-10);
        }
    }

    #[test]
    fn collinear_without_ridge_is_rank_deficient() {
        let x = Features::from_rows(&["a", "b"], &[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
        let err = fit(&LearnerSpec::Linear { ridge: 0.0 }, Loss::SquaredError, &x, &[1.0, 2.0, 3.0])
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficient));
        assert!(err.to_string().contains("add ridge"));
        // The default ridge rescues it.
        let m = fit(&LearnerSpec::linear(), Loss::SquaredError, &x, &[1.0, 2.0, 3.0]).unwrap();
        let p = predict(&m, &x).unwrap();
        assert!((p[2] - 3.0).abs() < 1e-5);
    }
}
