use crate::error::{Error, Result};

/// Solves `A x = b` for symmetric positive definite `A` (row-major `p x p`)
/// by Cholesky factorisation. A pivot at or below `min_pivot` is reported as
/// rank deficiency.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], p: usize, min_pivot: f64) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), p * p);
    debug_assert_eq!(b.len(), p);
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        if !(d > min_pivot) || !d.is_finite() {
            return Err(Error::RankDeficient);
        }
        let d = d.sqrt();
        l[j * p + j] = d;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / d;
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Ok(x)
}

/// Adds `w * row row^T` to the upper triangle of `acc`.
#[inline]
pub(crate) fn rank_one_upper(acc: &mut [f64], row: &[f64], w: f64) {
    let p = row.len();
    for i in 0..p {
        let ri = w * row[i];
        if ri == 0.0 {
            continue;
        }
        let base = i * p;
        for j in i..p {
            acc[base + j] += ri * row[j];
        }
    }
}

/// Mirrors the upper triangle into the lower one.
pub(crate) fn symmetrize(acc: &mut [f64], p: usize) {
    for i in 0..p {
        for j in 0..i {
            acc[i * p + j] = acc[j * p + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // [[4, 2], [2, 3]] x = [2, 1] -> x = [0.5, 0]
        let x = cholesky_solve(&[4.0, 2.0, 2.0, 3.0], &[2.0, 1.0], 2, 0.0).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn singular_reported() {
        let err = cholesky_solve(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0], 2, 1e-12).unwrap_err();
        assert!(matches!(err, Error::RankDeficient));
    }
}
