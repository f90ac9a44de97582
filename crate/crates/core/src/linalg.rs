//! Dense matrix helpers shared by the estimator, schedulers and certificate checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PlateError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for symmetry checks on user-supplied covariances.
pub const SYM_TOL: f64 = 1e-12;
/// Eigenvalues down to `-PSD_TOL * ||P||_F` are treated as round-off and clamped.
pub const PSD_TOL: f64 = 1e-10;

pub fn frobenius_distance(a: &Mat, b: &Mat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Squared Frobenius distance, skipping the square root for nearest-neighbour scans.
pub fn frobenius_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// tr(A·B) for square matrices of equal size, without forming the product.
pub fn trace_of_product(a: &Mat, b: &Mat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn is_symmetric(m: &Mat, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn min_eigenvalue(sym: &Mat) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(sym: &Mat) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Symmetrizes `p` and clamps eigenvalues in `[-PSD_TOL·||P||_F, 0)` to zero.
/// Anything more negative is reported as an error.
pub fn project_psd(mut p: Mat) -> Result<Mat> {
    symmetrize(&mut p);
    let norm = p.norm();
    if norm == 0.0 {
        return Ok(p);
    }
    let eig = SymmetricEigen::new(p.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return Ok(p);
    }
    if min < -PSD_TOL * norm {
        return Err(PlateError::NotPsd { min_eig: min, norm });
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut out = &eig.eigenvectors * Mat::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Clamps every eigenvalue to at least `floor`, returning a symmetric matrix.
pub fn floor_eigenvalues(mut p: Mat, floor: f64) -> Mat {
    symmetrize(&mut p);
    let eig = SymmetricEigen::new(p);
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let mut out = &eig.eigenvectors * Mat::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Matrix from nested row arrays, rejecting ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PlateError::Dimension("rows have different lengths".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Mat::from_row_slice(rows.len(), ncols, &flat))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Solves `X · S = rhs` for symmetric positive definite `S` via Cholesky.
/// Fails when `S` is not positive definite or its condition number exceeds `max_cond`.
pub fn right_solve_spd(rhs: &Mat, s: &Mat, max_cond: f64) -> Result<Mat> {
    let eig = SymmetricEigen::new(s.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v.abs());
    }
    if lo <= 0.0 || hi / lo > max_cond {
        let cond = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
        return Err(PlateError::SingularUpdate(cond));
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or(PlateError::SingularUpdate(f64::INFINITY))?;
    // X S = rhs  <=>  S X^T = rhs^T  (S symmetric)
    Ok(chol.solve(&rhs.transpose()).transpose())
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &Mat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &Mat) -> Mat {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let norm = one_norm(a);
    if norm == 0.0 {
        return id;
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Nodes and weights of the 8-point Gauss–Legendre rule on [-1, 1].
pub const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &Mat) -> Mat {
        // scaling + long Taylor series, independent of the Padé path
        let n = a.nrows();
        let s = 10;
        let a = a / 2f64.powi(s);
        let mut term = Mat::identity(n, n);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_of_nilpotent_is_exact() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 0.7, 0.0, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e, Mat::from_row_slice(2, 2, &[1.0, 0.7, 0.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn expm_matches_taylor_on_rotations_and_large_norms() {
        let a = Mat::from_row_slice(3, 3, &[0.1, -2.0, 0.3, 2.0, -0.4, 1.0, 0.0, 0.5, -3.0]);
        for scale in [0.01, 1.0, 5.0] {
            let m = &a * scale;
            let e = expm(&m);
            let t = taylor_expm(&m);
            assert!((&e - &t).norm() <= 1e-12 * t.norm(), "scale {scale}");
        }
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two_and_integrate_degree_15() {
        let s: f64 = GAUSS_LEGENDRE_8.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(s, 2.0, epsilon = 1e-14);
        let i: f64 = GAUSS_LEGENDRE_8.iter().map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(i, 2.0 / 15.0, epsilon = 1e-14);
    }

    #[test]
    fn project_psd_clamps_round_off_and_rejects_real_negativity() {
        let p = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-13]);
        let q = project_psd(p).unwrap();
        assert!(min_eigenvalue(&q) >= 0.0);
        let bad = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(project_psd(bad), Err(PlateError::NotPsd { .. })));
    }

    #[test]
    fn right_solve_rejects_ill_conditioned() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        let rhs = Mat::identity(2, 2);
        assert!(matches!(right_solve_spd(&rhs, &s, 1e12), Err(PlateError::SingularUpdate(_))));
        let s = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let x = right_solve_spd(&rhs, &s, 1e12).unwrap();
        assert_relative_eq!(&x * &s, rhs, epsilon = 1e-14);
    }

    #[test]
    fn trace_of_product_matches_dense() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Mat::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        assert_relative_eq!(trace_of_product(&a, &b), (&a * &b).trace(), epsilon = 1e-15);
    }
}
