//! Small dense linear algebra used by the LP kernel and the rank checks.
//! Everything here is sized for desk-scale problems (dimension <= ~16).

/// Rank of a set of row vectors by Gaussian elimination with partial
/// pivoting. `tol` is relative to the largest entry.
pub fn rank(rows: &[Vec<f64>], tol: f64) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let ncols = rows[0].len();
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut r = 0;
    for col in 0..ncols {
        let (mut best, mut best_val) = (None, tol * scale);
        for (i, row) in a.iter().enumerate().skip(r) {
            if row[col].abs() > best_val {
                best_val = row[col].abs();
                best = Some(i);
            }
        }
        let Some(p) = best else { continue };
        a.swap(r, p);
        for i in r + 1..a.len() {
            let f = a[i][col] / a[r][col];
            for j in col..ncols {
                a[i][j] -= f * a[r][j];
            }
        }
        r += 1;
        if r == a.len() {
            break;
        }
    }
    r
}

/// Solve `M x = rhs` for a (possibly overdetermined) system whose column
/// rank equals the number of unknowns. Returns `None` when the system is
/// rank deficient or inconsistent beyond `tol`.
pub fn solve_consistent(m: &[Vec<f64>], rhs: &[f64], tol: f64) -> Option<Vec<f64>> {
    let nrows = m.len();
    if nrows == 0 {
        return None;
    }
    let ncols = m[0].len();
    if ncols == 0 {
        // nothing to solve; consistent iff rhs ~ 0
        let ok = rhs.iter().all(|v| v.abs() <= tol);
        return ok.then(Vec::new);
    }
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .chain(rhs.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    // augmented elimination
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .zip(rhs)
        .map(|(row, &b)| {
            let mut r = row.clone();
            r.push(b);
            r
        })
        .collect();
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0;
    for col in 0..ncols {
        let (mut best, mut best_val) = (None, 1e-12 * scale);
        for (i, row) in a.iter().enumerate().skip(r) {
            if row[col].abs() > best_val {
                best_val = row[col].abs();
                best = Some(i);
            }
        }
        let Some(p) = best else { continue };
        a.swap(r, p);
        for i in 0..a.len() {
            if i == r {
                continue;
            }
            let f = a[i][col] / a[r][col];
            if f != 0.0 {
                for j in col..=ncols {
                    a[i][j] -= f * a[r][j];
                }
            }
        }
        pivots.push(col);
        r += 1;
        if r == nrows.min(ncols) {
            break;
        }
    }
    if pivots.len() < ncols {
        return None; // rank deficient
    }
    let mut x = vec![0.0; ncols];
    for (row, &col) in pivots.iter().enumerate() {
        x[col] = a[row][ncols] / a[row][col];
    }
    // consistency of all rows, including non-pivot ones
    for (row, &b) in m.iter().zip(rhs) {
        let res: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - b;
        if res.abs() > tol * scale.max(x.iter().fold(1.0_f64, |m, v| m.max(v.abs()))) {
            return None;
        }
    }
    Some(x)
}

/// Singular values of a set of row vectors by one-sided Jacobi
/// (Hestenes): rows are orthogonalized pairwise by plane rotations and the
/// final row norms are the singular values, descending. The one-sided form
/// avoids the Gram matrix, whose eigenvalues would square the conditioning
/// and turn roundoff into spurious singular values near sqrt(eps).
pub fn singular_values(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.len();
    if k == 0 {
        return Vec::new();
    }
    let ncols = rows[0].len();
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    for _sweep in 0..60 {
        let mut max_cos = 0.0_f64;
        for i in 0..k {
            for j in i + 1..k {
                let aii = dot(&a[i], &a[i]);
                let ajj = dot(&a[j], &a[j]);
                let aij = dot(&a[i], &a[j]);
                if aii <= 0.0 || ajj <= 0.0 || aij == 0.0 {
                    continue;
                }
                max_cos = max_cos.max(aij.abs() / (aii * ajj).sqrt());
                let tau = (ajj - aii) / (2.0 * aij);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for col in 0..ncols {
                    let (x, y) = (a[i][col], a[j][col]);
                    a[i][col] = c * x - s * y;
                    a[j][col] = s * x + c * y;
                }
            }
        }
        if max_cos < 1e-14 {
            break;
        }
    }
    let mut sv: Vec<f64> = a.iter().map(|r| dot(r, r).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Numerical rank from singular values with an absolute threshold.
pub fn rank_by_singular_values(rows: &[Vec<f64>], threshold: f64) -> usize {
    singular_values(rows).into_iter().filter(|s| *s > threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_dependent_rows() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 1.0]];
        assert_eq!(rank(&rows, 1e-10), 2);
        assert_eq!(rank(&rows[..2], 1e-10), 1);
        assert_eq!(rank(&[], 1e-10), 0);
    }

    #[test]
    fn solve_square_and_overdetermined() {
        let m = vec![vec![2.0, 1.0], vec![1.0, -1.0]];
        let x = solve_consistent(&m, &[5.0, 1.0], 1e-9).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        // consistent extra row is fine
        let m = vec![vec![2.0, 1.0], vec![1.0, -1.0], vec![3.0, 0.0]];
        let x = solve_consistent(&m, &[5.0, 1.0, 6.0], 1e-9).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        // inconsistent extra row is rejected
        assert!(solve_consistent(&m, &[5.0, 1.0, 7.0], 1e-9).is_none());
    }

    #[test]
    fn singular_values_of_known_matrix() {
        // rows (3,0), (0,4): singular values 4, 3
        let sv = singular_values(&[vec![3.0, 0.0], vec![0.0, 4.0]]);
        assert!((sv[0] - 4.0).abs() < 1e-10 && (sv[1] - 3.0).abs() < 1e-10);
        assert_eq!(rank_by_singular_values(&[vec![1.0, 1.0], vec![1.0, 1.0]], 1e-8), 1);
    }
}
