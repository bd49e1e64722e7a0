//! Fixed-size 3×3 helpers. Every matrix in the model is indexed by service
//! state, so nothing larger is ever needed.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO: Mat3 = [[0.0; 3]; 3];

pub fn identity() -> Mat3 {
    diag([1.0; 3])
}

pub fn diag(d: Vec3) -> Mat3 {
    let mut m = ZERO;
    for i in 0..3 {
        m[i][i] = d[i];
    }
    m
}

pub fn add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = *a;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += b[i][j];
        }
    }
    m
}

pub fn scale(a: &Mat3, s: f64) -> Mat3 {
    a.map(|row| row.map(|x| x * s))
}

pub fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = ZERO;
    for i in 0..3 {
        for k in 0..3 {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..3 {
                m[i][j] += aik * b[k][j];
            }
        }
    }
    m
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut m = ZERO;
    for i in 0..3 {
        for j in 0..3 {
            m[j][i] = a[i][j];
        }
    }
    m
}

/// `A x` for a column vector `x`.
pub fn mat_vec(a: &Mat3, x: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2])
}

/// `x A` for a row vector `x`.
pub fn vec_mat(x: &Vec3, a: &Mat3) -> Vec3 {
    [0, 1, 2].map(|j| x[0] * a[0][j] + x[1] * a[1][j] + x[2] * a[2][j])
}

pub fn dot(x: &Vec3, y: &Vec3) -> f64 {
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot vanishes relative to the matrix scale.
pub fn solve(a: &Mat3, b: &Vec3) -> Option<Vec3> {
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let mut m = *a;
    let mut rhs = *b;
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col].abs() <= scale * 1e-14 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let factor = m[row][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..3 {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

pub fn inverse(a: &Mat3) -> Option<Mat3> {
    let cols = [
        solve(a, &[1.0, 0.0, 0.0])?,
        solve(a, &[0.0, 1.0, 0.0])?,
        solve(a, &[0.0, 0.0, 1.0])?,
    ];
    Some(transpose(&cols))
}
