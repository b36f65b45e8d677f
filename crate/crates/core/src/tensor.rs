//! Fixed-size vectors and matrices for problems in one or two dimensions.
//!
//! Everything is stored as a 2-vector or 2x2 matrix; in one dimension only the
//! leading entry is meaningful and the rest stay zero.

pub type Point = [f64; 2];
pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const ZERO: Mat2 = [[0.0; 2]; 2];

pub fn identity(dim: usize) -> Mat2 {
    scaled_identity(dim, 1.0)
}

pub fn scaled_identity(dim: usize, s: f64) -> Mat2 {
    let mut m = ZERO;
    for (i, row) in m.iter_mut().enumerate().take(dim) {
        row[i] = s;
    }
    m
}

pub fn scale(m: &Mat2, s: f64) -> Mat2 {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

pub fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    add(a, &scale(b, -1.0))
}

pub fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn mat_vec(m: &Mat2, v: &Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

pub fn dot(a: &Vec2, b: &Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(v: &Vec2) -> f64 {
    dot(v, v).sqrt()
}

pub fn quad_form(m: &Mat2, v: &Vec2) -> f64 {
    dot(v, &mat_vec(m, v))
}

pub fn is_finite(m: &Mat2) -> bool {
    m.iter().flatten().all(|v| v.is_finite())
}

pub fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &Mat2) -> Mat2 {
    scale(&add(m, &transpose(m)), 0.5)
}

/// Eigenvalues of the symmetric leading `dim x dim` block, ascending.
pub fn sym_eigenvalues(m: &Mat2, dim: usize) -> Vec2 {
    if dim == 1 {
        return [m[0][0], m[0][0]];
    }
    let tr = 0.5 * (m[0][0] + m[1][1]);
    let d = 0.5 * (m[0][0] - m[1][1]);
    let off = 0.5 * (m[0][1] + m[1][0]);
    let r = d.hypot(off);
    [tr - r, tr + r]
}

/// Inverse of the leading `dim x dim` block.
pub fn inverse(m: &Mat2, dim: usize) -> Option<Mat2> {
    if dim == 1 {
        if m[0][0] == 0.0 {
            return None;
        }
        return Some([[1.0 / m[0][0], 0.0], [0.0, 0.0]]);
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        assert_eq!(sym_eigenvalues(&[[3.0, 0.0], [0.0, 1.0]], 2), [1.0, 3.0]);
        let e = sym_eigenvalues(&[[2.0, 1.0], [1.0, 2.0]], 2);
        assert!((e[0] - 1.0).abs() < 1e-15 && (e[1] - 3.0).abs() < 1e-15);
        assert_eq!(sym_eigenvalues(&[[5.0, 0.0], [0.0, 0.0]], 1), [5.0, 5.0]);
    }

    #[test]
    fn inverse_round_trip() {
        let m = [[4.0, 1.0], [1.0, 3.0]];
        let inv = inverse(&m, 2).unwrap();
        let p = [
            [
                m[0][0] * inv[0][0] + m[0][1] * inv[1][0],
                m[0][0] * inv[0][1] + m[0][1] * inv[1][1],
            ],
            [
                m[1][0] * inv[0][0] + m[1][1] * inv[1][0],
                m[1][0] * inv[0][1] + m[1][1] * inv[1][1],
            ],
        ];
        assert!(max_abs_diff(&p, &identity(2)) < 1e-15);
        assert!(inverse(&ZERO, 1).is_none());
    }
}
