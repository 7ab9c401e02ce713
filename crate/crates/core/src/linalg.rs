//! Small dense complex vector helpers and the zero-forcing solve.

use num_complex::Complex64;

/// `a^T b`, no conjugation.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// Relative size below which an orthogonalised column counts as dependent.
const RANK_TOL: f64 = 1e-10;

/// Right pseudo-inverse columns for a stack of channel rows.
///
/// Given rows `h_1..h_K` (each of length `M`, `K <= M`), returns unnormalised
/// columns `w_1..w_K` of `H^H (H H^H)^{-1}` so that `h_j^T w_k = delta_jk`.
/// Computed through a QR factorisation of `H^H` (modified Gram-Schmidt with
/// one reorthogonalisation pass) as `W = Q R^{-H}`, which keeps the nulling
/// error proportional to `cond(H)` rather than `cond(H)^2`.
///
/// Returns `None` when the rows are linearly dependent.
pub fn right_pseudo_inverse(rows: &[&[Complex64]]) -> Option<Vec<Vec<Complex64>>> {
    let k = rows.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let m = rows[0].len();
    if k > m || rows.iter().any(|r| r.len() != m) {
        return None;
    }
    let mut q: Vec<Vec<Complex64>> = Vec::with_capacity(k);
    // r[i][j] for i <= j, upper triangular
    let mut r = vec![vec![Complex64::new(0.0, 0.0); k]; k];
    for (j, row) in rows.iter().enumerate() {
        let mut v: Vec<Complex64> = row.iter().map(|c| c.conj()).collect();
        let original = norm(&v);
        if original == 0.0 {
            return None;
        }
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let coeff = inner(qi, &v);
                r[i][j] += coeff;
                for (vv, qq) in v.iter_mut().zip(qi) {
                    *vv -= coeff * qq;
                }
            }
        }
        let diag = norm(&v);
        if !(diag > RANK_TOL * original) {
            return None;
        }
        r[j][j] = Complex64::new(diag, 0.0);
        v.iter_mut().for_each(|c| *c /= diag);
        q.push(v);
    }

    // X = R^{-H}: solve R^H X = I column by column (R^H is lower triangular).
    let mut x = vec![vec![Complex64::new(0.0, 0.0); k]; k];
    for col in 0..k {
        for row in col..k {
            let mut acc = if row == col { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            for t in col..row {
                acc -= r[t][row].conj() * x[t][col];
            }
            x[row][col] = acc / r[row][row].conj();
        }
    }

    // W = Q X, column k of W mixes q_k..q_{K-1}.
    Some(
        (0..k)
            .map(|col| {
                let mut w = vec![Complex64::new(0.0, 0.0); m];
                for (t, qt) in q.iter().enumerate().skip(col) {
                    let coeff = x[t][col];
                    for (ww, qq) in w.iter_mut().zip(qt) {
                        *ww += coeff * qq;
                    }
                }
                w
            })
            .collect(),
    )
}
