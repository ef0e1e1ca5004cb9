//! Least squares by Householder QR.
//!
//! Columns are processed strictly in order without pivoting. A column whose
//! remaining norm after projecting out the columns already accepted falls
//! below `RANK_TOLERANCE` times its original norm is dropped, so in a
//! collinear set the later columns are the ones removed.

/// Relative residual norm under which a column counts as collinear.
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// One entry per input column, `None` where the column was dropped.
    pub coefficients: Vec<Option<f64>>,
    pub dropped: Vec<usize>,
    pub rank: usize,
    pub rss: f64,
}

/// Solve `min ||y - X b||` for a column-major `n x p` matrix.
pub fn least_squares(data: &[f64], n: usize, p: usize, y: &[f64]) -> LeastSquares {
    assert_eq!(data.len(), n * p);
    assert_eq!(y.len(), n);
    let mut a = data.to_vec();
    let mut qty = y.to_vec();
    let col_norms: Vec<f64> = (0..p).map(|j| norm(&a[j * n..(j + 1) * n])).collect();

    let mut kept: Vec<usize> = Vec::with_capacity(p.min(n));
    let mut dropped = Vec::new();
    // R stored as (column index, values of rows 0..=k)
    let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(p.min(n));
    let mut k = 0;
    for j in 0..p {
        let col = &a[j * n..(j + 1) * n];
        let tail = norm(&col[k..]);
        if k >= n || col_norms[j] == 0.0 || tail <= RANK_TOLERANCE * col_norms[j] {
            dropped.push(j);
            continue;
        }
        // Householder vector v with v[0] = 1 implicit scaling, reflect col[k..] onto e_k.
        let alpha = if col[k] > 0.0 { -tail } else { tail };
        let mut v: Vec<f64> = col[k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for jj in j + 1..p {
                let c = &mut a[jj * n + k..(jj + 1) * n];
                reflect(&v, vnorm2, c);
            }
            reflect(&v, vnorm2, &mut qty[k..]);
        }
        let mut rc = a[j * n..j * n + k].to_vec();
        rc.push(alpha);
        r_cols.push(rc);
        kept.push(j);
        k += 1;
    }

    let rank = kept.len();
    let mut coef_kept = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = qty[i];
        for (c, coef) in coef_kept.iter().enumerate().skip(i + 1) {
            s -= r_cols[c][i] * coef;
        }
        coef_kept[i] = s / r_cols[i][i];
    }
    let rss: f64 = qty[rank..].iter().map(|x| x * x).sum();

    let mut coefficients = vec![None; p];
    for (idx, &j) in kept.iter().enumerate() {
        coefficients[j] = Some(coef_kept[idx]);
    }
    LeastSquares {
        coefficients,
        dropped,
        rank,
        rss,
    }
}

/// Numerical rank with the same in-order column acceptance.
pub fn rank(data: &[f64], n: usize, p: usize) -> (usize, Vec<usize>) {
    let ls = least_squares(data, n, p, &vec![0.0; n]);
    (ls.rank, ls.dropped)
}

fn reflect(v: &[f64], vnorm2: f64, c: &mut [f64]) {
    let dot: f64 = v.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (ci, vi) in c.iter_mut().zip(v) {
        *ci -= f * vi;
    }
}

fn norm(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}
