//! Small dense and sparse kernels over row-major `Array2<f64>`.
//!
//! Each output row is produced by a fixed-order loop, so results do not
//! depend on the [`Execution`] mode.

use ndarray::Array2;

use crate::exec::{for_each_row, Execution};

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// `a · b`.
pub fn matmul(exec: Execution, a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, inner) = a.dim();
    let (inner_b, m) = b.dim();
    assert_eq!(inner, inner_b, "matmul inner dimensions");
    let (a_s, b_s) = (slice(a), slice(b));
    let mut out = vec![0.0; n * m];
    for_each_row(exec, &mut out, m, |i, row| {
        let a_row = &a_s[i * inner..(i + 1) * inner];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b_s[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    Array2::from_shape_vec((n, m), out).unwrap()
}

/// `aᵀ · b`, summing over rows of both inputs in ascending order.
pub fn matmul_tn(exec: Execution, a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, p_dim) = a.dim();
    let (n_b, m) = b.dim();
    assert_eq!(n, n_b, "matmul_tn row counts");
    let (a_s, b_s) = (slice(a), slice(b));
    let mut out = vec![0.0; p_dim * m];
    for_each_row(exec, &mut out, m, |p, row| {
        for i in 0..n {
            let av = a_s[i * p_dim + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b_s[i * m..(i + 1) * m];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    Array2::from_shape_vec((p_dim, m), out).unwrap()
}

/// `a · bᵀ`.
pub fn matmul_nt(exec: Execution, a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, inner) = a.dim();
    let (m, inner_b) = b.dim();
    assert_eq!(inner, inner_b, "matmul_nt inner dimensions");
    let (a_s, b_s) = (slice(a), slice(b));
    let mut out = vec![0.0; n * m];
    for_each_row(exec, &mut out, m, |i, row| {
        let a_row = &a_s[i * inner..(i + 1) * inner];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b_s[j * inner..(j + 1) * inner];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    Array2::from_shape_vec((n, m), out).unwrap()
}

/// Column sums, accumulated top to bottom.
pub fn column_sums(a: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; a.ncols()];
    for row in a.rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Adds `bias` to every row in place.
pub fn add_row_bias(a: &mut Array2<f64>, bias: &[f64]) {
    for mut row in a.rows_mut() {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Row-sparse |V|×|V| operator: row `i` holds `(column, weight)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseRows {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in rows {
            for (c, w) in row {
                assert!(c < n, "column {c} out of range for {n} nodes");
                cols.push(c);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        Self {
            n,
            offsets,
            cols,
            weights,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    /// Transposed operator; row `k` lists every `(i, w)` with `w` at `[i, k]`,
    /// in ascending `i`.
    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (k, w) in self.row(i) {
                rows[k].push((i, w));
            }
        }
        Self::from_rows(rows)
    }

    /// `self · x`.
    pub fn apply(&self, exec: Execution, x: &Array2<f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        assert_eq!(n, self.n, "sparse apply row count");
        let xs = slice(x);
        let mut out = vec![0.0; n * d];
        for_each_row(exec, &mut out, d, |i, row| {
            for (k, w) in self.row(i) {
                let src = &xs[k * d..(k + 1) * d];
                for (o, &v) in row.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        });
        Array2::from_shape_vec((n, d), out).unwrap()
    }
}
