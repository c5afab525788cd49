//! Block-sparse (3×3 blocks) symmetric matrices over mesh vertices.

use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    /// Column vertex of each block, sorted within a row.
    pub cols: Vec<usize>,
}

impl BlockPattern {
    /// Pattern containing the diagonal plus every listed vertex pair (both orders).
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (a, b) in pairs {
            rows[a].push(b);
            rows[b].push(a);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols }
    }

    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[range.clone()].binary_search(&col).ok().map(|k| range.start + k)
    }

    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }
}

#[derive(Clone, Debug)]
pub struct BlockMatrix {
    pub pattern: Arc<BlockPattern>,
    /// Row-major 3×3 blocks.
    pub values: Vec<[f64; 9]>,
}

impl BlockMatrix {
    pub fn zeros(pattern: Arc<BlockPattern>) -> Self {
        let values = vec![[0.0; 9]; pattern.nnz_blocks()];
        Self { pattern, values }
    }

    pub fn dim(&self) -> usize {
        3 * self.pattern.n
    }

    /// `y = A x` on flat 3n vectors.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for i in 0..p.n {
            let mut acc = [0.0; 3];
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                let b = &self.values[k];
                let xj = &x[3 * j..3 * j + 3];
                for r in 0..3 {
                    acc[r] += b[3 * r] * xj[0] + b[3 * r + 1] * xj[1] + b[3 * r + 2] * xj[2];
                }
            }
            y[3 * i..3 * i + 3].copy_from_slice(&acc);
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let p = &self.pattern;
        let mut d = vec![0.0; 3 * p.n];
        for i in 0..p.n {
            if let Some(k) = p.slot(i, i) {
                for r in 0..3 {
                    d[3 * i + r] = self.values[k][4 * r];
                }
            }
        }
        d
    }

    /// Row-major dense copy (`3n × 3n`).
    pub fn to_dense(&self) -> Vec<f64> {
        let p = &self.pattern;
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        for i in 0..p.n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                for r in 0..3 {
                    for c in 0..3 {
                        out[(3 * i + r) * n + 3 * j + c] = self.values[k][3 * r + c];
                    }
                }
            }
        }
        out
    }
}
