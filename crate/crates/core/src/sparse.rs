//! Minimal CSR sparse matrix used by the assembled coarse solves, the BFBT
//! suboperator Z, and the test oracles. Deterministic construction: triplets
//! are bucketed per row, sorted by column, and duplicate entries summed.

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        y.fill(0.0);
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * x[r];
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let trips: Vec<_> = (0..self.n_rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, trips)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows.min(self.n_cols)];
        for r in 0..d.len() {
            for (c, v) in self.row(r) {
                if c == r {
                    d[r] = v;
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                dense[r][c] = v;
            }
        }
        dense
    }

    /// `self * diag(d) * self^T`, used for the BFBT suboperator Z.
    pub fn scaled_aat(&self, d: &[f64]) -> CsrMatrix {
        debug_assert_eq!(d.len(), self.n_cols);
        let at = self.transpose();
        let mut trips = Vec::new();
        let mut acc = vec![0.0; self.n_rows];
        let mut touched = Vec::new();
        for r in 0..self.n_rows {
            for (j, vrj) in self.row(r) {
                let s = vrj * d[j];
                for (r2, vr2j) in at.row(j) {
                    if acc[r2] == 0.0 && !touched.contains(&r2) {
                        touched.push(r2);
                    }
                    acc[r2] += s * vr2j;
                }
            }
            touched.sort_unstable();
            for &r2 in &touched {
                trips.push((r, r2, acc[r2]));
                acc[r2] = 0.0;
            }
            touched.clear();
        }
        CsrMatrix::from_triplets(self.n_rows, self.n_rows, trips)
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.n_rows)
            .map(|r| self.row_ptr[r + 1] - self.row_ptr[r])
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), vec![vec![3.0, 0.0], vec![-1.0, 0.0]]);
    }

    #[test]
    fn matvec_and_transpose_agree_with_dense() {
        let m = CsrMatrix::from_triplets(
            3,
            2,
            [(0, 0, 2.0), (0, 1, -1.0), (1, 1, 4.0), (2, 0, 1.0)],
        );
        let x = [1.0, 2.0];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        assert_eq!(y, [0.0, 8.0, 1.0]);
        let z = [1.0, 1.0, 1.0];
        let mut w = [0.0; 2];
        m.matvec_transpose(&z, &mut w);
        assert_eq!(w, [3.0, 3.0]);
    }

    #[test]
    fn scaled_aat_matches_dense_product() {
        let b = CsrMatrix::from_triplets(
            2,
            3,
            [(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0), (1, 2, 0.5)],
        );
        let d = [2.0, 3.0, 1.0];
        let z = b.scaled_aat(&d);
        // dense check
        let bd = b.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| bd[i][k] * d[k] * bd[j][k]).sum();
                let got = z.to_dense()[i][j];
                assert!((want - got).abs() < 1e-15);
            }
        }
    }
}
