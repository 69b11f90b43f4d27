//! Compressed sparse row matrices used as graph aggregation operators.

/// CSR matrix with a cached transpose for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}×{cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` entries of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        d
    }

    /// Applies the matrix to every sample of a `[batch, cols, ch]` buffer,
    /// producing `[batch, rows, ch]`.
    pub fn apply_batched(&self, x: &[f64], batch: usize, ch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.cols * ch);
        let mut y = vec![0.0; batch * self.rows * ch];
        for b in 0..batch {
            let xb = &x[b * self.cols * ch..(b + 1) * self.cols * ch];
            let yb = &mut y[b * self.rows * ch..(b + 1) * self.rows * ch];
            for r in 0..self.rows {
                let yr = &mut yb[r * ch..(r + 1) * ch];
                for (c, v) in self.row(r) {
                    let xr = &xb[c * ch..(c + 1) * ch];
                    for (o, &xi) in yr.iter_mut().zip(xr) {
                        *o += v * xi;
                    }
                }
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_sum_and_transpose_roundtrips() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (1, 0, 2.0), (0, 2, 0.5)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), vec![vec![0.0, 0.0, 1.5], vec![2.0, 0.0, 0.0]]);
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn batched_apply_matches_dense() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 3.0), (1, 0, -1.0), (1, 1, 2.0)]);
        let x = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let y = m.apply_batched(&x, 2, 2);
        assert_eq!(y, vec![6.0, 60.0, 3.0, 30.0, 12.0, 120.0, 5.0, 50.0]);
    }
}
