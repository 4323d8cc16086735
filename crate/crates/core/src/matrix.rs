//! Row-major dense matrix used for hidden states and weights.

use crate::embedding::EmbeddingTable;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// Anything that hands out equally sized embedding rows.
pub trait Rows: Sync {
    fn num_rows(&self) -> usize;
    fn row_slice(&self, i: usize) -> &[f64];
}

impl Rows for Matrix {
    fn num_rows(&self) -> usize {
        self.rows
    }
    fn row_slice(&self, i: usize) -> &[f64] {
        self.row(i)
    }
}

impl Rows for EmbeddingTable {
    fn num_rows(&self) -> usize {
        self.rows()
    }
    fn row_slice(&self, i: usize) -> &[f64] {
        self.row(i)
    }
}

impl Rows for Vec<Vec<f64>> {
    fn num_rows(&self) -> usize {
        self.len()
    }
    fn row_slice(&self, i: usize) -> &[f64] {
        &self[i]
    }
}

/// Borrowed prefix of another row source.
pub struct Prefix<'a, R: Rows + ?Sized> {
    pub inner: &'a R,
    pub len: usize,
}

impl<R: Rows + ?Sized> Rows for Prefix<'_, R> {
    fn num_rows(&self) -> usize {
        self.len
    }
    fn row_slice(&self, i: usize) -> &[f64] {
        self.inner.row_slice(i)
    }
}
