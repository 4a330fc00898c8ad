use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`. Vectors are `1 x n` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length does not match {rows}x{cols}");
        Tensor { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(rows.len(), cols, data)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// `self (m x k) * other (k x n)`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions differ");
        let (m, n) = (self.rows, other.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        out
    }

    /// Accumulates `grad (m x n) * other^T` into `self (m x k)`.
    pub(crate) fn add_matmul_nt(&mut self, grad: &Tensor, other: &Tensor) {
        for i in 0..grad.rows {
            let g = grad.row(i);
            let out = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (k, o) in out.iter_mut().enumerate() {
                *o += dot(g, other.row(k));
            }
        }
    }

    /// Accumulates `a^T (k x m) * grad (m x n)` into `self (k x n)`.
    pub(crate) fn add_matmul_tn(&mut self, a: &Tensor, grad: &Tensor) {
        let n = self.cols;
        for i in 0..a.rows {
            let g = grad.row(i);
            for (k, &av) in a.row(i).iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                axpy(av, g, &mut self.data[k * n..(k + 1) * n]);
            }
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]);
        assert_eq!(a.matmul(&b).data, vec![17.0, 39.0]);
    }

    #[test]
    fn transposed_products() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let g = Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]);
        let mut nt = Tensor::zeros(2, 3);
        nt.add_matmul_nt(&g, &Tensor::from_rows(&[vec![1.0, 2.0, 0.0], vec![1.0, 0.0, 3.0], vec![0.0, 0.0, 0.0]]));
        assert_eq!(nt.row(0), &[1.0, 7.0, 0.0]);
        let mut tn = Tensor::zeros(2, 3);
        tn.add_matmul_tn(&a, &g);
        assert_eq!(tn.row(0), &[1.0, 3.0, 5.0]);
    }
}
