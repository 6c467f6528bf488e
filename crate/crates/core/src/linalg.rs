//! Dense double-precision kernels: matrices, order-3 operating tensors,
//! bilinear forms and the activations used by the network.
//!
//! Every loop accumulates in ascending index order so results are
//! bit-reproducible across runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Mat::from_vec", rows * cols, data.len()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
}

/// Order-3 tensor of `m` stacked `d x d` slices (the `d x m x d` operating
/// tensor). Slice `k` occupies `data[k*d*d .. (k+1)*d*d]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    d: usize,
    m: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize, m: usize) -> Self {
        Tensor3 {
            d,
            m,
            data: vec![0.0; m * d * d],
        }
    }

    pub fn from_vec(d: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * d * d {
            return Err(Error::dim("Tensor3::from_vec", m * d * d, data.len()));
        }
        Ok(Tensor3 { d, m, data })
    }

    /// Builds a tensor from `m` square slices of equal size.
    pub fn from_slices(slices: &[Mat]) -> Result<Self> {
        let d = slices.first().map_or(0, Mat::rows);
        let mut data = Vec::with_capacity(slices.len() * d * d);
        for s in slices {
            if s.rows() != d || s.cols() != d {
                return Err(Error::dim(
                    "Tensor3::from_slices",
                    format!("{d}x{d}"),
                    format!("{}x{}", s.rows(), s.cols()),
                ));
            }
            data.extend_from_slice(s.as_slice());
        }
        Ok(Tensor3 {
            d,
            m: slices.len(),
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn slices(&self) -> usize {
        self.m
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.data[k * dd..(k + 1) * dd]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let dd = self.d * self.d;
        &mut self.data[k * dd..(k + 1) * dd]
    }

    pub fn slice_mat(&self, k: usize) -> Mat {
        Mat {
            rows: self.d,
            cols: self.d,
            data: self.slice(k).to_vec(),
        }
    }

    /// `out[k] = self[k]^T` for every slice.
    pub fn transpose_slices(&self) -> Tensor3 {
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..self.m {
            data.extend_from_slice(self.slice_mat(k).transpose().as_slice());
        }
        Tensor3 {
            d: self.d,
            m: self.m,
            data,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// `out[k] = v^T T[k] u` for every slice `k`.
pub fn bilinear(v: &[f64], t: &Tensor3, u: &[f64]) -> Result<Vec<f64>> {
    check_bilinear("bilinear", v, t, u)?;
    let mut out = vec![0.0; t.slices()];
    bilinear_into(v, t, u, &mut out);
    Ok(out)
}

pub(crate) fn check_bilinear(op: &'static str, v: &[f64], t: &Tensor3, u: &[f64]) -> Result<()> {
    if v.len() != t.dim() || u.len() != t.dim() {
        return Err(Error::dim(
            op,
            format!("vectors of length {}", t.dim()),
            format!("lengths {} and {}", v.len(), u.len()),
        ));
    }
    Ok(())
}

/// Unchecked kernel behind [`bilinear`]; `out` must have length `m`.
pub(crate) fn bilinear_into(v: &[f64], t: &Tensor3, u: &[f64], out: &mut [f64]) {
    let d = t.dim();
    for (k, o) in out.iter_mut().enumerate() {
        let s = t.slice(k);
        let mut acc = 0.0;
        for a in 0..d {
            let row = &s[a * d..(a + 1) * d];
            acc += v[a] * dot(row, u);
        }
        *o = acc;
    }
}

/// Adjoint of `bilinear` for upstream gradient `g` (length `m`).
///
/// Accumulates `dv += sum_k g_k T[k] u`, `du += sum_k g_k T[k]^T v` and
/// `dt[k] += g_k v u^T`.
pub(crate) fn bilinear_backward(
    v: &[f64],
    t: &Tensor3,
    u: &[f64],
    g: &[f64],
    dv: &mut [f64],
    du: &mut [f64],
    dt: &mut Tensor3,
) {
    let d = t.dim();
    for (k, &gk) in g.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        let s = t.slice(k);
        for a in 0..d {
            let row = &s[a * d..(a + 1) * d];
            dv[a] += gk * dot(row, u);
            let gva = gk * v[a];
            for b in 0..d {
                du[b] += gva * row[b];
            }
        }
        let ds = dt.slice_mut(k);
        for a in 0..d {
            let gva = gk * v[a];
            let row = &mut ds[a * d..(a + 1) * d];
            for b in 0..d {
                row[b] += gva * u[b];
            }
        }
    }
}

/// Max-shifted softmax; total on finite input.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&xi| (xi - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Derivative of [`relu`]; the kink at 0 takes the value 0.
pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Logistic function in branch form so `exp` never overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `A x`.
pub fn matvec(a: &Mat, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.cols {
        return Err(Error::dim("matvec", a.cols, x.len()));
    }
    Ok((0..a.rows).map(|r| dot(a.row(r), x)).collect())
}

/// `A^T y`, computed without materializing the transpose.
pub fn matvec_transpose(a: &Mat, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != a.rows {
        return Err(Error::dim("matvec_transpose", a.rows, y.len()));
    }
    let mut out = vec![0.0; a.cols];
    for (r, &yr) in y.iter().enumerate() {
        let row = a.row(r);
        for c in 0..a.cols {
            out[c] += yr * row[c];
        }
    }
    Ok(out)
}

/// `A += alpha * x y^T`.
pub fn outer_accumulate(a: &mut Mat, alpha: f64, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != a.rows || y.len() != a.cols {
        return Err(Error::dim(
            "outer_accumulate",
            format!("{}x{}", a.rows, a.cols),
            format!("{}x{}", x.len(), y.len()),
        ));
    }
    for (r, &xr) in x.iter().enumerate() {
        let s = alpha * xr;
        let row = a.row_mut(r);
        for c in 0..row.len() {
            row[c] += s * y[c];
        }
    }
    Ok(())
}
