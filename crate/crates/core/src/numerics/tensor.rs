use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major f64 array with an ordered list of extents.
///
/// The dim order is part of the contract: a `[W, H, C]` feature map stores
/// `(x, y, c)` at offset `(x * H + y) * C + c`; a `[kh, kw, Cin, Cout]`
/// kernel stores `(u, v, ci, co)` at `((u * kw + v) * Cin + ci) * Cout + co`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{n} values for dims {dims:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Offset of `(x, y, c)` in a `[W, H, C]` tensor.
    #[inline]
    pub fn at3(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert_eq!(self.dims.len(), 3);
        (x * self.dims[1] + y) * self.dims[2] + c
    }

    #[inline]
    pub fn get3(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.at3(x, y, c)]
    }

    #[inline]
    pub fn set3(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.at3(x, y, c);
        self.data[i] = v;
    }

    /// Offset of `(u, v, ci, co)` in a `[kh, kw, Cin, Cout]` tensor.
    #[inline]
    pub fn at4(&self, u: usize, v: usize, ci: usize, co: usize) -> usize {
        debug_assert_eq!(self.dims.len(), 4);
        ((u * self.dims[1] + v) * self.dims[2] + ci) * self.dims[3] + co
    }

    #[inline]
    pub fn get4(&self, u: usize, v: usize, ci: usize, co: usize) -> f64 {
        self.data[self.at4(u, v, ci, co)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self += other`. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "Tensor::add_assign",
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context.to_string()));
        }
        Ok(())
    }

    /// Max absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major_over_dims() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.get3(0, 0, 0), 0.0);
        assert_eq!(t.get3(0, 0, 3), 3.0);
        assert_eq!(t.get3(0, 1, 0), 4.0);
        assert_eq!(t.get3(1, 0, 0), 12.0);
        assert_eq!(t.get3(1, 2, 3), 23.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn check_finite_catches_nan() {
        let t = Tensor::from_vec(vec![2], vec![1.0, f64::INFINITY]).unwrap();
        assert!(t.check_finite("test").is_err());
        assert!(Tensor::zeros(&[2]).check_finite("test").is_ok());
    }
}
