//! Dense f64 tensors and the forward/backward arithmetic the decoding model
//! is built from. No external numerical framework: every operation carries
//! its own analytic gradient, verified against central finite differences.

mod gradcheck;
mod ops;
mod prng;

pub use gradcheck::grad_check;
pub use ops::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, channel_mix_conv,
    channel_mix_conv_backward, conv2d_same, conv2d_same_backward, dropout_backward, dropout_eval,
    dropout_train, maxpool2d, maxpool2d_backward, softmax_rows, softmax_rows_backward, BatchNorm,
    BnCache, DropoutMask, MaxpoolCache,
};
pub(crate) use ops::{channel_mix_grads, channel_mix_into, conv2d_grads, conv2d_into, dot};
pub use prng::{derive_seed, stream, Prng};

use crate::error::{Error, Result};

/// Row-major dense array of f64 with an optional same-shape gradient buffer.
///
/// Tensors are immutable once produced by an operation; the only sanctioned
/// mutation is gradient accumulation during a single-owner backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::config("Tensor::new", "zero extent in shape"));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                "element count",
                expect,
                data.len(),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    /// Build from a flat-index generator.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(f).collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Reinterpret the same data under a new shape. Bit-exact: the data
    /// buffer is moved, never copied or transformed.
    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::dim(
                "reshape",
                "element count",
                self.data.len(),
                expect,
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    // -- gradient buffer ---------------------------------------------------

    /// Allocate the gradient buffer (zeroed) if absent.
    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.ensure_grad();
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// grad += scale * delta
    pub fn accumulate_grad(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        let g = self.grad_mut();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += scale * di;
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::config(
            op,
            format!("shape {:?} vs {:?}", a.shape, b.shape),
        ));
    }
    Ok(())
}

/// Elementwise sum. Gradient of both operands is the upstream gradient.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
        grad: None,
    })
}

/// Elementwise product (Hadamard).
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
        grad: None,
    })
}

/// d(a*b) -> (dy*b, dy*a)
pub fn mul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let da = Tensor {
        shape: a.shape.clone(),
        data: dy.data.iter().zip(&b.data).map(|(g, y)| g * y).collect(),
        grad: None,
    };
    let db = Tensor {
        shape: b.shape.clone(),
        data: dy.data.iter().zip(&a.data).map(|(g, x)| g * x).collect(),
        grad: None,
    };
    (da, db)
}

/// [m,k] x [k,n] -> [m,n]
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::config("matmul", "operands must be rank 2"));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::dim("matmul", "inner extent", k, k2));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Gradients of `matmul`: da = dy . b^T, db = a^T . dy.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    debug_assert_eq!(dy.shape(), &[m, n]);
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let dyrow = &dy.data[i * n..(i + 1) * n];
        let darow = &mut da[i * k..(i + 1) * k];
        for (p, dv) in darow.iter_mut().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (g, bv) in dyrow.iter().zip(brow) {
                acc += g * bv;
            }
            *dv = acc;
        }
        let arow = &a.data[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (o, &g) in dbrow.iter_mut().zip(dyrow) {
                *o += av * g;
            }
        }
    }
    (
        Tensor {
            shape: vec![m, k],
            data: da,
            grad: None,
        },
        Tensor {
            shape: vec![k, n],
            data: db,
            grad: None,
        },
    )
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient through sigmoid given its *output* y: dy * y * (1 - y).
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    Tensor {
        shape: y.shape.clone(),
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| g * v * (1.0 - v))
            .collect(),
        grad: None,
    }
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Gradient through tanh given its *output* y: dy * (1 - y^2).
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    Tensor {
        shape: y.shape.clone(),
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| g * (1.0 - v * v))
            .collect(),
        grad: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn reshape_round_trip_is_bit_exact() {
        let t = Tensor::from_fn(vec![4, 6], |i| (i as f64).sin());
        let original = t.data().to_vec();
        let r = t
            .reshape(vec![2, 3, 4])
            .unwrap()
            .reshape(vec![4, 6])
            .unwrap();
        assert_eq!(r.shape(), &[4, 6]);
        assert!(r
            .data()
            .iter()
            .zip(&original)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn reshape_rejects_count_change() {
        let t = Tensor::zeros(vec![2, 3]);
        assert!(t.reshape(vec![7]).is_err());
    }

    #[test]
    fn matmul_small_case() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn grad_accumulation() {
        let mut t = Tensor::zeros(vec![3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0], 2.0);
        t.accumulate_grad(&[1.0, 1.0, 1.0], 1.0);
        assert_eq!(t.grad().unwrap(), &[3.0, 5.0, 7.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }
}
