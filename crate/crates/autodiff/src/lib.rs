//! Dense-matrix reverse-mode automatic differentiation.
//!
//! Values are recorded on a [`Tape`]; [`Tape::grad`] emits the adjoint pass as
//! further recorded operations, so a gradient can itself be differentiated.
//! This is what lets a loss that contains an input gradient (such as a
//! robustness penalty on `∇x f`) be minimized with respect to parameters.

mod error;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use optim::{clip_grad_norm, Adam};
pub use params::ParameterSet;
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;

/// Gradient of a scalar function at `x`, returned with the same matrix shape.
pub fn gradient<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&tape, xv)?;
    let g = tape.grad(y, &[xv])?;
    Ok((*g[0].value()).clone())
}

/// Jacobian of a vector function at the vector `x` (a row, column or rank-1
/// tensor of length n). The function receives `x` as a `1 x n` row and must
/// return m values; the result is `m x n`, row i being `∇x f_i`.
pub fn jacobian<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if x.rows() != 1 && x.cols() != 1 {
        return Err(AutodiffError::NotVector {
            op: "jacobian",
            shape: x.shape().to_vec(),
        });
    }
    let n = x.numel();
    let tape = Tape::new();
    let xv = tape.leaf(x.reshaped(1, n)?);
    let y = f(&tape, xv)?;
    let yv = y.value();
    if yv.rows() != 1 && yv.cols() != 1 {
        return Err(AutodiffError::NotVector {
            op: "jacobian",
            shape: yv.shape().to_vec(),
        });
    }
    let m = yv.numel();
    let y = y.reshape(1, m)?;
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        let fi = y.mul(tape.constant(Tensor::row(e)?))?.sum();
        let g = tape.grad_allow_unused(fi, &[xv])?;
        out.extend_from_slice(g[0].value().data());
    }
    Tensor::matrix(m, n, out)
}
