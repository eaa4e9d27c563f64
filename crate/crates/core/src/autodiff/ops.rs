//! Primitive operations: forward kernels and their adjoints.
//!
//! Complex adjoints use the convention `G = dL/dRe(z) + i dL/dIm(z)` for a
//! real scalar loss `L`. Under it, `z = a*b` gives `G_a = G * conj(b)` and a
//! unitary linear map `z = F x` gives `G_x = F^H G_z`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;

use super::tensor::{numel, ComplexTensor, RealTensor, Value};
use crate::error::{Error, Result};
use crate::fft::{Direction, Fft2};

/// Floor applied inside the square-root adjoint.
pub const SQRT_GRAD_FLOOR: f64 = 1e-12;

/// Precomputed bilinear lookups into a stacked per-level feature table.
///
/// The table is `[levels, entries_per_level, features]`; the output is
/// `[points, levels * features]`. `corners` holds four `(entry, weight)`
/// pairs per `(point, level)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatherPlan {
    pub points: usize,
    pub levels: usize,
    pub features: usize,
    pub entries_per_level: usize,
    pub corners: Vec<(u32, f64)>,
}

impl GatherPlan {
    pub fn table_len(&self) -> usize {
        self.levels * self.entries_per_level * self.features
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Scale(f64),
    /// Elementwise product; the second operand may be broadcast over the
    /// leading dimensions of the first.
    Mul,
    MatMul,
    /// `[n, m] + [m]` broadcast over rows.
    AddBias,
    Sin,
    Relu,
    Exp,
    Sqrt,
    Abs,
    Sigmoid,
    Abs2,
    /// `(amplitude, phase) -> amplitude * exp(i * phase)`.
    Polar,
    /// `(re, im) -> re + i im`.
    ToComplex,
    /// Extracts `[J, h, w]` windows at top-left offsets from an `[R, C]` input.
    Crop {
        positions: Arc<Vec<(usize, usize)>>,
        h: usize,
        w: usize,
    },
    /// Scatter-adds `[J, h, w]` windows into a zero `[rows, cols]` canvas.
    Embed {
        positions: Arc<Vec<(usize, usize)>>,
        rows: usize,
        cols: usize,
    },
    Gather(Arc<GatherPlan>),
    Mean,
    Sum,
    /// `(target, prediction) -> mean smooth-L1(target - prediction)`.
    SmoothL1 {
        beta: f64,
    },
    Fft2c,
    Ifft2c,
    /// `x / max(x)` for nonnegative `x`.
    NormalizeMax,
    Reshape(Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Scale(_) => "scale",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::AddBias => "add_bias",
            Op::Sin => "sin",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Sqrt => "sqrt",
            Op::Abs => "abs",
            Op::Sigmoid => "sigmoid",
            Op::Abs2 => "abs2",
            Op::Polar => "polar",
            Op::ToComplex => "to_complex",
            Op::Crop { .. } => "crop",
            Op::Embed { .. } => "embed",
            Op::Gather(_) => "gather",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::SmoothL1 { .. } => "smooth_l1",
            Op::Fft2c => "fft2c",
            Op::Ifft2c => "ifft2c",
            Op::NormalizeMax => "normalize_max",
            Op::Reshape(_) => "reshape",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::MatMul | Op::AddBias | Op::Polar | Op::ToComplex => 2,
            Op::SmoothL1 { .. } => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the parameter-free primitives by name.
impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Op> {
        Ok(match s {
            "add" => Op::Add,
            "sub" => Op::Sub,
            "mul" => Op::Mul,
            "matmul" => Op::MatMul,
            "add_bias" => Op::AddBias,
            "sin" => Op::Sin,
            "relu" => Op::Relu,
            "exp" => Op::Exp,
            "sqrt" => Op::Sqrt,
            "abs" => Op::Abs,
            "sigmoid" => Op::Sigmoid,
            "abs2" => Op::Abs2,
            "polar" => Op::Polar,
            "to_complex" => Op::ToComplex,
            "mean" => Op::Mean,
            "sum" => Op::Sum,
            "fft2c" => Op::Fft2c,
            "ifft2c" => Op::Ifft2c,
            "normalize_max" => Op::NormalizeMax,
            other => return Err(Error::UnsupportedPrimitive(other.to_string())),
        })
    }
}

fn check_arity(op: &Op, inputs: &[&Value]) -> Result<()> {
    if inputs.len() != op.arity() {
        return Err(Error::Tape(format!(
            "`{op}` takes {} inputs, got {}",
            op.arity(),
            inputs.len()
        )));
    }
    Ok(())
}

fn mismatch(op: &Op, inputs: &[&Value]) -> Error {
    let desc: Vec<String> = inputs
        .iter()
        .map(|v| format!("{:?}{:?}", v.kind(), v.shape()))
        .collect();
    Error::shape(format!("`{op}` cannot take inputs {}", desc.join(", ")))
}

/// Leading-dimension broadcast: `b.shape` must be a suffix of `a.shape`.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn map_real(t: &RealTensor, f: impl Fn(f64) -> f64) -> Value {
    Value::Real(RealTensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    })
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn smooth_l1_value(r: f64, beta: f64) -> f64 {
    let a = r.abs();
    if a < beta {
        0.5 * r * r / beta
    } else {
        a - 0.5 * beta
    }
}

#[inline]
fn smooth_l1_slope(r: f64, beta: f64) -> f64 {
    if r.abs() < beta {
        r / beta
    } else {
        r.signum()
    }
}

/// Row-major `[n, k] x [k, m]` product with explicit strides for transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    n: usize,
    k: usize,
    m: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), n * m);
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: the stride/shape pairs describe in-bounds views of `a`, `b`
    // (checked by callers against the tensor shapes) and `c` is exactly
    // `n * m` row-major.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

fn frame_dims(shape: &[usize]) -> Option<(usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[shape.len() - 2], shape[shape.len() - 1]))
}

fn fft_frames(t: &ComplexTensor, dir: Direction) -> Result<ComplexTensor> {
    let (h, w) = frame_dims(&t.shape).ok_or_else(|| Error::shape("fft needs at least 2 dims"))?;
    if h == 0 || w == 0 {
        return Err(Error::shape("fft frame must be non-empty"));
    }
    let mut out = t.clone();
    Fft2::for_shape(h, w).process_frames(&mut out.data, dir);
    Ok(out)
}

fn crop_windows<T: Copy + Default>(
    data: &[T],
    cols: usize,
    positions: &[(usize, usize)],
    h: usize,
    w: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(positions.len() * h * w);
    for &(r0, c0) in positions {
        for r in r0..r0 + h {
            let start = r * cols + c0;
            out.extend_from_slice(&data[start..start + w]);
        }
    }
    out
}

fn embed_windows<T: Copy + Default + std::ops::AddAssign>(
    data: &[T],
    rows: usize,
    cols: usize,
    positions: &[(usize, usize)],
    h: usize,
    w: usize,
) -> Vec<T> {
    let mut out = vec![T::default(); rows * cols];
    for (j, &(r0, c0)) in positions.iter().enumerate() {
        let frame = &data[j * h * w..(j + 1) * h * w];
        for dr in 0..h {
            let dst = &mut out[(r0 + dr) * cols + c0..(r0 + dr) * cols + c0 + w];
            for (d, s) in dst.iter_mut().zip(&frame[dr * w..(dr + 1) * w]) {
                *d += *s;
            }
        }
    }
    out
}

fn check_windows(positions: &[(usize, usize)], h: usize, w: usize, rows: usize, cols: usize) -> Result<()> {
    for &(row, col) in positions {
        if row + h > rows || col + w > cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                h,
                w,
                rows,
                cols,
            });
        }
    }
    Ok(())
}

/// Evaluates `op` on `inputs`.
pub fn forward(op: &Op, inputs: &[&Value]) -> Result<Value> {
    check_arity(op, inputs)?;
    let out = match op {
        Op::Add | Op::Sub => {
            let sign = if matches!(op, Op::Add) { 1.0 } else { -1.0 };
            match (inputs[0], inputs[1]) {
                (Value::Real(a), Value::Real(b)) if a.shape == b.shape => Value::Real(RealTensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().zip(&b.data).map(|(x, y)| x + sign * y).collect(),
                }),
                (Value::Complex(a), Value::Complex(b)) if a.shape == b.shape => {
                    Value::Complex(ComplexTensor {
                        shape: a.shape.clone(),
                        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y * sign).collect(),
                    })
                }
                _ => return Err(mismatch(op, inputs)),
            }
        }
        Op::Scale(c) => match inputs[0] {
            Value::Real(t) => map_real(t, |x| c * x),
            Value::Complex(t) => Value::Complex(ComplexTensor {
                shape: t.shape.clone(),
                data: t.data.iter().map(|z| z * *c).collect(),
            }),
        },
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if !broadcast_ok(a.shape(), b.shape()) || b.numel() == 0 {
                return Err(mismatch(op, inputs));
            }
            let nb = b.numel();
            match (a, b) {
                (Value::Real(a), Value::Real(b)) => Value::Real(RealTensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().enumerate().map(|(i, x)| x * b.data[i % nb]).collect(),
                }),
                (Value::Complex(a), Value::Complex(b)) => Value::Complex(ComplexTensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().enumerate().map(|(i, x)| x * b.data[i % nb]).collect(),
                }),
                (Value::Real(a), Value::Complex(b)) => Value::Complex(ComplexTensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().enumerate().map(|(i, x)| b.data[i % nb] * *x).collect(),
                }),
                (Value::Complex(a), Value::Real(b)) => Value::Complex(ComplexTensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().enumerate().map(|(i, x)| x * b.data[i % nb]).collect(),
                }),
            }
        }
        Op::MatMul => {
            let (a, b) = match (inputs[0], inputs[1]) {
                (Value::Real(a), Value::Real(b)) => (a, b),
                _ => return Err(mismatch(op, inputs)),
            };
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(mismatch(op, inputs));
            }
            let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![0.0; n * m];
            gemm(n, k, m, &a.data, k as isize, 1, &b.data, m as isize, 1, &mut c);
            Value::Real(RealTensor {
                shape: vec![n, m],
                data: c,
            })
        }
        Op::AddBias => {
            let (x, b) = match (inputs[0], inputs[1]) {
                (Value::Real(x), Value::Real(b)) => (x, b),
                _ => return Err(mismatch(op, inputs)),
            };
            if x.shape.len() != 2 || b.data.len() != x.shape[1] {
                return Err(mismatch(op, inputs));
            }
            let m = x.shape[1];
            let mut data = x.data.clone();
            for row in data.chunks_exact_mut(m) {
                for (v, bb) in row.iter_mut().zip(&b.data) {
                    *v += bb;
                }
            }
            Value::Real(RealTensor {
                shape: x.shape.clone(),
                data,
            })
        }
        Op::Sin => map_real(inputs[0].as_real()?, f64::sin),
        Op::Relu => map_real(inputs[0].as_real()?, |x| if x > 0.0 { x } else { 0.0 }),
        Op::Exp => map_real(inputs[0].as_real()?, f64::exp),
        Op::Sqrt => map_real(inputs[0].as_real()?, |x| x.max(0.0).sqrt()),
        Op::Abs => map_real(inputs[0].as_real()?, f64::abs),
        Op::Sigmoid => map_real(inputs[0].as_real()?, sigmoid),
        Op::Abs2 => {
            let t = inputs[0].as_complex()?;
            Value::Real(RealTensor {
                shape: t.shape.clone(),
                data: t.data.iter().map(|z| z.re * z.re + z.im * z.im).collect(),
            })
        }
        Op::Polar | Op::ToComplex => {
            let (a, b) = match (inputs[0], inputs[1]) {
                (Value::Real(a), Value::Real(b)) if a.shape == b.shape => (a, b),
                _ => return Err(mismatch(op, inputs)),
            };
            let data = if matches!(op, Op::Polar) {
                a.data
                    .iter()
                    .zip(&b.data)
                    .map(|(&r, &phi)| Complex64::new(r * phi.cos(), r * phi.sin()))
                    .collect()
            } else {
                a.data
                    .iter()
                    .zip(&b.data)
                    .map(|(&re, &im)| Complex64::new(re, im))
                    .collect()
            };
            Value::Complex(ComplexTensor {
                shape: a.shape.clone(),
                data,
            })
        }
        Op::Crop { positions, h, w } => {
            let shape = inputs[0].shape();
            if shape.len() != 2 {
                return Err(mismatch(op, inputs));
            }
            check_windows(positions, *h, *w, shape[0], shape[1])?;
            let out_shape = vec![positions.len(), *h, *w];
            match inputs[0] {
                Value::Real(t) => Value::Real(RealTensor {
                    shape: out_shape,
                    data: crop_windows(&t.data, shape[1], positions, *h, *w),
                }),
                Value::Complex(t) => Value::Complex(ComplexTensor {
                    shape: out_shape,
                    data: crop_windows(&t.data, shape[1], positions, *h, *w),
                }),
            }
        }
        Op::Embed { positions, rows, cols } => {
            let shape = inputs[0].shape();
            if shape.len() != 3 || shape[0] != positions.len() {
                return Err(mismatch(op, inputs));
            }
            let (h, w) = (shape[1], shape[2]);
            check_windows(positions, h, w, *rows, *cols)?;
            let out_shape = vec![*rows, *cols];
            match inputs[0] {
                Value::Real(t) => Value::Real(RealTensor {
                    shape: out_shape,
                    data: embed_windows(&t.data, *rows, *cols, positions, h, w),
                }),
                Value::Complex(t) => Value::Complex(ComplexTensor {
                    shape: out_shape,
                    data: embed_windows(&t.data, *rows, *cols, positions, h, w),
                }),
            }
        }
        Op::Gather(plan) => {
            let table = inputs[0].as_real()?;
            if table.data.len() != plan.table_len() {
                return Err(mismatch(op, inputs));
            }
            let (lv, f, t) = (plan.levels, plan.features, plan.entries_per_level);
            let width = lv * f;
            let mut out = vec![0.0; plan.points * width];
            for p in 0..plan.points {
                for l in 0..lv {
                    let corners = &plan.corners[(p * lv + l) * 4..(p * lv + l) * 4 + 4];
                    let dst = &mut out[p * width + l * f..p * width + (l + 1) * f];
                    for &(e, wgt) in corners {
                        let src = &table.data[(l * t + e as usize) * f..(l * t + e as usize + 1) * f];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wgt * s;
                        }
                    }
                }
            }
            Value::Real(RealTensor {
                shape: vec![plan.points, width],
                data: out,
            })
        }
        Op::Mean | Op::Sum => {
            let t = inputs[0].as_real()?;
            if t.data.is_empty() {
                return Err(mismatch(op, inputs));
            }
            let s: f64 = t.data.iter().sum();
            let v = if matches!(op, Op::Mean) {
                s / t.data.len() as f64
            } else {
                s
            };
            Value::scalar(v)
        }
        Op::SmoothL1 { beta } => {
            let (target, pred) = match (inputs[0], inputs[1]) {
                (Value::Real(a), Value::Real(b)) if a.shape == b.shape && !a.data.is_empty() => (a, b),
                _ => return Err(mismatch(op, inputs)),
            };
            let s: f64 = target
                .data
                .iter()
                .zip(&pred.data)
                .map(|(t, p)| smooth_l1_value(t - p, *beta))
                .sum();
            Value::scalar(s / target.data.len() as f64)
        }
        Op::Fft2c => Value::Complex(fft_frames(inputs[0].as_complex()?, Direction::Forward)?),
        Op::Ifft2c => Value::Complex(fft_frames(inputs[0].as_complex()?, Direction::Inverse)?),
        Op::NormalizeMax => {
            let t = inputs[0].as_real()?;
            let (_, m) = argmax(&t.data);
            if !(m > 0.0) {
                return Err(Error::DegenerateProbe);
            }
            map_real(t, |x| x / m)
        }
        Op::Reshape(shape) => {
            if numel(shape) != inputs[0].numel() {
                return Err(mismatch(op, inputs));
            }
            match inputs[0] {
                Value::Real(t) => Value::Real(RealTensor {
                    shape: shape.clone(),
                    data: t.data.clone(),
                }),
                Value::Complex(t) => Value::Complex(ComplexTensor {
                    shape: shape.clone(),
                    data: t.data.clone(),
                }),
            }
        }
    };
    Ok(out)
}

/// First index of the maximum and the maximum itself.
fn argmax(data: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in data.iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn real_grad(shape: &[usize], data: Vec<f64>) -> Option<Value> {
    Some(Value::Real(RealTensor {
        shape: shape.to_vec(),
        data,
    }))
}

fn complex_grad(shape: &[usize], data: Vec<Complex64>) -> Option<Value> {
    Some(Value::Complex(ComplexTensor {
        shape: shape.to_vec(),
        data,
    }))
}

/// Folds a full-size gradient onto a broadcast operand of `nb` elements.
fn fold_real(full: impl Iterator<Item = f64>, nb: usize) -> Vec<f64> {
    let mut out = vec![0.0; nb];
    for (i, g) in full.enumerate() {
        out[i % nb] += g;
    }
    out
}

fn fold_complex(full: impl Iterator<Item = Complex64>, nb: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); nb];
    for (i, g) in full.enumerate() {
        out[i % nb] += g;
    }
    out
}

/// Vector-Jacobian product: adjoints for each input flagged in `needs`.
pub fn backward(
    op: &Op,
    inputs: &[&Value],
    output: &Value,
    grad: &Value,
    needs: &[bool],
) -> Result<Vec<Option<Value>>> {
    let mut grads: Vec<Option<Value>> = vec![None; inputs.len()];
    match op {
        Op::Add | Op::Sub => {
            let sign = if matches!(op, Op::Add) { 1.0 } else { -1.0 };
            if needs[0] {
                grads[0] = Some(grad.clone());
            }
            if needs[1] {
                grads[1] = Some(match grad {
                    Value::Real(g) => Value::Real(RealTensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().map(|x| sign * x).collect(),
                    }),
                    Value::Complex(g) => Value::Complex(ComplexTensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().map(|x| x * sign).collect(),
                    }),
                });
            }
        }
        Op::Scale(c) => {
            grads[0] = Some(forward(&Op::Scale(*c), &[grad])?);
        }
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let nb = b.numel();
            match (a, b, grad) {
                (Value::Real(a), Value::Real(b), Value::Real(g)) => {
                    if needs[0] {
                        let d = g.data.iter().enumerate().map(|(i, gg)| gg * b.data[i % nb]).collect();
                        grads[0] = real_grad(&a.shape, d);
                    }
                    if needs[1] {
                        let d = fold_real(g.data.iter().zip(&a.data).map(|(gg, x)| gg * x), nb);
                        grads[1] = real_grad(&b.shape, d);
                    }
                }
                (Value::Complex(a), Value::Complex(b), Value::Complex(g)) => {
                    if needs[0] {
                        let d = g
                            .data
                            .iter()
                            .enumerate()
                            .map(|(i, gg)| gg * b.data[i % nb].conj())
                            .collect();
                        grads[0] = complex_grad(&a.shape, d);
                    }
                    if needs[1] {
                        let d = fold_complex(g.data.iter().zip(&a.data).map(|(gg, x)| gg * x.conj()), nb);
                        grads[1] = complex_grad(&b.shape, d);
                    }
                }
                (Value::Real(a), Value::Complex(b), Value::Complex(g)) => {
                    if needs[0] {
                        let d = g
                            .data
                            .iter()
                            .enumerate()
                            .map(|(i, gg)| (gg * b.data[i % nb].conj()).re)
                            .collect();
                        grads[0] = real_grad(&a.shape, d);
                    }
                    if needs[1] {
                        let d = fold_complex(g.data.iter().zip(&a.data).map(|(gg, x)| gg * *x), nb);
                        grads[1] = complex_grad(&b.shape, d);
                    }
                }
                (Value::Complex(a), Value::Real(b), Value::Complex(g)) => {
                    if needs[0] {
                        let d = g.data.iter().enumerate().map(|(i, gg)| gg * b.data[i % nb]).collect();
                        grads[0] = complex_grad(&a.shape, d);
                    }
                    if needs[1] {
                        let d = fold_real(g.data.iter().zip(&a.data).map(|(gg, x)| (gg * x.conj()).re), nb);
                        grads[1] = real_grad(&b.shape, d);
                    }
                }
                _ => return Err(mismatch(op, inputs)),
            }
        }
        Op::MatMul => {
            let a = inputs[0].as_real()?;
            let b = inputs[1].as_real()?;
            let g = grad.as_real()?;
            let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
            if needs[0] {
                // G [n,m] x B^T [m,k]
                let mut d = vec![0.0; n * k];
                gemm(n, m, k, &g.data, m as isize, 1, &b.data, 1, m as isize, &mut d);
                grads[0] = real_grad(&a.shape, d);
            }
            if needs[1] {
                // A^T [k,n] x G [n,m]
                let mut d = vec![0.0; k * m];
                gemm(k, n, m, &a.data, 1, k as isize, &g.data, m as isize, 1, &mut d);
                grads[1] = real_grad(&b.shape, d);
            }
        }
        Op::AddBias => {
            let g = grad.as_real()?;
            if needs[0] {
                grads[0] = Some(grad.clone());
            }
            if needs[1] {
                let m = inputs[1].numel();
                let mut d = vec![0.0; m];
                for row in g.data.chunks_exact(m) {
                    for (acc, x) in d.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                grads[1] = real_grad(inputs[1].shape(), d);
            }
        }
        Op::Sin | Op::Relu | Op::Exp | Op::Sqrt | Op::Abs | Op::Sigmoid => {
            let x = inputs[0].as_real()?;
            let y = output.as_real()?;
            let g = grad.as_real()?;
            let d: Vec<f64> = match op {
                Op::Sin => g.data.iter().zip(&x.data).map(|(g, x)| g * x.cos()).collect(),
                Op::Relu => g
                    .data
                    .iter()
                    .zip(&x.data)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
                Op::Exp => g.data.iter().zip(&y.data).map(|(g, y)| g * y).collect(),
                Op::Sqrt => g
                    .data
                    .iter()
                    .zip(&x.data)
                    .map(|(g, &x)| g * 0.5 / x.max(SQRT_GRAD_FLOOR).sqrt())
                    .collect(),
                Op::Abs => g
                    .data
                    .iter()
                    .zip(&x.data)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                Op::Sigmoid => g.data.iter().zip(&y.data).map(|(g, y)| g * y * (1.0 - y)).collect(),
                _ => unreachable!(),
            };
            grads[0] = real_grad(&x.shape, d);
        }
        Op::Abs2 => {
            let z = inputs[0].as_complex()?;
            let g = grad.as_real()?;
            let d = z.data.iter().zip(&g.data).map(|(z, g)| z * (2.0 * g)).collect();
            grads[0] = complex_grad(&z.shape, d);
        }
        Op::Polar => {
            let amp = inputs[0].as_real()?;
            let phase = inputs[1].as_real()?;
            let z = output.as_complex()?;
            let g = grad.as_complex()?;
            if needs[0] {
                let d = g
                    .data
                    .iter()
                    .zip(&phase.data)
                    .map(|(g, phi)| g.re * phi.cos() + g.im * phi.sin())
                    .collect();
                grads[0] = real_grad(&amp.shape, d);
            }
            if needs[1] {
                let d = g
                    .data
                    .iter()
                    .zip(&z.data)
                    .map(|(g, z)| -g.re * z.im + g.im * z.re)
                    .collect();
                grads[1] = real_grad(&phase.shape, d);
            }
        }
        Op::ToComplex => {
            let g = grad.as_complex()?;
            if needs[0] {
                grads[0] = real_grad(&g.shape, g.data.iter().map(|z| z.re).collect());
            }
            if needs[1] {
                grads[1] = real_grad(&g.shape, g.data.iter().map(|z| z.im).collect());
            }
        }
        Op::Crop { positions, h, w } => {
            let shape = inputs[0].shape();
            let (rows, cols) = (shape[0], shape[1]);
            grads[0] = Some(match grad {
                Value::Real(g) => Value::Real(RealTensor {
                    shape: shape.to_vec(),
                    data: embed_windows(&g.data, rows, cols, positions, *h, *w),
                }),
                Value::Complex(g) => Value::Complex(ComplexTensor {
                    shape: shape.to_vec(),
                    data: embed_windows(&g.data, rows, cols, positions, *h, *w),
                }),
            });
        }
        Op::Embed { positions, cols, .. } => {
            let shape = inputs[0].shape();
            let (h, w) = (shape[1], shape[2]);
            grads[0] = Some(match grad {
                Value::Real(g) => Value::Real(RealTensor {
                    shape: shape.to_vec(),
                    data: crop_windows(&g.data, *cols, positions, h, w),
                }),
                Value::Complex(g) => Value::Complex(ComplexTensor {
                    shape: shape.to_vec(),
                    data: crop_windows(&g.data, *cols, positions, h, w),
                }),
            });
        }
        Op::Gather(plan) => {
            let g = grad.as_real()?;
            let (lv, f, t) = (plan.levels, plan.features, plan.entries_per_level);
            let width = lv * f;
            let mut d = vec![0.0; plan.table_len()];
            // Serial scatter in (level, point) order.
            for l in 0..lv {
                for p in 0..plan.points {
                    let corners = &plan.corners[(p * lv + l) * 4..(p * lv + l) * 4 + 4];
                    let src = &g.data[p * width + l * f..p * width + (l + 1) * f];
                    for &(e, wgt) in corners {
                        let dst = &mut d[(l * t + e as usize) * f..(l * t + e as usize + 1) * f];
                        for (acc, s) in dst.iter_mut().zip(src) {
                            *acc += wgt * s;
                        }
                    }
                }
            }
            grads[0] = real_grad(inputs[0].shape(), d);
        }
        Op::Mean | Op::Sum => {
            let g = grad.to_scalar()?;
            let n = inputs[0].numel();
            let v = if matches!(op, Op::Mean) { g / n as f64 } else { g };
            grads[0] = real_grad(inputs[0].shape(), vec![v; n]);
        }
        Op::SmoothL1 { beta } => {
            let target = inputs[0].as_real()?;
            let pred = inputs[1].as_real()?;
            let g = grad.to_scalar()? / target.data.len() as f64;
            let slopes: Vec<f64> = target
                .data
                .iter()
                .zip(&pred.data)
                .map(|(t, p)| smooth_l1_slope(t - p, *beta))
                .collect();
            if needs[0] {
                grads[0] = real_grad(&target.shape, slopes.iter().map(|s| s * g).collect());
            }
            if needs[1] {
                grads[1] = real_grad(&pred.shape, slopes.iter().map(|s| -s * g).collect());
            }
        }
        Op::Fft2c => {
            grads[0] = Some(Value::Complex(fft_frames(grad.as_complex()?, Direction::Inverse)?));
        }
        Op::Ifft2c => {
            grads[0] = Some(Value::Complex(fft_frames(grad.as_complex()?, Direction::Forward)?));
        }
        Op::NormalizeMax => {
            let x = inputs[0].as_real()?;
            let g = grad.as_real()?;
            let (k, m) = argmax(&x.data);
            let mut d: Vec<f64> = g.data.iter().map(|g| g / m).collect();
            let dot: f64 = g.data.iter().zip(&x.data).map(|(g, x)| g * x).sum();
            d[k] -= dot / (m * m);
            grads[0] = real_grad(&x.shape, d);
        }
        Op::Reshape(_) => {
            let shape = inputs[0].shape().to_vec();
            grads[0] = Some(match grad {
                Value::Real(g) => Value::Real(RealTensor {
                    shape,
                    data: g.data.clone(),
                }),
                Value::Complex(g) => Value::Complex(ComplexTensor {
                    shape,
                    data: g.data.clone(),
                }),
            });
        }
    }
    for (i, g) in grads.iter_mut().enumerate() {
        if !needs[i] {
            *g = None;
        }
    }
    Ok(grads)
}
