//! Minimal f64 tensors with tape-based reverse-mode differentiation.
//!
//! Every trainable computation in the crate is recorded on a [`Tape`] as a
//! sequence of primitives (matmul, 3x3 conv, per-channel bias, elementwise
//! maps, reductions). [`Tape::backward`] replays the record in reverse and
//! accumulates gradients into each node. [`grad_check`] compares those
//! gradients against central finite differences.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport, DEFAULT_EPS};
pub use kernels::{set_worker_threads, worker_threads};
pub use tape::{sigmoid, Binary, Tape, Unary, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("config error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

impl NumError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NumError::Shape { op, left: left.to_vec(), right: right.to_vec() }
    }
}

/// Grad-check every primitive once with inputs drawn from `rng`; returns
/// `(primitive name, max relative error)`. Relu inputs are kept at
/// `|x| > 1e-3`.
pub fn primitive_grad_checks(rng: &mut crate::rng::SplitMix64) -> Vec<(&'static str, f64)> {
    fn rand_tensor(shape: &[usize], rng: &mut crate::rng::SplitMix64, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
    }
    fn away_from_kink(shape: &[usize], rng: &mut crate::rng::SplitMix64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let m = rng.uniform(2e-3, 1.0);
                if rng.next_f64() < 0.5 {
                    -m
                } else {
                    m
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    // weighted sum so that each output element carries a distinct cotangent
    fn project(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var, NumError> {
        let shape = tape.shape(y).to_vec();
        let wv = tape.constant(w.reshaped(&shape)?);
        let p = tape.mul(y, wv)?;
        Ok(tape.sum(p))
    }

    let eps = DEFAULT_EPS;
    let mut out = Vec::new();
    let mut check = |name: &'static str,
                     x: Tensor,
                     out_len: usize,
                     rng: &mut crate::rng::SplitMix64,
                     f: &dyn Fn(&mut Tape, Var) -> Result<Var, NumError>| {
        let w = rand_tensor(&[out_len], rng, -1.0, 1.0);
        let err = grad_check(
            |tape: &mut Tape, v| {
                let y = f(tape, v)?;
                project(tape, y, &w)
            },
            &x,
            eps,
        )
        .expect("primitive evaluation");
        out.push((name, err));
    };

    let other = rand_tensor(&[4, 3], rng, -1.0, 1.0);
    check("matmul_lhs", rand_tensor(&[2, 4], rng, -1.0, 1.0), 6, rng, &|t, v| {
        let b = t.constant(other.clone());
        t.matmul(v, b)
    });
    let lhs = rand_tensor(&[2, 4], rng, -1.0, 1.0);
    check("matmul_rhs", other.clone(), 6, rng, &|t, v| {
        let a = t.constant(lhs.clone());
        t.matmul(a, v)
    });
    let kern = rand_tensor(&[3, 2, 3, 3], rng, -1.0, 1.0);
    check("conv2d_input_s1", rand_tensor(&[2, 2, 5, 5], rng, -1.0, 1.0), 150, rng, &|t, v| {
        let k = t.constant(kern.clone());
        t.conv2d(v, k, 1)
    });
    check("conv2d_input_s2", rand_tensor(&[2, 2, 5, 6], rng, -1.0, 1.0), 54, rng, &|t, v| {
        let k = t.constant(kern.clone());
        t.conv2d(v, k, 2)
    });
    let img = rand_tensor(&[2, 2, 6, 5], rng, -1.0, 1.0);
    check("conv2d_kernel", kern.clone(), 54, rng, &|t, v| {
        let x = t.constant(img.clone());
        t.conv2d(x, v, 2)
    });
    let bias = rand_tensor(&[3], rng, -1.0, 1.0);
    check("bias_add_input", rand_tensor(&[2, 3, 2, 2], rng, -1.0, 1.0), 24, rng, &|t, v| {
        let b = t.constant(bias.clone());
        t.bias_add(v, b)
    });
    let feat = rand_tensor(&[4, 3], rng, -1.0, 1.0);
    check("bias_add_bias", bias.clone(), 12, rng, &|t, v| {
        let x = t.constant(feat.clone());
        t.bias_add(x, v)
    });
    let unaries: [(&'static str, Unary); 7] = [
        ("tanh", Unary::Tanh),
        ("sigmoid", Unary::Sigmoid),
        ("square", Unary::Square),
        ("add_const", Unary::AddConst(0.7)),
        ("mul_const", Unary::MulConst(-1.3)),
        ("abs", Unary::Abs),
        ("relu", Unary::Relu),
    ];
    for (name, f) in unaries {
        let x = match f {
            Unary::Relu | Unary::Abs => away_from_kink(&[7], rng),
            _ => rand_tensor(&[7], rng, -2.0, 2.0),
        };
        check(name, x, 7, rng, &move |t, v| Ok(t.unary(v, f)));
    }
    check("recip", rand_tensor(&[5], rng, 0.5, 2.0), 5, rng, &|t, v| Ok(t.recip(v)));
    check("ln_clamped", rand_tensor(&[5], rng, 0.1, 2.0), 5, rng, &|t, v| {
        Ok(t.ln_clamped(v, 1e-12))
    });
    let partner = rand_tensor(&[6], rng, -1.0, 1.0);
    for (name, f) in [("add", Binary::Add), ("sub", Binary::Sub), ("mul", Binary::Mul)] {
        let p = partner.clone();
        check(name, rand_tensor(&[6], rng, -1.0, 1.0), 6, rng, &move |t, v| {
            let c = t.constant(p.clone());
            t.binary(v, c, f)
        });
        let p = partner.clone();
        let rhs_name = match f {
            Binary::Add => "add_rhs",
            Binary::Sub => "sub_rhs",
            Binary::Mul => "mul_rhs",
        };
        check(rhs_name, rand_tensor(&[6], rng, -1.0, 1.0), 6, rng, &move |t, v| {
            let c = t.constant(p.clone());
            t.binary(c, v, f)
        });
    }
    check("sum", rand_tensor(&[5], rng, -1.0, 1.0), 1, rng, &|t, v| Ok(t.sum(v)));
    check("mean", rand_tensor(&[5], rng, -1.0, 1.0), 1, rng, &|t, v| Ok(t.mean(v)));
    check("mean_rows", rand_tensor(&[3, 2, 2], rng, -1.0, 1.0), 4, rng, &|t, v| t.mean_rows(v));
    check("spatial_mean", rand_tensor(&[2, 3, 2, 2], rng, -1.0, 1.0), 6, rng, &|t, v| {
        t.spatial_mean(v)
    });
    check("reshape", rand_tensor(&[2, 3], rng, -1.0, 1.0), 6, rng, &|t, v| t.reshape(v, &[3, 2]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
        let n = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>())
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    /// Direct sliding-window oracle for a single image.
    fn naive_conv(x: &Tensor, k: &Tensor, stride: usize) -> Vec<f64> {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let c_out = k.shape()[0];
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += x.data()[(ci * h + iy as usize) * w + ix as usize]
                                        * k.data()[((co * c_in + ci) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let id = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let col = tape.constant(t(&[2, 1], &[5., 6.]));
        let zero = tape.constant(Tensor::zeros(&[2, 3]));
        let r = tape.matmul(a, id).unwrap();
        assert_eq!(tape.value(r).data(), &[1., 2., 3., 4.]);
        let r = tape.matmul(a, col).unwrap();
        assert_eq!(tape.value(r).data(), &[17., 39.]);
        assert_eq!(tape.value(r).shape(), &[2, 1]);
        let r = tape.matmul(a, zero).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0; 6]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(err, NumError::Shape { op: "matmul", left: vec![2, 3], right: vec![2, 3] });
        assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..10 {
            let a = random(&[5, 5], &mut rng);
            let b = random(&[5, 5], &mut rng);
            let mut tape = Tape::new();
            let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
            let r = tape.matmul(va, vb).unwrap();
            for (x, y) in tape.value(r).data().iter().zip(naive_matmul(&a, &b)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_examples() {
        let mut tape = Tape::new();
        let zeros = tape.constant(Tensor::zeros(&[1, 4, 4]));
        let mut rng = SplitMix64::new(2);
        let k = tape.constant(random(&[2, 1, 3, 3], &mut rng));
        let r = tape.conv2d(zeros, k, 1).unwrap();
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));

        let img = random(&[1, 5, 5], &mut rng);
        let x = tape.constant(img.clone());
        let mut centre = Tensor::zeros(&[1, 1, 3, 3]);
        centre.data_mut()[4] = 1.0;
        let kc = tape.constant(centre);
        let r = tape.conv2d(x, kc, 1).unwrap();
        assert_eq!(tape.value(r).data(), img.data());

        let ones = tape.constant(Tensor::full(&[1, 4, 4], 1.0));
        let k1 = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let r = tape.conv2d(ones, k1, 1).unwrap();
        let out = tape.value(r).data();
        assert_eq!(out[0], 4.0);
        assert_eq!(out[3], 4.0);
        assert_eq!(out[12], 4.0);
        assert_eq!(out[15], 4.0);
        assert_eq!(out[5], 9.0);
        assert_eq!(out[10], 9.0);
        assert_eq!(out[1], 6.0);
    }

    #[test]
    fn conv_stride_and_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 1, 5, 7]));
        let k = tape.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let r = tape.conv2d(x, k, 2).unwrap();
        assert_eq!(tape.shape(r), &[2, 3, 3, 4]);
        assert!(matches!(tape.conv2d(x, k, 3), Err(NumError::Config(_))));
        let bad = tape.constant(Tensor::zeros(&[3, 2, 3, 3]));
        assert!(matches!(tape.conv2d(x, bad, 1), Err(NumError::Shape { .. })));
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        let mut rng = SplitMix64::new(5);
        for stride in [1, 2] {
            for (h, w) in [(3, 3), (6, 5), (8, 8)] {
                let x = random(&[3, h, w], &mut rng);
                let k = random(&[4, 3, 3, 3], &mut rng);
                let mut tape = Tape::new();
                let (vx, vk) = (tape.constant(x.clone()), tape.constant(k.clone()));
                let r = tape.conv2d(vx, vk, stride).unwrap();
                for (a, b) in tape.value(r).data().iter().zip(naive_conv(&x, &k, stride)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[3]));
        let r = tape.tanh(z);
        assert_eq!(tape.value(r).data(), &[0.0; 3]);
        let r = tape.sigmoid(z);
        assert_eq!(tape.value(r).data(), &[0.5; 3]);
        let v = tape.constant(t(&[2], &[3.0, -2.0]));
        let r = tape.square(v);
        assert_eq!(tape.value(r).data(), &[9.0, 4.0]);
        let r = tape.relu(v);
        assert_eq!(tape.value(r).data(), &[3.0, 0.0]);
        let other = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(v, other).is_err());
        assert!(tape.mul(v, other).is_err());
        assert!(tape.sub(v, other).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[1., -2., 3., 0.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let l = tape.square(x);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);

        let mut tape = Tape::new();
        let y = tape.leaf(Tensor::scalar(1.5));
        let l = tape.add(y, y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(y).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        let y = tape.tanh(x);
        assert!(matches!(tape.backward(y), Err(NumError::Contract(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1]));
        let y = tape.relu(x);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let l = tape.square(x);
        tape.backward(l).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[8.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::scalar(3.0));
        let p = tape.mul(c, x).unwrap();
        tape.backward(p).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn grad_check_examples() {
        let mut rng = SplitMix64::new(9);
        let x = random(&[6], &mut rng);
        let err = grad_check(
            |tape: &mut Tape, v| -> Result<Var, NumError> {
                let s = tape.square(v);
                Ok(tape.sum(s))
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");

        let err = grad_check(
            |tape: &mut Tape, _v| -> Result<Var, NumError> { Ok(tape.constant(Tensor::scalar(4.0))) },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let res = grad_check(
            |tape: &mut Tape, v| -> Result<Var, NumError> {
                let r = tape.mul_const(v, f64::INFINITY);
                Ok(tape.sum(r))
            },
            &t(&[1], &[1.0]),
            DEFAULT_EPS,
        );
        assert!(matches!(res, Err(NumError::Evaluation(_))));
    }

    /// Checks every primitive on 10 seeds; the loss is a random linear
    /// functional of the primitive's output so that no gradient collapses.
    #[test]
    fn every_primitive_passes_grad_check() {
        for seed in 0..10u64 {
            let mut rng = SplitMix64::new(100 + seed);
            for (name, err) in primitive_grad_checks(&mut rng) {
                assert!(err < 1e-4, "seed {seed} primitive {name}: {err}");
            }
        }
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let mut rng = SplitMix64::new(42);
            let mut tape = Tape::new();
            let x = tape.leaf(random(&[2, 2, 6, 6], &mut rng));
            let k = tape.leaf(random(&[3, 2, 3, 3], &mut rng));
            let y = tape.conv2d(x, k, 2).unwrap();
            let y = tape.tanh(y);
            let l = tape.mean(y);
            tape.backward(l).unwrap();
            (tape.grad(x).unwrap().to_vec(), tape.grad(k).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }
}
