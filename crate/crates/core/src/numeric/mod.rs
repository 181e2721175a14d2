//! Dense `f64` tensors, a reverse-mode tape, and a finite-difference oracle.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{analytic_grad, finite_diff_check, finite_diff_check_coords, ScalarFn};
pub use kernels::log_sum_exp;
pub use tape::{Tape, Var};
pub use tensor::{cosine, Tensor};

use crate::error::Result;

/// Untaped matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let out = tape.matmul(va, vb)?;
    Ok(tape.take_leaf(out))
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = tape.softmax_rows(v);
    tape.take_leaf(out)
}

/// `gain ⊙ x / sqrt(mean(x²) + eps)` for a single vector.
pub fn rms_norm(x: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let row = Tensor::matrix(1, x.numel(), x.data().to_vec())?;
    let (vx, vg) = (tape.constant(row), tape.constant(gain.clone()));
    let out = tape.rms_norm_rows(vx, vg, eps)?;
    Tensor::vector(tape.take_leaf(out).into_data())
}

/// Rotary encoding of a single head, `x[L × head_dim]`.
pub fn rope_apply(x: &Tensor, positions: &[usize], base: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let head_dim = x.cols();
    let v = tape.constant(x.clone());
    let out = tape.rope(v, head_dim, positions, base)?;
    Ok(tape.take_leaf(out))
}

#[cfg(test)]
mod tests {
    use super::kernels::dot;
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[3, 4], &mut rng);
        assert_eq!(matmul(&a, &Tensor::identity(4)).unwrap().data(), a.data());
        let two = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let three = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        assert_eq!(matmul(&two, &three).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[4, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let w = random(&[4, 3], &mut rng);
        let (b2, w2) = (b.clone(), w.clone());
        let wrt_a = move |t: &mut Tape, x: Var| {
            let vb = t.constant(b2.clone());
            let vw = t.constant(w2.clone());
            let c = t.matmul(x, vb)?;
            let cw = t.mul(c, vw)?;
            Ok(t.sum(cw))
        };
        assert!(finite_diff_check(wrt_a, &a, 1e-6).unwrap() < 1e-6);
        let wrt_b = move |t: &mut Tape, x: Var| {
            let va = t.constant(a.clone());
            let vw = t.constant(w.clone());
            let c = t.matmul(va, x)?;
            let cw = t.mul(c, vw)?;
            Ok(t.sum(cw))
        };
        assert!(finite_diff_check(wrt_b, &b, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn softmax_closed_forms() {
        let eq = softmax_rows(&Tensor::matrix(1, 4, vec![0.3; 4]).unwrap());
        assert!(eq.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = softmax_rows(&Tensor::vector(vec![0.0, 2f64.ln()]).unwrap());
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rms_norm_cases() {
        let gain = Tensor::vector(vec![0.5, 1.5, 2.0]).unwrap();
        let out = rms_norm(&Tensor::vector(vec![4.0; 3]).unwrap(), &gain, 1e-12).unwrap();
        for (o, g) in out.data().iter().zip(gain.data()) {
            assert!((o - g).abs() < 1e-12);
        }
        let zero = rms_norm(&Tensor::zeros(&[3]), &gain, 1e-6).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rms_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 6], &mut rng);
        let gain = random(&[6], &mut rng);
        let w = random(&[3, 6], &mut rng);
        let (g2, w2) = (gain.clone(), w.clone());
        let wrt_x = move |t: &mut Tape, x: Var| {
            let g = t.constant(g2.clone());
            let vw = t.constant(w2.clone());
            let y = t.rms_norm_rows(x, g, 1e-6)?;
            let yw = t.mul(y, vw)?;
            Ok(t.sum(yw))
        };
        assert!(finite_diff_check(wrt_x, &x, 1e-6).unwrap() < 1e-6);
        let wrt_gain = move |t: &mut Tape, g: Var| {
            let vx = t.constant(x.clone());
            let vw = t.constant(w.clone());
            let y = t.rms_norm_rows(vx, g, 1e-6)?;
            let yw = t.mul(y, vw)?;
            Ok(t.sum(yw))
        };
        assert!(finite_diff_check(wrt_gain, &gain, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn cosine_gradient_and_degenerate_operand() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random(&[7], &mut rng);
        let v = random(&[7], &mut rng);
        let f = move |t: &mut Tape, x: Var| {
            let vv = t.constant(v.clone());
            t.cosine(x, vv)
        };
        assert!(finite_diff_check(f, &u, 1e-6).unwrap() < 1e-5);

        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[3]));
        let o = tape.constant(Tensor::full(&[3], 1.0));
        assert!(matches!(tape.cosine(z, o), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn backward_of_sum_is_ones_and_runs_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 5.0]).unwrap().with_grad());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
        assert!(matches!(tape.backward(s), Err(Error::BackwardAlreadyRun)));
        assert_eq!(tape.take_leaf(x).grad().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn backward_visits_in_reverse_execution_order_once() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.5, 1.5]).unwrap());
        let a = tape.scale(x, 3.0);
        let b = tape.mul(a, x).unwrap();
        let c = tape.add(b, a).unwrap();
        let loss = tape.sum(c);
        tape.backward(loss).unwrap();
        let visits = tape.backward_visits();
        let expected: Vec<usize> = [loss, c, b, a, x].iter().map(|v| v.index()).collect();
        assert_eq!(visits, expected.as_slice());
    }

    #[test]
    fn rope_zero_position_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[3, 8], &mut rng);
        let same = rope_apply(&x, &[0, 0, 0], 10_000.0).unwrap();
        assert_eq!(same.data(), x.data());
        let rotated = rope_apply(&x, &[3, 17, 250], 10_000.0).unwrap();
        for r in 0..3 {
            for i in 0..4 {
                let before = x.row(r)[i].hypot(x.row(r)[i + 4]);
                let after = rotated.row(r)[i].hypot(rotated.row(r)[i + 4]);
                assert!((before - after).abs() < 1e-12);
            }
        }
        assert!(matches!(
            rope_apply(&Tensor::zeros(&[1, 5]), &[0], 10_000.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rope_inner_product_depends_on_offset_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random(&[1, 8], &mut rng);
        let k = random(&[1, 8], &mut rng);
        let offset = 5usize;
        let dots: Vec<f64> = (0..40)
            .map(|n| {
                let rq = rope_apply(&q, &[n + offset], 10_000.0).unwrap();
                let rk = rope_apply(&k, &[n], 10_000.0).unwrap();
                dot(rq.data(), rk.data())
            })
            .collect();
        let mean = dots.iter().sum::<f64>() / dots.len() as f64;
        let var = dots.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dots.len() as f64;
        assert!(var < 1e-10, "variance {var}");
    }

    #[test]
    fn rope_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[4, 12], &mut rng);
        let w = random(&[4, 12], &mut rng);
        let f = move |t: &mut Tape, x: Var| {
            let y = t.rope(x, 6, &[0, 1, 2, 9], 100.0)?;
            let vw = t.constant(w.clone());
            let yw = t.mul(y, vw)?;
            Ok(t.sum(yw))
        };
        assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[3, 4], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let f = move |t: &mut Tape, x: Var| {
            let vw = t.constant(w.clone());
            let vb = t.constant(b.clone());
            let s = t.silu(x);
            let r = t.relu(vw);
            let m = t.mul(s, x)?;
            let a = t.add_row(m, vb)?;
            let d = t.sub(a, r)?;
            let sm = t.softmax_rows(d);
            let tr = t.transpose(sm)?;
            let sl = t.slice_cols(tr, 1, 2)?;
            let cat = t.concat_cols(&[sl, tr])?;
            let row = t.select_row(cat, 2)?;
            let lse = t.log_sum_exp(row);
            let m2 = t.mean(cat);
            let stacked = t.stack(&[lse, m2])?;
            Ok(t.sum(stacked))
        };
        assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn gather_scatters_gradient() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let rows = tape.gather(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(rows).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = tape.sum(rows);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(tape.gather(table, &[3]), Err(Error::UnknownToken { .. })));
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let a = random(&[6, 6], &mut rng);
            let mut tape = Tape::new();
            let va = tape.param(a);
            let sm = tape.softmax_rows(va);
            let p = tape.matmul(sm, va).unwrap();
            let l = tape.mean(p);
            tape.backward(l).unwrap();
            (tape.value(p).clone(), tape.grad(va).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), spread in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[rows, cols], &mut rng).scaled(spread);
            let y = softmax_rows(&x);
            for r in 0..rows {
                let s: f64 = y.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(y.row(r).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn softmax_shift_invariant(seed in any::<u64>(), c in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 6], &mut rng);
            let shifted = Tensor::new(vec![2, 6], x.data().iter().map(|v| v + c).collect()).unwrap();
            let (a, b) = (softmax_rows(&x), softmax_rows(&shifted));
            for (p, q) in a.data().iter().zip(b.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_scale_invariant(seed in any::<u64>(), a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random(&[9], &mut rng);
            let v = random(&[9], &mut rng);
            let base = cosine(u.data(), v.data()).unwrap();
            let scaled = cosine(u.scaled(a).data(), v.scaled(b).data()).unwrap();
            prop_assert!((base - scaled).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn differentiable_ops_pass_gradient_check(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[3, 4], &mut rng);
            let w = random(&[4, 4], &mut rng);
            let g = random(&[4], &mut rng);
            let f = move |t: &mut Tape, x: Var| {
                let vw = t.constant(w.clone());
                let vg = t.constant(g.clone());
                let h = t.linear(x, vw)?;
                let n = t.rms_norm_rows(h, vg, 1e-6)?;
                let s = t.silu(n);
                let r0 = t.select_row(s, 0)?;
                let r1 = t.select_row(x, 2)?;
                t.cosine(r0, r1)
            };
            prop_assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-5);
        }
    }
}
