use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::*;

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get2(i, p) * b.get2(p, j);
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn eval_graph() -> ParamStore {
    ParamStore::new()
}

#[test]
fn matmul_identity_and_hand_sum() {
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let av = g.input(a.clone());
    let i = g.input(Tensor::eye(2));
    let ai = g.matmul(av, i).unwrap();
    assert_eq!(g.value(ai).data(), a.data());

    let ones = g.input(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
    let s = g.matmul(av, ones).unwrap();
    assert_eq!(g.value(s).shape(), &[2, 1]);
    assert_eq!(g.value(s).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[5, 7]);
    let b = rand_tensor(&mut rng, &[7, 3]);
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
    let c = g.matmul(av, bv).unwrap();
    let oracle = naive_matmul(&a, &b);
    for (x, y) in g.value(c).data().iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3] and [2, 3]"));
}

#[test]
fn softmax_examples() {
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let z = g.input(Tensor::zeros(&[3]));
    let s = g.softmax(z, 0, None).unwrap();
    for v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = g.input(Tensor::new(&[2], vec![2.0, 0.0]).unwrap());
    let s = g.softmax(x, 0, None).unwrap();
    let e2 = 2f64.exp();
    assert!((g.value(s).data()[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
    assert!((g.value(s).data()[1] - 1.0 / (e2 + 1.0)).abs() < 1e-15);

    let x = g.input(Tensor::new(&[3], vec![5.0, -1.0, 9.0]).unwrap());
    let s = g.softmax(x, 0, Some(&[false, true, false])).unwrap();
    assert_eq!(g.value(s).data(), &[0.0, 1.0, 0.0]);

    let err = g.softmax(x, 0, Some(&[false, false, false])).unwrap_err();
    assert_eq!(err, TensorError::DegenerateMask { op: "softmax" });

    let x = g.input(Tensor::new(&[3], vec![1.0, f64::NAN, 2.0]).unwrap());
    let s = g.softmax(x, 0, None).unwrap();
    assert!(g.value(s).data().iter().all(|v| v.is_nan()));
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let x = g.input(Tensor::new(&[3], vec![1000.0, 1000.0, -1000.0]).unwrap());
    let s = g.softmax(x, 0, None).unwrap();
    assert!(g.value(s).is_finite());
    assert!((g.value(s).data()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn softmax_along_axis_zero() {
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let x = g.input(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap());
    let s = g.softmax(x, 0, None).unwrap();
    let d = g.value(s).data();
    assert!((d[0] - 0.5).abs() < 1e-15 && (d[2] - 0.5).abs() < 1e-15);
    assert!((d[1] + d[3] - 1.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..7,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(
            &[rows, cols],
            (0..rows * cols).map(|_| rng.random_range(-30.0..30.0)).collect(),
        ).unwrap();
        let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.6)).collect();
        for r in 0..rows {
            mask[r * cols + rng.random_range(0..cols)] = true;
        }
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let xv = g.input(x);
        let s = g.softmax(xv, 1, Some(&mask)).unwrap();
        let out = g.value(s);
        for r in 0..rows {
            let row = out.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for c in 0..cols {
                prop_assert!(row[c] >= 0.0);
                if !mask[r * cols + c] {
                    prop_assert_eq!(row[c], 0.0);
                }
            }
        }
    }
}

#[test]
fn tanh_affine_examples() {
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let x = g.input(Tensor::zeros(&[1, 3]));
    let w = g.input(Tensor::eye(3));
    let b = g.input(Tensor::zeros(&[3]));
    let y = tanh_affine(&mut g, x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[0.0; 3]);

    let x = g.input(Tensor::new(&[1, 3], vec![40.0, -40.0, 9.0]).unwrap());
    let y = tanh_affine(&mut g, x, w, b).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-6 && (d[1] + 1.0).abs() < 1e-6 && (d[2] - 1.0).abs() < 1e-6);
}

fn store_with(tensors: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
    let mut s = ParamStore::new();
    let ids = tensors
        .iter()
        .map(|(n, t)| s.insert(*n, t.clone()).unwrap())
        .collect();
    (s, ids)
}

fn tight() -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        ..GradCheckOptions::default()
    }
}

#[test]
fn tanh_affine_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut s, ids) = store_with(&[
        ("x", rand_tensor(&mut rng, &[4, 5])),
        ("w", rand_tensor(&mut rng, &[5, 3])),
        ("b", rand_tensor(&mut rng, &[3])),
        ("r", rand_tensor(&mut rng, &[4, 3])),
    ]);
    let report = grad_check(
        &mut s,
        |g| {
            let (x, w, b, r) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]), g.param(ids[3]));
            let y = tanh_affine(g, x, w, b)?;
            let y = g.mul(y, r)?;
            Ok(g.sum(y))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn every_primitive_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut s, ids) = store_with(&[
        ("a", rand_tensor(&mut rng, &[3, 4])),
        ("b", rand_tensor(&mut rng, &[4, 4])),
        ("c", rand_tensor(&mut rng, &[3, 4])),
        ("v", rand_tensor(&mut rng, &[4])),
        ("table", rand_tensor(&mut rng, &[6, 4])),
        ("gamma", rand_tensor(&mut rng, &[4])),
        ("beta", rand_tensor(&mut rng, &[4])),
        ("r", rand_tensor(&mut rng, &[8, 4])),
    ]);
    let report = grad_check(
        &mut s,
        |g| {
            let p: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
            let (a, b, c, v, table, gamma, beta, r) =
                (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
            let ab = g.matmul(a, b)?; // 3×4
            let abt = g.matmul_t(a, c)?; // 3×3
            let sm = g.softmax(abt, 1, Some(&[true, false, true]))?;
            let mixed = g.matmul(sm, c)?; // 3×4
            let x = g.add(ab, mixed)?;
            let x = g.add_row(x, v)?;
            let x = g.gelu(x);
            let x = g.layer_norm(x, gamma, beta, 1e-12)?;
            let x = g.mul(x, c)?;
            let t = g.transpose(x)?; // 4×3
            let t = g.transpose(t)?;
            let sm0 = g.softmax(t, 0, None)?;
            let rows = g.gather_rows(table, &[1, 4, 1])?; // 3×4
            let y = g.add(sm0, rows)?;
            let y = g.tanh(y);
            let top = g.slice_rows(y, 0, 2)?;
            let left = g.slice_cols(y, 1, 2)?;
            let left = g.reshape(left, &[2, 3])?;
            let left = g.transpose(left)?; // 3×2
            let right = g.slice_cols(y, 0, 2)?;
            let lr = g.concat_cols(&[left, right])?; // 3×4
            let stacked = g.concat_rows(&[top, lr, y])?; // 8×4
            let stacked = g.scale(stacked, 0.7);
            let stacked = g.mask_scale(stacked, (0..32).map(|i| (i % 3) as f64).collect());
            let z = g.mul(stacked, r)?;
            Ok(g.sum(z))
        },
        tight(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn cross_entropy_examples() {
    let store = eval_graph();
    let mut g = Graph::new(&store, Mode::Eval);
    let p = g.input(Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap());
    let l = cross_entropy(&mut g, p, &[0, 2]).unwrap();
    assert!(g.value(l).item().unwrap() <= 1e-14);

    let u = g.input(Tensor::new(&[1, 3], vec![1.0 / 3.0; 3]).unwrap());
    let l = cross_entropy(&mut g, u, &[1]).unwrap();
    assert!((g.value(l).item().unwrap() - 3f64.ln()).abs() < 1e-12);

    assert!(cross_entropy(&mut g, u, &[3]).is_err());
    let bad = g.input(Tensor::new(&[1, 3], vec![0.5, 0.5, 0.5]).unwrap());
    assert!(cross_entropy(&mut g, bad, &[0]).is_err());
}

#[test]
fn cross_entropy_gradient_on_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut s, ids) = store_with(&[("logits", rand_tensor(&mut rng, &[4, 3]))]);
    let report = grad_check(
        &mut s,
        |g| {
            let z = g.param(ids[0]);
            let p = g.softmax(z, 1, None)?;
            cross_entropy(g, p, &[0, 2, 1, 1])
        },
        tight(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn dropout_modes() {
    let store = eval_graph();
    let x = Tensor::new(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();

    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let y = g.dropout(xv, 0.5).unwrap();
    assert_eq!(y, xv);
    assert_eq!(g.value(y).data(), x.data());

    let mut g = Graph::new(&store, Mode::Train(ChaCha8Rng::seed_from_u64(0)));
    let xv = g.input(x.clone());
    let y = g.dropout(xv, 0.0).unwrap();
    assert_eq!(g.value(y).data(), x.data());
    assert!(g.dropout(xv, 1.0).is_err());
    assert!(g.dropout(xv, -0.1).is_err());
}

#[test]
fn dropout_statistics() {
    let store = eval_graph();
    let n = 100_000;
    let mut g = Graph::new(&store, Mode::Train(ChaCha8Rng::seed_from_u64(9)));
    let x = g.input(Tensor::new(&[n], vec![1.0; n]).unwrap());
    let y = g.dropout(x, 0.1).unwrap();
    let d = g.value(y).data();
    let zeros = d.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
    let mean = d.iter().sum::<f64>() / n as f64;
    assert!((zeros - 0.1).abs() <= 0.01, "zero fraction {zeros}");
    assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
}

fn mha_fixture(heads: usize, hidden: usize, seed: u64) -> (ParamStore, MhaParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let p = MhaParams::new(&mut s, "mha", hidden, heads, &mut rng).unwrap();
    // non-zero biases so the oracle exercises them
    for id in [p.q.b, p.k.b, p.v.b, p.o.b].into_iter().flatten() {
        for v in s.get_mut(id).tensor_mut().data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    (s, p)
}

/// Straight-line per-head attention used as the oracle.
fn mha_oracle(s: &ParamStore, p: &MhaParams, q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<f64> {
    let proj = |x: &Tensor, l: &Linear| -> Vec<Vec<f64>> {
        let w = s.get(l.w).tensor();
        let b = s.get(l.b.unwrap()).tensor();
        (0..x.rows())
            .map(|i| {
                (0..w.cols())
                    .map(|j| {
                        (0..x.cols()).map(|p| x.get2(i, p) * w.get2(p, j)).sum::<f64>()
                            + b.data()[j]
                    })
                    .collect()
            })
            .collect()
    };
    let (qp, kp, vp) = (proj(q, &p.q), proj(k, &p.k), proj(v, &p.v));
    let hidden = q.cols();
    let d = hidden / p.heads;
    let mut concat = vec![vec![0.0; hidden]; q.rows()];
    for h in 0..p.heads {
        for i in 0..q.rows() {
            let scores: Vec<f64> = (0..k.rows())
                .map(|j| {
                    (0..d).map(|c| qp[i][h * d + c] * kp[j][h * d + c]).sum::<f64>()
                        / (d as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..d {
                concat[i][h * d + c] = (0..k.rows()).map(|j| e[j] / z * vp[j][h * d + c]).sum();
            }
        }
    }
    let ct = Tensor::from_rows(&concat).unwrap();
    proj(&ct, &p.o).concat()
}

#[test]
fn attention_matches_per_head_loop() {
    let (s, p) = mha_fixture(2, 8, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = rand_tensor(&mut rng, &[2, 8]);
    let k = rand_tensor(&mut rng, &[3, 8]);
    let v = rand_tensor(&mut rng, &[3, 8]);
    let mut g = Graph::new(&s, Mode::Eval);
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = multi_head_attention(&mut g, &p, qv, kv, vv, None, 0.0).unwrap();
    let oracle = mha_oracle(&s, &p, &q, &k, &v);
    assert_eq!(g.value(out.output).shape(), &[2, 8]);
    for (a, b) in g.value(out.output).data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for w in &out.weights {
        for r in 0..2 {
            assert!((g.value(*w).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_single_key_is_projected_value() {
    let (s, p) = mha_fixture(4, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = rand_tensor(&mut rng, &[1, 8]);
    let kv = rand_tensor(&mut rng, &[1, 8]);
    let mut g = Graph::new(&s, Mode::Eval);
    let (qv, kvv) = (g.input(q), g.input(kv));
    let out = multi_head_attention(&mut g, &p, qv, kvv, kvv, None, 0.0).unwrap();
    for w in &out.weights {
        assert_eq!(g.value(*w).data(), &[1.0]);
    }
    let v = p.v.forward(&mut g, kvv).unwrap();
    let o = p.o.forward(&mut g, v).unwrap();
    assert!(g.value(out.output).max_abs_diff(g.value(o)) < 1e-14);
}

#[test]
fn attention_identical_keys_give_uniform_weights() {
    let (s, p) = mha_fixture(2, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = rand_tensor(&mut rng, &[2, 4]);
    let row = rand_tensor(&mut rng, &[1, 4]);
    let k = Tensor::from_rows(&vec![row.data().to_vec(); 3]).unwrap();
    let mut g = Graph::new(&s, Mode::Eval);
    let (qv, kv) = (g.input(q), g.input(k));
    let out = multi_head_attention(&mut g, &p, qv, kv, kv, None, 0.0).unwrap();
    for w in &out.weights {
        for x in g.value(*w).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-14);
        }
    }
}

#[test]
fn attention_head_count_must_divide_hidden() {
    let mut s = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        MhaParams::new(&mut s, "m", 6, 4, &mut rng),
        Err(TensorError::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn attention_is_invariant_to_key_permutation(seed in any::<u64>(), tk in 1usize..6) {
        let (s, p) = mha_fixture(2, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let q = rand_tensor(&mut rng, &[2, 4]);
        let k = rand_tensor(&mut rng, &[tk, 4]);
        let v = rand_tensor(&mut rng, &[tk, 4]);
        let mut mask: Vec<bool> = (0..tk).map(|_| rng.random_bool(0.7)).collect();
        mask[0] = true;
        let mut perm: Vec<usize> = (0..tk).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % tk);
        let pk = Tensor::from_rows(&perm.iter().map(|&i| k.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pv = Tensor::from_rows(&perm.iter().map(|&i| v.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pm: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();

        let mut g = Graph::new(&s, Mode::Eval);
        let (qv, kv, vv) = (g.input(q.clone()), g.input(k), g.input(v));
        let a = multi_head_attention(&mut g, &p, qv, kv, vv, Some(&mask), 0.0).unwrap();
        let (pkv, pvv) = (g.input(pk), g.input(pv));
        let b = multi_head_attention(&mut g, &p, qv, pkv, pvv, Some(&pm), 0.0).unwrap();
        prop_assert!(g.value(a.output).max_abs_diff(g.value(b.output)) < 1e-12);
    }
}

#[test]
fn attention_gradients() {
    let (mut s, p) = mha_fixture(2, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = s.insert("q", rand_tensor(&mut rng, &[2, 4])).unwrap();
    let k = s.insert("k", rand_tensor(&mut rng, &[3, 4])).unwrap();
    let r = s.insert("r", rand_tensor(&mut rng, &[2, 4])).unwrap();
    let report = grad_check(
        &mut s,
        |g| {
            let (qv, kv, rv) = (g.param(q), g.param(k), g.param(r));
            let out = multi_head_attention(g, &p, qv, kv, kv, Some(&[true, false, true]), 0.0)?;
            let z = g.mul(out.output, rv)?;
            Ok(g.sum(z))
        },
        tight(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn grad_check_linear_function_is_exact() {
    let (mut s, ids) = store_with(&[(
        "w",
        Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap(),
    )]);
    let report = grad_check(
        &mut s,
        |g| {
            let w = g.param(ids[0]);
            let w = g.scale(w, 3.0);
            Ok(g.sum(w))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
    assert_eq!(report.checked, 3);
}

#[test]
fn grad_check_rejects_non_scalar() {
    let (mut s, ids) = store_with(&[("w", Tensor::zeros(&[2]))]);
    let err = grad_check(&mut s, |g| Ok(g.param(ids[0])), GradCheckOptions::default());
    assert!(matches!(err, Err(TensorError::NonScalar(_))));
}

/// tanh whose backward rule forgets to square the output.
struct BrokenTanh;

impl CustomOp for BrokenTanh {
    fn name(&self) -> &str {
        "broken_tanh"
    }
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        Tensor::new(x.shape(), x.data().iter().map(|v| v.tanh()).collect())
    }
    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
        vec![output.data().iter().zip(g).map(|(y, g)| g * (1.0 - y)).collect()]
    }
}

#[test]
fn grad_check_detects_corrupted_backward_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut s, ids) = store_with(&[("x", rand_tensor(&mut rng, &[6]))]);
    let report = grad_check(
        &mut s,
        |g| {
            let x = g.param(ids[0]);
            let y = g.custom(Box::new(BrokenTanh), &[x])?;
            Ok(g.sum(y))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error > 1e-2, "{report:?}");
}

#[test]
fn grad_check_subsamples_large_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut s, ids) = store_with(&[("w", rand_tensor(&mut rng, &[40, 40]))]);
    let report = grad_check(
        &mut s,
        |g| {
            let w = g.param(ids[0]);
            let t = g.tanh(w);
            Ok(g.sum(t))
        },
        GradCheckOptions {
            max_elements: 100,
            ..tight()
        },
    )
    .unwrap();
    assert_eq!(report.checked, 100);
    assert!(report.max_rel_error < 1e-4);
}

#[test]
fn backward_populates_every_trainable_grad() {
    let (mut s, ids) = store_with(&[("used", Tensor::scalar(2.0)), ("unused", Tensor::zeros(&[3]))]);
    let grads = {
        let mut g = Graph::new(&s, Mode::Eval);
        let u = g.param(ids[0]);
        let y = g.scale(u, 4.0);
        let y = g.sum(y);
        g.backward(y).unwrap()
    };
    s.set_grads(&grads);
    assert_eq!(s.get(ids[0]).tensor().grad(), Some(&[4.0][..]));
    assert_eq!(s.get(ids[1]).tensor().grad(), Some(&[0.0, 0.0, 0.0][..]));
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let (s, ids) = store_with(&[("w", Tensor::scalar(3.0))]);
    let mut g = Graph::new(&s, Mode::Eval);
    let a = g.param(ids[0]);
    let b = g.param(ids[0]);
    assert_eq!(a, b);
    let y = g.mul(a, b).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(ids[0]), Some(&[6.0][..]));
}
