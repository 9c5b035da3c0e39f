use proptest::prelude::*;
use seed_core::numerics::checkpoint::{Checkpoint, Entry};
use seed_core::numerics::{
    adam_step, finite_difference_check, AdamConfig, AdamState, ParamStore, SeedRng, Tape, Tensor,
    Var,
};

const H: f64 = 1e-3;
const TOL: f64 = 1e-6;

fn rand_t(rng: &mut SeedRng, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape, 1.0)
}

/// `sum(w * f(x))` so every output coordinate carries a distinct weight.
fn check<F>(x: &Tensor, out_shape: &[usize], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, Var) -> seed_core::Result<Var>,
{
    let w = SeedRng::new(seed).normal_tensor(out_shape, 1.0);
    finite_difference_check(
        |t, xv| {
            let y = f(t, xv)?;
            let wv = t.constant(w.clone());
            let p = t.mul(y, wv)?;
            Ok(t.sum(p))
        },
        x,
        H,
    )
    .unwrap()
}

fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at(&[i, p]) * b.at(&[p, j]);
            }
        }
    }
    out
}

/// Softmax with compensated summation of the exponentials.
fn softmax_oracle(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in &e {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    let total = sum + comp;
    e.iter().map(|v| v / total).collect()
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = SeedRng::new(1);
    for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (7, 2, 6), (16, 9, 3)] {
        let a = rand_t(&mut rng, &[m, k]);
        let b = rand_t(&mut rng, &[k, n]);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(av, bv).unwrap();
        for (x, y) in tape.data(c).iter().zip(matmul_oracle(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = tape.constant(b.transpose().unwrap());
        let c2 = tape.matmul_ex(av, bt, true).unwrap();
        assert!(tape.value(c2).max_abs_diff(tape.value(c)) < 1e-12);
    }
}

#[test]
fn batched_matmul_broadcasts_rhs() {
    let mut rng = SeedRng::new(2);
    let a = rand_t(&mut rng, &[3, 4, 5]);
    let b = rand_t(&mut rng, &[5, 2]);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(av, bv).unwrap();
    assert_eq!(tape.shape(c), &[3, 4, 2]);
    for batch in 0..3 {
        let slice = Tensor::new(&[4, 5], a.data()[batch * 20..(batch + 1) * 20].to_vec()).unwrap();
        let expect = matmul_oracle(&slice, &b);
        for (x, y) in tape.data(c)[batch * 8..(batch + 1) * 8].iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_matches_compensated_oracle() {
    let mut rng = SeedRng::new(3);
    let x = rng.normal_tensor(&[6, 9], 4.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let s = tape.softmax(xv, 1).unwrap();
    for r in 0..6 {
        let expect = softmax_oracle(x.row(r));
        for (a, b) in tape.data(s)[r * 9..(r + 1) * 9].iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn softmax_survives_large_logits() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 3], vec![1000.0, 1000.0, -1000.0]).unwrap());
    let s = tape.softmax(x, 1).unwrap();
    assert_eq!(tape.data(s), &[0.5, 0.5, 0.0]);
}

#[test]
fn causal_softmax_masks_exactly() {
    let mut rng = SeedRng::new(4);
    let x = rng.normal_tensor(&[2, 4, 4], 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let s = tape.causal_softmax(xv).unwrap();
    let d = tape.data(s);
    for b in 0..2 {
        for i in 0..4 {
            let row = &d[b * 16 + i * 4..b * 16 + i * 4 + 4];
            assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            let off = b * 16 + i * 4;
            let expect = softmax_oracle(&x.data()[off..off + i + 1]);
            for (a, e) in row[..=i].iter().zip(expect) {
                assert!((a - e).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn layer_norm_matches_two_pass_oracle() {
    let mut rng = SeedRng::new(5);
    let x = rng.normal_tensor(&[4, 7], 3.0);
    let g = rng.normal_tensor(&[7], 1.0);
    let b = rng.normal_tensor(&[7], 1.0);
    let mut tape = Tape::new();
    let (xv, gv, bv) = (
        tape.constant(x.clone()),
        tape.constant(g.clone()),
        tape.constant(b.clone()),
    );
    let y = tape.layer_norm(xv, gv, bv, 1, 1e-5).unwrap();
    for r in 0..4 {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / 7.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 7.0;
        for (c, &xc) in row.iter().enumerate() {
            let e = (xc - mean) / (var + 1e-5).sqrt() * g.data()[c] + b.data()[c];
            assert!((tape.data(y)[r * 7 + c] - e).abs() < 1e-12);
        }
    }
}

#[test]
fn gradients_of_binary_ops() {
    let mut rng = SeedRng::new(6);
    let a = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[4, 5]);
    let row = rand_t(&mut rng, &[4]);
    let same = rand_t(&mut rng, &[3, 4]);

    assert!(
        check(&a, &[3, 5], 10, |t, x| {
            let bv = t.constant(b.clone());
            t.matmul(x, bv)
        }) < TOL
    );
    assert!(
        check(&b, &[3, 5], 11, |t, x| {
            let av = t.constant(a.clone());
            t.matmul(av, x)
        }) < TOL
    );
    let bt = b.transpose().unwrap();
    assert!(
        check(&bt, &[3, 5], 12, |t, x| {
            let av = t.constant(a.clone());
            t.matmul_ex(av, x, true)
        }) < TOL
    );
    assert!(
        check(&row, &[3, 4], 13, |t, x| {
            let av = t.constant(a.clone());
            t.add(av, x)
        }) < TOL
    );
    assert!(
        check(&row, &[3, 4], 14, |t, x| {
            let av = t.constant(a.clone());
            t.sub(av, x)
        }) < TOL
    );
    assert!(
        check(&row, &[3, 4], 15, |t, x| {
            let av = t.constant(a.clone());
            t.mul(av, x)
        }) < TOL
    );
    assert!(
        check(&a, &[3, 4], 16, |t, x| {
            let sv = t.constant(same.clone());
            t.mul(x, sv)
        }) < TOL
    );
    assert!(
        check(&a, &[1], 17, |t, x| {
            let sv = t.constant(same.clone());
            t.mse(x, sv)
        }) < TOL
    );
}

#[test]
fn gradients_of_linear() {
    let mut rng = SeedRng::new(7);
    let x = rand_t(&mut rng, &[2, 3, 4]);
    let w = rand_t(&mut rng, &[5, 4]);
    let b = rand_t(&mut rng, &[5]);
    assert!(
        check(&x, &[2, 3, 5], 20, |t, xv| {
            let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
            t.linear(xv, wv, Some(bv))
        }) < TOL
    );
    assert!(
        check(&w, &[2, 3, 5], 21, |t, wv| {
            let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
            t.linear(xv, wv, Some(bv))
        }) < TOL
    );
    assert!(
        check(&b, &[2, 3, 5], 22, |t, bv| {
            let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
            t.linear(xv, wv, Some(bv))
        }) < TOL
    );
}

#[test]
fn gradients_of_unary_ops() {
    let mut rng = SeedRng::new(8);
    let x = rand_t(&mut rng, &[3, 5]);
    // keep ReLU inputs away from the kink
    let away = Tensor::new(
        &[3, 5],
        x.data()
            .iter()
            .map(|v| {
                if v.abs() < 0.1 {
                    v.signum() * 0.5 + v
                } else {
                    *v
                }
            })
            .collect(),
    )
    .unwrap();
    assert!(check(&away, &[3, 5], 30, |t, v| Ok(t.relu(v))) < TOL);
    assert!(check(&x, &[3, 5], 31, |t, v| Ok(t.square(v))) < TOL);
    assert!(check(&x, &[3, 5], 32, |t, v| Ok(t.scale(v, -2.5))) < TOL);
    assert!(check(&x, &[3, 5], 33, |t, v| t.softmax(v, 1)) < TOL);
    assert!(check(&x, &[3, 5], 34, |t, v| t.softmax(v, 0)) < TOL);
    assert!(check(&x, &[1], 35, |t, v| Ok(t.sum(v))) < TOL);
    assert!(check(&x, &[1], 36, |t, v| Ok(t.mean(v))) < TOL);
    let sq = rand_t(&mut rng, &[2, 4, 4]);
    assert!(check(&sq, &[2, 4, 4], 37, |t, v| t.causal_softmax(v)) < TOL);
    let rect = rand_t(&mut rng, &[2, 3, 5]);
    assert!(check(&rect, &[2, 3, 5], 38, |t, v| t.causal_softmax(v)) < TOL);
}

#[test]
fn gradients_of_layer_norm() {
    let mut rng = SeedRng::new(9);
    let x = rand_t(&mut rng, &[3, 6]);
    let g = rand_t(&mut rng, &[6]);
    let b = rand_t(&mut rng, &[6]);
    assert!(
        check(&x, &[3, 6], 40, |t, v| {
            let (gv, bv) = (t.constant(g.clone()), t.constant(b.clone()));
            t.layer_norm(v, gv, bv, 1, 1e-5)
        }) < TOL
    );
    assert!(
        check(&g, &[3, 6], 41, |t, gv| {
            let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
            t.layer_norm(xv, gv, bv, 1, 1e-5)
        }) < TOL
    );
    assert!(
        check(&b, &[3, 6], 42, |t, bv| {
            let (xv, gv) = (t.constant(x.clone()), t.constant(g.clone()));
            t.layer_norm(xv, gv, bv, 1, 1e-5)
        }) < TOL
    );
}

#[test]
fn gradients_of_shape_ops() {
    let mut rng = SeedRng::new(10);
    let x = rand_t(&mut rng, &[2, 3, 4]);
    assert!(check(&x, &[6, 4], 50, |t, v| t.reshape(v, &[6, 4])) < TOL);
    assert!(check(&x, &[4, 2, 3], 51, |t, v| t.permute(v, &[2, 0, 1])) < TOL);
    assert!(check(&x, &[2, 2, 4], 52, |t, v| t.narrow(v, 1, 1, 2)) < TOL);
    let other = rand_t(&mut rng, &[2, 1, 4]);
    assert!(
        check(&x, &[2, 4, 4], 53, |t, v| {
            let o = t.constant(other.clone());
            t.concat(&[o, v], 1)
        }) < TOL
    );
    let row = rand_t(&mut rng, &[3, 4]);
    assert!(check(&row, &[2, 3, 4], 54, |t, v| t.broadcast_to(v, &[2, 3, 4])) < TOL);
}

#[test]
fn frozen_params_get_no_gradient_but_pass_it_on() {
    let mut store = ParamStore::new();
    let w = store
        .add("frozen.w", Tensor::full(&[2, 2], 0.5), true)
        .unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
    let wv = tape.param(&store, w);
    let y = tape.matmul(x, wv).unwrap();
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    assert!(tape.grad(wv).is_none());
}

#[test]
fn adam_two_steps_match_hand_computation() {
    let mut store = ParamStore::new();
    let id = store
        .add("p", Tensor::new(&[2], vec![1.0, -1.0]).unwrap(), false)
        .unwrap();
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&store, cfg);
    let grads = [[0.5, -2.0], [1.0, 1.0]];
    let (mut m, mut v, mut p) = ([0.0; 2], [0.0; 2], [1.0, -1.0]);
    for (step, g) in grads.iter().enumerate() {
        store.get_mut(id).tensor.grad = Some(g.to_vec());
        adam_step(&mut store, &mut state).unwrap();
        let t = (step + 1) as i32;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            p[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        for (got, want) in store.get(id).tensor.data().iter().zip(&p) {
            assert!((got - want).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9, scale in 0.1f64..30.0) {
        let x = SeedRng::new(seed).normal_tensor(&[rows, cols], scale);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let s = tape.softmax(xv, 1).unwrap();
        for r in 0..rows {
            let row = &tape.data(s)[r * cols..(r + 1) * cols];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn permute_round_trip(seed in any::<u64>(), a in 1usize..4, b in 1usize..4, c in 1usize..4) {
        let x = SeedRng::new(seed).normal_tensor(&[a, b, c], 1.0);
        let p = x.permute(&[2, 0, 1]).unwrap();
        prop_assert_eq!(p.shape(), &[c, a, b]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        prop_assert!(back.bitwise_eq(&x));
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), n in 1usize..4, trailer in "[a-z =.\n]{0,40}") {
        let mut rng = SeedRng::new(seed);
        let entries = (0..n)
            .map(|i| {
                let shape = vec![1 + rng.below(3), 1 + rng.below(3)];
                let t = rng.normal_tensor(&shape, 1.0);
                Entry { name: format!("p{i}"), shape, frozen: i % 2 == 0, data: t.into_data() }
            })
            .collect();
        let ck = Checkpoint { entries, trailer };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), ck.to_bytes());
        prop_assert_eq!(back.trailer, ck.trailer);
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let ck = Checkpoint {
        entries: vec![Entry {
            name: "w".into(),
            shape: vec![2],
            frozen: false,
            data: vec![1.0, 2.0],
        }],
        trailer: "seed = 1\n".into(),
    };
    let bytes = ck.to_bytes();
    for cut in [4, 12, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}
