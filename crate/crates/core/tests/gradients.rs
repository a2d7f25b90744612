//! Independent oracles for the tape: naive sliding-window convolution,
//! hand-rolled dense loops, and central finite differences.

use proptest::prelude::*;
use specxplain::model::{Architecture, Mode};
use specxplain::{NodeId, Rng, Tape, Tensor};

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

/// out[i,j,f] = b[f] + Σ_{di,dj,c} k[f,di,dj,c] · x[i+di-p, j+dj-p, c]
fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, ks) = (k.shape()[0], k.shape()[1]);
    let p = (ks / 2) as isize;
    let mut out = vec![0.0; h * w * f];
    for i in 0..h {
        for j in 0..w {
            for ff in 0..f {
                let mut acc = b.data()[ff];
                for di in 0..ks {
                    for dj in 0..ks {
                        let ii = i as isize + di as isize - p;
                        let jj = j as isize + dj as isize - p;
                        if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                            continue;
                        }
                        for cc in 0..c {
                            let kv = k.data()[((ff * ks + di) * ks + dj) * c + cc];
                            acc += kv * x.at3(ii as usize, jj as usize, cc);
                        }
                    }
                }
                out[(i * w + j) * f + ff] = acc;
            }
        }
    }
    out
}

fn conv_on_tape(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut tape = Tape::new();
    let (xn, kn, bn) = (
        tape.leaf(x.clone()),
        tape.leaf(k.clone()),
        tape.leaf(b.clone()),
    );
    let y = tape.conv2d(xn, kn, bn).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn conv_matches_naive_oracle_5x5x2() {
    check_conv_matches_naive_oracle_5x5x2();
}

pub fn check_conv_matches_naive_oracle_5x5x2() {
    let mut rng = Rng::seeded(11);
    let x = random(&[5, 5, 2], &mut rng);
    let k = random(&[3, 3, 3, 2], &mut rng);
    let b = random(&[3], &mut rng);
    for (a, e) in conv_on_tape(&x, &k, &b).iter().zip(naive_conv(&x, &k, &b)) {
        assert!((a - e).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_naive_oracle_up_to_7x7x3(
        h in 1usize..=7, w in 1usize..=7, c in 1usize..=3, f in 1usize..=4,
        ks in prop_oneof![Just(1usize), Just(3), Just(5)], seed in any::<u64>(),
    ) {
        let mut rng = Rng::seeded(seed);
        let x = random(&[h, w, c], &mut rng);
        let k = random(&[f, ks, ks, c], &mut rng);
        let b = random(&[f], &mut rng);
        for (a, e) in conv_on_tape(&x, &k, &b).iter().zip(naive_conv(&x, &k, &b)) {
            prop_assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-15.0f64..15.0, 1..10)) {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_vec(logits));
        let p = tape.softmax(z);
        let d = tape.value(p).data();
        prop_assert!(d.iter().all(|&v| v > 0.0 && v < 1.0 || d.len() == 1));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pool_backward_deposits_all_mass_at_argmax(
        h in 2usize..=6, w in 2usize..=6, c in 1usize..=3, seed in any::<u64>(),
    ) {
        let mut rng = Rng::seeded(seed);
        let x = random(&[h, w, c], &mut rng).with_grad(true);
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let y = tape.maxpool2d(xn).unwrap();
        let up: Vec<f64> = (0..tape.value(y).numel()).map(|_| rng.uniform()).collect();
        let s = tape.weighted_sum(y, up.clone()).unwrap();
        let g = tape.backward(s).unwrap();
        let gx = g.get(xn).unwrap();
        prop_assert!((gx.data().iter().sum::<f64>() - up.iter().sum::<f64>()).abs() < 1e-12);
        // Nonzero gradient only where the input equals its window maximum.
        let pooled = tape.value(y);
        for i in 0..h / 2 * 2 {
            for j in 0..w / 2 * 2 {
                for ch in 0..c {
                    let gv = gx.at3(i, j, ch);
                    if gv != 0.0 {
                        prop_assert_eq!(x.at3(i, j, ch), pooled.at3(i / 2, j / 2, ch));
                    }
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic_under_seed(seed in any::<u64>()) {
        let model = Architecture::for_input(8, 8, 0.3).build(&mut Rng::seeded(seed)).unwrap();
        let x = random(&[8, 8, 3], &mut Rng::seeded(seed ^ 1));
        let a = model.forward(&x, Mode::Training(&mut Rng::seeded(seed))).unwrap();
        let b = model.forward(&x, Mode::Training(&mut Rng::seeded(seed))).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }
}

#[test]
fn dense_matches_loop_oracle() {
    check_dense_matches_loop_oracle();
}

pub fn check_dense_matches_loop_oracle() {
    let mut rng = Rng::seeded(5);
    let x = random(&[8], &mut rng);
    let w = random(&[4, 8], &mut rng);
    let b = random(&[4], &mut rng);
    let mut tape = Tape::new();
    let (xn, wn, bn) = (
        tape.leaf(x.clone()),
        tape.leaf(w.clone()),
        tape.leaf(b.clone()),
    );
    let y = tape.dense(xn, wn, bn).unwrap();
    for m in 0..4 {
        let mut acc = b.data()[m];
        for n in 0..8 {
            acc += w.data()[m * 8 + n] * x.data()[n];
        }
        assert!((tape.value(y).data()[m] - acc).abs() < 1e-12);
    }
}

/// Relative error ‖a − b‖ / max(‖a‖, ‖b‖, 1e-12).
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Checks the tape gradient of `build(inputs) -> scalar` against central
/// differences with h = 1e-5 for every input leaf.
fn check_op(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[NodeId]) -> NodeId) {
    const H: f64 = 1e-5;
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = build(&mut tape, &ids);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|v| tape.leaf(v.clone().with_grad(true)))
        .collect();
    let out = build(&mut tape, &ids);
    let grads = tape.backward(out).unwrap();
    for (slot, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).unwrap().data().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for e in 0..inputs[slot].numel() {
            let mut plus = inputs.clone();
            plus[slot].data_mut()[e] += H;
            let mut minus = inputs.clone();
            minus[slot].data_mut()[e] -= H;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * H));
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "input {slot}: relative error {err}");
    }
}

fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::seeded(seed);
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

#[test]
fn finite_differences_conv() {
    check_finite_differences_conv();
}

pub fn check_finite_differences_conv() {
    let mut rng = Rng::seeded(1);
    let inputs = vec![
        random(&[5, 6, 2], &mut rng),
        random(&[3, 3, 3, 2], &mut rng),
        random(&[3], &mut rng),
    ];
    check_op(inputs, |t, ids| {
        let y = t.conv2d(ids[0], ids[1], ids[2]).unwrap();
        t.weighted_sum(y, projection(5 * 6 * 3, 2)).unwrap()
    });
}

#[test]
fn finite_differences_pool_relu_dense_softmax_ce() {
    check_finite_differences_pool_relu_dense_softmax_ce();
}

pub fn check_finite_differences_pool_relu_dense_softmax_ce() {
    let mut rng = Rng::seeded(3);
    check_op(vec![random(&[4, 6, 2], &mut rng)], |t, ids| {
        let y = t.maxpool2d(ids[0]).unwrap();
        t.weighted_sum(y, projection(12, 4)).unwrap()
    });
    check_op(vec![random(&[20], &mut rng)], |t, ids| {
        let y = t.relu(ids[0]);
        t.weighted_sum(y, projection(20, 5)).unwrap()
    });
    check_op(
        vec![
            random(&[7], &mut rng),
            random(&[3, 7], &mut rng),
            random(&[3], &mut rng),
        ],
        |t, ids| {
            let y = t.dense(ids[0], ids[1], ids[2]).unwrap();
            t.weighted_sum(y, projection(3, 6)).unwrap()
        },
    );
    check_op(vec![random(&[4], &mut rng)], |t, ids| {
        let y = t.softmax(ids[0]);
        t.weighted_sum(y, projection(4, 7)).unwrap()
    });
    check_op(vec![random(&[3], &mut rng)], |t, ids| {
        let p = t.softmax(ids[0]);
        t.sparse_cross_entropy(p, 2).unwrap()
    });
    check_op(vec![random(&[3, 4, 2], &mut rng)], |t, ids| {
        let f = t.flatten(ids[0]);
        t.weighted_sum(f, projection(24, 8)).unwrap()
    });
    check_op(vec![random(&[3, 4, 2], &mut rng)], |t, ids| {
        t.channel_mean(ids[0], 1).unwrap()
    });
}

#[test]
fn finite_differences_dropout_with_fixed_mask() {
    check_finite_differences_dropout_with_fixed_mask();
}

pub fn check_finite_differences_dropout_with_fixed_mask() {
    let mut rng = Rng::seeded(9);
    check_op(vec![random(&[30], &mut rng)], |t, ids| {
        let y = t.dropout(ids[0], 0.4, true, &mut Rng::seeded(77)).unwrap();
        t.weighted_sum(y, projection(30, 10)).unwrap()
    });
}

#[test]
fn composite_chain_matches_finite_differences() {
    check_composite_chain_matches_finite_differences();
}

pub fn check_composite_chain_matches_finite_differences() {
    let mut rng = Rng::seeded(21);
    let inputs = vec![
        random(&[6, 6, 2], &mut rng),
        random(&[3, 3, 3, 2], &mut rng),
        random(&[3], &mut rng),
        random(&[2, 27], &mut rng),
        random(&[2], &mut rng),
    ];
    check_op(inputs, |t, ids| {
        let c = t.conv2d(ids[0], ids[1], ids[2]).unwrap();
        let r = t.relu(c);
        let p = t.maxpool2d(r).unwrap();
        let f = t.flatten(p);
        let d = t.dense(f, ids[3], ids[4]).unwrap();
        let s = t.softmax(d);
        t.sparse_cross_entropy(s, 0).unwrap()
    });
}

/// Reduced 16×20×3 clone of the full network; parameter gradients are
/// checked against central differences on a random subset of entries.
#[test]
fn full_model_gradient_reduced_geometry() {
    check_full_model_gradient_reduced_geometry();
}

pub fn check_full_model_gradient_reduced_geometry() {
    const H: f64 = 1e-5;
    let model = Architecture::for_input(16, 20, 0.2)
        .build(&mut Rng::seeded(31))
        .unwrap();
    let x = random(&[16, 20, 3], &mut Rng::seeded(32));
    let label = 1;
    let dropout_seed = 99;
    let loss_of = |m: &specxplain::CnnModel| -> f64 {
        let mut rng = Rng::seeded(dropout_seed);
        m.loss_and_grads(&x, label, Mode::Training(&mut rng))
            .unwrap()
            .0
    };
    let (_, grads) = model
        .loss_and_grads(&x, label, Mode::Training(&mut Rng::seeded(dropout_seed)))
        .unwrap();

    let mut pick = Rng::seeded(33);
    for (slot, g) in grads.iter().enumerate() {
        let n = g.numel();
        let entries: Vec<usize> = (0..n.min(40))
            .map(|_| (pick.uniform() * n as f64) as usize)
            .collect();
        let mut numeric = Vec::new();
        let mut analytic = Vec::new();
        for &e in &entries {
            let mut plus = model.clone();
            plus.parameters_mut()[slot].data_mut()[e] += H;
            let mut minus = model.clone();
            minus.parameters_mut()[slot].data_mut()[e] -= H;
            numeric.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * H));
            analytic.push(g.data()[e]);
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-3, "parameter tensor {slot}: relative error {err}");
    }
}
