//! Tape gradients of every differentiable op against central differences.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgraph::digraph::{Alpha, Digraph};
use tgraph::gconv::{aggregation_matrix, attention_pattern, Normalization};
use tgraph::numerics::{
    finite_diff_check_with, GradCheckOptions, HeadMerge, Mode, PoolKind, Tape, Tensor, Var,
};
use tgraph::Result;

const TOL: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Mean squared distance to a fixed random target, so every output
/// coordinate gets a distinct upstream gradient.
fn loss_against(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let target = random(tape.value(y).shape(), seed);
    let t = tape.constant(target);
    tape.mse(y, t)
}

fn check<F>(x: Tensor, mode: Mode, f: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let opts = GradCheckOptions {
        mode,
        seed: 5,
        ..Default::default()
    };
    let report = finite_diff_check_with(f, &x, &opts).unwrap();
    assert!(report.checked > 0, "no smooth coordinates");
    assert!(report.max_rel_error < TOL, "max rel error {}", report.max_rel_error);
}

#[test]
fn conv1d_input_and_kernel() {
    for causal in [false, true] {
        let w = random(&[3, 2, 3], 1);
        let b = random(&[3], 2);
        check(random(&[2, 9, 2], 3), Mode::Eval, |t, x| {
            let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv1d(x, wv, Some(bv), 2, causal)?;
            loss_against(t, y, 4)
        });
        let x = random(&[2, 9, 2], 3);
        check(w.clone(), Mode::Eval, |t, wv| {
            let xv = t.constant(x.clone());
            let bv = t.constant(b.clone());
            let y = t.conv1d(xv, wv, Some(bv), 2, causal)?;
            loss_against(t, y, 4)
        });
        check(b.clone(), Mode::Eval, |t, bv| {
            let xv = t.constant(x.clone());
            let wv = t.constant(w.clone());
            let y = t.conv1d(xv, wv, Some(bv), 2, causal)?;
            loss_against(t, y, 4)
        });
    }
}

#[test]
fn silu_add_scale_bias() {
    let b = random(&[3], 9);
    check(random(&[2, 4, 3], 8), Mode::Eval, |t, x| {
        let s = t.silu(x);
        let s = t.scale(s, -1.7);
        let y = t.add(s, x)?;
        let bv = t.constant(b.clone());
        let y = t.add_bias(y, bv)?;
        loss_against(t, y, 10)
    });
    let x = random(&[2, 4, 3], 8);
    check(b, Mode::Eval, |t, bv| {
        let xv = t.constant(x.clone());
        let y = t.add_bias(xv, bv)?;
        loss_against(t, y, 10)
    });
}

#[test]
fn sparse_aggregation() {
    let g = Digraph::weighted(5, vec![(0, 1), (1, 2), (0, 3), (3, 4), (4, 0), (2, 2)], vec![0.5, 2.0, -1.0, 1.5, 0.3, 0.7])
        .unwrap();
    for alpha in Alpha::ALL {
        let mat = Arc::new(aggregation_matrix(&g, alpha, Normalization::Mean, false).unwrap());
        check(random(&[3, 5, 2], 12), Mode::Eval, |t, x| {
            let y = t.aggregate(x, mat.clone())?;
            loss_against(t, y, 13)
        });
    }
}

#[test]
fn attention_inputs_and_vectors() {
    let g = Digraph::new(5, vec![(0, 1), (1, 2), (0, 3), (3, 4), (4, 0), (2, 4)]).unwrap();
    let pattern = Arc::new(attention_pattern(&g, Alpha::U));
    for merge in [HeadMerge::Concat, HeadMerge::Average] {
        let a_src = random(&[6], 20);
        let a_dst = random(&[6], 21);
        let z = random(&[2, 5, 6], 22);
        let run = |t: &mut Tape, z: Var, s: Var, d: Var| -> Result<Var> {
            let y = t.attention(z, s, d, pattern.clone(), 2, merge, 0.2)?;
            loss_against(t, y, 23)
        };
        check(z.clone(), Mode::Eval, |t, zv| {
            let (s, d) = (t.constant(a_src.clone()), t.constant(a_dst.clone()));
            run(t, zv, s, d)
        });
        check(a_src.clone(), Mode::Eval, |t, s| {
            let (zv, d) = (t.constant(z.clone()), t.constant(a_dst.clone()));
            run(t, zv, s, d)
        });
        check(a_dst.clone(), Mode::Eval, |t, d| {
            let (zv, s) = (t.constant(z.clone()), t.constant(a_src.clone()));
            run(t, zv, s, d)
        });
    }
}

#[test]
fn batch_norm_train_and_eval() {
    let gamma = random(&[3], 30);
    let beta = random(&[3], 31);
    let (rm, rv) = (vec![0.1, -0.2, 0.3], vec![1.5, 0.5, 2.0]);
    for mode in [Mode::Train, Mode::Eval] {
        check(random(&[2, 5, 3], 32), mode, |t, x| {
            let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
            let (y, _) = t.batch_norm(x, g, b, (&rm, &rv), 1e-5)?;
            loss_against(t, y, 33)
        });
        let x = random(&[2, 5, 3], 32);
        check(gamma.clone(), mode, |t, g| {
            let xv = t.constant(x.clone());
            let b = t.constant(beta.clone());
            let (y, _) = t.batch_norm(xv, g, b, (&rm, &rv), 1e-5)?;
            loss_against(t, y, 33)
        });
    }
}

#[test]
fn dropout_in_train_mode() {
    check(random(&[2, 6, 2], 40), Mode::Train, |t, x| {
        let y = t.dropout(x, 0.3)?;
        loss_against(t, y, 41)
    });
}

#[test]
fn pooling_upsampling_and_means() {
    for kind in [PoolKind::Avg, PoolKind::Max] {
        check(random(&[2, 8, 3], 50), Mode::Eval, |t, x| {
            let y = t.pool(x, 4, kind)?;
            loss_against(t, y, 51)
        });
    }
    check(random(&[2, 3, 2], 52), Mode::Eval, |t, x| {
        let y = t.upsample(x, 3)?;
        let y = t.mean_nodes(y)?;
        loss_against(t, y, 53)
    });
}

#[test]
fn concat_reshape_softmax() {
    let other = random(&[2, 4, 1], 60);
    check(random(&[2, 4, 3], 61), Mode::Eval, |t, x| {
        let o = t.constant(other.clone());
        let y = t.concat(&[o, x, x])?;
        let y = t.reshape(y, vec![2, 28])?;
        let y = t.reshape(y, vec![2, 4, 7])?;
        let y = t.softmax(y);
        loss_against(t, y, 62)
    });
}

#[test]
fn classification_and_regression_losses() {
    check(random(&[5, 4], 70), Mode::Eval, |t, x| t.cross_entropy(x, &[0, 3, 1, 1, 2]));
    let target = random(&[3, 2], 71);
    check(random(&[3, 2], 72), Mode::Eval, |t, x| {
        let tv = t.constant(target.clone());
        let s = t.sum(x);
        let m = t.mse(tv, x)?;
        t.add(s, m)
    });
}
