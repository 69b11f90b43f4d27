use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgraph::digraph::TimeDigraphSpec;
use tgraph::models::*;
use tgraph::numerics::{Mode, ParamStore, Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Runs a single skip block on `x` and returns its output.
fn run_skip(cfg: &SkipBlockConfig, x: &Tensor, graph: TimeDigraphSpec) -> Tensor {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let block = SkipBlock::new(&mut Init { store: &mut store, rng: &mut rng }, "b", cfg, x.shape()[2]).unwrap();
    let graphs = GraphCache::new(graph);
    let mut tape = Tape::new(Mode::Eval, 0);
    let xv = tape.constant(x.clone());
    let mut ctx = Ctx::new(&mut tape, &store, &graphs);
    let y = block.forward(&mut ctx, xv).unwrap();
    tape.value(y).clone()
}

#[test]
fn skip_block_widths() {
    let g = TimeDigraphSpec::from_lookback(128, 4);
    let x = random(&[1, 640, 1], 1);
    let one = SkipBlockConfig::tcn(vec![8], vec![16], 8);
    assert_eq!(run_skip(&one, &x, g).shape(), &[1, 640, 16]);
    let four = SkipBlockConfig::gnn(vec![8; 4], vec![16; 4]);
    assert_eq!(run_skip(&four, &x, g).shape(), &[1, 640, 64]);
    assert_eq!(SkipBlockConfig::tcn(vec![4; 3], vec![4; 3], 7).dilations, vec![1, 2, 4]);
}

#[test]
fn skip_block_rejects_inconsistent_config() {
    let mut cfg = SkipBlockConfig::tcn(vec![4; 3], vec![4; 2], 7);
    assert!(cfg.validate().is_err());
    cfg.skip_dims.push(4);
    cfg.dilations = vec![1, 4, 2];
    assert!(cfg.validate().is_err());
}

#[test]
fn tcn_stack_is_causal() {
    let mut cfg = SkipBlockConfig::tcn(vec![3; 5], vec![2; 5], 3);
    assert_eq!(cfg.dilations, vec![1, 2, 4, 8, 16]);
    cfg.dropout = 0.0;
    let g = TimeDigraphSpec::series(1, 1);
    let x = random(&[2, 100, 2], 5);
    let base = run_skip(&cfg, &x, g);
    for t0 in [0usize, 17, 50, 99] {
        let mut xp = x.clone();
        for b in 0..2 {
            for c in 0..2 {
                xp.data_mut()[(b * 100 + t0) * 2 + c] += 10.0;
            }
        }
        let y = run_skip(&cfg, &xp, g);
        let ch = y.shape()[2];
        for b in 0..2 {
            for t in 0..100 {
                for c in 0..ch {
                    let i = (b * 100 + t) * ch + c;
                    if t < t0 {
                        assert_eq!(y.data()[i], base.data()[i], "future leak at t={t}, t0={t0}");
                    }
                }
            }
            // the perturbation is visible at t0 itself
            let at = (b * 100 + t0) * ch;
            assert!((0..ch).any(|c| y.data()[at + c] != base.data()[at + c]));
        }
    }
}

#[test]
fn every_preset_builds_with_the_expected_shapes() {
    for name in MODEL_NAMES {
        let cfg = preset(name).unwrap();
        let model = Model::new(cfg.clone(), 1).unwrap();
        let len = cfg.window_len;
        let x = random(&[2, len, 1], 2);
        // rebuild the encoder alone to check its compression
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(&mut Init { store: &mut store, rng: &mut rng }, cfg.encoder()).unwrap();
        let graphs = GraphCache::new(cfg.graph);
        let mut tape = Tape::new(Mode::Eval, 0);
        let xv = tape.constant(x.clone());
        let mut ctx = Ctx::new(&mut tape, &store, &graphs);
        let z = enc.forward(&mut ctx, xv).unwrap();
        let enc_cfg = cfg.encoder();
        assert_eq!(
            tape.value(z).shape(),
            &[2, len / enc_cfg.shrink, enc_cfg.out_channels()],
            "{name}"
        );
        if model.is_autoencoder() {
            assert_eq!(len, 128);
            let y = model.reconstruct(&x).unwrap();
            assert_eq!(y.shape(), &[2, 128, 1], "{name}");
            assert!(y.is_finite());
        } else {
            let p = model.predict_proba(&x).unwrap();
            assert_eq!(p.shape(), &[2, 2]);
            for row in p.data().chunks(2) {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
    assert!(preset("NoSuchModel").is_err());
}

#[test]
fn encoder_shrink_must_divide_length() {
    let cfg = preset("TCNAE1").unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder::new(&mut Init { store: &mut store, rng: &mut rng }, cfg.encoder()).unwrap();
    let graphs = GraphCache::new(cfg.graph);
    let mut tape = Tape::new(Mode::Eval, 0);
    let xv = tape.constant(random(&[1, 100, 1], 0));
    let mut ctx = Ctx::new(&mut tape, &store, &graphs);
    assert!(enc.forward(&mut ctx, xv).is_err());
}

fn small_classifier(readout: Readout, mlp_dims: Vec<usize>) -> ModelConfig {
    ModelConfig {
        version: CONFIG_VERSION,
        name: "toy".into(),
        window_len: 32,
        graph: TimeDigraphSpec::series(1, 4),
        architecture: Architecture::Classifier(ClassifierConfig {
            encoder: EncoderConfig {
                input_channels: 1,
                skip: SkipBlockConfig::tcn(vec![4, 4], vec![3, 3], 3),
                post_gconvs: None,
                bottleneck: Some(BottleneckConfig {
                    channels: 5,
                    kernel_size: 1,
                }),
                downsample: Downsample::Avg,
                shrink: 4,
            },
            readout,
            mlp_dims,
            num_classes: 2,
        }),
    }
}

#[test]
fn readout_widths_set_the_head_size() {
    // head: one linear layer from the readout width to 2 classes
    let base = count_params(&small_classifier(Readout::MeanPool, vec![])).unwrap() - (5 * 2 + 2);
    let flat = count_params(&small_classifier(Readout::Flatten, vec![])).unwrap();
    assert_eq!(flat - base, 8 * 5 * 2 + 2);
    let mlp = count_params(&small_classifier(Readout::MeanPool, vec![7])).unwrap();
    assert_eq!(mlp - base, 5 * 7 + 7 + 7 * 2 + 2);
}

#[test]
fn pointwise_conv_parameter_count() {
    let mut store = ParamStore::new();
    assert_eq!(store.count_scalars(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Conv::pointwise(&mut Init { store: &mut store, rng: &mut rng }, "c", 2, 3);
    assert_eq!(store.count_scalars(), 9);
}

#[test]
fn graph_classifier_is_less_than_half_the_tcn_classifier() {
    let g = count_params(&preset("TGraphClassifier").unwrap()).unwrap();
    let t = count_params(&preset("TCNClassifier").unwrap()).unwrap();
    assert!(2 * g < t, "{g} vs {t}");
}

#[test]
fn zero_weight_autoencoder_outputs_its_final_bias() {
    let mut model = Model::new(preset("TGraphAE").unwrap(), 0).unwrap();
    let ids: Vec<_> = model.store.trainable_ids().collect();
    for id in ids {
        let name = model.store.entry(id).name.clone();
        let fill = if name == "decoder.out.bias" { 0.375 } else { 0.0 };
        model.store.value_mut(id).data_mut().fill(fill);
    }
    let y = model.reconstruct(&random(&[3, 128, 1], 9)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.375));
}

#[test]
fn gradients_match_finite_differences_for_every_preset() {
    for name in MODEL_NAMES {
        let cfg = preset(name).unwrap();
        let mut model = Model::new(cfg.clone(), 11).unwrap();
        let x = random(&[2, cfg.window_len, 1], 12);
        let labels = (!model.is_autoencoder()).then_some(&[0usize, 1][..]);
        let r = check_param_gradients(&mut model, &x, labels, Mode::Train, 2, 1e-6, 13).unwrap();
        assert!(r.max_rel_error <= 1e-5, "{name}: {r:?}");
        assert!(r.checked > 0);
        assert!(r.dead.is_empty(), "{name}: no gradient reaches {:?}", r.dead);
    }
}

fn sinusoids(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let f = rng.gen_range(1.0..4.0);
            let p = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..len)
                .map(|t| 0.5 + 0.4 * (f * std::f64::consts::TAU * t as f64 / len as f64 + p).sin())
                .collect()
        })
        .collect()
}

#[test]
fn training_is_deterministic() {
    let cfg = preset("TCNAE1").unwrap();
    let data = sinusoids(24, 128, 1);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 8,
        lr: 1e-3,
        seed: 4,
    };
    let run = || {
        let mut m = Model::new(cfg.clone(), 4).unwrap();
        let h = train(&mut m, &data, None, &tc).unwrap();
        (h, encode_params(&m).0)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert!(h1.epoch_loss.iter().all(|l| l.is_finite()));
}

#[test]
fn zero_learning_rate_keeps_trainable_parameters() {
    let cfg = small_classifier(Readout::MeanPool, vec![]);
    let mut m = Model::new(cfg, 0).unwrap();
    let before: Vec<Vec<f64>> = m.store.trainable_ids().map(|id| m.store.value(id).data().to_vec()).collect();
    let data = sinusoids(10, 32, 2);
    let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 4,
        lr: 0.0,
        seed: 0,
    };
    train(&mut m, &data, Some(&labels), &tc).unwrap();
    let after: Vec<Vec<f64>> = m.store.trainable_ids().map(|id| m.store.value(id).data().to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn classifier_fits_separable_toy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..64 {
        let y = i % 2;
        let level = if y == 1 { 0.7 } else { 0.3 };
        data.push((0..32).map(|_| level + rng.gen_range(-0.1..0.1)).collect::<Vec<f64>>());
        labels.push(y);
    }
    let mut m = Model::new(small_classifier(Readout::MeanPool, vec![8]), 1).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 16,
        lr: 1e-2,
        seed: 1,
    };
    let mut acc = 0.0;
    for _ in 0..tc.epochs / 20 {
        train(&mut m, &data, Some(&labels), &TrainConfig { epochs: 20, ..tc.clone() }).unwrap();
        let pred = predict_classes(&m, &data, 32).unwrap();
        acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64;
        if acc >= 0.99 {
            break;
        }
    }
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn autoencoder_learns_smooth_signals() {
    let data = sinusoids(48, 128, 3);
    let mut m = Model::new(preset("TCNAE1").unwrap(), 2).unwrap();
    let tc = TrainConfig {
        epochs: 50,
        batch_size: 16,
        lr: 1e-3,
        seed: 2,
    };
    let h = train(&mut m, &data, None, &tc).unwrap();
    let (first, last) = (h.epoch_loss[0], *h.epoch_loss.last().unwrap());
    assert!(last <= 0.5 * first, "loss {first} -> {last}");

    // reconstruction beats a white-noise guess with the signal's spread
    let rec = reconstruct_windows(&m, &data, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut err, mut noise, mut n) = (0.0, 0.0, 0.0);
    for (x, y) in data.iter().zip(&rec) {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        for (a, b) in x.iter().zip(y) {
            err += (a - b).powi(2);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            noise += (a - (mean + sd * z)).powi(2);
            n += 1.0;
        }
    }
    assert!(err / n < noise / n, "{} vs {}", err / n, noise / n);
}

#[test]
fn nonfinite_inputs_abort_training() {
    let mut m = Model::new(preset("TCNAE1").unwrap(), 0).unwrap();
    let mut data = sinusoids(4, 128, 0);
    data[2][5] = f64::NAN;
    let err = train(&mut m, &data, None, &TrainConfig::default()).unwrap_err();
    assert!(err.to_string().contains("loss"), "{err}");
}

#[test]
fn save_and_load_round_trip_bit_exactly() {
    let cfg = preset("TGraphMixedAE").unwrap();
    let mut m = Model::new(cfg, 6).unwrap();
    train(
        &mut m,
        &sinusoids(8, 128, 6),
        None,
        &TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    let back = load_model(dir.path()).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(encode_params(&back), encode_params(&m));
    let x = random(&[2, 128, 1], 0);
    assert_eq!(back.reconstruct(&x).unwrap(), m.reconstruct(&x).unwrap());
}

#[test]
fn load_rejects_mismatched_manifest() {
    let m = Model::new(preset("TCNAE1").unwrap(), 0).unwrap();
    let (bytes, mut manifest) = encode_params(&m);
    assert!(decode_params(m.config().clone(), &bytes[..bytes.len() - 8], &manifest).is_err());
    manifest.entries[0].shape = vec![1];
    assert!(decode_params(m.config().clone(), &bytes, &manifest).is_err());
}
