use msms_core::corpus::inventory::{COMMA, PERIOD, WORD_BOUNDARY};
use msms_core::corpus::ProsodyTrack;
use msms_core::model::*;
use msms_core::tensor::gradcheck::{gradcheck, worst, GradCheckOptions};
use msms_core::{Error, Graph, ParamStore, Session, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape_of(store: &ParamStore<f32>, name: &str) -> Vec<usize> {
    let id = store.find(name).unwrap_or_else(|| panic!("missing {name}"));
    store.get(id).shape().to_vec()
}

fn tokens() -> Vec<u8> {
    vec![16, 0, 31, WORD_BOUNDARY, 20, 5, 33, COMMA, 24, 3, 9, PERIOD]
}

fn track(tokens: &[u8], seed: u64) -> ProsodyTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProsodyTrack {
        durations: tokens.iter().map(|_| rng.random_range(1..5)).collect(),
        pitch: tokens
            .iter()
            .map(|&t| if msms_core::corpus::inventory::is_voiced(t) { rng.random_range(90.0..250.0) } else { 0.0 })
            .collect(),
        energy: tokens.iter().map(|_| rng.random_range(0.001..0.2)).collect(),
    }
}

fn mini_config() -> ModelConfig {
    ModelConfig {
        encoder_layers: 1,
        d_model: 16,
        encoder_conv_filters: 24,
        decoder_blocks: 1,
        decoder_filters: 16,
        predictor_filters: 12,
        ..ModelConfig::default()
    }
}

#[test]
fn full_size_parameter_audit() {
    let cfg = ModelConfig::default();
    let mut store = ParamStore::<f32>::new();
    let model = AcousticModel::new(cfg.clone(), &mut store, 0).unwrap();
    assert!(model.is_conditioned());
    assert_eq!(shape_of(&store, "encoder.embedding"), [45, 256]);
    for l in 0..4 {
        assert_eq!(shape_of(&store, &format!("encoder.layer{l}.attention.query.weight")), [256, 256]);
        assert_eq!(shape_of(&store, &format!("encoder.layer{l}.conv1.weight")), [9, 256, 1024]);
        assert_eq!(shape_of(&store, &format!("encoder.layer{l}.conv2.weight")), [9, 1024, 256]);
        assert_eq!(shape_of(&store, &format!("encoder.layer{l}.norm2.gamma")), [256]);
    }
    assert!(store.find("encoder.layer4.conv1.weight").is_none());
    assert_eq!(cfg.attention_heads, 2);
    for p in ["duration", "pitch", "energy"] {
        assert_eq!(shape_of(&store, &format!("variance.{p}.conv1.weight")), [3, 256, 256]);
        assert_eq!(shape_of(&store, &format!("variance.{p}.conv2.weight")), [3, 256, 256]);
        assert_eq!(shape_of(&store, &format!("variance.{p}.output.weight")), [256, 1]);
    }
    let dilations = [1, 2, 4, 8, 16, 32];
    for b in 0..2 {
        for (l, _) in dilations.iter().enumerate() {
            assert_eq!(shape_of(&store, &format!("decoder.block{b}.conv{l}.weight")), [3, 256, 256]);
        }
        assert!(store.find(&format!("decoder.block{b}.conv6.weight")).is_none());
    }
    assert!(store.find("decoder.block2.conv0.weight").is_none());
    assert_eq!(cfg.decoder_dilations, dilations);
    assert_eq!(shape_of(&store, "decoder.output.weight"), [256, 80]);
    assert_eq!(shape_of(&store, "cond.variance.weight"), [128, 256]);
    assert_eq!(shape_of(&store, "cond.decoder.weight"), [128, 256]);
    assert_eq!(cfg.receptive_field(), 253);
}

#[test]
fn receptive_field_matches_impulse_response() {
    // A change to one input frame reaches exactly receptive_field frames of output.
    let cfg = ModelConfig { decoder_filters: 8, d_model: 8, mel_bins: 4, dropout: 0.0, ..mini_config() };
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dec = DilatedDecoder::new(&mut store, "decoder", &ModelConfig { decoder_blocks: 2, ..cfg.clone() }, &mut rng).unwrap();
    let t = 400;
    let run = |x: Tensor<f64>| {
        let mut sess = Session::inference(&store);
        let v = sess.graph.constant(x);
        let y = dec.forward(&mut sess, v).unwrap();
        sess.graph.value(y).clone()
    };
    let base = Tensor::zeros(&[t, 8]);
    let mut bumped = base.clone();
    for j in 0..8 {
        bumped.data_mut()[200 * 8 + j] = 1.0;
    }
    let (a, b) = (run(base), run(bumped));
    let changed: Vec<usize> = (0..t).filter(|&i| a.row(i).iter().zip(b.row(i)).any(|(x, y)| x != y)).collect();
    assert_eq!(changed.len(), 253);
    assert_eq!(changed[0], 200 - 126);
}

#[test]
fn config_validation() {
    assert!(ModelConfig { d_model: 255, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { decoder_dilations: vec![], ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { encoder_layers: 0, ..ModelConfig::default() }.validate().is_err());
    ModelConfig::desk().validate().unwrap();
}

#[test]
fn unconditioned_model_has_no_conditioning_parameters() {
    let mut store = ParamStore::<f32>::new();
    let m = AcousticModel::new(ModelConfig::desk().unconditioned(), &mut store, 0).unwrap();
    assert!(!m.is_conditioned());
    assert!(store.iter().all(|(n, _)| !n.starts_with("cond.")));
}

#[test]
fn encoder_shapes_and_positions() {
    let mut store = ParamStore::<f32>::new();
    let m = AcousticModel::new(ModelConfig::default(), &mut store, 0).unwrap();
    let mut sess = Session::inference(&store);
    let y = m.encode(&mut sess, &tokens()).unwrap();
    assert_eq!(sess.graph.value(y).shape(), &[12, 256]);
    assert!(matches!(m.encode(&mut sess, &[0, 45]), Err(Error::OutOfRange { .. })));
    assert!(m.encode(&mut sess, &[]).is_err());

    let pos = msms_core::tensor::nn::sinusoidal_positions::<f64>(3, 8);
    assert_eq!(pos.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn encoder_is_sensitive_to_distant_order() {
    let mut store = ParamStore::<f64>::new();
    let m = AcousticModel::new(ModelConfig::desk(), &mut store, 3).unwrap();
    let a = tokens();
    let mut b = a.clone();
    b.swap(0, 10);
    let mut sess = Session::inference(&store);
    let ya = m.encode(&mut sess, &a).unwrap();
    let yb = m.encode(&mut sess, &b).unwrap();
    // Row 5 holds the same phoneme in both orders; attention must still see the swap.
    let diff: f64 = sess.graph.value(ya).row(5).iter().zip(sess.graph.value(yb).row(5)).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-6, "{diff}");
}

#[test]
fn conditioning_one_hot() {
    let cfg = ModelConfig::default();
    let v = ConditioningInput::new(2, 0).one_hot(&cfg).unwrap();
    assert_eq!(v.len(), 128);
    let ones: Vec<usize> = v.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect();
    assert_eq!(ones, [2, 64]);
    assert_eq!(v.iter().sum::<f64>(), 2.0);
    assert!(matches!(ConditioningInput::new(64, 0).one_hot(&cfg), Err(Error::OutOfRange { .. })));
    assert!(ConditioningInput::new(0, 64).validate(&cfg).is_err());
}

#[test]
fn zero_projection_adds_constant_bias_row() {
    let mut store = ParamStore::<f64>::new();
    let m = AcousticModel::new(ModelConfig::desk(), &mut store, 0).unwrap();
    let bias = store.find("cond.decoder.bias").unwrap();
    for (i, v) in store.get_mut(bias).data_mut().iter_mut().enumerate() {
        *v = i as f64 * 0.5 - 3.0;
    }
    let mut sess = Session::inference(&store);
    for c in [ConditioningInput::new(0, 0), ConditioningInput::new(6, 1), ConditioningInput::new(63, 63)] {
        let e = m.condition_embedding(&mut sess, &c, 5, true).unwrap();
        let t = sess.graph.value(e);
        assert_eq!(t.shape(), &[5, 32]);
        for r in 0..5 {
            let expect: Vec<f64> = (0..32).map(|i| i as f64 * 0.5 - 3.0).collect();
            assert_eq!(t.row(r), &expect[..]);
        }
    }
    let e = m.condition_embedding(&mut sess, &ConditioningInput::new(1, 1), 3, false).unwrap();
    assert!(sess.graph.value(e).data().iter().all(|&v| v == 0.0));
}

#[test]
fn length_regulator_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
    let y = length_regulate(&mut g, x, &[2, 1, 3]).unwrap();
    assert_eq!(g.value(y).shape(), &[6, 2]);
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 5.0, 6.0, 5.0, 6.0]);
    let id = length_regulate(&mut g, x, &[1, 1, 1]).unwrap();
    assert_eq!(g.value(id), g.value(x));
    assert!(matches!(length_regulate(&mut g, x, &[1, 1]), Err(Error::Shape { .. })));
    assert!(length_regulate(&mut g, x, &[1, 0, 1]).is_err());
}

#[test]
fn duration_rounding() {
    assert_eq!(duration_from_log(0.0), 1);
    assert_eq!(duration_from_log(-5.0), 1);
    assert_eq!(duration_from_log(f64::NAN), 1);
    assert_eq!(duration_from_log(2.0f64.ln()), 2);
    assert_eq!(duration_from_log(2.4f64.ln()), 2);
    assert_eq!(duration_from_log(2.6f64.ln()), 3);
}

#[test]
fn energy_quantization() {
    assert_eq!(quantize_energy(log_energy(0.0), 256), 0);
    assert_eq!(quantize_energy(-100.0, 256), 0);
    assert_eq!(quantize_energy(5.0, 256), 255);
    let a = quantize_energy(log_energy(0.01), 256);
    let b = quantize_energy(log_energy(0.1), 256);
    assert!(0 < a && a < b && b < 255);
}

#[test]
fn decoder_preserves_length() {
    let cfg = ModelConfig::desk();
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dec = DilatedDecoder::new(&mut store, "decoder", &cfg, &mut rng).unwrap();
    for t in [1, 7, 300] {
        let mut sess = Session::inference(&store);
        let x = sess.graph.constant(Tensor::full(&[t, 32], 0.3));
        let y = dec.forward(&mut sess, x).unwrap();
        assert_eq!(sess.graph.value(y).shape(), &[t, 80]);
    }
}

#[test]
fn mel_statistics_shift_and_scale_output() {
    let mut store = ParamStore::<f64>::new();
    let m = AcousticModel::new(ModelConfig::desk(), &mut store, 0).unwrap();
    let toks = tokens();
    let tr = track(&toks, 1);
    let c = ConditioningInput::new(0, 0);
    let a = m.run(&store, &toks, &c, Mode::TeacherForced(&tr)).unwrap();
    let mean: Vec<f64> = (0..80).map(|i| i as f64 - 40.0).collect();
    m.set_mel_statistics(&mut store, &mean, &[2.0; 80]).unwrap();
    let b = m.run(&store, &toks, &c, Mode::TeacherForced(&tr)).unwrap();
    for (i, (x, y)) in a.mel.data().iter().zip(b.mel.data()).enumerate() {
        assert!((2.0 * x + mean[i % 80] - y).abs() < 1e-9);
    }
    assert!(m.set_mel_statistics(&mut store, &mean, &[0.0; 80]).is_err());
    assert!(m.set_mel_statistics(&mut store, &mean[..10], &[1.0; 10]).is_err());
}

#[test]
fn forward_contracts() {
    let mut store = ParamStore::<f32>::new();
    let m = AcousticModel::new(ModelConfig::desk(), &mut store, 5).unwrap();
    let toks = tokens();
    let tr = track(&toks, 2);
    let c = ConditioningInput::new(1, 0);
    let tf = m.run(&store, &toks, &c, Mode::TeacherForced(&tr)).unwrap();
    assert_eq!(tf.mel.shape(), &[tr.frames(), 80]);
    assert_eq!(tf.durations, tr.durations);
    for v in [&tf.log_durations, &tf.pitch, &tf.energy] {
        assert_eq!(v.len(), toks.len());
    }

    // Voice 1 in the long-form style never occurs in training data.
    let unseen = ConditioningInput::new(0, 1);
    let a = m.infer(&store, &toks, &unseen).unwrap();
    let b = m.infer(&store, &toks, &unseen).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mel.shape()[0], a.frames());
    assert!(a.durations.iter().all(|&d| d >= 1));
    for (&t, &hz) in toks.iter().zip(&a.pitch_hz) {
        assert_eq!(hz > 0.0, msms_core::corpus::inventory::is_voiced(t));
    }

    let short = ProsodyTrack { durations: vec![1; 3], pitch: vec![0.0; 3], energy: vec![0.1; 3] };
    assert!(matches!(m.run(&store, &toks, &c, Mode::TeacherForced(&short)), Err(Error::Shape { .. })));
    assert!(m.infer(&store, &toks, &ConditioningInput::new(64, 0)).is_err());
}

#[test]
fn zero_conditioning_is_pair_invariant() {
    let mut store = ParamStore::<f32>::new();
    let m = AcousticModel::new(ModelConfig::desk(), &mut store, 9).unwrap();
    let toks = tokens();
    let tr = track(&toks, 3);
    let base = m.run(&store, &toks, &ConditioningInput::new(0, 0), Mode::TeacherForced(&tr)).unwrap();
    for s in 0..7 {
        for st in 0..2 {
            let o = m.run(&store, &toks, &ConditioningInput::new(s, st), Mode::TeacherForced(&tr)).unwrap();
            assert_eq!(o.mel, base.mel, "speaker {s} style {st}");
            assert_eq!(o.log_durations, base.log_durations);
        }
    }
    // Once the projection is non-zero the style slot matters.
    let w = store.find("cond.decoder.weight").unwrap();
    store.get_mut(w).data_mut()[64 * 32 + 1] = 0.5;
    let o = m.run(&store, &toks, &ConditioningInput::new(0, 0), Mode::TeacherForced(&tr)).unwrap();
    let o1 = m.run(&store, &toks, &ConditioningInput::new(0, 1), Mode::TeacherForced(&tr)).unwrap();
    assert_ne!(o.mel, o1.mel);
}

#[test]
fn pitch_reference_round_trip() {
    let mut store = ParamStore::<f64>::new();
    let m = AcousticModel::new(ModelConfig::desk(), &mut store, 0).unwrap();
    m.set_pitch_reference(&mut store, 3, 119.0).unwrap();
    assert!((m.pitch_reference_hz(&store, 3) - 119.0).abs() < 1e-9);
    assert!((m.normalized_pitch(&store, 3, 119.0 * 0.95) - 0.95f64.ln()).abs() < 1e-12);
    assert!(m.set_pitch_reference(&mut store, 64, 100.0).is_err());
    assert!(m.set_pitch_reference(&mut store, 0, 0.0).is_err());
    let buf = store.find("variance.pitch_reference").unwrap();
    assert!(!store.is_trainable(buf));
}

fn randomize(store: &mut ParamStore<f64>, prefix: &str, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with(prefix)).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
}

fn weighted_sum(sess: &mut Session<'_, f64>, y: Var, seed: u64) -> msms_core::Result<Var> {
    let shape = sess.graph.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let w = sess.graph.constant(Tensor::new(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
    let p = sess.graph.mul(y, w)?;
    // Mean keeps the loss O(1), so finite-difference round-off stays small.
    Ok(sess.graph.mean(p))
}

#[test]
fn predictor_gradient_check() {
    let cfg = mini_config();
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = VariancePredictor::new(&mut store, "variance.pitch", &cfg, &mut rng).unwrap();
    let x: Vec<f64> = (0..7 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::new(&[7, 16], x).unwrap();
    let report = gradcheck(&mut store, GradCheckOptions::default(), |sess| {
        let xv = sess.graph.constant(x.clone());
        let y = p.forward(sess, xv)?;
        weighted_sum(sess, y, 5)
    })
    .unwrap();
    assert_eq!(report.len(), 10);
    let (name, err) = worst(&report).unwrap();
    assert!(err < 1e-4, "{name}: {err:e}");
}

#[test]
fn end_to_end_gradient_check() {
    let cfg = mini_config();
    let mut store = ParamStore::<f64>::new();
    let m = AcousticModel::new(cfg, &mut store, 11).unwrap();
    randomize(&mut store, "cond.", 12);
    m.set_mel_statistics(&mut store, &[-0.5; 80], &[1.5; 80]).unwrap();
    let toks = vec![16u8, 0, WORD_BOUNDARY, 33, 7, PERIOD];
    let tr = track(&toks, 6);
    let cond = ConditioningInput::new(2, 1);
    let opts = GradCheckOptions { max_entries: Some(48), seed: 3, ..Default::default() };
    let report = gradcheck(&mut store, opts, |sess| {
        let f = m.forward(sess, &toks, &cond, Mode::TeacherForced(&tr))?;
        let parts = [
            weighted_sum(sess, f.mel, 1)?,
            weighted_sum(sess, f.log_duration, 2)?,
            weighted_sum(sess, f.pitch, 3)?,
            weighted_sum(sess, f.energy, 4)?,
        ];
        let a = sess.graph.add(parts[0], parts[1])?;
        let b = sess.graph.add(parts[2], parts[3])?;
        sess.graph.add(a, b)
    })
    .unwrap();
    assert_eq!(report.len(), store.ids().filter(|&id| store.is_trainable(id)).count());
    let (name, err) = worst(&report).unwrap();
    assert!(err < 1e-4, "{name}: {err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn length_regulator_matches_repetition(durs in prop::collection::vec(1usize..6, 1..12), seed in 0u64..1000) {
        let n = durs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let y = length_regulate(&mut g, x, &durs).unwrap();
        let mut expect = Vec::new();
        for (row, &d) in rows.iter().zip(&durs) {
            for _ in 0..d {
                expect.extend_from_slice(row);
            }
        }
        prop_assert_eq!(g.value(y).shape(), &[durs.iter().sum::<usize>(), 3]);
        prop_assert_eq!(g.value(y).data(), &expect[..]);
    }

    #[test]
    fn time_lengths_are_preserved(n in 1usize..10, seed in 0u64..100) {
        let mut store = ParamStore::<f32>::new();
        let m = AcousticModel::new(ModelConfig { encoder_layers: 1, ..ModelConfig::desk() }, &mut store, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toks: Vec<u8> = (0..n).map(|_| rng.random_range(0..45)).collect();
        let tr = track(&toks, seed);
        let mut sess = Session::inference(&store);
        let enc = m.encode(&mut sess, &toks).unwrap();
        prop_assert_eq!(sess.graph.value(enc).shape()[0], n);
        let f = m.forward(&mut sess, &toks, &ConditioningInput::new(0, 0), Mode::TeacherForced(&tr)).unwrap();
        prop_assert_eq!(sess.graph.value(f.mel).shape()[0], tr.frames());
    }
}
