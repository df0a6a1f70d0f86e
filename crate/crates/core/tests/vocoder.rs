use msms_core::dsp::{self, HOP, MU_LAW_ZERO, N_MELS};
use msms_core::tensor::{ParamStore, Session, Tensor};
use msms_core::vocoder::{
    encode_waveform, mel_statistics, sample, train_vocoder, Segment, Vocoder, VocoderConfig, VocoderTrainConfig, CLASSES,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> VocoderConfig {
    VocoderConfig { rnn_hidden: 8, embed_dim: 4, cond_dim: 4, fc_hidden: 16, ..VocoderConfig::default() }
}

fn mel(frames: usize, seed: u64) -> Tensor<f64> {
    let mut s = seed;
    let data = (0..frames * N_MELS)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 6.0
        })
        .collect();
    Tensor::new(&[frames, N_MELS], data).unwrap()
}

fn tone(n: usize) -> Vec<f32> {
    (0..n).map(|i| 0.3 * (2.0 * std::f32::consts::PI * 220.0 * i as f32 / 24000.0).sin()).collect()
}

#[test]
fn step_emits_256_logits() {
    let mut store = ParamStore::<f64>::new();
    let v = Vocoder::new(small(), "vocoder.1", &mut store, 1).unwrap();
    let cond = v.upsample_conditioning(&store, &mel(1, 1)).unwrap();
    let (logits, state) = v.step(&store, MU_LAW_ZERO, cond.row(0), &v.initial_state()).unwrap();
    assert_eq!(logits.len(), CLASSES);
    assert_eq!(state.hidden.len(), 8);
    assert!(logits.iter().all(|x| x.is_finite()));
    assert!(v.step(&store, 0, &[0.0; 3], &v.initial_state()).is_err());
}

#[test]
fn zero_parameters_give_uniform_likelihood() {
    let mut store = ParamStore::<f64>::new();
    let v = Vocoder::new(small(), "v", &mut store, 1).unwrap();
    v.zero_parameters(&mut store);
    let codes: Vec<u8> = (0..480).map(|i| (i * 7 % 256) as u8).collect();
    let nll = v.teacher_forced_nll(&store, &mel(2, 3), &codes).unwrap();
    assert!((nll - (256f64).ln()).abs() < 1e-12, "{nll}");
}

#[test]
fn output_length_is_frames_times_hop() {
    let mut store = ParamStore::<f32>::new();
    let v = Vocoder::new(small(), "v", &mut store, 2).unwrap();
    let m: Tensor<f32> = mel(3, 9).cast();
    let y = v.generate(&store, &m, 1.0, 5).unwrap();
    assert_eq!(y.len(), 3 * HOP);
    assert!(y.iter().all(|s| (-1.0..=1.0).contains(s)));
    assert_eq!(101 * HOP, 24240);
}

#[test]
fn generation_is_seeded() {
    let mut store = ParamStore::<f32>::new();
    let v = Vocoder::new(small(), "v", &mut store, 2).unwrap();
    let m: Tensor<f32> = mel(2, 4).cast();
    let a = v.generate_codes(&store, &m, 1.0, 11).unwrap();
    let b = v.generate_codes(&store, &m, 1.0, 11).unwrap();
    let c = v.generate_codes(&store, &m, 1.0, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn upsampling_repeats_each_frame() {
    let mut store = ParamStore::<f64>::new();
    let v = Vocoder::new(small(), "v", &mut store, 3).unwrap();
    let up = v.upsample_conditioning(&store, &mel(2, 5)).unwrap();
    assert_eq!(up.shape(), &[480, 4]);
    assert_eq!(up.row(0), up.row(239));
    assert_ne!(up.row(239), up.row(240));
    assert_eq!(up.row(240), up.row(479));

    let flat = Tensor::full(&[3, N_MELS], -2.0);
    let up = v.upsample_conditioning(&store, &flat).unwrap();
    assert!((1..up.rows()).all(|i| up.row(i) == up.row(0)));
}

#[test]
fn argmax_at_zero_temperature() {
    let mut logits = vec![0.0f64; 256];
    logits[37] = 5.0;
    logits[200] = 4.9;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(sample(&logits, 0.0, &mut rng).unwrap(), 37);
    assert!(sample::<f64, _>(&[], 1.0, &mut rng).is_err());
    assert!(sample(&logits, -1.0, &mut rng).is_err());
}

#[test]
fn uniform_logits_sample_uniformly() {
    let logits = vec![0.0f64; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 40_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample(&logits, 1.0, &mut rng).unwrap()] += 1;
    }
    let sigma = (n as f64 * 0.25 * 0.75).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn graph_loss_matches_stepwise_nll() {
    let mut store = ParamStore::<f64>::new();
    let v = Vocoder::new(small(), "v", &mut store, 4).unwrap();
    let (mean, std): (Vec<f64>, Vec<f64>) = ((0..N_MELS).map(|i| -3.0 + 0.01 * i as f64).collect(), vec![1.5; N_MELS]);
    v.set_mel_statistics(&mut store, &mean, &std).unwrap();
    let m = mel(2, 6);
    let codes: Vec<u8> = encode_waveform(&tone(480)).unwrap();
    let plain = v.teacher_forced_nll(&store, &m, &codes[..300]).unwrap();
    let mut sess = Session::inference(&store);
    let seg = Segment { mel: &m, codes: &codes, start: 0, len: 300 };
    let l = v.segment_loss(&mut sess, &[seg]).unwrap();
    let graph = sess.graph.value(l).data()[0];
    assert!((plain - graph).abs() < 1e-9, "{plain} vs {graph}");
}

#[test]
fn segment_batch_is_mean_of_segments() {
    let mut store = ParamStore::<f64>::new();
    let v = Vocoder::new(small(), "v", &mut store, 4).unwrap();
    let m = mel(3, 7);
    let codes: Vec<u8> = encode_waveform(&tone(720)).unwrap();
    let seg = |start| Segment { mel: &m, codes: &codes, start, len: 100 };
    let one = |s| {
        let mut sess = Session::inference(&store);
        let l = v.segment_loss(&mut sess, &[seg(s)]).unwrap();
        sess.graph.value(l).data()[0]
    };
    let mut sess = Session::inference(&store);
    let l = v.segment_loss(&mut sess, &[seg(50), seg(400)]).unwrap();
    let both = sess.graph.value(l).data()[0];
    assert!((both - (one(50) + one(400)) / 2.0).abs() < 1e-9);
    let mut sess = Session::inference(&store);
    assert!(v.segment_loss(&mut sess, &[seg(700)]).is_err());
}

#[test]
fn encoded_targets_are_pre_emphasized_mu_law() {
    let x = tone(300);
    let codes = encode_waveform(&x).unwrap();
    let pre = dsp::pre_emphasis(&x, dsp::PRE_EMPHASIS).unwrap();
    assert_eq!(codes.len(), x.len());
    for (c, p) in codes.iter().zip(&pre) {
        assert_eq!(*c, dsp::mu_law_encode(*p));
    }
    assert!(encode_waveform(&[0.0; 4]).unwrap().iter().all(|&c| c == MU_LAW_ZERO));
}

#[test]
fn mel_statistics_per_bin() {
    let a = Tensor::new(&[2, 2], vec![1.0f32, 10.0, 3.0, 10.0]).unwrap();
    let b = Tensor::new(&[1, 2], vec![5.0f32, 10.0]).unwrap();
    let (mean, std) = mel_statistics(&[a, b]).unwrap();
    assert!((mean[0] - 3.0).abs() < 1e-12 && (mean[1] - 10.0).abs() < 1e-12);
    assert!((std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-9);
    assert_eq!(std[1], 1e-3);
    assert!(mel_statistics(&[]).is_err());
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let clip = tone(2400);
    let cfg = VocoderTrainConfig { steps: 60, batch_size: 2, segment_frames: 1, ..VocoderTrainConfig::default() };
    let a = train_vocoder(&[&clip], &small(), &cfg, "vocoder.1").unwrap();
    let b = train_vocoder(&[&clip], &small(), &cfg, "vocoder.1").unwrap();
    assert_eq!(a.losses, b.losses);
    let head: f64 = a.losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = a.losses[55..].iter().sum::<f64>() / 5.0;
    assert!(tail < head - 1.0, "{head} -> {tail}");
    assert!(a.store.find("vocoder.1.gru.hidden.weight").is_some());
    assert!(train_vocoder(&[], &small(), &cfg, "v").is_err());
    assert!(train_vocoder(&[&clip], &small(), &VocoderTrainConfig { steps: 0, ..cfg }, "v").is_err());
}

#[test]
fn silence_overfit_generates_near_silence() {
    let clip = vec![0.0f32; 1200];
    let cfg = VocoderTrainConfig { steps: 80, batch_size: 2, segment_frames: 1, ..VocoderTrainConfig::default() };
    let t = train_vocoder(&[&clip], &small(), &cfg, "v").unwrap();
    let m = dsp::mel_features(&clip).unwrap();
    let y = t.vocoder.generate(&t.store, &m, 0.0, 0).unwrap();
    assert_eq!(y.len(), m.rows() * HOP);
    let peak = y.iter().fold(0.0f32, |a, v| a.max(v.abs()));
    assert!(peak < 0.01, "{peak}");
}

#[test]
fn config_validation() {
    assert!(VocoderConfig { classes: 128, ..VocoderConfig::default() }.validate().is_err());
    assert!(VocoderConfig { rnn_hidden: 0, ..VocoderConfig::default() }.validate().is_err());
    assert_eq!(VocoderConfig::full_size().rnn_hidden, 512);
    let mut store = ParamStore::<f32>::new();
    assert!(Vocoder::new(VocoderConfig { embed_dim: 0, ..small() }, "v", &mut store, 0).is_err());
}
