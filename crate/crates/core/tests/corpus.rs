use std::collections::BTreeSet;
use std::sync::OnceLock;

use msms_core::corpus::inventory::*;
use msms_core::corpus::*;
use msms_core::dsp;
use proptest::prelude::*;

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| build_corpus(&default_speakers(), &CorpusConfig::default()).unwrap())
}

fn tts() -> StyleSpec {
    StyleSpec::of(Style::Tts)
}

fn long() -> StyleSpec {
    StyleSpec::of(Style::LongForm)
}

#[test]
fn speaker_table() {
    let s = default_speakers();
    assert_eq!(s.len(), 7);
    assert_eq!((s[0].id, s[0].median_pitch, s[0].style), (1, 188.0, Style::Tts));
    assert_eq!((s[6].id, s[6].median_pitch, s[6].style), (7, 84.0, Style::LongForm));
    let pitches: Vec<f64> = s.iter().map(|v| v.median_pitch).collect();
    assert_eq!(pitches, [188.0, 112.0, 148.0, 119.0, 145.0, 159.0, 84.0]);
    assert_eq!(s.iter().filter(|v| v.style == Style::Tts).count(), 5);
    assert_eq!(s.iter().filter(|v| v.style == Style::LongForm).count(), 2);
    for v in &s {
        v.validate().unwrap();
    }
}

#[test]
fn inventory_layout() {
    assert_eq!(VOCAB_SIZE, 45);
    assert_eq!(ids_by_class(TokenClass::Punctuation).count(), 4);
    assert_eq!(ids_by_class(TokenClass::WordBoundary).count(), 1);
    let phonemes = (0..VOCAB_SIZE as u8).filter(|&t| is_phoneme(t)).count();
    assert_eq!(phonemes, 40);
    assert!(token_class(45).is_none());
    let symbols: BTreeSet<_> = (0..VOCAB_SIZE as u8).map(|t| token_symbol(t).unwrap()).collect();
    assert_eq!(symbols.len(), VOCAB_SIZE);
}

#[test]
fn single_phone_frames_by_style() {
    assert_eq!(phone_durations(&[0], &tts()).unwrap(), vec![8]);
    let lf = StyleSpec { final_lengthening: 1.0, ..long() };
    assert_eq!(phone_durations(&[0], &lf).unwrap(), vec![9]);
    assert!(phone_durations(&[], &tts()).is_err());
    assert!(phone_durations(&[99], &tts()).is_err());
}

#[test]
fn rendering_is_deterministic_and_grid_aligned() {
    let spk = default_speakers()[0];
    let tokens = [16u8, 0, WORD_BOUNDARY, 31, 11, 25, PERIOD];
    let a = render_utterance(&tokens, &spk, &tts(), 5).unwrap();
    let b = render_utterance(&tokens, &spk, &tts(), 5).unwrap();
    assert_eq!(a.audio.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.audio.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.prosody, b.prosody);
    let c = render_utterance(&tokens, &spk, &tts(), 6).unwrap();
    assert_ne!(a.audio, c.audio);
    assert_eq!(dsp::frame_count(a.audio.len()), a.prosody.frames());
    assert_eq!(dsp::mel_spectrogram(&a.audio).unwrap().shape()[0], a.prosody.frames());
    a.prosody.validate().unwrap();
    assert!(a.audio.iter().all(|v| v.abs() <= 1.0 && (v * 32767.0 - (v * 32767.0).round()).abs() < 1e-3));
    assert!(render_utterance(&[], &spk, &tts(), 0).is_err());
}

#[test]
fn prosody_track_marks_unvoiced_tokens() {
    let spk = default_speakers()[2];
    let tokens = [16u8, 0, WORD_BOUNDARY, 36, 11, COMMA, 24, 3, PERIOD];
    let r = render_utterance(&tokens, &spk, &tts(), 1).unwrap();
    for (&t, &p) in tokens.iter().zip(&r.prosody.pitch) {
        assert_eq!(p > 0.0, is_voiced(t), "token {t}");
    }
    assert!(r.prosody.energy.iter().all(|&e| e > 0.0));
}

/// Extracted pitch recovers the rendered contour on voiced phones.
#[test]
fn pitch_ground_truth_is_recoverable() {
    let c = corpus();
    for spk in &c.speakers {
        let style = StyleSpec::of(spk.style);
        let utts: Vec<_> = c.utterances.iter().filter(|u| u.record.speaker == spk.id).collect();
        let mut errs = Vec::new();
        let mut voiced_frames = Vec::new();
        for u in utts {
            let f0 = dsp::extract_pitch(&u.audio, &dsp::PitchConfig::default());
            let avg = dsp::phone_average_voiced(&f0, &u.record.prosody.durations).unwrap();
            for (i, &t) in u.record.tokens.iter().enumerate() {
                if is_voiced(t) && avg[i] > 0.0 {
                    errs.push((avg[i] - u.record.prosody.pitch[i]).abs());
                }
            }
            let med = dsp::median(&f0.iter().copied().filter(|&v| v > 0.0).collect::<Vec<_>>()).unwrap();
            let expect = spk.median_pitch * style.pitch_scale;
            assert!((med - expect).abs() / expect < 0.05, "voice {}: median {med} vs {expect}", spk.id);
            voiced_frames.extend(f0.into_iter().filter(|&v| v > 0.0));
        }
        let med_err = dsp::median(&errs).unwrap();
        assert!(med_err < 5.0, "voice {}: median phone pitch error {med_err} Hz", spk.id);
    }
}

#[test]
fn style_rate_is_separable() {
    let lex = Lexicon::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let (mut t_sum, mut l_sum, mut n) = (0usize, 0usize, 0usize);
    for _ in 0..50 {
        let s = lex.sentence(&mut rng, 1.0, Domain::Dialog).unwrap();
        let dt = phone_durations(&s, &tts()).unwrap();
        let dl = phone_durations(&s, &StyleSpec { final_lengthening: 1.0, ..long() }).unwrap();
        for (i, &t) in s.iter().enumerate() {
            if is_phoneme(t) {
                t_sum += dt[i];
                l_sum += dl[i];
                n += 1;
            }
        }
    }
    let ratio = l_sum as f64 / t_sum as f64;
    assert!((ratio - 1.15).abs() / 1.15 < 0.02, "ratio {ratio} over {n} phones");
}

#[test]
fn corpus_budgets_follow_the_speaker_table() {
    let c = corpus();
    let secs = c.seconds_by_speaker();
    let ratio = secs[0].1 / secs[3].1;
    assert!((ratio - 37.0 / 11.0).abs() / (37.0 / 11.0) < 0.1, "ratio {ratio}");
    for (id, s) in &secs {
        let hours = c.speaker(*id).unwrap().hours;
        assert!(*s >= hours * 2.0 && *s < hours * 2.0 + 2.0, "voice {id}: {s}");
        let n = c.records().filter(|r| r.speaker == *id).count();
        assert!(n >= 20, "voice {id}: {n}");
    }
}

#[test]
fn coverage_map_and_splits() {
    let c = corpus();
    let allowed: BTreeSet<(u8, Style)> = c.speakers.iter().map(|s| (s.id, s.style)).collect();
    assert!(c.records().all(|r| allowed.contains(&(r.speaker, r.style))));
    assert!(!c.records().any(|r| r.speaker == 1 && r.style == Style::LongForm));
    let per_speaker: usize = c.speakers.iter().map(|s| c.records().filter(|r| r.speaker == s.id).count()).sum();
    assert_eq!(per_speaker, c.utterances.len());
    for s in &c.speakers {
        let n = c.records().filter(|r| r.speaker == s.id).count();
        let val = c.records().filter(|r| r.speaker == s.id && r.split == Split::Validation).count();
        assert_eq!(val, ((n as f64 * 0.05).round() as usize).max(1));
    }
    let ids: BTreeSet<_> = c.records().map(|r| r.id.clone()).collect();
    assert_eq!(ids.len(), c.utterances.len());
    for u in &c.utterances {
        u.record.prosody.validate().unwrap();
        assert_eq!(u.record.prosody.len(), u.record.tokens.len());
        assert!(u.record.tokens.iter().all(|&t| (t as usize) < VOCAB_SIZE));
    }
}

#[test]
fn corpus_build_is_reproducible_and_rejects_tiny_budgets() {
    let spk = &default_speakers()[3..4];
    let cfg = CorpusConfig { seconds_per_hour: 2.0, seed: 11, ..Default::default() };
    let a = build_corpus(spk, &cfg).unwrap();
    let b = build_corpus(spk, &cfg).unwrap();
    assert_eq!(a.utterances, b.utterances);
    let tiny = CorpusConfig { seconds_per_hour: 0.5, ..cfg };
    assert!(build_corpus(spk, &tiny).is_err());
}

#[test]
fn eval_sentences() {
    let set = sample_eval_sentences(75, 1).unwrap();
    assert_eq!(set.len(), 300);
    assert_eq!(set, sample_eval_sentences(75, 1).unwrap());
    for d in Domain::ALL {
        let secs: Vec<f64> = set
            .iter()
            .filter(|s| s.domain == d)
            .map(|s| phone_durations(&s.tokens, &tts()).unwrap().iter().sum::<usize>() as f64 / 100.0)
            .collect();
        let mean = secs.iter().sum::<f64>() / secs.len() as f64;
        assert!((mean - d.mean_seconds()).abs() / d.mean_seconds() < 0.15, "{d:?}: {mean}");
    }
    let train: BTreeSet<Vec<u8>> = corpus().records().map(|r| r.tokens.clone()).collect();
    assert!(set.iter().all(|s| !train.contains(&s.tokens)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn durations_are_positive_and_track_the_rate(tokens in prop::collection::vec(0u8..45, 1..30)) {
        let dt = phone_durations(&tokens, &tts()).unwrap();
        let dl = phone_durations(&tokens, &long()).unwrap();
        prop_assert!(dt.iter().chain(&dl).all(|&d| d >= 1));
        let total_t: usize = dt.iter().sum();
        let total_l: usize = dl.iter().sum();
        prop_assert!(total_l >= total_t);
    }
}
