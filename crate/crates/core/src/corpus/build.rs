use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{Domain, Lexicon};
use super::{render_utterance, ProsodyTrack, SpeakerSpec, Style, StyleSpec};
use crate::dsp::{HOP, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Seconds of rendered audio per hour of the original speaker table.
    pub seconds_per_hour: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub min_utterances: usize,
    /// Range of target sentence lengths, in seconds.
    pub sentence_seconds: (f64, f64),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seconds_per_hour: 2.0,
            seed: 7,
            validation_fraction: 0.05,
            min_utterances: 20,
            sentence_seconds: (0.6, 1.2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub tokens: Vec<u8>,
    /// Voice number, 1-based.
    pub speaker: u8,
    pub style: Style,
    pub domain: Domain,
    pub split: Split,
    /// Seed the audio was rendered with.
    pub seed: u64,
    pub prosody: ProsodyTrack,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedUtterance {
    pub record: UtteranceRecord,
    pub audio: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub speakers: Vec<SpeakerSpec>,
    pub utterances: Vec<RenderedUtterance>,
}

impl Corpus {
    pub fn records(&self) -> impl Iterator<Item = &UtteranceRecord> {
        self.utterances.iter().map(|u| &u.record)
    }

    pub fn speaker(&self, id: u8) -> Option<&SpeakerSpec> {
        self.speakers.iter().find(|s| s.id == id)
    }

    /// Rendered seconds per voice, in speaker order.
    pub fn seconds_by_speaker(&self) -> Vec<(u8, f64)> {
        self.speakers
            .iter()
            .map(|s| {
                let samples: usize = self.utterances.iter().filter(|u| u.record.speaker == s.id).map(|u| u.audio.len()).sum();
                (s.id, samples as f64 / SAMPLE_RATE as f64)
            })
            .collect()
    }
}

/// Seed of utterance `index` of voice `voice` in a corpus built with `seed`.
pub fn utterance_seed(seed: u64, voice: u8, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0DD5_EED5);
    rng.set_stream(voice as u64);
    rng.set_word_pos(2 * index as u128);
    rng.random()
}

/// Renders every voice in its own recorded style until its budget of
/// `hours * seconds_per_hour` seconds is filled. The last
/// `validation_fraction` of each voice's utterances (at least one) is
/// held out for validation.
pub fn build_corpus(speakers: &[SpeakerSpec], cfg: &CorpusConfig) -> Result<Corpus> {
    if speakers.is_empty() {
        return Err(Error::Empty("speaker list"));
    }
    let (lo, hi) = cfg.sentence_seconds;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Config(format!("invalid sentence length range {lo}..{hi}")));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::Config(format!("validation fraction {} outside [0,1)", cfg.validation_fraction)));
    }
    let mut ids: Vec<u8> = speakers.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != speakers.len() {
        return Err(Error::Config("speaker ids must be unique".into()));
    }
    let lex = Lexicon::new();
    let mut utterances = Vec::new();
    for spk in speakers {
        spk.validate()?;
        let style = StyleSpec::of(spk.style);
        let budget = spk.hours * cfg.seconds_per_hour;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(spk.id as u64);
        let mut filled = 0.0;
        let mut mine = Vec::new();
        while filled < budget {
            let index = mine.len();
            let domain = match spk.style {
                Style::LongForm => Domain::Books,
                Style::Tts => Domain::ALL[rng.random_range(0..4)],
            };
            let target = rng.random_range(lo..=hi);
            let tokens = lex.sentence(&mut rng, target, domain)?;
            let seed = utterance_seed(cfg.seed, spk.id, index);
            let r = render_utterance(&tokens, spk, &style, seed)?;
            filled += (r.prosody.frames() * HOP) as f64 / SAMPLE_RATE as f64;
            mine.push(RenderedUtterance {
                record: UtteranceRecord {
                    id: format!("v{}-{:04}", spk.id, index),
                    tokens,
                    speaker: spk.id,
                    style: spk.style,
                    domain,
                    split: Split::Train,
                    seed,
                    prosody: r.prosody,
                },
                audio: r.audio,
            });
        }
        if mine.len() < cfg.min_utterances {
            return Err(Error::Config(format!(
                "voice {} gets only {} utterances from a {:.1} s budget; at least {} are required",
                spk.id,
                mine.len(),
                budget,
                cfg.min_utterances
            )));
        }
        let n_val = (libm::round(mine.len() as f64 * cfg.validation_fraction) as usize).max(1);
        let first_val = mine.len() - n_val;
        for u in &mut mine[first_val..] {
            u.record.split = Split::Validation;
        }
        log::info!("voice {}: {} utterances, {:.1} s", spk.id, mine.len(), filled);
        utterances.extend(mine);
    }
    Ok(Corpus {
        speakers: speakers.to_vec(),
        utterances,
    })
}

/// `per_speaker` fresh utterances per voice in its recorded style, rendered
/// from an independent seed stream and marked as validation data. Used for
/// held-out comparisons where the per-voice validation split is too small.
pub fn build_test_set(speakers: &[SpeakerSpec], per_speaker: usize, cfg: &CorpusConfig) -> Result<Vec<RenderedUtterance>> {
    if per_speaker == 0 {
        return Err(Error::Empty("test set size"));
    }
    let lex = Lexicon::new();
    let (lo, hi) = cfg.sentence_seconds;
    let mut out = Vec::with_capacity(per_speaker * speakers.len());
    for spk in speakers {
        spk.validate()?;
        let style = StyleSpec::of(spk.style);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7E57_5E7);
        rng.set_stream(spk.id as u64);
        for index in 0..per_speaker {
            let domain = match spk.style {
                Style::LongForm => Domain::Books,
                Style::Tts => Domain::ALL[rng.random_range(0..4)],
            };
            let target = rng.random_range(lo..=hi);
            let tokens = lex.sentence(&mut rng, target, domain)?;
            let seed = utterance_seed(cfg.seed ^ 0x7E57_5E7, spk.id, index);
            let r = render_utterance(&tokens, spk, &style, seed)?;
            out.push(RenderedUtterance {
                record: UtteranceRecord {
                    id: format!("t{}-{:04}", spk.id, index),
                    tokens,
                    speaker: spk.id,
                    style: spk.style,
                    domain,
                    split: Split::Validation,
                    seed,
                    prosody: r.prosody,
                },
                audio: r.audio,
            });
        }
    }
    Ok(out)
}
