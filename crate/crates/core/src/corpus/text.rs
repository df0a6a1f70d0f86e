//! Pseudo-text: a fixed lexicon of phoneme words and sentence samplers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inventory::{ids_by_class, TokenClass, COMMA, EXCLAMATION, PERIOD, QUESTION, WORD_BOUNDARY};
use super::{phone_durations, StyleSpec};
use crate::dsp::{HOP, SAMPLE_RATE};
use crate::error::Result;

const LEXICON_SEED: u64 = 0x5EED_1E71_C0DE;
const LEXICON_SIZE: usize = 800;

/// Text domain of a sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Books,
    Knowledge,
    Navigation,
    Dialog,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Books, Domain::Knowledge, Domain::Navigation, Domain::Dialog];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Books => "books",
            Domain::Knowledge => "knowledge",
            Domain::Navigation => "navigation",
            Domain::Dialog => "dialog",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.name() == s)
    }

    /// Target mean rendered length of evaluation sentences, in seconds.
    pub fn mean_seconds(self) -> f64 {
        match self {
            Domain::Books => 4.67,
            Domain::Knowledge => 8.03,
            Domain::Navigation => 3.49,
            Domain::Dialog => 3.06,
        }
    }

    fn final_punctuation(self, rng: &mut ChaCha8Rng) -> u8 {
        let r: f64 = rng.random();
        match self {
            Domain::Dialog if r < 0.35 => QUESTION,
            Domain::Books if r < 0.1 => EXCLAMATION,
            _ if r < 0.08 => QUESTION,
            _ => PERIOD,
        }
    }
}

/// Fixed vocabulary of pseudo-words made of CV / CVC syllables.
#[derive(Clone, Debug)]
pub struct Lexicon {
    words: Vec<Vec<u8>>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::new()
    }
}

impl Lexicon {
    pub fn new() -> Lexicon {
        let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_SEED);
        let vowels: Vec<u8> = ids_by_class(TokenClass::Vowel).collect();
        let consonants: Vec<u8> = ids_by_class(TokenClass::VoicedConsonant)
            .chain(ids_by_class(TokenClass::Unvoiced))
            .collect();
        let words = (0..LEXICON_SIZE)
            .map(|_| {
                let syllables = rng.random_range(1..=2);
                let mut w = Vec::new();
                for _ in 0..syllables {
                    w.push(*consonants.choose(&mut rng).expect("consonants"));
                    w.push(*vowels.choose(&mut rng).expect("vowels"));
                    if rng.random_bool(0.4) {
                        w.push(*consonants.choose(&mut rng).expect("consonants"));
                    }
                }
                w
            })
            .collect();
        Lexicon { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Sentence whose TTS-style rendered length stays close to `target_s`.
    pub fn sentence(&self, rng: &mut ChaCha8Rng, target_s: f64, domain: Domain) -> Result<Vec<u8>> {
        let tts = StyleSpec::of(super::Style::Tts);
        let mut tokens: Vec<u8> = Vec::new();
        let end = domain.final_punctuation(rng);
        let mut since_comma = 0;
        loop {
            let word = self.words.choose(rng).expect("non-empty lexicon");
            let mut cand = tokens.clone();
            if !cand.is_empty() {
                if since_comma >= 5 && rng.random_bool(0.4) {
                    cand.push(COMMA);
                    since_comma = 0;
                }
                cand.push(WORD_BOUNDARY);
            }
            cand.extend_from_slice(word);
            since_comma += 1;
            let mut closed = cand.clone();
            closed.push(end);
            let frames: usize = phone_durations(&closed, &tts)?.iter().sum();
            let secs = (frames * HOP) as f64 / SAMPLE_RATE as f64;
            if !tokens.is_empty() && secs > target_s {
                break;
            }
            tokens = cand;
            if secs > target_s {
                break;
            }
        }
        tokens.push(end);
        Ok(tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSentence {
    pub id: String,
    pub domain: Domain,
    pub tokens: Vec<u8>,
}

/// Held-out evaluation sentences, `n_per_domain` for each of the four
/// domains. Their lengths follow per-domain priors centered on
/// [`Domain::mean_seconds`], several times longer than training sentences.
pub fn sample_eval_sentences(n_per_domain: usize, seed: u64) -> Result<Vec<EvalSentence>> {
    let lex = Lexicon::new();
    let mut out = Vec::with_capacity(4 * n_per_domain);
    for (di, domain) in Domain::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + di as u64);
        for i in 0..n_per_domain {
            let target = domain.mean_seconds() * rng.random_range(0.75..1.25);
            out.push(EvalSentence {
                id: format!("{}-{:03}", domain.name(), i),
                domain,
                tokens: lex.sentence(&mut rng, target, domain)?,
            });
        }
    }
    Ok(out)
}
