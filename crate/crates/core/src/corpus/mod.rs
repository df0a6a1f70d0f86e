//! Deterministic synthetic multi-speaker, multi-style speech corpus.
//!
//! Seven voices mirror the speaker table of the study: five recorded in the
//! clarity-oriented TTS style and two in the narration-oriented long-form
//! style. Audio is rendered with a source-filter model whose prosody is
//! known exactly, so that style transfer can be checked objectively.

mod build;
pub mod inventory;
mod render;
mod text;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use build::{build_corpus, build_test_set, utterance_seed, Corpus, CorpusConfig, RenderedUtterance, Split, UtteranceRecord};
pub use render::{phone_durations, PHONE_MS, render_utterance, Rendered, Timbre};
pub use text::{sample_eval_sentences, Domain, EvalSentence, Lexicon};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Tts,
    #[serde(alias = "long-form")]
    LongForm,
}

impl Style {
    pub const ALL: [Style; 2] = [Style::Tts, Style::LongForm];

    /// Conditioning slot of the style.
    pub fn index(self) -> usize {
        match self {
            Style::Tts => 0,
            Style::LongForm => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Style::Tts => "tts",
            Style::LongForm => "longform",
        }
    }

    pub fn parse(s: &str) -> Option<Style> {
        match s.to_ascii_lowercase().as_str() {
            "tts" => Some(Style::Tts),
            "longform" | "long-form" | "long_form" => Some(Style::LongForm),
            _ => None,
        }
    }
}

/// Measurable surrogate of a speaking style.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub style: Style,
    /// Phone-duration scale.
    pub rate_multiplier: f64,
    /// Multiplies the speaker's median pitch.
    pub pitch_scale: f64,
    /// Scales the log-pitch contour around the median.
    pub pitch_range_scale: f64,
    /// Multiplies the duration of the last phone of each phrase.
    pub final_lengthening: f64,
}

impl StyleSpec {
    pub fn of(style: Style) -> StyleSpec {
        match style {
            Style::Tts => StyleSpec {
                style,
                rate_multiplier: 1.0,
                pitch_scale: 1.0,
                pitch_range_scale: 1.0,
                final_lengthening: 1.0,
            },
            Style::LongForm => StyleSpec {
                style,
                rate_multiplier: 1.15,
                pitch_scale: 0.95,
                pitch_range_scale: 1.3,
                final_lengthening: 1.4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.rate_multiplier, self.pitch_scale, self.pitch_range_scale, self.final_lengthening];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(alloc::format!("style multipliers must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    /// Voice number, 1-based.
    pub id: u8,
    pub median_pitch: f64,
    pub timbre_seed: u64,
    /// Recorded hours in the original speaker table; budgets scale from it.
    pub hours: f64,
    /// The only style this voice is recorded in.
    pub style: Style,
}

impl SpeakerSpec {
    /// Conditioning slot of the speaker.
    pub fn index(&self) -> usize {
        self.id as usize - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.id == 0 {
            return Err(Error::Config("speaker ids start at 1".into()));
        }
        if !(80.0..=200.0).contains(&self.median_pitch) {
            return Err(Error::Config(alloc::format!(
                "voice {} median pitch {} Hz outside [80, 200]",
                self.id, self.median_pitch
            )));
        }
        if !(self.hours > 0.0) {
            return Err(Error::Config(alloc::format!("voice {} has no data budget", self.id)));
        }
        Ok(())
    }
}

/// The seven voices: duration in hours, median pitch and recorded style.
pub fn default_speakers() -> Vec<SpeakerSpec> {
    const TABLE: [(f64, f64, Style, u64); 7] = [
        (37.0, 188.0, Style::Tts, 11),
        (23.0, 112.0, Style::Tts, 23),
        (13.0, 148.0, Style::Tts, 37),
        (11.0, 119.0, Style::Tts, 41),
        (12.0, 145.0, Style::Tts, 59),
        (40.0, 159.0, Style::LongForm, 67),
        (24.0, 84.0, Style::LongForm, 73),
    ];
    TABLE
        .iter()
        .enumerate()
        .map(|(i, &(hours, median_pitch, style, timbre_seed))| SpeakerSpec {
            id: i as u8 + 1,
            median_pitch,
            timbre_seed,
            hours,
            style,
        })
        .collect()
}

/// Phone-level ground truth of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTrack {
    /// Frames per token.
    pub durations: Vec<usize>,
    /// Hz per token; 0 for unvoiced tokens and silences.
    pub pitch: Vec<f32>,
    /// Mean frame RMS of the pre-emphasized waveform per token.
    pub energy: Vec<f32>,
}

impl ProsodyTrack {
    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pitch.len() != self.durations.len() || self.energy.len() != self.durations.len() {
            return Err(Error::shape(
                "prosody track",
                &[self.durations.len()],
                &[self.pitch.len(), self.energy.len()],
            ));
        }
        if self.durations.iter().any(|&d| d == 0) {
            return Err(Error::Input("phone durations must be positive".into()));
        }
        Ok(())
    }
}
