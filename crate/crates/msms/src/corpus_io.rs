//! On-disk corpus: a JSON-lines manifest in utterance-id order, one WAV and
//! one Mel feature file per utterance, and the speaker table.

use std::path::{Path, PathBuf};

use msms_core::corpus::{Corpus, Domain, ProsodyTrack, SpeakerSpec, Split, Style};
use msms_core::dsp;
use msms_core::trainer::Example;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::wav;

pub const MANIFEST: &str = "manifest.jsonl";
pub const SPEAKERS: &str = "speakers.json";
/// Tensor name of Mel features in feature files.
pub const MEL: &str = "mel";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub tokens: Vec<u8>,
    pub speaker: u8,
    pub style: Style,
    pub domain: Domain,
    pub split: Split,
    pub seed: u64,
    /// Relative to the corpus directory.
    pub audio: PathBuf,
    pub features: PathBuf,
    pub samples: usize,
    pub durations: Vec<usize>,
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
}

impl ManifestRecord {
    pub fn prosody(&self) -> ProsodyTrack {
        ProsodyTrack { durations: self.durations.clone(), pitch: self.pitch.clone(), energy: self.energy.clone() }
    }
}

/// Writes `corpus` under `dir` and returns the manifest records.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<Vec<ManifestRecord>> {
    let mut utts: Vec<_> = corpus.utterances.iter().collect();
    utts.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    let mut records = Vec::with_capacity(utts.len());
    for u in utts {
        let r = &u.record;
        let audio = PathBuf::from("wav").join(format!("{}.wav", r.id));
        let features = PathBuf::from("features").join(format!("{}.mel", r.id));
        wav::write(&dir.join(&audio), &u.audio)?;
        checkpoint::write_feature(&dir.join(&features), MEL, &dsp::mel_features(&u.audio)?)?;
        records.push(ManifestRecord {
            id: r.id.clone(),
            tokens: r.tokens.clone(),
            speaker: r.speaker,
            style: r.style,
            domain: r.domain,
            split: r.split,
            seed: r.seed,
            audio,
            features,
            samples: u.audio.len(),
            durations: r.prosody.durations.clone(),
            pitch: r.prosody.pitch.clone(),
            energy: r.prosody.energy.clone(),
        });
    }
    fsutil::write_jsonl(&dir.join(MANIFEST), &records)?;
    fsutil::write_json(&dir.join(SPEAKERS), &corpus.speakers)?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Missing { what: "corpus manifest", path });
    }
    fsutil::read_jsonl(&path)
}

pub fn read_speakers(dir: &Path) -> Result<Vec<SpeakerSpec>> {
    fsutil::read_json(&dir.join(SPEAKERS))
}

/// Training examples from the manifest and stored features.
pub fn load_examples(dir: &Path) -> Result<Vec<Example>> {
    read_manifest(dir)?
        .into_iter()
        .map(|r| {
            let path = dir.join(&r.features);
            let mel = checkpoint::read_feature(&path, MEL)?;
            let prosody = r.prosody();
            prosody.validate()?;
            if mel.rows() != prosody.frames() {
                return Err(Error::format(&path, format!("{} frames, prosody covers {}", mel.rows(), prosody.frames())));
            }
            Ok(Example { id: r.id, speaker: r.speaker, style: r.style, split: r.split, tokens: r.tokens, prosody, mel })
        })
        .collect()
}

/// Audio of every training-split utterance of `voice`.
pub fn load_voice_audio(dir: &Path, voice: u8) -> Result<Vec<Vec<f32>>> {
    read_manifest(dir)?
        .iter()
        .filter(|r| r.speaker == voice && r.split == Split::Train)
        .map(|r| wav::read(&dir.join(&r.audio)))
        .collect()
}
