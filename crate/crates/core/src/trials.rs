//! Listening-test schedules over an evaluation index.
//!
//! MOS trials rate one sample each and are interleaved across
//! system x voice x domain strata. ABX trials compare two systems on the
//! same voice and sentence against a natural long-form recording of that
//! sentence, with the A/B position balanced per voice.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Style};
use crate::error::{Error, Result};

/// System label of natural (generator) recordings in an evaluation index.
pub const NATURAL: &str = "natural";

/// One audio sample of an evaluation set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub id: String,
    pub system: String,
    pub voice: u8,
    pub style: Style,
    pub domain: Domain,
    pub sentence: String,
    /// Path relative to the evaluation-set root.
    pub path: String,
}

impl EvalEntry {
    pub fn is_natural(&self) -> bool {
        self.system == NATURAL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Mos,
    Abx,
}

impl TrialKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mos" => Some(TrialKind::Mos),
            "abx" => Some(TrialKind::Abx),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrialKind::Mos => "mos",
            TrialKind::Abx => "abx",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trial {
    Mos {
        id: String,
        sample: String,
        system: String,
        voice: u8,
        domain: Domain,
    },
    Abx {
        id: String,
        /// Index into the configured system pairs.
        pair: usize,
        a: String,
        b: String,
        x: String,
        /// Whether the pair's first system plays as A.
        first_on_a: bool,
        voice: u8,
    },
}

impl Trial {
    pub fn id(&self) -> &str {
        match self {
            Trial::Mos { id, .. } | Trial::Abx { id, .. } => id,
        }
    }

    pub fn kind(&self) -> TrialKind {
        match self {
            Trial::Mos { .. } => TrialKind::Mos,
            Trial::Abx { .. } => TrialKind::Abx,
        }
    }

    /// Sample ids the trial plays.
    pub fn samples(&self) -> Vec<&str> {
        match self {
            Trial::Mos { sample, .. } => alloc::vec![sample.as_str()],
            Trial::Abx { a, b, x, .. } => alloc::vec![a.as_str(), b.as_str(), x.as_str()],
        }
    }
}

/// The two ABX comparisons: MSMS long-form against the multi-speaker system
/// and against MSMS in the TTS style.
pub fn default_abx_pairs() -> Vec<(String, String)> {
    alloc::vec![
        ("msms-longform".into(), "multi-speaker".into()),
        ("msms-longform".into(), "msms-tts".into()),
    ]
}

/// Deterministic schedule of `kind` trials over `index`.
pub fn assign_trials(index: &[EvalEntry], kind: TrialKind, seed: u64, abx_pairs: &[(String, String)]) -> Result<Vec<Trial>> {
    if index.is_empty() {
        return Err(Error::Empty("evaluation index"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        TrialKind::Mos => Ok(mos_schedule(index, &mut rng)),
        TrialKind::Abx => abx_schedule(index, abx_pairs, &mut rng),
    }
}

fn mos_schedule(index: &[EvalEntry], rng: &mut ChaCha8Rng) -> Vec<Trial> {
    let mut strata: BTreeMap<(&str, u8, Domain), Vec<&EvalEntry>> = BTreeMap::new();
    for e in index {
        strata.entry((e.system.as_str(), e.voice, e.domain)).or_default().push(e);
    }
    let mut queues: Vec<Vec<&EvalEntry>> = strata.into_values().collect();
    for q in &mut queues {
        q.sort_by(|a, b| a.id.cmp(&b.id));
        q.shuffle(rng);
    }
    // Round-robin over strata in a shuffled order per round.
    let mut out = Vec::with_capacity(index.len());
    let mut round = 0;
    loop {
        let mut order: Vec<usize> = (0..queues.len()).filter(|&i| round < queues[i].len()).collect();
        if order.is_empty() {
            break;
        }
        order.shuffle(rng);
        for i in order {
            let e = queues[i][round];
            out.push(Trial::Mos {
                id: format!("mos-{:05}", out.len()),
                sample: e.id.clone(),
                system: e.system.clone(),
                voice: e.voice,
                domain: e.domain,
            });
        }
        round += 1;
    }
    out
}

fn abx_schedule(index: &[EvalEntry], pairs: &[(String, String)], rng: &mut ChaCha8Rng) -> Result<Vec<Trial>> {
    if pairs.is_empty() {
        return Err(Error::Config("no ABX system pairs configured".into()));
    }
    let by_key: BTreeMap<(&str, u8, &str), &EvalEntry> =
        index.iter().map(|e| ((e.system.as_str(), e.voice, e.sentence.as_str()), e)).collect();
    let mut references: BTreeMap<&str, Vec<&EvalEntry>> = BTreeMap::new();
    for e in index.iter().filter(|e| e.is_natural() && e.style == Style::LongForm) {
        references.entry(e.sentence.as_str()).or_default().push(e);
    }
    for r in references.values_mut() {
        r.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let mut out = Vec::new();
    for (p, (first, second)) in pairs.iter().enumerate() {
        // (voice, a-entry, b-entry, reference) grouped per voice for balancing.
        let mut per_voice: BTreeMap<u8, Vec<(&EvalEntry, &EvalEntry, &EvalEntry)>> = BTreeMap::new();
        for e in index.iter().filter(|e| &e.system == first) {
            let Some(o) = by_key.get(&(second.as_str(), e.voice, e.sentence.as_str())) else { continue };
            let Some(refs) = references.get(e.sentence.as_str()) else { continue };
            // Rotate over the available long-form recordings of the sentence.
            let x = refs[(e.voice as usize) % refs.len()];
            per_voice.entry(e.voice).or_default().push((e, o, x));
        }
        for (voice, mut items) in per_voice {
            items.sort_by(|a, b| a.0.sentence.cmp(&b.0.sentence));
            items.shuffle(rng);
            let mut sides: Vec<bool> = (0..items.len()).map(|i| i % 2 == 0).collect();
            sides.shuffle(rng);
            for ((a_sys, b_sys, x), first_on_a) in items.into_iter().zip(sides) {
                let (a, b) = if first_on_a { (a_sys, b_sys) } else { (b_sys, a_sys) };
                out.push(Trial::Abx {
                    id: format!("abx-{p}-{:05}", out.len()),
                    pair: p,
                    a: a.id.clone(),
                    b: b.id.clone(),
                    x: x.id.clone(),
                    first_on_a,
                    voice,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Input("no sentence has both systems of a pair and a natural long-form reference".into()));
    }
    out.shuffle(rng);
    Ok(out)
}
