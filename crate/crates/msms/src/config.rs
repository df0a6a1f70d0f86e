//! Run configuration: one JSON document covering every pipeline stage.
//! Missing fields take the desk-scale defaults.

use std::path::Path;

use msms_core::corpus::CorpusConfig;
use msms_core::trainer::TrainConfig;
use msms_core::vocoder::{VocoderConfig, VocoderTrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Evaluation sentences per text domain.
    pub sentences_per_domain: usize,
    /// Cap on the total number of sentences, applied after sampling.
    pub max_sentences: Option<usize>,
    pub sentence_seed: u64,
    /// Voices to synthesize with the conditioned systems.
    pub voices: Vec<u8>,
    /// Seed of natural renders and vocoder sampling.
    pub seed: u64,
    /// Vocoder sampling temperature; 0 is argmax decoding.
    pub temperature: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sentences_per_domain: 1,
            max_sentences: None,
            sentence_seed: 42,
            voices: (1..=7).collect(),
            seed: 0,
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub port: u16,
    /// Seed of the MOS and ABX trial schedules.
    pub trial_seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig { port: 8080, trial_seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Experiment id recorded in the workspace run manifest.
    pub experiment: Option<String>,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub vocoder: VocoderConfig,
    pub vocoder_train: VocoderTrainConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing { what: "config file", path: path.into() });
        }
        crate::fsutil::read_json(path)
    }

    /// Sets every stage's seed to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.train.seed = seed;
        self.vocoder_train.seed = seed;
        self.eval.seed = seed;
        self.serve.trial_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.vocoder.validate()?;
        if self.eval.sentences_per_domain == 0 {
            return Err(Error::Usage("eval.sentences_per_domain must be positive".into()));
        }
        if self.eval.voices.is_empty() {
            return Err(Error::Usage("eval.voices is empty".into()));
        }
        if !(self.eval.temperature >= 0.0) {
            return Err(Error::Usage("eval.temperature must be non-negative".into()));
        }
        Ok(())
    }
}
