#![allow(dead_code)]

use std::path::Path;

use msms::config::RunConfig;
use msms_core::corpus::CorpusConfig;
use msms_core::model::ModelConfig;
use msms_core::trainer::TrainConfig;
use msms_core::vocoder::{VocoderConfig, VocoderTrainConfig};

/// Small corpus, tiny models and a one-sentence evaluation set.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus = CorpusConfig { seconds_per_hour: 0.5, min_utterances: 6, ..CorpusConfig::default() };
    cfg.train = TrainConfig {
        model: ModelConfig {
            encoder_layers: 1,
            d_model: 16,
            encoder_conv_filters: 16,
            decoder_blocks: 1,
            decoder_filters: 16,
            predictor_filters: 16,
            ..ModelConfig::desk()
        },
        steps: 4,
        finetune_steps: 2,
        batch_size: 2,
        peak_lr: 3e-3,
        validation_every: 2,
        ..TrainConfig::default()
    };
    cfg.vocoder = VocoderConfig { rnn_hidden: 8, embed_dim: 4, cond_dim: 4, fc_hidden: 16, ..VocoderConfig::default() };
    cfg.vocoder_train = VocoderTrainConfig { steps: 2, batch_size: 2, ..VocoderTrainConfig::default() };
    cfg.eval.max_sentences = Some(1);
    cfg.eval.voices = vec![1, 6];
    cfg
}

pub fn write_config(path: &Path, cfg: &RunConfig) {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}
