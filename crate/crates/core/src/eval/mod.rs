//! Objective evaluation: speaker-embedding similarity, listening-test
//! statistics, pitch distributions and style-transfer measurements.

mod embedding;
mod prosody;
mod stats;

pub use embedding::{cosine, features, mse, orthonormal, Embedder, SpeakerEmbedding, EMBEDDING_DIM, FEATURE_DIM};
pub use prosody::{
    base_phone_frames, expand_pitch, measure_style, phrase_final_phones, pitch_distribution, score_style,
    style_transfer_score, synthesize_set, PitchDistribution, ProsodySample, StyleMeasurement, StyleScore, HIST_BIN_HZ,
    HIST_MAX_HZ, HIST_MIN_HZ,
};
pub use stats::{
    abx_binomial, abx_summary, mos_aggregate, mos_by_group, similarity_report, validate_score, AbxSummary, MosSummary,
    SimilarityReport, SimilarityRow, SystemEmbeddings, ABX_EXACT_MAX_N, voice_affinity, closest_voice,
};

/// One-off embedding with a fresh [`Embedder`].
pub fn embed_speaker(mel: &crate::tensor::Tensor<f32>, pitch: &[f32]) -> crate::Result<SpeakerEmbedding> {
    Embedder::new().embed(mel, pitch)
}
