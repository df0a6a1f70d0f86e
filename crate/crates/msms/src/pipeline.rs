//! The pipeline stages behind the CLI subcommands. Every stage reads its
//! inputs from and writes its outputs to a [`Workspace`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use msms_core::corpus::{
    build_corpus, default_speakers, render_utterance, sample_eval_sentences, utterance_seed, EvalSentence, SpeakerSpec,
    Style, StyleSpec,
};
use msms_core::dsp::{self, extract_pitch, PitchConfig};
use msms_core::eval::{
    closest_voice, expand_pitch, pitch_distribution, similarity_report, style_transfer_score, voice_affinity, Embedder,
    PitchDistribution, SimilarityReport, SpeakerEmbedding, StyleScore,
};
use msms_core::model::{AcousticModel, ModelConfig};
use msms_core::trainer::{self, LossComponents, SystemKind, TrainEvent, TrainedSystem};
use msms_core::trials::{EvalEntry, NATURAL};
use msms_core::vocoder::{train_vocoder, Vocoder, VocoderConfig, VocoderTrainConfig};
use msms_core::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus_io;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::wav;
use crate::workspace::{RunManifest, Workspace};

/// FNV-1a; stable across platforms and releases.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Sidecar of an acoustic-model checkpoint: what is needed to rebuild the
/// parameter layout before loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub system: SystemKind,
    pub model: ModelConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocoderMeta {
    pub voice: u8,
    pub prefix: String,
    pub config: VocoderConfig,
    pub train: VocoderTrainConfig,
    pub clips: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiceCount {
    pub voice: u8,
    pub utterances: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub utterances: usize,
    pub voices: Vec<VoiceCount>,
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub system: String,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub validation: LossComponents,
}

/// Similarity of every system to the natural renders of one voice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiceSimilarity {
    pub voice: u8,
    pub report: SimilarityReport,
}

/// Mean cosine of one system/voice against each voice's natural renders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityRow {
    pub system: String,
    pub voice: u8,
    pub affinity: BTreeMap<u8, f64>,
    pub closest: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSimReport {
    pub voices: Vec<VoiceSimilarity>,
    pub affinity: Vec<AffinityRow>,
}

impl SpeakerSimReport {
    /// Whether every synthesized system/voice is closest to its own voice.
    pub fn all_closest_to_own_voice(&self) -> bool {
        self.affinity.iter().all(|r| r.closest == Some(r.voice))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.voices {
            s += &format!("Voice {} ({} sentences, reference {})\n", v.voice, v.report.sentences, v.report.reference);
            s += &v.report.to_table();
            s.push('\n');
        }
        s += &format!("{:<20} {:>5} {:>8} {:>9}\n", "System", "Voice", "Closest", "Own cos.");
        for r in &self.affinity {
            let closest = r.closest.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
            s += &format!("{:<20} {:>5} {:>8} {:>9.4}\n", r.system, r.voice, closest, r.affinity.get(&r.voice).copied().unwrap_or(f64::NAN));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchRow {
    pub system: String,
    pub voice: u8,
    pub distribution: PitchDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchReport {
    pub rows: Vec<PitchRow>,
}

impl PitchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<20} {:>5} {:>12} {:>13}\n", "System", "Voice", "Median Hz", "Voiced frames");
        for r in &self.rows {
            let m = r.distribution.median_hz.map(|m| format!("{m:.1}")).unwrap_or_else(|| "-".into());
            s += &format!("{:<20} {:>5} {:>12} {:>13}\n", r.system, r.voice, m, r.distribution.voiced_frames);
        }
        s
    }
}

pub fn style_text(score: &StyleScore) -> String {
    let pitch = score.measured.median_pitch_hz.map(|m| format!("{m:.1}")).unwrap_or_else(|| "-".into());
    let perr = score.pitch_err.map(|e| format!("{:.1}%", 100.0 * e)).unwrap_or_else(|| "-".into());
    format!(
        "voice {} style {}: median pitch {pitch} Hz (expected {:.1}, error {perr}); phone frames {:.2} (expected {:.2}, error {:.1}%); {} utterances\n",
        score.voice,
        style_name(score.style),
        score.expected_pitch_hz,
        score.measured.mean_phone_frames,
        score.expected_phone_frames,
        100.0 * score.rate_err,
        score.measured.utterances
    )
}

pub fn style_name(style: Style) -> &'static str {
    match style {
        Style::Tts => "tts",
        Style::LongForm => "longform",
    }
}

/// Label of a system in evaluation sets and listening tests.
pub fn eval_labels(system: &SystemKind) -> Vec<(String, Style)> {
    match system {
        SystemKind::Msms => vec![("msms-tts".into(), Style::Tts), ("msms-longform".into(), Style::LongForm)],
        SystemKind::MultiSpeaker => vec![("multi-speaker".into(), Style::Tts)],
        SystemKind::PretrainFinetune { .. } => vec![("pretrain-finetune".into(), Style::Tts)],
        SystemKind::SingleSpeaker { .. } => vec![("single-speaker".into(), Style::Tts)],
    }
}

/// Feature dump next to an evaluation WAV.
pub fn feature_path(wav_path: &Path) -> PathBuf {
    wav_path.with_extension("feat")
}

pub const PITCH: &str = "pitch";

/// Workspace plus configuration; one method per pipeline stage.
pub struct Lab {
    pub ws: Workspace,
    pub cfg: RunConfig,
}

impl Lab {
    pub fn new(ws: Workspace, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Lab { ws, cfg })
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        self.ws.open(self.cfg.experiment.as_deref())
    }

    fn corpus_dir(&self, m: &RunManifest) -> Result<PathBuf> {
        if m.corpus.is_none() {
            return Err(Error::Missing { what: "corpus (run gen-corpus first)", path: self.ws.corpus_dir() });
        }
        Ok(self.ws.corpus_dir())
    }

    pub fn speakers(&self) -> Result<Vec<SpeakerSpec>> {
        let m = self.manifest()?;
        corpus_io::read_speakers(&self.corpus_dir(&m)?)
    }

    pub fn gen_corpus(&self) -> Result<CorpusSummary> {
        let mut m = self.manifest()?;
        let corpus = build_corpus(&default_speakers(), &self.cfg.corpus)?;
        let dir = self.ws.corpus_dir();
        for sub in ["wav", "features"] {
            let d = dir.join(sub);
            if d.exists() {
                fs::remove_dir_all(&d).map_err(Error::io(&d))?;
            }
        }
        let records = corpus_io::write_corpus(&dir, &corpus)?;
        let rel = PathBuf::from("corpus").join(corpus_io::MANIFEST);
        m.corpus = Some(rel.clone());
        m.seeds.corpus = Some(self.cfg.corpus.seed);
        self.ws.save(&m)?;
        let voices = corpus
            .seconds_by_speaker()
            .into_iter()
            .map(|(voice, seconds)| VoiceCount { voice, utterances: records.iter().filter(|r| r.speaker == voice).count(), seconds })
            .collect();
        Ok(CorpusSummary { utterances: records.len(), voices, manifest: rel })
    }

    pub fn examples(&self) -> Result<Vec<trainer::Example>> {
        let m = self.manifest()?;
        corpus_io::load_examples(&self.corpus_dir(&m)?)
    }

    fn checkpoint_rel(name: &str) -> PathBuf {
        PathBuf::from("checkpoints").join(format!("{name}.msms"))
    }

    pub fn train(&self, system: SystemKind) -> Result<TrainSummary> {
        let mut m = self.manifest()?;
        let examples = corpus_io::load_examples(&self.corpus_dir(&m)?)?;
        let name = system.name();
        let cadence_dir = self.ws.checkpoint_dir().join(&name);
        if cadence_dir.exists() {
            fs::remove_dir_all(&cadence_dir).map_err(Error::io(&cadence_dir))?;
        }
        let mut io_error = None;
        let mut hook = |ev: TrainEvent<'_>| -> msms_core::Result<()> {
            if let TrainEvent::Metrics { event, store } = ev {
                let path = cadence_dir.join(format!("{}-{:06}.msms", event.phase, event.step));
                if let Err(e) = checkpoint::save_store(&path, store) {
                    io_error.get_or_insert(e);
                }
            }
            Ok(())
        };
        let ts = trainer::train(system, &examples, &self.cfg.train, &mut hook)?;
        if let Some(e) = io_error {
            return Err(e);
        }
        let rel = Self::checkpoint_rel(&name);
        self.save_system(&rel, &ts)?;
        let metrics = self.ws.metrics_path(&name);
        fsutil::write_jsonl(&metrics, &ts.metrics)?;
        m.checkpoints.insert(name.clone(), rel.clone());
        m.seeds.train.insert(name.clone(), self.cfg.train.seed);
        self.ws.save(&m)?;
        let validation = ts.metrics.last().map(|e| e.validation).unwrap_or_default();
        Ok(TrainSummary { system: name, checkpoint: rel, metrics, validation })
    }

    fn save_system(&self, rel: &Path, ts: &TrainedSystem) -> Result<()> {
        let path = self.ws.path(rel);
        checkpoint::save_store(&path, &ts.store)?;
        let meta = CheckpointMeta { system: ts.system, model: ts.model.config.clone(), seed: self.cfg.train.seed };
        fsutil::write_json(&path.with_extension("json"), &meta)
    }

    /// Rebuilds a trained system from its checkpoint and sidecar.
    pub fn load_system(&self, name: &str) -> Result<TrainedSystem> {
        let m = self.manifest()?;
        let rel = m
            .checkpoints
            .get(name)
            .ok_or_else(|| Error::Missing { what: "checkpoint", path: self.ws.path(Self::checkpoint_rel(name)) })?;
        load_checkpoint(&self.ws.path(rel))
    }

    pub fn train_vocoder(&self, voice: u8) -> Result<VocoderMeta> {
        let mut m = self.manifest()?;
        let clips = corpus_io::load_voice_audio(&self.corpus_dir(&m)?, voice)?;
        if clips.is_empty() {
            return Err(Error::Usage(format!("voice {voice} has no training audio")));
        }
        let refs: Vec<&[f32]> = clips.iter().map(Vec::as_slice).collect();
        let prefix = format!("vocoder.v{voice}");
        let tv = train_vocoder(&refs, &self.cfg.vocoder, &self.cfg.vocoder_train, &prefix)?;
        let rel = PathBuf::from("vocoders").join(format!("v{voice}.msms"));
        let path = self.ws.path(&rel);
        checkpoint::save_store(&path, &tv.store)?;
        let meta = VocoderMeta {
            voice,
            prefix,
            config: self.cfg.vocoder.clone(),
            train: self.cfg.vocoder_train.clone(),
            clips: clips.len(),
            final_loss: tv.losses.last().copied().unwrap_or(f64::NAN),
        };
        fsutil::write_json(&path.with_extension("json"), &meta)?;
        m.vocoders.insert(voice, rel);
        m.seeds.vocoder.insert(format!("v{voice}"), self.cfg.vocoder_train.seed);
        self.ws.save(&m)?;
        Ok(meta)
    }

    pub fn load_vocoder(&self, voice: u8) -> Result<(Vocoder, ParamStore<f32>)> {
        let m = self.manifest()?;
        let rel = m.vocoders.get(&voice).ok_or_else(|| Error::Missing {
            what: "vocoder checkpoint (run train-vocoder for this voice)",
            path: self.ws.vocoder_dir().join(format!("v{voice}.msms")),
        })?;
        let path = self.ws.path(rel);
        let meta: VocoderMeta = fsutil::read_json(&path.with_extension("json"))?;
        let mut store = ParamStore::new();
        let vocoder = Vocoder::new(meta.config, &meta.prefix, &mut store, meta.train.seed)?;
        checkpoint::load_store(&path, &mut store)?;
        Ok((vocoder, store))
    }

    pub fn eval_sentences(&self) -> Result<Vec<EvalSentence>> {
        let mut s = sample_eval_sentences(self.cfg.eval.sentences_per_domain, self.cfg.eval.sentence_seed)?;
        if let Some(n) = self.cfg.eval.max_sentences {
            s.truncate(n.max(1));
        }
        Ok(s)
    }

    /// Synthesizes the evaluation sentences with each named system (all
    /// trained systems when `systems` is empty) and renders natural
    /// references for every evaluation voice.
    pub fn synth_eval_set(&self, systems: &[String]) -> Result<Vec<EvalEntry>> {
        let mut m = self.manifest()?;
        let speakers = corpus_io::read_speakers(&self.corpus_dir(&m)?)?;
        let names: Vec<String> = if systems.is_empty() { m.checkpoints.keys().cloned().collect() } else { systems.to_vec() };
        let sentences = self.eval_sentences()?;
        let voices: Vec<&SpeakerSpec> = self
            .cfg
            .eval
            .voices
            .iter()
            .map(|v| speakers.iter().find(|s| s.id == *v).ok_or_else(|| Error::Usage(format!("unknown voice {v}"))))
            .collect::<Result<_>>()?;
        let root = self.ws.eval_dir();
        m.eval_index = None;
        self.ws.save(&m)?;
        if root.exists() {
            fs::remove_dir_all(&root).map_err(Error::io(&root))?;
        }
        let mut index = Vec::new();
        let mut vocoders: BTreeMap<u8, (Vocoder, ParamStore<f32>)> = BTreeMap::new();
        for name in &names {
            let ts = self.load_system(name)?;
            let targets: Vec<&SpeakerSpec> = match ts.system.target() {
                Some(t) => vec![speakers.iter().find(|s| s.id == t).ok_or_else(|| Error::Usage(format!("unknown voice {t}")))?],
                None => voices.clone(),
            };
            for (label, style) in eval_labels(&ts.system) {
                for spk in &targets {
                    if !vocoders.contains_key(&spk.id) {
                        vocoders.insert(spk.id, self.load_vocoder(spk.id)?);
                    }
                    let (voc, vstore) = &vocoders[&spk.id];
                    let cond = ts.system.conditioning(spk.id, style);
                    for sent in &sentences {
                        let entry = entry(&label, spk.id, style, sent);
                        let out = ts.model.infer(&ts.store, &sent.tokens, &cond)?;
                        let pitch = expand_pitch(&out.pitch_hz, &out.durations)?;
                        let seed = self.cfg.eval.seed ^ stable_hash(&entry.id);
                        let audio = voc.generate(vstore, &out.mel, self.cfg.eval.temperature, seed)?;
                        write_entry(&root, &entry, &audio, &out.mel, &pitch)?;
                        log::info!("synthesized {}", entry.id);
                        index.push(entry);
                    }
                }
            }
        }
        for spk in &voices {
            for (i, sent) in sentences.iter().enumerate() {
                let entry = entry(NATURAL, spk.id, spk.style, sent);
                let seed = utterance_seed(self.cfg.eval.seed ^ 0x4E47_5EED, spk.id, i);
                let r = render_utterance(&sent.tokens, spk, &StyleSpec::of(spk.style), seed)?;
                let mel = dsp::mel_features(&r.audio)?;
                let pitch = extract_pitch(&r.audio, &PitchConfig::default());
                write_entry(&root, &entry, &r.audio, &mel, &pitch)?;
                index.push(entry);
            }
        }
        index.sort_by(|a, b| a.id.cmp(&b.id));
        let rel = PathBuf::from("eval").join("index.jsonl");
        fsutil::write_jsonl(&self.ws.path(&rel), &index)?;
        m.eval_index = Some(rel);
        m.seeds.eval = Some(self.cfg.eval.seed);
        self.ws.save(&m)?;
        Ok(index)
    }

    pub fn read_index(&self) -> Result<Vec<EvalEntry>> {
        let m = self.manifest()?;
        let rel = m
            .eval_index
            .as_ref()
            .ok_or_else(|| Error::Missing { what: "evaluation index (run synth-eval-set first)", path: self.ws.eval_dir() })?;
        fsutil::read_jsonl(&self.ws.path(rel))
    }

    fn entry_features(&self, e: &EvalEntry) -> Result<(Tensor<f32>, Vec<f32>)> {
        let path = feature_path(&self.ws.eval_dir().join(&e.path));
        let named = checkpoint::read_tensors(&path)?;
        let get = |n: &str| {
            named
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::format(&path, format!("no tensor named {n}")))
        };
        Ok((get(corpus_io::MEL)?, get(PITCH)?.into_data()))
    }

    pub fn eval_speaker_sim(&self) -> Result<SpeakerSimReport> {
        let index = self.read_index()?;
        let embedder = Embedder::new();
        // (system, voice) -> sentence -> embedding
        let mut emb: BTreeMap<(String, u8), BTreeMap<String, SpeakerEmbedding>> = BTreeMap::new();
        for e in &index {
            let (mel, pitch) = self.entry_features(e)?;
            emb.entry((e.system.clone(), e.voice)).or_default().insert(e.sentence.clone(), embedder.embed(&mel, &pitch)?);
        }
        let naturals: BTreeMap<u8, BTreeMap<String, SpeakerEmbedding>> =
            emb.iter().filter(|((s, _), _)| s == NATURAL).map(|((_, v), m)| (*v, m.clone())).collect();
        if naturals.is_empty() {
            return Err(Error::Usage("evaluation set has no natural renders".into()));
        }
        let mut voices = Vec::new();
        for (&voice, _) in &naturals {
            let systems: Vec<msms_core::eval::SystemEmbeddings> = emb
                .iter()
                .filter(|((_, v), _)| *v == voice)
                .map(|((s, _), m)| msms_core::eval::SystemEmbeddings { system: s.clone(), sentences: m.clone() })
                .collect();
            voices.push(VoiceSimilarity { voice, report: similarity_report(&systems, NATURAL)? });
        }
        let mut affinity = Vec::new();
        for ((system, voice), m) in emb.iter().filter(|((s, _), _)| s != NATURAL) {
            let a = voice_affinity(m, &naturals)?;
            affinity.push(AffinityRow { system: system.clone(), voice: *voice, closest: closest_voice(&a), affinity: a });
        }
        let report = SpeakerSimReport { voices, affinity };
        self.write_report("speaker_sim", &report, &report.to_text())?;
        Ok(report)
    }

    pub fn eval_pitch(&self) -> Result<PitchReport> {
        let index = self.read_index()?;
        let mut tracks: BTreeMap<(String, u8), Vec<Vec<f32>>> = BTreeMap::new();
        for e in &index {
            tracks.entry((e.system.clone(), e.voice)).or_default().push(self.entry_features(e)?.1);
        }
        let rows = tracks
            .into_iter()
            .map(|((system, voice), t)| PitchRow { system, voice, distribution: pitch_distribution(t.iter().map(Vec::as_slice)) })
            .collect();
        let report = PitchReport { rows };
        self.write_report("pitch", &report, &report.to_text())?;
        Ok(report)
    }

    pub fn eval_style(&self, system: &str, voice: u8, style: Style) -> Result<StyleScore> {
        let ts = self.load_system(system)?;
        let speakers = self.speakers()?;
        let spk = speakers.iter().find(|s| s.id == voice).ok_or_else(|| Error::Usage(format!("unknown voice {voice}")))?;
        let sentences: Vec<Vec<u8>> = self.eval_sentences()?.into_iter().map(|s| s.tokens).collect();
        let score = style_transfer_score(&ts.model, &ts.store, &ts.system, spk, style, &sentences)?;
        self.write_report(&format!("style-{system}-v{voice}-{}", style_name(style)), &score, &style_text(&score))?;
        Ok(score)
    }

    /// Writes `<name>.json` and `<name>.txt` under the reports directory.
    pub fn write_report<T: Serialize>(&self, name: &str, value: &T, text: &str) -> Result<()> {
        let dir = self.ws.reports_dir();
        fsutil::write_json(&dir.join(format!("{name}.json")), value)?;
        fsutil::write_atomic(&dir.join(format!("{name}.txt")), text.as_bytes())
    }

    /// Concatenates every text report into `reports/report.txt`.
    pub fn report(&self) -> Result<String> {
        let dir = self.ws.reports_dir();
        let m = self.manifest()?;
        let mut s = format!("Experiment {}\n\n", m.experiment);
        for (name, rel) in &m.checkpoints {
            let metrics: Vec<trainer::MetricsEvent> = fsutil::read_jsonl(&self.ws.metrics_path(name)).unwrap_or_default();
            if let Some(last) = metrics.last() {
                s += &format!("{name}: {} step {} validation {:.4} ({})\n", last.phase, last.step, last.validation.total, rel.display());
            }
        }
        s.push('\n');
        let mut texts: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt") && p.file_stem().is_some_and(|n| n != "report"))
                .collect(),
            Err(_) => Vec::new(),
        };
        texts.sort();
        for p in texts {
            let body = fs::read_to_string(&p).map_err(Error::io(&p))?;
            s += &format!("== {} ==\n{body}\n", p.file_stem().unwrap_or_default().to_string_lossy());
        }
        fsutil::write_atomic(&dir.join("report.txt"), s.as_bytes())?;
        Ok(s)
    }
}

/// Loads a checkpoint written by [`Lab::train`].
pub fn load_checkpoint(path: &Path) -> Result<TrainedSystem> {
    let meta_path = path.with_extension("json");
    if !path.exists() {
        return Err(Error::Missing { what: "checkpoint", path: path.into() });
    }
    let meta: CheckpointMeta = fsutil::read_json(&meta_path)?;
    let mut store = ParamStore::new();
    let model = AcousticModel::new(meta.model, &mut store, meta.seed)?;
    checkpoint::load_store(path, &mut store)?;
    Ok(TrainedSystem { system: meta.system, model, store, metrics: Vec::new() })
}

fn entry(system: &str, voice: u8, style: Style, sent: &EvalSentence) -> EvalEntry {
    let domain = format!("{:?}", sent.domain).to_lowercase();
    EvalEntry {
        id: format!("{system}-v{voice}-{}", sent.id),
        system: system.into(),
        voice,
        style,
        domain: sent.domain,
        sentence: sent.id.clone(),
        path: format!("{system}/v{voice}/{domain}/{}.wav", sent.id),
    }
}

fn write_entry(root: &Path, e: &EvalEntry, audio: &[f32], mel: &Tensor<f32>, pitch: &[f32]) -> Result<()> {
    let path = root.join(&e.path);
    wav::write(&path, audio)?;
    let pitch = Tensor::new(&[pitch.len(), 1], pitch.to_vec())?;
    checkpoint::write_tensors(&feature_path(&path), [(corpus_io::MEL, mel), (PITCH, &pitch)])
}
