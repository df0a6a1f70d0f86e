//! Training regimes for the acoustic model.
//!
//! Four system kinds share one training loop and differ only in which
//! utterances feed each batch and which conditioning slots they carry:
//! joint speaker and style labels, speaker labels with a constant style
//! slot, an unconditioned model pre-trained on everything and fine-tuned on
//! one voice, and an unconditioned model trained on one voice only.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ProsodyTrack, RenderedUtterance, Split, Style};
use crate::dsp;
use crate::error::{Error, Result};
use crate::model::{log_energy, AcousticModel, ConditioningInput, ForwardPass, Mode, ModelConfig};
use crate::optim::{AdamConfig, AdamState, LrSchedule};
use crate::tensor::{Grads, ParamStore, Scalar, Session, Tensor, Var};
use crate::vocoder::mel_statistics;

/// Which of the compared systems a model is trained as.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    /// Speaker and style conditioning.
    Msms,
    /// Speaker conditioning; the style slot is held at 0 for all data.
    MultiSpeaker,
    /// Unconditioned; all data, then the target voice only.
    PretrainFinetune { target: u8 },
    /// Unconditioned; the target voice only.
    SingleSpeaker { target: u8 },
}

impl SystemKind {
    pub fn name(&self) -> String {
        match self {
            SystemKind::Msms => "msms".into(),
            SystemKind::MultiSpeaker => "multi-speaker".into(),
            SystemKind::PretrainFinetune { target } => format!("pretrain-finetune-v{target}"),
            SystemKind::SingleSpeaker { target } => format!("single-speaker-v{target}"),
        }
    }

    pub fn is_conditioned(&self) -> bool {
        matches!(self, SystemKind::Msms | SystemKind::MultiSpeaker)
    }

    pub fn target(&self) -> Option<u8> {
        match self {
            SystemKind::PretrainFinetune { target } | SystemKind::SingleSpeaker { target } => Some(*target),
            _ => None,
        }
    }

    /// Conditioning slots used for an utterance of `speaker` in `style`.
    /// Unconditioned systems still carry the speaker slot, which selects the
    /// pitch reference but feeds no projection.
    pub fn conditioning(&self, speaker: u8, style: Style) -> ConditioningInput {
        let s = speaker as usize - 1;
        match self {
            SystemKind::Msms => ConditioningInput::new(s, style.index()),
            _ => ConditioningInput::new(s, 0),
        }
    }

    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.conditioned = self.is_conditioned();
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { mel: 1.0, duration: 0.1, pitch: 0.1, energy: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.mel, self.duration, self.pitch, self.energy].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: usize,
    /// Steps of the target-voice phase of pre-train/fine-tune runs.
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub clip_norm: f64,
    pub weights: LossWeights,
    /// Validation every this many steps (0 = only at start and end).
    pub validation_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            steps: 2000,
            finetune_steps: 100,
            batch_size: 16,
            peak_lr: 1e-3,
            clip_norm: 1.0,
            weights: LossWeights::default(),
            validation_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be positive".into()));
        }
        if !(self.peak_lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// One utterance prepared for training.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub speaker: u8,
    pub style: Style,
    pub split: Split,
    pub tokens: Vec<u8>,
    pub prosody: ProsodyTrack,
    /// `[frames, 80]` log-Mel features of the pre-emphasized audio.
    pub mel: Tensor<f32>,
}

impl Example {
    pub fn from_rendered(u: &RenderedUtterance) -> Result<Self> {
        let mel = dsp::mel_features(&u.audio)?;
        if mel.rows() != u.record.prosody.frames() {
            return Err(Error::shape("utterance frames", &[u.record.prosody.frames()], mel.shape()));
        }
        Ok(Example {
            id: u.record.id.clone(),
            speaker: u.record.speaker,
            style: u.record.style,
            split: u.record.split,
            tokens: u.record.tokens.clone(),
            prosody: u.record.prosody.clone(),
            mel,
        })
    }
}

pub fn prepare_examples(utterances: &[RenderedUtterance]) -> Result<Vec<Example>> {
    utterances.iter().map(Example::from_rendered).collect()
}

pub fn corpus_examples(corpus: &Corpus) -> Result<Vec<Example>> {
    prepare_examples(&corpus.utterances)
}

/// Per-component losses of one utterance or their mean over several.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

impl LossComponents {
    fn accumulate(&mut self, o: &LossComponents) {
        self.total += o.total;
        self.mel += o.mel;
        self.duration += o.duration;
        self.pitch += o.pitch;
        self.energy += o.energy;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.total *= s;
        self.mel *= s;
        self.duration *= s;
        self.pitch *= s;
        self.energy *= s;
        self
    }
}

/// Regression targets of one utterance in the model's units.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets<T> {
    pub mel: Tensor<T>,
    pub log_duration: Vec<f64>,
    /// Speaker-normalized log-pitch of voiced phones; `None` when unvoiced.
    pub pitch: Vec<Option<f64>>,
    pub log_energy: Vec<f64>,
}

impl<T: Scalar> Targets<T> {
    /// Targets of `ex` with pitch normalized by `reference_hz`.
    pub fn new(ex: &Example, reference_hz: f64) -> Self {
        let p = &ex.prosody;
        Targets {
            mel: ex.mel.cast(),
            log_duration: p.durations.iter().map(|&d| libm::log(d as f64)).collect(),
            pitch: p
                .pitch
                .iter()
                .map(|&hz| (hz > 0.0).then(|| libm::log(hz as f64 / reference_hz)))
                .collect(),
            log_energy: p.energy.iter().map(|&e| log_energy(e as f64)).collect(),
        }
    }
}

/// Weighted sum of L1 Mel loss, log-duration MSE, voiced-phone pitch MSE and
/// log-energy MSE. Returns the graph scalar and the component values.
pub fn loss<T: Scalar>(
    sess: &mut Session<'_, T>,
    out: &ForwardPass,
    target: &Targets<T>,
    weights: &LossWeights,
) -> Result<(Var, LossComponents)> {
    let g = &mut sess.graph;
    if g.shape(out.mel) != target.mel.shape() {
        return Err(Error::shape("mel loss", g.shape(out.mel), target.mel.shape()));
    }
    let n = target.log_duration.len();
    if g.shape(out.log_duration)[0] != n || target.pitch.len() != n || target.log_energy.len() != n {
        return Err(Error::shape("variance loss", g.shape(out.log_duration), &[n]));
    }
    let column = |v: &[f64]| Tensor::new(&[v.len(), 1], v.iter().map(|&x| T::of(x)).collect());

    let tm = g.constant(target.mel.clone());
    let d = g.sub(out.mel, tm)?;
    let d = g.abs(d);
    let mel = g.mean(d);

    let mse = |g: &mut crate::tensor::Graph<T>, pred: Var, t: &[f64]| -> Result<Var> {
        let tv = g.constant(column(t)?);
        let d = g.sub(pred, tv)?;
        let sq = g.square(d);
        Ok(g.mean(sq))
    };
    let duration = mse(g, out.log_duration, &target.log_duration)?;
    let energy = mse(g, out.energy, &target.log_energy)?;

    let voiced = target.pitch.iter().filter(|p| p.is_some()).count();
    let pitch = if voiced == 0 {
        g.constant(Tensor::scalar(T::zero()))
    } else {
        let tv: Vec<f64> = target.pitch.iter().map(|p| p.unwrap_or(0.0)).collect();
        let tv = g.constant(column(&tv)?);
        let d = g.sub(out.pitch, tv)?;
        let mask = target.pitch.iter().map(|p| if p.is_some() { T::one() } else { T::zero() }).collect();
        let d = g.mask_mul(d, mask)?;
        let sq = g.square(d);
        let s = g.sum(sq);
        g.scale(s, 1.0 / voiced as f64)
    };

    let parts = [(mel, weights.mel), (duration, weights.duration), (pitch, weights.pitch), (energy, weights.energy)];
    let mut total: Option<Var> = None;
    for (v, w) in parts {
        let s = g.scale(v, w);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.expect("four terms");
    let val = |v: Var| g.value(v).data()[0].f64();
    let comps = LossComponents {
        total: val(total),
        mel: val(mel),
        duration: val(duration),
        pitch: val(pitch),
        energy: val(energy),
    };
    Ok((total, comps))
}

/// Teacher-forced loss of one example with dropout off.
pub fn example_loss<T: Scalar>(
    model: &AcousticModel,
    store: &ParamStore<T>,
    system: &SystemKind,
    ex: &Example,
    weights: &LossWeights,
) -> Result<LossComponents> {
    let cond = system.conditioning(ex.speaker, ex.style);
    let reference = model.pitch_reference_hz(store, cond.speaker_index);
    let mut sess = Session::inference(store);
    let out = model.forward(&mut sess, &ex.tokens, &cond, Mode::TeacherForced(&ex.prosody))?;
    let (_, c) = loss(&mut sess, &out, &Targets::new(ex, reference), weights)?;
    Ok(c)
}

/// Mean teacher-forced loss over `examples`.
pub fn evaluate<T: Scalar>(
    model: &AcousticModel,
    store: &ParamStore<T>,
    system: &SystemKind,
    examples: &[&Example],
    weights: &LossWeights,
) -> Result<LossComponents> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation examples"));
    }
    let mut acc = LossComponents::default();
    for ex in examples {
        acc.accumulate(&example_loss(model, store, system, ex, weights)?);
    }
    Ok(acc.scaled(1.0 / examples.len() as f64))
}

/// Median voiced phone pitch of each voice over `examples`.
pub fn pitch_references(examples: &[&Example]) -> Vec<(u8, f64)> {
    let mut speakers: Vec<u8> = examples.iter().map(|e| e.speaker).collect();
    speakers.sort_unstable();
    speakers.dedup();
    speakers
        .into_iter()
        .filter_map(|s| {
            let v: Vec<f32> = examples
                .iter()
                .filter(|e| e.speaker == s)
                .flat_map(|e| e.prosody.pitch.iter().copied().filter(|&p| p > 0.0))
                .collect();
            dsp::median(&v).map(|m| (s, m))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsEvent {
    pub system: String,
    pub phase: String,
    pub step: usize,
    pub lr: f64,
    /// Mean training loss since the previous event; `None` at step 0.
    pub train: Option<LossComponents>,
    pub validation: LossComponents,
}

/// Progress notifications from a training run.
pub enum TrainEvent<'a> {
    /// The utterances of one update with the conditioning each received.
    Batch {
        phase: &'a str,
        step: usize,
        items: &'a [(String, u8, ConditioningInput)],
    },
    /// A validation point with the current weights.
    Metrics {
        event: &'a MetricsEvent,
        store: &'a ParamStore<f32>,
    },
}

#[derive(Clone, Debug)]
pub struct TrainedSystem {
    pub system: SystemKind,
    pub model: AcousticModel,
    pub store: ParamStore<f32>,
    pub metrics: Vec<MetricsEvent>,
}

fn pool<'a>(examples: &'a [Example], target: Option<u8>, split: Split) -> Vec<&'a Example> {
    examples
        .iter()
        .filter(|e| e.split == split && target.is_none_or(|t| e.speaker == t))
        .collect()
}

struct Phase<'a> {
    name: &'a str,
    steps: usize,
    train: Vec<&'a Example>,
    validation: Vec<&'a Example>,
    seed: u64,
}

fn run_phase(
    ts: &mut TrainedSystem,
    phase: Phase<'_>,
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<()> {
    if phase.train.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    if phase.validation.is_empty() {
        return Err(Error::Empty("validation pool"));
    }
    let system = ts.system;
    let name = system.name();
    let mut rng = ChaCha8Rng::seed_from_u64(phase.seed);
    let mut adam = AdamState::new(&ts.store, AdamConfig { lr: cfg.peak_lr, ..AdamConfig::default() });
    let schedule = LrSchedule::for_run(cfg.peak_lr, phase.steps as u64);
    let refs: Vec<f64> = (0..ts.model.config.speaker_slots).map(|s| ts.model.pitch_reference_hz(&ts.store, s)).collect();

    let emit = |ts: &mut TrainedSystem, hook: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>, step, lr, train| -> Result<()> {
        let validation = evaluate(&ts.model, &ts.store, &system, &phase.validation, &cfg.weights)?;
        let event = MetricsEvent { system: name.clone(), phase: phase.name.into(), step, lr, train, validation };
        log::info!("{} {} step {}: validation {:.4}", event.system, event.phase, step, validation.total);
        hook(TrainEvent::Metrics { event: &event, store: &ts.store })?;
        ts.metrics.push(event);
        Ok(())
    };
    emit(ts, hook, 0, 0.0, None)?;

    let mut since = LossComponents::default();
    let mut since_n = 0usize;
    for step in 1..=phase.steps {
        let batch: Vec<&Example> = (0..cfg.batch_size).map(|_| phase.train[rng.random_range(0..phase.train.len())]).collect();
        let items: Vec<(String, u8, ConditioningInput)> = batch
            .iter()
            .map(|e| (e.id.clone(), e.speaker, system.conditioning(e.speaker, e.style)))
            .collect();
        hook(TrainEvent::Batch { phase: phase.name, step, items: &items })?;

        let mut grads = Grads::new(&ts.store);
        let mut batch_loss = LossComponents::default();
        for (i, (ex, (_, _, cond))) in batch.iter().zip(&items).enumerate() {
            let dropout_seed = phase.seed ^ ((step as u64) << 20) ^ i as u64;
            let mut sess = Session::new(&ts.store, true, dropout_seed);
            let out = ts.model.forward(&mut sess, &ex.tokens, cond, Mode::TeacherForced(&ex.prosody))?;
            let targets = Targets::new(ex, refs[cond.speaker_index]);
            let (l, c) = loss(&mut sess, &out, &targets, &cfg.weights)?;
            sess.backward_into(l, &mut grads)?;
            batch_loss.accumulate(&c);
        }
        grads.scale(1.0 / cfg.batch_size as f32);
        let norm = grads.global_norm();
        if norm > cfg.clip_norm {
            grads.scale((cfg.clip_norm / norm) as f32);
        }
        let lr = schedule.lr(step as u64);
        adam.set_lr(lr);
        adam.step(&mut ts.store, &grads)?;
        since.accumulate(&batch_loss.scaled(1.0 / cfg.batch_size as f64));
        since_n += 1;

        let cadence = cfg.validation_every > 0 && step % cfg.validation_every == 0;
        if cadence || step == phase.steps {
            let train = since.scaled(1.0 / since_n as f64);
            emit(ts, hook, step, lr, Some(train))?;
            since = LossComponents::default();
            since_n = 0;
        }
    }
    Ok(())
}

/// Fresh model for `system` with pitch references and Mel statistics taken
/// from `train`.
pub fn init_system(system: SystemKind, cfg: &TrainConfig, train: &[&Example]) -> Result<TrainedSystem> {
    if train.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    let mut store = ParamStore::<f32>::new();
    let model = AcousticModel::new(system.model_config(&cfg.model), &mut store, cfg.seed)?;
    for (s, hz) in pitch_references(train) {
        model.set_pitch_reference(&mut store, s as usize - 1, hz)?;
    }
    let mels: Vec<Tensor<f32>> = train.iter().map(|e| e.mel.clone()).collect();
    let (mean, std) = mel_statistics(&mels)?;
    model.set_mel_statistics(&mut store, &mean, &std)?;
    Ok(TrainedSystem { system, model, store, metrics: Vec::new() })
}

/// Trains `system` on `examples` (train split for updates, validation split
/// for metrics). Pre-train/fine-tune runs both phases.
pub fn train(
    system: SystemKind,
    examples: &[Example],
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainedSystem> {
    cfg.validate()?;
    match system {
        SystemKind::PretrainFinetune { target } => {
            let pre = pretrain(examples, cfg, hook)?;
            finetune(pre, target, examples, cfg, hook)
        }
        _ => {
            let target = system.target();
            let train_pool = pool(examples, target, Split::Train);
            if train_pool.is_empty() {
                return Err(Error::Input(format!("no training data for {}", system.name())));
            }
            let mut ts = init_system(system, cfg, &train_pool)?;
            let phase = Phase {
                name: "train",
                steps: cfg.steps,
                validation: pool(examples, target, Split::Validation),
                train: train_pool,
                seed: cfg.seed,
            };
            run_phase(&mut ts, phase, cfg, hook)?;
            Ok(ts)
        }
    }
}

/// Phase 1 of pre-train/fine-tune: unconditioned model on all voices. The
/// result is target independent; [`finetune`] specializes it.
pub fn pretrain(
    examples: &[Example],
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainedSystem> {
    cfg.validate()?;
    let train_pool = pool(examples, None, Split::Train);
    // Target 0 marks the shared, not yet specialized model.
    let mut ts = init_system(SystemKind::PretrainFinetune { target: 0 }, cfg, &train_pool)?;
    let phase = Phase {
        name: "pretrain",
        steps: cfg.steps,
        validation: pool(examples, None, Split::Validation),
        train: train_pool,
        seed: cfg.seed,
    };
    run_phase(&mut ts, phase, cfg, hook)?;
    Ok(ts)
}

/// Phase 2: continues every parameter on the target voice only.
pub fn finetune(
    mut pre: TrainedSystem,
    target: u8,
    examples: &[Example],
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainedSystem> {
    if cfg.finetune_steps == 0 {
        return Err(Error::Config("fine-tuning needs at least one step".into()));
    }
    let train_pool = pool(examples, Some(target), Split::Train);
    if train_pool.is_empty() {
        return Err(Error::Input(format!("no training data for voice {target}")));
    }
    pre.system = SystemKind::PretrainFinetune { target };
    for m in &mut pre.metrics {
        m.system = pre.system.name();
    }
    let phase = Phase {
        name: "finetune",
        steps: cfg.finetune_steps,
        validation: pool(examples, Some(target), Split::Validation),
        train: train_pool,
        seed: cfg.seed ^ 0xF17E,
    };
    run_phase(&mut pre, phase, cfg, hook)?;
    Ok(pre)
}

/// Hook that ignores every event.
pub fn no_hook(_: TrainEvent<'_>) -> Result<()> {
    Ok(())
}

/// Number of examples per voice in a pool, for logging and checks.
pub fn counts_by_speaker(examples: &[&Example]) -> Vec<(u8, usize)> {
    let mut out: Vec<(u8, usize)> = Vec::new();
    for e in examples {
        match out.iter_mut().find(|(s, _)| *s == e.speaker) {
            Some((_, n)) => *n += 1,
            None => out.push((e.speaker, 1)),
        }
    }
    out.sort_unstable();
    out
}

/// Teacher-forced loss of each example, in input order.
pub fn per_example_losses<T: Scalar>(
    model: &AcousticModel,
    store: &ParamStore<T>,
    system: &SystemKind,
    examples: &[&Example],
    weights: &LossWeights,
) -> Result<Vec<LossComponents>> {
    examples.iter().map(|e| example_loss(model, store, system, e, weights)).collect()
}
