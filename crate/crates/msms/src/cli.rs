//! Command-line interface.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use msms_core::corpus::Style;
use msms_core::trainer::SystemKind;
use msms_core::trials::default_abx_pairs;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{style_text, Lab};
use crate::ratings;
use crate::server::{self, Service};
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "msms", version, about = "Multi-speaker multi-style TTS laboratory")]
pub struct Cli {
    /// Run configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stage, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Workspace directory holding all artifacts.
    #[arg(long, global = true, default_value = "workspace")]
    pub workspace: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Msms,
    MultiSpeaker,
    SingleSpeaker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Tts,
    Longform,
}

impl From<StyleArg> for Style {
    fn from(s: StyleArg) -> Style {
        match s {
            StyleArg::Tts => Style::Tts,
            StyleArg::Longform => Style::LongForm,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic multi-speaker corpus.
    GenCorpus,
    /// Train an acoustic model.
    Train {
        #[arg(long, value_enum)]
        system: SystemArg,
        /// Target voice of a single-speaker system.
        #[arg(long)]
        voice: Option<u8>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Pre-train without conditioning on all voices, then fine-tune on one.
    PretrainFinetune {
        #[arg(long)]
        voice: u8,
        #[arg(long)]
        pre_steps: Option<usize>,
        #[arg(long)]
        ft_steps: Option<usize>,
    },
    /// Train one voice's vocoder.
    TrainVocoder {
        #[arg(long)]
        voice: u8,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Synthesize the evaluation sentences with trained systems.
    SynthEvalSet {
        /// Checkpoint names; all trained systems when omitted.
        #[arg(long = "system")]
        systems: Vec<String>,
        #[arg(long)]
        sentences_per_domain: Option<usize>,
    },
    /// Speaker-embedding similarity of the evaluation set.
    EvalSpeakerSim,
    /// Pitch distributions of the evaluation set.
    EvalPitch,
    /// Style-transfer measurement of a trained system.
    EvalStyle {
        #[arg(long, default_value = "msms")]
        system: String,
        #[arg(long)]
        voice: u8,
        #[arg(long, value_enum)]
        style: StyleArg,
    },
    /// ABX preference tests from a ratings log.
    StatsAbx {
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// MOS summaries from a ratings log.
    StatsMos {
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the listening-test service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Collect the written reports into one summary.
    Report,
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    match &cli.command {
        Command::Train { steps: Some(n), .. } => cfg.train.steps = *n,
        Command::PretrainFinetune { pre_steps, ft_steps, .. } => {
            cfg.train.steps = pre_steps.unwrap_or(cfg.train.steps);
            cfg.train.finetune_steps = ft_steps.unwrap_or(cfg.train.finetune_steps);
        }
        Command::TrainVocoder { steps: Some(n), .. } => cfg.vocoder_train.steps = *n,
        Command::SynthEvalSet { sentences_per_domain: Some(n), .. } => cfg.eval.sentences_per_domain = *n,
        Command::Serve { port: Some(p), .. } => cfg.serve.port = *p,
        _ => {}
    }
    let lab = Lab::new(Workspace::new(&cli.workspace), cfg)?;
    let log_path = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| lab.ws.ratings_path());

    match cli.command {
        Command::GenCorpus => println!("{}", json(&lab.gen_corpus()?)),
        Command::Train { system, voice, .. } => {
            let kind = match (system, voice) {
                (SystemArg::Msms, None) => SystemKind::Msms,
                (SystemArg::MultiSpeaker, None) => SystemKind::MultiSpeaker,
                (SystemArg::SingleSpeaker, Some(target)) => SystemKind::SingleSpeaker { target },
                (SystemArg::SingleSpeaker, None) => return Err(Error::Usage("single-speaker training needs --voice".into())),
                (_, Some(_)) => return Err(Error::Usage("--voice applies only to single-speaker training".into())),
            };
            println!("{}", json(&lab.train(kind)?));
        }
        Command::PretrainFinetune { voice, .. } => println!("{}", json(&lab.train(SystemKind::PretrainFinetune { target: voice })?)),
        Command::TrainVocoder { voice, .. } => println!("{}", json(&lab.train_vocoder(voice)?)),
        Command::SynthEvalSet { systems, .. } => {
            let index = lab.synth_eval_set(&systems)?;
            println!("{} samples indexed in {}", index.len(), lab.ws.eval_dir().join("index.jsonl").display());
        }
        Command::EvalSpeakerSim => print!("{}", lab.eval_speaker_sim()?.to_text()),
        Command::EvalPitch => print!("{}", lab.eval_pitch()?.to_text()),
        Command::EvalStyle { system, voice, style } => print!("{}", style_text(&lab.eval_style(&system, voice, style.into())?)),
        Command::StatsAbx { log } => {
            let records = ratings::read_log_strict(&log_path(&log))?;
            let rows = ratings::abx_results(&records, &default_abx_pairs())?;
            let text = ratings::abx_table(&rows);
            lab.write_report("abx", &rows, &text)?;
            print!("{text}");
        }
        Command::StatsMos { log } => {
            let records = ratings::read_log_strict(&log_path(&log))?;
            let mos = ratings::mos_results(&records)?;
            let text = format!(
                "{}\n{}\n{}",
                ratings::mos_table(&mos.by_system),
                ratings::mos_table(&mos.by_system_voice),
                ratings::mos_table(&mos.by_system_domain)
            );
            lab.write_report("mos", &mos, &text)?;
            print!("{text}");
        }
        Command::Serve { host, .. } => {
            let index = lab.read_index()?;
            let svc = Service::open(&lab.ws.eval_dir(), index, &lab.ws.ratings_path(), lab.cfg.serve.trial_seed)?;
            let rt = tokio::runtime::Runtime::new().map_err(Error::io("tokio runtime"))?;
            rt.block_on(server::serve(Arc::new(svc), &host, lab.cfg.serve.port))?;
        }
        Command::Report => print!("{}", lab.report()?),
    }
    Ok(())
}
