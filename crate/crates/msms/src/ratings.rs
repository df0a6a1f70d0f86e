//! Listening-test ratings: the append-only JSON-lines log and its
//! aggregation into MOS and ABX results.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use msms_core::corpus::Domain;
use msms_core::eval::{abx_summary, mos_by_group, AbxSummary, MosSummary};
use msms_core::trials::{Trial, TrialKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbxChoice {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Mos { score: u8 },
    Abx { choice: AbxChoice },
}

/// One accepted rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub kind: TrialKind,
    /// The trial as served, including its sample ids.
    pub trial: Trial,
    pub rater: String,
    pub response: Response,
    pub device: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

impl TrialRecord {
    /// For ABX trials: whether the listener picked the pair's first system.
    pub fn chose_first(&self) -> Option<bool> {
        match (&self.trial, self.response) {
            (Trial::Abx { first_on_a, .. }, Response::Abx { choice }) => Some((choice == AbxChoice::A) == *first_on_a),
            _ => None,
        }
    }
}

/// Reads a ratings log. A line that does not parse (a write cut short by a
/// crash) is skipped with a warning; every complete line stands alone.
pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let s = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("{}: skipping line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// Reads a log that must parse completely, as the statistics commands do.
pub fn read_log_strict(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.exists() {
        return Err(Error::Missing { what: "ratings log", path: path.into() });
    }
    crate::fsutil::read_jsonl(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosRow {
    pub system: String,
    pub voice: Option<u8>,
    pub domain: Option<Domain>,
    #[serde(flatten)]
    pub summary: MosSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosResults {
    pub by_system: Vec<MosRow>,
    pub by_system_voice: Vec<MosRow>,
    pub by_system_domain: Vec<MosRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbxRow {
    pub pair: usize,
    pub first: String,
    pub second: String,
    pub voice: u8,
    #[serde(flatten)]
    pub summary: AbxSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub ratings: usize,
    pub mos_ratings: usize,
    pub abx_ratings: usize,
    pub mos: MosResults,
    pub abx: Vec<AbxRow>,
    /// Ratings per listening-device tag.
    pub devices: BTreeMap<String, usize>,
}

pub fn mos_results(records: &[TrialRecord]) -> Result<MosResults> {
    let scores: Vec<(&str, u8, Domain, u8)> = records
        .iter()
        .filter_map(|r| match (&r.trial, r.response) {
            (Trial::Mos { system, voice, domain, .. }, Response::Mos { score }) => Some((system.as_str(), *voice, *domain, score)),
            _ => None,
        })
        .collect();
    let row = |system: &str, voice, domain, summary| MosRow { system: system.into(), voice, domain, summary };
    Ok(MosResults {
        by_system: mos_by_group(scores.iter().map(|s| (s.0, s.3)))?
            .into_iter()
            .map(|(k, v)| row(k, None, None, v))
            .collect(),
        by_system_voice: mos_by_group(scores.iter().map(|s| ((s.0, s.1), s.3)))?
            .into_iter()
            .map(|((k, v), s)| row(k, Some(v), None, s))
            .collect(),
        by_system_domain: mos_by_group(scores.iter().map(|s| ((s.0, s.2), s.3)))?
            .into_iter()
            .map(|((k, d), s)| row(k, None, Some(d), s))
            .collect(),
    })
}

/// Wins of the first system per (pair, voice), tested against chance.
pub fn abx_results(records: &[TrialRecord], pairs: &[(String, String)]) -> Result<Vec<AbxRow>> {
    let mut counts: BTreeMap<(usize, u8), (u64, u64)> = BTreeMap::new();
    for r in records {
        if let (Trial::Abx { pair, voice, .. }, Some(first)) = (&r.trial, r.chose_first()) {
            let c = counts.entry((*pair, *voice)).or_default();
            c.0 += first as u64;
            c.1 += 1;
        }
    }
    counts
        .into_iter()
        .map(|((pair, voice), (wins, n))| {
            let (first, second) = pairs
                .get(pair)
                .cloned()
                .unwrap_or_else(|| (format!("pair{pair}-first"), format!("pair{pair}-second")));
            Ok(AbxRow { pair, first, second, voice, summary: abx_summary(wins, n)? })
        })
        .collect()
}

pub fn results(records: &[TrialRecord], pairs: &[(String, String)]) -> Result<Results> {
    let mut devices = BTreeMap::new();
    for r in records {
        *devices.entry(r.device.clone().unwrap_or_else(|| "unknown".into())).or_default() += 1;
    }
    let mos_ratings = records.iter().filter(|r| r.kind == TrialKind::Mos).count();
    Ok(Results {
        ratings: records.len(),
        mos_ratings,
        abx_ratings: records.len() - mos_ratings,
        mos: mos_results(records)?,
        abx: abx_results(records, pairs)?,
        devices,
    })
}

/// MOS rows as an aligned table with 95% intervals.
pub fn mos_table(rows: &[MosRow]) -> String {
    let mut s = format!("{:<20} {:>5} {:>11} {:>6} {:>6} {:>15}\n", "System", "Voice", "Domain", "N", "MOS", "95% CI");
    for r in rows {
        let voice = r.voice.map(|v| v.to_string()).unwrap_or_else(|| "all".into());
        let domain = r.domain.map(|d| format!("{d:?}").to_lowercase()).unwrap_or_else(|| "all".into());
        s += &format!(
            "{:<20} {:>5} {:>11} {:>6} {:>6.3} {:>15}\n",
            r.system,
            voice,
            domain,
            r.summary.count,
            r.summary.mean,
            format!("[{:.3}, {:.3}]", r.summary.ci_low, r.summary.ci_high)
        );
    }
    s
}

/// Per-voice ABX preferences; significant p-values (p <= 0.05) are starred.
pub fn abx_table(rows: &[AbxRow]) -> String {
    let mut s = format!("{:<5} {:<34} {:>6} {:>8} {:>8} {:>10}\n", "Voice", "Comparison", "N", "First%", "Second%", "p-value");
    for r in rows {
        let n = r.summary.trials as f64;
        let first = 100.0 * r.summary.wins_first as f64 / n;
        let mark = if r.summary.significant { "*" } else { "" };
        s += &format!(
            "{:<5} {:<34} {:>6} {:>8.1} {:>8.1} {:>10}\n",
            r.voice,
            format!("{} vs {}", r.first, r.second),
            r.summary.trials,
            first,
            100.0 - first,
            format!("{:.4}{mark}", r.summary.p_value)
        );
    }
    s
}
