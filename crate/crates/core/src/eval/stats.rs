use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::embedding::{cosine, mse, SpeakerEmbedding};
use crate::error::{Error, Result};

/// Embeddings of one system, keyed by sentence id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemEmbeddings {
    pub system: String,
    pub sentences: BTreeMap<String, SpeakerEmbedding>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub system: String,
    pub mse: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub reference: String,
    pub sentences: usize,
    pub rows: Vec<SimilarityRow>,
}

impl SimilarityReport {
    pub fn row(&self, system: &str) -> Option<&SimilarityRow> {
        self.rows.iter().find(|r| r.system == system)
    }

    /// Aligned text table with System, MSE and cosine columns.
    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w$}  {:>12}  {:>12}\n", "System", "MSE (lower)", "Cosine sim.");
        for r in &self.rows {
            s += &format!("{:<w$}  {:>12.3e}  {:>12.3}\n", r.system, r.mse, r.cosine);
        }
        s
    }
}

/// Sentence-wise MSE and cosine of every system against `reference`, each
/// averaged over sentences. All systems must cover the same sentence ids.
pub fn similarity_report(systems: &[SystemEmbeddings], reference: &str) -> Result<SimilarityReport> {
    let r = systems
        .iter()
        .find(|s| s.system == reference)
        .ok_or_else(|| Error::Input(format!("reference system {reference} not among the systems")))?;
    if r.sentences.is_empty() {
        return Err(Error::Empty("reference sentences"));
    }
    let mut rows = Vec::with_capacity(systems.len());
    for s in systems {
        if s.sentences.len() != r.sentences.len() || s.sentences.keys().zip(r.sentences.keys()).any(|(a, b)| a != b) {
            return Err(Error::Input(format!("system {} does not cover the reference sentence set", s.system)));
        }
        let (mut m, mut c) = (0.0, 0.0);
        for (e, re) in s.sentences.values().zip(r.sentences.values()) {
            m += mse(&e.0, &re.0)?;
            c += cosine(&e.0, &re.0)?;
        }
        let n = r.sentences.len() as f64;
        rows.push(SimilarityRow { system: s.system.clone(), mse: m / n, cosine: c / n });
    }
    Ok(SimilarityReport { reference: reference.into(), sentences: r.sentences.len(), rows })
}

/// Row `n` of Pascal's triangle; exact while entries fit in 128 bits.
fn pascal_row(n: u64) -> Vec<u128> {
    let mut row = alloc::vec![1u128];
    for _ in 0..n {
        let mut next = alloc::vec![1u128; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    row
}

/// Largest `n` handled with exact integer arithmetic.
pub const ABX_EXACT_MAX_N: u64 = 126;

/// Two-sided exact binomial test of `wins_a` out of `n` under p = 0.5: the
/// total probability of outcomes no more likely than the observed one.
pub fn abx_binomial(wins_a: u64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Input("binomial test needs at least one trial".into()));
    }
    if wins_a > n {
        return Err(Error::Input(format!("{wins_a} wins out of {n} trials")));
    }
    if n <= ABX_EXACT_MAX_N {
        let row = pascal_row(n);
        let observed = row[wins_a as usize];
        let tail: u128 = row.iter().copied().filter(|&c| c <= observed).sum();
        let p = tail as f64 / libm::pow(2.0, n as f64);
        return Ok(p.min(1.0));
    }
    let log_pmf = |k: u64| {
        libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
            - n as f64 * core::f64::consts::LN_2
    };
    let observed = log_pmf(wins_a);
    // Relative slack absorbs rounding between mirror-image outcomes.
    let bound = observed + 1e-7;
    let p: f64 = (0..=n).map(log_pmf).filter(|&l| l <= bound).map(libm::exp).sum();
    Ok(p.min(1.0))
}

/// Mean opinion score summary of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosSummary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single rating).
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Counts of scores 1 through 5.
    pub histogram: [usize; 5],
}

impl MosSummary {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

pub fn validate_score(score: u8) -> Result<()> {
    if !(1..=5).contains(&score) {
        return Err(Error::OutOfRange { what: "MOS score", index: score as usize, capacity: 5 });
    }
    Ok(())
}

/// Mean, normal-approximation 95% interval and histogram of 1..5 scores.
pub fn mos_aggregate(scores: &[u8]) -> Result<MosSummary> {
    if scores.is_empty() {
        return Err(Error::Empty("MOS ratings"));
    }
    let mut histogram = [0usize; 5];
    for &s in scores {
        validate_score(s)?;
        histogram[s as usize - 1] += 1;
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / n;
    let std = if scores.len() > 1 {
        libm::sqrt(scores.iter().map(|&s| (s as f64 - mean) * (s as f64 - mean)).sum::<f64>() / (n - 1.0))
    } else {
        0.0
    };
    let half = 1.96 * std / libm::sqrt(n);
    Ok(MosSummary { count: scores.len(), mean, std, ci_low: mean - half, ci_high: mean + half, histogram })
}

/// [`mos_aggregate`] per group key, in key order. Empty groups never appear.
pub fn mos_by_group<K: Ord + Clone>(ratings: impl IntoIterator<Item = (K, u8)>) -> Result<BTreeMap<K, MosSummary>> {
    let mut groups: BTreeMap<K, Vec<u8>> = BTreeMap::new();
    for (k, s) in ratings {
        groups.entry(k).or_default().push(s);
    }
    groups.into_iter().map(|(k, v)| Ok((k, mos_aggregate(&v)?))).collect()
}

/// ABX outcome for one group of trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbxSummary {
    pub trials: u64,
    /// Trials where the first system of the pair was chosen.
    pub wins_first: u64,
    pub p_value: f64,
    /// `p <= 0.05`.
    pub significant: bool,
}

pub fn abx_summary(wins_first: u64, trials: u64) -> Result<AbxSummary> {
    let p_value = abx_binomial(wins_first, trials)?;
    Ok(AbxSummary { trials, wins_first, p_value, significant: p_value <= 0.05 })
}

/// Mean sentence-wise cosine between `system` embeddings and each voice's
/// natural renders of the same sentences. Sentences missing from a voice are
/// skipped; a voice sharing no sentence is an error.
pub fn voice_affinity(
    system: &BTreeMap<String, SpeakerEmbedding>,
    naturals: &BTreeMap<u8, BTreeMap<String, SpeakerEmbedding>>,
) -> Result<BTreeMap<u8, f64>> {
    let mut out = BTreeMap::new();
    for (&voice, nat) in naturals {
        let mut total = 0.0;
        let mut n = 0usize;
        for (id, e) in system {
            if let Some(r) = nat.get(id) {
                total += cosine(&e.0, &r.0)?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Input(format!("voice {voice} shares no sentence with the system")));
        }
        out.insert(voice, total / n as f64);
    }
    Ok(out)
}

/// Voice with the highest affinity; ties go to the lower voice id.
pub fn closest_voice(affinity: &BTreeMap<u8, f64>) -> Option<u8> {
    affinity
        .iter()
        .fold(None, |best: Option<(u8, f64)>, (&v, &s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((v, s)),
        })
        .map(|(v, _)| v)
}
