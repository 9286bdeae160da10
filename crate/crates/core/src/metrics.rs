//! Threshold calibration and vulnerability metrics.
//!
//! A trial matches when `score >= threshold`. Rates are kept as exact
//! integer fractions and only rendered as floats or percentages at the edge.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trials::{TrialKind, TrialScore};

/// The three operating points used throughout: 1%, 0.1% and 0.01% FMR.
pub const DEFAULT_FMR_TARGETS: [f64; 3] = [0.01, 0.001, 0.0001];

/// An FMR target usable as a map key (total order on the bit pattern's
/// numeric value).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FmrTarget(pub f64);

impl FmrTarget {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidTarget(value))
        }
    }
}

impl PartialEq for FmrTarget {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for FmrTarget {}

impl PartialOrd for FmrTarget {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FmrTarget {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for FmrTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = format!("{:.10}", self.0 * 100.0);
        write!(f, "{}%", pct.trim_end_matches('0').trim_end_matches('.'))
    }
}

/// An exact fraction `hits / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: u64,
    pub total: u64,
}

impl Rate {
    pub fn new(hits: u64, total: u64) -> Self {
        debug_assert!(hits <= total);
        Self { hits, total }
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }

    /// Percentage with two decimals, e.g. `95.34`.
    pub fn percent(&self) -> String {
        format!("{:.2}", 100.0 * self.value())
    }

    /// Exact comparison by cross-multiplication.
    pub fn cmp_exact(&self, other: &Rate) -> Ordering {
        (self.hits as u128 * other.total as u128).cmp(&(other.hits as u128 * self.total as u128))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.hits, self.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// No observed score could serve: the threshold sits just above the
    /// maximum and nothing matches.
    pub saturated: bool,
}

/// Smallest threshold whose empirical FMR on `impostor_scores` does not
/// exceed `fmr_target`.
///
/// With scores sorted descending and `k = floor(target * N)`:
/// `k = 0` saturates above the maximum; otherwise the `k`-th score is used
/// when it is strictly above the `(k+1)`-th, else the threshold steps up to
/// the smallest score strictly greater than the tied value.
pub fn threshold_at_fmr(impostor_scores: &[f64], fmr_target: f64) -> Result<Threshold> {
    FmrTarget::new(fmr_target)?;
    if impostor_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut s = impostor_scores.to_vec();
    s.sort_unstable_by(|a, b| b.total_cmp(a));
    let n = s.len();
    // the relative nudge keeps products like 0.29 * 100 from flooring to 28
    let k = ((fmr_target * n as f64) * (1.0 + 1e-12)).floor() as usize;
    let saturate = |s: &[f64]| Threshold { value: s[0].next_up(), saturated: true };
    if k == 0 {
        return Ok(saturate(&s));
    }
    if k >= n {
        return Ok(Threshold { value: s[n - 1], saturated: false });
    }
    let kth = s[k - 1];
    if kth > s[k] {
        return Ok(Threshold { value: kth, saturated: false });
    }
    let first_tied = s.partition_point(|&v| v > kth);
    if first_tied == 0 {
        Ok(saturate(&s))
    } else {
        Ok(Threshold { value: s[first_tied - 1], saturated: false })
    }
}

/// Fraction of scores at or above `threshold`.
pub fn match_rate(scores: &[f64], threshold: f64) -> Result<Rate> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let hits = scores.iter().filter(|&&s| s >= threshold).count();
    Ok(Rate::new(hits as u64, scores.len() as u64))
}

/// True match rate of genuine scores at `threshold`.
pub fn tmr_at(genuine_scores: &[f64], threshold: f64) -> Result<Rate> {
    match_rate(genuine_scores, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub fmr_target: FmrTarget,
    pub threshold: Threshold,
    /// FMR actually achieved on the calibration scores.
    pub empirical_fmr: Rate,
}

/// Per-matcher decision thresholds at each FMR target, ordered by
/// decreasing target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub matcher: String,
    pub impostor_trials: u64,
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    pub fn calibrate(matcher: &str, impostor_scores: &[f64], targets: &[f64]) -> Result<Self> {
        let mut ts = targets.iter().map(|&t| FmrTarget::new(t)).collect::<Result<Vec<_>>>()?;
        ts.sort_by(|a, b| b.cmp(a));
        ts.dedup();
        let entries = ts
            .into_iter()
            .map(|t| {
                let threshold = threshold_at_fmr(impostor_scores, t.0)?;
                Ok(ThresholdEntry { fmr_target: t, threshold, empirical_fmr: match_rate(impostor_scores, threshold.value)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { matcher: matcher.to_string(), impostor_trials: impostor_scores.len() as u64, entries })
    }

    pub fn get(&self, fmr: FmrTarget) -> Option<&Threshold> {
        self.entries.iter().find(|e| e.fmr_target == fmr).map(|e| &e.threshold)
    }

    /// Calibrates every matcher from its impostor trials.
    pub fn from_trials(trials: &[TrialScore], matchers: &[String], targets: &[f64]) -> Result<Vec<Self>> {
        matchers
            .iter()
            .map(|m| {
                let scores = scores_of(trials, m, TrialKind::Impostor);
                Self::calibrate(m, &scores, targets)
            })
            .collect()
    }
}

pub fn scores_of(trials: &[TrialScore], matcher: &str, kind: TrialKind) -> Vec<f64> {
    trials.iter().filter(|t| t.kind == kind && t.matcher == matcher).map(|t| t.score).collect()
}

/// Matched-probe tallies of one morph under one matcher and threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched_a: u32,
    pub matched_b: u32,
    pub probes_a: u32,
    pub probes_b: u32,
}

/// How probe matches are aggregated per constituent speaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessRule {
    /// At least one probe of each speaker matches.
    #[default]
    AnyProbe,
    /// Every probe of each speaker matches.
    AllProbes,
}

impl MatchCounts {
    pub fn both_at_least(&self, k: u32) -> bool {
        self.matched_a.min(self.matched_b) >= k
    }

    pub fn success(&self, rule: SuccessRule) -> bool {
        match rule {
            SuccessRule::AnyProbe => self.both_at_least(1),
            SuccessRule::AllProbes => {
                self.probes_a > 0 && self.probes_b > 0 && self.matched_a == self.probes_a && self.matched_b == self.probes_b
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphOutcome {
    pub morph_id: String,
    pub pair: (String, String),
    pub counts: BTreeMap<(String, FmrTarget), MatchCounts>,
}

impl MorphOutcome {
    fn counts_for(&self, matcher: &str, fmr: FmrTarget) -> Result<&MatchCounts> {
        self.counts
            .get(&(matcher.to_string(), fmr))
            .ok_or_else(|| Error::MatcherSetMismatch { morph: self.morph_id.clone(), matcher: format!("{matcher} @ {fmr}") })
    }
}

/// Tallies, per morph, matcher and FMR target, how many probes of each
/// constituent speaker reach the threshold. Morphs keep first-appearance
/// order.
pub fn morph_outcomes(morph_trials: &[TrialScore], thresholds: &[ThresholdTable]) -> Result<Vec<MorphOutcome>> {
    let tables: HashMap<&str, &ThresholdTable> = thresholds.iter().map(|t| (t.matcher.as_str(), t)).collect();
    let mut order: HashMap<&str, usize> = HashMap::new();
    let mut outcomes: Vec<MorphOutcome> = Vec::new();
    for t in morph_trials.iter().filter(|t| t.kind == TrialKind::Morph) {
        let pair = t.morph_pair.as_ref().ok_or_else(|| Error::MissingEmbedding(format!("morph trial `{}` has no pair", t.reference)))?;
        let table = tables
            .get(t.matcher.as_str())
            .ok_or_else(|| Error::MatcherSetMismatch { morph: t.reference.clone(), matcher: t.matcher.clone() })?;
        let idx = *order.entry(t.reference.as_str()).or_insert_with(|| {
            outcomes.push(MorphOutcome { morph_id: t.reference.clone(), pair: pair.clone(), counts: BTreeMap::new() });
            outcomes.len() - 1
        });
        let side_a = if t.probe_speaker == pair.0 {
            true
        } else if t.probe_speaker == pair.1 {
            false
        } else {
            continue;
        };
        for e in &table.entries {
            let c = outcomes[idx].counts.entry((t.matcher.clone(), e.fmr_target)).or_default();
            let hit = u32::from(t.score >= e.threshold.value);
            if side_a {
                c.probes_a += 1;
                c.matched_a += hit;
            } else {
                c.probes_b += 1;
                c.matched_b += hit;
            }
        }
    }
    Ok(outcomes)
}

/// Fraction of morph samples that match both constituent speakers.
pub fn mmpmr_sample(outcomes: &[MorphOutcome], matcher: &str, fmr_target: f64, rule: SuccessRule) -> Result<Rate> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let fmr = FmrTarget::new(fmr_target)?;
    let mut hits = 0u64;
    for o in outcomes {
        hits += u64::from(o.counts_for(matcher, fmr)?.success(rule));
    }
    Ok(Rate::new(hits, outcomes.len() as u64))
}

/// Fraction of speaker pairs with at least one successful morph sample.
pub fn mmpmr_pair(outcomes: &[MorphOutcome], matcher: &str, fmr_target: f64, rule: SuccessRule) -> Result<Rate> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let fmr = FmrTarget::new(fmr_target)?;
    let mut pairs: BTreeMap<&(String, String), bool> = BTreeMap::new();
    for o in outcomes {
        let ok = o.counts_for(matcher, fmr)?.success(rule);
        *pairs.entry(&o.pair).or_insert(false) |= ok;
    }
    let hits = pairs.values().filter(|&&v| v).count();
    Ok(Rate::new(hits as u64, pairs.len() as u64))
}

/// Morphing-attack-potential matrix at one FMR target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMatrix {
    pub fmr_target: FmrTarget,
    pub matchers: Vec<String>,
    /// `entries[k - 1][m - 1]`: morphs for which at least `m` matchers see
    /// at least `k` matched probes of each constituent speaker.
    pub entries: Vec<Vec<Rate>>,
}

impl MapMatrix {
    pub fn max_attempts(&self) -> usize {
        self.entries.len()
    }

    pub fn at(&self, attempts: usize, matchers: usize) -> Rate {
        self.entries[attempts - 1][matchers - 1]
    }
}

pub fn map_matrix(outcomes: &[MorphOutcome], matchers: &[String], fmr_target: f64, max_attempts: usize) -> Result<MapMatrix> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let fmr = FmrTarget::new(fmr_target)?;
    let total = outcomes.len() as u64;
    let mut tallies = vec![vec![0u64; matchers.len()]; max_attempts];
    for o in outcomes {
        let counts = matchers.iter().map(|m| o.counts_for(m, fmr)).collect::<Result<Vec<_>>>()?;
        for (k, row) in tallies.iter_mut().enumerate() {
            let passing = counts.iter().filter(|c| c.both_at_least(k as u32 + 1)).count();
            for cell in row.iter_mut().take(passing) {
                *cell += 1;
            }
        }
    }
    let entries = tallies.into_iter().map(|row| row.into_iter().map(|h| Rate::new(h, total)).collect()).collect();
    Ok(MapMatrix { fmr_target: fmr, matchers: matchers.to_vec(), entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count_at_or_above(scores: &[f64], t: f64) -> usize {
        scores.iter().filter(|&&s| s >= t).count()
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        // oracle: the smallest candidate threshold (observed scores plus one
        // step above the max) with FMR <= 10%
        let mut candidates = scores.clone();
        candidates.push(1.0f64.next_up());
        let best =
            candidates.iter().copied().filter(|&t| count_at_or_above(&scores, t) as f64 / 10.0 <= 0.10).fold(f64::INFINITY, f64::min);
        assert_eq!(best, 1.0);
        assert_eq!(threshold_at_fmr(&scores, 0.10).unwrap(), Threshold { value: 1.0, saturated: false });
        assert_eq!(threshold_at_fmr(&scores, 1.0).unwrap().value, 0.1);

        let ties = vec![0.5; 20];
        let t = threshold_at_fmr(&ties, 0.10).unwrap();
        assert!(t.saturated && t.value > 0.5);
        assert_eq!(count_at_or_above(&ties, t.value), 0);

        // a tie straddling the k-th position steps up to the next larger score
        let s = [0.9, 0.7, 0.7, 0.7, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        assert_eq!(threshold_at_fmr(&s, 0.2).unwrap().value, 0.9);
        assert_eq!(threshold_at_fmr(&s, 0.4).unwrap().value, 0.7);
    }

    #[test]
    fn threshold_errors() {
        assert!(matches!(threshold_at_fmr(&[], 0.1), Err(Error::EmptyScores)));
        assert!(matches!(threshold_at_fmr(&[0.1], 0.0), Err(Error::InvalidTarget(_))));
        assert!(matches!(threshold_at_fmr(&[0.1], 1.5), Err(Error::InvalidTarget(_))));
        assert!(matches!(tmr_at(&[], 0.1), Err(Error::EmptyScores)));
    }

    #[test]
    fn tmr_examples() {
        assert_eq!(tmr_at(&[0.6, 0.7], 0.5).unwrap().value(), 1.0);
        assert_eq!(tmr_at(&[0.6, 0.7], 0.8).unwrap().value(), 0.0);
        assert_eq!(tmr_at(&[0.4, 0.5, 0.6, 0.7], 0.5).unwrap(), Rate::new(3, 4));
        assert_eq!(Rate::new(41, 43).percent(), "95.35");
    }

    fn trial(matcher: &str, morph: &str, pair: (&str, &str), speaker: &str, score: f64) -> TrialScore {
        TrialScore {
            matcher: matcher.into(),
            kind: TrialKind::Morph,
            probe: format!("{speaker}-{score}"),
            reference: morph.into(),
            probe_speaker: speaker.into(),
            morph_pair: Some((pair.0.into(), pair.1.into())),
            score,
        }
    }

    fn table(matcher: &str, t: f64) -> ThresholdTable {
        ThresholdTable {
            matcher: matcher.into(),
            impostor_trials: 0,
            entries: vec![ThresholdEntry {
                fmr_target: FmrTarget(0.01),
                threshold: Threshold { value: t, saturated: false },
                empirical_fmr: Rate::new(0, 1),
            }],
        }
    }

    /// Builds one morph per `(count_a, count_b)` with 3 probes per speaker,
    /// where exactly `count` probes score above threshold 0.5.
    fn outcomes_from_counts(counts: &[(u32, u32)], pairs: &[(&str, &str)]) -> Vec<MorphOutcome> {
        let mut trials = Vec::new();
        for (i, ((ca, cb), pair)) in counts.iter().zip(pairs).enumerate() {
            let id = format!("m{i}");
            for (spk, c) in [(pair.0, *ca), (pair.1, *cb)] {
                for p in 0..3 {
                    trials.push(trial("x", &id, *pair, spk, if p < c { 0.9 } else { 0.1 }));
                }
            }
        }
        morph_outcomes(&trials, &[table("x", 0.5)]).unwrap()
    }

    #[test]
    fn outcome_counts() {
        let trials = vec![
            trial("x", "m", ("A", "B"), "A", 0.9),
            trial("x", "m", ("A", "B"), "A", 0.4),
            trial("x", "m", ("A", "B"), "A", 0.8),
            trial("x", "m", ("A", "B"), "B", 0.2),
        ];
        let o = morph_outcomes(&trials, &[table("x", 0.5)]).unwrap();
        let c = o[0].counts[&("x".to_string(), FmrTarget(0.01))];
        assert_eq!(c, MatchCounts { matched_a: 2, matched_b: 0, probes_a: 3, probes_b: 1 });
        let low = morph_outcomes(&trials, &[table("x", 0.0)]).unwrap();
        assert_eq!(low[0].counts[&("x".to_string(), FmrTarget(0.01))].matched_a, 3);
        let high = morph_outcomes(&trials, &[table("x", 1.0)]).unwrap();
        let c = high[0].counts[&("x".to_string(), FmrTarget(0.01))];
        assert_eq!((c.matched_a, c.matched_b), (0, 0));
        assert!(matches!(morph_outcomes(&trials, &[table("y", 0.5)]), Err(Error::MatcherSetMismatch { .. })));
    }

    #[test]
    fn mmpmr_examples() {
        let pairs = [("A", "B"); 4];
        let o = outcomes_from_counts(&[(1, 1), (2, 0), (0, 0), (3, 2)], &pairs);
        assert_eq!(mmpmr_sample(&o, "x", 0.01, SuccessRule::AnyProbe).unwrap(), Rate::new(2, 4));
        assert_eq!(mmpmr_pair(&o, "x", 0.01, SuccessRule::AnyProbe).unwrap(), Rate::new(1, 1));
        assert_eq!(mmpmr_sample(&o, "x", 0.01, SuccessRule::AllProbes).unwrap(), Rate::new(0, 4));

        let o = outcomes_from_counts(&[(1, 1), (0, 3), (0, 0)], &[("A", "B"), ("C", "D"), ("C", "D")]);
        assert_eq!(mmpmr_pair(&o, "x", 0.01, SuccessRule::AnyProbe).unwrap(), Rate::new(1, 2));
        let none = outcomes_from_counts(&[(0, 0), (0, 3)], &[("A", "B"), ("A", "B")]);
        assert_eq!(mmpmr_sample(&none, "x", 0.01, SuccessRule::AnyProbe).unwrap().hits, 0);
        assert_eq!(mmpmr_pair(&none, "x", 0.01, SuccessRule::AnyProbe).unwrap().hits, 0);
        assert!(matches!(mmpmr_sample(&[], "x", 0.01, SuccessRule::AnyProbe), Err(Error::EmptyOutcomes)));
        assert!(matches!(mmpmr_sample(&o, "y", 0.01, SuccessRule::AnyProbe), Err(Error::MatcherSetMismatch { .. })));
    }

    #[test]
    fn map_single_matcher_collapses_to_mmpmr() {
        let o = outcomes_from_counts(&[(1, 1), (2, 0), (3, 3), (3, 2)], &[("A", "B"); 4]);
        let m = map_matrix(&o, &["x".to_string()], 0.01, 3).unwrap();
        assert_eq!(m.at(1, 1), mmpmr_sample(&o, "x", 0.01, SuccessRule::AnyProbe).unwrap());
        assert_eq!(m.at(2, 1), Rate::new(2, 4));
        assert_eq!(m.at(3, 1), Rate::new(1, 4));
        let all = outcomes_from_counts(&[(3, 3), (3, 3)], &[("A", "B"); 2]);
        let m = map_matrix(&all, &["x".to_string()], 0.01, 3).unwrap();
        assert!(m.entries.iter().flatten().all(|r| r.value() == 1.0));
        assert!(matches!(map_matrix(&o, &["x".to_string(), "z".to_string()], 0.01, 2), Err(Error::MatcherSetMismatch { .. })));
    }

    proptest! {
        #[test]
        fn calibration_is_sound(raw in prop::collection::vec(0u8..12, 1..300), target in 0.0001f64..1.0) {
            // coarse values force many ties
            let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 11.0).collect();
            let t = threshold_at_fmr(&scores, target).unwrap();
            let fmr = count_at_or_above(&scores, t.value) as f64 / scores.len() as f64;
            prop_assert!(fmr <= target * (1.0 + 1e-12));
            // nothing observed and lower would also satisfy the target
            let better = scores.iter().filter(|&&s| s < t.value)
                .any(|&s| count_at_or_above(&scores, s) as f64 / scores.len() as f64 <= target);
            prop_assert!(!better);
        }

        #[test]
        fn thresholds_monotone_in_target(raw in prop::collection::vec(-1.0f64..1.0, 1..200), a in 0.001f64..1.0, b in 0.001f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let t_lo = threshold_at_fmr(&raw, lo).unwrap().value;
            let t_hi = threshold_at_fmr(&raw, hi).unwrap().value;
            prop_assert!(t_lo >= t_hi);
        }
    }
}
