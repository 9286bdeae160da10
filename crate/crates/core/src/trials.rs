//! Matchers and the three trial families: genuine, impostor and morph.
//!
//! Probes always come from the test split. Every generator emits trials in
//! a fixed enumeration order; scoring runs in parallel but results are
//! collected back into that order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{evb, Dataset, Split, UtteranceRecord};
use crate::embedding::{cosine, morph_average, Embedding, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::rng;
use crate::selection::SpeakerPair;

/// Default cap on sampled impostor trials.
pub const DEFAULT_IMPOSTOR_CAP: usize = 1_000_000;

/// A cosine-scoring speaker recognition system bound to one space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    pub name: String,
    pub space: EmbeddingSpace,
}

impl Matcher {
    pub fn new(name: impl Into<String>, space: EmbeddingSpace) -> Self {
        Self { name: name.into(), space }
    }

    pub fn score(&self, a: &Embedding, b: &Embedding) -> Result<f64> {
        cosine(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Genuine,
    Impostor,
    Morph,
}

impl TrialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialKind::Genuine => "genuine",
            TrialKind::Impostor => "impostor",
            TrialKind::Morph => "morph",
        }
    }
}

impl fmt::Display for TrialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrialKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "genuine" => Ok(TrialKind::Genuine),
            "impostor" => Ok(TrialKind::Impostor),
            "morph" => Ok(TrialKind::Morph),
            other => Err(format!("unknown trial kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub matcher: String,
    pub kind: TrialKind,
    pub probe: String,
    /// Utterance id, or morph id for morph trials.
    pub reference: String,
    pub probe_speaker: String,
    /// Present exactly when `kind` is `Morph`.
    pub morph_pair: Option<(String, String)>,
    pub score: f64,
}

/// Test utterances grouped by speaker (speakers in sorted order), only
/// speakers with at least one test utterance.
fn test_groups(dataset: &Dataset) -> Vec<Vec<&UtteranceRecord>> {
    dataset.speakers().keys().map(|s| dataset.utterances_in(s, Split::Test).collect::<Vec<_>>()).filter(|g| !g.is_empty()).collect()
}

fn score_pairs(matcher: &Matcher, pairs: &[(&UtteranceRecord, &UtteranceRecord)], kind: TrialKind) -> Result<Vec<TrialScore>> {
    let space = &matcher.space.name;
    pairs
        .par_iter()
        .map(|(probe, reference)| {
            let score = matcher.score(probe.embedding(space)?, reference.embedding(space)?)?;
            Ok(TrialScore {
                matcher: matcher.name.clone(),
                kind,
                probe: probe.utterance_id.clone(),
                reference: reference.utterance_id.clone(),
                probe_speaker: probe.speaker_id.clone(),
                morph_pair: None,
                score,
            })
        })
        .collect()
}

/// One trial per unordered pair of distinct test utterances of a speaker.
pub fn genuine_trials(dataset: &Dataset, matcher: &Matcher) -> Result<Vec<TrialScore>> {
    let mut pairs = Vec::new();
    for group in test_groups(dataset) {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                pairs.push((*a, *b));
            }
        }
    }
    score_pairs(matcher, &pairs, TrialKind::Genuine)
}

/// Maps a linear index over all cross-speaker test pairs `(i, j)`, `i < j`,
/// of the flattened speaker-grouped test list back to the pair.
struct CrossPairIndex {
    /// `group_end[i]`: first flat index past the group containing `i`.
    group_end: Vec<usize>,
    /// `offsets[i]`: number of cross pairs whose first element precedes `i`.
    offsets: Vec<u64>,
    total: u64,
}

impl CrossPairIndex {
    fn new(group_sizes: &[usize]) -> Self {
        let n: usize = group_sizes.iter().sum();
        let mut group_end = Vec::with_capacity(n);
        let mut end = 0;
        for &s in group_sizes {
            end += s;
            group_end.extend(std::iter::repeat_n(end, s));
        }
        let mut offsets = Vec::with_capacity(n);
        let mut total = 0u64;
        for &e in &group_end {
            offsets.push(total);
            total += (n - e) as u64;
        }
        Self { group_end, offsets, total }
    }

    fn pair(&self, k: u64) -> (usize, usize) {
        let i = self.offsets.partition_point(|&o| o <= k) - 1;
        (i, self.group_end[i] + (k - self.offsets[i]) as usize)
    }
}

/// Cross-speaker test pairs. When there are more than `max_trials`, a
/// seeded uniform subsample without replacement is scored, kept in
/// enumeration order.
pub fn impostor_trials(dataset: &Dataset, matcher: &Matcher, max_trials: usize, seed: u64) -> Result<Vec<TrialScore>> {
    let groups = test_groups(dataset);
    if groups.len() < 2 {
        return Err(Error::InsufficientSpeakers(groups.len()));
    }
    let flat: Vec<&UtteranceRecord> = groups.iter().flatten().copied().collect();
    let index = CrossPairIndex::new(&groups.iter().map(Vec::len).collect::<Vec<_>>());
    let picks: Vec<u64> = if index.total <= max_trials as u64 {
        (0..index.total).collect()
    } else {
        let total = usize::try_from(index.total).map_err(|_| Error::InvalidConfig("impostor pair count exceeds usize".into()))?;
        let mut rng = rng::labelled(seed, &format!("impostor/{}", matcher.name));
        let mut v: Vec<u64> = rand::seq::index::sample(&mut rng, total, max_trials).into_iter().map(|k| k as u64).collect();
        v.sort_unstable();
        v
    };
    let pairs: Vec<_> = picks
        .into_iter()
        .map(|k| {
            let (i, j) = index.pair(k);
            (flat[i], flat[j])
        })
        .collect();
    score_pairs(matcher, &pairs, TrialKind::Impostor)
}

/// A fused sample standing in for a synthesized morph utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphRecord {
    pub morph_id: String,
    pub pair: (String, String),
    pub source_utterances: (String, String),
    pub embeddings: BTreeMap<String, Embedding>,
    /// The fusion-space average nearly cancelled to zero.
    pub degenerate: bool,
}

impl MorphRecord {
    pub fn embedding(&self, space: &str) -> Result<&Embedding> {
        self.embeddings.get(space).ok_or_else(|| Error::MissingEmbedding(format!("morph `{}` has no `{space}` embedding", self.morph_id)))
    }
}

/// Produces matcher-space embeddings for morphs whose fusion-space
/// embedding is already set.
pub trait MorphChain: Sync {
    fn render(&self, dataset: &Dataset, morphs: &mut [MorphRecord]) -> Result<()>;
}

/// Averages the two source utterances directly in every other space of the
/// dataset, i.e. a loss-free synthesis chain.
#[derive(Debug, Clone, Copy, Default)]
pub struct Transparent;

impl MorphChain for Transparent {
    fn render(&self, dataset: &Dataset, morphs: &mut [MorphRecord]) -> Result<()> {
        morphs.par_iter_mut().try_for_each(|m| {
            let a = dataset.utterance(&m.source_utterances.0)?;
            let b = dataset.utterance(&m.source_utterances.1)?;
            for space in dataset.spaces() {
                if m.embeddings.contains_key(&space.name) {
                    continue;
                }
                if let (Some(ea), Some(eb)) = (a.embeddings.get(&space.name), b.embeddings.get(&space.name)) {
                    m.embeddings.insert(space.name.clone(), morph_average(ea, eb)?.embedding);
                }
            }
            Ok(())
        })
    }
}

/// Creates `per_pair` morphs for each pair. Each fuses one morph-split
/// utterance of each speaker, chosen uniformly with a stream keyed by
/// `(seed, pair)`, in `fusion_space`; `chain` then fills the other spaces.
pub fn make_morphs(
    dataset: &Dataset,
    pairs: &[SpeakerPair],
    per_pair: usize,
    seed: u64,
    fusion_space: &str,
    chain: &dyn MorphChain,
) -> Result<Vec<MorphRecord>> {
    dataset.space(fusion_space)?;
    let sources = |spk: &str| -> Result<Vec<&UtteranceRecord>> {
        let us: Vec<_> = dataset.utterances_in(spk, Split::Morph).filter(|u| u.embeddings.contains_key(fusion_space)).collect();
        if us.is_empty() {
            return Err(Error::MissingEmbedding(format!("speaker `{spk}` has no morph-split utterance with a `{fusion_space}` embedding")));
        }
        Ok(us)
    };
    let mut morphs = Vec::with_capacity(pairs.len() * per_pair);
    for pair in pairs {
        if per_pair == 0 {
            continue;
        }
        let (sa, sb) = (sources(pair.speaker_a())?, sources(pair.speaker_b())?);
        let mut rng = rng::labelled(seed, &format!("morph/{}", pair.label()));
        for k in 0..per_pair {
            let ua = sa[rng.random_range(0..sa.len())];
            let ub = sb[rng.random_range(0..sb.len())];
            let fusion = morph_average(ua.embedding(fusion_space)?, ub.embedding(fusion_space)?)?;
            let mut embeddings = BTreeMap::new();
            embeddings.insert(fusion_space.to_string(), fusion.embedding);
            morphs.push(MorphRecord {
                morph_id: format!("{}/{k}", pair.label()),
                pair: (pair.speaker_a().to_string(), pair.speaker_b().to_string()),
                source_utterances: (ua.utterance_id.clone(), ub.utterance_id.clone()),
                embeddings,
                degenerate: fusion.degenerate,
            });
        }
    }
    chain.render(dataset, &mut morphs)?;
    Ok(morphs)
}

/// One trial per (morph, test utterance of either constituent speaker);
/// speaker A's probes first, then B's.
pub fn morph_trials(morphs: &[MorphRecord], dataset: &Dataset, matcher: &Matcher) -> Result<Vec<TrialScore>> {
    let space = &matcher.space.name;
    let mut jobs: Vec<(&MorphRecord, &UtteranceRecord)> = Vec::new();
    for m in morphs {
        m.embedding(space)?;
        for spk in [&m.pair.0, &m.pair.1] {
            jobs.extend(dataset.utterances_in(spk, Split::Test).map(|u| (m, u)));
        }
    }
    jobs.par_iter()
        .map(|(m, probe)| {
            Ok(TrialScore {
                matcher: matcher.name.clone(),
                kind: TrialKind::Morph,
                probe: probe.utterance_id.clone(),
                reference: m.morph_id.clone(),
                probe_speaker: probe.speaker_id.clone(),
                morph_pair: Some(m.pair.clone()),
                score: matcher.score(m.embedding(space)?, probe.embedding(space)?)?,
            })
        })
        .collect()
}

/// `matcher<TAB>kind<TAB>probe<TAB>reference<TAB>probe_speaker<TAB>score`
/// with scores at 9 significant digits.
pub fn write_trials<'a, I>(trials: I, metadata: &[(String, String)]) -> String
where
    I: IntoIterator<Item = &'a TrialScore>,
{
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str("matcher\tkind\tprobe\treference\tprobe_speaker\tscore\n");
    for t in trials {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", t.matcher, t.kind, t.probe, t.reference, t.probe_speaker, crate::fmt_sig9(t.score));
    }
    out
}

/// Parses a trial file. Morph trials need `morph_pairs` (morph id to
/// constituent speakers) since the file does not carry the pair.
pub fn read_trials(text: &str, morph_pairs: &HashMap<String, (String, String)>) -> Result<Vec<TrialScore>> {
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() || line.starts_with("matcher\t") {
            continue;
        }
        let err = |m: String| Error::parse_line(i + 1, m);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 tab-separated fields, found {}", f.len())));
        }
        let kind: TrialKind = f[1].parse().map_err(err)?;
        let score: f64 = f[5].parse().map_err(|_| err(format!("invalid score `{}`", f[5])))?;
        if !score.is_finite() {
            return Err(err("score must be finite".into()));
        }
        let morph_pair = match kind {
            TrialKind::Morph => {
                Some(morph_pairs.get(f[3]).cloned().ok_or_else(|| err(format!("morph trial references unknown morph `{}`", f[3])))?)
            }
            _ => None,
        };
        trials.push(TrialScore {
            matcher: f[0].to_string(),
            kind,
            probe: f[2].to_string(),
            reference: f[3].to_string(),
            probe_speaker: f[4].to_string(),
            morph_pair,
            score,
        });
    }
    Ok(trials)
}

/// Morph list: `morph_id<TAB>speaker_a<TAB>speaker_b<TAB>utterance_a<TAB>utterance_b`.
pub fn write_morph_list(morphs: &[MorphRecord], metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str("morph_id\tspeaker_a\tspeaker_b\tutterance_a\tutterance_b\n");
    for m in morphs {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", m.morph_id, m.pair.0, m.pair.1, m.source_utterances.0, m.source_utterances.1);
    }
    out
}

/// Reads a morph list; embeddings are attached separately with
/// [`attach_morph_embeddings`].
pub fn read_morph_list(text: &str) -> Result<Vec<MorphRecord>> {
    let mut morphs: Vec<MorphRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() || line.starts_with("morph_id\t") {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse_line(i + 1, format!("expected 5 tab-separated fields, found {}", f.len())));
        }
        let pair = SpeakerPair::new(f[1], f[2])?;
        if pair.speaker_a() != f[1] {
            return Err(Error::parse_line(i + 1, "morph pair is not in canonical order"));
        }
        if !seen.insert(f[0].to_string()) {
            return Err(Error::parse_line(i + 1, format!("duplicate morph id `{}`", f[0])));
        }
        morphs.push(MorphRecord {
            morph_id: f[0].to_string(),
            pair: (f[1].to_string(), f[2].to_string()),
            source_utterances: (f[3].to_string(), f[4].to_string()),
            embeddings: BTreeMap::new(),
            degenerate: false,
        });
    }
    Ok(morphs)
}

pub fn encode_morph_embeddings(morphs: &[MorphRecord], space: &EmbeddingSpace) -> Result<Vec<u8>> {
    let rows = morphs.iter().map(|m| m.embedding(&space.name).map(|e| (m.morph_id.as_str(), e.values()))).collect::<Result<Vec<_>>>()?;
    evb::encode(space.dim, rows)
}

/// Attaches an EVB blob keyed by morph id; every morph must be covered.
pub fn attach_morph_embeddings(morphs: &mut [MorphRecord], space: &EmbeddingSpace, bytes: &[u8]) -> Result<()> {
    let blob = evb::decode(bytes)?;
    if blob.dim != space.dim {
        return Err(Error::DimensionMismatch { expected: space.dim, found: blob.dim });
    }
    if blob.records.len() != morphs.len() {
        return Err(Error::CountMismatch { expected: morphs.len(), found: blob.records.len() });
    }
    let mut rows: HashMap<String, Vec<f32>> = blob.records.into_iter().collect();
    for m in morphs.iter_mut() {
        let row = rows
            .remove(&m.morph_id)
            .ok_or_else(|| Error::MissingEmbedding(format!("no `{}` embedding for morph `{}`", space.name, m.morph_id)))?;
        let e = Embedding::new(space, row.into_iter().map(f64::from).collect())?;
        m.degenerate |= e.norm() < crate::embedding::DEGENERACY_EPS;
        m.embeddings.insert(space.name.clone(), e);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::UtteranceRecord;
    use proptest::prelude::*;

    fn space() -> EmbeddingSpace {
        EmbeddingSpace::new("e", 3).unwrap()
    }

    /// `rows`: (utterance, speaker, split, embedding)
    fn dataset(rows: &[(&str, &str, Split, [f64; 3])]) -> Dataset {
        let s = space();
        let us = rows
            .iter()
            .map(|(id, spk, split, v)| {
                let mut u = UtteranceRecord::new(*id, *spk, 1.0);
                u.split = *split;
                u.embeddings.insert("e".into(), Embedding::new(&s, v.to_vec()).unwrap());
                u
            })
            .collect();
        Dataset::new(vec![s], us).unwrap()
    }

    fn matcher() -> Matcher {
        Matcher::new("m", space())
    }

    const T: Split = Split::Test;

    #[test]
    fn genuine_counts_and_scores() {
        let d = dataset(&[("a1", "A", T, [1.0, 0.0, 0.0]), ("a2", "A", T, [1.0, 0.0, 0.0]), ("a3", "A", T, [1.0, 0.0, 0.0])]);
        let g = genuine_trials(&d, &matcher()).unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.iter().all(|t| t.score == 1.0 && t.kind == TrialKind::Genuine));

        let d = dataset(&[
            ("a1", "A", T, [1.0, 0.0, 0.0]),
            ("a2", "A", T, [0.0, 1.0, 0.0]),
            ("b1", "B", T, [1.0, 0.0, 0.0]),
            ("b2", "B", T, [1.0, 1.0, 0.0]),
            ("b3", "B", Split::Train, [1.0, 1.0, 0.0]),
        ]);
        assert_eq!(genuine_trials(&d, &matcher()).unwrap().len(), 2);
    }

    #[test]
    fn impostor_full_and_capped() {
        let d = dataset(&[
            ("a1", "A", T, [1.0, 0.0, 0.0]),
            ("a2", "A", T, [1.0, 0.0, 0.0]),
            ("b1", "B", T, [0.0, 1.0, 0.0]),
            ("b2", "B", T, [0.0, 0.0, 1.0]),
        ]);
        let imp = impostor_trials(&d, &matcher(), 100, 1).unwrap();
        assert_eq!(imp.len(), 4);
        assert!(imp.iter().all(|t| t.score == 0.0));
        let x = impostor_trials(&d, &matcher(), 2, 9).unwrap();
        let y = impostor_trials(&d, &matcher(), 2, 9).unwrap();
        assert_eq!(x.len(), 2);
        assert_eq!(x, y);

        let one = dataset(&[("a1", "A", T, [1.0, 0.0, 0.0]), ("b1", "B", Split::Train, [1.0, 0.0, 0.0])]);
        assert!(matches!(impostor_trials(&one, &matcher(), 10, 0), Err(Error::InsufficientSpeakers(1))));
    }

    #[test]
    fn cross_pair_index_enumerates_in_order() {
        let sizes = [2, 1, 3];
        let idx = CrossPairIndex::new(&sizes);
        let mut expected = Vec::new();
        let group = [0, 0, 1, 2, 2, 2];
        for i in 0..6 {
            for j in i + 1..6 {
                if group[i] != group[j] {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(idx.total, expected.len() as u64);
        let got: Vec<_> = (0..idx.total).map(|k| idx.pair(k)).collect();
        assert_eq!(got, expected);
    }

    fn morph_fixture() -> Dataset {
        dataset(&[
            ("a0", "A", Split::Morph, [1.0, 0.0, 0.0]),
            ("a1", "A", T, [1.0, 0.0, 0.0]),
            ("a2", "A", T, [0.0, 0.0, 1.0]),
            ("a3", "A", T, [0.5, 0.5, 0.0]),
            ("b0", "B", Split::Morph, [0.0, 1.0, 0.0]),
            ("b1", "B", T, [0.0, 1.0, 0.0]),
            ("b2", "B", T, [0.5, 0.5, 0.0]),
        ])
    }

    #[test]
    fn morphs_and_morph_trials() {
        let d = morph_fixture();
        let pair = SpeakerPair::new("B", "A").unwrap();
        let morphs = make_morphs(&d, std::slice::from_ref(&pair), 1, 5, "e", &Transparent).unwrap();
        assert_eq!(morphs.len(), 1);
        assert_eq!(morphs[0].embedding("e").unwrap().values(), &[0.5, 0.5, 0.0]);
        assert_eq!(morphs[0].source_utterances, ("a0".to_string(), "b0".to_string()));
        assert!(make_morphs(&d, std::slice::from_ref(&pair), 0, 5, "e", &Transparent).unwrap().is_empty());

        let trials = morph_trials(&morphs, &d, &matcher()).unwrap();
        assert_eq!(trials.len(), 5);
        let by_probe: HashMap<_, _> = trials.iter().map(|t| (t.probe.as_str(), t.score)).collect();
        assert!((by_probe["a3"] - 1.0).abs() < 1e-15);
        assert!((by_probe["a1"] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((by_probe["b1"] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(trials.iter().all(|t| t.morph_pair == Some(("A".into(), "B".into()))));
        assert_eq!(trials.iter().filter(|t| t.probe_speaker == "A").count(), 3);
    }

    #[test]
    fn morph_bookkeeping_scales() {
        let d = morph_fixture();
        let pair = SpeakerPair::new("A", "B").unwrap();
        let pairs = vec![pair; 43];
        let morphs = make_morphs(&d, &pairs, 100, 1, "e", &Transparent).unwrap();
        assert_eq!(morphs.len(), 4300);
    }

    #[test]
    fn missing_morph_material() {
        let d = dataset(&[("a0", "A", Split::Morph, [1.0, 0.0, 0.0]), ("b1", "B", T, [0.0, 1.0, 0.0])]);
        let pair = SpeakerPair::new("A", "B").unwrap();
        assert!(matches!(make_morphs(&d, &[pair], 1, 0, "e", &Transparent), Err(Error::MissingEmbedding(_))));
    }

    #[test]
    fn trial_and_morph_files_roundtrip() {
        let d = morph_fixture();
        let morphs = make_morphs(&d, &[SpeakerPair::new("A", "B").unwrap()], 3, 2, "e", &Transparent).unwrap();
        let trials = morph_trials(&morphs, &d, &matcher()).unwrap();
        let list = read_morph_list(&write_morph_list(&morphs, &[])).unwrap();
        let registry: HashMap<_, _> = list.iter().map(|m| (m.morph_id.clone(), m.pair.clone())).collect();
        let back = read_trials(&write_trials(&trials, &[("seed".into(), "2".into())]), &registry).unwrap();
        assert_eq!(back.len(), trials.len());
        for (x, y) in back.iter().zip(&trials) {
            assert_eq!((&x.probe, &x.reference, &x.morph_pair), (&y.probe, &y.reference, &y.morph_pair));
            assert!((x.score - y.score).abs() <= 1e-9 * y.score.abs().max(1e-300));
        }
        let mut list = list;
        attach_morph_embeddings(&mut list, &space(), &encode_morph_embeddings(&morphs, &space()).unwrap()).unwrap();
        assert_eq!(list[0].embedding("e").unwrap().values(), morphs[0].embedding("e").unwrap().values());
        assert!(read_trials("x\tmorph\tp\tunknown\ts\t0.5\n", &registry).is_err());
    }

    proptest! {
        #[test]
        fn trial_counts_match_formulas(sizes in prop::collection::vec(0usize..5, 2..6), seed in any::<u64>()) {
            let mut rows = Vec::new();
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("S{i}")).collect();
            let ids: Vec<Vec<String>> = sizes.iter().enumerate().map(|(s, &n)| (0..n).map(|k| format!("u{s}_{k}")).collect()).collect();
            for (s, group) in ids.iter().enumerate() {
                for (k, id) in group.iter().enumerate() {
                    rows.push((id.as_str(), names[s].as_str(), T, [1.0 + k as f64, s as f64, 0.5]));
                }
            }
            let d = dataset(&rows);
            let g = genuine_trials(&d, &matcher()).unwrap();
            prop_assert_eq!(g.len(), sizes.iter().map(|n| n * n.saturating_sub(1) / 2).sum::<usize>());
            let nonempty = sizes.iter().filter(|&&n| n > 0).count();
            let full: usize = (0..sizes.len()).flat_map(|i| (i + 1..sizes.len()).map(move |j| (i, j))).map(|(i, j)| sizes[i] * sizes[j]).sum();
            match impostor_trials(&d, &matcher(), usize::MAX, seed) {
                Ok(imp) => {
                    prop_assert_eq!(imp.len(), full);
                    prop_assert!(imp.iter().all(|t| t.probe != t.reference && t.probe_speaker != d.utterance(&t.reference).unwrap().speaker_id));
                }
                Err(Error::InsufficientSpeakers(n)) => prop_assert!(n == nonempty && n < 2),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            if full > 3 {
                let capped = impostor_trials(&d, &matcher(), 3, seed).unwrap();
                prop_assert_eq!(capped.len(), 3);
            }
        }
    }
}
