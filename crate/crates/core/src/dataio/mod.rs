//! Dataset assembly, interchange formats, speaker filtering and split
//! assignment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::rng;

pub mod evb;
pub mod manifest;
pub mod npy;

pub use manifest::{load_manifest, read_manifest, write_manifest, MANIFEST_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
            Sex::Unknown => "-",
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            "-" => Ok(Sex::Unknown),
            other => Err(format!("invalid sex `{other}` (expected F, M or -)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Unassigned,
    Train,
    Morph,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Unassigned => "-",
            Split::Train => "train",
            Split::Morph => "morph",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "-" => Ok(Split::Unassigned),
            "train" => Ok(Split::Train),
            "morph" => Ok(Split::Morph),
            "test" => Ok(Split::Test),
            other => Err(format!("invalid split `{other}`")),
        }
    }
}

/// One audio sample: metadata plus its embeddings keyed by space name.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub duration_sec: f64,
    pub sex: Sex,
    pub split: Split,
    pub embeddings: BTreeMap<String, Embedding>,
}

impl UtteranceRecord {
    pub fn new(utterance_id: impl Into<String>, speaker_id: impl Into<String>, duration_sec: f64) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            duration_sec,
            sex: Sex::Unknown,
            split: Split::Unassigned,
            embeddings: BTreeMap::new(),
        }
    }

    pub fn embedding(&self, space: &str) -> Result<&Embedding> {
        self.embeddings
            .get(space)
            .ok_or_else(|| Error::MissingEmbedding(format!("utterance `{}` has no `{space}` embedding", self.utterance_id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub sex: Sex,
    /// In dataset order.
    pub utterance_ids: Vec<String>,
    pub total_duration_sec: f64,
}

/// Utterances, the spaces their embeddings live in, and a derived speaker
/// index. Immutable once built; transforming operations return new values.
#[derive(Debug, Clone)]
pub struct Dataset {
    spaces: Vec<EmbeddingSpace>,
    utterances: Vec<UtteranceRecord>,
    by_id: HashMap<String, usize>,
    speakers: BTreeMap<String, SpeakerProfile>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.spaces == other.spaces && self.utterances == other.utterances
    }
}

impl Dataset {
    pub fn new(spaces: Vec<EmbeddingSpace>, utterances: Vec<UtteranceRecord>) -> Result<Self> {
        let mut seen_space = BTreeMap::new();
        for s in &spaces {
            if seen_space.insert(s.name.clone(), s.dim).is_some() {
                return Err(Error::InvalidConfig(format!("space `{}` declared twice", s.name)));
            }
        }
        let mut by_id = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if by_id.insert(u.utterance_id.clone(), i).is_some() {
                return Err(Error::DuplicateUtteranceId(u.utterance_id.clone()));
            }
            if !(u.duration_sec >= 0.0 && u.duration_sec.is_finite()) {
                return Err(Error::InvalidConfig(format!("utterance `{}` has invalid duration {}", u.utterance_id, u.duration_sec)));
            }
            for (name, emb) in &u.embeddings {
                let dim = *seen_space.get(name).ok_or_else(|| Error::UnknownSpace(name.clone()))?;
                if emb.dim() != dim || emb.space_name() != name {
                    return Err(Error::DimensionMismatch { expected: dim, found: emb.dim() });
                }
            }
        }
        let speakers = build_speaker_index(&utterances);
        Ok(Self { spaces, utterances, by_id, speakers })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty dataset is valid")
    }

    pub fn spaces(&self) -> &[EmbeddingSpace] {
        &self.spaces
    }

    pub fn space(&self, name: &str) -> Result<&EmbeddingSpace> {
        self.spaces.iter().find(|s| s.name == name).ok_or_else(|| Error::UnknownSpace(name.to_string()))
    }

    pub fn utterances(&self) -> &[UtteranceRecord] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn utterance(&self, id: &str) -> Result<&UtteranceRecord> {
        self.by_id.get(id).map(|&i| &self.utterances[i]).ok_or_else(|| Error::UnknownUtterance(id.to_string()))
    }

    pub fn speakers(&self) -> &BTreeMap<String, SpeakerProfile> {
        &self.speakers
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerProfile> {
        self.speakers.get(id)
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        self.speakers.keys().cloned().collect()
    }

    /// Utterances of `speaker` in `split`, in dataset order.
    pub fn utterances_in<'a>(&'a self, speaker: &str, split: Split) -> impl Iterator<Item = &'a UtteranceRecord> + 'a {
        let ids: &[String] = self.speakers.get(speaker).map(|p| p.utterance_ids.as_slice()).unwrap_or(&[]);
        ids.iter().map(move |id| &self.utterances[self.by_id[id]]).filter(move |u| u.split == split)
    }

    /// Rebuilds the speaker index from scratch and compares it with the
    /// cached one.
    pub fn speaker_index_consistent(&self) -> bool {
        build_speaker_index(&self.utterances) == self.speakers
    }

    /// Returns a copy with `space` added (replacing the embeddings of a
    /// previously declared space of the same name).
    pub fn with_embeddings(&self, space: &EmbeddingSpace, mut values: HashMap<String, Embedding>) -> Result<Self> {
        let mut spaces = self.spaces.clone();
        match spaces.iter_mut().find(|s| s.name == space.name) {
            Some(s) => *s = space.clone(),
            None => spaces.push(space.clone()),
        }
        let mut utterances = self.utterances.clone();
        for u in &mut utterances {
            u.embeddings.remove(&space.name);
            if let Some(e) = values.remove(&u.utterance_id) {
                u.embeddings.insert(space.name.clone(), e);
            }
        }
        if let Some(id) = values.keys().next() {
            return Err(Error::UnknownUtterance(id.clone()));
        }
        Dataset::new(spaces, utterances)
    }

    fn map_utterances(&self, f: impl FnOnce(&mut Vec<UtteranceRecord>)) -> Result<Self> {
        let mut utterances = self.utterances.clone();
        f(&mut utterances);
        Dataset::new(self.spaces.clone(), utterances)
    }
}

fn build_speaker_index(utterances: &[UtteranceRecord]) -> BTreeMap<String, SpeakerProfile> {
    let mut speakers: BTreeMap<String, SpeakerProfile> = BTreeMap::new();
    for u in utterances {
        let p = speakers.entry(u.speaker_id.clone()).or_insert_with(|| SpeakerProfile {
            speaker_id: u.speaker_id.clone(),
            sex: Sex::Unknown,
            utterance_ids: Vec::new(),
            total_duration_sec: 0.0,
        });
        p.utterance_ids.push(u.utterance_id.clone());
        p.total_duration_sec += u.duration_sec;
        if p.sex == Sex::Unknown {
            p.sex = u.sex;
        }
    }
    speakers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Evb,
    Npy,
}

impl FromStr for EmbeddingFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "evb" => Ok(Self::Evb),
            "npy" => Ok(Self::Npy),
            other => Err(format!("unknown embedding format `{other}`")),
        }
    }
}

impl EmbeddingFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension().and_then(|e| e.to_str()).and_then(|e| e.parse().ok())
    }
}

/// Attaches embeddings in `space` read from `path`.
///
/// EVB records carry utterance ids; NPY rows follow dataset order.
pub fn load_embeddings(dataset: &Dataset, space: &EmbeddingSpace, path: &Path, format: EmbeddingFormat) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut values = HashMap::with_capacity(dataset.len());
    match format {
        EmbeddingFormat::Evb => {
            let blob = evb::decode(&bytes)?;
            if blob.dim != space.dim {
                return Err(Error::DimensionMismatch { expected: space.dim, found: blob.dim });
            }
            if blob.records.len() != dataset.len() {
                return Err(Error::CountMismatch { expected: dataset.len(), found: blob.records.len() });
            }
            for (id, row) in blob.records {
                dataset.utterance(&id)?;
                let e = Embedding::new(space, row.into_iter().map(f64::from).collect())?;
                if values.insert(id.clone(), e).is_some() {
                    return Err(Error::DuplicateUtteranceId(id));
                }
            }
        }
        EmbeddingFormat::Npy => {
            let array = npy::decode(&bytes)?;
            if array.cols != space.dim {
                return Err(Error::DimensionMismatch { expected: space.dim, found: array.cols });
            }
            if array.rows != dataset.len() {
                return Err(Error::CountMismatch { expected: dataset.len(), found: array.rows });
            }
            for (u, row) in dataset.utterances().iter().zip(array.data.chunks_exact(array.cols.max(1))) {
                values.insert(u.utterance_id.clone(), Embedding::new(space, row.to_vec())?);
            }
        }
    }
    dataset.with_embeddings(space, values)
}

/// Writes every utterance's `space` embedding, in dataset order, as float32.
pub fn save_embeddings(dataset: &Dataset, space: &str, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let space = dataset.space(space)?;
    let rows = dataset
        .utterances()
        .iter()
        .map(|u| u.embedding(&space.name).map(|e| (u.utterance_id.as_str(), e.values())))
        .collect::<Result<Vec<_>>>()?;
    let bytes = match format {
        EmbeddingFormat::Evb => evb::encode(space.dim, rows)?,
        EmbeddingFormat::Npy => npy::encode_f32(rows.len(), space.dim, rows.iter().flat_map(|(_, v)| v.iter().copied())),
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Keeps the speakers whose total duration strictly exceeds the threshold.
pub fn filter_speakers(dataset: &Dataset, min_total_duration_sec: f64) -> Dataset {
    let keep: std::collections::HashSet<&str> =
        dataset.speakers().values().filter(|p| p.total_duration_sec > min_total_duration_sec).map(|p| p.speaker_id.as_str()).collect();
    dataset.map_utterances(|us| us.retain(|u| keep.contains(u.speaker_id.as_str()))).expect("a subset of a valid dataset is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub morph: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.60, morph: 0.10, test: 0.30 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, morph: f64, test: f64) -> Result<Self> {
        let r = Self { train, morph, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.morph, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidRatios(format!("{parts:?}: every ratio must be positive")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRatios(format!("{parts:?} sums to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Largest-remainder (Hamilton) apportionment of `n` items over `weights`.
///
/// Remainders are compared descending; ties go to the earlier weight.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (quotas[i] - quotas[i].floor(), quotas[j] - quotas[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-speaker shuffle-and-apportion into train / morph / test.
///
/// Each speaker's utterances are sorted by id and shuffled with a stream
/// keyed by `(seed, speaker_id)`, so the assignment of a speaker does not
/// depend on which other speakers are present or on manifest row order.
pub fn assign_splits(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    ratios.validate()?;
    let mut labels: HashMap<String, Split> = HashMap::with_capacity(dataset.len());
    for profile in dataset.speakers().values() {
        let mut ids: Vec<&String> = profile.utterance_ids.iter().collect();
        ids.sort();
        let mut rng = rng::labelled(seed, &profile.speaker_id);
        ids.shuffle(&mut rng);
        let counts = largest_remainder(ids.len(), &[ratios.train, ratios.morph, ratios.test]);
        let mut it = ids.into_iter();
        for (split, count) in [Split::Train, Split::Morph, Split::Test].into_iter().zip(counts) {
            for id in it.by_ref().take(count) {
                labels.insert(id.clone(), split);
            }
        }
    }
    dataset.map_utterances(|us| {
        for u in us.iter_mut() {
            u.split = labels[&u.utterance_id];
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub speakers: usize,
    pub female: usize,
    pub male: usize,
    pub unknown_sex: usize,
    pub utterances: usize,
    pub total_hours: f64,
}

pub fn stats(dataset: &Dataset) -> DatasetStats {
    let count = |s: Sex| dataset.speakers().values().filter(|p| p.sex == s).count();
    DatasetStats {
        speakers: dataset.speakers().len(),
        female: count(Sex::F),
        male: count(Sex::M),
        unknown_sex: count(Sex::Unknown),
        utterances: dataset.len(),
        total_hours: dataset.utterances().iter().map(|u| u.duration_sec).sum::<f64>() / 3600.0,
    }
}
