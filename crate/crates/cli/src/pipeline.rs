//! The evaluation protocol as a chain of pure stages. Every command
//! recomputes the stages it needs from the configuration, so artifacts of
//! one command never feed another implicitly.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use voicemorph_core::dataio::{self, npy, Dataset, DatasetStats, EmbeddingFormat, Split};
use voicemorph_core::metrics::{self, MapMatrix, MorphOutcome, Rate, ThresholdTable};
use voicemorph_core::selection::{self, PairStats, SpeakerPair};
use voicemorph_core::simulate::{self, Simulation};
use voicemorph_core::trials::{self, Matcher, MorphRecord, Transparent, TrialKind, TrialScore};
use voicemorph_core::{Embedding, Error, FmrTarget, Result};

use crate::config::{EmbeddingSource, MorphVariant, Resolved, Source};

#[derive(Debug, Clone)]
pub struct Prepared {
    /// Filtered, split dataset.
    pub dataset: Dataset,
    pub simulation: Option<Simulation>,
    pub loaded: DatasetStats,
    pub kept: DatasetStats,
}

fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Builds the full dataset (simulated or from files) before filtering.
pub fn load_source(r: &Resolved) -> Result<(Dataset, Option<Simulation>)> {
    match &r.source {
        Source::Simulated(cfg) => {
            let sim = simulate::gen_population(cfg)?;
            Ok((sim.dataset.clone(), Some(sim)))
        }
        Source::Files(d) => {
            let text = std::fs::read_to_string(&d.manifest)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", d.manifest.display()))))?;
            let mut dataset = dataio::read_manifest(&text)?;
            for e in &d.embeddings {
                dataset = dataio::load_embeddings(&dataset, r.space(&e.space)?, &e.path, e.format()?)?;
            }
            Ok((dataset, None))
        }
    }
}

pub fn prepare(r: &Resolved) -> Result<Prepared> {
    let (full, simulation) = load_source(r)?;
    let loaded = dataio::stats(&full);
    let filtered = dataio::filter_speakers(&full, r.config.min_total_duration_sec);
    let dataset = dataio::assign_splits(&filtered, r.config.split, r.config.seed)?;
    let kept = dataio::stats(&dataset);
    Ok(Prepared { dataset, simulation, loaded, kept })
}

pub fn select_pairs(r: &Resolved, p: &Prepared) -> Result<Vec<SpeakerPair>> {
    let ids = p.dataset.speaker_ids();
    if ids.len() < 2 {
        return Err(Error::InsufficientSpeakers(ids.len()));
    }
    let all = selection::enumerate_pairs(&ids)?;
    let ranked = selection::rank_pairs(&p.dataset, &all, &r.ranking_space, Split::Train)?;
    Ok(selection::select_unique(&ranked, r.config.top_k))
}

fn load_external_embeddings(morphs: &mut [MorphRecord], r: &Resolved, src: &EmbeddingSource) -> Result<()> {
    let space = r.space(&src.space)?;
    let bytes = read_file(&src.path)?;
    match src.format()? {
        EmbeddingFormat::Evb => trials::attach_morph_embeddings(morphs, space, &bytes),
        EmbeddingFormat::Npy => {
            // rows follow the morph list order
            let arr = npy::decode(&bytes)?;
            if arr.cols != space.dim {
                return Err(Error::DimensionMismatch { expected: space.dim, found: arr.cols });
            }
            if arr.rows != morphs.len() {
                return Err(Error::CountMismatch { expected: morphs.len(), found: arr.rows });
            }
            for (m, row) in morphs.iter_mut().zip(arr.data.chunks_exact(arr.cols)) {
                let e = Embedding::new(space, row.to_vec())?;
                m.degenerate |= e.norm() < voicemorph_core::DEGENERACY_EPS;
                m.embeddings.insert(space.name.clone(), e);
            }
            Ok(())
        }
    }
}

pub fn build_morphs(r: &Resolved, p: &Prepared, pairs: &[SpeakerPair]) -> Result<Vec<MorphRecord>> {
    let cfg = &r.config;
    match cfg.morph_variant {
        MorphVariant::Transparent => trials::make_morphs(&p.dataset, pairs, cfg.per_pair, cfg.seed, &r.fusion_space, &Transparent),
        MorphVariant::Simulated => {
            let sim = p.simulation.as_ref().ok_or_else(|| Error::InvalidConfig("simulated morphs need a [simulation] source".into()))?;
            trials::make_morphs(&p.dataset, pairs, cfg.per_pair, cfg.seed, &r.fusion_space, sim)
        }
        MorphVariant::External => {
            let Source::Files(d) = &r.source else {
                return Err(Error::InvalidConfig("external morphs need a [dataset] source".into()));
            };
            let ext = d.morphs.as_ref().ok_or_else(|| Error::InvalidConfig("missing [dataset.morphs]".into()))?;
            let text = String::from_utf8(read_file(&ext.list)?).map_err(|_| Error::parse_line(1, "morph list is not UTF-8"))?;
            let mut morphs = trials::read_morph_list(&text)?;
            for m in &morphs {
                for spk in [&m.pair.0, &m.pair.1] {
                    if p.dataset.speaker(spk).is_none() {
                        return Err(Error::UnknownPair(format!("{}+{} (morph `{}`)", m.pair.0, m.pair.1, m.morph_id)));
                    }
                }
            }
            for e in &ext.embeddings {
                load_external_embeddings(&mut morphs, r, e)?;
            }
            Ok(morphs)
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatcherTrials {
    pub matcher: String,
    pub genuine: Vec<TrialScore>,
    pub impostor: Vec<TrialScore>,
    pub morph: Vec<TrialScore>,
}

impl MatcherTrials {
    pub fn all(&self) -> impl Iterator<Item = &TrialScore> {
        self.genuine.iter().chain(&self.impostor).chain(&self.morph)
    }

    pub fn scores(&self, kind: TrialKind) -> Vec<f64> {
        let v = match kind {
            TrialKind::Genuine => &self.genuine,
            TrialKind::Impostor => &self.impostor,
            TrialKind::Morph => &self.morph,
        };
        v.iter().map(|t| t.score).collect()
    }
}

pub fn matchers(r: &Resolved) -> Result<Vec<Matcher>> {
    r.matchers.iter().map(|(name, space)| Ok(Matcher::new(name.clone(), r.space(space)?.clone()))).collect()
}

pub fn score(r: &Resolved, p: &Prepared, morphs: &[MorphRecord]) -> Result<Vec<MatcherTrials>> {
    matchers(r)?
        .iter()
        .map(|m| {
            Ok(MatcherTrials {
                matcher: m.name.clone(),
                genuine: trials::genuine_trials(&p.dataset, m)?,
                impostor: trials::impostor_trials(&p.dataset, m, r.config.impostor_cap, r.config.seed)?,
                morph: trials::morph_trials(morphs, &p.dataset, m)?,
            })
        })
        .collect()
}

pub fn calibrate(r: &Resolved, scored: &[MatcherTrials]) -> Result<Vec<ThresholdTable>> {
    scored.iter().map(|t| ThresholdTable::calibrate(&t.matcher, &t.scores(TrialKind::Impostor), &r.config.fmr_targets)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TmrRow {
    pub matcher: String,
    pub fmr_target: FmrTarget,
    pub threshold: f64,
    pub tmr: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmpmrRow {
    pub matcher: String,
    pub fmr_target: FmrTarget,
    pub sample: Rate,
    pub pair: Rate,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub thresholds: Vec<ThresholdTable>,
    pub tmr: Vec<TmrRow>,
    pub outcomes: Vec<MorphOutcome>,
    pub mmpmr: Vec<MmpmrRow>,
    pub map: Vec<MapMatrix>,
}

pub fn evaluate(r: &Resolved, scored: &[MatcherTrials]) -> Result<Evaluation> {
    let thresholds = calibrate(r, scored)?;
    let mut tmr = Vec::new();
    for (t, table) in scored.iter().zip(&thresholds) {
        let genuine = t.scores(TrialKind::Genuine);
        for e in &table.entries {
            tmr.push(TmrRow {
                matcher: t.matcher.clone(),
                fmr_target: e.fmr_target,
                threshold: e.threshold.value,
                tmr: metrics::tmr_at(&genuine, e.threshold.value)?,
            });
        }
    }
    let morph_trials: Vec<TrialScore> = scored.iter().flat_map(|t| t.morph.iter().cloned()).collect();
    let outcomes = metrics::morph_outcomes(&morph_trials, &thresholds)?;
    let rule = r.config.success_rule;
    let mut mmpmr = Vec::new();
    for table in &thresholds {
        for e in &table.entries {
            mmpmr.push(MmpmrRow {
                matcher: table.matcher.clone(),
                fmr_target: e.fmr_target,
                sample: metrics::mmpmr_sample(&outcomes, &table.matcher, e.fmr_target.0, rule)?,
                pair: metrics::mmpmr_pair(&outcomes, &table.matcher, e.fmr_target.0, rule)?,
            });
        }
    }
    let names = r.matcher_names();
    let targets = thresholds.first().map(|t| t.entries.iter().map(|e| e.fmr_target.0).collect::<Vec<_>>()).unwrap_or_default();
    let map = targets.iter().map(|&fmr| metrics::map_matrix(&outcomes, &names, fmr, r.config.max_attempts)).collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { thresholds, tmr, outcomes, mmpmr, map })
}

/// Everything `eval` produces, in memory.
#[derive(Debug, Clone)]
pub struct Run {
    pub prepared: Prepared,
    pub pairs: Vec<SpeakerPair>,
    pub pair_stats: PairStats,
    pub morphs: Vec<MorphRecord>,
    pub scored: Vec<MatcherTrials>,
    pub evaluation: Evaluation,
}

pub fn run(r: &Resolved) -> Result<Run> {
    let prepared = prepare(r)?;
    let pairs = select_pairs(r, &prepared)?;
    let pair_stats = selection::pair_stats(&pairs, &prepared.dataset);
    let morphs = build_morphs(r, &prepared, &pairs)?;
    let scored = score(r, &prepared, &morphs)?;
    let evaluation = evaluate(r, &scored)?;
    Ok(Run { prepared, pairs, pair_stats, morphs, scored, evaluation })
}

/// Counts of utterances per split.
pub fn split_counts(dataset: &Dataset) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for u in dataset.utterances() {
        *m.entry(u.split.as_str()).or_insert(0) += 1;
    }
    m
}

/// Morph id to pair, for reading trial files back.
pub fn morph_pairs(morphs: &[MorphRecord]) -> HashMap<String, (String, String)> {
    morphs.iter().map(|m| (m.morph_id.clone(), m.pair.clone())).collect()
}
