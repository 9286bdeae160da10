//! Seeded synthetic speaker populations and a parametric morph model.
//!
//! Each speaker gets a unit identity direction in a shared latent space.
//! An utterance perturbs it with within-speaker noise; each embedding space
//! sees the utterance latent through a fixed random map with orthonormal
//! columns, plus per-space channel noise, then renormalizes. Because all
//! spaces share the latent, simulated matchers are correlated.
//!
//! All noise vectors are isotropic Gaussians scaled so their expected
//! squared norm is `sigma^2` regardless of dimension, i.e. components are
//! `N(0, sigma^2 / dim)`.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Sex, UtteranceRecord};
use crate::embedding::{normalized, Embedding, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trials::{MorphChain, MorphRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub latent_dim: usize,
    pub spaces: Vec<SpaceSpec>,
    pub within_speaker_sigma: f64,
    pub channel_sigma_per_space: f64,
    pub morph_sigma: f64,
    pub duration_range_sec: (f64, f64),
    /// Probability that a speaker is female.
    pub sex_ratio: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_speakers: 50,
            utterances_per_speaker: 20,
            latent_dim: 64,
            spaces: vec![
                SpaceSpec { name: "ecapa".into(), dim: 192 },
                SpaceSpec { name: "xvector".into(), dim: 512 },
                SpaceSpec { name: "deeptalk".into(), dim: 256 },
            ],
            within_speaker_sigma: 0.8,
            channel_sigma_per_space: 0.3,
            morph_sigma: 0.3,
            duration_range_sec: (100.0, 260.0),
            sex_ratio: 0.5,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.latent_dim < 2 {
            return bad(format!("latent_dim must be >= 2, got {}", self.latent_dim));
        }
        if self.spaces.is_empty() {
            return bad("at least one embedding space is required".into());
        }
        let mut names = std::collections::HashSet::new();
        for s in &self.spaces {
            EmbeddingSpace::new(s.name.clone(), s.dim)?;
            if s.dim < 2 {
                return bad(format!("space `{}` must have dim >= 2", s.name));
            }
            if s.dim < self.latent_dim {
                return bad(format!(
                    "space `{}` has dim {} < latent_dim {}; the latent map needs orthonormal columns",
                    s.name, s.dim, self.latent_dim
                ));
            }
            if !names.insert(&s.name) {
                return bad(format!("space `{}` listed twice", s.name));
            }
        }
        for (name, v) in [
            ("within_speaker_sigma", self.within_speaker_sigma),
            ("channel_sigma_per_space", self.channel_sigma_per_space),
            ("morph_sigma", self.morph_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let (lo, hi) = self.duration_range_sec;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("duration range ({lo}, {hi}) must satisfy 0 <= lo <= hi"));
        }
        if !(0.0..=1.0).contains(&self.sex_ratio) {
            return bad(format!("sex_ratio must lie in [0, 1], got {}", self.sex_ratio));
        }
        Ok(())
    }

    pub fn embedding_spaces(&self) -> Vec<EmbeddingSpace> {
        self.spaces.iter().map(|s| EmbeddingSpace { name: s.name.clone(), dim: s.dim }).collect()
    }
}

/// Row-major `rows x cols` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LatentMap {
    /// Gaussian matrix orthonormalized by modified Gram-Schmidt over columns.
    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let mut columns: Vec<Vec<f64>> = (0..cols).map(|_| (0..rows).map(|_| StandardNormal.sample(rng)).collect()).collect();
        for j in 0..cols {
            let (done, rest) = columns.split_at_mut(j);
            let v = &mut rest[0];
            for q in done.iter() {
                let proj: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
        let mut data = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, x) in col.iter().enumerate() {
                data[i * cols + j] = *x;
            }
        }
        Self { rows, cols, data }
    }

    pub fn apply(&self, latent: &[f64]) -> Vec<f64> {
        debug_assert_eq!(latent.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|row| row.iter().zip(latent).fold(0.0, |acc, (m, l)| acc + m * l)).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

fn gaussian(dim: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    let scale = sigma / (dim as f64).sqrt();
    (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn add_noise(v: &mut [f64], sigma: f64, rng: &mut Rng) {
    // always draw so that the stream does not depend on sigma
    let noise = gaussian(v.len(), sigma, rng);
    for (x, n) in v.iter_mut().zip(noise) {
        *x += n;
    }
}

/// A generated population plus the hidden state needed to synthesize morphs.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimConfig,
    pub dataset: Dataset,
    maps: Vec<(EmbeddingSpace, LatentMap)>,
    identities: HashMap<String, Vec<f64>>,
    latents: HashMap<String, Vec<f64>>,
}

pub fn speaker_name(index: usize) -> String {
    format!("spk{index:04}")
}

pub fn gen_population(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let spaces = config.embedding_spaces();
    let maps: Vec<(EmbeddingSpace, LatentMap)> = spaces
        .iter()
        .map(|s| {
            let mut rng = rng::labelled(config.seed, &format!("map/{}", s.name));
            (s.clone(), LatentMap::random(s.dim, config.latent_dim, &mut rng))
        })
        .collect();
    let (lo, hi) = config.duration_range_sec;
    let durations = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    type SpeakerRows = (String, Vec<f64>, Vec<(UtteranceRecord, Vec<f64>)>);
    let per_speaker: Vec<Result<SpeakerRows>> = (0..config.n_speakers)
        .into_par_iter()
        .map(|i| {
            let spk = speaker_name(i);
            let mut rng = rng::labelled(config.seed, &format!("speaker/{spk}"));
            let identity = normalized(&gaussian(config.latent_dim, 1.0, &mut rng))?;
            let sex = if rand::Rng::random_bool(&mut rng, config.sex_ratio) { Sex::F } else { Sex::M };
            let mut rows = Vec::with_capacity(config.utterances_per_speaker);
            for j in 0..config.utterances_per_speaker {
                let mut u = UtteranceRecord::new(format!("{spk}-{j:03}"), spk.clone(), durations.sample(&mut rng));
                u.sex = sex;
                let mut latent = identity.clone();
                add_noise(&mut latent, config.within_speaker_sigma, &mut rng);
                for (space, map) in &maps {
                    let mut v = map.apply(&latent);
                    add_noise(&mut v, config.channel_sigma_per_space, &mut rng);
                    u.embeddings.insert(space.name.clone(), Embedding::new(space, normalized(&v)?)?);
                }
                rows.push((u, latent));
            }
            Ok((spk, identity, rows))
        })
        .collect();

    let mut identities = HashMap::new();
    let mut latents = HashMap::new();
    let mut utterances = Vec::with_capacity(config.n_speakers * config.utterances_per_speaker);
    for r in per_speaker {
        let (spk, identity, rows) = r?;
        identities.insert(spk, identity);
        for (u, latent) in rows {
            latents.insert(u.utterance_id.clone(), latent);
            utterances.push(u);
        }
    }
    let dataset = Dataset::new(spaces, utterances)?;
    Ok(Simulation { config: config.clone(), dataset, maps, identities, latents })
}

impl Simulation {
    pub fn latent(&self, utterance_id: &str) -> Result<&[f64]> {
        self.latents.get(utterance_id).map(Vec::as_slice).ok_or_else(|| Error::MissingLatent(utterance_id.to_string()))
    }

    pub fn identity(&self, speaker: &str) -> Option<&[f64]> {
        self.identities.get(speaker).map(Vec::as_slice)
    }

    pub fn map(&self, space: &str) -> Result<&LatentMap> {
        self.maps.iter().find(|(s, _)| s.name == space).map(|(_, m)| m).ok_or_else(|| Error::UnknownSpace(space.to_string()))
    }

    /// Replaces the morph-noise level, keeping the population.
    pub fn with_morph_sigma(&self, sigma: f64) -> Result<Self> {
        let mut s = self.clone();
        s.config.morph_sigma = sigma;
        s.config.validate()?;
        Ok(s)
    }
}

/// Simulated synthesis chain: averages the two source utterances' latents,
/// then in every space the morph lacks emits
/// `normalize(map(fusion) + morph_sigma * noise)`. The noise stream is keyed
/// by morph id.
pub fn gen_morph_embeddings(sim: &Simulation, morphs: &mut [MorphRecord]) -> Result<()> {
    morphs.par_iter_mut().try_for_each(|m| {
        let la = sim.latent(&m.source_utterances.0)?;
        let lb = sim.latent(&m.source_utterances.1)?;
        let fusion: Vec<f64> = la.iter().zip(lb).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut rng = rng::labelled(sim.config.seed, &format!("morph-noise/{}", m.morph_id));
        for (space, map) in &sim.maps {
            let mut v = map.apply(&fusion);
            add_noise(&mut v, sim.config.morph_sigma, &mut rng);
            if m.embeddings.contains_key(&space.name) {
                continue;
            }
            match normalized(&v) {
                Ok(unit) => {
                    m.embeddings.insert(space.name.clone(), Embedding::new(space, unit)?);
                }
                Err(_) => {
                    m.degenerate = true;
                    m.embeddings.insert(space.name.clone(), Embedding::new(space, v)?);
                }
            }
        }
        Ok(())
    })
}

impl MorphChain for Simulation {
    fn render(&self, _dataset: &Dataset, morphs: &mut [MorphRecord]) -> Result<()> {
        gen_morph_embeddings(self, morphs)
    }
}
