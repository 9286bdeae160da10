//! Run configuration: a TOML file, command-line overrides, then defaults.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voicemorph_core::dataio::{EmbeddingFormat, SplitRatios};
use voicemorph_core::metrics::{SuccessRule, DEFAULT_FMR_TARGETS};
use voicemorph_core::project::TsneConfig;
use voicemorph_core::simulate::SimConfig;
use voicemorph_core::trials::DEFAULT_IMPOSTOR_CAP;
use voicemorph_core::{EmbeddingSpace, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphVariant {
    /// Morph embeddings in every space are the plain average of the sources.
    Transparent,
    /// The simulator's synthesis model; needs a `[simulation]` source.
    #[default]
    Simulated,
    /// Morph list and per-space embeddings produced by an outside chain.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    pub space: String,
    pub dim: usize,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<EmbeddingFormat>,
}

impl EmbeddingSource {
    pub fn format(&self) -> Result<EmbeddingFormat> {
        self.format
            .or_else(|| EmbeddingFormat::from_path(&self.path))
            .ok_or_else(|| Error::InvalidConfig(format!("cannot infer embedding format of `{}`; set `format`", self.path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalMorphs {
    pub list: PathBuf,
    pub embeddings: Vec<EmbeddingSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub manifest: PathBuf,
    pub embeddings: Vec<EmbeddingSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub morphs: Option<ExternalMorphs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatcherSpec {
    pub name: String,
    /// Defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub min_total_duration_sec: f64,
    pub split: SplitRatios,
    pub ranking_space: Option<String>,
    pub fusion_space: Option<String>,
    pub top_k: usize,
    pub per_pair: usize,
    pub morph_variant: MorphVariant,
    pub matchers: Vec<MatcherSpec>,
    pub fmr_targets: Vec<f64>,
    pub impostor_cap: usize,
    pub max_attempts: usize,
    pub success_rule: SuccessRule,
    pub histogram_bins: usize,
    pub histogram_range: (f64, f64),
    pub tsne: TsneConfig,
    pub simulation: Option<SimConfig>,
    pub dataset: Option<DatasetSource>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: None,
            min_total_duration_sec: 1800.0,
            split: SplitRatios::default(),
            ranking_space: None,
            fusion_space: None,
            top_k: 100,
            per_pair: 100,
            morph_variant: MorphVariant::default(),
            matchers: Vec::new(),
            fmr_targets: DEFAULT_FMR_TARGETS.to_vec(),
            impostor_cap: DEFAULT_IMPOSTOR_CAP,
            max_attempts: 5,
            success_rule: SuccessRule::default(),
            histogram_bins: 100,
            histogram_range: (-1.0, 1.0),
            tsne: TsneConfig::default(),
            simulation: None,
            dataset: None,
        }
    }
}

/// Where utterances come from, after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Simulated(SimConfig),
    Files(DatasetSource),
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub source: Source,
    pub spaces: Vec<EmbeddingSpace>,
    pub ranking_space: String,
    pub fusion_space: String,
    /// `(name, space)` in configured order.
    pub matchers: Vec<(String, String)>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().replace('\n', " ")))
    }

    /// Reads a config file; relative data paths are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = self.out.as_mut() {
            fix(out);
        }
        if let Some(d) = self.dataset.as_mut() {
            fix(&mut d.manifest);
            d.embeddings.iter_mut().for_each(|e| fix(&mut e.path));
            if let Some(m) = d.morphs.as_mut() {
                fix(&mut m.list);
                m.embeddings.iter_mut().for_each(|e| fix(&mut e.path));
            }
        }
    }

    /// Hex sha256 of the canonical JSON form. The output directory is not
    /// part of it.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let source = match (&self.simulation, &self.dataset) {
            (Some(_), Some(_)) => return bad("set either [simulation] or [dataset], not both".into()),
            (Some(s), None) => Source::Simulated(s.clone()),
            (None, Some(d)) => Source::Files(d.clone()),
            (None, None) => Source::Simulated(SimConfig::default()),
        };
        let mut config = self.clone();
        if let Source::Simulated(s) = &source {
            s.validate()?;
            config.simulation = Some(s.clone());
        }
        let spaces: Vec<EmbeddingSpace> = match &source {
            Source::Simulated(s) => s.embedding_spaces(),
            Source::Files(d) => {
                let mut seen = HashSet::new();
                let mut v = Vec::new();
                for e in &d.embeddings {
                    if !seen.insert(e.space.clone()) {
                        return bad(format!("space `{}` has two embedding files", e.space));
                    }
                    e.format()?;
                    v.push(EmbeddingSpace::new(e.space.clone(), e.dim)?);
                }
                if v.is_empty() {
                    return bad("[dataset] needs at least one embeddings entry".into());
                }
                v
            }
        };
        let known = |name: &str| -> Result<()> {
            if spaces.iter().any(|s| s.name == name) {
                Ok(())
            } else {
                Err(Error::UnknownSpace(name.to_string()))
            }
        };
        let default_fusion = match &source {
            Source::Simulated(s) => s.spaces.last().map(|s| s.name.clone()),
            Source::Files(_) => None,
        };
        let fusion_space = self
            .fusion_space
            .clone()
            .or_else(|| self.ranking_space.clone())
            .or(default_fusion)
            .ok_or_else(|| Error::InvalidConfig("fusion_space is required with a [dataset] source".into()))?;
        let ranking_space = self.ranking_space.clone().unwrap_or_else(|| fusion_space.clone());
        known(&fusion_space)?;
        known(&ranking_space)?;

        let matchers: Vec<(String, String)> = if self.matchers.is_empty() {
            match &source {
                Source::Simulated(_) => {
                    spaces.iter().filter(|s| s.name != fusion_space).map(|s| (s.name.clone(), s.name.clone())).collect()
                }
                Source::Files(_) => return bad("at least one [[matchers]] entry is required with a [dataset] source".into()),
            }
        } else {
            self.matchers.iter().map(|m| (m.name.clone(), m.space.clone().unwrap_or_else(|| m.name.clone()))).collect()
        };
        if matchers.is_empty() {
            return bad("no matchers configured".into());
        }
        let mut names = HashSet::new();
        for (name, space) in &matchers {
            if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
                return bad(format!("invalid matcher name `{name}`"));
            }
            if !names.insert(name) {
                return bad(format!("matcher `{name}` listed twice"));
            }
            known(space)?;
        }

        if self.fmr_targets.is_empty() {
            return bad("fmr_targets must not be empty".into());
        }
        for (i, t) in self.fmr_targets.iter().enumerate() {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::InvalidTarget(*t));
            }
            if self.fmr_targets[..i].contains(t) {
                return bad(format!("FMR target {t} listed twice"));
            }
        }
        self.split.validate()?;
        for (name, v) in [
            ("top_k", self.top_k),
            ("per_pair", self.per_pair),
            ("impostor_cap", self.impostor_cap),
            ("max_attempts", self.max_attempts),
            ("histogram_bins", self.histogram_bins),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.min_total_duration_sec >= 0.0 && self.min_total_duration_sec.is_finite()) {
            return bad("min_total_duration_sec must be finite and >= 0".into());
        }
        let (lo, hi) = self.histogram_range;
        if !(lo < hi) {
            return Err(Error::EmptyRange);
        }
        match (self.morph_variant, &source) {
            (MorphVariant::Simulated, Source::Files(_)) => return bad("morph_variant = \"simulated\" needs a [simulation] source".into()),
            (MorphVariant::External, Source::Files(d)) if d.morphs.is_none() => {
                return bad("morph_variant = \"external\" needs [dataset.morphs]".into())
            }
            (MorphVariant::External, Source::Simulated(_)) => return bad("morph_variant = \"external\" needs a [dataset] source".into()),
            _ => {}
        }
        if let Source::Files(DatasetSource { morphs: Some(m), .. }) = &source {
            for e in &m.embeddings {
                known(&e.space)?;
                e.format()?;
            }
        }
        Ok(Resolved { config, source, spaces, ranking_space, fusion_space, matchers })
    }
}

impl Resolved {
    pub fn digest(&self) -> String {
        self.config.digest()
    }

    pub fn matcher_names(&self) -> Vec<String> {
        self.matchers.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn space(&self, name: &str) -> Result<&EmbeddingSpace> {
        self.spaces.iter().find(|s| s.name == name).ok_or_else(|| Error::UnknownSpace(name.to_string()))
    }
}
