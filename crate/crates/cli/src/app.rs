//! Command-line parsing and the subcommands.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use voicemorph_core::dataio::{self, evb};
use voicemorph_core::metrics::ThresholdTable;
use voicemorph_core::project::{self, ProjectionRow, TsneConfig};
use voicemorph_core::selection::{self, SpeakerPair};
use voicemorph_core::simulate;
use voicemorph_core::trials::{self, TrialKind};
use voicemorph_core::{fmt_sig9, Error, ErrorClass, Result};

use crate::config::{Resolved, RunConfig, Source};
use crate::pipeline::{self, MatcherTrials};
use crate::report::{Report, RunMeta};

pub const DEFAULT_OUT: &str = "voicemorph-out";

#[derive(Debug, Parser)]
#[command(name = "voicemorph", version, about = "Voice identity morphing attack evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run seed (splits, morph sources, impostor sampling, t-SNE).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: manifest plus one EVB file per space.
    Simulate,
    /// Filter speakers by duration and write the split manifest.
    Split,
    /// Rank candidate speaker pairs and keep the top unique ones.
    Pairs {
        /// Only enumerate all pairs of the source's speaker ids.
        #[arg(long)]
        enumerate_only: bool,
    },
    /// Build morph records and their embeddings.
    Morph,
    /// Score genuine, impostor and morph trials.
    Score,
    /// Compute decision thresholds at the FMR targets.
    Calibrate {
        /// Read impostor scores from a trial file instead of recomputing.
        #[arg(long, value_name = "PATH")]
        trials: Option<PathBuf>,
    },
    /// Run the whole protocol and write every artifact.
    Eval,
    /// Project test and morph embeddings of selected pairs to 2-D.
    Tsne {
        /// Comma-separated pairs, e.g. `spk0001:spk0007,spk0002:spk0003`.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        pairs: Vec<String>,
        /// Embedding space to project; defaults to the first matcher's.
        #[arg(long)]
        space: Option<String>,
    },
    /// Write only the report files.
    Report,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = load_config(&cli.common)?;
    let resolved = cfg.resolve()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let work = || -> Result<(Vec<Output>, String)> { plan(&cli.command, &resolved) };
    let (outputs, summary) = match cli.common.threads {
        Some(0) => return Err(Error::InvalidConfig("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    write_outputs(&out, &outputs)?;
    let mut s = summary;
    for o in &outputs {
        s.push_str(&format!("wrote {}\n", out.join(&o.name).display()));
    }
    Ok(s)
}

/// A file to be written once every computation has succeeded.
#[derive(Debug, Clone)]
pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Output {
    fn text(name: impl Into<String>, text: String) -> Self {
        Self { name: name.into(), bytes: text.into_bytes() }
    }
}

fn write_outputs(dir: &Path, outputs: &[Output]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for o in outputs {
        std::fs::write(dir.join(&o.name), &o.bytes)?;
    }
    Ok(())
}

fn plan(command: &Command, r: &Resolved) -> Result<(Vec<Output>, String)> {
    let meta = RunMeta::new(r).header();
    match command {
        Command::Simulate => cmd_simulate(r, &meta),
        Command::Split => {
            let p = pipeline::prepare(r)?;
            let counts = pipeline::split_counts(&p.dataset);
            let summary = format!(
                "speakers: {} loaded, {} kept; splits: {}\n",
                p.loaded.speakers,
                p.kept.speakers,
                counts.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
            );
            Ok((vec![Output::text("manifest.tsv", dataio::write_manifest(&p.dataset, &meta))], summary))
        }
        Command::Pairs { enumerate_only: true } => {
            let ids = source_speaker_ids(r)?;
            let pairs = selection::enumerate_pairs(&ids)?;
            let summary = format!("speakers: {}\npairs: {}\n", ids.len(), pairs.len());
            Ok((vec![Output::text("pairs_all.tsv", selection::write_pairs(&pairs, &meta))], summary))
        }
        Command::Pairs { enumerate_only: false } => {
            let p = pipeline::prepare(r)?;
            let pairs = pipeline::select_pairs(r, &p)?;
            let n = p.dataset.speakers().len();
            let summary = format!("speakers: {n}\ncandidate pairs: {}\nselected pairs: {}\n", n * (n - 1) / 2, pairs.len());
            Ok((vec![Output::text("pairs.tsv", selection::write_pairs(&pairs, &meta))], summary))
        }
        Command::Morph => {
            let p = pipeline::prepare(r)?;
            let pairs = pipeline::select_pairs(r, &p)?;
            let morphs = pipeline::build_morphs(r, &p, &pairs)?;
            let mut outputs = vec![Output::text("morphs.tsv", trials::write_morph_list(&morphs, &meta))];
            for space in &r.spaces {
                if morphs.iter().all(|m| m.embeddings.contains_key(&space.name)) {
                    outputs.push(Output {
                        name: format!("morphs.{}.evb", space.name),
                        bytes: trials::encode_morph_embeddings(&morphs, space)?,
                    });
                }
            }
            Ok((outputs, format!("pairs: {}\nmorphs: {}\n", pairs.len(), morphs.len())))
        }
        Command::Score => {
            let p = pipeline::prepare(r)?;
            let pairs = pipeline::select_pairs(r, &p)?;
            let morphs = pipeline::build_morphs(r, &p, &pairs)?;
            let scored = pipeline::score(r, &p, &morphs)?;
            let summary = trial_summary(&scored);
            Ok((vec![Output::text("trials.tsv", trials::write_trials(scored.iter().flat_map(|t| t.all()), &meta))], summary))
        }
        Command::Calibrate { trials: path } => {
            let tables = match path {
                Some(path) => calibrate_from_file(r, path)?,
                None => {
                    let p = pipeline::prepare(r)?;
                    let scored: Vec<MatcherTrials> = pipeline::matchers(r)?
                        .iter()
                        .map(|m| {
                            Ok(MatcherTrials {
                                matcher: m.name.clone(),
                                genuine: Vec::new(),
                                impostor: trials::impostor_trials(&p.dataset, m, r.config.impostor_cap, r.config.seed)?,
                                morph: Vec::new(),
                            })
                        })
                        .collect::<Result<_>>()?;
                    pipeline::calibrate(r, &scored)?
                }
            };
            let text = write_thresholds(&tables, &meta);
            Ok((vec![Output::text("thresholds.tsv", text.clone())], text))
        }
        Command::Eval => {
            let run = pipeline::run(r)?;
            let report = Report::new(r, &run);
            let mut outputs = report_outputs(&report);
            outputs.push(Output::text("pairs.tsv", selection::write_pairs(&run.pairs, &meta)));
            outputs.push(Output::text("morphs.tsv", trials::write_morph_list(&run.morphs, &meta)));
            outputs.push(Output::text("thresholds.tsv", write_thresholds(&run.evaluation.thresholds, &meta)));
            outputs.push(Output::text("trials.tsv", trials::write_trials(run.scored.iter().flat_map(|t| t.all()), &meta)));
            for t in &run.scored {
                let h = project::histogram(t.all(), r.config.histogram_bins, r.config.histogram_range)?;
                outputs.push(Output::text(format!("histogram.{}.tsv", t.matcher), project::write_histogram(&h, &meta)));
            }
            Ok((outputs, report.to_text()))
        }
        Command::Report => {
            let run = pipeline::run(r)?;
            let report = Report::new(r, &run);
            Ok((report_outputs(&report), report.to_text()))
        }
        Command::Tsne { pairs, space } => cmd_tsne(r, pairs, space.as_deref(), &meta),
    }
}

fn report_outputs(report: &Report) -> Vec<Output> {
    vec![Output::text("report.json", report.to_json()), Output::text("report.txt", report.to_text())]
}

fn cmd_simulate(r: &Resolved, meta: &[(String, String)]) -> Result<(Vec<Output>, String)> {
    let Source::Simulated(cfg) = &r.source else {
        return Err(Error::InvalidConfig("simulate needs a [simulation] source".into()));
    };
    let sim = simulate::gen_population(cfg)?;
    let mut outputs = vec![Output::text("manifest.tsv", dataio::write_manifest(&sim.dataset, meta))];
    for space in sim.dataset.spaces() {
        let rows = sim.dataset.utterances().iter().map(|u| {
            let e = &u.embeddings[&space.name];
            (u.utterance_id.as_str(), e.values())
        });
        outputs.push(Output { name: format!("{}.evb", space.name), bytes: evb::encode(space.dim, rows)? });
    }
    let toml = toml::to_string(cfg).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    outputs.push(Output::text("simulation.toml", toml));
    let summary = format!("speakers: {}\nutterances: {}\n", sim.dataset.speakers().len(), sim.dataset.len());
    Ok((outputs, summary))
}

/// Speaker ids of the raw source, without generating embeddings.
fn source_speaker_ids(r: &Resolved) -> Result<Vec<String>> {
    match &r.source {
        Source::Simulated(cfg) => Ok((0..cfg.n_speakers).map(simulate::speaker_name).collect()),
        Source::Files(d) => {
            let text = std::fs::read_to_string(&d.manifest)?;
            Ok(dataio::read_manifest(&text)?.speaker_ids())
        }
    }
}

fn trial_summary(scored: &[MatcherTrials]) -> String {
    scored
        .iter()
        .map(|t| format!("{}: genuine {} impostor {} morph {}\n", t.matcher, t.genuine.len(), t.impostor.len(), t.morph.len()))
        .collect()
}

pub fn write_thresholds(tables: &[ThresholdTable], meta: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out.push_str("matcher\tfmr_target\tthreshold\tsaturated\tempirical_fmr\timpostor_trials\n");
    for t in tables {
        for e in &t.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                t.matcher,
                e.fmr_target.0,
                fmt_sig9(e.threshold.value),
                e.threshold.saturated,
                e.empirical_fmr,
                t.impostor_trials
            ));
        }
    }
    out
}

/// Morph ids have the form `{a}+{b}/{k}`.
fn pair_from_morph_id(id: &str) -> Option<(String, String)> {
    let (pair, _) = id.rsplit_once('/')?;
    let (a, b) = pair.split_once('+')?;
    Some((a.to_string(), b.to_string()))
}

fn calibrate_from_file(r: &Resolved, path: &Path) -> Result<Vec<ThresholdTable>> {
    let text = std::fs::read_to_string(path)?;
    let mut morph_pairs = HashMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() == 6 && f[1] == TrialKind::Morph.as_str() {
            if let Some(p) = pair_from_morph_id(f[3]) {
                morph_pairs.insert(f[3].to_string(), p);
            }
        }
    }
    let all = trials::read_trials(&text, &morph_pairs)?;
    r.matcher_names()
        .iter()
        .map(|m| {
            let scores: Vec<f64> = all.iter().filter(|t| &t.matcher == m && t.kind == TrialKind::Impostor).map(|t| t.score).collect();
            ThresholdTable::calibrate(m, &scores, &r.config.fmr_targets)
        })
        .collect()
}

pub fn parse_pair(s: &str) -> Result<SpeakerPair> {
    let (a, b) =
        s.split_once(':').or_else(|| s.split_once('+')).ok_or_else(|| Error::InvalidConfig(format!("pair `{s}` must look like A:B")))?;
    SpeakerPair::new(a.trim(), b.trim()).map_err(|_| Error::InvalidConfig(format!("pair `{s}` names one speaker twice")))
}

fn cmd_tsne(r: &Resolved, requested: &[String], space: Option<&str>, meta: &[(String, String)]) -> Result<(Vec<Output>, String)> {
    let requested: Vec<SpeakerPair> = requested.iter().filter(|s| !s.trim().is_empty()).map(|s| parse_pair(s)).collect::<Result<_>>()?;
    if requested.is_empty() {
        return Err(Error::InvalidConfig("--pairs needs at least one pair".into()));
    }
    let space = match space {
        Some(s) => s.to_string(),
        None => r.matchers[0].1.clone(),
    };
    r.space(&space)?;
    let p = pipeline::prepare(r)?;
    let selected = pipeline::select_pairs(r, &p)?;
    for q in &requested {
        if !selected.iter().any(|s| s.key() == q.key()) {
            return Err(Error::UnknownPair(q.label()));
        }
    }
    let morphs = pipeline::build_morphs(r, &p, &requested)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut points = Vec::new();
    for q in &requested {
        for spk in [q.speaker_a(), q.speaker_b()] {
            for u in p.dataset.utterances_in(spk, dataio::Split::Test) {
                ids.push(u.utterance_id.clone());
                labels.push(spk.to_string());
                points.push(u.embedding(&space)?.values().to_vec());
            }
        }
        for m in morphs.iter().filter(|m| m.pair.0 == q.speaker_a() && m.pair.1 == q.speaker_b()) {
            ids.push(m.morph_id.clone());
            labels.push(format!("{}-morph", q.label()));
            points.push(m.embedding(&space)?.values().to_vec());
        }
    }
    let tsne_cfg = TsneConfig { seed: r.config.seed, ..r.config.tsne.clone() };
    let result = project::tsne(&points, &tsne_cfg)?;
    let rows: Vec<ProjectionRow> =
        ids.into_iter().zip(labels).zip(&result.points).map(|((id, label), xy)| ProjectionRow { id, label, x: xy[0], y: xy[1] }).collect();
    let mut header = meta.to_vec();
    header.extend([
        ("space".to_string(), space.clone()),
        ("perplexity".to_string(), tsne_cfg.perplexity.to_string()),
        ("iterations".to_string(), tsne_cfg.iterations.to_string()),
        ("learning_rate".to_string(), tsne_cfg.learning_rate.to_string()),
        ("early_exaggeration".to_string(), format!("{}x{}", tsne_cfg.early_exaggeration, tsne_cfg.exaggeration_iterations)),
        ("momentum".to_string(), format!("{}->{}@{}", tsne_cfg.initial_momentum, tsne_cfg.final_momentum, tsne_cfg.momentum_switch)),
        ("kl_initial".to_string(), fmt_sig9(result.initial_kl)),
        ("kl_final".to_string(), fmt_sig9(result.final_kl)),
    ]);
    let summary = format!("points: {}\nKL: {} -> {}\n", rows.len(), fmt_sig9(result.initial_kl), fmt_sig9(result.final_kl));
    Ok((vec![Output::text("tsne.tsv", project::write_projection(&rows, &header))], summary))
}
