//! The evaluation report, as JSON and as aligned text tables.

use std::fmt::Write as _;

use serde::Serialize;
use voicemorph_core::dataio::DatasetStats;
use voicemorph_core::metrics::{MapMatrix, Rate, SuccessRule, ThresholdTable};
use voicemorph_core::rng::RNG_ALGORITHM;
use voicemorph_core::selection::PairStats;
use voicemorph_core::FmrTarget;

use crate::config::{MorphVariant, Resolved};
use crate::pipeline::{self, MmpmrRow, Run, TmrRow};

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_digest: String,
    pub seed: u64,
    pub simulation_seed: Option<u64>,
    pub rng_algorithm: &'static str,
    pub morph_variant: MorphVariant,
    pub success_rule: SuccessRule,
    pub ranking_space: String,
    pub fusion_space: String,
    pub matchers: Vec<(String, String)>,
}

impl RunMeta {
    pub fn new(r: &Resolved) -> Self {
        Self {
            tool: "voicemorph",
            version: env!("CARGO_PKG_VERSION"),
            config_digest: r.digest(),
            seed: r.config.seed,
            simulation_seed: r.config.simulation.as_ref().map(|s| s.seed),
            rng_algorithm: RNG_ALGORITHM,
            morph_variant: r.config.morph_variant,
            success_rule: r.config.success_rule,
            ranking_space: r.ranking_space.clone(),
            fusion_space: r.fusion_space.clone(),
            matchers: r.matchers.clone(),
        }
    }

    /// `# key=value` lines for tabular exports.
    pub fn header(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("tool".to_string(), format!("{} {}", self.tool, self.version)),
            ("config_digest".to_string(), self.config_digest.clone()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        if let Some(s) = self.simulation_seed {
            v.push(("simulation_seed".to_string(), s.to_string()));
        }
        v.push(("rng".to_string(), self.rng_algorithm.to_string()));
        v
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub loaded: DatasetStats,
    pub kept: DatasetStats,
    pub train_utterances: usize,
    pub morph_utterances: usize,
    pub test_utterances: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialCounts {
    pub matcher: String,
    pub genuine: usize,
    pub impostor: usize,
    pub morph: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub run: RunMeta,
    pub dataset: DatasetSummary,
    pub pairs: PairStats,
    pub morphs: usize,
    pub degenerate_morphs: usize,
    pub trials: Vec<TrialCounts>,
    pub thresholds: Vec<ThresholdTable>,
    pub tmr: Vec<TmrRow>,
    pub mmpmr: Vec<MmpmrRow>,
    pub map: Vec<MapMatrix>,
}

impl Report {
    pub fn new(r: &Resolved, run: &Run) -> Self {
        let splits = pipeline::split_counts(&run.prepared.dataset);
        let count = |k: &str| splits.get(k).copied().unwrap_or(0);
        Self {
            run: RunMeta::new(r),
            dataset: DatasetSummary {
                loaded: run.prepared.loaded.clone(),
                kept: run.prepared.kept.clone(),
                train_utterances: count("train"),
                morph_utterances: count("morph"),
                test_utterances: count("test"),
            },
            pairs: run.pair_stats.clone(),
            morphs: run.morphs.len(),
            degenerate_morphs: run.morphs.iter().filter(|m| m.degenerate).count(),
            trials: run
                .scored
                .iter()
                .map(|t| TrialCounts {
                    matcher: t.matcher.clone(),
                    genuine: t.genuine.len(),
                    impostor: t.impostor.len(),
                    morph: t.morph.len(),
                })
                .collect(),
            thresholds: run.evaluation.thresholds.clone(),
            tmr: run.evaluation.tmr.clone(),
            mmpmr: run.evaluation.mmpmr.clone(),
            map: run.evaluation.map.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn targets(&self) -> Vec<FmrTarget> {
        self.thresholds.first().map(|t| t.entries.iter().map(|e| e.fmr_target).collect()).unwrap_or_default()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.run;
        let _ = writeln!(out, "{} {}", m.tool, m.version);
        let _ = writeln!(out, "config digest   {}", m.config_digest);
        let _ = write!(out, "seed            {}", m.seed);
        if let Some(s) = m.simulation_seed {
            let _ = write!(out, " (simulation {s})");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "rng             {}", m.rng_algorithm);
        let _ = writeln!(
            out,
            "speakers        {} loaded, {} kept; utterances train/morph/test {}/{}/{}",
            self.dataset.loaded.speakers,
            self.dataset.kept.speakers,
            self.dataset.train_utterances,
            self.dataset.morph_utterances,
            self.dataset.test_utterances
        );
        let _ = writeln!(
            out,
            "pairs           {} ({} cross-sex); morphs {} ({} degenerate)",
            self.pairs.count, self.pairs.cross_sex_count, self.morphs, self.degenerate_morphs
        );
        let targets = self.targets();
        let width = 12;

        let _ = writeln!(out, "\nThresholds (score >= threshold is a match)");
        let _ = writeln!(out, "{:<12}{:>10}{:>16}{:>18}{:>10}", "matcher", "FMR", "threshold", "empirical FMR", "trials");
        for t in &self.thresholds {
            for e in &t.entries {
                let _ = writeln!(
                    out,
                    "{:<12}{:>10}{:>16}{:>18}{:>10}",
                    t.matcher,
                    e.fmr_target.to_string(),
                    voicemorph_core::fmt_sig9(e.threshold.value) + if e.threshold.saturated { "*" } else { "" },
                    format!("{}%", e.empirical_fmr.percent()),
                    t.impostor_trials
                );
            }
        }

        let header = |out: &mut String, first: &str| {
            let _ = write!(out, "{first:<20}");
            for t in &targets {
                let _ = write!(out, "{:>width$}", format!("@{t}"));
            }
            let _ = writeln!(out);
        };
        let cells = |out: &mut String, label: String, rates: Vec<Rate>| {
            let _ = write!(out, "{label:<20}");
            for r in rates {
                let _ = write!(out, "{:>width$}", r.percent());
            }
            let _ = writeln!(out);
        };

        let _ = writeln!(out, "\nTMR (%)");
        header(&mut out, "matcher");
        for (name, _) in &m.matchers {
            let rates = self.tmr.iter().filter(|r| &r.matcher == name).map(|r| r.tmr).collect();
            cells(&mut out, name.clone(), rates);
        }

        let _ = writeln!(out, "\nMMPMR (%)");
        header(&mut out, "matcher");
        for (name, _) in &m.matchers {
            let rows: Vec<&MmpmrRow> = self.mmpmr.iter().filter(|r| &r.matcher == name).collect();
            cells(&mut out, format!("{name} sample"), rows.iter().map(|r| r.sample).collect());
            cells(&mut out, format!("{name} pair"), rows.iter().map(|r| r.pair).collect());
        }

        for map in &self.map {
            let _ = writeln!(out, "\nMAP (%) @{}: rows = attempts, columns = matchers", map.fmr_target);
            let _ = write!(out, "{:<10}", "");
            for k in 1..=map.matchers.len() {
                let _ = write!(out, "{:>width$}", format!("{k} of {}", map.matchers.len()));
            }
            let _ = writeln!(out);
            for (k, row) in map.entries.iter().enumerate() {
                let _ = write!(out, "{:<10}", k + 1);
                for r in row {
                    let _ = write!(out, "{:>width$}", r.percent());
                }
                let _ = writeln!(out);
            }
        }
        out
    }
}
