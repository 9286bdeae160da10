//! Embedding-level voice identity morphing: pair selection, trial
//! generation, threshold calibration and morph-attack metrics, plus a
//! seeded simulator and t-SNE/histogram exports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod project;
pub mod rng;
pub mod selection;
pub mod simulate;
pub mod trials;

pub use dataio::{Dataset, EmbeddingFormat, Sex, SpeakerProfile, Split, SplitRatios, UtteranceRecord};
pub use embedding::{cosine, morph_average, normalize, Embedding, EmbeddingSpace, Fusion, DEGENERACY_EPS};
pub use error::{Error, ErrorClass, Result};
pub use metrics::{
    map_matrix, mmpmr_pair, mmpmr_sample, morph_outcomes, threshold_at_fmr, tmr_at, FmrTarget, MapMatrix, MorphOutcome, Rate, SuccessRule,
    Threshold, ThresholdTable,
};
pub use selection::SpeakerPair;
pub use simulate::{SimConfig, Simulation};
pub use trials::{Matcher, MorphChain, MorphRecord, Transparent, TrialKind, TrialScore};

/// Formats a score with nine significant digits, trimming nothing, so
/// exports stay stable across platforms.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::fmt_sig9;

    #[test]
    fn sig9() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(0.5), "0.500000000");
        assert_eq!(fmt_sig9(-0.123456789012), "-0.123456789");
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(0.001), "0.00100000000");
    }
}
