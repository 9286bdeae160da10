//! Line-delimited utterance manifest.
//!
//! ```text
//! #vim-manifest v1
//! # seed=42
//! utt-0001<TAB>spk-01<TAB>12.5<TAB>F<TAB>train
//! ```
//!
//! The first line must be the header. Later lines starting with `#` carry
//! free-form metadata and are ignored on load.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, UtteranceRecord};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "#vim-manifest v1";

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    read_manifest(&fs::read_to_string(path)?)
}

pub fn read_manifest(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(Error::parse_line(1, format!("expected header `{MANIFEST_HEADER}`"))),
    }
    let mut utterances = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse_line(lineno, format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse_line(lineno, "empty utterance or speaker id"));
        }
        let duration: f64 = fields[2].parse().map_err(|_| Error::parse_line(lineno, format!("invalid duration `{}`", fields[2])))?;
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::parse_line(lineno, format!("duration must be finite and >= 0, got {duration}")));
        }
        let mut u = UtteranceRecord::new(fields[0], fields[1], duration);
        u.sex = fields[3].parse().map_err(|e: String| Error::parse_line(lineno, e))?;
        u.split = fields[4].parse().map_err(|e: String| Error::parse_line(lineno, e))?;
        utterances.push(u);
    }
    Dataset::new(Vec::new(), utterances)
}

/// Renders the manifest; `metadata` pairs become `# key=value` lines.
pub fn write_manifest(dataset: &Dataset, metadata: &[(String, String)]) -> String {
    let mut out = String::with_capacity(64 * (dataset.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k}={v}");
    }
    for u in dataset.utterances() {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", u.utterance_id, u.speaker_id, u.duration_sec, u.sex.as_str(), u.split.as_str());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Sex, Split};
    use crate::error::Location;

    #[test]
    fn header_only_is_empty() {
        let d = read_manifest("#vim-manifest v1\n").unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn missing_header() {
        let e = read_manifest("u1\tA\t1\tF\t-\n").unwrap_err();
        assert!(matches!(e, Error::Parse { at: Location::Line(1), .. }));
    }

    #[test]
    fn duplicate_id() {
        let e = read_manifest("#vim-manifest v1\nu1\tA\t1\tF\t-\nu1\tB\t2\tM\t-\n").unwrap_err();
        assert!(matches!(e, Error::DuplicateUtteranceId(_)));
    }

    #[test]
    fn three_utterances_two_speakers() {
        let d = read_manifest("#vim-manifest v1\n# note=x\nu1\tA\t1.5\tF\ttrain\nu2\tB\t2\tM\ttest\nu3\tA\t0.25\tF\t-\n").unwrap();
        assert_eq!(d.speakers().len(), 2);
        assert_eq!(d.speaker("A").unwrap().total_duration_sec, 1.75);
        assert_eq!(d.speaker("B").unwrap().total_duration_sec, 2.0);
        assert_eq!(d.speaker("A").unwrap().sex, Sex::F);
        assert_eq!(d.utterance("u2").unwrap().split, Split::Test);
        assert_eq!(d.utterance("u3").unwrap().split, Split::Unassigned);
    }

    #[test]
    fn bad_fields_report_line() {
        let e = read_manifest("#vim-manifest v1\nu1\tA\t1\tF\t-\nu2\tA\tabc\tF\t-\n").unwrap_err();
        assert!(matches!(e, Error::Parse { at: Location::Line(3), .. }), "{e}");
        let e = read_manifest("#vim-manifest v1\nu1\tA\t1\tX\t-\n").unwrap_err();
        assert!(matches!(e, Error::Parse { at: Location::Line(2), .. }));
        let e = read_manifest("#vim-manifest v1\nu1\tA\t1\tF\n").unwrap_err();
        assert!(matches!(e, Error::Parse { at: Location::Line(2), .. }));
        let e = read_manifest("#vim-manifest v1\nu1\tA\t-3\tF\t-\n").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
    }

    #[test]
    fn write_then_read() {
        let text = "#vim-manifest v1\nu1\tA\t0.1\tF\ttrain\nu2\tB\t1e-7\t-\tmorph\n";
        let d = read_manifest(text).unwrap();
        let written = write_manifest(&d, &[("seed".into(), "9".into())]);
        assert!(written.contains("# seed=9\n"));
        assert_eq!(read_manifest(&written).unwrap(), d);
    }
}
