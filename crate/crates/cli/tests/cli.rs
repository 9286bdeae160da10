use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
min_total_duration_sec = 0
per_pair = 10
[simulation]
n_speakers = 12
utterances_per_speaker = 10
"#;

fn voicemorph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voicemorph")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn ok(args: &[&str]) -> String {
    let out = voicemorph(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn simulate_writes_manifest_and_identical_evb() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b)]);
    let manifest = std::fs::read_to_string(a.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 12 * 10);
    for space in ["ecapa", "xvector", "deeptalk"] {
        let name = format!("{space}.evb");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn single_speaker_simulates_then_pairs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[simulation]\nn_speakers = 1\n");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("sim"))]);
    let out = voicemorph(&["pairs", "--config", s(&cfg), "--out", s(&dir.path().join("pairs"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
    assert!(!dir.path().join("pairs").exists());
}

#[test]
fn config_errors_exit_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[[matchers]]\nname = \"wavlm\"\n"));
    let out_dir = dir.path().join("out");
    let out = voicemorph(&["eval", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());

    let cfg = write_config(dir.path(), "fmr_targets = [0.01, 1.5]\n");
    assert_eq!(voicemorph(&["eval", "--config", s(&cfg), "--out", s(&out_dir)]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "no_such_key = 1\n");
    assert_eq!(voicemorph(&["eval", "--config", s(&cfg), "--out", s(&out_dir)]).status.code(), Some(2));
    assert_eq!(voicemorph(&["frobnicate"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "histogram_range = [1.0, 1.0]\n");
    assert_eq!(voicemorph(&["eval", "--config", s(&cfg), "--out", s(&out_dir)]).status.code(), Some(4));
    assert!(!out_dir.exists());
}

#[test]
fn eval_report_shape_and_monotone_mmpmr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("morph_variant = \"transparent\"\n{SMALL}"));
    let out = dir.path().join("out");
    ok(&["eval", "--config", s(&cfg), "--out", s(&out)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let tables = report["thresholds"].as_array().unwrap();
    assert_eq!(tables.len(), 2);
    for t in tables {
        assert_eq!(t["entries"].as_array().unwrap().len(), 3);
    }
    let rate = |v: &serde_json::Value| v["hits"].as_f64().unwrap() / v["total"].as_f64().unwrap();
    for m in ["ecapa", "xvector"] {
        let rows: Vec<&serde_json::Value> = report["mmpmr"].as_array().unwrap().iter().filter(|r| r["matcher"] == m).collect();
        assert_eq!(rows.len(), 3);
        assert!(rate(&rows[0]["sample"]) >= rate(&rows[2]["sample"]));
    }
    assert_eq!(report["run"]["seed"], 42);
    assert_eq!(report["run"]["morph_variant"], "transparent");
    for f in ["report.txt", "pairs.tsv", "morphs.tsv", "trials.tsv", "thresholds.tsv", "histogram.ecapa.tsv", "histogram.xvector.tsv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let digest = report["run"]["config_digest"].as_str().unwrap();
    let hist = std::fs::read_to_string(out.join("histogram.ecapa.tsv")).unwrap();
    assert!(hist.contains(&format!("# config_digest={digest}")));
    assert_eq!(data_lines(&hist).len(), 100);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("seed = 5\n{SMALL}"));
    let a = ok(&["split", "--config", s(&cfg), "--out", s(&dir.path().join("a"))]);
    ok(&["split", "--config", s(&cfg), "--seed", "6", "--out", s(&dir.path().join("b"))]);
    assert!(a.contains("splits:"));
    let ma = std::fs::read_to_string(dir.path().join("a/manifest.tsv")).unwrap();
    let mb = std::fs::read_to_string(dir.path().join("b/manifest.tsv")).unwrap();
    assert!(ma.contains("# seed=5"));
    assert!(mb.contains("# seed=6"));
    let body = |t: &str| t.lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect::<Vec<_>>();
    assert_ne!(body(&ma), body(&mb));
}

#[test]
fn calibrate_from_trial_file_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&["score", "--config", s(&cfg), "--out", s(&out)]);
    let direct = ok(&["calibrate", "--config", s(&cfg), "--out", s(&dir.path().join("c1"))]);
    let trials = out.join("trials.tsv");
    let from_file = ok(&["calibrate", "--config", s(&cfg), "--trials", s(&trials), "--out", s(&dir.path().join("c2"))]);
    let rows =
        |t: &str| t.lines().filter(|l| l.starts_with("ecapa\t") || l.starts_with("xvector\t")).map(str::to_string).collect::<Vec<_>>();
    // thresholds from the file are rounded to nine significant digits
    assert_eq!(rows(&direct).len(), 6);
    for (a, b) in rows(&direct).iter().zip(rows(&from_file)) {
        let fa: Vec<&str> = a.split('\t').collect();
        let fb: Vec<&str> = b.split('\t').collect();
        assert_eq!((fa[0], fa[1], fa[4]), (fb[0], fb[1], fb[4]));
        assert_eq!(fa[2], fb[2]);
    }
}

#[test]
fn morph_stage_writes_list_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let summary = ok(&["morph", "--config", s(&cfg), "--out", s(&out)]);
    let list = std::fs::read_to_string(out.join("morphs.tsv")).unwrap();
    let n = data_lines(&list).len();
    assert!(summary.contains(&format!("morphs: {n}\n")));
    for space in ["ecapa", "xvector", "deeptalk"] {
        let blob = voicemorph_core::dataio::evb::decode(&std::fs::read(out.join(format!("morphs.{space}.evb"))).unwrap()).unwrap();
        assert_eq!(blob.records.len(), n);
    }
}

fn selected_pairs(dir: &Path, cfg: &Path) -> Vec<String> {
    let out = dir.join("pairs");
    ok(&["pairs", "--config", s(cfg), "--out", s(&out)]);
    let text = std::fs::read_to_string(out.join("pairs.tsv")).unwrap();
    data_lines(&text)
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            format!("{}:{}", f[0], f[1])
        })
        .collect()
}

fn tsne_labels(dir: &Path, cfg: &Path, pairs: &str) -> BTreeSet<String> {
    let out = dir.join("tsne");
    ok(&["tsne", "--config", s(cfg), "--pairs", pairs, "--out", s(&out)]);
    let text = std::fs::read_to_string(out.join("tsne.tsv")).unwrap();
    data_lines(&text).iter().map(|l| l.split('\t').nth(1).unwrap().to_string()).collect()
}

#[test]
fn tsne_scopes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[tsne]\nperplexity = 4.0\niterations = 300\n"));
    let pairs = selected_pairs(dir.path(), &cfg);
    assert!(pairs.len() >= 2);
    let one = tsne_labels(dir.path(), &cfg, &pairs[0]);
    assert_eq!(one.len(), 3);
    let (a, b) = pairs[0].split_once(':').unwrap();
    assert!(one.contains(a) && one.contains(b) && one.contains(&format!("{a}+{b}-morph")));
    let two = tsne_labels(dir.path(), &cfg, &format!("{},{}", pairs[0], pairs[1]));
    assert_eq!(two.len(), 6);
    assert_eq!(two.iter().filter(|l| l.ends_with("-morph")).count(), 2);

    let out = voicemorph(&["tsne", "--config", s(&cfg), "--pairs", "", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = voicemorph(&["tsne", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = voicemorph(&["tsne", "--config", s(&cfg), "--pairs", "spk0000:nobody", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn dataset_source_with_external_morphs() {
    let dir = tempfile::tempdir().unwrap();
    let sim_cfg = write_config(dir.path(), SMALL);
    let data = dir.path().join("data");
    ok(&["simulate", "--config", s(&sim_cfg), "--out", s(&data)]);
    ok(&["morph", "--config", s(&sim_cfg), "--out", s(&data)]);
    let cfg = dir.path().join("data/run.toml");
    std::fs::write(
        &cfg,
        r#"
min_total_duration_sec = 0
per_pair = 10
morph_variant = "external"
fusion_space = "deeptalk"
matchers = [{ name = "ecapa" }, { name = "xv", space = "xvector" }]
[dataset]
manifest = "manifest.tsv"
embeddings = [
  { space = "ecapa", dim = 192, path = "ecapa.evb" },
  { space = "xvector", dim = 512, path = "xvector.evb" },
  { space = "deeptalk", dim = 256, path = "deeptalk.evb" },
]
[dataset.morphs]
list = "morphs.tsv"
embeddings = [
  { space = "ecapa", dim = 192, path = "morphs.ecapa.evb" },
  { space = "xvector", dim = 512, path = "morphs.xvector.evb" },
]
"#,
    )
    .unwrap();
    let out = dir.path().join("ext");
    ok(&["report", "--config", s(&cfg), "--out", s(&out)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["run"]["matchers"][1][0], "xv");
    assert!(report["morphs"].as_u64().unwrap() > 0);
}
