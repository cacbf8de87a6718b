use std::path::Path;

use super::*;
use crate::checkpoint::CheckpointError;
use crate::model::CategoryVocabulary;
use crate::synth::{bundled_recipes, generate_corpus, SyntheticScene};

fn load(overrides: &[&str]) -> Result<RunConfig, HarnessError> {
    RunConfig::load(None, &overrides.iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

#[test]
fn overrides_parse_toml_literals_and_bare_strings() {
    let c = load(&["scenes=12", "seed = 7", "name=ablation", "eval.ks=[5, 50]", "pipeline.pairs=all", "splits.train=0.5", "splits.val=0.3"]).unwrap();
    assert_eq!((c.scenes, c.seed, c.name.as_str()), (12, 7, "ablation"));
    assert_eq!(c.eval.ks, vec![5, 50]);
    assert_eq!(c.pipeline.pairs, crate::pipeline::PairSource::All);
    assert_eq!((c.splits.train, c.splits.val), (0.5, 0.3));
    // Later overrides win.
    assert_eq!(load(&["scenes=3", "scenes=4"]).unwrap().scenes, 4);
}

#[test]
fn set_dotted_builds_tables() {
    let mut t = toml::Table::new();
    set_dotted(&mut t, "a.b.c", toml::Value::Integer(1)).unwrap();
    set_dotted(&mut t, "a.d", toml::Value::Boolean(true)).unwrap();
    assert_eq!(t["a"]["b"]["c"].as_integer(), Some(1));
    assert_eq!(t["a"]["d"].as_bool(), Some(true));
    assert!(matches!(set_dotted(&mut t, "a.b.c.x", toml::Value::Integer(2)), Err(HarnessError::Config(_))));
    assert!(matches!(set_dotted(&mut t, "a..b", toml::Value::Integer(2)), Err(HarnessError::Config(_))));
}

#[test]
fn invalid_configs_are_config_errors() {
    for bad in [
        &["scenes=lots"][..],
        &["unknown=1"],
        &["pipeline.rpcm.unknown=1"],
        &["splits.train=0.9"],
        &["workers=0"],
        &["name=a/b"],
        &["name="],
        &["vocabulary=/no/such/vocab.txt"],
        &["eval.ks=[]"],
        &["novalue"],
    ] {
        let e = load(bad).unwrap_err();
        assert!(matches!(e, HarnessError::Config(_)), "{bad:?}: {e}");
        assert_eq!((e.exit_code(), e.tag()), (2, "config"));
        assert!(!e.line().contains('\n'));
    }
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("run.toml");
    std::fs::write(&f, "scenes = 9\nseed = 3\n[pipeline.rpcm]\nepochs = 2\n").unwrap();
    let c = RunConfig::load(Some(&f), &["seed=4".into()]).unwrap();
    assert_eq!((c.scenes, c.seed, c.pipeline.rpcm.epochs), (9, 4, 2));
    // A written config reads back unchanged.
    let g = dir.path().join("again.toml");
    std::fs::write(&g, c.to_toml()).unwrap();
    let mut back = RunConfig::load(Some(&g), &[]).unwrap();
    back.paths.report_dir = c.paths.report_dir.clone();
    assert_eq!(back, c);
    std::fs::write(&f, "scenes = [").unwrap();
    assert!(matches!(RunConfig::load(Some(&f), &[]), Err(HarnessError::Config(_))));
}

#[test]
fn deviations_list_changed_reference_settings() {
    let mut c = RunConfig::default();
    c.eval.ks = vec![1500, 2000];
    c.pipeline.rpcm.model.iterations = 4;
    assert!(c.deviations().is_empty(), "{:?}", c.deviations());
    c.eval.ks = vec![20];
    c.pipeline.ppg.k1 = 50;
    let d = c.deviations();
    assert_eq!(d, vec!["eval.ks: [20] (reference [1500, 2000])".to_string(), "pipeline.ppg.k1: 50 (reference 10000)".to_string()]);
}

#[test]
fn error_tags_and_exit_codes() {
    use crate::pipeline::PipelineError;
    let missing = HarnessError::Missing { stage: "ppg".into(), what: "a trained checkpoint".into(), path: "x/ppg.ckpt".into() };
    assert_eq!(missing.line(), "error[missing]: stage `ppg` needs a trained checkpoint at x/ppg.ckpt, which does not exist");
    let cases: Vec<(HarnessError, &str, i32)> = vec![
        (HarnessError::Usage("u".into()), "usage", 2),
        (missing, "missing", 2),
        (HarnessError::io("f")(std::io::Error::other("boom")), "io", 2),
        (HarnessError::Malformed("m".into()), "malformed", 2),
        (PipelineError::Config("c".into()).into(), "config", 2),
        (PipelineError::Data("d".into()).into(), "data", 2),
        (PipelineError::Checkpoint(CheckpointError::Kind { expected: "a".into(), found: "b".into() }).into(), "checkpoint", 2),
        (HarnessError::Internal("bug".into()), "internal", 1),
    ];
    for (e, tag, code) in cases {
        assert_eq!((e.tag(), e.exit_code()), (tag, code), "{e}");
        assert!(e.line().starts_with(&format!("error[{tag}]: ")));
    }
    let multi = HarnessError::Malformed("first\n  second".into());
    assert_eq!(multi.line(), "error[malformed]: first second");
}

fn small_dataset() -> (CategoryVocabulary, Vec<SyntheticScene>) {
    let vocab = CategoryVocabulary::toy();
    let scenes = generate_corpus(&bundled_recipes(), &vocab, 5, 1).unwrap();
    (vocab, scenes)
}

fn write(dir: &Path, vocab: &CategoryVocabulary, scenes: &[SyntheticScene]) -> Manifest {
    write_dataset(dir, vocab, [&scenes[..3], &scenes[3..4], &scenes[4..]], 1, vec!["harbor".into()]).unwrap()
}

#[test]
fn dataset_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, scenes) = small_dataset();
    let m = write(dir.path(), &vocab, &scenes);
    assert_eq!(m.scenes, 5);
    assert_eq!(m.splits["train"].count, 3);
    let d = read_dataset(dir.path()).unwrap();
    assert_eq!(d.manifest, m);
    assert_eq!(d.vocab, vocab);
    assert_eq!((d.train.as_slice(), d.val.as_slice(), d.test.as_slice()), (&scenes[..3], &scenes[3..4], &scenes[4..]));
}

#[test]
fn empty_splits_are_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = CategoryVocabulary::toy();
    let m = write_dataset(dir.path(), &vocab, [&[], &[], &[]], 0, Vec::new()).unwrap();
    assert!(m.splits.values().all(|e| e.count == 0 && e.sha256 == sha256_hex(b"")));
    assert!(read_dataset(dir.path()).unwrap().train.is_empty());
}

#[test]
fn tampered_dataset_is_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, scenes) = small_dataset();
    write(dir.path(), &vocab, &scenes);
    let val = dir.path().join("val.jsonl");
    let mut text = std::fs::read_to_string(&val).unwrap();
    text.push('\n');
    std::fs::write(&val, text).unwrap();
    let e = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(&e, HarnessError::Malformed(m) if m.contains("checksum")), "{e}");

    let empty = tempfile::tempdir().unwrap();
    let e = read_dataset(empty.path()).unwrap_err();
    assert!(matches!(&e, HarnessError::Missing { stage, .. } if stage == "dataset"), "{e}");
}

#[test]
fn sha256_known_vector() {
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn selftest_profile_is_quick() {
    let c = load(&selftest_profile().iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
    assert_eq!(c.name, "selftest");
    assert!(c.scenes <= 50);
}

#[test]
fn recall_plot_is_svg() {
    let pts = vec![CurvePoint { k: 5, mr: 10.0, mmr: 5.0, hmr: 6.67 }, CurvePoint { k: 50, mr: 40.0, mmr: 30.0, hmr: 34.29 }];
    let svg = recall_plot_svg("run / rpcm", &[("PredCls".into(), pts)]);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("PredCls"));
}
