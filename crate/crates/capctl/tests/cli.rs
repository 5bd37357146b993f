use std::path::{Path, PathBuf};

use capctl::run_command_with_env;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/sample_hi.tsv")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let no_env = |_: &str| None;
    let code = run_command_with_env(args.iter().copied(), &no_env, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let (code, _, err) = run(&["capctl", "frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    let (code, out, _) = run(&["capctl", "--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("sweep"));
}

#[test]
fn missing_credential_exits_2_naming_the_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let (code, _, err) = run(&[
        "capctl",
        "--cache-dir",
        cache.to_str().unwrap(),
        "context",
        "--in",
        fixture().to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(
        err.contains("CAPCTL_OPENAI_KEY") || err.contains("CAPCTL_ANTHROPIC_KEY"),
        "{err}"
    );
    assert!(!cache.exists());
}

#[test]
fn unsupported_language_is_a_config_error() {
    let (code, _, err) = run(&["capctl", "--offline", "caption", "--lang", "xx", "--in", "whatever.tsv"]);
    assert_eq!(code, 2);
    assert!(err.contains("xx"), "{err}");
}

#[test]
fn stats_prints_a_split_table() {
    let (code, out, _) = run(&["capctl", "stats", "--in", fixture().to_str().unwrap(), "--tsv"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("# preprocessing:"));
    assert_eq!(lines[1], "Set\tSentences\tEnglish\tHindi");
    assert!(lines[2].starts_with("Train\t12\t"));
}

#[test]
fn offline_caption_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let captions = dir.path().join("captions.tsv");
    let base = ["capctl", "--offline", "--cache-dir", cache.to_str().unwrap()];
    let (code, _, err) = run(&[
        &base[..],
        &[
            "caption",
            "--lang",
            "hi",
            "--weight",
            "50",
            "--in",
            fixture().to_str().unwrap(),
            "--out",
            captions.to_str().unwrap(),
        ],
    ]
    .concat());
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("remote_calls=0"), "{err}");
    let text = std::fs::read_to_string(&captions).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image_id\tregion\tweight\tcaption\tvalid\tnotes");
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("2380145\t10_20_50_40\t50\t"));

    let (code, out, _) = run(&["capctl", "validate", "--in", captions.to_str().unwrap(), "--lang", "hi"]);
    assert_eq!(code, 0);
    assert!(out.trim_end().ends_with("# valid: 12/12"), "{out}");

    // A wrong-script row is reported, not fatal.
    let bad = write(
        dir.path(),
        "bad.tsv",
        "img1\t1_2_3_4\t50\tsoap is in the dish\ttrue\t\n",
    );
    let (code, out, _) = run(&["capctl", "validate", "--in", &bad, "--lang", "hi"]);
    assert_eq!(code, 0);
    assert!(out.contains("false\tscript mismatch"), "{out}");
    assert!(out.contains("# valid: 0/1"));
}

#[test]
fn offline_context_and_translate_emit_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let base = ["capctl", "--offline", "--cache-dir", cache.to_str().unwrap()];
    let (code, out, err) = run(&[&base[..], &["context", "--in", fixture().to_str().unwrap()]].concat());
    assert_eq!(code, 0, "{err}");
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(first["key"], "2380145_10_20_50_40");
    assert_eq!(first["probe"]["correct"], true);
    assert!(first["text"].as_str().unwrap().contains("Response type 2"));

    let (code, out, err) = run(&[
        &base[..],
        &["translate", "--in", fixture().to_str().unwrap(), "--lang", "ha"],
    ]
    .concat());
    assert_eq!(code, 0, "{err}");
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(first["language"], "ha");
    assert!(first["text"].as_str().unwrap().starts_with("Tambaya: [ha]"));
    // Context calls were cached by the first command.
    assert!(err.contains("remote_calls=0"));
}

#[test]
fn score_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = write(dir.path(), "hyp.txt", "the cat\na c b\n");
    let reference = write(dir.path(), "ref.txt", "the cat sat\na b c\n");
    let src = write(dir.path(), "src.txt", "le chat\nx y z\n");

    let (code, out, _) = run(&[
        "capctl", "score", "--metric", "bleu", "--hyp", &hyp, "--ref", &reference,
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("# smoothing: floor(epsilon=0.1)"));
    assert!(out.contains("# alpha: 0.25"));
    assert!(out.contains("\ncorpus_bleu\t"));

    let same = write(dir.path(), "same.txt", "b a\na c b\n");
    let refs = write(dir.path(), "refs2.txt", "a b\na b c\n");
    let (code, out, _) = run(&["capctl", "score", "--metric", "ribes", "--hyp", &same, "--ref", &refs]);
    assert_eq!(code, 0);
    // (0 + 2/3) / 2
    assert!(out.contains("avg_ribes\t0.3333"), "{out}");

    let (code, out, _) = run(&[
        "capctl",
        "--offline",
        "score",
        "--metric",
        "sem",
        "--hyp",
        &hyp,
        "--ref",
        &hyp,
        "--src",
        &src,
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("avg_sem_sim\t1.0000"), "{out}");
    assert!(out.contains("avg_norm_sem\t1.0000"), "{out}");
    assert!(out.contains("# embedder: hash"));

    let (code, _, err) = run(&[
        "capctl",
        "--offline",
        "score",
        "--metric",
        "sem",
        "--hyp",
        &hyp,
        "--ref",
        &hyp,
    ]);
    assert_eq!(code, 2, "{err}");
    let short = write(dir.path(), "short.txt", "one\n");
    let (code, _, _) = run(&[
        "capctl", "score", "--metric", "bleu", "--hyp", &short, "--ref", &reference,
    ]);
    assert_eq!(code, 2);
}

#[test]
fn offline_sweep_smoke_markdown() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let (code, out, err) = run(&[
        "capctl",
        "--offline",
        "--cache-dir",
        cache.to_str().unwrap(),
        "--jobs",
        "2",
        "sweep",
        "--lang",
        "hi",
        "--in",
        fixture().to_str().unwrap(),
        "--subset",
        "10",
        "--seed",
        "1",
        "--weights",
        "0,50,100",
        "--format",
        "markdown",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("| Weight | BLEU | Sem. Sim. | Norm. Sem. | N |"));
    assert_eq!(out.lines().filter(|l| l.starts_with("| ")).count(), 4);
    assert!(out.contains("# seed: 1"));
    assert!(out.contains("# embedder: hash"));
    assert!(cache.join("audit.log").exists());

    let (code, _, err) = run(&[
        "capctl",
        "--offline",
        "sweep",
        "--in",
        fixture().to_str().unwrap(),
        "--subset",
        "99",
    ]);
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = run(&[
        "capctl",
        "--offline",
        "sweep",
        "--in",
        fixture().to_str().unwrap(),
        "--weights",
        "50,10",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "capctl.toml",
        &format!(
            "offline = true\ncache_dir = \"{}\"\n[[datasets]]\nlanguage = \"hi\"\nsplit = \"train\"\npath = \"{}\"\n",
            dir.path().join("c").display(),
            fixture().display()
        ),
    );
    let (code, out, err) = run(&[
        "capctl",
        "--config",
        &cfg,
        "sweep",
        "--subset",
        "3",
        "--weights",
        "0,100",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("# subset: 3"));
    assert!(dir.path().join("c/audit.log").exists());

    let broken = write(dir.path(), "broken.toml", "offline = \"yes\"\n");
    let (code, _, _) = run(&["capctl", "--config", &broken, "stats"]);
    assert_eq!(code, 2);
}
