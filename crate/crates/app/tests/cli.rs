use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcr_app::commands::ranked_from_run;
use pcr_core::corpus::load_queries;
use pcr_core::evaluate::{evaluate_run, read_run, MetricReport};

fn pcr<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcr")).args(args).output().expect("binary runs")
}

fn ok<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) -> String {
    let out = pcr(args);
    assert!(
        out.status.success(),
        "pcr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// synth, ingest, split and sample.
    fn prepared() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let pl = Pipeline { _dir: dir, root };
        ok(&["synth", "--out-dir", p(&pl.root), "--seed", "2"]);
        ok(&[
            "ingest",
            "--articles",
            p(&pl.path("articles.jsonl")),
            "--paragraphs",
            p(&pl.path("paragraphs.jsonl")),
            "--out-dir",
            p(&pl.root),
        ]);
        ok(&["split", "--queries", p(&pl.path("queries.jsonl")), "--out-dir", p(&pl.root)]);
        ok(&[
            "sample",
            "--articles",
            p(&pl.path("articles.jsonl")),
            "--paragraphs",
            p(&pl.path("paragraphs.jsonl")),
            "--queries",
            p(&pl.path("train.jsonl")),
            "--per-paragraph",
            "10",
            "--seed",
            "7",
            "--out",
            p(&pl.path("quads.jsonl")),
        ]);
        pl
    }

    fn train(&self, ckpt: &str, log: &str, extra: &[&str]) -> String {
        let (articles, train, validation, quads) = (
            self.path("articles.jsonl"),
            self.path("train.jsonl"),
            self.path("validation.jsonl"),
            self.path("quads.jsonl"),
        );
        let mut args = vec![
            "train",
            "--articles",
            p(&articles),
            "--train-queries",
            p(&train),
            "--validation-queries",
            p(&validation),
            "--quadruplets",
            p(&quads),
            "--hash-buckets",
            "4096",
            "--epochs",
            "2",
            "--lr",
            "1e-2",
            "--train-embeddings",
        ];
        let ckpt = self.path(ckpt);
        let log = self.path(log);
        args.extend(["--out", p(&ckpt), "--log", p(&log)]);
        args.extend(extra);
        ok(&args)
    }
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["frobnicate"][..], &["sample", "--bogus"], &[] as &[&str]] {
        let out = pcr(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    }
}

#[test]
fn runtime_errors_exit_with_one_line() {
    let out = pcr(&["eval", "--run", "/nonexistent/run.tsv", "--gold", "/nonexistent/gold.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: "));
}

#[test]
fn per_paragraph_must_match_quota() {
    let pl = Pipeline::prepared();
    let out = pcr(&[
        "sample",
        "--articles",
        p(&pl.path("articles.jsonl")),
        "--paragraphs",
        p(&pl.path("paragraphs.jsonl")),
        "--per-paragraph",
        "8",
        "--out",
        p(&pl.path("x.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_outputs_are_consistent() {
    let pl = Pipeline::prepared();
    let quads = std::fs::read_to_string(pl.path("quads.jsonl")).unwrap();
    assert!(quads.starts_with("{\"seed\":7,\"quota\":[3,3,4]}\n"));
    for name in ["train", "validation", "test"] {
        assert!(pl.path(&format!("{name}.jsonl")).exists());
    }

    let summary = pl.train("ckpt.bin", "train.tsv", &[]);
    assert!(summary.contains("seed=0 best_epoch="));
    assert_eq!(std::fs::read_to_string(pl.path("train.tsv")).unwrap().lines().count(), 2);

    ok(&[
        "index",
        "--articles",
        p(&pl.path("pool.jsonl")),
        "--checkpoint",
        p(&pl.path("ckpt.bin")),
        "--out",
        p(&pl.path("index.bin")),
        "--queries",
        p(&pl.path("test.jsonl")),
        "--run",
        p(&pl.path("run.tsv")),
    ]);
    let json = ok(&["eval", "--run", p(&pl.path("run.tsv")), "--gold", p(&pl.path("test.jsonl")), "--json"]);
    let from_cli: MetricReport = serde_json::from_str(json.trim()).unwrap();
    let gold = load_queries(pl.path("test.jsonl")).unwrap();
    let run = ranked_from_run(read_run(pl.path("run.tsv")).unwrap(), &gold).unwrap();
    assert_eq!(from_cli, evaluate_run(&run).unwrap());

    let kv = ok(&["eval", "--run", p(&pl.path("run.tsv")), "--gold", p(&pl.path("test.jsonl"))]);
    let keys: Vec<&str> = kv.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["r_precision", "r_at_5", "r_at_10", "mrr", "n_queries", "pool_coverage"]);
    assert_eq!(kv.lines().next().unwrap(), format!("r_precision={:.2}", from_cli.r_precision * 100.0));

    let analysis = ok(&[
        "analyze",
        "--run",
        p(&pl.path("run.tsv")),
        "--gold",
        p(&pl.path("test.jsonl")),
        "--articles",
        p(&pl.path("articles.jsonl")),
    ]);
    assert!(analysis.lines().any(|l| l.starts_with("pearson_gap_rank=")));
    assert!(analysis.lines().any(|l| l.starts_with("year=")));
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_warns() {
    let pl = Pipeline::prepared();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pcr"));
    let out = cmd
        .args([
            "train",
            "--articles",
            p(&pl.path("articles.jsonl")),
            "--train-queries",
            p(&pl.path("train.jsonl")),
            "--validation-queries",
            p(&pl.path("validation.jsonl")),
            "--quadruplets",
            p(&pl.path("quads.jsonl")),
            "--hash-buckets",
            "1024",
            "--epochs",
            "0",
            "--out",
            p(&pl.path("init.bin")),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-op"));
    let saved = pcr_core::EncoderParams::load(pl.path("init.bin")).unwrap();
    let fresh = pcr_core::EncoderParams::init(pcr_core::EncoderConfig {
        hash_buckets: 1024,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(saved.to_bytes(), fresh.to_bytes());
}

#[test]
fn several_seeds_get_separate_checkpoints() {
    let pl = Pipeline::prepared();
    let out = pl.train("multi.bin", "multi.tsv", &["--seeds", "1,2"]);
    assert!(out.contains("seed=1 ") && out.contains("seed=2 ") && out.contains("mean "));
    for seed in [1, 2] {
        assert!(pl.path(&format!("multi.seed{seed}.bin")).exists());
        assert!(pl.path(&format!("multi.seed{seed}.tsv")).exists());
    }
}
