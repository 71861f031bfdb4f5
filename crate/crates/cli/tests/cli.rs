use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const JOB_LOG: &str = "user1\tJava Developer\tJava, Java Developer, C, Software Engineer\n\
user2\tNurse\tRN, Rigistered Nurse, Health Care\n\
user3\t.NET Developer\tC#, ASP, VB, Software Engineer, SE\n\
user4\tJava Developer\tJava, JEE, Struts, Software Engineer, SE\n\
user5\tHealth Care\tHealth Care Rep, HealthCare\n";

fn pgmhd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgmhd")).args(args).output().expect("spawn pgmhd")
}

fn ok(args: &[&str]) -> String {
    let out = pgmhd(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn file(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn job_model(&self) -> PathBuf {
        let log = self.file("jobs.tsv", JOB_LOG);
        let model = self.path("jobs.pgmhd");
        ok(&["train", s(&log), "--format", "userlog", "--min-users", "0", "--out", s(&model)]);
        model
    }
}

#[test]
fn train_job_log_prints_summary() {
    let w = Work::new();
    let log = w.file("t.tsv", JOB_LOG);
    let model = w.path("m.pgmhd");
    let out = ok(&["train", s(&log), "--format", "userlog", "--min-users", "0", "--out", s(&model)]);
    assert!(out.starts_with("level1=4 level2=15 edges=17 n=19 wall_ms="), "{out}");
    assert!(ok(&["stats", s(&model)]).starts_with("level1=4 level2=15 edges=17 n=19\n"));
    assert_eq!(ok(&["validate", s(&model)]), "ok level1=4 level2=15 edges=17 n=19\n");
}

#[test]
fn classify_software_engineer() {
    let w = Work::new();
    let model = w.job_model();
    let out = ok(&["classify", s(&model), "--node", "Software Engineer"]);
    assert_eq!(out, "Java Developer\t0.6667\n.NET Developer\t0.3333\n");
    let out = ok(&["classify", s(&model), "--node", "Software Engineer", "-k", "1", "--precise"]);
    assert_eq!(out, format!("Java Developer\t{:?}\n", 2.0f64 / 3.0));
}

#[test]
fn default_prefilter_empties_job_log() {
    let w = Work::new();
    let log = w.file("t.tsv", JOB_LOG);
    let model = w.path("m.pgmhd");
    let out = ok(&["train", s(&log), "--format", "userlog", "--out", s(&model)]);
    assert!(out.starts_with("level1=0 level2=0 edges=0 n=0 "), "{out}");
    let model2 = w.path("m2.pgmhd");
    let out = ok(&["train", s(&log), "--format", "userlog", "--min-users", "2", "--out", s(&model2)]);
    assert!(out.starts_with("level1=2 level2=3 "), "{out}");
}

#[test]
fn exit_codes() {
    let w = Work::new();
    let model = w.job_model();
    assert_eq!(pgmhd(&["classify", s(&model), "--node", "Cobol"]).status.code(), Some(6));
    assert_eq!(pgmhd(&["classify", s(&model), "--node", "Java", "--level", "9"]).status.code(), Some(2));
    assert_eq!(pgmhd(&["classify", s(&model), "--node", "Java", "-k", "0"]).status.code(), Some(7));
    assert_eq!(pgmhd(&["stats", s(&w.path("missing"))]).status.code(), Some(3));
    assert_eq!(pgmhd(&["frobnicate"]).status.code(), Some(2));

    let bad = w.file("bad.tsv", "u1\tA\tx\nnot a record\n");
    let out = pgmhd(&["train", s(&bad), "--format", "userlog", "--out", s(&w.path("o"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let mut text = fs::read_to_string(&model).unwrap();
    text.truncate(text.len() - 20);
    let corrupt = w.file("corrupt.pgmhd", &text);
    assert_eq!(pgmhd(&["validate", s(&corrupt)]).status.code(), Some(5));
    assert_eq!(pgmhd(&["stats", s(&corrupt)]).status.code(), Some(5));
}

#[test]
fn validate_reports_violations() {
    let w = Work::new();
    let model = w.job_model();
    let text = fs::read_to_string(&model).unwrap();
    // Corrupt Java's in-total while keeping the file well formed.
    let corrupted = text.replace("node\t2\tJava\t2\t0\n", "node\t2\tJava\t3\t0\n");
    assert_ne!(corrupted, text);
    let path = w.file("bad.pgmhd", &corrupted);
    let out = pgmhd(&["validate", s(&path)]);
    assert_eq!(out.status.code(), Some(5));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    assert!(stdout.contains("Java"));
}

#[test]
fn continue_from_with_empty_input_is_identity() {
    let w = Work::new();
    let model = w.job_model();
    let empty = w.file("empty.tsv", "");
    let next = w.path("next.pgmhd");
    ok(&["train", s(&empty), "--format", "userlog", "--continue-from", s(&model), "--out", s(&next)]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&next).unwrap());
}

#[test]
fn continue_from_equals_training_on_everything() {
    let w = Work::new();
    let first = w.file("a.tsv", "A\tx\nA\ty\nB\tx\n");
    let second = w.file("b.tsv", "B\tz\nA\tx\n");
    let both = w.file("ab.tsv", "A\tx\nA\ty\nB\tx\nB\tz\nA\tx\n");
    let (ma, mab, mc) = (w.path("a.m"), w.path("ab.m"), w.path("c.m"));
    ok(&["train", s(&first), "--out", s(&ma)]);
    ok(&["train", s(&both), "--out", s(&mab)]);
    ok(&["train", s(&second), "--continue-from", s(&ma), "--out", s(&mc)]);
    assert_eq!(fs::read(&mab).unwrap(), fs::read(&mc).unwrap());
}

#[test]
fn shard_count_does_not_change_output() {
    let w = Work::new();
    let log = w.path("synth.tsv");
    ok(&["synth", "--classes", "5", "--terms", "300", "--users", "3000", "--seed", "7", "--out", s(&log)]);
    let (one, eight) = (w.path("1.m"), w.path("8.m"));
    ok(&["train", s(&log), "--format", "userlog", "--shards", "1", "--out", s(&one)]);
    ok(&["train", s(&log), "--format", "userlog", "--shards", "8", "--out", s(&eight)]);
    assert_eq!(fs::read(&one).unwrap(), fs::read(&eight).unwrap());

    let capped = Command::new(env!("CARGO_BIN_EXE_pgmhd"))
        .env("PGMHD_THREADS", "2")
        .args(["train", s(&log), "--format", "userlog", "--shards", "8", "--out", s(&w.path("c.m"))])
        .output()
        .unwrap();
    assert!(capped.status.success());
    assert_eq!(fs::read(&one).unwrap(), fs::read(w.path("c.m")).unwrap());

    let bad = Command::new(env!("CARGO_BIN_EXE_pgmhd"))
        .env("PGMHD_THREADS", "zero")
        .args(["train", s(&log), "--format", "userlog", "--out", s(&w.path("d.m"))])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn related_on_star_and_isolated_terms() {
    let w = Work::new();
    let paths = w.file("star.tsv", "A\tx\nA\ty\nA\ty\nA\tz\nB\tlonely\n");
    let model = w.path("star.m");
    ok(&["train", s(&paths), "--out", s(&model)]);
    let out = ok(&["related", s(&model), "--term", "x"]);
    let labels: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, ["y", "z"]);
    assert_eq!(ok(&["related", s(&model), "--term", "lonely"]), "");
    assert_eq!(pgmhd(&["related", s(&model), "--term", "ghost"]).status.code(), Some(6));
}

#[test]
fn merge_disjoint_models() {
    let w = Work::new();
    let (pa, pb) = (w.file("a.tsv", "A\tx\nA\ty\n"), w.file("b.tsv", "B\tx\nB\tz\n"));
    let (ma, mb, mm) = (w.path("a.m"), w.path("b.m"), w.path("ab.m"));
    ok(&["train", s(&pa), "--out", s(&ma)]);
    ok(&["train", s(&pb), "--out", s(&mb)]);
    assert_eq!(ok(&["merge", s(&ma), s(&mb), "--out", s(&mm)]), "level1=2 level2=3 edges=4 n=4\n");
    assert_eq!(ok(&["classify", s(&mm), "--node", "x"]), "A\t0.5000\nB\t0.5000\n");
    assert!(ok(&["validate", s(&mm)]).starts_with("ok "));

    let other = w.file("c.tsv", "A\tx\ty\n");
    let mc = w.path("c.m");
    ok(&["train", s(&other), "--levels", "a,b,c", "--out", s(&mc)]);
    assert_eq!(pgmhd(&["merge", s(&ma), s(&mc), "--out", s(&w.path("bad.m"))]).status.code(), Some(5));
}

#[test]
fn eval_precision() {
    let w = Work::new();
    let paths = w.file("p.tsv", "A\tx\nA\ty\nA\tz\nB\tp\nB\tq\n");
    let model = w.path("m");
    ok(&["train", s(&paths), "--out", s(&model)]);

    let all = w.file("all.tsv", "x\ty\trelated\np\tq\trelated\nx\tp\tunrelated\n");
    let out = ok(&["eval", s(&model), "--pairs", s(&all)]);
    assert!(out.ends_with("precision=1.0000 retrieved=2 related=2\n"), "{out}");
    assert!(out.contains("x\tp\tunrelated\tnot-retrieved\t-\n"));

    let half = w.file("half.tsv", "x\ty\trelated\nx\tz\tunrelated\n");
    let out = ok(&["eval", s(&model), "--pairs", s(&half)]);
    assert!(out.ends_with("precision=0.5000 retrieved=2 related=1\n"), "{out}");

    let none = w.file("none.tsv", "x\tp\trelated\n");
    assert!(ok(&["eval", s(&model), "--pairs", s(&none)]).ends_with("precision=n/a retrieved=0 related=0\n"));
}

#[test]
fn synth_is_deterministic() {
    let w = Work::new();
    let (a, b, c) = (w.path("a"), w.path("b"), w.path("c"));
    let args = |p: &Path, seed: &str| {
        ok(&["synth", "--classes", "4", "--terms", "100", "--users", "500", "--seed", seed, "--out", s(p)]);
    };
    args(&a, "1");
    args(&b, "1");
    args(&c, "2");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 500);
}

#[test]
fn planted_pairs_beat_shuffled_pairs() {
    let w = Work::new();
    let log = w.path("log.tsv");
    ok(&["synth", "--classes", "6", "--terms", "600", "--users", "8000", "--seed", "11", "--out", s(&log)]);
    let model = w.path("m");
    ok(&["train", s(&log), "--format", "userlog", "--out", s(&model)]);

    // Gold pairs: consecutive ranks of one class are related.
    let planted: String = (0..6)
        .flat_map(|c| (0..10).map(move |r| format!("c{c:03}-term{r:05}\tc{c:03}-term{:05}\trelated\n", r + 1)))
        .collect();
    // Same term pairs, labels judged against a rotated class assignment.
    let shuffled: String = (0..6)
        .flat_map(|c| {
            (0..10).map(move |r| {
                let label = if (c + r) % 3 == 0 { "related" } else { "unrelated" };
                format!("c{c:03}-term{r:05}\tc{c:03}-term{:05}\t{label}\n", r + 1)
            })
        })
        .collect();
    let precision = |pairs: &str, name: &str| -> f64 {
        let file = w.file(name, pairs);
        let out = ok(&["eval", s(&model), "--pairs", s(&file), "-k", "20"]);
        let last = out.lines().last().unwrap();
        last.strip_prefix("precision=").unwrap().split(' ').next().unwrap().parse().unwrap()
    };
    let (p, q) = (precision(&planted, "gold.tsv"), precision(&shuffled, "shuf.tsv"));
    assert!(p > q, "planted {p} vs shuffled {q}");
    assert!(p >= 0.9, "planted {p}");
}
