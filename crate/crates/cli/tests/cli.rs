use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use locodec::protocols::parse_results_csv;

const FLEET: &str = "seed = 3
data.synthetic = true
decoder.family = \"linear\"
synth.n_rats = 2
synth.sessions_per_rat = 5
synth.n_samples = 1000
synth.n_channels = 8
";

fn locodec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locodec"))
        .args(args)
        .env_remove("LOCODEC_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = locodec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cfg.toml"), config).unwrap();
        Self { dir }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cfg(&self) -> PathBuf {
        self.p("cfg.toml")
    }

    fn sessions(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = fs::read_dir(self.p("fleet/sessions"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        v
    }

    fn synth(&self) {
        ok(&["synth", "--config", s(&self.cfg()), "--out", s(&self.p("fleet"))]);
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn manifest_hash(dir: &Path) -> String {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    text.lines().find(|l| l.contains("\"config_hash\"")).unwrap().to_string()
}

#[test]
fn ingest_gates_and_is_idempotent() {
    let f = Fixture::new(FLEET);
    f.synth();
    let inputs: Vec<String> = f.sessions().iter().map(|p| s(p).to_string()).collect();
    assert_eq!(inputs.len(), 10);
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["ingest"];
        args.extend(inputs.iter().map(String::as_str));
        let o = f.p(out);
        args.extend(["--out", s(&o)]);
        args.extend(extra);
        ok(&args);
    };
    run("a", &[]);
    run("b", &[]);
    let report = csv_rows(&f.p("a/gate_report.csv"));
    assert_eq!(report.len(), 10);
    assert_eq!(report.iter().filter(|r| r[4] == "excluded").count(), 1);
    for file in ["gate_report.csv", "sessions/r00s00.lcdc"] {
        assert_eq!(fs::read(f.p("a").join(file)).unwrap(), fs::read(f.p("b").join(file)).unwrap(), "{file}");
    }
    assert_eq!(manifest_hash(&f.p("a")), manifest_hash(&f.p("b")));
    run("c", &["--iqr-threshold", "0.46"]);
    let report = csv_rows(&f.p("c/gate_report.csv"));
    assert!(report.iter().all(|r| r[3] == "0.46" && r[4] == "included"));
}

#[test]
fn malformed_input_exits_2_and_keeps_the_rest() {
    let f = Fixture::new(FLEET);
    f.synth();
    let good = f.sessions()[0].clone();
    let bad = f.p("broken.lcdc");
    fs::write(&bad, b"not a session").unwrap();
    let out = locodec(&["ingest", s(&good), s(&bad), "--out", s(&f.p("ing"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.lcdc"));
    assert!(f.p("ing/sessions/r00s00.lcdc").exists());
    assert_eq!(csv_rows(&f.p("ing/gate_report.csv")).len(), 1);
}

#[test]
fn config_errors_exit_2_and_module_errors_exit_1() {
    let f = Fixture::new("seed = 1\ndecoder.famliy = \"ffnn\"\n");
    let out = locodec(&["experiment", "--config", s(&f.cfg())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("famliy"));

    let out = locodec(&["experiment", "--strategy", "sideways"]);
    assert_eq!(out.status.code(), Some(2));

    // one rat cannot be transferred across subjects: a plan error from the pipeline
    let f = Fixture::new(&FLEET.replace("synth.n_rats = 2", "synth.n_rats = 1"));
    let out = locodec(&[
        "experiment",
        "--config",
        s(&f.cfg()),
        "--out",
        s(&f.p("x")),
        "--strategy",
        "zeroshot_cross_subject",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plan error"));
}

#[test]
fn serial_runs_are_bitwise_identical_and_eval_matches_experiment() {
    let f = Fixture::new(FLEET);
    f.synth();
    let files: Vec<String> = f.sessions().iter().map(|p| format!("\"{}\"", s(p))).collect();
    let cfg = FLEET.replace("data.synthetic = true", &format!("data.sessions = [{}]", files.join(", ")));
    fs::write(f.cfg(), cfg).unwrap();
    for out in ["e1", "e2"] {
        ok(&["experiment", "--config", s(&f.cfg()), "--out", s(&f.p(out)), "--jobs", "1"]);
    }
    let a = fs::read(f.p("e1/results.csv")).unwrap();
    assert_eq!(a, fs::read(f.p("e2/results.csv")).unwrap());
    assert_eq!(manifest_hash(&f.p("e1")), manifest_hash(&f.p("e2")));
    let table = parse_results_csv(&String::from_utf8(a).unwrap()).unwrap();
    assert_eq!(table.len(), 9);
    assert!(csv_rows(&f.p("e1/audit.csv")).iter().all(|r| r[4] == "0"));

    let session = f.sessions()[0].clone();
    ok(&["train", "--config", s(&f.cfg()), "--out", s(&f.p("tr")), "--session", s(&session), "--jobs", "1"]);
    let jsonl = fs::read_to_string(f.p("tr/reports/r00s00.train.jsonl")).unwrap();
    assert!(jsonl.lines().last().unwrap().contains("config_hash"));
    let out = ok(&[
        "eval",
        "--model",
        s(&f.p("tr/models/r00s00.lcmd")),
        "--session",
        s(&session),
        "--offset-ms",
        "0",
    ]);
    let row = parse_results_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let want = table.iter().find(|r| r.session_id == "r00s00").unwrap();
    assert_eq!(&row[0], want);

    let out = ok(&[
        "eval",
        "--model",
        s(&f.p("tr/models/r00s00.lcmd")),
        "--session",
        s(&session),
        "--offset-ms",
        "-200",
    ]);
    let shifted = parse_results_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(shifted[0].n_test_windows, want.n_test_windows - 20);
}

#[test]
fn seed_flag_and_env_override_the_config() {
    let f = Fixture::new(FLEET);
    ok(&["experiment", "--config", s(&f.cfg()), "--out", s(&f.p("a")), "--seed", "11"]);
    let out = Command::new(env!("CARGO_BIN_EXE_locodec"))
        .args(["experiment", "--config", s(&f.cfg()), "--out", s(&f.p("b"))])
        .env("LOCODEC_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = fs::read_to_string(f.p("a/config.resolved.toml")).unwrap();
    assert!(a.starts_with("seed = 11"));
    assert_eq!(fs::read(f.p("a/results.csv")).unwrap(), fs::read(f.p("b/results.csv")).unwrap());
}

#[test]
fn report_on_one_variant_has_no_tests() {
    let f = Fixture::new(FLEET);
    ok(&["experiment", "--config", s(&f.cfg()), "--out", s(&f.p("e"))]);
    ok(&["report", s(&f.p("e/results.csv")), "--out", s(&f.p("r"))]);
    assert!(csv_rows(&f.p("r/tests.csv")).is_empty());
    let med = csv_rows(&f.p("r/medians.csv"));
    assert_eq!(med.len(), 1);
    assert_eq!(med[0][5], "9");
}

#[test]
fn report_compares_variants_and_curves_offsets() {
    let f = Fixture::new(&(FLEET.to_string() + "experiment.kind = \"offsets\"\nexperiment.offsets_ms = [-100, 0, 100, 200]\n"));
    f.synth();
    let fam = FLEET.replace("decoder.family = \"linear\"", "decoder.family = \"ffnn\"\ndecoder.ffnn_hidden = [8]\ntrain.max_epochs = 2");
    fs::write(f.cfg(), fam + "experiment.kind = \"offsets\"\nexperiment.offsets_ms = [-100, 0, 100, 200]\n").unwrap();
    ok(&["experiment", "--config", s(&f.cfg()), "--out", s(&f.p("e")), "--jobs", "1"]);
    for file in ["offset_summary.csv", "autocorr.csv", "offset_fits.csv"] {
        assert!(f.p("e").join(file).exists(), "{file}");
    }
    let sessions: Vec<PathBuf> = f.sessions().into_iter().take(2).collect();
    let mut args = vec!["report".to_string(), s(&f.p("e/results.csv")).into(), "--out".into(), s(&f.p("r")).into()];
    for p in &sessions {
        args.push("--sessions".into());
        args.push(s(p).into());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let tests = csv_rows(&f.p("r/tests.csv"));
    assert_eq!(tests[0][0], "all");
    assert!(tests.iter().any(|r| r[1] == "r2"));
    assert!(tests.iter().all(|r| r[3].parse::<f64>().unwrap() <= r[4].parse::<f64>().unwrap()));
    assert_eq!(csv_rows(&f.p("r/medians.csv")).len(), 8);
    assert_eq!(csv_rows(&f.p("r/offset_curve.csv")).len(), 8);
    assert!(f.p("r/spectra.csv").exists());
}
