use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ldrcnet::data::{load_image, save_image, synthetic_scene};
use ldrcnet::Tensor;

fn ldrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldrc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        fs::create_dir_all(&scenes).unwrap();
        for i in 0..2 {
            save_image(&scenes.join(format!("s{i}.png")), &synthetic_scene(32, 32, i)).unwrap();
        }
        let f = Self { dir };
        let out = ldrc(&["gen-data", "--clean-dir", s(&scenes), "--out", s(&f.data()), "--count", "2"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn train(&self, phase: &str, extra: &[&str]) -> Output {
        let (data, out) = (self.data(), self.path("runs"));
        let mut args = vec![
            "train", "--phase", phase, "--data", s(&data), "--out", s(&out), "--base-channels", "4",
            "--patch-size", "16", "--steps", "3", "--log-every", "0",
        ];
        args.extend_from_slice(extra);
        ldrc(&args)
    }

    /// Constraint then derain checkpoints under `runs/`.
    fn trained(&self) -> PathBuf {
        let out = self.train("constraint", &[]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let c = self.path("runs/constraint.ldrc");
        let out = self.train("derain", &["--resume", s(&c)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        self.path("runs/derain.ldrc")
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&ldrc(&[])), 2);
    assert_eq!(code(&ldrc(&["train", "--bogus"])), 2);
    assert_eq!(code(&ldrc(&["gen-data"])), 2);
    assert_eq!(code(&ldrc(&["gen-data", "--clean-dir", "/nonexistent/dir"])), 2);
}

#[test]
fn derain_without_a_constraint_checkpoint_explains_the_protocol() {
    let f = Fixture::new();
    let out = f.train("derain", &[]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("--resume") && msg.contains("freezes"), "{msg}");
    assert!(!f.path("runs/derain.ldrc").exists());
    assert_eq!(code(&f.train("derain", &["--ablation", "s2"])), 0);
}

#[test]
fn training_writes_checkpoint_and_loss_log() {
    let f = Fixture::new();
    let out = f.train("constraint", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("constraint.ldrc"));
    let log = fs::read_to_string(f.path("runs/constraint.loss.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "step\tloss\tlr");
    assert!(lines[1].starts_with("0\t"));
}

#[test]
fn config_file_overrides_flags_and_is_validated() {
    let f = Fixture::new();
    let cfg = f.path("bad.cfg");
    fs::write(&cfg, "patch_size = 30\n").unwrap();
    let out = f.train("constraint", &["--config", s(&cfg)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    fs::write(&cfg, "# shorter run\ntotal_steps = 2\n").unwrap();
    let out = f.train("constraint", &["--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(f.path("runs/constraint.loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    fs::write(&cfg, "mode = joint\n").unwrap();
    assert_eq!(code(&f.train("constraint", &["--config", s(&cfg)])), 2);
}

#[test]
fn resuming_a_finished_run_keeps_log_and_checkpoint() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("constraint", &["--save-every", "2"])), 0);
    let ckpt = f.path("runs/constraint.ldrc");
    let (log, bytes) = (fs::read_to_string(f.path("runs/constraint.loss.tsv")).unwrap(), fs::read(&ckpt).unwrap());
    let out = f.train("constraint", &["--resume", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(f.path("runs/constraint.loss.tsv")).unwrap(), log);
    assert_eq!(fs::read(&ckpt).unwrap(), bytes);
}

#[test]
fn infer_pads_and_crops_odd_sizes() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let input = f.path("odd.png");
    save_image(&input, &synthetic_scene(100, 150, 9)).unwrap();
    let output = f.path("odd_out.png");
    let out = ldrc(&["infer", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&output)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let restored: Tensor = load_image(&output).unwrap();
    assert_eq!(restored.shape().dims(), [1, 3, 100, 150]);

    let dir_out = f.path("restored");
    let out = ldrc(&["infer", "--checkpoint", s(&ckpt), "--input", s(&f.data().join("rainy")), "--output", s(&dir_out)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_dir(&dir_out).unwrap().count(), 2);

    let c = f.path("runs/constraint.ldrc");
    let out = ldrc(&["infer", "--checkpoint", s(&c), "--input", s(&input), "--output", s(&output)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_scores_and_rejects_misaligned_sets() {
    let f = Fixture::new();
    let clean = f.data().join("clean");
    let report = f.path("rep/report");
    let out = ldrc(&["eval", "--pred-dir", s(&clean), "--gt-dir", s(&clean), "--report", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("inf"));
    assert!(stdout(&out).contains("1.0000"));
    let tsv = fs::read_to_string(report.with_extension("tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 4);
    assert!(report.with_extension("json").exists());

    let out = ldrc(&["eval", "--pred-dir", s(&f.data().join("rainy")), "--gt-dir", s(&clean), "--report", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let partial = f.path("partial");
    fs::create_dir_all(&partial).unwrap();
    fs::copy(clean.join("0000.png"), partial.join("0000.png")).unwrap();
    let out = ldrc(&["eval", "--pred-dir", s(&partial), "--gt-dir", s(&clean), "--report", s(&report)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn inspect_dumps_one_image_per_channel() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let input = f.path("in.png");
    save_image(&input, &synthetic_scene(30, 22, 1)).unwrap();
    let dir = f.path("act");
    let out = ldrc(&["inspect", "--checkpoint", s(&ckpt), "--input", s(&input), "--layer", "deg1", "--out", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let files: Vec<_> = fs::read_dir(&dir).unwrap().collect();
    assert_eq!(files.len(), 4);
    let first = load_image(&dir.join("deg1_c000.png")).unwrap();
    assert_eq!((first.shape().h, first.shape().w), (30, 22));

    let out = ldrc(&["inspect", "--checkpoint", s(&ckpt), "--input", s(&input), "--layer", "nope", "--out", s(&dir)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("deg1"));
}

#[test]
fn bench_gates_on_correctness() {
    let out = ldrc(&["bench", "--op", "conv", "--sizes", "8,16", "--channels", "4", "--reps", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("conv\t16\t4\t"));
    let out = ldrc(&["bench", "--op", "deform", "--sizes", "8", "--reps", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = ldrc(&["bench", "--op", "conv", "--sizes", "8", "--inject-fault"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).is_empty());
    assert_eq!(code(&ldrc(&["bench", "--op", "fft"])), 2);
}

#[test]
fn gradcheck_reports_an_injected_fault() {
    let out = ldrc(&["gradcheck", "--module", "deform", "--seeds", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = ldrc(&["gradcheck", "--module", "deform", "--seeds", "2", "--inject-fault"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("deform_conv2d_offsets"), "{}", stderr(&out));
    assert!(stdout(&out).contains("FAIL"));
}
