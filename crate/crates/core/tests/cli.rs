use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvp"))
        .args(args)
        .env("CVP_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn arg(key: &str, path: &Path) -> String {
    format!("--{key}={}", path.display())
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (sa, sb) = (snapshot(a), snapshot(b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        if k == Path::new("config.json") {
            continue;
        }
        assert!(v == &sb[k], "{} differs", k.display());
    }
}

fn gen(root: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = root.join(name);
    let mut args = vec!["gen-data".to_string(), arg("out", &out)];
    args.extend(extra.iter().map(|s| s.to_string()));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let res = cvp(&argv);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn gen_data_writes_video_and_previews() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gen(tmp.path(), "d1", &["--kind=bouncing_ball", "--frames=20", "--size=32", "--seed=7"]);
    assert!(out.join("video.cvpt").is_file());
    assert!(out.join("config.json").is_file());
    assert_eq!(fs::read_dir(out.join("frames")).unwrap().count(), 20);

    let again = gen(tmp.path(), "d2", &[&arg("config", &out.join("config.json"))]);
    assert_same_tree(&out, &again);
    let other = gen(tmp.path(), "d3", &["--kind=bouncing_ball", "--frames=20", "--size=32", "--seed=8"]);
    assert_ne!(fs::read(out.join("video.cvpt")).unwrap(), fs::read(other.join("video.cvpt")).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&cvp(&["gen-data", "--size=4", &arg("out", &out)])), 2);
    assert_eq!(code(&cvp(&["gen-data", "--frames=1", &arg("out", &out)])), 2);
    assert_eq!(code(&cvp(&["gen-data", "--kind=spiral", &arg("out", &out)])), 2);
    assert_eq!(code(&cvp(&["train", &arg("data", &tmp.path().join("missing.cvpt"))])), 2);
    assert_eq!(code(&cvp(&["frobnicate"])), 2);
    assert_eq!(code(&cvp(&["verify", "--only=nonsense"])), 2);
    assert!(!out.exists());

    let data = gen(tmp.path(), "d", &["--frames=20", "--size=16"]);
    let res = cvp(&[
        "sample",
        "--steps=0",
        &arg("data", &data.join("video.cvpt")),
        &arg("checkpoint", &data),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn train_and_sample_reproduce_from_echoed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), "data", &["--frames=30", "--size=16", "--seed=3"]);
    let video = data.join("video.cvpt");

    let run1 = tmp.path().join("run1");
    let res = cvp(&[
        "train",
        &arg("data", &video),
        "--steps=12",
        "--model.hidden=4",
        "--train.batch=2",
        "--train.warmup=2",
        "--train.log_every=3",
        "--train.checkpoint_every=6",
        "--seed=5",
        &arg("out", &run1),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let log = fs::read_to_string(run1.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss,lr,wall_ms"));
    assert_eq!(log.lines().count(), 5);
    assert!(run1.join("checkpoints/step_000006").is_dir());
    assert!(run1.join("checkpoint/spec.json").is_file());

    let run2 = tmp.path().join("run2");
    let res = cvp(&["train", &arg("config", &run1.join("config.json")), &arg("out", &run2)]);
    assert_eq!(code(&res), 0);
    assert_same_tree(&run1, &run2);

    let s1 = tmp.path().join("s1");
    let res = cvp(&[
        "sample",
        &arg("data", &video),
        &arg("checkpoint", &run1.join("checkpoint")),
        "--steps=3",
        "--pred=4",
        "--k-samples=2",
        "--eval.starts=2",
        "--seed=9",
        &arg("out", &s1),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("psnr"));
    assert!(s1.join("summary.json").is_file());
    assert!(s1.join("start_00000/metrics.csv").is_file());
    assert_eq!(fs::read_dir(s1.join("start_00024/sample_01")).unwrap().count(), 4);

    let s2 = tmp.path().join("s2");
    let res = cvp(&["sample", &arg("config", &s1.join("config.json")), &arg("out", &s2)]);
    assert_eq!(code(&res), 0);
    assert_same_tree(&s1, &s2);

    // a different seed changes stochastic samples
    let s3 = tmp.path().join("s3");
    let res = cvp(&["sample", &arg("config", &s1.join("config.json")), "--seed=10", &arg("out", &s3)]);
    assert_eq!(code(&res), 0);
    assert_ne!(
        fs::read(s1.join("start_00000/sample_00/00000.pgm")).unwrap(),
        fs::read(s3.join("start_00000/sample_00/00000.pgm")).unwrap()
    );
}

#[test]
fn verify_runs_selected_groups_and_catches_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let res = cvp(&["verify", "--only=endpoints,schedules,telescoping", &arg("out", &out)]);
    assert_eq!(code(&res), 0);
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("PASS endpoints/"));
    assert!(!text.contains("gradcheck/"));
    assert!(out.join("verify.json").is_file());

    let res = cvp(&["verify", "--only=gradcheck", "--inject-fault=grad_sign"]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL gradcheck/"));
}
