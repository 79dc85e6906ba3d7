use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_cellroute")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = "\
world_cells = 8
embed_dim = 4
w2c_hidden = 16
wce_hidden = 8
vce_hidden = 8
channels = 4
width = 16
latent_dim = 3
encoder_hidden = 8
head_hidden = 8
decoder_hidden = 16
batch_size = 4
checkpoint_interval = 5
learning_rate = 0.003
";

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let c = cfg.to_string_lossy().into_owned();
    run(&["generate", "--config", &c, "--out", &p("train.strd"), "--scenes", "8", "--views", "9", "--seed", "1"]);
    run(&["generate", "--config", &c, "--out", &p("test.strd"), "--scenes", "4", "--views", "9", "--seed", "2"]);
    run(&["generate", "--config", &c, "--out", &p("paired.strd"), "--scenes", "6", "--views", "9", "--paired"]);
    run(&["train", "--config", &c, "--data", &p("train.strd"), "--ckpt", &p("m.strc"), "--steps", "12", "--progress", "0"]);
    let eval = run(&["eval", "--config", &c, "--data", &p("test.strd"), "--ckpt", &p("m.strc"), "--out", &p("eval.csv")]);
    assert!(eval.contains("MAE") && eval.contains("px"));
    run(&["route-viz", "--config", &c, "--ckpt", &p("m.strc"), "--out", &p("viz"), "--sigma", "0.3"]);
    let score = run(&["epipolar-score", "--config", &c, "--ckpt", &p("m.strc"), "--data", &p("test.strd"), "--samples", "20"]);
    assert!(score.contains("epipolar score"));
    run(&["scene-arith", "--config", &c, "--ckpt", &p("m.strc"), "--data", &p("paired.strd"), "--out", &p("arith")]);
    for f in ["sum", "norm"] {
        run(&[
            "train", "--config", &c, "--data", &p("train.strd"), "--ckpt", &p(&format!("{f}.strc")),
            "--steps", "3", "--fusion", f, "--progress", "0",
        ]);
    }
    run(&[
        "fusion-ablation", "--ckpt", &p("m.strc"), &p("sum.strc"), &p("norm.strc"),
        "--data", &p("test.strd"), "--out", &p("ablation.csv"),
    ]);
    let mut files = Vec::new();
    for name in [
        "train.strd", "test.strd", "paired.strd", "m.strc", "eval.csv", "viz/route.csv",
        "viz/signal.ppm", "viz/spread.ppm", "viz/support.ppm", "arith/scene_arith.csv",
        "arith/arith_0.ppm", "arith/composite_1.ppm", "ablation.csv",
    ] {
        files.push((name.to_string(), std::fs::read(dir.join(name)).unwrap()));
    }
    // The training log is reproducible except for its wall-time column.
    let log = std::fs::read_to_string(dir.join("m.csv")).unwrap();
    let stripped: String = log.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect();
    files.push(("m.csv".into(), stripped.into_bytes()));
    files
}

#[test]
fn every_subcommand_is_bit_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (pipeline(a.path()), pipeline(b.path()));
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{name} differs between runs");
    }
    let ablation = String::from_utf8(fa.iter().find(|(n, _)| n == "ablation.csv").unwrap().1.clone()).unwrap();
    assert_eq!(ablation.lines().count(), 1 + 18);
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "steps = 3\nwrold_cells = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cellroute"))
        .args(["generate", "--config", cfg.to_str().unwrap(), "--out", "/dev/null"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("wrold_cells"), "{err}");
}

#[test]
fn training_resumes_from_an_existing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let c = cfg.to_string_lossy().into_owned();
    run(&["generate", "--config", &c, "--out", &p("d.strd"), "--scenes", "5"]);
    run(&["train", "--config", &c, "--data", &p("d.strd"), "--ckpt", &p("a.strc"), "--steps", "10", "--progress", "0"]);
    run(&["train", "--config", &c, "--data", &p("d.strd"), "--ckpt", &p("b.strc"), "--steps", "4", "--progress", "0"]);
    let out = Command::new(env!("CARGO_BIN_EXE_cellroute"))
        .args(["train", "--config", &c, "--data", &p("d.strd"), "--ckpt", &p("b.strc"), "--steps", "10", "--progress", "0"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("resuming at step 4"));
    assert_eq!(std::fs::read(p("a.strc")).unwrap(), std::fs::read(p("b.strc")).unwrap());
}
