use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use splat_avatar::gaussian::{GaussianCloud, GaussianPoint};
use splat_avatar::io::{load_dataset, read_pose, write_cloud, PipelineConfig};
use splat_avatar::math::Vec3;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splat-avatar"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A small synthetic dataset and a briefly trained model, shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&root, &["synth", "--frames", "12", "--size", "32", "--out", "fig"]);
        std::fs::write(
            root.join("quick.toml"),
            "[train]\nsteps = 30\neval_interval = 15\ndensify_interval = 10\nreinit_steps = [20]\n",
        )
        .unwrap();
        ok(
            &root,
            &["train", "--dataset", "fig/manifest.toml", "--asset", "fig/asset.txt", "--config", "quick.toml", "--out", "run"],
        );
        Fixture { _dir: dir, root }
    })
}

const MODEL: [&str; 6] = ["--checkpoint", "run/checkpoint.gsav", "--asset", "fig/asset.txt", "--residual", "run/residual.json"];

fn with_model<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.splice(1..1, MODEL);
    v
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let f = fixture();
    let ds = load_dataset(&f.root.join("fig/manifest.toml")).unwrap();
    assert_eq!(ds.frames.len(), 12);
    assert_eq!(ds.held_out, vec![0, 10]);
    assert!(ds.frames.iter().all(|fr| fr.normals.is_some() && fr.image.width == 32));
}

#[test]
fn train_writes_all_outputs_and_repeats_bitwise() {
    let f = fixture();
    for name in ["checkpoint.gsav", "residual.json", "metrics.jsonl", "config.toml"] {
        assert!(f.root.join("run").join(name).is_file(), "{name}");
    }
    let log = std::fs::read_to_string(f.root.join("run/metrics.jsonl")).unwrap();
    assert!(log.lines().any(|l| l.contains("\"event\":\"reinit\"")));
    ok(
        &f.root,
        &["train", "--dataset", "fig/manifest.toml", "--asset", "fig/asset.txt", "--config", "quick.toml", "--out", "run2"],
    );
    for name in ["checkpoint.gsav", "residual.json", "metrics.jsonl"] {
        let a = std::fs::read(f.root.join("run").join(name)).unwrap();
        let b = std::fs::read(f.root.join("run2").join(name)).unwrap();
        assert!(a == b, "{name} differs between identical runs");
    }
}

#[test]
fn render_is_bitwise_repeatable() {
    let f = fixture();
    std::fs::write(f.root.join("rest.json"), r#"{"joint_rotations": [[0,0,0],[0,0,0],[0,0,0],[0,0,0],[0,0,0]], "root_translation": [0,0,0]}"#).unwrap();
    let args = |out: &'static str| {
        with_model(&["render", "--camera", "fig/cameras/0003.json", "--pose", "rest.json", "--out", out])
    };
    ok(&f.root, &args("a.ppm"));
    ok(&f.root, &args("b.ppm"));
    let a = std::fs::read(f.root.join("a.ppm")).unwrap();
    assert!(a.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(a, std::fs::read(f.root.join("b.ppm")).unwrap());
}

#[test]
fn drive_writes_one_image_per_pose() {
    let f = fixture();
    let pose = std::fs::read_to_string(f.root.join("fig/poses/0004.json")).unwrap();
    std::fs::write(f.root.join("seq.json"), format!("[{}]", vec![pose; 10].join(","))).unwrap();
    ok(&f.root, &with_model(&["drive", "--camera", "fig/cameras/0004.json", "--poses", "seq.json", "--out", "drive"]));
    let mut names: Vec<String> = std::fs::read_dir(f.root.join("drive"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let expected: Vec<String> = (0..10).map(|k| format!("frame_{k:04}.ppm")).collect();
    assert_eq!(names, expected);
}

#[test]
fn eval_prints_a_row_per_frame_and_a_mean() {
    let f = fixture();
    let table = ok(&f.root, &with_model(&["eval", "--dataset", "fig/manifest.toml", "--split", "held-out", "--out", "eval.tsv"]));
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert_eq!(rows[0], "frame\tpsnr\tssim");
    assert!(rows[1].starts_with("0\t") && rows[2].starts_with("10\t") && rows[3].starts_with("mean\t"));
    let psnr = |r: &str| r.split('\t').nth(1).unwrap().parse::<f64>().unwrap();
    assert!((psnr(rows[3]) - 0.5 * (psnr(rows[1]) + psnr(rows[2]))).abs() < 1e-3);
    assert_eq!(std::fs::read_to_string(f.root.join("eval.tsv")).unwrap(), table);
}

#[test]
fn reinit_writes_checkpoint_and_report() {
    let f = fixture();
    ok(&f.root, &["reinit", "--checkpoint", "run/checkpoint.gsav", "--out", "re.gsav", "--seed", "3"]);
    assert!(f.root.join("re.gsav").is_file());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.root.join("re.report.json")).unwrap()).unwrap();
    assert!(report["new_count"].as_u64().unwrap() > 0);
}

#[test]
fn refine_pose_moves_perturbed_poses_back() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--subject", "arm", "--frames", "2", "--size", "64", "--perturb", "10", "--out", "arm"]);
    ok(dir.path(), &["refine-pose", "--dataset", "arm/manifest.toml", "--asset", "arm/asset.txt", "--out", "refined"]);
    let report = std::fs::read_to_string(dir.path().join("refined/refine_report.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2, "{report}");
    for row in rows {
        let (initial, fin): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!(fin < 0.5 * initial, "{row:?}");
        let id: u64 = row[0].parse().unwrap();
        let start = read_pose(&dir.path().join(format!("arm/poses/{id:04}.json"))).unwrap();
        let refined = read_pose(&dir.path().join(format!("refined/poses/{id:04}.json"))).unwrap();
        assert_ne!(start, refined);
    }
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["--dump-config", "--seed", "11", "reinit", "--checkpoint", "x.gsav"]);
    let cfg: PipelineConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.train.seed, 11);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["render", "--bogus"][..], &[][..]] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    let help = run(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn bad_input_exits_one_and_failed_runs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["reinit", "--checkpoint", "missing.gsav", "--out", "o.gsav"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "[train]\nstepz = 3\n").unwrap();
    let out = run(dir.path(), &["--config", "bad.toml", "reinit", "--checkpoint", "x.gsav", "--out", "o.gsav"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));

    // coplanar points have no tetrahedralization
    let flat: Vec<GaussianPoint> = (0..20)
        .map(|i| GaussianPoint::isotropic(Vec3::new((i % 5) as f64, (i / 5) as f64, 0.0), 0.1, 0.5, Vec3::repeat(0.5), 0))
        .collect();
    write_cloud(&dir.path().join("flat.gsav"), &GaussianCloud::from_points(0, flat).unwrap()).unwrap();
    let out = run(dir.path(), &["reinit", "--checkpoint", "flat.gsav", "--out", "o.gsav"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("o.gsav").exists());
}
