use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splatseg_core::io::{checkpoint, ply};
use splatseg_core::language::InstanceTable;
use splatseg_core::synth::SynthObject;
use splatseg_core::train::init_from_points;
use splatseg_core::SceneConfig;

fn splatseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatseg"))
        .args(args)
        .env_remove("SPLATSEG_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = splatseg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_of(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is a JSON error report")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two objects (a blue ellipsoid and a red box at seed 0) at 32x32.
fn small_scene(dir: &Path) -> PathBuf {
    let out = dir.join("scene");
    ok(&[
        "--seed", "0", "synth", "--out", p(&out), "--objects", "2", "--train-views", "12", "--test-views", "4",
        "--width", "32", "--height", "32",
    ]);
    out.join("manifest.json")
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_scene(tmp.path());
    let out = tmp.path().join("train");
    let summary = ok(&["train", "--scene", p(&manifest), "--out", p(&out), "--iters", "0"]);
    assert_eq!(summary["iterations"], 0);

    let table = ply::read(&manifest.parent().unwrap().join("init.ply")).unwrap();
    let mut cfg = SceneConfig::default();
    cfg.trainer.iterations = 0;
    let init = init_from_points(&table.positions().unwrap(), &table.colors().unwrap(), &cfg).unwrap();
    assert_eq!(checkpoint::load(&out.join("cloud.osp")).unwrap(), checkpoint::quantize(&init));
    let meta = checkpoint::load_meta(&out.join("cloud.osp")).unwrap();
    assert_eq!((meta.iteration, meta.seed, meta.config_hash), (0, 0, cfg.hash()));
}

#[test]
fn usage_and_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = splatseg(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "usage");

    let out = splatseg(&["cluster", "--cloud", "/nonexistent.osp", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_of(&out)["message"].as_str().unwrap().contains("does not exist"));

    let out = splatseg(&["--set", "losses.gamma=0", "synth", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = splatseg(&["--set", "trainer.no_such_key=1", "synth", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = splatseg(&["pipeline", "--scene", "synth://3obj", "--out", p(tmp.path()), "--eval", "fps"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = tmp.path().join("bad.osp");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = splatseg(&["cluster", "--cloud", p(&bad), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"], "runtime");
}

#[test]
fn config_sources_are_layered() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_file = tmp.path().join("c.toml");
    fs::write(&cfg_file, "seed = 4\n[losses]\nlambda_var = 0.25\n").unwrap();
    let run = |extra: &[&str], env: Option<&str>| -> SceneConfig {
        let out = tmp.path().join("s");
        let mut args = vec!["--config", p(&cfg_file)];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["synth", "--out", p(&out), "--objects", "1", "--train-views", "1", "--test-views", "0", "--width", "8", "--height", "8"]);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_splatseg"));
        cmd.args(&args).env_remove("SPLATSEG_SEED");
        if let Some(v) = env {
            cmd.env("SPLATSEG_LOSSES__GAMMA", v);
        }
        assert!(cmd.output().unwrap().status.success());
        SceneConfig::from_toml(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap()
    };
    let base = run(&[], None);
    assert_eq!((base.seed, base.losses.lambda_var), (4, 0.25));
    let env = run(&[], Some("2.5"));
    assert_eq!(env.losses.gamma, 2.5);
    let set = run(&["--set", "losses.gamma=3", "--seed", "9"], Some("2.5"));
    assert_eq!((set.losses.gamma, set.seed), (3.0, 9));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("s/run_synth.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], set.hash());
    assert!(manifest["inputs"][p(&cfg_file)].as_str().unwrap().len() == 64);
}

#[test]
fn staged_commands_match_pipeline_and_query_finds_red() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_scene(tmp.path());
    let set = ["--set", "clustering.min_cluster_size=20"];
    let whole = tmp.path().join("whole");
    let report = ok(&[&set[..], &["pipeline", "--scene", p(&manifest), "--out", p(&whole), "--iters", "300"]].concat());
    assert!(report["metrics"]["miou3d"].as_f64().unwrap() > 0.9, "{report}");

    let st = tmp.path().join("staged");
    let cloud = st.join("cloud.osp");
    let inst = st.join("instances.json");
    ok(&[&set[..], &["train", "--scene", p(&manifest), "--out", p(&st), "--iters", "300"]].concat());
    ok(&[&set[..], &["cluster", "--cloud", p(&cloud), "--out", p(&st)]].concat());
    let crops = st.join("crops");
    let e = ok(&["embed", "--scene", p(&manifest), "--cloud", p(&cloud), "--instances", p(&inst), "--export-crops", p(&crops)]);
    assert_eq!(e["embedded"], 2);
    assert!(e["crops"].as_u64().unwrap() > 0);
    for f in ["cloud.osp", "clusters.csv", "instances.json", "instances.f32"] {
        assert_eq!(fs::read(whole.join(f)).unwrap(), fs::read(st.join(f)).unwrap(), "{f} differs");
    }
    let m = ok(&["eval", "--scene", p(&manifest), "--cloud", p(&cloud), "--instances", p(&inst), "--out", p(&st)]);
    assert_eq!(m, report["metrics"]);

    let q = ok(&["query", "--instances", p(&inst), "--text", "red object", "--out", p(&st.join("q")), "--scene", p(&manifest), "--cloud", p(&cloud)]);
    let top = q["selected"][0].as_u64().unwrap() as usize;
    let objects: Vec<SynthObject> = serde_json::from_str(&fs::read_to_string(manifest.parent().unwrap().join("objects.json")).unwrap()).unwrap();
    let red = objects.iter().position(|o| o.color_name == "red").expect("seed 0 has a red object");
    let table = InstanceTable::load(&inst).unwrap();
    let trained = checkpoint::load(&cloud).unwrap();
    let members = &table.instances[top].members;
    let centroid: Vec<f64> = (0..3)
        .map(|k| members.iter().map(|&g| trained.means[g][k]).sum::<f64>() / members.len() as f64)
        .collect();
    let nearest = (0..objects.len())
        .min_by(|&a, &b| {
            let d = |o: &SynthObject| (0..3).map(|k| (o.center[k] - centroid[k]).powi(2)).sum::<f64>();
            d(&objects[a]).total_cmp(&d(&objects[b]))
        })
        .unwrap();
    assert_eq!(nearest, red);
    assert_eq!(q["silhouettes"].as_array().unwrap().len(), 16);

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(st.join("q/run_query.json")).unwrap()).unwrap();
    assert!(run["inputs"].as_object().unwrap().len() > 30);
}

#[test]
fn render_writes_requested_channels() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_scene(tmp.path());
    let gt = manifest.parent().unwrap().join("gt_cloud.osp");
    let out = tmp.path().join("r");
    let r = ok(&["--f64", "render", "--scene", p(&manifest), "--cloud", p(&gt), "--out", p(&out), "--channels", "color,alpha,depth,variance", "--views", "test"]);
    let files: Vec<&str> = r["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    // Variance brings the composited features along.
    assert_eq!(files.len(), 4 * 5);
    assert!(files.contains(&"view_012_feature.raw"), "{files:?}");
    assert!(files.iter().all(|f| out.join(f).exists()));
    let out = splatseg(&["render", "--scene", p(&manifest), "--cloud", p(&gt), "--out", p(&out), "--channels", "ids"]);
    assert_eq!(out.status.code(), Some(2));
}
