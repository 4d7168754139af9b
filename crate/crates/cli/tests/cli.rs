use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use framesplit::corpus::load_manifest;
use framesplit::descriptors::{write_local_descriptor_file, LocalDescriptorSet};
use framesplit::matrix::{read_emb, write_emb};
use framesplit::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_framesplit"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Fixture {
    dir: PathBuf,
    manifest: PathBuf,
    run: PathBuf,
}

/// A 20 x 10 synthetic corpus and one pipeline run over it, shared by every
/// test in this file.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir").keep();
        let corpus = dir.join("corpus");
        run_ok(&["--seed", "0", "synth", "--out", s(&corpus), "--videos", "20", "--frames", "10"]);
        let manifest = corpus.join("manifest.csv");
        let run = dir.join("run");
        run_ok(&["--seed", "0", "pipeline", "--manifest", s(&manifest), "--out", s(&run)]);
        Fixture { dir, manifest, run }
    })
}

fn scratch(name: &str) -> PathBuf {
    let p = fixture().dir.join(name);
    fs::create_dir_all(&p).expect("mkdir");
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read")).expect("json")
}

#[test]
fn hog_features_have_expected_shape() {
    let m = read_emb(&fixture().run.join("features.emb")).unwrap();
    assert_eq!((m.rows(), m.cols()), (200, 8100));
    let meta = json(&fixture().run.join("features.emb.json"));
    assert_eq!(meta["source"], "hog");
    assert_eq!(meta["dim"], 8100);
}

#[test]
fn local_descriptors_go_through_vlad_and_pca() {
    let f = fixture();
    let manifest = load_manifest(&f.manifest).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sets: Vec<LocalDescriptorSet> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let m = 10 + i % 7;
            let offset = (i / 10) as f64;
            let data = (0..m * 4).map(|_| offset + rng.random_range(-1.0..1.0)).collect();
            LocalDescriptorSet {
                frame_id: r.frame_id.clone(),
                descriptors: Matrix::from_vec(m, 4, data).unwrap(),
            }
        })
        .collect();
    let dir = scratch("local");
    let lds = dir.join("desc.lds");
    write_local_descriptor_file(&lds, &sets).unwrap();
    let out = dir.join("features.emb");
    run_ok(&[
        "features",
        "--manifest",
        s(&f.manifest),
        "--local-descriptors",
        s(&lds),
        "--codebook-size",
        "8",
        "--pca-dim",
        "16",
        "--out",
        s(&out),
    ]);
    let m = read_emb(&out).unwrap();
    assert_eq!((m.rows(), m.cols()), (200, 16));
    assert!(dir.join("features.emb.codebook.emb").exists());
    assert!(dir.join("features.emb.pca.emb").exists());
}

#[test]
fn global_embeddings_are_gathered_by_row() {
    let dir = scratch("global");
    let manifest = dir.join("manifest.csv");
    fs::write(
        &manifest,
        "frame_id,video_id,frame_index,path,row\na,v0,0,,2\nb,v0,1,,0\nc,v1,0,,1\n",
    )
    .unwrap();
    let emb = dir.join("all.emb");
    write_emb(&emb, &Matrix::from_rows(&[[0.0, 0.5], [1.0, 1.5], [2.0, 2.5]]).unwrap()).unwrap();
    let out = dir.join("features.emb");
    run_ok(&["features", "--manifest", s(&manifest), "--embeddings", s(&emb), "--out", s(&out)]);
    let m = read_emb(&out).unwrap();
    assert_eq!(m.as_slice(), &[2.0, 2.5, 0.0, 0.5, 1.0, 1.5]);
}

#[test]
fn conflicting_feature_sources_are_a_usage_error() {
    let f = fixture();
    let out = bin()
        .args(["features", "--manifest", s(&f.manifest), "--hog", "--embeddings", "x.emb", "--out"])
        .arg(scratch("conflict").join("f.emb"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot be used with"));
}

#[test]
fn reduce_shapes_and_determinism() {
    let f = fixture();
    let emb = read_emb(&f.run.join("embedding.emb")).unwrap();
    assert_eq!((emb.rows(), emb.cols()), (200, 256));
    let meta = json(&f.run.join("embedding.emb.json"));
    assert_eq!(meta["loss_trace"].as_array().unwrap().len(), 450);
    assert!(meta["final_loss"].as_f64().unwrap() < meta["initial_loss"].as_f64().unwrap());

    let dir = scratch("reduce");
    let features = f.run.join("features.emb");
    let (a, b) = (dir.join("a.emb"), dir.join("b.emb"));
    for out in [&a, &b] {
        run_ok(&["--seed", "3", "reduce", "--features", s(&features), "--dim", "2", "--out", s(out)]);
    }
    let m = read_emb(&a).unwrap();
    assert_eq!((m.rows(), m.cols()), (200, 2));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn cluster_reproduces_pipeline_labels() {
    let f = fixture();
    let dir = scratch("cluster");
    let out = dir.join("labels.csv");
    run_ok(&[
        "--seed",
        "0",
        "cluster",
        "--embedding",
        s(&f.run.join("embedding.emb")),
        "--manifest",
        s(&f.manifest),
        "--out",
        s(&out),
        "--tree-json",
        s(&dir.join("tree.json")),
    ]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(f.run.join("labels.csv")).unwrap());
    let rows = fs::read_to_string(&out).unwrap().lines().count() - 1;
    assert_eq!(rows, 200);
    let meta = json(&sidecar(&out));
    assert!(meta["n_clusters"].as_u64().unwrap() >= 2);
    assert!(json(&dir.join("tree.json"))["edges"].as_array().is_some());
}

fn sidecar(p: &Path) -> PathBuf {
    PathBuf::from(format!("{}.json", p.display()))
}

#[test]
fn oversized_min_cluster_size_gives_all_noise_with_warning() {
    let f = fixture();
    let out = scratch("noise").join("labels.csv");
    let res = run_ok(&[
        "cluster",
        "--embedding",
        s(&f.run.join("embedding.emb")),
        "--manifest",
        s(&f.manifest),
        "--min-cluster-size",
        "500",
        "--out",
        s(&out),
    ]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("every frame is noise"));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("-1")));
}

fn perfect_labels(dir: &Path) -> PathBuf {
    let manifest = load_manifest(&fixture().manifest).unwrap();
    let mut text = String::from("frame_id,cluster_id,stability\n");
    for (r, l) in manifest.records.iter().zip(manifest.video_labels()) {
        text.push_str(&format!("{},{l},1.0\n", r.frame_id));
    }
    let path = dir.join("perfect.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn split_of_perfect_clustering_has_zero_leakage() {
    let f = fixture();
    let dir = scratch("split-perfect");
    let labels = perfect_labels(&dir);
    let out = dir.join("split");
    run_ok(&["split", "--labels", s(&labels), "--manifest", s(&f.manifest), "--out", s(&out)]);
    let report = json(&out.join("leakage.json"));
    assert_eq!(report["leakage_rate"], 0.0);
    let rows: usize = ["train.csv", "val.csv", "test.csv"]
        .iter()
        .map(|n| fs::read_to_string(out.join(n)).unwrap().lines().count() - 1)
        .sum();
    assert_eq!(rows, 200);
}

#[test]
fn degenerate_ratios_put_everything_in_train() {
    let f = fixture();
    let out = scratch("split-train").join("split");
    run_ok(&[
        "split",
        "--labels",
        s(&f.run.join("labels.csv")),
        "--manifest",
        s(&f.manifest),
        "--ratios",
        "1,0,0",
        "--out",
        s(&out),
    ]);
    assert_eq!(fs::read_to_string(out.join("train.csv")).unwrap().lines().count(), 201);
    assert_eq!(fs::read_to_string(out.join("val.csv")).unwrap().lines().count(), 1);
    assert_eq!(fs::read_to_string(out.join("test.csv")).unwrap().lines().count(), 1);
}

#[test]
fn missing_labeling_file_fails_with_message() {
    let f = fixture();
    let out = bin()
        .args(["split", "--labels", "/nonexistent/labels.csv", "--manifest", s(&f.manifest), "--out"])
        .arg(scratch("missing").join("split"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/labels.csv"), "{err}");
}

#[test]
fn evaluate_perfect_constant_and_json_schema() {
    let f = fixture();
    let dir = scratch("evaluate");
    let perfect = perfect_labels(&dir);
    let out = run_ok(&["--json", "evaluate", "--labels", s(&perfect), "--manifest", s(&f.manifest)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["v_measure", "homogeneity", "completeness", "ami"] {
        assert!(v[key].is_number(), "missing {key}");
    }
    assert!((v["v_measure"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["ami"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let constant = dir.join("constant.csv");
    let body: String = load_manifest(&f.manifest)
        .unwrap()
        .records
        .iter()
        .map(|r| format!("{},0,1.0\n", r.frame_id))
        .collect();
    fs::write(&constant, format!("frame_id,cluster_id,stability\n{body}")).unwrap();
    let out = run_ok(&["--json", "evaluate", "--labels", s(&constant), "--manifest", s(&f.manifest)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ami"].as_f64().unwrap(), 0.0);

    let text = run_ok(&["evaluate", "--labels", s(&perfect), "--manifest", s(&f.manifest)]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("V-measure 1.0000"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let f = fixture();
    let dir = scratch("config");
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, "seed = 9\n[pacmap]\ndim = 3\niters = [5, 5, 5]\n").unwrap();
    let features = f.run.join("features.emb");
    let out = dir.join("e.emb");
    run_ok(&["--config", s(&cfg), "reduce", "--features", s(&features), "--out", s(&out)]);
    let meta = json(&sidecar(&out));
    assert_eq!(meta["pacmap"]["dim"], 3);
    assert_eq!(meta["pacmap"]["seed"], 9);
    run_ok(&["--config", s(&cfg), "--seed", "4", "reduce", "--features", s(&features), "--dim", "2", "--out", s(&out)]);
    let meta = json(&sidecar(&out));
    assert_eq!(meta["pacmap"]["dim"], 2);
    assert_eq!(meta["pacmap"]["seed"], 4);
    assert_eq!(meta["loss_trace"].as_array().unwrap().len(), 15);

    fs::write(&cfg, "[pacmap]\ndimm = 3\n").unwrap();
    let bad = bin().args(["--config", s(&cfg), "reduce", "--features", s(&features), "--out", s(&out)]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn pipeline_is_deterministic_and_records_hashes() {
    let f = fixture();
    let second = scratch("pipeline-again").join("run");
    run_ok(&["--seed", "0", "pipeline", "--manifest", s(&f.manifest), "--out", s(&second)]);
    let (a, b) = (json(&f.run.join("run.json")), json(&second.join("run.json")));
    let stages = a["stages"].as_array().unwrap();
    let names: Vec<&str> = stages.iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(names, ["features", "reduce", "cluster", "split", "evaluate"]);
    for (x, y) in stages.iter().zip(b["stages"].as_array().unwrap()) {
        assert_eq!(x["outputs"], y["outputs"]);
        for (name, hash) in x["outputs"].as_object().unwrap() {
            assert_eq!(hash.as_str().unwrap().len(), 64, "{name}");
        }
    }
    assert_eq!(a["config"], b["config"]);
    assert_eq!(a["evaluation"], b["evaluation"]);
}

#[test]
fn pipeline_hashes_follow_config_changes() {
    let f = fixture();
    let other = scratch("pipeline-seed").join("run");
    run_ok(&["--seed", "1", "pipeline", "--manifest", s(&f.manifest), "--out", s(&other)]);
    let (a, b) = (json(&f.run.join("run.json")), json(&other.join("run.json")));
    assert_ne!(a["config"], b["config"]);
    // features do not depend on the seed, the embedding does
    assert_eq!(a["stages"][0]["outputs"], b["stages"][0]["outputs"]);
    assert_ne!(a["stages"][1]["outputs"], b["stages"][1]["outputs"]);
}

#[test]
fn fps_table_subsamples_before_features() {
    let f = fixture();
    let dir = scratch("fps");
    let fps = dir.join("fps.csv");
    // 10 frames at 5 fps keep indices 0 and 5
    fs::write(&fps, "video_id,fps\nv0000,5\nv0001,5\n").unwrap();
    let out = dir.join("run");
    run_ok(&[
        "pipeline",
        "--manifest",
        s(&f.manifest),
        "--fps-table",
        s(&fps),
        "--min-cluster-size",
        "5",
        "--dim",
        "8",
        "--out",
        s(&out),
    ]);
    let sampled = load_manifest(&out.join("manifest.csv")).unwrap();
    assert_eq!(sampled.len(), 200 - 16);
    assert_eq!(read_emb(&out.join("features.emb")).unwrap().rows(), 184);
}

#[test]
fn verify_quick_passes() {
    let out = run_ok(&["verify", "--quick"]);
    let sections: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sections = sections.as_array().unwrap();
    assert_eq!(sections.len(), 10);
    assert!(sections.iter().all(|s| s["passed"] == true));
}
