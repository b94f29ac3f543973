use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_defectforge"));
    c.env_remove("DEFECTFORGE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn asset(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(rel).to_string_lossy().into_owned()
}

fn small_config() -> Value {
    json!({
        "seed": 11,
        "scenes": 2,
        "cameras": { "count": 3 },
        "parts": { "catalog": [{ "mesh": asset("meshes/panel.obj") }, { "mesh": asset("meshes/bracket.obj") }] },
        "defects": [{ "size": [0.05, 0.09], "per_part": [2, 3] }],
        "render": { "width": 96, "height": 72, "spp": 2, "max_bounces": 2 }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_config_accepts_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let o = run(&["validate-config", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok: 2 scenes, 3 cameras"));
}

#[test]
fn validate_config_rejects_inverted_range() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["defects"][0]["size"] = json!([0.09, 0.05]);
    let path = write_config(dir.path(), &cfg);
    let o = run(&["validate-config", "-c", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("defects[0].size: min > max"), "{}", stderr(&o));
}

#[test]
fn validate_config_rejects_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate-config", "-c", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let mut cfg = small_config();
    cfg["parts"]["catalog"][0]["mesh"] = json!("missing.obj");
    let path = write_config(dir.path(), &cfg);
    let o = run(&["validate-config", "-c", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("file not found"), "{}", stderr(&o));
}

#[test]
fn overrides_and_seed_variable_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config());
    let o = run(&["validate-config", "-c", path.to_str().unwrap(), "--set", "scenes=5", "--set", "cameras.count=1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok: 5 scenes, 1 cameras"));

    let o = bin().args(["validate-config", "-c", path.to_str().unwrap()]).env("DEFECTFORGE_SEED", "abc").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["validate-config", "-c", path.to_str().unwrap(), "--set", "render.spp"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_is_reproducible_and_annotated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let o = run(&["generate", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("rendered"));
    }
    let ma = std::fs::read(a.join("manifest.jsonl")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.jsonl")).unwrap());
    let summary: Value = serde_json::from_slice(&std::fs::read(a.join("summary.json")).unwrap()).unwrap();
    let rendered = summary["rendered"].as_u64().unwrap() as usize;
    let text = String::from_utf8(ma).unwrap();
    assert_eq!(text.lines().count(), rendered);
    assert!(rendered > 0 && rendered <= 6);
    for line in text.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        assert!(!r["annotations"].as_array().unwrap().is_empty());
        let img = r["image"].as_str().unwrap();
        assert_eq!(std::fs::read(a.join(img)).unwrap(), std::fs::read(b.join(img)).unwrap());
        for ann in r["annotations"].as_array().unwrap() {
            assert!(a.join(ann["mask"].as_str().unwrap()).is_file());
        }
    }
}

#[test]
fn generate_with_parts_out_of_view_renders_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["cameras"] = json!({ "poses": [{ "position": [0.0, 0.0, 1.0], "look_at": [0.0, 0.0, 3.0] }] });
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let o = run(&["generate", "-c", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 rendered"));
    assert_eq!(std::fs::read_to_string(out.join("manifest.jsonl")).unwrap(), "");
}

#[test]
fn generate_failure_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    let bad = dir.path().join("bad.obj");
    std::fs::write(&bad, "v 0 0 0\nf 1 2 3\n").unwrap();
    cfg["parts"]["catalog"] = json!([{ "mesh": bad }]);
    let path = write_config(dir.path(), &cfg);
    let o = run(&["generate", "-c", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("bad.obj"));
}

fn manifest_line(image: &str, scene: u32, split: &str, boxes: &[[u32; 4]]) -> String {
    let anns: Vec<Value> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| json!({ "id": i + 1, "class": "break", "bbox": b, "area": (b[2] - b[0]) * (b[3] - b[1]), "mask": "" }))
        .collect();
    json!({ "image": image, "scene": scene, "camera": 0, "split": split, "annotations": anns }).to_string()
}

#[test]
fn stats_counts_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["stats", "-m", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("images       0"));
    assert!(stdout(&o).contains("annotations  0"));

    let lines: Vec<String> = (0..10)
        .map(|i| manifest_line(&format!("i{i}.png"), i, if i % 2 == 0 { "train" } else { "test" }, &[[0, 0, 4, 4]]))
        .collect();
    let m = dir.path().join("m.jsonl");
    std::fs::write(&m, lines.join("\n") + "\n").unwrap();
    let js = dir.path().join("stats.json");
    let o = run(&["stats", "-m", m.to_str().unwrap(), "--json", js.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&js).unwrap()).unwrap();
    assert_eq!((v["train"].as_u64(), v["test"].as_u64()), (Some(5), Some(5)));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, format!("{}\n{{not json\n", lines[0])).unwrap();
    let o = run(&["stats", "-m", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":2"), "{}", stderr(&o));
}

fn write_lines(path: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn evaluate_reports_ap() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.jsonl");
    write_lines(&gt, &[json!({"image": "a", "bbox": [0, 0, 10, 10]}), json!({"image": "b", "bbox": [0, 0, 10, 10]})]);
    let ranked = dir.path().join("ranked.jsonl");
    write_lines(
        &ranked,
        &[
            json!({"image": "a", "bbox": [1, 1, 5, 5], "confidence": 0.9}),
            json!({"image": "a", "bbox": [20, 20, 30, 30], "confidence": 0.8}),
            json!({"image": "b", "bbox": [2, 2, 8, 8], "confidence": 0.7}),
        ],
    );
    let perfect = dir.path().join("perfect.jsonl");
    write_lines(
        &perfect,
        &[json!({"image": "a", "bbox": [0, 0, 10, 10], "confidence": 1.0}), json!({"image": "b", "bbox": [0, 0, 10, 10], "confidence": 1.0})],
    );
    let none = dir.path().join("none.jsonl");
    std::fs::write(&none, "").unwrap();
    let out = dir.path().join("report");
    let o = run(&[
        "evaluate",
        "--gt",
        gt.to_str().unwrap(),
        "--pred",
        &format!("ranked={}", ranked.display()),
        "--pred",
        &format!("perfect={}", perfect.display()),
        "--pred",
        &format!("empty={}", none.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.lines().any(|l| l.starts_with("ranked") && l.ends_with("0.833")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("perfect") && l.ends_with("1.000")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("empty") && l.ends_with("0.000")), "{table}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!((report["sets"][0]["ap"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-9);

    let empty_gt = dir.path().join("empty_gt.jsonl");
    std::fs::write(&empty_gt, "").unwrap();
    let o = run(&["evaluate", "--gt", empty_gt.to_str().unwrap(), "--pred", &format!("x={}", perfect.display()), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ground truth is empty"));

    let o = run(&["evaluate", "--gt", gt.to_str().unwrap(), "--pred", "noname", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn augment_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let data = dir.path().join("data");
    let o = run(&["generate", "-c", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"ops": [{"op": "flip", "horizontal": true}, {"op": "noise", "sigma": 0.01}]}"#).unwrap();
    let aug = dir.path().join("aug");
    let o = run(&[
        "augment",
        "--manifest",
        data.join("manifest.jsonl").to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        aug.to_str().unwrap(),
        "--copies",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let n_in = std::fs::read_to_string(data.join("manifest.jsonl")).unwrap().lines().count();
    let n_out = std::fs::read_to_string(aug.join("manifest.jsonl")).unwrap().lines().count();
    assert_eq!(n_out, 2 * n_in);

    std::fs::write(&spec, r#"{"ops": [{"op": "blur", "sigma": -1}]}"#).unwrap();
    let o = run(&["augment", "-m", data.join("manifest.jsonl").to_str().unwrap(), "-s", spec.to_str().unwrap(), "-o", aug.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ops[0]"), "{}", stderr(&o));
}
