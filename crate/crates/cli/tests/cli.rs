use std::path::PathBuf;
use std::process::{Command, Output};

fn example(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn logpi1(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logpi1")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn lie_dims_follow_witt() {
    let o = logpi1(&["lie", "dims", "--gens", "2", "--q", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "2 1 2 3");
}

#[test]
fn one_relator_dims() {
    let o = logpi1(&["lie", "dims", "--gens", "4", "--q", "3", "--relator", "[x1,x2]+[x3,x4]"]);
    assert_eq!(stdout(&o).trim(), "4 5 16");
}

#[test]
fn minimal_model_stage_dims() {
    let o = logpi1(&["minimal-model", &example("unmarked_g2.json"), "--stages", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("stage dims: 4 5 16\n"));
}

#[test]
fn two_genus_one_components_are_nontrivial() {
    let o = logpi1(&["curve", "analyze", &example("two_genus1.json"), "--q", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("NONTRIVIAL in Out (obstruction degree 3→4)"));
}

#[test]
fn smooth_examples() {
    let o = logpi1(&["curve", "analyze", &example("smooth_g2.json")]);
    assert!(stdout(&o).starts_with("trivial in Aut"));
    let o = logpi1(&["curve", "analyze", &example("smooth_g1_marked.json")]);
    assert!(stdout(&o).starts_with("inner, hence trivial in Out"));
}

#[test]
fn loop_pairings() {
    let o = logpi1(&["curve", "loop", &example("self_loop.json")]);
    assert_eq!(stdout(&o).trim(), "loop pairing 2");
    let o = logpi1(&["curve", "loop", &example("triangle_loop.json"), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pairing"], "6/1");
    let o = logpi1(&["curve", "loop", &example("y_tree.json")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn exit_codes() {
    assert_eq!(logpi1(&["lie", "dims"]).status.code(), Some(2));
    assert_eq!(logpi1(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(logpi1(&["curve", "analyze", "/nonexistent.json"]).status.code(), Some(3));
    let dir = std::env::temp_dir().join(format!("logpi1-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("rational_pair.json");
    std::fs::write(
        &bad,
        r#"{"vertices":[{"id":"a"},{"id":"b"}],"edges":[{"id":0,"ends":["a","b"]}]}"#,
    )
    .unwrap();
    let o = logpi1(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rational component"));
}

#[test]
fn reports_are_canonical_and_reproducible() {
    let dir = std::env::temp_dir().join(format!("logpi1-canon-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let runs = [
        vec!["curve", "analyze", "y_tree.json"],
        vec!["curve", "presentation", "two_genus1.json"],
        vec!["bar", "marked_g0_r3.json", "--stages", "2", "--cap", "2"],
        vec!["minimal-model", "marked_g1_r1.json", "--stages", "2"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let mut args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let file = args.iter().position(|a| a.ends_with(".json")).unwrap();
        args[file] = example(&args[file]);
        let mut outputs = Vec::new();
        for (jobs, tag) in [("1", "a"), ("4", "b")] {
            let out = dir.join(format!("{k}{tag}.json"));
            let mut full = args.clone();
            full.extend(["--out".into(), out.to_string_lossy().into_owned(), "--jobs".into(), jobs.into()]);
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            assert_eq!(logpi1(&refs).status.code(), Some(0), "{full:?}");
            outputs.push(std::fs::read_to_string(&out).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "run {k} differs across job counts");
        let v: serde_json::Value = serde_json::from_str(&outputs[0]).unwrap();
        assert_eq!(serde_json::to_string_pretty(&v).unwrap() + "\n", outputs[0]);
    }
}

#[test]
fn minimal_model_report_validates() {
    let dir = std::env::temp_dir().join(format!("logpi1-mm-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("report.json");
    let o = logpi1(&[
        "minimal-model",
        &example("marked_g0_r3.json"),
        "--stages",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let model = dir.join("model.json");
    std::fs::write(&model, serde_json::to_string(&v["model"]).unwrap()).unwrap();
    let o = logpi1(&["validate", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "valid minimal model, stage dims 2 1 2");
}

#[test]
fn every_bundled_model_validates() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".json") {
            let o = logpi1(&["validate", path.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
            seen += 1;
        }
    }
    assert!(seen >= 15);
}

#[test]
fn inner_automorphism_file() {
    let dir = std::env::temp_dir().join(format!("logpi1-inner-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let f = dir.join("phi.json");
    std::fs::write(
        &f,
        r#"{"generators":["a","b"],"q":3,"images":{"a":"a + [b,a] + 1/2*[b,[b,a]]","b":"b"}}"#,
    )
    .unwrap();
    let o = logpi1(&["lie", "inner", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("inner"), "{}", stdout(&o));
    std::fs::write(
        &f,
        r#"{"generators":["a","b"],"q":3,"images":{"a":"a + [a,[a,b]]","b":"b"}}"#,
    )
    .unwrap();
    let o = logpi1(&["lie", "inner", f.to_str().unwrap()]);
    assert!(stdout(&o).starts_with("not inner"), "{}", stdout(&o));
}
