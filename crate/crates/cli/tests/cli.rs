use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dap_core::tasks::TaskPreset;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dap"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DAP_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "dap {args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

type Row = BTreeMap<String, String>;

fn read_csv(path: &Path) -> Vec<Row> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn dapsets(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "dapset"))
        .collect();
    v.sort();
    v
}

const FAST: &[&str] = &["--set", "run.seeds=[0, 1]", "--set", "eval.classifiers=[\"knn1\", \"knn5\"]"];

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(FAST.iter().copied()).collect()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["eval"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["distill", "--set", "no_equals_sign"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["bogus-command"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["distill", "--set", "guidance.gamma=-1"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[schedule]\nsteps = 0\n").unwrap();
    assert_eq!(run(dir.path(), &["distill", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&bad, "[guidance]\nunknown_key = 1\n").unwrap();
    assert_eq!(run(dir.path(), &["show-config", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("missing.dapset");
    assert_eq!(run(dir.path(), &["eval", missing.to_str().unwrap()]).status.code(), Some(2));

    let o = run(dir.path(), &["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dap"))
        .args(["distill", "--set", "run.seeds=[0]", "--set", "run.methods=[\"random\"]"])
        .env("DAP_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(dapsets(dir.path()).len(), 1);
}

#[test]
fn distill_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = with_fast(&["distill"]);
    ok(a.path(), &args);
    ok(b.path(), &args);
    let files = dapsets(a.path());
    assert_eq!(files.len(), 3 * 2);
    for f in files.iter().map(|p| p.file_name().unwrap().to_owned()).chain(["manifest.csv".into()]) {
        let x = std::fs::read(a.path().join(&f)).unwrap();
        let y = std::fs::read(b.path().join(&f)).unwrap();
        assert!(x == y, "{f:?} differs");
    }
    let manifest = read_csv(&a.path().join("manifest.csv"));
    assert_eq!(manifest.len(), 6);
    let unguided: Vec<&Row> = manifest.iter().filter(|r| r["gamma"].parse::<f64>() == Ok(0.0)).collect();
    assert_eq!(unguided.len(), 2);
    assert!(unguided.iter().all(|r| r["method"] == "unguided"));
    assert!(std::fs::read_to_string(a.path().join("manifest.csv")).unwrap().starts_with("# config_hash="));
}

#[test]
fn gamma_grid_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_fast(&["distill", "--gamma-grid", "--set", "run.gamma_grid=[0.0, 0.1, 0.5]"]));
    let files = dapsets(dir.path());
    assert_eq!(files.len(), 3 * 2);
    let manifest = read_csv(&dir.path().join("manifest.csv"));
    for r in &manifest {
        let want = if r["gamma"].parse::<f64>().unwrap() == 0.0 { "unguided" } else { "dap" };
        assert_eq!(r["method"], want);
    }

    let mut args = with_fast(&["eval", "--full-train"]);
    let names: Vec<String> = files.iter().map(|p| p.to_str().unwrap().to_owned()).collect();
    args.extend(names.iter().map(String::as_str));
    ok(dir.path(), &args);
    let rows = read_csv(&dir.path().join("eval.csv"));
    assert_eq!(rows.len(), files.len() * 2);
    for r in &rows {
        let acc: f64 = r["acc_mean"].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    for f in &files {
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(f.with_extension("eval.json")).unwrap()).unwrap();
        assert!(json.get("accuracy").is_some());
    }

    // full-train 1-NN control against a brute-force oracle on the same split
    let task = TaskPreset::RingsAndBlobs.load(0).unwrap();
    let correct = task
        .test
        .samples()
        .iter()
        .zip(task.test.labels())
        .filter(|(x, &y)| {
            let mut best = (f64::INFINITY, usize::MAX);
            for (r, &l) in task.train.samples().iter().zip(task.train.labels()) {
                let d: f64 = r.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.0 {
                    best = (d, l);
                }
            }
            best.1 == y
        })
        .count();
    let control = read_csv(&dir.path().join("control.csv"));
    let knn1 = control.iter().find(|r| r["classifier"] == "knn1").unwrap();
    assert_eq!(knn1["n_train"].parse::<usize>().unwrap(), task.train.len());
    let acc: f64 = knn1["acc_mean"].parse().unwrap();
    assert!((acc - correct as f64 / task.test.len() as f64).abs() < 1e-12, "{acc}");
}

#[test]
fn ablate_rows_and_single_point_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_fast(&["ablate", "--sweep", "gamma", "--set", "run.gamma_grid=[0.0, 0.1, 0.5]"]));
    let rows = read_csv(&dir.path().join("ablate_gamma.csv"));
    assert_eq!(rows.len(), 3 * 2);
    let svg = std::fs::read_to_string(dir.path().join("ablate_gamma.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("legend")));

    let single = tempfile::tempdir().unwrap();
    let point = ["--set", "run.gamma_grid=[0.1]", "--set", "run.seeds=[0]", "--set", "eval.classifiers=[\"knn5\"]"];
    let mut args = vec!["ablate", "--sweep", "gamma"];
    args.extend(point);
    ok(single.path(), &args);
    let swept = read_csv(&single.path().join("ablate_gamma.csv"));
    assert_eq!(swept.len(), 1);

    let direct = tempfile::tempdir().unwrap();
    let mut args = vec!["distill", "--gamma-grid"];
    args.extend(point);
    ok(direct.path(), &args);
    let files = dapsets(direct.path());
    assert_eq!(files.len(), 1);
    let mut args = vec!["eval", files[0].to_str().unwrap()];
    args.extend(point);
    ok(direct.path(), &args);
    let evaluated = read_csv(&direct.path().join("eval.csv"));
    assert_eq!(swept[0]["acc_knn5"], evaluated[0]["acc_mean"]);
    assert_eq!(swept[0]["mmd2"], evaluated[0]["mmd2"]);
    assert_eq!(swept[0]["mean_representativeness"], evaluated[0]["mean_representativeness"]);
}

#[test]
fn subsample_and_scatter() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["distill", "--set", "run.seeds=[0]", "--set", "run.methods=[\"random\"]", "--set", "run.ipc=[20]"]);
    let set = dapsets(dir.path()).remove(0);
    let path = ok(dir.path(), &["subsample", set.to_str().unwrap(), "--ipc", "5", "--seed", "1"]);
    let sub = PathBuf::from(path.trim());
    assert!(sub.exists());
    let o = run(dir.path(), &["subsample", sub.to_str().unwrap(), "--ipc", "6"]);
    assert_ne!(o.status.code(), Some(0));

    let svg_path = PathBuf::from(ok(dir.path(), &["scatter", sub.to_str().unwrap(), "--with-test"]).trim());
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let text_of = |class: &str| {
        doc.descendants().find(|n| n.attribute("class") == Some(class)).and_then(|n| n.text()).unwrap().to_owned()
    };
    assert_eq!(text_of("x-label"), "x1");
    assert_eq!(text_of("y-label"), "x2");
    let legend = doc.descendants().find(|n| n.attribute("class") == Some("legend")).unwrap();
    let entries: Vec<&str> = legend.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).collect();
    for c in 0..4 {
        assert!(entries.contains(&format!("class {c}").as_str()), "{entries:?}");
    }
}

#[test]
fn scatter_projects_high_dimensional_sets() {
    let dir = tempfile::tempdir().unwrap();
    let preset = ["--set", "task.preset=digits-pca", "--set", "run.seeds=[0]", "--set", "run.methods=[\"random\"]"];
    let mut args = vec!["distill"];
    args.extend(preset);
    ok(dir.path(), &args);
    let set = dapsets(dir.path()).remove(0);
    let mut args = vec!["scatter", set.to_str().unwrap()];
    args.extend(preset);
    let svg = std::fs::read_to_string(ok(dir.path(), &args).trim()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let x = doc.descendants().find(|n| n.attribute("class") == Some("x-label")).unwrap().text().unwrap();
    assert!(x.starts_with("PC1 ("), "{x}");
    let legend = doc.descendants().find(|n| n.attribute("class") == Some("legend")).unwrap();
    let classes = legend.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).filter(|t| t.starts_with("class ")).count();
    assert_eq!(classes, 10);
}

#[test]
fn show_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let shown = ok(dir.path(), &["show-config", "--set", "guidance.gamma=0.2"]);
    let (hash_line, body) = shown.split_once('\n').unwrap();
    let path = dir.path().join("shown.toml");
    std::fs::write(&path, body).unwrap();
    let again = ok(dir.path(), &["show-config", "--config", path.to_str().unwrap()]);
    assert_eq!(again.lines().next().unwrap(), hash_line);
}
