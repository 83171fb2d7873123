use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hepimg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hepimg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, mode: &str, per_class: usize) -> PathBuf {
    let out = dir.join(format!("{mode}.ndjson"));
    let o = hepimg(&[
        "generate",
        "--mode",
        mode,
        "--per-class",
        &per_class.to_string(),
        "--seed",
        "3",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn count_pngs(dir: &Path) -> usize {
    if !dir.exists() {
        return 0;
    }
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            if p.is_dir() {
                count_pngs(&p)
            } else {
                usize::from(p.extension().is_some_and(|e| e == "png"))
            }
        })
        .sum()
}

fn small_config(dir: &Path, mode: &str, input: &Path) -> PathBuf {
    let path = dir.join(format!("{mode}.toml"));
    let text = format!(
        "mode = \"{mode}\"\nseed = 1\ninput = {input:?}\noutput = {:?}\n\n[mlp]\nhidden_layers = 1\nhidden_units = 8\nbatch_size = 32\n",
        dir.join(format!("run-{mode}"))
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn ingest_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = generate(dir.path(), "dimuon", 4);
    let ok = hepimg(&["ingest", file.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("parsed: 20"));

    let text = fs::read_to_string(&file).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"id\": \"broken\", \"objects\": [";
    let corrupt = dir.path().join("corrupt.ndjson");
    fs::write(&corrupt, lines.join("\n") + "\n").unwrap();

    let bad = hepimg(&["ingest", corrupt.to_str().unwrap()]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(stderr(&bad).contains("line 7"), "{}", stderr(&bad));
    assert!(stdout(&bad).contains("rejected: 1"));

    let lenient = hepimg(&["ingest", "--lenient", corrupt.to_str().unwrap()]);
    assert_eq!(lenient.status.code(), Some(0));

    let json = hepimg(&["ingest", "--json", "--lenient", corrupt.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["parsed"], 19);
    assert_eq!(v["rejected"], 1);
}

#[test]
fn dry_run_renders_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let file = generate(dir.path(), "dimuon", 10);
    let cfg = small_config(dir.path(), "dimuon", &file);
    let o = hepimg(&["render", "-c", cfg.to_str().unwrap(), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run-dimuon");
    assert!(run.join("dataset/manifest.json").is_file());
    assert_eq!(count_pngs(&run), 0);
    assert!(run.join("config.resolved.json").is_file());
}

#[test]
fn mode_selects_classes_and_sizing() {
    let dir = tempfile::tempdir().unwrap();
    let dimuon = generate(dir.path(), "dimuon", 6);
    let complex = generate(dir.path(), "complex", 6);
    for (mode, file, classes, size) in [
        (
            "dimuon",
            &dimuon,
            vec!["none", "jpsi", "psi_prime", "upsilon", "z"],
            "energy",
        ),
        (
            "complex",
            &complex,
            vec!["ttbar", "drell_yan", "w_jets"],
            "transverse_momentum",
        ),
    ] {
        let cfg = small_config(dir.path(), mode, file);
        let shown = hepimg(&["show-config", "-c", cfg.to_str().unwrap()]);
        assert!(shown.status.success(), "{}", stderr(&shown));
        assert!(
            stdout(&shown).contains(&format!("size_variable = \"{size}\"")),
            "{}",
            stdout(&shown)
        );

        let o = hepimg(&["render", "-c", cfg.to_str().unwrap(), "--threads", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let manifest: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(format!("run-{mode}/dataset/manifest.json"))).unwrap(),
        )
        .unwrap();
        let names: Vec<&str> = manifest["class_names"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert_eq!(names, classes);
        assert!(count_pngs(&dir.path().join(format!("run-{mode}/dataset"))) > 0);
    }
}

#[test]
fn train_evaluate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let file = generate(dir.path(), "complex", 30);
    let cfg = small_config(dir.path(), "complex", &file);
    let c = cfg.to_str().unwrap();

    let early = hepimg(&["evaluate", "-c", c]);
    assert_eq!(early.status.code(), Some(1));
    assert!(stderr(&early).contains("render"), "{}", stderr(&early));

    assert!(hepimg(&["render", "-c", c, "--dry-run"]).status.success());
    let t = hepimg(&["train-ffn", "-c", c]);
    assert!(t.status.success(), "{}", stderr(&t));
    let run = dir.path().join("run-complex");
    let history = fs::read_to_string(run.join("ffn/history.csv")).unwrap();
    let mut rows = history.lines();
    assert_eq!(rows.next(), Some("epoch,train_loss,train_acc,val_loss,val_acc"));
    assert_eq!(rows.count(), 40);
    assert!(run.join("ffn/history.png").is_file());

    let e = hepimg(&["evaluate", "-c", c]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(
        stdout(&e).contains("definition: balanced binary accuracy"),
        "{}",
        stdout(&e)
    );
    let preds = fs::read_to_string(run.join("eval/predictions.csv")).unwrap();
    assert!(preds.starts_with("event_id,pred,prob_0,prob_1,prob_2\n"), "{preds}");

    // a perfect classifier's file, as another tool would write it
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("dataset/manifest.json")).unwrap()).unwrap();
    let mut perfect = String::from("event_id,pred,prob_0,prob_1,prob_2\n");
    for entry in manifest["test"].as_array().unwrap() {
        let class = entry["class_id"].as_u64().unwrap() as usize;
        let mut probs = [0.0; 3];
        probs[class] = 1.0;
        perfect.push_str(&format!(
            "{},{class},{},{},{}\n",
            entry["event_id"].as_str().unwrap(),
            probs[0],
            probs[1],
            probs[2]
        ));
    }
    let perfect_path = dir.path().join("perfect.csv");
    fs::write(&perfect_path, perfect).unwrap();
    let out = dir.path().join("report");
    let r = hepimg(&[
        "report",
        "--predictions",
        perfect_path.to_str().unwrap(),
        "--manifest",
        run.join("dataset/manifest.json").to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stdout(&r).contains("accuracy: 1.0000"));
    assert!(stdout(&r).contains("efficiency: 1.0000"));
    assert!(stdout(&r).contains("definition:"));
    let matrix = fs::read_to_string(out.join("confusion.csv")).unwrap();
    for (i, line) in matrix.lines().skip(1).enumerate() {
        let cells: Vec<u64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        for (j, v) in cells.iter().enumerate() {
            assert_eq!(*v > 0, i == j, "{matrix}");
        }
    }
    assert!(out.join("confusion_normalized.png").is_file());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "mode = \"dimuon\"\ncolour = 3\n").unwrap();
    let o = hepimg(&["render", "-c", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let no_input = hepimg(&["render", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(no_input.status.code(), Some(2));

    let file = generate(dir.path(), "dimuon", 3);
    let bad_split = dir.path().join("split.toml");
    fs::write(
        &bad_split,
        format!(
            "input = {file:?}\noutput = {:?}\n[split.ratios]\ntrain = 0.5\nval = 0.1\ntest = 0.1\n",
            dir.path().join("x")
        ),
    )
    .unwrap();
    let o = hepimg(&["render", "-c", bad_split.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
