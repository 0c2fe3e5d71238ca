//! End-to-end runs of the `cropseries` binary: exit codes, flag precedence,
//! and the artifact set each command leaves behind. Sizes are tiny; quality
//! of the resulting models is covered elsewhere.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropseries"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn missing_input_file_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["train", "--input", "nowhere.csv", "--out", "o"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn validation_problems_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gen.json"),
        r#"{"scenarios":[{"name":"tiny","count":8}],
            "mix":[{"class":"corn","count":1},{"class":"soybean","count":1}]}"#,
    )
    .unwrap();
    assert_ok(&run(
        dir.path(),
        &["generate", "--config", "gen.json", "--seed", "3", "--out", "o"],
    ));

    let out = run(
        dir.path(),
        &["train", "--input", "o/tiny.csv", "--method", "quux", "--out", "o"],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));

    // An unknown flag is a usage error, same exit class.
    let out = run(dir.path(), &["generate", "--frobnicate"]);
    assert_eq!(code(&out), 1);

    // A config with a misspelled key is rejected, not silently ignored.
    fs::write(dir.path().join("typo.json"), r#"{"scenariox":[]}"#).unwrap();
    let out = run(
        dir.path(),
        &["generate", "--config", "typo.json", "--out", "o2"],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gen.json"),
        r#"{"scenarios":[{"name":"tiny","count":16}],
            "mix":[{"class":"corn","count":1},{"class":"soybean","count":1}]}"#,
    )
    .unwrap();
    assert_ok(&run(
        dir.path(),
        &["generate", "--config", "gen.json", "--seed", "3", "--out", "o"],
    ));
    fs::write(
        dir.path().join("train.json"),
        r#"{"input":"o/tiny.csv","method":"lstm",
            "lstm":{"hidden_dim":5,"epochs":1,"batch_size":8,"learning_rate":0.001}}"#,
    )
    .unwrap();
    assert_ok(&run(
        dir.path(),
        &[
            "train", "--config", "train.json", "--method", "lstm_att", "--seed", "3", "--out",
            "o",
        ],
    ));

    let echo = fs::read_to_string(dir.path().join("o/train_config.json")).unwrap();
    assert!(echo.contains("\"method\": \"lstm_att\""), "{echo}");
    let model = fs::read_to_string(dir.path().join("o/model.json")).unwrap();
    assert!(model.contains("\"attention\": {"), "flag did not win");
}

#[test]
fn full_chain_leaves_the_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gen.json"),
        r#"{"scenarios":[
              {"name":"in_domain","count":24},
              {"name":"shift16","planting_shift_days":16,"count":16}],
            "mix":[{"class":"corn","count":1},{"class":"soybean","count":1}]}"#,
    )
    .unwrap();
    assert_ok(&run(
        dir.path(),
        &["generate", "--config", "gen.json", "--seed", "5", "--out", "o"],
    ));
    for f in [
        "o/in_domain.csv",
        "o/in_domain.meta.json",
        "o/shift16.csv",
        "o/shift16.meta.json",
        "o/generate_config.json",
        "o/generate_manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }

    fs::write(
        dir.path().join("train.json"),
        r#"{"input":"o/in_domain.csv",
            "lstm":{"hidden_dim":5,"epochs":1,"batch_size":8,"learning_rate":0.001}}"#,
    )
    .unwrap();
    assert_ok(&run(
        dir.path(),
        &["train", "--config", "train.json", "--seed", "5", "--out", "o"],
    ));

    fs::write(
        dir.path().join("adapt.json"),
        r#"{"model":"o/model.json","source":"o/in_domain.csv","target":"o/shift16.csv",
            "da":{"epochs":1,"batch_size":4,"mapper_res_hidden":3,"disc_hidden":4}}"#,
    )
    .unwrap();
    assert_ok(&run(
        dir.path(),
        &["adapt", "--config", "adapt.json", "--seed", "5", "--out", "o"],
    ));

    fs::write(
        dir.path().join("eval.json"),
        r#"{"train":"o/in_domain.csv","scenarios":[{"name":"shift16","path":"o/shift16.csv"}],
            "methods":["ann","lstm"],
            "lstm":{"hidden_dim":5,"epochs":1,"batch_size":8,"learning_rate":0.001},
            "ann":{"hidden_dim":6,"epochs":2,"batch_size":8,"learning_rate":0.001}}"#,
    )
    .unwrap();
    let out = run(
        dir.path(),
        &["evaluate", "--config", "eval.json", "--seed", "5", "--out", "o"],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("method") && stdout.contains("in_domain"), "{stdout}");
    let report = fs::read_to_string(dir.path().join("o/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 * 2, "{report}");
    assert!(report.starts_with("method,scenario,auc,f1,train_digest,test_digest,seed"));

    assert_ok(&run(
        dir.path(),
        &[
            "early", "--model", "o/model.json", "--input", "o/in_domain.csv", "--seed", "5",
            "--out", "o",
        ],
    ));
    let curves = fs::read_to_string(dir.path().join("o/early_curves.csv")).unwrap();
    assert!(curves.starts_with("step,class,mean,std"));
    let svg = fs::read_to_string(dir.path().join("o/early_curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));

    assert_ok(&run(
        dir.path(),
        &[
            "covercrops", "--input", "o/in_domain.csv", "--seed", "5", "--out", "o",
        ],
    ));
    let table = fs::read_to_string(dir.path().join("o/cover_table.csv")).unwrap();
    assert!(table.starts_with("class,total_area,cover_area,evergreen_area,cover_percent"));
    assert!(dir.path().join("o/cover_pixels.csv").exists());

    // Every manifest digest matches the file on disk.
    for cmd in ["generate", "train", "adapt", "evaluate", "early", "covercrops"] {
        let text =
            fs::read_to_string(dir.path().join(format!("o/{cmd}_manifest.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for entry in v["outputs"].as_array().unwrap() {
            let path = dir.path().join(entry["path"].as_str().unwrap());
            let digest =
                cropseries_cli::fsio::file_digest(&path).unwrap();
            assert_eq!(digest, entry["digest"].as_str().unwrap(), "{}", path.display());
        }
    }
}
