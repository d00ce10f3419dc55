use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pau(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pau"))
        .args(args)
        .env_remove("PAU_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn data_dir() -> String {
    std::env::var("PAU_DATA_DIR").unwrap_or_else(|_| {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../data")
            .to_string_lossy()
            .into_owned()
    })
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Value printed after `name = ` on stdout.
fn printed(out: &str, name: &str) -> f64 {
    let prefix = format!("{name} = ");
    let rest = out
        .lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {name} in {out}"));
    rest.split_whitespace().next().unwrap().parse().unwrap()
}

fn write_tanh_doc(dir: &Path) -> PathBuf {
    let doc = dir.join("tanh.toml");
    let out = pau(&["pade", "--target", "tanh", "--orders", "5,4", "--out", path_str(&doc)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    doc
}

#[test]
fn pade_tanh_prints_one_ninth() {
    let out = pau(&["pade", "--target", "tanh", "--orders", "5,4"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("a_3 = 0.111111"), "{text}");
    assert!(text.contains("(1/9)"));
    assert!((printed(&text, "a_3") - 1.0 / 9.0).abs() < 1e-12);
    let order: Vec<&str> = text
        .lines()
        .filter_map(|l| l.split(" = ").next().filter(|n| n.starts_with("a_") || n.starts_with("b_")))
        .collect();
    assert_eq!(order, ["a_0", "a_1", "a_2", "a_3", "a_4", "a_5", "b_1", "b_2", "b_3", "b_4"]);
}

#[test]
fn pade_relu_is_an_input_error() {
    let out = pau(&["pade", "--target", "relu", "--orders", "5,4"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("has no Taylor series at 0"), "{}", stderr(&out));
}

#[test]
fn pade_document_matches_printed_values() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("sigmoid.toml");
    let out = pau(&["pade", "--target", "sigmoid", "--out", path_str(&doc)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let parsed = pau::document::CoefficientDocument::read(&doc).unwrap();
    let c = parsed.coefficients;
    for (i, v) in c.numerator().iter().enumerate() {
        assert_eq!(printed(&text, &format!("a_{i}")).to_bits(), v.to_bits());
    }
    for (k, v) in c.denominator().iter().enumerate() {
        assert_eq!(printed(&text, &format!("b_{}", k + 1)).to_bits(), v.to_bits());
    }
}

#[test]
fn fit_leaky_relu_within_bound() {
    let out = pau(&["fit", "--target", "lrelu(0.01)", "--range", "-3,3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let residual = printed(&stdout(&out), "max abs residual");
    assert!(residual <= 0.06, "{residual}");
}

#[test]
fn fit_recovers_an_exact_rational_curve() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_tanh_doc(dir.path());
    let out = pau(&["fit", "--target-coeffs", path_str(&doc), "--range", "-3,3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(printed(&stdout(&out), "max abs residual") < 1e-8);
}

#[test]
fn malformed_range_is_a_usage_error() {
    assert_eq!(code(&pau(&["fit", "--target", "tanh", "--range", "3,-3"])), 1);
    assert_eq!(code(&pau(&["fit", "--target", "tanh", "--range", "3"])), 1);
    assert_eq!(code(&pau(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&pau(&["frobnicate"])), 1);
}

#[test]
fn gradcheck_outcomes() {
    let out = pau(&["gradcheck", "--seed", "3", "--trials", "500"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = pau(&["gradcheck", "--trials", "50", "--inject-fault", "sign-flip"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("coefficients = ["), "{}", stderr(&out));
    let out = pau(&["gradcheck", "--trials", "0"]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("0 trials"));
}

#[test]
fn export_curve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_tanh_doc(dir.path());
    let csv = dir.path().join("curve.csv");
    let out = pau(&["export-curve", "--coeffs", path_str(&doc), "--range", "-1,1", "--points", "3", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,f(x)");
    assert_eq!(lines[2], "0,0");

    let out = pau(&[
        "export-curve", "--coeffs", path_str(&doc), "--range", "-3,3", "--points", "13", "--noise", "0", "--out",
        path_str(&csv),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,f(x),min,max\n"));
    for row in text.lines().skip(1) {
        let v: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!((v[2], v[3]), (v[1], v[1]), "{row}");
    }
}

#[test]
fn export_curve_sigmoid_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("sigmoid.toml");
    assert_eq!(code(&pau(&["pade", "--target", "sigmoid", "--out", path_str(&doc)])), 0);
    let csv = dir.path().join("curve.csv");
    let out = pau(&["export-curve", "--coeffs", path_str(&doc), "--range", "-1,1", "--points", "3", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(last[0], 1.0);
    assert!((last[1] - 0.73107).abs() < 1e-4, "{}", last[1]);
}

#[test]
fn export_curve_unreadable_document() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "orders = \"five\"").unwrap();
    let csv = dir.path().join("c.csv");
    for doc in [bad.clone(), dir.path().join("missing.toml")] {
        let out = pau(&["export-curve", "--coeffs", path_str(&doc), "--out", path_str(&csv)]);
        assert_eq!(code(&out), 2, "{}", stderr(&out));
        assert!(stderr(&out).contains(path_str(&doc)));
    }
}

#[test]
fn invalid_thread_count_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_pau"))
        .args(["gradcheck", "--trials", "1"])
        .env("PAU_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_data_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pau(&["train", "--preset", "mnist-desk", "--data-dir", path_str(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("mnist"));
}

/// Drops the wall-time column, the one value that legitimately varies between runs.
fn without_seconds(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn desk_training_is_reproducible_and_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let out = pau(&[
            "train", "--preset", "mnist-desk", "--seed", "7", "--data-dir", &data, "--metrics-out", path_str(&csv),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::read_to_string(csv).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert!(a.starts_with("epoch,train_loss,test_acc,seconds\n"));
    assert_eq!(a.lines().count(), 6);
    assert_eq!(without_seconds(&a), without_seconds(&b));
    let last = a.lines().last().unwrap();
    let acc: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!(acc >= 0.90, "{last}");
}

#[test]
fn saved_network_evaluates_to_its_final_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    let ckpt = dir.path().join("net");
    let csv = dir.path().join("m.csv");
    let out = pau(&[
        "train", "--preset", "mnist-desk", "--epochs", "1", "--data-dir", &data, "--save", path_str(&ckpt),
        "--metrics-out", path_str(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trained: f64 = std::fs::read_to_string(&csv).unwrap().lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    let out = pau(&["eval", "--checkpoint", path_str(&ckpt), "--preset", "mnist-desk", "--data-dir", &data]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(printed(&stdout(&out), "test accuracy"), trained);
}

#[test]
fn prune_schedule_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("prune.csv");
    let out = pau(&[
        "prune", "--preset", "mnist-desk", "--schedule", "0.1,0.3,0.5", "--data-dir", &data_dir(), "--metrics-out",
        path_str(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p,params_remaining,test_acc"));
    let counts: Vec<usize> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(counts.len(), 3);
    assert!(counts.windows(2).all(|w| w[0] > w[1]), "{counts:?}");
    assert_eq!(code(&pau(&["prune", "--schedule", "0.5,0.1"])), 1);
}
