use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memotion::corpus::Sentiment;
use memotion::eval::{macro_f1, EvalReport};
use serde_json::Value;
use tempfile::TempDir;

fn memotion(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memotion"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const WORDS: [[&str; 4]; 3] = [
    ["gloomy", "awful", "rain", "grief"],
    ["table", "window", "paper", "chair"],
    ["sunny", "cheerful", "party", "smile"],
];

/// Labeled corpus with class keywords plus a matching 4-dimensional text
/// embedding table and a config pointing at it.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("id,caption,label\n");
    let labels = ["negative", "neutral", "positive"];
    for i in 0..90 {
        let c = i % 3;
        let caption = format!("{} {} meme", WORDS[c][i % 4], WORDS[c][(i / 3) % 4]);
        csv.push_str(&format!("r{i:02},\"{caption}\",{}\n", labels[c]));
    }
    fs::write(dir.path().join("data.csv"), csv).unwrap();

    let mut emb = String::from("13 4\n");
    for (c, ws) in WORDS.iter().enumerate() {
        for (k, w) in ws.iter().enumerate() {
            let mut v = [0.0; 4];
            v[c] = 1.0;
            v[3] = k as f64 * 0.1;
            emb.push_str(&format!("{w} {} {} {} {}\n", v[0], v[1], v[2], v[3]));
        }
    }
    emb.push_str("meme 0 0 0 1\n");
    fs::write(dir.path().join("toy.txt"), emb).unwrap();

    fs::write(
        dir.path().join("run.toml"),
        "model = \"ffnn_w2v\"\nseed = 3\n\n[embeddings]\npath = \"toy.txt\"\nformat = \"text\"\n\n[net]\nhidden = [32, 16]\n\n[net.init]\nmode = \"fan_in\"\n\n[train]\nbatch_size = 10\nepochs = 30\nlr = 0.01\n",
    )
    .unwrap();
    dir
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&read(p)).unwrap()
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--config", "run.toml", "--dataset", "data.csv", "--out", out];
    args.extend_from_slice(extra);
    ok(memotion(&args, dir));
    dir.join(out)
}

#[test]
fn prepare_reports_balance_and_is_idempotent() {
    let ws = workspace();
    let d = ws.path();
    let out = ok(memotion(&["prepare", "--dataset", "data.csv", "--out", "p1"], d));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("33.3%"), "{text}");
    let stats = json(d.join("p1/stats.json"));
    assert_eq!(stats["records"], 90);
    assert_eq!(stats["classes"]["counts"], serde_json::json!([30, 30, 30]));
    assert!(d.join("p1/config.toml").exists());

    ok(memotion(&["prepare", "--dataset", "p1/dataset.csv", "--out", "p2"], d));
    for f in ["dataset.csv", "stats.json", "stats.txt"] {
        assert_eq!(read(d.join("p1").join(f)), read(d.join("p2").join(f)), "{f}");
    }
}

#[test]
fn exit_codes() {
    let ws = workspace();
    let d = ws.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    let out = memotion(&["prepare", "--dataset", "empty.csv", "--out", "e"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = memotion(&["train", "--model", "ffnn_w2v", "--dataset", "data.csv", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embedding"));

    let out = memotion(&["train", "--model", "svm", "--dataset", "data.csv", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(2));

    let out = memotion(&["frobnicate"], d);
    assert_eq!(out.status.code(), Some(2));

    let out = memotion(&["predict", "--model", "missing.bin", "--dataset", "data.csv", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(1));

    fs::write(d.join("bad.toml"), "model = \"nb\"\nbogus_key = 1\n").unwrap();
    let out = memotion(&["train", "--config", "bad.toml", "--dataset", "data.csv", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_byte_reproducible() {
    let ws = workspace();
    let d = ws.path();
    let a = train(d, "a", &["--upsample"]);
    let b = train(d, "b", &["--upsample"]);
    assert_eq!(read(a.join("model.bin")), read(b.join("model.bin")));
    assert_eq!(
        read(a.join("validation_predictions.csv")),
        read(b.join("validation_predictions.csv"))
    );
    let c = train(d, "c", &["--upsample", "--seed", "4"]);
    assert_ne!(read(a.join("model.bin")), read(c.join("model.bin")));

    let report = json(a.join("train_report.json"));
    assert_eq!(report["epoch_losses"].as_array().unwrap().len(), 30);
    assert!(report["validation"]["macro_f1"].as_f64().unwrap() > 0.9);
    let cfg = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(cfg.contains("upsample = true") && cfg.contains("seed = 3"), "{cfg}");
}

#[test]
fn predict_then_eval_matches_training_report() {
    let ws = workspace();
    let d = ws.path();
    let t = train(d, "t", &[]);
    ok(memotion(
        &["predict", "--model", "t/model.bin", "--dataset", "t/validation.csv", "--out", "pred"],
        d,
    ));
    assert_eq!(read(d.join("pred/predictions.csv")), read(t.join("validation_predictions.csv")));

    ok(memotion(
        &["eval", "--predictions", "pred/predictions.csv", "--gold", "t/validation.csv", "--out", "ev", "--name", "ffnn_w2v"],
        d,
    ));
    let ev = EvalReport::from_json(&fs::read_to_string(d.join("ev/eval.json")).unwrap()).unwrap();
    let trained: Value = json(t.join("train_report.json"));
    assert_eq!(ev.macro_f1, trained["validation"]["macro_f1"].as_f64().unwrap());

    // independent rescoring of the reparsed CSV
    let mut rdr = csv::Reader::from_path(d.join("pred/predictions.csv")).unwrap();
    let preds: Vec<Sentiment> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    let mut rdr = csv::Reader::from_path(t.join("validation.csv")).unwrap();
    let gold_col = rdr.headers().unwrap().iter().position(|h| h == "label").unwrap();
    let golds: Vec<Sentiment> = rdr.records().map(|r| r.unwrap()[gold_col].parse().unwrap()).collect();
    assert_eq!(macro_f1(&preds, &golds).unwrap().macro_f1, ev.macro_f1);
}

#[test]
fn predict_accepts_unlabeled_input() {
    let ws = workspace();
    let d = ws.path();
    train(d, "t", &["--split", "1"]);
    fs::write(d.join("new.csv"), "id,caption\nx1,sunny party meme\nx2,gloomy rain meme\nx3,unknown words only\n").unwrap();
    ok(memotion(&["predict", "--model", "t/model.bin", "--dataset", "new.csv", "--out", "p"], d));
    let mut rdr = csv::Reader::from_path(d.join("p/predictions.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["id", "label", "p_neg", "p_neu", "p_pos"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let s: f64 = (2..5).map(|i| r[i].parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert_eq!(&rows[0][1], "positive");
    assert_eq!(&rows[1][1], "negative");
    assert!(d.join("p/config.toml").exists());
}

#[test]
fn eval_rejects_missing_ids() {
    let ws = workspace();
    let d = ws.path();
    fs::write(d.join("gold.csv"), "id,caption,label\na,x,positive\nb,y,negative\n").unwrap();
    fs::write(d.join("pred.csv"), "id,label,p_neg,p_neu,p_pos\na,positive,0,0,1\nz,negative,1,0,0\n").unwrap();
    let out = memotion(&["eval", "--predictions", "pred.csv", "--gold", "gold.csv", "--out", "e"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"b\""));
}

#[test]
fn stability_and_compare() {
    let ws = workspace();
    let d = ws.path();
    ok(memotion(
        &["stability", "--config", "run.toml", "--dataset", "data.csv", "--model", "nb", "--runs", "4", "--out", "s"],
        d,
    ));
    let st = json(d.join("s/stability.json"));
    assert_eq!(st["n_runs"], 4);
    assert_eq!(st["runs"].as_array().unwrap().len(), 4);
    let runs = fs::read_to_string(d.join("s/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);

    train(d, "w2v", &[]);
    train(d, "nb", &["--model", "nb"]);
    ok(memotion(&["compare", "w2v/eval.json", "nb/eval.json", "w2v/baseline.json", "--out", "cmp"], d));
    let cmp = json(d.join("cmp/compare.json"));
    let rows = cmp["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let scores: Vec<f64> = rows.iter().map(|r| r["macro_f1"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    assert_eq!(rows[2]["model"], "majority");
}

/// Captions plus solid-hue PNGs (red, green, blue by class) under `img/`.
fn image_workspace() -> TempDir {
    let ws = workspace();
    let d = ws.path();
    fs::create_dir(d.join("img")).unwrap();
    let data = fs::read_to_string(d.join("data.csv")).unwrap();
    let mut out = String::from("id,caption,image,label\n");
    for (i, line) in data.lines().skip(1).enumerate() {
        let (id, rest) = line.split_once(',').unwrap();
        let c = i % 3;
        let mut px = [40u8; 3];
        px[c] = 200 + (i % 50) as u8;
        let img = image::RgbImage::from_fn(20 + (i % 7) as u32, 16, |x, _| {
            let mut p = px;
            p[(c + 1) % 3] += (x % 5) as u8;
            image::Rgb(p)
        });
        img.save(d.join(format!("img/{id}.png"))).unwrap();
        let (caption, label) = rest.rsplit_once(',').unwrap();
        out.push_str(&format!("{id},{caption},img/{id}.png,{label}\n"));
    }
    fs::write(d.join("data.csv"), out).unwrap();
    fs::write(
        d.join("img.toml"),
        "seed = 1\n\n[cnn.train]\nbatch_size = 10\nepochs = 8\nlr = 0.005\n\n[stacker]\nfolds = 3\n\n[train]\nbatch_size = 10\nepochs = 20\nlr = 0.01\n\n[net]\nhidden = [32, 16]\n\n[net.init]\nmode = \"fan_in\"\n",
    )
    .unwrap();
    ws
}

#[test]
fn image_models_train_and_predict() {
    let ws = image_workspace();
    let d = ws.path();
    for kind in ["cnn_hsv", "fusion"] {
        let out = format!("{kind}-run");
        ok(memotion(
            &["train", "--config", "img.toml", "--model", kind, "--dataset", "data.csv", "--out", &out],
            d,
        ));
        let report = json(d.join(&out).join("train_report.json"));
        let f1 = report["validation"]["macro_f1"].as_f64().unwrap();
        assert!(f1 > 0.9, "{kind}: {f1}");
        let pred_dir = format!("{kind}-pred");
        ok(memotion(
            &["predict", "--model", &format!("{out}/model.bin"), "--dataset", "data.csv", "--out", &pred_dir],
            d,
        ));
        let n = fs::read_to_string(d.join(&pred_dir).join("predictions.csv")).unwrap().lines().count();
        assert_eq!(n, 91);
    }
    // image models need image paths
    fs::write(d.join("noimg.csv"), "id,caption,label\na,x,positive\nb,y,negative\n").unwrap();
    let out = memotion(&["train", "--model", "cnn_hsv", "--dataset", "noimg.csv", "--split", "1", "--out", "z"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
