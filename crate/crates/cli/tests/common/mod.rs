#![allow(dead_code)]

pub mod sim;
pub mod stub;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use vaudit_core::corpus::TaskLabel;

/// Writes `n` examples per (task, dataset) with one small image file each.
/// With `labeled = false` the task field is left out.
pub fn write_corpus(dir: &Path, tasks: &[TaskLabel], datasets: &[&str], n: usize, labeled: bool) -> PathBuf {
    let img = dir.join("img");
    fs::create_dir_all(&img).unwrap();
    let mut lines = String::new();
    for ds in datasets {
        for t in tasks {
            for i in 0..n {
                let id = format!("{ds}-{}-{i:04}", t.slug());
                fs::write(img.join(format!("{id}.png")), id.as_bytes()).unwrap();
                let mut ex = json!({
                    "id": id,
                    "image": format!("img/{id}.png"),
                    "question": format!("What does image {id} show?"),
                    "reference_answer": format!("finding {i}"),
                    "dataset": ds,
                });
                if labeled {
                    ex["task"] = json!(t.slug());
                }
                lines.push_str(&ex.to_string());
                lines.push('\n');
            }
        }
    }
    let p = dir.join("corpus.jsonl");
    fs::write(&p, lines).unwrap();
    p
}

pub fn synthetic(id: &str, spec: Value) -> Value {
    json!({"id": id, "kind": "synthetic", "synthetic": spec})
}

pub fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

/// Two coupled generators, an exact-match judge and three labelers that
/// always agree.
pub fn coupled_config(corpus: &Path, out: &Path, seed: u64) -> Value {
    json!({
        "corpus": corpus,
        "out_dir": out,
        "seed": seed,
        "backends": [
            synthetic("a", json!({"seed": 1, "accuracy": 0.5, "false_reject": 0.15, "coupling_shift": 2.5})),
            synthetic("b", json!({"seed": 2, "accuracy": 0.4, "false_reject": 0.25, "coupling_shift": 2.0})),
            synthetic("judge", json!({"seed": 0})),
            synthetic("l1", json!({"seed": 0})),
            synthetic("l2", json!({"seed": 0})),
            synthetic("l3", json!({"seed": 0})),
        ],
        "roles": {"generators": ["a", "b"], "judge": "judge", "labelers": ["l1", "l2", "l3"]},
        "run": {"parallelism": 4},
    })
}

/// Every regular file under `dir` with its bytes, keyed by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Rows of a CSV file without quoting, as header-keyed maps.
pub fn read_csv(path: &Path) -> Vec<std::collections::BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}
