use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepkey::dataset::{read_recording, write_recording};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deepkey"));
    c.env_remove("DEEPKEY_CONFIG");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(out: &Path, extra: &[&str]) -> Output {
    run(bin().arg("gen").arg("--out").arg(out).args(extra))
}

fn value_of(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from:\n{text}"))
        .to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_writes_every_recording_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["--subjects", "7", "--sessions", "3", "--seconds", "2", "--seed", "42"];
    assert!(gen(&a, &args).status.success());
    assert!(gen(&b, &args).status.success());
    let listing = files(&a);
    let csvs = listing.iter().filter(|(n, _)| n.ends_with(".csv") && n != "manifest.csv").count();
    assert_eq!(csvs, 7 * 3 * 2);
    assert!(listing.iter().any(|(n, _)| n == "manifest.csv"));
    assert_eq!(listing, files(&b));

    let again = gen(&a, &args);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("not empty"));
    assert!(gen(&a, &[&args[..], &["--force"]].concat()).status.success());
    assert_eq!(listing, files(&a));
}

fn small_cohort(dir: &Path) {
    let o = gen(
        dir,
        &["--subjects", "4", "--sessions", "2", "--seconds", "20", "--subject-seconds", "3=40", "--seed", "3"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

fn quick_config(dir: &Path) -> PathBuf {
    let p = dir.join("quick.toml");
    fs::write(&p, "hidden = 32\neeg_iterations = 150\ngait_iterations = 150\nseed = 11\n").unwrap();
    p
}

fn auth(bundle: &Path, eeg: &Path, gait: &Path, log: &Path) -> Output {
    run(bin()
        .arg("auth")
        .arg("--bundle")
        .arg(bundle)
        .arg("--eeg")
        .arg(eeg)
        .arg("--gait")
        .arg(gait)
        .arg("--log")
        .arg(log))
}

#[test]
fn train_auth_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_cohort(&data);
    let config = quick_config(tmp.path());
    let train = |out: &Path| {
        let o = run(bin()
            .env("DEEPKEY_CONFIG", &config)
            .arg("train")
            .arg("--data")
            .arg(&data)
            .arg("--subjects")
            .arg("0,1,2")
            .arg("--out")
            .arg(out));
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let (b1, b2) = (tmp.path().join("one.dk"), tmp.path().join("two.dk"));
    let first = train(&b1);
    let second = train(&b2);
    let hash = |t: &str| t.lines().find(|l| l.contains("sha256=")).unwrap().split("sha256=").nth(1).unwrap().to_string();
    assert_eq!(hash(&first), hash(&second));
    assert_eq!(fs::read(&b1).unwrap(), fs::read(&b2).unwrap());
    let eeg_acc: f64 = value_of(&first, "eeg_accuracy").parse().unwrap();
    assert!((0.0..=1.0).contains(&eeg_acc));

    let log = tmp.path().join("audit.jsonl");
    let f = |name: &str| data.join(name);
    let genuine = auth(&b1, &f("s01_sess1_eeg.csv"), &f("s01_sess1_gait.csv"), &log);
    assert_eq!(genuine.status.code(), Some(0), "{}", stdout(&genuine));
    let impostor = auth(&b1, &f("s03_sess0_eeg.csv"), &f("s03_sess0_gait.csv"), &log);
    assert_eq!(impostor.status.code(), Some(1));
    assert!(stdout(&impostor).contains("\"reason\":\"ImpostorFiltered\""));
    let mixed = auth(&b1, &f("s00_sess0_eeg.csv"), &f("s02_sess0_gait.csv"), &log);
    assert_eq!(mixed.status.code(), Some(1));
    assert!(stdout(&mixed).contains("IdMismatch"));

    let short = tmp.path().join("short_eeg.csv");
    let full = read_recording(&f("s00_sess0_eeg.csv")).unwrap();
    write_recording(&short, &full.slice(0, 50).unwrap(), &[]).unwrap();
    let bad = auth(&b1, &short, &f("s00_sess0_gait.csv"), &log);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("malformed request"));

    let lines: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        for key in ["timestamp", "verdict", "reason", "e_id", "g_id", "timings"] {
            assert!(l.get(key).is_some(), "{key} missing in {l}");
        }
    }

    let reports = tmp.path().join("reports");
    let o = run(bin()
        .arg("eval")
        .arg("--bundle")
        .arg(&b1)
        .arg("--data")
        .arg(&data)
        .arg("--impostor-subjects")
        .arg("3")
        .arg("--datasize-sweep")
        .arg("100")
        .arg("--out")
        .arg(&reports));
    assert!(o.status.success(), "{}", stderr(&o));
    let far_frr = fs::read_to_string(reports.join("far_frr.csv")).unwrap();
    let mut rows = far_frr.lines();
    assert_eq!(rows.next(), Some("stage,far,frr,impostors,accepted_impostors,genuines,rejected_genuines"));
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        for rate in &cells[1..3] {
            let r: f64 = rate.parse().unwrap();
            assert!((0.0..=1.0).contains(&r), "{row}");
        }
    }
    for (name, header) in [
        ("eeg_classification.csv", "class,subject,precision,recall,f1,support,auc"),
        ("gait_confusion.csv", "true\\pred,0,1,2"),
        ("requests.csv", "genuine,subject,session,block,verdict,reason,e_id,g_id,gate_score"),
        ("latency.csv", "stage,mean_s,p95_s,count"),
        ("datasize_sweep.csv", "train_fraction,eeg_accuracy,gait_accuracy"),
    ] {
        let text = fs::read_to_string(reports.join(name)).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{name}");
    }
    let roc = fs::read_to_string(reports.join("eeg_roc.csv")).unwrap();
    assert!(roc.starts_with("# one-vs-rest"));
    let sweep = fs::read_to_string(reports.join("datasize_sweep.csv")).unwrap();
    let at_full: f64 = sweep.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((at_full - eeg_acc).abs() <= 1e-12, "{at_full} vs {eeg_acc}");
}

#[test]
fn missing_gait_is_reported_by_subject() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, &["--subjects", "3", "--sessions", "1", "--seconds", "4"]).status.success());
    let manifest = data.join("manifest.csv");
    let kept: Vec<String> = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("1,0,gait"))
        .map(str::to_string)
        .collect();
    fs::write(&manifest, kept.join("\n") + "\n").unwrap();
    let o = run(bin().arg("train").arg("--data").arg(&data).arg("--iterations").arg("5").arg("--out").arg(tmp.path().join("b.dk")));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("subject 1") && err.contains("gait"), "{err}");
}

#[test]
fn config_errors_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, &["--subjects", "2", "--sessions", "1", "--seconds", "4"]).status.success());
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "hiden = 3\n").unwrap();
    let o = run(bin().env("DEEPKEY_CONFIG", &bad).arg("train").arg("--data").arg(&data).arg("--out").arg(tmp.path().join("x.dk")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("configuration error"));
    assert!(!tmp.path().join("x.dk").exists());

    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "hidden = 8\neeg_iterations = 3\ngait_iterations = 3\nseed = 1\n").unwrap();
    let train = |seed: &str, out: &str| {
        let o = run(bin()
            .arg("train")
            .arg("--data")
            .arg(&data)
            .arg("--config")
            .arg(&cfg)
            .arg("--seed")
            .arg(seed)
            .arg("--out")
            .arg(tmp.path().join(out)));
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(tmp.path().join(out)).unwrap()
    };
    assert_ne!(train("1", "a.dk"), train("2", "b.dk"));
}
