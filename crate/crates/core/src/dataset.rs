//! Recording files, manifests and synthetic dataset generation.
//!
//! A recording is a CSV file with header `subject,modality,ch0,...` and one
//! instance per row. Its sample rate lives in a `key=value` sidecar with the
//! same stem and a `.meta` extension. A data directory lists its recordings
//! in `manifest.csv`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dsp::{Modality, Recording};
use crate::error::{DeepKeyError, Result};
use crate::synthgen::{generate_eeg, generate_gait, make_profiles, SessionConfig};

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "subject,session,modality,file,seconds,sample_rate,seed";

fn data_err(path: &Path, msg: impl std::fmt::Display) -> DeepKeyError {
    DeepKeyError::Data(format!("{}: {msg}", path.display()))
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

pub fn recording_to_csv(rec: &Recording) -> String {
    let mut out = String::from("subject,modality");
    for c in 0..rec.channels() {
        write!(out, ",ch{c}").expect("string write");
    }
    out.push('\n');
    let subject = rec.subject().map(|s| s.to_string()).unwrap_or_default();
    for row in rec.data().rows() {
        out.push_str(&subject);
        out.push(',');
        out.push_str(rec.modality().as_str());
        for v in row {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    out
}

/// Writes `path` and its sidecar; `extra` lines are appended to the sidecar.
pub fn write_recording(path: &Path, rec: &Recording, extra: &[(&str, String)]) -> Result<()> {
    fs::write(path, recording_to_csv(rec))?;
    let mut meta = format!("modality={}\nsample_rate={}\n", rec.modality(), rec.sample_rate());
    if let Some(s) = rec.subject() {
        writeln!(meta, "subject={s}").expect("string write");
    }
    for (k, v) in extra {
        writeln!(meta, "{k}={v}").expect("string write");
    }
    fs::write(meta_path(path), meta)?;
    Ok(())
}

fn read_meta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| data_err(path, format!("malformed line `{l}`")))
        })
        .collect()
}

/// Reads a recording CSV. The sample rate comes from the sidecar when one
/// exists, otherwise the modality's nominal rate is used.
pub fn read_recording(path: &Path) -> Result<Recording> {
    let text = fs::read_to_string(path).map_err(|e| data_err(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| data_err(path, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "subject" || cols[1] != "modality" {
        return Err(data_err(path, "header must start with `subject,modality`"));
    }
    for (i, c) in cols[2..].iter().enumerate() {
        if *c != format!("ch{i}") {
            return Err(data_err(path, format!("unexpected column `{c}`")));
        }
    }
    let channels = cols.len() - 2;

    let mut modality: Option<Modality> = None;
    let mut subject: Option<Option<u32>> = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(data_err(path, format!("line {}: {} fields, expected {}", lineno + 2, fields.len(), cols.len())));
        }
        let m: Modality = fields[1].parse()?;
        if *modality.get_or_insert(m) != m {
            return Err(data_err(path, format!("line {}: mixed modalities", lineno + 2)));
        }
        let s = if fields[0].is_empty() {
            None
        } else {
            Some(fields[0].parse::<u32>().map_err(|e| data_err(path, format!("line {}: subject: {e}", lineno + 2)))?)
        };
        if *subject.get_or_insert(s) != s {
            return Err(data_err(path, format!("line {}: mixed subjects", lineno + 2)));
        }
        for f in &fields[2..] {
            values.push(f.parse::<f64>().map_err(|e| data_err(path, format!("line {}: `{f}`: {e}", lineno + 2)))?);
        }
        rows += 1;
    }
    let modality = modality.ok_or_else(|| data_err(path, "no instances"))?;
    let mut sample_rate = modality.sample_rate();
    let meta = meta_path(path);
    if meta.exists() {
        for (k, v) in read_meta(&meta)? {
            if k == "sample_rate" {
                sample_rate = v.parse().map_err(|e| data_err(&meta, format!("sample_rate: {e}")))?;
            }
        }
    }
    let data = Array2::from_shape_vec((rows, channels), values).map_err(|e| data_err(path, e))?;
    Recording::new(modality, sample_rate, data, subject.flatten()).map_err(|e| data_err(path, e))
}

/// One recording of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub subject: u32,
    pub session: u32,
    pub recording: Recording,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub entries: Vec<Entry>,
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub subjects: usize,
    pub sessions: u32,
    pub seconds: f64,
    pub seed: u64,
    /// Per-subject duration overrides.
    pub seconds_for: Vec<(u32, f64)>,
}

impl GenSpec {
    pub fn seconds_of(&self, subject: u32) -> f64 {
        self.seconds_for
            .iter()
            .find(|(s, _)| *s == subject)
            .map_or(self.seconds, |(_, v)| *v)
    }
}

pub fn file_name(subject: u32, session: u32, modality: Modality) -> String {
    format!("s{subject:02}_sess{session}_{modality}.csv")
}

impl Dataset {
    /// Synthetic recordings for every subject, session and modality.
    pub fn generate(spec: &GenSpec) -> Result<Self> {
        if spec.subjects == 0 || spec.sessions == 0 {
            return Err(DeepKeyError::Parameter("need at least one subject and one session".into()));
        }
        let mut entries = Vec::new();
        for p in make_profiles(spec.subjects, spec.seed) {
            for session in 0..spec.sessions {
                let sc = SessionConfig::standard(session);
                let seconds = spec.seconds_of(p.id);
                for recording in [generate_eeg(&p, &sc, seconds)?, generate_gait(&p, &sc, seconds)?] {
                    entries.push(Entry {
                        subject: p.id,
                        session,
                        recording,
                    });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.subject).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn sessions(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.session).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn get(&self, subject: u32, session: u32, modality: Modality) -> Option<&Recording> {
        self.entries
            .iter()
            .find(|e| e.subject == subject && e.session == session && e.recording.modality() == modality)
            .map(|e| &e.recording)
    }

    /// Entries whose subject passes `keep`.
    pub fn filter(&self, keep: impl Fn(&Entry) -> bool) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    /// Writes every recording plus `manifest.csv`. A non-empty `dir` is an
    /// error unless `force` is set.
    pub fn write_dir(&self, dir: &Path, seed: u64, force: bool) -> Result<()> {
        if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
            return Err(DeepKeyError::Data(format!(
                "{} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        fs::create_dir_all(dir)?;
        let mut manifest = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            let rec = &e.recording;
            let name = file_name(e.subject, e.session, rec.modality());
            write_recording(
                &dir.join(&name),
                rec,
                &[("session", e.session.to_string()), ("seed", seed.to_string())],
            )?;
            let seconds = rec.len() as f64 / rec.sample_rate();
            writeln!(
                manifest,
                "{},{},{},{},{},{},{}",
                e.subject,
                e.session,
                rec.modality(),
                name,
                seconds,
                rec.sample_rate(),
                seed
            )
            .expect("string write");
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    /// Loads the recordings listed in `dir/manifest.csv`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| data_err(&path, e))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return Err(data_err(&path, format!("header must be `{MANIFEST_HEADER}`")));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(data_err(&path, format!("line {}: expected 7 fields", i + 2)));
            }
            let subject: u32 = f[0].parse().map_err(|e| data_err(&path, format!("line {}: {e}", i + 2)))?;
            let session: u32 = f[1].parse().map_err(|e| data_err(&path, format!("line {}: {e}", i + 2)))?;
            let modality: Modality = f[2].parse()?;
            let recording = read_recording(&dir.join(f[3]))?;
            if recording.modality() != modality {
                return Err(data_err(&path, format!("line {}: {} holds {}", i + 2, f[3], recording.modality())));
            }
            if recording.subject().is_some_and(|s| s != subject) {
                return Err(data_err(&path, format!("line {}: subject mismatch in {}", i + 2, f[3])));
            }
            entries.push(Entry {
                subject,
                session,
                recording,
            });
        }
        Ok(Self { entries })
    }
}
