//! Evaluation protocol: temporal train/test split, held-out identification
//! accuracy, genuine and impostor request streams, FAR/FRR, datasize sweep
//! and CSV reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::dataset::Dataset;
use crate::dsp::{FilterCoefficients, Modality, Recording};
use crate::error::{DeepKeyError, Result};
use crate::identifier::{majority_vote, CodeBank, Identifier};
use crate::metrics::{classification_report, far_frr, latency_stats, roc_auc, roc_points, ClassificationReport, FarFrr};
use crate::pipeline::{
    compose_frr, eeg_filter, train_modality, train_system, windows_for, AuthDecision, AuthReason, AuthRequest,
    Enrollment, System, TrainSummary, Verdict,
};

/// Splits a recording in time: the training part is the first
/// `floor(n * split)` instances shortened to `fraction` of that, the test
/// part is everything after `floor(n * split)`.
pub fn temporal_split(rec: &Recording, split: f64, fraction: f64) -> Result<(Recording, Option<Recording>)> {
    if !(split > 0.0 && split <= 1.0 && fraction > 0.0 && fraction <= 1.0) {
        return Err(DeepKeyError::Parameter(format!(
            "split {split} and fraction {fraction} must lie in (0, 1]"
        )));
    }
    let n = rec.len();
    let cut = (n as f64 * split).floor() as usize;
    let train_len = (cut as f64 * fraction).floor() as usize;
    if train_len == 0 {
        return Err(DeepKeyError::Data(format!("{n} instances leave no training data")));
    }
    let test = if cut < n { Some(rec.slice(cut, n)?) } else { None };
    Ok((rec.slice(0, train_len)?, test))
}

/// Test tail of one subject and session.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub subject: u32,
    pub session: u32,
    pub eeg: Recording,
    pub gait: Recording,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub enrollment: Vec<Enrollment>,
    pub held_out: Vec<HeldOut>,
}

fn recording_of(data: &Dataset, subject: u32, session: u32, modality: Modality) -> Result<&Recording> {
    data.get(subject, session, modality).ok_or_else(|| {
        DeepKeyError::Config(format!(
            "subject {subject} is missing {modality} data for session {session}"
        ))
    })
}

/// Temporal split of every recording of `subjects`.
pub fn partition(data: &Dataset, subjects: &[u32], split: f64, fraction: f64) -> Result<Partition> {
    let mut enrollment = Vec::new();
    let mut held_out = Vec::new();
    for &subject in subjects {
        let sessions: BTreeSet<u32> = data.entries.iter().filter(|e| e.subject == subject).map(|e| e.session).collect();
        if sessions.is_empty() {
            return Err(DeepKeyError::Config(format!("subject {subject} has no recordings")));
        }
        for session in sessions {
            let (eeg_train, eeg_test) = temporal_split(recording_of(data, subject, session, Modality::Eeg)?, split, fraction)?;
            let (gait_train, gait_test) =
                temporal_split(recording_of(data, subject, session, Modality::Gait)?, split, fraction)?;
            enrollment.push(Enrollment {
                subject,
                eeg: Some(eeg_train),
                gait: Some(gait_train),
            });
            if let (Some(eeg), Some(gait)) = (eeg_test, gait_test) {
                held_out.push(HeldOut {
                    subject,
                    session,
                    eeg,
                    gait,
                });
            }
        }
    }
    Ok(Partition { enrollment, held_out })
}

/// Held-out identification results of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEval {
    pub modality: Modality,
    /// Class index to subject id.
    pub subjects: Vec<u32>,
    /// Per-window scores.
    pub report: ClassificationReport,
    /// One-vs-rest AUC per class over KNN vote fractions.
    pub auc: Vec<Option<f64>>,
    pub roc: Vec<Vec<(f64, f64)>>,
    /// Majority vote over each held-out tail.
    pub session_accuracy: f64,
}

impl ModalityEval {
    pub fn accuracy(&self) -> f64 {
        self.report.accuracy
    }
}

/// Scores an identifier on the held-out tails.
pub fn score_identifier(
    model: &Identifier,
    bank: &CodeBank,
    config: &Config,
    filter: &FilterCoefficients,
    held_out: &[HeldOut],
) -> Result<ModalityEval> {
    let k = model.classes();
    let (mut y_true, mut y_pred, mut scores) = (Vec::new(), Vec::new(), vec![Vec::new(); k]);
    let (mut sessions, mut sessions_right) = (0usize, 0usize);
    for h in held_out {
        let class = model
            .class_of(h.subject)
            .ok_or_else(|| DeepKeyError::Data(format!("subject {} is not enrolled", h.subject)))?;
        let rec = match model.modality {
            Modality::Eeg => &h.eeg,
            Modality::Gait => &h.gait,
        };
        let votes = model.votes(bank, &windows_for(config, filter, rec)?)?;
        if votes.is_empty() {
            continue;
        }
        for v in &votes {
            y_true.push(class);
            y_pred.push(v.label);
            for (c, s) in scores.iter_mut().enumerate() {
                s.push(v.fractions[c]);
            }
        }
        sessions += 1;
        sessions_right += usize::from(majority_vote(&votes) == Some(class));
    }
    if y_true.is_empty() {
        return Err(DeepKeyError::Data("no held-out windows to score".into()));
    }
    let report = classification_report(&y_true, &y_pred, k)?;
    let mut auc = Vec::with_capacity(k);
    let mut roc = Vec::with_capacity(k);
    for (c, s) in scores.iter().enumerate() {
        let labels: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        auc.push(roc_auc(s, &labels));
        roc.push(roc_points(s, &labels));
    }
    Ok(ModalityEval {
        modality: model.modality,
        subjects: model.subjects.clone(),
        report,
        auc,
        roc,
        session_accuracy: sessions_right as f64 / sessions as f64,
    })
}

/// A system trained on the training parts of `subjects`, with its held-out
/// scores.
#[derive(Debug, Clone)]
pub struct Trained {
    pub system: System,
    pub summary: TrainSummary,
    pub held_out: Vec<HeldOut>,
    pub eeg: ModalityEval,
    pub gait: ModalityEval,
}

pub fn train_on_dataset(data: &Dataset, subjects: &[u32], config: &Config, fraction: f64) -> Result<Trained> {
    let part = partition(data, subjects, config.train_split, fraction)?;
    let (system, summary) = train_system(&part.enrollment, config)?;
    let eeg = score_identifier(&system.eeg, &system.eeg_bank, config, &system.filter, &part.held_out)?;
    let gait = score_identifier(&system.gait, &system.gait_bank, config, &system.filter, &part.held_out)?;
    Ok(Trained {
        system,
        summary,
        held_out: part.held_out,
        eeg,
        gait,
    })
}

/// Held-out accuracy at one training fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub eeg: Option<f64>,
    pub gait: Option<f64>,
}

/// Retrains the identifiers of `modalities` at each training fraction.
pub fn datasize_sweep(
    data: &Dataset,
    subjects: &[u32],
    config: &Config,
    fractions: &[f64],
    modalities: &[Modality],
) -> Result<Vec<SweepRow>> {
    let filter = eeg_filter(config)?;
    let mut rows = Vec::new();
    for &fraction in fractions {
        let part = partition(data, subjects, config.train_split, fraction)?;
        let mut row = SweepRow {
            fraction,
            eeg: None,
            gait: None,
        };
        for &m in modalities {
            let (model, bank, _) = train_modality(&part.enrollment, config, m)?;
            let acc = score_identifier(&model, &bank, config, &filter, &part.held_out)?.accuracy();
            match m {
                Modality::Eeg => row.eeg = Some(acc),
                Modality::Gait => row.gait = Some(acc),
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Parses a percentage list such as `20,40,60,80,100` into fractions.
pub fn parse_fractions(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let pct: f64 = t
                .trim()
                .parse()
                .map_err(|_| DeepKeyError::Parameter(format!("bad percentage `{t}`")))?;
            if pct > 0.0 && pct <= 100.0 {
                Ok(pct / 100.0)
            } else {
                Err(DeepKeyError::Parameter(format!("percentage {pct} outside (0, 100]")))
            }
        })
        .collect()
}

/// Splits an EEG and a gait recording into aligned requests of `gate_block`
/// EEG instances and the gait covering the same time span.
pub fn block_requests(eeg: &Recording, gait: &Recording, gate_block: usize) -> Result<Vec<AuthRequest>> {
    let ratio = gait.sample_rate() / eeg.sample_rate();
    let mut out = Vec::new();
    for j in 0.. {
        let (e0, e1) = (j * gate_block, (j + 1) * gate_block);
        let g0 = (e0 as f64 * ratio).floor() as usize;
        let g1 = (e1 as f64 * ratio).floor() as usize;
        if e1 > eeg.len() || g1 > gait.len() || g1 == g0 {
            break;
        }
        out.push(AuthRequest::new(eeg.slice(e0, e1)?, gait.slice(g0, g1)?)?);
    }
    Ok(out)
}

/// One evaluated request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub genuine: bool,
    pub subject: u32,
    pub session: u32,
    pub block: usize,
    pub decision: AuthDecision,
}

impl RequestRecord {
    pub fn gate_passed(&self) -> bool {
        self.decision.reason != AuthReason::ImpostorFiltered
    }

    pub fn accepted(&self) -> bool {
        self.decision.verdict == Verdict::Approve
    }

    pub fn correctly_identified(&self) -> bool {
        self.accepted() && self.decision.e_id == Some(self.subject)
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub eeg: ModalityEval,
    pub gait: ModalityEval,
    pub gate: FarFrr,
    pub fused: FarFrr,
    /// Overall FRR composed from the gate FRR and the per-window accuracies.
    pub composed_frr: Option<f64>,
    pub requests: Vec<RequestRecord>,
}

/// Runs every genuine held-out block and every impostor block through the
/// full pipeline and checks that accepted requests passed the gate.
pub fn evaluate(system: &System, data: &Dataset, impostors: &[u32]) -> Result<EvalReport> {
    let config = &system.config;
    let enrolled = system.eeg.subjects.clone();
    if let Some(s) = impostors.iter().find(|s| enrolled.contains(s)) {
        return Err(DeepKeyError::Config(format!("impostor subject {s} is enrolled")));
    }
    let part = partition(data, &enrolled, config.train_split, 1.0)?;
    let eeg = score_identifier(&system.eeg, &system.eeg_bank, config, &system.filter, &part.held_out)?;
    let gait = score_identifier(&system.gait, &system.gait_bank, config, &system.filter, &part.held_out)?;

    let mut streams: Vec<(bool, u32, u32, Recording, Recording)> = part
        .held_out
        .into_iter()
        .map(|h| (true, h.subject, h.session, h.eeg, h.gait))
        .collect();
    for &subject in impostors {
        let sessions: BTreeSet<u32> = data.entries.iter().filter(|e| e.subject == subject).map(|e| e.session).collect();
        if sessions.is_empty() {
            return Err(DeepKeyError::Config(format!("impostor subject {subject} has no recordings")));
        }
        for session in sessions {
            let e = recording_of(data, subject, session, Modality::Eeg)?.clone();
            let g = recording_of(data, subject, session, Modality::Gait)?.clone();
            streams.push((false, subject, session, e, g));
        }
    }

    let mut requests = Vec::new();
    for (genuine, subject, session, e, g) in streams {
        for (block, req) in block_requests(&e, &g, config.gate_block)?.into_iter().enumerate() {
            let decision = system.authenticate(&req)?;
            requests.push(RequestRecord {
                genuine,
                subject,
                session,
                block,
                decision,
            });
        }
    }
    if let Some(r) = requests.iter().find(|r| r.accepted() && !r.gate_passed()) {
        return Err(DeepKeyError::Training(format!(
            "request of subject {} block {} was accepted without passing the gate",
            r.subject, r.block
        )));
    }

    let gate = far_frr(&requests.iter().map(|r| (r.genuine, r.gate_passed())).collect::<Vec<_>>());
    let fused = far_frr(&requests.iter().map(|r| (r.genuine, r.accepted())).collect::<Vec<_>>());
    let composed_frr = match gate.frr {
        Some(f) => Some(compose_frr(f, gait.accuracy(), eeg.accuracy())?),
        None => None,
    };
    Ok(EvalReport {
        eeg,
        gait,
        gate,
        fused,
        composed_frr,
        requests,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn classification_csv(m: &ModalityEval) -> String {
    let mut s = String::from("class,subject,precision,recall,f1,support,auc\n");
    for (c, pc) in m.report.per_class.iter().enumerate() {
        let _ = writeln!(
            s,
            "{c},{},{},{},{},{},{}",
            m.subjects[c],
            pc.precision,
            pc.recall,
            pc.f1,
            pc.support,
            opt(m.auc[c])
        );
    }
    let r = &m.report;
    let _ = writeln!(s, "macro,NA,{},{},{},{},NA", r.macro_precision, r.macro_recall, r.macro_f1, r.confusion.sum());
    s
}

fn confusion_csv(m: &ModalityEval) -> String {
    let mut s = String::from("true\\pred");
    for subject in &m.subjects {
        let _ = write!(s, ",{subject}");
    }
    s.push('\n');
    for (c, row) in m.report.confusion.rows().into_iter().enumerate() {
        let _ = write!(s, "{}", m.subjects[c]);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn roc_csv(m: &ModalityEval) -> String {
    let mut s = String::from("# one-vs-rest; score = share of the k nearest codes voting for the class\nsubject,fpr,tpr\n");
    for (c, pts) in m.roc.iter().enumerate() {
        for (fpr, tpr) in pts {
            let _ = writeln!(s, "{},{fpr},{tpr}", m.subjects[c]);
        }
    }
    s
}

fn far_frr_csv(report: &EvalReport) -> String {
    let mut s = String::from("stage,far,frr,impostors,accepted_impostors,genuines,rejected_genuines\n");
    for (name, r) in [("gate", &report.gate), ("fused", &report.fused)] {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{}",
            opt(r.far),
            opt(r.frr),
            r.impostors,
            r.accepted_impostors,
            r.genuines,
            r.rejected_genuines
        );
    }
    s
}

fn requests_csv(report: &EvalReport) -> String {
    let mut s = String::from("genuine,subject,session,block,verdict,reason,e_id,g_id,gate_score\n");
    let id = |v: Option<u32>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for r in &report.requests {
        let d = &r.decision;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.genuine,
            r.subject,
            r.session,
            r.block,
            d.verdict,
            d.reason,
            id(d.e_id),
            id(d.g_id),
            d.gate_score
        );
    }
    s
}

pub fn summary_text(report: &EvalReport) -> String {
    let misidentified = report
        .requests
        .iter()
        .filter(|r| r.genuine && r.accepted() && !r.correctly_identified())
        .count();
    let mut s = String::new();
    let _ = writeln!(s, "eeg_accuracy={}", report.eeg.accuracy());
    let _ = writeln!(s, "eeg_session_accuracy={}", report.eeg.session_accuracy);
    let _ = writeln!(s, "gait_accuracy={}", report.gait.accuracy());
    let _ = writeln!(s, "gait_session_accuracy={}", report.gait.session_accuracy);
    let _ = writeln!(s, "gate_far={}", opt(report.gate.far));
    let _ = writeln!(s, "gate_frr={}", opt(report.gate.frr));
    let _ = writeln!(s, "fused_far={}", opt(report.fused.far));
    let _ = writeln!(s, "fused_frr={}", opt(report.fused.frr));
    let _ = writeln!(s, "composed_frr={}", opt(report.composed_frr));
    let _ = writeln!(s, "genuine_requests={}", report.fused.genuines);
    let _ = writeln!(s, "impostor_requests={}", report.fused.impostors);
    let _ = writeln!(s, "genuine_misidentified={misidentified}");
    s
}

/// Per-stage wall-clock statistics. Kept apart from the other reports since
/// it varies between runs.
pub fn latency_csv(report: &EvalReport) -> String {
    let mut names: Vec<String> = Vec::new();
    for r in &report.requests {
        for (n, _) in &r.decision.timings.stages {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    let mut s = String::from("stage,mean_s,p95_s,count\n");
    let mut row = |name: &str, samples: Vec<f64>| {
        if let Some(st) = latency_stats(&samples) {
            let _ = writeln!(s, "{name},{:.6},{:.6},{}", st.mean, st.p95, st.count);
        }
    };
    for n in &names {
        row(n, report.requests.iter().filter_map(|r| r.decision.timings.get(n)).collect());
    }
    row("total", report.requests.iter().map(|r| r.decision.timings.total()).collect());
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("train_fraction,eeg_accuracy,gait_accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.fraction, opt(r.eeg), opt(r.gait));
    }
    s
}

/// Report files that are identical across runs with the same inputs.
pub const DETERMINISTIC_REPORTS: [&str; 9] = [
    "eeg_classification.csv",
    "eeg_confusion.csv",
    "eeg_roc.csv",
    "gait_classification.csv",
    "gait_confusion.csv",
    "gait_roc.csv",
    "far_frr.csv",
    "requests.csv",
    "summary.txt",
];

pub const LATENCY_REPORT: &str = "latency.csv";
pub const SWEEP_REPORT: &str = "datasize_sweep.csv";

/// Writes every report into `dir` and returns the paths written.
pub fn write_reports(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let contents = [
        classification_csv(&report.eeg),
        confusion_csv(&report.eeg),
        roc_csv(&report.eeg),
        classification_csv(&report.gait),
        confusion_csv(&report.gait),
        roc_csv(&report.gait),
        far_frr_csv(report),
        requests_csv(report),
        summary_text(report),
    ];
    let mut written = Vec::new();
    for (name, text) in DETERMINISTIC_REPORTS.iter().zip(contents) {
        let p = dir.join(name);
        fs::write(&p, text)?;
        written.push(p);
    }
    let p = dir.join(LATENCY_REPORT);
    fs::write(&p, latency_csv(report))?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp(modality: Modality, n: usize) -> Recording {
        let d = modality.channels();
        let data = Array2::from_shape_fn((n, d), |(i, _)| i as f64);
        Recording::new(modality, modality.sample_rate(), data, None).unwrap()
    }

    #[test]
    fn split_is_temporal() {
        let rec = ramp(Modality::Eeg, 100);
        let (train, test) = temporal_split(&rec, 0.875, 1.0).unwrap();
        assert_eq!(train.len(), 87);
        let test = test.unwrap();
        assert_eq!(test.len(), 13);
        assert_eq!(test.data()[[0, 0]], 87.0);
        let (small, test2) = temporal_split(&rec, 0.875, 0.2).unwrap();
        assert_eq!(small.len(), 17);
        assert_eq!(test2.unwrap(), test);
        assert!(temporal_split(&rec, 1.0, 1.0).unwrap().1.is_none());
        assert!(temporal_split(&rec, 0.875, 0.001).is_err());
    }

    #[test]
    fn blocks_cover_the_same_time_span() {
        let e = ramp(Modality::Eeg, 1000);
        let g = ramp(Modality::Gait, 600);
        let reqs = block_requests(&e, &g, 200).unwrap();
        assert_eq!(reqs.len(), 4);
        for (j, r) in reqs.iter().enumerate() {
            assert_eq!(r.eeg.len(), 200);
            assert_eq!(r.gait.len(), 125);
            assert_eq!(r.eeg.data()[[0, 0]], (200 * j) as f64);
            assert_eq!(r.gait.data()[[0, 0]], (125 * j) as f64);
        }
    }

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_fractions("20, 100").unwrap(), vec![0.2, 1.0]);
        assert!(parse_fractions("0").is_err());
        assert!(parse_fractions("x").is_err());
    }

    #[test]
    fn undefined_rates_are_marked() {
        assert_eq!(opt(None), "NA");
        assert_eq!(opt(Some(0.5)), "0.5");
    }
}
