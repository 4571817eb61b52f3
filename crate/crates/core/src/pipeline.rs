//! End-to-end authentication: gate, parallel EEG and gait identification,
//! and the consistency rule.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};

use crate::config::Config;
use crate::container::Container;
use crate::dsp::{delta_band, design_bandpass, segment, FilterCoefficients, Modality, Recording};
use crate::error::{DeepKeyError, Result};
use crate::gatekeeper::{filter_block, train_gate, GateModel, GateVerdict};
use crate::identifier::{train_identifier, CodeBank, Identifier, TrainingTrace};
use crate::metrics::StageTimings;

pub const STAGE_GATE: &str = "gate";
pub const STAGE_EEG: &str = "eeg_identification";
pub const STAGE_GAIT: &str = "gait_identification";
pub const STAGE_FUSION: &str = "fusion";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Approve,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthReason {
    ImpostorFiltered,
    IdMismatch,
    Approved,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Approve => "Approve",
            Verdict::Deny => "Deny",
        })
    }
}

impl fmt::Display for AuthReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuthReason::ImpostorFiltered => "ImpostorFiltered",
            AuthReason::IdMismatch => "IdMismatch",
            AuthReason::Approved => "Approved",
        })
    }
}

/// One authentication attempt: an EEG and a gait recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthRequest {
    pub eeg: Recording,
    pub gait: Recording,
    /// Carried for audit only; the decision identifies rather than verifies.
    pub claimed: Option<u32>,
}

impl AuthRequest {
    pub fn new(eeg: Recording, gait: Recording) -> Result<Self> {
        if eeg.modality() != Modality::Eeg || gait.modality() != Modality::Gait {
            return Err(DeepKeyError::Request(format!(
                "expected EEG and gait recordings, got {} and {}",
                eeg.modality(),
                gait.modality()
            )));
        }
        Ok(Self { eeg, gait, claimed: None })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthDecision {
    pub verdict: Verdict,
    pub reason: AuthReason,
    pub e_id: Option<u32>,
    pub g_id: Option<u32>,
    /// Mean decision sign over the gate block.
    pub gate_score: f64,
    pub timings: StageTimings,
}

impl AuthDecision {
    /// One JSON object describing the decision, without a timestamp.
    pub fn to_json(&self) -> serde_json::Value {
        let timings: serde_json::Map<String, serde_json::Value> = self
            .timings
            .stages
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "verdict": self.verdict.to_string(),
            "reason": self.reason.to_string(),
            "e_id": self.e_id,
            "g_id": self.g_id,
            "gate_score": self.gate_score,
            "timings": timings,
        })
    }
}

/// Screens the EEG of a request.
pub trait GateStage {
    fn screen(&self, eeg: &Recording) -> Result<(GateVerdict, f64)>;
}

/// Names the subject of a recording.
pub trait IdentifyStage: Sync {
    fn identify(&self, rec: &Recording) -> Result<u32>;
}

/// Request length limits: the gate block and the identification window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub gate_block: usize,
    pub window: usize,
}

impl Limits {
    pub fn check(&self, req: &AuthRequest) -> Result<()> {
        let eeg_min = self.gate_block.max(self.window);
        if req.eeg.len() < eeg_min {
            return Err(DeepKeyError::Request(format!(
                "EEG has {} instances, at least {eeg_min} needed",
                req.eeg.len()
            )));
        }
        if req.gait.len() < self.window {
            return Err(DeepKeyError::Request(format!(
                "gait has {} instances, at least {} needed",
                req.gait.len(),
                self.window
            )));
        }
        Ok(())
    }
}

/// The decision procedure over arbitrary stages. Identification of the two
/// modalities runs on two threads; it is skipped when the gate rejects.
pub fn authenticate_with(
    gate: &dyn GateStage,
    eeg: &dyn IdentifyStage,
    gait: &dyn IdentifyStage,
    limits: Limits,
    req: &AuthRequest,
) -> Result<AuthDecision> {
    limits.check(req)?;
    let mut timings = StageTimings::default();
    let (gate_verdict, gate_score) = timings.time(STAGE_GATE, || gate.screen(&req.eeg))?;
    if gate_verdict == GateVerdict::Impostor {
        return Ok(AuthDecision {
            verdict: Verdict::Deny,
            reason: AuthReason::ImpostorFiltered,
            e_id: None,
            g_id: None,
            gate_score,
            timings,
        });
    }

    let timed = |stage: &dyn IdentifyStage, rec: &Recording| {
        let start = Instant::now();
        let id = stage.identify(rec);
        (id, start.elapsed().as_secs_f64())
    };
    let ((e_id, e_time), (g_id, g_time)) = std::thread::scope(|s| {
        let gait_job = s.spawn(|| timed(gait, &req.gait));
        let eeg_result = timed(eeg, &req.eeg);
        (eeg_result, gait_job.join().expect("gait identification panicked"))
    });
    timings.stages.push((STAGE_EEG.into(), e_time));
    timings.stages.push((STAGE_GAIT.into(), g_time));
    let (e_id, g_id) = (e_id?, g_id?);

    let (verdict, reason) = timings.time(STAGE_FUSION, || {
        if e_id == g_id {
            (Verdict::Approve, AuthReason::Approved)
        } else {
            (Verdict::Deny, AuthReason::IdMismatch)
        }
    });
    Ok(AuthDecision {
        verdict,
        reason,
        e_id: Some(e_id),
        g_id: Some(g_id),
        gate_score,
        timings,
    })
}

/// Overall false rejection when the gate, gait and EEG stages err
/// independently.
pub fn compose_frr(filter_frr: f64, gait_acc: f64, eeg_acc: f64) -> Result<f64> {
    for (name, v) in [("filter_frr", filter_frr), ("gait_acc", gait_acc), ("eeg_acc", eeg_acc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(DeepKeyError::Parameter(format!("{name} = {v} is not a rate")));
        }
    }
    Ok(filter_frr + (1.0 - filter_frr) * ((1.0 - gait_acc) + gait_acc * (1.0 - eeg_acc)))
}

/// A trained gate plus both identifiers and the preprocessing they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub config: Config,
    pub filter: FilterCoefficients,
    pub gate: GateModel,
    pub eeg: Identifier,
    pub eeg_bank: CodeBank,
    pub gait: Identifier,
    pub gait_bank: CodeBank,
}

/// Training data of one subject and session.
#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub subject: u32,
    pub eeg: Option<Recording>,
    pub gait: Option<Recording>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub eeg: TrainingTrace,
    pub gait: TrainingTrace,
    pub gate_instances: usize,
    pub gate_support_vectors: usize,
}

pub fn eeg_filter(config: &Config) -> Result<FilterCoefficients> {
    design_bandpass(
        config.filter_order,
        config.band_low_hz,
        config.band_high_hz,
        Modality::Eeg.sample_rate(),
    )
}

/// The gate's view of an EEG recording: raw, or delta-band when configured.
fn gate_view(config: &Config, filter: &FilterCoefficients, eeg: &Recording) -> Result<Recording> {
    if config.gate_input_filtered {
        delta_band(filter, eeg)
    } else {
        Ok(eeg.clone())
    }
}

fn labelled(rec: &Recording, subject: u32) -> Result<Recording> {
    Recording::new(rec.modality(), rec.sample_rate(), rec.data().clone(), Some(subject))
}

/// Identification windows of one recording, delta-filtered for EEG.
pub fn windows_for(config: &Config, filter: &FilterCoefficients, rec: &Recording) -> Result<Vec<crate::dsp::Sample>> {
    let prepared = match rec.modality() {
        Modality::Eeg => delta_band(filter, rec)?,
        Modality::Gait => rec.clone(),
    };
    segment(&prepared, config.window, 0)
}

fn check_enrollment(data: &[Enrollment]) -> Result<()> {
    if data.is_empty() {
        return Err(DeepKeyError::Config("no enrollment data".into()));
    }
    for e in data {
        let (eeg, gait) = match (&e.eeg, &e.gait) {
            (Some(eeg), Some(gait)) => (eeg, gait),
            (None, _) => return Err(DeepKeyError::Config(format!("subject {} is missing EEG data", e.subject))),
            (_, None) => return Err(DeepKeyError::Config(format!("subject {} is missing gait data", e.subject))),
        };
        if eeg.modality() != Modality::Eeg || gait.modality() != Modality::Gait {
            return Err(DeepKeyError::Config(format!("subject {}: recordings have the wrong modality", e.subject)));
        }
    }
    Ok(())
}

/// Labelled identification windows of one modality, in enrollment order.
pub fn training_windows(
    data: &[Enrollment],
    config: &Config,
    filter: &FilterCoefficients,
    modality: Modality,
) -> Result<Vec<crate::dsp::Sample>> {
    check_enrollment(data)?;
    let mut out = Vec::new();
    for e in data {
        let rec = match modality {
            Modality::Eeg => e.eeg.as_ref(),
            Modality::Gait => e.gait.as_ref(),
        }
        .expect("checked");
        out.extend(windows_for(config, filter, &labelled(rec, e.subject)?)?);
    }
    Ok(out)
}

/// Trains one identifier on every enrolled recording of `modality`.
pub fn train_modality(
    data: &[Enrollment],
    config: &Config,
    modality: Modality,
) -> Result<(Identifier, CodeBank, TrainingTrace)> {
    config.validate()?;
    let filter = eeg_filter(config)?;
    let samples = training_windows(data, config, &filter, modality)?;
    train_identifier(&samples, &config.identifier_config(modality))
}

/// Trains the gate on every genuine EEG instance (evenly subsampled) and
/// both identifiers on every enrolled recording.
pub fn train_system(data: &[Enrollment], config: &Config) -> Result<(System, TrainSummary)> {
    config.validate()?;
    check_enrollment(data)?;
    let filter = eeg_filter(config)?;

    let mut gate_rows = Vec::new();
    for e in data {
        let eeg = e.eeg.as_ref().expect("checked");
        gate_rows.push(gate_view(config, &filter, eeg)?.into_data());
    }
    let views: Vec<_> = gate_rows.iter().map(|a| a.view()).collect();
    let all = ndarray::concatenate(Axis(0), &views).map_err(|e| DeepKeyError::Shape(e.to_string()))?;
    let n = all.nrows();
    let keep = config.gate_max_train.min(n);
    let picks: Vec<usize> = (0..keep).map(|i| i * n / keep).collect();
    let gate_data: Array2<f64> = all.select(Axis(0), &picks);
    let gate = train_gate(gate_data.view(), config.gate_params())?;

    let (eeg, eeg_bank, eeg_trace) = train_modality(data, config, Modality::Eeg)?;
    let (gait, gait_bank, gait_trace) = train_modality(data, config, Modality::Gait)?;
    if eeg.subjects != gait.subjects {
        return Err(DeepKeyError::Config("EEG and gait enrol different subjects".into()));
    }
    let summary = TrainSummary {
        eeg: eeg_trace,
        gait: gait_trace,
        gate_instances: keep,
        gate_support_vectors: gate.alphas.len(),
    };
    Ok((
        System {
            config: config.clone(),
            filter,
            gate,
            eeg,
            eeg_bank,
            gait,
            gait_bank,
        },
        summary,
    ))
}

struct SystemGate<'a>(&'a System);
struct SystemIdentifier<'a>(&'a System, Modality);

impl GateStage for SystemGate<'_> {
    fn screen(&self, eeg: &Recording) -> Result<(GateVerdict, f64)> {
        let sys = self.0;
        let view = gate_view(&sys.config, &sys.filter, eeg)?;
        let block = view.data().slice(ndarray::s![..sys.config.gate_block, ..]);
        filter_block(&sys.gate, block)
    }
}

impl IdentifyStage for SystemIdentifier<'_> {
    fn identify(&self, rec: &Recording) -> Result<u32> {
        let sys = self.0;
        let (model, bank) = match self.1 {
            Modality::Eeg => (&sys.eeg, &sys.eeg_bank),
            Modality::Gait => (&sys.gait, &sys.gait_bank),
        };
        model.identify_session(bank, &windows_for(&sys.config, &sys.filter, rec)?)
    }
}

impl System {
    pub fn limits(&self) -> Limits {
        Limits {
            gate_block: self.config.gate_block,
            window: self.config.window,
        }
    }

    pub fn authenticate(&self, req: &AuthRequest) -> Result<AuthDecision> {
        authenticate_with(
            &SystemGate(self),
            &SystemIdentifier(self, Modality::Eeg),
            &SystemIdentifier(self, Modality::Gait),
            self.limits(),
            req,
        )
    }

    /// Gate verdict of a request without identification.
    pub fn screen(&self, eeg: &Recording) -> Result<(GateVerdict, f64)> {
        SystemGate(self).screen(eeg)
    }

    pub fn identifier(&self, modality: Modality) -> (&Identifier, &CodeBank) {
        match modality {
            Modality::Eeg => (&self.eeg, &self.eeg_bank),
            Modality::Gait => (&self.gait, &self.gait_bank),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        let toml = self.config.to_toml_string();
        c.insert_vec("config.toml", toml.bytes().map(f64::from).collect())?;
        c.insert_vec("filter.b", self.filter.b.clone())?;
        c.insert_vec("filter.a", self.filter.a.clone())?;
        c.extend_prefixed("gate", &self.gate.to_container()?)?;
        c.extend_prefixed("eeg", &self.eeg.to_container(&self.eeg_bank)?)?;
        c.extend_prefixed("gait", &self.gait.to_container(&self.gait_bank)?)?;
        Ok(c)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.to_bytes())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let bytes = c
            .vector("config.toml")?
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(DeepKeyError::Format("config text is not bytes".into()))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        let text = String::from_utf8(bytes).map_err(|_| DeepKeyError::Format("config text is not UTF-8".into()))?;
        let config = Config::from_toml_str(&text)?;
        let mut filter = eeg_filter(&config)?;
        let (b, a) = (c.vector("filter.b")?.to_vec(), c.vector("filter.a")?.to_vec());
        if b.len() != filter.b.len() || a.len() != filter.a.len() {
            return Err(DeepKeyError::Format("stored filter has the wrong order".into()));
        }
        filter.b = b;
        filter.a = a;
        let gate = GateModel::from_container(&c.subset("gate"))?;
        let (eeg, eeg_bank) = Identifier::from_container(&c.subset("eeg"))?;
        let (gait, gait_bank) = Identifier::from_container(&c.subset("gait"))?;
        if eeg.modality != Modality::Eeg || gait.modality != Modality::Gait {
            return Err(DeepKeyError::Format("identifier sections hold the wrong modality".into()));
        }
        Ok(Self {
            config,
            filter,
            gate,
            eeg,
            eeg_bank,
            gait,
            gait_bank,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
