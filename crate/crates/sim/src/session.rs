//! End-to-end deployment session: the client senses and transmits each
//! sample at a bandwidth-dependent size, the server decodes and predicts.

use std::fmt::Write as _;
use std::io::Write as _;
use std::str::FromStr;

use mcl_core::data::LabeledDataset;
use mcl_core::mcs::{sense, SensingOperatorSet};
use mcl_core::model::{MclModel, TrainingMode};
use mcl_core::nn::argmax;
use mcl_core::tensor::subtensor_prefix;
use mcl_core::train::RateModel;
use mcl_core::{MaskDims, MaskSpec, Tensor};

use crate::channel::{pipe, read_frame, tcp_loopback, Receiver, Sender};
use crate::controller::choose_dims;
use crate::error::{Result, SimError};
use crate::packet::{decode_packet, encode_packet};
use crate::trace::ChannelTrace;

/// What the server runs on received measurements.
#[derive(Clone, Debug)]
pub enum ServerModel {
    /// One model; smaller measurements are zero-padded.
    Single(MclModel),
    /// Per-dims finetuned synthesis and network sharing the base model's sensing.
    Table { base: MclModel, rates: Vec<RateModel> },
}

impl ServerModel {
    pub fn base(&self) -> &MclModel {
        match self {
            ServerModel::Single(m) | ServerModel::Table { base: m, .. } => m,
        }
    }

    /// Every measurement size the server can handle.
    pub fn candidates(&self) -> Result<Vec<MaskDims>> {
        let meta = &self.base().meta;
        Ok(match self {
            ServerModel::Table { rates, .. } => {
                if rates.is_empty() {
                    return Err(SimError::Session("empty rate table".into()));
                }
                rates.iter().map(|r| r.dims.clone()).collect()
            }
            ServerModel::Single(_) => match (&meta.mask_spec, meta.mode) {
                (Some(spec), _) => spec.enumerate(),
                (None, TrainingMode::Single) => vec![MaskDims::new(meta.measurement_shape.clone())?],
                (None, _) => {
                    MaskSpec::new(vec![1; meta.measurement_shape.len()], meta.measurement_shape.clone())?
                        .enumerate()
                }
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RatePolicy {
    /// Follow the rate controller.
    Adaptive,
    /// Always send these dims regardless of bandwidth.
    Fixed(MaskDims),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    /// Seconds between sample acquisitions.
    pub deadline: f64,
    pub policy: RatePolicy,
    pub transport: Transport,
}

impl SessionConfig {
    pub fn new(deadline: f64) -> Self {
        Self {
            deadline,
            policy: RatePolicy::Adaptive,
            transport: Transport::InProcess,
        }
    }
}

/// Outcome for one transmitted sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u64,
    /// `None` when the packet could not be decoded.
    pub dims: Option<MaskDims>,
    pub bytes: usize,
    pub start: f64,
    pub arrival: f64,
    pub predicted: Option<usize>,
    pub label: usize,
    pub correct: bool,
    pub error: Option<String>,
}

impl SampleRecord {
    pub fn transmit_time(&self) -> f64 {
        self.arrival - self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionReport {
    pub t0: f64,
    pub records: Vec<SampleRecord>,
    pub duration: f64,
    pub samples_per_second: f64,
    pub mean_bytes: f64,
    pub accuracy: f64,
    pub correct_per_second: f64,
}

impl SessionReport {
    /// Aggregates are derived from the records alone.
    pub fn from_records(t0: f64, records: Vec<SampleRecord>) -> Self {
        let n = records.len() as f64;
        let duration = records.iter().map(|r| r.arrival).fold(t0, f64::max) - t0;
        let correct = records.iter().filter(|r| r.correct).count() as f64;
        let per_second = |x: f64| if duration > 0.0 { x / duration } else { 0.0 };
        let mean = |x: f64| if n > 0.0 { x / n } else { 0.0 };
        Self {
            t0,
            duration,
            samples_per_second: per_second(n),
            mean_bytes: mean(records.iter().map(|r| r.bytes as f64).sum()),
            accuracy: mean(correct),
            correct_per_second: per_second(correct),
            records,
        }
    }

    /// Correct predictions arriving in `[from, to)`, per second of that window.
    pub fn correct_per_second_between(&self, from: f64, to: f64) -> f64 {
        let hits = self
            .records
            .iter()
            .filter(|r| r.correct && r.arrival >= from && r.arrival < to)
            .count();
        hits as f64 / (to - from)
    }

    /// Line-delimited text: one `record` line per sample, then a `summary`
    /// line. Floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let dims = r.dims.as_ref().map_or("-".to_string(), |d| d.to_string());
            let pred = r.predicted.map_or("-".to_string(), |p| p.to_string());
            write!(
                s,
                "record sample_id={} dims={} bytes={} start={:?} transmit={:?} arrival={:?} predicted={} label={} correct={}",
                r.sample_id, dims, r.bytes, r.start, r.transmit_time(), r.arrival, pred, r.label, r.correct as u8
            )
            .unwrap();
            if let Some(e) = &r.error {
                write!(s, " error={}", e.replace(char::is_whitespace, "_")).unwrap();
            }
            s.push('\n');
        }
        writeln!(
            s,
            "summary t0={:?} samples={} duration={:?} samples_per_s={:?} mean_bytes={:?} accuracy={:?} correct_per_s={:?}",
            self.t0,
            self.records.len(),
            self.duration,
            self.samples_per_second,
            self.mean_bytes,
            self.accuracy,
            self.correct_per_second
        )
        .unwrap();
        s
    }
}

fn fields(line: &str) -> Result<std::collections::HashMap<&str, &str>> {
    line.split_whitespace()
        .skip(1)
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| SimError::Session(format!("malformed field {kv:?}")))
        })
        .collect()
}

fn field<T: FromStr>(map: &std::collections::HashMap<&str, &str>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| SimError::Session(format!("missing field {key}")))?
        .parse()
        .map_err(|_| SimError::Session(format!("bad value for {key}")))
}

fn optional<T: FromStr>(map: &std::collections::HashMap<&str, &str>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        Some(&"-") => Ok(None),
        _ => field(map, key).map(Some),
    }
}

impl FromStr for SessionReport {
    type Err = SimError;

    /// Parses the records of [`SessionReport::to_text`] and recomputes the
    /// aggregates; the summary line must agree with them.
    fn from_str(s: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut summary = None;
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let map = fields(line)?;
            match line.split_whitespace().next() {
                Some("record") => records.push(SampleRecord {
                    sample_id: field(&map, "sample_id")?,
                    dims: optional(&map, "dims")?,
                    bytes: field(&map, "bytes")?,
                    start: field(&map, "start")?,
                    arrival: field(&map, "arrival")?,
                    predicted: optional(&map, "predicted")?,
                    label: field(&map, "label")?,
                    correct: field::<u8>(&map, "correct")? == 1,
                    error: map.get("error").map(|e| e.to_string()),
                }),
                Some("summary") => summary = Some((field::<f64>(&map, "t0")?, line.to_string())),
                _ => return Err(SimError::Session(format!("unknown line {line:?}"))),
            }
        }
        let (t0, line) = summary.ok_or_else(|| SimError::Session("missing summary".into()))?;
        let report = SessionReport::from_records(t0, records);
        if report.to_text().lines().last() != Some(line.as_str()) {
            return Err(SimError::Session("summary does not match records".into()));
        }
        Ok(report)
    }
}

/// Shared acquisition/transmission timing: sample `n` is ready at
/// `t0 + n·deadline` and starts once the link is free.
struct Clock<'a> {
    trace: &'a ChannelTrace,
    deadline: f64,
    t0: f64,
    link_free: f64,
    count: u64,
}

impl<'a> Clock<'a> {
    fn new(trace: &'a ChannelTrace, deadline: f64) -> Self {
        Self {
            trace,
            deadline,
            t0: trace.start(),
            link_free: trace.start(),
            count: 0,
        }
    }

    fn next_start(&self) -> f64 {
        (self.t0 + self.count as f64 * self.deadline).max(self.link_free)
    }

    /// Books the transmission of `bytes` and returns `(start, arrival)`.
    fn send(&mut self, bytes: usize) -> Result<(f64, f64)> {
        let start = self.next_start();
        let arrival = self.trace.transmit_end(start, bytes)?;
        self.link_free = arrival;
        self.count += 1;
        Ok((start, arrival))
    }
}

struct Client<'a> {
    sensing: &'a SensingOperatorSet,
    candidates: &'a [MaskDims],
    max_dims: &'a [usize],
    policy: &'a RatePolicy,
    clock: Clock<'a>,
}

impl Client<'_> {
    fn run(mut self, samples: &[Tensor], mut tx: Sender) -> Result<()> {
        for (i, y) in samples.iter().enumerate() {
            let dims = match self.policy {
                RatePolicy::Fixed(d) => d.clone(),
                RatePolicy::Adaptive => {
                    let rate = self.clock.trace.rate_at(self.clock.next_start());
                    choose_dims(self.candidates, self.max_dims, rate * self.clock.deadline)
                }
            };
            let z_bar = subtensor_prefix(&sense(y, self.sensing)?, &dims)?;
            let packet = encode_packet(&z_bar, i as u64)?;
            self.clock.send(packet.len())?;
            tx.write_all(&packet)?;
        }
        tx.flush()?;
        Ok(())
    }
}

enum Predictor {
    Single(MclModel),
    Table(Vec<(MaskDims, MclModel)>),
}

impl Predictor {
    fn new(model: &ServerModel) -> Result<Self> {
        Ok(match model {
            ServerModel::Single(m) => Predictor::Single(m.clone()),
            ServerModel::Table { base, rates } => Predictor::Table(
                rates
                    .iter()
                    .map(|r| Ok((r.dims.clone(), base.with_rate_model(r)?)))
                    .collect::<Result<_>>()?,
            ),
        })
    }

    fn predict(&self, z_bar: &Tensor) -> Result<usize> {
        let model = match self {
            Predictor::Single(m) => m,
            Predictor::Table(table) => {
                &table
                    .iter()
                    .find(|(d, _)| d.as_slice() == z_bar.shape())
                    .ok_or_else(|| SimError::Session(format!("no rate model for {:?}", z_bar.shape())))?
                    .1
            }
        };
        Ok(argmax(&model.predict_received(z_bar)?))
    }
}

struct Server<'a> {
    predictor: Predictor,
    candidates: &'a [MaskDims],
    labels: &'a [usize],
    clock: Clock<'a>,
}

impl Server<'_> {
    fn receive(&mut self, frame: &[u8]) -> Result<SampleRecord> {
        let fallback_id = self.clock.count;
        let (start, arrival) = self.clock.send(frame.len())?;
        let mut record = SampleRecord {
            sample_id: fallback_id,
            dims: None,
            bytes: frame.len(),
            start,
            arrival,
            predicted: None,
            label: 0,
            correct: false,
            error: None,
        };
        let outcome = decode_packet(frame).and_then(|(z_bar, id)| {
            record.sample_id = id;
            let label = *self
                .labels
                .get(id as usize)
                .ok_or_else(|| SimError::Session(format!("unknown sample id {id}")))?;
            record.label = label;
            let dims = MaskDims::new(z_bar.shape().to_vec())?;
            if !self.candidates.contains(&dims) {
                return Err(SimError::InvalidDims(dims.to_vec()));
            }
            record.dims = Some(dims);
            self.predictor.predict(&z_bar)
        });
        match outcome {
            Ok(p) => {
                record.predicted = Some(p);
                record.correct = p == record.label;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        Ok(record)
    }

    fn run(mut self, mut rx: Receiver) -> Result<SessionReport> {
        let t0 = self.clock.t0;
        let mut records = Vec::new();
        while let Some(frame) = read_frame(&mut rx)? {
            records.push(self.receive(&frame)?);
        }
        Ok(SessionReport::from_records(t0, records))
    }
}

/// Streams every sample of `data` from a simulated sensor to the server
/// over `trace`. The client uses the base model's single sensing set.
pub fn run_session(
    model: &ServerModel,
    data: &LabeledDataset,
    trace: &ChannelTrace,
    cfg: &SessionConfig,
) -> Result<SessionReport> {
    if !(cfg.deadline > 0.0) {
        return Err(SimError::Session("deadline must be positive".into()));
    }
    let base = model.base();
    if data.input_shape().is_some_and(|s| s != base.meta.input_shape.as_slice()) {
        return Err(SimError::Session("dataset does not match the model input shape".into()));
    }
    let candidates = model.candidates()?;
    if let RatePolicy::Fixed(d) = &cfg.policy {
        if !candidates.contains(d) {
            return Err(SimError::InvalidDims(d.to_vec()));
        }
    }
    let (tx, rx) = match cfg.transport {
        Transport::InProcess => pipe()?,
        Transport::Tcp => tcp_loopback()?,
    };
    let client = Client {
        sensing: &base.sensing,
        candidates: &candidates,
        max_dims: &base.meta.measurement_shape,
        policy: &cfg.policy,
        clock: Clock::new(trace, cfg.deadline),
    };
    let server = Server {
        predictor: Predictor::new(model)?,
        candidates: &candidates,
        labels: &data.labels,
        clock: Clock::new(trace, cfg.deadline),
    };
    std::thread::scope(|scope| {
        let sender = scope.spawn(|| client.run(&data.samples, tx));
        let report = server.run(rx);
        let sent = sender
            .join()
            .map_err(|_| SimError::Session("client thread panicked".into()))?;
        sent?;
        report
    })
}
