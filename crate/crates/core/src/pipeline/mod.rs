//! Rollout data plane: generation workers, a serializer pool, an object
//! store and a trainer running three consuming stages. Streaming
//! serialization and the shared-input cache are switchable so their effect
//! on step time can be measured.

pub mod bench;
pub mod codec;
pub mod store;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam::channel::bounded;
use rand::{Rng, RngCore};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::stream;
use codec::{deserialize, serialize, RolloutPayload};
use store::{object_store, Transport};

pub const MIB: usize = 1 << 20;
pub const STAGE_NAMES: [&str; 3] = ["logprob", "reference", "update"];

const TAG_DURATION: u64 = 0x6475_7261;
const TAG_CONTENT: u64 = 0x636f_6e74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DurationDist {
    #[default]
    Uniform,
    /// Mostly uniform, with occasional stragglers 1.5 to 2.5 times the
    /// upper bound.
    LongTail,
}

impl DurationDist {
    pub fn name(self) -> &'static str {
        match self {
            DurationDist::Uniform => "uniform",
            DurationDist::LongTail => "long_tail",
        }
    }
}

impl std::str::FromStr for DurationDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(DurationDist::Uniform),
            "long_tail" | "longtail" => Ok(DurationDist::LongTail),
            _ => Err(Error::config(format!("unknown duration distribution `{s}`"))),
        }
    }
}

/// Simulated costs. Real work (copying, encoding) happens too, but each
/// unit is padded to its modeled duration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostModel {
    pub gen_ms: (f64, f64),
    pub dist: DurationDist,
    pub ser_ms_per_mib: f64,
    pub deser_ms_per_mib: f64,
    pub stage_ms: [f64; 3],
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            gen_ms: (70.0, 130.0),
            dist: DurationDist::Uniform,
            ser_ms_per_mib: 2.5,
            deser_ms_per_mib: 1.875,
            stage_ms: [20.0, 20.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepConfig {
    pub workers: usize,
    pub rollouts: usize,
    pub blob_bytes: usize,
    pub tokens_per_rollout: usize,
    pub ipss: bool,
    pub iptc: bool,
    /// Defaults to `workers / 2` (at least 1).
    pub serializer_threads: Option<usize>,
    pub transport: Transport,
    pub cost: CostModel,
    pub seed: u64,
    pub step: u64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            workers: 8,
            rollouts: 16,
            blob_bytes: 4 * MIB,
            tokens_per_rollout: 9,
            ipss: false,
            iptc: false,
            serializer_threads: None,
            transport: Transport::InProcess,
            cost: CostModel::default(),
            seed: 0,
            step: 0,
        }
    }
}

impl StepConfig {
    pub fn serializers(&self) -> usize {
        self.serializer_threads.unwrap_or(self.workers / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        if self.rollouts == 0 {
            return Err(Error::config("rollouts must be at least 1"));
        }
        if self.serializer_threads == Some(0) {
            return Err(Error::config("serializer_threads must be at least 1"));
        }
        let c = &self.cost;
        let (lo, hi) = c.gen_ms;
        let costs = [
            lo,
            hi,
            c.ser_ms_per_mib,
            c.deser_ms_per_mib,
            c.stage_ms[0],
            c.stage_ms[1],
            c.stage_ms[2],
        ];
        if costs.iter().any(|v| !v.is_finite() || *v < 0.0) || lo > hi {
            return Err(Error::config(
                "cost model values must be finite, nonnegative, with gen_ms lo <= hi",
            ));
        }
        Ok(())
    }

    fn blob_mib(&self) -> f64 {
        self.blob_bytes as f64 / MIB as f64
    }

    /// Generation duration of each rollout, in ms.
    pub fn gen_durations(&self) -> Vec<f64> {
        let (lo, hi) = self.cost.gen_ms;
        (0..self.rollouts as u64)
            .map(|id| {
                let mut rng = stream(&[self.seed, TAG_DURATION, self.step, id]);
                let base = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                match self.cost.dist {
                    DurationDist::LongTail if rng.gen_bool(0.125) => hi * rng.gen_range(1.5..2.5),
                    _ => base,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub step: u64,
    pub batch: u64,
}

/// Decoded batches shared across stages. One writer per key; published
/// entries are immutable.
#[derive(Default)]
pub struct TensorCache {
    entries: Mutex<HashMap<CacheKey, Arc<Vec<RolloutPayload>>>>,
}

impl TensorCache {
    /// Returns the cached entry, or loads and publishes it. The flag is true
    /// when this call did the load.
    pub fn get_or_load<F>(&self, key: CacheKey, load: F) -> Result<(Arc<Vec<RolloutPayload>>, bool)>
    where
        F: FnOnce() -> Result<Vec<RolloutPayload>>,
    {
        let mut map = self.entries.lock().map_err(|_| Error::data("tensor cache poisoned"))?;
        if let Some(hit) = map.get(&key) {
            return Ok((Arc::clone(hit), false));
        }
        let batch = Arc::new(load()?);
        map.insert(key, Arc::clone(&batch));
        Ok((batch, true))
    }

    pub fn evict_step(&self, step: u64) {
        if let Ok(mut map) = self.entries.lock() {
            map.retain(|k, _| k.step != step);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepTiming {
    pub gen_ms: f64,
    /// Serialization time left after the last rollout finished generating.
    pub ser_critical_ms: f64,
    pub dispatch_ms: f64,
    /// Decodes of the batch per consuming stage.
    pub deser_per_stage: [u32; 3],
    pub step_ms: f64,
}

impl StepTiming {
    pub fn deser_count(&self) -> u32 {
        self.deser_per_stage.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutTrace {
    pub id: u64,
    pub gen_ms: f64,
    pub completed_ms: f64,
    pub ser_start_ms: f64,
    pub ser_end_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub timing: StepTiming,
    /// sha256 of the batch the update stage consumed.
    pub batch_hash: String,
    pub traces: Vec<RolloutTrace>,
}

fn ms_since(t0: Instant, t: Instant) -> f64 {
    t.saturating_duration_since(t0).as_secs_f64() * 1e3
}

fn pad_until(start: Instant, ms: f64) {
    let deadline = start + Duration::from_secs_f64(ms.max(0.0) / 1e3);
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

fn make_payload(cfg: &StepConfig, id: u64) -> RolloutPayload {
    let mut rng = stream(&[cfg.seed, TAG_CONTENT, cfg.step, id]);
    let tokens = (0..cfg.tokens_per_rollout).map(|_| rng.gen_range(0..82)).collect();
    let logprobs = (0..cfg.tokens_per_rollout).map(|_| -rng.gen_range(0.0..5.0)).collect();
    let mut blob = vec![0u8; cfg.blob_bytes];
    rng.fill_bytes(&mut blob);
    RolloutPayload {
        id,
        step: cfg.step,
        tokens,
        logprobs,
        blob,
        completed_us: 0,
    }
}

/// Content hash of a batch; timestamps are excluded.
pub fn batch_hash(batch: &[RolloutPayload]) -> String {
    let mut h = Sha256::new();
    for p in batch {
        h.update(p.id.to_le_bytes());
        h.update(p.step.to_le_bytes());
        for t in &p.tokens {
            h.update(t.to_le_bytes());
        }
        for l in &p.logprobs {
            h.update(l.to_le_bytes());
        }
        h.update((p.blob.len() as u64).to_le_bytes());
        h.update(&p.blob);
    }
    hex::encode(h.finalize())
}

#[derive(Default)]
struct Traces(Mutex<Vec<RolloutTrace>>);

impl Traces {
    fn update(&self, id: u64, f: impl FnOnce(&mut RolloutTrace)) {
        let mut v = self.0.lock().expect("trace lock");
        f(&mut v[id as usize]);
    }
}

fn decode_batch(frames: &[Vec<u8>], cfg: &StepConfig) -> Result<Vec<RolloutPayload>> {
    let per_frame_ms = cfg.cost.deser_ms_per_mib * cfg.blob_mib();
    let mut batch = frames
        .iter()
        .map(|f| {
            let start = Instant::now();
            let p = deserialize(f)?;
            pad_until(start, per_frame_ms);
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    batch.sort_by_key(|p| p.id);
    let ids_ok = batch.iter().enumerate().all(|(i, p)| p.id == i as u64);
    if batch.len() != cfg.rollouts || !ids_ok {
        return Err(Error::data(format!(
            "step {}: expected rollouts 0..{}, received {} payloads",
            cfg.step,
            cfg.rollouts,
            batch.len()
        )));
    }
    if let Some(p) = batch
        .iter()
        .find(|p| p.step != cfg.step || p.blob.len() != cfg.blob_bytes)
    {
        return Err(Error::data(format!("rollout {} has the wrong step or blob size", p.id)));
    }
    Ok(batch)
}

/// Runs one generate / log-prob / reference / update step.
pub fn run_step(cfg: &StepConfig, cache: &TensorCache) -> Result<StepOutcome> {
    cfg.validate()?;
    let durations = cfg.gen_durations();
    let ser_ms = cfg.cost.ser_ms_per_mib * cfg.blob_mib();
    let traces = Traces(Mutex::new(
        (0..cfg.rollouts as u64)
            .map(|id| RolloutTrace {
                id,
                gen_ms: durations[id as usize],
                completed_ms: 0.0,
                ser_start_ms: 0.0,
                ser_end_ms: 0.0,
            })
            .collect(),
    ));
    let (store_tx, mut store_rx) = object_store(cfg.transport, cfg.rollouts)?;
    let (job_tx, job_rx) = bounded::<u64>(cfg.rollouts);
    for id in 0..cfg.rollouts as u64 {
        job_tx.send(id).expect("job queue sized to batch");
    }
    drop(job_tx);
    let serializers = cfg.serializers();
    let (done_tx, done_rx) = bounded::<RolloutPayload>(if cfg.ipss { serializers } else { cfg.rollouts });

    let t0 = Instant::now();
    let serialize_one = |p: RolloutPayload, tx: &store::StoreSender| -> Result<Instant> {
        let start = Instant::now();
        let frame = serialize(&p);
        pad_until(start, ser_ms);
        let end = Instant::now();
        traces.update(p.id, |t| {
            t.ser_start_ms = ms_since(t0, start);
            t.ser_end_ms = ms_since(t0, end);
        });
        tx.put(frame)?;
        Ok(end)
    };
    let (frames, gen_end, ser_end, recv_end) = thread::scope(|s| -> Result<_> {
        let receiver = s.spawn(move || -> Result<(Vec<Vec<u8>>, Instant)> {
            let mut frames = Vec::new();
            let mut last = Instant::now();
            while let Some(f) = store_rx.get()? {
                frames.push(f);
                last = Instant::now();
            }
            Ok((frames, last))
        });

        let gen_handles: Vec<_> = (0..cfg.workers)
            .map(|_| {
                let job_rx = job_rx.clone();
                let done_tx = done_tx.clone();
                let traces = &traces;
                let durations = &durations;
                s.spawn(move || {
                    let mut last = t0;
                    while let Ok(id) = job_rx.recv() {
                        let start = Instant::now();
                        let mut p = make_payload(cfg, id);
                        pad_until(start, durations[id as usize]);
                        last = Instant::now();
                        p.completed_us = last.saturating_duration_since(t0).as_micros() as u64;
                        traces.update(id, |t| t.completed_ms = ms_since(t0, last));
                        if done_tx.send(p).is_err() {
                            break;
                        }
                    }
                    last
                })
            })
            .collect();
        drop(done_tx);

        let ser_end;
        let gen_end;
        if cfg.ipss {
            let pool: Vec<_> = (0..serializers)
                .map(|_| {
                    let done_rx = done_rx.clone();
                    let tx = store_tx.clone();
                    let serialize_one = &serialize_one;
                    s.spawn(move || -> Result<Instant> {
                        let mut last = t0;
                        while let Ok(p) = done_rx.recv() {
                            last = last.max(serialize_one(p, &tx)?);
                        }
                        Ok(last)
                    })
                })
                .collect();
            drop(store_tx);
            gen_end = gen_handles
                .into_iter()
                .map(|h| h.join().expect("generation worker"))
                .max();
            let mut last = t0;
            for h in pool {
                last = last.max(h.join().expect("serializer")?);
            }
            ser_end = last;
        } else {
            gen_end = gen_handles
                .into_iter()
                .map(|h| h.join().expect("generation worker"))
                .max();
            let mut batch: Vec<RolloutPayload> = done_rx.iter().collect();
            batch.sort_by_key(|p| p.id);
            let mut last = t0;
            for p in batch {
                last = serialize_one(p, &store_tx)?;
            }
            drop(store_tx);
            ser_end = last;
        }
        let (frames, recv_end) = receiver.join().expect("trainer receiver")?;
        Ok((frames, gen_end.unwrap_or(t0), ser_end, recv_end))
    })?;

    let key = CacheKey {
        step: cfg.step,
        batch: 0,
    };
    let mut deser_per_stage = [0u32; 3];
    let mut consumed = None;
    for (i, stage_ms) in cfg.cost.stage_ms.iter().enumerate() {
        let batch = if cfg.iptc {
            let (batch, loaded) = cache.get_or_load(key, || decode_batch(&frames, cfg))?;
            deser_per_stage[i] = loaded as u32;
            batch
        } else {
            deser_per_stage[i] = 1;
            Arc::new(decode_batch(&frames, cfg)?)
        };
        let start = Instant::now();
        // stand-in for the stage reading its inputs
        let checksum: f64 = batch.iter().flat_map(|p| p.logprobs.iter()).sum();
        std::hint::black_box(checksum);
        pad_until(start, *stage_ms);
        consumed = Some(batch);
    }
    let end = Instant::now();
    if cfg.iptc {
        cache.evict_step(cfg.step);
    }

    let timing = StepTiming {
        gen_ms: ms_since(t0, gen_end),
        ser_critical_ms: ms_since(gen_end, ser_end),
        dispatch_ms: ms_since(ser_end, recv_end),
        deser_per_stage,
        step_ms: ms_since(t0, end),
    };
    let batch = consumed.expect("three stages ran");
    Ok(StepOutcome {
        timing,
        batch_hash: batch_hash(&batch),
        traces: traces.0.into_inner().expect("trace lock"),
    })
}
