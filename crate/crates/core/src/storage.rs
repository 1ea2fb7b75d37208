//! DNA data storage workload: a base-4 codec with an index field, consensus
//! decoding from noisy reads, and the full write/read cycle on the engine.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::procedure::{template_lookup, ProcedureError, TemplateKb};
use crate::registry::Registry;
use crate::scheduler::{schedule, simulate, EventTrace, Policy};
use crate::sim_lab::{run, LabError, LabModel, SimLab};
use crate::time::Ticks;

/// Width of the strand index field in nucleotides.
pub const INDEX_NT: usize = 6;
/// Band half-width for read-to-draft alignment.
pub const BAND: usize = 4;

const BASES: [u8; 4] = *b"ACGT";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("payload length {0} nt must be even and at least 8")]
    PayloadLength(usize),
    #[error("{strands} strands exceed the index capacity of {capacity}")]
    PayloadTooLarge { strands: usize, capacity: usize },
    #[error("no reads recovered strand {0}")]
    UnrecoverableStrand(usize),
    #[error("no template for task `{0}`")]
    MissingTemplate(String),
    #[error(transparent)]
    Procedure(#[from] ProcedureError),
    #[error(transparent)]
    Lab(#[from] LabError),
}

/// Kept out of band, in the run manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub strand_count: usize,
    pub byte_len: usize,
    pub payload_nt: usize,
}

impl Header {
    pub fn strand_len(&self) -> usize {
        INDEX_NT + self.payload_nt
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Strand {
    pub index: usize,
    /// Index field followed by the payload.
    pub seq: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrandSet {
    pub strands: Vec<Strand>,
    pub header: Header,
}

impl StrandSet {
    pub fn sequences(&self) -> Vec<Vec<u8>> {
        self.strands.iter().map(|s| s.seq.clone()).collect()
    }
}

pub fn index_field(i: usize) -> Vec<u8> {
    (0..INDEX_NT).rev().map(|k| BASES[(i >> (2 * k)) & 3]).collect()
}

fn base_value(b: u8) -> u8 {
    match b {
        b'C' => 1,
        b'G' => 2,
        b'T' => 3,
        _ => 0,
    }
}

pub fn encode(data: &[u8], payload_nt: usize) -> Result<StrandSet, StorageError> {
    if payload_nt < 8 || !payload_nt.is_multiple_of(2) {
        return Err(StorageError::PayloadLength(payload_nt));
    }
    let bases: Vec<u8> = data
        .iter()
        .flat_map(|&byte| (0..4).rev().map(move |k| BASES[usize::from((byte >> (2 * k)) & 3)]))
        .collect();
    let count = bases.len().div_ceil(payload_nt);
    let capacity = 1usize << (2 * INDEX_NT);
    if count > capacity {
        return Err(StorageError::PayloadTooLarge {
            strands: count,
            capacity,
        });
    }
    let strands = bases
        .chunks(payload_nt)
        .enumerate()
        .map(|(index, chunk)| {
            let mut seq = index_field(index);
            seq.extend_from_slice(chunk);
            seq.resize(INDEX_NT + payload_nt, b'A');
            Strand { index, seq }
        })
        .collect();
    Ok(StrandSet {
        strands,
        header: Header {
            strand_count: count,
            byte_len: data.len(),
            payload_nt,
        },
    })
}

pub fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Cluster of the read, by the index field closest in edit distance to the
/// read's prefix. Ambiguous or distant reads are dropped.
fn assign(read: &[u8], indices: &[Vec<u8>], lookup: &std::collections::HashMap<&[u8], usize>) -> Option<usize> {
    if let Some(&i) = read.get(..INDEX_NT).and_then(|p| lookup.get(p)) {
        return Some(i);
    }
    let mut best = (usize::MAX, None, false);
    for (i, idx) in indices.iter().enumerate() {
        let d = (INDEX_NT.saturating_sub(2)..=INDEX_NT + 2)
            .filter(|&k| k <= read.len())
            .map(|k| edit_distance(idx, &read[..k]))
            .min()
            .unwrap_or(usize::MAX);
        if d < best.0 {
            best = (d, Some(i), false);
        } else if d == best.0 {
            best.2 = true;
        }
    }
    match best {
        (d, Some(i), false) if d <= 2 => Some(i),
        _ => None,
    }
}

/// Global alignment of `read` to `draft` within a diagonal band. Returns,
/// for each draft position, the read base aligned to it.
pub fn banded_projection(read: &[u8], draft: &[u8], band: usize) -> Option<Vec<Option<u8>>> {
    let (m, n) = (read.len(), draft.len());
    if m.abs_diff(n) > band {
        return None;
    }
    const INF: u32 = u32::MAX / 2;
    let w = n + 1;
    let mut dp = vec![INF; (m + 1) * w];
    dp[0] = 0;
    for i in 0..=m {
        let lo = i.saturating_sub(band);
        let hi = (i + band).min(n);
        for j in lo..=hi {
            if i == 0 && j == 0 {
                continue;
            }
            let mut v = INF;
            if i > 0 && j > 0 {
                v = v.min(dp[(i - 1) * w + j - 1] + u32::from(read[i - 1] != draft[j - 1]));
            }
            if i > 0 {
                v = v.min(dp[(i - 1) * w + j] + 1);
            }
            if j > 0 {
                v = v.min(dp[i * w + j - 1] + 1);
            }
            dp[i * w + j] = v;
        }
    }
    let mut proj = vec![None; n];
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 && here == dp[(i - 1) * w + j - 1] + u32::from(read[i - 1] != draft[j - 1]) {
            proj[j - 1] = Some(read[i - 1]);
            i -= 1;
            j -= 1;
        } else if j > 0 && here == dp[i * w + j - 1] + 1 {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    Some(proj)
}

fn plurality(counts: &[u32; 4], fallback: u8) -> u8 {
    let max = *counts.iter().max().expect("four counts");
    if max == 0 {
        return fallback;
    }
    let winners: Vec<usize> = (0..4).filter(|&k| counts[k] == max).collect();
    if winners.len() > 1 && winners.iter().any(|&k| BASES[k] == fallback) {
        return fallback;
    }
    BASES[winners[0]]
}

/// Consensus of one cluster and the mean fraction of aligned positions
/// that agree with it.
fn consensus(cluster: &[&[u8]], index: usize, len: usize) -> (Vec<u8>, f64) {
    let mut counts = vec![[0u32; 4]; len];
    let exact: Vec<&&[u8]> = cluster.iter().filter(|r| r.len() == len).collect();
    let seed_reads: Vec<&&[u8]> = if exact.is_empty() {
        let best = cluster.iter().map(|r| r.len().abs_diff(len)).min().unwrap_or(0);
        cluster.iter().filter(|r| r.len().abs_diff(len) == best).collect()
    } else {
        exact
    };
    for r in seed_reads {
        for (j, &b) in r.iter().take(len).enumerate() {
            counts[j][usize::from(base_value(b))] += 1;
        }
    }
    let mut draft: Vec<u8> = counts.iter().map(|c| plurality(c, b'A')).collect();
    draft[..INDEX_NT].copy_from_slice(&index_field(index));

    let mut counts = vec![[0u32; 4]; len];
    let projections: Vec<Vec<Option<u8>>> = cluster
        .iter()
        .filter_map(|r| banded_projection(r, &draft, BAND))
        .collect();
    for p in &projections {
        for (j, b) in p.iter().enumerate() {
            if let Some(b) = b {
                counts[j][usize::from(base_value(*b))] += 1;
            }
        }
    }
    let mut out: Vec<u8> = counts.iter().zip(&draft).map(|(c, &d)| plurality(c, d)).collect();
    out[..INDEX_NT].copy_from_slice(&index_field(index));
    let agreement = if projections.is_empty() {
        0.0
    } else {
        projections
            .iter()
            .map(|p| p.iter().zip(&out).filter(|(b, o)| **b == Some(**o)).count() as f64 / len as f64)
            .sum::<f64>()
            / projections.len() as f64
    };
    (out, agreement)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub bytes: Vec<u8>,
    /// Per strand, mean agreement of aligned reads with the consensus.
    pub agreement: Vec<f64>,
}

pub fn decode(reads: &[Vec<u8>], header: &Header) -> Result<Vec<u8>, StorageError> {
    decode_detailed(Execution::default(), reads, header).map(|d| d.bytes)
}

pub fn decode_detailed(exec: Execution, reads: &[Vec<u8>], header: &Header) -> Result<Decoded, StorageError> {
    let n = header.strand_count;
    let indices: Vec<Vec<u8>> = (0..n).map(index_field).collect();
    let lookup = indices.iter().enumerate().map(|(i, x)| (x.as_slice(), i)).collect();
    let labels = par::map(exec, reads, |r| assign(r, &indices, &lookup));
    let mut clusters: Vec<Vec<&[u8]>> = vec![Vec::new(); n];
    for (r, label) in reads.iter().zip(labels) {
        if let Some(i) = label {
            clusters[i].push(r);
        }
    }
    if let Some(i) = clusters.iter().position(Vec::is_empty) {
        return Err(StorageError::UnrecoverableStrand(i));
    }
    let len = header.strand_len();
    let per_strand = par::map_range(exec, 0..n, |i| consensus(&clusters[i], i, len));
    let mut bases = Vec::with_capacity(n * header.payload_nt);
    let mut agreement = Vec::with_capacity(n);
    for (seq, a) in per_strand {
        bases.extend_from_slice(&seq[INDEX_NT..]);
        agreement.push(a);
    }
    let mut bytes: Vec<u8> = bases
        .chunks(4)
        .filter(|c| c.len() == 4)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 2) | base_value(b)))
        .collect();
    bytes.truncate(header.byte_len);
    Ok(Decoded { bytes, agreement })
}

/// Everything the write/read cycle runs on.
#[derive(Clone, Debug)]
pub struct StorageStack<'a> {
    pub registry: &'a Registry,
    pub kb: &'a TemplateKb,
    pub model: LabModel,
    pub policy: Policy,
    pub payload_nt: usize,
    pub synthesis_task: String,
    pub sequencing_task: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StorageReport {
    #[serde(skip)]
    pub recovered: Vec<u8>,
    pub recovered_exactly: bool,
    pub agreement: Vec<f64>,
    pub step_count: usize,
    pub instruments_used: usize,
    pub write_min: f64,
    pub wall_clock_min: f64,
    pub strand_count: usize,
    pub read_count: usize,
}

#[derive(Clone, Debug)]
pub struct StorageRun {
    pub report: StorageReport,
    pub strands: StrandSet,
    pub trace: EventTrace,
}

/// Encodes, synthesizes every strand, sequences the pool and decodes.
pub fn storage_roundtrip(data: &[u8], stack: &StorageStack<'_>, seed: u64) -> Result<StorageRun, StorageError> {
    let set = encode(data, stack.payload_nt)?;
    let lookup = |task: &str| {
        template_lookup(stack.kb, task)
            .into_iter()
            .next()
            .ok_or_else(|| StorageError::MissingTemplate(task.to_string()))
    };
    let synth = lookup(&stack.synthesis_task)?;
    let seq_t = lookup(&stack.sequencing_task)?;
    let lab = SimLab {
        registry: stack.registry,
        model: &stack.model,
        policy: stack.policy,
        seed,
        replicates: 1,
    };

    let mut writes = Vec::with_capacity(set.strands.len());
    for s in &set.strands {
        let p = synth.with_sequence(&s.seq)?;
        writes.extend(lab.prepare(&p, &format!("strand{:04}", s.index), Ticks::ZERO)?);
    }
    let write_sched = schedule(&writes, stack.registry, stack.policy).map_err(LabError::from)?;
    let mut trace = simulate(&write_sched);

    let model = LabModel {
        library: set.sequences(),
        ..stack.model.clone()
    };
    let read_progs = lab.prepare(&seq_t, "pool", write_sched.makespan)?;
    let read_sched = schedule(&read_progs, stack.registry, stack.policy).map_err(LabError::from)?;
    trace.extend(simulate(&read_sched));
    let reads = run(&read_progs[0], &read_sched, &model, seed).reads.unwrap_or_default();

    let decoded = decode_detailed(Execution::default(), &reads, &set.header)?;
    let instruments: BTreeSet<&str> = trace.events.iter().map(|e| e.instrument_id.as_str()).collect();
    let report = StorageReport {
        recovered_exactly: decoded.bytes == data,
        recovered: decoded.bytes,
        agreement: decoded.agreement,
        step_count: trace.step_count,
        instruments_used: instruments.len(),
        write_min: write_sched.makespan.minutes(),
        wall_clock_min: read_sched.makespan.max(write_sched.makespan).minutes(),
        strand_count: set.header.strand_count,
        read_count: reads.len(),
    };
    Ok(StorageRun {
        report,
        strands: set,
        trace,
    })
}
