//! Per-step text representations.
//!
//! Text enters as real embedding vectors, either read from an `SPTE` file
//! exported from a language model or produced by [`toy_encode`]. Records are
//! carried forward onto the lookback grid, shifted by a sinusoidal timestamp
//! encoding and projected to complex space by two independent real MLPs, one
//! for each plane.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctensor::{Activation, ComplexMatrix, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Result, SpectfError};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SPTE";
pub const EMBEDDING_VERSION: u32 = 1;

/// One embedded text observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TextRecord {
    pub timestamp: i64,
    pub embedding: Vec<f64>,
}

/// A raw text line from a JSONL source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextLine {
    pub ts: i64,
    pub text: String,
}

pub fn encode_embeddings(d_lm: usize, records: &[TextRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + records.len() * (8 + 4 * d_lm));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(d_lm as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        if r.embedding.len() != d_lm {
            return Err(SpectfError::invalid(format!(
                "record at ts {} has dimension {}, expected {d_lm}",
                r.timestamp,
                r.embedding.len()
            )));
        }
        out.extend_from_slice(&r.timestamp.to_le_bytes());
        for v in &r.embedding {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse an embedding file. Returns `(d_lm, records)`.
pub fn decode_embeddings(bytes: &[u8]) -> Result<(usize, Vec<TextRecord>)> {
    let need = |pos: usize, n: usize, what: &str| -> Result<()> {
        if bytes.len() < pos + n {
            Err(SpectfError::format(pos as u64, format!("truncated file while reading {what}")))
        } else {
            Ok(())
        }
    };
    let u32_at = |pos: usize| u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());

    need(0, 16, "header")?;
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(SpectfError::format(0, "bad magic, expected SPTE"));
    }
    let version = u32_at(4);
    if version != EMBEDDING_VERSION {
        return Err(SpectfError::format(4, format!("unsupported version {version}")));
    }
    let d_lm = u32_at(8) as usize;
    if d_lm == 0 {
        return Err(SpectfError::format(8, "embedding dimension must be positive"));
    }
    let count = u32_at(12) as usize;
    let record_len = 8 + 4 * d_lm;
    let mut pos = 16;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        need(pos, record_len, &format!("record {i}"))?;
        let timestamp = i64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        let embedding = bytes[pos + 8..pos + record_len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        records.push(TextRecord { timestamp, embedding });
        pos += record_len;
    }
    if pos != bytes.len() {
        return Err(SpectfError::format(
            pos as u64,
            format!("{} bytes do not form a whole record of dimension {d_lm}", bytes.len() - pos),
        ));
    }
    Ok((d_lm, records))
}

pub fn save_embeddings(path: impl AsRef<Path>, d_lm: usize, records: &[TextRecord]) -> Result<()> {
    fs::write(path, encode_embeddings(d_lm, records)?)?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(usize, Vec<TextRecord>)> {
    decode_embeddings(&fs::read(path)?)
}

pub fn read_text_lines(path: impl AsRef<Path>) -> Result<Vec<TextLine>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TextLine = serde_json::from_str(&line).map_err(|e| SpectfError::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic signed feature-hashing bag-of-tokens embedding, L2-normalized.
pub fn toy_encode(text: &str, d_lm: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; d_lm];
    if d_lm == 0 {
        return v;
    }
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = fnv1a(token.as_bytes(), seed);
        let bucket = (h % d_lm as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn encode_lines(lines: &[TextLine], d_lm: usize, seed: u64) -> Vec<TextRecord> {
    lines
        .iter()
        .map(|l| TextRecord { timestamp: l.ts, embedding: toy_encode(&l.text, d_lm, seed) })
        .collect()
}

/// Sinusoidal encoding of a scalar position over `dim` channels:
/// `[sin(p w_0), cos(p w_0), sin(p w_1), ...]` with `w_i = 10000^(-2i/dim)`.
pub fn sinusoidal_encoding(position: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let pair = (c / 2) as f64;
            let freq = 10000f64.powf(-2.0 * pair / dim as f64);
            if c % 2 == 0 {
                (position * freq).sin()
            } else {
                (position * freq).cos()
            }
        })
        .collect()
}

/// Table of sinusoidal encodings for positions `0..rows`.
pub fn sinusoidal_table(rows: usize, dim: usize) -> Matrix {
    let data = (0..rows).flat_map(|p| sinusoidal_encoding(p as f64, dim)).collect();
    Matrix::from_vec(rows, dim, data).expect("table shape")
}

/// Add a sinusoidal encoding of each row's timestamp, indexed from the
/// window's first timestamp so the encoding depends on position within the
/// window rather than on absolute time.
pub fn temporal_align(embeddings: &Matrix, timestamps: &[i64]) -> Result<Matrix> {
    if embeddings.rows() != timestamps.len() {
        return Err(SpectfError::invalid(format!(
            "temporal_align: {} embedding rows but {} timestamps",
            embeddings.rows(),
            timestamps.len()
        )));
    }
    let mut out = embeddings.clone();
    let dim = embeddings.cols();
    let origin = timestamps.first().copied().unwrap_or(0);
    for (r, &ts) in timestamps.iter().enumerate() {
        let pe = sinusoidal_encoding((ts - origin) as f64, dim);
        for (v, p) in out.row_mut(r).iter_mut().zip(pe) {
            *v += p;
        }
    }
    Ok(out)
}

/// Carry-forward alignment of text records onto a window's timestamps.
///
/// Row `t` holds the average embedding of the records sharing the latest
/// timestamp `<= window_timestamps[t]`, or zeros when there is none.
pub fn align_texts_to_window(records: &[TextRecord], window_timestamps: &[i64], d_lm: usize) -> Matrix {
    debug_assert!(window_timestamps.windows(2).all(|w| w[0] < w[1]));
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| records[i].timestamp);

    let mut out = Matrix::zeros(window_timestamps.len(), d_lm);
    for (row, &ts) in window_timestamps.iter().enumerate() {
        let end = order.partition_point(|&i| records[i].timestamp <= ts);
        if end == 0 {
            continue;
        }
        let latest = records[order[end - 1]].timestamp;
        let start = order[..end].partition_point(|&i| records[i].timestamp < latest);
        let group = &order[start..end];
        let dst = out.row_mut(row);
        for &i in group {
            for (d, v) in dst.iter_mut().zip(&records[i].embedding) {
                *d += v;
            }
        }
        let n = group.len() as f64;
        dst.iter_mut().for_each(|d| *d /= n);
    }
    out
}

/// Parameters of the two text MLPs.
///
/// Both MLPs have the same shape (`d_lm -> d -> d`), so each layer is stored
/// as one complex parameter whose real plane belongs to the real-part MLP and
/// whose imaginary plane belongs to the imaginary-part MLP. The planes never
/// mix: every product is a [`Tape::pair_matmul`].
#[derive(Debug, Clone)]
pub struct TextProjection {
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
    pub hidden_activation: Activation,
    d_lm: usize,
    dim: usize,
}

impl TextProjection {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_lm: usize,
        dim: usize,
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let hidden_weight = store.add(format!("{prefix}.hidden.weight"), glorot_pair(d_lm, dim, rng));
        let hidden_bias = store.add(format!("{prefix}.hidden.bias"), ComplexMatrix::zeros(1, dim));
        let out_weight = store.add(format!("{prefix}.out.weight"), glorot_pair(dim, dim, rng));
        let out_bias = store.add(format!("{prefix}.out.bias"), ComplexMatrix::zeros(1, dim));
        Self { hidden_weight, hidden_bias, out_weight, out_bias, hidden_activation, d_lm, dim }
    }

    pub fn d_lm(&self) -> usize {
        self.d_lm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Trainable real scalars for the given sizes.
    pub fn scalar_count(d_lm: usize, dim: usize) -> usize {
        2 * (d_lm * dim + dim + dim * dim + dim)
    }

    /// Map aligned embeddings `[L x d_lm]` to a complex sequence `[L x d]`.
    pub fn complex_project(&self, tape: &mut Tape, store: &ParamStore, aligned: &Matrix) -> Result<Var> {
        if aligned.cols() != self.d_lm {
            return Err(SpectfError::invalid(format!(
                "complex_project: embeddings have dimension {}, layer expects {}",
                aligned.cols(),
                self.d_lm
            )));
        }
        // Both planes see the same real input.
        let input = ComplexMatrix::from_parts(
            aligned.rows(),
            aligned.cols(),
            aligned.data().to_vec(),
            aligned.data().to_vec(),
        )?;
        let x = tape.constant(input);
        let w1 = tape.param(store, self.hidden_weight);
        let b1 = tape.param(store, self.hidden_bias);
        let w2 = tape.param(store, self.out_weight);
        let b2 = tape.param(store, self.out_bias);
        let h = tape.pair_matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.activate(h, self.hidden_activation);
        let out = tape.pair_matmul(h, w2)?;
        tape.add_row(out, b2)
    }
}

/// Independent real Glorot-uniform draws on both planes.
fn glorot_pair<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> ComplexMatrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = fan_in * fan_out;
    let mut m = ComplexMatrix::from_parts(
        fan_in,
        fan_out,
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("shape");
    m.round_to_f32();
    m
}
