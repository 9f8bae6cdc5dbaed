//! Series tables, chronological splits, windowing with aligned text, and
//! the synthetic regime generator.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctensor::Matrix;
use crate::error::{Result, SpectfError};
use crate::textenc::{self, TextLine, TextRecord};

/// Standard deviations below this are replaced by 1.
pub const STD_FLOOR: f64 = 1e-8;

/// A multichannel series with integer timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub timestamps: Vec<i64>,
    pub names: Vec<String>,
    /// One vector per channel, each `timestamps.len()` long.
    pub columns: Vec<Vec<f64>>,
    pub frequency: FrequencyTag,
}

/// Sampling frequency, which selects the standard horizon set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyTag {
    Monthly,
    Weekly,
    Daily,
    #[default]
    None,
}

impl FrequencyTag {
    pub fn horizons(self) -> &'static [usize] {
        match self {
            FrequencyTag::Monthly => &[6, 8, 10, 12],
            FrequencyTag::Weekly => &[12, 24, 36, 48],
            FrequencyTag::Daily => &[48, 96, 192, 336],
            FrequencyTag::None => &[],
        }
    }
}

impl SeriesTable {
    pub fn new(timestamps: Vec<i64>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(SpectfError::invalid("one name per channel required"));
        }
        if columns.iter().any(|c| c.len() != timestamps.len()) {
            return Err(SpectfError::invalid("channel length differs from timestamp count"));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpectfError::invalid("timestamps must be strictly increasing"));
        }
        Ok(Self { timestamps, names, columns, frequency: FrequencyTag::None })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.columns.len()
    }
}

/// Read a CSV whose first column is `ts` and the rest are channels. Empty or
/// `nan` cells are forward-filled, then back-filled.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("ts") {
        return Err(SpectfError::Parse { row: 1, message: "first column must be named 'ts'".into() });
    }
    if headers.len() < 2 {
        return Err(SpectfError::Parse { row: 1, message: "no channel columns".into() });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut timestamps = Vec::new();
    let mut raw: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(SpectfError::Parse { row, message: format!("expected {} fields, found {}", headers.len(), rec.len()) });
        }
        let ts = rec[0]
            .trim()
            .parse::<i64>()
            .map_err(|_| SpectfError::Parse { row, message: format!("bad timestamp '{}'", &rec[0]) })?;
        if timestamps.last().is_some_and(|&prev| ts <= prev) {
            return Err(SpectfError::Parse { row, message: "timestamps must be strictly increasing".into() });
        }
        timestamps.push(ts);
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let cell = cell.trim();
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                None
            } else {
                Some(cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| SpectfError::Parse {
                    row,
                    message: format!("bad value '{cell}' in column '{}'", names[c]),
                })?)
            };
            raw[c].push(v);
        }
    }
    let mut columns = Vec::with_capacity(names.len());
    for (name, col) in names.iter().zip(raw) {
        columns.push(fill_missing(&col).ok_or_else(|| SpectfError::Parse {
            row: 2,
            message: format!("column '{name}' has no values"),
        })?);
    }
    SeriesTable::new(timestamps, names, columns)
}

/// Forward-fill then back-fill; `None` when every value is missing.
pub fn fill_missing(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let first = values.iter().flatten().next().copied()?;
    let mut last = first;
    Some(
        values
            .iter()
            .map(|v| {
                if let Some(v) = v {
                    last = *v;
                }
                last
            })
            .collect(),
    )
}

pub fn save_csv(table: &SeriesTable, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["ts".to_owned()];
    header.extend(table.names.iter().cloned());
    w.write_record(&header)?;
    for (i, ts) in table.timestamps.iter().enumerate() {
        let mut row = vec![ts.to_string()];
        row.extend(table.columns.iter().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text_lines(lines: &[TextLine], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut f, line)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = SpectfError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| SpectfError::config(format!("unknown split '{s}' (train, val, test)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(*r > 0.0)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(SpectfError::config(format!(
                "split ratios must be positive and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// Row ranges `[start, end)` of the three chronological segments.
    pub fn bounds(&self, len: usize) -> [(usize, usize); 3] {
        let a = ((len as f64) * self.train).round() as usize;
        let b = ((len as f64) * (self.train + self.val)).round() as usize;
        let (a, b) = (a.min(len), b.clamp(a.min(len), len));
        [(0, a), (a, b), (b, len)]
    }
}

impl SeriesTable {
    /// Rows `[lo, hi)` as a new table.
    pub fn slice(&self, lo: usize, hi: usize) -> SeriesTable {
        SeriesTable {
            timestamps: self.timestamps[lo..hi].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[lo..hi].to_vec()).collect(),
            frequency: self.frequency,
        }
    }
}

/// Chronological contiguous train / val / test segments.
pub fn split(table: &SeriesTable, ratios: &SplitRatios) -> Result<[SeriesTable; 3]> {
    ratios.validate()?;
    let b = ratios.bounds(table.len());
    Ok(b.map(|(lo, hi)| table.slice(lo, hi)))
}

/// Like [`split`], but every segment must hold at least one window.
pub fn split_for_windows(
    table: &SeriesTable,
    ratios: &SplitRatios,
    seq_len: usize,
    horizon: usize,
) -> Result<[SeriesTable; 3]> {
    let parts = split(table, ratios)?;
    for (s, part) in Split::ALL.iter().zip(&parts) {
        if part.len() < seq_len + horizon {
            return Err(SpectfError::config(format!(
                "{} segment has {} rows, fewer than seq_len + horizon = {}",
                s.as_str(),
                part.len(),
                seq_len + horizon
            )));
        }
    }
    Ok(parts)
}

/// Windows per channel in a segment of `len` rows.
pub fn count_windows(len: usize, seq_len: usize, horizon: usize, stride: usize) -> usize {
    let span = seq_len + horizon;
    if len < span || stride == 0 {
        0
    } else {
        (len - span) / stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Each lookback is standardized by its own mean and deviation.
    #[default]
    Instance,
    /// Per-channel statistics of the training segment.
    Global,
}

/// Mean and population standard deviation, with the deviation floored.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < STD_FLOOR { 1.0 } else { std })
}

/// Per-channel statistics, for global normalization from the train segment.
pub fn channel_stats(table: &SeriesTable) -> Vec<(f64, f64)> {
    table.columns.iter().map(|c| mean_std(c)).collect()
}

/// Inverse of the window normalization.
pub fn denormalize(normalized: &[f64], mean: f64, std: f64) -> Vec<f64> {
    normalized.iter().map(|v| v * std + mean).collect()
}

/// A lookback, its horizon, and the text embeddings aligned to the lookback.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalWindow {
    pub channel: usize,
    /// Row of the first lookback step in its segment.
    pub start: usize,
    /// Normalized lookback, `L` values.
    pub lookback: Vec<f64>,
    /// Raw horizon values, `H` values.
    pub target: Vec<f64>,
    /// `L x d_LM` carried-forward text embeddings.
    pub text: Matrix,
    pub timestamps: Vec<i64>,
    pub norm_mean: f64,
    pub norm_std: f64,
}

impl MultimodalWindow {
    /// Build from raw lookback values; `stats` overrides instance statistics.
    pub fn from_raw(
        channel: usize,
        raw_lookback: &[f64],
        target: Vec<f64>,
        text: Matrix,
        timestamps: Vec<i64>,
        stats: Option<(f64, f64)>,
    ) -> Self {
        let (norm_mean, norm_std) = stats.unwrap_or_else(|| mean_std(raw_lookback));
        Self {
            channel,
            start: 0,
            lookback: raw_lookback.iter().map(|v| (v - norm_mean) / norm_std).collect(),
            target,
            text,
            timestamps,
            norm_mean,
            norm_std,
        }
    }

    pub fn normalized_target(&self) -> Vec<f64> {
        self.target.iter().map(|v| (v - self.norm_mean) / self.norm_std).collect()
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        denormalize(normalized, self.norm_mean, self.norm_std)
    }

    pub fn raw_lookback(&self) -> Vec<f64> {
        self.denormalize(&self.lookback)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub seq_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

/// Sliding windows over one segment, channel-major and then chronological.
/// `stats` holds per-channel global statistics; `None` selects instance
/// normalization.
pub fn make_windows(
    segment: &SeriesTable,
    texts: &[TextRecord],
    d_lm: usize,
    spec: &WindowSpec,
    stats: Option<&[(f64, f64)]>,
) -> Result<Vec<MultimodalWindow>> {
    if spec.seq_len < 2 || spec.horizon < 1 || spec.stride < 1 {
        return Err(SpectfError::config("window needs seq_len >= 2, horizon >= 1, stride >= 1"));
    }
    if let Some(r) = texts.iter().find(|r| r.embedding.len() != d_lm) {
        return Err(SpectfError::invalid(format!(
            "text record at ts {} has dimension {}, expected {d_lm}",
            r.timestamp,
            r.embedding.len()
        )));
    }
    if stats.is_some_and(|s| s.len() != segment.channels()) {
        return Err(SpectfError::invalid("one statistics pair per channel required"));
    }
    let n = count_windows(segment.len(), spec.seq_len, spec.horizon, spec.stride);
    let mut out = Vec::with_capacity(n * segment.channels());
    for (c, col) in segment.columns.iter().enumerate() {
        for w in 0..n {
            let s = w * spec.stride;
            let e = s + spec.seq_len;
            let ts = segment.timestamps[s..e].to_vec();
            let text = textenc::align_texts_to_window(texts, &ts, d_lm);
            let mut win = MultimodalWindow::from_raw(
                c,
                &col[s..e],
                col[e..e + spec.horizon].to_vec(),
                text,
                ts,
                stats.map(|s| s[c]),
            );
            win.start = s;
            out.push(win);
        }
    }
    Ok(out)
}

/// Windowed train / val / test sets of one table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub d_lm: usize,
    pub channels: usize,
    pub train: Vec<MultimodalWindow>,
    pub val: Vec<MultimodalWindow>,
    pub test: Vec<MultimodalWindow>,
}

impl Dataset {
    pub fn windows(&self, split: Split) -> &[MultimodalWindow] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Copy with every text matrix zeroed.
    pub fn without_text(&self) -> Dataset {
        let blank = |ws: &[MultimodalWindow]| {
            ws.iter()
                .map(|w| MultimodalWindow { text: Matrix::zeros(w.text.rows(), w.text.cols()), ..w.clone() })
                .collect()
        };
        Dataset { train: blank(&self.train), val: blank(&self.val), test: blank(&self.test), ..self.clone() }
    }
}

/// Split, window and normalize a table. Global statistics come from the
/// train segment only.
#[allow(clippy::too_many_arguments)]
pub fn build_dataset(
    name: &str,
    table: &SeriesTable,
    texts: &[TextRecord],
    d_lm: usize,
    spec: &WindowSpec,
    ratios: &SplitRatios,
    normalization: NormalizationMode,
) -> Result<Dataset> {
    let [train, val, test] = split_for_windows(table, ratios, spec.seq_len, spec.horizon)?;
    let stats = match normalization {
        NormalizationMode::Instance => None,
        NormalizationMode::Global => Some(channel_stats(&train)),
    };
    let stats = stats.as_deref();
    Ok(Dataset {
        name: name.to_owned(),
        d_lm,
        channels: table.channels(),
        train: make_windows(&train, texts, d_lm, spec, stats)?,
        val: make_windows(&val, texts, d_lm, spec, stats)?,
        test: make_windows(&test, texts, d_lm, spec, stats)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    /// Cycles per `bin_length` steps.
    pub bin: usize,
    pub base_amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    /// Band whose amplitude switches.
    pub bin: usize,
    /// Amplitude multiplier in the high regime.
    pub factor: f64,
    /// Steps per regime block.
    pub period: usize,
    /// Steps by which a regime announcement precedes the change.
    #[serde(default)]
    pub text_lead: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub low: Vec<String>,
    pub high: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        Self {
            low: words(&["calm", "steady", "quiet", "mild", "stable", "flat"]),
            high: words(&["surge", "spike", "volatile", "storm", "rally", "swing"]),
        }
    }
}

fn default_channels() -> usize {
    2
}

fn default_bin_length() -> usize {
    24
}

fn default_words() -> usize {
    3
}

/// Synthetic dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub length: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_bin_length")]
    pub bin_length: usize,
    pub bands: Vec<Band>,
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub vocab: Vocab,
    #[serde(default = "default_words")]
    pub words_per_text: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SpectfError::config(m));
        if self.length < 2 || self.channels < 1 || self.bin_length < 2 {
            return fail("synth needs length >= 2, channels >= 1, bin_length >= 2".into());
        }
        for b in &self.bands {
            if b.bin > self.bin_length / 2 {
                return fail(format!("band bin {} above Nyquist of bin_length {}", b.bin, self.bin_length));
            }
        }
        if let Some(r) = &self.regime {
            if r.period < 1 {
                return fail("regime.period must be >= 1".into());
            }
            if !self.bands.iter().any(|b| b.bin == r.bin) {
                return fail(format!("regime bin {} is not one of the bands", r.bin));
            }
        }
        if self.vocab.low.is_empty() || self.vocab.high.is_empty() {
            return fail("vocab lists must be non-empty".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Whether step `t` is in the high regime, given the seeded block offset.
    fn high_at(&self, t: usize, offset: usize) -> bool {
        self.regime.as_ref().is_some_and(|r| ((t + offset) / r.period) % 2 == 1)
    }
}

/// Generated table plus time-stamped text lines.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub table: SeriesTable,
    pub texts: Vec<TextLine>,
    /// Per-step regime flag (empty without a regime).
    pub high: Vec<bool>,
}

/// Sum of sinusoids at the requested bins with per-channel random phases.
/// The regime band's amplitude is multiplied by `factor` during high blocks;
/// each block change at step `c` is announced at `c - text_lead` with words
/// from the new regime's vocabulary, and the initial regime at step 0.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = spec.regime.as_ref().map_or(0, |r| rng.gen_range(0..r.period));
    let high: Vec<bool> = if spec.regime.is_some() {
        (0..spec.length).map(|t| spec.high_at(t, offset)).collect()
    } else {
        Vec::new()
    };

    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let tau = std::f64::consts::TAU;
    let mut columns = Vec::with_capacity(spec.channels);
    for _ in 0..spec.channels {
        let phases: Vec<f64> = spec.bands.iter().map(|_| rng.gen_range(0.0..tau)).collect();
        let col = (0..spec.length)
            .map(|t| {
                let mut v = 0.0;
                for (b, ph) in spec.bands.iter().zip(&phases) {
                    let w = tau * b.bin as f64 / spec.bin_length as f64;
                    let amp = match &spec.regime {
                        Some(r) if r.bin == b.bin && high[t] => b.base_amp * r.factor,
                        _ => b.base_amp,
                    };
                    v += amp * (w * t as f64 + ph).sin();
                }
                if spec.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                v
            })
            .collect();
        columns.push(col);
    }

    let mut texts = Vec::new();
    if spec.regime.is_some() {
        let lead = spec.regime.as_ref().map_or(0, |r| r.text_lead);
        let mut announce = |ts: usize, is_high: bool, rng: &mut ChaCha8Rng| {
            let pool = if is_high { &spec.vocab.high } else { &spec.vocab.low };
            let words: Vec<&str> =
                (0..spec.words_per_text.max(1)).map(|_| pool.choose(rng).unwrap().as_str()).collect();
            texts.push(TextLine { ts: ts as i64, text: words.join(" ") });
        };
        announce(0, high[0], &mut rng);
        for c in 1..spec.length {
            if high[c] != high[c - 1] {
                let at = c.saturating_sub(lead);
                announce(at, high[c], &mut rng);
            }
        }
        // announcements at equal timestamps: keep the later one only
        texts.dedup_by(|b, a| {
            if a.ts == b.ts {
                a.text = std::mem::take(&mut b.text);
                true
            } else {
                false
            }
        });
    }

    let names = (0..spec.channels).map(|c| format!("ch{c}")).collect();
    let table = SeriesTable::new((0..spec.length as i64).collect(), names, columns)?;
    Ok(SynthOutput { table, texts, high })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_table(len: usize, channels: usize) -> SeriesTable {
        SeriesTable::new(
            (0..len as i64).collect(),
            (0..channels).map(|c| format!("c{c}")).collect(),
            (0..channels).map(|c| (0..len).map(|t| (t * (c + 1)) as f64).collect()).collect(),
        )
        .unwrap()
    }

    fn spec(l: usize, h: usize) -> WindowSpec {
        WindowSpec { seq_len: l, horizon: h, stride: 1 }
    }

    #[test]
    fn split_sizes_and_partition() {
        let t = tiny_table(100, 2);
        let [a, b, c] = split(&t, &SplitRatios::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 10, 20));
        let mut all: Vec<i64> = [a, b, c].iter().flat_map(|p| p.timestamps.clone()).collect();
        all.dedup();
        assert_eq!(all, t.timestamps);
        assert!(split(&t, &SplitRatios { train: 0.5, val: 0.1, test: 0.1 }).is_err());
        assert!(split(&t, &SplitRatios { train: 1.0, val: 0.0, test: 0.0 }).is_err());
    }

    #[test]
    fn short_segment_is_a_config_error() {
        let t = tiny_table(100, 1);
        match split_for_windows(&t, &SplitRatios::default(), 24, 12) {
            Err(SpectfError::Config(m)) => assert!(m.contains("val segment"), "{m}"),
            other => panic!("{other:?}"),
        }
        let t = tiny_table(400, 1);
        let parts = split_for_windows(&t, &SplitRatios::default(), 24, 12).unwrap();
        assert_eq!(parts[2].len(), 80);
    }

    #[test]
    fn window_counts() {
        let seg = tiny_table(40, 1);
        assert_eq!(make_windows(&seg, &[], 2, &spec(24, 12), None).unwrap().len(), 5);
        let exact = tiny_table(36, 3);
        assert_eq!(make_windows(&exact, &[], 2, &spec(24, 12), None).unwrap().len(), 3);
        let two = tiny_table(37, 3);
        assert_eq!(make_windows(&two, &[], 2, &spec(24, 12), None).unwrap().len(), 6);
    }

    #[test]
    fn instance_normalization_and_inverse() {
        let raw = [1.0, 2.0, 3.0, 4.0];
        let w = MultimodalWindow::from_raw(0, &raw, vec![5.0, 6.0], Matrix::zeros(4, 1), vec![0, 1, 2, 3], None);
        let mean = w.lookback.iter().sum::<f64>() / 4.0;
        let var = w.lookback.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        for (a, b) in w.raw_lookback().iter().zip(raw) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(w.denormalize(&w.normalized_target()), vec![5.0, 6.0]);

        let flat = MultimodalWindow::from_raw(0, &[3.0; 4], vec![3.0], Matrix::zeros(4, 1), vec![0, 1, 2, 3], None);
        assert_eq!(flat.norm_std, 1.0);
        assert!(flat.lookback.iter().all(|&v| v == 0.0));
        assert_eq!(flat.denormalize(&[0.5, -1.0]), vec![3.5, 2.0]);
        assert_eq!(denormalize(&[0.0; 3], 4.0, 2.0), vec![4.0; 3]);
    }

    #[test]
    fn global_normalization_uses_train_stats() {
        let t = tiny_table(100, 1);
        let [train, _, test] = split(&t, &SplitRatios::default()).unwrap();
        let stats = channel_stats(&train);
        let ws = make_windows(&test, &[], 1, &spec(8, 2), Some(&stats)).unwrap();
        let (m, sd) = mean_std(&t.columns[0][..70]);
        assert!(ws.iter().all(|w| w.norm_mean == m && w.norm_std == sd));
    }

    #[test]
    fn text_is_aligned_per_window() {
        let t = tiny_table(40, 1);
        let recs = vec![
            TextRecord { timestamp: 3, embedding: vec![1.0, 0.0] },
            TextRecord { timestamp: 10, embedding: vec![0.0, 1.0] },
        ];
        let w = &make_windows(&t, &recs, 2, &spec(8, 2), None).unwrap()[5];
        assert_eq!(w.timestamps, (5..13).collect::<Vec<_>>());
        assert_eq!(w.text.row(0), &[1.0, 0.0]);
        assert_eq!(w.text.row(5), &[0.0, 1.0]);
        let bad = vec![TextRecord { timestamp: 0, embedding: vec![1.0] }];
        assert!(make_windows(&t, &bad, 2, &spec(8, 2), None).is_err());
    }

    #[test]
    fn csv_round_trip_with_fill() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "ts,a,b\n0,,1\n1,2,\n2,nan,3\n3,4,5\n").unwrap();
        let t = load_csv(&p).unwrap();
        assert_eq!(t.columns[0], vec![2.0, 2.0, 2.0, 4.0]);
        assert_eq!(t.columns[1], vec![1.0, 1.0, 3.0, 5.0]);
        let q = dir.path().join("t.csv");
        save_csv(&t, &q).unwrap();
        assert_eq!(load_csv(&q).unwrap(), t);

        fs::write(&p, "ts,a\n0,1\n1,x\n").unwrap();
        assert!(matches!(load_csv(&p), Err(SpectfError::Parse { row: 3, .. })));
        fs::write(&p, "time,a\n0,1\n").unwrap();
        assert!(load_csv(&p).is_err());
    }

    fn regime_spec(len: usize) -> SynthSpec {
        SynthSpec {
            length: len,
            channels: 2,
            bin_length: 24,
            bands: vec![Band { bin: 1, base_amp: 1.0 }, Band { bin: 3, base_amp: 1.0 }],
            regime: Some(Regime { bin: 3, factor: 2.0, period: 48, text_lead: 12 }),
            noise_sigma: 0.0,
            vocab: Vocab::default(),
            words_per_text: 3,
        }
    }

    #[test]
    fn synth_window_budget_and_determinism() {
        let out = synth_generate(&regime_spec(600), 7).unwrap();
        assert_eq!(out.table.len(), 600);
        let [train, _, _] = split(&out.table, &SplitRatios::default()).unwrap();
        let train = make_windows(&train, &[], 1, &spec(24, 12), None).unwrap();
        assert!(train.len() >= 500);
        let again = synth_generate(&regime_spec(600), 7).unwrap();
        assert_eq!(out.table, again.table);
        assert_eq!(out.texts, again.texts);
    }

    #[test]
    fn synth_texts_announce_changes_ahead() {
        let s = regime_spec(600);
        let out = synth_generate(&s, 3).unwrap();
        assert_eq!(out.texts[0].ts, 0);
        let changes: Vec<usize> = (1..600).filter(|&t| out.high[t] != out.high[t - 1]).collect();
        assert!(changes.len() >= 10);
        for c in changes {
            let at = c.saturating_sub(12) as i64;
            let line = out.texts.iter().find(|l| l.ts == at).expect("announcement");
            let pool = if out.high[c] { &s.vocab.high } else { &s.vocab.low };
            assert!(line.text.split(' ').all(|w| pool.iter().any(|p| p == w)));
        }
    }

    #[test]
    fn synth_regime_raises_band_energy() {
        let mut s = regime_spec(480);
        s.bands = vec![Band { bin: 3, base_amp: 1.0 }];
        let out = synth_generate(&s, 1).unwrap();
        let col = &out.table.columns[0];
        let rms = |hi: bool| {
            let v: Vec<f64> = (0..480).filter(|&t| out.high[t] == hi).map(|t| col[t] * col[t]).collect();
            (v.iter().sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!((rms(true) / rms(false) - 2.0).abs() < 0.15);
    }

    #[test]
    fn synth_rejects_bad_specs() {
        let mut s = regime_spec(100);
        s.bands.push(Band { bin: 13, base_amp: 1.0 });
        assert!(synth_generate(&s, 0).is_err());
        let bad: std::result::Result<SynthSpec, _> =
            serde_json::from_str(r#"{"length": 10, "bands": [], "extra": 1}"#);
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn window_counts_match_formula(len in 0usize..400, l in 2usize..40, h in 1usize..20, stride in 1usize..5) {
            let t = tiny_table(len, 2);
            let s = WindowSpec { stride, ..spec(l, h) };
            for part in split(&t, &SplitRatios::default()).unwrap() {
                let ws = make_windows(&part, &[], 1, &s, None).unwrap();
                prop_assert_eq!(ws.len(), 2 * count_windows(part.len(), l, h, stride));
                for w in &ws {
                    prop_assert!(w.start + l + h <= part.len());
                    prop_assert_eq!(w.lookback.len(), l);
                    prop_assert_eq!(w.target.len(), h);
                    prop_assert!(part.timestamps.contains(&w.timestamps[0]));
                }
            }
        }
    }
}
