//! The forecaster: spectrum embedding, text embedding, frequency cross
//! attention with multiplicative fusion, a frequency-axis forecaster and a
//! projection back to one complex value per horizon bin.
//!
//! Shapes for lookback `L`, horizon `H`, width `d`, attention width `d_k`,
//! with `F = L/2+1` and `G = H/2+1`:
//!
//! ```text
//! rfft(x)            F x 1
//! embedded           F x d     FreqMLP(1 -> d) + sinusoidal table on the real plane
//! text               L x d     two real MLPs packed as re / im
//! Q, K, V            F x d_k, L x d_k, L x d
//! attention          F x L     softmax(|Q K^T| / sqrt(d_k))
//! fused              F x d     (1-a) X + a (X (.) A V)
//! forecast           G x d     FreqMLP(F -> G) along the frequency axis
//! projected          G x 1     FreqMLP(d -> 1), then irfft to H samples
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctensor::{
    self, Activation, ComplexMatrix, Matrix, ParamId, ParamStore, Tape, Var,
};
use crate::data::{MultimodalWindow, NormalizationMode};
use crate::error::{Result, SpectfError};
use crate::spectral::{self, half_len};
use crate::textenc::{self, TextProjection};

/// Activation per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivationConfig {
    pub embed: Activation,
    pub query: Activation,
    pub key: Activation,
    pub value: Activation,
    pub text_hidden: Activation,
    pub forecaster: Activation,
    pub projection: Activation,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            embed: Activation::LeakyRelu,
            query: Activation::LeakyRelu,
            key: Activation::LeakyRelu,
            value: Activation::LeakyRelu,
            text_hidden: Activation::LeakyRelu,
            forecaster: Activation::Linear,
            projection: Activation::Linear,
        }
    }
}

impl ActivationConfig {
    pub fn all_linear() -> Self {
        Self {
            embed: Activation::Linear,
            query: Activation::Linear,
            key: Activation::Linear,
            value: Activation::Linear,
            text_hidden: Activation::Linear,
            forecaster: Activation::Linear,
            projection: Activation::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Lookback length `L`.
    pub seq_len: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub dropout: f64,
    /// Blend weight between the unfused and fused frequency embeddings.
    pub prior_weight: f64,
    pub activations: ActivationConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 24,
            horizon: 12,
            d_model: 16,
            d_k: 8,
            dropout: 0.1,
            prior_weight: 0.5,
            activations: ActivationConfig::default(),
            seed: 2024,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(SpectfError::config(m.to_owned()));
        if self.seq_len < 2 {
            return fail("model.seq_len must be >= 2");
        }
        if self.horizon < 1 {
            return fail("model.horizon must be >= 1");
        }
        if self.d_model < 1 || self.d_k < 1 {
            return fail("model.d_model and model.d_k must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("model.dropout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.prior_weight) {
            return fail("model.prior_weight must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn input_bins(&self) -> usize {
        half_len(self.seq_len)
    }

    pub fn output_bins(&self) -> usize {
        half_len(self.horizon)
    }
}

/// Which fusion path the forward pass takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Cross attention followed by multiplicative fusion.
    Full,
    /// Text ignored; the prior weight is forced to zero.
    NoText,
    /// Mean-pooled text embedding summed onto the spectrum embedding.
    NoAttention,
    /// Attention output summed onto the spectrum embedding.
    NoMulfusion,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] =
        [FusionMode::Full, FusionMode::NoText, FusionMode::NoAttention, FusionMode::NoMulfusion];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Full => "full",
            FusionMode::NoText => "no_text",
            FusionMode::NoAttention => "no_attention",
            FusionMode::NoMulfusion => "no_mulfusion",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = SpectfError;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SpectfError::config(format!("unknown mode '{s}'")))
    }
}

/// Training (with a dropout generator) or evaluation.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape, v: Var, rate: f64) -> Result<Var> {
        match self {
            Mode::Eval => Ok(v),
            Mode::Train(rng) => tape.dropout(v, rate, true, &mut **rng),
        }
    }
}

/// Complex dense layer `act(Z W + b)`.
#[derive(Debug, Clone)]
pub struct FreqMlpLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl FreqMlpLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), complex_glorot(fan_in, fan_out, rng));
        let bias = store.add(format!("{name}.bias"), ComplexMatrix::zeros(1, fan_out));
        Self { weight, bias, activation, fan_in, fan_out }
    }

    pub fn scalar_count(fan_in: usize, fan_out: usize) -> usize {
        2 * (fan_in * fan_out + fan_out)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let z = tape.matmul(x, w)?;
        let z = tape.add_row(z, b)?;
        Ok(tape.activate(z, self.activation))
    }
}

/// Real and imaginary parts each uniform in `+-sqrt(6/(in+out))/sqrt(2)`.
fn complex_glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> ComplexMatrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() / std::f64::consts::SQRT_2;
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

/// Variables recorded during one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub spectrum: Var,
    pub embedded: Var,
    pub fused: Var,
    pub forecast: Var,
    pub projected: Var,
    /// Normalized prediction, `H x 1`.
    pub prediction: Var,
}

/// Result of [`SpecTfModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// De-normalized prediction of length `H`.
    pub prediction: Vec<f64>,
    pub prediction_normalized: Vec<f64>,
    /// Raw attention weights `(L/2+1) x L`, when the mode computes attention.
    pub attention: Option<Matrix>,
    /// De-normalized prediction of the unfused path with the same weights.
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SpecTfModel {
    config: ModelConfig,
    d_lm: usize,
    params: ParamStore,
    ts_embed: FreqMlpLayer,
    pos_table: Matrix,
    text: TextProjection,
    query: FreqMlpLayer,
    key: FreqMlpLayer,
    value: FreqMlpLayer,
    forecaster: FreqMlpLayer,
    projection: FreqMlpLayer,
}

impl SpecTfModel {
    pub fn new(config: ModelConfig, d_lm: usize) -> Result<Self> {
        config.validate()?;
        if d_lm == 0 {
            return Err(SpectfError::config("text embedding dimension must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let (d, dk) = (config.d_model, config.d_k);
        let (fin, fout) = (config.input_bins(), config.output_bins());
        let act = &config.activations;

        let ts_embed = FreqMlpLayer::new(&mut params, "ts_embed", 1, d, act.embed, &mut rng);
        let text = TextProjection::new(&mut params, "text", d_lm, d, act.text_hidden, &mut rng);
        let query = FreqMlpLayer::new(&mut params, "attn.query", d, dk, act.query, &mut rng);
        let key = FreqMlpLayer::new(&mut params, "attn.key", d, dk, act.key, &mut rng);
        let value = FreqMlpLayer::new(&mut params, "attn.value", d, d, act.value, &mut rng);
        let forecaster = FreqMlpLayer::new(&mut params, "forecaster", fin, fout, act.forecaster, &mut rng);
        let projection = FreqMlpLayer::new(&mut params, "projection", d, 1, act.projection, &mut rng);
        let pos_table = textenc::sinusoidal_table(fin, d);

        Ok(Self {
            config,
            d_lm,
            params,
            ts_embed,
            pos_table,
            text,
            query,
            key,
            value,
            forecaster,
            projection,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn d_lm(&self) -> usize {
        self.d_lm
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn positional_table(&self) -> &Matrix {
        &self.pos_table
    }

    /// Exact count of trainable real scalars for a configuration.
    pub fn count_parameters(config: &ModelConfig, d_lm: usize) -> usize {
        let (d, dk) = (config.d_model, config.d_k);
        FreqMlpLayer::scalar_count(1, d)
            + TextProjection::scalar_count(d_lm, d)
            + FreqMlpLayer::scalar_count(d, dk) * 2
            + FreqMlpLayer::scalar_count(d, d)
            + FreqMlpLayer::scalar_count(config.input_bins(), config.output_bins())
            + FreqMlpLayer::scalar_count(d, 1)
    }

    /// Half spectrum of the (normalized) lookback embedded to `F x d`.
    pub fn embed_series(&self, tape: &mut Tape, lookback: &[f64]) -> Result<(Var, Var)> {
        if lookback.len() != self.config.seq_len {
            return Err(SpectfError::invalid(format!(
                "embed_series: lookback has {} steps, model expects {}",
                lookback.len(),
                self.config.seq_len
            )));
        }
        let spec = spectral::rfft(lookback)?;
        let column = ComplexMatrix::from_complex(spec.bins().len(), 1, spec.bins())?;
        let spectrum = tape.constant(column);
        let emb = self.ts_embed.forward(tape, &self.params, spectrum)?;
        let pos = tape.constant_real(&self.pos_table);
        let embedded = tape.add(emb, pos)?;
        Ok((spectrum, embedded))
    }

    /// Complex text sequence `[rows x d]` from carried-forward embeddings.
    pub fn embed_text(&self, tape: &mut Tape, text: &Matrix, timestamps: &[i64]) -> Result<Var> {
        let aligned = textenc::temporal_align(text, timestamps)?;
        self.text.complex_project(tape, &self.params, &aligned)
    }

    /// Cross attention from frequency bins to text steps. Returns the
    /// attention output and the raw (pre-dropout) attention weights.
    pub fn freq_cross_attention(
        &self,
        tape: &mut Tape,
        embedded: Var,
        text: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Matrix)> {
        let (xe, st) = (tape.value(embedded).shape(), tape.value(text).shape());
        if xe.1 != self.config.d_model || st.1 != self.config.d_model {
            return Err(SpectfError::invalid(format!(
                "freq_cross_attention: embedding {xe:?} and text {st:?} must both have width {}",
                self.config.d_model
            )));
        }
        let q = self.query.forward(tape, &self.params, embedded)?;
        let k = self.key.forward(tape, &self.params, text)?;
        let v = self.value.forward(tape, &self.params, text)?;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let mag = tape.magnitude(scores);
        let scaled = tape.scale(mag, 1.0 / (self.config.d_k as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let weights = tape.value(attn).real_part();
        let attn = mode.dropout(tape, attn, self.config.dropout)?;
        let out = tape.matmul(attn, v)?;
        Ok((out, weights))
    }

    /// `(1 - a) X + a (X (.) O)`; returns `X` untouched at `a = 0`.
    pub fn multiplication_fusion(tape: &mut Tape, embedded: Var, attended: Var, alpha: f64) -> Result<Var> {
        if tape.value(embedded).shape() != tape.value(attended).shape() {
            return Err(SpectfError::invalid("multiplication_fusion: shape mismatch"));
        }
        if alpha == 0.0 {
            return Ok(embedded);
        }
        let fused = tape.cmul(embedded, attended)?;
        if alpha == 1.0 {
            return Ok(fused);
        }
        let keep = tape.scale(embedded, 1.0 - alpha);
        let mix = tape.scale(fused, alpha);
        tape.add(keep, mix)
    }

    /// Map `F x d` history bins to `G x d` horizon bins along the frequency axis.
    pub fn forecast_spectrum(&self, tape: &mut Tape, fused: Var) -> Result<Var> {
        let shape = tape.value(fused).shape();
        if shape != (self.config.input_bins(), self.config.d_model) {
            return Err(SpectfError::invalid(format!(
                "forecast_spectrum: expected {:?}, got {shape:?}",
                (self.config.input_bins(), self.config.d_model)
            )));
        }
        let t = tape.transpose(fused);
        let mapped = self.forecaster.forward(tape, &self.params, t)?;
        Ok(tape.transpose(mapped))
    }

    /// Project `G x d` to one bin value each and invert to `H` normalized samples.
    pub fn project_and_invert(&self, tape: &mut Tape, forecast: Var) -> Result<(Var, Var)> {
        let shape = tape.value(forecast).shape();
        if shape != (self.config.output_bins(), self.config.d_model) {
            return Err(SpectfError::invalid(format!(
                "project_and_invert: expected {:?}, got {shape:?}",
                (self.config.output_bins(), self.config.d_model)
            )));
        }
        let projected = self.projection.forward(tape, &self.params, forecast)?;
        let series = tape.irfft_column(projected, self.config.horizon)?;
        Ok((projected, series))
    }

    fn check_window(&self, window: &MultimodalWindow) -> Result<()> {
        let l = self.config.seq_len;
        if window.lookback.len() != l || window.timestamps.len() != l {
            return Err(SpectfError::invalid(format!(
                "window lookback/timestamps have lengths {}/{}, model expects {l}",
                window.lookback.len(),
                window.timestamps.len()
            )));
        }
        if window.text.shape() != (l, self.d_lm) {
            return Err(SpectfError::invalid(format!(
                "window text has shape {:?}, model expects {:?}",
                window.text.shape(),
                (l, self.d_lm)
            )));
        }
        Ok(())
    }

    /// Record the whole forward pass on `tape`.
    pub fn trace(
        &self,
        tape: &mut Tape,
        window: &MultimodalWindow,
        mode: &mut Mode<'_>,
        fusion: FusionMode,
    ) -> Result<(ForwardTrace, Option<Matrix>)> {
        self.check_window(window)?;
        let (spectrum, embedded) = self.embed_series(tape, &window.lookback)?;
        let embedded = mode.dropout(tape, embedded, self.config.dropout)?;

        let (fused, attention) = match fusion {
            FusionMode::NoText => (embedded, None),
            FusionMode::Full if self.config.prior_weight == 0.0 => (embedded, None),
            FusionMode::Full => {
                let text = self.embed_text(tape, &window.text, &window.timestamps)?;
                let (out, attn) = self.freq_cross_attention(tape, embedded, text, mode)?;
                let fused = Self::multiplication_fusion(tape, embedded, out, self.config.prior_weight)?;
                (fused, Some(attn))
            }
            FusionMode::NoMulfusion => {
                let text = self.embed_text(tape, &window.text, &window.timestamps)?;
                let (out, attn) = self.freq_cross_attention(tape, embedded, text, mode)?;
                (tape.add(embedded, out)?, Some(attn))
            }
            FusionMode::NoAttention => {
                let text = self.embed_text(tape, &window.text, &window.timestamps)?;
                let rows = tape.value(text).rows();
                let pool = ComplexMatrix::filled(
                    self.config.input_bins(),
                    rows,
                    num_complex::Complex64::new(1.0 / rows as f64, 0.0),
                );
                let pool = tape.constant(pool);
                let pooled = tape.matmul(pool, text)?;
                (tape.add(embedded, pooled)?, None)
            }
        };

        let forecast = self.forecast_spectrum(tape, fused)?;
        let (projected, prediction) = self.project_and_invert(tape, forecast)?;
        Ok((ForwardTrace { spectrum, embedded, fused, forecast, projected, prediction }, attention))
    }

    /// Training loss: MSE between the normalized prediction and the window's
    /// target normalized with the same statistics.
    pub fn loss(
        &self,
        tape: &mut Tape,
        window: &MultimodalWindow,
        mode: &mut Mode<'_>,
        fusion: FusionMode,
    ) -> Result<Var> {
        let (trace, _) = self.trace(tape, window, mode, fusion)?;
        tape.mse(trace.prediction, &window.normalized_target())
    }

    pub fn predict_normalized(&self, window: &MultimodalWindow, fusion: FusionMode) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (trace, _) = self.trace(&mut tape, window, &mut Mode::Eval, fusion)?;
        Ok(tape.value(trace.prediction).re().to_vec())
    }

    pub fn forward(&self, window: &MultimodalWindow, mode: &mut Mode<'_>, fusion: FusionMode) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let (trace, attention) = self.trace(&mut tape, window, mode, fusion)?;
        let prediction_normalized = tape.value(trace.prediction).re().to_vec();
        let aux_norm = self.predict_normalized(window, FusionMode::NoText)?;
        Ok(ForwardOutput {
            prediction: window.denormalize(&prediction_normalized),
            prediction_normalized,
            attention,
            aux: window.denormalize(&aux_norm),
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>, normalization: NormalizationMode, fusion: FusionMode) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        ctensor::save_params(&self.params, dir.join(PARAMS_FILE))?;
        let sidecar = ModelSidecar {
            model: self.config.clone(),
            d_lm: self.d_lm,
            normalization,
            mode: fusion,
        };
        fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, ModelSidecar)> {
        let dir = dir.as_ref();
        let sidecar: ModelSidecar = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR_FILE))?)?;
        let mut model = Self::new(sidecar.model.clone(), sidecar.d_lm)?;
        let entries = ctensor::load_params(dir.join(PARAMS_FILE))?;
        model.params.load_values(&entries)?;
        Ok((model, sidecar))
    }
}

pub const PARAMS_FILE: &str = "params.sptf";
pub const SIDECAR_FILE: &str = "model.json";

/// JSON sidecar stored next to the parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSidecar {
    pub model: ModelConfig,
    pub d_lm: usize,
    pub normalization: NormalizationMode,
    pub mode: FusionMode,
}
