//! Metrics, Adam, the training loop with early stopping, parallel
//! evaluation and the ablation driver.

use std::fs::OpenOptions;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctensor::{ComplexMatrix, ParamStore, Tape};
use crate::data::{Dataset, MultimodalWindow};
use crate::error::{Result, SpectfError};
use crate::model::{FusionMode, Mode, ModelConfig, SpecTfModel};

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "SPECTF_THREADS";

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(SpectfError::invalid(format!(
            "metric inputs must be non-empty and equal length, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update of a flat group; `t` is the 1-based step number.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Adam moments for every parameter in a store.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<ComplexMatrix>,
    v: Vec<ComplexMatrix>,
    t: u64,
    cfg: AdamConfig,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<ComplexMatrix> =
            store.iter().map(|p| ComplexMatrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0, cfg }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Update every trainable parameter from its accumulated gradient, real
    /// and imaginary entries alike.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            adam_update(p.value.re_mut(), p.grad.re(), m.re_mut(), v.re_mut(), self.t, lr, &self.cfg);
            adam_update(p.value.im_mut(), p.grad.im(), m.im_mut(), v.im_mut(), self.t, lr, &self.cfg);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            patience: 20,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            grad_clip: Some(5.0),
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(SpectfError::config("batch_size must be >= 1"));
        }
        if self.epochs < 1 || self.patience > self.epochs {
            return Err(SpectfError::config("need epochs >= 1 and patience <= epochs"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SpectfError::config("learning_rate must be positive"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(SpectfError::config("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Errors in normalized and de-normalized space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse_norm: f64,
    pub mae_norm: f64,
    pub mse_raw: f64,
    pub mae_raw: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub dataset: String,
    pub mode: FusionMode,
    pub seed: u64,
    pub horizon: usize,
    pub params: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 0-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub test: Option<Metrics>,
    pub wall_ms: u64,
}

impl RunReport {
    /// Copy with wall-time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunReport {
        RunReport { wall_ms: 0, ..self.clone() }
    }
}

fn eval_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
    })
}

/// Metrics of normalized predictions: per-window errors averaged within each
/// channel, then averaged over channels. Reduction follows window order.
pub fn score_predictions(windows: &[MultimodalWindow], preds: &[Vec<f64>]) -> Result<Metrics> {
    if windows.is_empty() || windows.len() != preds.len() {
        return Err(SpectfError::invalid("need one prediction per window and at least one window"));
    }
    let channels = windows.iter().map(|w| w.channel).max().unwrap_or(0) + 1;
    let mut sums = vec![[0.0f64; 4]; channels];
    let mut counts = vec![0usize; channels];
    for (w, p) in windows.iter().zip(preds) {
        let truth_norm = w.normalized_target();
        let raw = w.denormalize(p);
        let s = &mut sums[w.channel];
        s[0] += mse(p, &truth_norm)?;
        s[1] += mae(p, &truth_norm)?;
        s[2] += mse(&raw, &w.target)?;
        s[3] += mae(&raw, &w.target)?;
        counts[w.channel] += 1;
    }
    let mut macro_avg = [0.0f64; 4];
    let mut present = 0usize;
    for (s, &n) in sums.iter().zip(&counts) {
        if n == 0 {
            continue;
        }
        present += 1;
        for k in 0..4 {
            macro_avg[k] += s[k] / n as f64;
        }
    }
    let m = macro_avg.map(|v| v / present as f64);
    Ok(Metrics { mse_norm: m[0], mae_norm: m[1], mse_raw: m[2], mae_raw: m[3], windows: windows.len() })
}

/// Normalized predictions for every window, computed in parallel.
pub fn predict_all(model: &SpecTfModel, windows: &[MultimodalWindow], fusion: FusionMode) -> Result<Vec<Vec<f64>>> {
    eval_pool().install(|| windows.par_iter().map(|w| model.predict_normalized(w, fusion)).collect())
}

pub fn evaluate(model: &SpecTfModel, windows: &[MultimodalWindow], fusion: FusionMode) -> Result<Metrics> {
    let preds = predict_all(model, windows, fusion)?;
    score_predictions(windows, &preds)
}

/// Predict each window's lookback mean for the whole horizon.
pub fn mean_baseline(windows: &[MultimodalWindow]) -> Result<Metrics> {
    let preds: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| {
            let m = w.lookback.iter().sum::<f64>() / w.lookback.len() as f64;
            vec![m; w.target.len()]
        })
        .collect();
    score_predictions(windows, &preds)
}

fn clip_gradients(store: &mut ParamStore, max_norm: f64) {
    let norm = store.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            p.grad = p.grad.scale(s);
        }
    }
}

fn round_params(store: &mut ParamStore) {
    for p in store.iter_mut() {
        p.value.round_to_f32();
    }
}

/// Mini-batch training with early stopping on normalized validation MSE.
/// The best-validation parameters are restored before returning.
pub fn train(
    model: &mut SpecTfModel,
    train_set: &[MultimodalWindow],
    val_set: &[MultimodalWindow],
    config: &TrainConfig,
    fusion: FusionMode,
) -> Result<RunReport> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(SpectfError::config("training needs non-empty train and val windows"));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params(), config.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().snapshot());
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.params_mut().zero_grad();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let loss = model.loss(&mut tape, &train_set[i], &mut Mode::Train(&mut rng), fusion)?;
                batch_loss += tape.value(loss).re()[0];
                tape.backward(loss, model.params_mut())?;
            }
            if !batch_loss.is_finite() {
                return Err(SpectfError::Diverged { epoch, message: "training loss is not finite".into() });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for p in model.params_mut().iter_mut() {
                p.grad = p.grad.scale(scale);
            }
            if let Some(c) = config.grad_clip {
                clip_gradients(model.params_mut(), c);
            }
            adam.step(model.params_mut(), config.learning_rate);
            round_params(model.params_mut());
        }
        train_loss.push(epoch_loss / train_set.len() as f64);

        let val = evaluate(model, val_set, fusion)?.mse_norm;
        if !val.is_finite() {
            return Err(SpectfError::Diverged { epoch, message: "validation loss is not finite".into() });
        }
        val_loss.push(val);
        log::debug!("epoch {epoch}: train {:.6} val {val:.6}", train_loss[epoch]);
        if val < best.0 {
            best = (val, epoch, model.params().snapshot());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().load_values(&best.2)?;

    Ok(RunReport {
        run_id: String::new(),
        dataset: String::new(),
        mode: fusion,
        seed: config.seed,
        horizon: model.config().horizon,
        params: model.params().trainable_scalars(),
        train_loss,
        val_loss,
        best_epoch: best.1,
        best_val_loss: best.0,
        stopped_early,
        test: None,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

pub fn run_id(dataset: &str, mode: FusionMode, seed: u64, horizon: usize) -> String {
    format!("{dataset}-{}-s{seed}-h{horizon}", mode.as_str())
}

/// Build, train and test one model. `seed` drives both initialization and
/// batching.
pub fn run_experiment(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    fusion: FusionMode,
    seed: u64,
) -> Result<(SpecTfModel, RunReport)> {
    let started = Instant::now();
    let mut model = SpecTfModel::new(ModelConfig { seed, ..model_cfg.clone() }, data.d_lm)?;
    let tc = TrainConfig { seed, ..train_cfg.clone() };
    let mut report = train(&mut model, &data.train, &data.val, &tc, fusion)?;
    report.test = Some(evaluate(&model, &data.test, fusion)?);
    report.dataset = data.name.clone();
    report.run_id = run_id(&data.name, fusion, seed, model_cfg.horizon);
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok((model, report))
}

/// Every `(mode, seed)` pair on identical data; no_text sees zeroed text.
/// Reports come back mode-major, then in seed order.
pub fn ablation_run(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    modes: &[FusionMode],
    seeds: &[u64],
) -> Result<Vec<RunReport>> {
    let blank = modes.contains(&FusionMode::NoText).then(|| data.without_text());
    let jobs: Vec<(FusionMode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    eval_pool().install(|| {
        jobs.par_iter()
            .map(|&(mode, seed)| {
                let d = if mode == FusionMode::NoText { blank.as_ref().unwrap() } else { data };
                run_experiment(d, model_cfg, train_cfg, mode, seed).map(|(_, r)| r)
            })
            .collect()
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median test MSE (normalized) per mode, in `modes` order.
pub fn median_test_mse(reports: &[RunReport], modes: &[FusionMode]) -> Vec<(FusionMode, f64)> {
    modes
        .iter()
        .map(|&m| {
            let v: Vec<f64> =
                reports.iter().filter(|r| r.mode == m).filter_map(|r| r.test.map(|t| t.mse_norm)).collect();
            (m, median(&v))
        })
        .collect()
}

pub const LEDGER_HEADER: [&str; 11] =
    ["run_id", "dataset", "mode", "seed", "horizon", "mse_norm", "mae_norm", "mse_raw", "mae_raw", "params", "wall_ms"];

/// Append report rows to a CSV ledger, writing the header for a new file.
pub fn append_ledger(path: impl AsRef<Path>, reports: &[RunReport]) -> Result<()> {
    let path = path.as_ref();
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(LEDGER_HEADER)?;
    }
    for r in reports {
        let t = r.test.unwrap_or(Metrics { mse_norm: f64::NAN, mae_norm: f64::NAN, mse_raw: f64::NAN, mae_raw: f64::NAN, windows: 0 });
        w.write_record([
            r.run_id.clone(),
            r.dataset.clone(),
            r.mode.as_str().to_owned(),
            r.seed.to_string(),
            r.horizon.to_string(),
            t.mse_norm.to_string(),
            t.mae_norm.to_string(),
            t.mse_raw.to_string(),
            t.mae_raw.to_string(),
            r.params.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctensor::Matrix;
    use crate::data::{build_dataset, SeriesTable, SplitRatios, WindowSpec, NormalizationMode};
    use crate::model::ActivationConfig;

    #[test]
    fn metric_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), 2.0);
        assert_eq!(mae(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mse(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mse(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.5, 0.5], &[3.0, 3.0]).unwrap(), 2.5);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let cfg = AdamConfig::default();
        let (mut w, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&mut w, &[1.0], &mut m, &mut v, 1, 0.1, &cfg);
        assert!((w[0] - 0.9).abs() < 1e-6);

        let (mut w, mut m, mut v) = ([0.3, -2.0], [0.0; 2], [0.0; 2]);
        adam_update(&mut w, &[0.0, 0.0], &mut m, &mut v, 1, 0.1, &cfg);
        assert_eq!(w, [0.3, -2.0]);

        let mut a = ParamStore::new();
        let ida = a.add("a", ComplexMatrix::filled(2, 2, num_complex::Complex64::new(1.0, -1.0)));
        let idb = a.add("b", ComplexMatrix::filled(2, 2, num_complex::Complex64::new(1.0, -1.0)));
        for id in [ida, idb] {
            a.get_mut(id).grad = ComplexMatrix::filled(2, 2, num_complex::Complex64::new(0.5, 2.0));
        }
        let mut st = AdamState::new(&a, cfg);
        st.step(&mut a, 0.01);
        st.step(&mut a, 0.01);
        assert_eq!(a.get(ida).value, a.get(idb).value);
        assert_eq!(st.steps(), 2);
    }

    fn sine_dataset(len: usize, channels: usize, d_lm: usize) -> Dataset {
        let cols = (0..channels)
            .map(|c| (0..len).map(|t| (std::f64::consts::TAU * t as f64 / 12.0 + c as f64).sin() * 2.0 + 5.0).collect())
            .collect();
        let table = SeriesTable::new((0..len as i64).collect(), (0..channels).map(|c| format!("c{c}")).collect(), cols).unwrap();
        let spec = WindowSpec { seq_len: 12, horizon: 6, stride: 1 };
        build_dataset("sine", &table, &[], d_lm, &spec, &SplitRatios::default(), NormalizationMode::Instance).unwrap()
    }

    fn small_model_cfg() -> ModelConfig {
        ModelConfig { seq_len: 12, horizon: 6, d_model: 8, d_k: 4, dropout: 0.1, ..Default::default() }
    }

    #[test]
    fn perfect_predictions_score_zero_and_single_window_metrics() {
        let data = sine_dataset(200, 2, 2);
        let perfect: Vec<Vec<f64>> = data.test.iter().map(|w| w.normalized_target()).collect();
        let m = score_predictions(&data.test, &perfect).unwrap();
        assert!(m.mse_norm.abs() < 1e-20 && m.mae_raw.abs() < 1e-12);

        let w = &data.test[..1];
        let p = vec![vec![0.25; 6]];
        let m = score_predictions(w, &p).unwrap();
        assert_eq!(m.mse_norm, mse(&p[0], &w[0].normalized_target()).unwrap());
        assert_eq!(m.mae_raw, mae(&w[0].denormalize(&p[0]), &w[0].target).unwrap());
    }

    #[test]
    fn mean_baseline_matches_normalized_target_moment() {
        let data = sine_dataset(300, 2, 2);
        let m = mean_baseline(&data.test).unwrap();
        // instance-normalized lookbacks have mean 0, so the baseline error is
        // the second moment of the normalized targets
        let second: f64 = data.test.iter().map(|w| w.normalized_target().iter().map(|v| v * v).sum::<f64>() / 6.0).sum::<f64>()
            / data.test.len() as f64;
        assert!((m.mse_norm - second).abs() < 1e-9);
    }

    #[test]
    fn evaluation_is_thread_independent() {
        let data = sine_dataset(200, 2, 3);
        let model = SpecTfModel::new(small_model_cfg(), 3).unwrap();
        let par = evaluate(&model, &data.test, FusionMode::Full).unwrap();
        let seq: Vec<Vec<f64>> = data.test.iter().map(|w| model.predict_normalized(w, FusionMode::Full).unwrap()).collect();
        assert_eq!(par, score_predictions(&data.test, &seq).unwrap());
    }

    #[test]
    fn patience_zero_stops_after_first_non_improvement() {
        let data = sine_dataset(200, 1, 2);
        let mut model = SpecTfModel::new(small_model_cfg(), 2).unwrap();
        let cfg = TrainConfig { epochs: 30, patience: 0, learning_rate: 0.05, batch_size: 8, ..Default::default() };
        let r = train(&mut model, &data.train, &data.val, &cfg, FusionMode::Full).unwrap();
        let n = r.val_loss.len();
        if r.stopped_early {
            assert!(r.val_loss[n - 1] >= r.val_loss[..n - 1].iter().cloned().fold(f64::INFINITY, f64::min));
            assert!(r.val_loss[..n - 1].windows(2).all(|w| w[1] < w[0]));
        }
        let min = r.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_loss, min);
        assert_eq!(r.val_loss[r.best_epoch], min);
    }

    #[test]
    fn best_checkpoint_is_restored() {
        let data = sine_dataset(200, 1, 2);
        let mut model = SpecTfModel::new(small_model_cfg(), 2).unwrap();
        let cfg = TrainConfig { epochs: 6, patience: 6, learning_rate: 0.02, batch_size: 16, ..Default::default() };
        let r = train(&mut model, &data.train, &data.val, &cfg, FusionMode::Full).unwrap();
        let val = evaluate(&model, &data.val, FusionMode::Full).unwrap().mse_norm;
        assert_eq!(val, r.best_val_loss);
        for p in model.params().iter() {
            let mut q = p.value.clone();
            q.round_to_f32();
            assert_eq!(q, p.value);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = sine_dataset(200, 2, 2);
        let cfg = TrainConfig { epochs: 4, patience: 4, learning_rate: 1e-3, batch_size: 8, ..Default::default() };
        let (_, a) = run_experiment(&data, &small_model_cfg(), &cfg, FusionMode::Full, 3).unwrap();
        let (_, b) = run_experiment(&data, &small_model_cfg(), &cfg, FusionMode::Full, 3).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert!(a.train_loss.last().unwrap() < &a.train_loss[0]);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut data = sine_dataset(200, 1, 2);
        data.train[0].target[0] = f64::NAN;
        let mut model = SpecTfModel::new(small_model_cfg(), 2).unwrap();
        let cfg = TrainConfig { epochs: 2, patience: 1, ..Default::default() };
        match train(&mut model, &data.train, &data.val, &cfg, FusionMode::Full) {
            Err(SpectfError::Diverged { epoch: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ablation_rows_and_text_invariance() {
        let mut data = sine_dataset(200, 1, 2);
        let cfg = TrainConfig { epochs: 2, patience: 2, learning_rate: 1e-3, batch_size: 16, ..Default::default() };
        let mc = ModelConfig { activations: ActivationConfig::default(), ..small_model_cfg() };
        let modes = [FusionMode::Full, FusionMode::NoText];
        let reports = ablation_run(&data, &mc, &cfg, &modes, &[1, 2, 3]).unwrap();
        assert_eq!(reports.len(), 6);
        assert_eq!(median_test_mse(&reports, &modes).len(), 2);

        for w in data.train.iter_mut().chain(data.val.iter_mut()).chain(data.test.iter_mut()) {
            w.text = Matrix::from_vec(12, 2, vec![0.7; 24]).unwrap();
        }
        let again = ablation_run(&data, &mc, &cfg, &[FusionMode::NoText], &[1, 2, 3]).unwrap();
        for (a, b) in reports[3..].iter().zip(&again) {
            assert_eq!(a.without_timing(), b.without_timing());
        }

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledger.csv");
        append_ledger(&p, &reports[..2]).unwrap();
        append_ledger(&p, &reports[2..]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("run_id,dataset,mode,seed,horizon,"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 60, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
