//! Self-contained numerical checks: the complex product's polar law, the
//! convolution theorem, Parseval's identity and a finite-difference check of
//! every model gradient. None of them touch data files or checkpoints.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctensor::{Matrix, Tape};
use crate::data::MultimodalWindow;
use crate::error::{Result, SpectfError};
use crate::model::{ActivationConfig, FusionMode, Mode, ModelConfig, SpecTfModel};
use crate::spectral::{self, Spectrum};
use crate::textenc::{self, TextRecord};

pub const POLAR_TOL: f64 = 1e-10;
pub const CONVOLUTION_TOL: f64 = 1e-9;
pub const PARSEVAL_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const GRADIENT_FLOOR: f64 = 1e-7;
pub const FD_STEP: f64 = 1e-4;
pub const MAX_GRADIENT_SCALARS: usize = 2000;

pub const CONVOLUTION_LENGTHS: [usize; 4] = [4, 7, 24, 48];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64, cases: usize) -> Self {
        Self { name: name.to_owned(), passed: max_error <= tolerance, max_error, tolerance, cases }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<22} max_error={:.3e} tolerance={:.1e} cases={} {}",
            self.name,
            self.max_error,
            self.tolerance,
            self.cases,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    // log-uniform magnitude over four decades, uniform phase
    let r = 10f64.powf(rng.gen_range(-2.0..2.0));
    Complex64::from_polar(r, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
}

fn wrap_phase(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w - tau
    } else {
        w
    }
}

/// `|z1 z2| = |z1||z2|` (relative) and `arg(z1 z2) = arg z1 + arg z2 mod 2pi`.
pub fn check_complex_mult_polar(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = vec![
        (Complex64::new(1.0, 1.0), Complex64::new(1.0, -1.0)),
        (Complex64::new(-3.0, 0.5), Complex64::new(-3.0, -0.5)),
    ];
    pairs.extend((0..trials).map(|_| (random_complex(&mut rng), random_complex(&mut rng))));
    let mut worst = 0.0f64;
    for (a, b) in &pairs {
        let p = a * b;
        let expect = a.norm() * b.norm();
        worst = worst.max((p.norm() - expect).abs() / expect);
        worst = worst.max(wrap_phase(p.arg() - a.arg() - b.arg()).abs());
    }
    CheckResult::new("complex_mult_polar", worst, POLAR_TOL, pairs.len())
}

fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn relative_inf_error(actual: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = actual.iter().zip(reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `irfft(rfft(x) * rfft(h))` against direct circular convolution.
pub fn check_convolution_theorem(trials: usize, lengths: &[usize], seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &n in lengths {
        if n < 2 {
            return Err(SpectfError::invalid("convolution check lengths must be >= 2"));
        }
        for _ in 0..trials {
            let x = random_signal(&mut rng, n);
            let h = random_signal(&mut rng, n);
            let (fx, fh) = (spectral::rfft(&x)?, spectral::rfft(&h)?);
            let prod = fx.bins().iter().zip(fh.bins()).map(|(a, b)| a * b).collect();
            let via_freq = spectral::irfft(&Spectrum::new(prod, n)?)?;
            let direct = spectral::circular_convolve(&x, &h)?;
            worst = worst.max(relative_inf_error(&via_freq, &direct));
            cases += 1;
        }
    }
    Ok(CheckResult::new("convolution_theorem", worst, CONVOLUTION_TOL, cases))
}

/// Time-domain energy against `(1/n) sum |X_k|^2`.
pub fn check_parseval(trials: usize, lengths: &[usize], seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &n in lengths {
        if n < 2 {
            return Err(SpectfError::invalid("parseval check lengths must be >= 2"));
        }
        for _ in 0..trials {
            let x = random_signal(&mut rng, n);
            let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            let e_t = spectral::signal_energy(&x);
            let e_f = spectral::spectral_energy(&spectral::fft(&xc)?);
            worst = worst.max((e_t - e_f).abs() / e_t.max(f64::MIN_POSITIVE));
            cases += 1;
        }
    }
    Ok(CheckResult::new("parseval", worst, PARSEVAL_TOL, cases))
}

/// A model configuration and window small enough for exhaustive perturbation.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub config: ModelConfig,
    pub d_lm: usize,
    pub documents: usize,
    pub fusion: FusionMode,
}

impl GradientCase {
    pub fn tiny() -> Self {
        Self {
            config: ModelConfig {
                seq_len: 8,
                horizon: 4,
                d_model: 4,
                d_k: 2,
                dropout: 0.1,
                prior_weight: 0.5,
                activations: ActivationConfig::default(),
                seed: 7,
            },
            d_lm: 6,
            documents: 3,
            fusion: FusionMode::Full,
        }
    }

    /// Linear activations on the unfused path: the loss is then quadratic in
    /// each scalar, so central differences are exact up to rounding. (The
    /// attention softmax and the fusion product stay nonlinear whatever the
    /// activation flags say.)
    pub fn linear() -> Self {
        let mut c = Self::tiny();
        c.config.activations = ActivationConfig::all_linear();
        c.fusion = FusionMode::NoText;
        c
    }

    /// A window with `documents` texts spread over the lookback.
    pub fn window(&self, seed: u64) -> MultimodalWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        let (l, h) = (self.config.seq_len, self.config.horizon);
        let raw: Vec<f64> = (0..l).map(|t| (t as f64 * 0.9).sin() + rng.gen_range(-0.3..0.3)).collect();
        let target: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ts: Vec<i64> = (0..l as i64).collect();
        let records: Vec<TextRecord> = (0..self.documents)
            .map(|k| TextRecord {
                timestamp: (k * l / self.documents.max(1)) as i64,
                embedding: (0..self.d_lm).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let text: Matrix = textenc::align_texts_to_window(&records, &ts, self.d_lm);
        MultimodalWindow::from_raw(0, &raw, target, text, ts, None)
    }
}

fn loss_value(model: &SpecTfModel, window: &MultimodalWindow, fusion: FusionMode, mask_seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, window, &mut Mode::Train(&mut rng), fusion)?;
    Ok(tape.value(loss).re()[0])
}

/// Central differences of the training loss against tape gradients for
/// every real scalar of every parameter. Dropout masks are drawn from the
/// same seed on every evaluation, so the loss is a fixed function.
pub fn check_gradients(case: &GradientCase, seed: u64) -> Result<CheckResult> {
    let mut model = SpecTfModel::new(ModelConfig { seed, ..case.config.clone() }, case.d_lm)?;
    let scalars = model.params().trainable_scalars();
    if scalars > MAX_GRADIENT_SCALARS {
        return Err(SpectfError::invalid(format!(
            "gradient check needs <= {MAX_GRADIENT_SCALARS} scalars, config has {scalars}"
        )));
    }
    // Zero biases put the DC row (exactly 0 after instance normalization) on
    // the activation kink, where central differences average two slopes.
    let mut jitter = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    for p in model.params_mut().iter_mut() {
        for v in p.value.re_mut() {
            *v += jitter.gen_range(-0.1..0.1);
        }
        for v in p.value.im_mut() {
            *v += jitter.gen_range(-0.1..0.1);
        }
    }
    let window = case.window(seed);
    let mask_seed = seed ^ 0xd00d;

    {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &window, &mut Mode::Train(&mut rng), case.fusion)?;
        model.params_mut().zero_grad();
        tape.backward(loss, model.params_mut())?;
    }

    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for id in ids {
        let len = model.params().get(id).value.len();
        for plane in 0..2 {
            for i in 0..len {
                let analytic = {
                    let g = &model.params().get(id).grad;
                    if plane == 0 { g.re()[i] } else { g.im()[i] }
                };
                let mut eval = |delta: f64| -> Result<f64> {
                    let v = &mut model.params_mut().get_mut(id).value;
                    let slot = if plane == 0 { &mut v.re_mut()[i] } else { &mut v.im_mut()[i] };
                    let orig = *slot;
                    *slot = orig + delta;
                    let out = loss_value(&model, &window, case.fusion, mask_seed);
                    let v = &mut model.params_mut().get_mut(id).value;
                    if plane == 0 { v.re_mut()[i] = orig } else { v.im_mut()[i] = orig }
                    out
                };
                let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    Ok(CheckResult::new("gradients", worst, GRADIENT_TOL, cases))
}

/// The full suite with default sizes.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_complex_mult_polar(10_000, seed),
        check_convolution_theorem(50, &CONVOLUTION_LENGTHS, seed)?,
        check_parseval(50, &[2, 3, 4, 7, 24, 48, 100, 337], seed)?,
        check_gradients(&GradientCase::tiny(), seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctensor::CORRUPT_MATMUL_BACKWARD;

    #[test]
    fn polar_law_examples_and_sweep() {
        let z = Complex64::new(1.0, 1.0) * Complex64::new(1.0, -1.0);
        assert_eq!(z, Complex64::new(2.0, 0.0));
        let w = Complex64::new(-0.4, 2.5);
        let zz = w * w.conj();
        assert!(zz.im == 0.0 && zz.re >= 0.0);
        let r = check_complex_mult_polar(10_000, 1);
        assert!(r.passed, "{}", r.line());
        assert_eq!(r.cases, 10_002);
    }

    #[test]
    fn convolution_examples() {
        let x = [0.5, -1.0, 2.0, 0.25];
        let delta = [1.0, 0.0, 0.0, 0.0];
        let y = spectral::circular_convolve(&x, &delta).unwrap();
        for (a, b) in y.iter().zip(x) {
            assert!((a - b).abs() < 1e-15);
        }
        let h = [0.1, 0.2, -0.3, 0.7];
        let (a, b) = (spectral::circular_convolve(&x, &h).unwrap(), spectral::circular_convolve(&h, &x).unwrap());
        assert!(relative_inf_error(&a, &b) < 1e-15);
        let r = check_convolution_theorem(20, &CONVOLUTION_LENGTHS, 2).unwrap();
        assert!(r.passed, "{}", r.line());
        assert!(check_convolution_theorem(1, &[1], 0).is_err());
    }

    #[test]
    fn parseval_examples() {
        assert_eq!(spectral::signal_energy(&[0.0; 6]), 0.0);
        let imp = [1.0, 0.0, 0.0, 0.0, 0.0];
        let xc: Vec<Complex64> = imp.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        assert!((spectral::spectral_energy(&spectral::fft(&xc).unwrap()) - 1.0).abs() < 1e-15);
        let r = check_parseval(20, &[4, 7, 24, 48], 3).unwrap();
        assert!(r.passed, "{}", r.line());
    }

    #[test]
    fn linear_model_gradients_are_near_exact() {
        let r = check_gradients(&GradientCase::linear(), 7).unwrap();
        assert!(r.max_error <= 1e-8, "{}", r.line());
    }

    #[test]
    fn tiny_model_gradients_pass() {
        let case = GradientCase::tiny();
        let r = check_gradients(&case, 7).unwrap();
        assert!(r.passed, "{}", r.line());
        assert_eq!(r.cases, SpecTfModel::count_parameters(&case.config, case.d_lm));
        for mode in [FusionMode::NoAttention, FusionMode::NoMulfusion] {
            let r = check_gradients(&GradientCase { fusion: mode, ..case.clone() }, 7).unwrap();
            assert!(r.passed, "{mode:?}: {}", r.line());
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        CORRUPT_MATMUL_BACKWARD.with(|c| c.set(true));
        let r = check_gradients(&GradientCase::tiny(), 7);
        CORRUPT_MATMUL_BACKWARD.with(|c| c.set(false));
        let r = r.unwrap();
        assert!(!r.passed, "{}", r.line());
    }

    #[test]
    fn oversized_configs_are_rejected() {
        let mut case = GradientCase::tiny();
        case.config.d_model = 32;
        assert!(check_gradients(&case, 1).is_err());
    }
}
