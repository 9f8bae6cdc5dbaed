//! Reverse-mode differentiation over complex matrices.
//!
//! Every complex entry is treated as two independent real coordinates, so the
//! gradient stored for a node packs `dL/d re` into the real plane and
//! `dL/d im` into the imaginary plane. Real-valued intermediates are complex
//! matrices with a zero imaginary plane; their backward rules ignore the
//! imaginary part of the incoming gradient.

use rand::Rng;

use super::matrix::{real_matmul_acc, real_transpose, ComplexMatrix, Matrix};
use super::param::{ParamId, ParamStore};
use crate::error::{Result, SpectfError};
use crate::spectral::{self, ComplexValue, Spectrum};

/// Slope of the negative branch of the split leaky-ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Pointwise nonlinearity applied separately to real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::LeakyRelu if v <= 0.0 => LEAKY_SLOPE * v,
            _ => v,
        }
    }

    #[inline]
    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::LeakyRelu if v <= 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }
}

#[cfg(test)]
thread_local! {
    /// Negative-control switch: drops the conjugation in the matmul backward rule.
    pub(crate) static CORRUPT_MATMUL_BACKWARD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

#[cfg(test)]
fn corrupt_matmul() -> bool {
    CORRUPT_MATMUL_BACKWARD.with(|c| c.get())
}

#[cfg(not(test))]
#[inline(always)]
fn corrupt_matmul() -> bool {
    false
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    PairMatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Magnitude(Var),
    SoftmaxRows(Var),
    Activate(Var, Activation),
    Dropout(Var, Vec<f64>),
    IrfftColumn(Var, usize),
    Pack(Var, Var),
    Mse(Var, Vec<f64>),
    SumAbsSq(Var),
}

#[derive(Debug)]
struct Node {
    value: ComplexMatrix,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<ComplexMatrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&ComplexMatrix> {
        self.grads[var.0].as_ref()
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> SpectfError {
    SpectfError::invalid(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ComplexMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: ComplexMatrix, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b)
            | Op::PairMatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Hadamard(a, b)
            | Op::Pack(a, b) => self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad,
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Magnitude(a)
            | Op::SoftmaxRows(a)
            | Op::Activate(a, _)
            | Op::Dropout(a, _)
            | Op::IrfftColumn(a, _)
            | Op::Mse(a, _)
            | Op::SumAbsSq(a) => self.nodes[a.0].requires_grad,
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: ComplexMatrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_real(&mut self, value: &Matrix) -> Var {
        self.push(ComplexMatrix::from_real(value), Op::Constant)
    }

    /// Record the current value of a parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Independent real products on each plane (`re*re`, `im*im`).
    pub fn pair_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).pair_matmul(self.value(b))?;
        Ok(self.push(out, Op::PairMatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `x + b` with the `1 x n` row `b` added to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let n = xv.cols();
        for r in 0..xv.rows() {
            for c in 0..n {
                out.re_mut()[r * n + c] += bv.re()[c];
                out.im_mut()[r * n + c] += bv.im()[c];
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn cmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn magnitude(&mut self, a: Var) -> Var {
        let out = ComplexMatrix::from_real(&self.value(a).magnitude());
        self.push(out, Op::Magnitude(a))
    }

    /// Row softmax of the real plane.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = ComplexMatrix::from_real(&softmax_rows(&self.value(a).real_part()));
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Linear {
            return a;
        }
        let src = self.value(a);
        let out = ComplexMatrix::from_parts(
            src.rows(),
            src.cols(),
            src.re().iter().map(|&v| act.apply(v)).collect(),
            src.im().iter().map(|&v| act.apply(v)).collect(),
        )
        .expect("shape preserved");
        self.push(out, Op::Activate(a, act))
    }

    /// Inverted dropout with one mask draw per complex entry.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        check_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let mask = dropout_mask(self.value(a).len(), rate, rng);
        let src = self.value(a);
        let out = ComplexMatrix::from_parts(
            src.rows(),
            src.cols(),
            src.re().iter().zip(&mask).map(|(v, m)| v * m).collect(),
            src.im().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )?;
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    /// Inverse real transform of a `(n/2+1) x 1` spectrum column to an `n x 1`
    /// real column. Imaginary parts of bin 0 (and of the Nyquist bin for even
    /// `n`) are zeroed before inversion.
    pub fn irfft_column(&mut self, a: Var, n: usize) -> Result<Var> {
        let src = self.value(a);
        if src.cols() != 1 || src.rows() != spectral::half_len(n) {
            return Err(shape_err("irfft_column", src.shape(), (spectral::half_len(n), 1)));
        }
        let bins: Vec<ComplexValue> = (0..src.rows()).map(|k| src.get(k, 0)).collect();
        let mut spec = Spectrum::new(bins, n)?;
        spec.enforce_hermitian();
        let x = spectral::irfft(&spec)?;
        let out = ComplexMatrix::from_real(&Matrix::from_vec(n, 1, x)?);
        Ok(self.push(out, Op::IrfftColumn(a, n)))
    }

    /// Complex matrix whose real plane is `re_src.re` and imaginary plane is `im_src.re`.
    pub fn pack(&mut self, re_src: Var, im_src: Var) -> Result<Var> {
        let (a, b) = (self.value(re_src), self.value(im_src));
        if a.shape() != b.shape() {
            return Err(shape_err("pack", a.shape(), b.shape()));
        }
        let out = ComplexMatrix::from_parts(a.rows(), a.cols(), a.re().to_vec(), b.re().to_vec())?;
        Ok(self.push(out, Op::Pack(re_src, im_src)))
    }

    /// Mean squared error between the real plane of `pred` and `target`.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || target.is_empty() {
            return Err(SpectfError::invalid(format!(
                "mse: prediction has {} entries, target {}",
                p.len(),
                target.len()
            )));
        }
        let loss = p.re().iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / target.len() as f64;
        let out = ComplexMatrix::from_parts(1, 1, vec![loss], vec![0.0])?;
        Ok(self.push(out, Op::Mse(pred, target.to_vec())))
    }

    /// `sum |z|^2` over all entries.
    pub fn sum_abs_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).norm_sqr();
        let out = ComplexMatrix::from_parts(1, 1, vec![s], vec![0.0]).expect("1x1");
        self.push(out, Op::SumAbsSq(a))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(SpectfError::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<ComplexMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ComplexMatrix::from_parts(1, 1, vec![1.0], vec![0.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backward_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Run the backward pass and add parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<ComplexMatrix>], v: Var, g: ComplexMatrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, g: &ComplexMatrix, grads: &mut [Option<ComplexMatrix>]) {
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let bh = if corrupt_matmul() { bv.transpose() } else { bv.conj().transpose() };
                    self.accumulate(grads, *a, g.matmul(&bh).expect("shapes checked in forward"));
                }
                if self.nodes[b.0].requires_grad {
                    let ah = av.conj().transpose();
                    self.accumulate(grads, *b, ah.matmul(g).expect("shapes checked in forward"));
                }
            }
            Op::PairMatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].requires_grad {
                    let mut ga = ComplexMatrix::zeros(m, k);
                    real_matmul_acc(g.re(), &real_transpose(bv.re(), k, n), ga.re_mut(), m, n, k);
                    real_matmul_acc(g.im(), &real_transpose(bv.im(), k, n), ga.im_mut(), m, n, k);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = ComplexMatrix::zeros(k, n);
                    real_matmul_acc(&real_transpose(av.re(), m, k), g.re(), gb.re_mut(), k, m, n);
                    real_matmul_acc(&real_transpose(av.im(), m, k), g.im(), gb.im_mut(), k, m, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                let n = g.cols();
                let mut gb = ComplexMatrix::zeros(1, n);
                for r in 0..g.rows() {
                    for c in 0..n {
                        gb.re_mut()[c] += g.re()[r * n + c];
                        gb.im_mut()[c] += g.im()[r * n + c];
                    }
                }
                self.accumulate(grads, *bias, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.hadamard(&bv.conj()).expect("same shape"));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, g.hadamard(&av.conj()).expect("same shape"));
                }
            }
            Op::Magnitude(a) => {
                let av = self.value(*a);
                let mag = &node.value;
                let mut ga = ComplexMatrix::zeros(av.rows(), av.cols());
                for i in 0..av.len() {
                    let m = mag.re()[i];
                    if m > 0.0 {
                        ga.re_mut()[i] = g.re()[i] * av.re()[i] / m;
                        ga.im_mut()[i] = g.re()[i] * av.im()[i] / m;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut ga = ComplexMatrix::zeros(rows, cols);
                for r in 0..rows {
                    let yr = &y.re()[r * cols..(r + 1) * cols];
                    let gr = &g.re()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        ga.re_mut()[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Activate(a, act) => {
                let av = self.value(*a);
                let ga = ComplexMatrix::from_parts(
                    av.rows(),
                    av.cols(),
                    av.re().iter().zip(g.re()).map(|(x, gv)| gv * act.derivative(*x)).collect(),
                    av.im().iter().zip(g.im()).map(|(x, gv)| gv * act.derivative(*x)).collect(),
                )
                .expect("shape preserved");
                self.accumulate(grads, *a, ga);
            }
            Op::Dropout(a, mask) => {
                let ga = ComplexMatrix::from_parts(
                    g.rows(),
                    g.cols(),
                    g.re().iter().zip(mask).map(|(v, m)| v * m).collect(),
                    g.im().iter().zip(mask).map(|(v, m)| v * m).collect(),
                )
                .expect("shape preserved");
                self.accumulate(grads, *a, ga);
            }
            Op::IrfftColumn(a, n) => {
                // Adjoint of the (linear) inverse: scaled forward transform of the
                // upstream gradient, doubled on bins that appear twice in the
                // Hermitian completion.
                let n = *n;
                let spec = spectral::rfft(g.re()).expect("nonempty");
                let nyquist = if n % 2 == 0 { Some(n / 2) } else { None };
                let bins: Vec<ComplexValue> = spec
                    .bins()
                    .iter()
                    .enumerate()
                    .map(|(k, z)| {
                        let weight = if k == 0 || Some(k) == nyquist { 1.0 } else { 2.0 };
                        let mut v = z * (weight / n as f64);
                        if k == 0 || Some(k) == nyquist {
                            v.im = 0.0;
                        }
                        v
                    })
                    .collect();
                let ga = ComplexMatrix::from_complex(bins.len(), 1, &bins).expect("column");
                self.accumulate(grads, *a, ga);
            }
            Op::Pack(re_src, im_src) => {
                let (rows, cols) = g.shape();
                let gre = ComplexMatrix::from_parts(rows, cols, g.re().to_vec(), vec![0.0; g.len()])
                    .expect("shape");
                let gim = ComplexMatrix::from_parts(rows, cols, g.im().to_vec(), vec![0.0; g.len()])
                    .expect("shape");
                self.accumulate(grads, *re_src, gre);
                self.accumulate(grads, *im_src, gim);
            }
            Op::Mse(pred, target) => {
                let p = self.value(*pred);
                let scale = 2.0 * g.re()[0] / target.len() as f64;
                let ga = ComplexMatrix::from_parts(
                    p.rows(),
                    p.cols(),
                    p.re().iter().zip(target).map(|(a, b)| scale * (a - b)).collect(),
                    vec![0.0; p.len()],
                )
                .expect("shape");
                self.accumulate(grads, *pred, ga);
            }
            Op::SumAbsSq(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, av.scale(2.0 * g.re()[0]));
            }
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(SpectfError::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
        .collect()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Complex matrix product.
pub fn cmatmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    a.matmul(b)
}

/// Entrywise complex product.
pub fn cmul_elementwise(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    a.hadamard(b)
}

/// Entrywise modulus.
pub fn cmagnitude(a: &ComplexMatrix) -> Matrix {
    a.magnitude()
}

/// Split activation on real and imaginary parts.
pub fn capply_activation(a: &ComplexMatrix, act: Activation) -> ComplexMatrix {
    ComplexMatrix::from_parts(
        a.rows(),
        a.cols(),
        a.re().iter().map(|&v| act.apply(v)).collect(),
        a.im().iter().map(|&v| act.apply(v)).collect(),
    )
    .expect("shape preserved")
}

/// Inverted dropout outside of a tape. Identity when not training.
pub fn cdropout<R: Rng + ?Sized>(
    a: &ComplexMatrix,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(a.clone());
    }
    let mask = dropout_mask(a.len(), rate, rng);
    ComplexMatrix::from_parts(
        a.rows(),
        a.cols(),
        a.re().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        a.im().iter().zip(&mask).map(|(v, m)| v * m).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_parts(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_matrix(&mut rng, 3, 3);
        assert_eq!(cmatmul(&ComplexMatrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn conjugate_pair_product() {
        let a = ComplexMatrix::from_complex(1, 1, &[Complex64::new(1.0, 1.0)]).unwrap();
        let b = ComplexMatrix::from_complex(1, 1, &[Complex64::new(1.0, -1.0)]).unwrap();
        let p = cmatmul(&a, &b).unwrap().get(0, 0);
        assert!((p - Complex64::new(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn matmul_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 2, 4);
        let out = cmatmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut s = Complex64::new(0.0, 0.0);
                for p in 0..2 {
                    s += a.get(i, p) * b.get(p, j);
                }
                assert!((out.get(i, j) - s).norm() <= 1e-12 * s.norm().max(1.0));
            }
        }
        assert!(cmatmul(&a, &a).is_err());
    }

    #[test]
    fn elementwise_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 4, 4);
        let ones = ComplexMatrix::filled(4, 4, Complex64::new(1.0, 0.0));
        assert_eq!(cmul_elementwise(&a, &ones).unwrap(), a);
        let j = ComplexMatrix::filled(4, 4, Complex64::new(0.0, 1.0));
        let rot = cmul_elementwise(&a, &j).unwrap();
        for i in 0..16 {
            assert_eq!(rot.re()[i], -a.im()[i]);
            assert_eq!(rot.im()[i], a.re()[i]);
        }
        assert!(cmul_elementwise(&a, &ComplexMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn elementwise_polar_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 4, 4);
        let b = random_matrix(&mut rng, 4, 4);
        let out = cmul_elementwise(&a, &b).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let (x, y, z) = (a.get(r, c), b.get(r, c), out.get(r, c));
                assert!((z.norm() - x.norm() * y.norm()).abs() <= 1e-10 * z.norm().max(1e-300));
                let dphi = (z.arg() - x.arg() - y.arg()).rem_euclid(2.0 * std::f64::consts::PI);
                let dphi = dphi.min(2.0 * std::f64::consts::PI - dphi);
                assert!(dphi <= 1e-10);
            }
        }
    }

    #[test]
    fn magnitude_values_and_zero_gradient() {
        let a = ComplexMatrix::from_complex(1, 2, &[Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)])
            .unwrap();
        assert_eq!(cmagnitude(&a).data(), &[5.0, 0.0]);

        let mut store = ParamStore::new();
        let id = store.add("z", a);
        let mut tape = Tape::new();
        let z = tape.param(&store, id);
        let m = tape.magnitude(z);
        let loss = tape.sum_abs_sq(m);
        tape.backward(loss, &mut store).unwrap();
        let g = &store.get(id).grad;
        assert!((g.re()[0] - 2.0 * 5.0 * 0.6).abs() < 1e-12);
        assert!((g.im()[0] - 2.0 * 5.0 * 0.8).abs() < 1e-12);
        assert_eq!((g.re()[1], g.im()[1]), (0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_matrix(&mut rng, 3, 3);
        for (m, (x, y)) in cmagnitude(&r).data().iter().zip(r.re().iter().zip(r.im())) {
            assert!((m - x.hypot(*y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_contract() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![5.0, 1005.0, 0.0]]).unwrap();
        let s = softmax_rows(&m);
        for v in s.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(s.get(1, 0) < 1e-300 && (s.get(1, 1) - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..20).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let m = Matrix::from_vec(4, 5, data.clone()).unwrap();
        let shifted = Matrix::from_vec(
            4,
            5,
            data.iter().enumerate().map(|(i, v)| v + (i / 5) as f64 * 7.5).collect(),
        )
        .unwrap();
        let (a, b) = (softmax_rows(&m), softmax_rows(&shifted));
        for r in 0..4 {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for c in 0..5 {
                assert!((a.get(r, c) - b.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_activation() {
        let a = ComplexMatrix::from_complex(1, 2, &[Complex64::new(-1.0, 2.0), Complex64::new(0.5, 3.0)])
            .unwrap();
        let out = capply_activation(&a, Activation::LeakyRelu);
        assert_eq!(out.get(0, 0), Complex64::new(-0.01, 2.0));
        assert_eq!(out.get(0, 1), a.get(0, 1));
        assert_eq!(capply_activation(&a, Activation::Linear), a);
    }

    #[test]
    fn dropout_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 10, 10);
        assert_eq!(cdropout(&a, 0.0, true, &mut rng).unwrap(), a);
        assert_eq!(cdropout(&a, 0.7, false, &mut rng).unwrap(), a);
        assert!(cdropout(&a, 1.0, true, &mut rng).is_err());
        assert!(cdropout(&a, -0.1, true, &mut rng).is_err());

        let big = ComplexMatrix::filled(100, 1000, Complex64::new(1.0, 1.0));
        let out = cdropout(&big, 0.5, true, &mut rng).unwrap();
        let mut kept = 0usize;
        for i in 0..out.len() {
            let (re, im) = (out.re()[i], out.im()[i]);
            assert_eq!(re, im, "re and im must share one mask");
            if re != 0.0 {
                assert_eq!(re, 2.0);
                kept += 1;
            }
        }
        let frac = kept as f64 / out.len() as f64;
        assert!((frac - 0.5).abs() <= 0.01, "kept fraction {frac}");

        let m1 = cdropout(&a, 0.3, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let m2 = cdropout(&a, 0.3, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn quadratic_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_matrix(&mut rng, 3, 2);
        let mut store = ParamStore::new();
        let id = store.add("w", w.clone());
        let mut tape = Tape::new();
        let v = tape.param(&store, id);
        let loss = tape.sum_abs_sq(v);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad, w.scale(2.0));
    }

    #[test]
    fn reuse_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_matrix(&mut rng, 2, 2);
        let mut store = ParamStore::new();
        let id = store.add("w", w.clone());

        // one leaf used twice
        let mut tape = Tape::new();
        let v = tape.param(&store, id);
        let s = tape.add(v, v).unwrap();
        let loss = tape.sum_abs_sq(s);
        tape.backward(loss, &mut store).unwrap();
        // d/dw |2w|^2 = 8w
        assert_eq!(store.get(id).grad, w.scale(8.0));

        // two leaves of the same parameter, separate branches
        store.zero_grad();
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        let la = tape.sum_abs_sq(a);
        let lb = tape.sum_abs_sq(b);
        let loss = tape.add(la, lb).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad, w.scale(4.0));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let v = tape.constant(ComplexMatrix::zeros(2, 2));
        assert!(tape.gradients(v).is_err());
    }

    fn perturbed(store: &ParamStore, id: ParamId, plane: usize, i: usize, delta: f64) -> ParamStore {
        let mut s = store.clone();
        let v = &mut s.get_mut(id).value;
        if plane == 0 {
            v.re_mut()[i] += delta;
        } else {
            v.im_mut()[i] += delta;
        }
        s
    }

    fn first_column(tape: &mut Tape, v: Var) -> Var {
        let mut sel = ComplexMatrix::zeros(tape.value(v).cols(), 1);
        sel.re_mut()[0] = 1.0;
        let sel = tape.constant(sel);
        tape.matmul(v, sel).unwrap()
    }

    /// Central differences over every parameter entry of a graph that uses
    /// every taped operation.
    fn check_composite(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", random_matrix(&mut rng, 3, 4));
        let b = store.add("b", random_matrix(&mut rng, 4, 5));
        let bias = store.add("bias", random_matrix(&mut rng, 1, 5));
        let c = store.add("c", random_matrix(&mut rng, 3, 5));
        let p = store.add("p", random_matrix(&mut rng, 3, 2));
        let target: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |store: &ParamStore, tape: &mut Tape| -> Var {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let va = tape.param(store, a);
            let vb = tape.param(store, b);
            let vbias = tape.param(store, bias);
            let vc = tape.param(store, c);
            let vp = tape.param(store, p);
            let h = tape.matmul(va, vb).unwrap(); // 3x5
            let h = tape.add_row(h, vbias).unwrap();
            let h = tape.activate(h, Activation::LeakyRelu);
            let h = tape.dropout(h, 0.2, true, &mut drop_rng).unwrap();
            let m = tape.magnitude(h);
            let m = tape.scale(m, 0.7);
            let att = tape.softmax_rows(m); // 3x5 real
            let att_t = tape.transpose(att); // 5x3
            let mixed = tape.matmul(att_t, vc).unwrap(); // 5x5
            let hc = tape.cmul(h, vc).unwrap(); // 3x5
            let col = tape.transpose(hc); // 5x3
            let pair = tape.pair_matmul(col, vp).unwrap(); // 5x2
            let packed = tape.pack(pair, pair).unwrap();
            let s = tape.sum_abs_sq(packed);
            let first = first_column(tape, mixed); // 5x1
            let x = tape.irfft_column(first, 8).unwrap();
            let l2 = tape.mse(x, &target).unwrap();
            let l = tape.add(s, l2).unwrap();
            tape.scale(l, 0.5)
        };
        let eval = |store: &ParamStore| {
            let mut t = Tape::new();
            let l = build(store, &mut t);
            t.value(l).re()[0]
        };

        let mut tape = Tape::new();
        let loss = build(&store, &mut tape);
        tape.backward(loss, &mut store).unwrap();

        let eps = 1e-5;
        for id in store.ids().collect::<Vec<_>>() {
            for plane in 0..2 {
                for i in 0..store.get(id).value.len() {
                    let up = eval(&perturbed(&store, id, plane, i, eps));
                    let down = eval(&perturbed(&store, id, plane, i, -eps));
                    let fd = (up - down) / (2.0 * eps);
                    let g = &store.get(id).grad;
                    let an = if plane == 0 { g.re()[i] } else { g.im()[i] };
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                    assert!(rel <= 1e-4, "param {id:?} plane {plane} idx {i}: fd {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        for seed in [11, 12] {
            check_composite(seed);
        }
    }
}
