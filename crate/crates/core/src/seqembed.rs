//! LSTM cell and sequence unrolling.
//!
//! Stocks are processed as a batch: an input step is an `N × D` matrix
//! and the hidden/cell states are `N × U`, with weights shared across
//! rows. The embedding of a stock is its final hidden state.

use rand::Rng;

use crate::diffcore::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gate order used for parameter names: transform, input, forget, output.
pub const GATES: [&str; 4] = ["z", "i", "f", "o"];

/// LSTM weights. `w_*` are `U × D` input maps, `q_*` are `U × U`
/// recurrent maps, `b_*` are length-`U` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<T: Scalar = f64> {
    pub w: [Tensor<T>; 4],
    pub q: [Tensor<T>; 4],
    pub b: [Tensor<T>; 4],
}

impl<T: Scalar> LstmWeights<T> {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Tensor::zeros(&[hidden, input])),
            q: std::array::from_fn(|_| Tensor::zeros(&[hidden, hidden])),
            b: std::array::from_fn(|_| Tensor::zeros(&[hidden])),
        }
    }

    /// Uniform in `[−1/√U, 1/√U]`, biases included.
    pub fn init(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
            Tensor::new(shape.to_vec(), data).expect("shape")
        };
        let w = std::array::from_fn(|_| draw(&[hidden, input]));
        let q = std::array::from_fn(|_| draw(&[hidden, hidden]));
        let b = std::array::from_fn(|_| draw(&[hidden]));
        Self { w, q, b }
    }

    pub fn hidden(&self) -> usize {
        self.w[0].rows()
    }

    pub fn input(&self) -> usize {
        self.w[0].cols()
    }

    pub fn insert_into(&self, params: &mut ParamStore<T>, prefix: &str) {
        for (g, gate) in GATES.iter().enumerate() {
            params.insert(format!("{prefix}.w_{gate}"), self.w[g].clone());
            params.insert(format!("{prefix}.q_{gate}"), self.q[g].clone());
            params.insert(format!("{prefix}.b_{gate}"), self.b[g].clone());
        }
    }

    pub fn from_params(params: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let get = |kind: &str, gate: &str| {
            let name = format!("{prefix}.{kind}_{gate}");
            params
                .get(&name)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };
        let mut out = Self::zeros(0, 0);
        for (g, gate) in GATES.iter().enumerate() {
            out.w[g] = get("w", gate)?;
            out.q[g] = get("q", gate)?;
            out.b[g] = get("b", gate)?;
        }
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        let (u, d) = (self.hidden(), self.input());
        for g in 0..4 {
            if self.w[g].shape() != [u, d] {
                return Err(Error::shape("lstm weights", self.w[g].shape(), &[u, d]));
            }
            if self.q[g].shape() != [u, u] {
                return Err(Error::shape("lstm weights", self.q[g].shape(), &[u, u]));
            }
            if self.b[g].shape() != [u] {
                return Err(Error::shape("lstm weights", self.b[g].shape(), &[u]));
            }
        }
        Ok(())
    }

    /// One cell update for a single input vector, evaluated on a fresh tape.
    pub fn step(&self, x: &[T], state: &LstmState<T>) -> Result<LstmState<T>> {
        self.check()?;
        let u = self.hidden();
        if x.len() != self.input() || state.h.len() != u || state.c.len() != u {
            return Err(Error::shape("lstm_cell", &[x.len(), state.h.len()], &[self.input(), u]));
        }
        let mut tape = Tape::new();
        let mut params = ParamStore::new();
        self.insert_into(&mut params, "lstm");
        let bound = params.bind(&mut tape)?;
        let vars = LstmVars::bind(&mut tape, &bound, "lstm")?;
        let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?)?;
        let h = tape.constant(Tensor::matrix(1, u, state.h.clone())?)?;
        let c = tape.constant(Tensor::matrix(1, u, state.c.clone())?)?;
        let next = lstm_cell(&mut tape, xv, &CellState { h, c }, &vars)?;
        Ok(LstmState {
            h: tape.value(next.h).data().to_vec(),
            c: tape.value(next.c).data().to_vec(),
        })
    }

    /// Final hidden state of each stock after unrolling over `steps`
    /// (each `N × D`) from a zero state.
    pub fn embed(&self, steps: &[Tensor<T>]) -> Result<Tensor<T>> {
        self.check()?;
        let mut tape = Tape::new();
        let mut params = ParamStore::new();
        self.insert_into(&mut params, "lstm");
        let bound = params.bind(&mut tape)?;
        let vars = LstmVars::bind(&mut tape, &bound, "lstm")?;
        let inputs = steps
            .iter()
            .map(|s| tape.constant(s.clone()))
            .collect::<Result<Vec<_>>>()?;
        let e = sequential_embedding(&mut tape, &inputs, &vars)?;
        Ok(tape.value(e).clone())
    }
}

/// Hidden and cell vectors of a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T: Scalar = f64> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// Batched state on a tape: `h` and `c` are `N × U`.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

/// LSTM parameters bound on a tape, with input and recurrent maps
/// pre-transposed for row-major batches.
#[derive(Clone, Debug)]
pub struct LstmVars {
    w_t: [Var; 4],
    q_t: [Var; 4],
    b: [Var; 4],
    hidden: usize,
    input: usize,
}

impl LstmVars {
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, bound: &BoundParams, prefix: &str) -> Result<Self> {
        let mut w_t = Vec::with_capacity(4);
        let mut q_t = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            let w = bound.get(&format!("{prefix}.w_{gate}"))?;
            let q = bound.get(&format!("{prefix}.q_{gate}"))?;
            w_t.push(tape.transpose(w)?);
            q_t.push(tape.transpose(q)?);
            b.push(bound.get(&format!("{prefix}.b_{gate}"))?);
        }
        let four = |v: Vec<Var>| -> [Var; 4] { v.try_into().expect("one var per gate") };
        let (w_t, q_t, b) = (four(w_t), four(q_t), four(b));
        let (input, hidden) = (tape.shape(w_t[0])[0], tape.shape(w_t[0])[1]);
        Ok(Self {
            w_t,
            q_t,
            b,
            hidden,
            input,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }
}

fn gate<T: Scalar>(tape: &mut Tape<T>, x: Var, h: Var, w: &LstmVars, g: usize) -> Result<Var> {
    let xw = tape.matmul(x, w.w_t[g])?;
    let hq = tape.matmul(h, w.q_t[g])?;
    let sum = tape.add(xw, hq)?;
    tape.add_row(sum, w.b[g])
}

/// `z = tanh(W_z x + Q_z h + b_z)`, `i, f, o = σ(…)`,
/// `c' = f ⊙ c + i ⊙ z`, `h' = o ⊙ tanh(c')`.
pub fn lstm_cell<T: Scalar>(tape: &mut Tape<T>, x: Var, state: &CellState, w: &LstmVars) -> Result<CellState> {
    let xs = tape.shape(x);
    if xs.len() != 2 || xs[1] != w.input {
        return Err(Error::shape("lstm_cell", xs, &[0, w.input]));
    }
    let z_pre = gate(tape, x, state.h, w, 0)?;
    let z = tape.tanh(z_pre)?;
    let i_pre = gate(tape, x, state.h, w, 1)?;
    let i = tape.sigmoid(i_pre)?;
    let f_pre = gate(tape, x, state.h, w, 2)?;
    let f = tape.sigmoid(f_pre)?;
    let kept = tape.mul(f, state.c)?;
    let written = tape.mul(i, z)?;
    let c = tape.add(kept, written)?;
    let o_pre = gate(tape, x, state.h, w, 3)?;
    let o = tape.sigmoid(o_pre)?;
    let c_act = tape.tanh(c)?;
    let h = tape.mul(o, c_act)?;
    Ok(CellState { h, c })
}

/// Unrolls the cell over `steps` (each `N × D`) from a zero state and
/// returns the final hidden state, `N × U`.
pub fn sequential_embedding<T: Scalar>(tape: &mut Tape<T>, steps: &[Var], w: &LstmVars) -> Result<Var> {
    let first = steps
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty input window".into()))?;
    let n = tape.shape(*first)[0];
    let h = tape.constant(Tensor::zeros(&[n, w.hidden]))?;
    let c = tape.constant(Tensor::zeros(&[n, w.hidden]))?;
    let mut state = CellState { h, c };
    for &x in steps {
        if tape.shape(x)[0] != n {
            return Err(Error::shape("sequential_embedding", tape.shape(x), &[n, w.input]));
        }
        state = lstm_cell(tape, x, &state, w)?;
    }
    Ok(state.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let w = LstmWeights::<f64>::zeros(3, 2);
        let next = w.step(&[0.7, -1.3], &LstmState::zeros(3)).unwrap();
        assert_eq!(next.c, vec![0.0; 3]);
        assert_eq!(next.h, vec![0.0; 3]);
    }

    #[test]
    fn scalar_cell_matches_hand_computation() {
        let mut w = LstmWeights::<f64>::zeros(1, 1);
        let (wz, wi, wf, wo) = (0.5, -0.3, 0.8, 0.2);
        let (qz, qi, qf, qo) = (0.1, 0.4, -0.6, 0.9);
        let (bz, bi, bf, bo) = (0.05, -0.1, 0.3, 0.0);
        for (g, (a, q, b)) in [(wz, qz, bz), (wi, qi, bi), (wf, qf, bf), (wo, qo, bo)].into_iter().enumerate() {
            w.w[g] = Tensor::matrix(1, 1, vec![a]).unwrap();
            w.q[g] = Tensor::matrix(1, 1, vec![q]).unwrap();
            w.b[g] = Tensor::vector(vec![b]);
        }
        let (x, h0, c0) = (1.2, -0.4, 0.7);
        let state = LstmState { h: vec![h0], c: vec![c0] };
        let next = w.step(&[x], &state).unwrap();

        let z = (wz * x + qz * h0 + bz).tanh();
        let i = sig(wi * x + qi * h0 + bi);
        let f = sig(wf * x + qf * h0 + bf);
        let c = f * c0 + i * z;
        let o = sig(wo * x + qo * h0 + bo);
        let h = o * c.tanh();
        assert!((next.c[0] - c).abs() < 1e-12);
        assert!((next.h[0] - h).abs() < 1e-12);
    }

    #[test]
    fn saturated_forget_gate_preserves_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = LstmWeights::<f64>::init(4, 2, &mut rng);
        w.b[2] = Tensor::full(&[4], 50.0);
        let state = LstmState {
            h: vec![0.1, -0.2, 0.3, 0.0],
            c: vec![0.5, -1.5, 2.0, 0.25],
        };
        let x = [0.3, -0.8];
        let next = w.step(&x, &state).unwrap();
        // c + i ⊙ z computed independently.
        for k in 0..4 {
            let pre = |g: usize| {
                w.w[g].row(k).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                    + w.q[g].row(k).iter().zip(&state.h).map(|(a, b)| a * b).sum::<f64>()
                    + w.b[g].data()[k]
            };
            let expected = state.c[k] + sig(pre(1)) * pre(0).tanh();
            assert!((next.c[k] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn unroll_of_length_one_equals_one_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = LstmWeights::<f64>::init(3, 2, &mut rng);
        let x = Tensor::matrix(2, 2, vec![0.2, -0.4, 1.0, 0.5]).unwrap();
        let e = w.embed(std::slice::from_ref(&x)).unwrap();
        for i in 0..2 {
            let s = w.step(x.row(i), &LstmState::zeros(3)).unwrap();
            assert_eq!(e.row(i), s.h.as_slice());
        }
    }

    #[test]
    fn three_step_unroll_matches_explicit_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = LstmWeights::<f64>::init(2, 2, &mut rng);
        let steps: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::matrix(1, 2, vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap())
            .collect();
        let e = w.embed(&steps).unwrap();
        let mut state = LstmState::zeros(2);
        for s in &steps {
            state = w.step(s.data(), &state).unwrap();
        }
        for (a, b) in e.data().iter().zip(&state.h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_windows_give_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = LstmWeights::<f64>::init(4, 3, &mut rng);
        let row = [0.3, 0.9, -0.1];
        let steps: Vec<Tensor<f64>> = (0..4)
            .map(|k| {
                let shifted: Vec<f64> = row.iter().map(|v| v + k as f64 * 0.1).collect();
                Tensor::from_rows(&[shifted.clone(), shifted]).unwrap()
            })
            .collect();
        let e = w.embed(&steps).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn works_in_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = LstmWeights::<f32>::init(3, 2, &mut rng);
        let next = w.step(&[0.5, -0.5], &LstmState::zeros(3)).unwrap();
        assert!(next.h.iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let w = LstmWeights::<f64>::zeros(3, 2);
        assert!(w.step(&[1.0, 2.0, 3.0], &LstmState::zeros(3)).is_err());
    }
}
