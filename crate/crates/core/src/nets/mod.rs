//! Recurrent generator and discriminator networks.
//!
//! Both networks consume a batch of windows laid out step-major: a
//! `(N·B)×64` matrix whose rows `n·B .. (n+1)·B` hold step `n` of every
//! window. Feed-forward layers act on all rows at once; the LSTM walks the
//! `N` steps starting from a zero state for every window.
//!
//! Generator: dense 64→H (ReLU), residual dense H→H, LSTM H→H with an
//! additive skip, residual dense H→H, dense H→64 without activation.
//!
//! Discriminator: dense 64→W, W→W/2, W/2→W/4 (ReLU), LSTM at width W/4,
//! dense W/4→W/8, W/8→W/16 (ReLU), dense →1 with a sigmoid per step.

mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use layers::{BoundDense, BoundLstm, Dense, LstmCell, Param};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Window, EXPR_DIM};

pub const DEFAULT_GENERATOR_HIDDEN: usize = 1024;
pub const DEFAULT_DISCRIMINATOR_BASE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetWidths {
    pub generator_hidden: usize,
    /// Width of the first discriminator layer; later layers halve it.
    pub discriminator_base: usize,
}

impl Default for NetWidths {
    fn default() -> Self {
        Self {
            generator_hidden: DEFAULT_GENERATOR_HIDDEN,
            discriminator_base: DEFAULT_DISCRIMINATOR_BASE,
        }
    }
}

/// A network whose parameters can be enumerated in a fixed order.
pub trait Network {
    fn named_params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWeights {
    pub input: Dense,
    pub res1: Dense,
    pub lstm: LstmCell,
    pub res2: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGenerator {
    input: BoundDense,
    res1: BoundDense,
    lstm: BoundLstm,
    res2: BoundDense,
    output: BoundDense,
}

impl GeneratorWeights {
    pub fn init<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input: Dense::init(dim, hidden, rng),
            res1: Dense::init(hidden, hidden, rng),
            lstm: LstmCell::init(hidden, hidden, rng),
            res2: Dense::init(hidden, hidden, rng),
            output: Dense::init(hidden, dim, rng),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            input: Dense::zeros(dim, hidden),
            res1: Dense::zeros(hidden, hidden),
            lstm: LstmCell::zeros(hidden, hidden),
            res2: Dense::zeros(hidden, hidden),
            output: Dense::zeros(hidden, dim),
        }
    }

    /// Weights that reproduce the input exactly: the first layer splits `x`
    /// into `relu(x)` and `relu(-x)`, every middle layer is zero (so residual
    /// skips pass through), and the output recombines the two halves.
    /// Needs `hidden ≥ 2·dim`.
    pub fn identity(dim: usize, hidden: usize) -> Result<Self> {
        if hidden < 2 * dim {
            return Err(Error::Config(format!(
                "identity generator needs hidden >= {} (got {hidden})",
                2 * dim
            )));
        }
        let mut g = Self::zeros(dim, hidden);
        let w_in = g.input.weight.make_mut();
        let w_out = g.output.weight.make_mut();
        for k in 0..dim {
            w_in[k * dim + k] = 1.0;
            w_in[(dim + k) * dim + k] = -1.0;
            w_out[k * hidden + k] = 1.0;
            w_out[k * hidden + dim + k] = -1.0;
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.input.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.input.outputs()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundGenerator> {
        Ok(BoundGenerator {
            input: self.input.bind(tape, trainable)?,
            res1: self.res1.bind(tape, trainable)?,
            lstm: self.lstm.bind(tape, trainable)?,
            res2: self.res2.bind(tape, trainable)?,
            output: self.output.bind(tape, trainable)?,
        })
    }

    /// Translates each window; output window `i` has the same length as input `i`.
    pub fn translate_windows(&self, windows: &[Window]) -> Result<Vec<Window>> {
        let steps = uniform_len(windows)?;
        let mut tape = Tape::new();
        let g = self.bind(&mut tape, false)?;
        let x = windows_to_var(&mut tape, windows)?;
        let y = g.forward(&mut tape, x, steps, windows.len())?;
        Ok(var_to_windows(&tape, y, steps, windows.len()))
    }
}

impl Network for GeneratorWeights {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.input.params("input", &mut out);
        self.res1.params("res1", &mut out);
        self.lstm.params("lstm", &mut out);
        self.res2.params("res2", &mut out);
        self.output.params("output", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.input.params_mut(&mut out);
        self.res1.params_mut(&mut out);
        self.lstm.params_mut(&mut out);
        self.res2.params_mut(&mut out);
        self.output.params_mut(&mut out);
        out
    }
}

/// `x + relu(dense(x))`
fn residual(tape: &mut Tape, layer: &BoundDense, x: Var) -> Result<Var> {
    let y = layer.forward(tape, x)?;
    let y = tape.relu(y)?;
    tape.add(x, y)
}

fn dense_relu(tape: &mut Tape, layer: &BoundDense, x: Var) -> Result<Var> {
    let y = layer.forward(tape, x)?;
    tape.relu(y)
}

fn check_input(op: &'static str, x: Var, dim: usize, steps: usize, batch: usize) -> Result<()> {
    if x.cols() != dim || x.rows() != steps * batch {
        return Err(Error::Shape {
            op,
            lhs: x.shape(),
            rhs: (steps * batch, dim),
        });
    }
    Ok(())
}

impl BoundGenerator {
    /// `x: (steps·batch)×dim` step-major; returns the same shape.
    pub fn forward(&self, tape: &mut Tape, x: Var, steps: usize, batch: usize) -> Result<Var> {
        check_input("generator_forward", x, self.input.weight.cols(), steps, batch)?;
        let h1 = dense_relu(tape, &self.input, x)?;
        let h2 = residual(tape, &self.res1, h1)?;
        let l = self.lstm.run(tape, h2, steps, batch)?;
        let h3 = tape.add(h2, l)?;
        let h4 = residual(tape, &self.res2, h3)?;
        self.output.forward(tape, h4)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.input.vars(&mut out);
        self.res1.vars(&mut out);
        self.lstm.vars(&mut out);
        self.res2.vars(&mut out);
        self.output.vars(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorWeights {
    pub d1: Dense,
    pub d2: Dense,
    pub d3: Dense,
    pub lstm: LstmCell,
    pub d4: Dense,
    pub d5: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDiscriminator {
    d1: BoundDense,
    d2: BoundDense,
    d3: BoundDense,
    lstm: BoundLstm,
    d4: BoundDense,
    d5: BoundDense,
    output: BoundDense,
}

fn halvings(base: usize) -> [usize; 5] {
    std::array::from_fn(|i| (base >> i).max(1))
}

impl DiscriminatorWeights {
    pub fn init<R: Rng>(dim: usize, base: usize, rng: &mut R) -> Self {
        let w = halvings(base);
        Self {
            d1: Dense::init(dim, w[0], rng),
            d2: Dense::init(w[0], w[1], rng),
            d3: Dense::init(w[1], w[2], rng),
            lstm: LstmCell::init(w[2], w[2], rng),
            d4: Dense::init(w[2], w[3], rng),
            d5: Dense::init(w[3], w[4], rng),
            output: Dense::init(w[4], 1, rng),
        }
    }

    pub fn zeros(dim: usize, base: usize) -> Self {
        let w = halvings(base);
        Self {
            d1: Dense::zeros(dim, w[0]),
            d2: Dense::zeros(w[0], w[1]),
            d3: Dense::zeros(w[1], w[2]),
            lstm: LstmCell::zeros(w[2], w[2]),
            d4: Dense::zeros(w[2], w[3]),
            d5: Dense::zeros(w[3], w[4]),
            output: Dense::zeros(w[4], 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.d1.inputs()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundDiscriminator> {
        Ok(BoundDiscriminator {
            d1: self.d1.bind(tape, trainable)?,
            d2: self.d2.bind(tape, trainable)?,
            d3: self.d3.bind(tape, trainable)?,
            lstm: self.lstm.bind(tape, trainable)?,
            d4: self.d4.bind(tape, trainable)?,
            d5: self.d5.bind(tape, trainable)?,
            output: self.output.bind(tape, trainable)?,
        })
    }

    /// Per-step realness scores, one vector of length `N` per window.
    pub fn score_windows(&self, windows: &[Window]) -> Result<Vec<Vec<f64>>> {
        let steps = uniform_len(windows)?;
        let batch = windows.len();
        let mut tape = Tape::new();
        let d = self.bind(&mut tape, false)?;
        let x = windows_to_var(&mut tape, windows)?;
        let s = d.forward(&mut tape, x, steps, batch)?;
        let v = tape.value(s);
        Ok((0..batch)
            .map(|b| (0..steps).map(|n| v[n * batch + b]).collect())
            .collect())
    }
}

impl Network for DiscriminatorWeights {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.d1.params("d1", &mut out);
        self.d2.params("d2", &mut out);
        self.d3.params("d3", &mut out);
        self.lstm.params("lstm", &mut out);
        self.d4.params("d4", &mut out);
        self.d5.params("d5", &mut out);
        self.output.params("output", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.d1.params_mut(&mut out);
        self.d2.params_mut(&mut out);
        self.d3.params_mut(&mut out);
        self.lstm.params_mut(&mut out);
        self.d4.params_mut(&mut out);
        self.d5.params_mut(&mut out);
        self.output.params_mut(&mut out);
        out
    }
}

impl BoundDiscriminator {
    /// `x: (steps·batch)×dim` step-major; returns `(steps·batch)×1` scores.
    pub fn forward(&self, tape: &mut Tape, x: Var, steps: usize, batch: usize) -> Result<Var> {
        check_input("discriminator_forward", x, self.d1.weight.cols(), steps, batch)?;
        let a = dense_relu(tape, &self.d1, x)?;
        let a = dense_relu(tape, &self.d2, a)?;
        let a = dense_relu(tape, &self.d3, a)?;
        let a = self.lstm.run(tape, a, steps, batch)?;
        let a = dense_relu(tape, &self.d4, a)?;
        let a = dense_relu(tape, &self.d5, a)?;
        let logits = self.output.forward(tape, a)?;
        tape.sigmoid(logits)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.d1.vars(&mut out);
        self.d2.vars(&mut out);
        self.d3.vars(&mut out);
        self.lstm.vars(&mut out);
        self.d4.vars(&mut out);
        self.d5.vars(&mut out);
        self.output.vars(&mut out);
        out
    }
}

fn uniform_len(windows: &[Window]) -> Result<usize> {
    let steps = windows.first().map_or(0, Window::len);
    if steps == 0 {
        return Err(Error::Invalid("empty window batch".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != steps) {
        return Err(Error::Length {
            expected: steps,
            actual: w.len(),
        });
    }
    Ok(steps)
}

/// Step-major data for a batch of equally long windows.
pub fn windows_to_matrix(windows: &[Window]) -> Vec<f64> {
    let steps = windows.first().map_or(0, Window::len);
    let mut data = Vec::with_capacity(steps * windows.len() * EXPR_DIM);
    for n in 0..steps {
        for w in windows {
            data.extend_from_slice(&w.steps[n]);
        }
    }
    data
}

pub fn windows_to_var(tape: &mut Tape, windows: &[Window]) -> Result<Var> {
    let steps = uniform_len(windows)?;
    tape.constant(steps * windows.len(), EXPR_DIM, windows_to_matrix(windows))
}

/// Inverse of [`windows_to_matrix`] for a `(steps·batch)×64` value.
pub fn var_to_windows(tape: &Tape, v: Var, steps: usize, batch: usize) -> Vec<Window> {
    let data = tape.value(v);
    (0..batch)
        .map(|b| Window {
            steps: (0..steps)
                .map(|n| {
                    let row = (n * batch + b) * EXPR_DIM;
                    data[row..row + EXPR_DIM].try_into().unwrap()
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_windows(count: usize, steps: usize, seed: u64) -> Vec<Window> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Window {
                steps: (0..steps)
                    .map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn lstm_zero_weights() {
        let cell = LstmCell::zeros(3, 2);
        let (h, c) = cell.step_values(&[1.0, -4.0, 2.5], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);

        let (h, c) = cell.step_values(&[1.0, -4.0, 2.5], &[0.3, -0.1], &[2.0, 2.0]).unwrap();
        assert_eq!(c, vec![1.0, 1.0]);
        for v in h {
            assert!((v - 0.380_797_078_0).abs() < 1e-10);
            assert_eq!(v, 0.5 * 1f64.tanh());
        }
    }

    #[test]
    fn lstm_step_dimension_errors() {
        let cell = LstmCell::zeros(3, 2);
        assert!(cell.step_values(&[1.0, 2.0], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(cell.step_values(&[1.0, 2.0, 3.0], &[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let g = GeneratorWeights::zeros(EXPR_DIM, 32);
        let out = g.translate_windows(&random_windows(3, 7, 1)).unwrap();
        assert_eq!(out.len(), 3);
        for w in &out {
            assert_eq!(w.len(), 7);
            assert!(w.steps.iter().flatten().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn identity_generator_reproduces_input() {
        let g = GeneratorWeights::identity(EXPR_DIM, 128).unwrap();
        let input = random_windows(4, 7, 2);
        assert_eq!(g.translate_windows(&input).unwrap(), input);
        assert!(GeneratorWeights::identity(EXPR_DIM, 100).is_err());
    }

    #[test]
    fn zero_discriminator_scores_half() {
        let d = DiscriminatorWeights::zeros(EXPR_DIM, 64);
        let scores = d.score_windows(&random_windows(2, 7, 3)).unwrap();
        assert_eq!(scores.len(), 2);
        for s in scores {
            assert_eq!(s, vec![0.5; 7]);
        }
    }

    #[test]
    fn discriminator_layer_widths_halve() {
        let d = DiscriminatorWeights::zeros(EXPR_DIM, 64);
        let widths: Vec<usize> = [&d.d1, &d.d2, &d.d3, &d.d4, &d.d5, &d.output]
            .iter()
            .map(|l| l.outputs())
            .collect();
        assert_eq!(widths, vec![64, 32, 16, 8, 4, 1]);
        assert_eq!(d.lstm.hidden, 16);
        assert_eq!(d.lstm.inputs(), 16);
    }

    #[test]
    fn random_discriminator_scores_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = DiscriminatorWeights::init(EXPR_DIM, 64, &mut rng);
        let scores = d.score_windows(&random_windows(5, 7, 5)).unwrap();
        for s in scores {
            assert_eq!(s.len(), 7);
            assert!(s.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn generator_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = GeneratorWeights::init(EXPR_DIM, 32, &mut rng);
        let input = random_windows(3, 7, 7);
        let a = g.translate_windows(&input).unwrap();
        let b = g.translate_windows(&input).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|w| w.len() == 7));
    }

    #[test]
    fn windows_are_independent_of_batch_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = GeneratorWeights::init(EXPR_DIM, 24, &mut rng);
        let input = random_windows(3, 7, 9);
        let forward = g.translate_windows(&input).unwrap();
        let reversed: Vec<Window> = input.iter().rev().cloned().collect();
        let mut backward = g.translate_windows(&reversed).unwrap();
        backward.reverse();
        for (a, b) in forward.iter().zip(&backward) {
            for (x, y) in a.steps.iter().flatten().zip(b.steps.iter().flatten()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let single = g.translate_windows(&input[1..2]).unwrap();
        for (x, y) in single[0].steps.iter().flatten().zip(forward[1].steps.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_block_with_zero_inner_weights_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new();
        let layer = Dense::zeros(5, 5).bind(&mut tape, false).unwrap();
        let data: Vec<f64> = (0..15).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = tape.constant(3, 5, data.clone()).unwrap();
        let y = residual(&mut tape, &layer, x).unwrap();
        assert_eq!(tape.value(y), data.as_slice());
    }

    #[test]
    fn wrong_step_dimension_is_rejected() {
        let g = GeneratorWeights::zeros(EXPR_DIM, 8);
        let mut tape = Tape::new();
        let bound = g.bind(&mut tape, false).unwrap();
        let x = tape.constant(7, 63, vec![0.0; 7 * 63]).unwrap();
        assert!(bound.forward(&mut tape, x, 7, 1).is_err());
    }

    #[test]
    fn default_widths_match_reference_architecture() {
        let w = NetWidths::default();
        assert_eq!(w.generator_hidden, 1024);
        assert_eq!(w.discriminator_base, 64);
        let g = GeneratorWeights::zeros(EXPR_DIM, w.generator_hidden);
        assert_eq!(g.output.outputs(), 64);
        assert_eq!(g.lstm.hidden, 1024);
    }

    /// FD check of `sum(net(x)·r)` with respect to the input and every
    /// weight tensor, at reduced widths.
    fn check_network<N: Network + Clone>(
        net: &N,
        forward: impl Fn(&N, &mut Tape, Var) -> Result<(Var, Vec<Var>)>,
        rows: usize,
    ) -> crate::autodiff::FdReport {
        use crate::autodiff::check::check_against;
        use crate::autodiff::{FdOptions, LeafSpec};

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<f64> = (0..rows * EXPR_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut leaves = vec![LeafSpec::new(rows, EXPR_DIM, x)];
        leaves.extend(net.named_params().iter().map(|(_, p)| LeafSpec::new(p.rows, p.cols, p.data.to_vec())));
        let weigh = |t: &mut Tape, y: Var| -> Result<Var> {
            let w = t.constant(y.rows(), y.cols(), (0..y.len()).map(|k| ((k * 7919) % 13) as f64 / 6.0 - 1.0).collect())?;
            t.dot(y, w)
        };
        let f = |t: &mut Tape, v: &[Var]| {
            let mut local = net.clone();
            for (p, &var) in local.params_mut().into_iter().zip(&v[1..]) {
                p.make_mut().copy_from_slice(t.value(var));
            }
            let (y, _) = forward(&local, t, v[0])?;
            weigh(t, y)
        };
        let mut tape = Tape::new();
        let x = tape.leaf(rows, EXPR_DIM, leaves[0].data.clone()).unwrap();
        let (y, vars) = forward(net, &mut tape, x).unwrap();
        let root = weigh(&mut tape, y).unwrap();
        let grads = tape.backward(root).unwrap();
        let ad: Vec<Vec<f64>> = std::iter::once(x).chain(vars).map(|v| grads.get_or_zeros(v)).collect();
        let opts = FdOptions {
            max_components: Some(40),
            ..FdOptions::default()
        };
        check_against(&f, &leaves, &ad, &opts).unwrap()
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GeneratorWeights::init(EXPR_DIM, 16, &mut rng);
        let r = check_network(
            &g,
            |g, t, x| {
                let b = g.bind(t, true)?;
                Ok((b.forward(t, x, 7, 2)?, b.vars()))
            },
            14,
        );
        assert!(r.passed && r.checked > 250, "{r:?}");
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = DiscriminatorWeights::init(EXPR_DIM, 16, &mut rng);
        let r = check_network(
            &d,
            |d, t, x| {
                let b = d.bind(t, true)?;
                Ok((b.forward(t, x, 7, 2)?, b.vars()))
            },
            14,
        );
        assert!(r.passed && r.checked > 250, "{r:?}");
    }
}
