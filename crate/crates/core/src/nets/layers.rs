use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// A learnable row-major matrix. Storage is shared with the tape while a
/// graph is alive, so binding weights does not copy them.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Arc<Vec<f64>>,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            rows,
            cols,
            data: Arc::new(data),
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::from_vec(rows, cols, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mutable access; copies only if a tape still holds the storage.
    pub fn make_mut(&mut self) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.data)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Var> {
        tape.shared(self.rows, self.cols, Arc::clone(&self.data), trainable)
    }
}

/// Fully connected layer `y = x·Wᵀ + b` with `W: out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(outputs, inputs),
            bias: Param::zeros(1, outputs),
        }
    }

    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Self {
            weight: Param::uniform(outputs, inputs, bound, rng),
            bias: Param::uniform(1, outputs, bound, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundDense> {
        Ok(BoundDense {
            weight: self.weight.bind(tape, trainable)?,
            bias: self.bias.bind(tape, trainable)?,
        })
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl BoundDense {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul_t(x, self.weight)?;
        tape.add_bias(y, self.bias)
    }

    pub(crate) fn vars(&self, out: &mut Vec<Var>) {
        out.extend([self.weight, self.bias]);
    }
}

/// LSTM cell with gate blocks ordered input, forget, candidate, output.
///
/// ```text
/// i, f, o = σ(·)   g = tanh(·)
/// c' = f∘c + i∘g   h' = o∘tanh(c')
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4H × I`
    pub w_ih: Param,
    /// `4H × H`
    pub w_hh: Param,
    /// `1 × 4H`
    pub bias: Param,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmCell {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w_ih: Param::zeros(4 * hidden, inputs),
            w_hh: Param::zeros(4 * hidden, hidden),
            bias: Param::zeros(1, 4 * hidden),
            hidden,
        }
    }

    pub fn init<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w_ih: Param::uniform(4 * hidden, inputs, bound, rng),
            w_hh: Param::uniform(4 * hidden, hidden, bound, rng),
            bias: Param::uniform(1, 4 * hidden, bound, rng),
            hidden,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_ih.cols
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundLstm> {
        Ok(BoundLstm {
            w_ih: self.w_ih.bind(tape, trainable)?,
            w_hh: self.w_hh.bind(tape, trainable)?,
            bias: self.bias.bind(tape, trainable)?,
            hidden: self.hidden,
        })
    }

    /// One step on plain vectors: returns `(h', c')`.
    pub fn step_values(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let hsz = self.hidden;
        if x.len() != self.inputs() {
            return Err(Error::Length {
                expected: self.inputs(),
                actual: x.len(),
            });
        }
        if h.len() != hsz || c.len() != hsz {
            return Err(Error::Length {
                expected: hsz,
                actual: if h.len() != hsz { h.len() } else { c.len() },
            });
        }
        let mut tape = Tape::new();
        let cell = self.bind(&mut tape, false)?;
        let xv = tape.constant(1, x.len(), x.to_vec())?;
        let hv = tape.constant(1, hsz, h.to_vec())?;
        let cv = tape.constant(1, hsz, c.to_vec())?;
        let (h2, c2) = cell.step(&mut tape, xv, Some((hv, cv)))?;
        Ok((tape.value(h2).to_vec(), tape.value(c2).to_vec()))
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((format!("{prefix}.w_ih"), &self.w_ih));
        out.push((format!("{prefix}.w_hh"), &self.w_hh));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.w_ih);
        out.push(&mut self.w_hh);
        out.push(&mut self.bias);
    }
}

impl BoundLstm {
    /// One step for a batch of rows `x: B×I`; `None` state means zeros.
    pub fn step(&self, tape: &mut Tape, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let proj = tape.matmul_t(x, self.w_ih)?;
        let proj = tape.add_bias(proj, self.bias)?;
        self.step_projected(tape, proj, state)
    }

    /// Step given the precomputed input projection `x·W_ihᵀ + b`.
    fn step_projected(&self, tape: &mut Tape, proj: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let hsz = self.hidden;
        let gates = match state {
            Some((h, _)) => {
                if h.cols() != hsz || h.rows() != proj.rows() {
                    return Err(Error::Shape {
                        op: "lstm_step",
                        lhs: proj.shape(),
                        rhs: h.shape(),
                    });
                }
                let rec = tape.matmul_t(h, self.w_hh)?;
                tape.add(proj, rec)?
            }
            None => proj,
        };
        let i = tape.slice_cols(gates, 0, hsz)?;
        let f = tape.slice_cols(gates, hsz, hsz)?;
        let g = tape.slice_cols(gates, 2 * hsz, hsz)?;
        let o = tape.slice_cols(gates, 3 * hsz, hsz)?;
        let i = tape.sigmoid(i)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let ig = tape.mul(i, g)?;
        let c_new = match state {
            Some((_, c)) => {
                let f = tape.sigmoid(f)?;
                let fc = tape.mul(f, c)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Runs `steps` steps over `x: (steps·batch)×I` laid out step-major,
    /// starting from a zero state. Returns the hidden states in the same
    /// layout.
    pub fn run(&self, tape: &mut Tape, x: Var, steps: usize, batch: usize) -> Result<Var> {
        if x.rows() != steps * batch {
            return Err(Error::Shape {
                op: "lstm_run",
                lhs: x.shape(),
                rhs: (steps, batch),
            });
        }
        let proj = tape.matmul_t(x, self.w_ih)?;
        let proj = tape.add_bias(proj, self.bias)?;
        let mut state = None;
        let mut outputs = Vec::with_capacity(steps);
        for s in 0..steps {
            let p = tape.slice_rows(proj, s * batch, batch)?;
            let (h, c) = self.step_projected(tape, p, state)?;
            outputs.push(h);
            state = Some((h, c));
        }
        tape.concat_rows(&outputs)
    }

    pub(crate) fn vars(&self, out: &mut Vec<Var>) {
        out.extend([self.w_ih, self.w_hh, self.bias]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{check_against, gradients};
    use crate::autodiff::{FdOptions, LeafSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_step_gradients_match_finite_differences() {
        let (b, i, h) = (3, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rand = |r: usize, c: usize| LeafSpec::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
        // x, h, c, W_ih, W_hh, bias
        let leaves = [rand(b, i), rand(b, h), rand(b, h), rand(4 * h, i), rand(4 * h, h), rand(1, 4 * h)];
        let f = |t: &mut Tape, v: &[Var]| {
            let cell = BoundLstm {
                w_ih: v[3],
                w_hh: v[4],
                bias: v[5],
                hidden: h,
            };
            let (h_new, _) = cell.step(t, v[0], Some((v[1], v[2])))?;
            t.sum(h_new)
        };
        let (_, ad) = gradients(&f, &leaves).unwrap();
        let r = check_against(&f, &leaves, &ad, &FdOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, leaves.iter().map(|l| l.data.len()).sum::<usize>());
    }
}
