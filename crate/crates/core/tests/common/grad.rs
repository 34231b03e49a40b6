//! Finite-difference fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stylecycle::autodiff::check::{check_against, gradients};
use stylecycle::autodiff::{FdOptions, LeafSpec, Tape, Var};
use stylecycle::losses::{self, AdversarialScores, LossWeights};
use stylecycle::nets::{NetWidths, Network};
use stylecycle::params::{MouthIndexSet, EXPR_DIM};
use stylecycle::trainer::{TrainConfig, TranslatorWeights};
use stylecycle::Result;

pub const FD_H: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;
pub const GRAPH_WIDTH: usize = 32;
pub const GRAPH_STEPS: usize = 7;
pub const GRAPH_BATCH: usize = 2;
/// Components sampled per leaf in the full-graph checks.
pub const GRAPH_COMPONENTS: usize = 6;

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn leaf(rng: &mut ChaCha8Rng, r: usize, c: usize) -> LeafSpec {
    LeafSpec::new(r, c, normal(rng, r * c))
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=16), rng.gen_range(1..=16))
}

/// Reduces any output to a scalar through a random fixed weighting, so that
/// every output component contributes a distinct gradient.
fn reduce(tape: &mut Tape, y: Var, weights: &[f64]) -> Result<Var> {
    let w = tape.constant(y.rows(), y.cols(), weights[..y.len()].to_vec())?;
    tape.dot(y, w)
}

/// One random instance of an op: leaves plus the scalar function.
fn op_instance(name: &str, rng: &mut ChaCha8Rng) -> (Vec<LeafSpec>, OpFn) {
    let (m, n) = dims(rng);
    let k = rng.gen_range(1..=16);
    let wts = normal(rng, 16 * 48);
    let un = |f: fn(&mut Tape, Var) -> Result<Var>, wts: Vec<f64>| -> OpFn {
        Box::new(move |t, v| {
            let y = f(t, v[0])?;
            reduce(t, y, &wts)
        })
    };
    let bin = |f: fn(&mut Tape, Var, Var) -> Result<Var>, wts: Vec<f64>| -> OpFn {
        Box::new(move |t, v| {
            let y = f(t, v[0], v[1])?;
            reduce(t, y, &wts)
        })
    };
    match name {
        "matmul" => (vec![leaf(rng, m, k), leaf(rng, k, n)], bin(Tape::matmul, wts)),
        "matmul_t" => (vec![leaf(rng, m, k), leaf(rng, n, k)], bin(Tape::matmul_t, wts)),
        "add_bias" => (vec![leaf(rng, m, n), leaf(rng, 1, n)], bin(Tape::add_bias, wts)),
        "add" => (vec![leaf(rng, m, n), leaf(rng, m, n)], bin(Tape::add, wts)),
        "sub" => (vec![leaf(rng, m, n), leaf(rng, m, n)], bin(Tape::sub, wts)),
        "mul" => (vec![leaf(rng, m, n), leaf(rng, m, n)], bin(Tape::mul, wts)),
        "dot" => (vec![leaf(rng, m, n), leaf(rng, m, n)], bin(Tape::dot, wts)),
        "scale" => {
            let c: f64 = rng.gen_range(-3.0..3.0);
            (vec![leaf(rng, m, n)], Box::new(move |t, v| {
                let y = t.scale(v[0], c)?;
                reduce(t, y, &wts)
            }))
        }
        "add_scalar" => {
            let c: f64 = rng.gen_range(-3.0..3.0);
            (vec![leaf(rng, m, n)], Box::new(move |t, v| {
                let y = t.add_scalar(v[0], c)?;
                reduce(t, y, &wts)
            }))
        }
        "relu" => (vec![leaf(rng, m, n)], un(Tape::relu, wts)),
        "sigmoid" => (vec![leaf(rng, m, n)], un(Tape::sigmoid, wts)),
        "tanh" => (vec![leaf(rng, m, n)], un(Tape::tanh, wts)),
        "abs" => (vec![leaf(rng, m, n)], un(Tape::abs, wts)),
        "ln" => {
            let x = (0..m * n).map(|_| rng.gen_range(0.2..3.0)).collect();
            (vec![LeafSpec::new(m, n, x)], un(Tape::ln, wts))
        }
        "clamp" => (vec![leaf(rng, m, n)], Box::new(move |t, v| {
            let y = t.clamp(v[0], -0.5, 0.7)?;
            reduce(t, y, &wts)
        })),
        "sum" => (vec![leaf(rng, m, n)], un(Tape::sum, wts)),
        "mean" => (vec![leaf(rng, m, n)], un(Tape::mean, wts)),
        "l1_norm" => (vec![leaf(rng, m, n)], un(Tape::l1_norm, wts)),
        "l2_norm" => (vec![leaf(rng, m, n)], un(Tape::l2_norm, wts)),
        "row_sum" => (vec![leaf(rng, m, n)], un(Tape::row_sum, wts)),
        "concat_rows" => {
            let r2 = rng.gen_range(1..=16);
            (vec![leaf(rng, m, n), leaf(rng, r2, n)], Box::new(move |t, v| {
                let y = t.concat_rows(&[v[0], v[1], v[0]])?;
                reduce(t, y, &wts)
            }))
        }
        "concat_cols" => {
            let c2 = rng.gen_range(1..=16);
            (vec![leaf(rng, m, n), leaf(rng, m, c2)], Box::new(move |t, v| {
                let y = t.concat_cols(&[v[1], v[0]])?;
                reduce(t, y, &wts)
            }))
        }
        "slice_rows" => {
            let start = rng.gen_range(0..m);
            let len = rng.gen_range(1..=m - start);
            (vec![leaf(rng, m, n)], Box::new(move |t, v| {
                let y = t.slice_rows(v[0], start, len)?;
                reduce(t, y, &wts)
            }))
        }
        "slice_cols" => {
            let start = rng.gen_range(0..n);
            let len = rng.gen_range(1..=n - start);
            (vec![leaf(rng, m, n)], Box::new(move |t, v| {
                let y = t.slice_cols(v[0], start, len)?;
                reduce(t, y, &wts)
            }))
        }
        "gather_cols" => {
            // repeats allowed, so gradients must accumulate
            let idx: Vec<usize> = (0..rng.gen_range(1..=16)).map(|_| rng.gen_range(0..n)).collect();
            (vec![leaf(rng, m, n)], Box::new(move |t, v| {
                let y = t.gather_cols(v[0], &idx)?;
                reduce(t, y, &wts)
            }))
        }
        "row_cosine" => (vec![leaf(rng, m, n), leaf(rng, m, n)], Box::new(move |t, v| {
            let (y, _) = t.row_cosine(v[0], v[1], 1e-8)?;
            reduce(t, y, &wts)
        })),
        other => panic!("no generator for op {other}"),
    }
}

pub const OPS: &[&str] = &[
    "matmul", "matmul_t", "add_bias", "add", "sub", "mul", "scale", "add_scalar", "relu", "sigmoid", "tanh", "ln",
    "abs", "clamp", "sum", "mean", "l1_norm", "l2_norm", "dot", "row_sum", "concat_rows", "concat_cols",
    "slice_rows", "slice_cols", "gather_cols", "row_cosine",
];

#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub instances: usize,
    pub checked: usize,
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

impl Summary {
    fn absorb(&mut self, r: &stylecycle::autodiff::FdReport) {
        self.instances += 1;
        self.checked += r.checked;
        self.kinks_skipped += r.kinks_skipped;
        self.max_rel_error = self.max_rel_error.max(r.max_rel_error);
        self.failures += usize::from(!r.passed);
    }

    pub fn passed(&self, min_instances: usize) -> bool {
        self.failures == 0 && self.instances >= min_instances && self.checked > 0
    }
}

pub fn opts(seed: u64, max_components: Option<usize>) -> FdOptions {
    FdOptions {
        h: FD_H,
        tol: FD_TOL,
        max_components,
        skip_kinks: true,
        seed,
    }
}

/// Checks one op on `instances` random instances with shapes ≤ 16.
pub fn check_op(name: &str, instances: usize) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e_55ed ^ name.len() as u64 ^ (name.as_bytes()[0] as u64) << 8);
    let mut summary = Summary::default();
    for i in 0..instances {
        let (leaves, f) = op_instance(name, &mut rng);
        let (_, ad) = gradients(&f, &leaves).unwrap();
        let r = check_against(&f, &leaves, &ad, &opts(i as u64, None)).unwrap();
        summary.absorb(&r);
    }
    summary
}

fn small_config() -> TrainConfig {
    TrainConfig {
        window: GRAPH_STEPS,
        batch_size: GRAPH_BATCH,
        widths: NetWidths {
            generator_hidden: GRAPH_WIDTH,
            discriminator_base: GRAPH_WIDTH,
        },
        ..TrainConfig::default()
    }
}

fn load_params<N: Network>(net: &mut N, tape: &Tape, vars: &[Var]) {
    let ps = net.params_mut();
    assert_eq!(ps.len(), vars.len());
    for (p, &v) in ps.into_iter().zip(vars) {
        p.make_mut().copy_from_slice(tape.value(v));
    }
}

fn param_leaves<N: Network>(net: &N) -> Vec<LeafSpec> {
    net.named_params()
        .into_iter()
        .map(|(_, p)| LeafSpec::new(p.rows, p.cols, p.data.to_vec()))
        .collect()
}

/// Generator objective as used in training: `λcc·L_cc + λadv·adv_g + λme·L_me`
/// with frozen discriminators. Returns the root and the bound generator vars.
fn generator_graph(tape: &mut Tape, s: Var, t: Var, w: &TranslatorWeights, cfg: &TrainConfig) -> Result<(Var, Vec<Var>)> {
    let (steps, batch) = (GRAPH_STEPS, GRAPH_BATCH);
    let g_st = w.g_st.bind(tape, true)?;
    let g_ts = w.g_ts.bind(tape, true)?;
    let d_s = w.d_s.bind(tape, false)?;
    let d_t = w.d_t.bind(tape, false)?;
    let p = losses::run_cycle(
        tape,
        s,
        t,
        |tp, x| g_st.forward(tp, x, steps, batch),
        |tp, x| g_ts.forward(tp, x, steps, batch),
    )?;
    let cc = losses::cycle_loss_from(tape, &p, s, t, batch)?;
    let (me, _) = losses::mouth_expression_loss_from(tape, &p, s, t, &MouthIndexSet::default())?;
    let ft = d_t.forward(tape, p.fake_t, steps, batch)?;
    let fs = d_s.forward(tape, p.fake_s, steps, batch)?;
    let adv = losses::generator_adversarial_term(tape, ft, fs, steps, batch, cfg.non_saturating)?;
    let root = losses::total_loss_var(tape, cc, adv, me, &LossWeights::default())?;
    let mut vars = g_st.vars();
    vars.extend(g_ts.vars());
    Ok((root, vars))
}

/// Discriminator objective `−L_adv` on real and generated batches.
fn discriminator_graph(tape: &mut Tape, x: &[Var], w: &TranslatorWeights) -> Result<(Var, Vec<Var>)> {
    let (steps, batch) = (GRAPH_STEPS, GRAPH_BATCH);
    let d_s = w.d_s.bind(tape, true)?;
    let d_t = w.d_t.bind(tape, true)?;
    let sc = AdversarialScores {
        real_t: d_t.forward(tape, x[1], steps, batch)?,
        fake_t: d_t.forward(tape, x[2], steps, batch)?,
        real_s: d_s.forward(tape, x[0], steps, batch)?,
        fake_s: d_s.forward(tape, x[3], steps, batch)?,
    };
    let l = losses::adversarial_loss_from(tape, &sc, steps, batch)?;
    let root = tape.scale(l, -1.0)?;
    let mut vars = d_s.vars();
    vars.extend(d_t.vars());
    Ok((root, vars))
}

/// Finite-difference checks of the full generator and discriminator loss
/// graphs on random weights and batches. Returns (generator, discriminator).
pub fn check_graphs(instances: usize) -> (Summary, Summary) {
    let cfg = small_config();
    let rows = GRAPH_STEPS * GRAPH_BATCH;
    let (mut gs, mut ds) = (Summary::default(), Summary::default());
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let w = TranslatorWeights::init(&cfg, &mut rng).unwrap();
        let inputs: Vec<LeafSpec> = (0..4).map(|_| leaf(&mut rng, rows, EXPR_DIM)).collect();

        // generator graph: leaves are s, t and both generators' tensors
        let n_st = w.g_st.named_params().len();
        let mut leaves = inputs[..2].to_vec();
        leaves.extend(param_leaves(&w.g_st));
        leaves.extend(param_leaves(&w.g_ts));
        let f = |tape: &mut Tape, v: &[Var]| {
            let mut local = w.clone();
            load_params(&mut local.g_st, tape, &v[2..2 + n_st]);
            load_params(&mut local.g_ts, tape, &v[2 + n_st..]);
            generator_graph(tape, v[0], v[1], &local, &cfg).map(|(r, _)| r)
        };
        let ad = analytic(&leaves, 2, |tape, v| generator_graph(tape, v[0], v[1], &w, &cfg));
        gs.absorb(&check_against(&f, &leaves, &ad, &opts(i as u64, Some(GRAPH_COMPONENTS))).unwrap());

        // discriminator graph: leaves are the four batches and both critics
        let n_s = w.d_s.named_params().len();
        let mut leaves = inputs.clone();
        leaves.extend(param_leaves(&w.d_s));
        leaves.extend(param_leaves(&w.d_t));
        let f = |tape: &mut Tape, v: &[Var]| {
            let mut local = w.clone();
            load_params(&mut local.d_s, tape, &v[4..4 + n_s]);
            load_params(&mut local.d_t, tape, &v[4 + n_s..]);
            discriminator_graph(tape, &v[..4], &local).map(|(r, _)| r)
        };
        let ad = analytic(&leaves, 4, |tape, v| discriminator_graph(tape, v, &w));
        ds.absorb(&check_against(&f, &leaves, &ad, &opts(i as u64, Some(GRAPH_COMPONENTS))).unwrap());
    }
    (gs, ds)
}

/// Reverse-mode gradients for the first `n_inputs` leaves plus the bound
/// network tensors returned by `build`.
fn analytic<B>(leaves: &[LeafSpec], n_inputs: usize, build: B) -> Vec<Vec<f64>>
where
    B: Fn(&mut Tape, &[Var]) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = Tape::new();
    let inputs: Vec<Var> = leaves[..n_inputs]
        .iter()
        .map(|l| tape.leaf(l.rows, l.cols, l.data.clone()).unwrap())
        .collect();
    let (root, params) = build(&mut tape, &inputs).unwrap();
    assert_eq!(n_inputs + params.len(), leaves.len());
    let grads = tape.backward(root).unwrap();
    inputs
        .iter()
        .chain(&params)
        .zip(leaves)
        .map(|(&v, l)| {
            assert_eq!(v.len(), l.data.len(), "tensor order mismatch");
            grads.get_or_zeros(v)
        })
        .collect()
}
