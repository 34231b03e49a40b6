//! Unpaired adversarial training with cycle and mouth-expression terms.
//!
//! Each iteration draws independent batches of source and target windows,
//! takes one Adam step on both discriminators (ascending the adversarial
//! objective) and then one on both generators.

mod checkpoint;
mod config;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use config::{LrDecay, TrainConfig};
pub use optim::{adam_step, clip_gradients, global_norm, AdamParams, OptimizerState};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{self, AdversarialScores, CyclePasses};
use crate::nets::{windows_to_matrix, DiscriminatorWeights, GeneratorWeights, Network};
use crate::params::{
    apply_normalization, denormalize_sequence, normalize_sequence, padded_windows, sliding_windows,
    ExpressionSequence, NormStats, Window, EXPR_DIM,
};

/// The four networks: generators `G_st`, `G_ts` and discriminators `D_s`, `D_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorWeights {
    pub g_st: GeneratorWeights,
    pub g_ts: GeneratorWeights,
    pub d_s: DiscriminatorWeights,
    pub d_t: DiscriminatorWeights,
}

impl TranslatorWeights {
    pub fn init(config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let h = config.widths.generator_hidden;
        let w = config.widths.discriminator_base;
        let (g_st, g_ts) = if config.identity_init {
            (GeneratorWeights::identity(EXPR_DIM, h)?, GeneratorWeights::identity(EXPR_DIM, h)?)
        } else {
            let a = GeneratorWeights::init(EXPR_DIM, h, rng);
            (a, GeneratorWeights::init(EXPR_DIM, h, rng))
        };
        let d_s = DiscriminatorWeights::init(EXPR_DIM, w, rng);
        let d_t = DiscriminatorWeights::init(EXPR_DIM, w, rng);
        Ok(Self { g_st, g_ts, d_s, d_t })
    }

    pub fn zeros(config: &TrainConfig) -> Self {
        let h = config.widths.generator_hidden;
        let w = config.widths.discriminator_base;
        Self {
            g_st: GeneratorWeights::zeros(EXPR_DIM, h),
            g_ts: GeneratorWeights::zeros(EXPR_DIM, h),
            d_s: DiscriminatorWeights::zeros(EXPR_DIM, w),
            d_t: DiscriminatorWeights::zeros(EXPR_DIM, w),
        }
    }

    pub fn generator(&self, direction: Direction) -> &GeneratorWeights {
        match direction {
            Direction::SourceToTarget => &self.g_st,
            Direction::TargetToSource => &self.g_ts,
        }
    }

    fn generator_sizes(&self) -> Vec<usize> {
        sizes(&[&self.g_st as &dyn Network, &self.g_ts])
    }

    fn discriminator_sizes(&self) -> Vec<usize> {
        sizes(&[&self.d_s as &dyn Network, &self.d_t])
    }
}

fn sizes(nets: &[&dyn Network]) -> Vec<usize> {
    nets.iter()
        .flat_map(|n| n.named_params().into_iter().map(|(_, p)| p.len()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: TranslatorWeights,
    /// Adam state of the two generators, in parameter order `G_st` then `G_ts`.
    pub gen_opt: OptimizerState,
    /// Adam state of the two discriminators, `D_s` then `D_t`.
    pub disc_opt: OptimizerState,
    pub config: TrainConfig,
    pub source_stats: NormStats,
    pub target_stats: NormStats,
    /// Number of completed epochs.
    pub epoch: u64,
}

impl Checkpoint {
    /// Fresh, untrained state.
    pub fn new(config: TrainConfig, source_stats: NormStats, target_stats: NormStats) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let weights = TranslatorWeights::init(&config, &mut rng)?;
        Ok(Self {
            gen_opt: OptimizerState::new(&weights.generator_sizes()),
            disc_opt: OptimizerState::new(&weights.discriminator_sizes()),
            weights,
            config,
            source_stats,
            target_stats,
            epoch: 0,
        })
    }
}

/// Loss components of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub epoch: usize,
    pub l_cc: f64,
    /// Full adversarial objective as seen by the discriminator step.
    pub l_adv_d: f64,
    /// Generator-side adversarial term.
    pub l_adv_g: f64,
    pub l_me: f64,
    /// Generator objective `λ_cc·L_cc + λ_adv·L_adv_g + λ_me·L_me`.
    pub l_total: f64,
    /// Mouth cosine steps that hit the zero-norm policy.
    pub degenerate_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub iterations_per_epoch: usize,
}

impl History {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,L_cc,L_adv_d,L_adv_g,L_me,L_total,epoch,degenerate_steps\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.iter, r.l_cc, r.l_adv_d, r.l_adv_g, r.l_me, r.l_total, r.epoch, r.degenerate_steps
            ));
        }
        s
    }
}

/// Batch layout shared by every network call in an iteration.
#[derive(Debug, Clone, Copy)]
struct Layout {
    steps: usize,
    batch: usize,
}

fn batch_var(tape: &mut Tape, windows: &[Window], idx: &[usize]) -> Result<Var> {
    let picked: Vec<Window> = idx.iter().map(|&i| windows[i].clone()).collect();
    let rows = picked.len() * picked[0].len();
    tape.constant(rows, EXPR_DIM, windows_to_matrix(&picked))
}

fn collect(grads: &mut Gradients, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| vec![0.0; v.len()]))
        .collect()
}

fn apply(nets: [&mut dyn Network; 2], grads: &[Vec<f64>], state: &mut OptimizerState, hp: &AdamParams) -> Result<()> {
    let [a, b] = nets;
    let mut params = a.params_mut();
    params.extend(b.params_mut());
    let mut slices: Vec<&mut [f64]> = params.into_iter().map(|p| p.make_mut().as_mut_slice()).collect();
    adam_step(&mut slices, grads, state, hp)
}

fn finite(iteration: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss {
            iteration,
            what: what.into(),
        })
    }
}

/// One discriminator step followed by one generator step.
#[allow(clippy::too_many_arguments)]
fn iteration(
    ck: &mut Checkpoint,
    hp: &AdamParams,
    s_idx: &[usize],
    t_idx: &[usize],
    src: &[Window],
    tgt: &[Window],
    lay: Layout,
    iter: usize,
) -> Result<HistoryRow> {
    let cfg = ck.config.clone();
    let Layout { steps, batch } = lay;

    let mut gt = Tape::new();
    let s = batch_var(&mut gt, src, s_idx)?;
    let t = batch_var(&mut gt, tgt, t_idx)?;
    let g_st = ck.weights.g_st.bind(&mut gt, true)?;
    let g_ts = ck.weights.g_ts.bind(&mut gt, true)?;
    let passes: CyclePasses = losses::run_cycle(
        &mut gt,
        s,
        t,
        |tp, x| g_st.forward(tp, x, steps, batch),
        |tp, x| g_ts.forward(tp, x, steps, batch),
    )?;

    // Discriminators, with the generated batches frozen.
    let l_adv_d = {
        let mut dt = Tape::new();
        let c = |dt: &mut Tape, v: Var| dt.constant(v.rows(), v.cols(), gt.value(v).to_vec());
        let (s_d, t_d) = (c(&mut dt, s)?, c(&mut dt, t)?);
        let (ft_d, fs_d) = (c(&mut dt, passes.fake_t)?, c(&mut dt, passes.fake_s)?);
        let d_s = ck.weights.d_s.bind(&mut dt, true)?;
        let d_t = ck.weights.d_t.bind(&mut dt, true)?;
        let sc = AdversarialScores {
            real_t: d_t.forward(&mut dt, t_d, steps, batch)?,
            fake_t: d_t.forward(&mut dt, ft_d, steps, batch)?,
            real_s: d_s.forward(&mut dt, s_d, steps, batch)?,
            fake_s: d_s.forward(&mut dt, fs_d, steps, batch)?,
        };
        let l_adv = losses::adversarial_loss_from(&mut dt, &sc, steps, batch)?;
        let value = finite(iter, "L_adv (discriminator)", dt.scalar(l_adv))?;
        let objective = dt.scale(l_adv, -1.0)?;
        let mut grads = dt.backward(objective)?;
        let mut vars = d_s.vars();
        vars.extend(d_t.vars());
        let mut g = collect(&mut grads, &vars);
        drop(dt);
        clip_gradients(&mut g, cfg.clip_norm);
        let w = &mut ck.weights;
        apply([&mut w.d_s, &mut w.d_t], &g, &mut ck.disc_opt, hp)?;
        value
    };

    // Generators, against the updated discriminators.
    let d_s = ck.weights.d_s.bind(&mut gt, false)?;
    let d_t = ck.weights.d_t.bind(&mut gt, false)?;
    let l_cc = losses::cycle_loss_from(&mut gt, &passes, s, t, batch)?;
    let (l_me, degenerate_steps) = losses::mouth_expression_loss_from(&mut gt, &passes, s, t, &cfg.mouth)?;
    let ft_score = d_t.forward(&mut gt, passes.fake_t, steps, batch)?;
    let fs_score = d_s.forward(&mut gt, passes.fake_s, steps, batch)?;
    let l_adv_g = losses::generator_adversarial_term(&mut gt, ft_score, fs_score, steps, batch, cfg.non_saturating)?;
    let total = losses::total_loss_var(&mut gt, l_cc, l_adv_g, l_me, &cfg.loss_weights)?;
    let row = HistoryRow {
        iter,
        epoch: ck.epoch as usize,
        l_cc: finite(iter, "L_cc", gt.scalar(l_cc))?,
        l_adv_d,
        l_adv_g: finite(iter, "L_adv (generator)", gt.scalar(l_adv_g))?,
        l_me: finite(iter, "L_me", gt.scalar(l_me))?,
        l_total: finite(iter, "L_total", gt.scalar(total))?,
        degenerate_steps,
    };
    let mut grads = gt.backward(total)?;
    let mut vars = g_st.vars();
    vars.extend(g_ts.vars());
    let mut g = collect(&mut grads, &vars);
    drop(gt);
    clip_gradients(&mut g, cfg.clip_norm);
    let w = &mut ck.weights;
    apply([&mut w.g_st, &mut w.g_ts], &g, &mut ck.gen_opt, hp)?;
    Ok(row)
}

/// Normalized training windows of one corpus.
pub struct TrainingCorpus {
    pub windows: Vec<Window>,
    pub stats: NormStats,
}

/// Splits off the first `train_frames` frames, normalizes them with their
/// own statistics and cuts them into windows.
pub fn prepare_corpus(seq: &ExpressionSequence, config: &TrainConfig, name: &str) -> Result<TrainingCorpus> {
    let train = seq.slice(0, config.train_frames.min(seq.len()));
    let (norm, stats) = normalize_sequence(&train)?;
    let windows = sliding_windows(&norm, config.window);
    if windows.is_empty() {
        return Err(Error::NoWindows(format!(
            "{name} corpus has {} training frames, window needs {}",
            train.len(),
            config.window
        )));
    }
    Ok(TrainingCorpus { windows, stats })
}

/// Trains from scratch.
pub fn train(config: &TrainConfig, source: &ExpressionSequence, target: &ExpressionSequence) -> Result<(Checkpoint, History)> {
    train_with(config, source, target, |_| {})
}

/// Like [`train`], calling `on_iter` after every iteration.
pub fn train_with(
    config: &TrainConfig,
    source: &ExpressionSequence,
    target: &ExpressionSequence,
    mut on_iter: impl FnMut(&HistoryRow),
) -> Result<(Checkpoint, History)> {
    config.validate()?;
    let src = prepare_corpus(source, config, "source")?;
    let tgt = prepare_corpus(target, config, "target")?;
    let mut ck = Checkpoint::new(config.clone(), src.stats, tgt.stats)?;
    // Separate stream from weight init so batch order does not depend on widths.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let (ns, nt) = (src.windows.len(), tgt.windows.len());
    let batch = config.batch_size.min(ns).min(nt);
    let per_epoch = (ns.min(nt) / config.batch_size).max(1);
    let lay = Layout {
        steps: config.window,
        batch,
    };
    let mut history = History {
        rows: Vec::with_capacity(per_epoch * config.epochs),
        iterations_per_epoch: per_epoch,
    };
    for epoch in 0..config.epochs {
        let hp = config.adam(epoch);
        let mut ps: Vec<usize> = (0..ns).collect();
        let mut pt: Vec<usize> = (0..nt).collect();
        ps.shuffle(&mut rng);
        pt.shuffle(&mut rng);
        for i in 0..per_epoch {
            let r = (i * batch)..((i + 1) * batch);
            let it = history.rows.len();
            let row = iteration(&mut ck, &hp, &ps[r.clone()], &pt[r], &src.windows, &tgt.windows, lay, it)?;
            on_iter(&row);
            history.rows.push(row);
        }
        ck.epoch += 1;
    }
    Ok((ck, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Source actor to target actor style, through `G_st`.
    #[serde(rename = "st")]
    SourceToTarget,
    /// Target actor to source actor style, through `G_ts`.
    #[serde(rename = "ts")]
    TargetToSource,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "st" => Ok(Self::SourceToTarget),
            "ts" => Ok(Self::TargetToSource),
            other => Err(Error::Invalid(format!("direction must be `st` or `ts`, got `{other}`"))),
        }
    }
}

/// Windows translated per generator call; bounds memory on long inputs.
const TRANSLATE_CHUNK: usize = 256;

/// Translates every frame of `seq`: normalize with the input corpus stats,
/// run the generator on the window ending at each frame, keep its last step
/// and denormalize with the output corpus stats.
pub fn translate_sequence(ck: &Checkpoint, seq: &ExpressionSequence, direction: Direction) -> Result<ExpressionSequence> {
    let (input, output) = match direction {
        Direction::SourceToTarget => (&ck.source_stats, &ck.target_stats),
        Direction::TargetToSource => (&ck.target_stats, &ck.source_stats),
    };
    input.validate().map_err(|_| Error::MissingStats)?;
    output.validate().map_err(|_| Error::MissingStats)?;
    if seq.is_empty() {
        return Ok(ExpressionSequence {
            frames: Vec::new(),
            stats: None,
            frame_rate: seq.frame_rate,
        });
    }
    let norm = apply_normalization(seq, input)?;
    let windows = padded_windows(&norm, ck.config.window);
    let g = ck.weights.generator(direction);
    let mut frames = Vec::with_capacity(seq.len());
    for chunk in windows.chunks(TRANSLATE_CHUNK) {
        for w in g.translate_windows(chunk)? {
            frames.push(*w.steps.last().expect("non-empty window"));
        }
    }
    let translated = ExpressionSequence {
        frames,
        stats: None,
        frame_rate: seq.frame_rate,
    };
    denormalize_sequence(&translated, Some(output))
}

/// Per-frame `(1 − α)·source + α·translated`.
pub fn interpolate_style(source: &ExpressionSequence, translated: &ExpressionSequence, alpha: f64) -> Result<ExpressionSequence> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if source.len() != translated.len() {
        return Err(Error::Length {
            expected: source.len(),
            actual: translated.len(),
        });
    }
    let frames = if alpha == 0.0 {
        source.frames.clone()
    } else if alpha == 1.0 {
        translated.frames.clone()
    } else {
        source
            .frames
            .iter()
            .zip(&translated.frames)
            .map(|(a, b)| std::array::from_fn(|k| (1.0 - alpha) * a[k] + alpha * b[k]))
            .collect()
    };
    Ok(ExpressionSequence {
        frames,
        stats: None,
        frame_rate: source.frame_rate,
    })
}
