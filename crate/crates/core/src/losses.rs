//! Training objectives on batches of windows.
//!
//! All functions take step-major `(N·B)×D` values (see [`crate::nets`]) and
//! average per-window losses over the batch `B`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::MouthIndexSet;

/// Discriminator scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before logs.
pub const SCORE_EPS: f64 = 1e-7;
/// Mouth vectors shorter than this contribute zero similarity.
pub const COS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_cc: f64,
    pub lambda_adv: f64,
    pub lambda_me: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cc: 10.0,
            lambda_adv: 1.0,
            lambda_me: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cc", self.lambda_cc),
            ("lambda_adv", self.lambda_adv),
            ("lambda_me", self.lambda_me),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Generator outputs needed by every loss term.
#[derive(Debug, Clone, Copy)]
pub struct CyclePasses {
    /// `G_st(s)`
    pub fake_t: Var,
    /// `G_ts(t)`
    pub fake_s: Var,
    /// `G_ts(G_st(s))`
    pub rec_s: Var,
    /// `G_st(G_ts(t))`
    pub rec_t: Var,
}

pub fn run_cycle<F, G>(tape: &mut Tape, s: Var, t: Var, mut g_st: F, mut g_ts: G) -> Result<CyclePasses>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
    G: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let fake_t = g_st(tape, s)?;
    let rec_s = g_ts(tape, fake_t)?;
    let fake_s = g_ts(tape, t)?;
    let rec_t = g_st(tape, fake_s)?;
    Ok(CyclePasses {
        fake_t,
        fake_s,
        rec_s,
        rec_t,
    })
}

fn l1_per_window(tape: &mut Tape, a: Var, b: Var, batch: usize) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let n = tape.l1_norm(d)?;
    tape.scale(n, 1.0 / batch as f64)
}

/// `‖rec_s − s‖₁ + ‖rec_t − t‖₁` per window pair, averaged over the batch.
pub fn cycle_loss_from(tape: &mut Tape, p: &CyclePasses, s: Var, t: Var, batch: usize) -> Result<Var> {
    let a = l1_per_window(tape, p.rec_s, s, batch)?;
    let b = l1_per_window(tape, p.rec_t, t, batch)?;
    tape.add(a, b)
}

pub fn cycle_loss<F, G>(tape: &mut Tape, s: Var, t: Var, batch: usize, g_st: F, g_ts: G) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
    G: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let p = run_cycle(tape, s, t, g_st, g_ts)?;
    cycle_loss_from(tape, &p, s, t, batch)
}

#[derive(Debug, Clone, Copy)]
pub struct CosineSimilarity {
    pub value: Var,
    /// Steps whose mouth sub-vector was (near) zero and counted as 0.
    pub degenerate_steps: usize,
}

/// Mean over steps (and windows) of the cosine between mouth sub-vectors.
pub fn cosine_mouth_similarity(tape: &mut Tape, a: Var, b: Var, mouth: &MouthIndexSet) -> Result<CosineSimilarity> {
    let ma = tape.gather_cols(a, mouth.indices())?;
    let mb = tape.gather_cols(b, mouth.indices())?;
    let (rows, degenerate_steps) = tape.row_cosine(ma, mb, COS_EPS)?;
    let value = tape.mean(rows)?;
    Ok(CosineSimilarity {
        value,
        degenerate_steps,
    })
}

/// `[1 − cos(s, G_st(s))] + [1 − cos(t, G_ts(t))]`; lies in `[0, 4]`.
pub fn mouth_expression_loss_from(
    tape: &mut Tape,
    p: &CyclePasses,
    s: Var,
    t: Var,
    mouth: &MouthIndexSet,
) -> Result<(Var, usize)> {
    let cs = cosine_mouth_similarity(tape, s, p.fake_t, mouth)?;
    let ct = cosine_mouth_similarity(tape, t, p.fake_s, mouth)?;
    let sum = tape.add(cs.value, ct.value)?;
    let neg = tape.scale(sum, -1.0)?;
    let loss = tape.add_scalar(neg, 2.0)?;
    Ok((loss, cs.degenerate_steps + ct.degenerate_steps))
}

pub fn mouth_expression_loss<F, G>(
    tape: &mut Tape,
    s: Var,
    t: Var,
    mouth: &MouthIndexSet,
    mut g_st: F,
    mut g_ts: G,
) -> Result<(Var, usize)>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
    G: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let fake_t = g_st(tape, s)?;
    let fake_s = g_ts(tape, t)?;
    let p = CyclePasses {
        fake_t,
        fake_s,
        rec_s: s,
        rec_t: t,
    };
    mouth_expression_loss_from(tape, &p, s, t, mouth)
}

/// Per-window mean of clamped per-step scores: `(N·B)×1 → B×1`.
pub fn mean_scores(tape: &mut Tape, scores: Var, steps: usize, batch: usize) -> Result<Var> {
    if scores.cols() != 1 || scores.rows() != steps * batch {
        return Err(Error::Shape {
            op: "mean_scores",
            lhs: scores.shape(),
            rhs: (steps * batch, 1),
        });
    }
    if let Some(x) = tape.value(scores).iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("discriminator score {x}")));
    }
    let clamped = tape.clamp(scores, SCORE_EPS, 1.0 - SCORE_EPS)?;
    let mut avg = vec![0.0; batch * steps * batch];
    for b in 0..batch {
        for n in 0..steps {
            avg[b * steps * batch + n * batch + b] = 1.0 / steps as f64;
        }
    }
    let avg = tape.constant(batch, steps * batch, avg)?;
    tape.matmul(avg, clamped)
}

/// Batch mean of `log(m)`.
fn mean_log(tape: &mut Tape, m: Var) -> Result<Var> {
    let l = tape.ln(m)?;
    tape.mean(l)
}

/// Batch mean of `log(1 − m)`.
fn mean_log_complement(tape: &mut Tape, m: Var) -> Result<Var> {
    let neg = tape.scale(m, -1.0)?;
    let c = tape.add_scalar(neg, 1.0)?;
    mean_log(tape, c)
}

/// Discriminator scores for the four adversarial terms.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialScores {
    /// `D_t(t)`
    pub real_t: Var,
    /// `D_t(G_st(s))`
    pub fake_t: Var,
    /// `D_s(s)`
    pub real_s: Var,
    /// `D_s(G_ts(t))`
    pub fake_s: Var,
}

/// `log m(D_t(t)) + log(1 − m(D_t(G_st(s)))) + log m(D_s(s)) + log(1 − m(D_s(G_ts(t))))`
/// with `m(·)` the per-window mean score.
pub fn adversarial_loss_from(tape: &mut Tape, sc: &AdversarialScores, steps: usize, batch: usize) -> Result<Var> {
    let real_t = mean_scores(tape, sc.real_t, steps, batch)?;
    let fake_t = mean_scores(tape, sc.fake_t, steps, batch)?;
    let real_s = mean_scores(tape, sc.real_s, steps, batch)?;
    let fake_s = mean_scores(tape, sc.fake_s, steps, batch)?;
    let a = mean_log(tape, real_t)?;
    let b = mean_log_complement(tape, fake_t)?;
    let c = mean_log(tape, real_s)?;
    let d = mean_log_complement(tape, fake_s)?;
    let ab = tape.add(a, b)?;
    let cd = tape.add(c, d)?;
    tape.add(ab, cd)
}

/// The part of the adversarial objective that depends on the generators.
/// Minimax form: `log(1 − m(D_t(fake_t))) + log(1 − m(D_s(fake_s)))`.
/// Non-saturating form: `−log m(D_t(fake_t)) − log m(D_s(fake_s))`.
pub fn generator_adversarial_term(
    tape: &mut Tape,
    fake_t_scores: Var,
    fake_s_scores: Var,
    steps: usize,
    batch: usize,
    non_saturating: bool,
) -> Result<Var> {
    let ft = mean_scores(tape, fake_t_scores, steps, batch)?;
    let fs = mean_scores(tape, fake_s_scores, steps, batch)?;
    if non_saturating {
        let a = mean_log(tape, ft)?;
        let b = mean_log(tape, fs)?;
        let sum = tape.add(a, b)?;
        tape.scale(sum, -1.0)
    } else {
        let a = mean_log_complement(tape, ft)?;
        let b = mean_log_complement(tape, fs)?;
        tape.add(a, b)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn adversarial_loss<F, G, DS, DT>(
    tape: &mut Tape,
    s: Var,
    t: Var,
    steps: usize,
    batch: usize,
    mut g_st: F,
    mut g_ts: G,
    mut d_s: DS,
    mut d_t: DT,
) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
    G: FnMut(&mut Tape, Var) -> Result<Var>,
    DS: FnMut(&mut Tape, Var) -> Result<Var>,
    DT: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let fake_t = g_st(tape, s)?;
    let fake_s = g_ts(tape, t)?;
    let sc = AdversarialScores {
        real_t: d_t(tape, t)?,
        fake_t: d_t(tape, fake_t)?,
        real_s: d_s(tape, s)?,
        fake_s: d_s(tape, fake_s)?,
    };
    adversarial_loss_from(tape, &sc, steps, batch)
}

/// `λ_cc·L_cc + λ_adv·L_adv + λ_me·L_me`
pub fn total_loss(cc: f64, adv: f64, me: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("L_cc", cc), ("L_adv", adv), ("L_me", me)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(w.lambda_cc * cc + w.lambda_adv * adv + w.lambda_me * me)
}

/// Tape version of [`total_loss`].
pub fn total_loss_var(tape: &mut Tape, cc: Var, adv: Var, me: Var, w: &LossWeights) -> Result<Var> {
    let a = tape.scale(cc, w.lambda_cc)?;
    let b = tape.scale(adv, w.lambda_adv)?;
    let c = tape.scale(me, w.lambda_me)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}
