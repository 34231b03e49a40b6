//! Trains on the synthetic paired-style corpora and reports held-out metrics.
//!
//! Usage: `style_experiment [train_frames] [config.json]`. Without a config
//! file the default `TrainConfig` is used.

use std::time::Instant;

use stylecycle::synth::{eval_style, paired_style_corpora, StyleSpec};
use stylecycle::trainer::{train_with, translate_sequence, Direction, TrainConfig};

const FRAMES: usize = 2000;

fn main() -> stylecycle::Result<()> {
    let mut args = std::env::args().skip(1);
    let train_frames: usize = args.next().map_or(656, |s| s.parse().expect("train_frames must be an integer"));
    let mut cfg = match args.next() {
        Some(path) => TrainConfig::from_json(&std::fs::read_to_string(path).expect("readable config"))?,
        None => TrainConfig::default(),
    };
    cfg.train_frames = train_frames;

    let c = paired_style_corpora(1, &StyleSpec::with_mouth_gain(1.0), &StyleSpec::with_mouth_gain(2.0), FRAMES)?;
    let start = Instant::now();
    let (ck, h) = train_with(&cfg, &c.source, &c.target, |r| {
        if r.iter % 40 == 0 {
            println!(
                "{:.0}s iter {} cc {:.3} adv_d {:.3} adv_g {:.3} me {:.4}",
                start.elapsed().as_secs_f64(),
                r.iter,
                r.l_cc,
                r.l_adv_d,
                r.l_adv_g,
                r.l_me
            );
        }
    })?;
    let test = c.source.slice(train_frames, FRAMES);
    let oracle = c.oracle.slice(train_frames, FRAMES);
    let out = translate_sequence(&ck, &test, Direction::SourceToTarget)?;
    let m = eval_style(&test, &out, &ck.target_stats, Some(&oracle), &cfg.mouth)?;
    println!("{} iterations, {:.0}s: {:?}", h.len(), start.elapsed().as_secs_f64(), m);
    Ok(())
}
