//! `stylecycle` command-line tool.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use manifest::{manifest_path, Outputs, RunManifest};
use stylecycle::compositor::{self, MaskParams};
use stylecycle::params::{io, ExpressionSequence, MouthIndexSet, NormStats};
use stylecycle::synth::{self, StyleSpec};
use stylecycle::trainer::{self, Direction, TrainConfig};

#[derive(Parser)]
#[command(name = "stylecycle", version, about = "Expression style translation between two actors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pair of synthetic corpora plus the ground-truth oracle.
    Synth(SynthArgs),
    /// Train the translation networks on two unpaired corpora.
    Train(TrainArgs),
    /// Translate a sequence with a trained checkpoint.
    Translate(TranslateArgs),
    /// Blend a sequence with its translation.
    Interpolate(InterpolateArgs),
    /// Style metrics of a translation, printed as JSON.
    Eval(EvalArgs),
    /// Paste a foreground image over a background through a soft mask.
    Composite(CompositeArgs),
    /// Rerun the command recorded in a run manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Source-actor style (JSON); defaults to unit gains.
    #[arg(long)]
    source_spec: Option<PathBuf>,
    /// Target-actor style (JSON); defaults to mouth gain 2.
    #[arg(long)]
    target_spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for source.csv, target.csv and oracle.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TrainConfig JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config train_frames.
    #[arg(long)]
    frames: Option<usize>,
    /// Checkpoint path; the history goes to `<out>.history.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Print a progress line every this many iterations (0 disables).
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "st")]
    direction: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    source: PathBuf,
    /// Precomputed translation of `source`.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    translated: Option<PathBuf>,
    /// Translate `source` with this checkpoint instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "st")]
    direction: String,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    translated: PathBuf,
    /// Corpus whose statistics the translation should match.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    target: Option<PathBuf>,
    /// Take the output-corpus statistics from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "st")]
    direction: String,
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Evaluate only frames from this index on (e.g. the held-out split).
    #[arg(long, default_value_t = 0)]
    frames: usize,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompositeArgs {
    #[arg(long)]
    fg: PathBuf,
    #[arg(long)]
    bg: PathBuf,
    /// Binary face mask (PGM).
    #[arg(long)]
    mask: PathBuf,
    /// Erosion radius in pixels; defaults to 4 at width 512, scaled.
    #[arg(long)]
    radius: Option<usize>,
    /// Feather σ in pixels; defaults to 3 at width 512, scaled.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn read_seq(path: &Path) -> Result<ExpressionSequence> {
    io::read_sequence(path).with_context(|| format!("reading {}", path.display()))
}

fn seq_bytes(seq: &ExpressionSequence, path: &Path) -> Result<Vec<u8>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("dseq")) {
        return Ok(io::encode_dseq(seq));
    }
    let mut buf = Vec::new();
    io::write_sequence_csv(seq, &mut buf)?;
    Ok(buf)
}

fn direction(s: &str) -> Result<Direction> {
    Ok(s.parse::<Direction>()?)
}

fn load_checkpoint(path: &Path) -> Result<trainer::Checkpoint> {
    trainer::load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let started = Instant::now();
    let mut m = RunManifest::new("synth");
    let load = |p: &Option<PathBuf>, default: StyleSpec, m: &mut RunManifest, name: &str| -> Result<StyleSpec> {
        match p {
            Some(p) => {
                m.input(name, p);
                StyleSpec::load(p).with_context(|| format!("loading style spec {}", p.display()))
            }
            None => Ok(default),
        }
    };
    let src = load(&a.source_spec, StyleSpec::default(), &mut m, "source_spec")?;
    let tgt = load(&a.target_spec, StyleSpec::with_mouth_gain(2.0), &mut m, "target_spec")?;
    let c = synth::paired_style_corpora(a.seed, &src, &tgt, a.frames)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut out = Outputs::new();
    for (name, seq) in [("source", &c.source), ("target", &c.target), ("oracle", &c.oracle)] {
        let path = a.out.join(format!("{name}.csv"));
        out.write(&path, seq_bytes(seq, &path)?)?;
        m.outputs.insert(name.into(), path);
    }
    m.seed = Some(a.seed);
    m.config = json!({ "frames": a.frames, "source_spec": src, "target_spec": tgt });
    out.commit(&mut m, &a.out.join("manifest.json"), started)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut m = RunManifest::new("train");
    let mut cfg = match &a.config {
        Some(p) => {
            m.input("config", p);
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_json(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.frames {
        cfg.train_frames = f;
    }
    cfg.validate()?;
    m.input("source", &a.source);
    m.input("target", &a.target);
    let source = read_seq(&a.source)?;
    let target = read_seq(&a.target)?;
    let log_every = a.log_every;
    let (ck, history) = trainer::train_with(&cfg, &source, &target, |r| {
        if log_every > 0 && r.iter % log_every == 0 {
            eprintln!(
                "iter {:>6} epoch {:>3}  L_cc {:.4}  L_adv_d {:.4}  L_adv_g {:.4}  L_me {:.4}  L_total {:.4}",
                r.iter, r.epoch, r.l_cc, r.l_adv_d, r.l_adv_g, r.l_me, r.l_total
            );
        }
    })?;
    let mut out = Outputs::new();
    out.track(&a.out);
    trainer::save_checkpoint(&ck, &a.out)?;
    let hist_path = PathBuf::from(format!("{}.history.csv", a.out.display()));
    out.write(&hist_path, history.to_csv())?;
    m.outputs.insert("checkpoint".into(), a.out.clone());
    m.outputs.insert("history".into(), hist_path);
    m.seed = Some(cfg.seed);
    m.config = serde_json::to_value(&cfg)?;
    out.commit(&mut m, &manifest_path(&a.out), started)
}

fn translate_cmd(a: TranslateArgs) -> Result<()> {
    let started = Instant::now();
    let mut m = RunManifest::new("translate");
    let dir = direction(&a.direction)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let input = read_seq(&a.input)?;
    let out_seq = trainer::translate_sequence(&ck, &input, dir)?;
    let mut out = Outputs::new();
    out.write(&a.out, seq_bytes(&out_seq, &a.out)?)?;
    m.input("checkpoint", &a.checkpoint);
    m.input("input", &a.input);
    m.outputs.insert("translated".into(), a.out.clone());
    m.config = json!({ "direction": a.direction });
    out.commit(&mut m, &manifest_path(&a.out), started)
}

fn interpolate_cmd(a: InterpolateArgs) -> Result<()> {
    let started = Instant::now();
    let mut m = RunManifest::new("interpolate");
    let source = read_seq(&a.source)?;
    m.input("source", &a.source);
    let translated = match (&a.translated, &a.checkpoint) {
        (Some(t), _) => {
            m.input("translated", t);
            read_seq(t)?
        }
        (None, Some(c)) => {
            m.input("checkpoint", c);
            trainer::translate_sequence(&load_checkpoint(c)?, &source, direction(&a.direction)?)?
        }
        (None, None) => bail!("either --translated or --checkpoint is required"),
    };
    let blended = trainer::interpolate_style(&source, &translated, a.alpha)?;
    let mut out = Outputs::new();
    out.write(&a.out, seq_bytes(&blended, &a.out)?)?;
    m.outputs.insert("interpolated".into(), a.out.clone());
    m.config = json!({ "alpha": a.alpha, "direction": a.direction });
    out.commit(&mut m, &manifest_path(&a.out), started)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let mut m = RunManifest::new("eval");
    let from = |s: ExpressionSequence| -> Result<ExpressionSequence> {
        if a.frames > s.len() {
            bail!("--frames {} exceeds sequence length {}", a.frames, s.len());
        }
        Ok(s.slice(a.frames, s.len()))
    };
    let source = from(read_seq(&a.source)?)?;
    let translated = from(read_seq(&a.translated)?)?;
    let oracle = a.oracle.as_ref().map(|p| read_seq(p).and_then(from)).transpose()?;
    let (stats, mouth) = match (&a.target, &a.checkpoint) {
        (Some(t), _) => {
            m.input("target", t);
            (NormStats::from_frames(&read_seq(t)?.frames)?, MouthIndexSet::default())
        }
        (None, Some(c)) => {
            m.input("checkpoint", c);
            let ck = load_checkpoint(c)?;
            let stats = match direction(&a.direction)? {
                Direction::SourceToTarget => ck.target_stats,
                Direction::TargetToSource => ck.source_stats,
            };
            (stats, ck.config.mouth)
        }
        (None, None) => bail!("either --target or --checkpoint is required"),
    };
    let metrics = synth::eval_style(&source, &translated, &stats, oracle.as_ref(), &mouth)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    println!("{text}");
    if let Some(path) = &a.out {
        m.input("source", &a.source);
        m.input("translated", &a.translated);
        if let Some(o) = &a.oracle {
            m.input("oracle", o);
        }
        m.outputs.insert("metrics".into(), path.clone());
        m.config = json!({ "frames": a.frames, "direction": a.direction });
        let mut out = Outputs::new();
        out.write(path, text + "\n")?;
        out.commit(&mut m, &manifest_path(path), started)?;
    }
    Ok(())
}

fn composite_cmd(a: CompositeArgs) -> Result<()> {
    let started = Instant::now();
    let mut m = RunManifest::new("composite");
    let fg = compositor::read_ppm(&a.fg).with_context(|| format!("reading {}", a.fg.display()))?;
    let bg = compositor::read_ppm(&a.bg).with_context(|| format!("reading {}", a.bg.display()))?;
    let mask = compositor::read_pgm(&a.mask).with_context(|| format!("reading {}", a.mask.display()))?;
    let defaults = MaskParams::for_width(fg.width);
    let params = MaskParams {
        radius: a.radius.unwrap_or(defaults.radius),
        sigma: a.sigma.unwrap_or(defaults.sigma),
    };
    if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
        bail!("--sigma must be a finite value >= 0");
    }
    let soft = compositor::soft_mask(&mask, params);
    let img = compositor::composite(&fg, &bg, &soft)?;
    let mut out = Outputs::new();
    out.write(&a.out, compositor::encode_ppm(&img))?;
    for (k, p) in [("fg", &a.fg), ("bg", &a.bg), ("mask", &a.mask)] {
        m.input(k, p);
    }
    m.outputs.insert("image".into(), a.out.clone());
    m.config = json!({ "radius": params.radius, "sigma": params.sigma });
    out.commit(&mut m, &manifest_path(&a.out), started)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Translate(a) => translate_cmd(a),
        Command::Interpolate(a) => interpolate_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Composite(a) => composite_cmd(a),
        Command::Replay { manifest } => {
            let m = RunManifest::load(&manifest)?;
            let cli = Cli::try_parse_from(&m.args).context("manifest holds an invalid command line")?;
            if matches!(cli.command, Command::Replay { .. }) {
                bail!("manifest records a replay, not a command");
            }
            run(cli)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
