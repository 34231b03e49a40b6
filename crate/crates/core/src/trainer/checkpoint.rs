//! Checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "DSTW" u32 version
//! u32 len, TrainConfig as JSON
//! u64 epoch, u64 generator Adam step, u64 discriminator Adam step
//! source stats, target stats: 64 means then 64 stds each
//! u32 tensor count, then per tensor:
//!   u32 name len, name, u32 rows, u32 cols, rows·cols f64
//! ```
//!
//! Tensor names are `g_st/…`, `g_ts/…`, `d_s/…`, `d_t/…` for weights and
//! `adam_g/m/<weight>`, `adam_g/v/<weight>` (likewise `adam_d`) for the
//! optimizer moments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Checkpoint, OptimizerState, TrainConfig, TranslatorWeights};
use crate::error::{Error, Result};
use crate::nets::{Network, Param};
use crate::params::{NormStats, EXPR_DIM};

pub const CKPT_MAGIC: &[u8; 4] = b"DSTW";
pub const CKPT_VERSION: u32 = 1;

fn named(w: &TranslatorWeights) -> [(&'static str, &dyn Network); 4] {
    [("g_st", &w.g_st), ("g_ts", &w.g_ts), ("d_s", &w.d_s), ("d_t", &w.d_t)]
}

fn named_mut(w: &mut TranslatorWeights) -> [(&'static str, &mut dyn Network); 4] {
    [
        ("g_st", &mut w.g_st),
        ("g_ts", &mut w.g_ts),
        ("d_s", &mut w.d_s),
        ("d_t", &mut w.d_t),
    ]
}

/// `(name, rows, cols)` of every weight tensor, generators first.
fn weight_layout(w: &TranslatorWeights) -> Vec<(String, usize, usize)> {
    named(w)
        .iter()
        .flat_map(|(net, n)| {
            n.named_params()
                .into_iter()
                .map(move |(p, t)| (format!("{net}/{p}"), t.rows, t.cols))
        })
        .collect()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn tensor(&mut self, name: &str, rows: usize, cols: usize, data: &[f64]) {
        self.u32(name.len());
        self.0.extend_from_slice(name.as_bytes());
        self.u32(rows);
        self.u32(cols);
        self.floats(data);
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CKPT_MAGIC);
    w.u32(CKPT_VERSION as usize);
    let cfg = serde_json::to_vec(&ck.config).expect("config serializes");
    w.u32(cfg.len());
    w.0.extend_from_slice(&cfg);
    w.u64(ck.epoch);
    w.u64(ck.gen_opt.step);
    w.u64(ck.disc_opt.step);
    for s in [&ck.source_stats, &ck.target_stats] {
        w.floats(&s.mean);
        w.floats(&s.std);
    }
    let layout = weight_layout(&ck.weights);
    w.u32(layout.len() * 3);
    let mut values = Vec::new();
    for (_, n) in named(&ck.weights) {
        values.extend(n.named_params().into_iter().map(|(_, p)| p.data.as_slice()));
    }
    for ((name, r, c), v) in layout.iter().zip(&values) {
        w.tensor(name, *r, *c, v);
    }
    let n_gen = ck.gen_opt.m.len();
    for (i, (name, r, c)) in layout.iter().enumerate() {
        let (tag, st, j) = if i < n_gen {
            ("adam_g", &ck.gen_opt, i)
        } else {
            ("adam_d", &ck.disc_opt, i - n_gen)
        };
        w.tensor(&format!("{tag}/m/{name}"), *r, *c, &st.m[j]);
        w.tensor(&format!("{tag}/v/{name}"), *r, *c, &st.v[j]);
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("checkpoint {what} at byte {}", self.pos))),
        }
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format(format!("{what} too large")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CKPT_MAGIC {
        return Err(Error::Format("missing DSTW magic".into()));
    }
    let version = r.u32("version")? as u32;
    if version != CKPT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let cfg_len = r.u32("config length")?;
    let config: TrainConfig = serde_json::from_slice(r.take(cfg_len, "config")?)?;
    config.validate()?;
    let epoch = r.u64("epoch")?;
    let gen_step = r.u64("generator step")?;
    let disc_step = r.u64("discriminator step")?;
    let mut stats = Vec::new();
    for _ in 0..2 {
        let mean = r.floats(EXPR_DIM, "stats")?;
        let std = r.floats(EXPR_DIM, "stats")?;
        stats.push(NormStats { mean, std });
    }
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32("tensor name")?;
        let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rows = r.u32("tensor shape")?;
        let cols = r.u32("tensor shape")?;
        let data = r.floats(rows * cols, &name)?;
        if tensors.insert(name.clone(), (rows, cols, data)).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }

    let mut weights = TranslatorWeights::zeros(&config);
    let layout = weight_layout(&weights);
    let mut take = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let (r, c, data) = tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
        if (r, c) != (rows, cols) {
            return Err(Error::Shape {
                op: "load_checkpoint",
                lhs: (r, c),
                rhs: (rows, cols),
            });
        }
        Ok(data)
    };
    let mut loaded = Vec::with_capacity(layout.len());
    for (name, rows, cols) in &layout {
        loaded.push(take(name, *rows, *cols)?);
    }
    let n_gen = weights.g_st.named_params().len() + weights.g_ts.named_params().len();
    let mut gen_opt = OptimizerState::new(&[]);
    let mut disc_opt = OptimizerState::new(&[]);
    for (i, (name, rows, cols)) in layout.iter().enumerate() {
        let (tag, st) = if i < n_gen {
            ("adam_g", &mut gen_opt)
        } else {
            ("adam_d", &mut disc_opt)
        };
        st.m.push(take(&format!("{tag}/m/{name}"), *rows, *cols)?);
        st.v.push(take(&format!("{tag}/v/{name}"), *rows, *cols)?);
    }
    gen_opt.step = gen_step;
    disc_opt.step = disc_step;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor `{extra}`")));
    }
    let mut it = loaded.into_iter();
    for (_, net) in named_mut(&mut weights) {
        for p in net.params_mut() {
            let data = it.next().expect("layout covers every parameter");
            *p = Param::from_vec(p.rows, p.cols, data);
        }
    }
    let target_stats = stats.pop().unwrap();
    let source_stats = stats.pop().unwrap();
    Ok(Checkpoint {
        weights,
        gen_opt,
        disc_opt,
        config,
        source_stats,
        target_stats,
        epoch,
    })
}

/// Writes through a temporary sibling file so a failed save leaves no
/// partial checkpoint behind.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    if let Err(e) = fs::write(&tmp, encode_checkpoint(ck)) {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
