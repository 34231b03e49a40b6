use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nets::NetWidths;
use crate::params::MouthIndexSet;

use super::optim::AdamParams;

/// Multiplies the learning rate by `factor` every `every_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub every_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Window length `N`.
    #[serde(rename = "N", alias = "window")]
    pub window: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Leading frames of each corpus used for training; the rest is held out.
    pub train_frames: usize,
    pub widths: NetWidths,
    pub mouth: MouthIndexSet,
    /// Use `−log D(fake)` for the generators instead of `log(1 − D(fake))`.
    pub non_saturating: bool,
    pub lr_decay: Option<LrDecay>,
    /// Start both generators at the exact identity map.
    pub identity_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 7,
            batch_size: 16,
            epochs: 25,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            loss_weights: LossWeights::default(),
            seed: 0,
            train_frames: 7500,
            widths: NetWidths::default(),
            mouth: MouthIndexSet::default(),
            non_saturating: false,
            lr_decay: None,
            identity_init: false,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        nonzero("N", self.window)?;
        nonzero("batch_size", self.batch_size)?;
        nonzero("epochs", self.epochs)?;
        nonzero("train_frames", self.train_frames)?;
        nonzero("widths.generator_hidden", self.widths.generator_hidden)?;
        positive("learning_rate", self.learning_rate)?;
        positive("adam_eps", self.adam_eps)?;
        positive("clip_norm", self.clip_norm)?;
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.widths.discriminator_base < 16 {
            return Err(Error::Config(format!(
                "widths.discriminator_base must be at least 16, got {}",
                self.widths.discriminator_base
            )));
        }
        if self.identity_init && self.widths.generator_hidden < 2 * crate::params::EXPR_DIM {
            return Err(Error::Config(format!(
                "identity_init needs widths.generator_hidden >= {}",
                2 * crate::params::EXPR_DIM
            )));
        }
        if let Some(d) = self.lr_decay {
            positive("lr_decay.factor", d.factor)?;
            nonzero("lr_decay.every_epochs", d.every_epochs)?;
        }
        self.loss_weights.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Adam hyper-parameters for the given (zero-based) epoch.
    pub fn adam(&self, epoch: usize) -> AdamParams {
        let lr = match self.lr_decay {
            Some(d) => self.learning_rate * d.factor.powi((epoch / d.every_epochs) as i32),
            None => self.learning_rate,
        };
        AdamParams {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.window, c.batch_size, c.epochs, c.train_frames), (7, 16, 25, 7500));
        assert_eq!((c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps), (1e-4, 0.5, 0.999, 1e-8));
        assert_eq!(c.clip_norm, 5.0);
        c.validate().unwrap();
    }

    #[test]
    fn json_roundtrip_and_partial() {
        let c = TrainConfig {
            seed: 42,
            learning_rate: 3.3e-5,
            lr_decay: Some(LrDecay {
                factor: 0.5,
                every_epochs: 5,
            }),
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
        let p = TrainConfig::from_json(r#"{"N": 3, "epochs": 2}"#).unwrap();
        assert_eq!((p.window, p.epochs, p.batch_size), (3, 2, 16));
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"N": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"adam_beta1": 1.0}"#).is_err());
    }

    #[test]
    fn lr_schedule() {
        let mut c = TrainConfig::default();
        assert_eq!(c.adam(30).lr, 1e-4);
        c.lr_decay = Some(LrDecay {
            factor: 0.5,
            every_epochs: 10,
        });
        assert_eq!(c.adam(9).lr, 1e-4);
        assert_eq!(c.adam(10).lr, 5e-5);
        assert_eq!(c.adam(25).lr, 2.5e-5);
    }
}
