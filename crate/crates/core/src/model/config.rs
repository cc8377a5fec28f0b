use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{CLIP_FRAMES, N_CHROMA};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "CN1+T")]
    Cn1T,
    #[serde(rename = "CN1+LSTM+T")]
    Cn1LstmT,
    #[serde(rename = "CN2+LSTM")]
    Cn2Lstm,
    #[serde(rename = "CN2+LSTM+T")]
    Cn2LstmT,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Cn1T,
        Variant::Cn1LstmT,
        Variant::Cn2Lstm,
        Variant::Cn2LstmT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cn1T => "CN1+T",
            Variant::Cn1LstmT => "CN1+LSTM+T",
            Variant::Cn2Lstm => "CN2+LSTM",
            Variant::Cn2LstmT => "CN2+LSTM+T",
        }
    }

    /// Whether this variant consumes tonic-normalized chroma.
    pub fn tonic_normalized(self) -> bool {
        !matches!(self, Variant::Cn2Lstm)
    }

    pub fn has_lstm(self) -> bool {
        !matches!(self, Variant::Cn1T)
    }

    pub fn is_cn2(self) -> bool {
        matches!(self, Variant::Cn2Lstm | Variant::Cn2LstmT)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// How the LSTM output sequence is reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Last,
    Mean,
}

/// One `conv3×3 + batchnorm + ReLU` block followed by max-pooling of
/// `pool = [time, freq]` (`[1, 1]` means no pooling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub channels: usize,
    pub pool: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stages: Vec<ConvStage>,
    /// Zero for the flatten head.
    pub lstm_hidden: usize,
    pub readout: Readout,
    pub num_classes: usize,
    pub tonic_normalize: bool,
    pub input_frames: usize,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant, num_classes: usize) -> Self {
        let stage = |channels, pt, pf| ConvStage {
            channels,
            pool: [pt, pf],
        };
        let stages = if variant.is_cn2() {
            vec![stage(32, 1, 2), stage(64, 1, 2), stage(256, 1, 1)]
        } else {
            vec![stage(16, 2, 2), stage(32, 2, 2)]
        };
        Self {
            variant,
            stages,
            lstm_hidden: if variant.has_lstm() { 64 } else { 0 },
            readout: Readout::Mean,
            num_classes,
            tonic_normalize: variant.tonic_normalized(),
            input_frames: CLIP_FRAMES,
            bn_momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes = {} (need at least 2)",
                self.num_classes
            ));
        }
        if self.stages.is_empty()
            || self
                .stages
                .iter()
                .any(|s| s.channels == 0 || s.pool.contains(&0))
        {
            return bad("every conv stage needs channels > 0 and pool sizes ≥ 1".into());
        }
        if self.variant.is_cn2() && self.stages.last().map(|s| s.channels) != Some(256) {
            return bad("CN2 variants end with 256 feature maps".into());
        }
        if self.variant.has_lstm() != (self.lstm_hidden > 0) {
            return bad(format!(
                "{} with lstm_hidden = {}",
                self.variant, self.lstm_hidden
            ));
        }
        if self.tonic_normalize != self.variant.tonic_normalized() {
            return bad(format!(
                "{} with tonic_normalize = {}",
                self.variant, self.tonic_normalize
            ));
        }
        if self.input_frames == 0 {
            return bad("input_frames = 0".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum = {}", self.bn_momentum));
        }
        Ok(())
    }

    /// `[time, freq, channels]` after each stage's ReLU (before pooling).
    pub fn activation_shapes(&self) -> Vec<[usize; 3]> {
        let (mut t, mut f) = (self.input_frames, N_CHROMA);
        let mut out = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            out.push([t, f, s.channels]);
            t = t.div_ceil(s.pool[0]);
            f = f.div_ceil(s.pool[1]);
        }
        out
    }

    /// `[time, freq, channels]` entering the head.
    pub fn feature_shape(&self) -> [usize; 3] {
        let last = self.stages.last().expect("validated");
        let [t, f, c] = *self.activation_shapes().last().expect("validated");
        [t.div_ceil(last.pool[0]), f.div_ceil(last.pool[1]), c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning_rate = {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidInput(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}
