use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionEncoding {
    Learned,
    Sinusoidal,
}

macro_rules! string_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self { $(Self::$variant => f.write_str($name)),+ }
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

string_enum!(Activation { Gelu => "gelu", Tanh => "tanh", Identity => "identity" });
string_enum!(PositionEncoding { Learned => "learned", Sinusoidal => "sinusoidal" });

/// Shape of the whole network: edit encoder, bottleneck, seq2seq model and
/// heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers_enc: usize,
    pub layers_s2s_enc: usize,
    pub layers_s2s_dec: usize,
    /// Width of the edit vector z.
    pub bottleneck: usize,
    pub bottleneck_activation: Activation,
    /// Width of the fine-tuning score head.
    pub output_dim: usize,
    pub dropout: f64,
    pub positions: PositionEncoding,
    pub tie_embeddings: bool,
    pub init_std: f64,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// The configuration used for end-to-end gradient checks.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 50,
            max_len: 24,
            hidden: 32,
            heads: 2,
            ffn_dim: 64,
            layers_enc: 2,
            layers_s2s_enc: 2,
            layers_s2s_dec: 2,
            bottleneck: 8,
            bottleneck_activation: Activation::Gelu,
            output_dim: 1,
            dropout: 0.0,
            positions: PositionEncoding::Learned,
            tie_embeddings: true,
            init_std: 0.02,
            ln_eps: 1e-5,
        }
    }

    /// Desk-scale default for a given vocabulary: 2 layers everywhere,
    /// H = 64 and a bottleneck of H/8.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 32,
            hidden: 64,
            heads: 4,
            ffn_dim: 128,
            bottleneck: 8,
            ..Self::tiny()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("layers_enc", self.layers_enc),
            ("layers_s2s_enc", self.layers_s2s_enc),
            ("layers_s2s_dec", self.layers_s2s_dec),
            ("bottleneck", self.bottleneck),
            ("output_dim", self.output_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.bottleneck > self.hidden {
            return Err(Error::Config(format!(
                "bottleneck {} exceeds hidden size {}",
                self.bottleneck, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.max_len < 5 {
            return Err(Error::Config("max_len must be at least 5".into()));
        }
        if self.vocab_size <= crate::text::NUM_SPECIAL {
            return Err(Error::Config("vocabulary has no ordinary tokens".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("model.{k}"), v);
        };
        put("vocab_size", self.vocab_size.to_string());
        put("max_len", self.max_len.to_string());
        put("hidden", self.hidden.to_string());
        put("heads", self.heads.to_string());
        put("ffn_dim", self.ffn_dim.to_string());
        put("layers_enc", self.layers_enc.to_string());
        put("layers_s2s_enc", self.layers_s2s_enc.to_string());
        put("layers_s2s_dec", self.layers_s2s_dec.to_string());
        put("bottleneck", self.bottleneck.to_string());
        put(
            "bottleneck_activation",
            self.bottleneck_activation.to_string(),
        );
        put("output_dim", self.output_dim.to_string());
        put("dropout", format!("{:?}", self.dropout));
        put("positions", self.positions.to_string());
        put("tie_embeddings", self.tie_embeddings.to_string());
        put("init_std", format!("{:?}", self.init_std));
        put("ln_eps", format!("{:?}", self.ln_eps));
        m
    }

    /// Sets one field by its `to_kv` name (without the `model.` prefix).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let k = format!("model.{key}");
        match key {
            "vocab_size" => self.vocab_size = crate::parse_setting(&k, raw)?,
            "max_len" => self.max_len = crate::parse_setting(&k, raw)?,
            "hidden" => self.hidden = crate::parse_setting(&k, raw)?,
            "heads" => self.heads = crate::parse_setting(&k, raw)?,
            "ffn_dim" => self.ffn_dim = crate::parse_setting(&k, raw)?,
            "layers_enc" => self.layers_enc = crate::parse_setting(&k, raw)?,
            "layers_s2s_enc" => self.layers_s2s_enc = crate::parse_setting(&k, raw)?,
            "layers_s2s_dec" => self.layers_s2s_dec = crate::parse_setting(&k, raw)?,
            "layers" => {
                let n = crate::parse_setting(&k, raw)?;
                self.layers_enc = n;
                self.layers_s2s_enc = n;
                self.layers_s2s_dec = n;
            }
            "bottleneck" => self.bottleneck = crate::parse_setting(&k, raw)?,
            "bottleneck_activation" => self.bottleneck_activation = crate::parse_setting(&k, raw)?,
            "output_dim" => self.output_dim = crate::parse_setting(&k, raw)?,
            "dropout" => self.dropout = crate::parse_setting(&k, raw)?,
            "positions" => self.positions = crate::parse_setting(&k, raw)?,
            "tie_embeddings" => self.tie_embeddings = crate::parse_setting(&k, raw)?,
            "init_std" => self.init_std = crate::parse_setting(&k, raw)?,
            "ln_eps" => self.ln_eps = crate::parse_setting(&k, raw)?,
            _ => return Err(Error::Config(format!("unknown setting {k}"))),
        }
        Ok(())
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T> {
            let key = format!("model.{k}");
            let raw = kv
                .get(&key)
                .ok_or_else(|| Error::Format(format!("missing header key {key}")))?;
            raw.parse()
                .map_err(|_| Error::Format(format!("bad value {raw:?} for {key}")))
        }
        let c = Self {
            vocab_size: get(kv, "vocab_size")?,
            max_len: get(kv, "max_len")?,
            hidden: get(kv, "hidden")?,
            heads: get(kv, "heads")?,
            ffn_dim: get(kv, "ffn_dim")?,
            layers_enc: get(kv, "layers_enc")?,
            layers_s2s_enc: get(kv, "layers_s2s_enc")?,
            layers_s2s_dec: get(kv, "layers_s2s_dec")?,
            bottleneck: get(kv, "bottleneck")?,
            bottleneck_activation: get(kv, "bottleneck_activation")?,
            output_dim: get(kv, "output_dim")?,
            dropout: get(kv, "dropout")?,
            positions: get(kv, "positions")?,
            tie_embeddings: get(kv, "tie_embeddings")?,
            init_std: get(kv, "init_std")?,
            ln_eps: get(kv, "ln_eps")?,
        };
        c.validate()?;
        Ok(c)
    }
}
