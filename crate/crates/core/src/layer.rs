use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Protocol layer of a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Bb,
    Gse,
    Ip,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Bb, Layer::Gse, Layer::Ip];

    /// Classifier input length: the longest header this layer can carry.
    pub fn window_bits(self) -> usize {
        match self {
            Layer::Bb => 80,
            Layer::Gse => 96,
            Layer::Ip => 160,
        }
    }

    /// Header length used as the non-maximum suppression radius.
    pub fn nominal_header_len(self) -> usize {
        match self {
            Layer::Bb => 10,
            Layer::Gse => 4,
            Layer::Ip => 20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Bb => "bb",
            Layer::Gse => "gse",
            Layer::Ip => "ip",
        }
    }

    pub fn from_window_bits(bits: usize) -> Option<Layer> {
        Layer::ALL.into_iter().find(|l| l.window_bits() == bits)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bb" => Ok(Layer::Bb),
            "gse" => Ok(Layer::Gse),
            "ip" => Ok(Layer::Ip),
            other => Err(Error::Config(format!("unknown layer {other:?}"))),
        }
    }
}
