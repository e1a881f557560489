use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary class of a generated text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Erroneous,
}

impl Label {
    pub fn from_bit(b: bool) -> Self {
        if b {
            Label::Erroneous
        } else {
            Label::Clean
        }
    }

    pub fn is_erroneous(self) -> bool {
        self == Label::Erroneous
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Erroneous => "erroneous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    /// Accepts `0`/`1` and `clean`/`erroneous`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" | "clean" => Ok(Label::Clean),
            "1" | "erroneous" => Ok(Label::Erroneous),
            other => Err(format!("invalid label `{other}`")),
        }
    }
}
