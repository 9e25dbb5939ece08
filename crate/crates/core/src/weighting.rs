//! Connection weights: Gaussian draws quantized to the 4-bit pulse-width word.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{Polarity, WEIGHT_WORDS};

/// Default Gaussian magnitude mapped to the full-scale word.
pub const DEFAULT_SIGMA_MAX: f64 = 2.5;
/// Default delay of one buffer tap in the weighting delay line.
pub const DEFAULT_TAP_DELAY: f64 = 0.2e-9;

const MAX_WORD: u8 = (WEIGHT_WORDS - 1) as u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightWord {
    word: u8,
    pub polarity: Polarity,
}

impl WeightWord {
    pub fn new(word: u8, polarity: Polarity) -> Result<Self> {
        if word > MAX_WORD {
            return Err(Error::InvalidParams(format!("weight word {word} exceeds 4 bits")));
        }
        Ok(WeightWord { word, polarity })
    }

    pub fn word(&self) -> u8 {
        self.word
    }
}

/// Maps a real weight to polarity (sign, zero is excitatory) and a word
/// proportional to `|g| / sigma_max`, clamped to 15.
pub fn quantize_weight(g: f64, sigma_max: f64) -> Result<WeightWord> {
    if !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return Err(Error::InvalidParams(format!("sigma_max = {sigma_max} must be positive")));
    }
    if g.is_nan() {
        return Err(Error::InvalidParams("weight is NaN".into()));
    }
    let polarity = if g >= 0.0 { Polarity::Excitatory } else { Polarity::Inhibitory };
    let word = (g.abs() / sigma_max * MAX_WORD as f64).round().min(MAX_WORD as f64) as u8;
    Ok(WeightWord { word, polarity })
}

/// Width of the pulse produced for `word`: one tap plus one per word step.
pub fn pulse_width(word: u8, tap_delay: f64) -> Result<f64> {
    if word > MAX_WORD {
        return Err(Error::InvalidParams(format!("weight word {word} exceeds 4 bits")));
    }
    Ok((word as f64 + 1.0) * tap_delay)
}

/// Grid coordinate `(row, col)`.
pub type Site = (usize, usize);

/// Weight word of every directed connection `(source, sink)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightAssignment {
    pub links: BTreeMap<(Site, Site), WeightWord>,
    pub rng_seed: u64,
}

impl WeightAssignment {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn get(&self, source: Site, sink: Site) -> Option<WeightWord> {
        self.links.get(&(source, sink)).copied()
    }

    /// One line per connection: `(r,c)->(r,c) polarity word`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# weights seed {}\n", self.rng_seed);
        for (((sr, sc), (dr, dc)), w) in &self.links {
            writeln!(s, "({sr},{sc})->({dr},{dc}) {} {}", w.polarity.as_str(), w.word).unwrap();
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut out = WeightAssignment::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix("# weights seed ") {
                out.rng_seed = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::malformed(origin, format!("line {}: bad seed", ln + 1)))?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::malformed(origin, format!("line {}: cannot parse {line:?}", ln + 1));
            let mut parts = line.split_whitespace();
            let link = parts.next().ok_or_else(bad)?;
            let polarity: Polarity = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let word: u8 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if parts.next().is_some() {
                return Err(bad());
            }
            let (src, dst) = link.split_once("->").ok_or_else(bad)?;
            let site = |s: &str| -> Option<Site> {
                let inner = s.strip_prefix('(')?.strip_suffix(')')?;
                let (r, c) = inner.split_once(',')?;
                Some((r.trim().parse().ok()?, c.trim().parse().ok()?))
            };
            let key = (site(src).ok_or_else(bad)?, site(dst).ok_or_else(bad)?);
            let w = WeightWord::new(word, polarity).map_err(|_| bad())?;
            out.links.insert(key, w);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
