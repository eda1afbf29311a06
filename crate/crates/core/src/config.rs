//! Declarative experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//!
//! [experiment]
//! n = 64
//! tau = 0.9
//! s = 1000
//! samples_per_user = 100
//! fdr_samples = 1000
//! postprocess = "jpeg"
//!
//! [selection]
//! strategy = "a-bsta"
//! depth = 8
//!
//! [channel]
//! beta = 0.99            # or { low = 0.9, high = 1.0 }
//! gamma = 0.05
//! gamma_mode = "worst-case"
//!
//! [postprocess.profiles.jpeg]
//! kind = "absolute"
//! amount = 0.09
//! ```
//!
//! Every field except `seed` has a default. `tau` may be given as a number
//! or a string (`"0.9"`, `"9/10"`); either way it is held exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bounds::{format_fraction, fraction_from_f64, parse_fraction, Fraction};
use crate::channel::{lookup_profile, ChannelParams, ProfileTable};
use crate::exec::Exec;
use crate::experiment::{ExperimentConfig, DEFAULT_FDR_SAMPLES, DEFAULT_SAMPLES_PER_USER};
use crate::selection::{SelectionKind, SelectionStrategy, DEFAULT_BRANCH_BUDGET, DEFAULT_DEPTH, DEFAULT_NODE_BUDGET};
use crate::{Error, Result};

/// Detection threshold that round-trips through TOML without float drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tau(pub Fraction);

impl Default for Tau {
    fn default() -> Self {
        Tau(Fraction::new(9, 10))
    }
}

impl Serialize for Tau {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_fraction(self.0))
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(x) => fraction_from_f64(x),
            Raw::Text(t) => parse_fraction(&t),
        };
        parsed.map(Tau).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub n: usize,
    pub tau: Tau,
    pub s: usize,
    pub samples_per_user: u32,
    pub fdr_samples: u32,
    /// Name of a profile in `[postprocess.profiles]`, or `identity`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub postprocess: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            n: 64,
            tau: Tau::default(),
            s: 1000,
            samples_per_user: DEFAULT_SAMPLES_PER_USER,
            fdr_samples: DEFAULT_FDR_SAMPLES,
            postprocess: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub strategy: SelectionKind,
    pub depth: u32,
    pub node_budget: u64,
    pub branch_budget: u64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            strategy: SelectionKind::ABsta,
            depth: DEFAULT_DEPTH,
            node_budget: DEFAULT_NODE_BUDGET,
            branch_budget: DEFAULT_BRANCH_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessSection {
    pub profiles: ProfileTable,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub experiment: ExperimentSection,
    pub selection: SelectionSection,
    pub channel: ChannelParams,
    pub postprocess: PostprocessSection,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks ranges and that the named post-processing profile exists.
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        for profile in self.postprocess.profiles.values() {
            profile.validate()?;
        }
        if let Some(name) = &self.experiment.postprocess {
            lookup_profile(&self.postprocess.profiles, name)?;
        }
        Ok(())
    }

    pub fn strategy(&self, seed: u64) -> SelectionStrategy {
        SelectionStrategy::new(self.selection.strategy, seed)
            .with_depth(self.selection.depth)
            .with_node_budget(self.selection.node_budget)
            .with_branch_budget(self.selection.branch_budget)
    }

    /// Resolves into a runnable config. `seed` overrides the file's seed; one
    /// of the two must be present.
    pub fn experiment_config(&self, seed: Option<u64>, exec: Exec) -> Result<ExperimentConfig> {
        let seed = seed.or(self.seed).ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))?;
        let postprocess = match &self.experiment.postprocess {
            Some(name) => Some(lookup_profile(&self.postprocess.profiles, name)?),
            None => None,
        };
        let e = &self.experiment;
        let cfg = ExperimentConfig {
            n: e.n,
            tau: e.tau.0,
            s: e.s,
            samples_per_user: e.samples_per_user,
            fdr_samples: e.fdr_samples,
            strategy: self.strategy(seed).with_exec(exec),
            channel: self.channel.clone(),
            postprocess,
            seed,
            exec,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
