//! Flat key-value experiment configuration.
//!
//! A config file is plain text, one `section.key = value` per line, with `#`
//! comments and blank lines ignored. There is no nesting and no quoting; the
//! format stays diff-friendly and trivially parseable. Every key must come
//! from the documented registry — an unknown key is an error, which catches
//! typos before they silently fall back to defaults.
//!
//! A canonical digest over the sorted entries names the run directory, so a
//! config edit (including a `--seed` override) lands in a fresh directory
//! while a cosmetic reordering or comment change does not.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Every key the harness understands, with a one-line meaning. Parsing
/// rejects anything outside this list.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("task.type", "one of ske_bke, ske_bks_lumpy, sks_bks_lumpy, ske_bks_clb"),
    ("grid.width", "image width in pixels"),
    ("grid.height", "image height in pixels (defaults to grid.width)"),
    ("kernel.height", "imaging-kernel height h"),
    ("kernel.width", "imaging-kernel width w in pixels"),
    ("signal.amplitude", "signal amplitude A"),
    ("signal.width", "known-signal width in pixels"),
    ("signal.center_x", "known-signal center x (defaults to grid center)"),
    ("signal.center_y", "known-signal center y (defaults to grid center)"),
    ("signal.width_min", "random-signal width prior lower edge"),
    ("signal.width_max", "random-signal width prior upper edge"),
    ("lumpy.mean_count", "mean lump count per image"),
    ("lumpy.amplitude", "lump amplitude a"),
    ("lumpy.width", "lump width s in pixels"),
    ("lumpy.grid_nodes", "nodes per axis for the enumerable lattice variant"),
    ("lumpy.fixed_count", "exact lump count for the enumerable lattice variant"),
    ("clb.mean_clusters", "mean cluster count per image"),
    ("clb.mean_blobs_per_cluster", "mean blob count per cluster"),
    ("clb.length_x", "blob half-axis Lx in pixels"),
    ("clb.length_y", "blob half-axis Ly in pixels"),
    ("clb.alpha", "blob radial decay alpha"),
    ("clb.beta", "blob radial exponent beta"),
    ("clb.cluster_std", "blob-offset standard deviation sigma in pixels"),
    ("clb.amplitude", "blob amplitude a"),
    ("noise.model", "one of laplacian, gaussian, poisson_gaussian"),
    ("noise.param", "decay c (laplacian) or standard deviation (gaussian models)"),
    ("priors.h1", "prior probability of the signal-present hypothesis"),
    ("data.objects", "stored noiseless objects per pool"),
    ("data.train_per_class", "noisy training measurements per class"),
    ("data.validation_per_class", "validation measurements per class"),
    ("data.test_per_class", "test measurements per class"),
    ("train.loss", "one of labeled, covdecomp, cg, woodbury"),
    ("train.batch_per_class", "images per class per mini-batch"),
    ("train.max_batches", "total mini-batches"),
    ("train.validation_every", "mini-batches between validation passes"),
    ("train.lr", "Adam base learning rate"),
    ("train.schedule", "one of constant, inverse_sqrt, inverse_time"),
    ("train.hold", "hold length of the inverse_time schedule"),
    ("ladder.depths", "comma-separated strictly increasing conv depths"),
    ("ladder.filters", "conv filters per layer"),
    ("ladder.filter_size", "conv filter side length"),
    ("mcmc.samples", "Markov-chain length per image"),
    ("mcmc.burn_in", "discarded leading samples (defaults to 10%)"),
    ("mcmc.step_std", "lump-perturbation proposal standard deviation"),
    ("rng.seed", "master seed for every derived stream"),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Unreadable(String),
    #[error("line {line}: expected `section.key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown config key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate config key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("key `{key}`: expected {expected}, got `{value}`")]
    BadValue { key: String, expected: &'static str, value: String },
    #[error("missing required config key `{key}`")]
    Missing { key: String },
}

/// Parsed configuration: a validated, ordered key-value map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.split_once('#') {
                Some((before, _)) => before,
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| {
                ConfigError::Malformed { line, text: stripped.to_string() }
            })?;
            let key = key.trim();
            let value = value.trim();
            if !is_known_key(key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Unreadable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets or replaces a key; the key must be in the registry.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !is_known_key(key) {
            return Err(ConfigError::UnknownKey { line: 0, key: key.to_string() });
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing { key: key.to_string() })
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_value(key, "a real number", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parse_value(key, "a nonnegative integer", |v| v.parse::<usize>().ok())
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.parse_value(key, "a nonnegative integer", |v| v.parse::<u64>().ok())
    }

    /// Comma-separated list of nonnegative integers, e.g. `ladder.depths = 1,2,3`.
    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        self.parse_value(key, "comma-separated nonnegative integers", |v| {
            v.split(',').map(|p| p.trim().parse::<usize>().ok()).collect::<Option<Vec<_>>>()
        })
    }

    fn parse_value<T>(
        &self,
        key: &str,
        expected: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse(v).map(Some).ok_or_else(|| ConfigError::BadValue {
                key: key.to_string(),
                expected,
                value: v.to_string(),
            }),
        }
    }

    /// Canonical text form: sorted `key = value` lines. Two configs with the
    /// same entries render identically regardless of source formatting.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Digest of the canonical text; names the run directory.
    pub fn digest(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    pub fn digest_hex(&self) -> String {
        format!("{:016x}", self.digest())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

fn is_known_key(key: &str) -> bool {
    KNOWN_KEYS.iter().any(|(k, _)| *k == key)
}

/// Fowler-Noll-Vo 1a, 64-bit: the checksum for dataset files and the config
/// digest. Stable, dependency-free, and easy to reimplement elsewhere.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
