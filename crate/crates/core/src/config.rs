//! Line-oriented run configuration: `key = value` entries grouped under
//! `[section]` headers, with `#` comments. Every key is checked against a
//! fixed schema at parse time, so a typo fails loudly with its line number
//! instead of silently falling back to a default.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Every section and key the toolkit understands. Parsing rejects anything
/// not listed here.
const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["seed"]),
    (
        "synth",
        &[
            "n_classes",
            "embed_dim",
            "sigma",
            "noise",
            "max_flip",
            "ramp_width",
            "n_samples",
            "n_epochs",
        ],
    ),
    (
        "cache",
        &["views", "classifier", "store_losses", "store_logits"],
    ),
    ("head", &["hidden_dim"]),
    (
        "train",
        &[
            "variant",
            "margin",
            "leeway",
            "loss_source",
            "batch_size",
            "total_steps",
            "warmup_steps",
            "optimizer",
            "beta1",
            "beta2",
            "epsilon",
            "weight_decay",
            "momentum",
            "warmup_start_lr",
            "peak_lr",
            "final_lr",
            "checkpoint_every",
        ],
    ),
    ("eval", &["perturbation", "severities"]),
    (
        "retrieve",
        &[
            "query_reject_fraction",
            "database_clean_fraction",
            "clean_mode",
        ],
    ),
    (
        "viz",
        &[
            "perplexity",
            "iterations",
            "learning_rate",
            "early_momentum",
            "late_momentum",
            "momentum_switch_iter",
            "exaggeration",
            "exaggeration_iters",
            "base_radius",
            "radius_scale",
        ],
    ),
];

fn schema_keys(section: &str) -> Option<&'static [&'static str]> {
    SCHEMA
        .iter()
        .find(|(name, _)| *name == section)
        .map(|(_, keys)| *keys)
}

/// A parsed, schema-checked configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    /// `"section.key"` (or just `"key"` for the top level) → (value, line).
    entries: BTreeMap<String, (String, usize)>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Config {
                    line: line_no,
                    detail: "unterminated section header".into(),
                })?;
                let name = name.trim();
                if schema_keys(name).is_none() {
                    return Err(Error::Config {
                        line: line_no,
                        detail: format!("unknown section [{name}]"),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Config {
                line: line_no,
                detail: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let allowed = schema_keys(&section).expect("section was validated");
            if !allowed.contains(&key) {
                let place = if section.is_empty() {
                    "the top level".to_string()
                } else {
                    format!("section [{section}]")
                };
                return Err(Error::Config {
                    line: line_no,
                    detail: format!("unknown key `{key}` in {place}"),
                });
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if entries.insert(full.clone(), (value.to_string(), line_no)).is_some() {
                return Err(Error::Config {
                    line: line_no,
                    detail: format!("duplicate key `{full}`"),
                });
            }
        }
        Ok(RunConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        self.entries.get(&full)
    }

    /// Raw string value, if the key is present.
    pub fn get_str(&self, section: &str, key: &str) -> Option<&str> {
        self.lookup(section, key).map(|(v, _)| v.as_str())
    }

    /// Parses the value as `T`, or returns `default` when absent.
    pub fn get_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.lookup(section, key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| Error::Config {
                line: *line,
                detail: format!("key `{key}`: cannot parse `{v}`"),
            }),
        }
    }

    /// Parses a required value as `T`.
    pub fn require<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let (v, line) = self.lookup(section, key).ok_or_else(|| Error::Config {
            line: 0,
            detail: format!("missing required key `{key}` in section [{section}]"),
        })?;
        v.parse().map_err(|_| Error::Config {
            line: *line,
            detail: format!("key `{key}`: cannot parse `{v}`"),
        })
    }

    /// Parses a comma-separated list of reals.
    pub fn get_f64_list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.lookup(section, key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(|part| {
                    part.trim().parse::<f64>().map_err(|_| Error::Config {
                        line: *line,
                        detail: format!("key `{key}`: cannot parse `{}` as a real", part.trim()),
                    })
                })
                .collect(),
        }
    }

    /// Boolean under `true/false`; errors on anything else.
    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.lookup(section, key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(Error::Config {
                    line: *line,
                    detail: format!("key `{key}`: expected true or false, got `{other}`"),
                }),
            },
        }
    }

    /// The run seed; everything else derives from it by labeled hashing.
    pub fn seed(&self) -> Result<u64> {
        self.get_or("", "seed", 0u64)
    }

    /// The line a key was defined on, for error reporting.
    pub fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.lookup(section, key).map(|(_, l)| *l)
    }
}
