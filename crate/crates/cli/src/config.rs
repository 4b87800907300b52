//! Run configuration: built-in defaults, then the TOML file, then flags.

use std::fs;
use std::path::Path;

use gmt_core::{Ablation, GenConfig, GmtError, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

/// Fully resolved settings. The top-level `seed` drives data generation,
/// weight initialization and batch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ablation: Option<Ablation>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn section<T: Serialize + for<'de> Deserialize<'de>>(file: &Table, key: &str, base: T, origin: &str) -> CliResult<T> {
    let mut v = Value::try_from(base).expect("config types serialize to TOML");
    if let Some(over) = file.get(key) {
        merge(&mut v, over.clone());
    }
    v.try_into()
        .map_err(|e| CliError::usage(format!("{origin}: [{key}] {e}")))
}

impl RunConfig {
    /// Resolve from an optional TOML file. Generator defaults follow the
    /// model's frame count, point budget and fixture count.
    pub fn resolve(path: Option<&Path>, overrides: Overrides) -> CliResult<Self> {
        let (file, origin) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| GmtError::io(p, e))?;
                let table: Table = text
                    .parse()
                    .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                (table, p.display().to_string())
            }
            None => (Table::new(), "defaults".to_string()),
        };
        if let Some(k) = file.keys().find(|k| !["seed", "model", "train", "gen"].contains(&k.as_str())) {
            return Err(CliError::usage(format!("{origin}: unknown key {k:?}")));
        }
        let file_seed = match file.get("seed") {
            None => None,
            Some(Value::Integer(s)) if *s >= 0 => Some(*s as u64),
            Some(v) => return Err(CliError::usage(format!("{origin}: seed must be a non-negative integer, got {v}"))),
        };
        let seed = overrides.seed.or(file_seed).unwrap_or(0);
        let mut model: ModelConfig = section(&file, "model", ModelConfig::default(), &origin)?;
        let mut train: TrainConfig = section(&file, "train", TrainConfig::default(), &origin)?;
        let gen: GenConfig = section(&file, "gen", GenConfig::for_model(&model), &origin)?;
        model.init_seed = seed;
        train.seed = seed;
        if let Some(a) = overrides.ablation {
            train.ablation = a;
        }
        model.validate()?;
        train.validate()?;
        gen.validate()?;
        Ok(Self { seed, model, train, gen })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::resolve(None, Overrides::default()).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.gen, GenConfig::for_model(&ModelConfig::default()));
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(
            &p,
            "seed = 3\n[model]\nseq_len = 20\n[model.fusion]\nlayers = 1\n[train]\nablation = \"no_goal\"\nepochs = 2\n",
        )
        .unwrap();
        let c = RunConfig::resolve(Some(&p), Overrides::default()).unwrap();
        assert_eq!((c.seed, c.model.seq_len, c.model.fusion.layers, c.train.epochs), (3, 20, 1, 2));
        assert_eq!(c.model.fusion.heads, ModelConfig::default().fusion.heads);
        assert_eq!(c.gen.preprocess.seq_len, 20);
        assert_eq!(c.train.ablation, Ablation::NoGoal);
        let c = RunConfig::resolve(
            Some(&p),
            Overrides {
                seed: Some(9),
                ablation: Some(Ablation::FirstFrame),
            },
        )
        .unwrap();
        assert_eq!((c.seed, c.train.seed, c.model.init_seed), (9, 9, 9));
        assert_eq!(c.train.ablation, Ablation::FirstFrame);
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::resolve(None, Overrides::default()).unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_files_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        for text in ["[modle]\n", "[model]\nseq_len = \"x\"\n", "seed = -1\n", "[train]\nlearning_rate = 0.0\n", "not toml ="] {
            fs::write(&p, text).unwrap();
            let err = RunConfig::resolve(Some(&p), Overrides::default()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }
}
