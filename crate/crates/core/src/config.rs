//! Plain-text configuration files: one `key = value` per line, `#` comments,
//! dotted keys grouped by component. Unknown keys are errors so that typos
//! cannot silently fall back to defaults.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::Upos;
use crate::labeler::LabelerConfig;
use crate::mbd::{ModelConfig, TrainSchedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {detail}")]
    Line { line: usize, detail: String },
}

/// Every tunable in one place; any subset may appear in a file, the rest
/// keep their defaults.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolkitConfig {
    pub labeler: LabelerConfig,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
}

impl ToolkitConfig {
    /// Serializes the full resolved configuration, suitable for manifests
    /// and for reloading through [`parse_config`].
    pub fn to_file_string(&self) -> String {
        let pos_list = self
            .labeler
            .important_pos
            .iter()
            .map(|p| p.as_str().to_lowercase())
            .collect::<Vec<_>>()
            .join(",");
        let rel_list =
            self.labeler.introductory_relations.iter().cloned().collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("labeler.tau", self.labeler.tau.to_string());
        line("labeler.m", self.labeler.m.to_string());
        line("labeler.important_pos", pos_list);
        line("labeler.introductory_relations", rel_list);
        line("model.vocab_size", self.model.vocab_size.to_string());
        line("model.embed_dim", self.model.embed_dim.to_string());
        line("model.hidden_dim", self.model.hidden_dim.to_string());
        line("model.encoder_layers", self.model.encoder_layers.to_string());
        line("model.branch_count", self.model.branch_count.to_string());
        line("model.branch_layers", self.model.branch_layers.to_string());
        line("model.dropout", self.model.dropout.to_string());
        line("model.pos_buckets", self.model.pos_buckets.to_string());
        line("model.seed", self.model.seed.to_string());
        line("schedule.steps", self.schedule.steps.to_string());
        line("schedule.batch_size", self.schedule.batch_size.to_string());
        line("schedule.learning_rate", self.schedule.learning_rate.to_string());
        line("schedule.beta1", self.schedule.beta1.to_string());
        line("schedule.beta2", self.schedule.beta2.to_string());
        line("schedule.adam_eps", self.schedule.adam_eps.to_string());
        line("schedule.decay_start", self.schedule.decay_start.to_string());
        line("schedule.decay_every", self.schedule.decay_every.to_string());
        line("schedule.clip_norm", self.schedule.clip_norm.to_string());
        line("schedule.shuffle_seed", self.schedule.shuffle_seed.to_string());
        out
    }
}

fn parse_value<T: FromStr>(value: &str, line: usize) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Line {
        line,
        detail: format!("cannot parse value `{}`", value.trim()),
    })
}

fn parse_pos_set(value: &str, line: usize) -> Result<std::collections::BTreeSet<Upos>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<Upos>().map_err(|_| ConfigError::Line {
                line,
                detail: format!("unknown part-of-speech tag `{s}`"),
            })
        })
        .collect()
}

pub fn parse_config(text: &str) -> Result<ToolkitConfig, ConfigError> {
    let mut cfg = ToolkitConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Line {
            line: line_no,
            detail: "expected `key = value`".to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "labeler.tau" => cfg.labeler.tau = parse_value(value, line_no)?,
            "labeler.m" => cfg.labeler.m = parse_value(value, line_no)?,
            "labeler.important_pos" => cfg.labeler.important_pos = parse_pos_set(value, line_no)?,
            "labeler.introductory_relations" => {
                cfg.labeler.introductory_relations = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
            }
            "model.vocab_size" => cfg.model.vocab_size = parse_value(value, line_no)?,
            "model.embed_dim" => cfg.model.embed_dim = parse_value(value, line_no)?,
            "model.hidden_dim" => cfg.model.hidden_dim = parse_value(value, line_no)?,
            "model.encoder_layers" => cfg.model.encoder_layers = parse_value(value, line_no)?,
            "model.branch_count" => cfg.model.branch_count = parse_value(value, line_no)?,
            "model.branch_layers" => cfg.model.branch_layers = parse_value(value, line_no)?,
            "model.dropout" => cfg.model.dropout = parse_value(value, line_no)?,
            "model.pos_buckets" => cfg.model.pos_buckets = parse_value(value, line_no)?,
            "model.seed" => cfg.model.seed = parse_value(value, line_no)?,
            "schedule.steps" => cfg.schedule.steps = parse_value(value, line_no)?,
            "schedule.batch_size" => cfg.schedule.batch_size = parse_value(value, line_no)?,
            "schedule.learning_rate" => cfg.schedule.learning_rate = parse_value(value, line_no)?,
            "schedule.beta1" => cfg.schedule.beta1 = parse_value(value, line_no)?,
            "schedule.beta2" => cfg.schedule.beta2 = parse_value(value, line_no)?,
            "schedule.adam_eps" => cfg.schedule.adam_eps = parse_value(value, line_no)?,
            "schedule.decay_start" => cfg.schedule.decay_start = parse_value(value, line_no)?,
            "schedule.decay_every" => cfg.schedule.decay_every = parse_value(value, line_no)?,
            "schedule.clip_norm" => cfg.schedule.clip_norm = parse_value(value, line_no)?,
            "schedule.shuffle_seed" => cfg.schedule.shuffle_seed = parse_value(value, line_no)?,
            other => {
                return Err(ConfigError::Line {
                    line: line_no,
                    detail: format!("unknown key `{other}`"),
                })
            }
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ToolkitConfig, ConfigError> {
    parse_config(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ToolkitConfig::default());
        assert_eq!(cfg.labeler.tau, 0.4);
        assert_eq!(cfg.labeler.m, 5);
        assert_eq!(cfg.model.vocab_size, 2000);
        assert_eq!(cfg.schedule.batch_size, 8);
    }

    #[test]
    fn values_comments_and_whitespace_parse() {
        let text = "\n# a comment\nlabeler.tau = 0.25   # trailing comment\n  model.hidden_dim=96\nschedule.steps = 42\nlabeler.important_pos = num, propn\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.labeler.tau, 0.25);
        assert_eq!(cfg.model.hidden_dim, 96);
        assert_eq!(cfg.schedule.steps, 42);
        assert_eq!(
            cfg.labeler.important_pos,
            [Upos::Num, Upos::Propn].into_iter().collect()
        );
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected_with_line_numbers() {
        let err = parse_config("labeler.tau = 0.4\nmystery = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("unknown key"), "{err}");
        let err = parse_config("labeler.m = not-a-number").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = parse_config("just some words").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn serialization_round_trips_through_the_parser() {
        let mut cfg = ToolkitConfig::default();
        cfg.labeler.tau = 0.35;
        cfg.model.seed = 99;
        cfg.schedule.learning_rate = 5e-4;
        let text = cfg.to_file_string();
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn every_model_and_schedule_field_is_coverable() {
        // One assignment per field; parsing must accept all of them.
        let text = "\nmodel.vocab_size = 100\nmodel.embed_dim = 8\nmodel.hidden_dim = 8\nmodel.encoder_layers = 2\nmodel.branch_count = 3\nmodel.branch_layers = 2\nmodel.dropout = 0.1\nmodel.pos_buckets = 4\nmodel.seed = 7\nschedule.steps = 10\nschedule.batch_size = 2\nschedule.learning_rate = 0.002\nschedule.beta1 = 0.8\nschedule.beta2 = 0.99\nschedule.adam_eps = 1e-9\nschedule.decay_start = 5\nschedule.decay_every = 5\nschedule.clip_norm = 2\nschedule.shuffle_seed = 3\nlabeler.introductory_relations = acl,conj\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.model.vocab_size, 100);
        assert_eq!(cfg.schedule.shuffle_seed, 3);
        assert_eq!(cfg.labeler.introductory_relations.len(), 2);
    }
}
