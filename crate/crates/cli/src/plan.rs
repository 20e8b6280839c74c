//! Sweep plans: a base config, one axis, its values and a repeat count.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fzsl_core::fed::FedConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    None,
    ClientNumber,
    ClientFraction,
    LocalEpochs,
    AggregationMode,
    SkaMode,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => SweepAxis::None,
            "client_number" => SweepAxis::ClientNumber,
            "client_fraction" => SweepAxis::ClientFraction,
            "local_epochs" => SweepAxis::LocalEpochs,
            "aggregation_mode" => SweepAxis::AggregationMode,
            "ska_mode" => SweepAxis::SkaMode,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::ClientNumber => "client_number",
            SweepAxis::ClientFraction => "client_fraction",
            SweepAxis::LocalEpochs => "local_epochs",
            SweepAxis::AggregationMode => "aggregation_mode",
            SweepAxis::SkaMode => "ska_mode",
        }
    }

    /// The config key this axis varies.
    fn key(self) -> Option<&'static str> {
        match self {
            SweepAxis::None => None,
            SweepAxis::ClientNumber => Some("num_clients"),
            SweepAxis::ClientFraction => Some("client_fraction"),
            SweepAxis::LocalEpochs => Some("local_epochs"),
            SweepAxis::AggregationMode => Some("mode"),
            SweepAxis::SkaMode => Some("ska"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub base: FedConfig,
    pub axis: SweepAxis,
    /// Textual values as written in the plan; empty for [`SweepAxis::None`].
    pub values: Vec<String>,
    pub repeats: usize,
}

impl ExperimentPlan {
    /// Plan text is `key = value` lines. `axis`, `values` (comma separated)
    /// and `repeats` describe the sweep; any other key overrides `base`.
    pub fn parse(text: &str, base: FedConfig, origin: &Path) -> Result<Self> {
        let mut axis = None;
        let mut values = Vec::new();
        let mut repeats = 1usize;
        let mut overrides = String::new();
        let at = |line: usize| format!("{}:{line}", origin.display());
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                overrides.push('\n');
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}: expected `key = value`", at(i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "axis" => {
                    axis = Some(
                        SweepAxis::parse(value)
                            .ok_or_else(|| anyhow!("{}: unknown axis `{value}`", at(i + 1)))?,
                    )
                }
                "values" => {
                    values = value
                        .split(',')
                        .map(|v| v.trim().to_string())
                        .filter(|v| !v.is_empty())
                        .collect()
                }
                "repeats" => {
                    repeats = value.parse().ok().filter(|&r| r > 0).ok_or_else(|| {
                        anyhow!("{}: repeats must be a positive integer", at(i + 1))
                    })?
                }
                _ => {
                    overrides.push_str(line);
                    overrides.push('\n');
                    continue;
                }
            }
            overrides.push('\n');
        }
        let base = FedConfig::parse_over(base, &overrides, origin)?;
        let axis = axis.ok_or_else(|| anyhow!("{}: plan needs an `axis`", origin.display()))?;
        let plan = ExperimentPlan {
            base,
            axis,
            values: if axis == SweepAxis::None {
                Vec::new()
            } else {
                values
            },
            repeats,
        };
        if plan.axis != SweepAxis::None && plan.values.is_empty() {
            bail!(
                "{}: axis `{}` needs `values`",
                origin.display(),
                axis.as_str()
            );
        }
        for v in &plan.values {
            plan.config_for(v, 0).with_context(|| {
                format!("{}: bad value for {}", origin.display(), axis.as_str())
            })?;
        }
        Ok(plan)
    }

    /// Cell labels in plan order; a single `-` for the `none` axis.
    pub fn cells(&self) -> Vec<String> {
        if self.axis == SweepAxis::None {
            vec!["-".to_string()]
        } else {
            self.values.clone()
        }
    }

    /// Config for one cell and repeat; repeat `r` uses seed `base + r`.
    pub fn config_for(&self, value: &str, repeat: usize) -> Result<FedConfig> {
        let mut cfg = self.base.clone();
        if let Some(key) = self.axis.key() {
            cfg.set(key, value)
                .map_err(|msg| anyhow!("{key} = {value}: {msg}"))?;
        }
        cfg.global_seed = cfg.global_seed.wrapping_add(repeat as u64);
        cfg.validate()?;
        Ok(cfg)
    }
}
