//! One `--flag` per configuration key, e.g. `--dense-iterations 2` for
//! `dense_iterations`. Flags are applied after any config file.

use std::path::Path;
use std::sync::OnceLock;

use anyhow::Context;
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use gsloc_core::pipeline::PipelineConfig;

use crate::Failure;

/// Config keys in application order. `profile` comes first so an explicit
/// `--dense-iterations` wins over it.
fn keys() -> &'static [(&'static str, &'static str)] {
    static KEYS: OnceLock<Vec<(&'static str, &'static str)>> = OnceLock::new();
    KEYS.get_or_init(|| {
        let text = PipelineConfig::default().to_text();
        std::iter::once("profile".to_string())
            .chain(text.lines().filter_map(|l| l.split_once(" = ").map(|(k, _)| k.to_string())))
            .map(|k| {
                let flag: &'static str = k.replace('_', "-").leak();
                (&*k.leak(), flag)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFlags {
    pub pairs: Vec<(&'static str, String)>,
}

impl ConfigFlags {
    /// `base`, then the file at `path`, then the flags, validated.
    pub fn resolve(&self, base: PipelineConfig, path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
        let mut config = base;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .context(Failure::Config)?;
            config
                .apply_text(&text)
                .with_context(|| format!("in {}", p.display()))
                .context(Failure::Config)?;
        }
        for (k, v) in &self.pairs {
            config.set(k, v).context(Failure::Config)?;
        }
        config.validate().context(Failure::Config)?;
        Ok(config)
    }
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = Self::default();
        out.update_from_arg_matches(m)?;
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        for (key, _) in keys() {
            if let Some(v) = m.get_one::<String>(key) {
                self.pairs.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(mut cmd: Command) -> Command {
        for (key, flag) in keys() {
            cmd = cmd.arg(
                Arg::new(*key)
                    .long(*flag)
                    .value_name("VALUE")
                    .help_heading("Config overrides")
                    .help(format!("Overrides `{key}`")),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
