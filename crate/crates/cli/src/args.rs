//! Command-line flags. Every flag overrides the matching config field.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use leal_core::analysis::Normalization;

use crate::config::{ExperimentConfig, Generator, ModelKind, SplitPart, TaskKind, TheoryCheck};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "leal", version, about = "Learning across tables that share no features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split one table by features into a primary/secondary bundle.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train Leal and the primary-only baseline, one run per seed.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        leal: LealArgs,
        /// Models to train, comma separated.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<ModelKind>>,
    },
    /// Score a saved checkpoint on a bundle.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitPart>,
    },
    /// Train the alignment model on candidate sets that contain the true partner.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        leal: LealArgs,
        /// Candidate counts, comma separated.
        #[arg(long = "k-list", value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        /// Skip the primary-only baseline.
        #[arg(long)]
        no_solo: bool,
    },
    /// Numerical checks of the method's provable properties.
    Theory {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, value_delimiter = ',')]
        checks: Option<Vec<TheoryCheck>>,
        /// Rows per linear instance.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        primary_features: Option<usize>,
        #[arg(long)]
        secondary_features: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long)]
        permutations: Option<usize>,
        #[arg(long, value_parser = parse_normalization)]
        normalization: Option<Normalization>,
        #[arg(long)]
        motivation_rows: Option<usize>,
        #[arg(long)]
        approximation_steps: Option<usize>,
        /// Candidates per record in the gradient check.
        #[arg(long)]
        gradient_k: Option<usize>,
        #[arg(long)]
        gradient_eps: Option<f64>,
        #[arg(long)]
        invariant_cases: Option<usize>,
        #[arg(long)]
        marginal_vectors: Option<usize>,
        #[arg(long)]
        marginal_length: Option<usize>,
        #[arg(long)]
        marginal_draws: Option<usize>,
    },
    /// Train over a grid of K, C and depth for every seed.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        leal: LealArgs,
        #[arg(long = "grid-k", value_delimiter = ',')]
        grid_k: Option<Vec<usize>>,
        #[arg(long = "grid-clusters", value_delimiter = ',')]
        grid_clusters: Option<Vec<usize>>,
        #[arg(long = "grid-depth", value_delimiter = ',')]
        grid_depth: Option<Vec<usize>>,
        /// Keep runs that already finished in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Mean epoch time of Leal as K grows.
    Timing {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        leal: LealArgs,
        #[arg(long = "k-list", value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config; flags win over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// A single seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// `N` for seeds 0..N, or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("bad seed {v:?}: {e}"));
    if s.contains(',') {
        s.split(',').map(parse).collect::<Result<_, _>>().map(SeedList)
    } else {
        Ok(SeedList((0..parse(s)?).collect()))
    }
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| "expected one of centered, standardized, unit-norm".to_string())
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Bundle directory written by `synth`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// CSV table to split by features.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    #[arg(long, value_enum)]
    pub generator: Option<Generator>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub margin: Option<f64>,
    /// Keep secondary rows in primary order.
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LealArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub ae_depth: Option<usize>,
    #[arg(long)]
    pub ae_epochs: Option<usize>,
    #[arg(long)]
    pub combiner_hidden: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub solo_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub no_straight_through: bool,
    #[arg(long)]
    pub tie_secondary_encoder: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CommonArgs {
    /// Loads the config file, if any, and applies the shared flags.
    pub fn base(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            c.output = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            c.seeds = vec![seed];
        }
        set(&mut c.seeds, self.seeds.clone().map(|s| s.0));
        Ok(c)
    }
}

impl DataArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        let d = &mut c.data;
        if self.bundle.is_some() || self.input.is_some() || self.generator.is_some() {
            d.bundle = self.bundle.clone();
            d.input = self.input.clone();
            d.generator = self.generator;
        }
        set(&mut d.label, self.label.clone());
        if self.task.is_some() {
            d.task = self.task;
        }
        set(&mut d.rows, self.rows);
        set(&mut d.features, self.features);
        set(&mut d.noise, self.noise);
        set(&mut d.margin, self.margin);
        if self.no_shuffle {
            d.shuffle_secondary = false;
        }
        if self.split_seed.is_some() {
            d.split_seed = self.split_seed;
        }
    }
}

impl LealArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        let l = &mut c.leal;
        set(&mut l.k, self.k);
        set(&mut l.clusters, self.clusters);
        set(&mut l.latent, self.latent);
        set(&mut l.depth, self.depth);
        set(&mut l.heads, self.heads);
        set(&mut l.gamma, self.gamma);
        set(&mut l.lr, self.lr);
        set(&mut l.weight_decay, self.weight_decay);
        set(&mut l.batch_size, self.batch_size);
        set(&mut l.max_epochs, self.max_epochs);
        set(&mut l.patience, self.patience);
        set(&mut l.ae_depth, self.ae_depth);
        set(&mut l.ae_epochs, self.ae_epochs);
        set(&mut l.combiner_hidden, self.combiner_hidden);
        set(&mut l.solo_hidden, self.solo_hidden.clone());
        if self.no_straight_through {
            l.straight_through = false;
        }
        if self.tie_secondary_encoder {
            l.tie_secondary_encoder = true;
        }
    }
}

/// The command name and its fully resolved configuration.
pub fn resolve(cli: Cli) -> Result<(&'static str, ExperimentConfig), CliError> {
    let (name, c) = match cli.command {
        Command::Synth { common, data } => {
            let mut c = common.base()?;
            data.apply(&mut c);
            ("synth", c)
        }
        Command::Train { common, data, leal, models } => {
            let mut c = common.base()?;
            data.apply(&mut c);
            leal.apply(&mut c);
            set(&mut c.train.models, models);
            ("train", c)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            split,
        } => {
            let mut c = common.base()?;
            data.apply(&mut c);
            if checkpoint.is_some() {
                c.eval.checkpoint = checkpoint;
            }
            set(&mut c.eval.split, split);
            ("eval", c)
        }
        Command::Ablate {
            common,
            data,
            leal,
            k_list,
            no_solo,
        } => {
            let mut c = common.base()?;
            data.apply(&mut c);
            leal.apply(&mut c);
            set(&mut c.ablate.k, k_list);
            if no_solo {
                c.ablate.solo_baseline = false;
            }
            ("ablate", c)
        }
        Command::Theory {
            common,
            checks,
            n,
            primary_features,
            secondary_features,
            sigmas,
            permutations,
            normalization,
            motivation_rows,
            approximation_steps,
            gradient_k,
            gradient_eps,
            invariant_cases,
            marginal_vectors,
            marginal_length,
            marginal_draws,
        } => {
            let mut c = common.base()?;
            let t = &mut c.theory;
            set(&mut t.checks, checks);
            set(&mut t.n, n);
            set(&mut t.primary_features, primary_features);
            set(&mut t.secondary_features, secondary_features);
            set(&mut t.sigmas, sigmas);
            set(&mut t.permutations, permutations);
            set(&mut t.normalization, normalization);
            set(&mut t.motivation_rows, motivation_rows);
            set(&mut t.approximation_steps, approximation_steps);
            set(&mut t.gradient_k, gradient_k);
            set(&mut t.gradient_eps, gradient_eps);
            set(&mut t.invariant_cases, invariant_cases);
            set(&mut t.marginal_vectors, marginal_vectors);
            set(&mut t.marginal_length, marginal_length);
            set(&mut t.marginal_draws, marginal_draws);
            ("theory", c)
        }
        Command::Sweep {
            common,
            data,
            leal,
            grid_k,
            grid_clusters,
            grid_depth,
            resume,
        } => {
            let mut c = common.base()?;
            data.apply(&mut c);
            leal.apply(&mut c);
            set(&mut c.sweep.k, grid_k);
            set(&mut c.sweep.clusters, grid_clusters);
            set(&mut c.sweep.depth, grid_depth);
            if resume {
                c.sweep.resume = true;
            }
            ("sweep", c)
        }
        Command::Timing {
            common,
            data,
            leal,
            k_list,
            epochs,
        } => {
            let mut c = common.base()?;
            data.apply(&mut c);
            leal.apply(&mut c);
            set(&mut c.timing.k, k_list);
            set(&mut c.timing.epochs, epochs);
            ("timing", c)
        }
    };
    c.validate()?;
    Ok((name, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), SeedList(vec![0, 1, 2]));
        assert_eq!(parse_seeds("4,9").unwrap(), SeedList(vec![4, 9]));
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"leal": {"k": 7, "clusters": 3}, "seeds": [5]}"#).unwrap();
        let cli = Cli::try_parse_from([
            "leal",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--k",
            "2",
            "--generator",
            "letter",
        ])
        .unwrap();
        let (name, c) = resolve(cli).unwrap();
        assert_eq!(name, "train");
        assert_eq!(c.leal.k, 2);
        assert_eq!(c.leal.clusters, 3);
        assert_eq!(c.seeds, vec![5]);
        assert_eq!(c.data.generator, Some(Generator::Letter));
    }

    #[test]
    fn normalization_flag() {
        assert_eq!(parse_normalization("unit-norm").unwrap(), Normalization::UnitNorm);
        assert!(parse_normalization("l2").is_err());
    }
}
