//! The resolved experiment configuration: JSON file first, then flags.

use std::path::{Path, PathBuf};

use leal_core::analysis::Normalization;
use leal_core::training::LealConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub leal: LealConfig,
    /// One run per seed. A seed drives initialization, sampling and, for
    /// generated or split-on-load data, the bundle itself.
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub theory: TheoryConfig,
    pub sweep: SweepConfig,
    pub timing: TimingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            leal: LealConfig::default(),
            seeds: vec![0],
            output: None,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            theory: TheoryConfig::default(),
            sweep: SweepConfig::default(),
            timing: TimingConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// 26 classes over 16 noisy integer features.
    Letter,
    /// Gaussian features with a noisy linear target.
    Linear,
    /// Two Gaussian classes split by a margin.
    Separable,
}

/// Where the two tables come from. Exactly one of `bundle`, `input` and
/// `generator` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory written by `leal synth`.
    pub bundle: Option<PathBuf>,
    /// A single CSV table, split by features on load.
    pub input: Option<PathBuf>,
    pub label: String,
    /// Inferred from the label column when absent.
    pub task: Option<TaskKind>,
    pub generator: Option<Generator>,
    pub rows: usize,
    pub features: usize,
    pub noise: f64,
    pub margin: f64,
    pub shuffle_secondary: bool,
    /// Fixes the bundle across seeds instead of drawing one per seed.
    pub split_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            bundle: None,
            input: None,
            label: "label".into(),
            task: None,
            generator: None,
            rows: 2000,
            features: 10,
            noise: 4.0,
            margin: 1.0,
            shuffle_secondary: true,
            split_seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Leal,
    Solo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub models: Vec<ModelKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            models: vec![ModelKind::Leal, ModelKind::Solo],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPart {
    Train,
    Val,
    #[default]
    Test,
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub split: SplitPart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub k: Vec<usize>,
    /// Also train the primary-only MLP on each seed's bundle.
    pub solo_baseline: bool,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            k: vec![1, 5, 10, 20],
            solo_baseline: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryCheck {
    /// Aligned against misaligned least squares on random linear instances.
    Alignment,
    /// The two-feature boundary task under true and random pairing.
    Motivation,
    /// Fitting the sampler score to a separable target on a grid.
    Approximation,
    /// Finite differences through the whole training loss.
    Gradients,
    /// Row sums of every probability the sampler and model produce.
    Invariants,
    /// Single-draw selection frequencies against their probabilities.
    Marginals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub checks: Vec<TheoryCheck>,
    pub n: usize,
    pub primary_features: usize,
    pub secondary_features: usize,
    /// Noise levels, assigned to instances in turn.
    pub sigmas: Vec<f64>,
    pub permutations: usize,
    pub normalization: Normalization,
    pub motivation_rows: usize,
    pub approximation_steps: usize,
    pub gradient_k: usize,
    pub gradient_eps: f64,
    pub invariant_cases: usize,
    pub marginal_vectors: usize,
    pub marginal_length: usize,
    pub marginal_draws: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            checks: vec![TheoryCheck::Alignment],
            n: 200,
            primary_features: 3,
            secondary_features: 3,
            sigmas: vec![0.0, 0.1],
            permutations: 200,
            normalization: Normalization::Centered,
            motivation_rows: 5000,
            approximation_steps: 5000,
            gradient_k: 2,
            gradient_eps: 1e-5,
            invariant_cases: 1000,
            marginal_vectors: 10,
            marginal_length: 10,
            marginal_draws: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub k: Vec<usize>,
    pub clusters: Vec<usize>,
    pub depth: Vec<usize>,
    pub resume: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k: vec![1, 5, 10, 20, 100],
            clusters: vec![1, 5, 10, 20, 100],
            depth: vec![1, 3, 6],
            resume: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub k: Vec<usize>,
    pub epochs: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            k: vec![5, 10, 20],
            epochs: 3,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config document, reporting the dotted path of the first bad field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            msg: e.into_inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: "--config".into(),
            msg: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked before any file is written.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |path: &str, msg: &str| {
            Err(CliError::Config {
                path: path.into(),
                msg: msg.into(),
            })
        };
        self.leal.validate().map_err(|e| match e {
            leal_core::LealError::InvalidField { field, msg } => CliError::Config {
                path: format!("leal.{field}"),
                msg,
            },
            other => CliError::Config {
                path: "leal".into(),
                msg: other.to_string(),
            },
        })?;
        if self.seeds.is_empty() {
            return bad("seeds", "needs at least one seed");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "seeds must be distinct");
        }
        if !(self.data.noise >= 0.0) || !self.data.noise.is_finite() {
            return bad("data.noise", "must be finite and non-negative");
        }
        if !self.data.margin.is_finite() {
            return bad("data.margin", "must be finite");
        }
        if self.data.rows < 10 {
            return bad("data.rows", "needs at least 10 rows");
        }
        if self.data.features < 2 {
            return bad("data.features", "needs at least 2 features");
        }
        if self.ablate.k.is_empty() || self.ablate.k.contains(&0) {
            return bad("ablate.k", "needs at least one positive K");
        }
        let t = &self.theory;
        if t.checks.is_empty() {
            return bad("theory.checks", "needs at least one check");
        }
        if t.sigmas.is_empty() || t.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("theory.sigmas", "needs at least one finite, non-negative noise level");
        }
        if t.n <= t.primary_features + t.secondary_features {
            return bad("theory.n", "must exceed the total feature count");
        }
        if t.permutations == 0 {
            return bad("theory.permutations", "must be at least 1");
        }
        if t.motivation_rows < 100 {
            return bad("theory.motivation_rows", "needs at least 100 rows");
        }
        if t.gradient_k == 0 {
            return bad("theory.gradient_k", "must be at least 1");
        }
        if !(t.gradient_eps > 0.0) {
            return bad("theory.gradient_eps", "must be positive");
        }
        if t.marginal_vectors == 0 || t.marginal_length == 0 || t.marginal_draws == 0 {
            return bad("theory.marginal_draws", "marginal vectors, length and draws must be positive");
        }
        let s = &self.sweep;
        for (name, grid) in [("sweep.k", &s.k), ("sweep.clusters", &s.clusters), ("sweep.depth", &s.depth)] {
            if grid.is_empty() || grid.contains(&0) {
                return bad(name, "needs at least one positive value");
            }
        }
        if self.timing.k.len() < 3 || self.timing.k.contains(&0) {
            return bad("timing.k", "needs at least three positive values");
        }
        if self.timing.epochs < 3 {
            return bad("timing.epochs", "needs at least 3 epochs (the first is discarded)");
        }
        if self.train.models.is_empty() {
            return bad("train.models", "needs at least one model");
        }
        Ok(())
    }

    /// Checks that exactly one data source is configured.
    pub fn require_data(&self) -> Result<(), CliError> {
        let d = &self.data;
        let count = d.bundle.is_some() as usize + d.input.is_some() as usize + d.generator.is_some() as usize;
        if count != 1 {
            return Err(CliError::Config {
                path: "data".into(),
                msg: "set exactly one of `bundle`, `input` and `generator`".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = ExperimentConfig::from_json(r#"{"leal": {"k": 7}, "seeds": [3, 4]}"#).unwrap();
        assert_eq!(c.leal.k, 7);
        assert_eq!(c.leal.clusters, LealConfig::default().clusters);
        assert_eq!(c.seeds, vec![3, 4]);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        match ExperimentConfig::from_json(r#"{"leal": {"kk": 7}}"#) {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "leal.kk"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"bogus": 1}"#) {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_types_name_their_path() {
        match ExperimentConfig::from_json(r#"{"theory": {"sigmas": [0.1, "x"]}}"#) {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "theory.sigmas[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_their_path() {
        let mut c = ExperimentConfig::default();
        c.leal.heads = 3;
        match c.validate() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "leal.latent"),
            other => panic!("{other:?}"),
        }
        let c = ExperimentConfig {
            seeds: vec![1, 1],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config { path, .. }) if path == "seeds"));
    }

    #[test]
    fn data_source_must_be_unique() {
        let mut c = ExperimentConfig::default();
        assert!(c.require_data().is_err());
        c.data.generator = Some(Generator::Letter);
        assert!(c.require_data().is_ok());
        c.data.input = Some("x.csv".into());
        assert!(c.require_data().is_err());
    }
}
