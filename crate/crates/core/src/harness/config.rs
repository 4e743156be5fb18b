use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blackbox::{BoundaryConfig, RgfConfig, SamplerKind, SimbaConfig};
use crate::error::{Error, Result};
use crate::models::{AdversarialConfig, BlobSpec, OptimizerKind, TrainConfig};
use crate::rng::{derive_seed, tag};
use crate::schedule::Schedule;
use crate::whitebox::{CwConfig, Norm, WhiteboxAttackConfig};

/// Full experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; stages without an explicit seed derive theirs from it.
    pub seed: u64,
    /// Correctly classified test inputs attacked per model.
    #[serde(default = "default_eval_inputs")]
    pub eval_inputs: usize,
    /// Worker threads for per-input fan-out.
    #[serde(default = "one")]
    pub jobs: usize,
    pub dataset: DatasetSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub surrogates: Vec<SurrogateSpec>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub diversity: Option<DiversitySpec>,
}

fn default_eval_inputs() -> usize {
    300
}

fn one() -> usize {
    1
}

fn full_fraction() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub dim: usize,
    /// Classes seen by the target and attacked.
    pub classes: usize,
    /// Extra classes reserved for out-of-distribution surrogates.
    #[serde(default)]
    pub ood_classes: usize,
    pub samples_per_class: usize,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    pub spread: f64,
    pub noise: f64,
    #[serde(default)]
    pub latent_noise: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DatasetSpec {
    pub fn blob_spec(&self, master: u64) -> BlobSpec {
        BlobSpec {
            dim: self.dim,
            classes: self.classes + self.ood_classes,
            samples_per_class: self.samples_per_class,
            latent_dim: self.latent_dim,
            spread: self.spread,
            noise: self.noise,
            latent_noise: self.latent_noise,
            seed: self
                .seed
                .unwrap_or_else(|| derive_seed(master, &[tag("dataset")])),
        }
    }
}

/// [`TrainConfig`] with an optional seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub adversarial: Option<AdversarialConfig>,
}

impl TrainSpec {
    pub fn train_config(&self, derived_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            schedule: self.schedule.clone(),
            weight_decay: self.weight_decay,
            seed: self.seed.unwrap_or(derived_seed),
            adversarial: self.adversarial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub hidden: Vec<usize>,
    pub train: TrainSpec,
    /// Adversarially trained twin; `adversarial` must be set.
    #[serde(default)]
    pub robust: Option<TrainSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    /// Trained on the target's classes.
    Full,
    /// Trained only on the reserved out-of-distribution classes.
    Ood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    pub name: String,
    pub mode: SurrogateMode,
    pub count: usize,
    pub hidden: Vec<usize>,
    /// Per-class fraction of the training split the attacker gets to use.
    #[serde(default = "full_fraction")]
    pub data_fraction: f64,
    pub train: TrainSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    #[default]
    Natural,
    Robust,
}

impl ModelChoice {
    pub fn label(self) -> &'static str {
        match self {
            ModelChoice::Natural => "natural",
            ModelChoice::Robust => "robust",
        }
    }
}

/// One named attack run against every evaluation input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    Pgd {
        name: String,
        #[serde(default)]
        model: ModelChoice,
        /// Overrides `eval_inputs` for this attack.
        #[serde(default)]
        inputs: Option<usize>,
        config: WhiteboxAttackConfig,
    },
    Cw {
        name: String,
        #[serde(default)]
        model: ModelChoice,
        /// Overrides `eval_inputs` for this attack.
        #[serde(default)]
        inputs: Option<usize>,
        config: CwConfig,
    },
    Simba {
        name: String,
        #[serde(default)]
        model: ModelChoice,
        /// Overrides `eval_inputs` for this attack.
        #[serde(default)]
        inputs: Option<usize>,
        sampler: SamplerKind,
        #[serde(default)]
        surrogates: Option<String>,
        budget: usize,
        #[serde(default)]
        targeted: bool,
        config: SimbaConfig,
    },
    Rgf {
        name: String,
        #[serde(default)]
        model: ModelChoice,
        /// Overrides `eval_inputs` for this attack.
        #[serde(default)]
        inputs: Option<usize>,
        sampler: SamplerKind,
        #[serde(default)]
        surrogates: Option<String>,
        budget: usize,
        #[serde(default)]
        targeted: bool,
        config: RgfConfig,
    },
    Boundary {
        name: String,
        #[serde(default)]
        model: ModelChoice,
        /// Overrides `eval_inputs` for this attack.
        #[serde(default)]
        inputs: Option<usize>,
        sampler: SamplerKind,
        #[serde(default)]
        surrogates: Option<String>,
        budget: usize,
        /// Query counts at which the median perturbation is reported.
        #[serde(default)]
        report_budgets: Vec<usize>,
        #[serde(default)]
        targeted: bool,
        #[serde(default)]
        config: BoundaryConfig,
    },
}

/// Attack families, one summary table each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pgd,
    Cw,
    Simba,
    Rgf,
    Boundary,
}

impl AttackSpec {
    pub fn name(&self) -> &str {
        match self {
            AttackSpec::Pgd { name, .. }
            | AttackSpec::Cw { name, .. }
            | AttackSpec::Simba { name, .. }
            | AttackSpec::Rgf { name, .. }
            | AttackSpec::Boundary { name, .. } => name,
        }
    }

    pub fn model(&self) -> ModelChoice {
        match self {
            AttackSpec::Pgd { model, .. }
            | AttackSpec::Cw { model, .. }
            | AttackSpec::Simba { model, .. }
            | AttackSpec::Rgf { model, .. }
            | AttackSpec::Boundary { model, .. } => *model,
        }
    }

    pub fn inputs(&self) -> Option<usize> {
        match self {
            AttackSpec::Pgd { inputs, .. }
            | AttackSpec::Cw { inputs, .. }
            | AttackSpec::Simba { inputs, .. }
            | AttackSpec::Rgf { inputs, .. }
            | AttackSpec::Boundary { inputs, .. } => *inputs,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            AttackSpec::Pgd { .. } => Family::Pgd,
            AttackSpec::Cw { .. } => Family::Cw,
            AttackSpec::Simba { .. } => Family::Simba,
            AttackSpec::Rgf { .. } => Family::Rgf,
            AttackSpec::Boundary { .. } => Family::Boundary,
        }
    }

    fn sampler(&self) -> Option<(SamplerKind, Option<&str>)> {
        match self {
            AttackSpec::Simba {
                sampler,
                surrogates,
                ..
            }
            | AttackSpec::Rgf {
                sampler,
                surrogates,
                ..
            }
            | AttackSpec::Boundary {
                sampler,
                surrogates,
                ..
            } => Some((*sampler, surrogates.as_deref())),
            _ => None,
        }
    }
}

/// Start-point and transfer diversity measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversitySpec {
    pub inputs: usize,
    pub restarts: usize,
    pub norm: Norm,
    pub epsilon: f64,
    /// Surrogate group used for the transfer measurement.
    pub surrogates: String,
    /// Input-space length of the transferred perturbations.
    pub transfer_scale: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::malformed(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        self.dataset.blob_spec(self.seed).validate()?;
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.target.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if let Some(r) = &self.target.robust {
            if r.adversarial.is_none() {
                return bad("the robust twin needs an `adversarial` training block".into());
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.surrogates {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate surrogate group `{}`", s.name));
            }
            if s.count == 0 || !(s.data_fraction > 0.0 && s.data_fraction <= 1.0) {
                return bad(format!(
                    "surrogate group `{}` needs count ≥ 1 and a data fraction in (0, 1]",
                    s.name
                ));
            }
            if s.mode == SurrogateMode::Ood && self.dataset.ood_classes < 2 {
                return bad(format!(
                    "OOD surrogate group `{}` needs dataset.ood_classes ≥ 2",
                    s.name
                ));
            }
        }
        let mut attack_names = std::collections::BTreeSet::new();
        for a in &self.attacks {
            if !attack_names.insert(a.name()) {
                return bad(format!("duplicate attack `{}`", a.name()));
            }
            if a.name().is_empty()
                || !a
                    .name()
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return bad(format!(
                    "attack name `{}` must be non-empty ASCII letters, digits, '-' or '_'",
                    a.name()
                ));
            }
            if a.model() == ModelChoice::Robust && self.target.robust.is_none() {
                return bad(format!(
                    "attack `{}` targets the robust twin, which is not configured",
                    a.name()
                ));
            }
            if let Some((kind, group)) = a.sampler() {
                let needs = matches!(kind, SamplerKind::Ods | SamplerKind::MultiTargeted);
                match (needs, group) {
                    (true, None) => {
                        return bad(format!("attack `{}` needs a surrogate group", a.name()))
                    }
                    (_, Some(g)) if !names.contains(g) => {
                        return bad(format!(
                            "attack `{}` names unknown surrogates `{g}`",
                            a.name()
                        ))
                    }
                    _ => {}
                }
            }
            match a {
                AttackSpec::Pgd { config, .. } => config.validate()?,
                AttackSpec::Cw { config, .. } => config.validate()?,
                _ => {}
            }
        }
        if let Some(d) = &self.diversity {
            if !names.contains(d.surrogates.as_str()) {
                return bad(format!(
                    "diversity names unknown surrogates `{}`",
                    d.surrogates
                ));
            }
            if d.restarts < 2 || d.inputs == 0 || !(d.epsilon > 0.0) || !(d.transfer_scale > 0.0) {
                return bad("diversity needs ≥ 2 restarts, ≥ 1 input and positive radii".into());
            }
        }
        Ok(())
    }
}
