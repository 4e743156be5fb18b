use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AttackSpec, ExperimentConfig, Family, ModelChoice, SurrogateMode};
use super::diversity::{odi_diversity, transfer_diversity, DiversityReport};
use crate::blackbox::{
    boundary_attack, rgf_attack, simba_attack, DecisionOracle, Goal, Sampler, ScoreOracle,
    TracePoint,
};
use crate::error::{Error, Result};
use crate::metrics::TraceTable;
use crate::models::{self, accuracy, train, Dataset, MlpClassifier, Split};
use crate::numcore::Tensor;
use crate::ods::SurrogateEnsemble;
use crate::rng::{derive_seed, derived, tag};
use crate::whitebox::{run_cw_with_restarts, run_pgd_with_restarts};

/// Layout of an experiment's output directory.
#[derive(Clone, Debug)]
pub struct ResultTree {
    root: PathBuf,
}

impl ResultTree {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.models_dir().join(format!("{name}.json"))
    }

    pub fn training(&self) -> PathBuf {
        self.models_dir().join("training.csv")
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn trace(&self, attack: &str) -> PathBuf {
        self.traces_dir().join(format!("{attack}.csv"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn diversity(&self) -> PathBuf {
        self.root.join("diversity.csv")
    }

    pub fn summary_dir(&self) -> PathBuf {
        self.root.join("summary")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Trained target, optional robust twin and surrogate groups.
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub natural: MlpClassifier,
    pub robust: Option<MlpClassifier>,
    pub surrogates: BTreeMap<String, SurrogateEnsemble>,
}

impl TrainedModels {
    pub fn target(&self, choice: ModelChoice) -> Result<&MlpClassifier> {
        match choice {
            ModelChoice::Natural => Ok(&self.natural),
            ModelChoice::Robust => self
                .robust
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("no robust twin was trained".into())),
        }
    }

    pub fn ensemble(&self, group: &str) -> Result<&SurrogateEnsemble> {
        self.surrogates
            .get(group)
            .ok_or_else(|| Error::InvalidInput(format!("unknown surrogate group `{group}`")))
    }
}

/// Entry of the manifest written next to the traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub family: Family,
    pub model: ModelChoice,
    pub inputs: usize,
    #[serde(default)]
    pub report_budgets: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub attacks: Vec<ManifestEntry>,
}

impl ManifestEntry {
    /// Entry for `spec` after attacking `inputs` inputs. Boundary attacks
    /// without explicit report budgets report at their full budget.
    pub fn for_attack(spec: &AttackSpec, inputs: usize) -> Self {
        let report_budgets = match spec {
            AttackSpec::Boundary {
                report_budgets,
                budget,
                ..
            } if report_budgets.is_empty() => vec![*budget],
            AttackSpec::Boundary { report_budgets, .. } => report_budgets.clone(),
            _ => Vec::new(),
        };
        Self {
            name: spec.name().to_string(),
            family: spec.family(),
            model: spec.model(),
            inputs,
            report_budgets,
        }
    }
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::malformed(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))
    }
}

/// Generates the blob dataset described by the config.
pub fn build_split(config: &ExperimentConfig) -> Result<Split> {
    models::generate_blobs(&config.dataset.blob_spec(config.seed))
}

/// Writes the seeded dataset file and returns the split.
pub fn generate_dataset(config: &ExperimentConfig, path: &Path) -> Result<Split> {
    let spec = config.dataset.blob_spec(config.seed);
    let split = models::generate_blobs(&spec)?;
    models::save_split(&split, Some(&spec), path)?;
    Ok(split)
}

/// Rows with label below `classes` (the attacked classes).
pub fn in_distribution(data: &Dataset, classes: usize) -> Result<Dataset> {
    data.select(|l| l < classes, |l| l, classes)
}

/// Rows of the reserved classes, relabelled to start at 0. Fails if any kept
/// label belongs to the evaluation classes.
pub fn out_of_distribution(data: &Dataset, classes: usize, ood_classes: usize) -> Result<Dataset> {
    let ood = data.select(
        |l| l >= classes && l < classes + ood_classes,
        |l| l - classes,
        ood_classes,
    )?;
    let original: Vec<usize> = ood.labels.iter().map(|l| l + classes).collect();
    if original.iter().any(|&l| l < classes) {
        return Err(Error::Precondition(
            "OOD surrogate data overlaps the evaluation classes".into(),
        ));
    }
    Ok(ood)
}

/// Seeded per-class subsample keeping `fraction` of each class (at least one row).
pub fn per_class_subsample(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if fraction >= 1.0 {
        return Ok(data.clone());
    }
    let mut rng = crate::rng::seeded(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in data.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut keep = Vec::new();
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        let n = ((rows.len() as f64 * fraction).round() as usize).max(1);
        keep.extend_from_slice(&rows[..n]);
    }
    keep.sort_unstable();
    data.subset(&keep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub model: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

fn init_and_train(
    sizes: &[usize],
    data: &Dataset,
    spec: &super::config::TrainSpec,
    master: u64,
    name: &str,
) -> Result<(MlpClassifier, f64, f64)> {
    let mut model = MlpClassifier::new(sizes, derive_seed(master, &[tag("init"), tag(name)]))?;
    let cfg = spec.train_config(derive_seed(master, &[tag("train"), tag(name)]));
    let report = train(&mut model, data, &cfg)?;
    let loss = report.loss_history.last().copied().unwrap_or(f64::NAN);
    Ok((model, report.train_accuracy, loss))
}

/// Trains every model in the config on `split`. Returns the models and a
/// per-model accuracy table.
pub fn train_all(
    config: &ExperimentConfig,
    split: &Split,
) -> Result<(TrainedModels, Vec<TrainingRow>)> {
    let (d, k, ko) = (
        config.dataset.dim,
        config.dataset.classes,
        config.dataset.ood_classes,
    );
    let train_in = in_distribution(&split.train, k)?;
    let test_in = in_distribution(&split.test, k)?;
    let mut rows = Vec::new();
    let sizes = |hidden: &[usize], c: usize| {
        let mut s = vec![d];
        s.extend_from_slice(hidden);
        s.push(c);
        s
    };

    let (natural, acc, loss) = init_and_train(
        &sizes(&config.target.hidden, k),
        &train_in,
        &config.target.train,
        config.seed,
        "natural",
    )?;
    rows.push(TrainingRow {
        model: "natural".into(),
        train_accuracy: acc,
        test_accuracy: accuracy(&natural, &test_in)?,
        final_loss: loss,
    });
    let robust = match &config.target.robust {
        Some(spec) => {
            let (m, acc, loss) = init_and_train(
                &sizes(&config.target.hidden, k),
                &train_in,
                spec,
                config.seed,
                "robust",
            )?;
            rows.push(TrainingRow {
                model: "robust".into(),
                train_accuracy: acc,
                test_accuracy: accuracy(&m, &test_in)?,
                final_loss: loss,
            });
            Some(m)
        }
        None => None,
    };

    let mut surrogates = BTreeMap::new();
    for group in &config.surrogates {
        let (pool, test, classes) = match group.mode {
            SurrogateMode::Full => (train_in.clone(), test_in.clone(), k),
            SurrogateMode::Ood => (
                out_of_distribution(&split.train, k, ko)?,
                out_of_distribution(&split.test, k, ko)?,
                ko,
            ),
        };
        let mut members = Vec::with_capacity(group.count);
        for i in 0..group.count {
            let name = surrogate_name(&group.name, i);
            let seed = derive_seed(config.seed, &[tag("subsample"), tag(&name)]);
            let data = per_class_subsample(&pool, group.data_fraction, seed)?;
            let (m, acc, loss) = init_and_train(
                &sizes(&group.hidden, classes),
                &data,
                &group.train,
                config.seed,
                &name,
            )?;
            rows.push(TrainingRow {
                model: name,
                train_accuracy: acc,
                test_accuracy: accuracy(&m, &test)?,
                final_loss: loss,
            });
            members.push(m);
        }
        surrogates.insert(group.name.clone(), SurrogateEnsemble::from_models(members)?);
    }
    Ok((
        TrainedModels {
            natural,
            robust,
            surrogates,
        },
        rows,
    ))
}

fn surrogate_name(group: &str, i: usize) -> String {
    format!("surrogate-{group}-{i}")
}

pub fn save_models(
    config: &ExperimentConfig,
    models_: &TrainedModels,
    rows: &[TrainingRow],
    tree: &ResultTree,
) -> Result<()> {
    create_dir(&tree.models_dir())?;
    models::save(&models_.natural, &tree.model("natural"))?;
    if let Some(r) = &models_.robust {
        models::save(r, &tree.model("robust"))?;
    }
    for group in &config.surrogates {
        let ens = models_.ensemble(&group.name)?;
        for (i, m) in ens.models().iter().enumerate() {
            models::save(m, &tree.model(&surrogate_name(&group.name, i)))?;
        }
    }
    write_rows(
        &tree.training(),
        rows,
        &["model", "train_accuracy", "test_accuracy", "final_loss"],
    )
}

pub fn load_models(config: &ExperimentConfig, tree: &ResultTree) -> Result<TrainedModels> {
    let natural = models::load(&tree.model("natural"))?;
    let robust = match config.target.robust {
        Some(_) => Some(models::load(&tree.model("robust"))?),
        None => None,
    };
    let mut surrogates = BTreeMap::new();
    for group in &config.surrogates {
        let members = (0..group.count)
            .map(|i| models::load(&tree.model(&surrogate_name(&group.name, i))))
            .collect::<Result<Vec<_>>>()?;
        surrogates.insert(group.name.clone(), SurrogateEnsemble::from_models(members)?);
    }
    Ok(TrainedModels {
        natural,
        robust,
        surrogates,
    })
}

/// Writes serialisable rows as CSV; an empty slice produces the header only.
pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e))?;
    if rows.is_empty() {
        w.write_record(header)
            .map_err(|e| Error::malformed(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::malformed(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// First `limit` test inputs of the attacked classes that `model` classifies
/// correctly, as `(test index, input, label)`.
pub fn evaluation_inputs(
    model: &MlpClassifier,
    test: &Dataset,
    classes: usize,
    limit: usize,
) -> Result<Vec<(usize, Tensor, usize)>> {
    let mut out = Vec::new();
    for i in 0..test.len() {
        if out.len() == limit {
            break;
        }
        let y = test.labels[i];
        if y >= classes {
            continue;
        }
        let x = test.input(i);
        if model.predict(&x)? == y {
            out.push((i, x, y));
        }
    }
    Ok(out)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}

fn push_points(table: &mut TraceTable, id: usize, name: &str, points: &[TracePoint]) {
    for p in points {
        table.push(id, name, p.queries, p.distance, p.success);
    }
}

/// Target class for targeted runs: the next class after the label.
fn target_class(label: usize, classes: usize) -> usize {
    (label + 1) % classes
}

/// Attacks one input and returns its trace rows.
#[allow(clippy::too_many_arguments)]
fn attack_input(
    config: &ExperimentConfig,
    spec: &AttackSpec,
    models_: &TrainedModels,
    seed_pool: &Dataset,
    id: usize,
    x: &Tensor,
    y: usize,
) -> Result<TraceTable> {
    let name = spec.name();
    let model = models_.target(spec.model())?;
    let k = config.dataset.classes;
    let mut rng = derived(config.seed, &[tag("attack"), tag(name), id as u64]);
    let sampler_rng = derived(config.seed, &[tag("sampler"), tag(name), id as u64]);
    let mut table = TraceTable::new();
    let goal = |targeted: bool| {
        if targeted {
            Goal::targeted(y, target_class(y, k))
        } else {
            Goal::untargeted(y)
        }
    };
    let sampler = |kind, group: &Option<String>| {
        let ens = group.as_deref().map(|g| models_.ensemble(g)).transpose()?;
        Sampler::of_kind(kind, ens, sampler_rng.clone())
    };
    match spec {
        AttackSpec::Pgd { config: c, .. } => {
            let (_, trace) = run_pgd_with_restarts(model, x, y, c, &mut rng)?;
            for o in trace {
                table.push(id, name, o.restart, o.best_loss, o.success);
            }
        }
        AttackSpec::Cw { config: c, .. } => {
            let (_, trace) = run_cw_with_restarts(model, x, y, c, &mut rng)?;
            for o in trace {
                table.push(id, name, o.restart, o.perturbation_norm, o.success);
            }
        }
        AttackSpec::Simba {
            sampler: kind,
            surrogates,
            budget,
            targeted,
            config: c,
            ..
        } => {
            let mut oracle = ScoreOracle::new(model, *budget);
            let mut s = sampler(*kind, surrogates)?;
            let (_, points) = simba_attack(&mut oracle, x, goal(*targeted), &mut s, c)?;
            push_points(&mut table, id, name, &points);
        }
        AttackSpec::Rgf {
            sampler: kind,
            surrogates,
            budget,
            targeted,
            config: c,
            ..
        } => {
            let mut oracle = ScoreOracle::new(model, *budget);
            let mut s = sampler(*kind, surrogates)?;
            let (_, points) = rgf_attack(&mut oracle, x, goal(*targeted), &mut s, c)?;
            push_points(&mut table, id, name, &points);
        }
        AttackSpec::Boundary {
            sampler: kind,
            surrogates,
            budget,
            targeted,
            config: c,
            ..
        } => {
            let g = goal(*targeted);
            let start = match g.target {
                Some(t) => Some(seed_image(model, seed_pool, t, &mut rng)?),
                None => None,
            };
            let mut oracle = DecisionOracle::new(model, *budget);
            let mut s = sampler(*kind, surrogates)?;
            let (_, points) =
                boundary_attack(&mut oracle, x, g, start.as_ref(), &mut s, c, &mut rng)?;
            push_points(&mut table, id, name, &points);
        }
    }
    Ok(table)
}

/// Seeded pick of a training image of class `t` that the model assigns to `t`.
fn seed_image(
    model: &MlpClassifier,
    pool: &Dataset,
    t: usize,
    rng: &mut crate::rng::Rng,
) -> Result<Tensor> {
    let mut candidates: Vec<usize> = (0..pool.len()).filter(|&i| pool.labels[i] == t).collect();
    candidates.shuffle(rng);
    for i in candidates {
        let x = pool.input(i);
        if model.predict(&x)? == t {
            return Ok(x);
        }
    }
    Err(Error::Initialization { tries: 0 })
}

/// Runs one attack over its evaluation inputs, fanning out over `jobs`
/// workers. Rows are merged in input order.
pub fn run_attack(
    config: &ExperimentConfig,
    spec: &AttackSpec,
    models_: &TrainedModels,
    split: &Split,
) -> Result<(TraceTable, usize)> {
    let k = config.dataset.classes;
    let model = models_.target(spec.model())?;
    let inputs = evaluation_inputs(
        model,
        &split.test,
        k,
        spec.inputs().unwrap_or(config.eval_inputs),
    )?;
    let seed_pool = in_distribution(&split.train, k)?;
    let tables = pool(config.jobs)?.install(|| {
        inputs
            .par_iter()
            .map(|(id, x, y)| attack_input(config, spec, models_, &seed_pool, *id, x, *y))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = TraceTable::new();
    for t in tables {
        out.extend(t);
    }
    Ok((out, inputs.len()))
}

/// Stage `gen-data`.
pub fn stage_gen_data(config: &ExperimentConfig, tree: &ResultTree) -> Result<Split> {
    create_dir(tree.root())?;
    std::fs::write(tree.config(), config.to_toml()).map_err(|e| Error::io(tree.config(), e))?;
    generate_dataset(config, &tree.dataset())
}

/// Stage `train`: reads the dataset file, writes model files and the accuracy table.
pub fn stage_train(config: &ExperimentConfig, tree: &ResultTree) -> Result<TrainedModels> {
    let split = models::load_split(&tree.dataset())?;
    let (trained, rows) = train_all(config, &split)?;
    save_models(config, &trained, &rows, tree)?;
    Ok(trained)
}

/// Stage `attack`: runs the suite against the saved models, one trace file per
/// attack plus the manifest.
pub fn stage_attack(config: &ExperimentConfig, tree: &ResultTree) -> Result<Manifest> {
    let split = models::load_split(&tree.dataset())?;
    let trained = load_models(config, tree)?;
    create_dir(&tree.traces_dir())?;
    let mut manifest = Manifest::default();
    for spec in &config.attacks {
        let (table, n) = run_attack(config, spec, &trained, &split)
            .map_err(|e| e.in_stage(&format!("attack:{}", spec.name())))?;
        table.save(&tree.trace(spec.name()))?;
        manifest.attacks.push(ManifestEntry::for_attack(spec, n));
    }
    manifest.save(&tree.manifest())?;
    Ok(manifest)
}

/// Stage `diversity`: writes `diversity.csv` when the config asks for it.
pub fn stage_diversity(
    config: &ExperimentConfig,
    tree: &ResultTree,
) -> Result<Option<DiversityReport>> {
    if config.diversity.is_none() {
        return Ok(None);
    }
    let split = models::load_split(&tree.dataset())?;
    let trained = load_models(config, tree)?;
    let report = measure_diversity(config, &trained, &split)?;
    report.save(&tree.diversity())?;
    Ok(Some(report))
}

/// ODI-vs-uniform start diversity on the robust twin (the natural target if
/// there is none) and ODS-vs-Gaussian transfer diversity on the natural target.
pub fn measure_diversity(
    config: &ExperimentConfig,
    trained: &TrainedModels,
    split: &Split,
) -> Result<DiversityReport> {
    let spec = config
        .diversity
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("no diversity block in the config".into()))?;
    let k = config.dataset.classes;
    let start_model = trained.robust.as_ref().unwrap_or(&trained.natural);
    let inputs: Vec<(Tensor, usize)> = evaluation_inputs(start_model, &split.test, k, spec.inputs)?
        .into_iter()
        .map(|(_, x, y)| (x, y))
        .collect();
    let start = odi_diversity(
        start_model,
        &inputs,
        spec.norm,
        spec.epsilon,
        spec.restarts,
        derive_seed(config.seed, &[tag("diversity-start")]),
    )?;
    let inputs: Vec<Tensor> = evaluation_inputs(&trained.natural, &split.test, k, spec.inputs)?
        .into_iter()
        .map(|(_, x, _)| x)
        .collect();
    let transfer = transfer_diversity(
        &trained.natural,
        trained.ensemble(&spec.surrogates)?,
        &inputs,
        spec.transfer_scale,
        spec.restarts,
        derive_seed(config.seed, &[tag("diversity-transfer")]),
    )?;
    Ok(DiversityReport { start, transfer })
}

/// Everything a full run produced.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub tree: ResultTree,
    pub manifest: Manifest,
    pub diversity: Option<DiversityReport>,
    pub report: super::report::Report,
}

/// Full pipeline: dataset, models, attacks, diversity, report. A failing stage
/// aborts with its name attached; files from earlier stages stay on disk.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentResult> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let tree = ResultTree::new(out);
    stage_gen_data(config, &tree).map_err(|e| e.in_stage("gen-data"))?;
    stage_train(config, &tree).map_err(|e| e.in_stage("train"))?;
    let manifest = stage_attack(config, &tree).map_err(|e| e.in_stage("attack"))?;
    let diversity = stage_diversity(config, &tree).map_err(|e| e.in_stage("diversity"))?;
    let report = super::report::report(&tree).map_err(|e| e.in_stage("report"))?;
    Ok(ExperimentResult {
        tree,
        manifest,
        diversity,
        report,
    })
}
