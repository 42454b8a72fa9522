//! Experiment configuration and the staged end-to-end pipeline:
//! generate data → train → build cages → attack → defend → report.
//!
//! Each stage is an ordinary function over [`ExperimentConfig`] so tests
//! can drive the pipeline in-process; the `cagekit` binary is a thin
//! argument-parsing shell around them. Stages communicate exclusively
//! through files under the output directory, keyed by each sample's
//! content hash, so partial reruns and cross-stage joins never depend on
//! in-memory state or directory iteration order.
//!
//! Determinism is a hard requirement: given an identical config (seeds
//! included), every stage rewrites byte-identical artifacts — models,
//! clouds, cages, and CSV aggregates alike. The run manifest records the
//! config snapshot, a per-sample file index, timings, and any warnings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{cage_attack, ifgm_attack, AttackConfig, AttackError, AttackResult, LossKind};
use crate::cage::{build_cage, CageConfig, CageError};
use crate::defense::{
    evaluate_under_defense, write_defense_csv, Defense, DefenseConfig, DefenseError,
    DefenseSweepRow,
};
use crate::geometry::{GeometryError, PointCloud};
use crate::io::{read_obj, read_ply, write_obj, write_ply, write_xyz, IoError};
use crate::metrics::{asr, compute_report, write_metrics_csv, MetricError, MetricParams};
use crate::mvc::{MvcCoords, MvcError};
use crate::net::{
    split_indices, synth_dataset, train, NetError, PointClassifier, TrainConfig, CLASS_NAMES,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Unusable input: missing files, unreadable configs, bad references.
    #[error("input error: {0}")]
    Input(String),
    /// A mesh failed validation somewhere in the cage pipeline.
    #[error("geometry validation failed: {0}")]
    Validation(String),
    /// A stage that needs upstream results found none.
    #[error("no results to work with: {0}")]
    EmptyResults(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    File(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Mvc(#[from] MvcError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
}

impl HarnessError {
    /// Process exit code contract: 0 success, 2 input error, 3 geometry
    /// validation failure, 4 empty results.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 3,
            HarnessError::EmptyResults(_) => 4,
            _ => 2,
        }
    }
}

impl From<CageError> for HarnessError {
    fn from(e: CageError) -> Self {
        match e {
            CageError::InvalidCage { details } => HarnessError::Validation(details),
            other => HarnessError::Input(other.to_string()),
        }
    }
}

/// Where the experiment's clouds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// The built-in eight-class analytic shape generator.
    Synthetic {
        per_class: usize,
        points: usize,
        seed: u64,
    },
    /// A JSON manifest listing labelled cloud files (`.xyz` or `.ply`),
    /// paths resolved relative to the manifest's directory.
    External { manifest: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            per_class: 200,
            points: 1024,
            seed: 1234,
        }
    }
}

/// One entry of an external dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalSample {
    pub path: PathBuf,
    pub label: usize,
}

/// Per-attack configurations for the experiment's two engines.
///
/// The two attacks run at their own conventional operating points, not a
/// shared one. The cage attack is margin-driven with a small confidence
/// slack and stops at its first confident flip, keeping the deformation
/// as small as the margin allows while staying robust to point-dropping
/// defenses. The point-wise baseline is the classic fixed-budget
/// iterative gradient method: cross-entropy descent for the full
/// iteration budget — its `kappa` is set beyond reach so the early-stop
/// check never fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfigs {
    pub cage: AttackConfig,
    pub ifgm: AttackConfig,
}

impl Default for AttackConfigs {
    fn default() -> Self {
        Self {
            cage: AttackConfig {
                iterations: 600,
                step: 2e-3,
                loss: LossKind::Margin,
                kappa: 3.0,
                ..AttackConfig::default()
            },
            ifgm: AttackConfig {
                iterations: 1000,
                step: 0.01,
                loss: LossKind::Nce,
                kappa: 1e9,
                ..AttackConfig::default()
            },
        }
    }
}

/// The single JSON document configuring a whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Pre-trained model to attack; when absent, stages look for the
    /// model that `train` wrote into the output directory.
    pub model_path: Option<PathBuf>,
    pub train: TrainConfig,
    pub cage: CageConfig,
    pub attack: AttackConfigs,
    pub defense: DefenseConfig,
    pub metrics: MetricParams,
    pub out_dir: PathBuf,
    /// Global seed: drives the train/test split and is recorded into
    /// every output via the manifest's config snapshot.
    pub seed: u64,
    /// Number of test clouds the attack stages cover (lowest content
    /// hashes first, so a smaller run is a prefix of a larger one).
    pub samples: usize,
}

impl ExperimentConfig {
    /// Defaults match the experiment the acceptance checks run.
    pub fn desk_default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 7,
            samples: 100,
            ..Self::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Input(format!("config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Input(format!("config {}: {e}", path.display())))?;
        Ok(config)
    }
}

/// Cage-pipeline ablation variants: which construction stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    /// Subdivision and vertex optimisation both on.
    Full,
    NoSubdiv,
    NoOpt,
    /// Bare initial sphere cage.
    Neither,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::NoSubdiv,
        AblationVariant::NoOpt,
        AblationVariant::Neither,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoSubdiv => "no-subdiv",
            AblationVariant::NoOpt => "no-opt",
            AblationVariant::Neither => "neither",
        }
    }

    pub fn subdivide(&self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoOpt)
    }

    pub fn optimize(&self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoSubdiv)
    }

    /// The cage config with this variant's stage toggles applied.
    pub fn apply(&self, base: &CageConfig) -> CageConfig {
        CageConfig {
            subdivide: self.subdivide(),
            optimize: self.optimize(),
            ..base.clone()
        }
    }
}

/// Which attacks a harness stage runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackSelect {
    Cage,
    Ifgm,
    Both,
}

impl AttackSelect {
    fn runs_cage(&self) -> bool {
        matches!(self, AttackSelect::Cage | AttackSelect::Both)
    }
    fn runs_ifgm(&self) -> bool {
        matches!(self, AttackSelect::Ifgm | AttackSelect::Both)
    }
}

/// Receipt of one experiment run, updated in place by every stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Toolkit version the artifacts were produced with.
    pub version: String,
    /// Snapshot of the config as of the most recent stage.
    pub config: ExperimentConfig,
    /// Wall-clock duration of each completed stage, keyed by stage name.
    pub timings_secs: BTreeMap<String, f64>,
    /// Per-sample index of produced files (paths relative to `out_dir`).
    pub sample_files: BTreeMap<String, Vec<String>>,
    /// Aggregate tables written by the report stage.
    pub aggregate_tables: Vec<String>,
    /// Non-fatal anomalies (skipped samples and the like).
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn fresh(config: &ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            timings_secs: BTreeMap::new(),
            sample_files: BTreeMap::new(),
            aggregate_tables: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Loads the output directory's manifest, or starts a fresh one.
    pub fn load_or_new(config: &ExperimentConfig) -> Self {
        let path = manifest_path(config);
        match fs::read_to_string(&path) {
            Ok(text) => match serde_json::from_str::<RunManifest>(&text) {
                Ok(mut m) => {
                    m.config = config.clone();
                    m
                }
                Err(_) => Self::fresh(config),
            },
            Err(_) => Self::fresh(config),
        }
    }

    pub fn save(&self, config: &ExperimentConfig) -> Result<(), HarnessError> {
        fs::create_dir_all(&config.out_dir)?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(manifest_path(config), text)?;
        Ok(())
    }

    fn record_file(&mut self, sample_id: &str, relative: String) {
        let files = self.sample_files.entry(sample_id.to_string()).or_default();
        if !files.contains(&relative) {
            files.push(relative);
        }
    }
}

pub fn manifest_path(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("manifest.json")
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

/// Materialises the configured dataset in memory: synthetic clouds are
/// generated, external clouds are read and normalised. Every cloud
/// carries a label.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Vec<PointCloud>, HarnessError> {
    match &config.dataset {
        DatasetSpec::Synthetic {
            per_class,
            points,
            seed,
        } => Ok(synth_dataset(*per_class, *points, *seed)),
        DatasetSpec::External { manifest } => {
            let text = fs::read_to_string(manifest).map_err(|e| {
                HarnessError::Input(format!("dataset manifest {}: {e}", manifest.display()))
            })?;
            let entries: Vec<ExternalSample> = serde_json::from_str(&text).map_err(|e| {
                HarnessError::Input(format!("dataset manifest {}: {e}", manifest.display()))
            })?;
            if entries.is_empty() {
                return Err(HarnessError::Input(format!(
                    "dataset manifest {} lists no samples",
                    manifest.display()
                )));
            }
            let base = manifest.parent().unwrap_or(Path::new("."));
            let mut out = Vec::with_capacity(entries.len());
            for entry in entries {
                let path = base.join(&entry.path);
                let mut cloud = match path.extension().and_then(|e| e.to_str()) {
                    Some("ply") => read_ply(&path)?,
                    _ => crate::io::read_xyz(&path)?,
                };
                cloud.normalize()?;
                cloud.label = Some(entry.label);
                out.push(cloud);
            }
            Ok(out)
        }
    }
}

/// The deterministic train/test split of the configured dataset.
pub fn dataset_split(
    config: &ExperimentConfig,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>), HarnessError> {
    let data = load_dataset(config)?;
    let (train_idx, test_idx) = split_indices(&data, config.train.split_fraction, config.seed)?;
    let take = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((take(&train_idx), take(&test_idx)))
}

/// The test clouds covered by the attack stages: the test split sorted by
/// content hash, truncated to `config.samples`. Sorting by hash makes the
/// selection independent of generation order, and a smaller `samples`
/// value selects a prefix of a larger one.
pub fn attack_targets(config: &ExperimentConfig) -> Result<Vec<PointCloud>, HarnessError> {
    let (_, mut test) = dataset_split(config)?;
    test.sort_by_key(|c| c.content_hash());
    test.truncate(config.samples);
    Ok(test)
}

fn model_file(config: &ExperimentConfig) -> PathBuf {
    config
        .model_path
        .clone()
        .unwrap_or_else(|| config.out_dir.join("model.bin"))
}

fn load_model(config: &ExperimentConfig) -> Result<PointClassifier, HarnessError> {
    let path = model_file(config);
    if !path.exists() {
        return Err(HarnessError::Input(format!(
            "no model at {} (run the train stage first or set model_path)",
            path.display()
        )));
    }
    Ok(PointClassifier::load(&path)?)
}

fn relative(config: &ExperimentConfig, path: &Path) -> String {
    path.strip_prefix(&config.out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Entry of the exported dataset listing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub label: usize,
    pub class_name: Option<String>,
    pub path: String,
}

/// `gen-data`: writes every cloud of the configured dataset as an XYZ
/// file under `out/dataset/`, plus a JSON listing with ids and labels.
pub fn cmd_gen_data(config: &ExperimentConfig) -> Result<Vec<DatasetEntry>, HarnessError> {
    let started = Instant::now();
    let data = load_dataset(config)?;
    let dir = config.out_dir.join("dataset");
    fs::create_dir_all(&dir)?;

    let synthetic = matches!(config.dataset, DatasetSpec::Synthetic { .. });
    let mut entries = Vec::with_capacity(data.len());
    for cloud in &data {
        let id = cloud.content_hash();
        let path = dir.join(format!("{id}.xyz"));
        write_xyz(&path, cloud)?;
        let label = cloud.label.expect("datasets are fully labelled");
        entries.push(DatasetEntry {
            id,
            label,
            class_name: if synthetic {
                CLASS_NAMES.get(label).map(|s| s.to_string())
            } else {
                None
            },
            path: relative(config, &path),
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    let listing = config.out_dir.join("dataset_manifest.json");
    fs::write(&listing, serde_json::to_string_pretty(&entries)?)?;

    let mut manifest = RunManifest::load_or_new(config);
    for e in &entries {
        manifest.record_file(&e.id, e.path.clone());
    }
    manifest
        .timings_secs
        .insert("gen-data".into(), started.elapsed().as_secs_f64());
    manifest.save(config)?;
    Ok(entries)
}

/// What `train` leaves behind, echoed to callers for convenience.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutput {
    pub model_path: PathBuf,
    pub test_accuracy: f64,
    pub report: crate::net::TrainReport,
}

/// `train`: trains the classifier on the configured dataset's train
/// split and writes the model binary plus a JSON accuracy report.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutput, HarnessError> {
    let started = Instant::now();
    let (train_set, test_set) = dataset_split(config)?;
    let classes = train_set
        .iter()
        .chain(&test_set)
        .filter_map(|c| c.label)
        .max()
        .map_or(0, |m| m + 1);

    let mut model = PointClassifier::new(classes, config.train.seed);
    let report = train(&mut model, &train_set, &test_set, &config.train)?;

    fs::create_dir_all(&config.out_dir)?;
    let model_path = config.out_dir.join("model.bin");
    model.save(&model_path)?;

    let test_accuracy = report.epoch_test_accuracy.last().copied().unwrap_or(0.0);
    let output = TrainOutput {
        model_path: model_path.clone(),
        test_accuracy,
        report,
    };
    fs::write(
        config.out_dir.join("train_report.json"),
        serde_json::to_string_pretty(&output)?,
    )?;

    let mut manifest = RunManifest::load_or_new(config);
    manifest
        .timings_secs
        .insert("train".into(), started.elapsed().as_secs_f64());
    manifest.save(config)?;
    Ok(output)
}

/// Sidecar JSON written next to each sample's cage files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CageBuildRecord {
    pub sample_id: String,
    pub variant: String,
    pub subdivided: bool,
    pub optimized: bool,
    pub flagged_faces: Vec<usize>,
    pub final_faces: usize,
    pub log: Vec<crate::cage::LossRecord>,
}

fn cage_dir(config: &ExperimentConfig, variant: AblationVariant) -> PathBuf {
    config.out_dir.join("cages").join(variant.name())
}

/// `build-cage`: runs the cage pipeline for every attack target under
/// the given ablation variant, writing per-stage OBJ files, the MVC
/// binding, and a build log.
pub fn cmd_build_cages(
    config: &ExperimentConfig,
    variant: AblationVariant,
) -> Result<usize, HarnessError> {
    let started = Instant::now();
    let targets = attack_targets(config)?;
    if targets.is_empty() {
        return Err(HarnessError::EmptyResults("no attack targets".into()));
    }
    let dir = cage_dir(config, variant);
    fs::create_dir_all(&dir)?;
    let cage_config = variant.apply(&config.cage);

    let mut manifest = RunManifest::load_or_new(config);
    for cloud in &targets {
        let id = cloud.content_hash();
        let artifacts = build_cage(cloud, &cage_config)?;
        let coords = MvcCoords::bind(cloud, artifacts.final_cage()).map_err(|e| match e {
            MvcError::PointOutsideCage { .. } | MvcError::InvalidCage { .. } => {
                HarnessError::Validation(format!("sample {id}: {e}"))
            }
            other => HarnessError::from(other),
        })?;

        let mut files = vec![(format!("{id}.initial.obj"), &artifacts.initial)];
        if let Some(mesh) = &artifacts.subdivided {
            files.push((format!("{id}.subdivided.obj"), mesh));
        }
        if let Some(mesh) = &artifacts.optimized {
            files.push((format!("{id}.optimized.obj"), mesh));
        }
        for (name, mesh) in &files {
            let path = dir.join(name);
            write_obj(&path, mesh)?;
            manifest.record_file(&id, relative(config, &path));
        }

        let coords_path = dir.join(format!("{id}.coords.bin"));
        coords.save(&coords_path)?;
        manifest.record_file(&id, relative(config, &coords_path));

        let record = CageBuildRecord {
            sample_id: id.clone(),
            variant: variant.name().into(),
            subdivided: artifacts.subdivided.is_some(),
            optimized: artifacts.optimized.is_some(),
            flagged_faces: artifacts.flagged_faces.clone(),
            final_faces: artifacts.final_cage().faces.len(),
            log: artifacts.log.clone(),
        };
        let record_path = dir.join(format!("{id}.build.json"));
        fs::write(&record_path, serde_json::to_string_pretty(&record)?)?;
        manifest.record_file(&id, relative(config, &record_path));
    }

    manifest.timings_secs.insert(
        format!("build-cage/{}", variant.name()),
        started.elapsed().as_secs_f64(),
    );
    manifest.save(config)?;
    Ok(targets.len())
}

/// The final cage of a variant's pipeline for one sample, as written to
/// disk: optimized if present, else subdivided, else initial.
fn load_final_cage(
    dir: &Path,
    id: &str,
) -> Result<Option<crate::geometry::TriMesh>, HarnessError> {
    for stage in ["optimized", "subdivided", "initial"] {
        let path = dir.join(format!("{id}.{stage}.obj"));
        if path.exists() {
            return Ok(Some(read_obj(&path)?));
        }
    }
    Ok(None)
}

/// Per-sample attack outcome as serialised next to the adversarial PLY.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleAttackRecord {
    pub sample_id: String,
    pub attack: String,
    pub success: bool,
    pub iters: usize,
    pub l_mis: f64,
    pub d_i: f64,
    pub displacement_norms: Vec<f64>,
}

fn attack_dir(config: &ExperimentConfig, variant: AblationVariant) -> PathBuf {
    config.out_dir.join("attacks").join(variant.name())
}

fn write_attack_outputs(
    config: &ExperimentConfig,
    manifest: &mut RunManifest,
    dir: &Path,
    id: &str,
    attack_name: &str,
    result: &AttackResult,
) -> Result<(), HarnessError> {
    let record = SampleAttackRecord {
        sample_id: id.to_string(),
        attack: attack_name.to_string(),
        success: result.success,
        iters: result.iterations_used,
        l_mis: result.final_l_mis,
        d_i: result.final_d_i,
        displacement_norms: result.displacements.iter().map(|d| d.norm()).collect(),
    };
    let json_path = dir.join(format!("{id}.{attack_name}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&record)?)?;
    manifest.record_file(id, relative(config, &json_path));

    let ply_path = dir.join(format!("{id}.{attack_name}.ply"));
    write_ply(&ply_path, &result.adversarial)?;
    manifest.record_file(id, relative(config, &ply_path));
    Ok(())
}

/// `attack`: runs the selected attacks over the attack targets. The cage
/// attack needs the variant's cage files; samples whose cage is missing
/// are skipped with a manifest warning. The point-wise baseline needs no
/// cage and always runs when selected.
pub fn cmd_attack(
    config: &ExperimentConfig,
    variant: AblationVariant,
    select: AttackSelect,
) -> Result<usize, HarnessError> {
    let started = Instant::now();
    let model = load_model(config)?;
    let targets = attack_targets(config)?;
    if targets.is_empty() {
        return Err(HarnessError::EmptyResults("no attack targets".into()));
    }
    let cages = cage_dir(config, variant);
    let dir = attack_dir(config, variant);
    fs::create_dir_all(&dir)?;

    let mut manifest = RunManifest::load_or_new(config);
    let mut ran = 0usize;
    for cloud in &targets {
        let id = cloud.content_hash();
        let label = cloud.label.expect("attack targets are labelled");

        if select.runs_cage() {
            let coords_path = cages.join(format!("{id}.coords.bin"));
            match (coords_path.exists(), load_final_cage(&cages, &id)?) {
                (true, Some(cage)) => {
                    let coords = MvcCoords::load(&coords_path)?;
                    let result =
                        cage_attack(&model, cloud, label, &cage, &coords, &config.attack.cage)?;
                    write_attack_outputs(config, &mut manifest, &dir, &id, "cage", &result)?;
                    ran += 1;
                }
                _ => {
                    let warning = format!(
                        "sample {id}: no {} cage, cage attack skipped",
                        variant.name()
                    );
                    if !manifest.warnings.contains(&warning) {
                        manifest.warnings.push(warning);
                    }
                }
            }
        }

        if select.runs_ifgm() {
            let result = ifgm_attack(&model, cloud, label, &config.attack.ifgm)?;
            write_attack_outputs(config, &mut manifest, &dir, &id, "ifgm", &result)?;
            ran += 1;
        }
    }

    let select_name = match select {
        AttackSelect::Cage => "cage",
        AttackSelect::Ifgm => "ifgm",
        AttackSelect::Both => "both",
    };
    manifest.timings_secs.insert(
        format!("attack/{}/{select_name}", variant.name()),
        started.elapsed().as_secs_f64(),
    );
    manifest.save(config)?;
    Ok(ran)
}

// ---------------------------------------------------------------------------
// Result loading and reports
// ---------------------------------------------------------------------------

/// Reloads one attack's per-sample outputs for a variant, joined against
/// the original clouds: `(original, reconstructed result)` pairs sorted
/// by sample id. Samples without stored results are simply absent.
pub fn load_attack_results(
    config: &ExperimentConfig,
    variant: AblationVariant,
    attack_name: &str,
) -> Result<Vec<(PointCloud, AttackResult)>, HarnessError> {
    let targets = attack_targets(config)?;
    let dir = attack_dir(config, variant);
    let mut out = Vec::new();
    for cloud in targets {
        let id = cloud.content_hash();
        let json_path = dir.join(format!("{id}.{attack_name}.json"));
        let ply_path = dir.join(format!("{id}.{attack_name}.ply"));
        if !json_path.exists() || !ply_path.exists() {
            continue;
        }
        let record: SampleAttackRecord = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
        let mut adversarial = read_ply(&ply_path)?;
        adversarial.label = cloud.label;
        let displacements = adversarial
            .points
            .iter()
            .zip(&cloud.points)
            .map(|(a, b)| a - b)
            .collect();
        let result = AttackResult {
            adversarial,
            success: record.success,
            iterations_used: record.iters,
            final_l_mis: record.l_mis,
            final_d_i: record.d_i,
            cage_offsets: None,
            displacements,
        };
        out.push((cloud, result));
    }
    out.sort_by_key(|(c, _)| c.content_hash());
    Ok(out)
}

fn reports_dir(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("reports")
}

/// Computes the defense sweep rows (success rate undefended, behind
/// random sampling, and behind outlier removal) for every attack with
/// stored full-variant results.
pub fn defense_rows(config: &ExperimentConfig) -> Result<Vec<DefenseSweepRow>, HarnessError> {
    let model = load_model(config)?;
    let mut rows = Vec::new();
    for attack_name in ["cage", "ifgm"] {
        let pairs = load_attack_results(config, AblationVariant::Full, attack_name)?;
        if pairs.is_empty() {
            continue;
        }
        let results: Vec<AttackResult> = pairs.into_iter().map(|(_, r)| r).collect();
        let srs_defense = Defense::Srs {
            drop: config.defense.srs_drop,
            seed: config.defense.seed,
        };
        let sor_defense = Defense::Sor {
            k: config.defense.sor_k,
            alpha: config.defense.sor_alpha,
        };
        rows.push(DefenseSweepRow {
            attack: attack_name.to_string(),
            undefended: asr(&results),
            srs: evaluate_under_defense(&model, &results, &srs_defense)?,
            sor: evaluate_under_defense(&model, &results, &sor_defense)?,
        });
    }
    Ok(rows)
}

/// `defend`: evaluates the stored full-variant attack results behind
/// both defenses and writes the sweep CSV.
pub fn cmd_defend(config: &ExperimentConfig) -> Result<Vec<DefenseSweepRow>, HarnessError> {
    let started = Instant::now();
    let rows = defense_rows(config)?;
    if rows.is_empty() {
        return Err(HarnessError::EmptyResults(
            "no stored attack results; run the attack stage first".into(),
        ));
    }
    fs::create_dir_all(reports_dir(config))?;
    let path = reports_dir(config).join("defense.csv");
    write_defense_csv(&path, &config.defense, &rows)?;

    let mut manifest = RunManifest::load_or_new(config);
    let rel = relative(config, &path);
    if !manifest.aggregate_tables.contains(&rel) {
        manifest.aggregate_tables.push(rel);
    }
    manifest
        .timings_secs
        .insert("defend".into(), started.elapsed().as_secs_f64());
    manifest.save(config)?;
    Ok(rows)
}

/// One row of the ablation table: the cage attack's aggregate metrics
/// with a given combination of construction stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub subdivision: bool,
    pub optimization: bool,
    pub asr: f64,
    pub csd: f64,
    pub curv: f64,
    pub uni: f64,
    pub knn: f64,
    pub lap: f64,
}

fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<(), HarnessError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        w,
        "# cage attack under construction-stage ablation; metric columns share the naturalness table's scaling"
    )?;
    writeln!(w, "variant,subdivision,optimization,asr,csd,curv,uni,knn,lap")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.variant,
            if r.subdivision { "on" } else { "off" },
            if r.optimization { "on" } else { "off" },
            r.asr,
            r.csd * 10.0,
            r.curv * 1e3,
            r.uni,
            r.knn * 1e3,
            r.lap
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Everything `report` wrote, for callers that want the numbers too.
#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub naturalness: Vec<(String, crate::metrics::MetricReport)>,
    pub defense: Vec<DefenseSweepRow>,
    pub ablation: Vec<AblationRow>,
}

/// `report`: recomputes all aggregates from stored per-sample results
/// and writes the naturalness, defense, and ablation CSVs. Ablation rows
/// are computed over the samples every built variant shares, so stage
/// toggles are compared on identical inputs.
pub fn cmd_report(config: &ExperimentConfig) -> Result<ReportOutput, HarnessError> {
    let started = Instant::now();
    let dir = reports_dir(config);
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::load_or_new(config);
    let mut tables = Vec::new();

    // Naturalness table over the full-variant results.
    let mut naturalness = Vec::new();
    for attack_name in ["cage", "ifgm"] {
        let pairs = load_attack_results(config, AblationVariant::Full, attack_name)?;
        if pairs.is_empty() {
            continue;
        }
        let (originals, results): (Vec<PointCloud>, Vec<AttackResult>) = pairs.into_iter().unzip();
        let report = compute_report(&originals, &results, &config.metrics)?;
        naturalness.push((attack_name.to_string(), report));
    }
    if naturalness.is_empty() {
        return Err(HarnessError::EmptyResults(
            "no stored attack results; run the attack stage first".into(),
        ));
    }
    let naturalness_path = dir.join("naturalness.csv");
    write_metrics_csv(&naturalness_path, &naturalness)?;
    tables.push(relative(config, &naturalness_path));

    // Defense sweep over the same full-variant results.
    let defense = defense_rows(config)?;
    if !defense.is_empty() {
        let path = dir.join("defense.csv");
        write_defense_csv(&path, &config.defense, &defense)?;
        tables.push(relative(config, &path));
    }

    // Ablation table: cage-attack metrics per construction variant,
    // restricted to the sample ids present for every variant that ran.
    let mut per_variant: Vec<(AblationVariant, Vec<(PointCloud, AttackResult)>)> = Vec::new();
    for variant in AblationVariant::ALL {
        let pairs = load_attack_results(config, variant, "cage")?;
        if !pairs.is_empty() {
            per_variant.push((variant, pairs));
        }
    }
    let mut ablation = Vec::new();
    if !per_variant.is_empty() {
        let mut shared: Vec<String> = per_variant[0]
            .1
            .iter()
            .map(|(c, _)| c.content_hash())
            .collect();
        for (_, pairs) in &per_variant[1..] {
            let ids: Vec<String> = pairs.iter().map(|(c, _)| c.content_hash()).collect();
            shared.retain(|id| ids.contains(id));
        }
        for (variant, pairs) in &per_variant {
            let kept: Vec<&(PointCloud, AttackResult)> = pairs
                .iter()
                .filter(|(c, _)| shared.contains(&c.content_hash()))
                .collect();
            if kept.is_empty() {
                continue;
            }
            let originals: Vec<PointCloud> = kept.iter().map(|(c, _)| c.clone()).collect();
            let results: Vec<AttackResult> = kept.iter().map(|(_, r)| r.clone()).collect();
            let report = compute_report(&originals, &results, &config.metrics)?;
            ablation.push(AblationRow {
                variant: variant.name().into(),
                subdivision: variant.subdivide(),
                optimization: variant.optimize(),
                asr: report.asr,
                csd: report.csd,
                curv: report.curv,
                uni: report.uni,
                knn: report.knn,
                lap: report.lap,
            });
        }
        let ablation_path = dir.join("ablation.csv");
        write_ablation_csv(&ablation_path, &ablation)?;
        tables.push(relative(config, &ablation_path));
    }

    for table in &tables {
        if !manifest.aggregate_tables.contains(table) {
            manifest.aggregate_tables.push(table.clone());
        }
    }
    manifest
        .timings_secs
        .insert("report".into(), started.elapsed().as_secs_f64());
    manifest.save(config)?;

    Ok(ReportOutput {
        naturalness,
        defense,
        ablation,
    })
}
