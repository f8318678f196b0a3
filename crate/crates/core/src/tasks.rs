//! The three evaluation tasks: grating classification, edge pose regression
//! and force regression, each run per sensor mode on a generated dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{self, sha256_hex, split_ids, DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::perception::{FeatureExtractor, KnnClassifier, RidgeRegressor};
use crate::protocol::{Label, Task};
use crate::sensor::SensorMode;

/// Published reference results, copied into task reports.
pub const REFERENCE_GRATING_ACCURACY: [(&str, f64); 2] = [("tactip", 0.9460), ("vitactip", 0.9972)];
pub const REFERENCE_MIN_POSE_ERROR_MM: f64 = 0.08;
pub const REFERENCE_HORIZONTAL_FORCE_MAE_N: f64 = 0.03;
pub const REFERENCE_NORMAL_FORCE_MAE_N: f64 = 0.04;

/// Grating spacing groups (mm) evaluated separately.
pub const GRATING_GROUPS: [(&str, &[f64]); 3] = [
    ("millimeter", &[0.0, 1.0, 2.0]),
    ("half", &[0.0, 0.5, 1.0, 1.5, 2.0]),
    ("quarter", &[1.0, 1.25, 1.5, 1.75, 2.0]),
];

pub const POSE_TARGETS: [&str; 3] = ["x_mm", "z_mm", "theta_deg"];
pub const FORCE_TARGETS: [&str; 6] = ["fx", "fy", "fz", "px", "py", "pz"];

/// Feature vectors of one mode, in sample id order.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub records: Vec<SampleRecord>,
    pub features: Vec<Vec<f64>>,
    pub degraded: Vec<bool>,
}

impl FeatureTable {
    fn index_of(&self) -> BTreeMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect()
    }
}

/// Extracts features for every record of `mode`, in parallel across samples.
pub fn extract_features(manifest: &DatasetManifest, mode: SensorMode, config: &Config) -> Result<FeatureTable> {
    let sensor = &manifest.header.config.sensor;
    let extractor = FeatureExtractor::new(sensor, mode, &config.features)?;
    let records: Vec<SampleRecord> = manifest.records_for(mode).into_iter().cloned().collect();
    if records.is_empty() {
        return Err(Error::Validation(format!("dataset has no `{mode}` records")));
    }
    let rest = extractor.rest_reference(&manifest.load_image(&records[0].rest_image)?);
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<Result<(Vec<f64>, bool)>>>> = Mutex::new((0..records.len()).map(|_| None).collect());
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(records.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(r) = records.get(i) else { break };
                let result = manifest.load_image(&r.image).and_then(|frame| {
                    let f = extractor.extract_with_reference(&frame, &rest)?;
                    Ok((f.values, f.degraded))
                });
                out.lock().expect("no worker panics while holding the lock")[i] = Some(result);
            });
        }
    });
    let mut features = Vec::with_capacity(records.len());
    let mut degraded = Vec::with_capacity(records.len());
    for item in out.into_inner().expect("workers finished") {
        let (f, d) = item.expect("every index visited")?;
        features.push(f);
        degraded.push(d);
    }
    Ok(FeatureTable {
        records,
        features,
        degraded,
    })
}

/// Sample ids of the train, validation and test parts for a task run.
/// Regression tasks without a validation part carve one from the train part.
pub fn task_split(manifest: &DatasetManifest, config: &Config) -> Result<[Vec<String>; 3]> {
    let ratios = manifest.header.protocol.split_ratios();
    let parts = dataset::split(manifest, ratios, config.tasks.split_seed)?;
    let ids = |m: &DatasetManifest| m.sample_ids();
    let (mut train, mut validation, test) = (ids(&parts.train), ids(&parts.validation), ids(&parts.test));
    if manifest.task() != Task::Grating && validation.is_empty() && config.tasks.validation_fraction > 0.0 {
        let f = config.tasks.validation_fraction;
        let pool: Vec<(String, Option<usize>)> = train.iter().map(|id| (id.clone(), None)).collect();
        let [t, v, _] = split_ids(&pool, (1.0 - f, f, 0.0), config.tasks.split_seed.wrapping_add(1))?;
        train = t;
        validation = v;
    }
    Ok([train, validation, test])
}

fn targets(label: &Label) -> Vec<f64> {
    match *label {
        Label::Grating { class, .. } => vec![class as f64],
        Label::Pose { x_mm, z_mm, theta_deg } => vec![x_mm, z_mm, theta_deg],
        Label::Force { fx, fy, fz, px, py, pz } => vec![fx, fy, fz, px, py, pz],
    }
}

fn class_of(label: &Label) -> usize {
    match *label {
        Label::Grating { class, .. } => class,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Knn(KnnClassifier),
    Ridge(RidgeRegressor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub task: Task,
    pub mode: SensorMode,
    pub dataset_id: String,
    pub feature_len: usize,
    pub model: Model,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self).expect("serializable");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

fn rows<'a>(table: &'a FeatureTable, ids: &[String]) -> Vec<(&'a Vec<f64>, &'a SampleRecord)> {
    let index = table.index_of();
    ids.iter()
        .filter_map(|id| index.get(id.as_str()).map(|&i| (&table.features[i], &table.records[i])))
        .collect()
}

/// Fits the task's learner on the train (and, for ridge, validation) part.
pub fn train_model(manifest: &DatasetManifest, table: &FeatureTable, config: &Config) -> Result<TrainedModel> {
    let [train, validation, _] = task_split(manifest, config)?;
    let task = manifest.task();
    let mode = table.records[0].mode;
    let model = match task {
        Task::Grating => {
            let data: Vec<(Vec<f64>, usize)> = rows(table, &train)
                .into_iter()
                .map(|(f, r)| (f.clone(), class_of(&r.label)))
                .collect();
            let classes = manifest.header.protocol.params.grating.classes_mm.len();
            Model::Knn(KnnClassifier::fit(&data, classes, config.tasks.k)?)
        }
        Task::Pose | Task::Force => {
            let pairs = |ids: &[String]| -> Vec<(Vec<f64>, Vec<f64>)> {
                rows(table, ids)
                    .into_iter()
                    .map(|(f, r)| (f.clone(), targets(&r.label)))
                    .collect()
            };
            let mut grid = config.tasks.lambda_grid.clone();
            grid.sort_by(f64::total_cmp);
            Model::Ridge(RidgeRegressor::fit_select(&pairs(&train), &pairs(&validation), &grid)?)
        }
    };
    Ok(TrainedModel {
        task,
        mode,
        dataset_id: manifest.header.id.clone(),
        feature_len: table.features.first().map_or(0, Vec::len),
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub name: String,
    pub classes_mm: Vec<f64>,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes_mm: Vec<f64>,
    pub accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub groups: Vec<GroupAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMae {
    pub name: String,
    pub count: usize,
    pub mae: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub targets: Vec<String>,
    pub mae: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub predictions: Vec<Prediction>,
    pub subsets: Vec<SubsetMae>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub mode: SensorMode,
    pub dataset_id: String,
    pub dataset_hash: String,
    pub config_hash: String,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    pub degraded_count: usize,
    pub classification: Option<ClassificationReport>,
    pub regression: Option<RegressionReport>,
    /// Published hardware results, kept as targets for comparison.
    pub reference: BTreeMap<String, f64>,
}

fn mae(preds: &[&Prediction], k: usize) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().map(|p| (p.predicted[k] - p.truth[k]).abs()).sum::<f64>() / preds.len() as f64
}

fn subset(name: &str, preds: &[&Prediction], targets: usize) -> SubsetMae {
    SubsetMae {
        name: name.into(),
        count: preds.len(),
        mae: (0..targets).map(|k| mae(preds, k)).collect(),
    }
}

/// Evaluates a trained model on the test part.
pub fn evaluate_model(
    manifest: &DatasetManifest,
    table: &FeatureTable,
    model: &TrainedModel,
    config: &Config,
) -> Result<TaskReport> {
    let [train, validation, test] = task_split(manifest, config)?;
    let task = manifest.task();
    if model.task != task || model.dataset_id != manifest.header.id {
        return Err(Error::Validation("model was trained on a different dataset or task".into()));
    }
    let test_rows = rows(table, &test);
    let mut reference = BTreeMap::new();
    let (classification, regression) = match &model.model {
        Model::Knn(knn) => {
            for (mode, acc) in REFERENCE_GRATING_ACCURACY {
                reference.insert(format!("{mode}_accuracy"), acc);
            }
            let classes_mm = manifest.header.protocol.params.grating.classes_mm.clone();
            let n = classes_mm.len();
            let mut confusion = vec![vec![0usize; n]; n];
            let mut outcomes = Vec::with_capacity(test_rows.len());
            for (f, r) in &test_rows {
                let truth = class_of(&r.label);
                let pred = knn.classify(f);
                confusion[truth][pred] += 1;
                outcomes.push((truth, pred));
            }
            let accuracy_of = |keep: &dyn Fn(usize) -> bool| {
                let sel: Vec<_> = outcomes.iter().filter(|(t, _)| keep(*t)).collect();
                let hit = sel.iter().filter(|(t, p)| t == p).count();
                (sel.len(), if sel.is_empty() { 0.0 } else { hit as f64 / sel.len() as f64 })
            };
            let per_class_accuracy = (0..n).map(|c| accuracy_of(&|t| t == c).1).collect();
            let groups = GRATING_GROUPS
                .iter()
                .map(|(name, spacings)| {
                    let members: BTreeSet<usize> =
                        (0..n).filter(|&c| spacings.contains(&classes_mm[c])).collect();
                    let (count, accuracy) = accuracy_of(&|t| members.contains(&t));
                    GroupAccuracy {
                        name: name.to_string(),
                        classes_mm: members.iter().map(|&c| classes_mm[c]).collect(),
                        count,
                        accuracy,
                    }
                })
                .collect();
            let val_rows = rows(table, &validation);
            let validation_accuracy = (!val_rows.is_empty()).then(|| {
                let hit = val_rows.iter().filter(|(f, r)| knn.classify(f) == class_of(&r.label)).count();
                hit as f64 / val_rows.len() as f64
            });
            let report = ClassificationReport {
                accuracy: accuracy_of(&|_| true).1,
                validation_accuracy,
                classes_mm,
                per_class_accuracy,
                confusion,
                groups,
            };
            (Some(report), None)
        }
        Model::Ridge(ridge) => {
            let names: Vec<String> = match task {
                Task::Pose => {
                    reference.insert("min_pose_error_mm".into(), REFERENCE_MIN_POSE_ERROR_MM);
                    POSE_TARGETS.iter().map(|s| s.to_string()).collect()
                }
                _ => {
                    reference.insert("horizontal_force_mae_n".into(), REFERENCE_HORIZONTAL_FORCE_MAE_N);
                    reference.insert("normal_force_mae_n".into(), REFERENCE_NORMAL_FORCE_MAE_N);
                    FORCE_TARGETS.iter().map(|s| s.to_string()).collect()
                }
            };
            let predictions: Vec<Prediction> = test_rows
                .iter()
                .map(|(f, r)| Prediction {
                    id: r.id.clone(),
                    truth: targets(&r.label),
                    predicted: ridge.predict(f),
                })
                .collect();
            let all: Vec<&Prediction> = predictions.iter().collect();
            let t = names.len();
            let mut subsets = Vec::new();
            if task == Task::Force {
                let sheared: BTreeMap<&str, bool> =
                    test_rows.iter().map(|(_, r)| (r.id.as_str(), r.pose.has_shear())).collect();
                let (with, without): (Vec<&Prediction>, Vec<&Prediction>) =
                    all.iter().partition(|p| sheared[p.id.as_str()]);
                subsets.push(subset("zero_shear", &without, t));
                subsets.push(subset("shear", &with, t));
            }
            let report = RegressionReport {
                mae: (0..t).map(|k| mae(&all, k)).collect(),
                targets: names,
                lambdas: ridge.lambdas.clone(),
                predictions,
                subsets,
            };
            (None, Some(report))
        }
    };
    let test_ids: BTreeSet<&str> = test.iter().map(String::as_str).collect();
    let degraded_count = table
        .records
        .iter()
        .zip(&table.degraded)
        .filter(|(r, d)| **d && test_ids.contains(r.id.as_str()))
        .count();
    Ok(TaskReport {
        task,
        mode: model.mode,
        dataset_id: manifest.header.id.clone(),
        dataset_hash: manifest.content_hash(),
        config_hash: config_hash(config),
        train_count: train.len(),
        validation_count: validation.len(),
        test_count: test.len(),
        degraded_count,
        classification,
        regression,
        reference,
    })
}

pub fn config_hash(config: &Config) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("serializable"))
}

/// Trains and evaluates one mode.
pub fn run_task(manifest: &DatasetManifest, mode: SensorMode, config: &Config) -> Result<TaskReport> {
    let table = extract_features(manifest, mode, config)?;
    let model = train_model(manifest, &table, config)?;
    evaluate_model(manifest, &table, &model, config)
}

fn run_all(manifest: &DatasetManifest, task: Task, config: &Config) -> Result<Vec<TaskReport>> {
    if manifest.task() != task {
        return Err(Error::Validation(format!("dataset holds the {} task, not {task}", manifest.task())));
    }
    manifest.modes().into_iter().map(|m| run_task(manifest, m, config)).collect()
}

pub fn run_grating_task(manifest: &DatasetManifest, config: &Config) -> Result<Vec<TaskReport>> {
    run_all(manifest, Task::Grating, config)
}

pub fn run_pose_task(manifest: &DatasetManifest, config: &Config) -> Result<Vec<TaskReport>> {
    run_all(manifest, Task::Pose, config)
}

pub fn run_force_task(manifest: &DatasetManifest, config: &Config) -> Result<Vec<TaskReport>> {
    run_all(manifest, Task::Force, config)
}

impl TaskReport {
    pub fn stem(&self) -> String {
        format!("{}_{}", self.task, self.mode)
    }

    /// Mean of the position-like targets: x and z for pose, px and py for force.
    pub fn localization_mae(&self) -> Option<f64> {
        let r = self.regression.as_ref()?;
        match self.task {
            Task::Pose => Some((r.mae[0] + r.mae[1]) / 2.0),
            Task::Force => Some((r.mae[3] + r.mae[4]) / 2.0),
            Task::Grating => None,
        }
    }

    /// Mean absolute error over fx, fy and fz.
    pub fn force_mae(&self) -> Option<f64> {
        let r = self.regression.as_ref().filter(|_| self.task == Task::Force)?;
        Some((r.mae[0] + r.mae[1] + r.mae[2]) / 3.0)
    }

    pub fn group_accuracy(&self, name: &str) -> Option<f64> {
        let c = self.classification.as_ref()?;
        c.groups.iter().find(|g| g.name == name).map(|g| g.accuracy)
    }

    /// Writes `<dir>/<task>_<mode>.json` plus the confusion or prediction CSV.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let json = dir.join(format!("{}.json", self.stem()));
        let text = serde_json::to_string_pretty(self).expect("serializable") + "\n";
        fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        written.push(json);
        if let Some(c) = &self.classification {
            let path = dir.join(format!("{}_confusion.csv", self.stem()));
            let mut csv = String::from("true_mm");
            for s in &c.classes_mm {
                csv.push_str(&format!(",pred_{s}"));
            }
            csv.push('\n');
            for (s, row) in c.classes_mm.iter().zip(&c.confusion) {
                csv.push_str(&s.to_string());
                for v in row {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
            fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        if let Some(r) = &self.regression {
            let path = dir.join(format!("{}_predictions.csv", self.stem()));
            let mut csv = String::from("id");
            for t in &r.targets {
                csv.push_str(&format!(",{t}_true,{t}_pred"));
            }
            csv.push('\n');
            for p in &r.predictions {
                csv.push_str(&p.id);
                for (t, q) in p.truth.iter().zip(&p.predicted) {
                    csv.push_str(&format!(",{t},{q}"));
                }
                csv.push('\n');
            }
            fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Reads every report in `dir` (sorted by file name).
pub fn load_reports(dir: &Path) -> Result<Vec<TaskReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| TaskReport::load(p)).collect()
}

/// Summary table comparing sensor modes, one row per report, as CSV.
pub fn summary_csv(reports: &[TaskReport]) -> String {
    let mut out = String::from("task,mode,metric,value\n");
    for r in reports {
        let mut push = |metric: &str, v: f64| out.push_str(&format!("{},{},{metric},{v}\n", r.task, r.mode));
        if let Some(c) = &r.classification {
            push("accuracy", c.accuracy);
            for g in &c.groups {
                push(&format!("{}_accuracy", g.name), g.accuracy);
            }
        }
        if let Some(reg) = &r.regression {
            for (t, m) in reg.targets.iter().zip(&reg.mae) {
                push(&format!("{t}_mae"), *m);
            }
        }
    }
    out
}

/// Human-readable version of [`summary_csv`] with one column per mode.
pub fn summary_table(reports: &[TaskReport]) -> String {
    let mut rows: BTreeMap<(Task, String), BTreeMap<SensorMode, f64>> = BTreeMap::new();
    for line in summary_csv(reports).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (Ok(task), Ok(mode), Ok(v)) = (f[0].parse::<Task>(), f[1].parse::<SensorMode>(), f[3].parse::<f64>())
        else {
            continue;
        };
        rows.entry((task, f[2].to_string())).or_default().insert(mode, v);
    }
    let mut out = format!("{:<8} {:<22}", "task", "metric");
    for m in SensorMode::ALL {
        out.push_str(&format!(" {:>10}", m.name()));
    }
    out.push('\n');
    for ((task, metric), values) in rows {
        out.push_str(&format!("{:<8} {:<22}", task.name(), metric));
        for m in SensorMode::ALL {
            match values.get(&m) {
                Some(v) => out.push_str(&format!(" {v:>10.4}")),
                None => out.push_str(&format!(" {:>10}", "-")),
            }
        }
        out.push('\n');
    }
    out
}
