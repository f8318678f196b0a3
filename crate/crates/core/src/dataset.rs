//! Dataset generation, the on-disk dataset format, splits and pair export.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! dataset.json              header: id, generator, protocol and config echo
//! manifest.jsonl            one record per (sample, mode), ordered by id then mode
//! rest/<mode>.png           frame of the undeformed sensor
//! images/<mode>/<id>.png    frame of each sample
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::conversion::Direction;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::mechanics::{solve_contact, ContactWrench, DeformationState};
use crate::optics::{add_pixel_noise, RenderPass, SceneObject};
use crate::protocol::{stream_id, Label, ProtocolConfig, SampleRng, Task, RNG_NAME, RNG_VERSION};
use crate::sensor::{build_sensor, SensorMode, SensorModel};
use crate::stimulus::{Placement, Stimulus, StimulusPose};

pub const HEADER_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FORMAT_VERSION: u32 = 1;

/// Redraws allowed after solver failures before generation gives up.
pub const MAX_SOLVER_ATTEMPTS: u32 = 5;
/// Redraws allowed for force samples whose labels fall outside the accepted ranges.
pub const MAX_LABEL_REDRAWS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationProtocol {
    pub task: Task,
    pub samples: usize,
    pub seed: u64,
    pub modes: Vec<SensorMode>,
    pub params: ProtocolConfig,
}

impl GenerationProtocol {
    /// Protocol for `task` with the counts of `params`, or the full-scale counts
    /// when `paper_scale` is set.
    pub fn new(task: Task, params: &ProtocolConfig, seed: u64, modes: &[SensorMode], paper_scale: bool) -> Self {
        let samples = match task {
            Task::Grating => {
                let per_class = if paper_scale {
                    params.grating.paper_samples_per_class
                } else {
                    params.grating.samples_per_class
                };
                per_class * params.grating.classes_mm.len()
            }
            Task::Pose if paper_scale => params.pose.paper_samples,
            Task::Pose => params.pose.samples,
            Task::Force if paper_scale => params.force.paper_samples,
            Task::Force => params.force.samples,
        };
        let mut modes = modes.to_vec();
        modes.sort();
        modes.dedup();
        GenerationProtocol {
            task,
            samples,
            seed,
            modes,
            params: params.clone(),
        }
    }

    pub fn validate(&self, config: &Config) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("samples", "must be > 0"));
        }
        if self.modes.is_empty() {
            return Err(Error::config("modes", "at least one sensor mode is required"));
        }
        if self.task == Task::Grating && self.samples % self.params.grating.classes_mm.len() != 0 {
            return Err(Error::config("samples", "grating sample count must be a multiple of the class count"));
        }
        self.params.validate(&config.solver)
    }

    /// Ratios used to split this task's datasets.
    pub fn split_ratios(&self) -> (f64, f64, f64) {
        match self.task {
            Task::Grating => self.params.grating.split,
            Task::Pose => self.params.pose.split,
            Task::Force => self.params.force.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub rng: String,
    pub rng_version: String,
    pub stream: String,
}

impl Default for Generator {
    fn default() -> Self {
        Generator {
            rng: RNG_NAME.into(),
            rng_version: RNG_VERSION.into(),
            stream: "sample_index + attempt * 2^32".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    /// First 16 hex digits of the SHA-256 of the protocol and config echo.
    pub id: String,
    pub generator: Generator,
    pub protocol: GenerationProtocol,
    pub config: Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub index: usize,
    pub mode: SensorMode,
    /// Paths relative to the dataset directory.
    pub image: String,
    pub rest_image: String,
    pub label: Label,
    pub stimulus: Stimulus,
    pub pose: StimulusPose,
    pub ambient_light: f64,
    pub wrench: ContactWrench,
    pub seed: u64,
    /// RNG stream of the accepted draw.
    pub stream: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub header: DatasetHeader,
    pub records: Vec<SampleRecord>,
}

pub fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Labels and per-mode frames of one accepted sample.
struct Generated {
    draw_stream: u64,
    attempts: u32,
    label: Label,
    stimulus: Stimulus,
    pose: StimulusPose,
    ambient: f64,
    wrench: ContactWrench,
    frames: Vec<Frame>,
}

struct Generation<'a> {
    config: &'a Config,
    protocol: &'a GenerationProtocol,
    model: SensorModel,
}

impl Generation<'_> {
    fn sample(&self, index: usize) -> Result<Generated> {
        let p = self.protocol;
        let mut solver_failures = 0;
        let mut redraws = 0;
        let mut attempt = 0u32;
        loop {
            let mut rng = SampleRng::for_sample(p.seed, index, attempt);
            let draw = p.params.draw(p.task, index, &mut rng, self.config.render.ambient_light);
            let stream = stream_id(index, attempt);
            attempt += 1;
            let (state, wrench) = match solve_contact(&self.model, &draw.stimulus, &draw.pose, &self.config.solver) {
                Ok(s) => s,
                Err(e @ (Error::NonConvergence { .. } | Error::InfeasiblePose { .. })) => {
                    solver_failures += 1;
                    if solver_failures >= MAX_SOLVER_ATTEMPTS {
                        return Err(e);
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            let label = if p.task == Task::Force {
                match p.params.force_label(&wrench) {
                    Some(l) => l,
                    None => {
                        redraws += 1;
                        if redraws > MAX_LABEL_REDRAWS {
                            return Err(Error::Validation(format!(
                                "sample {index}: no draw produced forces inside the label ranges after {MAX_LABEL_REDRAWS} redraws"
                            )));
                        }
                        continue;
                    }
                }
            } else {
                draw.label
            };
            let frames = self.render(index, &draw.stimulus, &draw.pose, draw.ambient_light, &state)?;
            return Ok(Generated {
                draw_stream: stream,
                attempts: attempt,
                label,
                stimulus: draw.stimulus,
                pose: draw.pose,
                ambient: draw.ambient_light,
                wrench,
                frames,
            });
        }
    }

    fn render(
        &self,
        index: usize,
        stimulus: &Stimulus,
        pose: &StimulusPose,
        ambient: f64,
        state: &DeformationState,
    ) -> Result<Vec<Frame>> {
        let mut scene = self.config.render.scene(ambient)?;
        scene.object = Some(SceneObject {
            placement: Placement::at_pose(&self.model, *stimulus, pose),
            albedo: self.config.render.object_albedo,
        });
        let pass = RenderPass::new(&self.model, state, &scene, &self.config.sensor)?;
        self.compose(&pass, Some(index))
    }

    fn compose(&self, pass: &RenderPass, index: Option<usize>) -> Result<Vec<Frame>> {
        let sensor = &self.config.sensor;
        let mut frames = Vec::with_capacity(self.protocol.modes.len());
        for (m, mode) in self.protocol.modes.iter().enumerate() {
            let mut frame = pass.frame(&mode.apply_to(sensor, sensor.transparency_alpha))?;
            if let Some(i) = index {
                let noise_seed = self.protocol.seed ^ stream_id(i, 0).rotate_left(17) ^ (m as u64 + 1) << 56;
                add_pixel_noise(&mut frame, self.config.render.pixel_noise_std, noise_seed);
            }
            frames.push(frame);
        }
        Ok(frames)
    }

    fn rest_frames(&self) -> Result<Vec<Frame>> {
        let scene = self.config.render.scene(self.config.render.ambient_light)?;
        let pass = RenderPass::new(&self.model, &DeformationState::rest(&self.model), &scene, &self.config.sensor)?;
        self.compose(&pass, None)
    }
}

fn worker_count(samples: usize) -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(samples)
        .max(1)
}

fn image_path(mode: SensorMode, id: &str) -> String {
    format!("images/{}/{id}.png", mode.name())
}

fn rest_path(mode: SensorMode) -> String {
    format!("rest/{}.png", mode.name())
}

/// Generates a dataset into `out_dir`. Samples are produced in parallel and
/// assembled in id order, so the output bytes do not depend on scheduling.
pub fn generate(config: &Config, protocol: &GenerationProtocol, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    protocol.validate(config)?;
    let generation = Generation {
        config,
        protocol,
        model: build_sensor(&config.sensor)?,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    for (mode, frame) in protocol.modes.iter().zip(generation.rest_frames()?) {
        write_file(&out_dir.join(rest_path(*mode)), &frame.encode_png()?)?;
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<SampleRecord>>>>> =
        Mutex::new((0..protocol.samples).map(|_| None).collect());
    let failed = std::sync::atomic::AtomicBool::new(false);
    std::thread::scope(|s| {
        for _ in 0..worker_count(protocol.samples) {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= protocol.samples {
                    break;
                }
                let outcome = generation.sample(index).and_then(|g| write_sample(out_dir, protocol, index, g));
                if outcome.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().expect("no worker panics while holding the lock")[index] = Some(outcome);
            });
        }
    });

    let mut records = Vec::with_capacity(protocol.samples * protocol.modes.len());
    for outcome in results.into_inner().expect("workers finished") {
        match outcome {
            Some(Ok(r)) => records.extend(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }

    let header = DatasetHeader::new(config, protocol);
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        header,
        records,
    };
    manifest.write()?;
    Ok(manifest)
}

fn write_sample(out_dir: &Path, protocol: &GenerationProtocol, index: usize, g: Generated) -> Result<Vec<SampleRecord>> {
    let id = sample_id(index);
    let mut records = Vec::with_capacity(protocol.modes.len());
    for (mode, frame) in protocol.modes.iter().zip(&g.frames) {
        let image = image_path(*mode, &id);
        write_file(&out_dir.join(&image), &frame.encode_png()?)?;
        records.push(SampleRecord {
            id: id.clone(),
            index,
            mode: *mode,
            image,
            rest_image: rest_path(*mode),
            label: g.label,
            stimulus: g.stimulus,
            pose: g.pose,
            ambient_light: g.ambient,
            wrench: g.wrench,
            seed: protocol.seed,
            stream: g.draw_stream,
            attempts: g.attempts,
        });
    }
    Ok(records)
}

impl DatasetHeader {
    pub fn new(config: &Config, protocol: &GenerationProtocol) -> Self {
        let echo = serde_json::to_vec(&(protocol, config)).expect("serializable");
        DatasetHeader {
            format_version: FORMAT_VERSION,
            id: sha256_hex(&echo)[..16].to_string(),
            generator: Generator::default(),
            protocol: protocol.clone(),
            config: config.clone(),
        }
    }
}

impl DatasetManifest {
    pub fn task(&self) -> Task {
        self.header.protocol.task
    }

    pub fn write(&self) -> Result<()> {
        let header = serde_json::to_string_pretty(&self.header).expect("serializable") + "\n";
        write_file(&self.root.join(HEADER_FILE), header.as_bytes())?;
        let mut lines = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut lines, r).expect("serializable");
            lines.write_all(b"\n").expect("in-memory write");
        }
        write_file(&self.root.join(MANIFEST_FILE), &lines)
    }

    /// Reads and validates the dataset stored in `dir`.
    pub fn open(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let header_path = dir.join(HEADER_FILE);
        let header: DatasetHeader = serde_json::from_str(&read(HEADER_FILE)?).map_err(|e| Error::Format {
            path: header_path.clone(),
            reason: e.to_string(),
        })?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut records = Vec::new();
        for (n, line) in read(MANIFEST_FILE)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Format {
                path: manifest_path.clone(),
                reason: format!("line {}: {e}", n + 1),
            })?);
        }
        let manifest = DatasetManifest {
            root: dir.to_path_buf(),
            header,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks referenced files, id uniqueness and label ranges.
    pub fn validate(&self) -> Result<()> {
        if self.header.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dataset format version {}",
                self.header.format_version
            )));
        }
        let mut seen = BTreeSet::new();
        let mut files = BTreeSet::new();
        for r in &self.records {
            if !seen.insert((r.id.clone(), r.mode)) {
                return Err(Error::Validation(format!("duplicate record {} ({})", r.id, r.mode)));
            }
            files.insert(r.image.as_str());
            files.insert(r.rest_image.as_str());
            self.check_label(r)?;
        }
        for f in files {
            let path = self.root.join(f);
            if !path.is_file() {
                return Err(Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        Ok(())
    }

    fn check_label(&self, r: &SampleRecord) -> Result<()> {
        let params = &self.header.protocol.params;
        let inside = |v: f64, range: (f64, f64)| v >= range.0 - 1e-12 && v <= range.1 + 1e-12;
        let ok = match (self.task(), r.label) {
            (Task::Grating, Label::Grating { class, spacing_mm }) => {
                params.grating.classes_mm.get(class) == Some(&spacing_mm)
            }
            (Task::Pose, Label::Pose { x_mm, z_mm, theta_deg }) => {
                inside(x_mm, params.pose.x_range_mm)
                    && inside(z_mm, params.pose.z_range_mm)
                    && inside(theta_deg, params.pose.theta_range_deg)
            }
            (Task::Force, Label::Force { fx, fy, fz, .. }) => {
                inside(fx, params.force.fxy_range_n)
                    && inside(fy, params.force.fxy_range_n)
                    && inside(fz, params.force.fz_range_n)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("record {} ({}): label outside the protocol", r.id, r.mode)))
        }
    }

    pub fn modes(&self) -> Vec<SensorMode> {
        self.header.protocol.modes.clone()
    }

    /// Records of one mode, in id order.
    pub fn records_for(&self, mode: SensorMode) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.mode == mode).collect()
    }

    /// Distinct sample ids, in order.
    pub fn sample_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.records.iter().map(|r| r.id.as_str()).collect();
        ids.into_iter().map(String::from).collect()
    }

    pub fn load_image(&self, relative: &str) -> Result<Frame> {
        Frame::load_png(&self.root.join(relative))
    }

    /// Copy keeping only the samples whose id is in `ids`.
    pub fn subset(&self, ids: &BTreeSet<String>) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            header: self.header.clone(),
            records: self.records.iter().filter(|r| ids.contains(&r.id)).cloned().collect(),
        }
    }

    /// SHA-256 of the manifest lines as written to disk.
    pub fn content_hash(&self) -> String {
        let mut lines = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut lines, r).expect("serializable");
            lines.push(b'\n');
        }
        sha256_hex(&lines)
    }
}

/// Train, validation and test parts of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DatasetManifest,
    pub validation: DatasetManifest,
    pub test: DatasetManifest,
}

/// Partitions `ids` into three groups by the ratios after a seeded shuffle.
/// With `classes`, every class is partitioned on its own.
pub fn split_ids(
    ids: &[(String, Option<usize>)],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<[Vec<String>; 3]> {
    let parts = [ratios.0, ratios.1, ratios.2];
    if parts.iter().any(|r| !(*r >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("ratios", "must be >= 0 and sum to 1 within 1e-9"));
    }
    let mut groups: BTreeMap<Option<usize>, Vec<String>> = BTreeMap::new();
    for (id, class) in ids {
        groups.entry(*class).or_default().push(id.clone());
    }
    let stratified = groups.keys().any(|k| k.is_some());
    let needed = parts.iter().filter(|r| **r > 0.0).count();
    let mut out: [Vec<String>; 3] = Default::default();
    for (class, mut members) in groups {
        if let (true, Some(c)) = (stratified, class) {
            if members.len() < needed {
                return Err(Error::Stratification {
                    class: c,
                    count: members.len(),
                });
            }
        }
        members.sort();
        let stream = class.map_or(u64::MAX, |c| c as u64);
        let mut rng = SampleRng::new(seed, stream);
        for i in (1..members.len()).rev() {
            let j = rng.below(i + 1);
            members.swap(i, j);
        }
        let n = members.len();
        let n_train = ((n as f64 * parts[0]) + 0.5).floor() as usize;
        let n_train = n_train.min(n);
        let n_val = (((n as f64 * parts[1]) + 0.5).floor() as usize).min(n - n_train);
        let n_val = if parts[2] == 0.0 { n - n_train } else { n_val };
        out[0].extend_from_slice(&members[..n_train]);
        out[1].extend_from_slice(&members[n_train..n_train + n_val]);
        out[2].extend_from_slice(&members[n_train + n_val..]);
    }
    for part in out.iter_mut() {
        part.sort();
    }
    Ok(out)
}

/// Seeded split of a dataset; grating datasets are stratified per class.
pub fn split(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let mut ids: BTreeMap<String, Option<usize>> = BTreeMap::new();
    for r in &manifest.records {
        let class = match r.label {
            Label::Grating { class, .. } => Some(class),
            _ => None,
        };
        ids.insert(r.id.clone(), class);
    }
    let ids: Vec<(String, Option<usize>)> = ids.into_iter().collect();
    let [train, validation, test] = split_ids(&ids, ratios, seed)?;
    let set = |v: Vec<String>| v.into_iter().collect::<BTreeSet<_>>();
    Ok(Split {
        train: manifest.subset(&set(train)),
        validation: manifest.subset(&set(validation)),
        test: manifest.subset(&set(test)),
    })
}

/// Writes aligned source/target pairs for an external image-to-image trainer:
/// `source/NNNN.png`, `target/NNNN.png` and `index.csv`. Returns the pair count.
pub fn export_pairs(manifest: &DatasetManifest, direction: Direction, out_dir: &Path) -> Result<usize> {
    let (src_mode, dst_mode) = (direction.source(), direction.target());
    let mut by_id: BTreeMap<&str, (Option<&SampleRecord>, Option<&SampleRecord>)> = BTreeMap::new();
    for r in &manifest.records {
        let slot = by_id.entry(&r.id).or_default();
        if r.mode == src_mode {
            slot.0 = Some(r);
        } else if r.mode == dst_mode {
            slot.1 = Some(r);
        }
    }
    let missing: Vec<String> = by_id
        .iter()
        .filter(|(_, (s, t))| s.is_none() || t.is_none())
        .map(|(id, _)| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompletePairing { ids: missing });
    }
    for sub in ["source", "target"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut index = String::from("id,source_path,target_path,stimulus,x_mm,y_mm,z_mm,theta_deg,shear_x_mm,shear_y_mm,ambient_light\n");
    for (n, (id, (src, dst))) in by_id.iter().enumerate() {
        let (src, dst) = (src.expect("checked"), dst.expect("checked"));
        let source_path = format!("source/{n:04}.png");
        let target_path = format!("target/{n:04}.png");
        for (rel, record) in [(&source_path, src), (&target_path, dst)] {
            let from = manifest.root.join(&record.image);
            let to = out_dir.join(rel);
            fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
        }
        let p = &src.pose;
        let stimulus = serde_json::to_string(&src.stimulus).expect("serializable").replace('"', "'");
        index.push_str(&format!(
            "{id},{source_path},{target_path},\"{stimulus}\",{},{},{},{},{},{},{}\n",
            p.x_mm, p.y_mm, p.z_mm, p.theta_deg, p.shear_mm.0, p.shear_mm.1, src.ambient_light
        ));
    }
    write_file(&out_dir.join("index.csv"), index.as_bytes())?;
    Ok(by_id.len())
}

/// Applies the classical converter for `direction` to every source-mode image
/// and writes the results as `<out_dir>/<id>.png`. Returns the image count.
pub fn convert_dataset(manifest: &DatasetManifest, direction: Direction, out_dir: &Path) -> Result<usize> {
    let sensor = &manifest.header.config.sensor;
    let spec = direction.source().apply_to(sensor, sensor.transparency_alpha);
    let converter = crate::conversion::Converter::new(&spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sources = manifest.records_for(direction.source());
    let next = AtomicUsize::new(0);
    let errors: Mutex<Vec<(usize, Error)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..worker_count(sources.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(r) = sources.get(i) else { break };
                let result = manifest.load_image(&r.image).and_then(|frame| {
                    let out = match direction {
                        Direction::ToViTac => converter.remove_markers(&frame, &converter.detect_markers(&frame)),
                        Direction::ToTacTip => converter.extract_tactile(&frame),
                    };
                    out.save_png(&out_dir.join(format!("{}.png", r.id)))
                });
                if let Err(e) = result {
                    errors.lock().expect("lock").push((i, e));
                }
            });
        }
    });
    let mut errors = errors.into_inner().expect("workers finished");
    errors.sort_by_key(|e| e.0);
    match errors.into_iter().next() {
        Some((_, e)) => Err(e),
        None => Ok(sources.len()),
    }
}
