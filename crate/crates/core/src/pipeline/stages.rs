use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{ExperimentConfig, PrepConfig, SplitTag};
use super::provenance::{digest, Provenance, VERSION};
use super::report::{read_csv, write_csv, write_scatter, QualityRecord, SplitSummary};
use super::{write_method_table, PipelineError};
use crate::checkpoint;
use crate::ctsim::{build_dataset, phantom_index, Dataset, ManifestRow};
use crate::diffusion::{sample_primary_image, train_ddpm, ImagePair, LossRecord, TinyUnet};
use crate::dissim::{
    assemble_ablation_input, assemble_input, dissimilarity_map, mean_ssim, AssemblyMode, MultiChannelInput,
};
use crate::evaluator::{predict_all, train_evaluator_epochs, EpochRecord, Evaluator, LabeledInput};
use crate::fsutil::{atomic_write, replace_dir};
use crate::image::{read_ctiq, write_ctiq, Image};
use crate::seed::derive;

const MODEL: &str = "model.ckpt";
const STATE: &str = "state.ckpt";
const STATE_TRACE: &str = "state-trace.csv";
const IN_PROGRESS: &str = ".in-progress";

/// Execution knobs that never change results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub parallel: bool,
    /// Pause a training stage after this many iterations (DDPM) or epochs (evaluator).
    pub stop_after: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel: true, stop_after: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Completed,
    /// A matching artifact already existed.
    UpToDate,
    Paused {
        done: usize,
        total: usize,
    },
}

/// Directory layout of one run.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn ddpm(&self) -> PathBuf {
        self.root.join("ddpm")
    }

    pub fn primary(&self) -> PathBuf {
        self.root.join("primary")
    }

    pub fn dissim(&self) -> PathBuf {
        self.root.join("dissim")
    }

    pub fn evaluator(&self, mode: AssemblyMode) -> PathBuf {
        self.root.join("evaluator").join(mode_name(mode))
    }

    pub fn results(&self, mode: AssemblyMode) -> PathBuf {
        self.root.join("results").join(mode_name(mode))
    }

    pub fn table(&self) -> PathBuf {
        self.root.join("results").join("table.csv")
    }
}

pub fn mode_name(mode: AssemblyMode) -> &'static str {
    match mode {
        AssemblyMode::DBiqa => "d-biqa",
        AssemblyMode::ManiqaAblation => "maniqa-ablation",
    }
}

fn dataset_hash(cfg: &ExperimentConfig) -> String {
    digest(&json!({ "stage": "dataset", "sim": cfg.sim }))
}

fn ddpm_hash(cfg: &ExperimentConfig) -> String {
    let n = cfg.normalized();
    let d = &n.ddpm;
    digest(&json!({
        "stage": "ddpm",
        "dataset": dataset_hash(cfg),
        "split": n.split,
        "prep": n.prep,
        "schedule": [d.steps, d.beta_start, d.beta_end],
        "denoiser": d.denoiser,
        "train": d.train,
        "init_seed": d.init_seed,
    }))
}

fn primary_hash(cfg: &ExperimentConfig) -> String {
    digest(&json!({ "stage": "primary", "ddpm": ddpm_hash(cfg), "sample_seed": cfg.ddpm.sample_seed }))
}

fn dissim_hash(cfg: &ExperimentConfig) -> String {
    digest(&json!({ "stage": "dissim", "primary": primary_hash(cfg) }))
}

fn evaluator_hash(cfg: &ExperimentConfig, mode: AssemblyMode) -> String {
    let n = cfg.normalized();
    let upstream = match mode {
        AssemblyMode::DBiqa => dissim_hash(cfg),
        AssemblyMode::ManiqaAblation => dataset_hash(cfg),
    };
    digest(&json!({
        "stage": "evaluator",
        "mode": mode,
        "upstream": upstream,
        "split": n.split,
        "prep": n.prep,
        "model": n.evaluator.model,
        "train": n.evaluator.train,
        "init_seed": n.evaluator.init_seed,
    }))
}

fn results_hash(cfg: &ExperimentConfig, mode: AssemblyMode) -> String {
    digest(&json!({ "stage": "results", "evaluator": evaluator_hash(cfg, mode) }))
}

fn provenance(cfg: &ExperimentConfig, stage: &str, hash: String, seed: u64, upstream: &[(&str, String)]) -> Provenance {
    Provenance {
        stage: stage.to_string(),
        hash,
        config_hash: digest(&cfg.normalized()),
        seed,
        version: VERSION.to_string(),
        upstream: upstream.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

fn up_to_date(dir: &Path, stage: &str, hash: &str) -> Result<bool, PipelineError> {
    Ok(Provenance::read(dir)?.is_some_and(|p| p.stage == stage && p.hash == hash))
}

/// Center crop and resample to the working resolution.
pub fn prep_image(img: &Image, prep: &PrepConfig) -> Image {
    img.crop_center(prep.crop_fraction).resize_bilinear(prep.work_size, prep.work_size)
}

fn condition_name(row: &ManifestRow) -> String {
    format!("d{:03}_v{:03}", (row.dose_fraction * 100.0).round() as u32, row.n_views)
}

fn map_rows<T: Send, F>(rows: &[ManifestRow], parallel: bool, f: F) -> Result<Vec<T>, PipelineError>
where
    F: Fn(usize, &ManifestRow) -> Result<T, PipelineError> + Sync,
{
    if parallel {
        rows.par_iter().enumerate().map(|(i, r)| f(i, r)).collect()
    } else {
        rows.iter().enumerate().map(|(i, r)| f(i, r)).collect()
    }
}

/// Dataset rows with their split tags, after checking the dataset matches the config.
fn open_dataset(cfg: &ExperimentConfig, layout: &Layout) -> Result<(Dataset, Vec<SplitTag>), PipelineError> {
    Provenance::require(&layout.dataset(), "dataset", &dataset_hash(cfg))?;
    let ds = Dataset::open(&layout.dataset())?;
    let split = cfg.phantom_split();
    let tags = ds
        .rows
        .iter()
        .map(|r| {
            phantom_index(&r.id)
                .and_then(|p| split.get(p).copied())
                .ok_or_else(|| PipelineError::Mismatch(format!("manifest id {} outside the configured phantoms", r.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ds, tags))
}

pub fn simulate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<ManifestRow>, PipelineError> {
    let rows = build_dataset(&cfg.sim, &layout.dataset())?;
    provenance(cfg, "dataset", dataset_hash(cfg), cfg.sim.seed, &[]).write(&layout.dataset())?;
    log::info!("simulated {} images from {} phantoms", rows.len(), cfg.sim.n_phantoms);
    Ok(rows)
}

/// Resumable training state: a checkpoint with optimiser moments plus the trace so far.
fn load_state<T: for<'de> Deserialize<'de>>(
    dir: &Path,
    hash: &str,
    store: &mut crate::numerics::ParamStore<f32>,
) -> Result<Option<(usize, Vec<T>)>, PipelineError> {
    let path = dir.join(STATE);
    if !path.exists() {
        return Ok(None);
    }
    let ckpt = checkpoint::load(&path)?;
    if ckpt.header.spec.get("hash").and_then(|h| h.as_str()) != Some(hash) {
        log::warn!("ignoring stale training state in {}", dir.display());
        return Ok(None);
    }
    checkpoint::restore_into(&ckpt, store)?;
    let mut trace: Vec<T> = read_csv(&dir.join(STATE_TRACE))?;
    trace.truncate(ckpt.header.step);
    Ok(Some((ckpt.header.step, trace)))
}

fn save_state<T: Serialize>(
    dir: &Path,
    kind: &str,
    spec: serde_json::Value,
    store: &crate::numerics::ParamStore<f32>,
    step: usize,
    trace: &[T],
) -> Result<(), PipelineError> {
    write_csv(&dir.join(STATE_TRACE), trace)?;
    checkpoint::save(&dir.join(STATE), kind, spec, store, step, true)?;
    Ok(())
}

fn clear_state(dir: &Path) -> Result<(), PipelineError> {
    for f in [STATE, STATE_TRACE] {
        let p = dir.join(f);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    Ok(())
}

fn ddpm_pairs(cfg: &ExperimentConfig, ds: &Dataset, tags: &[SplitTag]) -> Result<Vec<ImagePair>, PipelineError> {
    let mut refs: HashMap<&str, Image> = HashMap::new();
    let mut pairs = Vec::new();
    for (row, tag) in ds.rows.iter().zip(tags) {
        if *tag != SplitTag::Train {
            continue;
        }
        if !refs.contains_key(row.reference_path.as_str()) {
            refs.insert(&row.reference_path, prep_image(&ds.load_image(&row.reference_path)?, &cfg.prep));
        }
        pairs.push(ImagePair {
            target: refs[row.reference_path.as_str()].clone(),
            condition: prep_image(&ds.load_image(&row.path)?, &cfg.prep),
        });
    }
    Ok(pairs)
}

pub fn train_ddpm_stage(
    cfg: &ExperimentConfig,
    layout: &Layout,
    opts: RunOptions,
) -> Result<StageStatus, PipelineError> {
    let (dir, hash) = (layout.ddpm(), ddpm_hash(cfg));
    if up_to_date(&dir, "ddpm", &hash)? {
        return Ok(StageStatus::UpToDate);
    }
    let (ds, tags) = open_dataset(cfg, layout)?;
    let pairs = ddpm_pairs(cfg, &ds, &tags)?;
    let sched = cfg.schedule()?;
    let spec = json!({ "hash": hash, "denoiser": cfg.ddpm.denoiser });
    let mut model = TinyUnet::<f32>::new(cfg.ddpm.denoiser.clone(), cfg.ddpm.init_seed)?;
    if dir.join(super::provenance::FILE).exists() {
        fs::remove_file(dir.join(super::provenance::FILE))?;
    }
    fs::create_dir_all(&dir)?;
    let (mut done, mut trace): (usize, Vec<LossRecord>) =
        load_state(&dir, &hash, model.params_mut())?.unwrap_or_default();
    let total = cfg.ddpm.train.iters;
    let mut budget = opts.stop_after.unwrap_or(usize::MAX);
    if done > 0 {
        log::info!("resuming DDPM training at iteration {done}");
    }
    while done < total {
        if budget == 0 {
            return Ok(StageStatus::Paused { done, total });
        }
        let chunk = cfg.ddpm.checkpoint_every.min(total - done).min(budget);
        let tc = crate::diffusion::TrainConfig { iters: chunk, parallel: opts.parallel, ..cfg.ddpm.train.clone() };
        let recs = train_ddpm(&mut model, &pairs, &sched, &tc, done)?;
        let mean = recs.iter().map(|r| r.loss).sum::<f64>() / recs.len() as f64;
        trace.extend(recs);
        done += chunk;
        budget -= chunk;
        log::info!("ddpm iteration {done}/{total}: mean loss {mean:.5}");
        save_state(&dir, "tiny-unet", spec.clone(), model.params(), done, &trace)?;
    }
    checkpoint::save(&dir.join(MODEL), "tiny-unet", spec, model.params(), total, false)?;
    write_csv(&dir.join("loss.csv"), &trace)?;
    provenance(cfg, "ddpm", hash, cfg.ddpm.train.seed, &[("dataset", dataset_hash(cfg))]).write(&dir)?;
    clear_state(&dir)?;
    Ok(StageStatus::Completed)
}

fn load_ddpm(cfg: &ExperimentConfig, layout: &Layout) -> Result<TinyUnet<f32>, PipelineError> {
    let hash = ddpm_hash(cfg);
    Provenance::require(&layout.ddpm(), "ddpm", &hash)?;
    let ckpt = checkpoint::load(&layout.ddpm().join(MODEL))?;
    if ckpt.header.spec.get("hash").and_then(|h| h.as_str()) != Some(hash.as_str()) {
        return Err(PipelineError::Mismatch("DDPM checkpoint does not match its provenance".into()));
    }
    let mut model = TinyUnet::<f32>::new(cfg.ddpm.denoiser.clone(), cfg.ddpm.init_seed)?;
    checkpoint::restore_into(&ckpt, model.params_mut())?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SsimRow {
    id: String,
    split: SplitTag,
    dose_fraction: f64,
    n_views: usize,
    ssim_distorted: f64,
    ssim_primary: f64,
}

/// Mean SSIM to the reference per condition, before and after primary-content inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSsim {
    pub split: SplitTag,
    pub dose_fraction: f64,
    pub n_views: usize,
    pub n: usize,
    pub ssim_distorted: f64,
    pub ssim_primary: f64,
}

impl ConditionSsim {
    pub fn read(layout: &Layout) -> Result<Vec<Self>, PipelineError> {
        read_csv(&layout.primary().join("by_condition.csv"))
    }
}

fn by_condition(rows: &[SsimRow]) -> Vec<ConditionSsim> {
    let mut out: Vec<ConditionSsim> = Vec::new();
    for split in [SplitTag::Train, SplitTag::Test] {
        for r in rows.iter().filter(|r| r.split == split) {
            let entry = match out
                .iter_mut()
                .find(|c| c.split == split && c.dose_fraction == r.dose_fraction && c.n_views == r.n_views)
            {
                Some(e) => e,
                None => {
                    out.push(ConditionSsim {
                        split,
                        dose_fraction: r.dose_fraction,
                        n_views: r.n_views,
                        n: 0,
                        ssim_distorted: 0.0,
                        ssim_primary: 0.0,
                    });
                    out.last_mut().expect("just pushed")
                }
            };
            entry.n += 1;
            entry.ssim_distorted += r.ssim_distorted;
            entry.ssim_primary += r.ssim_primary;
        }
    }
    for c in &mut out {
        c.ssim_distorted /= c.n as f64;
        c.ssim_primary /= c.n as f64;
    }
    out
}

/// Samples primary content for every image. Finished images survive an
/// interruption and are reused when the stage is rerun with the same settings.
pub fn infer_primary(cfg: &ExperimentConfig, layout: &Layout, opts: RunOptions) -> Result<StageStatus, PipelineError> {
    let (dir, hash) = (layout.primary(), primary_hash(cfg));
    if up_to_date(&dir, "primary", &hash)? {
        return Ok(StageStatus::UpToDate);
    }
    let model = load_ddpm(cfg, layout)?;
    let (ds, tags) = open_dataset(cfg, layout)?;
    let sched = cfg.schedule()?;
    let marker = dir.join(IN_PROGRESS);
    let resumable = fs::read_to_string(&marker).is_ok_and(|h| h == hash);
    if !resumable && dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(dir.join("images"))?;
    atomic_write(&marker, hash.as_bytes())?;
    let total = ds.rows.len();
    let rows = map_rows(&ds.rows, opts.parallel, |i, row| {
        let distorted = prep_image(&ds.load_image(&row.path)?, &cfg.prep);
        let reference = prep_image(&ds.load_image(&row.reference_path)?, &cfg.prep);
        let path = dir.join("images").join(format!("{}.ctiq", row.id));
        let primary = match read_ctiq(&path) {
            Ok(mut planes) if resumable && planes.len() == 1 => planes.remove(0),
            _ => {
                let p = sample_primary_image(&model, &distorted, &sched, derive(cfg.ddpm.sample_seed, i as u64))?;
                write_ctiq(&path, &[&p])?;
                if (i + 1) % 100 == 0 {
                    log::info!("primary content {}/{total}", i + 1);
                }
                p
            }
        };
        Ok(SsimRow {
            id: row.id.clone(),
            split: tags[i],
            dose_fraction: row.dose_fraction,
            n_views: row.n_views,
            ssim_distorted: mean_ssim(&distorted, &reference)?,
            ssim_primary: mean_ssim(&primary, &reference)?,
        })
    })?;
    write_csv(&dir.join("ssim.csv"), &rows)?;
    write_csv(&dir.join("by_condition.csv"), &by_condition(&rows))?;
    provenance(cfg, "primary", hash, cfg.ddpm.sample_seed, &[("ddpm", ddpm_hash(cfg))]).write(&dir)?;
    fs::remove_file(marker)?;
    Ok(StageStatus::Completed)
}

/// Dissimilarity map and evaluator input `[dmap, d, d]` for every image.
pub fn write_dissim(cfg: &ExperimentConfig, layout: &Layout, opts: RunOptions) -> Result<StageStatus, PipelineError> {
    let (dir, hash) = (layout.dissim(), dissim_hash(cfg));
    if up_to_date(&dir, "dissim", &hash)? {
        return Ok(StageStatus::UpToDate);
    }
    Provenance::require(&layout.primary(), "primary", &primary_hash(cfg))?;
    let (ds, _) = open_dataset(cfg, layout)?;
    let primary_dir = layout.primary().join("images");
    replace_dir(&dir, |tmp| -> Result<(), PipelineError> {
        fs::create_dir_all(tmp.join("inputs"))?;
        map_rows(&ds.rows, opts.parallel, |_, row| {
            let distorted = prep_image(&ds.load_image(&row.path)?, &cfg.prep);
            let primary = read_single(&primary_dir.join(format!("{}.ctiq", row.id)))?;
            let dmap = dissimilarity_map(&distorted, &primary)?;
            let input = assemble_input(&distorted, &dmap, 1.0, cfg.prep.work_size)?;
            let [a, b, c] = &input.channels;
            write_ctiq(&tmp.join("inputs").join(format!("{}.ctiq", row.id)), &[a, b, c])?;
            Ok(())
        })?;
        provenance(cfg, "dissim", hash.clone(), 0, &[("primary", primary_hash(cfg))]).write(tmp)
    })?;
    Ok(StageStatus::Completed)
}

fn read_single(path: &Path) -> Result<Image, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingUpstream(path.display().to_string()));
    }
    let mut planes = read_ctiq(path)?;
    if planes.len() != 1 {
        return Err(PipelineError::Mismatch(format!("{}: expected 1 plane, found {}", path.display(), planes.len())));
    }
    Ok(planes.remove(0))
}

struct EvalData {
    rows: Vec<ManifestRow>,
    tags: Vec<SplitTag>,
    inputs: Vec<LabeledInput>,
}

fn evaluator_data(
    cfg: &ExperimentConfig,
    layout: &Layout,
    mode: AssemblyMode,
    parallel: bool,
) -> Result<EvalData, PipelineError> {
    let (ds, tags) = open_dataset(cfg, layout)?;
    if mode == AssemblyMode::DBiqa {
        Provenance::require(&layout.dissim(), "dissim", &dissim_hash(cfg))?;
    }
    let inputs_dir = layout.dissim().join("inputs");
    let inputs = map_rows(&ds.rows, parallel, |_, row| {
        let input = match mode {
            AssemblyMode::DBiqa => {
                let path = inputs_dir.join(format!("{}.ctiq", row.id));
                if !path.exists() {
                    return Err(PipelineError::MissingUpstream(path.display().to_string()));
                }
                let planes = read_ctiq(&path)?;
                let channels: [Image; 3] = planes
                    .try_into()
                    .map_err(|_| PipelineError::Mismatch(format!("{}: expected 3 planes", path.display())))?;
                MultiChannelInput { channels }
            }
            AssemblyMode::ManiqaAblation => {
                assemble_ablation_input(&ds.load_image(&row.path)?, cfg.prep.crop_fraction, cfg.prep.work_size)?
            }
        };
        Ok(LabeledInput { chw: input.to_chw(), label: row.proxy_mos })
    })?;
    Ok(EvalData { rows: ds.rows, tags, inputs })
}

fn select(data: &EvalData, tag: SplitTag) -> Vec<LabeledInput> {
    data.inputs.iter().zip(&data.tags).filter(|(_, t)| **t == tag).map(|(x, _)| x.clone()).collect()
}

pub fn train_evaluator_stage(
    cfg: &ExperimentConfig,
    layout: &Layout,
    mode: AssemblyMode,
    opts: RunOptions,
) -> Result<StageStatus, PipelineError> {
    let (dir, hash) = (layout.evaluator(mode), evaluator_hash(cfg, mode));
    if up_to_date(&dir, "evaluator", &hash)? {
        return Ok(StageStatus::UpToDate);
    }
    let data = evaluator_data(cfg, layout, mode, opts.parallel)?;
    let (train, val) = (select(&data, SplitTag::Train), select(&data, SplitTag::Test));
    let spec = json!({ "hash": hash, "mode": mode, "model": cfg.evaluator.model });
    let mut model = Evaluator::<f32>::new(cfg.evaluator.model.clone(), cfg.evaluator.init_seed)?;
    if dir.join(super::provenance::FILE).exists() {
        fs::remove_file(dir.join(super::provenance::FILE))?;
    }
    fs::create_dir_all(&dir)?;
    let (mut done, mut trace): (usize, Vec<EpochRecord>) =
        load_state(&dir, &hash, model.params_mut())?.unwrap_or_default();
    let tc = crate::evaluator::EvalTrainConfig { parallel: opts.parallel, ..cfg.evaluator.train.clone() };
    let total = tc.epochs;
    let mut budget = opts.stop_after.unwrap_or(usize::MAX);
    while done < total {
        if budget == 0 {
            return Ok(StageStatus::Paused { done, total });
        }
        let chunk = cfg.evaluator.checkpoint_every.min(total - done).min(budget);
        trace.extend(train_evaluator_epochs(&mut model, &train, &val, &tc, done..done + chunk)?);
        done += chunk;
        budget -= chunk;
        save_state(&dir, "evaluator", spec.clone(), model.params(), done, &trace)?;
    }
    checkpoint::save(&dir.join(MODEL), "evaluator", spec, model.params(), total, false)?;
    write_csv(&dir.join("epochs.csv"), &trace)?;
    let upstream = match mode {
        AssemblyMode::DBiqa => ("dissim", dissim_hash(cfg)),
        AssemblyMode::ManiqaAblation => ("dataset", dataset_hash(cfg)),
    };
    provenance(cfg, "evaluator", hash, cfg.evaluator.train.seed, &[upstream]).write(&dir)?;
    clear_state(&dir)?;
    Ok(StageStatus::Completed)
}

/// Scores both splits with the trained evaluator and writes predictions,
/// per-split summaries and scatter files.
pub fn evaluate(
    cfg: &ExperimentConfig,
    layout: &Layout,
    mode: AssemblyMode,
    opts: RunOptions,
) -> Result<Vec<SplitSummary>, PipelineError> {
    let hash = evaluator_hash(cfg, mode);
    Provenance::require(&layout.evaluator(mode), "evaluator", &hash)?;
    let ckpt = checkpoint::load(&layout.evaluator(mode).join(MODEL))?;
    if ckpt.header.spec.get("hash").and_then(|h| h.as_str()) != Some(hash.as_str()) {
        return Err(PipelineError::Mismatch("evaluator checkpoint does not match its provenance".into()));
    }
    let mut model = Evaluator::<f32>::new(cfg.evaluator.model.clone(), cfg.evaluator.init_seed)?;
    checkpoint::restore_into(&ckpt, model.params_mut())?;
    let data = evaluator_data(cfg, layout, mode, opts.parallel)?;
    let inputs: Vec<&[f32]> = data.inputs.iter().map(|x| x.chw.as_slice()).collect();
    let preds = predict_all(&model, &inputs, opts.parallel)?;
    let records: Vec<QualityRecord> = data
        .rows
        .iter()
        .zip(&data.tags)
        .zip(preds)
        .map(|((row, tag), p)| QualityRecord {
            image_id: row.id.clone(),
            condition: condition_name(row),
            proxy_mos: row.proxy_mos,
            predicted_score: p,
            split_tag: *tag,
        })
        .collect();
    for r in &records {
        r.validate()?;
    }
    let method = mode_name(mode);
    let summaries = vec![
        SplitSummary::from_records(method, SplitTag::Train, &records)?,
        SplitSummary::from_records(method, SplitTag::Test, &records)?,
    ];
    replace_dir(&layout.results(mode), |tmp| -> Result<(), PipelineError> {
        write_csv(&tmp.join("predictions.csv"), &records)?;
        write_csv(&tmp.join("summary.csv"), &summaries)?;
        write_scatter(&tmp.join("scatter_train.dat"), &records, SplitTag::Train)?;
        write_scatter(&tmp.join("scatter_test.dat"), &records, SplitTag::Test)?;
        provenance(cfg, "results", results_hash(cfg, mode), 0, &[("evaluator", hash.clone())]).write(tmp)
    })?;
    Ok(summaries)
}

/// Collects every evaluated method into the method × metric table.
pub fn metrics_table(layout: &Layout) -> Result<Vec<SplitSummary>, PipelineError> {
    let mut all = Vec::new();
    for mode in [AssemblyMode::DBiqa, AssemblyMode::ManiqaAblation] {
        let path = layout.results(mode).join("summary.csv");
        if path.exists() {
            all.extend(super::read_summaries(&path)?);
        }
    }
    if all.is_empty() {
        return Err(PipelineError::MissingUpstream(format!(
            "no summaries under {}",
            layout.root.join("results").display()
        )));
    }
    write_method_table(&layout.table(), &all)?;
    Ok(all)
}

/// Every stage for one assembly mode, in order.
pub fn run_all(
    cfg: &ExperimentConfig,
    layout: &Layout,
    mode: AssemblyMode,
    opts: RunOptions,
) -> Result<Vec<SplitSummary>, PipelineError> {
    if !up_to_date(&layout.dataset(), "dataset", &dataset_hash(cfg))? {
        simulate(cfg, layout)?;
    }
    if mode == AssemblyMode::DBiqa {
        train_ddpm_stage(cfg, layout, opts)?;
        infer_primary(cfg, layout, opts)?;
        write_dissim(cfg, layout, opts)?;
    }
    train_evaluator_stage(cfg, layout, mode, opts)?;
    evaluate(cfg, layout, mode, opts)
}
