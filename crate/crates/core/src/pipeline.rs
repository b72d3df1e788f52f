//! Dataset runner: support-side prototypes are built once, then every query
//! goes through heatmap, prior selection, refinement and evaluation on a
//! worker pool. A failing query is logged and scored 0 without stopping
//! the run.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::{self, export_candidates_csv, GasConfig};
use crate::metrics::{self, write_json, write_results_csv, EvalRecord};
use crate::pir::{self, export_trace_json, PirConfig};
use crate::rwpm::{self, export_scores_csv, Prototype, RwpmConfig};
use crate::segmenter::{BridgeBackend, SegmenterBackend};
use crate::superpixel::{pool_labels_to_grid, pool_mask_to_grid, slic_segment, SlicConfig};
use crate::tensor_io::{
    load_mask, load_npy_tensor, load_rgb, resize_bilinear, save_heatmap, save_heatmap_png, save_mask,
    BinaryMask, FeatureGrid, Heatmap, DEFAULT_MASK_THRESHOLD,
};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// Which stages run. Turning one off gives the ablation variant: no
/// background term in the heatmap, uniform prototype weights, a single fixed
/// threshold instead of the sweep, or the prior returned without refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modules {
    pub background_suppression: bool,
    pub rwpm: bool,
    pub gas: bool,
    pub pir: bool,
}

impl Default for Modules {
    fn default() -> Self {
        Self {
            background_suppression: true,
            rwpm: true,
            gas: true,
            pir: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Bg,
    Rwpm,
    Gas,
    Pir,
}

impl Module {
    pub fn name(self) -> &'static str {
        match self {
            Module::Bg => "bg",
            Module::Rwpm => "rwpm",
            Module::Gas => "gas",
            Module::Pir => "pir",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "bg" => Ok(Module::Bg),
            "rwpm" => Ok(Module::Rwpm),
            "gas" => Ok(Module::Gas),
            "pir" => Ok(Module::Pir),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation module {other:?} (expected bg, rwpm, gas or pir)"
            ))),
        }
    }
}

impl Modules {
    pub fn without(mut self, module: Module) -> Self {
        match module {
            Module::Bg => self.background_suppression = false,
            Module::Rwpm => self.rwpm = false,
            Module::Gas => self.gas = false,
            Module::Pir => self.pir = false,
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub slic: SlicConfig,
    pub rwpm: RwpmConfig,
    pub gas: GasConfig,
    pub pir: PirConfig,
    pub modules: Modules,
    /// Threshold used when the adaptive sweep is switched off.
    pub fixed_tau: f64,
    /// Gray level above which a mask pixel counts as foreground.
    pub mask_threshold: f32,
    pub emit_heatmaps: bool,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            slic: SlicConfig::default(),
            rwpm: RwpmConfig::default(),
            gas: GasConfig::default(),
            pir: PirConfig::default(),
            modules: Modules::default(),
            fixed_tau: 0.7,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            emit_heatmaps: false,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.slic.validate()?;
        self.rwpm.validate()?;
        self.gas.validate()?;
        self.pir.validate()?;
        if !(0.0..=1.0).contains(&self.fixed_tau) {
            return Err(Error::InvalidConfig("fixed_tau must be in [0, 1]".into()));
        }
        if self.gas.a_ref_mode == gas::ARefMode::Fixed && self.gas.a_ref_fixed.is_none() {
            return Err(Error::MissingFixedValue);
        }
        Ok(())
    }
}

/// Where query and support features come from.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    /// `<dir>/<image stem>.npy`.
    Dir(PathBuf),
    Bridge(BridgeBackend),
}

impl FeatureSource {
    fn load(&self, image_id: &str, image_path: &Path) -> Result<FeatureGrid> {
        match self {
            FeatureSource::Dir(dir) => load_npy_tensor(dir.join(format!("{image_id}.npy"))),
            FeatureSource::Bridge(bridge) => bridge.fetch_features(image_id, image_path),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub support_image: PathBuf,
    pub support_mask: PathBuf,
    pub query_dir: PathBuf,
    /// Ground-truth masks named `<image stem>.<ext>`; metrics are skipped without it.
    pub gt_dir: Option<PathBuf>,
    pub features: FeatureSource,
    pub out_dir: PathBuf,
}

impl PipelineInputs {
    fn check_exist(&self) -> Result<()> {
        let mut paths = vec![&self.support_image, &self.support_mask, &self.query_dir];
        if let Some(gt) = &self.gt_dir {
            paths.push(gt);
        }
        if let FeatureSource::Dir(dir) = &self.features {
            paths.push(dir);
        }
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingInput(p.clone())),
            None => Ok(()),
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
}

/// Image files in `dir` as `(stem, path)`, sorted by stem.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && has_image_extension(&path) {
            out.push((stem(&path), path));
        }
    }
    out.sort();
    Ok(out)
}

fn find_image(dir: &Path, image_id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Support-side state, immutable once built and shared by every worker.
#[derive(Debug, Clone)]
pub struct SupportModel {
    pub features: FeatureGrid,
    /// Support mask at image resolution.
    pub mask: BinaryMask,
    /// Support mask pooled onto the feature grid.
    pub grid_mask: BinaryMask,
    /// Prototypes with contrast scored; purity is filled per query.
    pub prototypes: Vec<Prototype>,
}

impl SupportModel {
    pub fn build(
        image: &image::RgbImage,
        mask: BinaryMask,
        features: FeatureGrid,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let dims = (image.height() as usize, image.width() as usize);
        if mask.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "support image {dims:?} vs mask {:?}",
                mask.dims()
            )));
        }
        let features = features.normalize_features();
        let (fh, fw) = (features.height(), features.width());
        let labels = slic_segment(image, &cfg.slic)?;
        let grid_labels = pool_labels_to_grid(&labels, fh, fw)?;
        let grid_mask = pool_mask_to_grid(&mask, fh, fw)?;
        let mut prototypes = rwpm::extract_prototypes(&features, &grid_mask, &grid_labels, &cfg.rwpm)?;
        rwpm::score_contrast(&mut prototypes, &features, &grid_mask)?;
        Ok(Self {
            features,
            mask,
            grid_mask,
            prototypes,
        })
    }

    /// Prototypes weighted for one query, with module toggles applied.
    fn weighted_prototypes(&self, f_q: &FeatureGrid, cfg: &PipelineConfig) -> Result<Vec<Prototype>> {
        let mut protos = self.prototypes.clone();
        rwpm::score_purity(&mut protos, &self.features, f_q, &self.grid_mask, &cfg.rwpm)?;
        if !cfg.modules.rwpm {
            protos.iter_mut().for_each(|p| p.weight = 1.0);
        }
        if !cfg.modules.background_suppression {
            protos.retain(Prototype::is_foreground);
        }
        Ok(protos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub num_queries: usize,
    pub num_failed: usize,
    pub m_iou: Option<f64>,
    pub m_dice: Option<f64>,
    pub m_auc: Option<f64>,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<Failure>,
}

struct QueryOutput {
    prediction: BinaryMask,
    heatmap: Heatmap,
}

struct Query<'a> {
    id: &'a str,
    path: &'a Path,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    inputs: &'a PipelineInputs,
    backend: &'a dyn SegmenterBackend,
    support: &'a SupportModel,
    out: &'a Path,
}

impl Runner<'_> {
    fn process(&self, q: &Query) -> Result<QueryOutput> {
        let cfg = self.cfg;
        let f_q = self.inputs.features.load(q.id, q.path)?.normalize_features();
        if f_q.dim() != self.support.features.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query features have dim {}, support {}",
                f_q.dim(),
                self.support.features.dim()
            )));
        }
        let protos = self.support.weighted_prototypes(&f_q, cfg)?;
        export_scores_csv(self.out.join("scores").join(format!("{}.csv", q.id)), &protos)?;
        let raw = rwpm::aggregate_heatmap(&f_q, &protos, &cfg.rwpm)?;
        let heatmap = rwpm::self_diffuse(&raw, &f_q, cfg.rwpm.diffusion_iters)?;
        if cfg.emit_heatmaps {
            let dir = self.out.join("heatmaps");
            save_heatmap(dir.join(format!("{}.npy", q.id)), &heatmap)?;
            save_heatmap_png(dir.join(format!("{}.png", q.id)), &heatmap)?;
        }

        let mut session = self.backend.open(q.id, q.path)?;
        let (h, w) = session.output_dims();
        let upsampled = resize_bilinear(&heatmap, h, w);
        let a_ref = gas::compute_a_ref(&self.support.mask, h, w, &cfg.gas)?;
        let candidates = if cfg.modules.gas {
            gas::sweep(&upsampled, &cfg.gas, a_ref)
        } else {
            vec![gas::candidate_at(&upsampled, cfg.fixed_tau, &cfg.gas, a_ref)]
        };
        export_candidates_csv(self.out.join("gas").join(format!("{}.csv", q.id)), &candidates)?;
        let prior = gas::pick_best(candidates)?.mask;
        save_mask(self.out.join("priors").join(format!("{}.png", q.id)), &prior)?;

        let prediction = if cfg.modules.pir {
            let (mask, trace) = pir::refine(session.as_mut(), &prior, &cfg.pir)?;
            let trace_dir = self.out.join("traces").join(q.id);
            create_dir(&trace_dir)?;
            let mut files = Vec::new();
            for it in &trace.iterations {
                let name = format!("{}/iter_{}.png", q.id, it.t);
                save_mask(self.out.join("traces").join(&name), &it.mask)?;
                files.push(name);
            }
            export_trace_json(self.out.join("traces").join(format!("{}.json", q.id)), q.id, &trace, &files)?;
            mask
        } else {
            prior
        };
        save_mask(self.out.join("masks").join(format!("{}.png", q.id)), &prediction)?;
        Ok(QueryOutput { prediction, heatmap })
    }

    fn evaluate(&self, q: &Query, out: &QueryOutput) -> Result<Option<EvalRecord>> {
        let Some(gt_dir) = &self.inputs.gt_dir else {
            return Ok(None);
        };
        let gt_path = find_image(gt_dir, q.id)
            .ok_or_else(|| Error::MissingInput(gt_dir.join(format!("{}.png", q.id))))?;
        let gt = load_mask(gt_path, self.cfg.mask_threshold)?;
        metrics::evaluate(q.id, &out.prediction, &gt, Some(&out.heatmap)).map(Some)
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))
}

/// Runs the full pipeline and writes `masks/`, `priors/`, `traces/`, `gas/`,
/// `scores/`, optional `heatmaps/`, `results.csv` and `summary.json` under
/// the output directory.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs,
    backend: &dyn SegmenterBackend,
) -> Result<RunSummary> {
    cfg.validate()?;
    inputs.check_exist()?;
    let queries = list_images(&inputs.query_dir)?;
    if queries.is_empty() {
        return Err(Error::NoQueries(inputs.query_dir.clone()));
    }
    let pool = thread_pool(cfg.workers)?;

    let support = pool.install(|| {
        let image = load_rgb(&inputs.support_image)?;
        let mask = load_mask(&inputs.support_mask, cfg.mask_threshold)?;
        let features = inputs.features.load(&stem(&inputs.support_image), &inputs.support_image)?;
        SupportModel::build(&image, mask, features, cfg)
    })?;
    info!(
        "support: {} prototypes on a {}x{} grid",
        support.prototypes.len(),
        support.features.height(),
        support.features.width()
    );
    run_queries(cfg, inputs, backend, &support, &queries, &pool)
}

fn run_queries(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs,
    backend: &dyn SegmenterBackend,
    support: &SupportModel,
    queries: &[(String, PathBuf)],
    pool: &rayon::ThreadPool,
) -> Result<RunSummary> {
    let out = inputs.out_dir.as_path();
    let mut dirs = vec!["masks", "priors", "traces", "gas", "scores"];
    if cfg.emit_heatmaps {
        dirs.push("heatmaps");
    }
    for d in dirs {
        create_dir(&out.join(d))?;
    }
    let runner = Runner {
        cfg,
        inputs,
        backend,
        support,
        out,
    };

    let outcomes: Vec<(String, Result<Option<EvalRecord>>)> = pool.install(|| {
        queries
            .par_iter()
            .map(|(id, path)| {
                let q = Query { id, path };
                let result = runner.process(&q).and_then(|o| runner.evaluate(&q, &o));
                (id.clone(), result)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(rec) => records.extend(rec),
            Err(e) => {
                warn!("{id}: {e}");
                if inputs.gt_dir.is_some() {
                    records.push(EvalRecord {
                        image_id: id.clone(),
                        iou: 0.0,
                        dice: 0.0,
                        auc_pr: None,
                    });
                }
                failures.push(Failure {
                    image_id: id,
                    error: e.to_string(),
                });
            }
        }
    }
    let means = metrics::aggregate(&records).ok();
    let summary = RunSummary {
        num_queries: queries.len(),
        num_failed: failures.len(),
        m_iou: means.map(|m| m.m_iou),
        m_dice: means.map(|m| m.m_dice),
        m_auc: means.and_then(|m| m.m_auc),
        records,
        failures,
    };
    if inputs.gt_dir.is_some() {
        write_results_csv(out.join("results.csv"), &summary.records)?;
    }
    write_json(out.join("summary.json"), &summary)?;
    if summary.num_failed == summary.num_queries {
        return Err(Error::AllQueriesFailed(summary.num_queries));
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub modules: Modules,
    pub m_iou: Option<f64>,
    pub m_dice: Option<f64>,
    pub m_auc: Option<f64>,
    pub num_failed: usize,
}

/// Configurations compared by an ablation over `toggles`: the configured
/// baseline, one variant per module switched off and, for two or more
/// toggles, all of them off together.
pub fn ablation_variants(base: Modules, toggles: &[Module]) -> Vec<(String, Modules)> {
    let mut out = vec![("full".to_string(), base)];
    for &m in toggles {
        out.push((format!("no_{}", m.name()), base.without(m)));
    }
    if toggles.len() > 1 {
        let all_off = toggles.iter().fold(base, |acc, &m| acc.without(m));
        out.push(("all_off".to_string(), all_off));
    }
    out
}

/// Runs every ablation variant on the same support and queries. Each variant
/// writes its artifacts under `<out>/ablation/<name>/`; the comparison table
/// goes to `<out>/ablation.csv`.
pub fn run_ablation(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs,
    backend: &dyn SegmenterBackend,
    toggles: &[Module],
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    inputs.check_exist()?;
    let queries = list_images(&inputs.query_dir)?;
    if queries.is_empty() {
        return Err(Error::NoQueries(inputs.query_dir.clone()));
    }
    let pool = thread_pool(cfg.workers)?;
    let support = pool.install(|| {
        let image = load_rgb(&inputs.support_image)?;
        let mask = load_mask(&inputs.support_mask, cfg.mask_threshold)?;
        let features = inputs.features.load(&stem(&inputs.support_image), &inputs.support_image)?;
        SupportModel::build(&image, mask, features, cfg)
    })?;

    let mut rows = Vec::new();
    for (name, modules) in ablation_variants(cfg.modules, toggles) {
        let variant_cfg = PipelineConfig {
            modules,
            ..cfg.clone()
        };
        let variant_inputs = PipelineInputs {
            out_dir: inputs.out_dir.join("ablation").join(&name),
            ..inputs.clone()
        };
        let (m_iou, m_dice, m_auc, num_failed) =
            match run_queries(&variant_cfg, &variant_inputs, backend, &support, &queries, &pool) {
                Ok(s) => (s.m_iou, s.m_dice, s.m_auc, s.num_failed),
                Err(Error::AllQueriesFailed(n)) => (Some(0.0), Some(0.0), None, n),
                Err(e) => return Err(e),
            };
        info!("ablation {name}: mIoU {m_iou:?}");
        rows.push(AblationRow {
            name,
            modules,
            m_iou,
            m_dice,
            m_auc,
            num_failed,
        });
    }
    write_ablation_csv(&inputs.out_dir.join("ablation.csv"), &rows)?;
    Ok(rows)
}

#[derive(Serialize)]
struct AblationCsvRow<'a> {
    name: &'a str,
    background_suppression: bool,
    rwpm: bool,
    gas: bool,
    pir: bool,
    m_iou: Option<f64>,
    m_dice: Option<f64>,
    m_auc: Option<f64>,
    num_failed: usize,
}

fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in rows {
        w.serialize(AblationCsvRow {
            name: &r.name,
            background_suppression: r.modules.background_suppression,
            rwpm: r.modules.rwpm,
            gas: r.modules.gas,
            pir: r.modules.pir,
            m_iou: r.m_iou,
            m_dice: r.m_dice,
            m_auc: r.m_auc,
            num_failed: r.num_failed,
        })
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
