//! Masked-crop CLIP scoring and the manifest-driven benchmark runner.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::encoders::EncoderBundle;
use crate::engine::{write_json, EngineConfig, RegionStylizer};
use crate::error::{Error, Result};
use crate::grounding::{
    ground_detailed, ground_with_mask, BoxFormat, SegmentationBackend, StyleDirective, VlmBackend,
};
use crate::imaging::{
    apply_mask, crop_resize, load_image, load_mask, save_image, tight_bbox, BinaryMask,
    ImageTensor,
};
use crate::losses::cosine;

/// `100 · cos(E_I(crop_B(image ⊙ M)), E_T(style))` with `B` the tight box of `M`.
pub fn masked_clip_score(
    image: &ImageTensor,
    mask: &BinaryMask,
    style: &str,
    enc: &EncoderBundle,
) -> Result<f64> {
    let bbox = tight_bbox(mask)?;
    let crop = crop_resize(&apply_mask(image, mask)?, &bbox, enc.image.input_size())?;
    let x = enc.image.pixel_norm().apply(&crop.to_tensor(DType::F64, &Device::Cpu)?)?;
    let e_i = enc.image.encode(&x)?;
    let e_t = Tensor::from_vec(enc.text.encode_text(style)?, enc.text.embed_dim(), &Device::Cpu)?;
    Ok(100.0 * cosine(&e_i, &e_t)?)
}

/// One image/prompt pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image_path: PathBuf,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

/// JSON document `{"entries": [...]}`; relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub entries: Vec<ManifestEntry>,
}

impl BenchmarkManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: BenchmarkManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut manifest.entries {
            if e.image_path.is_relative() {
                e.image_path = base.join(&e.image_path);
            }
            if let Some(m) = &mut e.mask_path {
                if m.is_relative() {
                    *m = base.join(&*m);
                }
            }
        }
        Ok(manifest)
    }

    /// Entry ids, defaulting to `entry000`, `entry001`, ...
    pub fn ids(&self) -> Vec<String> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| e.id.clone().unwrap_or_else(|| format!("entry{i:03}")))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub id: String,
    pub prompt: String,
    pub style_phrase: String,
    pub clip_score: f64,
    pub clip_score_baseline: f64,
    pub background_max_abs_diff: f64,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 with fewer than two records.
    pub stddev: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, stddev }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total: usize,
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<EntryFailure>,
    pub clip_score: Aggregate,
    pub clip_score_baseline: Aggregate,
    /// Entries whose output scores above the original crop.
    pub improved: usize,
}

impl EvaluationReport {
    pub fn from_parts(total: usize, records: Vec<EvaluationRecord>, failures: Vec<EntryFailure>) -> Self {
        let scores: Vec<f64> = records.iter().map(|r| r.clip_score).collect();
        let base: Vec<f64> = records.iter().map(|r| r.clip_score_baseline).collect();
        Self {
            total,
            improved: records.iter().filter(|r| r.clip_score > r.clip_score_baseline).count(),
            clip_score: Aggregate::of(&scores),
            clip_score_baseline: Aggregate::of(&base),
            records,
            failures,
        }
    }
}

/// Where the region of each entry comes from.
#[derive(Clone, Default)]
pub struct GroundingBackends {
    pub vlm: Option<Arc<dyn VlmBackend>>,
    pub seg: Option<Arc<dyn SegmentationBackend>>,
    pub format: BoxFormat,
}

/// How outputs are produced.
pub enum OutputSource<'a> {
    /// Stylize each entry.
    Stylize(&'a (dyn RegionStylizer + Sync)),
    /// Score `<dir>/<id>.png` produced elsewhere.
    Precomputed(PathBuf),
}

pub struct BenchmarkOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
}

struct EntryOutcome {
    record: EvaluationRecord,
    output: ImageTensor,
    original: ImageTensor,
    mask: BinaryMask,
}

fn run_entry(
    entry: &ManifestEntry,
    id: &str,
    cfg: &EngineConfig,
    backends: &GroundingBackends,
    source: &OutputSource,
    enc: &EncoderBundle,
) -> Result<EntryOutcome> {
    let start = Instant::now();
    let image = load_image(&entry.image_path, cfg.resolution)?;
    let directive = StyleDirective::new(entry.prompt.clone())?;
    let task = match &entry.mask_path {
        Some(p) => {
            let mask = load_mask(p, image.height(), image.width())?;
            ground_with_mask(&image, &directive, backends.vlm.as_deref(), &mask, backends.format)?.task
        }
        None => match (&backends.vlm, &backends.seg) {
            (Some(vlm), Some(seg)) => {
                ground_detailed(&image, &directive, vlm.as_ref(), seg.as_ref(), backends.format)?.task
            }
            _ => {
                return Err(Error::Config(
                    "entry has no mask and no VLM/segmentation backends are configured".into(),
                ))
            }
        },
    };
    let output = match source {
        OutputSource::Stylize(stylizer) => stylizer.stylize(&image, &task, cfg)?.image,
        OutputSource::Precomputed(dir) => load_image(dir.join(format!("{id}.png")), cfg.resolution)?,
    };
    let record = EvaluationRecord {
        id: id.to_string(),
        prompt: entry.prompt.clone(),
        style_phrase: task.style_phrase().to_string(),
        clip_score: masked_clip_score(&output, task.mask(), task.style_phrase(), enc)?,
        clip_score_baseline: masked_clip_score(&image, task.mask(), task.style_phrase(), enc)?,
        background_max_abs_diff: output.max_abs_diff_where(&image, task.mask(), false) as f64,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(EntryOutcome {
        record,
        output,
        original: image,
        mask: task.mask().clone(),
    })
}

/// Original, output and mask side by side.
pub fn comparison_grid(original: &ImageTensor, output: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    let (h, w) = (original.height(), original.width());
    if !original.same_shape(output) || !original.same_shape(mask) {
        return Err(Error::InvalidInput("grid panels differ in size".into()));
    }
    ImageTensor::from_fn(h, 3 * w, |c, y, x| match x / w {
        0 => original.get(c, y, x),
        1 => output.get(c, y, x - w),
        _ => mask.get(y, x - 2 * w) as u8 as f32,
    })
}

/// Runs every manifest entry, writing outputs, grids and reports into `out_dir`.
/// Failed entries are recorded and skipped; more than half failing is a run error.
pub fn run_benchmark(
    manifest: &BenchmarkManifest,
    cfg: &EngineConfig,
    backends: &GroundingBackends,
    source: &OutputSource,
    enc: &EncoderBundle,
    options: &BenchmarkOptions,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let out = &options.out_dir;
    let grids = out.join("grids");
    for dir in [out, &grids] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ids = manifest.ids();
    let n = manifest.entries.len();
    let slots: Vec<Mutex<Option<std::result::Result<EvaluationRecord, String>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= n {
            break;
        }
        let id = &ids[i];
        let outcome = run_entry(&manifest.entries[i], id, cfg, backends, source, enc).and_then(|o| {
            if matches!(source, OutputSource::Stylize(_)) {
                save_image(&o.output, out.join(format!("{id}.png")))?;
            }
            save_image(
                &comparison_grid(&o.original, &o.output, &o.mask)?,
                grids.join(format!("{id}.png")),
            )?;
            Ok(o.record)
        });
        if let Err(e) = &outcome {
            log::warn!("entry {id} failed: {e}");
        }
        *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome.map_err(|e| e.to_string()));
    };
    let workers = options.workers.clamp(1, n.max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (slot, id) in slots.into_iter().zip(&ids) {
        match slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
            Some(Ok(r)) => records.push(r),
            Some(Err(error)) => failures.push(EntryFailure {
                id: id.clone(),
                error,
            }),
            None => failures.push(EntryFailure {
                id: id.clone(),
                error: "entry was not processed".into(),
            }),
        }
    }
    let report = EvaluationReport::from_parts(n, records, failures);
    write_reports(&report, out)?;
    if 2 * report.failures.len() > n {
        return Err(Error::RunFailed {
            failed: report.failures.len(),
            total: n,
        });
    }
    Ok(report)
}

/// `records.csv`, `records.jsonl`, `failures.jsonl` and `report.json`.
pub fn write_reports(report: &EvaluationReport, out_dir: &Path) -> Result<()> {
    let csv_path = out_dir.join("records.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::Config(format!("{}: {e}", csv_path.display())))?;
    for r in &report.records {
        w.serialize(r)
            .map_err(|e| Error::Config(format!("{}: {e}", csv_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_jsonl(&out_dir.join("records.jsonl"), &report.records)?;
    write_jsonl(&out_dir.join("failures.jsonl"), &report.failures)?;
    write_json(out_dir.join("report.json"), report)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EvaluationRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
