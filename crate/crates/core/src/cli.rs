//! `local-style` command line: `stylize`, `ground` and `eval`.
//!
//! Every [`RunConfig`] key is also a flag (`iterations` is `--iterations`,
//! `lambda_dir` is `--lambda-dir`). Exit codes: 0 success, 1 pipeline error,
//! 2 unparseable VLM reply, 64 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::Serialize;

use crate::config::{read_pairs, RunConfig, SegmenterKind, KEYS};
use crate::encoders::vgg::VggVariant;
use crate::encoders::{EncoderBundle, VggFeatures};
use crate::engine::{stylize_multi, write_json, write_trace, Sidecar};
use crate::error::Error;
use crate::eval::{
    run_benchmark, BenchmarkManifest, BenchmarkOptions, GroundingBackends, OutputSource,
};
use crate::grounding::{
    ground_detailed, BackendGrounder, BoxFillSegmenter, ContrastSegmenter, FixtureVlm, Grounder,
    HttpSegmenter, HttpVlm, MaskGrounder, SegmentationBackend, StyleDirective, VlmBackend,
};
use crate::imaging::{load_image, load_mask, save_image, save_mask, tight_bbox, BoundingBox, NormalizedBox};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PIPELINE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Failure of one invocation, already mapped to its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Pipeline(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Pipeline(e) if e.is_parse_failure() => EXIT_PARSE,
            CliError::Pipeline(_) => EXIT_PIPELINE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Pipeline(e) => {
                write!(f, "{e}")?;
                if let Some(stage) = e.grounding_stage() {
                    write!(f, " [stage: {stage}]")?;
                }
                Ok(())
            }
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Pipeline(e)
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn config_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("key = value configuration file")];
    for key in KEYS {
        args.push(
            Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .help(format!("overrides `{key}`"))
                .help_heading("Configuration"),
        );
    }
    args
}

fn fixture_arg() -> Arg {
    Arg::new("fixture")
        .long("fixture")
        .value_name("JSONL")
        .value_parser(clap::value_parser!(PathBuf))
        .help("replay recorded VLM transcripts instead of calling an endpoint")
}

fn image_arg() -> Arg {
    Arg::new("image")
        .long("image")
        .value_name("PATH")
        .required(true)
        .value_parser(clap::value_parser!(PathBuf))
}

pub fn command() -> Command {
    let stylize = Command::new("stylize")
        .about("Stylize the regions named by one or more prompts, in flag order")
        .arg(image_arg())
        .arg(
            Arg::new("prompt")
                .long("prompt")
                .value_name("TEXT")
                .required(true)
                .action(ArgAction::Append),
        )
        .arg(
            Arg::new("mask")
                .long("mask")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .help("region mask overriding the box and segmentation stages (single prompt only)"),
        )
        .arg(fixture_arg())
        .args(config_args());
    let ground = Command::new("ground")
        .about("Run grounding only and write the mask, box and style phrase")
        .arg(image_arg())
        .arg(Arg::new("prompt").long("prompt").value_name("TEXT").required(true))
        .arg(fixture_arg())
        .args(config_args());
    let eval = Command::new("eval")
        .about("Score a benchmark manifest")
        .arg(
            Arg::new("manifest")
                .long("manifest")
                .value_name("JSON")
                .required(true)
                .value_parser(clap::value_parser!(PathBuf)),
        )
        .arg(
            Arg::new("scores-only")
                .long("scores-only")
                .action(ArgAction::SetTrue)
                .requires("outputs")
                .help("score precomputed outputs instead of stylizing"),
        )
        .arg(
            Arg::new("outputs")
                .long("outputs")
                .value_name("DIR")
                .value_parser(clap::value_parser!(PathBuf))
                .help("directory holding <id>.png outputs for --scores-only"),
        )
        .arg(fixture_arg())
        .args(config_args());
    Command::new("local-style")
        .about("Text-conditioned style transfer restricted to grounded image regions")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(stylize)
        .subcommand(ground)
        .subcommand(eval)
}

/// Key/value pairs given as flags, in key order.
pub fn flag_pairs(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect()
}

/// Defaults, then environment, then `--config`, then flags.
pub fn effective_config(m: &ArgMatches, env: impl Fn(&str) -> Option<String>) -> Result<RunConfig, CliError> {
    let file = match m.get_one::<PathBuf>("config") {
        Some(p) => read_pairs(p).map_err(usage)?,
        None => Vec::new(),
    };
    let cfg = RunConfig::merge(env, &file, &flag_pairs(m)).map_err(usage)?;
    cfg.engine.validate().map_err(usage)?;
    Ok(cfg)
}

fn timeout(cfg: &RunConfig) -> Duration {
    Duration::from_secs(cfg.timeout_secs)
}

fn build_vlm(m: &ArgMatches, cfg: &RunConfig) -> Result<Option<Arc<dyn VlmBackend>>, CliError> {
    if let Some(path) = m.get_one::<PathBuf>("fixture") {
        return Ok(Some(Arc::new(FixtureVlm::from_jsonl(path).map_err(usage)?)));
    }
    Ok(cfg
        .vlm_endpoint
        .as_ref()
        .map(|e| Arc::new(HttpVlm::new(e.clone(), timeout(cfg))) as Arc<dyn VlmBackend>))
}

pub fn build_segmenter(cfg: &RunConfig) -> Result<Arc<dyn SegmentationBackend>, CliError> {
    Ok(match (cfg.segmenter, &cfg.seg_endpoint) {
        (SegmenterKind::Auto | SegmenterKind::Http, Some(e)) => Arc::new(HttpSegmenter::new(e.clone(), timeout(cfg))),
        (SegmenterKind::Http, None) => {
            return Err(CliError::Usage("segmenter = http needs seg_endpoint".into()));
        }
        (SegmenterKind::Auto | SegmenterKind::Contrast, _) => Arc::new(ContrastSegmenter::default()),
        (SegmenterKind::Box, _) => Arc::new(BoxFillSegmenter),
    })
}

pub fn build_encoders(cfg: &RunConfig) -> Result<EncoderBundle, CliError> {
    let enc = EncoderBundle::desk(cfg.encoder_seed)?;
    Ok(match &cfg.vgg_weights {
        Some(p) => enc.with_features(Arc::new(
            VggFeatures::from_safetensors(p, VggVariant::Vgg16).map_err(usage)?,
        )),
        None => enc,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Pipeline(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

#[derive(Serialize)]
struct StylizeSidecar<'a> {
    run_config: &'a RunConfig,
    image: &'a Path,
    prompts: &'a [String],
    regions: Vec<Sidecar<'a>>,
}

fn cmd_stylize(m: &ArgMatches, cfg: &RunConfig) -> Result<(), CliError> {
    let image_path = m.get_one::<PathBuf>("image").expect("required");
    let prompts: Vec<String> = m.get_many::<String>("prompt").expect("required").cloned().collect();
    let mask_path = m.get_one::<PathBuf>("mask");
    if mask_path.is_some() && prompts.len() != 1 {
        return Err(CliError::Usage("--mask pairs with exactly one --prompt".into()));
    }
    let directives = prompts
        .iter()
        .map(|p| StyleDirective::new(p.clone()))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(usage)?;
    let vlm = build_vlm(m, cfg)?;
    if mask_path.is_some() && vlm.is_none() {
        if let Some(d) = directives.iter().find(|d| d.template_phrases().is_none()) {
            return Err(CliError::Usage(format!(
                "{:?} does not read \"apply <style> style to <region>\"; pass --fixture or --vlm-endpoint",
                d.raw_text()
            )));
        }
    }
    let image = load_image(image_path, cfg.engine.resolution)?;
    let grounder: Box<dyn Grounder> = match mask_path {
        Some(p) => Box::new(MaskGrounder {
            vlm,
            mask: load_mask(p, image.height(), image.width())?,
            format: cfg.box_format,
        }),
        None => Box::new(BackendGrounder {
            vlm: vlm.ok_or_else(|| {
                CliError::Usage(format!(
                    "no VLM backend: pass --fixture, --vlm-endpoint or set {}",
                    crate::config::VLM_ENDPOINT_ENV
                ))
            })?,
            seg: build_segmenter(cfg)?,
            format: cfg.box_format,
        }),
    };
    let enc = build_encoders(cfg)?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let result = match stylize_multi(&image, &directives, grounder.as_ref(), &cfg.engine, &enc) {
        Ok(r) => r,
        Err(e) => {
            if let Error::Region { partial: Some(p), .. } = &e {
                save_image(p, out.join("partial.png"))?;
                eprintln!("wrote {}", out.join("partial.png").display());
            }
            if let Error::Divergence { trace, .. } = e.root() {
                write_trace(out.join("diverged_trace.jsonl"), trace)?;
            }
            return Err(e.into());
        }
    };
    save_image(&result.image, out.join("output.png"))?;
    for (i, r) in result.regions.iter().enumerate() {
        write_trace(out.join(format!("region{i}_trace.jsonl")), &r.loss_trace)?;
        save_mask(r.task.mask(), out.join(format!("region{i}_mask.png")))?;
        println!(
            "region {i}: {:?} in {:?}: loss {:.4} -> {:.4} over {} iterations (dir {:.4}, patch {:.4}, content {:.4}, tv {:.4})",
            r.task.style_phrase(),
            r.task.region_phrase(),
            r.initial_loss.total,
            r.final_loss.total,
            r.loss_trace.len(),
            r.final_loss.dir,
            r.final_loss.patch,
            r.final_loss.content,
            r.final_loss.tv,
        );
    }
    write_json(
        out.join("sidecar.json"),
        &StylizeSidecar {
            run_config: cfg,
            image: image_path,
            prompts: &prompts,
            regions: result.regions.iter().map(|r| r.sidecar()).collect(),
        },
    )?;
    println!("wrote {}", out.join("output.png").display());
    Ok(())
}

#[derive(Serialize)]
struct GroundingJson<'a> {
    region: &'a str,
    style: &'a str,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    prompt_box: Option<BoundingBox>,
    normalized_box: Option<NormalizedBox>,
    raw_response: Option<&'a str>,
}

fn cmd_ground(m: &ArgMatches, cfg: &RunConfig) -> Result<(), CliError> {
    let image_path = m.get_one::<PathBuf>("image").expect("required");
    let prompt = m.get_one::<String>("prompt").expect("required");
    let directive = StyleDirective::new(prompt.clone()).map_err(usage)?;
    let vlm = build_vlm(m, cfg)?.ok_or_else(|| CliError::Usage("no VLM backend: pass --fixture or --vlm-endpoint".into()))?;
    let seg = build_segmenter(cfg)?;
    let image = load_image(image_path, cfg.engine.resolution)?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let report = match ground_detailed(&image, &directive, vlm.as_ref(), seg.as_ref(), cfg.box_format) {
        Ok(r) => r,
        Err(e) => {
            if let Error::Parse { raw, .. } = e.root() {
                let path = out.join("vlm_raw.txt");
                std::fs::write(&path, raw).map_err(|err| Error::Io { path: path.clone(), source: err })?;
                eprintln!("raw VLM reply (also in {}):\n{raw}", path.display());
            }
            return Err(e.into());
        }
    };
    let task = &report.task;
    save_mask(task.mask(), out.join("mask.png"))?;
    write_json(
        out.join("grounding.json"),
        &GroundingJson {
            region: task.region_phrase(),
            style: task.style_phrase(),
            bbox: tight_bbox(task.mask())?,
            prompt_box: report.prompt_box,
            normalized_box: report.normalized_box,
            raw_response: report.raw_response.as_deref(),
        },
    )?;
    let b = task.bbox();
    println!(
        "box [{}, {}, {}, {}] style {:?} ({} mask pixels)",
        b.x0,
        b.y0,
        b.x1,
        b.y1,
        task.style_phrase(),
        task.mask().count()
    );
    Ok(())
}

fn cmd_eval(m: &ArgMatches, cfg: &RunConfig) -> Result<(), CliError> {
    let manifest_path = m.get_one::<PathBuf>("manifest").expect("required");
    if !manifest_path.is_file() {
        return Err(CliError::Usage(format!("manifest {} does not exist", manifest_path.display())));
    }
    let manifest = BenchmarkManifest::load(manifest_path).map_err(usage)?;
    let backends = GroundingBackends {
        vlm: build_vlm(m, cfg)?,
        seg: Some(build_segmenter(cfg)?),
        format: cfg.box_format,
    };
    let enc = build_encoders(cfg)?;
    let optimizer = crate::engine::Optimizer { enc: &enc };
    let source = if m.get_flag("scores-only") {
        OutputSource::Precomputed(m.get_one::<PathBuf>("outputs").expect("required by --scores-only").clone())
    } else {
        OutputSource::Stylize(&optimizer)
    };
    let options = BenchmarkOptions {
        out_dir: cfg.output_dir.clone(),
        workers: cfg.workers,
    };
    let report = run_benchmark(&manifest, &cfg.engine, &backends, &source, &enc, &options)?;
    for f in &report.failures {
        eprintln!("entry {} failed: {}", f.id, f.error);
    }
    println!(
        "{} of {} entries scored; clip score {:.3} ± {:.3} (original crop {:.3} ± {:.3}); improved on {}",
        report.records.len(),
        report.total,
        report.clip_score.mean,
        report.clip_score.stddev,
        report.clip_score_baseline.mean,
        report.clip_score_baseline.stddev,
        report.improved,
    );
    Ok(())
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn execute<I, T>(args: I, env: impl Fn(&str) -> Option<String>) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            CliError::Usage(String::new())
        }
        _ => CliError::Usage(e.render().to_string()),
    })?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = effective_config(sub, env)?;
    init_logging(cfg.verbosity);
    match name {
        "stylize" => cmd_stylize(sub, &cfg),
        "ground" => cmd_ground(sub, &cfg),
        "eval" => cmd_eval(sub, &cfg),
        other => Err(CliError::Usage(format!("unknown subcommand {other}"))),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, env: impl Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match execute(args, env) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) if m.is_empty() => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
