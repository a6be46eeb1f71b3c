use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use local_style::cli::{self, command, effective_config};
use local_style::config::{RunConfig, KEYS, SEG_ENDPOINT_ENV, VLM_ENDPOINT_ENV};
use local_style::engine::read_trace;
use local_style::eval::read_records;
use local_style::imaging::{load_image, load_mask, save_mask, BinaryMask};
use proptest::prelude::*;
use serde_json::Value;

const N: u32 = 32;
const BIN: &str = env!("CARGO_BIN_EXE_local-style");
const SMALL: &[&str] = &[
    "--resolution",
    "32",
    "--iterations",
    "2",
    "--patch-size",
    "8",
    "--patch-count",
    "2",
    "--content-resolution",
    "32",
];

fn scene(dir: &Path) -> PathBuf {
    let img = RgbImage::from_fn(N, N, |x, y| {
        if (8..24).contains(&x) && (10..26).contains(&y) {
            Rgb([200, 40, 30])
        } else {
            Rgb([30 + (x * 3) as u8, 120, 200 - y as u8])
        }
    });
    let p = dir.join("scene.png");
    img.save(&p).unwrap();
    p
}

fn object_mask() -> BinaryMask {
    BinaryMask::from_fn(N as usize, N as usize, |y, x| (8..24).contains(&x) && (10..26).contains(&y)).unwrap()
}

fn fixture(dir: &Path, rows: &[(&str, &str)]) -> PathBuf {
    let p = dir.join("fixture.jsonl");
    let text: String = rows
        .iter()
        .map(|(prompt, reply)| serde_json::json!({"prompt": prompt, "response_text": reply}).to_string() + "\n")
        .collect();
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove(VLM_ENDPOINT_ENV).env_remove(SEG_ENDPOINT_ENV).env_remove("RUST_LOG");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn args<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).chain(tail).copied().collect()
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const CUP: &str = "apply mosaic tiles style to the cup in the image";
const WALL: &str = "apply watercolor style to the wall in the image";
const CUP_REPLY: &str = "[0.2, 0.25, 0.8, 0.85] \"mosaic tiles\"";

#[test]
fn stylize_writes_outputs_and_keeps_background() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let fx = fixture(dir.path(), &[(CUP, CUP_REPLY)]);
    let out = dir.path().join("out");
    let (img_s, fx_s, out_s) = (img.to_str().unwrap(), fx.to_str().unwrap(), out.to_str().unwrap());
    let a = args(
        &["stylize", "--image", img_s, "--prompt", CUP, "--fixture", fx_s],
        &["--output-dir", out_s],
    );
    let o = run(&a, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("region 0: \"mosaic tiles\""), "{stdout}");

    let original = load_image(&img, 32).unwrap();
    let styled = load_image(out.join("output.png"), 32).unwrap();
    let mask = load_mask(out.join("region0_mask.png"), 32, 32).unwrap();
    assert_eq!(styled.max_abs_diff_where(&original, &mask, false), 0.0);
    assert_eq!(read_trace(out.join("region0_trace.jsonl")).unwrap().len(), 2);

    let side = json(out.join("sidecar.json"));
    assert_eq!(side["prompts"], serde_json::json!([CUP]));
    assert_eq!(side["regions"][0]["style_phrase"], "mosaic tiles");
    assert_eq!(side["regions"][0]["mask_checksum"], mask.checksum());
    let m = command().try_get_matches_from(std::iter::once("local-style").chain(a.iter().copied())).unwrap();
    let cfg = effective_config(m.subcommand().unwrap().1, |_| None).unwrap();
    assert_eq!(side["run_config"], serde_json::to_value(&cfg).unwrap());
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let fx = fixture(dir.path(), &[(CUP, CUP_REPLY)]);
    let out = dir.path().join("out");
    let (img_s, fx_s, out_s) = (img.to_str().unwrap(), fx.to_str().unwrap(), out.to_str().unwrap());
    let a = args(
        &["stylize", "--image", img_s, "--prompt", CUP, "--fixture", fx_s],
        &["--output-dir", out_s, "--seed", "11"],
    );
    let files = ["sidecar.json", "region0_trace.jsonl", "output.png"];
    assert!(run(&a, &[]).status.success());
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    assert!(run(&a, &[]).status.success());
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&std::fs::read(out.join(f)).unwrap(), bytes, "{f}");
    }
    assert_eq!(json(out.join("sidecar.json"))["regions"][0]["seeds"]["network"], 11);
}

#[test]
fn prompts_run_in_flag_order() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let fx = fixture(
        dir.path(),
        &[(CUP, CUP_REPLY), (WALL, "[0.0, 0.0, 1.0, 0.3] \"watercolor\"")],
    );
    let out = dir.path().join("out");
    let (img_s, fx_s, out_s) = (img.to_str().unwrap(), fx.to_str().unwrap(), out.to_str().unwrap());
    let a = args(
        &["stylize", "--image", img_s, "--prompt", WALL, "--prompt", CUP, "--fixture", fx_s],
        &["--output-dir", out_s, "--seed", "5", "--segmenter", "box"],
    );
    let o = run(&a, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side = json(out.join("sidecar.json"));
    assert_eq!(side["prompts"], serde_json::json!([WALL, CUP]));
    assert_eq!(side["regions"][0]["style_phrase"], "watercolor");
    assert_eq!(side["regions"][1]["style_phrase"], "mosaic tiles");
    assert_eq!(side["regions"][0]["config"]["seed"], 5);
    assert_eq!(side["regions"][1]["config"]["seed"], 6);
    assert!(out.join("region1_trace.jsonl").is_file());
}

#[test]
fn mask_override_skips_the_vlm() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let mask_path = dir.path().join("mask.png");
    save_mask(&object_mask(), &mask_path).unwrap();
    let out = dir.path().join("out");
    let (img_s, m_s, out_s) = (img.to_str().unwrap(), mask_path.to_str().unwrap(), out.to_str().unwrap());
    let a = args(&["stylize", "--image", img_s, "--prompt", CUP, "--mask", m_s], &["--output-dir", out_s]);
    let o = run(&a, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_mask(out.join("region0_mask.png"), 32, 32).unwrap(), object_mask());
    assert_eq!(json(out.join("sidecar.json"))["regions"][0]["bbox"], serde_json::json!({"x0": 8, "y0": 10, "x1": 24, "y1": 26}));

    let two = args(
        &["stylize", "--image", img_s, "--prompt", CUP, "--prompt", WALL, "--mask", m_s],
        &["--output-dir", out_s],
    );
    assert_eq!(run(&two, &[]).status.code(), Some(cli::EXIT_USAGE));
    let free = args(&["stylize", "--image", img_s, "--prompt", "make it shiny", "--mask", m_s], &["--output-dir", out_s]);
    assert_eq!(run(&free, &[]).status.code(), Some(cli::EXIT_USAGE));
}

#[test]
fn ground_outputs_and_parse_failure() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let fx = fixture(dir.path(), &[(CUP, CUP_REPLY), (WALL, "I am not sure what you mean.")]);
    let out = dir.path().join("out");
    let (img_s, fx_s, out_s) = (img.to_str().unwrap(), fx.to_str().unwrap(), out.to_str().unwrap());
    let base = ["--fixture", fx_s, "--resolution", "32", "--output-dir", out_s];

    let mut a = vec!["ground", "--image", img_s, "--prompt", CUP];
    a.extend(base);
    let o = run(&a, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g = json(out.join("grounding.json"));
    assert_eq!(g["style"], "mosaic tiles");
    assert_eq!(g["region"], "the cup");
    assert_eq!(g["raw_response"], CUP_REPLY);
    let mask = load_mask(out.join("mask.png"), 32, 32).unwrap();
    let b = local_style::imaging::tight_bbox(&mask).unwrap();
    assert_eq!(g["box"], serde_json::to_value(b).unwrap());
    assert_eq!(g["prompt_box"], serde_json::json!({"x0": 6, "y0": 8, "x1": 26, "y1": 28}));

    let mut a = vec!["ground", "--image", img_s, "--prompt", WALL];
    a.extend(base);
    let o = run(&a, &[]);
    assert_eq!(o.status.code(), Some(cli::EXIT_PARSE));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("I am not sure what you mean."), "{stderr}");
    assert!(stderr.contains("[stage: parse]"), "{stderr}");
    assert_eq!(std::fs::read_to_string(out.join("vlm_raw.txt")).unwrap(), "I am not sure what you mean.");
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let img_s = img.to_str().unwrap();
    let missing = dir.path().join("nope.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["eval", "--manifest", missing.to_str().unwrap()],
        vec!["eval", "--manifest", missing.to_str().unwrap(), "--scores-only"],
        vec!["stylize", "--image", img_s],
        vec!["stylize", "--image", img_s, "--prompt", CUP, "--colour", "red"],
        vec!["stylize", "--image", img_s, "--prompt", CUP, "--iterations", "many"],
        vec!["stylize", "--image", img_s, "--prompt", CUP, "--resolution", "30"],
        vec!["stylize", "--image", img_s, "--prompt", CUP, "--resolution", "32"],
        vec!["ground", "--image", img_s, "--prompt", CUP, "--segmenter", "http"],
        vec!["frobnicate"],
    ];
    for c in cases {
        let o = run(&c, &[]);
        assert_eq!(o.status.code(), Some(cli::EXIT_USAGE), "{c:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(run(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(run(&["--version"], &[]).status.code(), Some(0));
}

#[test]
fn pipeline_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"junk").unwrap();
    let fx = fixture(dir.path(), &[(CUP, CUP_REPLY)]);
    let out = dir.path().join("out");
    let a = args(
        &["stylize", "--image", bad.to_str().unwrap(), "--prompt", CUP, "--fixture", fx.to_str().unwrap()],
        &["--output-dir", out.to_str().unwrap()],
    );
    assert_eq!(run(&a, &[]).status.code(), Some(cli::EXIT_PIPELINE));
}

#[test]
fn eval_stylizes_then_rescores() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    save_mask(&object_mask(), dir.path().join("mask.png")).unwrap();
    let manifest = dir.path().join("manifest.json");
    std::fs::write(
        &manifest,
        serde_json::json!({"entries": [
            {"id": "cup", "image_path": "scene.png", "prompt": CUP, "mask_path": "mask.png"},
            {"image_path": img, "prompt": WALL, "mask_path": "mask.png"},
        ]})
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("run");
    let (m_s, out_s) = (manifest.to_str().unwrap(), out.to_str().unwrap());
    let o = run(&args(&["eval", "--manifest", m_s], &["--output-dir", out_s]), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 of 2 entries scored"));
    let records = read_records(out.join("records.jsonl")).unwrap();
    assert_eq!(records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["cup", "entry001"]);
    assert!(records.iter().all(|r| r.background_max_abs_diff == 0.0));
    let report = json(out.join("report.json"));
    let mean = records.iter().map(|r| r.clip_score).sum::<f64>() / 2.0;
    assert!((report["clip_score"]["mean"].as_f64().unwrap() - mean).abs() < 1e-9);
    assert!(out.join("grids/cup.png").is_file());
    assert!(out.join("records.csv").is_file());

    let rescored = dir.path().join("rescored");
    let o = run(
        &args(
            &["eval", "--manifest", m_s, "--scores-only", "--outputs", out_s],
            &["--output-dir", rescored.to_str().unwrap()],
        ),
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let again = read_records(rescored.join("records.jsonl")).unwrap();
    let enc = local_style::encoders::EncoderBundle::desk(0).unwrap();
    for (a, b) in records.iter().zip(&again) {
        assert_eq!(a.clip_score_baseline, b.clip_score_baseline);
        let saved = load_image(out.join(format!("{}.png", a.id)), 32).unwrap();
        let want = local_style::eval::masked_clip_score(&saved, &object_mask(), &a.style_phrase, &enc).unwrap();
        assert_eq!(b.clip_score, want);
        assert!((a.clip_score - b.clip_score).abs() < 1.0);
    }
}

fn pool(key: &str) -> &'static [&'static str] {
    match key {
        "lambda_dir" | "lambda_patch" | "lambda_content" => &["0.5", "2", "100"],
        "lambda_tv" => &["0", "0.002"],
        "patch_count" => &["1", "8"],
        "patch_size" => &["4", "64"],
        "resolution" => &["64", "256"],
        "learning_rate" => &["0.001", "1e-4"],
        "iterations" => &["1", "5"],
        "seed" => &["0", "42"],
        "source_text" => &["a Photo", "a picture"],
        "content_resolution" => &["none", "112"],
        "augment" => &["true", "false"],
        "vlm_endpoint" | "seg_endpoint" => &["http://file/", "none", "http://flag/"],
        "segmenter" => &["auto", "box", "contrast"],
        "box_format" => &["xyxy", "yxyx", "cxcywh"],
        "timeout_secs" => &["5", "60"],
        "output_dir" => &["o1", "o2"],
        "verbosity" => &["0", "1"],
        "encoder_seed" => &["3", "4"],
        "vgg_weights" => &["none", "w.safetensors"],
        "workers" => &["1", "2"],
        other => panic!("no pool for {other}"),
    }
}

type Layer = Vec<Option<usize>>;

fn layer() -> impl Strategy<Value = Layer> {
    proptest::collection::vec(proptest::option::weighted(0.3, 0usize..3), KEYS.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn effective_config_layers_defaults_env_file_flags(
        file in layer(),
        flags in layer(),
        env_vlm in proptest::option::of("http://env-[a-z]{1,4}/"),
        env_seg in proptest::option::of("http://env-[a-z]{1,4}/"),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let pick = |l: &Layer, i: usize| l[i].map(|j| pool(KEYS[i])[j % pool(KEYS[i]).len()]);
        let mut text = String::from("# generated\n");
        let mut argv = vec!["local-style".to_string(), "ground".into(), "--image".into(), "x.png".into(), "--prompt".into(), "p".into()];
        for (i, key) in KEYS.iter().enumerate() {
            if let Some(v) = pick(&file, i) {
                text.push_str(&format!("{key} = \"{v}\"\n"));
            }
            if let Some(v) = pick(&flags, i) {
                argv.push(format!("--{}", key.replace('_', "-")));
                argv.push(v.to_string());
            }
        }
        let conf = dir.path().join("run.conf");
        std::fs::write(&conf, text).unwrap();
        argv.push("--config".into());
        argv.push(conf.to_str().unwrap().into());
        let env = |k: &str| match k {
            VLM_ENDPOINT_ENV => env_vlm.clone(),
            SEG_ENDPOINT_ENV => env_seg.clone(),
            _ => None,
        };
        let m = command().try_get_matches_from(&argv).unwrap();
        let got = effective_config(m.subcommand().unwrap().1, env).unwrap();

        // Oracle: per key, the highest layer that mentions it wins.
        let mut want = RunConfig::default();
        for (i, key) in KEYS.iter().enumerate() {
            let from_env = match *key {
                "vlm_endpoint" => env_vlm.as_deref(),
                "seg_endpoint" => env_seg.as_deref(),
                _ => None,
            };
            if let Some(v) = pick(&flags, i).or(pick(&file, i)).or(from_env) {
                want.set(key, v).unwrap();
            }
        }
        prop_assert_eq!(&got, &want);
        prop_assert_eq!(serde_json::to_value(&got).unwrap(), serde_json::to_value(&want).unwrap());
    }
}
