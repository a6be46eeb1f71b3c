use std::cell::Cell;

use local_style::encoders::EncoderBundle;
use local_style::engine::*;
use local_style::grounding::{Grounder, RegionStyleTask, StyleDirective};
use local_style::imaging::{composite, BinaryMask, ImageTensor};
use local_style::losses::LossBreakdown;
use local_style::{Error, Result};
use proptest::prelude::*;

fn small_config() -> EngineConfig {
    EngineConfig {
        resolution: 32,
        patch_size: 8,
        patch_count: 4,
        iterations: 3,
        ..EngineConfig::default()
    }
}

fn content(n: usize) -> ImageTensor {
    ImageTensor::from_fn(n, n, |c, y, x| ((x * 5 + y * 3 + c * 11) % 29) as f32 / 28.0).unwrap()
}

/// Maps the directive text to a fixed mask.
struct Lookup(Vec<(&'static str, BinaryMask)>);

impl Grounder for Lookup {
    fn ground(&self, _image: &ImageTensor, d: &StyleDirective) -> Result<RegionStyleTask> {
        match self.0.iter().find(|(t, _)| *t == d.raw_text()) {
            Some((text, mask)) => RegionStyleTask::new(*text, "flat", mask.clone()),
            None => Err(Error::EmptyRegion(format!("nothing matches {:?}", d.raw_text()))),
        }
    }
}

/// Paints the region a constant color keyed on the seed.
struct Paint {
    calls: Cell<usize>,
    fail_at: Option<usize>,
}

impl RegionStylizer for Paint {
    fn stylize(&self, content: &ImageTensor, task: &RegionStyleTask, cfg: &EngineConfig) -> Result<StylizedResult> {
        let call = self.calls.get();
        self.calls.set(call + 1);
        if self.fail_at == Some(call) {
            return Err(Error::Backend("stub failure".into()));
        }
        let v = (cfg.seed % 7) as f32 / 7.0 + 0.05;
        let flat = ImageTensor::filled(content.height(), content.width(), [v, 1.0 - v, 0.5]).unwrap();
        Ok(StylizedResult {
            image: composite(&flat, content, task.mask())?,
            loss_trace: Vec::new(),
            task: task.clone(),
            config: cfg.clone(),
            config_fingerprint: cfg.fingerprint(),
            seeds: RunSeeds::from_seed(cfg.seed),
            initial_loss: LossBreakdown::default(),
            final_loss: LossBreakdown::default(),
        })
    }
}

fn directives(texts: &[&str]) -> Vec<StyleDirective> {
    texts.iter().map(|t| StyleDirective::new(*t).unwrap()).collect()
}

#[test]
fn disjoint_regions_leave_the_rest_untouched() {
    let n = 24;
    let img = content(n);
    let a = BinaryMask::from_fn(n, n, |y, x| y < 8 && x < 10).unwrap();
    let b = BinaryMask::from_fn(n, n, |y, x| y >= 14 && x >= 12).unwrap();
    let union = a.union(&b).unwrap();
    let g = Lookup(vec![("first", a.clone()), ("second", b.clone())]);
    let cfg = EngineConfig { seed: 3, ..small_config() };
    let stub = Paint { calls: Cell::new(0), fail_at: None };
    let out = stylize_multi_with(&img, &directives(&["first", "second"]), &g, &cfg, &stub).unwrap();
    assert_eq!(out.image.max_abs_diff_where(&img, &union, false), 0.0);
    assert_eq!(out.regions.len(), 2);
    assert_eq!(out.regions[0].config.seed, 3);
    assert_eq!(out.regions[1].config.seed, 4);
    let v = |s: u64| (s % 7) as f32 / 7.0 + 0.05;
    assert_eq!(out.image.get(0, 0, 0), v(3));
    assert_eq!(out.image.get(0, n - 1, n - 1), v(4));
}

#[test]
fn overlap_carries_the_second_result() {
    let n = 20;
    let img = content(n);
    let a = BinaryMask::from_fn(n, n, |y, x| (2..12).contains(&y) && (2..12).contains(&x)).unwrap();
    let b = BinaryMask::from_fn(n, n, |y, x| (8..18).contains(&y) && (8..18).contains(&x)).unwrap();
    let g = Lookup(vec![("a", a.clone()), ("b", b.clone())]);
    let stub = Paint { calls: Cell::new(0), fail_at: None };
    let out = stylize_multi_with(&img, &directives(&["a", "b"]), &g, &small_config(), &stub).unwrap();
    let second = &out.regions[1].image;
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                if b.get(y, x) {
                    assert_eq!(out.image.get(c, y, x), second.get(c, y, x));
                } else if a.get(y, x) {
                    assert_eq!(out.image.get(c, y, x), out.regions[0].image.get(c, y, x));
                } else {
                    assert_eq!(out.image.get(c, y, x), img.get(c, y, x));
                }
            }
        }
    }
    assert_ne!(out.image.get(0, 10, 10), out.regions[0].image.get(0, 10, 10));
}

#[test]
fn failure_reports_region_and_partial() {
    let n = 16;
    let img = content(n);
    let a = BinaryMask::from_fn(n, n, |y, _| y < 4).unwrap();
    let g = Lookup(vec![("a", a.clone()), ("b", a)]);
    let stub = Paint { calls: Cell::new(0), fail_at: Some(1) };
    match stylize_multi_with(&img, &directives(&["a", "b"]), &g, &small_config(), &stub) {
        Err(Error::Region { region: 1, partial: Some(p), .. }) => assert_ne!(*p, img),
        other => panic!("{other:?}"),
    }
    let stub = Paint { calls: Cell::new(0), fail_at: None };
    match stylize_multi_with(&img, &directives(&["missing"]), &Lookup(vec![]), &small_config(), &stub) {
        Err(Error::Region { region: 0, partial: None, source }) => {
            assert!(matches!(*source, Error::EmptyRegion(_)))
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(stub.calls.get(), 0);
    assert!(stylize_multi_with(&img, &[], &g, &small_config(), &stub).is_err());
}

fn square_task(n: usize) -> RegionStyleTask {
    let m = BinaryMask::from_fn(n, n, |y, x| (6..26).contains(&y) && (4..22).contains(&x)).unwrap();
    RegionStyleTask::new("the square", "mosaic tiles", m).unwrap()
}

#[test]
fn optimization_is_deterministic_and_seed_sensitive() {
    let enc = EncoderBundle::desk(0).unwrap();
    let img = content(32);
    let task = square_task(32);
    let cfg = small_config();
    let a = optimize_region(&img, &task, &cfg, &enc).unwrap();
    let b = optimize_region(&img, &task, &cfg, &enc).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.image, b.image);
    assert_eq!(a.initial_loss, b.initial_loss);
    assert_eq!(a.loss_trace.len(), cfg.iterations);
    assert_eq!(a.image.max_abs_diff_where(&img, task.mask(), false), 0.0);

    let c = optimize_region(&img, &task, &EngineConfig { seed: 1, ..cfg.clone() }, &enc).unwrap();
    assert_ne!(a.loss_trace, c.loss_trace);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trace.jsonl");
    write_trace(&p, &a.loss_trace).unwrap();
    assert_eq!(read_trace(&p).unwrap(), a.loss_trace);
    let first = std::fs::read(&p).unwrap();
    write_trace(&p, &b.loss_trace).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);
}

#[test]
fn optimizer_rejects_mismatched_inputs() {
    let enc = EncoderBundle::desk(0).unwrap();
    let task = square_task(32);
    let cfg = small_config();
    assert!(matches!(optimize_region(&content(24), &task, &cfg, &enc), Err(Error::InvalidInput(_))));
    let bad = EngineConfig { resolution: 30, ..cfg.clone() };
    assert!(matches!(optimize_region(&content(30), &task, &bad, &enc), Err(Error::Config(_))));
    let zero = EngineConfig { iterations: 0, ..cfg };
    assert!(matches!(optimize_region(&content(32), &task, &zero, &enc), Err(Error::Config(_))));
}

#[test]
fn sidecar_records_provenance() {
    let enc = EncoderBundle::desk(0).unwrap();
    let img = content(32);
    let task = square_task(32);
    let r = optimize_region(&img, &task, &EngineConfig { iterations: 1, ..small_config() }, &enc).unwrap();
    let v = serde_json::to_value(r.sidecar()).unwrap();
    assert_eq!(v["style_phrase"], "mosaic tiles");
    assert_eq!(v["region_phrase"], "the square");
    assert_eq!(v["bbox"], serde_json::to_value(task.bbox()).unwrap());
    assert_eq!(v["mask_checksum"], task.mask().checksum());
    assert_eq!(v["config_fingerprint"], r.config.fingerprint());
    assert_eq!(v["config"]["patch_count"], 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn network_output_stays_in_range(seed in any::<u64>(), data in proptest::collection::vec(0.0f32..=1.0, 3 * 16 * 16)) {
        let net = init_style_network(&StyleNetworkSpec::default(), seed).unwrap();
        let img = ImageTensor::new(16, 16, data).unwrap();
        let out = run_network(&net, &img).unwrap();
        prop_assert_eq!((out.height(), out.width()), (16, 16));
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(run_network(&net, &img).unwrap(), out);
    }
}
