//! Synthetic desk suite shared by the integration tests.

#![allow(dead_code)]

use local_style::grounding::{
    ground_detailed, BoxFormat, ContrastSegmenter, FixtureVlm, RegionStyleTask, StyleDirective,
    Transcript,
};
use local_style::imaging::{BinaryMask, ImageTensor};

pub struct DeskCase {
    pub name: &'static str,
    pub image: ImageTensor,
    /// Ground-truth object mask the scene was drawn with.
    pub object: BinaryMask,
    pub prompts: [(&'static str, &'static str, &'static str); 2],
}

fn hash01(x: usize, y: usize, salt: u64) -> f32 {
    let mut h = (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ salt;
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    (h & 0xffff) as f32 / 65535.0
}

fn scene(
    n: usize,
    background: impl Fn(usize, usize) -> [f32; 3],
    inside: impl Fn(usize, usize) -> bool,
    object: impl Fn(usize, usize) -> [f32; 3],
) -> (ImageTensor, BinaryMask) {
    let img = ImageTensor::from_fn(n, n, |c, y, x| {
        let rgb = if inside(y, x) { object(y, x) } else { background(y, x) };
        rgb[c].clamp(0.0, 1.0)
    })
    .unwrap();
    let mask = BinaryMask::from_fn(n, n, inside).unwrap();
    (img, mask)
}

/// Five 512x512 scenes, each with one salient object and two prompts
/// `(directive, region, style)`.
pub fn desk_suite() -> Vec<DeskCase> {
    let n = 512;
    let f = n as f32;
    let mut cases = Vec::new();

    let (image, object) = scene(
        n,
        |y, _| [0.55 + 0.2 * y as f32 / f, 0.7 + 0.1 * y as f32 / f, 0.9],
        |y, x| (x as f32 - 256.0).powi(2) + (y as f32 - 240.0).powi(2) < 130.0f32.powi(2),
        |y, x| [0.85, 0.35 + 0.1 * hash01(x, y, 1), 0.2],
    );
    cases.push(DeskCase {
        name: "orange-disc",
        image,
        object,
        prompts: [
            ("apply Starry Night by Van Gogh style to the orange in the image", "the orange", "Starry Night by Van Gogh"),
            ("apply cubism style to the orange in the image", "the orange", "cubism"),
        ],
    });

    let (image, object) = scene(
        n,
        |y, x| {
            let g = 0.3 + 0.2 * hash01(x / 8, y / 8, 2);
            [g, 0.5 + 0.1 * g, g]
        },
        |y, x| (140..380).contains(&x) && (170..360).contains(&y),
        |y, x| {
            let s = 0.8 - 0.1 * ((x / 16 + y / 16) % 2) as f32;
            [0.2, 0.3, s]
        },
    );
    cases.push(DeskCase {
        name: "blue-box",
        image,
        object,
        prompts: [
            ("apply watercolor style to the box in the image", "the box", "watercolor"),
            ("apply mosaic tiles style to the box in the image", "the box", "mosaic tiles"),
        ],
    });

    let (image, object) = scene(
        n,
        |y, x| {
            let v = 0.45 + 0.1 * ((x as f32 / 20.0).sin() * (y as f32 / 25.0).cos());
            [v, v * 0.9, v * 0.8]
        },
        |y, x| {
            let (dx, dy) = ((x as f32 - 250.0) / 190.0, (y as f32 - 290.0) / 110.0);
            dx * dx + dy * dy < 1.0
        },
        |_, x| [0.1, 0.55 + 0.2 * x as f32 / f, 0.25],
    );
    cases.push(DeskCase {
        name: "green-car",
        image,
        object,
        prompts: [
            ("apply white wool style to the car in the image", "the car", "white wool"),
            ("apply neon lights style to the car in the image", "the car", "neon lights"),
        ],
    });

    let (image, object) = scene(
        n,
        |y, x| {
            let t = 0.15 + 0.1 * hash01(x, y, 4);
            [t, t, 0.2 + t]
        },
        |y, x| {
            let (x, y) = (x as i64, y as i64);
            (y >= 120 && y < 420) && (x - 256).abs() * 300 <= (y - 120) * 150 + 1
        },
        |y, _| [0.95, 0.9 - 0.2 * y as f32 / f, 0.6],
    );
    cases.push(DeskCase {
        name: "yellow-tree",
        image,
        object,
        prompts: [
            ("apply ukiyo-e print style to the tree in the image", "the tree", "ukiyo-e print"),
            ("apply pointillism style to the tree in the image", "the tree", "pointillism"),
        ],
    });

    let (image, object) = scene(
        n,
        |y, x| {
            let s = if ((x / 32) + (y / 32)) % 2 == 0 { 0.85 } else { 0.75 };
            [s, s, s]
        },
        |y, x| {
            let (dx, dy) = (x as f32 - 300.0, y as f32 - 230.0);
            let r = dx.hypot(dy);
            r < 150.0 && r > 50.0
        },
        |y, x| [0.6 + 0.2 * hash01(x, y, 5), 0.1, 0.45],
    );
    cases.push(DeskCase {
        name: "purple-ring",
        image,
        object,
        prompts: [
            ("apply fire and flames style to the ring in the image", "the ring", "fire and flames"),
            ("apply stained glass style to the ring in the image", "the ring", "stained glass"),
        ],
    });
    cases
}

/// Normalized bounding box of a mask, slightly padded, as a VLM reply.
pub fn vlm_reply(mask: &BinaryMask, style: &str) -> String {
    let b = local_style::imaging::tight_bbox(mask).unwrap();
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let pad = 0.03;
    format!(
        "The object is at [{:.3}, {:.3}, {:.3}, {:.3}] and the style is \"{style}\".",
        (b.x0 as f64 / w - pad).max(0.0),
        (b.y0 as f64 / h - pad).max(0.0),
        (b.x1 as f64 / w + pad).min(1.0),
        (b.y1 as f64 / h + pad).min(1.0),
    )
}

/// Grounds prompt `p` of a case through a scripted VLM and the contrast segmenter.
pub fn ground_case(case: &DeskCase, p: usize) -> RegionStyleTask {
    let (directive, _, style) = case.prompts[p];
    let vlm = FixtureVlm::new(vec![Transcript {
        prompt: directive.to_string(),
        response_text: vlm_reply(&case.object, style),
    }]);
    let seg = ContrastSegmenter::default();
    ground_detailed(
        &case.image,
        &StyleDirective::new(directive).unwrap(),
        &vlm,
        &seg,
        BoxFormat::Xyxy,
    )
    .unwrap()
    .task
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut uni) = (0usize, 0usize);
    for (x, y) in a.data().iter().zip(b.data()) {
        inter += (*x != 0 && *y != 0) as usize;
        uni += (*x != 0 || *y != 0) as usize;
    }
    inter as f64 / uni.max(1) as f64
}
