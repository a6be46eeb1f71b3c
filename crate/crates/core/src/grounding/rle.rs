//! Uncompressed COCO run-length encoding: `{"size": [h, w], "counts": [...]}`.
//!
//! Runs are taken in column-major order and alternate background/foreground,
//! starting with background (a mask whose first pixel is set begins with a 0 run).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

impl Rle {
    pub fn encode(mask: &BinaryMask) -> Self {
        let (h, w) = (mask.height(), mask.width());
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0;
        for x in 0..w {
            for y in 0..h {
                let v = mask.get(y, x);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self {
            size: [h, w],
            counts,
        }
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        let [h, w] = self.size;
        let total: usize = self.counts.iter().sum();
        if total != h * w {
            return Err(Error::Backend(format!(
                "RLE counts cover {total} pixels, size is {h}x{w}"
            )));
        }
        let mut data = vec![0u8; h * w];
        let mut i = 0;
        for (k, &run) in self.counts.iter().enumerate() {
            if k % 2 == 1 {
                for j in i..i + run {
                    let (x, y) = (j / h, j % h);
                    data[y * w + x] = 1;
                }
            }
            i += run;
        }
        BinaryMask::new(h, w, data)
    }
}
