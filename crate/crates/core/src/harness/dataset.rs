//! Synthetic shapes corpus: circles, squares, triangles and crosses on a
//! noisy background, with tight boxes and per-pixel class maps, stored in
//! the `SWDATA01` container.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::derive_seed;
use crate::error::{Error, Result};
use crate::mtl::{BBox, GroundTruth, GtObject};
use crate::tensor::Tensor;

pub const DATA_MAGIC: &[u8; 8] = b"SWDATA01";
pub const SHAPE_NAMES: [&str; 4] = ["circle", "square", "triangle", "cross"];

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub image_size: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub num_classes: usize,
    pub max_objects: usize,
    /// Object side range in pixels.
    pub min_extent: usize,
    pub max_extent: usize,
    /// Peak amplitude (0..=255) of the uniform background noise.
    pub noise_level: u8,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 7,
            image_size: 64,
            num_train: 2000,
            num_test: 500,
            num_classes: 4,
            max_objects: 3,
            min_extent: 10,
            max_extent: 28,
            noise_level: 60,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > SHAPE_NAMES.len() {
            return Err(Error::config(format!(
                "{} classes requested, {} shape types available",
                self.num_classes,
                SHAPE_NAMES.len()
            )));
        }
        if self.max_objects == 0 || self.min_extent < 3 || self.min_extent > self.max_extent {
            return Err(Error::config("invalid object count or extent range"));
        }
        if self.max_extent + 2 > self.image_size {
            return Err(Error::config("objects do not fit in the image"));
        }
        Ok(())
    }
}

/// Images (RGB, channel-major u8) with annotations; the first `num_train`
/// records form the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub num_classes: usize,
    pub num_train: usize,
    pub images: Vec<Vec<u8>>,
    pub truths: Vec<GroundTruth>,
}

/// Pixel-center membership test of shape `class` (1-based) with center
/// (cx, cy) and side `e`.
fn inside(class: usize, dx: f32, dy: f32, e: f32) -> bool {
    let r = e / 2.0;
    match class {
        1 => dx * dx + dy * dy <= r * r,
        2 => dx.abs() <= r && dy.abs() <= r,
        // Apex up, base at the bottom.
        3 => dy.abs() <= r && dx.abs() <= 0.5 * (dy + r),
        _ => {
            let arm = r / 3.0;
            (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
        }
    }
}

fn generate_one(cfg: &DatasetConfig, seed: u64) -> (Vec<u8>, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.image_size;
    let mut img: Vec<u8> = (0..3 * n * n).map(|_| rng.random_range(0..=cfg.noise_level)).collect();
    let mut mask = vec![0u8; n * n];
    let count = rng.random_range(1..=cfg.max_objects);
    let mut placed: Vec<(usize, usize, usize)> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..count {
        // Rejection sampling keeps object footprints (plus a 1 px margin) disjoint.
        for _attempt in 0..50 {
            let e = rng.random_range(cfg.min_extent..=cfg.max_extent);
            let x0 = rng.random_range(0..=n - e);
            let y0 = rng.random_range(0..=n - e);
            let clash = placed
                .iter()
                .any(|&(px, py, pe)| x0 < px + pe + 1 && px < x0 + e + 1 && y0 < py + pe + 1 && py < y0 + e + 1);
            if clash {
                continue;
            }
            placed.push((x0, y0, e));
            let class = rng.random_range(1..=cfg.num_classes);
            let color: [u8; 3] = std::array::from_fn(|_| rng.random_range(110..=255));
            let (cx, cy) = (x0 as f32 + e as f32 / 2.0, y0 as f32 + e as f32 / 2.0);
            let (mut bx0, mut by0, mut bx1, mut by1) = (n, n, 0, 0);
            for y in y0..y0 + e {
                for x in x0..x0 + e {
                    if inside(class, x as f32 + 0.5 - cx, y as f32 + 0.5 - cy, e as f32) {
                        mask[y * n + x] = class as u8;
                        for (c, &v) in color.iter().enumerate() {
                            let jitter = rng.random_range(0..=cfg.noise_level / 4);
                            img[(c * n + y) * n + x] = v.saturating_sub(jitter);
                        }
                        (bx0, by0, bx1, by1) = (bx0.min(x), by0.min(y), bx1.max(x + 1), by1.max(y + 1));
                    }
                }
            }
            let s = n as f32;
            objects.push(GtObject {
                class_id: class,
                bbox: BBox::from_corners(bx0 as f32 / s, by0 as f32 / s, bx1 as f32 / s, by1 as f32 / s),
            });
            break;
        }
    }
    (img, GroundTruth { objects, mask })
}

impl Dataset {
    /// Deterministic per seed; image `i` depends only on (seed, i).
    pub fn generate(cfg: &DatasetConfig) -> Result<Dataset> {
        cfg.validate()?;
        let total = cfg.num_train + cfg.num_test;
        let records = crate::parallel::map_indexed(total, |i| generate_one(cfg, derive_seed(cfg.seed, i as u64)));
        let (images, truths) = records.into_iter().unzip();
        Ok(Dataset {
            image_size: cfg.image_size,
            num_classes: cfg.num_classes,
            num_train: cfg.num_train,
            images,
            truths,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.num_train
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.num_train..self.len()
    }

    /// Network input batch (N, 3, H, W), pixels scaled to [−0.5, 0.5].
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let n = self.image_size;
        let mut data = Vec::with_capacity(indices.len() * 3 * n * n);
        for &i in indices {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| Error::dim(format!("image {i} of {}", self.len())))?;
            data.extend(img.iter().map(|&v| v as f32 / 255.0 - 0.5));
        }
        Tensor::new(&[indices.len(), 3, n, n], data)
    }

    pub fn truths_for(&self, indices: &[usize]) -> Vec<GroundTruth> {
        indices.iter().map(|&i| self.truths[i].clone()).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.image_size;
        w.write_all(DATA_MAGIC)?;
        for v in [self.len(), self.num_train, n, self.num_classes] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for (img, gt) in self.images.iter().zip(&self.truths) {
            w.write_all(img)?;
            w.write_all(&[gt.objects.len() as u8])?;
            for o in &gt.objects {
                w.write_all(&[o.class_id as u8])?;
                for v in [o.bbox.cx, o.bbox.cy, o.bbox.w, o.bbox.h] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.write_all(&gt.mask)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Dataset> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let mut take = |k: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(k)
                .filter(|&e| e <= buf.len())
                .ok_or_else(|| Error::format("dataset container truncated"))?;
            let s = &buf[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != DATA_MAGIC {
            return Err(Error::format("not a SWDATA01 container"));
        }
        let mut u32s = [0usize; 4];
        for v in &mut u32s {
            *v = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let [count, num_train, n, num_classes] = u32s;
        if num_train > count || n == 0 || num_classes == 0 || num_classes > 254 {
            return Err(Error::format("invalid dataset header"));
        }
        let mut images = Vec::with_capacity(count);
        let mut truths = Vec::with_capacity(count);
        for _ in 0..count {
            images.push(take(3 * n * n)?.to_vec());
            let k = take(1)?[0] as usize;
            let mut objects = Vec::with_capacity(k);
            for _ in 0..k {
                let class_id = take(1)?[0] as usize;
                let mut v = [0f32; 4];
                for x in &mut v {
                    *x = f32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
                }
                objects.push(GtObject {
                    class_id,
                    bbox: BBox::new(v[0], v[1], v[2], v[3]),
                });
            }
            let gt = GroundTruth {
                objects,
                mask: take(n * n)?.to_vec(),
            };
            gt.validate(n, num_classes).map_err(|e| Error::format(e.to_string()))?;
            truths.push(gt);
        }
        if take(1).is_ok() {
            return Err(Error::format("trailing bytes in dataset container"));
        }
        Ok(Dataset {
            image_size: n,
            num_classes,
            num_train,
            images,
            truths,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Self::read(std::io::BufReader::new(fs::File::open(path)?))
    }
}
