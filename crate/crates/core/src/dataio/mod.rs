//! Datasets: PGM directories and synthetic piecewise-constant phantoms.

pub mod pnm;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng::{self, stream};

pub use pnm::{decode_pnm, encode_pgm, encode_ppm, read_pnm, write_pgm, write_ppm, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub image: Image,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    side: usize,
    items: Vec<DatasetItem>,
    /// Files that could not be read.
    pub skipped: usize,
}

impl Dataset {
    pub fn new(side: usize, items: Vec<DatasetItem>) -> Result<Self> {
        if let Some(bad) = items.iter().find(|it| it.image.side() != side) {
            return Err(Error::invalid(format!("item {} has side {}, expected {side}", bad.id, bad.image.side())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = items.iter().find(|it| !seen.insert(it.id.as_str())) {
            return Err(Error::invalid(format!("duplicate id {}", dup.id)));
        }
        Ok(Self { side, items, skipped: 0 })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn images(&self) -> Vec<Image> {
        self.items.iter().map(|it| it.image.clone()).collect()
    }

    pub fn split_images(&self, split: Split) -> Vec<Image> {
        self.items.iter().filter(|it| it.split == split).map(|it| it.image.clone()).collect()
    }

    /// Seeded assignment: a shuffled `round(train * N)` items become train,
    /// the next `round(val * N)` val, the rest test.
    pub fn assign_splits(&mut self, train: f64, val: f64, seed: u64) -> Result<()> {
        if !(train >= 0.0 && val >= 0.0 && train + val <= 1.0 + 1e-12) {
            return Err(Error::invalid(format!("split fractions must be >= 0 and sum to <= 1, got {train}, {val}")));
        }
        let n = self.items.len();
        let n_train = ((train * n as f64).round() as usize).min(n);
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::seeded(seed, stream::SPLIT));
        for (rank, &i) in order.iter().enumerate() {
            self.items[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(())
    }
}

/// Mean of each 2x2 block; the side must be even.
pub fn downscale2x(img: &Image) -> Result<Image> {
    let s = img.side();
    if s % 2 != 0 {
        return Err(Error::invalid(format!("cannot halve odd side {s}")));
    }
    let h = s / 2;
    let p = img.pixels();
    let out = (0..h * h)
        .map(|k| {
            let (r, c) = (2 * (k / h), 2 * (k % h));
            (p[r * s + c] + p[r * s + c + 1] + p[(r + 1) * s + c] + p[(r + 1) * s + c + 1]) / 4.0
        })
        .collect();
    Image::clamped(h, out)
}

/// Centre-crops a grey raster to the largest `side * 2^k` square that fits,
/// then halves `k` times.
pub fn fit_to_side(raster: &Raster, side: usize) -> Result<Image> {
    if raster.channels != 1 {
        return Err(Error::invalid("expected a single-channel raster"));
    }
    if side == 0 {
        return Err(Error::invalid("side must be positive"));
    }
    let short = raster.width.min(raster.height);
    if short < side {
        return Err(Error::invalid(format!("{}x{} image is smaller than {side}", raster.width, raster.height)));
    }
    let mut crop = side;
    while crop * 2 <= short {
        crop *= 2;
    }
    let (r0, c0) = ((raster.height - crop) / 2, (raster.width - crop) / 2);
    let pixels = (0..crop * crop)
        .map(|k| raster.samples[(r0 + k / crop) * raster.width + c0 + k % crop])
        .collect();
    let mut img = Image::clamped(crop, pixels)?;
    while img.side() > side {
        img = downscale2x(&img)?;
    }
    Ok(img)
}

/// Loads every `.pgm` in `dir` (sorted by name), fits it to `side`, shuffles
/// with `seed`, keeps at most `limit`, and splits 80/10/10.
pub fn load_directory(dir: &Path, side: usize, limit: Option<usize>, seed: u64) -> Result<Dataset> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let mut skipped = 0;
    let mut items = Vec::new();
    for p in &paths {
        match read_pnm(p).and_then(|r| fit_to_side(&r, side)) {
            Ok(image) => items.push(DatasetItem {
                id: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                image,
                split: Split::Train,
            }),
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", p.display());
                skipped += 1;
            }
        }
    }
    items.shuffle(&mut rng::seeded(seed, stream::SHUFFLE));
    if let Some(l) = limit {
        items.truncate(l);
    }
    if items.is_empty() {
        return Err(Error::invalid(format!("no usable PGM images in {}", dir.display())));
    }
    let mut ds = Dataset::new(side, items)?;
    ds.skipped = skipped;
    ds.assign_splits(0.8, 0.1, seed)?;
    Ok(ds)
}

/// Writes an image as 8- or 16-bit PGM.
pub fn save_image_pgm(path: &Path, img: &Image, bits: u8) -> Result<()> {
    write_pgm(path, img.side(), img.side(), img.pixels(), bits)
}

pub fn load_image_pgm(path: &Path) -> Result<Image> {
    let r = read_pnm(path)?;
    if r.channels != 1 || r.width != r.height {
        return Err(Error::invalid(format!("{} is not a square greyscale image", path.display())));
    }
    Image::new(r.width, r.samples)
}

/// One phantom: 2-6 axis-aligned rectangles and ellipses with intensities in
/// [0.1, 1] painted over a zero background.
pub fn phantom<R: Rng>(side: usize, rng: &mut R) -> Result<Image> {
    if side < 8 {
        return Err(Error::invalid(format!("phantoms need side >= 8, got {side}")));
    }
    let s = side as f64;
    let mut px = vec![0.0; side * side];
    for _ in 0..rng.random_range(2..=6) {
        let value = rng.random_range(0.1..=1.0);
        let (cy, cx) = (rng.random_range(0.15..0.85) * s, rng.random_range(0.15..0.85) * s);
        let (ry, rx) = (rng.random_range(0.08..0.35) * s, rng.random_range(0.08..0.35) * s);
        let ellipse = rng.random_bool(0.5);
        for r in 0..side {
            for c in 0..side {
                let (dy, dx) = ((r as f64 + 0.5 - cy) / ry, (c as f64 + 0.5 - cx) / rx);
                let inside = if ellipse { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    px[r * side + c] = value;
                }
            }
        }
    }
    Image::new(side, px)
}

/// `count` seeded phantoms, all tagged train.
pub fn synth_phantoms(count: usize, side: usize, seed: u64) -> Result<Dataset> {
    if side < 8 {
        return Err(Error::invalid(format!("phantoms need side >= 8, got {side}")));
    }
    let mut rng = rng::seeded(seed, stream::PHANTOM);
    let items = (0..count)
        .map(|i| {
            Ok(DatasetItem {
                id: format!("phantom-{i:06}"),
                image: phantom(side, &mut rng)?,
                split: Split::Train,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(side, items)
}
