//! Seeded synthetic test images.
//!
//! Each channel is a sum of four random-phase plane sinusoids with low
//! integer frequencies, min-max normalised to `[0, 1]`.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::codec;
use crate::rng::Rng;
use crate::tensor::ImageTensor;

pub const DEFAULT_IMAGE_SIZE: usize = 96;
const WAVES: usize = 4;
const MAX_FREQUENCY: usize = 4;

/// Image `index` of the dataset drawn from `seed`.
pub fn synthesize(size: usize, seed: u64, index: usize) -> ImageTensor {
    let mut rng = Rng::new(seed.wrapping_mul(0x9E37_79B9).wrapping_add(index as u64));
    let mut data = vec![0.0; size * size * 3];
    for c in 0..3 {
        let waves: Vec<[f64; 4]> = (0..WAVES)
            .map(|_| {
                [
                    (1 + rng.below(MAX_FREQUENCY)) as f64,
                    (1 + rng.below(MAX_FREQUENCY)) as f64,
                    rng.uniform() * TAU,
                    0.5 + rng.uniform(),
                ]
            })
            .collect();
        let mut plane: Vec<f64> = (0..size * size)
            .map(|i| {
                let (y, x) = (
                    (i / size) as f64 / size as f64,
                    (i % size) as f64 / size as f64,
                );
                waves
                    .iter()
                    .map(|[fx, fy, phase, amp]| amp * (TAU * (fx * x + fy * y) + phase).sin())
                    .sum()
            })
            .collect();
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        plane.iter_mut().for_each(|v| *v = (*v - lo) / span);
        for (i, v) in plane.into_iter().enumerate() {
            data[i * 3 + c] = v;
        }
    }
    ImageTensor::new(size, size, 3, data).expect("values normalised into [0,1]")
}

pub fn image_file_name(index: usize) -> String {
    format!("img_{index:05}.png")
}

/// Writes `count` PNGs into `dir` and returns their paths in index order.
pub fn generate_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, HarnessError> {
    if count == 0 || size == 0 {
        return Err(HarnessError::Invalid(
            "dataset needs count ≥ 1 and size ≥ 1".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(image_file_name(i));
            let png = codec::encode_png(&synthesize(size, seed, i).quantize())?;
            fs::write(&path, png)?;
            Ok(path)
        })
        .collect()
}

/// Loads every `.png` in `dir`, sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, ImageTensor)>, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let image = codec::decode_image(&fs::read(&p)?)?.dequantize();
            Ok((id, image))
        })
        .collect()
}

/// In-memory dataset identical to what `generate_dataset` writes.
pub fn dataset_in_memory(count: usize, size: usize, seed: u64) -> Vec<ImageTensor> {
    (0..count)
        .map(|i| synthesize(size, seed, i).quantize().dequantize())
        .collect()
}
