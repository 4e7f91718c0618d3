//! Deterministic synthetic dataset generator for offline runs and the
//! acceptance suite: flat-color "faces" on plain backgrounds, disjoint
//! boxes, five-point landmarks, ground-truth emotions cycling through the
//! whole vocabulary.

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sov_core::dataset::{DatasetManifest, ManifestEntry, ManifestFace, SCHEMA_VERSION};
use sov_core::geometry::{BoundingBox, Point};
use sov_core::landmarks::LandmarkSet;
use sov_core::parse::Emotion;
use std::path::{Path, PathBuf};

/// Per-image face counts, cycled: four Easy, three Medium, three Hard.
const FACE_COUNTS: [usize; 10] = [1, 2, 3, 3, 4, 5, 7, 8, 9, 12];

const CELL: u32 = 48;
const MARGIN: u32 = 8;

#[derive(Debug, Clone, Copy)]
pub struct FixtureOptions {
    pub images: usize,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { images: 10, seed: 7 }
    }
}

/// Writes `img_*.png` plus `manifest.json` into `dir`; returns the manifest
/// path. Identical options produce identical bytes.
pub fn generate(dir: &Path, opts: &FixtureOptions) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut emotion_cursor = 0usize;
    let mut entries = Vec::new();

    for i in 0..opts.images.max(1) {
        let count = FACE_COUNTS[i % FACE_COUNTS.len()];
        let cols = (count as f64).sqrt().ceil() as u32;
        let rows = (count as u32).div_ceil(cols);
        let (w, h) = (cols * CELL + 2 * MARGIN, rows * CELL + 2 * MARGIN);
        let bg = Rgb([
            rng.random_range(30..110) as u8,
            rng.random_range(30..110) as u8,
            rng.random_range(30..110) as u8,
        ]);
        let mut img = RgbImage::from_pixel(w, h, bg);
        let mut faces = Vec::new();

        for f in 0..count {
            let (cx, cy) = (f as u32 % cols, f as u32 / cols);
            let jx: f64 = rng.random_range(0.0..6.0);
            let jy: f64 = rng.random_range(0.0..6.0);
            let x0 = f64::from(MARGIN + cx * CELL) + 4.0 + jx;
            let y0 = f64::from(MARGIN + cy * CELL) + 4.0 + jy;
            let bw: f64 = rng.random_range(26.0..34.0);
            let bh: f64 = rng.random_range(26.0..34.0);
            let bbox = BoundingBox::new(x0, y0, x0 + bw, y0 + bh)?;

            // flat skin-tone block with two dark eye dots, purely cosmetic
            let tone = Rgb([
                rng.random_range(170..230) as u8,
                rng.random_range(130..190) as u8,
                rng.random_range(100..160) as u8,
            ]);
            fill_rect(&mut img, &bbox, tone);
            let lm = landmarks_for(&bbox);
            for p in lm.points().iter().take(2) {
                img.put_pixel(p.x as u32, p.y as u32, Rgb([20, 20, 20]));
            }

            let gt = Emotion::ALL[emotion_cursor % Emotion::ALL.len()];
            emotion_cursor += 1;
            faces.push(ManifestFace {
                bbox,
                landmarks: Some(lm),
                gt_emotion: Some(gt),
                confidence: Some(1.0),
            });
        }

        let name = format!("img_{i:03}.png");
        img.save(dir.join(&name))
            .with_context(|| format!("writing fixture image {name}"))?;
        entries.push(ManifestEntry {
            image_path: name,
            split_tag: None,
            faces,
        });
    }

    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    crate::util::write_atomic(&path, json.as_bytes())?;
    Ok(path)
}

fn fill_rect(img: &mut RgbImage, bbox: &BoundingBox, color: Rgb<u8>) {
    for y in bbox.y_min as u32..bbox.y_max as u32 {
        for x in bbox.x_min as u32..bbox.x_max as u32 {
            img.put_pixel(x, y, color);
        }
    }
}

fn landmarks_for(bbox: &BoundingBox) -> LandmarkSet {
    let (w, h) = (bbox.width(), bbox.height());
    LandmarkSet::five_point(vec![
        Point::new(bbox.x_min + 0.3 * w, bbox.y_min + 0.35 * h),
        Point::new(bbox.x_min + 0.7 * w, bbox.y_min + 0.35 * h),
        Point::new(bbox.x_min + 0.5 * w, bbox.y_min + 0.55 * h),
        Point::new(bbox.x_min + 0.35 * w, bbox.y_min + 0.75 * h),
        Point::new(bbox.x_min + 0.65 * w, bbox.y_min + 0.75 * h),
    ])
    .expect("fixture landmarks are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use sov_core::dataset::DifficultyBucket;

    #[test]
    fn fixture_spans_all_buckets_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = generate(dir.path(), &FixtureOptions::default()).unwrap();
        let manifest = DatasetManifest::load(&manifest_path).unwrap();
        assert!(manifest.entries.len() >= 10);
        let stats = manifest.stats();
        for b in DifficultyBucket::ALL {
            assert!(stats.per_bucket[&b].images > 0, "bucket {b} empty");
        }
        // all seven emotions get support
        let mut seen = std::collections::BTreeSet::new();
        for e in &manifest.entries {
            for f in &e.faces {
                seen.insert(f.gt_emotion.unwrap());
            }
        }
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn faces_are_pairwise_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = generate(dir.path(), &FixtureOptions::default()).unwrap();
        let manifest = DatasetManifest::load(&manifest_path).unwrap();
        for entry in &manifest.entries {
            for (i, a) in entry.faces.iter().enumerate() {
                for b in &entry.faces[i + 1..] {
                    assert_eq!(a.bbox.intersection_area(&b.bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let opts = FixtureOptions::default();
        generate(d1.path(), &opts).unwrap();
        generate(d2.path(), &opts).unwrap();
        let m1 = std::fs::read(d1.path().join("manifest.json")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.json")).unwrap();
        assert_eq!(m1, m2);
        let i1 = std::fs::read(d1.path().join("img_000.png")).unwrap();
        let i2 = std::fs::read(d2.path().join("img_000.png")).unwrap();
        assert_eq!(i1, i2);
    }
}
