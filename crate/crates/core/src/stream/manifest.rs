use std::path::{Path, PathBuf};

use image::DynamicImage;

use super::Sample;
use crate::error::{CltsError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u32,
}

/// Parses `relative/path,label-id` lines (UTF-8, no header). Blank lines are
/// skipped.
pub fn parse_manifest(manifest: &Path, text: &str, known_labels: Option<&[u32]>) -> Result<Vec<ManifestEntry>> {
    let err = |line: usize, message: String| CltsError::Ingestion {
        path: manifest.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (path, label) = line
            .rsplit_once(',')
            .ok_or_else(|| err(i + 1, format!("expected `path,label`, got {line:?}")))?;
        let label: u32 = label
            .trim()
            .parse()
            .map_err(|_| err(i + 1, format!("unknown label {:?}", label.trim())))?;
        if known_labels.is_some_and(|k| !k.contains(&label)) {
            return Err(err(i + 1, format!("unknown label {label}")));
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(path.trim()),
            label,
        });
    }
    Ok(entries)
}

/// Loads every image listed in `manifest`, resolving paths against `root`.
/// Pixels are scaled to [0,1]; grayscale images give one channel, anything
/// else is converted to interleaved RGB. All images must agree in size and
/// channel count.
pub fn load_image_dataset(root: &Path, manifest: &Path, known_labels: Option<&[u32]>) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(manifest).map_err(|e| CltsError::Ingestion {
        path: manifest.to_path_buf(),
        message: e.to_string(),
    })?;
    let entries = parse_manifest(manifest, &text, known_labels)?;
    let mut geometry: Option<(u32, u32, usize)> = None;
    let mut samples = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = root.join(&entry.path);
        let ingestion = |message: String| CltsError::Ingestion {
            path: path.clone(),
            message,
        };
        let img = image::open(&path).map_err(|e| ingestion(e.to_string()))?;
        let (w, h) = (img.width(), img.height());
        let (channels, bytes) = match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) => (1, img.to_luma8().into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        match geometry {
            None => geometry = Some((w, h, channels)),
            Some(g) if g != (w, h, channels) => {
                return Err(ingestion(format!(
                    "image is {w}×{h}×{channels}, expected {}×{}×{}",
                    g.0, g.1, g.2
                )))
            }
            Some(_) => {}
        }
        samples.push(Sample {
            features: bytes.into_iter().map(|b| f64::from(b) / 255.0).collect(),
            label: entry.label,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    fn write_gray(dir: &Path, name: &str, value: u8, size: u32) {
        GrayImage::from_pixel(size, size, Luma([value]))
            .save(dir.join(name))
            .unwrap();
    }

    #[test]
    fn loads_listed_images() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("imgs")).unwrap();
        write_gray(dir.path(), "imgs/a.png", 0, 4);
        write_gray(dir.path(), "imgs/b.png", 255, 4);
        write_gray(dir.path(), "imgs/c.png", 51, 4);
        write_gray(dir.path(), "imgs/d.png", 0, 4);
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "imgs/a.png,0\nimgs/b.png,1\nimgs/c.png,1\n\nimgs/d.png,0\n").unwrap();
        let samples = load_image_dataset(dir.path(), &manifest, None).unwrap();
        assert_eq!(samples.len(), 4);
        assert_eq!(samples.iter().map(|s| s.label).collect::<Vec<_>>(), vec![0, 1, 1, 0]);
        assert!(samples[0].features.iter().all(|&v| v == 0.0));
        assert!(samples[1].features.iter().all(|&v| v == 1.0));
        assert!(samples[2].features.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        assert_eq!(samples[0].features.len(), 16);
    }

    #[test]
    fn rgb_is_interleaved() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::from_pixel(2, 1, Rgb([255, 0, 51]))
            .save(dir.path().join("x.png"))
            .unwrap();
        let manifest = dir.path().join("m.csv");
        std::fs::write(&manifest, "x.png,3\n").unwrap();
        let s = load_image_dataset(dir.path(), &manifest, None).unwrap();
        assert_eq!(s[0].features, vec![1.0, 0.0, 0.2, 1.0, 0.0, 0.2]);
    }

    #[test]
    fn ingestion_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(dir.path(), "a.png", 0, 4);
        write_gray(dir.path(), "big.png", 0, 5);
        let manifest = dir.path().join("m.csv");

        std::fs::write(&manifest, "a.png,0\nmissing.png,1\n").unwrap();
        let err = load_image_dataset(dir.path(), &manifest, None).unwrap_err();
        assert!(err.to_string().contains("missing.png"), "{err}");

        std::fs::write(&manifest, "a.png,0\nbig.png,1\n").unwrap();
        let err = load_image_dataset(dir.path(), &manifest, None).unwrap_err();
        assert!(err.to_string().contains("big.png"), "{err}");

        std::fs::write(&manifest, "a.png,7\n").unwrap();
        let err = load_image_dataset(dir.path(), &manifest, Some(&[0, 1])).unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");

        std::fs::write(&manifest, "a.png,cat\n").unwrap();
        assert!(load_image_dataset(dir.path(), &manifest, None).is_err());
    }
}
