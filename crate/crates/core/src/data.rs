//! MNIST ingestion: IDX binary parsing (optionally gzipped), pixel
//! normalization into [0, 1], bilinear downscaling, and deterministic
//! subset construction.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Which half of the corpus a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Images as N×1×H×W in [0, 1] plus class labels 0–9.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_hw(&self) -> (usize, usize) {
        let shape = self.images.shape();
        (shape[2], shape[3])
    }

    /// Copies the selected samples into a batch tensor plus label slice.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (h, w) = self.image_hw();
        let len = h * w;
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &idx in indices {
            data.extend_from_slice(&self.images.data()[idx * len..(idx + 1) * len]);
            labels.push(self.labels[idx]);
        }
        let images = Tensor::from_vec(&[indices.len(), 1, h, w], data)
            .expect("batch volume matches by construction");
        (images, labels)
    }
}

/// How many samples to keep from each split, shuffled by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetPlan {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

/// Reads a whole file, transparently gunzipping when the gzip magic is
/// present.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut decoded = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut decoded).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: gzip decode failed: {e}", path.display()),
        })?;
        return Ok(decoded);
    }
    Ok(raw)
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> IdxReader<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        let end = self.offset + 4;
        if end > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                message: format!("{}: truncated while reading a u32", self.path),
            });
        }
        let value = u32::from_be_bytes(self.bytes[self.offset..end].try_into().unwrap());
        self.offset = end;
        Ok(value)
    }

    fn payload(&mut self, expected: usize) -> Result<&'a [u8]> {
        let end = self.offset + expected;
        if end > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!(
                    "{}: payload truncated, expected {expected} bytes from offset {}",
                    self.path, self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(slice)
    }
}

/// Loads an IDX image/label file pair into a dataset. Pixels are scaled
/// byte/255 into [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let image_bytes = read_bytes(images_path)?;
    let mut reader = IdxReader {
        bytes: &image_bytes,
        offset: 0,
        path: images_path.display().to_string(),
    };
    let magic = reader.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{}: bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}",
                images_path.display()
            ),
        });
    }
    let count = reader.u32_be()? as usize;
    let rows = reader.u32_be()? as usize;
    let cols = reader.u32_be()? as usize;
    let pixels = reader.payload(count * rows * cols)?;
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let images = Tensor::from_vec(&[count, 1, rows, cols], data)?;

    let label_bytes = read_bytes(labels_path)?;
    let mut reader = IdxReader {
        bytes: &label_bytes,
        offset: 0,
        path: labels_path.display().to_string(),
    };
    let magic = reader.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{}: bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}",
                labels_path.display()
            ),
        });
    }
    let label_count = reader.u32_be()? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            message: format!(
                "{}: {label_count} labels for {count} images",
                labels_path.display()
            ),
        });
    }
    let raw_labels = reader.payload(label_count)?;
    let labels = raw_labels.iter().map(|&b| b as usize).collect();

    Ok(Dataset { images, labels, split })
}

/// Loads the canonical train/test file pair from a directory, accepting
/// either plain or `.gz` file names.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let (images, labels) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let locate = |name: &str| -> Result<std::path::PathBuf> {
        let plain = dir.join(name);
        if plain.exists() {
            return Ok(plain);
        }
        let gz = dir.join(format!("{name}.gz"));
        if gz.exists() {
            return Ok(gz);
        }
        Err(Error::Config(format!(
            "{} not found in {} (try scripts/fetch_mnist.sh)",
            name,
            dir.display()
        )))
    };
    load_idx(&locate(images)?, &locate(labels)?, split)
}

/// Bilinear downscale with half-pixel-centered sampling: the source
/// coordinate of output pixel d is (d + 0.5)·(in/out) − 0.5, clamped to the
/// image; no antialias prefilter.
pub fn bilinear_downsample(dataset: &Dataset, out_h: usize, out_w: usize) -> Result<Dataset> {
    let (n, _, h, w) = dataset.images.dims4()?;
    if out_h > h || out_w > w || out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!(
            "cannot resize {h}×{w} down to {out_h}×{out_w}"
        )));
    }
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    // Per-axis positions are shared by every image.
    let axis = |out_len: usize, in_len: usize, scale: f64| -> Vec<(usize, usize, f64)> {
        (0..out_len)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(in_len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(out_h, h, scale_y);
    let xs = axis(out_w, w, scale_x);

    let mut data = Vec::with_capacity(n * out_h * out_w);
    for img in dataset.images.data().chunks(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
                let bottom = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 1, out_h, out_w], data)?,
        labels: dataset.labels.clone(),
        split: dataset.split,
    })
}

/// Takes the first `count` samples of a deterministic shuffle of `dataset`.
pub fn make_subset(dataset: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    if count > dataset.len() {
        return Err(Error::Config(format!(
            "requested {count} samples from a {} split of {}",
            dataset.split.name(),
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(count);

    let (h, w) = dataset.image_hw();
    let (images, labels) = dataset.batch(&order);
    debug_assert_eq!(images.shape(), &[count, 1, h, w]);
    Ok(Dataset { images, labels, split: dataset.split })
}

/// Applies a subset plan to a (train, test) pair with a shared seed.
pub fn plan_subsets(train: &Dataset, test: &Dataset, plan: &SubsetPlan) -> Result<(Dataset, Dataset)> {
    Ok((
        make_subset(train, plan.train_count, plan.seed)?,
        make_subset(test, plan.test_count, plan.seed.wrapping_add(1))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::TempDir;

    fn write_idx_pair(
        dir: &TempDir,
        count: usize,
        rows: usize,
        cols: usize,
        pixels: &[u8],
        labels: &[u8],
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let images_path = dir.path().join("images-idx3-ubyte");
        let labels_path = dir.path().join("labels-idx1-ubyte");
        let mut f = File::create(&images_path).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(count as u32).to_be_bytes()).unwrap();
        f.write_all(&(rows as u32).to_be_bytes()).unwrap();
        f.write_all(&(cols as u32).to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
        let mut f = File::create(&labels_path).unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (images_path, labels_path)
    }

    #[test]
    fn parses_a_tiny_idx_pair() {
        let dir = TempDir::new().unwrap();
        let pixels: Vec<u8> = (0..2 * 2 * 2).map(|i| (i * 30) as u8).collect();
        let (ip, lp) = write_idx_pair(&dir, 2, 2, 2, &pixels, &[7, 3]);
        let ds = load_idx(&ip, &lp, Split::Train).unwrap();
        assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.labels, vec![7, 3]);
        assert!((ds.images.data()[1] - 30.0 / 255.0).abs() < 1e-15);
        assert!(ds.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bogus");
        File::create(&path).unwrap().write_all(&[0, 0, 8, 5, 0, 0, 0, 0]).unwrap();
        let labels = dir.path().join("labels");
        File::create(&labels).unwrap().write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        match load_idx(&path, &labels, Split::Train) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_the_offset() {
        let dir = TempDir::new().unwrap();
        let pixels: Vec<u8> = vec![1; 3]; // needs 2*2*2 = 8
        let (ip, lp) = write_idx_pair(&dir, 2, 2, 2, &pixels, &[0, 1]);
        match load_idx(&ip, &lp, Split::Train) {
            Err(Error::Format { message, .. }) => assert!(message.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let dir = TempDir::new().unwrap();
        let pixels: Vec<u8> = vec![0; 8];
        let (ip, lp) = write_idx_pair(&dir, 2, 2, 2, &pixels, &[1, 2, 3]);
        match load_idx(&ip, &lp, Split::Train) {
            Err(Error::Format { message, .. }) => assert!(message.contains("3 labels")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn gzip_files_load_transparently() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let dir = TempDir::new().unwrap();
        let pixels: Vec<u8> = vec![128; 4];
        let (ip, lp) = write_idx_pair(&dir, 1, 2, 2, &pixels, &[5]);

        let gz_images = dir.path().join("images.gz");
        let mut enc = GzEncoder::new(File::create(&gz_images).unwrap(), Compression::default());
        std::io::copy(&mut File::open(&ip).unwrap(), &mut enc).unwrap();
        enc.finish().unwrap();

        let plain = load_idx(&ip, &lp, Split::Test).unwrap();
        let zipped = load_idx(&gz_images, &lp, Split::Test).unwrap();
        assert_eq!(plain.images.data(), zipped.images.data());
    }

    #[test]
    fn loading_twice_is_identical() {
        let dir = TempDir::new().unwrap();
        let pixels: Vec<u8> = (0..16).collect();
        let (ip, lp) = write_idx_pair(&dir, 4, 2, 2, &pixels, &[0, 1, 2, 3]);
        let a = load_idx(&ip, &lp, Split::Train).unwrap();
        let b = load_idx(&ip, &lp, Split::Train).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
    }

    fn dataset_from_pixels(n: usize, h: usize, w: usize, pixels: Vec<f64>) -> Dataset {
        Dataset {
            images: Tensor::from_vec(&[n, 1, h, w], pixels).unwrap(),
            labels: vec![0; n],
            split: Split::Train,
        }
    }

    #[test]
    fn constant_image_stays_constant_under_resize() {
        let ds = dataset_from_pixels(1, 28, 28, vec![0.42; 28 * 28]);
        let out = bilinear_downsample(&ds, 14, 14).unwrap();
        assert_eq!(out.images.shape(), &[1, 1, 14, 14]);
        for &p in out.images.data() {
            assert!((p - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn checkerboard_two_by_two_averages_to_half() {
        let ds = dataset_from_pixels(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let out = bilinear_downsample(&ds, 1, 1).unwrap();
        assert!((out.images.data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn resize_output_stays_in_input_range() {
        let mut pixels = vec![0.0; 28 * 28];
        for (i, p) in pixels.iter_mut().enumerate() {
            *p = (i % 256) as f64 / 255.0;
        }
        let ds = dataset_from_pixels(1, 28, 28, pixels.clone());
        let out = bilinear_downsample(&ds, 14, 14).unwrap();
        let lo = pixels.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &p in out.images.data() {
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }

    #[test]
    fn subsets_are_deterministic() {
        let n = 50;
        let pixels: Vec<f64> = (0..n * 4).map(|i| (i % 7) as f64 / 7.0).collect();
        let mut ds = dataset_from_pixels(n, 2, 2, pixels);
        ds.labels = (0..n).map(|i| i % 10).collect();

        let a = make_subset(&ds, 20, 99).unwrap();
        let b = make_subset(&ds, 20, 99).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.images.data(), b.images.data());

        let c = make_subset(&ds, 20, 100).unwrap();
        assert_ne!(a.labels, c.labels);

        let empty = make_subset(&ds, 0, 1).unwrap();
        assert!(empty.is_empty());

        assert!(matches!(make_subset(&ds, 51, 0), Err(Error::Config(_))));
    }
}
