//! IDX container ingestion (big-endian, magic-numbered).

use std::path::Path;

use super::{LabeledDataset, Sample};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Ingestion {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.fail(format!("truncated while reading {what}")))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(format!(
                "truncated: {what} needs {len} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!(
                "{} unexpected trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load an IDX image/label pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major. All samples are tagged domain 0.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;

    let mut images = Reader {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    let magic = images.u32("magic number")?;
    if magic != IMAGES_MAGIC {
        return Err(images.fail(format!(
            "bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )));
    }
    let count = images.u32("image count")? as usize;
    let rows = images.u32("row count")? as usize;
    let cols = images.u32("column count")? as usize;
    let pixels_per_image = rows * cols;
    if pixels_per_image == 0 {
        return Err(images.fail("images have zero pixels"));
    }
    let pixels = images.take(count * pixels_per_image, "pixel data")?;
    images.finish()?;

    let mut labels = Reader {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    let magic = labels.u32("magic number")?;
    if magic != LABELS_MAGIC {
        return Err(labels.fail(format!(
            "bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )));
    }
    let label_count = labels.u32("label count")? as usize;
    if label_count != count {
        return Err(labels.fail(format!(
            "{label_count} labels for {count} images"
        )));
    }
    let label_data = labels.take(label_count, "label data")?;
    labels.finish()?;

    let samples = pixels
        .chunks_exact(pixels_per_image)
        .zip(label_data)
        .enumerate()
        .map(|(index, (img, &label))| Sample {
            features: img.iter().map(|&p| f64::from(p) / 255.0).collect(),
            label: label as usize,
            domain: 0,
            index,
        })
        .collect();
    Ok(LabeledDataset {
        input_dim: pixels_per_image,
        samples,
    })
}
