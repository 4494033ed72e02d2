//! MNIST IDX container parsing and the two input representations the
//! network consumes: 8-bit grey-scale pixels and thresholded binary pixels.
//!
//! IDX layout (all header words big-endian `u32`):
//!
//! ```text
//! images: magic 2051 | count | rows (28) | cols (28) | count*784 bytes
//! labels: magic 2049 | count | count bytes, each 0..=9
//! ```
//!
//! Either file may be gzip-compressed; compression is detected from the
//! gzip magic bytes, not from the file name.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

const IMAGE_HEADER: usize = 16;
const LABEL_HEADER: usize = 8;
const BIT_WORDS: usize = IMAGE_PIXELS.div_ceil(64);

#[derive(Clone, PartialEq, Eq)]
pub struct GreyImage {
    pixels: [u8; IMAGE_PIXELS],
    label: u8,
}

impl GreyImage {
    pub fn new(pixels: &[u8], label: u8) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::LengthMismatch {
                what: "grey image",
                expected: IMAGE_PIXELS,
                actual: pixels.len(),
            });
        }
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::InvalidLabel(label.into()));
        }
        let mut buf = [0u8; IMAGE_PIXELS];
        buf.copy_from_slice(pixels);
        Ok(GreyImage { pixels: buf, label })
    }

    pub fn pixels(&self) -> &[u8; IMAGE_PIXELS] {
        &self.pixels
    }

    pub fn label(&self) -> u8 {
        self.label
    }
}

impl std::fmt::Debug for GreyImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let lit = self.pixels.iter().filter(|&&p| p > 0).count();
        f.debug_struct("GreyImage")
            .field("label", &self.label)
            .field("nonzero_pixels", &lit)
            .finish()
    }
}

/// A 784-bit image, packed into 64-bit words (pixel `i` is bit `i % 64` of
/// word `i / 64`).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BinaryImage {
    bits: [u64; BIT_WORDS],
    label: u8,
}

impl BinaryImage {
    pub fn from_bits(bits: &[bool], label: u8) -> Result<Self> {
        if bits.len() != IMAGE_PIXELS {
            return Err(Error::LengthMismatch {
                what: "binary image",
                expected: IMAGE_PIXELS,
                actual: bits.len(),
            });
        }
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::InvalidLabel(label.into()));
        }
        let mut words = [0u64; BIT_WORDS];
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            words[i / 64] |= 1 << (i % 64);
        }
        Ok(BinaryImage { bits: words, label })
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < IMAGE_PIXELS, "pixel index {i} out of range");
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn count_on(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Indices of the pixels that are set, in ascending order.
    pub fn on_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + bit)
            })
        })
    }

    /// Injection back into grey scale: 0 stays 0, 1 becomes 1.
    pub fn to_grey(&self) -> GreyImage {
        let mut pixels = [0u8; IMAGE_PIXELS];
        for i in self.on_pixels() {
            pixels[i] = 1;
        }
        GreyImage {
            pixels,
            label: self.label,
        }
    }
}

/// Threshold at zero: any nonzero intensity becomes an active pixel.
pub fn binarize(g: &GreyImage) -> BinaryImage {
    let mut bits = [0u64; BIT_WORDS];
    for (i, _) in g.pixels.iter().enumerate().filter(|(_, &p)| p > 0) {
        bits[i / 64] |= 1 << (i % 64);
    }
    BinaryImage {
        bits,
        label: g.label,
    }
}

pub fn onehot(label: u32) -> Result<[f64; NUM_CLASSES]> {
    let idx = label as usize;
    if idx >= NUM_CLASSES {
        return Err(Error::InvalidLabel(label));
    }
    let mut y = [0.0; NUM_CLASSES];
    y[idx] = 1.0;
    Ok(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<GreyImage>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Vec<GreyImage>, split: Split) -> Self {
        Dataset { images, split }
    }

    pub fn images(&self) -> &[GreyImage] {
        &self.images
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The first `n` digits, for desk-scale runs.
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            images: self.images[..n.min(self.images.len())].to_vec(),
            split: self.split,
        }
    }

    /// Serialize back into (image file, label file) IDX bytes, uncompressed.
    pub fn to_idx(&self) -> (Vec<u8>, Vec<u8>) {
        let count = self.images.len() as u32;
        let mut img = Vec::with_capacity(IMAGE_HEADER + self.images.len() * IMAGE_PIXELS);
        for word in [IMAGE_MAGIC, count, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
            img.extend_from_slice(&word.to_be_bytes());
        }
        let mut lbl = Vec::with_capacity(LABEL_HEADER + self.images.len());
        lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&count.to_be_bytes());
        for g in &self.images {
            img.extend_from_slice(&g.pixels);
            lbl.push(g.label);
        }
        (img, lbl)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::idx(
                bytes.len(),
                format!("truncated header: missing {what} word at byte {offset}"),
            )
        })
}

/// Decompress `bytes` if they start with the gzip magic, else borrow them.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::idx(0, format!("gzip stream: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<Dataset> {
    let image_bytes = maybe_gunzip(image_bytes)?;
    let label_bytes = maybe_gunzip(label_bytes)?;

    let magic = be_u32(&image_bytes, 0, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::idx(
            0,
            format!("image magic {magic}, expected {IMAGE_MAGIC}"),
        ));
    }
    let count = be_u32(&image_bytes, 4, "image count")? as usize;
    let rows = be_u32(&image_bytes, 8, "row count")?;
    let cols = be_u32(&image_bytes, 12, "column count")?;
    if rows as usize != IMAGE_SIDE {
        return Err(Error::idx(8, format!("{rows} rows, expected {IMAGE_SIDE}")));
    }
    if cols as usize != IMAGE_SIDE {
        return Err(Error::idx(12, format!("{cols} columns, expected {IMAGE_SIDE}")));
    }

    let magic = be_u32(&label_bytes, 0, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::idx(
            0,
            format!("label magic {magic}, expected {LABEL_MAGIC}"),
        ));
    }
    let label_count = be_u32(&label_bytes, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::idx(
            4,
            format!("label file holds {label_count} labels but image file holds {count} images"),
        ));
    }

    let image_len = IMAGE_HEADER + count * IMAGE_PIXELS;
    if image_bytes.len() != image_len {
        return Err(Error::idx(
            image_bytes.len().min(image_len),
            format!(
                "image payload is {} bytes, expected {}",
                image_bytes.len() - IMAGE_HEADER,
                count * IMAGE_PIXELS
            ),
        ));
    }
    let label_len = LABEL_HEADER + count;
    if label_bytes.len() != label_len {
        return Err(Error::idx(
            label_bytes.len().min(label_len),
            format!(
                "label payload is {} bytes, expected {count}",
                label_bytes.len() - LABEL_HEADER
            ),
        ));
    }

    let pixels = image_bytes[IMAGE_HEADER..].chunks_exact(IMAGE_PIXELS);
    let labels = &label_bytes[LABEL_HEADER..];
    let images = pixels
        .zip(labels)
        .enumerate()
        .map(|(i, (px, &label))| {
            GreyImage::new(px, label).map_err(|_| {
                Error::idx(LABEL_HEADER + i, format!("label {label} outside 0..=9"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { images, split })
}

fn locate(dir: &Path, stem: &str, kind: &str) -> Result<PathBuf> {
    let candidates = [
        format!("{stem}-{kind}-ubyte"),
        format!("{stem}-{kind}.ubyte"),
        format!("{stem}-{kind}-ubyte.gz"),
        format!("{stem}-{kind}.ubyte.gz"),
    ];
    candidates
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(&candidates[0]),
                std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
            )
        })
}

/// Load one split from a directory holding the canonical MNIST file names.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let images = locate(dir, split.stem(), "images-idx3")?;
    let labels = locate(dir, split.stem(), "labels-idx1")?;
    let img = std::fs::read(&images).map_err(|e| Error::io(&images, e))?;
    let lbl = std::fs::read(&labels).map_err(|e| Error::io(&labels, e))?;
    parse_idx(&img, &lbl, split)
}
