//! Readers for the MNIST IDX and CIFAR-10 binary distributions.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{io_err, DataError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Decoded images with class labels. Pixels are stored image after image,
/// each image channel after channel, each channel row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
    channels: usize,
}

impl RawImageSet {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize, channels: usize) -> Result<Self> {
        let per = rows * cols * channels;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(DataError::Config(format!(
                "{} pixel bytes do not hold {} images of {rows}x{cols}x{channels}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Self {
            pixels,
            labels,
            rows,
            cols,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    /// All channels of image `i`.
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Channel `c` of image `i`, row-major.
    pub fn channel(&self, i: usize, c: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.image(i)[c * n..(c + 1) * n]
    }

    /// The images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self {
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
        }
    }

    /// Appends `other`, which must have the same image shape.
    pub fn extend(&mut self, other: Self) -> Result<()> {
        if (other.rows, other.cols, other.channels) != (self.rows, self.cols, self.channels) {
            return Err(DataError::Config("cannot join image sets of different shapes".into()));
        }
        self.pixels.extend(other.pixels);
        self.labels.extend(other.labels);
        Ok(())
    }
}

/// Which official split to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Reads a file, transparently gunzipping when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn truncated(&self, wanted: usize) -> DataError {
        DataError::Format {
            file: self.file.to_string(),
            offset: self.bytes.len() as u64,
            reason: format!("truncated: needed {wanted} bytes from offset {}", self.pos),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.truncated(n));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32_be()?;
        if got != expected {
            return Err(DataError::Format {
                file: self.file.to_string(),
                offset: 0,
                reason: format!("magic number {got:#010x}, expected {expected:#010x}"),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(DataError::Format {
                file: self.file.to_string(),
                offset: self.pos as u64,
                reason: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file body: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut c = Cursor { bytes, pos: 0, file };
    c.magic(IDX_IMAGES_MAGIC)?;
    let n = c.u32_be()? as usize;
    let rows = c.u32_be()? as usize;
    let cols = c.u32_be()? as usize;
    let pixels = c.take(n * rows * cols)?.to_vec();
    c.finish()?;
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, pos: 0, file };
    c.magic(IDX_LABELS_MAGIC)?;
    let n = c.u32_be()? as usize;
    let labels = c.take(n)?.to_vec();
    c.finish()?;
    Ok(labels)
}

/// Loads an IDX image/label file pair (either may be gzipped).
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<RawImageSet> {
    let (n, rows, cols, pixels) =
        parse_idx_images(&read_maybe_gz(images)?, &images.display().to_string())?;
    let labels_v = parse_idx_labels(&read_maybe_gz(labels)?, &labels.display().to_string())?;
    if labels_v.len() != n {
        return Err(DataError::Config(format!(
            "{} images but {} labels",
            n,
            labels_v.len()
        )));
    }
    RawImageSet::new(pixels, labels_v, rows, cols, 1)
}

fn first_existing(dir: &Path, stems: &[&str]) -> Result<PathBuf> {
    stems
        .iter()
        .flat_map(|s| [dir.join(format!("{s}.gz")), dir.join(s)])
        .find(|p| p.is_file())
        .ok_or_else(|| DataError::Io {
            path: dir.join(stems[0]).display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
        })
}

/// Loads an MNIST split from `dir` using the distribution file names
/// (`train-images-idx3-ubyte[.gz]` and so on).
pub fn load_mnist(dir: &Path, split: Split) -> Result<RawImageSet> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = first_existing(dir, &[&format!("{prefix}-images-idx3-ubyte"), &format!("{prefix}-images.idx3-ubyte")])?;
    let labels = first_existing(dir, &[&format!("{prefix}-labels-idx1-ubyte"), &format!("{prefix}-labels.idx1-ubyte")])?;
    load_idx_pair(&images, &labels)
}

/// Parses one CIFAR-10 binary batch: records of one label byte followed by
/// 1024 red, 1024 green and 1024 blue bytes.
pub fn parse_cifar_batch(bytes: &[u8], file: &str) -> Result<RawImageSet> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(DataError::Format {
            file: file.to_string(),
            offset: whole as u64,
            reason: format!(
                "truncated record: {} bytes left, records are {CIFAR_RECORD} bytes",
                bytes.len() - whole
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(DataError::Format {
                file: file.to_string(),
                offset: (i * CIFAR_RECORD) as u64,
                reason: format!("label {} outside 0..=9", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    RawImageSet::new(pixels, labels, CIFAR_SIDE, CIFAR_SIDE, 3)
}

pub fn load_cifar_batch(path: &Path) -> Result<RawImageSet> {
    parse_cifar_batch(&read_maybe_gz(path)?, &path.display().to_string())
}

/// Loads a CIFAR-10 split from `dir` or `dir/cifar-10-batches-bin`.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<RawImageSet> {
    let nested = dir.join("cifar-10-batches-bin");
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let names: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let mut out: Option<RawImageSet> = None;
    for name in names {
        let batch = load_cifar_batch(&first_existing(&root, &[&name])?)?;
        match &mut out {
            Some(set) => set.extend(batch)?,
            None => out = Some(batch),
        }
    }
    Ok(out.expect("at least one batch"))
}
