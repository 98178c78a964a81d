//! Scan-line image sequences from IDX (MNIST) and CIFAR-10 binary files.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const IDX_UBYTE_3D: u32 = 0x0000_0803;
pub const IDX_UBYTE_1D: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 1024;
/// Luminance weights for R, G, B.
pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    Smnist,
    Scifar,
}

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

/// Read a file, transparently inflating gzip.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|_| Error::MissingPath(path.to_path_buf()))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Dimensions from an IDX header and the header length in bytes.
pub fn parse_idx_header(bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(format_err(0, "file too short for an IDX header"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic >> 16 != 0 || (magic >> 8) & 0xff != 0x08 {
        return Err(format_err(0, format!("bad IDX magic 0x{magic:08x}")));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if rank == 0 || bytes.len() < header {
        return Err(format_err(
            4,
            format!("IDX header of rank {rank} is truncated"),
        ));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize)
        .collect();
    Ok((dims, header))
}

/// Parse an IDX file of unsigned bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let (dims, header) = parse_idx_header(bytes)?;
    let len: usize = dims.iter().product();
    if bytes.len() < header + len {
        return Err(format_err(
            bytes.len(),
            format!("IDX payload truncated: need {len} bytes after the header"),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..header + len].to_vec(),
    })
}

/// Images `(N, rows, cols)` and labels `(N)` as a `(N, rows * cols, 1)`
/// sequence dataset in `[0, 1]`.
pub fn mnist_dataset(
    images: &IdxArray,
    labels: &IdxArray,
    limit: Option<usize>,
) -> Result<Dataset> {
    if images.dims.len() != 3 || labels.dims.len() != 1 || images.dims[0] != labels.dims[0] {
        return Err(Error::Data(format!(
            "IDX images {:?} and labels {:?} do not pair up",
            images.dims, labels.dims
        )));
    }
    let n = limit.map_or(images.dims[0], |l| l.min(images.dims[0]));
    let t = images.dims[1] * images.dims[2];
    let inputs = Tensor::from_fn(&[n, t, 1], |i| images.data[i] as f32 / 255.0);
    let classes = labels.data[..n].iter().map(|&c| c as usize).collect();
    Dataset::new(inputs, Targets::Classes(classes))
}

/// CIFAR-10 binary records to grayscale `(N, 1024, 1)` sequences.
pub fn parse_cifar(bytes: &[u8], limit: Option<usize>) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(format_err(
            whole,
            format!(
                "truncated CIFAR record ({} trailing bytes)",
                bytes.len() - whole
            ),
        ));
    }
    let total = bytes.len() / CIFAR_RECORD;
    let n = limit.map_or(total, |l| l.min(total));
    let mut classes = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 1024);
    for r in 0..n {
        let rec = &bytes[r * CIFAR_RECORD..(r + 1) * CIFAR_RECORD];
        if rec[0] > 9 {
            return Err(format_err(
                r * CIFAR_RECORD,
                format!("CIFAR label {} out of range", rec[0]),
            ));
        }
        classes.push(rec[0] as usize);
        let px = &rec[1..];
        for p in 0..1024 {
            let g = GRAY_WEIGHTS[0] * px[p] as f64
                + GRAY_WEIGHTS[1] * px[1024 + p] as f64
                + GRAY_WEIGHTS[2] * px[2048 + p] as f64;
            data.push((g / 255.0) as f32);
        }
    }
    Dataset::new(Tensor::new(&[n, 1024, 1], data)?, Targets::Classes(classes))
}

fn files_matching(dir: &Path, pred: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|_| Error::MissingPath(dir.to_path_buf()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(&pred))
        .collect();
    out.sort();
    Ok(out)
}

/// Load scan-line sequences.
///
/// For `smnist`, `path` is a directory holding one `*idx3-ubyte[.gz]` image
/// file and one `*idx1-ubyte[.gz]` label file (a `train-` pair is
/// preferred when several exist). For `scifar`, `path` is a binary batch
/// file or a directory whose `*.bin` batches are concatenated in name order.
pub fn load_images(source: ImageSource, path: &Path, limit: Option<usize>) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    match source {
        ImageSource::Smnist => {
            let pick = |tag: &str| -> Result<PathBuf> {
                let all = files_matching(path, |n| n.contains(tag))?;
                all.iter()
                    .find(|p| {
                        p.file_name()
                            .unwrap()
                            .to_string_lossy()
                            .starts_with("train")
                    })
                    .or(all.first())
                    .cloned()
                    .ok_or_else(|| Error::MissingPath(path.join(format!("*{tag}*"))))
            };
            let images = parse_idx(&read_maybe_gz(&pick("idx3-ubyte")?)?)?;
            let labels = parse_idx(&read_maybe_gz(&pick("idx1-ubyte")?)?)?;
            mnist_dataset(&images, &labels, limit)
        }
        ImageSource::Scifar => {
            let files = if path.is_dir() {
                files_matching(path, |n| n.ends_with(".bin"))?
            } else {
                vec![path.to_path_buf()]
            };
            let mut bytes = Vec::new();
            for f in &files {
                bytes.extend(read_maybe_gz(f)?);
                if limit.is_some_and(|l| bytes.len() >= l * CIFAR_RECORD) {
                    break;
                }
            }
            let whole = limit.map_or(bytes.len(), |l| (l * CIFAR_RECORD).min(bytes.len()));
            parse_cifar(&bytes[..whole], limit)
        }
    }
}

/// Sizes of the train, validation and test splits, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    /// 40k / 10k / 10k: validation comes out of the 50k training images, the
    /// 10k test batch stays the test set.
    pub const SCIFAR: Split = Split {
        train: 40_000,
        val: 10_000,
        test: 10_000,
    };

    /// Consecutive row ranges; errors if the data is too small.
    pub fn apply(&self, data: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
        let need = self.train + self.val + self.test;
        if data.len() < need {
            return Err(Error::Data(format!(
                "split needs {need} rows, data has {}",
                data.len()
            )));
        }
        let a = self.train;
        let b = a + self.val;
        Ok((
            data.range(0, a),
            data.range(a, b),
            data.range(b, b + self.test),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(dims: &[u32], data: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, dims.len() as u8];
        for d in dims {
            b.extend(d.to_be_bytes());
        }
        b.extend(data);
        b
    }

    #[test]
    fn parses_header_and_payload() {
        let a = parse_idx(&idx(&[2, 2, 2], &[0, 255, 1, 2, 3, 4, 5, 6])).unwrap();
        assert_eq!(a.dims, vec![2, 2, 2]);
        assert_eq!(a.data[1], 255);
    }

    #[test]
    fn full_size_header() {
        let mut b = 0x0000_0803u32.to_be_bytes().to_vec();
        for d in [60_000u32, 28, 28] {
            b.extend(d.to_be_bytes());
        }
        assert_eq!(parse_idx_header(&b).unwrap(), (vec![60_000, 28, 28], 16));
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let mut b = idx(&[1, 2, 2], &[0; 4]);
        b[2] = 9;
        assert!(matches!(
            parse_idx(&b),
            Err(Error::Format { offset: 0, .. })
        ));
        let b = idx(&[1, 2, 2], &[0; 3]);
        assert!(matches!(
            parse_idx(&b),
            Err(Error::Format { offset: 19, .. })
        ));
    }

    #[test]
    fn zero_image_is_zero_sequence() {
        let images = parse_idx(&idx(&[1, 28, 28], &[0; 784])).unwrap();
        let labels = parse_idx(&idx(&[1], &[7])).unwrap();
        let d = mnist_dataset(&images, &labels, None).unwrap();
        assert_eq!(d.seq_len(), 784);
        assert!(d.inputs.data().iter().all(|&v| v == 0.0));
        assert_eq!(d.targets, Targets::Classes(vec![7]));
    }

    #[test]
    fn cifar_is_grayscale_1024() {
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(255u8, 1024));
        rec.extend(std::iter::repeat_n(0u8, 2048));
        let d = parse_cifar(&rec, None).unwrap();
        assert_eq!(d.seq_len(), 1024);
        assert!((d.inputs.data()[0] - 0.299).abs() < 1e-6);
        assert!(parse_cifar(&rec[..100], None).is_err());
    }

    #[test]
    fn bundled_subset_loads() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset");
        let d = load_images(ImageSource::Smnist, &dir, Some(10)).unwrap();
        assert_eq!(d.inputs.shape(), &[10, 784, 1]);
        let raw = read_maybe_gz(&dir.join("images-idx3-ubyte.gz")).unwrap();
        assert_eq!(
            u32::from_be_bytes(raw[..4].try_into().unwrap()),
            IDX_UBYTE_3D
        );
    }
}
