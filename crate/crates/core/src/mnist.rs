//! IDX-format image and label files, and deterministic minibatching.
//!
//! The IDX layout is the classic big-endian one: a magic number
//! (0x00000803 for rank-3 byte images, 0x00000801 for rank-1 byte labels),
//! big-endian u32 dimensions, then raw bytes. Pixels load as f64 in [0,1]
//! (divided by 255), flattened row-major to one row per image.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug)]
pub struct Dataset {
    /// [N, rows*cols] pixel intensities in [0,1].
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.images.cols()
    }

    /// Copy out the rows at `idx` in order.
    pub fn select(&self, idx: &[usize]) -> (Tensor, Vec<u8>) {
        let cols = self.feature_dim();
        let mut data = Vec::with_capacity(idx.len() * cols);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        (Tensor::new(vec![idx.len(), cols], data).unwrap(), labels)
    }

    /// First n examples (all of them if n exceeds the dataset).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let cols = self.feature_dim();
        Dataset {
            images: Tensor::new(vec![n, cols], self.images.data()[..n * cols].to_vec()).unwrap(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Rearrange feature columns: column i of the result is column perm[i]
    /// of the original, the same convention Network::permute_input_features
    /// uses for first-layer rows.
    pub fn permute_features(&self, perm: &[usize]) -> Result<Dataset> {
        let cols = self.feature_dim();
        let mut seen = vec![false; cols];
        if perm.len() != cols
            || !perm
                .iter()
                .all(|&i| i < cols && !std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Usage(format!("not a permutation of 0..{cols}")));
        }
        let n = self.len();
        let mut out = Tensor::zeros(&[n, cols]);
        for r in 0..n {
            let src = self.images.row(r);
            let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for (i_new, &i_old) in perm.iter().enumerate() {
                dst[i_new] = src[i_old];
            }
        }
        Ok(Dataset {
            images: out,
            labels: self.labels.clone(),
        })
    }
}

fn read_u32(r: &mut impl Read, field: &str) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|_| Error::Format {
        field: field.to_string(),
        msg: "file truncated in header".to_string(),
    })
}

/// Load an images/labels file pair into a dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut imgs = BufReader::new(File::open(images_path)?);
    let magic = read_u32(&mut imgs, "images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            field: "images magic".into(),
            msg: format!("got {magic:#010x}, want {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32(&mut imgs, "image count")? as usize;
    let rows = read_u32(&mut imgs, "image rows")? as usize;
    let cols = read_u32(&mut imgs, "image cols")? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    imgs.read_exact(&mut pixels).map_err(|_| Error::Format {
        field: "images data".into(),
        msg: format!("file truncated, want {} pixel bytes", n * rows * cols),
    })?;

    let mut labs = BufReader::new(File::open(labels_path)?);
    let magic = read_u32(&mut labs, "labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            field: "labels magic".into(),
            msg: format!("got {magic:#010x}, want {LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = read_u32(&mut labs, "label count")? as usize;
    if n_labels != n {
        return Err(Error::Format {
            field: "label count".into(),
            msg: format!("{n} images but {n_labels} labels"),
        });
    }
    let mut labels = vec![0u8; n];
    labs.read_exact(&mut labels).map_err(|_| Error::Format {
        field: "labels data".into(),
        msg: format!("file truncated, want {n} label bytes"),
    })?;
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            field: "labels data".into(),
            msg: format!("label {bad} out of range 0..=9"),
        });
    }
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Dataset {
        images: Tensor::new(vec![n, rows * cols], data)?,
        labels,
    })
}

/// Write a rank-3 IDX images file from raw bytes (one image = rows*cols).
pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    n: usize,
    rows: usize,
    cols: usize,
) -> Result<()> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    f.write_u32::<BigEndian>(n as u32)?;
    f.write_u32::<BigEndian>(rows as u32)?;
    f.write_u32::<BigEndian>(cols as u32)?;
    f.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_u32::<BigEndian>(LABELS_MAGIC)?;
    f.write_u32::<BigEndian>(labels.len() as u32)?;
    f.write_all(labels)?;
    Ok(())
}

/// Minibatches for one epoch: a seeded shuffle of all indices, then
/// consecutive chunks of batch_size (last one may be short). The shuffle
/// depends only on (seed, epoch), never on prior epochs.
pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    at: usize,
}

pub fn batches(data: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::stream(seed, &[epoch]);
    order.shuffle(&mut r);
    Batches {
        data,
        order,
        batch_size,
        at: 0,
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.at >= self.order.len() {
            return None;
        }
        let stop = (self.at + self.batch_size).min(self.order.len());
        let chunk = &self.order[self.at..stop];
        self.at = stop;
        Some(self.data.select(chunk))
    }
}

/// Directory holding the bundled IDX files; MNIST_DIR overrides the
/// default data/mnist under the current directory.
pub fn default_dir() -> PathBuf {
    match std::env::var_os("MNIST_DIR") {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from("data/mnist"),
    }
}
