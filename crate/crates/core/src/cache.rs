//! On-disk embedding caches.
//!
//! A cache stores everything head training needs, so the model that produced
//! the embeddings never has to run again: per-epoch embedding matrices (one
//! augmented view of every sample per epoch), the sample labels, and
//! optionally per-epoch task losses and classifier logits. Caches are
//! strictly read-only inputs to training and evaluation; nothing in the
//! toolkit ever mutates one in place.
//!
//! Binary layout (all integers and floats little endian):
//!
//! ```text
//! magic "UCCH" | version u16 | n_samples u64 | n_epochs u16
//! | embed_dim u32 | n_classes u32 | flags u8 (bit0 losses, bit1 logits)
//! then per epoch e = 0..n_epochs:
//!   embeddings  n_samples * embed_dim f32, row-major
//!   labels      n_samples u32
//!   losses      n_samples f32              (if flag bit0)
//!   logits      n_samples * n_classes f32  (if flag bit1)
//! ```
//!
//! The file size is an exact function of the header; a reader rejects any
//! mismatch. Sample `i` refers to the same underlying datum in every epoch,
//! so labels are identical across epoch blocks.

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsio::atomic_write_with;
use crate::losses::task_cross_entropy;
use crate::matrix::Matrix;

const CACHE_MAGIC: &[u8; 4] = b"UCCH";
const CACHE_VERSION: u16 = 1;
const HEADER_LEN: u64 = 25;
const FLAG_LOSSES: u8 = 0b01;
const FLAG_LOGITS: u8 = 0b10;

/// Parsed cache header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub n_samples: u64,
    pub n_epochs: u16,
    pub embed_dim: u32,
    pub n_classes: u32,
    pub has_losses: bool,
    pub has_logits: bool,
}

impl CacheHeader {
    fn bytes_per_sample(&self) -> u64 {
        let mut b = self.embed_dim as u64 * 4 + 4;
        if self.has_losses {
            b += 4;
        }
        if self.has_logits {
            b += self.n_classes as u64 * 4;
        }
        b
    }

    fn epoch_block_len(&self) -> u64 {
        // Blocks are laid out tensor-by-tensor, not sample-by-sample, but the
        // total is the same either way.
        self.n_samples * self.bytes_per_sample()
    }

    fn expected_file_len(&self) -> u64 {
        HEADER_LEN + self.n_epochs as u64 * self.epoch_block_len()
    }

    fn embeddings_offset(&self, epoch: u16) -> u64 {
        HEADER_LEN + epoch as u64 * self.epoch_block_len()
    }

    fn labels_offset(&self, epoch: u16) -> u64 {
        self.embeddings_offset(epoch) + self.n_samples * self.embed_dim as u64 * 4
    }

    fn losses_offset(&self, epoch: u16) -> u64 {
        self.labels_offset(epoch) + self.n_samples * 4
    }

    fn logits_offset(&self, epoch: u16) -> u64 {
        let mut off = self.losses_offset(epoch);
        if self.has_losses {
            off += self.n_samples * 4;
        }
        off
    }
}

/// Random-access reader over any `Read + Seek` source.
///
/// Single-record accessors seek directly to the record, so touching one
/// `(epoch, sample)` pair costs a record-sized read no matter how large the
/// cache is.
pub struct CacheReader<R> {
    src: R,
    header: CacheHeader,
    origin: PathBuf,
}

impl CacheReader<fs::File> {
    /// Opens and validates a cache file.
    pub fn open(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        CacheReader::from_source(file, path)
    }
}

impl<R: Read + Seek> CacheReader<R> {
    /// Wraps an arbitrary seekable source; `origin` labels error messages.
    pub fn from_source(mut src: R, origin: &Path) -> Result<Self> {
        let mut header_bytes = [0u8; HEADER_LEN as usize];
        src.rewind().map_err(|e| Error::io(origin, e))?;
        src.read_exact(&mut header_bytes)
            .map_err(|_| Error::format(origin, "file shorter than cache header"))?;
        if &header_bytes[0..4] != CACHE_MAGIC {
            return Err(Error::format(origin, "bad magic, not an embedding cache"));
        }
        let version = u16::from_le_bytes(header_bytes[4..6].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported cache version {version}"),
            ));
        }
        let n_samples = u64::from_le_bytes(header_bytes[6..14].try_into().unwrap());
        let n_epochs = u16::from_le_bytes(header_bytes[14..16].try_into().unwrap());
        let embed_dim = u32::from_le_bytes(header_bytes[16..20].try_into().unwrap());
        let n_classes = u32::from_le_bytes(header_bytes[20..24].try_into().unwrap());
        let flags = header_bytes[24];
        if flags & !(FLAG_LOSSES | FLAG_LOGITS) != 0 {
            return Err(Error::format(origin, format!("unknown flag bits {flags:#04x}")));
        }
        let header = CacheHeader {
            n_samples,
            n_epochs,
            embed_dim,
            n_classes,
            has_losses: flags & FLAG_LOSSES != 0,
            has_logits: flags & FLAG_LOGITS != 0,
        };
        if n_samples == 0 || n_epochs == 0 || embed_dim == 0 {
            return Err(Error::format(origin, "empty cache dimension in header"));
        }
        if n_classes < 2 {
            return Err(Error::format(origin, "cache must declare at least 2 classes"));
        }
        // Guard offset arithmetic against overflow before trusting it.
        let per_sample = header.bytes_per_sample();
        if n_samples.checked_mul(per_sample).is_none()
            || header
                .epoch_block_len()
                .checked_mul(n_epochs as u64)
                .and_then(|b| b.checked_add(HEADER_LEN))
                .is_none()
        {
            return Err(Error::format(origin, "dimension overflow in header"));
        }
        let actual_len = src.seek(SeekFrom::End(0)).map_err(|e| Error::io(origin, e))?;
        let expected_len = header.expected_file_len();
        if actual_len != expected_len {
            return Err(Error::format(
                origin,
                format!("file is {actual_len} bytes, header implies {expected_len}"),
            ));
        }
        Ok(CacheReader {
            src,
            header,
            origin: origin.to_path_buf(),
        })
    }

    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn n_samples(&self) -> usize {
        self.header.n_samples as usize
    }

    pub fn embed_dim(&self) -> usize {
        self.header.embed_dim as usize
    }

    fn check_epoch(&self, epoch: u16) -> Result<()> {
        if epoch >= self.header.n_epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} out of range, cache has {}",
                self.header.n_epochs
            )));
        }
        Ok(())
    }

    fn check_sample(&self, sample: u64) -> Result<()> {
        if sample >= self.header.n_samples {
            return Err(Error::invalid(format!(
                "sample {sample} out of range, cache has {}",
                self.header.n_samples
            )));
        }
        Ok(())
    }

    fn read_f32s_at(&mut self, offset: u64, count: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; count * 4];
        self.src
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.origin, e))?;
        self.src
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.origin, e))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn read_u32s_at(&mut self, offset: u64, count: usize) -> Result<Vec<u32>> {
        let mut bytes = vec![0u8; count * 4];
        self.src
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.origin, e))?;
        self.src
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.origin, e))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Full embedding matrix (`n_samples x embed_dim`) for one epoch view.
    pub fn epoch_embeddings(&mut self, epoch: u16) -> Result<Matrix<f32>> {
        self.check_epoch(epoch)?;
        let n = self.n_samples();
        let d = self.embed_dim();
        let data = self.read_f32s_at(self.header.embeddings_offset(epoch), n * d)?;
        Matrix::from_vec(n, d, data)
    }

    /// Labels for one epoch block (identical across epochs by construction).
    pub fn epoch_labels(&mut self, epoch: u16) -> Result<Vec<u32>> {
        self.check_epoch(epoch)?;
        let n = self.n_samples();
        let labels = self.read_u32s_at(self.header.labels_offset(epoch), n)?;
        if let Some(bad) = labels.iter().find(|&&l| l >= self.header.n_classes) {
            return Err(Error::format(
                &self.origin,
                format!("label {bad} >= n_classes {}", self.header.n_classes),
            ));
        }
        Ok(labels)
    }

    /// Per-sample task losses for one epoch.
    pub fn epoch_losses(&mut self, epoch: u16) -> Result<Vec<f32>> {
        self.check_epoch(epoch)?;
        if !self.header.has_losses {
            return Err(Error::invalid("cache stores no task losses"));
        }
        let n = self.n_samples();
        self.read_f32s_at(self.header.losses_offset(epoch), n)
    }

    /// Per-sample classifier logits (`n_samples x n_classes`) for one epoch.
    pub fn epoch_logits(&mut self, epoch: u16) -> Result<Matrix<f32>> {
        self.check_epoch(epoch)?;
        if !self.header.has_logits {
            return Err(Error::invalid("cache stores no logits"));
        }
        let n = self.n_samples();
        let c = self.header.n_classes as usize;
        let data = self.read_f32s_at(self.header.logits_offset(epoch), n * c)?;
        Matrix::from_vec(n, c, data)
    }

    /// Single embedding record; touches only that record's bytes.
    pub fn embedding(&mut self, epoch: u16, sample: u64) -> Result<Vec<f32>> {
        self.check_epoch(epoch)?;
        self.check_sample(sample)?;
        let d = self.embed_dim();
        let offset = self.header.embeddings_offset(epoch) + sample * d as u64 * 4;
        self.read_f32s_at(offset, d)
    }

    /// Single label.
    pub fn label(&mut self, epoch: u16, sample: u64) -> Result<u32> {
        self.check_epoch(epoch)?;
        self.check_sample(sample)?;
        let offset = self.header.labels_offset(epoch) + sample * 4;
        let label = self.read_u32s_at(offset, 1)?[0];
        if label >= self.header.n_classes {
            return Err(Error::format(
                &self.origin,
                format!("label {label} >= n_classes {}", self.header.n_classes),
            ));
        }
        Ok(label)
    }

    /// Single stored task loss.
    pub fn loss(&mut self, epoch: u16, sample: u64) -> Result<f32> {
        self.check_epoch(epoch)?;
        self.check_sample(sample)?;
        if !self.header.has_losses {
            return Err(Error::invalid("cache stores no task losses"));
        }
        let offset = self.header.losses_offset(epoch) + sample * 4;
        Ok(self.read_f32s_at(offset, 1)?[0])
    }
}

/// In-memory image of a cache, used to build new cache files.
#[derive(Debug, Clone)]
pub struct CacheContents {
    pub n_classes: u32,
    /// One label per sample, shared by all epochs.
    pub labels: Vec<u32>,
    /// One `n_samples x embed_dim` view matrix per epoch.
    pub epochs: Vec<Matrix<f32>>,
    /// Per-epoch task losses, parallel to `epochs`.
    pub losses: Option<Vec<Vec<f32>>>,
    /// Per-epoch logits matrices (`n_samples x n_classes`).
    pub logits: Option<Vec<Matrix<f32>>>,
}

impl CacheContents {
    fn validate(&self) -> Result<()> {
        if self.epochs.is_empty() {
            return Err(Error::invalid("cache needs at least one epoch view"));
        }
        if self.epochs.len() > u16::MAX as usize {
            return Err(Error::invalid("too many epochs for cache format"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("cache needs at least 2 classes"));
        }
        let n = self.labels.len();
        let d = self.epochs[0].cols();
        if n == 0 || d == 0 {
            return Err(Error::invalid("cache needs at least one sample and dimension"));
        }
        for m in &self.epochs {
            if m.rows() != n {
                return Err(Error::ShapeMismatch {
                    what: "epoch view rows",
                    expected: n,
                    got: m.rows(),
                });
            }
            if m.cols() != d {
                return Err(Error::ShapeMismatch {
                    what: "epoch view cols",
                    expected: d,
                    got: m.cols(),
                });
            }
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} >= n_classes {}",
                self.n_classes
            )));
        }
        if let Some(losses) = &self.losses {
            if losses.len() != self.epochs.len() {
                return Err(Error::ShapeMismatch {
                    what: "loss epoch count",
                    expected: self.epochs.len(),
                    got: losses.len(),
                });
            }
            for l in losses {
                if l.len() != n {
                    return Err(Error::ShapeMismatch {
                        what: "loss vector length",
                        expected: n,
                        got: l.len(),
                    });
                }
            }
        }
        if let Some(logits) = &self.logits {
            if logits.len() != self.epochs.len() {
                return Err(Error::ShapeMismatch {
                    what: "logits epoch count",
                    expected: self.epochs.len(),
                    got: logits.len(),
                });
            }
            for m in logits {
                if m.rows() != n || m.cols() != self.n_classes as usize {
                    return Err(Error::invalid(
                        "logits matrices must be n_samples x n_classes",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the cache format at `path` (atomic write).
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let n = self.labels.len();
        let d = self.epochs[0].cols();
        atomic_write_with(path, |w| {
            let io = |e: std::io::Error| Error::io(path, e);
            w.write_all(CACHE_MAGIC).map_err(io)?;
            w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(n as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(self.epochs.len() as u16).to_le_bytes())
                .map_err(io)?;
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&self.n_classes.to_le_bytes()).map_err(io)?;
            let mut flags = 0u8;
            if self.losses.is_some() {
                flags |= FLAG_LOSSES;
            }
            if self.logits.is_some() {
                flags |= FLAG_LOGITS;
            }
            w.write_all(&[flags]).map_err(io)?;
            for (e, view) in self.epochs.iter().enumerate() {
                for v in view.as_slice() {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
                for l in &self.labels {
                    w.write_all(&l.to_le_bytes()).map_err(io)?;
                }
                if let Some(losses) = &self.losses {
                    for v in &losses[e] {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
                if let Some(logits) = &self.logits {
                    for v in logits[e].as_slice() {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
            }
            Ok(())
        })
    }

    /// Reads an entire cache file into memory.
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = CacheReader::open(path)?;
        let header = *reader.header();
        let labels = reader.epoch_labels(0)?;
        let mut epochs = Vec::with_capacity(header.n_epochs as usize);
        let mut losses = header.has_losses.then(Vec::new);
        let mut logits = header.has_logits.then(Vec::new);
        for e in 0..header.n_epochs {
            epochs.push(reader.epoch_embeddings(e)?);
            if let Some(ls) = losses.as_mut() {
                ls.push(reader.epoch_losses(e)?);
            }
            if let Some(lg) = logits.as_mut() {
                lg.push(reader.epoch_logits(e)?);
            }
        }
        Ok(CacheContents {
            n_classes: header.n_classes,
            labels,
            epochs,
            losses,
            logits,
        })
    }
}

/// What [`build_cache`] should derive from the classifier.
#[derive(Debug, Clone, Copy, Default)]
pub struct CacheBuildOptions {
    pub store_losses: bool,
    pub store_logits: bool,
}

/// Assembles and writes a cache from per-epoch embedding views.
///
/// When a classifier is given, its logits are computed per view in `f32` and
/// the stored task loss of each sample is the cross-entropy *of those stored
/// logits*, so a later consumer recomputing losses from stored logits
/// reproduces the stored losses bit for bit.
pub fn build_cache(
    path: &Path,
    epochs: Vec<Matrix<f32>>,
    labels: Vec<u32>,
    n_classes: u32,
    classifier: Option<&ClassifierHead>,
    options: CacheBuildOptions,
) -> Result<()> {
    let mut contents = CacheContents {
        n_classes,
        labels,
        epochs,
        losses: None,
        logits: None,
    };
    if options.store_losses || options.store_logits {
        let classifier = classifier.ok_or_else(|| {
            Error::invalid("storing losses or logits requires a classifier head")
        })?;
        if classifier.n_classes() != n_classes as usize {
            return Err(Error::ShapeMismatch {
                what: "classifier class count",
                expected: n_classes as usize,
                got: classifier.n_classes(),
            });
        }
        let mut all_losses = Vec::with_capacity(contents.epochs.len());
        let mut all_logits = Vec::with_capacity(contents.epochs.len());
        for view in &contents.epochs {
            let logits = classifier.logits_batch(view)?;
            let mut losses = Vec::with_capacity(view.rows());
            for (i, &label) in contents.labels.iter().enumerate() {
                losses.push(task_cross_entropy(logits.row(i), label as usize)?);
            }
            all_losses.push(losses);
            all_logits.push(logits);
        }
        if options.store_losses {
            contents.losses = Some(all_losses);
        }
        if options.store_logits {
            contents.logits = Some(all_logits);
        }
    }
    contents.write(path)
}

/// Rebuilds `input` at `output` with task losses (and optionally logits)
/// computed from `classifier`. The input file is never touched.
pub fn precompute_losses(
    input: &Path,
    output: &Path,
    classifier: &ClassifierHead,
    store_logits: bool,
) -> Result<()> {
    let contents = CacheContents::read(input)?;
    build_cache(
        output,
        contents.epochs,
        contents.labels,
        contents.n_classes,
        Some(classifier),
        CacheBuildOptions {
            store_losses: true,
            store_logits,
        },
    )
}

/// Frozen linear classifier: `logits = W e + b` with `W: n_classes x
/// embed_dim`. Immutable once constructed; the toolkit never trains one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weight: Matrix<f32>,
    bias: Vec<f32>,
}

impl ClassifierHead {
    pub fn new(weight: Matrix<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.rows() < 2 {
            return Err(Error::invalid("classifier needs at least 2 classes"));
        }
        if weight.cols() == 0 {
            return Err(Error::invalid("classifier needs a positive embed_dim"));
        }
        if bias.len() != weight.rows() {
            return Err(Error::ShapeMismatch {
                what: "classifier bias length",
                expected: weight.rows(),
                got: bias.len(),
            });
        }
        Ok(ClassifierHead { weight, bias })
    }

    pub fn n_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Logits for one embedding. Dot products accumulate in `f64` and round
    /// once to `f32`, which keeps the result deterministic and well
    /// conditioned.
    pub fn logits(&self, embedding: &[f32]) -> Result<Vec<f32>> {
        if embedding.len() != self.embed_dim() {
            return Err(Error::ShapeMismatch {
                what: "classifier input dimension",
                expected: self.embed_dim(),
                got: embedding.len(),
            });
        }
        let mut out = Vec::with_capacity(self.n_classes());
        for c in 0..self.n_classes() {
            let row = self.weight.row(c);
            let mut acc = self.bias[c] as f64;
            for (w, x) in row.iter().zip(embedding) {
                acc += *w as f64 * *x as f64;
            }
            out.push(acc as f32);
        }
        Ok(out)
    }

    /// Logits for a whole batch, one row per sample.
    pub fn logits_batch(&self, batch: &Matrix<f32>) -> Result<Matrix<f32>> {
        let mut data = Vec::with_capacity(batch.rows() * self.n_classes());
        for i in 0..batch.rows() {
            data.extend_from_slice(&self.logits(batch.row(i))?);
        }
        Matrix::from_vec(batch.rows(), self.n_classes(), data)
    }

    /// Writes the classifier as plain text: a header line `n_classes
    /// embed_dim`, one weight row per class, then the bias row. Floats use
    /// shortest-roundtrip formatting, so load/save is lossless.
    pub fn save_text(&self, path: &Path) -> Result<()> {
        atomic_write_with(path, |w| {
            let io = |e: std::io::Error| Error::io(path, e);
            writeln!(w, "{} {}", self.n_classes(), self.embed_dim()).map_err(io)?;
            for c in 0..self.n_classes() {
                let row: Vec<String> = self.weight.row(c).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", row.join(" ")).map_err(io)?;
            }
            let bias: Vec<String> = self.bias.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", bias.join(" ")).map_err(io)?;
            Ok(())
        })
    }

    /// Reads the text format written by [`ClassifierHead::save_text`].
    pub fn load_text(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty classifier file"))?;
        let mut parts = header.split_whitespace();
        let parse_dim = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| Error::Config {
                line: line_no + 1,
                detail: "classifier header must be `n_classes embed_dim`".into(),
            })
        };
        let n_classes = parse_dim(parts.next())?;
        let embed_dim = parse_dim(parts.next())?;
        let mut rows = Vec::with_capacity(n_classes * embed_dim);
        for _ in 0..n_classes {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::format(path, "missing classifier weight row"))?;
            let row = parse_floats(line, embed_dim, line_no + 1)?;
            rows.extend_from_slice(&row);
        }
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| Error::format(path, "missing classifier bias row"))?;
        let bias = parse_floats(line, n_classes, line_no + 1)?;
        if let Some((line_no, _)) = lines.next() {
            return Err(Error::Config {
                line: line_no + 1,
                detail: "trailing content after classifier bias row".into(),
            });
        }
        ClassifierHead::new(Matrix::from_vec(n_classes, embed_dim, rows)?, bias)
    }
}

fn parse_floats(line: &str, expected: usize, line_no: usize) -> Result<Vec<f32>> {
    let values: Vec<f32> = line
        .split_whitespace()
        .map(|t| t.parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config {
            line: line_no,
            detail: format!("bad float: {e}"),
        })?;
    if values.len() != expected {
        return Err(Error::Config {
            line: line_no,
            detail: format!("expected {expected} values, got {}", values.len()),
        });
    }
    Ok(values)
}

/// Imports embeddings from a CSV-like text file: one sample per line,
/// `label,v1,...,vd`. Empty lines and `#` comments are skipped.
pub fn read_embeddings_csv(path: &Path) -> Result<(Matrix<f32>, Vec<u32>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line_no = idx + 1;
        let mut fields = line.split(',').map(str::trim);
        let label: u32 = fields
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::Config {
                line: line_no,
                detail: format!("bad label: {e}"),
            })?;
        let row: Vec<f32> = fields
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config {
                line: line_no,
                detail: format!("bad embedding value: {e}"),
            })?;
        if row.is_empty() {
            return Err(Error::Config {
                line: line_no,
                detail: "row has a label but no embedding values".into(),
            });
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Config {
                    line: line_no,
                    detail: format!("row has {} values, earlier rows had {w}", row.len()),
                });
            }
            _ => {}
        }
        labels.push(label);
        data.extend_from_slice(&row);
    }
    let width = width.ok_or_else(|| Error::format(path, "no data rows in embedding file"))?;
    let matrix = Matrix::from_vec(labels.len(), width, data)?;
    Ok((matrix, labels))
}
