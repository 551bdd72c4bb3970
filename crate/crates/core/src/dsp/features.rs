//! In-memory feature types and the little-endian `CFE1` feature file.
//!
//! File layout: magic `CFE1`, `u32` sample count, then per sample `u32`
//! label, `u32` id length, UTF-8 id, `f32[128*128]` spectrogram,
//! `u32` true length, `f32[30*300]` embeddings. A manifest is a UTF-8 text
//! file with one feature-file path per line (relative to the manifest);
//! `#` starts a comment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::binio::{write_f32s, write_u32, Cursor};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"CFE1";

/// Feature dimensions. [`FeatureShape::STANDARD`] is the only shape the
/// file format accepts; smaller shapes exist for fast experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeatureShape {
    pub spec_rows: usize,
    pub spec_cols: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
}

impl FeatureShape {
    pub const STANDARD: FeatureShape = FeatureShape {
        spec_rows: 128,
        spec_cols: 128,
        seq_len: 30,
        embed_dim: 300,
    };

    pub fn spec_len(&self) -> usize {
        self.spec_rows * self.spec_cols
    }

    pub fn text_len(&self) -> usize {
        self.seq_len * self.embed_dim
    }
}

/// Time-frequency magnitude matrix for one audio segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    segment_index: u32,
}

impl Spectrogram {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>, segment_index: u32) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim(format!(
                "spectrogram {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            rows,
            cols,
            values,
            segment_index,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn segment_index(&self) -> u32 {
        self.segment_index
    }
}

/// Padded word-vector matrix for one transcript; rows at or beyond
/// `true_length` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingSequence {
    seq_len: usize,
    dim: usize,
    vectors: Vec<f32>,
    true_length: usize,
}

impl WordEmbeddingSequence {
    pub fn new(seq_len: usize, dim: usize, mut vectors: Vec<f32>, true_length: usize) -> Result<Self> {
        if vectors.len() != seq_len * dim {
            return Err(Error::dim(format!(
                "embedding sequence {seq_len}x{dim} needs {} values, got {}",
                seq_len * dim,
                vectors.len()
            )));
        }
        if true_length > seq_len {
            return Err(Error::Range(format!(
                "true length {true_length} exceeds sequence length {seq_len}"
            )));
        }
        vectors[true_length * dim..].fill(0.0);
        Ok(Self {
            seq_len,
            dim,
            vectors,
            true_length,
        })
    }

    /// Splits or zero-pads `words` (each of length `dim`) to `seq_len` rows.
    pub fn from_words(words: &[Vec<f32>], seq_len: usize, dim: usize) -> Result<Self> {
        let n = words.len().min(seq_len);
        let mut vectors = vec![0f32; seq_len * dim];
        for (i, w) in words[..n].iter().enumerate() {
            if w.len() != dim {
                return Err(Error::dim(format!("word {i} has {} dims, expected {dim}", w.len())));
            }
            vectors[i * dim..(i + 1) * dim].copy_from_slice(w);
        }
        Self::new(seq_len, dim, vectors, n)
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub x_a: Spectrogram,
    pub x_t: WordEmbeddingSequence,
    pub label: usize,
    pub utterance_id: String,
    /// Synthetic corpora only: the text side was drawn from another class.
    /// Not persisted in feature files.
    pub conflict: bool,
}

impl LabeledSample {
    pub fn shape(&self) -> FeatureShape {
        FeatureShape {
            spec_rows: self.x_a.rows(),
            spec_cols: self.x_a.cols(),
            seq_len: self.x_t.seq_len(),
            embed_dim: self.x_t.dim(),
        }
    }
}

/// Writes samples in the `CFE1` format. Every sample must have the standard
/// feature shape.
pub fn save_features(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.shape() != FeatureShape::STANDARD) {
        return Err(Error::dim(format!(
            "sample `{}` has shape {:?}; feature files store only {:?}",
            s.utterance_id,
            s.shape(),
            FeatureShape::STANDARD
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    write_u32(&mut w, u32::try_from(samples.len()).map_err(|_| Error::Input("too many samples".into()))?)
        .map_err(io)?;
    for s in samples {
        write_u32(&mut w, s.label as u32).map_err(io)?;
        write_u32(&mut w, s.utterance_id.len() as u32).map_err(io)?;
        w.write_all(s.utterance_id.as_bytes()).map_err(io)?;
        write_f32s(&mut w, s.x_a.values()).map_err(io)?;
        write_u32(&mut w, s.x_t.true_length() as u32).map_err(io)?;
        write_f32s(&mut w, s.x_t.vectors()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads one `CFE1` file. Labels must be below `num_classes`.
pub fn read_feature_file(path: &Path, num_classes: usize) -> Result<Vec<LabeledSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Cursor {
        inner: BufReader::new(file),
        offset: 0,
        path,
    };
    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        r.offset = 0;
        return Err(r.err(format!("bad magic {magic:?}, expected {FEATURE_MAGIC:?}")));
    }
    let n = r.u32()? as usize;
    let shape = FeatureShape::STANDARD;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let label_at = r.offset;
        let label = r.u32()? as usize;
        if label >= num_classes {
            r.offset = label_at;
            return Err(r.err(format!("label {label} out of range for {num_classes} classes")));
        }
        let id_len = r.u32()? as usize;
        if id_len > 4096 {
            return Err(r.err(format!("implausible utterance id length {id_len}")));
        }
        let mut id = vec![0u8; id_len];
        r.bytes(&mut id)?;
        let utterance_id = String::from_utf8(id).map_err(|_| r.err("utterance id is not UTF-8"))?;
        let spec = r.f32s(shape.spec_len())?;
        let len_at = r.offset;
        let true_length = r.u32()? as usize;
        let emb = r.f32s(shape.text_len())?;
        let x_a = Spectrogram::new(shape.spec_rows, shape.spec_cols, spec, 0).map_err(|e| r.err(e.to_string()))?;
        if true_length > shape.seq_len {
            r.offset = len_at;
            return Err(r.err(format!("true length {true_length} exceeds {}", shape.seq_len)));
        }
        let x_t = WordEmbeddingSequence::new(shape.seq_len, shape.embed_dim, emb, true_length)?;
        out.push(LabeledSample {
            x_a,
            x_t,
            label,
            utterance_id,
            conflict: false,
        });
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
        return Err(r.err("trailing bytes after the last sample"));
    }
    number_segments(&mut out);
    Ok(out)
}

/// Consecutive samples sharing an utterance id are its segments in order.
fn number_segments(samples: &mut [LabeledSample]) {
    let mut prev: Option<String> = None;
    let mut idx = 0u32;
    for s in samples {
        if prev.as_deref() == Some(s.utterance_id.as_str()) {
            idx += 1;
        } else {
            idx = 0;
            prev = Some(s.utterance_id.clone());
        }
        s.x_a.segment_index = idx;
    }
}

/// Feature-file paths listed in a manifest, resolved against its directory.
pub fn read_manifest(manifest_path: &Path) -> Result<Vec<PathBuf>> {
    let file = File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(manifest_path, e))?;
        let entry = line.split('#').next().unwrap_or("").trim();
        if entry.is_empty() {
            continue;
        }
        let p = Path::new(entry);
        out.push(if p.is_absolute() { p.to_path_buf() } else { base.join(p) });
    }
    Ok(out)
}

pub fn write_manifest(manifest_path: &Path, files: &[&str]) -> Result<()> {
    let mut body = String::from("# emofuse feature manifest\n");
    for f in files {
        body.push_str(f);
        body.push('\n');
    }
    std::fs::write(manifest_path, body).map_err(|e| Error::io(manifest_path, e))
}

/// Loads every feature file a manifest lists, in order.
pub fn load_features(manifest_path: &Path, num_classes: usize) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for path in read_manifest(manifest_path)? {
        if !path.exists() {
            return Err(Error::Input(format!(
                "manifest {} references missing feature file {}",
                manifest_path.display(),
                path.display()
            )));
        }
        out.extend(read_feature_file(&path, num_classes)?);
    }
    Ok(out)
}

/// Reads a text embedding file: one word vector per line, whitespace
/// separated. Lines beyond `seq_len` are dropped, missing rows are zero.
pub fn read_embedding_text(path: &Path, seq_len: usize, dim: usize) -> Result<WordEmbeddingSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut words = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let row = trimmed
                .split_whitespace()
                .map(str::parse::<f32>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    msg: e.to_string(),
                })?;
            if row.len() != dim {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    msg: format!("word vector has {} values, expected {dim}", row.len()),
                });
            }
            words.push(row);
        }
        offset += line.len() as u64 + 1;
    }
    WordEmbeddingSequence::from_words(&words, seq_len, dim)
}
