//! Feature file format and the corpus manifest.
//!
//! Feature file: magic "ATNF", little-endian u32 T, u32 D, u32 label-flag,
//! then T*D little-endian f32 row-major, then (if label-flag = 1) T label
//! bytes (255 = silence, else phoneme index). A CSV mirror exists for
//! debugging. The manifest is a CSV of (path, speaker, keyword, split).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{FeatureMatrix, Keyword};
use crate::error::DataError;

pub const FEATURE_MAGIC: &[u8; 4] = b"ATNF";

pub fn write_features(path: &Path, feats: &FeatureMatrix) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(feats.num_frames as u32).to_le_bytes())?;
    w.write_all(&(feats.dim as u32).to_le_bytes())?;
    let flag: u32 = feats.labels.is_some() as u32;
    w.write_all(&flag.to_le_bytes())?;
    for &x in &feats.data {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    if let Some(labels) = &feats.labels {
        w.write_all(labels)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic);
    }
    let num_frames = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let flag = read_u32(&mut r)?;
    if flag > 1 {
        return Err(DataError::Corrupt("label flag must be 0 or 1"));
    }
    if num_frames == 0 || dim == 0 || num_frames.saturating_mul(dim) > 1 << 28 {
        return Err(DataError::ShapeMismatch(format!("implausible shape {num_frames}x{dim}")));
    }
    let mut data = vec![0.0f64; num_frames * dim];
    for x in &mut data {
        let mut buf = [0u8; 4];
        read_exact(&mut r, &mut buf)?;
        *x = f32::from_le_bytes(buf) as f64;
    }
    let labels = if flag == 1 {
        let mut l = vec![0u8; num_frames];
        read_exact(&mut r, &mut l)?;
        Some(l)
    } else {
        None
    };
    let mut feats = FeatureMatrix::new(num_frames, dim, data);
    feats.labels = labels;
    Ok(feats)
}

/// Debug mirror: one CSV row per frame, optional trailing label column.
pub fn write_features_csv(path: &Path, feats: &FeatureMatrix) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in 0..feats.num_frames {
        let row: Vec<String> = feats.frame(t).iter().map(|x| format!("{x}")).collect();
        match &feats.labels {
            Some(l) => writeln!(w, "{},{}", row.join(","), l[t])?,
            None => writeln!(w, "{}", row.join(","))?,
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }

    pub fn from_tag(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "heldout" => Some(Split::Heldout),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub speaker: u32,
    pub keyword: Keyword,
    pub split: Split,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "path,speaker,keyword,split")?;
    for e in entries {
        writeln!(w, "{},{},{},{}", e.path.display(), e.speaker, e.keyword.tag(), e.split.tag())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let r = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(DataError::Invalid(format!("manifest line {}: bad field count", lineno + 1)));
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(fields[0]),
            speaker: fields[1]
                .parse()
                .map_err(|_| DataError::Invalid(format!("manifest line {}: bad speaker", lineno + 1)))?,
            keyword: Keyword::from_tag(fields[2])
                .ok_or_else(|| DataError::Invalid(format!("manifest line {}: bad keyword", lineno + 1)))?,
            split: Split::from_tag(fields[3])
                .ok_or_else(|| DataError::Invalid(format!("manifest line {}: bad split", lineno + 1)))?,
        });
    }
    Ok(entries)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::Truncated
        } else {
            DataError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
