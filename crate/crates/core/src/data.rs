//! Dataset ingestion, label encoding, splitting, batching and the
//! preprocessed example cache.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{one_hot, Head};
use crate::loss::HeadMask;
use crate::model::INPUT_SHAPE;
use crate::preprocess::{preprocess, read_pnm, EyePair, PreprocessConfig, RawImage};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const FER_SIDE: usize = 48;
const PIXELS: usize = 50 * 50;

/// One training example: a preprocessed image and up to four labels
/// stored as class indices in canonical head order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Tensor,
    pub labels: [Option<usize>; 4],
    pub source_id: String,
}

impl LabeledExample {
    /// Validates the image shape and label ranges. Pixel values are
    /// snapped to `f32` so a cache round-trip is lossless.
    pub fn new(image: Tensor, labels: [Option<usize>; 4], source_id: impl Into<String>) -> Result<Self> {
        if image.shape() != INPUT_SHAPE {
            return Err(Error::Dimension(format!(
                "example image must be {INPUT_SHAPE:?}, got {:?}",
                image.shape()
            )));
        }
        if labels[Head::Emotion.index()].is_none() {
            return Err(Error::Label("emotion label is required".into()));
        }
        for h in Head::ALL {
            if let Some(c) = labels[h.index()] {
                if c >= h.num_classes() {
                    return Err(Error::Label(format!(
                        "{h} class {c} out of range 0..{}",
                        h.num_classes()
                    )));
                }
            }
        }
        let mut image = image;
        for v in image.data_mut() {
            *v = *v as f32 as f64;
        }
        Ok(LabeledExample {
            image,
            labels,
            source_id: source_id.into(),
        })
    }

    pub fn label(&self, head: Head) -> Option<usize> {
        self.labels[head.index()]
    }

    pub fn mask(&self) -> HeadMask {
        HeadMask(self.labels.map(|l| l.is_some()))
    }

    /// Per-head one-hot vectors; absent heads are `None`.
    pub fn one_hot_labels(&self) -> [Option<Vec<f64>>; 4] {
        let mut out: [Option<Vec<f64>>; 4] = Default::default();
        for h in Head::ALL {
            out[h.index()] = self.label(h).map(|c| one_hot(c, h.num_classes()));
        }
        out
    }
}

/// Maps the FER CSV's emotion codes (0=angry, 1=disgust, 2=fear, 3=happy,
/// 4=sad, 5=surprise, 6=neutral in the common distribution) to canonical
/// indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FerEmotionMap(pub [usize; 7]);

impl Default for FerEmotionMap {
    fn default() -> Self {
        FerEmotionMap([5, 2, 1, 3, 4, 0, 6])
    }
}

impl FerEmotionMap {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 7];
        for &c in &self.0 {
            if c >= 7 || seen[c] {
                return Err(Error::Config(format!(
                    "fer_emotion_map {:?} is not a permutation of 0..7",
                    self.0
                )));
            }
            seen[c] = true;
        }
        Ok(())
    }
}

/// Reads a FER-style CSV with `emotion`, `pixels` (2304 space-separated
/// values, row-major 48×48) and a usage column. Only the emotion head is
/// labeled.
pub fn load_fer_csv(path: impl AsRef<Path>, map: &FerEmotionMap, cfg: &PreprocessConfig) -> Result<Vec<LabeledExample>> {
    map.validate()?;
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Format(format!("{}: missing column '{name}'", path.display())))
    };
    let emotion_col = column("emotion")?;
    let pixels_col = column("pixels")?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Row { row, msg: e.to_string() })?;
        let field = |c: usize| {
            record
                .get(c)
                .ok_or_else(|| Error::Row { row, msg: "missing field".into() })
        };
        let code: usize = field(emotion_col)?
            .trim()
            .parse()
            .map_err(|_| Error::Label(format!("row {row}: emotion code is not an integer")))?;
        if code > 6 {
            return Err(Error::Label(format!("row {row}: emotion code {code} outside 0-6")));
        }
        let pixels = field(pixels_col)?
            .split_whitespace()
            .map(|p| p.parse::<u8>())
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::Row { row, msg: format!("bad pixel value: {e}") })?;
        if pixels.len() != FER_SIDE * FER_SIDE {
            return Err(Error::Row {
                row,
                msg: format!("expected {} pixels, got {}", FER_SIDE * FER_SIDE, pixels.len()),
            });
        }
        rows.push((row, map.0[code], pixels));
    }

    rows.into_par_iter()
        .map(|(row, emotion, pixels)| {
            let img = RawImage::gray(FER_SIDE, FER_SIDE, pixels)?;
            let pre = preprocess(&img, None, cfg)?;
            LabeledExample::new(pre.input, [Some(emotion), None, None, None], format!("row{row}"))
        })
        .collect()
}

/// Reads `filename,left_x,left_y,right_x,right_y` into a map keyed by file
/// stem.
pub fn read_landmarks(path: impl AsRef<Path>) -> Result<HashMap<String, EyePair>> {
    #[derive(Deserialize)]
    struct Row {
        filename: String,
        left_x: f64,
        left_y: f64,
        right_x: f64,
        right_y: f64,
    }
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = HashMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let r = row.map_err(|e| Error::Row { row: i + 1, msg: format!("landmarks: {e}") })?;
        out.insert(stem(&r.filename), EyePair::new(r.left_x, r.left_y, r.right_x, r.right_y));
    }
    Ok(out)
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

/// Where the RAF-DB pieces live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RafdbPaths {
    pub image_dir: PathBuf,
    pub emotion_labels: PathBuf,
    pub attribute_dir: PathBuf,
    #[serde(default)]
    pub landmarks: Option<PathBuf>,
}

impl RafdbPaths {
    /// The usual layout below a dataset root.
    pub fn under(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        RafdbPaths {
            image_dir: root.join("Image/original"),
            emotion_labels: root.join("EmoLabel/list_patition_label.txt"),
            attribute_dir: root.join("Annotation/manual"),
            landmarks: Some(root.join("landmarks.csv")),
        }
    }
}

/// Shape of the per-image attribute files. For an image `train_00001.jpg`
/// the attributes are read from `<attribute_dir>/train_00001<suffix>`, and
/// gender, race and age group are whole lines at the given 0-based
/// positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RafdbLayout {
    pub attribute_suffix: String,
    pub gender_line: usize,
    pub race_line: usize,
    pub age_line: usize,
}

impl Default for RafdbLayout {
    fn default() -> Self {
        // five landmark lines precede the attributes in the manual annotations
        RafdbLayout {
            attribute_suffix: "_manu_attri.txt".into(),
            gender_line: 5,
            race_line: 6,
            age_line: 7,
        }
    }
}

/// Examples plus the number of images that had no landmarks and were
/// therefore not rotated.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub examples: Vec<LabeledExample>,
    pub rotation_skipped: usize,
}

fn resolve_image(dir: &Path, listed: &str) -> Option<PathBuf> {
    let s = stem(listed);
    let direct = dir.join(listed);
    let is_pnm = matches!(
        Path::new(listed).extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm")
    );
    if is_pnm && direct.is_file() {
        return Some(direct);
    }
    ["pgm", "ppm"]
        .iter()
        .map(|ext| dir.join(format!("{s}.{ext}")))
        .find(|p| p.is_file())
}

fn read_attributes(path: &Path, layout: &RafdbLayout) -> Result<[usize; 3]> {
    let file = fs::File::open(path).map_err(|e| {
        Error::Ingestion(format!("attribute file {} unreadable: {e}", path.display()))
    })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let field = |idx: usize, head: Head| -> Result<usize> {
        let raw = lines.get(idx).map(|l| l.trim()).ok_or_else(|| {
            Error::Label(format!("{}: no line {idx} for {head}", path.display()))
        })?;
        let v: usize = raw.parse().map_err(|_| {
            Error::Label(format!("{}: {head} value '{raw}' is not an integer", path.display()))
        })?;
        if v >= head.num_classes() {
            return Err(Error::Label(format!(
                "{}: {head} value {v} outside 0..{}",
                path.display(),
                head.num_classes()
            )));
        }
        Ok(v)
    };
    Ok([
        field(layout.gender_line, Head::Gender)?,
        field(layout.race_line, Head::Race)?,
        field(layout.age_line, Head::Age)?,
    ])
}

/// Ingests RAF-DB: emotion codes 1-7 (surprise, fear, disgust, happy, sad,
/// angry, neutral) map to canonical 0-6; gender, race and age come from the
/// attribute files. Images are pose-normalized when landmarks exist.
/// Output order follows the label file.
pub fn load_rafdb(paths: &RafdbPaths, layout: &RafdbLayout, cfg: &PreprocessConfig) -> Result<Ingested> {
    let label_path = &paths.emotion_labels;
    let file = fs::File::open(label_path).map_err(|e| Error::io(label_path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(label_path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(code), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Row {
                row: i + 1,
                msg: format!("expected '<filename> <code>', got '{line}'"),
            });
        };
        let code: usize = code
            .parse()
            .map_err(|_| Error::Label(format!("{name}: emotion code '{code}' is not an integer")))?;
        if !(1..=7).contains(&code) {
            return Err(Error::Label(format!("{name}: emotion code {code} outside 1-7")));
        }
        entries.push((name.to_string(), code - 1));
    }

    let landmarks = match &paths.landmarks {
        Some(p) => read_landmarks(p)?,
        None => HashMap::new(),
    };

    let results: Vec<Result<(LabeledExample, bool)>> = entries
        .par_iter()
        .map(|(name, emotion)| {
            let image_path = resolve_image(&paths.image_dir, name).ok_or_else(|| {
                Error::Ingestion(format!(
                    "image {name} not found in {} (expected a .pgm or .ppm)",
                    paths.image_dir.display()
                ))
            })?;
            let attr_path = paths
                .attribute_dir
                .join(format!("{}{}", stem(name), layout.attribute_suffix));
            let [gender, race, age] = read_attributes(&attr_path, layout)?;
            let img = read_pnm(&image_path)?;
            let eyes = landmarks.get(&stem(name));
            let pre = preprocess(&img, eyes, cfg)?;
            let ex = LabeledExample::new(
                pre.input,
                [Some(*emotion), Some(gender), Some(race), Some(age)],
                name.clone(),
            )?;
            Ok((ex, eyes.is_none()))
        })
        .collect();

    let mut examples = Vec::with_capacity(results.len());
    let mut rotation_skipped = 0;
    for r in results {
        let (ex, skipped) = r?;
        rotation_skipped += skipped as usize;
        examples.push(ex);
    }
    Ok(Ingested {
        examples,
        rotation_skipped,
    })
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub seed: u64,
}

/// Seeded shuffle, then the first `floor(ratio · n)` examples train.
pub fn split(examples: Vec<LabeledExample>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    let n = examples.len();
    if n < 2 {
        return Err(Error::Size(format!("need at least 2 examples to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Range(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n_train = (ratio * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Size(format!(
            "ratio {ratio} leaves an empty side for {n} examples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut slots: Vec<Option<LabeledExample>> = examples.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("each index used once");
    let train = order[..n_train].iter().map(|&i| take(i)).collect();
    let validation = order[n_train..].iter().map(|&i| take(i)).collect();
    Ok(DatasetSplit {
        train,
        validation,
        seed,
    })
}

/// Partitions `0..n` into batches of `batch_size` (last one may be short),
/// optionally shuffled with `rng`.
pub fn batches(n: usize, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Size("cannot batch an empty example list".into()));
    }
    if batch_size == 0 {
        return Err(Error::Size("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

pub const CACHE_MAGIC: &[u8; 8] = b"MTFERDS1";

/// Serialized size of one cache record.
pub fn cache_record_len(source_id: &str) -> usize {
    2 + source_id.len() + 4 * PIXELS + 4 * 2
}

/// Cache layout: magic, u64 LE count, then per example a u16 LE length and
/// UTF-8 source id, 2500 f32 LE pixels, and for each head a presence byte
/// and a class byte.
pub fn encode_cache(examples: &[LabeledExample]) -> Result<Vec<u8>> {
    let total: usize = examples.iter().map(|e| cache_record_len(&e.source_id)).sum();
    let mut out = Vec::with_capacity(16 + total);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(examples.len() as u64).to_le_bytes());
    for e in examples {
        let id = e.source_id.as_bytes();
        let len: u16 = id
            .len()
            .try_into()
            .map_err(|_| Error::Size(format!("source id of {} bytes is too long", id.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for &v in e.image.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for l in e.labels {
            out.push(l.is_some() as u8);
            out.push(l.unwrap_or(0) as u8);
        }
    }
    Ok(out)
}

pub fn decode_cache(bytes: &[u8]) -> Result<Vec<LabeledExample>> {
    if bytes.len() < 16 || &bytes[..8] != CACHE_MAGIC {
        return Err(Error::Format("not an example cache (bad magic bytes)".into()));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut pos = 16;
    let truncated = || Error::Format("example cache is truncated".into());
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(len)?)
            .map_err(|_| Error::Format("source id is not UTF-8".into()))?
            .to_string();
        let pixels = take(4 * PIXELS)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let flags = take(8)?;
        let mut labels = [None; 4];
        for (i, slot) in labels.iter_mut().enumerate() {
            if flags[2 * i] != 0 {
                *slot = Some(flags[2 * i + 1] as usize);
            }
        }
        out.push(LabeledExample::new(Tensor::new(INPUT_SHAPE.to_vec(), pixels)?, labels, id)?);
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - pos
        )));
    }
    Ok(out)
}

pub fn write_cache(examples: &[LabeledExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cache(examples)?).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}

/// True if the file starts with the cache magic.
pub fn is_cache_file(path: impl AsRef<Path>) -> bool {
    use std::io::Read;
    let mut buf = [0u8; 8];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut buf))
        .map(|_| &buf == CACHE_MAGIC)
        .unwrap_or(false)
}
