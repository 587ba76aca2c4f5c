//! On-disk dataset layout and video-level splitting.
//!
//! A dataset directory holds `manifest.json` plus one sub-directory per
//! video containing `segments.jsonl` and one `<modality>.f32` matrix per
//! present modality. Matrices are little-endian: `u32 rows`, `u32 cols`,
//! then `rows * cols` float32 values, row `r` being timestamp `r`. A row of
//! all-NaN marks the modality absent at that timestamp.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{propagate_labels, ClassId, FeatureStream, Modality, ModalityDims, SegmentAnnotation, TimestepFeatures};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub stream: FeatureStream,
    pub segments: Vec<SegmentAnnotation>,
    /// Per-timestamp propagated labels; `None` is Unlabeled.
    pub labels: Vec<Option<ClassId>>,
    /// Optional per-timestamp text, forwarded to remote experts.
    pub transcript: Option<Vec<String>>,
}

impl Video {
    pub fn new(stream: FeatureStream, mut segments: Vec<SegmentAnnotation>) -> Result<Self> {
        segments.sort_by_key(|s| s.st);
        let labels = propagate_labels(&segments, stream.len())?;
        Ok(Video {
            id: stream.id().to_string(),
            stream,
            segments,
            labels,
            transcript: None,
        })
    }

    pub fn duration(&self) -> usize {
        self.stream.len()
    }

    /// The annotated segment covering `t`, if any.
    pub fn segment_at(&self, t: usize) -> Option<&SegmentAnnotation> {
        self.segments.iter().find(|s| s.st <= t && t <= s.en)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamDataset {
    pub name: String,
    pub label_space: Vec<String>,
    pub dims: ModalityDims,
    pub sample_rate_hz: f64,
    pub videos: Vec<Video>,
}

impl StreamDataset {
    pub fn num_classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.label_space.iter().position(|l| l == name)
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Classes that label at least one timestamp.
    pub fn classes_present(&self) -> Vec<ClassId> {
        let mut seen = vec![false; self.num_classes()];
        for v in &self.videos {
            for c in v.labels.iter().flatten() {
                seen[*c] = true;
            }
        }
        (0..seen.len()).filter(|c| seen[*c]).collect()
    }

    pub fn labeled_timestamps(&self) -> usize {
        self.videos.iter().map(|v| v.labels.iter().flatten().count()).sum()
    }

    fn with_videos(&self, videos: Vec<Video>) -> Self {
        StreamDataset {
            name: self.name.clone(),
            label_space: self.label_space.clone(),
            dims: self.dims,
            sample_rate_hz: self.sample_rate_hz,
            videos,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    name: String,
    label_space: Vec<String>,
    #[serde(default = "default_rate")]
    sample_rate_hz: f64,
    dims: ModalityDims,
    videos: Vec<ManifestVideo>,
}

fn default_rate() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestVideo {
    id: String,
    duration: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRecord {
    video_id: String,
    st: usize,
    en: usize,
    label: String,
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<StreamDataset> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&manifest_path, e.line(), e.to_string()))?;
    if manifest.label_space.is_empty() {
        return Err(Error::parse(&manifest_path, 1, "label_space is empty"));
    }

    let mut videos = Vec::with_capacity(manifest.videos.len());
    for mv in &manifest.videos {
        let dir = root.join(&mv.id);
        let mut steps = vec![TimestepFeatures::default(); mv.duration];
        for m in Modality::ALL {
            let Some(dim) = manifest.dims.get(m) else { continue };
            let path = dir.join(format!("{}.f32", m.name()));
            let (rows, cols, data) = read_f32_matrix(&path)?;
            if cols != dim {
                return Err(Error::Dimension(format!(
                    "{}: width {cols}, manifest declares {dim} for {}",
                    path.display(),
                    m.name()
                )));
            }
            if rows != mv.duration {
                return Err(Error::Dimension(format!(
                    "{}: {rows} rows, video `{}` has duration {}",
                    path.display(),
                    mv.id,
                    mv.duration
                )));
            }
            for (r, row) in data.chunks_exact(cols.max(1)).enumerate().take(rows) {
                if row.iter().all(|x| x.is_nan()) {
                    continue;
                }
                if let Some(c) = row.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Dimension(format!("{}: row {r} column {c} is not finite", path.display())));
                }
                steps[r].set(m, Some(row.iter().map(|x| f64::from(*x)).collect()));
            }
        }
        let stream = FeatureStream::new(mv.id.clone(), manifest.dims, steps)?;

        let seg_path = dir.join(SEGMENTS_FILE);
        let segments = read_segments(&seg_path, &mv.id, &manifest.label_space, mv.duration)?;
        let mut video = Video::new(stream, segments)?;

        let transcript_path = dir.join(TRANSCRIPT_FILE);
        if transcript_path.exists() {
            let text = fs::read_to_string(&transcript_path).map_err(|e| Error::io(&transcript_path, e))?;
            let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
            lines.resize(mv.duration, String::new());
            video.transcript = Some(lines);
        }
        videos.push(video);
    }

    Ok(StreamDataset {
        name: manifest.name,
        label_space: manifest.label_space,
        dims: manifest.dims,
        sample_rate_hz: manifest.sample_rate_hz,
        videos,
    })
}

fn read_segments(path: &Path, video_id: &str, label_space: &[String], duration: usize) -> Result<Vec<SegmentAnnotation>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut segments = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SegmentRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if rec.video_id != video_id {
            return Err(Error::parse(
                path,
                lineno,
                format!("segment names video `{}`, expected `{video_id}`", rec.video_id),
            ));
        }
        let Some(label) = label_space.iter().position(|l| *l == rec.label) else {
            return Err(Error::parse(path, lineno, format!("unknown label `{}`", rec.label)));
        };
        if rec.st > rec.en || rec.en >= duration {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "segment [{}, {}] of video `{video_id}` outside [0, {}]",
                    rec.st,
                    rec.en,
                    duration as i64 - 1
                ),
            ));
        }
        segments.push(SegmentAnnotation {
            video_id: rec.video_id,
            st: rec.st,
            en: rec.en,
            label,
        });
    }
    Ok(segments)
}

pub fn save_dataset(dataset: &StreamDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = Manifest {
        name: dataset.name.clone(),
        label_space: dataset.label_space.clone(),
        sample_rate_hz: dataset.sample_rate_hz,
        dims: dataset.dims,
        videos: dataset
            .videos
            .iter()
            .map(|v| ManifestVideo {
                id: v.id.clone(),
                duration: v.duration(),
            })
            .collect(),
    };
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;

    for video in &dataset.videos {
        let dir = root.join(&video.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for m in Modality::ALL {
            let Some(dim) = dataset.dims.get(m) else { continue };
            let mut data = Vec::with_capacity(video.duration() * dim);
            for step in video.stream.steps() {
                match step.get(m) {
                    Some(v) => data.extend(v.iter().map(|x| *x as f32)),
                    None => data.extend(std::iter::repeat_n(f32::NAN, dim)),
                }
            }
            write_f32_matrix(dir.join(format!("{}.f32", m.name())), video.duration(), dim, &data)?;
        }
        let seg_path = dir.join(SEGMENTS_FILE);
        let file = fs::File::create(&seg_path).map_err(|e| Error::io(&seg_path, e))?;
        let mut w = BufWriter::new(file);
        for seg in &video.segments {
            let rec = SegmentRecord {
                video_id: seg.video_id.clone(),
                st: seg.st,
                en: seg.en,
                label: dataset.label_space[seg.label].clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w).map_err(|e| Error::io(&seg_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&seg_path, e))?;
        if let Some(lines) = &video.transcript {
            let path = dir.join(TRANSCRIPT_FILE);
            fs::write(&path, lines.join("\n")).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

pub fn read_f32_matrix(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::parse(path, 0, "truncated matrix header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        // Report the first row that is not fully present.
        let complete_rows = if cols == 0 { 0 } else { body.len() / (cols * 4) };
        return Err(Error::Dimension(format!(
            "{}: expected {rows}x{cols} values, body holds {} bytes (row {complete_rows} incomplete)",
            path.display(),
            body.len()
        )));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((rows, cols, data))
}

pub fn write_f32_matrix(path: impl AsRef<Path>, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if data.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{}: {} values for a {rows}x{cols} matrix",
            path.display(),
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(8 + data.len() * 4);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Deterministic video-level train/test split.
///
/// The train side receives `round(fraction * videos)` videos, clamped so
/// both sides are non-empty.
pub fn split_by_video(dataset: &StreamDataset, train_fraction: f64, seed: u64) -> Result<(StreamDataset, StreamDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let n = dataset.videos.len();
    if n < 2 {
        return Err(Error::Invalid(format!("cannot split {n} video(s); need at least 2")));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| dataset.videos[i].clone()).collect()
    };
    Ok((dataset.with_videos(pick(train_idx)), dataset.with_videos(pick(test_idx))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(videos: usize, duration: usize) -> StreamDataset {
        let dims = ModalityDims {
            visual: Some(2),
            text: Some(3),
            audio: None,
        };
        let videos = (0..videos)
            .map(|k| {
                let id = format!("v{k}");
                let steps = (0..duration)
                    .map(|t| TimestepFeatures {
                        visual: if t == 1 { None } else { Some(vec![t as f64, k as f64]) },
                        text: Some(vec![0.5, -1.0, t as f64]),
                        audio: None,
                    })
                    .collect();
                let stream = FeatureStream::new(id.clone(), dims, steps).unwrap();
                let segs = vec![
                    SegmentAnnotation {
                        video_id: id.clone(),
                        st: 0,
                        en: 2,
                        label: 0,
                    },
                    SegmentAnnotation {
                        video_id: id,
                        st: 4,
                        en: duration - 1,
                        label: 1,
                    },
                ];
                Video::new(stream, segs).unwrap()
            })
            .collect();
        StreamDataset {
            name: "toy".into(),
            label_space: vec!["neg".into(), "pos".into()],
            dims,
            sample_rate_hz: 1.0,
            videos,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(2, 6);
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.videos.len(), 2);
        assert_eq!(back, ds);
        assert_eq!(back.videos[0].labels[3], None);
        assert!(back.videos[0].stream.step(1).unwrap().visual.is_none());
    }

    #[test]
    fn segment_past_end_names_video() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&toy_dataset(2, 6), dir.path()).unwrap();
        let p = dir.path().join("v1").join(SEGMENTS_FILE);
        fs::write(&p, "{\"video_id\":\"v1\",\"st\":4,\"en\":6,\"label\":\"pos\"}\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("v1"), "{err}");
        assert!(err.contains(":1:"), "{err}");
    }

    #[test]
    fn unknown_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&toy_dataset(2, 6), dir.path()).unwrap();
        let p = dir.path().join("v0").join(SEGMENTS_FILE);
        fs::write(&p, "{\"video_id\":\"v0\",\"st\":0,\"en\":1,\"label\":\"meh\"}\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("unknown label"), "{err}");
    }

    #[test]
    fn wrong_width_rejected_with_row() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&toy_dataset(2, 6), dir.path()).unwrap();
        let p = dir.path().join("v0").join("text.f32");
        // Declares 6x3 but only carries 5 full rows.
        write_f32_matrix_raw(&p, 6, 3, 16);
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("row 5"), "{err}");

        write_f32_matrix(&p, 6, 4, &[0.0; 24]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("width 4"), "{err}");
    }

    fn write_f32_matrix_raw(path: &Path, rows: u32, cols: u32, values: usize) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&rows.to_le_bytes());
        bytes.extend_from_slice(&cols.to_le_bytes());
        bytes.extend(std::iter::repeat_n(0u8, values * 4));
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy_dataset(10, 5);
        let (tr, te) = split_by_video(&ds, 0.8, 7).unwrap();
        assert_eq!((tr.videos.len(), te.videos.len()), (8, 2));
        let (tr2, te2) = split_by_video(&ds, 0.8, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        for v in &te.videos {
            assert!(tr.video(&v.id).is_none());
        }

        let ds5 = toy_dataset(5, 5);
        let (tr, te) = split_by_video(&ds5, 0.8, 1).unwrap();
        assert_eq!((tr.videos.len(), te.videos.len()), (4, 1));

        assert!(split_by_video(&toy_dataset(1, 5), 0.8, 1).is_err());
        assert!(split_by_video(&ds, 1.0, 1).is_err());
    }
}
