use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{select_candidate_sources, select_candidates, CandidateSet, DatasetConfig, Detection};
use super::{Sample, SkeletonSequence};
use crate::error::{Error, Result};

pub const SKELETON_FILE: &str = "skeletons.jsonl";
pub const DETECTION_FILE: &str = "detections.json";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub person_id: i64,
    /// `[T][N_v][3]`.
    pub joints: Vec<Vec<[f64; 3]>>,
}

/// One line of the skeleton JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonRecord {
    pub video_id: String,
    pub image_size: [f64; 2],
    pub persons: Vec<PersonRecord>,
    pub action_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frames: Vec<Vec<Detection>>,
}

/// The detections file: video id to per-frame detections.
pub type DetectionsFile = BTreeMap<String, FrameDetections>;

/// Per-video, per-frame raw detection index of the true interacted object.
pub type TruthFile = BTreeMap<String, Vec<Option<usize>>>;

/// A video's skeleton record joined with its detections.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub skeleton: SkeletonRecord,
    pub detections: Vec<Vec<Detection>>,
    pub truth: Option<Vec<Option<usize>>>,
}

/// One [`Sample`] per person; every person shares the video's candidate set.
pub fn split_multi_person(raw: &RawRecord, config: &DatasetConfig) -> Result<Vec<Sample>> {
    let rec = &raw.skeleton;
    let vid = || rec.video_id.clone();
    if rec.persons.is_empty() {
        return Err(Error::EmptySkeleton {
            video_id: vid(),
            frame: 0,
        });
    }
    if rec.action_label >= config.classes {
        return Err(Error::Alignment {
            video_id: vid(),
            message: format!("action_label {} >= classes {}", rec.action_label, config.classes),
        });
    }
    let frames = raw.detections.len();
    if frames == 0 {
        return Err(Error::Alignment {
            video_id: vid(),
            message: "no frames".into(),
        });
    }
    for p in &rec.persons {
        if p.joints.len() != frames {
            return Err(Error::Alignment {
                video_id: vid(),
                message: format!(
                    "person {} has {} skeleton frames but detections have {frames}",
                    p.person_id,
                    p.joints.len()
                ),
            });
        }
        if let Some(t) = p.joints.iter().position(Vec::is_empty) {
            return Err(Error::EmptySkeleton {
                video_id: vid(),
                frame: t,
            });
        }
        if let Some(t) = p.joints.iter().position(|f| f.len() != config.joints) {
            return Err(Error::Alignment {
                video_id: vid(),
                message: format!(
                    "frame {t} of person {} has {} joints, expected {}",
                    p.person_id,
                    p.joints[t].len(),
                    config.joints
                ),
            });
        }
    }

    let mut slots = Vec::with_capacity(frames);
    let mut gt = raw.truth.as_ref().map(|_| Vec::with_capacity(frames));
    for (t, dets) in raw.detections.iter().enumerate() {
        slots.push(select_candidates(dets, config, rec.image_size));
        if let (Some(gt), Some(truth)) = (gt.as_mut(), raw.truth.as_ref()) {
            let sources = select_candidate_sources(dets, config);
            let slot = truth
                .get(t)
                .copied()
                .flatten()
                .and_then(|raw_idx| sources.iter().position(|s| *s == Some(raw_idx)));
            gt.push(slot);
        }
    }
    let candidates = CandidateSet::new(slots)?;

    rec.persons
        .iter()
        .map(|p| {
            let flat: Vec<f64> = p.joints.iter().flatten().flatten().copied().collect();
            let joints = Array3::from_shape_vec((frames, config.joints, 3), flat)
                .expect("shape checked above");
            let skeleton = SkeletonSequence::new(joints, p.person_id).map_err(|e| Error::Alignment {
                video_id: vid(),
                message: e.to_string(),
            })?;
            Ok(Sample {
                video_id: rec.video_id.clone(),
                skeleton,
                candidates: candidates.clone(),
                action_label: rec.action_label,
                gt_object: gt.clone(),
            })
        })
        .collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_skeletons(path: &Path) -> Result<Vec<SkeletonRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SkeletonRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn read_detections(path: &Path, config: &DatasetConfig) -> Result<DetectionsFile> {
    let file: DetectionsFile = read_json(path)?;
    for (vid, fd) in &file {
        for (t, frame) in fd.frames.iter().enumerate() {
            for d in frame {
                d.validate(config.categories).map_err(|m| {
                    Error::parse(path, 0, format!("video {vid}, frame {t}: {m}"))
                })?;
            }
        }
    }
    Ok(file)
}

fn join(
    skeletons: Vec<SkeletonRecord>,
    mut detections: DetectionsFile,
    mut truth: Option<TruthFile>,
    config: &DatasetConfig,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for rec in skeletons {
        let Some(fd) = detections.remove(&rec.video_id) else {
            return Err(Error::Alignment {
                video_id: rec.video_id,
                message: "no detections for this video".into(),
            });
        };
        let gt = truth.as_mut().and_then(|t| t.remove(&rec.video_id));
        let raw = RawRecord {
            skeleton: rec,
            detections: fd.frames,
            truth: gt,
        };
        out.extend(split_multi_person(&raw, config)?);
    }
    Ok(out)
}

/// Reads a skeleton JSON-lines file and its detections file into per-person samples.
pub fn load_samples(
    skeleton_path: &Path,
    detections_path: &Path,
    config: &DatasetConfig,
) -> Result<Vec<Sample>> {
    config.validate()?;
    let skeletons = read_skeletons(skeleton_path)?;
    let detections = read_detections(detections_path, config)?;
    join(skeletons, detections, None, config)
}

pub fn read_meta(dir: &Path) -> Result<DatasetConfig> {
    let config: DatasetConfig = read_json(&dir.join(META_FILE))?;
    config.validate()?;
    Ok(config)
}

/// Loads `dir/{skeletons.jsonl, detections.json}` plus `ground_truth.json` when present.
/// The dataset config comes from `meta_dir/meta.json`.
pub fn load_dataset_dir(dir: &Path, config: &DatasetConfig) -> Result<Vec<Sample>> {
    let skeletons = read_skeletons(&dir.join(SKELETON_FILE))?;
    let detections = read_detections(&dir.join(DETECTION_FILE), config)?;
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        Some(read_json::<TruthFile>(&truth_path)?)
    } else {
        None
    };
    join(skeletons, detections, truth, config)
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&path, e))
}

/// Writes raw records in the on-disk schema. Output bytes depend only on the records.
pub fn write_dataset_dir(dir: &Path, records: &[RawRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    let mut detections = DetectionsFile::new();
    let mut truth = TruthFile::new();
    for r in records {
        lines.push_str(&serde_json::to_string(&r.skeleton).expect("serializable"));
        lines.push('\n');
        detections.insert(
            r.skeleton.video_id.clone(),
            FrameDetections {
                frames: r.detections.clone(),
            },
        );
        if let Some(t) = &r.truth {
            truth.insert(r.skeleton.video_id.clone(), t.clone());
        }
    }
    write_file(dir.join(SKELETON_FILE), lines.as_bytes())?;
    write_file(
        dir.join(DETECTION_FILE),
        serde_json::to_string(&detections).expect("serializable").as_bytes(),
    )?;
    if !truth.is_empty() {
        write_file(
            dir.join(TRUTH_FILE),
            serde_json::to_string(&truth).expect("serializable").as_bytes(),
        )?;
    }
    Ok(())
}

pub fn write_meta(dir: &Path, config: &DatasetConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(
        dir.join(META_FILE),
        serde_json::to_string_pretty(config).expect("serializable").as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> DatasetConfig {
        DatasetConfig {
            joints: 2,
            candidates: 3,
            categories: 4,
            classes: 3,
            k: 2,
            score_threshold: 0.1,
            prior_union: [0, 1, 2].into_iter().collect(),
            rotation_max_degrees: 0.0,
            seed: 0,
            reference_joint: 0,
        }
    }

    fn person(id: i64, frames: usize) -> PersonRecord {
        PersonRecord {
            person_id: id,
            joints: (0..frames)
                .map(|t| vec![[t as f64, id as f64, 0.0], [0.5, 0.5, 0.5]])
                .collect(),
        }
    }

    fn record(vid: &str, persons: Vec<PersonRecord>, frames: usize) -> RawRecord {
        RawRecord {
            skeleton: SkeletonRecord {
                video_id: vid.into(),
                image_size: [100.0, 100.0],
                persons,
                action_label: 1,
            },
            detections: (0..frames)
                .map(|t| {
                    vec![Detection {
                        bbox: [t as f64, 0.0, t as f64 + 10.0, 10.0],
                        score: 0.9,
                        category_id: 1,
                    }]
                })
                .collect(),
            truth: None,
        }
    }

    #[test]
    fn single_person_wraps_identity() {
        let s = split_multi_person(&record("a", vec![person(7, 3)], 3), &config()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].skeleton.person_id, 7);
        assert_eq!(s[0].skeleton.joints[[2, 0, 0]], 2.0);
        assert_eq!(s[0].candidates.frame_count(), 3);
    }

    #[test]
    fn two_persons_share_candidates() {
        let s =
            split_multi_person(&record("a", vec![person(1, 4), person(2, 4)], 4), &config()).unwrap();
        assert_eq!(s.len(), 2);
        assert_ne!(s[0].skeleton, s[1].skeleton);
        let bytes = |x: &Sample| {
            x.candidates
                .frames
                .iter()
                .flatten()
                .flat_map(|c| {
                    c.features()
                        .iter()
                        .flat_map(|v| v.to_le_bytes())
                        .chain((c.category_id as u64).to_le_bytes())
                        .collect::<Vec<u8>>()
                })
                .collect::<Vec<u8>>()
        };
        assert_eq!(bytes(&s[0]), bytes(&s[1]));
    }

    #[test]
    fn no_persons_is_an_error() {
        let err = split_multi_person(&record("a", vec![], 2), &config()).unwrap_err();
        assert!(matches!(err, Error::EmptySkeleton { .. }));
    }

    #[test]
    fn missing_detection_frame_is_alignment_error() {
        let mut r = record("a", vec![person(1, 3)], 3);
        r.detections.pop();
        let err = split_multi_person(&r, &config()).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }), "{err}");
    }

    #[test]
    fn load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            record("v1", vec![person(0, 3)], 3),
            record("v2", vec![person(0, 2), person(1, 2)], 2),
        ];
        write_dataset_dir(dir.path(), &recs).unwrap();
        let skel = dir.path().join(SKELETON_FILE);
        let det = dir.path().join(DETECTION_FILE);
        let samples = load_samples(&skel, &det, &config()).unwrap();
        assert_eq!(samples.len(), 3);

        let mut text = fs::read_to_string(&skel).unwrap();
        text.push_str("{\"video_id\": 3}\n");
        fs::write(&skel, text).unwrap();
        match load_samples(&skel, &det, &config()).unwrap_err() {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, skel);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn truth_maps_to_first_slot() {
        let mut r = record("a", vec![person(1, 2)], 2);
        r.detections[0].push(Detection {
            bbox: [50.0, 50.0, 60.0, 60.0],
            score: 0.95,
            category_id: 2,
        });
        r.truth = Some(vec![Some(0), None]);
        let s = split_multi_person(&r, &config()).unwrap();
        // frame 0 ranks [bg, det1 (0.95), det0 (0.9)]
        assert_eq!(s[0].gt_object, Some(vec![Some(2), None]));
    }
}
