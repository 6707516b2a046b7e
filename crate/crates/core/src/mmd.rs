//! Momentarily missed detection (MMD): per-object score tracks built from
//! pre-NMS detector dumps, and the three-condition test that flags a frame
//! whose score dips between two well-detected neighbors.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::AnchorSet;
use crate::formats::{fmt_decimal, records, ParseError};
use crate::geometry::{iou, BBox};

/// Anchors must overlap the ground truth by strictly more than this to
/// contribute to the per-frame score.
pub const FRAME_SCORE_MIN_IOU: f64 = 0.5;

pub const DUMP_HEADER: &str = "video_id,frame_index,anchor_id,class_id,score";
pub const GT_HEADER: &str = "video_id,frame_index,object_id,class_id,x_min,y_min,x_max,y_max";
pub const MMD_HEADER: &str = "video_id,frame_index,object_id,class_id,p_prev,p_t,p_next";

#[derive(Debug, Error)]
pub enum MmdError {
    #[error("detection record references unknown anchor id {0}")]
    UnknownAnchor(usize),
    #[error("thresholds must lie in (0, 1] (got gamma_min={gamma_min}, gamma_ratio={gamma_ratio}, gamma_max={gamma_max})")]
    BadThresholds {
        gamma_min: f64,
        gamma_ratio: f64,
        gamma_max: f64,
    },
    #[error("duplicate ground truth for video {video_id} frame {frame_index} object {object_id} class {class_id}")]
    DuplicateGroundTruth {
        video_id: String,
        frame_index: u32,
        object_id: u32,
        class_id: u32,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub anchor_id: usize,
    pub class_id: u32,
    pub score: f64,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub frame_index: u32,
    pub object_id: u32,
    pub class_id: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct MmdThresholds {
    gamma_min: f64,
    gamma_ratio: f64,
    gamma_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RawThresholds {
    gamma_min: f64,
    gamma_ratio: f64,
    gamma_max: f64,
}

impl TryFrom<RawThresholds> for MmdThresholds {
    type Error = MmdError;

    fn try_from(r: RawThresholds) -> Result<Self, Self::Error> {
        MmdThresholds::new(r.gamma_min, r.gamma_ratio, r.gamma_max)
    }
}

impl From<MmdThresholds> for RawThresholds {
    fn from(t: MmdThresholds) -> Self {
        RawThresholds {
            gamma_min: t.gamma_min,
            gamma_ratio: t.gamma_ratio,
            gamma_max: t.gamma_max,
        }
    }
}

impl MmdThresholds {
    pub const DEFAULT_GAMMA_MIN: f64 = 0.5;
    pub const DEFAULT_GAMMA_RATIO: f64 = 0.9;
    pub const DEFAULT_GAMMA_MAX: f64 = 0.6;

    /// `gamma_min <= gamma_max` is deliberately not required.
    pub fn new(gamma_min: f64, gamma_ratio: f64, gamma_max: f64) -> Result<Self, MmdError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(unit(gamma_min) && unit(gamma_ratio) && unit(gamma_max)) {
            return Err(MmdError::BadThresholds {
                gamma_min,
                gamma_ratio,
                gamma_max,
            });
        }
        Ok(Self {
            gamma_min,
            gamma_ratio,
            gamma_max,
        })
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma_min
    }

    pub fn gamma_ratio(&self) -> f64 {
        self.gamma_ratio
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    /// Whether a `prev, cur, next` triple of consecutive scores is an MMD.
    pub fn is_mmd(&self, prev: f64, cur: f64, next: f64) -> bool {
        let neighbors_high = prev >= self.gamma_min && next >= self.gamma_min;
        // A zero previous score already fails the neighbor condition.
        let dropped = prev > 0.0 && cur / prev <= self.gamma_ratio;
        neighbors_high && dropped && cur < self.gamma_max
    }
}

impl Default for MmdThresholds {
    fn default() -> Self {
        Self {
            gamma_min: Self::DEFAULT_GAMMA_MIN,
            gamma_ratio: Self::DEFAULT_GAMMA_RATIO,
            gamma_max: Self::DEFAULT_GAMMA_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub score: f64,
    pub anchor_id: usize,
}

/// Best score of `class_id` among anchors whose IOU with `gt` exceeds 0.5.
/// Ties go to the smaller anchor id. `None` when no anchor qualifies.
pub fn frame_score<'a, I>(
    frame_records: I,
    gt: &BBox,
    class_id: u32,
    anchors: &AnchorSet,
) -> Result<Option<FrameScore>, MmdError>
where
    I: IntoIterator<Item = &'a DetectionRecord>,
{
    let mut best: Option<FrameScore> = None;
    for rec in frame_records {
        let anchor = anchors
            .get(rec.anchor_id)
            .ok_or(MmdError::UnknownAnchor(rec.anchor_id))?;
        if rec.class_id != class_id || iou(&anchor.bbox, gt) <= FRAME_SCORE_MIN_IOU {
            continue;
        }
        let better = best.is_none_or(|b| {
            rec.score > b.score || (rec.score == b.score && rec.anchor_id < b.anchor_id)
        });
        if better {
            best = Some(FrameScore {
                score: rec.score,
                anchor_id: rec.anchor_id,
            });
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame_index: u32,
    pub score: f64,
    /// `None` when no anchor passed the IOU filter; the score is then 0.
    pub anchor_id: Option<usize>,
}

impl TrackPoint {
    pub fn no_anchor(&self) -> bool {
        self.anchor_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrack {
    pub video_id: String,
    pub object_id: u32,
    pub class_id: u32,
    /// Strictly increasing frame indices.
    pub points: Vec<TrackPoint>,
    /// Frames where the object was annotated but the dump had no records.
    pub missing_frames: Vec<u32>,
}

impl ScoreTrack {
    /// Track from bare scores on frames `0..n`; every point counts as
    /// anchored. Mostly useful for tests and synthetic data.
    pub fn from_scores(video_id: &str, object_id: u32, class_id: u32, scores: &[f64]) -> Self {
        Self {
            video_id: video_id.to_string(),
            object_id,
            class_id,
            points: scores
                .iter()
                .enumerate()
                .map(|(t, &score)| TrackPoint {
                    frame_index: t as u32,
                    score,
                    anchor_id: Some(0),
                })
                .collect(),
            missing_frames: Vec::new(),
        }
    }

    /// Frame indices skipped between consecutive points.
    pub fn gaps(&self) -> Vec<u32> {
        self.points
            .windows(2)
            .flat_map(|w| (w[0].frame_index + 1)..w[1].frame_index)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdFrame {
    pub frame_index: u32,
    pub p_prev: f64,
    pub p_t: f64,
    pub p_next: f64,
}

/// Flag every frame whose immediate neighbors exist and satisfy the MMD test.
pub fn extract_mmd(track: &ScoreTrack, th: &MmdThresholds) -> Vec<MmdFrame> {
    track
        .points
        .windows(3)
        .filter(|w| {
            w[1].frame_index == w[0].frame_index + 1 && w[2].frame_index == w[1].frame_index + 1
        })
        .filter(|w| th.is_mmd(w[0].score, w[1].score, w[2].score))
        .map(|w| MmdFrame {
            frame_index: w[1].frame_index,
            p_prev: w[0].score,
            p_t: w[1].score,
            p_next: w[2].score,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MissingFrame {
    pub video_id: String,
    pub frame_index: u32,
    pub object_id: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackSet {
    /// Sorted by `(video_id, object_id, class_id)`.
    pub tracks: Vec<ScoreTrack>,
    pub missing: Vec<MissingFrame>,
}

type TrackKey = (String, u32, u32);

/// One track per `(video, object, class)` found in the ground truth.
///
/// Runs on the current rayon pool; output order depends only on the keys.
pub fn build_tracks(
    dump: &[DetectionRecord],
    gts: &[GroundTruth],
    anchors: &AnchorSet,
) -> Result<TrackSet, MmdError> {
    let mut frames: BTreeMap<(&str, u32), Vec<&DetectionRecord>> = BTreeMap::new();
    for rec in dump {
        frames
            .entry((rec.video_id.as_str(), rec.frame_index))
            .or_default()
            .push(rec);
    }

    let mut objects: BTreeMap<TrackKey, BTreeMap<u32, BBox>> = BTreeMap::new();
    for gt in gts {
        let key = (gt.video_id.clone(), gt.object_id, gt.class_id);
        if objects
            .entry(key)
            .or_default()
            .insert(gt.frame_index, gt.bbox)
            .is_some()
        {
            return Err(MmdError::DuplicateGroundTruth {
                video_id: gt.video_id.clone(),
                frame_index: gt.frame_index,
                object_id: gt.object_id,
                class_id: gt.class_id,
            });
        }
    }

    let built: Vec<ScoreTrack> = objects
        .into_par_iter()
        .map(|((video_id, object_id, class_id), boxes)| {
            let mut points = Vec::with_capacity(boxes.len());
            let mut missing_frames = Vec::new();
            for (frame_index, bbox) in boxes {
                let Some(recs) = frames.get(&(video_id.as_str(), frame_index)) else {
                    missing_frames.push(frame_index);
                    continue;
                };
                let best = frame_score(recs.iter().copied(), &bbox, class_id, anchors)?;
                points.push(TrackPoint {
                    frame_index,
                    score: best.map_or(0.0, |b| b.score),
                    anchor_id: best.map(|b| b.anchor_id),
                });
            }
            Ok(ScoreTrack {
                video_id,
                object_id,
                class_id,
                points,
                missing_frames,
            })
        })
        .collect::<Result<_, MmdError>>()?;

    let missing: BTreeSet<MissingFrame> = built
        .iter()
        .flat_map(|t| {
            t.missing_frames.iter().map(|&frame_index| MissingFrame {
                video_id: t.video_id.clone(),
                frame_index,
                object_id: t.object_id,
            })
        })
        .collect();
    Ok(TrackSet {
        tracks: built,
        missing: missing.into_iter().collect(),
    })
}

/// Detection dump: `video_id,frame_index,anchor_id,class_id,score`, optionally
/// followed by a predicted box `x_min,y_min,x_max,y_max`.
pub fn parse_dump(text: &str) -> Result<Vec<DetectionRecord>, ParseError> {
    records(text, DUMP_HEADER)
        .map(|rec| {
            if rec.fields.len() != 5 && rec.fields.len() != 9 {
                return Err(ParseError::new(
                    rec.line,
                    format!("expected 5 or 9 fields, found {}", rec.fields.len()),
                ));
            }
            let bbox = if rec.fields.len() == 9 {
                let c: Vec<f64> = (5..9)
                    .map(|k| rec.float(k, "box coordinate"))
                    .collect::<Result<_, _>>()?;
                Some(
                    BBox::new(c[0], c[1], c[2], c[3])
                        .map_err(|e| ParseError::new(rec.line, e.to_string()))?,
                )
            } else {
                None
            };
            Ok(DetectionRecord {
                video_id: rec.text(0, "video_id")?.to_string(),
                frame_index: rec.field(1, "frame_index")?,
                anchor_id: rec.field(2, "anchor_id")?,
                class_id: rec.field(3, "class_id")?,
                score: rec.score(4)?,
                bbox,
            })
        })
        .collect()
}

pub fn write_dump<W: Write>(out: &mut W, dump: &[DetectionRecord]) -> std::io::Result<()> {
    writeln!(out, "{DUMP_HEADER}")?;
    for d in dump {
        write!(
            out,
            "{},{},{},{},{}",
            d.video_id,
            d.frame_index,
            d.anchor_id,
            d.class_id,
            fmt_decimal(d.score)
        )?;
        if let Some(b) = d.bbox {
            write!(out, ",{},{},{},{}", b.x_min(), b.y_min(), b.x_max(), b.y_max())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Ground truth: `video_id,frame_index,object_id,class_id,x_min,y_min,x_max,y_max`.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruth>, ParseError> {
    records(text, GT_HEADER)
        .map(|rec| {
            rec.expect_len(8)?;
            let c: Vec<f64> = (4..8)
                .map(|k| rec.float(k, "box coordinate"))
                .collect::<Result<_, _>>()?;
            Ok(GroundTruth {
                video_id: rec.text(0, "video_id")?.to_string(),
                frame_index: rec.field(1, "frame_index")?,
                object_id: rec.field(2, "object_id")?,
                class_id: rec.field(3, "class_id")?,
                bbox: BBox::new(c[0], c[1], c[2], c[3])
                    .map_err(|e| ParseError::new(rec.line, e.to_string()))?,
            })
        })
        .collect()
}

pub fn write_ground_truth<W: Write>(out: &mut W, gts: &[GroundTruth]) -> std::io::Result<()> {
    writeln!(out, "{GT_HEADER}")?;
    for g in gts {
        let b = g.bbox;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            g.video_id,
            g.frame_index,
            g.object_id,
            g.class_id,
            b.x_min(),
            b.y_min(),
            b.x_max(),
            b.y_max()
        )?;
    }
    Ok(())
}

/// MMD list for every track, in track order.
pub fn write_mmd_frames<W: Write>(out: &mut W, flagged: &[(&ScoreTrack, Vec<MmdFrame>)]) -> std::io::Result<()> {
    writeln!(out, "{MMD_HEADER}")?;
    for (track, frames) in flagged {
        for f in frames {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                track.video_id,
                f.frame_index,
                track.object_id,
                track.class_id,
                fmt_decimal(f.p_prev),
                fmt_decimal(f.p_t),
                fmt_decimal(f.p_next)
            )?;
        }
    }
    Ok(())
}

/// One flagged frame as read back from an MMD list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdRow {
    pub video_id: String,
    pub frame_index: u32,
    pub object_id: u32,
    pub class_id: u32,
    pub frame: MmdFrame,
}

pub fn parse_mmd_frames(text: &str) -> Result<Vec<MmdRow>, ParseError> {
    records(text, MMD_HEADER)
        .map(|rec| {
            rec.expect_len(7)?;
            let frame_index = rec.field(1, "frame_index")?;
            Ok(MmdRow {
                video_id: rec.text(0, "video_id")?.to_string(),
                frame_index,
                object_id: rec.field(2, "object_id")?,
                class_id: rec.field(3, "class_id")?,
                frame: MmdFrame {
                    frame_index,
                    p_prev: rec.score(4)?,
                    p_t: rec.score(5)?,
                    p_next: rec.score(6)?,
                },
            })
        })
        .collect()
}
