//! Synthetic detector for end-to-end fixtures.
//!
//! Each anchor scores a box by its IOU alone:
//! `s_max * clamp((iou - tau) / (1 - tau), 0, 1)^kappa`, optionally with
//! seeded Gaussian noise. With `tau = 0.5` this mimics a detector trained with
//! a hard 0.5 threshold; with `tau = 0.4` one trained with the soft weighting,
//! which keeps scoring boxes in the 0.4 to 0.5 IOU band.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::anchors::{generate_anchors, AnchorError, AnchorSet, PyramidConfig, PyramidLevel, Template};
use crate::geometry::{apply_warp, iou, BBox, GeometryError, ImageExtent};
use crate::mmd::{frame_score, DetectionRecord, GroundTruth, MmdError, ScoreTrack, TrackPoint};
use crate::probe::{build_manifest, FrameKey, ProbeManifest, ProbeTarget, ScoreProfile, WarpFamily, PROBE_STEPS};

pub const SCENARIO_NAMES: [&str; 4] = [
    "scale-boundary-binary",
    "scale-boundary-soft",
    "grid-boundary-binary",
    "on-anchor",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic detector parameters: {0}")]
    BadParams(String),
    #[error("unknown scenario `{0}` (expected one of {list})", list = SCENARIO_NAMES.join(", "))]
    UnknownScenario(String),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mmd(#[from] MmdError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    tau: f64,
    kappa: f64,
    s_max: f64,
    noise: Option<Noise>,
}

impl SynthParams {
    pub fn new(tau: f64, kappa: f64, s_max: f64) -> Result<Self, SynthError> {
        if !(0.0..1.0).contains(&tau) {
            return Err(SynthError::BadParams(format!("tau must be in [0, 1), got {tau}")));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(SynthError::BadParams(format!("kappa must be positive, got {kappa}")));
        }
        if !(s_max > 0.0 && s_max <= 1.0) {
            return Err(SynthError::BadParams(format!("s_max must be in (0, 1], got {s_max}")));
        }
        Ok(Self {
            tau,
            kappa,
            s_max,
            noise: None,
        })
    }

    /// Detector trained with a hard 0.5 threshold.
    pub fn binary() -> Self {
        Self::new(0.5, 1.0, 0.95).expect("valid preset")
    }

    /// Detector trained with soft weighting around 0.5.
    pub fn soft() -> Self {
        Self::new(0.4, 1.0, 0.95).expect("valid preset")
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Result<Self, SynthError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(SynthError::BadParams(format!("noise sigma must be non-negative, got {sigma}")));
        }
        self.noise = Some(Noise { sigma, seed });
        Ok(self)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn noise(&self) -> Option<Noise> {
        self.noise
    }
}

/// Noiseless score for an anchor with the given IOU.
pub fn synth_score(iou: f64, p: &SynthParams) -> f64 {
    let t = ((iou - p.tau) / (1.0 - p.tau)).clamp(0.0, 1.0);
    p.s_max * t.powf(p.kappa)
}

/// A box moved through a sequence of warp indices of one family.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub base: BBox,
    pub family: WarpFamily,
    pub extent: ImageExtent,
    pub steps: Vec<i32>,
}

impl Trajectory {
    pub fn new(base: BBox, family: WarpFamily, extent: ImageExtent, steps: Vec<i32>) -> Self {
        Self {
            base,
            family,
            extent,
            steps,
        }
    }

    /// The full probe sweep around `base`.
    pub fn sweep(base: BBox, family: WarpFamily, extent: ImageExtent) -> Self {
        Self::new(base, family, extent, (-PROBE_STEPS..=PROBE_STEPS).collect())
    }

    /// Warped box per step; step 0 is `base` itself.
    pub fn boxes(&self) -> Vec<BBox> {
        let (cx, cy) = self.extent.center();
        self.steps
            .iter()
            .map(|&n| apply_warp(&self.family.warp(n, cx, cy), &self.base))
            .collect()
    }
}

/// Per-step scores of every anchor along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRun {
    pub steps: Vec<i32>,
    pub boxes: Vec<BBox>,
    /// `scores[k][anchor_id]` for step `k`.
    pub scores: Vec<Vec<f64>>,
}

pub fn run_trajectory(anchors: &AnchorSet, traj: &Trajectory, params: &SynthParams) -> SynthRun {
    let mut noise = params.noise.filter(|n| n.sigma > 0.0).map(|n| {
        (
            ChaCha8Rng::seed_from_u64(n.seed),
            Normal::new(0.0, n.sigma).expect("sigma checked on construction"),
        )
    });
    let boxes = traj.boxes();
    let scores = boxes
        .iter()
        .map(|b| {
            anchors
                .anchors()
                .iter()
                .map(|a| {
                    let s = synth_score(iou(&a.bbox, b), params);
                    match noise.as_mut() {
                        Some((rng, normal)) => (s + normal.sample(rng)).clamp(0.0, 1.0),
                        None => s,
                    }
                })
                .collect()
        })
        .collect();
    SynthRun {
        steps: traj.steps.clone(),
        boxes,
        scores,
    }
}

impl SynthRun {
    /// Dump records treating step `k` as frame `k` of `video_id`.
    pub fn detections(&self, video_id: &str, class_id: u32) -> Vec<DetectionRecord> {
        self.scores
            .iter()
            .enumerate()
            .flat_map(|(k, row)| {
                row.iter().enumerate().map(move |(anchor_id, &score)| DetectionRecord {
                    video_id: video_id.to_string(),
                    frame_index: k as u32,
                    anchor_id,
                    class_id,
                    score,
                    bbox: None,
                })
            })
            .collect()
    }

    pub fn ground_truth(&self, video_id: &str, object_id: u32, class_id: u32) -> Vec<GroundTruth> {
        self.boxes
            .iter()
            .enumerate()
            .map(|(k, &bbox)| GroundTruth {
                video_id: video_id.to_string(),
                frame_index: k as u32,
                object_id,
                class_id,
                bbox,
            })
            .collect()
    }

    /// One profile per anchor keyed by the warp index of each step.
    pub fn profiles(&self, class_id: u32) -> Vec<ScoreProfile> {
        let count = self.scores.first().map_or(0, Vec::len);
        (0..count)
            .map(|anchor_id| ScoreProfile {
                anchor_id,
                class_id,
                scores: self
                    .steps
                    .iter()
                    .zip(&self.scores)
                    .map(|(&n, row)| (n, row[anchor_id]))
                    .collect::<BTreeMap<_, _>>(),
                gaps: Vec::new(),
            })
            .collect()
    }

    /// The object's score track using the same per-frame rule as real dumps.
    pub fn track(
        &self,
        anchors: &AnchorSet,
        video_id: &str,
        object_id: u32,
        class_id: u32,
    ) -> Result<ScoreTrack, MmdError> {
        let dump = self.detections(video_id, class_id);
        let per_frame = anchors.len();
        let points = self
            .boxes
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let frame = &dump[k * per_frame..(k + 1) * per_frame];
                let best = frame_score(frame, b, class_id, anchors)?;
                Ok(TrackPoint {
                    frame_index: k as u32,
                    score: best.map_or(0.0, |f| f.score),
                    anchor_id: best.map(|f| f.anchor_id),
                })
            })
            .collect::<Result<_, MmdError>>()?;
        Ok(ScoreTrack {
            video_id: video_id.to_string(),
            object_id,
            class_id,
            points,
            missing_frames: Vec::new(),
        })
    }
}

/// A self-contained video plus probe setup with a known outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub pyramid: PyramidConfig,
    pub params: SynthParams,
    /// The object as it appears in the focus frame.
    pub object: BBox,
    pub class_id: u32,
    pub video_family: WarpFamily,
    /// Warp index of each video frame; the frame with index 0 is the focus.
    pub video_steps: Vec<i32>,
    pub probe_family: WarpFamily,
}

/// Everything a scenario produces, ready to be written to disk.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub anchors: AnchorSet,
    pub dump: Vec<DetectionRecord>,
    pub ground_truth: Vec<GroundTruth>,
    pub focus_frame: u32,
    pub manifest: ProbeManifest,
    pub profiles: Vec<ScoreProfile>,
    pub target: ProbeTarget,
}

pub const SCENARIO_OBJECT_ID: u32 = 0;
pub const SCENARIO_CLASS_ID: u32 = 1;
const VIDEO_STEPS: [i32; 5] = [-6, -3, 0, 3, 6];

fn level(grid: u32, stride: f64, side: f64) -> PyramidLevel {
    PyramidLevel {
        grid_w: grid,
        grid_h: grid,
        stride_x: stride,
        stride_y: stride,
        templates: vec![Template(side, side)],
    }
}

/// Two concentric square anchors, 80 px on a 9x9 level and `80 / boundary_iou`
/// px on a 3x3 level, both centered on a 288x288 image.
fn scale_pyramid(boundary_iou: f64) -> PyramidConfig {
    PyramidConfig {
        extent: ImageExtent::new(288, 288).expect("non-empty"),
        levels: vec![level(9, 32.0, 80.0), level(3, 96.0, 80.0 / boundary_iou)],
    }
}

impl Scenario {
    /// An object exactly halfway in scale between two concentric anchors, so
    /// both overlap it with IOU `boundary_iou`.
    pub fn scale_boundary(name: &str, boundary_iou: f64, params: SynthParams) -> Result<Self, SynthError> {
        if !(boundary_iou > 0.0 && boundary_iou < 1.0) {
            return Err(SynthError::BadParams(format!(
                "boundary IOU must be in (0, 1), got {boundary_iou}"
            )));
        }
        let side = (80.0 * 80.0 / boundary_iou).sqrt();
        Ok(Self {
            name: name.to_string(),
            pyramid: scale_pyramid(boundary_iou),
            params,
            object: BBox::from_center(144.0, 144.0, side, side)?,
            class_id: SCENARIO_CLASS_ID,
            video_family: WarpFamily::Scaling,
            video_steps: VIDEO_STEPS.to_vec(),
            probe_family: WarpFamily::Scaling,
        })
    }

    /// A 48 px object centered between two horizontally adjacent 48 px anchors.
    pub fn grid_boundary(name: &str, params: SynthParams) -> Result<Self, SynthError> {
        Ok(Self {
            name: name.to_string(),
            pyramid: PyramidConfig {
                extent: ImageExtent::new(304, 304).expect("non-empty"),
                levels: vec![level(19, 16.0, 48.0)],
            },
            params,
            object: BBox::from_center(192.0, 152.0, 48.0, 48.0)?,
            class_id: SCENARIO_CLASS_ID,
            video_family: WarpFamily::ShiftX,
            video_steps: VIDEO_STEPS.to_vec(),
            probe_family: WarpFamily::ShiftX,
        })
    }

    /// An object that coincides with the 80 px anchor of the scale pyramid.
    pub fn on_anchor(name: &str, params: SynthParams) -> Result<Self, SynthError> {
        Ok(Self {
            object: BBox::from_center(144.0, 144.0, 80.0, 80.0)?,
            ..Self::scale_boundary(name, 0.8, params)?
        })
    }

    pub fn named(name: &str) -> Result<Self, SynthError> {
        match name {
            "scale-boundary-binary" => Self::scale_boundary(name, 0.8, SynthParams::binary()),
            "scale-boundary-soft" => Self::scale_boundary(name, 0.8, SynthParams::soft()),
            "grid-boundary-binary" => Self::grid_boundary(name, SynthParams::binary()),
            "on-anchor" => Self::on_anchor(name, SynthParams::binary()),
            other => Err(SynthError::UnknownScenario(other.to_string())),
        }
    }

    /// Run the video and the probe sweep at the focus frame. The probe list
    /// entry points at `scores_path`.
    pub fn simulate(&self, scores_path: &str) -> Result<Simulation, SynthError> {
        let anchors = generate_anchors(&self.pyramid)?;
        let extent = self.pyramid.extent;
        let focus = self
            .video_steps
            .iter()
            .position(|&n| n == 0)
            .ok_or_else(|| SynthError::BadParams("video steps must include 0".into()))?;
        let video = run_trajectory(
            &anchors,
            &Trajectory::new(self.object, self.video_family, extent, self.video_steps.clone()),
            &self.params,
        );
        let probe = run_trajectory(
            &anchors,
            &Trajectory::sweep(self.object, self.probe_family, extent),
            &self.params,
        );
        Ok(Simulation {
            dump: video.detections(&self.name, self.class_id),
            ground_truth: video.ground_truth(&self.name, SCENARIO_OBJECT_ID, self.class_id),
            focus_frame: focus as u32,
            manifest: build_manifest(self.probe_family, extent),
            profiles: probe.profiles(self.class_id),
            target: ProbeTarget {
                key: FrameKey {
                    video_id: self.name.clone(),
                    frame_index: focus as u32,
                    object_id: SCENARIO_OBJECT_ID,
                },
                class_id: self.class_id,
                family: self.probe_family,
                scores_path: scores_path.to_string(),
            },
            anchors,
        })
    }
}
