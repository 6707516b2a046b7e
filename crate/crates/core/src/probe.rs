//! Warp probing around a missed detection.
//!
//! A frame is re-detected under a sweep of 59 axis-aligned warps per family
//! (scaling, horizontal shift, and per-axis aspect change). The per-anchor
//! scores along the sweep form score profiles; their upper envelope is then
//! checked for a valley at the point where the best anchor changes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::{AnchorError, AnchorSet, NeighborKind};
use crate::formats::{fmt_decimal, records, ParseError};
use crate::geometry::{AxisWarp, ImageExtent};
use crate::mmd::MmdThresholds;

/// Warp indices run over `-PROBE_STEPS..=PROBE_STEPS`.
pub const PROBE_STEPS: i32 = 29;
pub const PROBE_LEN: usize = 2 * PROBE_STEPS as usize + 1;
pub const SCALE_UP: f64 = 1.02;
pub const SCALE_DOWN: f64 = 0.98;
pub const SHIFT_PX: f64 = 3.0;
pub const ASPECT_UP: f64 = 1.01;
pub const ASPECT_DOWN: f64 = 0.99;
pub const DEFAULT_SWITCH_WINDOW: u32 = 5;

pub const MANIFEST_HEADER: &str = "n,family,sx,sy,tx,ty,cx,cy";
pub const PROFILE_HEADER: &str = "n,anchor_id,class_id,score";
pub const PROBE_LIST_HEADER: &str = "video_id,frame_index,object_id,class_id,family,scores_path";
pub const VERDICT_HEADER: &str = "video_id,frame_index,object_id,class_id,family,verdict,kind,anchor_a,anchor_b,switch_n,valley_score,left_peak,right_peak,reason";
pub const LABEL_HEADER: &str = "video_id,frame_index,object_id,label";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("need at least two score profiles (got {0})")]
    TooFewProfiles(usize),
    #[error("anchors {0} and {1} switch on the envelope but are not neighbors")]
    NotNeighbors(usize, usize),
    #[error("anchor {0} has more than one profile")]
    DuplicateProfile(usize),
    #[error("unknown warp family `{0}`")]
    UnknownFamily(String),
    #[error("manifest has no entries for family {0}")]
    MissingFamily(WarpFamily),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WarpFamily {
    Scaling,
    ShiftX,
    AspectX,
    AspectY,
}

impl WarpFamily {
    pub const ALL: [WarpFamily; 4] = [
        WarpFamily::Scaling,
        WarpFamily::ShiftX,
        WarpFamily::AspectX,
        WarpFamily::AspectY,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WarpFamily::Scaling => "scaling",
            WarpFamily::ShiftX => "shift-x",
            WarpFamily::AspectX => "aspect-x",
            WarpFamily::AspectY => "aspect-y",
        }
    }

    /// Warp for index `n` about `(cx, cy)`. Negative indices use the
    /// shrinking base (0.98, 0.99) rather than the reciprocal of the growing one.
    pub fn warp(&self, n: i32, cx: f64, cy: f64) -> AxisWarp {
        let factor = |up: f64, down: f64| {
            if n >= 0 {
                up.powi(n)
            } else {
                down.powi(-n)
            }
        };
        let (sx, sy, tx) = match self {
            WarpFamily::Scaling => {
                let s = factor(SCALE_UP, SCALE_DOWN);
                (s, s, 0.0)
            }
            WarpFamily::ShiftX => (1.0, 1.0, SHIFT_PX * f64::from(n)),
            WarpFamily::AspectX => (factor(ASPECT_UP, ASPECT_DOWN), 1.0, 0.0),
            WarpFamily::AspectY => (1.0, factor(ASPECT_UP, ASPECT_DOWN), 0.0),
        };
        AxisWarp::new(sx, sy, tx, 0.0, cx, cy).expect("probe warps have positive scales")
    }
}

impl fmt::Display for WarpFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WarpFamily {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WarpFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ProbeError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifestEntry {
    pub n: i32,
    pub warp: AxisWarp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeManifest {
    pub family: WarpFamily,
    pub extent: ImageExtent,
    pub center: (f64, f64),
    /// Sorted by `n`, identity at `n = 0`.
    pub entries: Vec<ManifestEntry>,
}

impl ProbeManifest {
    pub fn ns(&self) -> impl Iterator<Item = i32> + '_ {
        self.entries.iter().map(|e| e.n)
    }

    pub fn entry(&self, n: i32) -> Option<&ManifestEntry> {
        self.entries
            .binary_search_by_key(&n, |e| e.n)
            .ok()
            .map(|k| &self.entries[k])
    }
}

/// The 59-entry sweep of one family, pivoting on the image center.
pub fn build_manifest(family: WarpFamily, extent: ImageExtent) -> ProbeManifest {
    let (cx, cy) = extent.center();
    ProbeManifest {
        family,
        extent,
        center: (cx, cy),
        entries: (-PROBE_STEPS..=PROBE_STEPS)
            .map(|n| ManifestEntry {
                n,
                warp: family.warp(n, cx, cy),
            })
            .collect(),
    }
}

/// `extent,W,H`, the column header, then one row per entry. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_manifests<W: Write>(out: &mut W, manifests: &[ProbeManifest]) -> std::io::Result<()> {
    if let Some(first) = manifests.first() {
        writeln!(out, "extent,{},{}", first.extent.width(), first.extent.height())?;
    }
    writeln!(out, "{MANIFEST_HEADER}")?;
    for m in manifests {
        for e in &m.entries {
            let w = e.warp;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.n,
                m.family,
                w.sx(),
                w.sy(),
                w.tx(),
                w.ty(),
                w.cx(),
                w.cy()
            )?;
        }
    }
    Ok(())
}

pub fn parse_manifests(text: &str) -> Result<Vec<ProbeManifest>, ProbeError> {
    let mut extent: Option<ImageExtent> = None;
    let mut by_family: BTreeMap<WarpFamily, (usize, Vec<ManifestEntry>)> = BTreeMap::new();
    for rec in records(text, MANIFEST_HEADER) {
        if rec.fields.first() == Some(&"extent") {
            rec.expect_len(3)?;
            let e = ImageExtent::new(rec.field(1, "width")?, rec.field(2, "height")?)
                .map_err(|e| ParseError::new(rec.line, e.to_string()))?;
            extent = Some(e);
            continue;
        }
        rec.expect_len(8)?;
        if extent.is_none() {
            return Err(ParseError::new(rec.line, "manifest row before the extent line").into());
        }
        let n: i32 = rec.field(0, "n")?;
        if n.abs() > PROBE_STEPS {
            return Err(ParseError::new(rec.line, format!("n={n} outside -{PROBE_STEPS}..{PROBE_STEPS}")).into());
        }
        let family: WarpFamily = rec
            .text(1, "family")?
            .parse()
            .map_err(|e: ProbeError| ParseError::new(rec.line, e.to_string()))?;
        let v: Vec<f64> = (2..8).map(|k| rec.float(k, "warp value")).collect::<Result<_, _>>()?;
        let warp = AxisWarp::new(v[0], v[1], v[2], v[3], v[4], v[5])
            .map_err(|e| ParseError::new(rec.line, e.to_string()))?;
        let slot = by_family.entry(family).or_insert((rec.line, Vec::new()));
        if slot.1.iter().any(|e| e.n == n) {
            return Err(ParseError::new(rec.line, format!("duplicate n={n} for {family}")).into());
        }
        slot.1.push(ManifestEntry { n, warp });
    }
    let extent = extent.ok_or_else(|| ParseError::new(1, "missing extent line"))?;
    let mut manifests: Vec<(usize, ProbeManifest)> = by_family
        .into_iter()
        .map(|(family, (first_line, mut entries))| {
            entries.sort_by_key(|e| e.n);
            let center = entries
                .first()
                .map(|e| (e.warp.cx(), e.warp.cy()))
                .unwrap_or(extent.center());
            (
                first_line,
                ProbeManifest {
                    family,
                    extent,
                    center,
                    entries,
                },
            )
        })
        .collect();
    manifests.sort_by_key(|(line, _)| *line);
    Ok(manifests.into_iter().map(|(_, m)| m).collect())
}

/// Scores of one anchor along a warp sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreProfile {
    pub anchor_id: usize,
    pub class_id: u32,
    pub scores: BTreeMap<i32, f64>,
    /// Manifest indices with no score for this anchor.
    pub gaps: Vec<i32>,
}

/// Read a profile score file (`n,anchor_id,class_id,score`) against a manifest
/// and the anchor set the scores refer to.
pub fn ingest_profile(
    text: &str,
    manifest: &ProbeManifest,
    anchors: &AnchorSet,
) -> Result<Vec<ScoreProfile>, ProbeError> {
    let mut profiles: BTreeMap<(usize, u32), BTreeMap<i32, f64>> = BTreeMap::new();
    for rec in records(text, PROFILE_HEADER) {
        rec.expect_len(4)?;
        let n: i32 = rec.field(0, "n")?;
        if manifest.entry(n).is_none() {
            return Err(ParseError::new(rec.line, format!("n={n} is not in the {} manifest", manifest.family)).into());
        }
        let anchor_id: usize = rec.field(1, "anchor_id")?;
        if anchors.get(anchor_id).is_none() {
            return Err(ParseError::new(rec.line, format!("unknown anchor id {anchor_id}")).into());
        }
        let class_id: u32 = rec.field(2, "class_id")?;
        let score = rec.score(3)?;
        if profiles
            .entry((anchor_id, class_id))
            .or_default()
            .insert(n, score)
            .is_some()
        {
            return Err(ParseError::new(
                rec.line,
                format!("duplicate score for anchor {anchor_id} class {class_id} at n={n}"),
            )
            .into());
        }
    }
    Ok(profiles
        .into_iter()
        .map(|((anchor_id, class_id), scores)| {
            let gaps = manifest.ns().filter(|n| !scores.contains_key(n)).collect();
            ScoreProfile {
                anchor_id,
                class_id,
                scores,
                gaps,
            }
        })
        .collect())
}

pub fn write_profiles<W: Write>(out: &mut W, profiles: &[ScoreProfile]) -> std::io::Result<()> {
    writeln!(out, "{PROFILE_HEADER}")?;
    let mut rows: Vec<(i32, usize, u32, f64)> = profiles
        .iter()
        .flat_map(|p| p.scores.iter().map(move |(&n, &s)| (n, p.anchor_id, p.class_id, s)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1, r.2));
    for (n, anchor, class, score) in rows {
        writeln!(out, "{n},{anchor},{class},{}", fmt_decimal(score))?;
    }
    Ok(())
}

/// Why a probe did not show anchor-boundary behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoEvidenceReason {
    NoValley,
    NoAnchorSwitch,
    SwitchOutsideWindow,
    SidePeaksLow,
    NotMissedAtOriginal,
    MissingOriginal,
}

impl NoEvidenceReason {
    const ALL: [NoEvidenceReason; 6] = [
        NoEvidenceReason::NoValley,
        NoEvidenceReason::NoAnchorSwitch,
        NoEvidenceReason::SwitchOutsideWindow,
        NoEvidenceReason::SidePeaksLow,
        NoEvidenceReason::NotMissedAtOriginal,
        NoEvidenceReason::MissingOriginal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoEvidenceReason::NoValley => "no valley",
            NoEvidenceReason::NoAnchorSwitch => "no anchor switch",
            NoEvidenceReason::SwitchOutsideWindow => "switch outside window",
            NoEvidenceReason::SidePeaksLow => "side peaks below gamma_min",
            NoEvidenceReason::NotMissedAtOriginal => "score at n=0 not below gamma_max",
            NoEvidenceReason::MissingOriginal => "no score at n=0",
        }
    }
}

impl fmt::Display for NoEvidenceReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoEvidenceReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown reason `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundaryVerdict {
    AnchorBoundary {
        kind: NeighborKind,
        /// The switching pair, smaller id first.
        anchors: (usize, usize),
        switch_n: i32,
        valley_score: f64,
        side_peaks: (f64, f64),
    },
    NoBoundaryEvidence {
        reason: NoEvidenceReason,
    },
}

impl BoundaryVerdict {
    pub fn is_anchor_boundary(&self) -> bool {
        matches!(self, BoundaryVerdict::AnchorBoundary { .. })
    }

    fn none(reason: NoEvidenceReason) -> Self {
        BoundaryVerdict::NoBoundaryEvidence { reason }
    }
}

#[derive(Debug, Clone, Copy)]
struct EnvelopePoint {
    n: i32,
    score: f64,
    /// Argmax anchor; `None` where every profile is zero.
    leader: Option<usize>,
}

fn envelope(profiles: &[&ScoreProfile]) -> Vec<EnvelopePoint> {
    let ns: BTreeSet<i32> = profiles.iter().flat_map(|p| p.scores.keys().copied()).collect();
    ns.into_iter()
        .map(|n| {
            let mut best: Option<(usize, f64)> = None;
            // profiles are sorted by anchor id, so strict `>` keeps the smaller id
            for p in profiles {
                if let Some(&s) = p.scores.get(&n) {
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((p.anchor_id, s));
                    }
                }
            }
            let (id, score) = best.expect("n came from some profile");
            EnvelopePoint {
                n,
                score,
                leader: (score > 0.0).then_some(id),
            }
        })
        .collect()
}

/// Lowest envelope point in `points`; ties prefer the index nearest 0.
fn lowest(points: &[EnvelopePoint]) -> Option<EnvelopePoint> {
    points.iter().copied().min_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.n.abs().cmp(&b.n.abs()))
            .then(a.n.cmp(&b.n))
    })
}

struct Switch {
    at: EnvelopePoint,
    pair: (usize, usize),
}

/// Leader changes along the envelope, each located at the lowest point
/// between the two leaders' last and first appearance.
fn switches(env: &[EnvelopePoint]) -> Vec<Switch> {
    let led: Vec<(usize, usize)> = env
        .iter()
        .enumerate()
        .filter_map(|(k, p)| p.leader.map(|id| (k, id)))
        .collect();
    led.windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| {
            let (ka, a) = w[0];
            let (kb, b) = w[1];
            Switch {
                at: lowest(&env[ka..=kb]).expect("non-empty span"),
                pair: (a.min(b), a.max(b)),
            }
        })
        .collect()
}

fn side_peaks(env: &[EnvelopePoint], at: i32) -> (f64, f64) {
    let peak = |it: &mut dyn Iterator<Item = &EnvelopePoint>| it.map(|p| p.score).fold(0.0, f64::max);
    (
        peak(&mut env.iter().filter(|p| p.n < at)),
        peak(&mut env.iter().filter(|p| p.n > at)),
    )
}

fn valley_within(env: &[EnvelopePoint], at: i32, window: u32) -> f64 {
    env.iter()
        .filter(|p| p.n.abs_diff(at) <= window)
        .map(|p| p.score)
        .fold(f64::INFINITY, f64::min)
}

/// Decide whether the profiles show a score valley at an anchor switch near
/// the original image.
///
/// The envelope `e(n)` is the best score over all profiles at each index. The
/// switch nearest `n = 0` is where the leading anchor changes. A boundary
/// verdict needs, in this order: the switch within `switch_window` of 0, both
/// side peaks at least `gamma_min`, an envelope minimum near the switch at most
/// `gamma_ratio` times the lower side peak, and `e(0) < gamma_max`. When the
/// leader never changes the reason is "no valley" if the envelope has no dip at
/// all, otherwise "no anchor switch".
pub fn analyze_profiles(
    profiles: &[ScoreProfile],
    anchors: &AnchorSet,
    th: &MmdThresholds,
    switch_window: u32,
) -> Result<BoundaryVerdict, ProbeError> {
    if profiles.len() < 2 {
        return Err(ProbeError::TooFewProfiles(profiles.len()));
    }
    let mut sorted: Vec<&ScoreProfile> = profiles.iter().collect();
    sorted.sort_by_key(|p| (p.anchor_id, p.class_id));
    for w in sorted.windows(2) {
        if w[0].anchor_id == w[1].anchor_id {
            return Err(ProbeError::DuplicateProfile(w[0].anchor_id));
        }
    }
    for p in &sorted {
        anchors
            .get(p.anchor_id)
            .ok_or(AnchorError::UnknownAnchor(p.anchor_id))?;
    }

    let env = envelope(&sorted);
    let nearest = switches(&env)
        .into_iter()
        .min_by_key(|s| (s.at.n.abs(), s.at.n));

    let Some(switch) = nearest else {
        let Some(low) = lowest(&env) else {
            return Ok(BoundaryVerdict::none(NoEvidenceReason::NoValley));
        };
        let (left, right) = side_peaks(&env, low.n);
        let dip = valley_within(&env, low.n, switch_window) <= th.gamma_ratio() * left.min(right);
        let reason = if dip && left.min(right) > 0.0 {
            NoEvidenceReason::NoAnchorSwitch
        } else {
            NoEvidenceReason::NoValley
        };
        return Ok(BoundaryVerdict::none(reason));
    };

    let (a, b) = switch.pair;
    let kind = anchors
        .neighbor_kind_by_id(a, b)?
        .ok_or(ProbeError::NotNeighbors(a, b))?;

    let at = switch.at.n;
    if at.unsigned_abs() > switch_window {
        return Ok(BoundaryVerdict::none(NoEvidenceReason::SwitchOutsideWindow));
    }
    let (left, right) = side_peaks(&env, at);
    let lower_peak = left.min(right);
    if lower_peak < th.gamma_min() {
        return Ok(BoundaryVerdict::none(NoEvidenceReason::SidePeaksLow));
    }
    let valley = valley_within(&env, at, switch_window);
    if valley > th.gamma_ratio() * lower_peak {
        return Ok(BoundaryVerdict::none(NoEvidenceReason::NoValley));
    }
    let Some(original) = env.iter().find(|p| p.n == 0) else {
        return Ok(BoundaryVerdict::none(NoEvidenceReason::MissingOriginal));
    };
    if original.score >= th.gamma_max() {
        return Ok(BoundaryVerdict::none(NoEvidenceReason::NotMissedAtOriginal));
    }
    Ok(BoundaryVerdict::AnchorBoundary {
        kind,
        anchors: (a, b),
        switch_n: at,
        valley_score: valley,
        side_peaks: (left, right),
    })
}

/// Frame identity shared by probe lists, verdicts and labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameKey {
    pub video_id: String,
    pub frame_index: u32,
    pub object_id: u32,
}

/// One probed frame: where its profile scores live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTarget {
    pub key: FrameKey,
    pub class_id: u32,
    pub family: WarpFamily,
    pub scores_path: String,
}

pub fn parse_probe_list(text: &str) -> Result<Vec<ProbeTarget>, ParseError> {
    records(text, PROBE_LIST_HEADER)
        .map(|rec| {
            rec.expect_len(6)?;
            Ok(ProbeTarget {
                key: FrameKey {
                    video_id: rec.text(0, "video_id")?.to_string(),
                    frame_index: rec.field(1, "frame_index")?,
                    object_id: rec.field(2, "object_id")?,
                },
                class_id: rec.field(3, "class_id")?,
                family: rec
                    .text(4, "family")?
                    .parse()
                    .map_err(|e: ProbeError| ParseError::new(rec.line, e.to_string()))?,
                scores_path: rec.text(5, "scores_path")?.to_string(),
            })
        })
        .collect()
}

pub fn write_probe_list<W: Write>(out: &mut W, targets: &[ProbeTarget]) -> std::io::Result<()> {
    writeln!(out, "{PROBE_LIST_HEADER}")?;
    for t in targets {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.key.video_id, t.key.frame_index, t.key.object_id, t.class_id, t.family, t.scores_path
        )?;
    }
    Ok(())
}

/// Result of analyzing one probe; errors are kept as rows so a batch can
/// report every failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbeOutcome {
    Verdict(BoundaryVerdict),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub key: FrameKey,
    pub class_id: u32,
    pub family: WarpFamily,
    pub outcome: ProbeOutcome,
}

pub fn write_verdicts<W: Write>(out: &mut W, rows: &[VerdictRow]) -> std::io::Result<()> {
    writeln!(out, "{VERDICT_HEADER}")?;
    for r in rows {
        write!(
            out,
            "{},{},{},{},{},",
            r.key.video_id, r.key.frame_index, r.key.object_id, r.class_id, r.family
        )?;
        match &r.outcome {
            ProbeOutcome::Verdict(BoundaryVerdict::AnchorBoundary {
                kind,
                anchors,
                switch_n,
                valley_score,
                side_peaks,
            }) => writeln!(
                out,
                "anchor_boundary,{kind},{},{},{switch_n},{},{},{},",
                anchors.0,
                anchors.1,
                fmt_decimal(*valley_score),
                fmt_decimal(side_peaks.0),
                fmt_decimal(side_peaks.1)
            )?,
            ProbeOutcome::Verdict(BoundaryVerdict::NoBoundaryEvidence { reason }) => {
                writeln!(out, "no_boundary_evidence,,,,,,,,{reason}")?
            }
            ProbeOutcome::Error(message) => {
                writeln!(out, "error,,,,,,,,{}", message.replace([',', '\n'], ";"))?
            }
        }
    }
    Ok(())
}

pub fn parse_verdicts(text: &str) -> Result<Vec<VerdictRow>, ParseError> {
    records(text, VERDICT_HEADER)
        .map(|rec| {
            rec.expect_len(14)?;
            let bad = |m: String| ParseError::new(rec.line, m);
            let outcome = match rec.fields[5] {
                "anchor_boundary" => {
                    let kind = NeighborKind::parse(rec.fields[6])
                        .ok_or_else(|| bad(format!("unknown boundary kind `{}`", rec.fields[6])))?;
                    ProbeOutcome::Verdict(BoundaryVerdict::AnchorBoundary {
                        kind,
                        anchors: (rec.field(7, "anchor_a")?, rec.field(8, "anchor_b")?),
                        switch_n: rec.field(9, "switch_n")?,
                        valley_score: rec.score(10)?,
                        side_peaks: (rec.score(11)?, rec.score(12)?),
                    })
                }
                "no_boundary_evidence" => ProbeOutcome::Verdict(BoundaryVerdict::NoBoundaryEvidence {
                    reason: rec.fields[13].parse().map_err(bad)?,
                }),
                "error" => ProbeOutcome::Error(rec.fields[13].to_string()),
                other => return Err(bad(format!("unknown verdict `{other}`"))),
            };
            Ok(VerdictRow {
                key: FrameKey {
                    video_id: rec.text(0, "video_id")?.to_string(),
                    frame_index: rec.field(1, "frame_index")?,
                    object_id: rec.field(2, "object_id")?,
                },
                class_id: rec.field(3, "class_id")?,
                family: rec
                    .text(4, "family")?
                    .parse()
                    .map_err(|e: ProbeError| bad(e.to_string()))?,
                outcome,
            })
        })
        .collect()
}

/// Human judgement attached to an MMD frame after visual inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HumanLabel {
    External,
    Other,
}

impl FromStr for HumanLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "external" => Ok(HumanLabel::External),
            "other" => Ok(HumanLabel::Other),
            _ => Err(format!("unknown label `{s}` (expected external or other)")),
        }
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<(FrameKey, HumanLabel)>, ParseError> {
    records(text, LABEL_HEADER)
        .map(|rec| {
            rec.expect_len(4)?;
            Ok((
                FrameKey {
                    video_id: rec.text(0, "video_id")?.to_string(),
                    frame_index: rec.field(1, "frame_index")?,
                    object_id: rec.field(2, "object_id")?,
                },
                rec.fields[3]
                    .parse()
                    .map_err(|m| ParseError::new(rec.line, m))?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    External,
    AnchorBoundary,
    Other,
}

impl Cause {
    pub const ALL: [Cause; 3] = [Cause::External, Cause::AnchorBoundary, Cause::Other];

    pub fn as_str(&self) -> &'static str {
        match self {
            Cause::External => "external",
            Cause::AnchorBoundary => "anchor_boundary",
            Cause::Other => "others",
        }
    }
}

/// Cause of one MMD frame. An `external` label wins over any verdict.
pub fn classify(anchor_boundary: bool, label: Option<HumanLabel>) -> Cause {
    match (label, anchor_boundary) {
        (Some(HumanLabel::External), _) => Cause::External,
        (_, true) => Cause::AnchorBoundary,
        _ => Cause::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CauseTally {
    pub external: usize,
    pub anchor_boundary: usize,
    pub others: usize,
}

impl CauseTally {
    pub fn total(&self) -> usize {
        self.external + self.anchor_boundary + self.others
    }

    pub fn get(&self, cause: Cause) -> usize {
        match cause {
            Cause::External => self.external,
            Cause::AnchorBoundary => self.anchor_boundary,
            Cause::Other => self.others,
        }
    }
}

/// Count MMD frames per cause from `(is anchor boundary, label)` pairs.
pub fn tally_causes<I>(frames: I) -> CauseTally
where
    I: IntoIterator<Item = (bool, Option<HumanLabel>)>,
{
    frames
        .into_iter()
        .fold(CauseTally::default(), |mut t, (boundary, label)| {
            match classify(boundary, label) {
                Cause::External => t.external += 1,
                Cause::AnchorBoundary => t.anchor_boundary += 1,
                Cause::Other => t.others += 1,
            }
            t
        })
}
