use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anchorlens_core::assignment::{assign, write_assignment, AssignmentTable};
use anchorlens_core::mmd::{
    build_tracks, extract_mmd, parse_dump, parse_ground_truth, write_dump, write_ground_truth,
    write_mmd_frames, GroundTruth,
};
use anchorlens_core::probe::{
    analyze_profiles, build_manifest, classify, ingest_profile, parse_labels, parse_manifests,
    parse_probe_list, parse_verdicts, write_manifests, write_probe_list, write_profiles,
    write_verdicts, BoundaryVerdict, Cause, CauseTally, FrameKey, HumanLabel, ProbeError,
    ProbeOutcome, ProbeTarget, VerdictRow, WarpFamily,
};
use anchorlens_core::synthdet::Scenario;
use anchorlens_core::{generate_anchors, AnchorSet, ImageExtent};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::report::Emitter;

/// What a command reports back to `main`.
pub struct Outcome {
    pub error_rows: usize,
}

impl Outcome {
    fn clean() -> Self {
        Self { error_rows: 0 }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn anchor_set(cfg: &RunConfig) -> Result<AnchorSet> {
    let source = cfg
        .pyramid_path
        .as_ref()
        .map_or("built-in pyramid".to_string(), |p| p.display().to_string());
    generate_anchors(&cfg.pyramid).with_context(|| format!("in {source}"))
}

pub fn anchors(cfg: &RunConfig, emit: &Emitter, out: Option<&Path>) -> Result<Outcome> {
    let set = anchor_set(cfg)?;
    emit.csv(out, |w| {
        writeln!(w, "id,level,cell_i,cell_j,template,x_min,y_min,x_max,y_max")?;
        for a in set.anchors() {
            let [x0, y0, x1, y1] = a.bbox.as_array();
            writeln!(
                w,
                "{},{},{},{},{},{x0},{y0},{x1},{y1}",
                a.id, a.level, a.cell_i, a.cell_j, a.template
            )?;
        }
        Ok(())
    })?;
    Ok(Outcome::clean())
}

pub fn assign_cmd(
    cfg: &RunConfig,
    emit: &Emitter,
    gt_path: &Path,
    strategy: Option<&str>,
    out: Option<&Path>,
) -> Result<Outcome> {
    let strategy = cfg.strategy(strategy)?;
    let set = anchor_set(cfg)?;
    let gts = parse_ground_truth(&read(gt_path)?).with_context(|| format!("in {}", gt_path.display()))?;

    let mut images: BTreeMap<(&str, u32), Vec<&GroundTruth>> = BTreeMap::new();
    for g in &gts {
        images.entry((&g.video_id, g.frame_index)).or_default().push(g);
    }
    let tables: Vec<(String, AssignmentTable)> = images
        .into_par_iter()
        .map(|((video, frame), mut objects)| {
            objects.sort_by_key(|g| g.object_id);
            let boxes: Vec<_> = objects.iter().map(|g| g.bbox).collect();
            let table = assign(&set, &boxes, &strategy)
                .with_context(|| format!("assigning {video}/{frame}"))?;
            Ok((format!("{video}/{frame}"), table))
        })
        .collect::<Result<_>>()?;
    emit.csv(out, |w| write_assignment(w, &tables))?;
    Ok(Outcome::clean())
}

pub fn mmd(cfg: &RunConfig, emit: &Emitter, dump_path: &Path, gt_path: &Path, out: Option<&Path>) -> Result<Outcome> {
    let set = anchor_set(cfg)?;
    let dump = parse_dump(&read(dump_path)?).with_context(|| format!("in {}", dump_path.display()))?;
    let gts = parse_ground_truth(&read(gt_path)?).with_context(|| format!("in {}", gt_path.display()))?;

    let annotated: BTreeSet<(&str, u32)> = gts.iter().map(|g| (g.video_id.as_str(), g.frame_index)).collect();
    let unannotated: BTreeSet<(&str, u32)> = dump
        .iter()
        .map(|r| (r.video_id.as_str(), r.frame_index))
        .filter(|k| !annotated.contains(k))
        .collect();
    if !unannotated.is_empty() {
        eprintln!("warning: {} dumped frame(s) have no ground truth", unannotated.len());
    }

    let tracks = build_tracks(&dump, &gts, &set)?;
    for m in &tracks.missing {
        eprintln!(
            "warning: {} frame {} object {} is annotated but absent from the dump",
            m.video_id, m.frame_index, m.object_id
        );
    }
    let flagged: Vec<_> = tracks
        .tracks
        .par_iter()
        .map(|t| (t, extract_mmd(t, &cfg.mmd)))
        .collect();
    emit.csv(out, |w| write_mmd_frames(w, &flagged))?;
    Ok(Outcome::clean())
}

pub fn parse_extent(raw: &str) -> Result<ImageExtent> {
    let (w, h) = raw
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("extent must look like WIDTHxHEIGHT, got `{raw}`"))?;
    Ok(ImageExtent::new(w.trim().parse()?, h.trim().parse()?)?)
}

pub fn probe_manifest(
    cfg: &RunConfig,
    emit: &Emitter,
    families: &[String],
    extent: Option<ImageExtent>,
    out: Option<&Path>,
) -> Result<Outcome> {
    let families: Vec<WarpFamily> = if families.is_empty() {
        WarpFamily::ALL.to_vec()
    } else {
        families.iter().map(|f| f.parse()).collect::<Result<_, ProbeError>>()?
    };
    let extent = extent.unwrap_or(cfg.pyramid.extent);
    let manifests: Vec<_> = families.iter().map(|&f| build_manifest(f, extent)).collect();
    emit.csv(out, |w| write_manifests(w, &manifests))?;
    Ok(Outcome::clean())
}

pub fn probe_analyze(
    cfg: &RunConfig,
    emit: &Emitter,
    manifest_path: &Path,
    probes_path: &Path,
    out: Option<&Path>,
) -> Result<Outcome> {
    let set = anchor_set(cfg)?;
    let manifests =
        parse_manifests(&read(manifest_path)?).with_context(|| format!("in {}", manifest_path.display()))?;
    let targets = parse_probe_list(&read(probes_path)?).with_context(|| format!("in {}", probes_path.display()))?;
    let base = probes_path.parent().map(Path::to_path_buf).unwrap_or_default();

    let analyze_one = |t: &ProbeTarget| -> Result<BoundaryVerdict> {
        let manifest = manifests
            .iter()
            .find(|m| m.family == t.family)
            .ok_or(ProbeError::MissingFamily(t.family))?;
        let path = base.join(&t.scores_path);
        let profiles = ingest_profile(&read(&path)?, manifest, &set)
            .with_context(|| format!("in {}", path.display()))?;
        let profiles: Vec<_> = profiles.into_iter().filter(|p| p.class_id == t.class_id).collect();
        Ok(analyze_profiles(&profiles, &set, &cfg.mmd, cfg.switch_window)?)
    };
    let mut rows: Vec<VerdictRow> = targets
        .par_iter()
        .map(|t| VerdictRow {
            key: t.key.clone(),
            class_id: t.class_id,
            family: t.family,
            outcome: match analyze_one(t) {
                Ok(v) => ProbeOutcome::Verdict(v),
                Err(e) => ProbeOutcome::Error(format!("{e:#}")),
            },
        })
        .collect();
    rows.sort_by(|a, b| (&a.key, a.family, a.class_id).cmp(&(&b.key, b.family, b.class_id)));

    let error_rows = rows
        .iter()
        .filter(|r| matches!(r.outcome, ProbeOutcome::Error(_)))
        .inspect(|r| {
            if let ProbeOutcome::Error(m) = &r.outcome {
                eprintln!(
                    "error: {} frame {} object {} ({}): {m}",
                    r.key.video_id, r.key.frame_index, r.key.object_id, r.family
                );
            }
        })
        .count();
    emit.csv(out, |w| write_verdicts(w, &rows))?;
    Ok(Outcome { error_rows })
}

/// One MMD frame in a cause report.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCause {
    pub key: FrameKey,
    /// `anchor_boundary:<kind>`, `no_boundary_evidence` or `error`.
    pub verdict: String,
    pub label: Option<HumanLabel>,
    pub cause: Cause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauseReport {
    pub totals: CauseTally,
    pub rows: Vec<FrameCause>,
}

/// Merge verdict rows per frame (any anchor-boundary family wins) and apply
/// labels. Labels for frames without verdicts are rejected.
pub fn cause_report(verdicts: &[VerdictRow], labels: &[(FrameKey, HumanLabel)]) -> Result<CauseReport> {
    let mut frames: BTreeMap<&FrameKey, String> = BTreeMap::new();
    for row in verdicts {
        let this = match &row.outcome {
            ProbeOutcome::Verdict(BoundaryVerdict::AnchorBoundary { kind, .. }) => format!("anchor_boundary:{kind}"),
            ProbeOutcome::Verdict(BoundaryVerdict::NoBoundaryEvidence { .. }) => "no_boundary_evidence".to_string(),
            ProbeOutcome::Error(_) => "error".to_string(),
        };
        let slot = frames.entry(&row.key).or_insert_with(|| this.clone());
        let rank = |v: &str| match v {
            v if v.starts_with("anchor_boundary") => 2,
            "no_boundary_evidence" => 1,
            _ => 0,
        };
        if rank(&this) > rank(slot) {
            *slot = this;
        }
    }

    let mut label_of: BTreeMap<&FrameKey, HumanLabel> = BTreeMap::new();
    for (key, label) in labels {
        if !frames.contains_key(key) {
            bail!(
                "label refers to unknown frame {} frame {} object {}",
                key.video_id,
                key.frame_index,
                key.object_id
            );
        }
        label_of.insert(key, *label);
    }

    let rows: Vec<FrameCause> = frames
        .into_iter()
        .map(|(key, verdict)| {
            let label = label_of.get(key).copied();
            FrameCause {
                key: key.clone(),
                cause: classify(verdict.starts_with("anchor_boundary"), label),
                verdict,
                label,
            }
        })
        .collect();
    let totals = anchorlens_core::probe::tally_causes(
        rows.iter().map(|r| (r.verdict.starts_with("anchor_boundary"), r.label)),
    );
    Ok(CauseReport { totals, rows })
}

pub fn tally(
    emit: &Emitter,
    verdicts_path: &Path,
    labels_path: Option<&Path>,
    out: Option<&Path>,
    frames_out: Option<&Path>,
    svg_out: Option<&Path>,
) -> Result<Outcome> {
    let verdicts =
        parse_verdicts(&read(verdicts_path)?).with_context(|| format!("in {}", verdicts_path.display()))?;
    let labels = match labels_path {
        Some(p) => parse_labels(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        None => Vec::new(),
    };
    let report = cause_report(&verdicts, &labels)?;

    emit.csv(out, |w| {
        writeln!(w, "category,count")?;
        for cause in Cause::ALL {
            writeln!(w, "{},{}", cause.as_str(), report.totals.get(cause))?;
        }
        Ok(())
    })?;
    if let Some(p) = frames_out {
        emit.csv(Some(p), |w| {
            writeln!(w, "video_id,frame_index,object_id,verdict,label,cause")?;
            for r in &report.rows {
                let label = match r.label {
                    Some(HumanLabel::External) => "external",
                    Some(HumanLabel::Other) => "other",
                    None => "",
                };
                writeln!(
                    w,
                    "{},{},{},{},{label},{}",
                    r.key.video_id,
                    r.key.frame_index,
                    r.key.object_id,
                    r.verdict,
                    r.cause.as_str()
                )?;
            }
            Ok(())
        })?;
    }
    if let Some(p) = svg_out {
        emit.svg(p, &report.totals)?;
    }
    Ok(Outcome::clean())
}

pub fn simulate(cfg: &RunConfig, no_header: bool, scenario: &str, out_dir: &Path) -> Result<Outcome> {
    let scenario = Scenario::named(scenario)?;
    let scores_rel = format!("profiles/{}.csv", scenario.probe_family);
    let sim = scenario.simulate(&scores_rel)?;

    let mut run = cfg.clone();
    run.pyramid = scenario.pyramid.clone();
    run.pyramid_path = Some(out_dir.join("pyramid.toml"));
    run.strategy = if scenario.params.tau() < 0.5 { "soft" } else { "ssd" }.to_string();
    let emit = Emitter::new(&run.digest(), no_header);

    std::fs::create_dir_all(out_dir.join("profiles"))
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let file = |name: &str| -> PathBuf { out_dir.join(name) };
    std::fs::write(file("pyramid.toml"), scenario.pyramid.to_toml_string())?;
    std::fs::write(
        file("anchorlens.toml"),
        format!("pyramid = \"pyramid.toml\"\n{}", run.settings_toml()),
    )?;
    emit.csv(Some(&file("dump.csv")), |w| write_dump(w, &sim.dump))?;
    emit.csv(Some(&file("gt.csv")), |w| write_ground_truth(w, &sim.ground_truth))?;
    emit.csv(Some(&file("manifest.csv")), |w| {
        write_manifests(w, std::slice::from_ref(&sim.manifest))
    })?;
    emit.csv(Some(&file("probes.csv")), |w| {
        write_probe_list(w, std::slice::from_ref(&sim.target))
    })?;
    emit.csv(Some(&file(&scores_rel)), |w| write_profiles(w, &sim.profiles))?;
    Ok(Outcome::clean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use anchorlens_core::probe::NoEvidenceReason;
    use anchorlens_core::NeighborKind;

    fn key(frame: u32) -> FrameKey {
        FrameKey {
            video_id: "v".into(),
            frame_index: frame,
            object_id: 0,
        }
    }

    fn row(frame: u32, family: WarpFamily, outcome: ProbeOutcome) -> VerdictRow {
        VerdictRow {
            key: key(frame),
            class_id: 1,
            family,
            outcome,
        }
    }

    fn boundary() -> ProbeOutcome {
        ProbeOutcome::Verdict(BoundaryVerdict::AnchorBoundary {
            kind: NeighborKind::GridBoundary,
            anchors: (0, 1),
            switch_n: 0,
            valley_score: 0.3,
            side_peaks: (0.9, 0.9),
        })
    }

    fn none() -> ProbeOutcome {
        ProbeOutcome::Verdict(BoundaryVerdict::NoBoundaryEvidence {
            reason: NoEvidenceReason::NoValley,
        })
    }

    #[test]
    fn one_of_each_cause() {
        let verdicts = vec![
            row(1, WarpFamily::Scaling, boundary()),
            row(2, WarpFamily::Scaling, none()),
            row(3, WarpFamily::Scaling, none()),
        ];
        let r = cause_report(&verdicts, &[(key(3), HumanLabel::External)]).unwrap();
        assert_eq!((r.totals.external, r.totals.anchor_boundary, r.totals.others), (1, 1, 1));
        assert_eq!(r.rows[0].verdict, "anchor_boundary:grid");
    }

    #[test]
    fn families_merge_per_frame() {
        let verdicts = vec![
            row(1, WarpFamily::Scaling, none()),
            row(1, WarpFamily::ShiftX, boundary()),
            row(2, WarpFamily::Scaling, ProbeOutcome::Error("bad".into())),
        ];
        let r = cause_report(&verdicts, &[]).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.totals.anchor_boundary, 1);
        assert_eq!(r.totals.others, 1);
        assert_eq!(r.totals.external, 0);
    }

    #[test]
    fn labels_must_match_a_frame() {
        let verdicts = vec![row(1, WarpFamily::Scaling, none())];
        assert!(cause_report(&verdicts, &[(key(9), HumanLabel::External)]).is_err());
    }

    #[test]
    fn extent_parsing() {
        assert_eq!(parse_extent("640x480").unwrap(), ImageExtent::new(640, 480).unwrap());
        assert!(parse_extent("640").is_err());
        assert!(parse_extent("0x10").is_err());
    }
}
