//! Subcommand implementations. Each stage reads files, runs the core
//! algorithms and writes its artifacts under `<out>/`.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spatter_core::analytics::{linfit, AnalyticsError, LayerFeatureRecord};
use spatter_core::fpp::{
    compute_sa, gamma_correct, phase_to_height, synth_fringes, unwrap_reference, wrap_phase, FringeStack,
    PhaseShiftSchedule,
};
use spatter_core::registration::{
    assemble_layer, count_spatters, extract_mp_center, ejection_angle, DbscanParams, LayerSignatureMap, MPObservation,
    RegistrationError,
};
use spatter_core::rng::SplitMix64;
use spatter_core::segmentation::{
    cross_entropy, pixel_accuracy, ClassProbabilities, KMeansSegmenter, LabelMap, Segmenter,
};
use spatter_core::svr::{compare_feature_set, prepare_dataset, train_feature_set, FeatureSet, SvrError};
use spatter_core::synth::{
    batch_scene_specs, synth_feature_dataset, synth_frame, synth_height_field, synth_layer_sequence, FrameBatchSpec,
    GroundTruth, SynthError, SynthScene,
};
use spatter_core::imaging::estimate_homography;
use spatter_core::{Frame, Homography};

use crate::config::{RunConfig, SegmenterKind};
use crate::error::{CliError, FormatError, Outcome};
use crate::pgm::{
    indexed_files, read_frame, read_intensity, read_label_map, write_gray8, write_intensity16, write_label_map,
};
use crate::raster::write_height_map;
use crate::records::{read_features, write_csv, write_features, Table};
use crate::report::{self, emit_report, Mark, Plot, ReportInputs, Series};
use crate::util::{create_dir, num, read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Write synthetic frames, label maps, ground truth, fringe stacks and feature records.
    Simulate,
    /// Segment frames (or read label maps) and register spatter signatures.
    Register,
    /// Reconstruct height maps from fringe stacks and compute Sa.
    Fpp,
    /// Regime curves, per-layer summaries and count fits from feature records.
    Analyze,
    /// Least-squares line through two columns of a CSV.
    Fit,
    /// Cross-validated SVR comparison of the seven feature sets.
    Compare,
    /// CSV tables and SVG plots from feature records.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Register => "register",
            Command::Fpp => "fpp",
            Command::Analyze => "analyze",
            Command::Fit => "fit",
            Command::Compare => "compare",
            Command::Report => "report",
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub segmenter: Option<SegmenterKind>,
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(mut cfg: RunConfig, ov: Overrides) -> Result<Self, CliError> {
        let jobs = ov.jobs.or(cfg.jobs).unwrap_or(0);
        if ov.jobs == Some(0) || cfg.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(CliError::runtime)?;
        if let Some(s) = ov.segmenter {
            cfg.register.segmenter = s;
        }
        Ok(Self {
            out: ov.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            seed: ov.seed.unwrap_or(cfg.seed),
            cfg,
            pool,
        })
    }

    /// Generator seed for `stream`; a seed set in the section is mixed in.
    fn sub_seed(&self, stream: u64, own: u64) -> u64 {
        SplitMix64::derive(self.seed, stream).next_u64() ^ own
    }

    fn features_path(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out.join("features.csv"))
    }
}

pub fn run(cmd: Command, ctx: &Context) -> Result<Outcome, CliError> {
    info!("{} (seed {}, out {})", cmd.name(), ctx.seed, ctx.out.display());
    match cmd {
        Command::Simulate => simulate(ctx),
        Command::Register => register(ctx),
        Command::Fpp => fpp(ctx),
        Command::Analyze => analyze(ctx),
        Command::Fit => fit(ctx),
        Command::Compare => compare(ctx),
        Command::Report => report_cmd(ctx),
    }
}

fn synth_err(e: SynthError) -> CliError {
    match e {
        SynthError::InvalidSpec { .. } | SynthError::Process(_) => CliError::Config(e.to_string()),
        SynthError::SceneInfeasible { .. } => CliError::Runtime(e.to_string()),
    }
}

fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{what} not found: {}", p.display())))
    }
}

/// Per-frame sidecar next to each frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMetaFile {
    pub frame_index: u64,
    pub timestamp: f64,
    /// Pixel to plate millimetres, row-major.
    pub plate_transform: Homography,
    pub scan_direction: f64,
}

pub fn frame_name(dir: &Path, kind: &str, i: u64, ext: &str) -> PathBuf {
    dir.join(format!("{kind}s")).join(format!("{kind}_{i:06}.{ext}"))
}

fn meta_path(dir: &Path, i: u64) -> PathBuf {
    dir.join("meta").join(format!("meta_{i:06}.json"))
}

fn truth_path(dir: &Path, i: u64) -> PathBuf {
    dir.join("truth").join(format!("truth_{i:06}.json"))
}

fn write_scene(dir: &Path, scene: &SynthScene, meta: &FrameMetaFile) -> Result<(), FormatError> {
    let i = meta.frame_index;
    let f = &scene.frame;
    write_gray8(&frame_name(dir, "frame", i, "pgm"), f.width, f.height, &f.pixels)?;
    write_label_map(&frame_name(dir, "label", i, "pgm"), &scene.labels)?;
    write_json(&truth_path(dir, i), &scene.truth)?;
    write_json(&meta_path(dir, i), meta)
}

fn scene_dirs(dir: &Path) -> Result<(), FormatError> {
    for d in ["frames", "labels", "truth", "meta"] {
        create_dir(&dir.join(d))?;
    }
    Ok(())
}

/// Header written beside a fringe stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeHeader {
    pub width: usize,
    pub height: usize,
    pub shifts: Vec<f64>,
    pub gamma: f64,
    pub period_px: f64,
    /// μm per radian.
    pub k_h: f64,
}

fn simulate(ctx: &Context) -> Result<Outcome, CliError> {
    let sim = &ctx.cfg.simulate;
    let nothing = sim.batch.is_none() && sim.layer.is_none() && sim.fringe.is_none() && sim.dataset.is_none();
    create_dir(&ctx.out)?;

    let batch = sim.batch.clone().or_else(|| nothing.then(FrameBatchSpec::default));
    if let Some(mut b) = batch {
        b.seed = ctx.sub_seed(1, b.seed);
        let specs = batch_scene_specs(&b).map_err(synth_err)?;
        scene_dirs(&ctx.out)?;
        ctx.pool.install(|| {
            specs.par_iter().enumerate().try_for_each(|(i, spec)| -> Result<(), CliError> {
                let scene = synth_frame(spec).map_err(synth_err)?;
                let meta = FrameMetaFile {
                    frame_index: i as u64,
                    timestamp: 0.0,
                    plate_transform: Homography::identity(),
                    scan_direction: spec.scan_direction,
                };
                Ok(write_scene(&ctx.out, &scene, &meta)?)
            })
        })?;
        info!("wrote {} batch frames", specs.len());
    }

    if let Some(layer) = &sim.layer {
        let mut l = layer.clone();
        l.seed = ctx.sub_seed(2, l.seed);
        let seq = synth_layer_sequence(&l).map_err(synth_err)?;
        let dir = ctx.out.join("layer");
        scene_dirs(&dir)?;
        ctx.pool.install(|| {
            seq.par_iter().try_for_each(|f| -> Result<(), CliError> {
                let meta = FrameMetaFile {
                    frame_index: f.frame_index,
                    timestamp: f.scene.frame.meta.timestamp,
                    plate_transform: f.scene.frame.meta.plate_transform.unwrap_or_else(Homography::identity),
                    scan_direction: f.scan_direction,
                };
                Ok(write_scene(&dir, &f.scene, &meta)?)
            })
        })?;
        info!("wrote {} layer frames", seq.len());
    }

    if let Some(fr) = &sim.fringe {
        let mut hs = fr.height;
        hs.seed = ctx.sub_seed(3, hs.seed);
        let mut cap = fr.capture.clone();
        cap.seed = ctx.sub_seed(4, cap.seed);
        let truth = synth_height_field(&hs).map_err(synth_err)?;
        let (obj, reference) = synth_fringes(&truth, &cap).map_err(|e| CliError::Config(e.to_string()))?;
        let dir = ctx.out.join("fringe");
        create_dir(&dir)?;
        for (k, (o, r)) in obj.frames.iter().zip(&reference.frames).enumerate() {
            write_intensity16(&dir.join(format!("obj_{k}.pgm")), obj.width, obj.height, o)?;
            write_intensity16(&dir.join(format!("ref_{k}.pgm")), obj.width, obj.height, r)?;
        }
        write_json(
            &dir.join("fringe.json"),
            &FringeHeader {
                width: obj.width,
                height: obj.height,
                shifts: cap.schedule.shifts.clone(),
                gamma: cap.gamma,
                period_px: cap.period_px,
                k_h: cap.k_h,
            },
        )?;
        write_height_map(&dir.join("height_truth"), &truth)?;
        let sa = compute_sa(&truth, truth.full_region()).map_err(CliError::runtime)?;
        write_json(&dir.join("truth_roughness.json"), &sa)?;
    }

    if let Some(ds) = &sim.dataset {
        let mut d = ds.clone();
        d.seed = ctx.sub_seed(5, d.seed);
        let recs = synth_feature_dataset(&d).map_err(synth_err)?;
        write_features(&ctx.out.join("features.csv"), &recs)?;
        info!("wrote {} feature records", recs.len());
    }
    Ok(Outcome::default())
}

enum Source {
    Labels(LabelMap),
    Frame(Frame),
}

struct Loaded {
    index: u64,
    source: Source,
    meta: FrameMetaFile,
    truth_labels: Option<LabelMap>,
    truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
struct FrameResult {
    obs: Result<MPObservation, RegistrationError>,
    /// (accuracy, cross-entropy) of the segmenter against stored labels.
    seg_eval: Option<(f64, f64)>,
}

fn segmenter(kind: SegmenterKind, ctx: &Context) -> Box<dyn Segmenter + Sync> {
    match kind {
        SegmenterKind::Labelmap | SegmenterKind::Reference => Box::new(ctx.cfg.register.reference),
        SegmenterKind::Kmeans3 => Box::new(KMeansSegmenter { k: 3 }),
        SegmenterKind::Kmeans4 => Box::new(KMeansSegmenter { k: 4 }),
    }
}

fn register_one(l: &Loaded, seg: &(dyn Segmenter + Sync), params: &DbscanParams) -> FrameResult {
    let segmented;
    let (lm, seg_eval) = match &l.source {
        Source::Labels(lm) => (lm, None),
        Source::Frame(f) => match seg.segment(f) {
            Ok(lm) => {
                segmented = lm;
                let eval = l.truth_labels.as_ref().and_then(|t| {
                    let acc = pixel_accuracy(&segmented, t).ok()?;
                    let ce = cross_entropy(&ClassProbabilities::one_hot(&segmented), t).ok()?;
                    Some((acc, ce.mean))
                });
                (&segmented, eval)
            }
            Err(e) => {
                return FrameResult {
                    obs: Err(e.into()),
                    seg_eval: None,
                }
            }
        },
    };
    let obs = (|| {
        let center = extract_mp_center(lm)?;
        let spatters = count_spatters(lm, params)?;
        let ejection_angles = spatters
            .centroids
            .iter()
            .map(|&c| ejection_angle(center, c, l.meta.scan_direction))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MPObservation {
            frame_index: l.index,
            mp_center_px: center,
            mp_center_mm: l.meta.plate_transform.apply(center),
            spatter_count: spatters.count,
            ejection_angles,
            spatter_centroids_px: spatters.centroids,
            scan_direction: l.meta.scan_direction,
        })
    })();
    FrameResult { obs, seg_eval }
}

/// Counted clusters with no true spatter within `tol`, and true spatters
/// with no counted cluster within `tol`.
pub fn match_clusters(found: &[[f64; 2]], truth: &[[f64; 2]], tol: f64) -> (usize, usize) {
    let near = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]) <= tol;
    let false_pos = found.iter().filter(|f| !truth.iter().any(|t| near(f, t))).count();
    let missed = truth.iter().filter(|t| !found.iter().any(|f| near(f, t))).count();
    (false_pos, missed)
}

const SIGNATURE_HEADER: [&str; 6] = ["layer", "frame", "mp_x_mm", "mp_y_mm", "count", "angles"];
const CHECK_HEADER: [&str; 6] = ["frame_index", "truth_count", "count", "false_clusters", "missed", "exact"];
const SEG_EVAL_HEADER: [&str; 3] = ["frame_index", "accuracy", "cross_entropy"];

fn register(ctx: &Context) -> Result<Outcome, CliError> {
    let rc = &ctx.cfg.register;
    rc.dbscan.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let input = rc.input.clone().unwrap_or_else(|| ctx.out.clone());
    let plate = plate_override(rc)?;
    let kind = rc.segmenter;
    let (sub, prefix) = match kind {
        SegmenterKind::Labelmap => ("labels", "label_"),
        _ => ("frames", "frame_"),
    };
    let files = indexed_files(&input.join(sub), prefix, "pgm")?;
    if files.is_empty() {
        return Err(CliError::Runtime(format!(
            "no {sub} found in {}",
            input.join(sub).display()
        )));
    }
    let label_dir = input.join("labels");

    let loaded: Vec<Loaded> = ctx.pool.install(|| {
        files
            .par_iter()
            .map(|(i, path)| -> Result<Loaded, FormatError> {
                let source = match kind {
                    SegmenterKind::Labelmap => Source::Labels(read_label_map(path)?),
                    _ => Source::Frame(read_frame(path)?),
                };
                let mp = meta_path(&input, *i);
                let mut meta: FrameMetaFile = if mp.is_file() {
                    read_json(&mp)?
                } else {
                    FrameMetaFile {
                        frame_index: *i,
                        timestamp: 0.0,
                        plate_transform: Homography::identity(),
                        scan_direction: 0.0,
                    }
                };
                if let Some(h) = plate {
                    meta.plate_transform = h;
                }
                let lp = label_dir.join(format!("label_{i:06}.pgm"));
                let truth_labels = match (&source, lp.is_file()) {
                    (Source::Frame(_), true) => Some(read_label_map(&lp)?),
                    _ => None,
                };
                let tp = truth_path(&input, *i);
                let truth = if tp.is_file() { Some(read_json(&tp)?) } else { None };
                Ok(Loaded {
                    index: *i,
                    source,
                    meta,
                    truth_labels,
                    truth,
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let seg = segmenter(kind, ctx);
    let results: Vec<FrameResult> =
        ctx.pool.install(|| loaded.par_iter().map(|l| register_one(l, seg.as_ref(), &rc.dbscan)).collect());

    let dir = ctx.out.join("register");
    create_dir(&dir)?;
    if let Some(h) = plate {
        write_json(&dir.join("homography.json"), &h)?;
    }
    let tol = rc.match_tolerance.unwrap_or(rc.dbscan.eps);
    let mut checks = Vec::new();
    let mut evals = Vec::new();
    for (l, r) in loaded.iter().zip(&results) {
        if let Some(t) = &l.truth {
            let (count, found): (String, &[[f64; 2]]) = match &r.obs {
                Ok(o) => (o.spatter_count.to_string(), &o.spatter_centroids_px),
                Err(_) => (String::new(), &[]),
            };
            let (fp, missed) = match_clusters(found, &t.spatter_centroids, tol);
            let exact = r.obs.as_ref().is_ok_and(|o| o.spatter_count == t.spatter_count);
            checks.push(vec![
                l.index.to_string(),
                t.spatter_count.to_string(),
                count,
                fp.to_string(),
                missed.to_string(),
                (exact as u8).to_string(),
            ]);
        }
        if let Some((acc, ce)) = r.seg_eval {
            evals.push(vec![l.index.to_string(), num(acc), if ce.is_finite() { num(ce) } else { "inf".into() }]);
        }
    }

    let map = assemble_layer(
        rc.layer_index,
        loaded.iter().zip(results).map(|(l, r)| (l.index, r.obs)),
    );
    write_json(&dir.join("layer_signature.json"), &map)?;
    let rows: Vec<Vec<String>> = map
        .observations
        .iter()
        .map(|o| {
            vec![
                map.layer_index.to_string(),
                o.frame_index.to_string(),
                num(o.mp_center_mm[0]),
                num(o.mp_center_mm[1]),
                o.spatter_count.to_string(),
                o.ejection_angles.iter().map(|a| num(*a)).collect::<Vec<_>>().join(";"),
            ]
        })
        .collect();
    write_csv(&dir.join("layer_signature.csv"), &SIGNATURE_HEADER, &rows)?;
    if !checks.is_empty() {
        write_csv(&dir.join("registration_check.csv"), &CHECK_HEADER, &checks)?;
        let exact = checks.iter().filter(|c| c[5] == "1").count();
        let flagged = checks.iter().filter(|c| c[3] != "0").count();
        info!("{exact}/{} frames counted exactly; {flagged} with false clusters", checks.len());
    }
    if !evals.is_empty() {
        write_csv(&dir.join("segmentation_eval.csv"), &SEG_EVAL_HEADER, &evals)?;
    }
    for s in &map.skipped {
        warn!("frame {} skipped: {}", s.frame_index, s.reason);
    }
    Ok(Outcome {
        skipped: map.skipped.len(),
    })
}

/// Camera-to-plate transform from `calibration` or `homography`, if set.
fn plate_override(rc: &crate::config::RegisterConfig) -> Result<Option<Homography>, CliError> {
    match (&rc.calibration, &rc.homography) {
        (Some(_), Some(_)) => Err(CliError::Config("set either register.calibration or register.homography".into())),
        (Some(p), None) => {
            require_file(p, "calibration")?;
            let t = Table::read(p)?;
            let cols = ["x_src", "y_src", "x_dst", "y_dst"].map(|c| t.column(c));
            let [xs, ys, xd, yd] = cols;
            let (xs, ys, xd, yd) = (xs?, ys?, xd?, yd?);
            if xs.len() != 4 {
                return Err(CliError::Config(format!("{}: need exactly 4 correspondences, got {}", p.display(), xs.len())));
            }
            let src: [[f64; 2]; 4] = std::array::from_fn(|i| [xs[i], ys[i]]);
            let dst: [[f64; 2]; 4] = std::array::from_fn(|i| [xd[i], yd[i]]);
            estimate_homography(&src, &dst)
                .map(Some)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
        (None, Some(p)) => {
            require_file(p, "homography")?;
            Ok(Some(read_json(p).map_err(|e| CliError::Config(e.to_string()))?))
        }
        (None, None) => Ok(None),
    }
}

fn read_stack(dir: &Path, prefix: &str, h: &FringeHeader) -> Result<FringeStack, CliError> {
    let mut frames = Vec::with_capacity(h.shifts.len());
    for k in 0..h.shifts.len() {
        let p = dir.join(format!("{prefix}_{k}.pgm"));
        require_file(&p, "fringe image")?;
        let (w, ht, v) = read_intensity(&p)?;
        if (w, ht) != (h.width, h.height) {
            return Err(CliError::Runtime(format!(
                "{}: size {w}x{ht} does not match header {}x{}",
                p.display(),
                h.width,
                h.height
            )));
        }
        frames.push(v);
    }
    let schedule = PhaseShiftSchedule::new(h.shifts.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    FringeStack::new(h.width, h.height, frames, schedule, h.gamma).map_err(|e| CliError::Config(e.to_string()))
}

const ROUGHNESS_HEADER: [&str; 5] = ["layer", "bar", "sa_um", "z_std_um", "n_valid"];

fn fpp(ctx: &Context) -> Result<Outcome, CliError> {
    let fc = &ctx.cfg.fpp;
    let input = fc.input.clone().unwrap_or_else(|| ctx.out.join("fringe"));
    let hp = input.join("fringe.json");
    require_file(&hp, "fringe header")?;
    let header: FringeHeader = read_json(&hp)?;
    for k in 0..header.shifts.len() {
        require_file(&input.join(format!("obj_{k}.pgm")), "object fringe image")?;
        require_file(&input.join(format!("ref_{k}.pgm")), "reference fringe image")?;
    }
    let k_h = fc.k_h.unwrap_or(header.k_h);
    let (obj, reference) = ctx.pool.install(|| {
        rayon::join(|| read_stack(&input, "obj", &header), || read_stack(&input, "ref", &header))
    });
    let (obj, reference) = (obj?, reference?);
    let thr = fc.modulation_threshold;
    let (po, pr) = ctx.pool.install(|| {
        rayon::join(
            || wrap_phase(&gamma_correct(&obj), thr),
            || wrap_phase(&gamma_correct(&reference), thr),
        )
    });
    let un = unwrap_reference(&po, &pr).map_err(CliError::runtime)?;
    let height = phase_to_height(&un.phase, k_h).map_err(|e| CliError::Config(e.to_string()))?;

    let dir = ctx.out.join("fpp");
    create_dir(&dir)?;
    write_height_map(&dir.join("height"), &height)?;
    let diag = &un.diagnostics;
    write_json(
        &dir.join("unwrap.json"),
        &serde_json::json!({
            "ambiguous_pixels": diag.ambiguous.len(),
            "regions": diag.regions,
            "offsets": diag.offsets,
            "valid_pixels": height.valid.iter().filter(|&&v| v).count(),
        }),
    )?;
    let regions: Vec<(u32, spatter_core::fpp::Region)> = if fc.regions.is_empty() {
        vec![(0, height.full_region())]
    } else {
        fc.regions.iter().map(|r| (r.bar, r.region())).collect()
    };
    let mut rows = Vec::new();
    for (bar, region) in regions {
        let r = compute_sa(&height, region).map_err(CliError::runtime)?;
        rows.push(vec![fc.layer.to_string(), bar.to_string(), num(r.sa), num(r.z_std), r.n_valid.to_string()]);
    }
    write_csv(&dir.join("roughness.csv"), &ROUGHNESS_HEADER, &rows)?;
    Ok(Outcome::default())
}

fn load_records(path: &Path) -> Result<Vec<LayerFeatureRecord>, CliError> {
    require_file(path, "feature records")?;
    let recs = read_features(path)?;
    for (i, r) in recs.iter().enumerate() {
        r.validate()
            .map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), i + 1)))?;
    }
    Ok(recs)
}

#[derive(Serialize)]
struct FitOut<'a> {
    x: &'a str,
    y: &'a str,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    n: usize,
}

fn analyze(ctx: &Context) -> Result<Outcome, CliError> {
    let ac = &ctx.cfg.analyze;
    let path = ctx.features_path(&ac.features);
    let recs = load_records(&path)?;
    let sig: Option<LayerSignatureMap> = match &ac.signature {
        Some(p) => {
            require_file(p, "layer signature")?;
            Some(read_json(p)?)
        }
        None => None,
    };
    let bin = ac.angle_bin.unwrap_or(30.0);
    if !(bin > 0.0 && bin <= 360.0) {
        return Err(CliError::Config("analyze.angle_bin must lie in (0, 360]".into()));
    }
    let dir = ctx.out.join("analyze");
    create_dir(&dir)?;
    write_csv(&dir.join("regime.csv"), &report::REGIME_HEADER, &report::regime_rows(&recs))?;
    write_csv(&dir.join("layer_summary.csv"), &report::LAYER_SUMMARY_HEADER, &report::layer_summary(&recs))?;
    let mut fits = serde_json::Map::new();
    for (name, groups) in [
        ("count_vs_power", report::count_by(&recs, |r| r.power)),
        ("count_vs_speed_m_s", report::count_by(&recs, |r| r.speed / 1000.0)),
    ] {
        let v = match report::group_fit(&groups) {
            Some(f) => serde_json::to_value(f).map_err(CliError::runtime)?,
            None => serde_json::Value::Null,
        };
        fits.insert(name.into(), v);
    }
    write_json(&dir.join("fits.json"), &fits)?;
    if let Some(s) = &sig {
        let h = report::angle_histogram(s, bin);
        write_csv(&dir.join("angle_histogram.csv"), &report::HISTOGRAM_HEADER, &report::histogram_rows(&h))?;
    }
    Ok(Outcome::default())
}

fn fit(ctx: &Context) -> Result<Outcome, CliError> {
    let fc = &ctx.cfg.fit;
    let path = ctx.features_path(&fc.input);
    require_file(&path, "fit input")?;
    let t = Table::read(&path)?;
    let x = t.column(&fc.x)?;
    let y = t.column(&fc.y)?;
    let f = linfit(&x, &y).map_err(|e| match e {
        AnalyticsError::LengthMismatch { .. } => CliError::Config(e.to_string()),
        _ => CliError::Runtime(format!("{}: {e}", path.display())),
    })?;
    let dir = ctx.out.join("fit");
    create_dir(&dir)?;
    write_json(
        &dir.join("fit.json"),
        &FitOut {
            x: &fc.x,
            y: &fc.y,
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            n: f.n,
        },
    )?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Plot {
        title: format!("{} against {}", fc.y, fc.x),
        x_label: fc.x.clone(),
        y_label: fc.y.clone(),
        series: vec![
            Series {
                name: "data".into(),
                points: x.iter().copied().zip(y.iter().copied()).collect(),
                mark: Mark::Points,
            },
            Series {
                name: format!("fit R2={:.3}", f.r_squared),
                points: vec![(lo, f.predict(lo)), (hi, f.predict(hi))],
                mark: Mark::Line,
            },
        ],
        ..Default::default()
    }
    .write(&dir.join("fit.svg"))?;
    Ok(Outcome::default())
}

fn svr_err(e: SvrError) -> CliError {
    match e {
        SvrError::InvalidHyperparameter { .. } | SvrError::Protocol(_) | SvrError::Analytics(_) => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Runtime(e.to_string()),
    }
}

pub const COMPARE_HEADER: [&str; 4] = ["inputs", "rmse_um", "mae_um", "mre_percent"];

fn compare(ctx: &Context) -> Result<Outcome, CliError> {
    let cc = &ctx.cfg.compare;
    let path = ctx.features_path(&cc.features);
    let recs = load_records(&path)?;
    cc.hyperparams.validate().map_err(svr_err)?;
    let data = prepare_dataset(&recs, cc.protocol).map_err(svr_err)?;
    let rows = ctx.pool.install(|| {
        FeatureSet::ALL
            .par_iter()
            .map(|&fs| compare_feature_set(&data, fs, &cc.hyperparams, cc.protocol))
            .collect::<Result<Vec<_>, _>>()
    });
    let rows = rows.map_err(svr_err)?;

    let dir = ctx.out.join("compare");
    create_dir(&dir)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.feature_set.name().to_string(),
                num(r.metrics.rmse),
                num(r.metrics.mae),
                r.metrics.mre_percent.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&dir.join("compare.csv"), &COMPARE_HEADER, &table)?;

    let mut header = vec!["bar_id", "layer_index", "sa_um"];
    header.extend(FeatureSet::ALL.iter().map(|f| f.name()));
    let preds: Vec<Vec<String>> = data
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![r.bar_id.to_string(), r.layer_index.to_string(), num(r.sa)];
            row.extend(rows.iter().map(|c| num(c.predictions[i])));
            row
        })
        .collect();
    write_csv(&dir.join("predictions.csv"), &header, &preds)?;

    let metric = |f: fn(&spatter_core::analytics::PredictionMetrics) -> f64| -> Vec<(f64, f64)> {
        rows.iter().enumerate().map(|(i, r)| (i as f64, f(&r.metrics))).collect()
    };
    Plot {
        title: "Held-out error by model input".into(),
        x_label: "model input".into(),
        y_label: "error (um)".into(),
        series: vec![
            Series {
                name: "RMSE".into(),
                points: metric(|m| m.rmse),
                mark: Mark::Bars,
            },
            Series {
                name: "MAE".into(),
                points: metric(|m| m.mae),
                mark: Mark::Bars,
            },
        ],
        x_categories: rows.iter().map(|r| r.feature_set.name().to_string()).collect(),
    }
    .write(&dir.join("compare.svg"))?;

    if cc.save_models {
        let mdir = dir.join("models");
        create_dir(&mdir)?;
        for &fs in &FeatureSet::ALL {
            let m = train_feature_set(&data, fs, &cc.hyperparams).map_err(svr_err)?;
            write_json(&mdir.join(format!("{}.json", fs.name().replace('+', "_"))), &m)?;
        }
    }
    Ok(Outcome::default())
}

fn report_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let rc = &ctx.cfg.report;
    let path = ctx.features_path(&rc.features);
    let recs = load_records(&path)?;
    if let Some(p) = &rc.layer_table {
        require_file(p, "layer table")?;
    }
    let sig: Option<LayerSignatureMap> = match &rc.signature {
        Some(p) => {
            require_file(p, "layer signature")?;
            Some(read_json(p)?)
        }
        None => None,
    };
    let files = emit_report(
        &ctx.out.join("report"),
        &ReportInputs {
            records: &recs,
            hatch_table: rc.layer_table.as_deref(),
            signature: sig.as_ref(),
        },
    )?;
    info!("wrote {} report files", files.len());
    Ok(Outcome::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_matching() {
        let truth = [[10.0, 10.0], [30.0, 30.0]];
        assert_eq!(match_clusters(&[[10.5, 10.0], [30.0, 31.0]], &truth, 3.0), (0, 0));
        assert_eq!(match_clusters(&[[10.5, 10.0], [50.0, 50.0]], &truth, 3.0), (1, 1));
        assert_eq!(match_clusters(&[], &truth, 3.0), (0, 2));
    }

    #[test]
    fn meta_round_trips() {
        let m = FrameMetaFile {
            frame_index: 3,
            timestamp: 0.003,
            plate_transform: Homography::scale_translate(0.05, 1.0, 2.0),
            scan_direction: 90.0,
        };
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"plate_transform\":[0.05,0.0,1.0,0.0,0.05,2.0,0.0,0.0,1.0]"), "{s}");
        assert_eq!(serde_json::from_str::<FrameMetaFile>(&s).unwrap(), m);
    }
}
