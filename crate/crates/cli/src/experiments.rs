//! Experiment runners. Each returns its tables in deterministic order; the
//! caller decides where they go.

use crate::config::{ConfigError, HypothesisKind, RunConfig};
use megarefine_core::coarse::{coarse_then_refine, score_hypotheses};
use megarefine_core::geometry::{sample_perturbation, Pose, RngStream};
use megarefine_core::hypotheses::{basin_label, test_hypotheses, training_hypotheses, HypothesisSet, Label};
use megarefine_core::metrics::{evaluate, PoseError, ResultRecord};
use megarefine_core::refiner::{basin_rows, basin_trials, refine, BasinRow, BasinSetup, RefineTrace};
use megarefine_core::render::{
    default_light, make_viewset, render_instances, write_pfm_gray, write_pfm_rgb, write_ppm, Channels, Instance,
};
use megarefine_core::scene::{generate_scene, Scene, SceneObject};
use megarefine_core::ObjectModel;
use rayon::prelude::*;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

pub fn run_id(scene: usize, object: usize) -> String {
    format!("s{scene:04}-o{object}")
}

/// Errors for a run that produced no pose.
pub fn failed_error() -> PoseError {
    PoseError { translation_error: f64::NAN, rotation_error: f64::NAN, add: f64::NAN, success: false }
}

/// Resolved config plus the loaded objects and the root random stream.
pub struct Context {
    pub cfg: RunConfig,
    pub models: Vec<ObjectModel>,
    pub root: RngStream,
}

/// One object of one scene, with its own random stream.
pub struct Target<'a> {
    pub scene: &'a Scene,
    pub object: &'a SceneObject,
    pub model: &'a ObjectModel,
    pub stream: RngStream,
    pub run_id: String,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self, RunError> {
        let root = RngStream::new(cfg.seed, 0);
        // Mesh paths are absolute after config resolution.
        let models = cfg.scene.load_objects(Path::new("."), &root).map_err(runtime)?;
        Ok(Self { cfg, models, root })
    }

    pub fn scene(&self, index: usize) -> Result<Scene, RunError> {
        generate_scene(&self.cfg.scene, &self.models, &self.root, index as u64)
            .map_err(|e| RunError::Runtime(format!("scene {index}: {e}")))
    }

    pub fn trial_stream(&self, scene: usize, object: usize) -> RngStream {
        self.root.named("trials").split(scene as u64).split(object as u64)
    }

    /// Runs `f` on every object of every scene. Scenes run in parallel;
    /// results come back in scene then object order.
    pub fn map_targets<T, F>(&self, f: F) -> Result<Vec<T>, RunError>
    where
        T: Send,
        F: Fn(&Target<'_>) -> Result<T, RunError> + Sync,
    {
        let per_scene: Vec<Vec<T>> = (0..self.cfg.scenes)
            .into_par_iter()
            .map(|s| {
                let scene = self.scene(s)?;
                scene
                    .objects
                    .iter()
                    .map(|o| {
                        f(&Target {
                            scene: &scene,
                            object: o,
                            model: &self.models[o.object],
                            stream: self.trial_stream(s, o.object),
                            run_id: run_id(s, o.object),
                        })
                    })
                    .collect()
            })
            .collect::<Result<_, RunError>>()?;
        Ok(per_scene.into_iter().flatten().collect())
    }

    fn record(&self, t: &Target<'_>, scorer: &str, predictor: &str, magnitude: f64, pose: Option<&Pose>) -> ResultRecord {
        let e = pose.map_or_else(failed_error, |p| {
            evaluate(p, &t.object.gt, t.model, self.cfg.pipeline.reference)
        });
        ResultRecord::new(t.run_id.clone(), t.model.name.clone(), scorer, predictor, magnitude, &e)
    }
}

/// Output directory; every file an experiment writes lives inside it.
pub struct Outputs {
    pub dir: PathBuf,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        debug_assert!(!name.starts_with('/') && !name.contains(".."));
        self.dir.join(name)
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(runtime)?;
        }
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), RunError> {
        let mut w = csv::Writer::from_writer(self.file(name)?);
        for r in rows {
            w.serialize(r).map_err(runtime)?;
        }
        w.flush().map_err(runtime)
    }

    pub fn jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), RunError> {
        let mut w = self.file(name)?;
        for r in rows {
            serde_json::to_writer(&mut w, r).map_err(runtime)?;
            w.write_all(b"\n").map_err(runtime)?;
        }
        w.flush().map_err(runtime)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), RunError> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
        w.write_all(b"\n").map_err(runtime)?;
        w.flush().map_err(runtime)
    }

    pub fn results(&self, records: &[ResultRecord]) -> Result<(), RunError> {
        let mut w = self.file("results.csv")?;
        megarefine_core::metrics::write_results_csv(records, &mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
        self.jsonl("results.jsonl", records)
    }

    /// One line per refinement step, tagged with its run. Carries wall time,
    /// so unlike the CSV tables it is not reproducible byte for byte.
    pub fn traces(&self, traces: &[(String, RefineTrace)]) -> Result<(), RunError> {
        let mut w = self.file("traces.jsonl")?;
        for (id, trace) in traces {
            for step in &trace.steps {
                let mut v = serde_json::to_value(step).map_err(runtime)?;
                if let Some(m) = v.as_object_mut() {
                    m.insert("run_id".into(), id.clone().into());
                    m.insert("predictor".into(), trace.predictor.name().into());
                }
                serde_json::to_writer(&mut w, &v).map_err(runtime)?;
                w.write_all(b"\n").map_err(runtime)?;
            }
        }
        w.flush().map_err(runtime)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewRow {
    pub run_id: String,
    pub object: String,
    pub view: usize,
    pub valid_pixels: usize,
    pub anchor_offset_px: f64,
    pub file_prefix: String,
}

fn write_image(out: &Outputs, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), RunError> {
    let mut w = out.file(name)?;
    f(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)
}

/// Dumps each scene's observed depth and a shaded color rendering, plus the
/// ground-truth view set of every object when `render.views` is set.
pub fn render(ctx: &Context, out: &Outputs) -> Result<Vec<ViewRow>, RunError> {
    let cfg = &ctx.cfg;
    let rows = ctx.map_targets(|t| {
        let s = t.scene.index;
        if t.object.object == 0 {
            write_image(out, &format!("images/scene{s:04}_depth.pfm"), |w| write_pfm_gray(&t.scene.observed.depth, w))?;
            let instances: Vec<Instance<'_>> = t
                .scene
                .objects
                .iter()
                .map(|o| Instance { mesh: &ctx.models[o.object].mesh, pose: o.gt })
                .collect();
            let color = render_instances(&instances, &cfg.scene.camera, &default_light(), Channels::ALL);
            if let Some(rgb) = &color.view.rgb {
                write_image(out, &format!("images/scene{s:04}_rgb.ppm"), |w| write_ppm(rgb, w))?;
            }
        }
        if !cfg.render.views {
            return Ok(Vec::new());
        }
        let views = make_viewset(&t.model.mesh, &t.object.gt, &t.model.anchor, &cfg.scene.camera, &cfg.viewset)
            .map_err(runtime)?;
        let mut rows = Vec::with_capacity(views.len());
        for (i, v) in views.iter().enumerate() {
            let prefix = format!("images/scene{s:04}_obj{}_view{i}", t.object.object);
            write_image(out, &format!("{prefix}_depth.pfm"), |w| write_pfm_gray(&v.depth, w))?;
            if let Some(n) = &v.normals {
                write_image(out, &format!("{prefix}_normals.pfm"), |w| write_pfm_rgb(n, w))?;
            }
            if let Some(rgb) = &v.rgb {
                write_image(out, &format!("{prefix}_rgb.ppm"), |w| write_ppm(rgb, w))?;
            }
            let local = t.model.anchor.in_camera(&v.view_pose);
            rows.push(ViewRow {
                run_id: t.run_id.clone(),
                object: t.model.name.clone(),
                view: i,
                valid_pixels: v.valid_pixels(),
                anchor_offset_px: (v.camera.project_unchecked(&local) - v.camera.image_center()).norm(),
                file_prefix: prefix,
            });
        }
        Ok(rows)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisRow {
    pub run_id: String,
    pub object: String,
    pub provenance: String,
    pub count: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisLine {
    pub run_id: String,
    pub index: usize,
    pub pose: [f64; 12],
    pub label: Option<Label>,
}

pub struct HypothesesOutput {
    pub rows: Vec<HypothesisRow>,
    pub lines: Vec<HypothesisLine>,
}

/// Labels every pose of `set` against `gt` with the configured thresholds.
pub fn label_set(set: &mut HypothesisSet, gt: &Pose, model: &ObjectModel, cfg: &RunConfig) {
    let th = &cfg.coarse_scorer.thresholds;
    set.labels = Some(set.poses.iter().map(|p| basin_label(p, gt, &model.anchor, th)).collect());
}

fn build_set(cfg: &RunConfig, t: &Target<'_>, kind: HypothesisKind) -> Result<HypothesisSet, RunError> {
    let stream = t.stream.named("hypotheses");
    let mut set = match kind {
        HypothesisKind::Training => training_hypotheses(&t.object.gt, &t.model.anchor, &stream, &cfg.perturbation),
        HypothesisKind::Test => test_hypotheses(
            &t.object.detection,
            &cfg.scene.camera,
            &t.model.mesh,
            &t.model.anchor,
            cfg.coarse_scorer.orientations,
            &stream,
        )
        .map_err(|e| RunError::Runtime(format!("{}: {e}", t.run_id)))?,
    };
    if set.labels.is_none() {
        label_set(&mut set, &t.object.gt, t.model, cfg);
    }
    Ok(set)
}

pub fn hypotheses(ctx: &Context) -> Result<HypothesesOutput, RunError> {
    let cfg = &ctx.cfg;
    let sets = ctx.map_targets(|t| Ok((t.run_id.clone(), t.model.name.clone(), build_set(cfg, t, cfg.hypotheses.kind)?)))?;
    let mut out = HypothesesOutput { rows: Vec::new(), lines: Vec::new() };
    for (id, name, set) in sets {
        out.rows.push(HypothesisRow {
            run_id: id.clone(),
            object: name,
            provenance: serde_json::to_value(set.provenance).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            count: set.len(),
            positives: set.positives(),
        });
        for (i, p) in set.poses.iter().enumerate() {
            out.lines.push(HypothesisLine {
                run_id: id.clone(),
                index: i,
                pose: p.to_row_major(),
                label: set.labels.as_ref().map(|l| l[i]),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub run_id: String,
    pub index: usize,
    pub score: f64,
    pub in_basin: bool,
    pub selected: bool,
}

pub struct CoarseOutput {
    pub records: Vec<ResultRecord>,
    pub scores: Vec<ScoreRow>,
}

/// Scores detection-seeded hypotheses and evaluates the selected pose
/// without refinement.
pub fn coarse(ctx: &Context) -> Result<CoarseOutput, RunError> {
    let cfg = &ctx.cfg;
    let scorer = cfg.coarse.scorer;
    let runs = ctx.map_targets(|t| {
        let set = build_set(cfg, t, HypothesisKind::Test)?;
        let scored = score_hypotheses(&t.scene.observed, t.model, set, scorer, Some(&t.object.gt), &cfg.coarse_scorer)
            .map_err(runtime)?;
        let record = ctx.record(t, scorer.name(), "none", 0.0, Some(&scored.selected_pose()));
        let labels = scored.set.labels.clone().unwrap_or_default();
        let rows: Vec<ScoreRow> = scored
            .scores
            .iter()
            .enumerate()
            .map(|(i, &score)| ScoreRow {
                run_id: t.run_id.clone(),
                index: i,
                score,
                in_basin: labels.get(i) == Some(&Label::Positive),
                selected: i == scored.selected,
            })
            .collect();
        Ok((record, rows))
    })?;
    let (records, scores): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(CoarseOutput { records, scores: scores.into_iter().flatten().collect() })
}

pub struct RefineOutput {
    pub records: Vec<ResultRecord>,
    pub traces: Vec<(String, RefineTrace)>,
}

/// Refines from perturbed ground truth at `refine.magnitude`.
pub fn refine_runs(ctx: &Context) -> Result<RefineOutput, RunError> {
    let cfg = &ctx.cfg;
    let run = &cfg.refine;
    let pert = cfg.perturbation.scaled(run.magnitude);
    let runs = ctx.map_targets(|t| {
        let init = sample_perturbation(&mut t.stream.named("init").rng(), &t.object.gt, &pert);
        let trace = refine(
            &t.scene.observed,
            t.model,
            &init,
            run.predictor,
            Some(&t.object.gt),
            &cfg.refiner,
            &t.stream.named("refine"),
        )
        .ok();
        let record = ctx.record(t, "none", run.predictor.name(), run.magnitude, trace.as_ref().map(|tr| &tr.final_pose));
        Ok((record, trace.map(|tr| (t.run_id.clone(), tr))))
    })?;
    let mut out = RefineOutput { records: Vec::new(), traces: Vec::new() };
    for (r, tr) in runs {
        out.records.push(r);
        out.traces.extend(tr);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub scorer: String,
    pub predictor: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Runs whose coarse stage or initial render failed.
    pub failures: usize,
    pub median_t_err_m: f64,
    pub median_r_err_deg: f64,
    pub median_add_m: f64,
    pub selected_in_basin_rate: f64,
    pub any_in_basin_rate: f64,
    pub by_object: Vec<megarefine_core::metrics::SummaryRow>,
}

pub struct PipelineOutput {
    pub records: Vec<ResultRecord>,
    pub traces: Vec<(String, RefineTrace)>,
    pub summary: PipelineSummary,
}

fn rate(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Detection, coarse scoring, refinement, evaluation.
pub fn pipeline(ctx: &Context) -> Result<PipelineOutput, RunError> {
    use megarefine_core::metrics::{aggregate, GroupKey};
    let cfg = &ctx.cfg;
    let run = &cfg.pipeline;
    let runs = ctx.map_targets(|t| {
        let outcome = coarse_then_refine(
            &t.scene.observed,
            t.model,
            &t.object.detection,
            &cfg.scene.camera,
            run.scorer,
            run.predictor,
            Some(&t.object.gt),
            &cfg.coarse_scorer,
            &cfg.refiner,
            &t.stream,
        )
        .ok();
        let record = ctx.record(t, run.scorer.name(), run.predictor.name(), 0.0, outcome.as_ref().map(|o| &o.final_pose));
        let basin = outcome.as_ref().map(|o| (o.selected_in_basin == Some(true), o.any_in_basin == Some(true)));
        Ok((record, basin, outcome.map(|o| (t.run_id.clone(), o.trace))))
    })?;
    let mut records = Vec::with_capacity(runs.len());
    let mut traces = Vec::new();
    let (mut selected, mut any, mut failures) = (0, 0, 0);
    for (r, basin, trace) in runs {
        records.push(r);
        match basin {
            Some((s, a)) => {
                selected += s as usize;
                any += a as usize;
            }
            None => failures += 1,
        }
        traces.extend(trace);
    }
    let all = aggregate(&records, &[]);
    let n = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let pick = |f: fn(&megarefine_core::metrics::SummaryRow) -> f64| all.first().map_or(f64::NAN, f);
    let summary = PipelineSummary {
        scorer: run.scorer.name().into(),
        predictor: run.predictor.name().into(),
        runs: n,
        successes,
        success_rate: rate(successes, n),
        failures,
        median_t_err_m: pick(|r| r.median_t_err_m),
        median_r_err_deg: pick(|r| r.median_r_err_deg),
        median_add_m: pick(|r| r.median_add_m),
        selected_in_basin_rate: rate(selected, n),
        any_in_basin_rate: rate(any, n),
        by_object: aggregate(&records, &[GroupKey::Object]),
    };
    Ok(PipelineOutput { records, traces, summary })
}

pub struct BasinOutput {
    pub rows: Vec<BasinRow>,
    pub records: Vec<ResultRecord>,
}

/// Convergence rate against initial error magnitude, pooled over every
/// object of every scene.
pub fn basin(ctx: &Context) -> Result<BasinOutput, RunError> {
    let cfg = &ctx.cfg;
    let run = &cfg.basin;
    let setup = BasinSetup { perturbation: cfg.perturbation, thresholds: cfg.coarse_scorer.thresholds };
    let per_target = ctx.map_targets(|t| {
        let trials = basin_trials(
            &t.scene.observed,
            t.model,
            &t.object.gt,
            run.predictor,
            &run.magnitudes,
            run.trials,
            &t.stream.named("basin"),
            &cfg.refiner,
            &setup,
        );
        let mut records = Vec::new();
        for (mi, ts) in trials.iter().enumerate() {
            for (k, trial) in ts.iter().enumerate() {
                let mut r = ctx.record(t, "none", run.predictor.name(), run.magnitudes[mi], trial.final_pose.as_ref());
                r.run_id = format!("{}-m{mi}-t{k}", t.run_id);
                records.push(r);
            }
        }
        Ok((basin_rows(&run.magnitudes, &trials), records))
    })?;
    let mut rows: Vec<BasinRow> = run
        .magnitudes
        .iter()
        .map(|&magnitude| BasinRow { magnitude, trials: 0, converged: 0, rate: 0.0 })
        .collect();
    let mut records = Vec::new();
    for (target_rows, rs) in per_target {
        for (acc, r) in rows.iter_mut().zip(target_rows) {
            acc.trials += r.trials;
            acc.converged += r.converged;
        }
        records.extend(rs);
    }
    for r in &mut rows {
        r.rate = rate(r.converged, r.trials);
    }
    Ok(BasinOutput { rows, records })
}
