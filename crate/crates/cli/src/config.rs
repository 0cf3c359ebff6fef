//! Run configuration: strict JSON with per-experiment blocks, `--key value`
//! overrides, and manifests that pin a run for replay.

use megarefine_core::coarse::CoarseConfig;
use megarefine_core::geometry::PerturbationConfig;
use megarefine_core::metrics::TranslationReference;
use megarefine_core::refiner::{PredictorKind, RefineConfig};
use megarefine_core::render::ViewSetSpec;
use megarefine_core::scene::{MeshSource, SceneSpec};
use megarefine_core::ScorerKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::{Path, PathBuf};

pub const TOOL: &str = "megarefine";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Render,
    Hypotheses,
    Coarse,
    Refine,
    Pipeline,
    Basin,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Render => "render",
            Command::Hypotheses => "hypotheses",
            Command::Coarse => "coarse",
            Command::Refine => "refine",
            Command::Pipeline => "pipeline",
            Command::Basin => "basin",
            Command::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    /// 104 poses around a perturbed ground truth, one positive.
    Training,
    /// Detection-seeded poses, `orientations * 104` of them.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderRun {
    /// Also render the anchor-centered view set of every object.
    pub views: bool,
}

impl Default for RenderRun {
    fn default() -> Self {
        Self { views: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesesRun {
    pub kind: HypothesisKind,
}

impl Default for HypothesesRun {
    fn default() -> Self {
        Self { kind: HypothesisKind::Test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseRun {
    pub scorer: ScorerKind,
}

impl Default for CoarseRun {
    fn default() -> Self {
        Self { scorer: ScorerKind::DepthL2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineRun {
    pub predictor: PredictorKind,
    /// Initial error as a multiple of the perturbation block.
    pub magnitude: f64,
}

impl Default for RefineRun {
    fn default() -> Self {
        Self { predictor: PredictorKind::DepthIcp, magnitude: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineRun {
    pub scorer: ScorerKind,
    pub predictor: PredictorKind,
    pub reference: TranslationReference,
}

impl Default for PipelineRun {
    fn default() -> Self {
        Self {
            scorer: ScorerKind::DepthL2,
            predictor: PredictorKind::DepthIcp,
            reference: TranslationReference::Anchor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasinRun {
    pub predictor: PredictorKind,
    pub magnitudes: Vec<f64>,
    /// Trials per magnitude and object, per scene.
    pub trials: usize,
}

impl Default for BasinRun {
    fn default() -> Self {
        Self {
            predictor: PredictorKind::DepthIcp,
            magnitudes: vec![0.5, 1.0, 2.0, 4.0],
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestRun {
    /// Trials per randomized check.
    pub trials: usize,
}

impl Default for SelftestRun {
    fn default() -> Self {
        Self { trials: 200 }
    }
}

/// Everything an experiment reads. Module blocks (`scene`, `viewset`,
/// `coarse_scorer`, `refiner`, `perturbation`) are shared; the remaining
/// blocks belong to one subcommand each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub scenes: usize,
    pub scene: SceneSpec,
    pub viewset: ViewSetSpec,
    pub coarse_scorer: CoarseConfig,
    pub refiner: RefineConfig,
    pub perturbation: PerturbationConfig,
    pub render: RenderRun,
    pub hypotheses: HypothesesRun,
    pub coarse: CoarseRun,
    pub refine: RefineRun,
    pub pipeline: PipelineRun,
    pub basin: BasinRun,
    pub selftest: SelftestRun,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("megarefine-out"),
            scenes: 10,
            scene: SceneSpec::default(),
            viewset: ViewSetSpec::default(),
            coarse_scorer: CoarseConfig::default(),
            refiner: RefineConfig::default(),
            perturbation: PerturbationConfig::default(),
            render: RenderRun::default(),
            hypotheses: HypothesesRun::default(),
            coarse: CoarseRun::default(),
            refine: RefineRun::default(),
            pipeline: PipelineRun::default(),
            basin: BasinRun::default(),
            selftest: SelftestRun::default(),
        }
    }
}

const MODULE_BLOCKS: [&str; 5] = ["scene", "viewset", "coarse_scorer", "refiner", "perturbation"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scene.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.viewset.validate().map_err(|e| ConfigError(format!("viewset: {e}")))?;
        self.refiner.viewset.validate().map_err(|e| ConfigError(format!("refiner.viewset: {e}")))?;
        if self.coarse_scorer.resolution < 8 {
            return err("coarse_scorer.resolution must be at least 8");
        }
        if !(self.coarse_scorer.margin >= 1.0) {
            return err("coarse_scorer.margin must be >= 1");
        }
        if self.coarse_scorer.orientations == 0 {
            return err("coarse_scorer.orientations must be positive");
        }
        let th = &self.coarse_scorer.thresholds;
        if !(th.translation_m > 0.0 && th.rotation_deg > 0.0) {
            return err("coarse_scorer.thresholds must be positive");
        }
        let p = &self.perturbation;
        if p.translation_std.iter().chain(std::iter::once(&p.rotation_std_deg)).any(|v| !(*v >= 0.0)) {
            return err("perturbation standard deviations must be nonnegative");
        }
        if !(self.refine.magnitude >= 0.0) {
            return err("refine.magnitude must be nonnegative");
        }
        if self.basin.magnitudes.iter().any(|m| !(*m >= 0.0)) {
            return err("basin.magnitudes must be nonnegative");
        }
        if !(self.refiner.early_stop >= 0.0) || !(self.refiner.icp.max_distance > 0.0) {
            return err("refiner.early_stop must be >= 0 and refiner.icp.max_distance > 0");
        }
        Ok(())
    }

    /// Makes mesh file paths absolute so the resolved config (and hence the
    /// manifest) no longer depends on where it was loaded from.
    pub fn resolve_paths(&mut self, base_dir: &Path) {
        for o in &mut self.scene.objects {
            if let MeshSource::File(p) = &mut o.mesh {
                if p.is_relative() {
                    let joined = base_dir.join(&*p);
                    *p = joined.canonicalize().unwrap_or(joined);
                }
            }
        }
    }
}

/// The record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: Command, config: &RunConfig) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command,
            seed: config.seed,
            config: config.clone(),
        }
    }
}

/// Parses an override value: JSON first, then a comma list, then a string.
pub fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|s| parse_value(s.trim())).collect());
    }
    Value::String(raw.to_string())
}

fn lookup<'a>(root: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(root, |v, k| v.as_object()?.get(*k))
}

/// Full path of `key` for `command`. Dotted keys are taken as given; a bare
/// key is looked up in the subcommand's block, then at the top level, then
/// in the module blocks, where it must be unambiguous.
pub fn resolve_key(root: &Value, command: Command, key: &str) -> Result<Vec<String>, ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() > 1 {
        return if lookup(root, &parts).is_some() {
            Ok(parts.iter().map(|s| s.to_string()).collect())
        } else {
            err(format!("unknown config key `{key}`"))
        };
    }
    let own = [command.name(), key];
    if lookup(root, &own).is_some() {
        return Ok(own.iter().map(|s| s.to_string()).collect());
    }
    if lookup(root, &[key]).is_some() {
        return Ok(vec![key.to_string()]);
    }
    let hits: Vec<&str> = MODULE_BLOCKS.iter().copied().filter(|b| lookup(root, &[b, key]).is_some()).collect();
    match hits.as_slice() {
        [b] => Ok(vec![b.to_string(), key.to_string()]),
        [] => err(format!("unknown config key `{key}`")),
        _ => err(format!(
            "config key `{key}` is ambiguous; use one of {}",
            hits.iter().map(|b| format!("`{b}.{key}`")).collect::<Vec<_>>().join(", ")
        )),
    }
}

pub fn apply_override(root: &mut Value, command: Command, key: &str, raw: &str) -> Result<(), ConfigError> {
    let path = resolve_key(root, command, key)?;
    let mut slot = root;
    for k in &path {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(k))
            .ok_or_else(|| ConfigError(format!("unknown config key `{key}`")))?;
    }
    let value = parse_value(raw);
    // A lone value for a list key is a one-element list.
    *slot = match value {
        Value::Array(_) => value,
        v if slot.is_array() => Value::Array(vec![v]),
        v => v,
    };
    Ok(())
}

/// Options that steer the process rather than the experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Invocation {
    pub config_path: Option<PathBuf>,
    pub threads: Option<usize>,
    /// `(key, value)` pairs in command-line order.
    pub overrides: Vec<(String, String)>,
}

/// Splits `--key value` / `--key=value` arguments into runtime options and
/// config overrides.
pub fn parse_invocation(args: &[String]) -> Result<Invocation, ConfigError> {
    let mut inv = Invocation::default();
    let mut i = 0;
    while i < args.len() {
        let Some(flag) = args[i].strip_prefix("--") else {
            return err(format!("expected `--key value`, found `{}`", args[i]));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = args.get(i + 1).ok_or_else(|| ConfigError(format!("missing value for `--{flag}`")))?;
                i += 1;
                (flag.to_string(), v.clone())
            }
        };
        i += 1;
        match key.as_str() {
            "config" => inv.config_path = Some(PathBuf::from(value)),
            "threads" => {
                let n: usize = value.parse().map_err(|_| ConfigError(format!("bad thread count `{value}`")))?;
                if n == 0 {
                    return err("--threads must be positive");
                }
                inv.threads = Some(n);
            }
            _ => inv.overrides.push((key, value)),
        }
    }
    Ok(inv)
}

fn strict<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T, ConfigError> {
    serde_json::from_value(v).map_err(|e| ConfigError(format!("{what}: {e}")))
}

/// Loads the base config (defaults, a config file, or a manifest) and
/// applies overrides. A manifest must have been written by `command`.
pub fn load_config(command: Command, inv: &Invocation) -> Result<RunConfig, ConfigError> {
    let (mut cfg, base_dir) = match &inv.config_path {
        None => (RunConfig::default(), PathBuf::from(".")),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let cfg = if value.get("tool").is_some() {
                let m: Manifest = strict(value, "manifest")?;
                if m.command != command {
                    return err(format!("manifest was written by `{}`, not `{command}`", m.command));
                }
                m.config
            } else {
                strict(value, "config")?
            };
            (cfg, base)
        }
    };
    if !inv.overrides.is_empty() {
        let mut value = serde_json::to_value(&cfg).map_err(|e| ConfigError(e.to_string()))?;
        for (k, v) in &inv.overrides {
            apply_override(&mut value, command, k, v)?;
        }
        cfg = strict(value, "overrides")?;
    }
    cfg.resolve_paths(&base_dir);
    cfg.validate()?;
    Ok(cfg)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn with(command: Command, args: Vec<String>) -> Result<RunConfig, ConfigError> {
        load_config(command, &parse_invocation(&args)?)
    }

    proptest! {
        #[test]
        fn overrides_land_where_they_resolve(
            seed in any::<u32>(),
            scenes in 1usize..500,
            trials in 1usize..100,
            magnitudes in prop::collection::vec(0.1f64..8.0, 1..5),
        ) {
            let list = magnitudes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",");
            let args = vec![
                "--seed".into(), seed.to_string(),
                "--scenes".into(), scenes.to_string(),
                "--trials".into(), trials.to_string(),
                "--magnitudes".into(), list,
            ];
            let c = with(Command::Basin, args.clone()).unwrap();
            prop_assert_eq!((c.seed, c.scenes, c.basin.trials), (seed as u64, scenes, trials));
            prop_assert_eq!(&c.basin.magnitudes, &magnitudes);
            // The dotted form of every key is equivalent.
            let dotted: Vec<String> = args
                .iter()
                .map(|a| match a.as_str() {
                    "--trials" => "--basin.trials".into(),
                    "--magnitudes" => "--basin.magnitudes".into(),
                    _ => a.clone(),
                })
                .collect();
            let d = with(Command::Basin, dotted).unwrap();
            prop_assert_eq!(serde_json::to_value(&c).unwrap(), serde_json::to_value(&d).unwrap());
        }
    }
}
