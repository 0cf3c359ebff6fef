//! Pose-error metrics, per-run result records and grouped summaries.

use crate::geometry::{rotation_geodesic_angle, Pose, Vec3};
use crate::loss::pose_distance;
use crate::mesh::ObjectModel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

pub const SUCCESS_TRANSLATION_M: f64 = 0.05;
pub const SUCCESS_ROTATION_DEG: f64 = 15.0;

/// Point at which translation error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationReference {
    #[default]
    Anchor,
    /// Mean of the object's surface point sample.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub translation_error: f64,
    pub rotation_error: f64,
    pub add: f64,
    pub success: bool,
}

pub fn is_success(translation_error: f64, rotation_error_deg: f64) -> bool {
    translation_error <= SUCCESS_TRANSLATION_M && rotation_error_deg <= SUCCESS_ROTATION_DEG
}

pub fn evaluate(pred: &Pose, gt: &Pose, object: &ObjectModel, reference: TranslationReference) -> PoseError {
    let point = match reference {
        TranslationReference::Anchor => object.anchor.position,
        TranslationReference::Centroid => {
            object.points.iter().sum::<Vec3>() / object.points.len().max(1) as f64
        }
    };
    let translation_error = (pred.transform_point(&point) - gt.transform_point(&point)).norm();
    let rotation_error = rotation_geodesic_angle(&pred.rotation, &gt.rotation).to_degrees();
    let add = pose_distance(&object.points, pred, gt).unwrap_or(f64::NAN);
    PoseError {
        translation_error,
        rotation_error,
        add,
        success: is_success(translation_error, rotation_error),
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub object: String,
    pub scorer: String,
    pub predictor: String,
    pub magnitude: f64,
    pub t_err_m: f64,
    pub r_err_deg: f64,
    pub add_m: f64,
    pub success: bool,
}

impl ResultRecord {
    pub fn new(
        run_id: impl Into<String>,
        object: impl Into<String>,
        scorer: impl Into<String>,
        predictor: impl Into<String>,
        magnitude: f64,
        e: &PoseError,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            object: object.into(),
            scorer: scorer.into(),
            predictor: predictor.into(),
            magnitude,
            t_err_m: e.translation_error,
            r_err_deg: e.rotation_error,
            add_m: e.add,
            success: e.success,
        }
    }
}

pub fn write_results_csv<W: Write>(records: &[ResultRecord], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wr.write_record(["run_id", "object", "scorer", "predictor", "magnitude", "t_err_m", "r_err_deg", "add_m", "success"])?;
    }
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_results_jsonl<W: Write>(records: &[ResultRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Object,
    Scorer,
    Predictor,
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub count: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_t_err_m: f64,
    pub median_r_err_deg: f64,
    pub median_add_m: f64,
}

fn group_label(r: &ResultRecord, keys: &[GroupKey]) -> String {
    if keys.is_empty() {
        return "all".to_string();
    }
    keys.iter()
        .map(|k| match k {
            GroupKey::Object => r.object.clone(),
            GroupKey::Scorer => r.scorer.clone(),
            GroupKey::Predictor => r.predictor.clone(),
            GroupKey::Magnitude => r.magnitude.to_string(),
        })
        .collect::<Vec<_>>()
        .join("/")
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Success rate and median errors per group, sorted by group label.
pub fn aggregate(records: &[ResultRecord], keys: &[GroupKey]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<String, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(group_label(r, keys)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(group, rs)| {
            let successes = rs.iter().filter(|r| r.success).count();
            let col = |f: fn(&ResultRecord) -> f64| median(&mut rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                count: rs.len(),
                successes,
                success_rate: successes as f64 / rs.len() as f64,
                median_t_err_m: col(|r| r.t_err_m),
                median_r_err_deg: col(|r| r.r_err_deg),
                median_add_m: col(|r| r.add_m),
                group,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
