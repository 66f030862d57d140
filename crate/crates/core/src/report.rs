//! CSV report rows and writers. Schemas are part of the tool's interface:
//! column names and order are fixed, and in deterministic mode wall-clock
//! fields are written as 0 so reruns with the same seed are byte-identical.

use std::path::Path;

use serde::Serialize;

use crate::benchmark::BenchRecord;
use crate::error::Result;
use crate::estimator::{GapDraw, MomentReport};
use crate::store::SharingMode;
use crate::trainer::SweepRow;

#[derive(Clone, Debug, Serialize)]
pub struct BenchCsvRow {
    pub kernel: String,
    pub dim: usize,
    pub store_bytes: usize,
    #[serde(rename = "tile_Z0")]
    pub tile_z0: usize,
    #[serde(rename = "tile_Z1")]
    pub tile_z1: usize,
    #[serde(rename = "tile_Z2")]
    pub tile_z2: usize,
    pub median_ms: f64,
    pub runs: usize,
}

impl From<&BenchRecord> for BenchCsvRow {
    fn from(r: &BenchRecord) -> Self {
        Self {
            kernel: r.kernel.name().to_string(),
            dim: r.dim,
            store_bytes: r.store_bytes,
            tile_z0: r.tile_z0,
            tile_z1: r.tile_z1,
            tile_z2: r.tile_z2,
            median_ms: r.median_ms,
            runs: r.runs,
        }
    }
}

/// Shared schema for estimator studies: moment rows fill the sample columns,
/// gap rows leave them empty.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorCsvRow {
    pub layout_id: usize,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub profile: String,
    #[serde(rename = "V_G_analytic")]
    pub v_g_analytic: f64,
    #[serde(rename = "V_L_analytic")]
    pub v_l_analytic: f64,
    #[serde(rename = "sample_V_G")]
    pub sample_v_g: Option<f64>,
    #[serde(rename = "sample_V_L")]
    pub sample_v_l: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl EstimatorCsvRow {
    /// Row for a Monte Carlo moment comparison on one fixture.
    pub fn from_moments(
        layout_id: usize,
        k: usize,
        m: usize,
        n: usize,
        gms: &MomentReport,
        lms: &MomentReport,
        seed: u64,
    ) -> Self {
        Self {
            layout_id,
            k,
            m,
            n,
            profile: "moments".into(),
            v_g_analytic: gms.analytic_variance,
            v_l_analytic: lms.analytic_variance,
            sample_v_g: Some(gms.estimator_variance),
            sample_v_l: Some(lms.estimator_variance),
            trials: gms.trials,
            seed,
        }
    }

    /// Row for one analytic gap-study draw.
    pub fn from_gap_draw(draw: &GapDraw, k: usize, m: usize, n: usize, seed: u64) -> Self {
        Self {
            layout_id: draw.layout_id,
            k,
            m,
            n,
            profile: "equal_norm_gap".into(),
            v_g_analytic: draw.v_g,
            v_l_analytic: draw.v_l,
            sample_v_g: None,
            sample_v_l: None,
            trials: 0,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainCsvRow {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub wall_ms: f64,
    pub ratio: f64,
    pub sharing: String,
    pub optimizer: String,
    pub seed: u64,
}

pub fn sharing_name(mode: SharingMode) -> &'static str {
    match mode {
        SharingMode::Global => "global",
        SharingMode::Local => "local",
    }
}

/// Per-epoch train/test rows for one sweep cell. In deterministic mode the
/// wall-clock column is zeroed.
pub fn train_rows(row: &SweepRow, optimizer: &str, deterministic: bool) -> Vec<TrainCsvRow> {
    let mut out = Vec::new();
    for rec in &row.report.epochs {
        let wall = if deterministic { 0.0 } else { rec.wall_ms };
        out.push(TrainCsvRow {
            epoch: rec.epoch,
            split: "train".into(),
            loss: Some(rec.train_loss),
            accuracy: None,
            wall_ms: wall,
            ratio: row.achieved_ratio,
            sharing: sharing_name(row.sharing).into(),
            optimizer: optimizer.into(),
            seed: row.seed,
        });
        out.push(TrainCsvRow {
            epoch: rec.epoch,
            split: "test".into(),
            loss: None,
            accuracy: Some(rec.test_accuracy),
            wall_ms: wall,
            ratio: row.achieved_ratio,
            sharing: sharing_name(row.sharing).into(),
            optimizer: optimizer.into(),
            seed: row.seed,
        });
    }
    out
}

/// Serializes rows to CSV text (header + records).
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| crate::error::Error::Format(format!("csv serialization: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| crate::error::Error::Format(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| crate::error::Error::Format(format!("csv utf8: {e}")))
}

pub fn write_csv<T: Serialize, P: AsRef<Path>>(path: P, rows: &[T]) -> Result<()> {
    std::fs::write(path, csv_string(rows)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_csv_has_exact_header() {
        let rows = vec![BenchCsvRow {
            kernel: "roast".into(),
            dim: 512,
            store_bytes: 1024,
            tile_z0: 16,
            tile_z1: 16,
            tile_z2: 64,
            median_ms: 1.5,
            runs: 9,
        }];
        let text = csv_string(&rows).unwrap();
        assert!(text.starts_with("kernel,dim,store_bytes,tile_Z0,tile_Z1,tile_Z2,median_ms,runs\n"));
    }

    #[test]
    fn estimator_csv_empty_samples_serialize_blank() {
        let rows = vec![EstimatorCsvRow {
            layout_id: 0,
            k: 8,
            m: 64,
            n: 256,
            profile: "equal_norm_gap".into(),
            v_g_analytic: 1.0,
            v_l_analytic: 2.0,
            sample_v_g: None,
            sample_v_l: None,
            trials: 0,
            seed: 7,
        }];
        let text = csv_string(&rows).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "layout_id,k,m,n,profile,V_G_analytic,V_L_analytic,sample_V_G,sample_V_L,trials,seed"
        );
        assert!(text.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn train_csv_header_order() {
        let rows = vec![TrainCsvRow {
            epoch: 0,
            split: "train".into(),
            loss: Some(0.5),
            accuracy: None,
            wall_ms: 0.0,
            ratio: 10.0,
            sharing: "global".into(),
            optimizer: "adam".into(),
            seed: 1,
        }];
        let text = csv_string(&rows).unwrap();
        assert!(
            text.starts_with("epoch,split,loss,accuracy,wall_ms,ratio,sharing,optimizer,seed\n")
        );
    }
}
