//! CSV writers for every report the harness produces.

use std::path::Path;

use serde::Serialize;

use crate::analysis::{CorrelationRecord, CorrelationSurvey, HistogramBin, KKTReport};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Argument(format!("csv: {other:?}")),
    }
}

/// Serialise rows with a header line; `None` fields become empty cells.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct KktRow<'a> {
    label: &'a str,
    residual_z: f64,
    residual_y: f64,
    samples: usize,
}

/// One row per labelled report, e.g. "init" and "trained".
pub fn write_kkt(path: &Path, reports: &[(&str, &KKTReport)]) -> Result<()> {
    let rows: Vec<KktRow> = reports
        .iter()
        .map(|(label, r)| KktRow { label, residual_z: r.residual_z, residual_y: r.residual_y, samples: r.samples })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize)]
struct CorrRow<'a> {
    image_id: &'a str,
    lambda: f64,
    corr_side: Option<f64>,
    corr_main: Option<f64>,
    gain_db: f64,
    flagged: bool,
}

#[derive(Serialize)]
struct ScatterRow {
    corr_main: f64,
    gain_db: f64,
}

/// `corr_records.csv`, `histogram.csv` and `scatter.csv` in `dir`.
pub fn write_survey(dir: &Path, survey: &CorrelationSurvey) -> Result<()> {
    let rows: Vec<CorrRow> = survey
        .records
        .iter()
        .map(|r: &CorrelationRecord| CorrRow {
            image_id: &r.image_id,
            lambda: r.lambda,
            corr_side: r.corr_side,
            corr_main: r.corr_main,
            gain_db: r.gain_db,
            flagged: r.flagged(),
        })
        .collect();
    write_csv(&dir.join("corr_records.csv"), &rows)?;
    let bins: Vec<&HistogramBin> = survey.histogram.iter().collect();
    #[derive(Serialize)]
    struct BinRow {
        lo: f64,
        hi: f64,
        count: usize,
    }
    let bins: Vec<BinRow> = bins.iter().map(|b| BinRow { lo: b.lo, hi: b.hi, count: b.count }).collect();
    write_csv(&dir.join("histogram.csv"), &bins)?;
    let scatter: Vec<ScatterRow> = survey
        .scatter
        .iter()
        .map(|&(c, g)| ScatterRow { corr_main: c, gain_db: g })
        .collect();
    write_csv(&dir.join("scatter.csv"), &scatter)
}
