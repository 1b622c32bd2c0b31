//! Delimited-text and JSON artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{SensorReading, Trajectory};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a sensor or evaluation file with header
/// `s_over_d,mole_frac_pct,mass_frac,rho_cl`. Blank space around fields is
/// ignored.
pub fn read_readings(path: &Path) -> Result<Vec<SensorReading>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file);
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<SensorReading>, _>>()
        .map_err(csv_err(path))?;
    for (i, r) in rows.iter().enumerate() {
        let values = [r.s_over_d, r.mole_frac_pct, r.mass_frac, r.rho_cl];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse { path: path.to_path_buf(), line: i + 2, msg: "non-finite value".into() });
        }
    }
    Ok(rows)
}

pub fn write_readings(path: &Path, rows: &[SensorReading]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TrajectoryRow {
    s: f64,
    s_over_d: f64,
    u_cl: f64,
    b: f64,
    rho_cl: f64,
    #[serde(rename = "Y_cl")]
    y_cl: f64,
    #[serde(rename = "X_cl")]
    x_cl: f64,
    theta: f64,
    x: f64,
    z: f64,
}

/// One row per integration step.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let rows: Vec<TrajectoryRow> = traj
        .states
        .iter()
        .zip(traj.mass_fraction.iter().zip(&traj.mole_fraction))
        .map(|(st, (&y, &x))| TrajectoryRow {
            s: st.s,
            s_over_d: st.s / traj.diameter,
            u_cl: st.u_cl,
            b: st.b,
            rho_cl: st.rho_cl,
            y_cl: y,
            x_cl: x,
            theta: st.theta,
            x: st.x,
            z: st.z,
        })
        .collect();
    write_rows(path, &rows)
}

/// Prediction and oracle reference at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub s_over_d: f64,
    #[serde(rename = "Y_pred")]
    pub y_pred: f64,
    #[serde(rename = "Y_oracle")]
    pub y_oracle: f64,
    #[serde(rename = "X_pred_pct")]
    pub x_pred_pct: f64,
    pub u_pred: f64,
    pub u_oracle: f64,
    pub b_pred: f64,
    pub rho_pred: f64,
    pub theta_pred: f64,
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file).deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
