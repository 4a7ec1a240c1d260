//! Insertion-loss comparison between a rectangular MZI mesh and a coupled
//! waveguide array of the same mode count.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_MZI_LOSS_DB: f64 = 0.2;
pub const DEFAULT_WA_LOSS_DB_PER_CM: f64 = 0.1;

pub const BENDING_NOTE: &str =
    "waveguide array needs about half the bending sections of the MZI mesh; bend loss is not quantified";

/// Component count and loss of an `n`-mode rectangular MZI mesh: `n(n−1)/2`
/// interferometers, depth `n`, and `n · per_mzi_db` along the deepest path.
pub fn clements_loss(n_modes: usize, per_mzi_db: f64) -> Result<(usize, usize, f64)> {
    if n_modes < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MZI mesh needs at least 2 modes, got {n_modes}"
        )));
    }
    check_rate(per_mzi_db, "per-MZI loss")?;
    Ok((n_modes * (n_modes - 1) / 2, n_modes, n_modes as f64 * per_mzi_db))
}

pub fn wa_loss(length_cm: f64, db_per_cm: f64) -> Result<f64> {
    if !(length_cm >= 0.0 && length_cm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "array length must be non-negative, got {length_cm} cm"
        )));
    }
    check_rate(db_per_cm, "propagation loss")?;
    Ok(length_cm * db_per_cm)
}

fn check_rate(value: f64, what: &str) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} must be non-negative, got {value}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub n_modes: usize,
    pub mzi_count: usize,
    pub mzi_depth: usize,
    pub per_mzi_db: f64,
    pub clements_loss_db: f64,
    pub wa_length_cm: f64,
    pub db_per_cm: f64,
    pub wa_loss_db: f64,
    pub note: String,
}

impl LossReport {
    pub fn new(n_modes: usize, per_mzi_db: f64, wa_length_cm: f64, db_per_cm: f64) -> Result<Self> {
        let (mzi_count, mzi_depth, clements_loss_db) = clements_loss(n_modes, per_mzi_db)?;
        Ok(Self {
            n_modes,
            mzi_count,
            mzi_depth,
            per_mzi_db,
            clements_loss_db,
            wa_length_cm,
            db_per_cm,
            wa_loss_db: wa_loss(wa_length_cm, db_per_cm)?,
            note: BENDING_NOTE.to_string(),
        })
    }

    fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_modes", self.n_modes.to_string()),
            ("mzi_count", self.mzi_count.to_string()),
            ("mzi_depth", self.mzi_depth.to_string()),
            ("per_mzi_db", self.per_mzi_db.to_string()),
            ("clements_loss_db", self.clements_loss_db.to_string()),
            ("wa_length_cm", self.wa_length_cm.to_string()),
            ("db_per_cm", self.db_per_cm.to_string()),
            ("wa_loss_db", self.wa_loss_db.to_string()),
        ]
    }

    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v:>10}\n"));
        }
        out.push_str(&format!("note: {}\n", self.note));
        out
    }

    pub fn to_csv(&self) -> String {
        let rows = self.rows();
        let header: Vec<&str> = rows.iter().map(|(k, _)| *k).chain(["note"]).collect();
        let values: Vec<String> = rows
            .into_iter()
            .map(|(_, v)| v)
            .chain([format!("\"{}\"", self.note)])
            .collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_modes() {
        let (count, depth, db) = clements_loss(11, DEFAULT_MZI_LOSS_DB).unwrap();
        assert_eq!((count, depth), (55, 11));
        assert!((db - 2.2).abs() < 1e-12);
    }

    #[test]
    fn two_modes_and_lossless() {
        let (count, _, db) = clements_loss(2, 0.2).unwrap();
        assert_eq!(count, 1);
        assert!((db - 0.4).abs() < 1e-15);
        assert_eq!(clements_loss(5, 0.0).unwrap().2, 0.0);
        assert!(clements_loss(1, 0.2).is_err());
    }

    #[test]
    fn array_loss() {
        assert!((wa_loss(2.4, DEFAULT_WA_LOSS_DB_PER_CM).unwrap() - 0.24).abs() < 1e-15);
        assert_eq!(wa_loss(0.0, 0.1).unwrap(), 0.0);
        assert!((wa_loss(20.0, 0.1).unwrap() - 2.0).abs() < 1e-15);
        assert!(wa_loss(-1.0, 0.1).is_err());
    }

    #[test]
    fn report_formats() {
        let r = LossReport::new(11, 0.2, 2.4, 0.1).unwrap();
        assert!(r.to_table().contains("clements_loss_db"));
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 9);
        assert!(lines.next().unwrap().starts_with("11,55,11,0.2,"));
    }
}
