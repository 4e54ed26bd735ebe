//! Tuning campaign files.
//!
//! ```toml
//! precision = 0.05        # relative tolerance
//! budget = 100            # pulses per cell
//! seed = 7                # array seed
//! temperature = 298.15    # readout temperature (K)
//! rows = 10
//! data_cols = 10
//! # pick one or more target sources:
//! uniform = 1e-7          # every data cell to one current
//! ramp = [1e-10, 1e-6]    # geometric ramp over data cells in row-major order
//! [[targets]]             # explicit targets; col is the data-column index
//! row = 0
//! col = 3
//! current = 2.5e-9
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::{csv_err, ArrayState, Topology};
use crate::cell::CellModel;
use crate::error::{Error, Result};
use crate::physics::ROOM_TEMPERATURE;
use crate::tuning::{geometric_ramp, tune_array, ArrayTuneReport, TuneTarget, TunerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignTarget {
    pub row: usize,
    pub col: usize,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Campaign {
    pub precision: f64,
    pub budget: usize,
    pub seed: u64,
    pub temperature: f64,
    pub rows: usize,
    pub data_cols: usize,
    pub uniform: Option<f64>,
    pub ramp: Option<[f64; 2]>,
    pub targets: Vec<CampaignTarget>,
}

impl Default for Campaign {
    fn default() -> Self {
        Self {
            precision: 0.05,
            budget: 100,
            seed: 1,
            temperature: ROOM_TEMPERATURE,
            rows: 10,
            data_cols: 10,
            uniform: None,
            ramp: None,
            targets: Vec::new(),
        }
    }
}

impl Campaign {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn build_array(&self, model: CellModel) -> Result<ArrayState> {
        ArrayState::new(
            model,
            self.rows,
            self.data_cols,
            Topology::Modified,
            self.seed,
        )
    }

    /// Resolved targets in physical coordinates. Explicit targets override
    /// `uniform`/`ramp` values for the same cell.
    pub fn resolve(&self, array: &ArrayState) -> Result<Vec<TuneTarget>> {
        let n = array.rows() * array.data_cols();
        let mut currents: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut put = |k: usize, i: f64| {
            currents.insert((k / array.data_cols(), k % array.data_cols()), i);
        };
        if let Some(i) = self.uniform {
            (0..n).for_each(|k| put(k, i));
        }
        if let Some([a, b]) = self.ramp {
            geometric_ramp(a, b, n)
                .into_iter()
                .enumerate()
                .for_each(|(k, i)| put(k, i));
        }
        for t in &self.targets {
            if t.row >= array.rows() || t.col >= array.data_cols() {
                return Err(Error::OutOfBounds {
                    row: t.row,
                    col: t.col,
                    rows: array.rows(),
                    cols: array.data_cols(),
                });
            }
            currents.insert((t.row, t.col), t.current);
        }
        if currents.is_empty() {
            return Err(Error::InvalidArgument("campaign has no targets".into()));
        }
        Ok(currents
            .into_iter()
            .map(|((r, c), i)| TuneTarget::new(r, array.data_col(c), i, self.precision))
            .collect())
    }

    pub fn tuner(&self) -> TunerConfig {
        TunerConfig {
            temperature: self.temperature,
            ..TunerConfig::default()
        }
    }

    pub fn run(&self, array: &mut ArrayState) -> Result<ArrayTuneReport> {
        let targets = self.resolve(array)?;
        tune_array(array, &targets, self.budget, &self.tuner())
    }
}

/// Campaign results as CSV: `row,col,target,final,rel_error,pulses`.
pub fn write_results_csv<W: std::io::Write>(report: &ArrayTuneReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "target", "final", "rel_error", "pulses"])
        .map_err(csv_err)?;
    for r in &report.results {
        w.write_record([
            r.target.row.to_string(),
            r.target.col.to_string(),
            r.target.target_current.to_string(),
            r.final_current.to_string(),
            r.relative_error.to_string(),
            r.pulses.total().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let c = Campaign::from_toml(
            "precision = 0.02\nrows = 2\ndata_cols = 3\nuniform = 1e-8\n[[targets]]\nrow = 1\ncol = 2\ncurrent = 5e-9\n",
        )
        .unwrap();
        let a = c.build_array(CellModel::default()).unwrap();
        let t = c.resolve(&a).unwrap();
        assert_eq!(t.len(), 6);
        let last = t.last().unwrap();
        assert_eq!((last.row, last.col, last.target_current), (1, 3, 5e-9));
        assert!(t.iter().all(|x| x.precision == 0.02));
    }

    #[test]
    fn empty_campaign_rejected() {
        let c = Campaign::default();
        let a = c.build_array(CellModel::default()).unwrap();
        assert!(c.resolve(&a).is_err());
        assert!(Campaign::from_toml("nonsense = 3").is_err());
    }

    #[test]
    fn out_of_bounds_target_rejected() {
        let c = Campaign::from_toml("[[targets]]\nrow = 0\ncol = 10\ncurrent = 1e-8\n").unwrap();
        let a = c.build_array(CellModel::default()).unwrap();
        assert!(matches!(c.resolve(&a), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn results_csv_columns() {
        let c = Campaign::from_toml("rows = 1\ndata_cols = 2\nuniform = 1e-7\n").unwrap();
        let mut a = c.build_array(CellModel::default()).unwrap();
        let rep = c.run(&mut a).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row,col,target,final,rel_error,pulses\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
