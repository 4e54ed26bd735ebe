//! The cell array: line topology, selective bias schemes, pulse application
//! with half-select disturb accounting, and readout.
//!
//! Physical layout is `rows x (data_cols + 2)`. Columns `0` and `cols - 1`
//! hold peripheral (input) cells; only half of each supercell can serve as a
//! peripheral, so even rows use column 0 and odd rows use the last column.
//! All cells in a row share one slope factor, so gate-coupled weights are
//! pure threshold differences.

use std::fmt::Write as _;
use std::io::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{BiasCondition, CellModel, CellState, PulseKind, PulseSpec};
use crate::error::{Error, Result};

/// Row/column routing of the five cell terminals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    /// Erase gates run along columns; individual erase is possible.
    Modified,
    /// Erase gates run along rows, as in the stock memory array.
    Original,
}

impl Topology {
    fn name(self) -> &'static str {
        match self {
            Topology::Modified => "modified",
            Topology::Original => "original",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "modified" => Ok(Topology::Modified),
            "original" => Ok(Topology::Original),
            other => Err(Error::Parse(format!("unknown topology {other:?}"))),
        }
    }
}

/// Addressing role of a cell relative to the pulse target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellRole {
    Selected,
    RowHalfSelected,
    ColumnHalfSelected,
    Unselected,
}

impl CellRole {
    pub const ALL: [CellRole; 4] = [
        CellRole::Selected,
        CellRole::RowHalfSelected,
        CellRole::ColumnHalfSelected,
        CellRole::Unselected,
    ];

    fn of(row: usize, col: usize, target: (usize, usize)) -> Self {
        match (row == target.0, col == target.1) {
            (true, true) => CellRole::Selected,
            (true, false) => CellRole::RowHalfSelected,
            (false, true) => CellRole::ColumnHalfSelected,
            (false, false) => CellRole::Unselected,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Per-cell bias map for one pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasScheme {
    pub rows: usize,
    pub cols: usize,
    pub target: (usize, usize),
    entries: Vec<(CellRole, BiasCondition)>,
}

/// Voltages of the row lines (SL, CG, WL and, in the original topology, EG).
#[derive(Debug, Clone, Copy)]
struct RowLines {
    sl: f64,
    cg: f64,
    wl: f64,
    eg: f64,
}

/// Voltages of the column lines (BL and, in the modified topology, EG).
#[derive(Debug, Clone, Copy)]
struct ColLines {
    bl: f64,
    eg: f64,
}

/// Source-line level of unselected rows during programming.
pub const PROGRAM_SL_UNSELECTED: f64 = 0.5;
/// Bit-line level of the selected column during programming.
pub const PROGRAM_BL_SELECTED: f64 = 0.5;
/// Bit-line level of unselected columns during programming.
pub const PROGRAM_BL_UNSELECTED: f64 = 2.5;
/// Erase-gate minus bit-line voltage that selects a column for programming.
pub const PROGRAM_EG_OVER_BL: f64 = 4.0;
/// Coupling-gate level that inhibits erasure in unselected rows.
pub const ERASE_CG_INHIBIT: f64 = 8.0;

fn check_bounds(rows: usize, cols: usize, row: usize, col: usize) -> Result<()> {
    if row >= rows || col >= cols {
        return Err(Error::OutOfBounds {
            row,
            col,
            rows,
            cols,
        });
    }
    Ok(())
}

impl BiasScheme {
    fn from_lines(
        rows: usize,
        cols: usize,
        target: (usize, usize),
        topology: Topology,
        row_lines: impl Fn(usize) -> RowLines,
        col_lines: impl Fn(usize) -> ColLines,
    ) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let rl = row_lines(r);
            for c in 0..cols {
                let cl = col_lines(c);
                let v_eg = match topology {
                    Topology::Modified => cl.eg,
                    Topology::Original => rl.eg,
                };
                let bias = BiasCondition {
                    v_wl: rl.wl,
                    v_cg: rl.cg,
                    v_d: cl.bl,
                    v_s: rl.sl,
                    v_eg,
                };
                entries.push((CellRole::of(r, c, target), bias));
            }
        }
        Self {
            rows,
            cols,
            target,
            entries,
        }
    }

    /// Programming: the target row's source line carries the pulse, the
    /// target column is opened by a positive erase-gate-to-bit-line voltage,
    /// and every other bit line is raised to inhibit injection.
    pub fn program(
        rows: usize,
        cols: usize,
        topology: Topology,
        row: usize,
        col: usize,
        amplitude: f64,
    ) -> Result<Self> {
        check_bounds(rows, cols, row, col)?;
        let eg_sel = PROGRAM_BL_SELECTED + PROGRAM_EG_OVER_BL;
        Ok(Self::from_lines(
            rows,
            cols,
            (row, col),
            topology,
            |r| RowLines {
                sl: if r == row {
                    amplitude
                } else {
                    PROGRAM_SL_UNSELECTED
                },
                cg: 2.5,
                wl: 2.5,
                eg: if r == row { eg_sel } else { 0.0 },
            },
            |c| ColLines {
                bl: if c == col {
                    PROGRAM_BL_SELECTED
                } else {
                    PROGRAM_BL_UNSELECTED
                },
                eg: if c == col { eg_sel } else { 0.0 },
            },
        ))
    }

    /// Erasure: the pulse goes onto the erase-gate line of the target and
    /// rows are selected by grounding their coupling gate, with unselected
    /// rows held at the inhibit level.
    pub fn erase(
        rows: usize,
        cols: usize,
        topology: Topology,
        row: usize,
        col: usize,
        amplitude: f64,
    ) -> Result<Self> {
        check_bounds(rows, cols, row, col)?;
        Ok(Self::from_lines(
            rows,
            cols,
            (row, col),
            topology,
            |r| RowLines {
                sl: 0.0,
                cg: if r == row { 0.0 } else { ERASE_CG_INHIBIT },
                wl: 0.0,
                eg: if r == row { amplitude } else { 0.0 },
            },
            |c| ColLines {
                bl: 0.0,
                eg: if c == col { amplitude } else { 0.0 },
            },
        ))
    }

    pub fn get(&self, row: usize, col: usize) -> Option<(CellRole, BiasCondition)> {
        (row < self.rows && col < self.cols).then(|| self.entries[row * self.cols + col])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, CellRole, BiasCondition)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, &(role, bias))| (i / self.cols, i % self.cols, role, bias))
    }

    /// Number of cells in each role, indexed as [`CellRole::ALL`].
    pub fn role_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for (role, _) in &self.entries {
            counts[role.index()] += 1;
        }
        counts
    }
}

/// Cumulative half-select disturb per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbLog {
    pub rows: usize,
    pub cols: usize,
    cumulative_dvth: Vec<f64>,
    counts: Vec<[u64; 4]>,
}

impl DisturbLog {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cumulative_dvth: vec![0.0; rows * cols],
            counts: vec![[0; 4]; rows * cols],
        }
    }

    fn record(&mut self, row: usize, col: usize, role: CellRole, dvth: f64) {
        let i = row * self.cols + col;
        if role != CellRole::Selected {
            self.cumulative_dvth[i] += dvth.abs();
        }
        self.counts[i][role.index()] += 1;
    }

    pub fn merge(&mut self, other: &DisturbLog) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "disturb log shape mismatch"
        );
        for (a, b) in self.cumulative_dvth.iter_mut().zip(&other.cumulative_dvth) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
    }

    /// Cumulative |Δv_th| from pulses aimed at other cells (V).
    pub fn cumulative_dvth(&self, row: usize, col: usize) -> f64 {
        self.cumulative_dvth[row * self.cols + col]
    }

    pub fn count(&self, row: usize, col: usize, role: CellRole) -> u64 {
        self.counts[row * self.cols + col][role.index()]
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "row",
            "col",
            "cumulative_dvth",
            "selected",
            "row_half_selected",
            "column_half_selected",
            "unselected",
        ])
        .map_err(csv_err)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = r * self.cols + c;
                let k = self.counts[i];
                w.write_record([
                    r.to_string(),
                    c.to_string(),
                    self.cumulative_dvth[i].to_string(),
                    k[0].to_string(),
                    k[1].to_string(),
                    k[2].to_string(),
                    k[3].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// The array: a grid of cells, their stochastic streams and the disturb log.
#[derive(Debug, Clone)]
pub struct ArrayState {
    model: CellModel,
    rows: usize,
    cols: usize,
    topology: Topology,
    cells: Vec<CellState>,
    streams: Vec<ChaCha8Rng>,
    disturb: DisturbLog,
}

pub const STATE_FILE_MAGIC: &str = "flashvmm-array";
pub const STATE_FILE_VERSION: u32 = 1;

impl ArrayState {
    /// A `rows x (data_cols + 2)` array with every cell fully erased.
    pub fn new(
        model: CellModel,
        rows: usize,
        data_cols: usize,
        topology: Topology,
        seed: u64,
    ) -> Result<Self> {
        if rows == 0 || data_cols == 0 {
            return Err(Error::InvalidArgument(
                "array needs at least one row and one data column".into(),
            ));
        }
        let cols = data_cols + 2;
        let d = &model.config().device;
        let (n_min, n_max) = (d.n_slope_min, d.n_slope_max);
        let v_th = model.window().v_th_min;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let n = if n_max > n_min {
                master.random_range(n_min..=n_max)
            } else {
                n_min
            };
            for _ in 0..cols {
                cells.push(model.cell(v_th, n, master.random()));
            }
        }
        Ok(Self::from_cells(model, rows, cols, topology, cells))
    }

    /// Default 10 x (10 + 2) array.
    pub fn standard(model: CellModel, seed: u64) -> Result<Self> {
        Self::new(model, 10, 10, Topology::Modified, seed)
    }

    fn from_cells(
        model: CellModel,
        rows: usize,
        cols: usize,
        topology: Topology,
        cells: Vec<CellState>,
    ) -> Self {
        let streams = cells.iter().map(CellState::stream).collect();
        Self {
            model,
            rows,
            cols,
            topology,
            cells,
            streams,
            disturb: DisturbLog::new(rows, cols),
        }
    }

    pub fn model(&self) -> &CellModel {
        &self.model
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Physical column count including the two peripheral columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data_cols(&self) -> usize {
        self.cols - 2
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn peripheral_cols(&self) -> [usize; 2] {
        [0, self.cols - 1]
    }

    /// Column of the peripheral cell that drives `row`.
    pub fn peripheral_col(&self, row: usize) -> usize {
        if row.is_multiple_of(2) {
            0
        } else {
            self.cols - 1
        }
    }

    /// Physical column of data column `data_col`.
    pub fn data_col(&self, data_col: usize) -> usize {
        data_col + 1
    }

    fn index(&self, row: usize, col: usize) -> Result<usize> {
        check_bounds(self.rows, self.cols, row, col)?;
        Ok(row * self.cols + col)
    }

    pub fn cell(&self, row: usize, col: usize) -> Result<&CellState> {
        Ok(&self.cells[self.index(row, col)?])
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn peripheral(&self, row: usize) -> Result<&CellState> {
        self.cell(row, self.peripheral_col(row))
    }

    /// Overwrites a cell's threshold (clamped), bypassing the pulse protocol.
    pub fn set_v_th(&mut self, row: usize, col: usize, v_th: f64) -> Result<()> {
        let i = self.index(row, col)?;
        self.cells[i].v_th = self.model.window().clamp(v_th);
        Ok(())
    }

    pub fn disturb_log(&self) -> &DisturbLog {
        &self.disturb
    }

    pub fn build_program_scheme(&self, row: usize, col: usize) -> Result<BiasScheme> {
        BiasScheme::program(
            self.rows,
            self.cols,
            self.topology,
            row,
            col,
            self.model.config().pulse.program_amplitude,
        )
    }

    pub fn build_erase_scheme(&self, row: usize, col: usize) -> Result<BiasScheme> {
        BiasScheme::erase(
            self.rows,
            self.cols,
            self.topology,
            row,
            col,
            self.model.config().pulse.erase_amplitude,
        )
    }

    /// Applies `pulse` aimed at (row, col) to every cell under its own bias.
    /// Returns the disturb caused by this pulse alone; the array's cumulative
    /// log is updated too.
    pub fn pulse_cell(&mut self, row: usize, col: usize, pulse: &PulseSpec) -> Result<DisturbLog> {
        pulse.validate()?;
        let scheme = match pulse.kind {
            PulseKind::Program => BiasScheme::program(
                self.rows,
                self.cols,
                self.topology,
                row,
                col,
                pulse.amplitude,
            )?,
            PulseKind::Erase => BiasScheme::erase(
                self.rows,
                self.cols,
                self.topology,
                row,
                col,
                pulse.amplitude,
            )?,
        };
        let mut delta = DisturbLog::new(self.rows, self.cols);
        for (i, (role, bias)) in scheme.entries.iter().enumerate() {
            let old = self.cells[i];
            let new = self
                .model
                .apply_pulse(&old, pulse, bias, &mut self.streams[i])?;
            delta.record(i / self.cols, i % self.cols, *role, new.v_th - old.v_th);
            self.cells[i] = new;
        }
        self.disturb.merge(&delta);
        Ok(delta)
    }

    /// Noiseless standard-bias readout.
    pub fn read_cell_ideal(&self, row: usize, col: usize, temperature: f64) -> Result<f64> {
        let cell = self.cell(row, col)?;
        self.model
            .drain_current(cell, &BiasCondition::STANDARD_READ, temperature)
    }

    /// Standard-bias readout, optionally noisy (mean of `samples` draws from
    /// the cell's stream). Never changes any cell state.
    pub fn read_cell(
        &mut self,
        row: usize,
        col: usize,
        temperature: f64,
        noisy: bool,
        samples: usize,
    ) -> Result<f64> {
        if !noisy {
            return self.read_cell_ideal(row, col, temperature);
        }
        self.read_cell_biased(
            row,
            col,
            &BiasCondition::STANDARD_READ,
            temperature,
            samples,
        )
    }

    /// Noisy readout under an arbitrary bias.
    pub fn read_cell_biased(
        &mut self,
        row: usize,
        col: usize,
        bias: &BiasCondition,
        temperature: f64,
        samples: usize,
    ) -> Result<f64> {
        let i = self.index(row, col)?;
        self.model.readout_noisy(
            &self.cells[i],
            bias,
            temperature,
            samples,
            &mut self.streams[i],
        )
    }

    /// Evaluates cell currents of `row` under `bias` without noise.
    pub(crate) fn current_under(
        &self,
        row: usize,
        col: usize,
        bias: &BiasCondition,
        temperature: f64,
    ) -> Result<f64> {
        self.model
            .drain_current(self.cell(row, col)?, bias, temperature)
    }

    /// Advances every cell through an unbiased hold.
    pub fn retention_hold(&mut self, duration: f64, temperature: f64) -> Result<()> {
        for (cell, rng) in self.cells.iter_mut().zip(self.streams.iter_mut()) {
            *cell = self
                .model
                .retention_hold(cell, duration, temperature, rng)?;
        }
        Ok(())
    }

    /// Plain-text state dump: versioned header, then one record per cell.
    pub fn to_state_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{STATE_FILE_MAGIC} v{STATE_FILE_VERSION}");
        let _ = writeln!(s, "rows={}", self.rows);
        let _ = writeln!(s, "cols={}", self.cols);
        let _ = writeln!(s, "topology={}", self.topology.name());
        let _ = writeln!(s, "row,col,v_th,n_slope,i0,seed");
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{:?},{}",
                i / self.cols,
                i % self.cols,
                c.v_th,
                c.n_slope,
                c.i0,
                c.rng_seed
            );
        }
        s
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_state_string().as_bytes())?;
        Ok(())
    }

    /// Parses a state dump. Noise parameters come from `model`; stochastic
    /// streams restart from each cell's seed.
    pub fn from_state_str(model: CellModel, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty state file".into()))?;
        let expected = format!("{STATE_FILE_MAGIC} v{STATE_FILE_VERSION}");
        if header.trim() != expected {
            return Err(Error::Parse(format!(
                "unsupported state header {header:?}, expected {expected:?}"
            )));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {key}")))?;
            line.strip_prefix(&format!("{key}="))
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse(format!("expected {key}=..., got {line:?}")))
        };
        let parse_usize = |s: String| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
        let rows = parse_usize(field("rows")?)?;
        let cols = parse_usize(field("cols")?)?;
        let topology = Topology::parse(&field("topology")?)?;
        if rows == 0 || cols < 3 {
            return Err(Error::Parse(format!("invalid array shape {rows}x{cols}")));
        }
        if lines.next().map(str::trim) != Some("row,col,v_th,n_slope,i0,seed") {
            return Err(Error::Parse("missing cell record header".into()));
        }
        let mut cells = vec![None; rows * cols];
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 6 {
                return Err(Error::Parse(format!("bad cell record {line:?}")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            };
            let idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            };
            let (r, c) = (idx(parts[0])?, idx(parts[1])?);
            check_bounds(rows, cols, r, c)?;
            let seed = parts[5]
                .parse::<u64>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            let cell = CellState {
                v_th: num(parts[2])?,
                n_slope: num(parts[3])?,
                i0: num(parts[4])?,
                noise: model.config().noise,
                rng_seed: seed,
            };
            if !(cell.i0 > 0.0 && cell.v_th.is_finite() && cell.n_slope > 0.0) {
                return Err(Error::Parse(format!("invalid cell values in {line:?}")));
            }
            cells[r * cols + c] = Some(cell);
        }
        let cells = cells
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| Error::Parse(format!("missing cell ({}, {})", i / cols, i % cols)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_cells(model, rows, cols, topology, cells))
    }

    pub fn load(model: CellModel, path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_state_str(model, &std::fs::read_to_string(path)?)
    }
}
