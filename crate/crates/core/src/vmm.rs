//! Gate-coupled vector-by-matrix multiplication.
//!
//! Each row's input current is forced through that row's peripheral cell;
//! the resulting gate voltage is shared by every array cell in the row, so
//! cell (i, j) carries `w_ij * I_j` with
//! `w_ij = exp((v_th_peripheral - v_th_cell) / (n kT/q))`. Column wires sit at
//! a virtual bias and sum their cells' currents.
//!
//! The differential variant realizes a logical weight `w` as the difference
//! of two cells tuned to `w_b + w/2` and `w_b - w/2`. Because
//! `w(T) = w(T0)^(T0/T)`, the bias weight `w_b` can be chosen so that the
//! difference barely drifts over a temperature interval.

use serde::{Deserialize, Serialize};

use crate::array::{csv_err, ArrayState};
use crate::cell::{BiasCondition, CellModel, CellState};
use crate::error::{Error, Result};
use crate::physics::thermal_voltage;
use crate::search::{golden_section, grid_scan};
use crate::tuning::TuneTarget;

/// Relative deviation from the reference current above which a peripheral
/// cell counts as untuned.
pub const PERIPHERAL_TOLERANCE: f64 = 0.1;

/// Dense weight matrix, row-major, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} entries do not form a non-empty {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if let Some((k, w)) = entries
            .iter()
            .enumerate()
            .find(|(_, w)| !(0.0..=1.0).contains(*w))
        {
            return Err(Error::OutOfRange(format!(
                "weight ({}, {}) = {w} outside [0, 1]",
                k / cols,
                k % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged weight rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    /// Comma-separated rows, no header; `#` starts a comment line.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        Self::from_rows(&read_number_rows(input)?)
    }
}

fn read_number_rows<R: std::io::Read>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Input currents, one per array row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVector(pub Vec<f64>);

impl InputVector {
    /// One input vector per line, same layout as the weight file.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<Self>> {
        Ok(read_number_rows(input)?
            .into_iter()
            .map(InputVector)
            .collect())
    }

    pub fn validate(&self, model: &CellModel) -> Result<()> {
        let d = &model.config().device;
        for (j, &i) in self.0.iter().enumerate() {
            if !(i >= d.i_min && i <= d.i_sat) {
                return Err(Error::OutOfRange(format!(
                    "input {j} = {i} A outside [{}, {}] A",
                    d.i_min, d.i_sat
                )));
            }
        }
        Ok(())
    }
}

/// Gate voltage that makes `peripheral` carry `input_current` under the
/// standard readout terminals.
pub fn input_gate_voltage(
    model: &CellModel,
    peripheral: &CellState,
    input_current: f64,
    temperature: f64,
) -> Result<f64> {
    InputVector(vec![input_current]).validate(model)?;
    Ok(peripheral.v_th
        + peripheral.n_slope * thermal_voltage(temperature) * (input_current / peripheral.i0).ln())
}

/// Mirror ratio between an array cell and its row's peripheral cell. Both
/// cells must share a slope factor; the array cell's is used.
pub fn weight_of(cell: &CellState, peripheral: &CellState, temperature: f64) -> f64 {
    debug_assert!(
        (cell.n_slope - peripheral.n_slope).abs() < 1e-12,
        "gate-coupled cells must share n"
    );
    ((peripheral.v_th - cell.v_th) / (cell.n_slope * thermal_voltage(temperature))).exp()
}

/// Whether the output currents carry read noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Noise {
    Off,
    /// Each cell current is the mean of `samples` noisy draws.
    On {
        samples: usize,
    },
}

impl Noise {
    pub fn averaged() -> Self {
        Noise::On { samples: 128 }
    }
}

/// True when the row's peripheral reads within [`PERIPHERAL_TOLERANCE`] of
/// its window-center reference current.
pub fn peripheral_ready(array: &ArrayState, row: usize) -> Result<bool> {
    let p = array.peripheral(row)?;
    let model = array.model();
    let reference = model.reference_current(p.n_slope);
    let now = array.read_cell_ideal(
        row,
        array.peripheral_col(row),
        model.config().device.reference_temperature,
    )?;
    Ok((now / reference - 1.0).abs() <= PERIPHERAL_TOLERANCE)
}

fn row_bias(array: &ArrayState, row: usize, input: f64, temperature: f64) -> Result<BiasCondition> {
    let v = input_gate_voltage(array.model(), array.peripheral(row)?, input, temperature)?;
    Ok(BiasCondition::STANDARD_READ.with_cg(v))
}

fn check_inputs(array: &ArrayState, inputs: &InputVector) -> Result<()> {
    if inputs.0.len() != array.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs for a {}-row array",
            inputs.0.len(),
            array.rows()
        )));
    }
    inputs.validate(array.model())?;
    for r in 0..array.rows() {
        if !peripheral_ready(array, r)? {
            return Err(Error::Precondition(format!(
                "peripheral cell of row {r} is not tuned"
            )));
        }
    }
    Ok(())
}

/// Output current of every data column (A).
pub fn multiply(
    array: &mut ArrayState,
    inputs: &InputVector,
    temperature: f64,
    noise: Noise,
) -> Result<Vec<f64>> {
    check_inputs(array, inputs)?;
    if let Noise::On { samples: 0 } = noise {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let mut out = vec![0.0; array.data_cols()];
    for (row, &input) in inputs.0.iter().enumerate() {
        let bias = row_bias(array, row, input, temperature)?;
        for (k, o) in out.iter_mut().enumerate() {
            let col = array.data_col(k);
            *o += match noise {
                Noise::Off => array.current_under(row, col, &bias, temperature)?,
                Noise::On { samples } => {
                    array.read_cell_biased(row, col, &bias, temperature, samples)?
                }
            };
        }
    }
    Ok(out)
}

/// `weight_of` for every data cell, `rows x data_cols`.
pub fn realized_weights(array: &ArrayState, temperature: f64) -> Result<Vec<Vec<f64>>> {
    (0..array.rows())
        .map(|r| {
            let p = array.peripheral(r)?;
            (0..array.data_cols())
                .map(|k| Ok(weight_of(array.cell(r, array.data_col(k))?, p, temperature)))
                .collect()
        })
        .collect()
}

/// Per-row peripheral readout at standard bias, used as the reference that
/// weights are measured against. `Noise::Off` returns the model value.
pub fn measure_peripherals(
    array: &mut ArrayState,
    temperature: f64,
    noise: Noise,
) -> Result<Vec<f64>> {
    (0..array.rows())
        .map(|r| {
            let col = array.peripheral_col(r);
            match noise {
                Noise::Off => array.read_cell_ideal(r, col, temperature),
                Noise::On { samples } => array.read_cell(r, col, temperature, true, samples),
            }
        })
        .collect()
}

/// Tuning targets realizing `weights` on the data cells (single-ended).
pub fn single_ended_targets(
    array: &ArrayState,
    weights: &WeightMatrix,
    reference_currents: &[f64],
    precision: f64,
) -> Result<Vec<TuneTarget>> {
    if weights.rows() != array.rows()
        || weights.cols() > array.data_cols()
        || reference_currents.len() != array.rows()
    {
        return Err(Error::InvalidArgument(format!(
            "{}x{} weights do not fit a {}x{} array",
            weights.rows(),
            weights.cols(),
            array.rows(),
            array.data_cols()
        )));
    }
    let mut targets = Vec::with_capacity(weights.rows() * weights.cols());
    for (r, &i_ref) in reference_currents.iter().enumerate() {
        for c in 0..weights.cols() {
            let w = weights.get(r, c);
            if w <= 0.0 {
                return Err(Error::OutOfRange(format!(
                    "single-ended weight ({r}, {c}) must be positive"
                )));
            }
            targets.push(TuneTarget::new(r, array.data_col(c), w * i_ref, precision));
        }
    }
    Ok(targets)
}

/// Closed temperature interval (K).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRange {
    pub low: f64,
    pub high: f64,
}

impl TemperatureRange {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low > 0.0 && low <= high) {
            return Err(Error::InvalidArgument(format!(
                "invalid temperature range [{low}, {high}]"
            )));
        }
        Ok(Self { low, high })
    }

    /// 25 °C to 85 °C.
    pub fn characterized() -> Self {
        Self {
            low: crate::physics::ROOM_TEMPERATURE,
            high: crate::physics::HOT_TEMPERATURE,
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    /// `low, low + step, ...` with `high` always included.
    pub fn grid(&self, step: f64) -> Vec<f64> {
        let n = ((self.high - self.low) / step).floor() as usize;
        let mut g: Vec<f64> = (0..=n).map(|k| self.low + step * k as f64).collect();
        if self.high - g[n] > 1e-9 {
            g.push(self.high);
        }
        g
    }
}

/// Grid step of the drift objective (K).
pub const DRIFT_GRID_STEP: f64 = 1.0;

/// Single-cell weight at `t` given its value at `reference`.
pub fn weight_at(w_ref: f64, reference: f64, t: f64) -> f64 {
    (w_ref.ln() * reference / t).exp()
}

/// Differential output per unit input at `t` for weights set at `reference`.
pub fn differential_output(w_plus: f64, w_minus: f64, reference: f64, t: f64) -> f64 {
    weight_at(w_plus, reference, t) - weight_at(w_minus, reference, t)
}

/// Worst-case |O(T)/O(T0) - 1| over the 1 K grid.
pub fn differential_drift(
    w_plus: f64,
    w_minus: f64,
    range: TemperatureRange,
    reference: f64,
) -> f64 {
    let o_ref = differential_output(w_plus, w_minus, reference, reference);
    if o_ref == 0.0 {
        return 0.0;
    }
    range
        .grid(DRIFT_GRID_STEP)
        .into_iter()
        .map(|t| (differential_output(w_plus, w_minus, reference, t) / o_ref - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Worst-case drift of one cell holding `w` directly.
pub fn single_ended_drift(w: f64, range: TemperatureRange, reference: f64) -> f64 {
    range
        .grid(DRIFT_GRID_STEP)
        .into_iter()
        .map(|t| (weight_at(w, reference, t) / w - 1.0).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasWeight {
    pub w_b: f64,
    pub drift: f64,
}

/// Coarse scan step and refinement tolerance of the bias-weight search.
pub const BIAS_SCAN_STEP: f64 = 1e-3;
pub const BIAS_REFINE_TOL: f64 = 1e-6;

/// Smallest `w_minus` the unbounded search allows.
pub const MIN_MINUS_WEIGHT: f64 = 1e-6;

/// Bias weight minimizing the worst-case drift of `w` over `range`.
pub fn optimize_bias_weight(w: f64, range: TemperatureRange, reference: f64) -> Result<BiasWeight> {
    optimize_bias_weight_bounded(w, range, reference, MIN_MINUS_WEIGHT)
}

/// As [`optimize_bias_weight`], with `w_minus >= min_minus`.
pub fn optimize_bias_weight_bounded(
    w: f64,
    range: TemperatureRange,
    reference: f64,
    min_minus: f64,
) -> Result<BiasWeight> {
    if !(0.0..1.0).contains(&w) {
        return Err(Error::Infeasible(format!(
            "differential weight {w} outside [0, 1)"
        )));
    }
    let lo = 0.5 * w + min_minus.max(MIN_MINUS_WEIGHT);
    let hi = 1.0 - 0.5 * w;
    if lo > hi {
        return Err(Error::Infeasible(format!(
            "weight {w} leaves no room for w_minus >= {min_minus} below w_plus <= 1"
        )));
    }
    if w == 0.0 {
        return Ok(BiasWeight {
            w_b: 0.5 * (lo + hi),
            drift: 0.0,
        });
    }
    let objective = |w_b: f64| differential_drift(w_b + 0.5 * w, w_b - 0.5 * w, range, reference);
    let (x0, f0) = grid_scan(objective, lo, hi, BIAS_SCAN_STEP);
    let (x1, f1) = golden_section(
        objective,
        (x0 - BIAS_SCAN_STEP).max(lo),
        (x0 + BIAS_SCAN_STEP).min(hi),
        BIAS_REFINE_TOL,
    );
    let (w_b, drift) = if f1 <= f0 { (x1, f1) } else { (x0, f0) };
    Ok(BiasWeight { w_b, drift })
}

/// One logical weight realized by a pair of data columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferentialEntry {
    pub row: usize,
    pub col: usize,
    pub w: f64,
    pub w_b: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Data-column indices of the two cells.
    pub plus_col: usize,
    pub minus_col: usize,
    pub target_plus: f64,
    pub target_minus: f64,
    pub predicted_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialWeightPlan {
    pub rows: usize,
    pub cols: usize,
    pub range: TemperatureRange,
    pub reference_temperature: f64,
    pub entries: Vec<DifferentialEntry>,
}

impl DifferentialWeightPlan {
    pub fn entry(&self, row: usize, col: usize) -> &DifferentialEntry {
        &self.entries[row * self.cols + col]
    }

    /// Tuning targets for both cells of every entry.
    pub fn tune_targets(&self, array: &ArrayState, precision: f64) -> Result<Vec<TuneTarget>> {
        self.check_fits(array)?;
        Ok(self
            .entries
            .iter()
            .flat_map(|e| {
                [
                    TuneTarget::new(e.row, array.data_col(e.plus_col), e.target_plus, precision),
                    TuneTarget::new(
                        e.row,
                        array.data_col(e.minus_col),
                        e.target_minus,
                        precision,
                    ),
                ]
            })
            .collect())
    }

    fn check_fits(&self, array: &ArrayState) -> Result<()> {
        if self.rows != array.rows() || 2 * self.cols > array.data_cols() {
            return Err(Error::InvalidArgument(format!(
                "{}x{} differential plan needs a {}x{} array, got {}x{}",
                self.rows,
                self.cols,
                self.rows,
                2 * self.cols,
                array.rows(),
                array.data_cols()
            )));
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "i",
            "j",
            "w",
            "w_b",
            "w_plus",
            "w_minus",
            "target_plus",
            "target_minus",
        ])
        .map_err(csv_err)?;
        for e in &self.entries {
            w.write_record(
                [e.row.to_string(), e.col.to_string()].into_iter().chain(
                    [
                        e.w,
                        e.w_b,
                        e.w_plus,
                        e.w_minus,
                        e.target_plus,
                        e.target_minus,
                    ]
                    .iter()
                    .map(f64::to_string),
                ),
            )
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Plans a differential realization of `weights` (entries in `[0, 1)`).
///
/// Logical column `j` uses data columns `2j` (plus) and `2j + 1` (minus).
/// `reference_currents[i]` is row `i`'s peripheral readout; cell targets
/// are weights times that current and must stay inside `[i_min, i_sat]`.
pub fn plan_differential(
    weights: &WeightMatrix,
    range: TemperatureRange,
    reference_temperature: f64,
    reference_currents: &[f64],
    model: &CellModel,
) -> Result<DifferentialWeightPlan> {
    if reference_currents.len() != weights.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} reference currents for {} rows",
            reference_currents.len(),
            weights.rows()
        )));
    }
    let d = &model.config().device;
    let mut entries = Vec::with_capacity(weights.rows() * weights.cols());
    let mut bad = Vec::new();
    for (i, &i_ref) in reference_currents.iter().enumerate() {
        for j in 0..weights.cols() {
            let w = weights.get(i, j);
            let planned =
                optimize_bias_weight_bounded(w, range, reference_temperature, d.i_min / i_ref)
                    .and_then(|b| {
                        let (w_plus, w_minus) = (b.w_b + 0.5 * w, b.w_b - 0.5 * w);
                        let (tp, tm) = (w_plus * i_ref, w_minus * i_ref);
                        if tp > d.i_sat * (1.0 + 1e-9) {
                            return Err(Error::Infeasible(format!(
                                "w_plus target {tp} A above {} A",
                                d.i_sat
                            )));
                        }
                        Ok(DifferentialEntry {
                            row: i,
                            col: j,
                            w,
                            w_b: b.w_b,
                            w_plus,
                            w_minus,
                            plus_col: 2 * j,
                            minus_col: 2 * j + 1,
                            target_plus: tp.min(d.i_sat),
                            target_minus: tm.max(d.i_min),
                            predicted_drift: b.drift,
                        })
                    });
            match planned {
                Ok(e) => entries.push(e),
                Err(Error::Infeasible(msg)) => bad.push(format!("({i}, {j}) {msg}")),
                Err(e) => bad.push(format!("({i}, {j}) {e}")),
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Infeasible(format!("entries {}", bad.join("; "))));
    }
    Ok(DifferentialWeightPlan {
        rows: weights.rows(),
        cols: weights.cols(),
        range,
        reference_temperature,
        entries,
    })
}

/// Differential outputs `O+ - O-` per logical column.
pub fn differential_multiply(
    array: &mut ArrayState,
    plan: &DifferentialWeightPlan,
    inputs: &InputVector,
    temperature: f64,
    noise: Noise,
) -> Result<Vec<f64>> {
    plan.check_fits(array)?;
    let columns = multiply(array, inputs, temperature, noise)?;
    Ok((0..plan.cols)
        .map(|j| columns[2 * j] - columns[2 * j + 1])
        .collect())
}
