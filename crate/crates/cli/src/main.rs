use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use flashvmm::calibrate::{calibrate, render_calibrated};
use flashvmm::campaign::{write_results_csv, Campaign};
use flashvmm::experiments::{run_experiment, ExperimentId, ExperimentSpec};
use flashvmm::physics::ROOM_TEMPERATURE;
use flashvmm::tuning::{tune_array, tune_peripherals, TunerConfig};
use flashvmm::vmm::{
    differential_multiply, measure_peripherals, multiply, plan_differential, single_ended_targets,
    InputVector, Noise, TemperatureRange, WeightMatrix,
};
use flashvmm::{ArrayState, CellModel, ModelConfig, NoiseParams, Topology};

/// Flash-cell analog vector-by-matrix multiplier simulator.
#[derive(Parser)]
#[command(name = "flashvmm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// RNG seed; defaults to the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Operating temperature in kelvin.
    #[arg(long, global = true, default_value_t = ROOM_TEMPERATURE)]
    temperature: f64,
    /// Readout noise and pulse variability.
    #[arg(long, global = true, value_enum, default_value_t = Switch::On)]
    noise: Switch,
    /// Model config TOML; built-in calibrated defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Modified,
    Original,
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Modified => Topology::Modified,
            TopologyArg::Original => Topology::Original,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Derive the tunable window and pulse steps, print the completed config.
    Calibrate,
    /// Run a tuning campaign file and write per-cell results.
    Tune {
        campaign: PathBuf,
        /// Start from a saved array state instead of a fresh array.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Save the tuned array state here.
        #[arg(long)]
        save_state: Option<PathBuf>,
    },
    /// Program a weight matrix and multiply input vectors.
    Multiply {
        /// Weight CSV, one row per input, entries in [0, 1].
        #[arg(long)]
        weights: PathBuf,
        /// Input CSV, one vector of currents (A) per line.
        #[arg(long)]
        inputs: PathBuf,
        /// Use the drift-compensated differential pair scheme.
        #[arg(long)]
        differential: bool,
        /// Tuning precision for peripheral and weight cells.
        #[arg(long, default_value_t = 0.01)]
        precision: f64,
        /// Pulse budget per cell.
        #[arg(long, default_value_t = 200)]
        budget: usize,
        /// Samples averaged per output read when noise is on.
        #[arg(long, default_value_t = 128)]
        samples: usize,
    },
    /// Regenerate one experiment dataset as CSV.
    Experiment {
        /// fig3a, fig3b, fig4, fig5, fig6, fig9, fig10, fig11 or custom.
        id: String,
        /// Campaign file for `custom`.
        #[arg(long)]
        campaign: Option<PathBuf>,
    },
    /// Create or inspect array state files.
    #[command(subcommand)]
    State(StateCmd),
}

#[derive(Subcommand)]
enum StateCmd {
    /// Write a fresh, fully erased array.
    Save {
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        data_cols: usize,
        #[arg(long, value_enum, default_value_t = TopologyArg::Modified)]
        topology: TopologyArg,
    },
    /// Read a state file and report every cell's current.
    Load { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<flashvmm::Error>()
                .map_or("runtime", |e| e.kind());
            let msg = format!("{e:#}").replace('\\', "\\\\").replace('"', "\\\"");
            eprintln!("error kind={kind} msg=\"{msg}\"");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => ModelConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ModelConfig::default(),
    };
    if c.noise == Switch::Off {
        cfg.noise = NoiseParams::silent();
        cfg.pulse.variability = 0.0;
    }
    let seed = c.seed.unwrap_or(cfg.seed);
    let tuner = TunerConfig {
        temperature: c.temperature,
        noisy: c.noise == Switch::On,
        ..TunerConfig::default()
    };
    let readout = match c.noise {
        Switch::On => Noise::averaged(),
        Switch::Off => Noise::Off,
    };
    match cli.cmd {
        Cmd::Calibrate => emit(&c.output, &render_calibrated(&calibrate(&cfg)?)),
        Cmd::Tune {
            campaign,
            state,
            save_state,
        } => {
            let mut plan = Campaign::load(&campaign)
                .with_context(|| format!("loading {}", campaign.display()))?;
            if let Some(s) = c.seed {
                plan.seed = s;
            }
            let model = CellModel::new(cfg)?;
            let mut array = match state {
                Some(p) => ArrayState::load(model, &p)?,
                None => plan.build_array(model)?,
            };
            let targets = plan.resolve(&array)?;
            let report = tune_array(
                &mut array,
                &targets,
                plan.budget,
                &TunerConfig {
                    temperature: plan.temperature,
                    ..tuner
                },
            )?;
            let mut buf = Vec::new();
            write_results_csv(&report, &mut buf)?;
            emit(&c.output, &String::from_utf8(buf)?)?;
            if let Some(p) = save_state {
                array.save(&p)?;
            }
            let s = report.summary;
            eprintln!(
                "summary tune cells={} converged={} total_pulses={} max_abs_error={}",
                s.cells, s.converged, s.total_pulses, s.max_abs_error
            );
            Ok(())
        }
        Cmd::Multiply {
            weights,
            inputs,
            differential,
            precision,
            budget,
            samples,
        } => {
            let w = WeightMatrix::read_csv(open(&weights)?)?;
            let xs = InputVector::read_csv(open(&inputs)?)?;
            let model = CellModel::new(cfg)?;
            let phys_cols = if differential { 2 * w.cols() } else { w.cols() };
            let mut array =
                ArrayState::new(model.clone(), w.rows(), phys_cols, Topology::Modified, seed)?;
            let ref_read = TunerConfig {
                temperature: ROOM_TEMPERATURE,
                ..tuner
            };
            let periph = tune_peripherals(&mut array, precision, budget, &ref_read)?;
            if periph.summary.converged != periph.results.len() {
                bail!("peripheral tuning did not converge");
            }
            let refs = measure_peripherals(&mut array, ROOM_TEMPERATURE, readout)?;
            let noise = match c.noise {
                Switch::On => Noise::On { samples },
                Switch::Off => Noise::Off,
            };
            let mut text = header(w.cols());
            if differential {
                let plan = plan_differential(
                    &w,
                    TemperatureRange::characterized(),
                    ROOM_TEMPERATURE,
                    &refs,
                    &model,
                )?;
                let targets = plan.tune_targets(&array, precision)?;
                let report = tune_array(&mut array, &targets, budget, &ref_read)?;
                warn_unconverged(report.summary.converged, report.results.len());
                for (k, x) in xs.iter().enumerate() {
                    let out = differential_multiply(&mut array, &plan, x, c.temperature, noise)?;
                    text.push_str(&line(k, &out, &w, x));
                }
            } else {
                let targets = single_ended_targets(&array, &w, &refs, precision)?;
                let report = tune_array(&mut array, &targets, budget, &ref_read)?;
                warn_unconverged(report.summary.converged, report.results.len());
                for (k, x) in xs.iter().enumerate() {
                    let out = multiply(&mut array, x, c.temperature, noise)?;
                    text.push_str(&line(k, &out, &w, x));
                }
            }
            emit(&c.output, &text)
        }
        Cmd::Experiment { id, campaign } => {
            let id: ExperimentId = id.parse()?;
            let mut spec = ExperimentSpec::new(id, cfg, seed);
            if let Some(p) = campaign {
                spec.campaign =
                    Some(Campaign::load(&p).with_context(|| format!("loading {}", p.display()))?);
            }
            let out = run_experiment(&spec)?;
            emit(&c.output, &out.csv)?;
            eprintln!("{}", out.summary_line());
            Ok(())
        }
        Cmd::State(StateCmd::Save {
            rows,
            data_cols,
            topology,
        }) => {
            let array =
                ArrayState::new(CellModel::new(cfg)?, rows, data_cols, topology.into(), seed)?;
            emit(&c.output, &array.to_state_string())
        }
        Cmd::State(StateCmd::Load { file }) => {
            let mut array = ArrayState::load(CellModel::new(cfg)?, &file)?;
            let mut text = String::from("row,col,v_th,current\n");
            for r in 0..array.rows() {
                for col in 0..array.cols() {
                    let v_th = array.cell(r, col)?.v_th;
                    let i = array.read_cell(r, col, c.temperature, c.noise == Switch::On, 128)?;
                    text.push_str(&format!("{r},{col},{v_th},{i}\n"));
                }
            }
            emit(&c.output, &text)
        }
    }
}

fn open(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn emit(output: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().lock().write_all(text.as_bytes())?),
    }
}

fn warn_unconverged(converged: usize, total: usize) {
    if converged < total {
        eprintln!(
            "warning: {} of {total} weight cells did not converge",
            total - converged
        );
    }
}

fn header(cols: usize) -> String {
    let mut h = String::from("index");
    for j in 0..cols {
        h.push_str(&format!(",out_{j}"));
    }
    for j in 0..cols {
        h.push_str(&format!(",ideal_{j}"));
    }
    h.push('\n');
    h
}

fn line(index: usize, out: &[f64], w: &WeightMatrix, x: &InputVector) -> String {
    let mut s = index.to_string();
    for o in out {
        s.push_str(&format!(",{o}"));
    }
    for j in 0..w.cols() {
        let ideal: f64 = (0..w.rows()).map(|r| w.get(r, j) * x.0[r]).sum();
        s.push_str(&format!(",{ideal}"));
    }
    s.push('\n');
    s
}
