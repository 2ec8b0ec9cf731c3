use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use onn_therminv::energy::GridWindow;
use onn_therminv::harness::records::{histograms_to_csv, records_to_csv, write_text};
use onn_therminv::harness::{
    run_cell, with_threads, Cell, ExperimentConfig, ExperimentOutput, MatrixSource, Method,
    OutputFormat, Routine,
};
use onn_therminv::{map_onn_to_matrix, OnnConfig, SdeMode, StepSize};

#[derive(Parser, Debug)]
#[command(
    name = "onn-therminv",
    version,
    about = "Invert SPD matrices by simulating noisy coupled phase oscillators"
)]
struct Cli {
    /// Base seed for SDE noise (and for matrix draws in random batches).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path, `-` for stdout.
    #[arg(long, global = true, default_value = "-")]
    out: String,
    /// Output format; inferred from the --out extension when omitted.
    #[arg(long, global = true)]
    format: Option<OutputFormat>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Experiment file (TOML or JSON). Subcommand flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Record per-cell wall-clock seconds (makes output non-reproducible).
    #[arg(long, global = true)]
    wall_time: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Invert one matrix with either method.
    Single {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        method: Option<Method>,
        #[command(flatten)]
        sde: SdeArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Invert one matrix by Boltzmann-grid quadrature.
    EnergyInvert {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Invert one matrix by simulating the oscillator SDE.
    DynamicsInvert {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        sde: SdeArgs,
    },
    /// Error versus coupling strength K.
    SweepK {
        #[command(flatten)]
        matrix: MatrixArgs,
        /// Comma-separated K values (default: 30 log-spaced points).
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<f64>>,
        #[arg(long)]
        kn: Option<f64>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[command(flatten)]
        sde: SdeArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Error versus matrix scale with K = 1000 / scale.
    SweepScale {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long)]
        kn: Option<f64>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[command(flatten)]
        sde: SdeArgs,
    },
    /// Error versus noise parameter Kn.
    SweepNoise {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[arg(long, value_delimiter = ',')]
        kn_values: Option<Vec<f64>>,
        /// Coupling strength (default 1000 / max |A_ij|).
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[command(flatten)]
        sde: SdeArgs,
    },
    /// Error distribution over random SPD matrices.
    RandomBatch {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        /// Max entry magnitude of each generated matrix.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        kn_values: Option<Vec<f64>>,
        /// Histogram bin width in percent.
        #[arg(long)]
        bin_width: Option<f64>,
        /// Histogram CSV path (default: next to --out).
        #[arg(long)]
        histogram_out: Option<PathBuf>,
        #[command(flatten)]
        sde: SdeArgs,
    },
}

#[derive(Args, Debug, Default)]
struct MatrixArgs {
    /// Matrix text file: the dimension, then one row per line.
    #[arg(long, conflicts_with = "generate_dim")]
    matrix_file: Option<PathBuf>,
    /// Use a generated random SPD matrix of this dimension.
    #[arg(long)]
    generate_dim: Option<usize>,
    #[arg(long, requires = "generate_dim", default_value_t = 1.0)]
    generate_scale: f64,
    #[arg(long, requires = "generate_dim", default_value_t = 0)]
    matrix_seed: u64,
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Oscillator network JSON; supplies A, K and Kn.
    #[arg(long, conflicts_with_all = ["matrix_file", "generate_dim"])]
    config_file: Option<PathBuf>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    kn: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct SdeArgs {
    /// Integration steps N_s.
    #[arg(long)]
    steps: Option<u64>,
    /// `auto` or a step size.
    #[arg(long)]
    dt: Option<StepSize>,
    /// Fraction of steps discarded before sampling.
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    stride: Option<u64>,
    /// `kuramoto` or `linear`.
    #[arg(long)]
    mode: Option<SdeMode>,
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    /// Grid points per dimension.
    #[arg(long)]
    points: Option<usize>,
    /// Half-width in radians, `pi`, `auto` or `auto:<sigmas>`.
    #[arg(long)]
    window: Option<GridWindow>,
}

impl MatrixArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(path) = &self.matrix_file {
            cfg.matrix = MatrixSource::File { path: path.clone() };
        } else if let Some(dim) = self.generate_dim {
            cfg.matrix = MatrixSource::Generated {
                dim,
                scale: self.generate_scale,
                seed: self.matrix_seed,
            };
        }
    }
}

impl InputArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        self.matrix.apply(cfg);
        if let Some(path) = &self.config_file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let onn: OnnConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let a = map_onn_to_matrix(&onn);
            cfg.matrix = MatrixSource::Rows { rows: a.rows() };
            cfg.k = Some(onn.k());
            cfg.kn = onn.kn();
        }
        set(&mut cfg.k, self.k.map(Some));
        set(&mut cfg.kn, self.kn);
        Ok(())
    }
}

impl SdeArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if self.steps.is_some() {
            cfg.sde.steps = self.steps;
        }
        set(&mut cfg.sde.dt, self.dt);
        set(&mut cfg.sde.burn_in_fraction, self.burn_in);
        set(&mut cfg.sde.sample_stride, self.stride);
        set(&mut cfg.sde.mode, self.mode);
    }
}

impl GridArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.grid.points_per_dim, self.points);
        set(&mut cfg.grid.window, self.window);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn build_config(cli: &Cli) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None if cli.command.is_none() => bail!("give a subcommand or --config"),
        None => ExperimentConfig::default(),
    };
    let mut histogram_out = None;
    match &cli.command {
        None => {}
        Some(Command::Single {
            input,
            method,
            sde,
            grid,
        }) => {
            cfg.routine = Routine::SingleInvert;
            input.apply(&mut cfg)?;
            set(&mut cfg.method, *method);
            sde.apply(&mut cfg);
            grid.apply(&mut cfg);
        }
        Some(Command::EnergyInvert { input, grid }) => {
            cfg.routine = Routine::EnergyInvert;
            input.apply(&mut cfg)?;
            grid.apply(&mut cfg);
        }
        Some(Command::DynamicsInvert { input, sde }) => {
            cfg.routine = Routine::DynamicsInvert;
            input.apply(&mut cfg)?;
            sde.apply(&mut cfg);
        }
        Some(Command::SweepK {
            matrix,
            k_values,
            kn,
            method,
            repetitions,
            sde,
            grid,
        }) => {
            cfg.routine = Routine::SweepK;
            matrix.apply(&mut cfg);
            if k_values.is_some() {
                cfg.k_values = k_values.clone();
            }
            set(&mut cfg.kn, *kn);
            set(&mut cfg.method, *method);
            set(&mut cfg.repetitions, *repetitions);
            sde.apply(&mut cfg);
            grid.apply(&mut cfg);
        }
        Some(Command::SweepScale {
            matrix,
            scales,
            kn,
            repetitions,
            sde,
        }) => {
            cfg.routine = Routine::SweepScale;
            matrix.apply(&mut cfg);
            set(&mut cfg.scales, scales.clone());
            set(&mut cfg.kn, *kn);
            set(&mut cfg.repetitions, *repetitions);
            sde.apply(&mut cfg);
        }
        Some(Command::SweepNoise {
            matrix,
            kn_values,
            k,
            repetitions,
            sde,
        }) => {
            cfg.routine = Routine::SweepNoise;
            matrix.apply(&mut cfg);
            set(&mut cfg.kn_values, kn_values.clone());
            set(&mut cfg.k, k.map(Some));
            set(&mut cfg.repetitions, *repetitions);
            sde.apply(&mut cfg);
        }
        Some(Command::RandomBatch {
            count,
            dim,
            scale,
            kn_values,
            bin_width,
            histogram_out: h,
            sde,
        }) => {
            cfg.routine = Routine::RandomBatch;
            set(&mut cfg.count, *count);
            set(&mut cfg.dim, *dim);
            set(&mut cfg.batch_scale, *scale);
            set(&mut cfg.kn_values, kn_values.clone());
            set(&mut cfg.histogram_bin_width, *bin_width);
            sde.apply(&mut cfg);
            histogram_out = h.clone();
        }
    }
    set(&mut cfg.seed, cli.seed);
    cfg.record_wall_time |= cli.wall_time;
    Ok((cfg, histogram_out))
}

fn is_single(routine: Routine) -> bool {
    matches!(
        routine,
        Routine::SingleInvert | Routine::EnergyInvert | Routine::DynamicsInvert
    )
}

fn output_format(cli: &Cli, routine: Routine) -> OutputFormat {
    if let Some(f) = cli.format {
        return f;
    }
    match Path::new(&cli.out).extension().and_then(|e| e.to_str()) {
        Some("json") => OutputFormat::Json,
        Some("csv") => OutputFormat::Csv,
        _ if is_single(routine) => OutputFormat::Json,
        _ => OutputFormat::Csv,
    }
}

fn histogram_path(out: &str) -> Option<PathBuf> {
    if out == "-" {
        return None;
    }
    let p = Path::new(out);
    let stem = p.file_stem()?.to_string_lossy();
    Some(p.with_file_name(format!("{stem}.hist.csv")))
}

fn json(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Returns the number of failed cells.
fn run(cli: &Cli) -> Result<usize> {
    let (cfg, histogram_out) = build_config(cli)?;
    let format = output_format(cli, cfg.routine);

    if is_single(cfg.routine) && cfg.repetitions == 1 {
        let cells = cfg.cells()?;
        let cell: &Cell = &cells[0];
        let report = with_threads(cli.threads, || run_cell(cell))?;
        if let Some(msg) = &report.record.failure {
            eprintln!("cell failed: {msg}");
        }
        let text = match format {
            OutputFormat::Json => json(&report)?,
            OutputFormat::Csv => records_to_csv(std::slice::from_ref(&report.record))?,
        };
        write_text(&cli.out, &text)?;
        return Ok(usize::from(report.record.failed()));
    }

    let output: ExperimentOutput = with_threads(cli.threads, || cfg.run())??;
    let text = match format {
        OutputFormat::Json if cfg.routine == Routine::RandomBatch => json(&output)?,
        OutputFormat::Json => json(&output.records)?,
        OutputFormat::Csv => records_to_csv(&output.records)?,
    };
    write_text(&cli.out, &text)?;

    if cfg.routine == Routine::RandomBatch {
        for h in &output.histograms {
            eprintln!(
                "Kn = {:e}: {:.1}% of {} cells below 5% error, {} at or above 120%",
                h.kn,
                100.0 * h.fraction_below(5.0),
                h.total(),
                h.overflow()
            );
        }
        if let Some(path) = histogram_out.or_else(|| histogram_path(&cli.out)) {
            write_text(
                &path.to_string_lossy(),
                &histograms_to_csv(&output.histograms),
            )?;
        }
    }
    let failures = output.failures();
    if failures > 0 {
        eprintln!("{failures} of {} cells failed", output.records.len());
    }
    Ok(failures)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
