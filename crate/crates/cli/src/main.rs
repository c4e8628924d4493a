mod args;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::{AttKind, AttentionArgs, NetArgs, OutArgs};

/// Attention-module workbench: build backbones, audit parameter and FLOP
/// counts, check gradients and run seeded forwards.
#[derive(Parser, Debug)]
#[command(name = "attnforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a network and write its JSON description (and optionally weights).
    Build {
        #[command(flatten)]
        net: NetArgs,
        /// Write the description here instead of stdout.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
        /// Also initialize weights and write a GTF1 bundle into this directory.
        #[arg(long)]
        weights: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "kaiming_normal")]
        init: String,
    },
    /// Per-layer parameter and FLOP ledger.
    Stats {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Show rows without parameters or FLOPs too.
        #[arg(long)]
        all_rows: bool,
        /// Compare with a golden row (by id, or the row built the same way)
        /// and exit 3 on mismatch.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        assert_golden: Option<String>,
    },
    /// Compare every modeled golden row with this implementation's counts.
    Golden {
        /// Golden file (defaults to the shipped transcription).
        #[arg(long)]
        file: Option<std::path::PathBuf>,
        /// Only rows of this table.
        #[arg(long)]
        table: Option<u32>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Search GAM reduction, groups and placement against golden rows.
    Calibrate {
        #[arg(long, default_value = "resnet18")]
        arch: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 8, 16])]
        r: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 4])]
        g: Vec<usize>,
        #[arg(long, value_delimiter = ',', value_parser = args::parse_selector)]
        placement: Vec<attnforge_core::SiteSelector>,
        /// Markdown report path (stdout when omitted).
        #[arg(long)]
        out: Option<std::path::PathBuf>,
        /// Also write the full ranking as JSON.
        #[arg(long)]
        json: Option<std::path::PathBuf>,
    },
    /// Finite-difference gradient check of attention modules.
    Gradcheck {
        #[arg(long, value_enum, default_value = "gam")]
        module: AttKind,
        /// Run every variant of the suite instead of a single module.
        #[arg(long)]
        all: bool,
        /// NxCxHxW; defaults to the three suite shapes.
        #[arg(long, value_parser = args::parse_shape)]
        shape: Option<args::ShapeArg>,
        #[command(flatten)]
        knobs: AttentionArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Seeded forward pass; writes the output as GTF1 and prints a digest.
    Forward {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "kaiming_normal")]
        init: String,
        /// Output tensor file.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(commands::EXIT_CONFIG);
    }
    let result = match cli.command {
        Command::Build {
            net,
            out,
            weights,
            seed,
            init,
        } => commands::build(&net, out.as_deref(), weights.as_deref(), seed, &init),
        Command::Stats {
            net,
            out,
            all_rows,
            assert_golden,
        } => commands::stats(&net, &out, all_rows, assert_golden.as_deref()),
        Command::Golden { file, table, out } => commands::golden(file.as_deref(), table, &out),
        Command::Calibrate {
            arch,
            r,
            g,
            placement,
            out,
            json,
        } => commands::calibrate(&arch, r, g, placement, out.as_deref(), json.as_deref()),
        Command::Gradcheck {
            module,
            all,
            shape,
            knobs,
            seed,
            h,
            tol,
            samples,
            out,
        } => commands::gradcheck(module, all, shape.map(|s| s.0), &knobs, seed, h, tol, samples, &out),
        Command::Forward { net, seed, init, out } => commands::forward(&net, seed, &init, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_CONFIG)
        }
    }
}
