//! meshsim: command line driver for the mesh simulation library.
//!
//! Subcommands cover the Monte Carlo sweep harness, single-instance error
//! heatmaps, statistical checks of the Haar phase sampler, closed-form error
//! predictions, and ideal phase decomposition of a unitary read from a file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use meshsim_core::correction::predict;
use meshsim_core::decompose::{clements_decompose, reck_decompose};
use meshsim_core::experiments::{
    error_heatmap, haar_stats_check, median, rows_to_csv, run_sweep, triangle_means, ErrorFamily,
    Method, SweepRow, SweepSpec,
};
use meshsim_core::matrix::read_matrix;
use meshsim_core::mesh::Topology;

#[derive(Parser)]
#[command(
    name = "meshsim",
    version,
    about = "Simulate and configure programmable photonic MZI meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_topology(s: &str) -> Result<Topology, String> {
    match s {
        "reck" => Ok(Topology::Reck),
        // The rectangular grid ships with its tap monitors so black-box
        // configuration has somewhere to look.
        "clements" => Ok(Topology::ClementsTapped),
        other => Err(format!(
            "unknown topology {:?} (expected reck or clements)",
            other
        )),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: meshsim_core::MeshError| e.to_string())
}

fn parse_family(s: &str) -> Result<ErrorFamily, String> {
    match s {
        "uncorrelated" => Ok(ErrorFamily::Uncorrelated),
        "correlated" => Ok(ErrorFamily::Correlated),
        other => Err(format!(
            "unknown error model {:?} (expected uncorrelated or correlated)",
            other
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo sweep comparing configuration methods over a grid
    Sweep {
        #[arg(long, value_parser = parse_topology)]
        topology: Topology,
        /// Comma separated subset of none,local,direct,ratio
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_method)]
        methods: Vec<Method>,
        /// Comma separated mesh sizes
        #[arg(long = "N", value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// Comma separated error strengths
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        /// Trials per (size, strength) cell
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Error family the strengths parameterize
        #[arg(long, default_value = "uncorrelated", value_parser = parse_family)]
        model: ErrorFamily,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Entrywise error magnitudes of one configured instance
    Heatmap {
        #[arg(long, value_parser = parse_topology)]
        topology: Topology,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kolmogorov-Smirnov checks of the Haar phase sampler
    HaarCheck {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form error and coverage predictions
    Predict {
        #[arg(long = "N")]
        n: usize,
        /// Error strength (rms or common offset, depending on the model)
        #[arg(long)]
        sigma: f64,
        #[arg(long, value_parser = parse_family)]
        model: ErrorFamily,
    },
    /// Ideal phase decomposition of a unitary read from a matrix file
    Decompose {
        /// Matrix file: a size line, then rows of re,im pairs
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_topology)]
        topology: Topology,
        /// Output CSV of phase settings
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Sweep {
            topology,
            methods,
            n,
            sigma,
            trials,
            seed,
            model,
            out,
        } => {
            let spec = SweepSpec {
                topology,
                methods,
                sizes: n,
                family: model,
                params: sigma,
                trials,
                master_seed: seed,
            };
            let rows = run_sweep(&spec)?;
            fs::write(&out, rows_to_csv(&rows))
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            print_cell_summary(&rows);
        }
        Command::Heatmap {
            topology,
            method,
            n,
            sigma,
            seed,
            out,
        } => {
            let map = error_heatmap(topology, n, sigma, method, seed)?;
            let mut text = String::with_capacity(16 * n * n);
            for row in &map {
                let line: Vec<String> = row.iter().map(|v| format!("{:.6e}", v)).collect();
                text.push_str(&line.join(","));
                text.push('\n');
            }
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {0}x{0} heatmap to {1}", n, out.display());
            let (ul, lr) = triangle_means(&map);
            if ul > 0.0 {
                println!(
                    "upper-left mean {:.4e}, lower-right mean {:.4e}, ratio {:.2}",
                    ul,
                    lr,
                    lr / ul
                );
            } else {
                println!("upper-left mean {:.4e}, lower-right mean {:.4e}", ul, lr);
            }
        }
        Command::HaarCheck {
            n,
            samples,
            seed,
            out,
        } => {
            let checks = haar_stats_check(n, samples, seed)?;
            let mut text = String::from("quantity,rank,samples,ks_distance,p_value\n");
            for c in &checks {
                let quantity = if c.rank == 0 { "phi" } else { "theta" };
                writeln!(
                    text,
                    "{},{},{},{},{}",
                    quantity, c.rank, c.samples, c.distance, c.p_value
                )?;
            }
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            let rejected = checks.iter().filter(|c| c.p_value < 0.01).count();
            println!(
                "{} checks written to {}, {} below p = 0.01",
                checks.len(),
                out.display(),
                rejected
            );
        }
        Command::Predict { n, sigma, model } => {
            let p = predict(n, &model.model(sigma))?;
            println!("{} model, N = {}, strength = {}", model.label(), n, sigma);
            println!("  E uncorrected         {:.6e}", p.e_uncorrected);
            println!("  coverage              {:.6e}", p.coverage);
            println!("  expected clipped      {:.6e}", p.n_unsat);
            println!("  E corrected floor     {:.6e}", p.e_corrected);
        }
        Command::Decompose {
            input,
            topology,
            out,
        } => {
            let target =
                read_matrix(&input).with_context(|| format!("reading {}", input.display()))?;
            let mesh = match topology {
                Topology::Reck => reck_decompose(&target)?,
                _ => clements_decompose(&target)?,
            };
            let mut text = String::from("phase,a,b,value\n");
            for c in mesh.crossings() {
                writeln!(text, "theta,{},{},{}", c.diag, c.pos, c.theta)?;
                writeln!(text, "phi,{},{},{}", c.diag, c.pos, c.phi)?;
            }
            match mesh.topology() {
                Topology::Reck => {
                    for (wire, v) in mesh.input_phases().iter().enumerate() {
                        writeln!(text, "input,{},0,{}", wire, v)?;
                    }
                }
                _ => {
                    for (wire, v) in mesh.diag_phases().iter().enumerate() {
                        writeln!(text, "diag,{},0,{}", wire, v)?;
                    }
                }
            }
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote phases for {} cells to {}",
                mesh.crossing_count(),
                out.display()
            );
        }
    }
    Ok(())
}

/// Per-cell medians, the summary statistic the sweep figures are built on.
fn print_cell_summary(rows: &[SweepRow]) {
    let mut cells: BTreeMap<(usize, u64, Method), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.n, r.error_param.to_bits(), r.method))
            .or_default()
            .push(r);
    }
    for ((n, param_bits, method), cell) in &cells {
        let param = f64::from_bits(*param_bits);
        if cell.iter().all(|r| r.e_corrected.is_nan()) {
            println!(
                "  N={:<4} strength={:<8} {:<7} not runnable on this layout",
                n,
                param,
                method.label()
            );
            continue;
        }
        let unc: Vec<f64> = cell.iter().map(|r| r.e_uncorrected).collect();
        let corr: Vec<f64> = cell.iter().map(|r| r.e_corrected).collect();
        let clipped =
            cell.iter().map(|r| r.n_unsat).sum::<usize>() as f64 / cell.len() as f64;
        println!(
            "  N={:<4} strength={:<8} {:<7} median E_unc {:.4e}  median E_corr {:.4e}  mean clipped {:.1}",
            n,
            param,
            method.label(),
            median(&unc),
            median(&corr),
            clipped
        );
    }
}
