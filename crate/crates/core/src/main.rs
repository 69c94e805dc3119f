use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dtstc::cli::{emit_csv, parse_config_with_overrides, render_config, verify, VerifyOptions};
use dtstc::simulator::{run_compare, run_sweep};
use dtstc::system::SystemConfig;

#[derive(Copy, Clone, Debug, ValueEnum, PartialEq, Eq)]
enum Mode {
    Sweep,
    Verify,
    Compare,
}

#[derive(Parser, Debug)]
#[command(
    name = "dtstc",
    version,
    about = "Delay-tolerant distributed space-time coding BER simulator"
)]
struct Args {
    /// Run configuration with [system], [delays], [optimizer] and [sweep] sections.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set sweep.seed=7` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    #[arg(long, value_enum, default_value_t = Mode::Sweep)]
    mode: Mode,

    #[arg(long)]
    seed: Option<u64>,

    /// Negative control for verify mode: perturb the RLS inverse-correlation update.
    #[arg(long, hide = true)]
    inject_p_perturbation: Option<f64>,
}

fn load_config(args: &Args) -> Result<SystemConfig, String> {
    let text = match &args.config {
        Some(path) => {
            fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?
        }
        None => render_config(&SystemConfig::default()),
    };
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("sweep.seed={seed}"));
    }
    parse_config_with_overrides(&text, &overrides).map_err(|e| e.to_string())
}

fn run(args: &Args) -> Result<ExitCode, String> {
    if args.mode == Mode::Verify {
        let opts = VerifyOptions {
            seed: args.seed.unwrap_or(1),
            p_perturbation: args.inject_p_perturbation,
        };
        let reports = verify(&opts);
        for r in &reports {
            println!("{r}");
        }
        let failed = reports.iter().filter(|r| !r.passed).count();
        println!("{} suites, {failed} failed", reports.len());
        return Ok(if failed == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(2)
        });
    }

    let cfg = load_config(args)?;
    let (result, name) = match args.mode {
        Mode::Compare => (run_compare(&cfg), "compare.csv"),
        _ => (run_sweep(&cfg), "sweep.csv"),
    };
    let result = result.map_err(|e| e.to_string())?;
    let csv = args.out.join(name);
    emit_csv(&result, &csv).map_err(|e| format!("writing {}: {e}", csv.display()))?;
    fs::write(args.out.join("config.ini"), render_config(&result.config))
        .map_err(|e| format!("writing config echo: {e}"))?;
    for p in &result.points {
        println!(
            "{:<22} {:>6.2} dB  ber {:.4e}  [{:.3e}, {:.3e}]  ({} / {})",
            p.scheme.label(),
            p.snr_db,
            p.ber,
            p.ci_low,
            p.ci_high,
            p.bit_errors,
            p.bits_sent
        );
    }
    eprintln!("wrote {} in {:.1?}", csv.display(), result.duration);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&args) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
