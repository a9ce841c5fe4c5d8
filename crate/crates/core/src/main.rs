use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sasaki_berger::flow::Bundle;
use sasaki_berger::runner::{exit_code_for, load_config, run, Command, Overrides};

#[derive(Parser)]
#[command(version, about = "Geodesics of Berger-deformed Sasaki metrics over complex space forms")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the lifted connection against the Koszul formula, torsion and metric compatibility
    VerifyConnection(Flags),
    /// Integrate one bundle geodesic and report conserved quantities
    Integrate(Flags),
    /// Curvature profile of one projected geodesic
    Curvatures(Flags),
    /// Every claim over a seed sweep
    Theorems(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bundle: Option<Bundle>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    m: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    pmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// random jets for the connection checks
    #[arg(long)]
    samples: Option<usize>,
    /// random initial conditions for `theorems`
    #[arg(long)]
    sweep: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// flip the sign of the vertical-vertical correction
    #[arg(long)]
    mutate: bool,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            bundle: self.bundle,
            n: self.n,
            m: self.m,
            delta: self.delta,
            step: self.step,
            sigma_max: self.sigma_max,
            p_max: self.pmax,
            seed: self.seed,
            samples: self.samples,
            sweep: self.sweep,
            out: self.out.clone(),
            mutation: self.mutate,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Cmd::VerifyConnection(f) => (Command::VerifyConnection, f),
        Cmd::Integrate(f) => (Command::Integrate, f),
        Cmd::Curvatures(f) => (Command::Curvatures, f),
        Cmd::Theorems(f) => (Command::Theorems, f),
    };
    let result = load_config(flags.config.as_deref(), &flags.overrides()).and_then(|config| run(command, &config));
    match result {
        Ok(output) => {
            for v in &output.report.verdicts {
                let residual = v.residual.map(|r| format!("{r:e}")).unwrap_or_else(|| "-".into());
                let status = serde_json::to_value(v.status).ok().and_then(|s| s.as_str().map(String::from)).unwrap_or_default();
                println!("{:<26} {status:<15} {residual}", v.claim);
            }
            println!("report: {}", output.report_path.display());
            eprintln!("{} finished in {:.2} s", command.name(), output.seconds);
            if !output.report.pass {
                eprintln!("failed: {}", output.report.failed.join(", "));
            }
            ExitCode::from(output.exit_code() as u8)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
