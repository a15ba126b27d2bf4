use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tcbe_core::cli::{
    self, BmSection, Bounds, ConvexifySection, DistanceSection, DomainKind, Experiment, GradientSection, KPrime, ModelSection,
    Scenario, SweepSection, VerifyBeSection, VerifyThmBSection, WeightSection,
};
use tcbe_core::models::{ModelSpace, WeightSpec};
use tcbe_core::timechange::DimensionBound;
use tcbe_core::Error;

#[derive(Parser)]
#[command(name = "tcbe", version, about = "Curvature-dimension checks for time-changed Dirichlet forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// flat-circle, flat-torus, sphere-band or conformal-torus
    #[arg(long, default_value = "flat-circle")]
    space: ModelSpace,
    /// Nodes per 2π of chart length
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    /// zero, constant:<value> or harmonic:<amplitude>
    #[arg(long, default_value = "zero", value_parser = parse_weight)]
    weight: WeightSpec,
    #[arg(long, default_value = "2")]
    n: DimensionBound,
    #[arg(long, default_value = "inf")]
    nprime: DimensionBound,
    /// Constant K' to test instead of the predicted minimum
    #[arg(long, allow_negative_numbers = true)]
    kprime: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pass/fail tolerance of the experiment (required)
    #[arg(long)]
    tol: f64,
    #[arg(long, default_value = "tcbe-output")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Integrated curvature-dimension defects of the base and transformed generators
    VerifyBe(Common),
    /// Predicted transformed curvature bound against the smooth oracle
    #[command(name = "verify-thmB")]
    VerifyThmB(Common),
    /// Pointwise gradient estimate along the transformed heat flow
    GradientEstimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1")]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Primal and dual conformal distances on random pairs (--tol bounds the relative gap)
    Distance {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long)]
        no_diagonals: bool,
    },
    /// Monte Carlo time-changed walk against the transformed semigroup (--tol is the largest |z|)
    BmCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0.5)]
        time: f64,
        #[arg(long, default_value_t = 0)]
        start_node: usize,
    },
    /// Convexifying weight for a disc or disc complement on the flat torus (--tol bounds the Laplacian defect)
    Convexify {
        #[command(flatten)]
        common: Common,
        /// disc-complement or disc
        #[arg(long, default_value = "disc-complement", value_parser = parse_domain)]
        domain: DomainKind,
        #[arg(long)]
        radius: f64,
        #[arg(long, allow_negative_numbers = true)]
        lprime: f64,
        #[arg(long)]
        r0: f64,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Random sweeps of the matrix inequality and the quadratic-form grid
    SweepInequalities {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Run a scenario file
    Run {
        config: PathBuf,
        /// Run independent experiments concurrently
        #[arg(long)]
        parallel: bool,
    },
}

fn parse_weight(s: &str) -> Result<WeightSpec, String> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
    let num = |a: Option<&str>| -> Result<f64, String> {
        a.ok_or_else(|| format!("weight '{kind}' needs a number, e.g. {kind}:0.1"))?
            .parse::<f64>()
            .map_err(|e| e.to_string())
    };
    match kind {
        "zero" if arg.is_none() => Ok(WeightSpec::Zero),
        "constant" => Ok(WeightSpec::Constant { value: num(arg)? }),
        "harmonic" => Ok(WeightSpec::Harmonic { amplitude: num(arg)? }),
        _ => Err(format!("unknown weight '{s}'; use zero, constant:<value> or harmonic:<amplitude>")),
    }
}

fn parse_domain(s: &str) -> Result<DomainKind, String> {
    match s {
        "disc-complement" => Ok(DomainKind::DiscComplement),
        "disc" => Ok(DomainKind::Disc),
        _ => Err(format!("unknown domain '{s}'; use disc-complement or disc")),
    }
}

fn scenario(experiment: Experiment, c: &Common) -> Scenario {
    Scenario {
        name: experiment.name().to_string(),
        seed: c.seed,
        output_dir: c.out.clone(),
        experiments: vec![experiment],
        parallel: false,
        model: ModelSection { space: c.space, resolution: c.resolution },
        weight: WeightSection::from(c.weight),
        bounds: Bounds { n: c.n, nprime: c.nprime, kprime: c.kprime.map_or(KPrime::Predicted, KPrime::Value) },
        verify_be: None,
        verify_thmb: None,
        gradient_estimate: None,
        distance: None,
        bm_check: None,
        convexify: None,
        sweeps: None,
    }
}

fn build(command: Command) -> Result<Scenario, Error> {
    let s = match command {
        Command::VerifyBe(c) => Scenario { verify_be: Some(VerifyBeSection { tolerance: c.tol }), ..scenario(Experiment::VerifyBe, &c) },
        Command::VerifyThmB(c) => {
            Scenario { verify_thmb: Some(VerifyThmBSection { tolerance: c.tol }), ..scenario(Experiment::VerifyThmB, &c) }
        }
        Command::GradientEstimate { common: c, times, dt } => Scenario {
            gradient_estimate: Some(GradientSection { tolerance: c.tol, times, dt }),
            ..scenario(Experiment::GradientEstimate, &c)
        },
        Command::Distance { common: c, pairs, no_diagonals } => Scenario {
            distance: Some(DistanceSection { tolerance: c.tol, pairs, diagonals: !no_diagonals }),
            ..scenario(Experiment::Distance, &c)
        },
        Command::BmCheck { common: c, paths, time, start_node } => Scenario {
            bm_check: Some(BmSection { z_max: c.tol, paths, time, start_node }),
            ..scenario(Experiment::BmCheck, &c)
        },
        Command::Convexify { common: c, domain, radius, lprime, r0, pairs } => Scenario {
            convexify: Some(ConvexifySection { laplacian_tolerance: c.tol, domain, radius, lprime, r0, pairs }),
            ..scenario(Experiment::Convexify, &c)
        },
        Command::SweepInequalities { common: c, samples } => {
            Scenario { sweeps: Some(SweepSection { tolerance: c.tol, samples }), ..scenario(Experiment::Sweeps, &c) }
        }
        Command::Run { config, parallel } => {
            let mut s = cli::parse_config(&config)?;
            s.parallel |= parallel;
            return Ok(s);
        }
    };
    s.validate(None)?;
    Ok(s)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let scenario = match build(args.command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("tcbe: {e}");
            return ExitCode::from(2);
        }
    };
    match cli::run(&scenario) {
        Ok(report) => {
            for e in &report.experiments {
                println!("{} {}", if e.pass { "PASS" } else { "FAIL" }, e.experiment);
            }
            println!("report: {}", scenario.output_dir.join("report.json").display());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("tcbe: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("tcbe: {e}");
            ExitCode::from(1)
        }
    }
}
