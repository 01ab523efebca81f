//! Command-line front end: argument and config handling, dispatch to the
//! core library, and exit codes.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on precondition
//! violations, 3 on numerical hard failures.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hardball_core::config::{parse_config, Config};
use hardball_core::diagnostics::census::DEFAULT_CENSUS_COLLISIONS;
use hardball_core::diagnostics::lyapunov::{lyapunov_spectrum, product_lyapunov_spectrum};
use hardball_core::diagnostics::{ball_avoiding_scan, ergodic_averages, richness_census, Observable};
use hardball_core::dynamics::jsonl::{parse_event_log, write_segment};
use hardball_core::dynamics::{simulate, StopCondition, TrajectorySegment};
use hardball_core::neutral::{
    check_key_lemma_3_5, check_lemma_3_6, check_lemma_3_8, check_lemma_3_9, find_lemma_3_9_window, neutral_space,
};
use hardball_core::product::{
    check_product_decomposition, pair_to_xy, sample_pair_state, scatterer_radius, write_subsystem_log, ProductMode,
    Subsystem,
};
use hardball_core::symbolic::{is_rich, symbolic_sequence};
use hardball_core::unfolding::{unfold_axis, unfold_linear};
use hardball_core::{sample_liouville, Error, ErrorClass, ModelParams};

/// Config keys; each mirrors the flag of the same name.
const CONFIG_KEYS: &[&str] = &[
    "nu",
    "k",
    "r",
    "seed",
    "out",
    "input",
    "events",
    "collisions",
    "duration",
    "samples",
    "period",
    "product",
    "mode",
    "log-dir",
    "observable",
    "orbits",
    "t-orbit",
    "ensemble",
    "t-free",
    "axis",
];

#[derive(Parser, Debug)]
#[command(name = "hardball", version, about = "Two hard balls in a box/torus container")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Dimension of the container.
    #[arg(long, global = true)]
    nu: Option<usize>,
    /// Number of walled axes.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Ball radius.
    #[arg(long, global = true)]
    r: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (standard output when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat `key = value` file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

/// Where a segment comes from: an event log, or a fresh Liouville sample.
#[derive(Args, Debug, Default)]
struct Source {
    /// Read the segment from a JSONL event log instead of simulating.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    collisions: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate from a Liouville sample and write the JSONL event log.
    Simulate(Source),
    /// Symbolic collision sequence of a segment.
    Symbolic(Source),
    /// Neutral subspace of a segment.
    Neutral(Source),
    /// Check one of the neutral-space lemmas on a segment.
    LemmaCheck {
        lemma: Lemma,
        #[command(flatten)]
        source: Source,
    },
    /// Unfold walled axes and check the folding identities.
    Unfold {
        #[command(subcommand)]
        kind: Unfold,
    },
    /// Compare the pair dynamics with the two Sinai billiards.
    ProductCheck {
        #[arg(long)]
        events: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Write pair, x and y event logs into this directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Lyapunov spectrum by QR re-orthonormalization.
    Lyapunov {
        #[arg(long)]
        events: Option<usize>,
        /// Time between re-orthonormalizations.
        #[arg(long)]
        period: Option<f64>,
        /// Use the product billiard at fixed partial energies.
        #[arg(long)]
        product: bool,
    },
    /// Richness and sufficiency census over Liouville samples.
    Census {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        collisions: Option<usize>,
    },
    /// Time averages against ensemble averages.
    Ergodic {
        /// Observable id; all catalog observables when absent.
        #[arg(long)]
        observable: Option<String>,
        #[arg(long)]
        orbits: Option<usize>,
        #[arg(long)]
        t_orbit: Option<f64>,
        #[arg(long)]
        ensemble: Option<usize>,
    },
    /// Flag samples without a ball collision on `[0, t_free]`.
    ScanAvoiding {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        t_free: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Lemma {
    #[value(name = "3.6")]
    OneWindow,
    #[value(name = "3.8")]
    Covering,
    #[value(name = "3.9")]
    FullEmptyProper,
    #[value(name = "3.5")]
    Key,
}

#[derive(Subcommand, Debug)]
enum Unfold {
    /// Lift a collision-free stretch to straight lines.
    Linear {
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Re-simulate a segment with one box axis unfolded.
    Axis {
        /// Axis label, counted from 1.
        #[arg(long)]
        axis: Option<usize>,
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Independent,
    Lockstep,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        <Mode as ValueEnum>::from_str(s, false)
    }
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Core(e)
    }
}

type Outcome<T> = Result<T, Failure>;

/// Flags with config fallbacks.
struct Settings {
    config: Config,
}

impl Settings {
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Outcome<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => Ok(self.config.parse(key)?),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Outcome<T> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Outcome<T> {
        self.pick(flag, key)?.ok_or_else(|| Failure::Usage(format!("--{key} is required (flag or config key)")))
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.config.get(key).map(PathBuf::from))
    }
}

/// Run the command line `argv` (program name first) and return the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            1
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Precondition => 2,
                ErrorClass::HardFailure => 3,
            }
        }
    }
}

fn execute(cli: Cli) -> Outcome<()> {
    let config = match &cli.common.config {
        Some(path) => parse_config(&read(path)?)?,
        None => Config::default(),
    };
    config.check_keys(CONFIG_KEYS)?;
    let s = Settings { config };
    let out = s.path(cli.common.out.clone(), "out");
    let seed = s.or(cli.common.seed, "seed", 0)?;
    let params = || -> Outcome<ModelParams> {
        let nu = s.required(cli.common.nu, "nu")?;
        let k = s.required(cli.common.k, "k")?;
        let r = s.required(cli.common.r, "r")?;
        Ok(ModelParams::new(nu, k, r)?)
    };
    let text = match cli.command {
        Command::Simulate(src) => {
            let seg = segment(&s, src, &params, seed, StopCondition::events(100))?;
            write_segment(&seg, Some(seed), None)
        }
        Command::Symbolic(src) => {
            let seg = segment(&s, src, &params, seed, StopCondition::ball_collisions(10))?;
            let sigma = symbolic_sequence(&seg)?;
            let rich = is_rich(&sigma, &seg.params).rich;
            json(&sigma.record(rich))?
        }
        Command::Neutral(src) => {
            let seg = segment(&s, src, &params, seed, StopCondition::ball_collisions(10))?;
            json(&neutral_space(&seg)?)?
        }
        Command::LemmaCheck { lemma, source } => {
            let default = match lemma {
                Lemma::OneWindow => StopCondition::ball_collisions(2),
                _ => StopCondition::ball_collisions(DEFAULT_CENSUS_COLLISIONS),
            };
            let seg = segment(&s, source, &params, seed, default)?;
            match lemma {
                Lemma::OneWindow => json(&check_lemma_3_6(&seg)?)?,
                Lemma::Covering => json(&check_lemma_3_8(&seg)?)?,
                Lemma::FullEmptyProper => json(&check_lemma_3_9(&find_lemma_3_9_window(&seg)?)?)?,
                Lemma::Key => json(&check_key_lemma_3_5(&seg)?)?,
            }
        }
        Command::Unfold { kind: Unfold::Linear { duration, samples } } => {
            let p = params()?;
            let x = sample_liouville(&p, seed)?;
            let duration = match s.pick(duration, "duration")? {
                Some(d) => d,
                None => {
                    let first = simulate(&x, &StopCondition::ball_collisions(1), &p)?;
                    0.5 * first.events.last().map_or(first.t_end, |e| e.time)
                }
            };
            json(&unfold_linear(&x, duration, s.or(samples, "samples", 100)?, &p)?)?
        }
        Command::Unfold { kind: Unfold::Axis { axis, source } } => {
            let label: usize = s.required(axis, "axis")?;
            if label == 0 {
                return Err(Failure::Usage("--axis counts from 1".into()));
            }
            let seg = segment(&s, source, &params, seed, StopCondition::ball_collisions(1))?;
            json(&unfold_axis(&seg, label - 1)?)?
        }
        Command::ProductCheck { events, mode, log_dir } => {
            let p = params()?;
            let mode = match s.or(mode, "mode", Mode::Independent)? {
                Mode::Independent => ProductMode::Independent,
                Mode::Lockstep => ProductMode::Lockstep,
            };
            let x = sample_pair_state(&p, seed)?;
            let n = s.or(events, "events", 1000)?;
            let check = check_product_decomposition(&x, n, &p, mode)?;
            if let Some(dir) = s.path(log_dir, "log-dir") {
                fs::create_dir_all(&dir).map_err(Error::from)?;
                write(Some(&dir.join("pair.jsonl")), &write_segment(&check.pair, Some(seed), Some("pair")))?;
                if let Some(run) = &check.product {
                    let radius = scatterer_radius(&p);
                    for (which, name) in [(Subsystem::X, "x.jsonl"), (Subsystem::Y, "y.jsonl")] {
                        let sub = match which {
                            Subsystem::X => &run.x,
                            Subsystem::Y => &run.y,
                        };
                        write(Some(&dir.join(name)), &write_subsystem_log(sub, which, radius, &p, Some(seed)))?;
                    }
                }
            }
            json(&check.comparison)?
        }
        Command::Lyapunov { events, period, product } => {
            let p = params()?;
            let n = s.or(events, "events", 100_000)?;
            let period = s.or(period, "period", 1.0)?;
            let product = product || s.or(None, "product", false)?;
            let report = if product {
                let z = pair_to_xy(&sample_pair_state(&p, seed)?);
                product_lyapunov_spectrum(&z, scatterer_radius(&p), n, period, p.tol)?
            } else {
                lyapunov_spectrum(&sample_liouville(&p, seed)?, n, period, &p)?
            };
            json(&report)?
        }
        Command::Census { samples, collisions } => {
            let p = params()?;
            let n = s.or(samples, "samples", 1000)?;
            let c = s.or(collisions, "collisions", DEFAULT_CENSUS_COLLISIONS)?;
            json(&richness_census(&p, n, c, seed)?)?
        }
        Command::Ergodic { observable, orbits, t_orbit, ensemble } => {
            let p = params()?;
            let observables = match s.pick(observable, "observable")? {
                Some(id) => vec![Observable::parse(&id)?],
                None => Observable::CATALOG.to_vec(),
            };
            let reports = ergodic_averages(
                &p,
                &observables,
                s.or(orbits, "orbits", 20)?,
                s.or(t_orbit, "t-orbit", 1e4)?,
                s.or(ensemble, "ensemble", 100_000)?,
                seed,
            )?;
            json(&reports)?
        }
        Command::ScanAvoiding { samples, t_free } => {
            let p = params()?;
            let report = ball_avoiding_scan(&p, s.or(samples, "samples", 1000)?, s.required(t_free, "t-free")?, seed)?;
            json(&report)?
        }
    };
    write(out.as_deref(), &text)
}

/// Load the segment named by `src`, or simulate one from the Liouville
/// sample of `seed`.
fn segment(
    s: &Settings,
    src: Source,
    params: &dyn Fn() -> Outcome<ModelParams>,
    seed: u64,
    default: StopCondition,
) -> Outcome<TrajectorySegment> {
    if let Some(path) = s.path(src.input, "input") {
        return Ok(parse_event_log(&read(&path)?)?.to_segment()?);
    }
    let p = params()?;
    let stop = StopCondition {
        max_events: s.pick(src.events, "events")?,
        max_ball_collisions: s.pick(src.collisions, "collisions")?,
        t_max: s.pick(src.duration, "duration")?,
    };
    let stop = if stop == StopCondition::default() { default } else { stop };
    Ok(simulate(&sample_liouville(&p, seed)?, &stop, &p)?)
}

fn json<T: Serialize>(value: &T) -> Outcome<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    Ok(text)
}

fn read(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: Option<&Path>, text: &str) -> Outcome<()> {
    match path {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Failure::Core(e.into()))
        }
    }
}
