//! Command-line front end for `spherelab`.
//!
//! Exit codes: 0 on success or a passing experiment, 1 when an experiment
//! verdict is `fail`, 2 on usage, parse, or input errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spherelab::experiments::{self, ExperimentReport, GradObjective, Verdict};
use spherelab::io::{self, load_features, load_labels, load_pairs, to_json_string};
use spherelab::metrics::{self, LossSpec};
use spherelab::optimize::{self, OptConfig, StepRecord, Trajectory};
use spherelab::special::lunif_bounds;
use spherelab::sphere::sample_uniform_sphere;
use spherelab::synth::{InitMode, SyntheticDataset};
use spherelab::{Error, FeatureSet, PairedFeatures};

#[derive(Debug, Args)]
pub struct Common {
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct PairInputs {
    /// Feature CSV (left views, or the only set).
    #[arg(long)]
    pub features: PathBuf,
    /// Right-view feature CSV; rows pair up with `--features` unless `--pairs` is given.
    #[arg(long)]
    pub features_right: Option<PathBuf>,
    /// Pair CSV indexing into the left and right feature files.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Alignment, uniformity, contrastive and entropy metrics of feature files.
    Metrics {
        #[command(flatten)]
        inputs: PairInputs,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Range of the uniformity loss and the pdist estimator bound.
    Bounds {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
    },
    /// Minimize the Gaussian energy of N points on the sphere.
    OptimizePoints {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature CSV for the final configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize free per-view embeddings of a synthetic dataset.
    OptimizeEmbed {
        /// Dataset JSON.
        #[arg(long)]
        dataset: PathBuf,
        /// Loss weights JSON; missing fields take their defaults.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Seed for initialization; defaults to the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = ["random", "clustered"], default_value = "random")]
        init: String,
        /// Cluster spread for `--init clustered`.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        out_left: Option<PathBuf>,
        #[arg(long)]
        out_right: Option<PathBuf>,
    },
    /// Convergence rate of the contrastive loss in the number of negatives.
    Asymptotics {
        /// Pool CSV; defaults to `--n` uniform points on S^{dim-1}.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        features_right: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Smallest M as a power of two.
        #[arg(long, default_value_t = 4)]
        m_min_exp: u32,
        /// Largest M as a power of two.
        #[arg(long, default_value_t = 14)]
        m_max_exp: u32,
        #[arg(long, default_value_t = 64)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check that the limit loss equals the negative vMF resubstitution entropy plus its normalizer.
    EntropyCheck {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Exhaustive minimizers of the single-negative contrastive loss on a circle grid.
    Bruteforce {
        /// Number of items.
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        grid: usize,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of an analytic gradient.
    Gradcheck {
        /// point_energy, align, unif_pdist or contrastive_minibatch.
        #[arg(long)]
        objective: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
    /// Leave-one-out k-NN accuracy.
    Knn {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// vMF KDE over angles of 2-d features, written as CSV.
    Kde {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1024)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of positive-pair distances, written as CSV.
    Pairhist {
        #[command(flatten)]
        inputs: PairInputs,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "spherelab",
    version,
    about = "Alignment and uniformity on the unit hypersphere"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

struct Outcome {
    json: String,
    verdict: Verdict,
}

impl Outcome {
    fn plain<T: Serialize>(value: &T) -> Result<Self, Error> {
        Ok(Self {
            json: to_json_string(value)?,
            verdict: Verdict::Informational,
        })
    }

    fn report(r: &ExperimentReport) -> Result<Self, Error> {
        Ok(Self {
            json: to_json_string(r)?,
            verdict: r.verdict,
        })
    }
}

/// Parse `argv` (program name first), run the subcommand, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Cli::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let msg = e.to_string();
                    eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
                    2
                }
            };
        }
    };
    let go = || -> Result<Outcome, Error> {
        if let Some(p) = &args.common.report {
            check_writable(p)?;
        }
        execute(&args.command)
    };
    let result = if args.common.strict {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(go),
            Err(e) => Err(Error::Io(e.to_string())),
        }
    } else {
        go()
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let written = match &args.common.report {
        Some(p) => std::fs::write(p, &outcome.json).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{}", outcome.json);
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return 2;
    }
    match outcome.verdict {
        Verdict::Fail => 1,
        _ => 0,
    }
}

/// Output paths must have an existing parent directory; checked before any work.
fn check_writable(path: &Path) -> Result<(), Error> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Error::Io(format!(
            "{}: output directory does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn load_pair_inputs(inputs: &PairInputs) -> Result<(FeatureSet, Option<PairedFeatures>), Error> {
    let left = load_features(&inputs.features)?;
    let right = inputs
        .features_right
        .as_ref()
        .map(load_features)
        .transpose()?;
    let pairs = match (&inputs.pairs, right) {
        (Some(p), Some(r)) => Some(load_pairs(p, &left, &r)?),
        (Some(p), None) => Some(load_pairs(p, &left, &left)?),
        (None, Some(r)) => {
            if r.n_points() != left.n_points() {
                return Err(Error::CountMismatch(format!(
                    "{} left rows but {} right rows",
                    left.n_points(),
                    r.n_points()
                )));
            }
            Some(PairedFeatures::new(left.clone(), r)?)
        }
        (None, None) => None,
    };
    Ok((left, pairs))
}

#[derive(Serialize)]
struct MetricsOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    align: Option<f64>,
    unif_pdist: f64,
    unif_cdist: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    contrastive_minibatch: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit_first_term: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit_second_term: Option<f64>,
    resub_entropy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_concentration: Option<f64>,
}

#[derive(Serialize)]
struct OptimizeOut<'a> {
    final_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_align: Option<f64>,
    final_unif_pdist: f64,
    grad_norm: f64,
    steps_taken: usize,
    converged: bool,
    trajectory: &'a [StepRecord],
}

impl<'a> OptimizeOut<'a> {
    fn new(traj: &'a Trajectory) -> Result<Self, Error> {
        let last = traj.last().ok_or(Error::EmptyInput)?;
        Ok(Self {
            final_objective: last.objective,
            final_align: last.align_metric,
            final_unif_pdist: last.unif_metric,
            grad_norm: last.grad_norm,
            steps_taken: traj.steps_taken,
            converged: traj.converged,
            trajectory: &traj.steps,
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        msg: format!("{}: {e}", path.display()),
    })
}

fn opt_config(steps: usize, seed: u64) -> Result<OptConfig, Error> {
    let cfg = OptConfig {
        max_steps: steps,
        seed,
        ..OptConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: &Command) -> Result<Outcome, Error> {
    match cmd {
        Command::Metrics {
            inputs,
            labels,
            alpha,
            t,
            tau,
        } => {
            let (features, pairs) = load_pair_inputs(inputs)?;
            let labels = labels
                .as_ref()
                .map(|p| load_labels(p, features.n_points()))
                .transpose()?;
            let limit = pairs
                .as_ref()
                .map(|p| metrics::limit_loss(p, &features, *tau))
                .transpose()?;
            let out = MetricsOut {
                align: pairs
                    .as_ref()
                    .map(|p| metrics::align_loss(p, *alpha).map(|v| v.value))
                    .transpose()?,
                unif_pdist: metrics::unif_loss_pdist(&features, *t)?.value,
                unif_cdist: metrics::unif_loss_cdist(&features, *t)?.value,
                contrastive_minibatch: pairs
                    .as_ref()
                    .map(|p| metrics::contrastive_minibatch(p, *tau).map(|v| v.value))
                    .transpose()?,
                limit_first_term: limit.map(|l| l.first_term),
                limit_second_term: limit.map(|l| l.second_term),
                resub_entropy: metrics::resub_entropy(&features, *tau)?,
                class_concentration: labels
                    .as_ref()
                    .map(|l| metrics::class_concentration(&features, l, *alpha).map(|v| v.value))
                    .transpose()?,
            };
            Outcome::plain(&out)
        }
        Command::Bounds { dim, t, batch } => Outcome::plain(&lunif_bounds(*dim, *t, *batch)?),
        Command::OptimizePoints {
            n,
            dim,
            t,
            steps,
            seed,
            out,
        } => {
            if let Some(p) = out {
                check_writable(p)?;
            }
            let cfg = opt_config(*steps, *seed)?;
            let (points, traj) = optimize::minimize_point_energy(*n, *dim, *t, &cfg)?;
            if let Some(p) = out {
                io::save_features(&points, p)?;
            }
            Outcome::plain(&OptimizeOut::new(&traj)?)
        }
        Command::OptimizeEmbed {
            dataset,
            spec,
            steps,
            seed,
            init,
            noise,
            out_left,
            out_right,
        } => {
            for p in out_left.iter().chain(out_right) {
                check_writable(p)?;
            }
            let ds: SyntheticDataset = read_json(dataset)?;
            ds.validate()?;
            let spec: LossSpec = read_json(spec)?;
            spec.validate_objective()?;
            let mode = match init.as_str() {
                "clustered" => InitMode::Clustered { noise: *noise },
                _ => InitMode::Random,
            };
            let cfg = opt_config(*steps, seed.unwrap_or(ds.seed))?;
            let (emb, traj) = optimize::optimize_embeddings(&ds, &spec, mode, &cfg)?;
            if let Some(p) = out_left {
                io::save_features(emb.left(), p)?;
            }
            if let Some(p) = out_right {
                io::save_features(emb.right(), p)?;
            }
            Outcome::plain(&OptimizeOut::new(&traj)?)
        }
        Command::Asymptotics {
            features,
            features_right,
            pairs,
            n,
            dim,
            tau,
            m_min_exp,
            m_max_exp,
            trials,
            seed,
        } => {
            let (pool, pairs) = match features {
                Some(f) => {
                    let inputs = PairInputs {
                        features: f.clone(),
                        features_right: features_right.clone(),
                        pairs: pairs.clone(),
                    };
                    let (pool, pairs) = load_pair_inputs(&inputs)?;
                    let pairs = pairs.unwrap_or_else(|| PairedFeatures::aligned(pool.clone()));
                    (pool, pairs)
                }
                None => {
                    if features_right.is_some() || pairs.is_some() {
                        return Err(Error::InvalidConfig(
                            "--features-right/--pairs require --features".into(),
                        ));
                    }
                    let pool = sample_uniform_sphere(*n, *dim, *seed)?;
                    (pool.clone(), PairedFeatures::aligned(pool))
                }
            };
            if m_min_exp >= m_max_exp || *m_max_exp > 30 {
                return Err(Error::InvalidConfig(
                    "need m-min-exp < m-max-exp <= 30".into(),
                ));
            }
            let grid: Vec<usize> = (*m_min_exp..=*m_max_exp).map(|e| 1usize << e).collect();
            Outcome::report(&experiments::asymptotics_experiment(
                &pairs, &pool, *tau, &grid, *trials, *seed,
            )?)
        }
        Command::EntropyCheck { features, tau } => {
            let f = load_features(features)?;
            Outcome::report(&experiments::entropy_identity_check(&f, *tau)?)
        }
        Command::Bruteforce { n, grid, tau, seed } => Outcome::report(
            &experiments::brute_force_min_contrastive(*n, *grid, *tau, *seed)?,
        ),
        Command::Gradcheck {
            objective,
            n,
            dim,
            seed,
            eps,
        } => {
            let obj: GradObjective = objective.parse()?;
            Outcome::report(&experiments::finite_diff_gradcheck(
                obj, *n, *dim, *seed, *eps,
            )?)
        }
        Command::Knn {
            features,
            labels,
            k,
        } => {
            let f = load_features(features)?;
            let labels = load_labels(labels, f.n_points())?;
            Outcome::report(&experiments::knn_report(&f, &labels, *k)?)
        }
        Command::Kde {
            features,
            kappa,
            resolution,
            out,
        } => {
            check_writable(out)?;
            let f = load_features(features)?;
            let (curve, report) = experiments::kde_report(&f, *kappa, *resolution)?;
            io::write_curve(&curve, ("angle", "density"), create(out)?)?;
            Outcome::report(&report)
        }
        Command::Pairhist { inputs, bins, out } => {
            check_writable(out)?;
            let (_, pairs) = load_pair_inputs(inputs)?;
            let pairs = pairs.ok_or_else(|| {
                Error::InvalidConfig("pairhist needs --pairs or --features-right".into())
            })?;
            let (hist, report) = experiments::pairhist_report(&pairs, *bins)?;
            io::write_curve(&hist, ("distance", "count"), create(out)?)?;
            Outcome::report(&report)
        }
    }
}

fn create(path: &Path) -> Result<std::fs::File, Error> {
    std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
