//! Subcommand implementations: thin adapters between flags, files and the
//! library.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::CommandFactory;

use causal_score::dsm::{sgd_train, DsmConfig};
use causal_score::eval::{run_sweep, Axis, BackendChoice, SweepConfig};
use causal_score::nn::{Dims, MlpParams};
use causal_score::order::{discover, score_order, BackendKind, NetConfig, PruneConfig, ScoreBackend};
use causal_score::rng::{stream, Stream};
use causal_score::scm::{build_scm, generate_dag, sample};
use causal_score::sgm::{reverse_sample, train_sgm, OuSchedule, SampleMeta, SgmConfig, TimeNet};
use causal_score::{Dataset, Scm};

use crate::args::{
    AxisArg, Cli, Command, DiscoveryArgs, GenerateArgs, ModelArgs, NetArgs, OrderArgs, PruneArgs,
    ScheduleArgs, SgmSampleArgs, SgmTrainArgs, SweepArgs, SweepBackendArg, TrainScoreArgs,
};

/// Cross-flag checks that single-value parsers cannot express; failures
/// are usage errors.
pub fn check(cli: &Cli) -> std::result::Result<(), clap::Error> {
    let usage = |msg: String| Cli::command().error(ErrorKind::ValueValidation, msg);
    let model = |m: &ModelArgs| {
        if m.sigma_lo > m.sigma_hi {
            return Err(usage(format!(
                "--sigma-lo ({}) must not exceed --sigma-hi ({})",
                m.sigma_lo, m.sigma_hi
            )));
        }
        Ok(())
    };
    let schedule = |s: &ScheduleArgs| {
        if s.t_max <= s.t0 {
            return Err(usage(format!("--t-max ({}) must exceed --t0 ({})", s.t_max, s.t0)));
        }
        Ok(())
    };
    match &cli.command {
        Command::Generate(a) => model(&a.model),
        Command::Sweep(a) => {
            model(&a.model)?;
            if a.grid.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(usage("--grid values must be strictly increasing".into()));
            }
            let integral = matches!(a.axis, AxisArg::N | AxisArg::D);
            for &v in &a.grid {
                let bad = match a.axis {
                    AxisArg::Cm => !(v >= 0.0 && v.is_finite()),
                    AxisArg::N => v < 2.0,
                    AxisArg::D => v < 1.0,
                };
                if bad || (integral && v.fract() != 0.0) {
                    return Err(usage(format!("--grid value {v} is invalid for this axis")));
                }
            }
            Ok(())
        }
        Command::Order(OrderArgs { discovery }) | Command::Prune(PruneArgs { discovery, .. }) => {
            if discovery.backend != crate::args::BackendArg::TrainedNet && discovery.scm.is_none() {
                return Err(usage("--scm is required by the oracle backends".into()));
            }
            Ok(())
        }
        Command::SgmTrain(a) => schedule(&a.schedule),
        Command::SgmSample(a) => schedule(&a.schedule),
        Command::TrainScore(_) => Ok(()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    std::fs::create_dir_all(&g.out)
        .with_context(|| format!("creating output directory {}", g.out.display()))?;
    match &cli.command {
        Command::Generate(a) => generate(a, g.seed, &g.out),
        Command::TrainScore(a) => train_score(a, g.seed, &g.out, g.verbose),
        Command::Order(a) => order(a, g.seed, &g.out),
        Command::Prune(a) => prune(a, g.seed, &g.out),
        Command::Sweep(a) => sweep(a, g.seed, &g.out, g.verbose),
        Command::SgmTrain(a) => sgm_train(a, g.seed, &g.out, g.verbose),
        Command::SgmSample(a) => sgm_sample(a, g.seed, &g.out),
    }
}

fn generate(a: &GenerateArgs, seed: u64, out: &Path) -> Result<()> {
    let mut rng = stream(seed, Stream::Scm);
    let dag = generate_dag(a.d as usize, a.model.edge_prob, &mut rng)?;
    let scm = build_scm(dag, a.model.cm, (a.model.sigma_lo, a.model.sigma_hi), &mut rng)?;
    let data = sample(&scm, a.n as usize, &mut stream(seed, Stream::Data))?;
    scm.save(&out.join("scm.json"))?;
    data.save(&out.join("data.csv"))?;
    Ok(())
}

fn train_score(a: &TrainScoreArgs, seed: u64, out: &Path, verbose: bool) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let scm = a.scm.as_deref().map(Scm::load).transpose()?;
    let dims = Dims::square(data.d(), a.width as usize, a.depth as usize);
    let init = MlpParams::init(dims, &mut stream(seed, Stream::Init))?;
    let cfg = DsmConfig {
        sigma: a.sigma,
        eta: a.eta,
        epochs: a.epochs as usize,
        batch_size: a.batch_size as usize,
        resample_noise: !a.fixed_noise,
        eval_every: a.eval_every as usize,
    };
    let oracle = scm.as_ref().map(|s| (s, &data));
    let (net, report) = sgd_train(init, &data, &cfg, &mut stream(seed, Stream::Noise), oracle)?;
    if verbose {
        if let Some(l) = report.final_loss() {
            eprintln!("final DSM loss {l:.6e}");
        }
    }
    net.save(&out.join("score_net.json"))?;
    write_with(&out.join("train_log.csv"), |w| report.write_csv(w))
}

fn net_config(n: &NetArgs) -> NetConfig {
    NetConfig {
        width: n.width as usize,
        depth: n.depth as usize,
        dsm: DsmConfig {
            sigma: n.dsm_sigma,
            eta: n.eta,
            epochs: n.epochs as usize,
            ..DsmConfig::default()
        },
        warm_start: n.warm_start,
        standardize: !n.no_standardize,
    }
}

fn backend(a: &DiscoveryArgs) -> Result<ScoreBackend> {
    let scm = |p: &Option<PathBuf>| -> Result<Scm> {
        let p = p.as_deref().context("--scm is required by the oracle backends")?;
        Ok(Scm::load(p)?)
    };
    Ok(match BackendKind::from(a.backend) {
        BackendKind::Oracle => ScoreBackend::Oracle(scm(&a.scm)?),
        BackendKind::NoisyOracle => ScoreBackend::NoisyOracle {
            scm: scm(&a.scm)?,
            noise_var: a.noise_var,
        },
        BackendKind::TrainedNet => ScoreBackend::TrainedNet(net_config(&a.net)),
    })
}

fn order(a: &OrderArgs, seed: u64, out: &Path) -> Result<()> {
    let data = Dataset::load(&a.discovery.data)?;
    let backend = backend(&a.discovery)?;
    let result = score_order(&data, &backend, &mut stream(seed, Stream::Order))?;
    result.save(&out.join("order.json"))?;
    Ok(())
}

fn prune(a: &PruneArgs, seed: u64, out: &Path) -> Result<()> {
    let data = Dataset::load(&a.discovery.data)?;
    let backend = backend(&a.discovery)?;
    let cfg = PruneConfig { tau_rel: a.tau_rel };
    let (order, graph) = discover(&data, &backend, &cfg, &mut stream(seed, Stream::Order))?;
    order.save(&out.join("order.json"))?;
    graph.save(&out.join("edges.csv"))?;
    Ok(())
}

fn sweep(a: &SweepArgs, seed: u64, out: &Path, verbose: bool) -> Result<()> {
    let axis = match a.axis {
        AxisArg::Cm => Axis::Cm,
        AxisArg::N => Axis::N,
        AxisArg::D => Axis::D,
    };
    let mut cfg = SweepConfig::new(axis, a.grid.clone());
    cfg.d = a.d as usize;
    cfg.n = a.n as usize;
    cfg.cm = a.model.cm;
    cfg.edge_prob = a.model.edge_prob;
    cfg.sigma_range = (a.model.sigma_lo, a.model.sigma_hi);
    cfg.runs = a.runs as usize;
    cfg.base_seed = seed;
    cfg.backend = match a.backend {
        SweepBackendArg::Auto => BackendChoice::Auto,
        SweepBackendArg::Oracle => BackendChoice::Fixed(BackendKind::Oracle),
        SweepBackendArg::NoisyOracle => BackendChoice::Fixed(BackendKind::NoisyOracle),
        SweepBackendArg::TrainedNet => BackendChoice::Fixed(BackendKind::TrainedNet),
    };
    cfg.net = net_config(&a.net);
    cfg.prune = PruneConfig { tau_rel: a.tau_rel };
    cfg.noise_var = a.noise_var;
    cfg.timing = a.timing;
    let result = run_sweep(&cfg)?;
    for row in result.errors() {
        eprintln!(
            "warning: run {}={} seed {} failed: {}",
            row.axis.as_str(),
            row.value,
            row.seed,
            row.error.as_deref().unwrap_or("unknown error")
        );
    }
    if verbose {
        for s in &result.summary {
            eprintln!(
                "{}={}: SHD {:.2} ± {:.2} ({} ok, {} failed)",
                s.axis.as_str(),
                s.value,
                s.shd_mean,
                s.shd_std,
                s.runs_ok,
                s.runs_failed
            );
        }
    }
    write_with(&out.join("sweep_runs.csv"), |w| result.write_rows_csv(w))?;
    write_with(&out.join("sweep_summary.csv"), |w| result.write_summary_csv(w))
}

fn schedule(s: &ScheduleArgs) -> Result<OuSchedule> {
    Ok(OuSchedule::new(s.t0, s.t_max)?)
}

fn sgm_train(a: &SgmTrainArgs, seed: u64, out: &Path, verbose: bool) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let sched = schedule(&a.schedule)?;
    let net = TimeNet::init(data.d(), a.width as usize, a.depth as usize, &mut stream(seed, Stream::Init))?;
    let cfg = SgmConfig {
        eta: a.eta,
        epochs: a.epochs as usize,
        k_times: a.k_times as usize,
        clip: a.clip,
    };
    let (net, report) = train_sgm(net, &data, &sched, &cfg, &mut stream(seed, Stream::Sgm))?;
    if report.clipped > 0 {
        if let Some(c) = a.clip {
            eprintln!("note: clipped {} of {} training points to radius {c}", report.clipped, data.n());
        }
    }
    if verbose {
        if let Some(l) = report.final_loss() {
            eprintln!("final SGM loss {l:.6e}");
        }
    }
    net.save(&out.join("sgm_net.json"))?;
    write_with(&out.join("sgm_log.csv"), |w| report.write_csv(w))
}

fn sgm_sample(a: &SgmSampleArgs, seed: u64, out: &Path) -> Result<()> {
    let net = TimeNet::load(&a.net)?;
    let sched = schedule(&a.schedule)?;
    let n_steps = a.n_steps as usize;
    let samples = reverse_sample(&net, &sched, n_steps, a.n_samples as usize, &mut stream(seed, Stream::Sgm))?;
    Dataset::from_matrix(samples)
        .context("sampler produced non-finite values")?
        .save(&out.join("samples.csv"))?;
    write_with(&out.join("samples.json"), |w| SampleMeta::new(&sched, n_steps).write_json(w))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(BufWriter<File>) -> causal_score::Result<()>,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}
