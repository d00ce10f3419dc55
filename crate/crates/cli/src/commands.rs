use std::fs;
use std::path::Path;

use pau::approx::{
    least_squares_fit, least_squares_fit_fn, pade_exact, pade_from_taylor, taylor_exact, taylor_of, FitConfig,
    TargetActivation,
};
use pau::curve::{curve_csv, linspace, sample_curve};
use pau::document::CoefficientDocument;
use pau::gradcheck::{run_gradcheck, Fault, GradcheckConfig};
use pau::network::{load_checkpoint, save_checkpoint};
use pau::prune::{lottery_run, PruneSchedule, PrunedKind, ScoreRule};
use pau::rational::{eval_pau, RationalCoefficients, RationalOrders, SafetyMode};
use pau::train::{evaluate, metrics_csv, train_model, TrainConfig};

use crate::{Command, Failure, RunArgs};

pub(crate) fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Pade {
            target,
            orders,
            unsafe_mode,
            out,
        } => pade(&target, orders, unsafe_mode, out.as_deref()),
        Command::Fit {
            target,
            target_coeffs,
            range,
            step,
            orders,
            safe,
            out,
        } => {
            let source = match (target, target_coeffs) {
                (Some(name), _) => FitSource::Activation(self::target(&name)?),
                (None, Some(path)) => FitSource::Document(CoefficientDocument::read(&path)?),
                (None, None) => unreachable!("clap requires one source"),
            };
            fit(&source, range, step, orders, safe, out.as_deref())
        }
        Command::Gradcheck {
            seed,
            trials,
            tolerance,
            inject_fault,
        } => gradcheck(seed, trials, tolerance, inject_fault.is_some()),
        Command::Train { run, save } => train(&run, save.as_deref()),
        Command::Eval { checkpoint, run } => eval(&checkpoint, &run),
        Command::Prune {
            run,
            schedule,
            score,
        } => prune(&run, schedule, &score),
        Command::ExportCurve {
            coeffs,
            range,
            points,
            noise,
            seed,
            out,
        } => export_curve(&coeffs, range, points, noise, seed, &out),
    }
}

fn target(name: &str) -> Result<TargetActivation, Failure> {
    Ok(name.parse()?)
}

fn mode(safe: bool) -> SafetyMode {
    if safe {
        SafetyMode::Safe
    } else {
        SafetyMode::Unsafe
    }
}

fn print_coefficients(c: &RationalCoefficients, exact: Option<&[String]>) {
    let m = c.orders().numerator;
    for (i, v) in c.as_slice().iter().enumerate() {
        let name = if i <= m {
            format!("a_{i}")
        } else {
            format!("b_{}", i - m)
        };
        match exact.map(|e| e[i].as_str()) {
            Some(frac) if frac.contains('/') => println!("{name} = {v} ({frac})"),
            _ => println!("{name} = {v}"),
        }
    }
}

fn pade(name: &str, (m, n): (usize, usize), unsafe_mode: bool, out: Option<&Path>) -> Result<(), Failure> {
    let target = target(name)?;
    let orders = RationalOrders::new(m, n);
    let coeffs = pade_from_taylor(&taylor_of(&target, m + n)?, orders)?;
    let exact = taylor_exact(&target, m + n)
        .ok()
        .and_then(|s| pade_exact(&s, orders).ok())
        .map(|(a, b)| a.iter().chain(&b).map(|r| r.to_string()).collect::<Vec<_>>());
    println!("[{m}/{n}] Padé approximant of {target}");
    print_coefficients(&coeffs, exact.as_deref());
    if let Some(path) = out {
        CoefficientDocument::new(coeffs, mode(!unsafe_mode), format!("pade {target} [{m}/{n}]")).write(path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

enum FitSource {
    Activation(TargetActivation),
    Document(CoefficientDocument),
}

impl std::fmt::Display for FitSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitSource::Activation(t) => write!(f, "{t}"),
            FitSource::Document(d) => write!(f, "document ({})", d.provenance),
        }
    }
}

fn fit(
    target: &FitSource,
    range: (f64, f64),
    step: f64,
    (m, n): (usize, usize),
    safe: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = FitConfig {
        range,
        grid_step: step,
        ..FitConfig::default()
    };
    let orders = RationalOrders::new(m, n);
    let report = match target {
        FitSource::Activation(t) => least_squares_fit(t, orders, &cfg, mode(safe))?,
        FitSource::Document(doc) => {
            // Poles in the source curve surface as an input error.
            let curve = |x: f64| eval_pau(x, &doc.coefficients, doc.mode).unwrap_or(f64::NAN);
            for x in cfg.grid()? {
                eval_pau(x, &doc.coefficients, doc.mode)?;
            }
            least_squares_fit_fn(curve, orders, &cfg, mode(safe))?
        }
    };
    println!("[{m}/{n}] least-squares fit of {target} on [{}, {}]", range.0, range.1);
    print_coefficients(&report.coefficients, None);
    println!("max abs residual = {:e}", report.max_abs_residual);
    println!("sum of squared residuals = {:e}", report.sum_squares);
    if let Some(path) = out {
        let provenance = format!("least-squares {target} [{m}/{n}] on [{}, {}] step {step}", range.0, range.1);
        CoefficientDocument::new(report.coefficients, report.mode, provenance).write(path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gradcheck(seed: u64, trials: usize, tolerance: f64, sign_flip: bool) -> Result<(), Failure> {
    let cfg = GradcheckConfig {
        trials,
        seed,
        fault: sign_flip.then_some(Fault::SignFlip),
        ..GradcheckConfig::default()
    };
    if trials == 0 {
        eprintln!("warning: 0 trials requested; nothing was checked");
    }
    let report = run_gradcheck(&cfg)?;
    println!(
        "{} unit trials, {} network trials, {} gradient entries compared, {} skipped near |A| kinks",
        report.unit_trials, report.network_trials, report.comparisons, report.skipped_near_kink
    );
    println!("worst relative error = {:e}", report.worst_error());
    if report.passed(tolerance) {
        Ok(())
    } else {
        let case = report.worst.as_ref().map(|c| c.to_string()).unwrap_or_default();
        Err(Failure::Verification(format!(
            "gradient check failed: worst relative error {:e} is not below {tolerance:e}\n{case}",
            report.worst_error()
        )))
    }
}

impl RunArgs {
    fn config(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(_), Some(_)) => {
                return Err(Failure::Usage("use either --preset or --config, not both".into()))
            }
            (Some(name), None) => TrainConfig::preset(name)?,
            (None, Some(path)) => TrainConfig::from_toml(&fs::read_to_string(path)?)?,
            (None, None) => TrainConfig::preset("mnist-desk")?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.epochs = epochs;
        }
        if let Some(dir) = &self.data_dir {
            cfg.data_dir = Some(dir.clone());
        }
        if let Some(alpha) = self.noise_alpha {
            cfg.noise_alpha = alpha;
        }
        if self.frozen {
            cfg.trainable_pau = false;
        }
        if let Some(act) = &self.activation {
            cfg.activation = act.clone();
        }
        if let Some(n) = self.train_subset {
            cfg.train_subset = Some(n);
        }
        if let Some(n) = self.test_subset {
            cfg.test_subset = Some(n);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_csv(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    if let Some(path) = path {
        fs::write(path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn train(args: &RunArgs, save: Option<&Path>) -> Result<(), Failure> {
    let cfg = args.config()?;
    let (train, test) = cfg.load_data()?;
    let net = cfg.build_network()?;
    let count = net.param_count();
    println!(
        "training {} parameters ({} in rational units) on {} samples, testing on {}",
        count.total,
        count.pau,
        train.len(),
        test.len()
    );
    let outcome = train_model(net, &train, &test, &cfg, |m| {
        println!(
            "epoch {:>3}  train_loss {:.6}  test_acc {:.4}  ({:.1} s)",
            m.epoch, m.train_loss, m.test_acc, m.seconds
        )
    })?;
    write_csv(args.metrics_out.as_deref(), &metrics_csv(&outcome.history))?;
    if let Some(dir) = save {
        save_checkpoint(&outcome.network, dir)?;
        println!("saved {}", dir.display());
    }
    Ok(())
}

fn eval(checkpoint: &Path, args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.config()?;
    let net = load_checkpoint(checkpoint)?;
    let (_, test) = cfg.load_data()?;
    let acc = evaluate(&net, &test)?;
    println!("test accuracy = {acc} on {} samples", test.len());
    write_csv(args.metrics_out.as_deref(), &format!("samples,test_acc\n{},{acc}\n", test.len()))
}

fn prune(args: &RunArgs, fractions: Vec<f64>, score: &str) -> Result<(), Failure> {
    let cfg = args.config()?;
    let schedule = PruneSchedule::new(fractions).map_err(|e| Failure::Usage(e.to_string()))?;
    let rule: ScoreRule = score.parse().map_err(|_| Failure::Usage(format!("unknown score {score:?}; use sum or l1")))?;
    let (train, test) = cfg.load_data()?;
    let report = lottery_run(&cfg, &train, &test, &schedule, rule, |row| {
        println!(
            "p = {:<4}  params_remaining {:>8}  test_acc {:.4}",
            row.p, row.params_remaining, row.test_acc
        )
    })?;
    if report.kind == PrunedKind::DenseNeurons {
        println!("note: no convolutions, so hidden dense neurons were pruned");
    }
    write_csv(args.metrics_out.as_deref(), &report.to_csv())
}

fn export_curve(
    coeffs: &Path,
    range: (f64, f64),
    points: usize,
    noise: Option<f64>,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    if points == 0 {
        return Err(Failure::Usage("--points must be at least 1".into()));
    }
    let doc = CoefficientDocument::read(coeffs)?;
    let xs = linspace(range.0, range.1, points);
    let curve = sample_curve(&doc.coefficients, doc.mode, &xs, noise.map(|a| (a, seed)))?;
    fs::write(out, curve_csv(&curve))?;
    println!("wrote {} points to {}", curve.len(), out.display());
    Ok(())
}
