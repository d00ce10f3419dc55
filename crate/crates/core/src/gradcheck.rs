//! Finite-difference verification of the analytic gradients, for single
//! rational units and for a small network.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{backward, build_network, forward, LayerSpec, Network, NetworkSpec, PauConfig};
use crate::rational::{
    eval_pau, eval_polynomial, grad_pau, PauGradientBundle, RationalCoefficients, RationalOrders,
    SafetyMode,
};

/// Deliberate analytic-gradient corruption, to show the harness catches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the denominator gradients, as if the sign factor were lost.
    SignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Coefficients are drawn from `U(−c, c)`.
    pub coeff_range: f64,
    /// Inputs are drawn from `U(−x, x)`.
    pub x_range: f64,
    /// One network trial is run per this many unit trials (at least one when
    /// `trials > 0`); zero disables network trials.
    pub network_every: usize,
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            coeff_range: 1.5,
            x_range: 3.0,
            network_every: 10,
            fault: None,
        }
    }
}

/// `|g − fd| / max(|g|, |fd|, 1)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// One compared gradient entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCase {
    pub trial: usize,
    /// `"unit"` or `"network"`.
    pub scope: &'static str,
    /// Which derivative, e.g. `d/db_2` or `weight[13]`.
    pub component: String,
    pub x: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

impl fmt::Display for GradcheckCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} trial {} {}: analytic {:e}, finite difference {:e}, relative error {:e}\n  x = {:?}\n  coefficients = {:?}",
            self.scope, self.trial, self.component, self.analytic, self.numeric, self.error, self.x, self.coefficients
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub unit_trials: usize,
    pub network_trials: usize,
    /// Entries compared in total.
    pub comparisons: usize,
    /// Denominator/input entries skipped because `A` changes sign inside the stencil.
    pub skipped_near_kink: usize,
    pub worst: Option<GradcheckCase>,
}

impl GradcheckReport {
    pub fn worst_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |c| c.error)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.worst_error() < tolerance
    }

    fn record(&mut self, case: GradcheckCase) {
        self.comparisons += 1;
        if self.worst.as_ref().is_none_or(|w| case.error > w.error) {
            self.worst = Some(case);
        }
    }
}

fn random_coefficients(rng: &mut ChaCha8Rng, range: f64) -> RationalCoefficients {
    let len = RationalOrders::default().len();
    let flat: Vec<f64> = (0..len).map(|_| rng.gen_range(-range..range)).collect();
    RationalCoefficients::from_flat(flat, RationalOrders::default()).expect("finite")
}

fn step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

fn apply_fault(g: &mut PauGradientBundle, fault: Option<Fault>) {
    if let Some(Fault::SignFlip) = fault {
        g.d_denominator.iter_mut().for_each(|d| *d = -*d);
    }
}

/// Whether `A = x·B(x)` may change sign within the stencils around `x`.
fn near_kink(x: f64, c: &RationalCoefficients, h: f64) -> bool {
    let b = c.denominator();
    let mut poly = vec![0.0];
    poly.extend_from_slice(b);
    let a = eval_polynomial(&poly, x);
    let da: f64 = poly
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, v)| k as f64 * v * x.powi(k as i32 - 1))
        .sum();
    let reach = (1..poly.len()).map(|k| x.abs().powi(k as i32)).fold(0.0, f64::max);
    a.abs() <= 10.0 * h * (da.abs() + reach)
}

/// Compares [`grad_pau`] in safe mode against central differences of
/// [`eval_pau`] for `cfg.trials` random coefficient sets and inputs.
pub fn check_unit_gradients(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradcheckReport::default();
    let mode = SafetyMode::Safe;
    for trial in 0..cfg.trials {
        let c = random_coefficients(&mut rng, cfg.coeff_range);
        let x = rng.gen_range(-cfg.x_range..cfg.x_range);
        let mut g = grad_pau(x, &c, mode)?;
        apply_fault(&mut g, cfg.fault);
        let m = c.orders().numerator;
        let hx = step(x);
        let kink = near_kink(x, &c, hx.max(c.as_slice().iter().map(|&v| step(v)).fold(0.0, f64::max)));
        let case = |component: String, analytic: f64, numeric: f64| GradcheckCase {
            trial,
            scope: "unit",
            component,
            x: vec![x],
            coefficients: c.as_slice().to_vec(),
            analytic,
            numeric,
            error: relative_error(analytic, numeric),
        };
        for i in 0..c.orders().len() {
            if kink && i > m {
                report.skipped_near_kink += 1;
                continue;
            }
            let h = step(c.as_slice()[i]);
            let shifted = |d: f64| {
                let mut p = c.clone();
                p.as_mut_slice()[i] += d;
                eval_pau(x, &p, mode)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let (name, analytic) = if i <= m {
                (format!("d/da_{i}"), g.d_numerator[i])
            } else {
                (format!("d/db_{}", i - m), g.d_denominator[i - m - 1])
            };
            report.record(case(name, analytic, fd));
        }
        if kink {
            report.skipped_near_kink += 1;
        } else {
            let fd = (eval_pau(x + hx, &c, mode)? - eval_pau(x - hx, &c, mode)?) / (2.0 * hx);
            report.record(case("d/dx".into(), g.d_input, fd));
        }
        report.unit_trials += 1;
    }
    Ok(report)
}

fn toy_network(rng: &mut ChaCha8Rng, coeff_range: f64, seed: u64) -> Network {
    let mut net = build_network(&NetworkSpec::mlp(&[4, 3, 2]), &PauConfig::default(), seed).expect("valid toy network");
    net.set_units(|u| u.coefficients = random_coefficients(rng, coeff_range));
    net
}

/// Whether some unit input sits close enough to a sign change of `A` that a
/// perturbed forward pass could cross it.
fn network_near_kink(net: &Network, batch: &[f64], h: f64) -> Result<bool> {
    let (_, trace) = forward(net, batch, false, 0)?;
    for (i, layer) in net.spec().layers.iter().enumerate() {
        if let LayerSpec::Activation { unit_index } = *layer {
            let c = &net.units()[unit_index].coefficients;
            // Generous: a weight step moves a pre-activation by a multiple of h.
            let reach = h * 1e3;
            if trace.layer_input(i).iter().any(|&z| near_kink(z, c, reach)) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn weighted_output(net: &Network, batch: &[f64], upstream: &[f64]) -> Result<f64> {
    let (out, _) = forward(net, batch, false, 0)?;
    Ok(out.iter().zip(upstream).map(|(o, u)| o * u).sum())
}

fn check_network(trial: usize, rng: &mut ChaCha8Rng, cfg: &GradcheckConfig, report: &mut GradcheckReport) -> Result<()> {
    let seed = rng.gen();
    let net = toy_network(rng, cfg.coeff_range, seed);
    let batch: Vec<f64> = (0..8).map(|_| rng.gen_range(-cfg.x_range..cfg.x_range)).collect();
    let upstream: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if network_near_kink(&net, &batch, 1e-6)? {
        report.skipped_near_kink += 1;
        return Ok(());
    }
    let (_, trace) = forward(&net, &batch, false, 0)?;
    let mut grads = backward(&net, &trace, &upstream)?;
    if let Some(Fault::SignFlip) = cfg.fault {
        let m = net.units()[0].coefficients.orders().numerator;
        for g in grads.units.iter_mut().flatten() {
            g[m + 1..].iter_mut().for_each(|d| *d = -*d);
        }
    }
    let case = |component: String, analytic: f64, numeric: f64| GradcheckCase {
        trial,
        scope: "network",
        component,
        x: batch.clone(),
        coefficients: net.units()[0].coefficients.as_slice().to_vec(),
        analytic,
        numeric,
        error: relative_error(analytic, numeric),
    };
    for i in 0..net.params().len() {
        let h = step(net.params()[i]);
        let shifted = |d: f64| {
            let mut n = net.clone();
            n.update(|p, _| p[i] += d);
            weighted_output(&n, &batch, &upstream)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        report.record(case(format!("weight[{i}]"), grads.layers[i], fd));
    }
    for (u, g) in grads.units.iter().enumerate() {
        let Some(g) = g else { continue };
        for (k, &analytic) in g.iter().enumerate() {
            let h = step(net.units()[u].coefficients.as_slice()[k]);
            let shifted = |d: f64| {
                let mut n = net.clone();
                n.update(|_, units| units[u].coefficients.as_mut_slice()[k] += d);
                weighted_output(&n, &batch, &upstream)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            report.record(case(format!("unit[{u}].coefficient[{k}]"), analytic, fd));
        }
    }
    report.network_trials += 1;
    Ok(())
}

/// Unit trials plus periodic trials on a `4 → 3 → 2` network.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = check_unit_gradients(cfg)?;
    if cfg.network_every > 0 && cfg.trials > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let count = cfg.trials.div_ceil(cfg.network_every);
        for trial in 0..count {
            check_network(trial, &mut rng, cfg, &mut report)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_gradients_pass() {
        let report = run_gradcheck(&GradcheckConfig {
            trials: 300,
            seed: 4,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert_eq!(report.unit_trials, 300);
        assert!(report.network_trials >= 25);
        assert!(report.passed(1e-5), "{}", report.worst.unwrap());
    }

    #[test]
    fn sign_flip_is_caught() {
        let report = run_gradcheck(&GradcheckConfig {
            trials: 20,
            fault: Some(Fault::SignFlip),
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert!(!report.passed(1e-4));
        assert!(report.worst.unwrap().component.contains('b') || report.network_trials > 0);
    }

    #[test]
    fn zero_trials() {
        let report = run_gradcheck(&GradcheckConfig {
            trials: 0,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert_eq!(report.comparisons, 0);
        assert!(report.passed(1e-4));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0), 1e-9);
        assert_eq!(relative_error(4.0, 2.0), 0.5);
    }
}
