//! Central finite-difference verification of [`Graph::backward`].

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub coords: usize,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so that two gradients that
    /// both vanish do not produce 0/0.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords: 20,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose ±step evaluations straddled a relu/max kink.
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<u64>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok((g.value(loss).item(), g.activation_pattern()))
}

/// Compares backward against central differences at `cfg.coords` randomly
/// drawn coordinates across all `inputs`.
///
/// `f` must build a scalar loss from the bound inputs. Coordinates where the
/// perturbed evaluations change the activation pattern are redrawn, since the
/// loss is not differentiable across those points.
pub fn check<F>(name: &str, inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let base_pattern = g.activation_pattern();
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
    drop(g);

    let total: usize = inputs.iter().map(Tensor::len).sum();
    if total == 0 {
        return Err(Error::Contract("gradcheck with no inputs".into()));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        skipped_kinks: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    let mut work = inputs.to_vec();
    let max_attempts = cfg.coords * 20;
    let mut attempts = 0;
    while report.checked < cfg.coords.min(total) && attempts < max_attempts {
        attempts += 1;
        let mut flat = rng.below(total);
        let mut which = 0;
        while flat >= work[which].len() {
            flat -= work[which].len();
            which += 1;
        }
        let orig = work[which].data()[flat];
        work[which].data_mut()[flat] = orig + cfg.step;
        let (fp, pp) = evaluate(&f, &work)?;
        work[which].data_mut()[flat] = orig - cfg.step;
        let (fm, pm) = evaluate(&f, &work)?;
        work[which].data_mut()[flat] = orig;
        if pp != base_pattern || pm != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * cfg.step);
        let a = analytic[which].data()[flat];
        report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric, cfg.floor));
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // A correct op passes...
        let mut rng = SplitMix64::new(1);
        let a = Tensor::randn(&[3, 4], &mut rng);
        let b = Tensor::randn(&[4, 2], &mut rng);
        let ok = check(
            "matmul",
            &[a.clone(), b.clone()],
            |g, v| {
                let c = g.matmul(v[0], v[1])?;
                Ok(g.sum_all(c))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(ok.passed(1e-6), "{ok:?}");

        // ...and a loss whose recorded graph disagrees with its values fails:
        // the forward uses x^2 but a constant injected by the closure breaks
        // the derivative chain relative to the evaluated value.
        let bad = check(
            "detached",
            &[a],
            |g, v| {
                let detached = g.constant(g.value(v[0]).clone());
                let sq = g.mul(v[0], detached)?;
                Ok(g.sum_all(sq))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!bad.passed(1e-4));
    }

    #[test]
    fn skips_relu_kinks() {
        // relu input exactly at zero for every element: all coordinates kink
        let z = Tensor::zeros(&[4]);
        let r = check(
            "relu-at-zero",
            &[z],
            |g, v| {
                let r = g.relu(v[0]);
                Ok(g.sum_all(r))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(r.checked, 0);
        assert!(!r.passed(1e-4));
    }
}
