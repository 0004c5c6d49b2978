//! Analytic quantities of the 1D normal-versus-Cauchy scenario.

use capclass::synth::{analytic_bayes_region, analytic_gamma_star, mu_c, OneDimSpec};
use capclass::CapacitySpec;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Interval endpoints are `null` where unbounded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Oracle1d {
    pub pi0: f64,
    pub b: f64,
    pub mu: f64,
    pub budget: f64,
    pub gamma_star: f64,
    pub region: Vec<(Option<f64>, Option<f64>)>,
    pub p_gamma_residual: f64,
    pub bayes_region: Vec<(Option<f64>, Option<f64>)>,
    /// Only defined for `pi0 < 0.5`.
    pub mu_c: Option<f64>,
}

fn bounded(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn intervals(set: &[(f64, f64)]) -> Vec<(Option<f64>, Option<f64>)> {
    set.iter().map(|&(a, b)| (bounded(a), bounded(b))).collect()
}

pub fn oracle_1d(pi0: f64, b: f64, mu: f64) -> CliResult<Oracle1d> {
    let cap = CapacitySpec::new(b, pi0).map_err(|e| CliError::Config(e.to_string()))?;
    if !mu.is_finite() {
        return Err(CliError::Config(format!("mu = {mu} must be finite")));
    }
    let spec = OneDimSpec::new(mu, pi0).map_err(|e| CliError::Config(e.to_string()))?;
    let gs = analytic_gamma_star(&spec, cap).map_err(|e| CliError::from_core("gamma*", e))?;
    let bayes = analytic_bayes_region(&spec).map_err(|e| CliError::from_core("Bayes region", e))?;
    Ok(Oracle1d {
        pi0,
        b,
        mu,
        budget: cap.budget(),
        gamma_star: gs.gamma,
        region: intervals(gs.region.intervals()),
        p_gamma_residual: gs.residual,
        bayes_region: intervals(bayes.intervals()),
        mu_c: (pi0 < 0.5).then(|| mu_c(pi0)).transpose().map_err(|e| CliError::from_core("mu_c", e))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_point() {
        let o = oracle_1d(0.01, 2.0, 10.0).unwrap();
        assert!((o.gamma_star - 26.8801280269).abs() < 1e-6);
        assert_eq!(o.region.len(), 1);
        assert!((o.mu_c.unwrap() - 8.721).abs() < 0.01);
        assert_eq!(o.bayes_region.len(), 1);
    }

    #[test]
    fn full_budget_is_unbounded() {
        let o = oracle_1d(0.5, 2.0, 3.0).unwrap();
        assert_eq!(o.region, vec![(None, None)]);
        assert_eq!(o.mu_c, None);
        assert!(oracle_1d(0.5, 3.0, 3.0).is_err());
    }
}
