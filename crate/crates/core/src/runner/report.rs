use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::flow::Bundle;
use crate::frenet::TheoremVerdict;

/// Anchors tying each verdict to the statement it checks.
pub mod anchors {
    pub const CONNECTION: &str = "Levi-Civita connection of the Berger-deformed Sasaki metric";
    pub const TM_GEODESICS: &str = "geodesic equations on the tangent bundle";
    pub const UNIT_CONSERVATION: &str = "unit tangent bundle geodesics: |xi'| and <xi', J xi> are constant";
    pub const PARALLEL_OPERATOR: &str = "twisted curvature operator is parallel along unit-bundle geodesic projections";
    pub const TM_RATE: &str = "rate of change of the twisted curvature operator along tangent bundle geodesics";
    pub const KRYLOV_CHAIN: &str = "higher derivatives of the projection are a Krylov sequence of the twisted operator";
    pub const CHAIN_NORMS: &str = "norms of the higher derivatives of the projection are constant";
    pub const PROJECTION_SPEED: &str = "speed of the projection is sqrt(1 - c^2 - delta^2 mu^2)";
    pub const CONSTANT_CURVATURES: &str = "projections of unit-bundle geodesics have constant geodesic curvatures";
    pub const VANISHING_CURVATURES: &str = "on complex projective space k_6 = ... = k_{2n-1} = 0";
    pub const SPAN_IDENTITIES: &str = "powers of the twisted operator lie in three-term matrix spans";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub claim: String,
    pub anchor: String,
    pub status: Status,
    pub residual: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Verdict {
    pub fn check(claim: &str, anchor: &str, residual: f64, tolerance: f64) -> Self {
        Self {
            claim: claim.into(),
            anchor: anchor.into(),
            status: if residual <= tolerance { Status::Pass } else { Status::Fail },
            residual: Some(residual),
            tolerance: Some(tolerance),
            detail: None,
        }
    }

    pub fn info(claim: &str, anchor: &str, value: f64) -> Self {
        Self {
            claim: claim.into(),
            anchor: anchor.into(),
            status: Status::Informational,
            residual: Some(value),
            tolerance: None,
            detail: None,
        }
    }

    pub fn not_applicable(claim: &str, anchor: &str, why: impl Into<String>) -> Self {
        Self {
            claim: claim.into(),
            anchor: anchor.into(),
            status: Status::NotApplicable,
            residual: None,
            tolerance: None,
            detail: Some(why.into()),
        }
    }

    pub fn from_theorem(v: &TheoremVerdict, anchor: &str) -> Self {
        let mut out = Self::check(&v.claim, anchor, v.residual, v.tolerance);
        let mut detail = v.detail.clone().unwrap_or_default();
        if let Some(i) = v.first_vanishing_index {
            if !detail.is_empty() {
                detail.push_str("; ");
            }
            detail.push_str(&format!("first vanishing index {i}"));
        }
        if !detail.is_empty() {
            out.detail = Some(detail);
        }
        out
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn is_failure(&self) -> bool {
        self.status == Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    pub precision: &'static str,
    pub version: &'static str,
    pub bundle: Bundle,
    pub n: usize,
    pub m: f64,
    pub delta: f64,
    pub step: f64,
    pub sigma_max: f64,
    pub p_max: usize,
    pub seed: u64,
    pub samples: usize,
    pub sweep: usize,
    pub mutation: bool,
}

impl Environment {
    pub fn from_config(c: &ExperimentConfig) -> Self {
        Self {
            precision: "f64",
            version: env!("CARGO_PKG_VERSION"),
            bundle: c.bundle,
            n: c.n,
            m: c.m,
            delta: c.delta,
            step: c.step,
            sigma_max: c.sigma_max,
            p_max: c.p_max,
            seed: c.seed,
            samples: c.samples,
            sweep: c.sweep,
            mutation: c.mutation,
        }
    }
}

/// Verdicts of one command. Wall-clock timing is written separately so that
/// reports of identical runs compare equal byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub pass: bool,
    pub failed: Vec<String>,
    pub environment: Environment,
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig, verdicts: Vec<Verdict>) -> Self {
        let failed: Vec<String> = verdicts
            .iter()
            .filter(|v| v.is_failure())
            .map(|v| format!("{} ({})", v.claim, v.anchor))
            .collect();
        Self {
            command: command.into(),
            pass: failed.is_empty(),
            failed,
            environment: Environment::from_config(config),
            verdicts,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass { 0 } else { 1 }
    }

    pub fn verdict(&self, claim: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.claim == claim)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overall_pass_ignores_informational_and_inapplicable() {
        let config = ExperimentConfig::default();
        let report = Report::new(
            "t",
            &config,
            vec![
                Verdict::check("a", anchors::CONNECTION, 1e-12, 1e-10),
                Verdict::info("b", anchors::TM_RATE, 5.0),
                Verdict::not_applicable("c", anchors::VANISHING_CURVATURES, "n < 4"),
            ],
        );
        assert!(report.pass);
        assert_eq!(report.exit_code(), 0);

        let report = Report::new("t", &config, vec![Verdict::check("a", anchors::CONNECTION, 1e-3, 1e-10)]);
        assert!(!report.pass);
        assert_eq!(report.failed.len(), 1);
        assert_eq!(report.exit_code(), 1);
    }

    #[test]
    fn nan_residual_fails() {
        assert_eq!(Verdict::check("a", anchors::CONNECTION, f64::NAN, 1.0).status, Status::Fail);
    }

    #[test]
    fn status_serializes_in_kebab_case() {
        assert_eq!(serde_json::to_string(&Status::NotApplicable).unwrap(), "\"not-applicable\"");
    }
}
