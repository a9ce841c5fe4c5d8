use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Bundle, FlowConfig};
use crate::lifted::ConnectionVariant;
use crate::space_form::{BergerParams, FrameVector, SpaceFormModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub connection: f64,
    pub conservation: f64,
    pub parallel: f64,
    pub oracle: f64,
    pub chain_norm: f64,
    pub speed: f64,
    pub constancy: f64,
    pub vanishing: f64,
    pub rank_collapse: f64,
    pub span: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            connection: 1e-10,
            conservation: 1e-8,
            parallel: 1e-6,
            oracle: 1e-4,
            chain_norm: 1e-7,
            speed: 1e-10,
            constancy: 1e-6,
            vanishing: 1e-7,
            rank_collapse: 1e-12,
            span: 1e-10,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("tolerances.connection", self.connection),
            ("tolerances.conservation", self.conservation),
            ("tolerances.parallel", self.parallel),
            ("tolerances.oracle", self.oracle),
            ("tolerances.chain_norm", self.chain_norm),
            ("tolerances.speed", self.speed),
            ("tolerances.constancy", self.constancy),
            ("tolerances.vanishing", self.vanishing),
            ("tolerances.rank_collapse", self.rank_collapse),
            ("tolerances.span", self.span),
        ]
    }
}

/// Everything a command needs. Unset keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bundle: Bundle,
    pub n: usize,
    pub m: f64,
    pub delta: f64,
    pub step: f64,
    pub sigma_max: f64,
    pub p_max: usize,
    pub seed: u64,
    /// random jets for the connection checks
    pub samples: usize,
    /// random initial conditions in the theorem sweep
    pub sweep: usize,
    /// `|xi_0|` of random tangent-bundle data
    pub xi_norm: f64,
    /// trajectory rows written by `integrate`: every `sample_stride`-th step
    pub sample_stride: usize,
    /// sample points per curvature profile
    pub profile_points: usize,
    pub rank_tol: f64,
    pub renormalize: bool,
    /// use the flipped vertical-vertical connection
    pub mutation: bool,
    pub tolerances: Tolerances,
    pub xi: Option<Vec<f64>>,
    pub xi_dot: Option<Vec<f64>>,
    pub u_dir: Option<Vec<f64>>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bundle: Bundle::UnitTangent,
            n: 4,
            m: 4.0,
            delta: 0.5,
            step: 1e-3,
            sigma_max: 20.0,
            p_max: 8,
            seed: 0,
            samples: 1000,
            sweep: 100,
            xi_norm: 1.0,
            sample_stride: 10,
            profile_points: 50,
            rank_tol: 1e-10,
            renormalize: false,
            mutation: false,
            tolerances: Tolerances::default(),
            xi: None,
            xi_dot: None,
            u_dir: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub bundle: Option<Bundle>,
    pub n: Option<usize>,
    pub m: Option<f64>,
    pub delta: Option<f64>,
    pub step: Option<f64>,
    pub sigma_max: Option<f64>,
    pub p_max: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub sweep: Option<usize>,
    pub out: Option<PathBuf>,
    pub mutation: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| Error::MalformedConfig(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = o.$field.clone() {
                    self.$field = v;
                }
            )*};
        }
        take!(bundle, n, m, delta, step, sigma_max, p_max, seed, samples, sweep, out);
        self.mutation |= o.mutation;
    }

    /// Checks every key and reports all offenders at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut require = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        require(self.n >= 1, format!("n: must be >= 1, got {}", self.n));
        require(self.m.is_finite(), format!("m: must be finite, got {}", self.m));
        require(
            self.delta.is_finite() && self.delta >= 0.0,
            format!("delta: must be finite and >= 0, got {}", self.delta),
        );
        require(
            self.step.is_finite() && self.step > 0.0,
            format!("step: must be positive, got {}", self.step),
        );
        require(
            self.sigma_max.is_finite() && self.sigma_max > 0.0,
            format!("sigma_max: must be positive, got {}", self.sigma_max),
        );
        require(
            self.step <= self.sigma_max || self.step.is_nan() || self.sigma_max.is_nan(),
            format!("step: {} exceeds sigma_max {}", self.step, self.sigma_max),
        );
        require(self.p_max >= 2, format!("p_max: must be >= 2, got {}", self.p_max));
        require(self.samples >= 1, "samples: must be >= 1".into());
        require(self.sweep >= 1, "sweep: must be >= 1".into());
        require(
            self.xi_norm.is_finite() && self.xi_norm > 0.0,
            format!("xi_norm: must be positive, got {}", self.xi_norm),
        );
        require(self.sample_stride >= 1, "sample_stride: must be >= 1".into());
        require(self.profile_points >= 2, "profile_points: must be >= 2".into());
        require(
            self.rank_tol.is_finite() && self.rank_tol > 0.0,
            format!("rank_tol: must be positive, got {}", self.rank_tol),
        );
        for (key, value) in self.tolerances.entries() {
            require(value.is_finite() && value > 0.0, format!("{key}: must be positive, got {value}"));
        }
        let dim = 2 * self.n;
        for (key, vector) in [("xi", &self.xi), ("xi_dot", &self.xi_dot), ("u_dir", &self.u_dir)] {
            if let Some(v) = vector {
                require(v.len() == dim, format!("{key}: expected length {dim}, got {}", v.len()));
                require(v.iter().all(|x| x.is_finite()), format!("{key}: entries must be finite"));
            }
        }
        require(
            self.xi.is_some() == self.xi_dot.is_some(),
            "xi, xi_dot: must be given together".into(),
        );
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn model(&self) -> SpaceFormModel {
        SpaceFormModel { n: self.n, m: self.m }
    }

    pub fn params(&self) -> BergerParams {
        BergerParams { delta: self.delta }
    }

    pub fn variant(&self) -> ConnectionVariant {
        if self.mutation {
            ConnectionVariant::FlippedFiberCorrection
        } else {
            ConnectionVariant::Exact
        }
    }

    pub fn flow(&self, bundle: Bundle) -> FlowConfig {
        FlowConfig {
            bundle,
            model: self.model(),
            params: self.params(),
            step: self.step,
            sigma_max: self.sigma_max,
            sample_stride: 1,
            renormalize: self.renormalize,
        }
    }

    /// Explicit initial data, if the config carries any.
    pub fn explicit_initial(&self) -> Result<Option<(FrameVector, FrameVector, Option<FrameVector>)>> {
        match (&self.xi, &self.xi_dot) {
            (Some(xi), Some(w)) => {
                let u_dir = self.u_dir.clone().map(FrameVector::new).transpose()?;
                Ok(Some((FrameVector::new(xi.clone())?, FrameVector::new(w.clone())?, u_dir)))
            }
            _ => Ok(None),
        }
    }
}

/// Reads the optional config file, applies flag overrides, and validates.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::MalformedConfig(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    config.apply(overrides);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_json("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
        let d = ExperimentConfig::default();
        assert_eq!((d.bundle, d.n, d.m, d.delta), (Bundle::UnitTangent, 4, 4.0, 0.5));
        assert_eq!((d.step, d.sigma_max, d.p_max, d.seed), (1e-3, 20.0, 8, 0));
        d.validate().unwrap();
    }

    #[test]
    fn short_xi_is_named() {
        let config = ExperimentConfig::from_json(
            r#"{"n": 4, "xi": [1, 0, 0, 0, 0, 0], "xi_dot": [0, 0, 0, 0, 0, 0, 0, 0]}"#,
        )
        .unwrap();
        let Err(Error::Validation(keys)) = config.validate() else { panic!("expected validation error") };
        assert_eq!(keys.len(), 1);
        assert!(keys[0].starts_with("xi:"), "{keys:?}");
    }

    #[test]
    fn every_offending_key_is_listed() {
        let config = ExperimentConfig::from_json(r#"{"delta": -1, "step": 0, "tolerances": {"span": 0}}"#).unwrap();
        let Err(Error::Validation(keys)) = config.validate() else { panic!("expected validation error") };
        let joined = keys.join("\n");
        for key in ["delta:", "step:", "tolerances.span:"] {
            assert!(joined.contains(key), "{joined}");
        }
    }

    #[test]
    fn malformed_and_unknown_keys() {
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::MalformedConfig(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"detla": 1}"#), Err(Error::MalformedConfig(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"bundle": "T2M"}"#), Err(Error::MalformedConfig(_))));
    }

    #[test]
    fn flags_beat_file_values() {
        let mut config = ExperimentConfig::from_json(r#"{"delta": 0.9, "n": 3, "bundle": "TM"}"#).unwrap();
        config.apply(&Overrides {
            delta: Some(0.2),
            bundle: Some(Bundle::UnitTangent),
            ..Overrides::default()
        });
        assert_eq!(config.delta, 0.2);
        assert_eq!(config.n, 3);
        assert_eq!(config.bundle, Bundle::UnitTangent);
    }
}
