//! Experiment configuration files.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use raycontact::geodesic::TraceSettings;
use raycontact::ode::Tolerances;
use raycontact::{CauchySurface, Domain, Region, SpacetimeMetric};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error at line {l}, `{}`: {}", self.field, self.message),
            None => write!(f, "config error, `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Trace,
    Redshift,
    VerifyTheorem,
    VerifyLemma,
    Density,
    Volume,
    Exchange,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Trace => "trace",
            ExperimentKind::Redshift => "redshift",
            ExperimentKind::VerifyTheorem => "verify-theorem",
            ExperimentKind::VerifyLemma => "verify-lemma",
            ExperimentKind::Density => "density",
            ExperimentKind::Volume => "volume",
            ExperimentKind::Exchange => "exchange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Minkowski,
    Flrw,
    Conformal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub family: Family,
    pub spatial_dim: usize,
    /// `a(t)` for FLRW.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_factor: Option<String>,
    /// `Omega(t, x)` for conformal metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<[f64; 2]>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    #[default]
    Torus,
    Box,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub name: String,
    pub graph: String,
    #[serde(default)]
    pub domain: DomainKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_lambda_range")]
    pub lambda_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<[f64; 2]>,
}

fn default_atol() -> f64 {
    Tolerances::default().atol
}

fn default_rtol() -> f64 {
    Tolerances::default().rtol
}

fn default_max_steps() -> usize {
    Tolerances::default().max_steps
}

fn default_lambda_range() -> [f64; 2] {
    let (a, b) = TraceSettings::default().lambda_range;
    [a, b]
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            atol: default_atol(),
            rtol: default_rtol(),
            max_steps: default_max_steps(),
            lambda_range: default_lambda_range(),
            time_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Flrw,
    Doppler,
}

/// Experiment-specific settings; which fields apply depends on the kind.
/// For `exchange`, `samples` is the outer grid size and `inner` the number
/// of fibre samples per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Spacetime event for `trace`; spatial point on the emitter otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_region: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_segment: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub metric: MetricSpec,
    #[serde(default)]
    pub surfaces: Vec<SurfaceSpec>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub run: RunSpec,
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// First line whose key is `key`, as a diagnostic anchor.
fn line_of_key(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl ExperimentConfig {
    /// Parses and validates a configuration.
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| ConfigError {
            field: "toml".into(),
            line: e.span().map(|s| line_of_offset(src, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    /// Canonical TOML with defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    fn err(src: &str, field: &str, message: impl Into<String>) -> ConfigError {
        let key = field.rsplit('.').next().unwrap_or(field);
        let key = key.split('[').next().unwrap_or(key);
        ConfigError {
            field: field.to_string(),
            line: line_of_key(src, key),
            message: message.into(),
        }
    }

    fn validate(&self, src: &str) -> Result<(), ConfigError> {
        let n = self.metric.spatial_dim;
        if !(1..=3).contains(&n) {
            return Err(Self::err(src, "metric.spatial_dim", "must be 1, 2 or 3"));
        }
        let num = &self.numerics;
        for (name, v) in [("numerics.atol", num.atol), ("numerics.rtol", num.rtol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Self::err(src, name, "must be positive"));
            }
        }
        if num.max_steps == 0 {
            return Err(Self::err(src, "numerics.max_steps", "must be positive"));
        }
        let [lo, hi] = num.lambda_range;
        if !(lo <= 0.0 && hi >= 0.0 && lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Self::err(src, "numerics.lambda_range", "must be finite and contain 0"));
        }
        if let Some([a, b]) = num.time_window {
            if !(a < b) {
                return Err(Self::err(src, "numerics.time_window", "must be increasing"));
            }
        }
        let run = &self.run;
        if let Some(t) = run.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Self::err(src, "run.tolerance", "must be positive"));
            }
        }
        for (name, v) in [
            ("run.samples", run.samples),
            ("run.inner", run.inner),
            ("run.per_segment", run.per_segment),
        ] {
            if v == Some(0) {
                return Err(Self::err(src, name, "must be at least 1"));
            }
        }
        let mut names = Vec::new();
        for (i, s) in self.surfaces.iter().enumerate() {
            if names.contains(&s.name.as_str()) {
                return Err(Self::err(src, &format!("surfaces[{i}].name"), format!("duplicate surface `{}`", s.name)));
            }
            names.push(&s.name);
        }
        for (field, r) in [("run.emitter", &run.emitter), ("run.receiver", &run.receiver)] {
            if let Some(name) = r {
                if !names.contains(&name.as_str()) {
                    return Err(Self::err(src, field, format!("no surface named `{name}`")));
                }
            }
        }
        let needs: &[(&str, bool)] = match self.experiment {
            ExperimentKind::Trace => &[("run.start", run.start.is_some()), ("run.direction", run.direction.is_some())],
            ExperimentKind::VerifyLemma => &[("run.emitter", run.emitter.is_some())],
            _ => &[("run.emitter", run.emitter.is_some()), ("run.receiver", run.receiver.is_some())],
        };
        for (field, present) in needs {
            if !present {
                return Err(Self::err(src, field, format!("required for `{}`", self.experiment.name())));
            }
        }
        if self.experiment == ExperimentKind::Exchange && run.receiver_region.is_none() {
            return Err(Self::err(src, "run.receiver_region", "required for `exchange`"));
        }
        let start_len = if self.experiment == ExperimentKind::Trace { n + 1 } else { n };
        if let Some(s) = &run.start {
            if s.len() != start_len {
                return Err(Self::err(src, "run.start", format!("expected {start_len} components")));
            }
        }
        if let Some(d) = &run.direction {
            if d.len() != n || d.iter().all(|c| *c == 0.0) {
                return Err(Self::err(src, "run.direction", format!("expected {n} components, not all zero")));
            }
        }
        for (field, r) in [("run.region", &run.region), ("run.receiver_region", &run.receiver_region)] {
            if let Some(r) = r {
                if r.lo.len() != n || r.hi.len() != n {
                    return Err(Self::err(src, field, format!("expected {n} bounds per side")));
                }
            }
        }
        if run.oracle == Some(OracleKind::Flrw) && self.metric.family != Family::Flrw {
            return Err(Self::err(src, "run.oracle", "the flrw oracle needs an flrw metric"));
        }
        if run.oracle == Some(OracleKind::Doppler) && self.metric.family != Family::Minkowski {
            return Err(Self::err(src, "run.oracle", "the doppler oracle needs a minkowski metric"));
        }
        // building the geometry checks expressions, positivity and spacelikeness
        self.build_with(src)?;
        Ok(())
    }

    fn build_with(&self, src: &str) -> Result<Geometry, ConfigError> {
        let m = &self.metric;
        let n = m.spatial_dim;
        let range = m.time_range.map(|[a, b]| (a, b));
        let need = |field: &str, v: &Option<String>| {
            v.clone()
                .ok_or_else(|| Self::err(src, field, "required for this metric family"))
        };
        let metric = match m.family {
            Family::Minkowski => SpacetimeMetric::minkowski(n)
                .map_err(|e| Self::err(src, "metric.family", e.to_string()))?,
            Family::Flrw => {
                let a = need("metric.scale_factor", &m.scale_factor)?;
                let r = range.ok_or_else(|| Self::err(src, "metric.time_range", "required for flrw"))?;
                SpacetimeMetric::flrw(n, &a, m.parameters.clone(), r)
                    .map_err(|e| Self::err(src, "metric.scale_factor", e.to_string()))?
            }
            Family::Conformal => {
                let f = need("metric.factor", &m.factor)?;
                let r = range.ok_or_else(|| Self::err(src, "metric.time_range", "required for conformal"))?;
                SpacetimeMetric::conformal_product(n, &f, m.parameters.clone(), r)
                    .map_err(|e| Self::err(src, "metric.factor", e.to_string()))?
            }
        };
        let metric = Arc::new(metric);
        let mut surfaces = BTreeMap::new();
        for (i, s) in self.surfaces.iter().enumerate() {
            let field = |k: &str| format!("surfaces[{i}].{k}");
            let domain = match s.domain {
                DomainKind::Torus => Domain::Torus {
                    periods: s.periods.clone().unwrap_or_else(|| vec![1.0; n]),
                },
                DomainKind::Box => Domain::Box {
                    lo: s.lo.clone().ok_or_else(|| Self::err(src, &field("lo"), "required for box"))?,
                    hi: s.hi.clone().ok_or_else(|| Self::err(src, &field("hi"), "required for box"))?,
                },
                DomainKind::Unbounded => Domain::Unbounded,
            };
            let surf = CauchySurface::new(&s.name, &s.graph, domain, metric.clone(), &m.parameters)
                .map_err(|e| Self::err(src, &field("graph"), e.to_string()))?;
            surfaces.insert(s.name.clone(), surf);
        }
        let settings = TraceSettings {
            tolerances: Tolerances {
                atol: self.numerics.atol,
                rtol: self.numerics.rtol,
                max_steps: self.numerics.max_steps,
            },
            lambda_range: (self.numerics.lambda_range[0], self.numerics.lambda_range[1]),
            time_window: self.numerics.time_window.map(|[a, b]| (a, b)),
        };
        Ok(Geometry {
            metric,
            surfaces,
            settings,
        })
    }

    /// Metric, surfaces and trace settings described by the configuration.
    pub fn build(&self) -> Result<Geometry, ConfigError> {
        self.build_with("")
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(1)
    }
}

pub struct Geometry {
    pub metric: Arc<SpacetimeMetric>,
    pub surfaces: BTreeMap<String, CauchySurface>,
    pub settings: TraceSettings,
}

impl Geometry {
    pub fn surface(&self, name: &Option<String>) -> &CauchySurface {
        &self.surfaces[name.as_ref().expect("validated reference")]
    }
}

impl RegionSpec {
    pub fn region(&self) -> Region {
        Region::Box {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        }
    }
}
