use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

/// Result of one experiment run. Everything except `timestamp` is a
/// function of the configuration alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub experiment: String,
    pub passed: bool,
    pub tolerance: f64,
    pub seed: u64,
    pub samples: usize,
    pub value: Option<f64>,
    pub std_error: Option<f64>,
    pub escape_fraction: Option<f64>,
    pub oracle: Option<f64>,
    pub residual: Option<f64>,
    pub residual_sigma: Option<f64>,
    pub details: BTreeMap<String, f64>,
    pub timestamp: u64,
}

impl Report {
    pub fn new(experiment: &str, tolerance: f64, seed: u64, samples: usize) -> Self {
        Report {
            experiment: experiment.to_string(),
            passed: false,
            tolerance,
            seed,
            samples,
            value: None,
            std_error: None,
            escape_fraction: None,
            oracle: None,
            residual: None,
            residual_sigma: None,
            details: BTreeMap::new(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn detail(&mut self, key: &str, v: f64) {
        self.details.insert(key.to_string(), v);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// `key,value` rows; details are flattened as `details.<key>`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut rows = vec![
            ("experiment".to_string(), self.experiment.clone()),
            ("passed".into(), self.passed.to_string()),
            ("tolerance".into(), format!("{:e}", self.tolerance)),
            ("seed".into(), self.seed.to_string()),
            ("samples".into(), self.samples.to_string()),
            ("value".into(), opt(self.value)),
            ("std_error".into(), opt(self.std_error)),
            ("escape_fraction".into(), opt(self.escape_fraction)),
            ("oracle".into(), opt(self.oracle)),
            ("residual".into(), opt(self.residual)),
            ("residual_sigma".into(), opt(self.residual_sigma)),
        ];
        rows.extend(self.details.iter().map(|(k, v)| (format!("details.{k}"), format!("{v:e}"))));
        rows.push(("timestamp".into(), self.timestamp.to_string()));
        let mut out = String::from("key,value\n");
        for (k, v) in rows {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}
