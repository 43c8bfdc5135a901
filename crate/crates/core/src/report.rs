use serde::Serialize;

/// Outcome of one verification check.  `residual` is `None` for exact
/// symbolic checks (a pass means "identically zero on the certified
/// window"), and the largest absolute residual for numeric checks.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub params: serde_json::Value,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub runtime_ms: u64,
}

impl CheckReport {
    pub fn exact(name: &str, params: serde_json::Value, passed: bool, detail: &str) -> Self {
        CheckReport {
            name: name.to_string(),
            params,
            passed,
            residual: None,
            tolerance: None,
            detail: if detail.is_empty() {
                None
            } else {
                Some(detail.to_string())
            },
            runtime_ms: 0,
        }
    }

    pub fn numeric(
        name: &str,
        params: serde_json::Value,
        residual: f64,
        tolerance: f64,
    ) -> Self {
        CheckReport {
            name: name.to_string(),
            params,
            passed: residual <= tolerance,
            residual: Some(residual),
            tolerance: Some(tolerance),
            detail: None,
            runtime_ms: 0,
        }
    }

    pub fn with_runtime(mut self, ms: u64) -> Self {
        self.runtime_ms = ms;
        self
    }

    pub fn one_line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        match self.residual {
            Some(r) => format!(
                "{status} {} residual={:.3e} tol={:.1e}",
                self.name,
                r,
                self.tolerance.unwrap_or(f64::NAN)
            ),
            None => format!("{status} {} (exact)", self.name),
        }
    }
}
