use serde::Serialize;
use sha2::{Digest, Sha256};

/// Summary line emitted after every command's outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the instance bytes as read.
    pub instance_digest: String,
    pub config: serde_json::Value,
    pub telemetry: serde_json::Value,
    pub outputs: usize,
    /// Only present with `--timing`, since it breaks byte-identical output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `v<crate version>`, or the build-time describe string if one was given.
pub fn version() -> String {
    option_env!("PERMLLL_GIT_DESCRIBE")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Serialize)]
struct Wrapped<'a> {
    report: &'a RunReport,
}

impl RunReport {
    pub fn to_line(&self) -> String {
        serde_json::to_string(&Wrapped { report: self }).expect("report serializes")
    }
}
