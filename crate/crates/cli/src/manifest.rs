use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Everything needed to rerun a command: its arguments, resolved configuration and inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command_line: Vec<String>,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub input: Option<String>,
    pub input_sha256: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn start(command_line: Vec<String>, subcommand: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command_line,
            subcommand: subcommand.to_string(),
            config: serde_json::Value::Null,
            seed: None,
            threads: rayon::current_num_threads(),
            input: None,
            input_sha256: None,
            started_at: now(),
            finished_at: String::new(),
            exit_code: 0,
        }
    }

    pub fn finish(&mut self, exit_code: i32) {
        self.finished_at = now();
        self.exit_code = exit_code;
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<out>.manifest.json` next to a report file.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
