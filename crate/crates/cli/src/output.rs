//! Config loading, hashing, output headers and error classification.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Seeded;
use crate::CommonArgs;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit code 2 for configuration and input errors, 3 for numerical failures.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Numerical(m) => write!(f, "numerical: {m}"),
        }
    }
}

impl From<ridgefe::Error> for Failure {
    fn from(e: ridgefe::Error) -> Self {
        use ridgefe::Error::*;
        match e {
            InvalidInput(_)
            | IndexOutOfRange { .. }
            | NegativeMultiplicity { .. }
            | ZeroDegree { .. }
            | Disconnected { .. }
            | DenseCapExceeded { .. }
            | ExcessiveClipping { .. }
            | ZeroPenalty
            | Io(_)
            | Csv(_)
            | Json(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

/// A parsed configuration with its hash and the directory relative paths
/// resolve against.
pub struct Loaded<C> {
    pub config: C,
    pub hash: String,
    pub base: PathBuf,
    pub out: PathBuf,
    pub verbose: bool,
}

impl<C: Serialize> Loaded<C> {
    pub fn header(&self) -> Vec<String> {
        vec![format!("config_sha256={}", self.hash), format!("version=ridgefe {VERSION}")]
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[ridgefe] {}", msg.as_ref());
        }
    }

    /// JSON envelope carrying version, hash and the resolved config.
    pub fn envelope<R: Serialize>(&self, result: R) -> Envelope<'_, C, R> {
        Envelope { version: VERSION, config_sha256: &self.hash, config: &self.config, result }
    }
}

#[derive(Serialize)]
pub struct Envelope<'a, C, R> {
    pub version: &'static str,
    pub config_sha256: &'a str,
    pub config: &'a C,
    pub result: R,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load<C: DeserializeOwned + Serialize + Seeded>(args: &CommonArgs) -> CmdResult<Loaded<C>> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config: C =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    let canonical = serde_json::to_string(&config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(t) = config.threads() {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", args.out_dir.display())))?;
    Ok(Loaded {
        config,
        hash: sha256_hex(canonical.as_bytes()),
        base: args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
        out: args.out_dir.clone(),
        verbose: args.verbose,
    })
}
