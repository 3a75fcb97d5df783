#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const QUADRATIC: &str = r#"
[model]
kind = "quadratic"
a = [[1.0, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 2.0]]

[dataset]
n_train = 40
n_eval = 40
generator = { kind = "gaussian_centers", mean = [0.5, 0.5, 0.5], std = [1.0, 1.0, 1.0] }

[sgd]
T = 12
eta = 0.1
batch = 8
subbatches = 2
seed = 3

[proxies]
m = 50
m_T = 400

[bound]
R = 1.0
mu = 2.0

[output]
prefix = "run"
"#;

pub const FIXED: &str = "[schedule]\nkind = \"fixed_isotropic\"\nsigma = 0.1\n";
pub const DIAGONAL: &str = "[schedule]\nkind = \"adaptive_diagonal\"\nsigma0 = 0.1\nc = 1.0\nbeta = 0.9\n";

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    pub fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    /// Runs the binary with `--out` pointing into the workspace.
    pub fn run(&self, config: Option<&Path>, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vperturb"));
        if let Some(c) = config {
            cmd.arg("--config").arg(c);
        }
        cmd.arg("--out").arg(self.dir.path()).args(args);
        cmd.output().unwrap()
    }
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Data rows of a CSV with `#` provenance lines, as header-keyed maps.
pub fn csv_rows(text: &str) -> Vec<std::collections::BTreeMap<String, String>> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| headers.iter().map(str::to_string).zip(r.unwrap().iter().map(str::to_string)).collect())
        .collect()
}
