#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgdpr_core::market_data::{CLOSE, INDICATORS, NUM_INDICATORS};
use mgdpr_core::synthetic::random_walk_panel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const START: &str = "2021-01-04";

/// A scratch directory with raw CSVs and a small run configuration.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(num_stocks: usize, num_days: usize, seed: u64) -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ws.write_market(num_stocks, num_days, seed);
        ws.write_config(&[]);
        ws
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write_market(&self, num_stocks: usize, num_days: usize, seed: u64) {
        let data = self.path("raw");
        fs::create_dir_all(&data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = chrono::NaiveDate::parse_from_str(START, "%Y-%m-%d").unwrap();
        let panel = random_walk_panel(num_stocks, num_days, 0.02, start, &mut rng).unwrap();
        for (i, ticker) in panel.tickers().iter().enumerate() {
            let mut body = format!("date,{}\n", INDICATORS.join(","));
            for (t, date) in panel.calendar().iter().enumerate() {
                write!(body, "{date}").unwrap();
                for r in 0..NUM_INDICATORS {
                    let v = panel.value(i, r, t);
                    if r == CLOSE || r + 1 == NUM_INDICATORS {
                        write!(body, ",{v}").unwrap();
                    } else {
                        write!(body, ",{v:.4}").unwrap();
                    }
                }
                body.push('\n');
            }
            fs::write(data.join(format!("{ticker}.csv")), body).unwrap();
        }
    }

    /// Writes `run.json`: a 40-day split layout and a tiny model, with
    /// `extra` key/value pairs (raw JSON values) appended.
    pub fn write_config(&self, extra: &[(&str, &str)]) {
        let mut entries = vec![
            ("market", "\"synthetic\"".to_string()),
            ("paths.data", "\"raw\"".into()),
            ("paths.cache", "\"cache\"".into()),
            ("paths.output", "\"out\"".into()),
            ("split.train.start", "\"2021-01-04\"".into()),
            ("split.train.end", "\"2021-02-05\"".into()),
            ("split.val.start", "\"2021-02-08\"".into()),
            ("split.val.end", "\"2021-02-12\"".into()),
            ("split.test.start", "\"2021-02-15\"".into()),
            ("split.test.end", "\"2021-03-31\"".into()),
            ("model.tau", "5".into()),
            ("model.layers", "1".into()),
            ("model.expansion_steps", "2".into()),
            ("model.embed_dim", "8".into()),
            ("train.epochs", "3".into()),
            ("train.learning_rate", "0.001".into()),
        ];
        for (k, v) in extra {
            entries.retain(|(key, _)| key != k);
            entries.push((k, v.to_string()));
        }
        let body = entries
            .iter()
            .map(|(k, v)| format!("  \"{k}\": {v}"))
            .collect::<Vec<_>>()
            .join(",\n");
        fs::write(self.path("run.json"), format!("{{\n{body}\n}}\n")).unwrap();
    }

    pub fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    pub fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let config = self.path("run.json");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mgdpr"));
        cmd.args(args).arg("--config").arg(&config).env("RUST_LOG", "warn");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    /// Runs a command and asserts success.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn exists(p: &Path) -> bool {
    p.exists()
}
