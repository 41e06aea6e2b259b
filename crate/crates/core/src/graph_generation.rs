//! Per-day directed, weighted stock graphs built from signal energy and
//! information entropy of each stock's indicator window.
//!
//! For windows `x_i`, `x_j` of one indicator the edge from `i` to `j` is
//!
//! ```text
//! a_ij = E(x_i) / E(x_j) * exp(H(x_i) - H(x_j))
//! ```
//!
//! where `E` is the sum of squares and `H` the Shannon entropy of the
//! window's empirical value distribution. Every matrix therefore has a unit
//! diagonal and satisfies `a_ij * a_ji = 1`.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{MarketPanel, INDICATORS, NUM_INDICATORS};
use crate::tensor::Tensor;

/// Windows with less energy than this cannot anchor an energy ratio.
pub const ENERGY_FLOOR: f64 = 1e-12;

/// Values are compared after rounding to this many decimal places when
/// counting repeats for the entropy.
pub const ENTROPY_DECIMALS: i32 = 9;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("signal energy of an empty sequence")]
    EmptySequence,
    #[error("stock {stock} has degenerate {relation} series (energy {energy:e}) in the window ending at day {day}")]
    Degenerate {
        stock: String,
        relation: String,
        day: usize,
        energy: f64,
    },
    #[error("edge weight overflow between stocks {0} and {1}")]
    Overflow(usize, usize),
    #[error("window ending at day {day} needs tau={tau} days and day <= {last}")]
    DayOutOfRange { day: usize, tau: usize, last: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("graph cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// `Σ |x[o]|²`.
pub fn signal_energy(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(GraphError::EmptySequence);
    }
    Ok(x.iter().map(|v| v * v).sum())
}

fn quantize(v: f64) -> u64 {
    let scale = 10f64.powi(ENTROPY_DECIMALS);
    let q = (v * scale).round();
    // -0.0 and 0.0 are the same value
    if q == 0.0 {
        0
    } else {
        q.to_bits()
    }
}

/// Shannon entropy (nats) of the empirical distribution over the distinct
/// values of `x`, with values equal to 9 decimal places counted together.
/// Lies in `[0, ln len]`; an empty sequence has entropy 0.
pub fn information_entropy(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut keys: Vec<u64> = x.iter().map(|&v| quantize(v)).collect();
    keys.sort_unstable();
    let len = x.len() as f64;
    let mut h = 0.0;
    let mut start = 0;
    for i in 1..=keys.len() {
        if i == keys.len() || keys[i] != keys[start] {
            let p = (i - start) as f64 / len;
            h -= p * p.ln();
            start = i;
        }
    }
    // a single distinct value gives -(1 * ln 1) = -0.0
    h.max(0.0)
}

/// Dense adjacency for one relation from an `n × tau` row-major window.
///
/// On a degenerate row the error names the stock by index; callers with
/// more context rewrite it.
pub fn build_adjacency(window: &[f64], n: usize, tau: usize) -> Result<Tensor> {
    assert_eq!(window.len(), n * tau, "window must be n x tau");
    let mut energy = Vec::with_capacity(n);
    let mut entropy = Vec::with_capacity(n);
    for (i, row) in window.chunks(tau).enumerate() {
        let e = signal_energy(row)?;
        if e.is_nan() || e < ENERGY_FLOOR || !e.is_finite() {
            return Err(GraphError::Degenerate {
                stock: i.to_string(),
                relation: String::new(),
                day: 0,
                energy: e,
            });
        }
        energy.push(e);
        entropy.push(information_entropy(row));
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let w = if i == j {
                1.0
            } else {
                energy[i] / energy[j] * (entropy[i] - entropy[j]).exp()
            };
            if !w.is_finite() || w <= 0.0 {
                return Err(GraphError::Overflow(i, j));
            }
            a[i * n + j] = w;
        }
    }
    Ok(Tensor::new(&[n, n], a).expect("n x n"))
}

/// Divides each row by its sum.
pub fn row_normalize_for_model(a: &Tensor) -> Tensor {
    let n = *a.shape().last().expect("matrix");
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(a.shape(), out).expect("same shape")
}

/// The `|R|` adjacency matrices of one trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRelAdjacency {
    pub t_index: usize,
    /// `[relation, source, target]`.
    pub matrices: Tensor,
}

impl MultiRelAdjacency {
    /// Builds all relations from a `[relation, stock, offset]` window. The
    /// pipeline passes raw windows; z-scored ones are accepted too.
    pub fn from_raw_window(raw: &Tensor, t_index: usize, tickers: Option<&[String]>) -> Result<Self> {
        let &[r, n, tau] = raw.shape() else {
            panic!("raw window must be [relation, stock, offset], got {:?}", raw.shape());
        };
        let mut data = Vec::with_capacity(r * n * n);
        for rel in 0..r {
            let window = &raw.data()[rel * n * tau..(rel + 1) * n * tau];
            let a = build_adjacency(window, n, tau).map_err(|e| match e {
                GraphError::Degenerate { stock, energy, .. } => {
                    let idx: usize = stock.parse().unwrap_or(0);
                    GraphError::Degenerate {
                        stock: tickers.and_then(|t| t.get(idx).cloned()).unwrap_or(stock),
                        relation: INDICATORS.get(rel).map_or_else(|| rel.to_string(), |s| s.to_string()),
                        day: t_index,
                        energy,
                    }
                }
                other => other,
            })?;
            data.extend_from_slice(a.data());
        }
        Ok(Self {
            t_index,
            matrices: Tensor::new(&[r, n, n], data).expect("stacked"),
        })
    }

    pub fn num_relations(&self) -> usize {
        self.matrices.shape()[0]
    }

    pub fn num_stocks(&self) -> usize {
        self.matrices.shape()[1]
    }

    pub fn relation(&self, r: usize) -> Tensor {
        self.matrices.select(r).expect("relation index")
    }

    /// Every relation matrix row-normalized.
    pub fn normalized(&self) -> Tensor {
        row_normalize_for_model(&self.matrices)
    }
}

/// Graphs for the window of `tau` days ending at day `t`.
pub fn build_day_graphs(panel: &MarketPanel, t: usize, tau: usize) -> Result<MultiRelAdjacency> {
    if tau == 0 || t + 1 < tau || t >= panel.num_days() {
        return Err(GraphError::DayOutOfRange {
            day: t,
            tau,
            last: panel.num_days().saturating_sub(1),
        });
    }
    let raw = panel.raw_window(t, tau).expect("range checked");
    MultiRelAdjacency::from_raw_window(&raw, t, Some(panel.tickers()))
}

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphIndex {
    pub tau: usize,
    pub num_stocks: usize,
    pub relations: Vec<String>,
    /// Identifies the panel the graphs were generated from.
    pub panel_fingerprint: String,
    pub days: Vec<GraphDay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDay {
    pub t_index: usize,
    pub date: NaiveDate,
    pub files: Vec<String>,
}

fn file_name(t: usize, relation: usize) -> String {
    let name = INDICATORS.get(relation).map_or_else(|| format!("r{relation}"), |s| s.to_string());
    format!("day_{t:05}_{name}.csv")
}

/// Writes one `i,j,weight` CSV per (day, relation) with 17 significant
/// digits, plus `index.json`.
pub fn write_graph_cache(
    dir: &Path,
    graphs: &[MultiRelAdjacency],
    calendar: &[NaiveDate],
    tau: usize,
    panel_fingerprint: &str,
) -> Result<GraphIndex> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GraphError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let num_stocks = graphs.first().map_or(0, MultiRelAdjacency::num_stocks);
    let num_relations = graphs.first().map_or(NUM_INDICATORS, MultiRelAdjacency::num_relations);
    let mut days = Vec::with_capacity(graphs.len());
    for g in graphs {
        let n = g.num_stocks();
        let mut files = Vec::with_capacity(g.num_relations());
        for r in 0..g.num_relations() {
            let name = file_name(g.t_index, r);
            let mut body = String::with_capacity(n * n * 32 + 16);
            body.push_str("i,j,weight\n");
            let a = g.relation(r);
            for i in 0..n {
                for j in 0..n {
                    body.push_str(&format!("{i},{j},{:.16e}\n", a.data()[i * n + j]));
                }
            }
            let path = dir.join(&name);
            fs::write(&path, body).map_err(io(&path))?;
            files.push(name);
        }
        days.push(GraphDay {
            t_index: g.t_index,
            date: calendar[g.t_index],
            files,
        });
    }
    let index = GraphIndex {
        tau,
        num_stocks,
        relations: INDICATORS.iter().take(num_relations).map(|s| s.to_string()).collect(),
        panel_fingerprint: panel_fingerprint.to_string(),
        days,
    };
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, json + "\n").map_err(io(&path))?;
    Ok(index)
}

pub fn read_graph_index(dir: &Path) -> Result<GraphIndex> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|source| GraphError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| GraphError::Cache {
        path,
        message: e.to_string(),
    })
}

/// Reads back every day listed in the index.
pub fn read_graph_cache(dir: &Path) -> Result<(GraphIndex, Vec<MultiRelAdjacency>)> {
    let index = read_graph_index(dir)?;
    let n = index.num_stocks;
    let mut graphs = Vec::with_capacity(index.days.len());
    for day in &index.days {
        let mut data = Vec::with_capacity(day.files.len() * n * n);
        for name in &day.files {
            let path = dir.join(name);
            data.extend(read_matrix(&path, n)?);
        }
        let matrices = Tensor::new(&[day.files.len(), n, n], data).map_err(|e| GraphError::Cache {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        graphs.push(MultiRelAdjacency {
            t_index: day.t_index,
            matrices,
        });
    }
    Ok((index, graphs))
}

fn read_matrix(path: &Path, n: usize) -> Result<Vec<f64>> {
    let bad = |message: String| GraphError::Cache {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    if lines.next() != Some("i,j,weight") {
        return Err(bad("missing header i,j,weight".into()));
    }
    let mut out = vec![f64::NAN; n * n];
    for (lineno, line) in lines.enumerate() {
        let mut parts = line.split(',');
        let parsed = (|| {
            let i: usize = parts.next()?.parse().ok()?;
            let j: usize = parts.next()?.parse().ok()?;
            let w: f64 = parts.next()?.parse().ok()?;
            (i < n && j < n && parts.next().is_none()).then_some((i, j, w))
        })();
        let (i, j, w) = parsed.ok_or_else(|| bad(format!("line {}: malformed edge", lineno + 2)))?;
        out[i * n + j] = w;
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(bad(format!("expected all {n}x{n} edges")));
    }
    Ok(out)
}
