//! Parameter sweeps: one optimization plus bounds per grid point and copy count.

use std::collections::BTreeMap;
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundSelection};
use crate::error::{Error, Result};
use crate::model::{dim_cap, ModelFamily, ModelSpec};
use crate::optimizer::{self, OptConfig};

/// CSV header shared by every sweep output.
pub const CSV_HEADER: &str = "theta,epsilon,M,K,K_star,objective,sld,holevo,nh,iterations,seed";

/// Coordinate varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinate {
    Theta1,
    Theta2,
    Theta3,
    Epsilon,
}

impl std::str::FromStr for Coordinate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "theta1" => Ok(Self::Theta1),
            "theta2" => Ok(Self::Theta2),
            "theta3" => Ok(Self::Theta3),
            "epsilon" | "eps" => Ok(Self::Epsilon),
            other => Err(Error::Parse(format!("unknown grid coordinate '{other}'"))),
        }
    }
}

/// Grid values: an explicit list or `steps` evenly spaced points from
/// `start` to `stop` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValues {
    List { values: Vec<f64> },
    Range { start: f64, stop: f64, steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub coordinate: Coordinate,
    #[serde(flatten)]
    pub values: GridValues,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        match &self.values {
            GridValues::List { values } => values.clone(),
            GridValues::Range { start, stop, steps } => match steps {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n).map(|i| start + (stop - start) * i as f64 / (*n - 1) as f64).collect(),
            },
        }
    }

    /// Parses `coord=start:stop:steps` or `coord=v1,v2,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let (coord, rest) = text
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("grid '{text}' must look like coord=values")))?;
        let coordinate = coord.parse()?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("'{s}' is not a number")))
        };
        let values = if rest.contains(':') {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("range '{rest}' must be start:stop:steps")));
            }
            let steps = parts[2]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("'{}' is not a step count", parts[2])))?;
            GridValues::Range { start: num(parts[0])?, stop: num(parts[1])?, steps }
        } else {
            GridValues::List { values: rest.split(',').map(num).collect::<Result<_>>()? }
        };
        Ok(Self { coordinate, values })
    }
}

/// Which bounds a sweep computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundFlags {
    #[serde(default = "yes")]
    pub sld: bool,
    #[serde(default = "yes")]
    pub holevo: bool,
    #[serde(default = "yes")]
    pub nh: bool,
}

fn yes() -> bool {
    true
}

impl Default for BoundFlags {
    fn default() -> Self {
        Self { sld: true, holevo: true, nh: true }
    }
}

impl BoundFlags {
    pub const NONE: Self = Self { sld: false, holevo: false, nh: false };

    /// Parses a comma list such as `sld,nh`; `none` disables all.
    pub fn parse(text: &str) -> Result<Self> {
        let mut flags = Self::NONE;
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "sld" => flags.sld = true,
                "holevo" => flags.holevo = true,
                "nh" => flags.nh = true,
                "all" => flags = Self::default(),
                "none" => {}
                other => return Err(Error::Parse(format!("unknown bound '{other}'"))),
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: ModelSpec,
    pub grid: Grid,
    #[serde(default = "default_copies")]
    pub copies: Vec<usize>,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default)]
    pub bounds: BoundFlags,
    /// Also search for the minimal outcome count at every point.
    #[serde(default)]
    pub find_k_star: bool,
}

fn default_copies() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "K_star")]
    pub k_star: Option<usize>,
    pub objective: Option<f64>,
    pub sld: Option<f64>,
    pub holevo: Option<f64>,
    pub nh: Option<f64>,
    pub iterations: Option<usize>,
    pub restarts_used: usize,
    pub seed: u64,
    /// Failures and notes; not part of the CSV.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Formats with 9 significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // round first so the exponent accounts for carries such as 0.99999999996
    let sci = format!("{x:.8e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-5..15).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, x)
    } else {
        sci
    }
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(format_sig).unwrap_or_default();
        let u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            f(self.theta),
            f(self.epsilon),
            self.m.to_string(),
            u(self.k),
            u(self.k_star),
            f(self.objective),
            f(self.sld),
            f(self.holevo),
            f(self.nh),
            u(self.iterations),
            self.seed.to_string(),
        ]
        .join(",")
    }
}

impl SweepSpec {
    /// The model spec at one grid value.
    pub fn model_at(&self, value: f64, copies: usize) -> Result<ModelSpec> {
        let mut spec = self.model.clone();
        spec.copies = copies;
        match (self.grid.coordinate, spec.family) {
            (Coordinate::Epsilon, ModelFamily::Dephasing) => match spec.theta.last_mut() {
                Some(eps) => *eps = value,
                None => return Err(Error::InvalidConfig("dephasing theta is empty".into())),
            },
            (Coordinate::Epsilon, ModelFamily::Bloch) => {
                return Err(Error::InvalidConfig("epsilon grid needs the dephasing family".into()));
            }
            (coord, family) => {
                let idx = match coord {
                    Coordinate::Theta1 => 0,
                    Coordinate::Theta2 => 1,
                    _ => 2,
                };
                if family == ModelFamily::Dephasing {
                    if spec.theta.len() == 1 {
                        spec.theta = vec![0.0, 0.0, spec.theta[0]];
                    }
                    if idx > 1 {
                        return Err(Error::InvalidConfig("the dephasing family has no theta3".into()));
                    }
                } else if spec.theta.len() < 3 {
                    spec.theta.resize(3, 0.0);
                }
                spec.theta[idx] = value;
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.points().is_empty() {
            return Err(Error::InvalidConfig("empty grid".into()));
        }
        if self.copies.is_empty() || self.copies.contains(&0) {
            return Err(Error::InvalidConfig("copies must be a non-empty list of positive counts".into()));
        }
        for v in self.grid.points() {
            self.model_at(v, 1)?.base_model()?;
        }
        self.opt.validate()
    }

    /// `(grid value, copies)` pairs in output order.
    pub fn jobs(&self) -> Vec<(f64, usize)> {
        self.grid
            .points()
            .into_iter()
            .flat_map(|v| self.copies.iter().map(move |&m| (v, m)))
            .collect()
    }
}

/// Evaluates one grid point; failures end up in the row's diagnostics.
pub fn sweep_point(spec: &SweepSpec, value: f64, copies: usize) -> SweepRow {
    let is_eps = spec.grid.coordinate == Coordinate::Epsilon;
    let mut row = SweepRow {
        theta: (!is_eps).then_some(value),
        epsilon: if is_eps { Some(value) } else { spec.model.epsilon() },
        m: copies,
        k: None,
        k_star: None,
        objective: None,
        sld: None,
        holevo: None,
        nh: None,
        iterations: None,
        restarts_used: spec.opt.restarts,
        seed: spec.opt.seed,
        diagnostics: Vec::new(),
    };
    let model = match spec.model_at(value, copies).and_then(|m| m.build_with_cap(dim_cap())) {
        Ok(m) => m,
        Err(e) => {
            row.diagnostics.push(format!("model: {e}"));
            return row;
        }
    };
    let w = match spec.opt.weight_matrix(model.n_params()) {
        Ok(w) => w,
        Err(e) => {
            row.diagnostics.push(format!("weight: {e}"));
            return row;
        }
    };
    row.k = Some(spec.opt.effective_k(model.dim(), model.n_params()));

    let best = if spec.find_k_star {
        optimizer::find_min_outcomes(&model, &spec.opt).map(|res| {
            row.k_star = Some(res.k_star);
            if let Some(&(k, _)) = res.per_k.first() {
                row.k = Some(k);
            }
            res.run
        })
    } else {
        optimizer::multi_restart(&model, &spec.opt)
    };
    match best {
        Ok(run) => {
            row.objective = Some(run.final_objective);
            row.iterations = Some(run.iterations_used);
        }
        Err(e) => row.diagnostics.push(format!("optimizer: {e}")),
    }

    if spec.bounds.sld || spec.bounds.holevo {
        match bounds::sld_bound(&model, &w) {
            Ok(v) if spec.bounds.sld => row.sld = Some(v),
            Ok(_) => {}
            Err(e) => row.diagnostics.push(format!("sld: {e}")),
        }
    }
    if spec.bounds.holevo {
        match bounds::holevo_dinv(&model, &w) {
            Ok(v) => row.holevo = Some(v),
            Err(e) => row.diagnostics.push(format!("holevo: {e}")),
        }
    }
    if spec.bounds.nh {
        let select = BoundSelection { holevo: false, nh: true };
        match bounds::bound_report(&model, &w, select) {
            Ok(r) => {
                row.nh = r.nh_value;
                if r.nh_value.is_none() {
                    row.diagnostics.push(r.diagnostics);
                }
            }
            Err(e) => row.diagnostics.push(format!("nh: {e}")),
        }
    }
    row
}

/// Runs every point in parallel and hands rows to `emit` in grid order as
/// soon as all earlier rows are done.
pub fn run_sweep(spec: &SweepSpec, mut emit: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let jobs = spec.jobs();
    let (tx, rx) = mpsc::channel::<(usize, SweepRow)>();
    let mut rows = Vec::with_capacity(jobs.len());
    std::thread::scope(|scope| {
        scope.spawn(|| {
            jobs.par_iter().enumerate().for_each_with(tx, |tx, (i, &(v, m))| {
                // the receiver only disappears if the caller panicked
                let _ = tx.send((i, sweep_point(spec, v, m)));
            });
        });
        let mut pending = BTreeMap::new();
        for (i, row) in rx {
            pending.insert(i, row);
            while let Some(row) = pending.remove(&rows.len()) {
                emit(&row);
                rows.push(row);
            }
        }
    });
    Ok(rows)
}
