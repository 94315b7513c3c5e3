//! Monte-Carlo campaigns: configuration, parallel execution, CSV output and
//! aggregation into plot-ready tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::beamformer::Budgets;
use crate::error::{Error, Result};
use crate::geometry::{build_layout, sample_channels_with_direct, ArrayConfig, FadingParams};
use crate::orchestrator::{run_algorithm2, ConvergenceTrace, RunConfig, SchemeKind, SchemeSpec, SolverSettings};
use crate::system::{dbm_to_mw, Noise, Weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub rician_factor_db: f64,
    pub pathloss_exponent: f64,
    /// Noise power at every receiver (dBm).
    pub noise_dbm: f64,
    pub gain_exponent_tx: f64,
    pub gain_exponent_rx: f64,
    /// User-to-user links decay with distance instead of `r^(kappa/2)`.
    pub uu_free_space: bool,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            rician_factor_db: 3.0,
            pathloss_exponent: 2.5,
            noise_dbm: -80.0,
            gain_exponent_tx: 2.0,
            gain_exponent_rx: 2.0,
            uu_free_space: true,
        }
    }
}

impl Physics {
    pub fn fading(&self) -> FadingParams {
        FadingParams {
            uu_free_space: self.uu_free_space,
            ..FadingParams::from_db(
                self.rician_factor_db,
                self.pathloss_exponent,
                self.gain_exponent_tx,
                self.gain_exponent_rx,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Powers {
    pub p_b_dbm: f64,
    pub p_u_dbm: f64,
}

impl Default for Powers {
    fn default() -> Self {
        Self {
            p_b_dbm: 10.0,
            p_u_dbm: 5.0,
        }
    }
}

/// Uniform rate weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub gamma_d: f64,
    pub gamma_u: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            gamma_d: 0.5,
            gamma_u: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "L")]
    Elements,
    #[serde(rename = "P_B")]
    PB,
    #[serde(rename = "P_U")]
    PU,
    #[serde(rename = "tx_ios_distance")]
    TxIosDistance,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Elements => "L",
            SweepAxis::PB => "P_B",
            SweepAxis::PU => "P_U",
            SweepAxis::TxIosDistance => "tx_ios_distance",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Parameter(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            axis: SweepAxis::None,
            values: Vec::new(),
        }
    }
}

impl Sweep {
    /// Sweep points; a campaign without a sweep has a single point at 0.
    pub fn points(&self) -> Vec<f64> {
        match self.axis {
            SweepAxis::None => vec![0.0],
            _ => self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { base: u64, count: u64 },
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Range { base: 0, count: 10 }
    }
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { base, count } => (0..*count).map(|i| base + i).collect(),
        }
    }
}

fn default_schemes() -> Vec<SchemeSpec> {
    [SchemeKind::DsIos, SchemeKind::SsIos, SchemeKind::WoIos]
        .into_iter()
        .map(SchemeSpec::new)
        .collect()
}

/// A complete, self-describing campaign. Every field has a default, so `{}`
/// is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub name: String,
    pub scenario: ArrayConfig,
    pub physics: Physics,
    pub powers: Powers,
    pub weights: WeightConfig,
    pub solver: SolverSettings,
    pub sweep: Sweep,
    pub schemes: Vec<SchemeSpec>,
    pub seeds: Seeds,
    /// Write one convergence trace CSV per run.
    pub write_traces: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            name: "campaign".into(),
            scenario: ArrayConfig::default(),
            physics: Physics::default(),
            powers: Powers::default(),
            weights: WeightConfig::default(),
            solver: SolverSettings::default(),
            sweep: Sweep::default(),
            schemes: default_schemes(),
            seeds: Seeds::default(),
            write_traces: true,
        }
    }
}

fn parse_value(value: Value) -> Result<CampaignConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })
}

/// Parses a dotted override path such as `powers.p-b-dbm` into JSON keys.
fn override_keys(path: &str) -> Vec<String> {
    path.trim_start_matches("--")
        .split('.')
        .map(|k| k.replace('-', "_"))
        .collect()
}

fn set_path(root: &mut Value, keys: &[String], value: Value, full: &str) -> Result<()> {
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(full, format!("`{}` is not an object", keys[..i].join("."))))?;
        let slot = obj
            .get_mut(key.as_str())
            .ok_or_else(|| Error::config(full, format!("unknown field `{key}`")))?;
        if i + 1 == keys.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(Error::config(full, "empty override path"))
}

impl CampaignConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        let cfg = parse_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_json_str(&text)
    }

    /// Applies `(path, value)` overrides, e.g. `("powers.p-b-dbm", "12")`.
    /// Values are read as JSON when possible and as strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[(S, S)]) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for (path, raw) in overrides {
            let (path, raw) = (path.as_ref(), raw.as_ref());
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut root, &override_keys(path), value, path)?;
        }
        let cfg = parse_value(root)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, msg: String| Err(Error::config(path, msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail("name", format!("`{}` is not a usable directory name", self.name));
        }
        if self.scenario.user_anchors.is_empty() {
            return fail("scenario.user_anchors", "at least one user is required".into());
        }
        if self.schemes.is_empty() {
            return fail("schemes", "at least one scheme is required".into());
        }
        for (i, s) in self.schemes.iter().enumerate() {
            s.validate().or_else(|e| fail(&format!("schemes[{i}]"), e.to_string()))?;
        }
        let mut labels: Vec<String> = self.schemes.iter().map(SchemeSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.schemes.len() {
            return fail("schemes", "scheme labels must be distinct".into());
        }
        if self.seeds.expand().is_empty() {
            return fail("seeds", "at least one seed is required".into());
        }
        if self.sweep.axis != SweepAxis::None && self.sweep.values.is_empty() {
            return fail("sweep.values", "sweep values must be nonempty".into());
        }
        for (i, &v) in self.sweep.values.iter().enumerate() {
            let path = format!("sweep.values[{i}]");
            let ok = match self.sweep.axis {
                SweepAxis::None => true,
                SweepAxis::Elements => v >= 1.0 && v.fract() == 0.0,
                SweepAxis::PB | SweepAxis::PU => !v.is_nan() && v < f64::INFINITY,
                SweepAxis::TxIosDistance => v.is_finite() && v > 0.0,
            };
            if !ok {
                return fail(&path, format!("{v} is not a valid {} value", self.sweep.axis.label()));
            }
        }
        for (path, g) in [("weights.gamma_d", self.weights.gamma_d), ("weights.gamma_u", self.weights.gamma_u)] {
            if !(g > 0.0 && g < 1.0) {
                return fail(path, format!("weights must lie in (0, 1), got {g}"));
            }
        }
        if !self.physics.noise_dbm.is_finite() {
            return fail("physics.noise_dbm", "noise power must be finite".into());
        }
        self.physics.fading().validate().or_else(|e| fail("physics", e.to_string()))?;
        self.solver.validate().or_else(|e| fail("solver", e.to_string()))?;
        for point in self.sweep.points() {
            let (scenario, _) = self.at_point(point);
            build_layout(&scenario).map_err(|e| match e {
                Error::Geometry(m) => Error::Geometry(m),
                other => Error::config("scenario", other.to_string()),
            })?;
        }
        Ok(())
    }

    /// Scenario and powers with the sweep axis set to `value`.
    pub fn at_point(&self, value: f64) -> (ArrayConfig, Powers) {
        let mut scenario = self.scenario.clone();
        let mut powers = self.powers;
        match self.sweep.axis {
            SweepAxis::None => {}
            SweepAxis::Elements => scenario.elements = value as usize,
            SweepAxis::PB => powers.p_b_dbm = value,
            SweepAxis::PU => powers.p_u_dbm = value,
            SweepAxis::TxIosDistance => {
                let t = scenario.tx_anchor;
                let d: Vec<f64> = (0..3).map(|i| scenario.ios_anchor[i] - t[i]).collect();
                let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                let dir = if norm > 0.0 { [d[0] / norm, d[1] / norm, d[2] / norm] } else { [1.0, 0.0, 0.0] };
                scenario.ios_anchor = [t[0] + value * dir[0], t[1] + value * dir[1], t[2] + value * dir[2]];
            }
        }
        (scenario, powers)
    }

    pub fn run_config(&self, k: usize, powers: Powers) -> RunConfig {
        RunConfig {
            weights: Weights {
                gamma_d: vec![self.weights.gamma_d; k],
                gamma_u: vec![self.weights.gamma_u; k],
            },
            noise: Noise::from_dbm(k, self.physics.noise_dbm),
            budgets: Budgets {
                p_b: dbm_to_mw(powers.p_b_dbm),
                p_u: dbm_to_mw(powers.p_u_dbm),
            },
        }
    }

    /// Runs in canonical order: scheme (as listed), sweep point, seed.
    pub fn jobs(&self) -> Vec<Job> {
        let points = self.sweep.points();
        let seeds = self.seeds.expand();
        let mut jobs = Vec::with_capacity(self.schemes.len() * points.len() * seeds.len());
        for scheme in &self.schemes {
            for &sweep_value in &points {
                for &seed in &seeds {
                    jobs.push(Job {
                        scheme: *scheme,
                        sweep_value,
                        seed,
                    });
                }
            }
        }
        jobs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub scheme: SchemeSpec,
    pub sweep_value: f64,
    pub seed: u64,
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: String,
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub seed: u64,
    /// bits/s/Hz
    pub weighted_sum_rate: f64,
    pub iterations: usize,
    pub terminated_by: String,
    pub r_down: Vec<f64>,
    pub r_up: Vec<f64>,
    pub wall_time_ms: f64,
}

/// One finished run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: ResultRow,
    pub trace: ConvergenceTrace,
}

fn execute(cfg: &CampaignConfig, job: &Job) -> Result<RunRecord> {
    let started = Instant::now();
    let (scenario, powers) = cfg.at_point(job.sweep_value);
    let layout = build_layout(&scenario)?;
    let ch = sample_channels_with_direct(&layout, &cfg.physics.fading(), job.seed)?;
    let run_cfg = cfg.run_config(ch.users(), powers);
    let out = run_algorithm2(&ch, &run_cfg, &job.scheme, &cfg.solver)?;
    Ok(RunRecord {
        row: ResultRow {
            scheme: job.scheme.label(),
            sweep_axis: cfg.sweep.axis.label().to_string(),
            sweep_value: job.sweep_value,
            seed: job.seed,
            weighted_sum_rate: out.report.weighted_sum,
            iterations: out.trace.iterations,
            terminated_by: out.trace.terminated_by.label().to_string(),
            r_down: out.report.r_down,
            r_up: out.report.r_up,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        },
        trace: out.trace,
    })
}

/// Runs every job on a pool of `threads` workers (all cores when `None`).
/// The returned records are in canonical job order whatever the scheduling.
pub fn run_campaign(cfg: &CampaignConfig, threads: Option<usize>) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let jobs = cfg.jobs();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::config("--threads", "thread count must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    log::info!("campaign `{}`: {} runs", cfg.name, jobs.len());
    pool.install(|| jobs.par_iter().map(|job| execute(cfg, job)).collect())
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str, column: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Aggregation(format!("column `{column}`: `{s}` is not a number")))
}

/// Writes rows as CSV. Floats use the shortest representation that parses
/// back to the same value.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let k = rows.iter().map(|r| r.r_down.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["scheme", "sweep_axis", "sweep_value", "seed", "weighted_sum_rate", "iterations", "terminated_by"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..k).map(|i| format!("r_down_{i}")));
    header.extend((0..k).map(|i| format!("r_up_{i}")));
    header.push("wall_time_ms".into());
    w.write_record(&header)?;
    for r in rows {
        if r.r_down.len() != k || r.r_up.len() != k {
            return Err(Error::Structural("all rows must have the same number of users".into()));
        }
        let mut rec = vec![
            r.scheme.clone(),
            r.sweep_axis.clone(),
            fmt_value(r.sweep_value),
            r.seed.to_string(),
            fmt_value(r.weighted_sum_rate),
            r.iterations.to_string(),
            r.terminated_by.clone(),
        ];
        rec.extend(r.r_down.iter().map(|v| fmt_value(*v)));
        rec.extend(r.r_up.iter().map(|v| fmt_value(*v)));
        rec.push(fmt_value(r.wall_time_ms));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Aggregation(format!("missing column `{name}`")))
    };
    let (c_scheme, c_axis, c_value, c_seed, c_rate, c_iter, c_term, c_wall) = (
        col("scheme")?,
        col("sweep_axis")?,
        col("sweep_value")?,
        col("seed")?,
        col("weighted_sum_rate")?,
        col("iterations")?,
        col("terminated_by")?,
        col("wall_time_ms")?,
    );
    let down: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with("r_down_")).map(|(i, _)| i).collect();
    let up: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with("r_up_")).map(|(i, _)| i).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ResultRow {
            scheme: get(c_scheme).to_string(),
            sweep_axis: get(c_axis).to_string(),
            sweep_value: parse_f64(get(c_value), "sweep_value")?,
            seed: get(c_seed)
                .parse()
                .map_err(|_| Error::Aggregation(format!("column `seed`: `{}` is not an integer", get(c_seed))))?,
            weighted_sum_rate: parse_f64(get(c_rate), "weighted_sum_rate")?,
            iterations: get(c_iter)
                .parse()
                .map_err(|_| Error::Aggregation(format!("column `iterations`: `{}` is not an integer", get(c_iter))))?,
            terminated_by: get(c_term).to_string(),
            r_down: down.iter().map(|&i| parse_f64(get(i), "r_down")).collect::<Result<_>>()?,
            r_up: up.iter().map(|&i| parse_f64(get(i), "r_up")).collect::<Result<_>>()?,
            wall_time_ms: parse_f64(get(c_wall), "wall_time_ms")?,
        });
    }
    Ok(rows)
}

pub fn write_trace<W: Write>(trace: &ConvergenceTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "weighted_sum_rate"])?;
    for (i, r) in trace.rates.iter().enumerate() {
        w.write_record([i.to_string(), fmt_value(*r)])?;
    }
    w.flush()?;
    Ok(())
}

/// Rates of a trace file, entry 0 being the initial point.
pub fn read_trace<R: std::io::Read>(input: R) -> Result<Vec<f64>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.records()
        .map(|rec| {
            let rec = rec?;
            parse_f64(rec.get(1).unwrap_or(""), "weighted_sum_rate")
        })
        .collect()
}

pub fn trace_file_name(scheme: &str, sweep_value: f64, seed: u64) -> String {
    format!("{scheme}_{}_{seed}.csv", fmt_value(sweep_value))
}

/// Writes `results.csv`, `config.echo.json` and (optionally) `traces/` under
/// `out_root/<name>/`. Returns that directory.
pub fn write_campaign(out_root: &Path, cfg: &CampaignConfig, records: &[RunRecord]) -> Result<PathBuf> {
    let dir = out_root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    let rows: Vec<ResultRow> = records.iter().map(|r| r.row.clone()).collect();
    write_results(&rows, fs::File::create(dir.join("results.csv"))?)?;
    let mut echo = serde_json::to_string_pretty(cfg)?;
    echo.push('\n');
    fs::write(dir.join("config.echo.json"), echo)?;
    if cfg.write_traces {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        for rec in records {
            let name = trace_file_name(&rec.row.scheme, rec.row.sweep_value, rec.row.seed);
            write_trace(&rec.trace, fs::File::create(traces.join(name))?)?;
        }
    }
    Ok(dir)
}

/// Mean and standard error of the mean (sample standard deviation over `sqrt(n)`).
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Aggregation("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub scheme: String,
    /// Outer iteration, only for convergence figures.
    pub iteration: Option<usize>,
    pub mean_rate: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Convergence traces.
    Fig2,
    /// Rate against L.
    Fig3,
    /// Rate against P_B.
    Fig4,
    /// Rate against P_U.
    Fig5,
    /// Rate against the transmitter-surface distance.
    Fig6,
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Figure::Fig2),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            "fig6" => Ok(Figure::Fig6),
            other => Err(Error::Parameter(format!("unknown figure `{other}` (expected fig2..fig6)"))),
        }
    }
}

impl Figure {
    /// Sweep axis the figure's x-axis expects; `None` means any.
    pub fn axis(&self) -> Option<SweepAxis> {
        match self {
            Figure::Fig2 => None,
            Figure::Fig3 => Some(SweepAxis::Elements),
            Figure::Fig4 => Some(SweepAxis::PB),
            Figure::Fig5 => Some(SweepAxis::PU),
            Figure::Fig6 => Some(SweepAxis::TxIosDistance),
        }
    }
}

fn scheme_order(rows: &[ResultRow]) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.scheme) {
            order.push(r.scheme.clone());
        }
    }
    order
}

/// Mean and standard error per `(scheme, sweep value)`, schemes in order of
/// first appearance and sweep values ascending.
pub fn aggregate(rows: &[ResultRow]) -> Result<Vec<AggregateRow>> {
    if rows.is_empty() {
        return Err(Error::Aggregation("empty row set".into()));
    }
    let mut out = Vec::new();
    for scheme in scheme_order(rows) {
        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.scheme == scheme) {
            groups.entry(sort_key(r.sweep_value)).or_default().push(r.weighted_sum_rate);
        }
        for (key, values) in groups {
            let (mean_rate, stderr) = mean_stderr(&values)?;
            out.push(AggregateRow {
                sweep_value: from_sort_key(key),
                scheme: scheme.clone(),
                iteration: None,
                mean_rate,
                stderr,
                n: values.len(),
            });
        }
    }
    Ok(out)
}

/// Order-preserving map from finite floats to integers.
fn sort_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn from_sort_key(k: u64) -> f64 {
    f64::from_bits(if k >> 63 == 1 { k & !(1 << 63) } else { !k })
}

/// Mean trace per `(scheme, sweep value)`. Runs that stopped early hold their
/// final value for the remaining iterations.
pub fn aggregate_traces(rows: &[ResultRow], traces: &[Vec<f64>]) -> Result<Vec<AggregateRow>> {
    if rows.is_empty() {
        return Err(Error::Aggregation("empty row set".into()));
    }
    if rows.len() != traces.len() {
        return Err(Error::Aggregation(format!("{} rows but {} traces", rows.len(), traces.len())));
    }
    if let Some(i) = traces.iter().position(|t| t.is_empty()) {
        return Err(Error::Aggregation(format!("trace of row {i} is empty")));
    }
    let mut out = Vec::new();
    for scheme in scheme_order(rows) {
        let mut groups: BTreeMap<u64, Vec<&Vec<f64>>> = BTreeMap::new();
        for (r, t) in rows.iter().zip(traces).filter(|(r, _)| r.scheme == scheme) {
            groups.entry(sort_key(r.sweep_value)).or_default().push(t);
        }
        for (key, group) in groups {
            let len = group.iter().map(|t| t.len()).max().unwrap_or(0);
            for it in 0..len {
                let values: Vec<f64> = group.iter().map(|t| t[it.min(t.len() - 1)]).collect();
                let (mean_rate, stderr) = mean_stderr(&values)?;
                out.push(AggregateRow {
                    sweep_value: from_sort_key(key),
                    scheme: scheme.clone(),
                    iteration: Some(it),
                    mean_rate,
                    stderr,
                    n: values.len(),
                });
            }
        }
    }
    Ok(out)
}

fn check_axis(rows: &[ResultRow], figure: Figure) -> Result<()> {
    if let Some(axis) = figure.axis() {
        if let Some(r) = rows.iter().find(|r| r.sweep_axis != axis.label()) {
            return Err(Error::Aggregation(format!(
                "{figure:?} needs a `{}` sweep but found rows swept over `{}`",
                axis.label(),
                r.sweep_axis
            )));
        }
    }
    Ok(())
}

/// Aggregated table for one figure. `traces_dir` is only read for the
/// convergence figure.
pub fn emit_figure_data(rows: &[ResultRow], figure: Figure, traces_dir: Option<&Path>) -> Result<Vec<AggregateRow>> {
    if rows.is_empty() {
        return Err(Error::Aggregation("empty row set".into()));
    }
    check_axis(rows, figure)?;
    if figure != Figure::Fig2 {
        return aggregate(rows);
    }
    let dir = traces_dir.ok_or_else(|| Error::Aggregation("convergence figure needs the traces directory".into()))?;
    let traces = rows
        .iter()
        .map(|r| {
            let path = dir.join(trace_file_name(&r.scheme, r.sweep_value, r.seed));
            let file = fs::File::open(&path)
                .map_err(|e| Error::Aggregation(format!("cannot open trace {}: {e}", path.display())))?;
            read_trace(file)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_traces(rows, &traces)
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let with_iter = rows.iter().any(|r| r.iteration.is_some());
    if with_iter {
        w.write_record(["sweep_value", "scheme", "iteration", "mean_rate", "stderr", "n"])?;
    } else {
        w.write_record(["sweep_value", "scheme", "mean_rate", "stderr", "n"])?;
    }
    for r in rows {
        let mut rec = vec![fmt_value(r.sweep_value), r.scheme.clone()];
        if with_iter {
            rec.push(r.iteration.map(|i| i.to_string()).unwrap_or_default());
        }
        rec.extend([fmt_value(r.mean_rate), fmt_value(r.stderr), r.n.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
