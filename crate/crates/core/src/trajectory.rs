//! Leader-follower trajectory ingestion, validation, and resampling.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// Instantaneous car-following state: gap, follower speed, approach rate.
///
/// The approach rate is `dv = v_follower - v_leader`, positive when closing,
/// so that `dv = -ds/dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfState {
    /// Bumper-to-bumper gap, m.
    pub s: f64,
    /// Follower speed, m/s.
    pub v: f64,
    /// Approach rate, m/s.
    pub dv: f64,
}

/// A time-indexed leader-follower record at fixed step `dt`.
///
/// The gap convention is bumper-to-bumper: `s(t) = x_l(t) - x_f(t) - lead_length`,
/// required positive at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub driver_id: String,
    /// Sampling step, s.
    pub dt: f64,
    /// Start time, s.
    pub t0: f64,
    /// Follower position, m.
    pub x_f: Vec<f64>,
    /// Follower speed, m/s.
    pub v_f: Vec<f64>,
    /// Leader position, m.
    pub x_l: Vec<f64>,
    /// Leader speed, m/s.
    pub v_l: Vec<f64>,
    /// Follower acceleration, m/s^2 (optional; absent disables acceleration-based
    /// calibration rather than being derived by differencing).
    pub a_f: Option<Vec<f64>>,
    /// Leader vehicle length, m.
    pub lead_length: f64,
}

impl Trajectory {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        driver_id: impl Into<String>,
        dt: f64,
        t0: f64,
        x_f: Vec<f64>,
        v_f: Vec<f64>,
        x_l: Vec<f64>,
        v_l: Vec<f64>,
        a_f: Option<Vec<f64>>,
        lead_length: f64,
    ) -> Result<Self> {
        let traj = Trajectory { driver_id: driver_id.into(), dt, t0, x_f, v_f, x_l, v_l, a_f, lead_length };
        traj.validate()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.x_f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_f.is_empty()
    }

    /// Duration spanned by the samples, `(T - 1) * dt`.
    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    pub fn gap(&self, i: usize) -> f64 {
        self.x_l[i] - self.x_f[i] - self.lead_length
    }

    fn validate(&self) -> Result<()> {
        let t = self.len();
        if t < 2 {
            return Err(Error::Data(format!(
                "driver {}: need at least 2 samples, got {t}",
                self.driver_id
            )));
        }
        let same = self.v_f.len() == t && self.x_l.len() == t && self.v_l.len() == t
            && self.a_f.as_ref().map_or(true, |a| a.len() == t);
        if !same {
            return Err(Error::Data(format!(
                "driver {}: channel lengths differ",
                self.driver_id
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Data(format!("driver {}: dt must be positive", self.driver_id)));
        }
        for i in 0..t {
            let finite = self.x_f[i].is_finite() && self.v_f[i].is_finite()
                && self.x_l[i].is_finite() && self.v_l[i].is_finite()
                && self.a_f.as_ref().map_or(true, |a| a[i].is_finite());
            if !finite {
                return Err(Error::Data(format!(
                    "driver {}: non-finite value at t = {}",
                    self.driver_id,
                    self.t0 + i as f64 * self.dt
                )));
            }
            let s = self.gap(i);
            if !(s > 0.0) {
                return Err(Error::Data(format!(
                    "driver {}: non-positive gap {s:.3} m at t = {}",
                    self.driver_id,
                    self.t0 + i as f64 * self.dt
                )));
            }
        }
        Ok(())
    }

    /// Car-following state at sample `t_index`.
    pub fn cf_state_at(&self, t_index: usize) -> Result<CfState> {
        if t_index >= self.len() {
            return Err(Error::Param(format!(
                "index {t_index} out of range for trajectory of length {}",
                self.len()
            )));
        }
        Ok(CfState {
            s: self.gap(t_index),
            v: self.v_f[t_index],
            dv: self.v_f[t_index] - self.v_l[t_index],
        })
    }
}

/// Column names for the trajectory CSV schema. `None` selects the default name.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub t: Option<String>,
    pub driver_id: Option<String>,
    pub x_follower: Option<String>,
    pub v_follower: Option<String>,
    pub x_leader: Option<String>,
    pub v_leader: Option<String>,
    pub a_follower: Option<String>,
    pub lead_length: Option<String>,
}

impl CsvSchema {
    fn name<'a>(field: &'a Option<String>, default: &'a str) -> &'a str {
        field.as_deref().unwrap_or(default)
    }
}

const TIME_TOL: f64 = 1e-6;

/// Load trajectories from a CSV file. One leader-follower pair per `driver_id`;
/// rows time-sorted; `dt` inferred from the median time difference, with any
/// spacing deviating by more than 1e-6 s rejected.
pub fn load_trajectories(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path.as_ref())?;
    load_trajectories_from(file, schema)
}

/// Same as [`load_trajectories`] but from any reader.
pub fn load_trajectories_from(reader: impl Read, schema: &CsvSchema) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| {
        col(name).ok_or_else(|| Error::Schema(format!("missing required column '{name}'")))
    };

    let c_t = require(CsvSchema::name(&schema.t, "t"))?;
    let c_id = require(CsvSchema::name(&schema.driver_id, "driver_id"))?;
    let c_xf = require(CsvSchema::name(&schema.x_follower, "x_follower"))?;
    let c_vf = require(CsvSchema::name(&schema.v_follower, "v_follower"))?;
    let c_xl = require(CsvSchema::name(&schema.x_leader, "x_leader"))?;
    let c_vl = require(CsvSchema::name(&schema.v_leader, "v_leader"))?;
    let c_len = require(CsvSchema::name(&schema.lead_length, "lead_length"))?;
    let c_af = col(CsvSchema::name(&schema.a_follower, "a_follower"));

    struct Raw {
        order: usize,
        t: Vec<f64>,
        x_f: Vec<f64>,
        v_f: Vec<f64>,
        x_l: Vec<f64>,
        v_l: Vec<f64>,
        a_f: Vec<f64>,
        has_a: bool,
        lead_length: f64,
    }
    let mut groups: BTreeMap<String, Raw> = BTreeMap::new();
    let mut next_order = 0usize;

    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |c: usize, what: &str| -> Result<f64> {
            record
                .get(c)
                .ok_or_else(|| Error::Data(format!("row {}: short record", row_idx + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("row {}: cannot parse {what}", row_idx + 2)))
        };
        let id = record
            .get(c_id)
            .ok_or_else(|| Error::Data(format!("row {}: short record", row_idx + 2)))?
            .to_string();
        let t = parse(c_t, "t")?;
        let entry = groups.entry(id).or_insert_with(|| {
            let r = Raw {
                order: next_order,
                t: vec![],
                x_f: vec![],
                v_f: vec![],
                x_l: vec![],
                v_l: vec![],
                a_f: vec![],
                has_a: c_af.is_some(),
                lead_length: f64::NAN,
            };
            next_order += 1;
            r
        });
        entry.t.push(t);
        entry.x_f.push(parse(c_xf, "x_follower")?);
        entry.v_f.push(parse(c_vf, "v_follower")?);
        entry.x_l.push(parse(c_xl, "x_leader")?);
        entry.v_l.push(parse(c_vl, "v_leader")?);
        if let Some(c) = c_af {
            // an empty acceleration cell disables the channel for the driver
            let cell = record.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                entry.has_a = false;
            } else {
                entry.a_f.push(parse(c, "a_follower")?);
            }
        }
        entry.lead_length = parse(c_len, "lead_length")?;
    }

    let mut raws: Vec<(String, Raw)> = groups.into_iter().collect();
    raws.sort_by_key(|(_, r)| r.order);

    let mut out = Vec::with_capacity(raws.len());
    for (id, raw) in raws {
        let n = raw.t.len();
        if n < 2 {
            return Err(Error::Data(format!("driver {id}: fewer than 2 rows")));
        }
        let mut diffs: Vec<f64> = raw.t.windows(2).map(|w| w[1] - w[0]).collect();
        if diffs.iter().any(|&d| d <= 0.0) {
            return Err(Error::Data(format!("driver {id}: rows not strictly time-sorted")));
        }
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let dt = diffs[diffs.len() / 2];
        for w in raw.t.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > TIME_TOL {
                return Err(Error::Data(format!(
                    "driver {id}: non-uniform sample spacing at t = {} (got {}, expected {dt})",
                    w[1],
                    w[1] - w[0]
                )));
            }
        }
        let a_f = if raw.has_a && raw.a_f.len() == n { Some(raw.a_f) } else { None };
        out.push(Trajectory::new(
            id,
            dt,
            raw.t[0],
            raw.x_f,
            raw.v_f,
            raw.x_l,
            raw.v_l,
            a_f,
            raw.lead_length,
        )?);
    }
    Ok(out)
}

/// Write trajectories in the same CSV schema that [`load_trajectories`] reads.
pub fn write_trajectories_csv(w: impl Write, trajs: &[Trajectory]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let any_accel = trajs.iter().any(|t| t.a_f.is_some());
    let mut header = vec!["t", "driver_id", "x_follower", "v_follower", "x_leader", "v_leader"];
    if any_accel {
        header.push("a_follower");
    }
    header.push("lead_length");
    wtr.write_record(&header)?;
    for traj in trajs {
        for i in 0..traj.len() {
            let t = traj.t0 + i as f64 * traj.dt;
            let mut rec = vec![
                format!("{t}"),
                traj.driver_id.clone(),
                format!("{}", traj.x_f[i]),
                format!("{}", traj.v_f[i]),
                format!("{}", traj.x_l[i]),
                format!("{}", traj.v_l[i]),
            ];
            if any_accel {
                rec.push(traj.a_f.as_ref().map_or(String::new(), |a| format!("{}", a[i])));
            }
            rec.push(format!("{}", traj.lead_length));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Keep every k-th sample so the rate drops to `target_hz`. The original rate
/// must be an integer multiple of the target.
pub fn downsample(traj: &Trajectory, target_hz: f64) -> Result<Trajectory> {
    if !(target_hz > 0.0) {
        return Err(Error::Param(format!("target_hz must be positive, got {target_hz}")));
    }
    let ratio = 1.0 / (traj.dt * target_hz);
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-6 {
        return Err(Error::Param(format!(
            "source rate {:.6} Hz is not an integer multiple of target {target_hz} Hz",
            1.0 / traj.dt
        )));
    }
    let k = k as usize;
    if k == 1 {
        return Ok(traj.clone());
    }
    let take = |v: &[f64]| v.iter().step_by(k).copied().collect::<Vec<_>>();
    Trajectory::new(
        traj.driver_id.clone(),
        traj.dt * k as f64,
        traj.t0,
        take(&traj.x_f),
        take(&traj.v_f),
        take(&traj.x_l),
        take(&traj.v_l),
        traj.a_f.as_ref().map(|a| take(a)),
        traj.lead_length,
    )
}

/// Retain trajectories spanning at least `t_min` seconds; order preserved.
pub fn filter_min_duration(trajs: Vec<Trajectory>, t_min: f64) -> Vec<Trajectory> {
    trajs.into_iter().filter(|t| t.duration() >= t_min).collect()
}
