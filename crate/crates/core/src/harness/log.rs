//! Per-step trajectory log. One CSV row per control step, row 0 being the
//! initial state. Floats are written in shortest round-trip form so a parsed
//! log reproduces the in-memory values bit for bit.

use std::io::{Read, Write};

use crate::dynamics::{NUM_JOINTS, NUM_LEGS, OBS_DIM};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub time: f64,
    pub position: [f64; 3],
    /// World-frame CoM velocity.
    pub velocity: [f64; 3],
    /// Heading-frame horizontal velocity `(v_x, v_y)`.
    pub heading_velocity: [f64; 2],
    /// `(w, x, y, z)`.
    pub orientation: [f64; 4],
    pub omega: [f64; 3],
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub ground: f64,
    /// CoM height above the terrain below it.
    pub height: f64,
    pub contact: [bool; NUM_LEGS],
    pub observation: [f64; OBS_DIM],
    pub action: [f64; NUM_JOINTS],
    pub reward_total: f64,
    pub r_global: f64,
    pub r_takeoff: f64,
    pub r_flight: f64,
    pub r_land: f64,
    pub r_peak: f64,
    /// `(w_takeoff, w_flight, w_land)`.
    pub phase: [u8; 3],
    pub apex: Option<f64>,
    pub touchdown: bool,
    /// Set on touchdown rows only.
    pub landing_ok: Option<bool>,
    /// `(v_x, v_y, v_z, h)` from the estimator, when one was run.
    pub estimate: Option<[f64; 4]>,
}

impl LogRecord {
    /// Ground truth for the estimator: heading-frame `(v_x, v_y)`, `v_z`, height.
    pub fn truth(&self) -> [f64; 4] {
        [self.heading_velocity[0], self.heading_velocity[1], self.velocity[2], self.height]
    }

    pub fn in_contact(&self) -> bool {
        self.contact.iter().any(|c| *c)
    }
}

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = ["step", "time", "x", "y", "z", "vx", "vy", "vz", "vx_heading", "vy_heading", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "roll", "pitch", "yaw", "ground", "height"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..NUM_LEGS).map(|i| format!("contact{i}")));
    h.extend((0..OBS_DIM).map(|i| format!("obs{i}")));
    h.extend((0..NUM_JOINTS).map(|i| format!("action{i}")));
    h.extend(
        ["reward", "r_global", "r_takeoff", "r_flight", "r_land", "r_peak", "w_takeoff", "w_flight", "w_land", "apex", "touchdown", "landing_ok", "est_vx", "est_vy", "est_vz", "est_h"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

/// Shortest round-trip form, switching to exponent notation for tiny values.
fn num(x: &f64) -> String {
    format!("{x:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| num(&x)).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn to_fields(r: &LogRecord) -> Vec<String> {
    let mut f = vec![r.step.to_string(), num(&r.time)];
    let scalars = [r.roll, r.pitch, r.yaw, r.ground, r.height];
    let floats = r
        .position
        .iter()
        .chain(&r.velocity)
        .chain(&r.heading_velocity)
        .chain(&r.orientation)
        .chain(&r.omega)
        .chain(&scalars);
    f.extend(floats.map(num));
    f.extend(r.contact.iter().map(|c| flag(*c).to_string()));
    f.extend(r.observation.iter().chain(&r.action).map(num));
    f.extend([r.reward_total, r.r_global, r.r_takeoff, r.r_flight, r.r_land, r.r_peak].iter().map(num));
    f.extend(r.phase.iter().map(|p| p.to_string()));
    f.push(opt(r.apex));
    f.push(flag(r.touchdown).to_string());
    f.push(r.landing_ok.map(|b| flag(b).to_string()).unwrap_or_default());
    match r.estimate {
        Some(e) => f.extend(e.iter().map(num)),
        None => f.extend(std::iter::repeat_n(String::new(), 4)),
    }
    f
}

pub fn write_log<W: Write>(records: &[LogRecord], w: W) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header())?;
    for r in records {
        wtr.write_record(to_fields(r))?;
    }
    wtr.flush()?;
    Ok(())
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    pos: usize,
    line: u64,
}

impl Fields<'_> {
    fn next_str(&mut self) -> Result<&str, HarnessError> {
        let s = self.rec.get(self.pos).ok_or_else(|| self.err("missing field"))?;
        self.pos += 1;
        Ok(s)
    }

    fn err(&self, msg: &str) -> HarnessError {
        let name = header().get(self.pos).cloned().unwrap_or_default();
        HarnessError::Log {
            line: self.line,
            msg: format!("{msg} in column {name:?}"),
        }
    }

    fn f64(&mut self) -> Result<f64, HarnessError> {
        let s = self.next_str()?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos -= 1;
                Err(self.err("invalid number"))
            }
        }
    }

    fn opt_f64(&mut self) -> Result<Option<f64>, HarnessError> {
        if self.rec.get(self.pos) == Some("") {
            self.pos += 1;
            return Ok(None);
        }
        self.f64().map(Some)
    }

    fn flag(&mut self) -> Result<bool, HarnessError> {
        match self.next_str()? {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => {
                self.pos -= 1;
                Err(self.err("expected 0 or 1"))
            }
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[f64; N], HarnessError> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }
}

fn from_fields(rec: &csv::StringRecord, line: u64) -> Result<LogRecord, HarnessError> {
    let mut f = Fields { rec, pos: 0, line };
    if rec.len() != header().len() {
        return Err(HarnessError::Log {
            line,
            msg: format!("expected {} fields, found {}", header().len(), rec.len()),
        });
    }
    let step = f.next_str()?.parse::<u64>().map_err(|_| HarnessError::Log {
        line,
        msg: "invalid step".into(),
    })?;
    let time = f.f64()?;
    let position = f.array()?;
    let velocity = f.array()?;
    let heading_velocity = f.array()?;
    let orientation = f.array()?;
    let omega = f.array()?;
    let [roll, pitch, yaw, ground, height] = f.array()?;
    let mut contact = [false; NUM_LEGS];
    for c in contact.iter_mut() {
        *c = f.flag()?;
    }
    let observation = f.array()?;
    let action = f.array()?;
    let [reward_total, r_global, r_takeoff, r_flight, r_land, r_peak] = f.array()?;
    let mut phase = [0u8; 3];
    for p in phase.iter_mut() {
        *p = f.flag()? as u8;
    }
    let apex = f.opt_f64()?;
    let touchdown = f.flag()?;
    let landing_ok = if rec.get(f.pos) == Some("") {
        f.pos += 1;
        None
    } else {
        Some(f.flag()?)
    };
    let est = [f.opt_f64()?, f.opt_f64()?, f.opt_f64()?, f.opt_f64()?];
    let estimate = match est {
        [Some(a), Some(b), Some(c), Some(d)] => Some([a, b, c, d]),
        [None, None, None, None] => None,
        _ => {
            return Err(HarnessError::Log {
                line,
                msg: "partial estimate columns".into(),
            })
        }
    };
    Ok(LogRecord {
        step,
        time,
        position,
        velocity,
        heading_velocity,
        orientation,
        omega,
        roll,
        pitch,
        yaw,
        ground,
        height,
        contact,
        observation,
        action,
        reward_total,
        r_global,
        r_takeoff,
        r_flight,
        r_land,
        r_peak,
        phase,
        apex,
        touchdown,
        landing_ok,
        estimate,
    })
}

pub fn read_log<R: Read>(r: R) -> Result<Vec<LogRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
    let expected = header();
    let got = rdr.headers()?.clone();
    if got.len() != expected.len() || got.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(HarnessError::Log {
            line: 1,
            msg: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        out.push(from_fields(&rec, i as u64 + 2)?);
    }
    Ok(out)
}

pub fn parse_log(text: &[u8]) -> Result<Vec<LogRecord>, HarnessError> {
    read_log(text)
}
