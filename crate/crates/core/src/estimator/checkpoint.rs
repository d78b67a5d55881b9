//! Binary checkpoint, little-endian:
//!
//! ```text
//! magic  "LHCK"
//! u16    version (1)
//! u8     mode (0 dual, 1 short-only, 2 long-only)
//! u8     reserved, 0
//! u64    training step
//! u32    short_frames, long_frames, long_stride, latent_dim, obs_dim
//! f32    obs_mean[obs_dim], obs_std[obs_dim], target_mean[4], target_std[4]
//! u8     network count
//! per network:
//!   u8   role (0 short, 1 long, 2 online target encoder, 3 target encoder)
//!   u8   number of dims, then u32 dims
//!   f32  per layer: weights row-major (in x out), then biases
//! ```
//!
//! The target encoder entry is the EMA state. Parameters are stored as f32.

use super::{DualHorizonEstimator, EstimatorConfig, EstimatorError, Mlp, Mode, Normalizer};
use crate::dynamics::OBS_DIM;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LHCK";
const VERSION: u16 = 1;
const MAX_DIM: usize = 4096;
const MAX_LAYERS: usize = 8;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn put_net(out: &mut Vec<u8>, role: u8, net: &Mlp) {
    out.push(role);
    out.push(net.dims.len() as u8);
    for &d in &net.dims {
        put_u32(out, d);
    }
    put_f32s(out, &net.params());
}

pub fn encode_checkpoint(m: &DualHorizonEstimator) -> Vec<u8> {
    let c = &m.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(c.mode.code());
    out.push(0);
    out.extend_from_slice(&m.step.to_le_bytes());
    for v in [c.short_frames, c.long_frames, c.long_stride, c.latent_dim, OBS_DIM] {
        put_u32(&mut out, v);
    }
    put_f32s(&mut out, &m.norm.obs_mean);
    put_f32s(&mut out, &m.norm.obs_std);
    put_f32s(&mut out, &m.norm.target_mean);
    put_f32s(&mut out, &m.norm.target_std);
    let nets: Vec<(u8, &Mlp)> = [(0, m.short.as_ref()), (1, m.long.as_ref()), (2, Some(&m.phi_online)), (3, Some(&m.phi_target))]
        .into_iter()
        .filter_map(|(r, n)| n.map(|n| (r, n)))
        .collect();
    out.push(nets.len() as u8);
    for (role, net) in nets {
        put_net(&mut out, role, net);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn err(msg: impl Into<String>) -> EstimatorError {
    EstimatorError::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EstimatorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| err("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, EstimatorError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, EstimatorError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize, EstimatorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, EstimatorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, EstimatorError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| err("size overflow"))?)?;
        let vals: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value"));
        }
        Ok(vals)
    }

    fn net(&mut self) -> Result<(u8, Mlp), EstimatorError> {
        let role = self.u8()?;
        let n = self.u8()? as usize;
        if !(2..=MAX_LAYERS + 1).contains(&n) {
            return Err(err(format!("network has {n} dims")));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            let d = self.u32()?;
            if d == 0 || d > MAX_DIM {
                return Err(err(format!("layer width {d} out of range")));
            }
            dims.push(d);
        }
        let count: usize = dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
        let params = self.f32s(count)?;
        let mut net = Mlp::zeros(&dims);
        net.set_params(&params)?;
        Ok((role, net))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DualHorizonEstimator, EstimatorError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(err("bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let mode = Mode::from_code(r.u8()?).ok_or_else(|| err("unknown mode"))?;
    if r.u8()? != 0 {
        return Err(err("reserved byte set"));
    }
    let step = r.u64()?;
    let short_frames = r.u32()?;
    let long_frames = r.u32()?;
    let long_stride = r.u32()?;
    let latent_dim = r.u32()?;
    let obs_dim = r.u32()?;
    if obs_dim != OBS_DIM {
        return Err(err(format!("observation size {obs_dim}, expected {OBS_DIM}")));
    }
    if !(1..=64).contains(&short_frames) || !(1..=64).contains(&long_frames) || !(1..=16).contains(&long_stride) || !(1..=256).contains(&latent_dim) {
        return Err(err("window or latent size out of range"));
    }
    let obs_mean = r.f32s(OBS_DIM)?;
    let obs_std = r.f32s(OBS_DIM)?;
    let target_mean: [f64; 4] = r.f32s(4)?.try_into().unwrap();
    let target_std: [f64; 4] = r.f32s(4)?.try_into().unwrap();
    if obs_std.iter().chain(&target_std).any(|s| !(*s > 0.0)) {
        return Err(err("standard deviations must be positive"));
    }
    let count = r.u8()? as usize;
    let mut nets: [Option<Mlp>; 4] = Default::default();
    for _ in 0..count {
        let (role, net) = r.net()?;
        let slot = nets.get_mut(role as usize).ok_or_else(|| err(format!("unknown role {role}")))?;
        if slot.is_some() {
            return Err(err(format!("duplicate role {role}")));
        }
        *slot = Some(net);
    }
    if r.pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    let [short, long, phi_online, phi_target] = nets;
    let (phi_online, phi_target) = match (phi_online, phi_target) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(err("missing target encoder")),
    };
    if short.is_some() != mode.has_short() || long.is_some() != mode.has_long() {
        return Err(err("branches do not match the mode"));
    }
    let hidden = short.as_ref().or(long.as_ref()).map(|n| n.dims[1..n.dims.len() - 1].to_vec()).unwrap_or_default();
    let config = EstimatorConfig {
        mode,
        hidden,
        phi_hidden: phi_online.dims[1..phi_online.dims.len() - 1].to_vec(),
        latent_dim,
        short_frames,
        long_frames,
        long_stride,
        seed: 0,
    };
    let check = |net: &Option<Mlp>, want: Vec<usize>, what: &str| match net {
        Some(n) if n.dims != want => Err(err(format!("{what} dims {:?}, expected {want:?}", n.dims))),
        _ => Ok(()),
    };
    check(&short, config.short_dims(), "short branch")?;
    check(&long, config.long_dims(), "long branch")?;
    if phi_online.dims != config.phi_dims() || phi_target.dims != config.phi_dims() {
        return Err(err("target encoder dims do not match"));
    }
    Ok(DualHorizonEstimator {
        config,
        norm: Normalizer {
            obs_mean,
            obs_std,
            target_mean,
            target_std,
        },
        short,
        long,
        phi_online,
        phi_target,
        step,
    })
}
