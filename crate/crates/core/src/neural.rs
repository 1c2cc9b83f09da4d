//! Dueling Q-network with hand-written backpropagation and RMSProp.
//!
//! Architecture: `input -> hidden1 -> hidden2` (ReLU trunk), then a scalar
//! value head and an advantage head with one output per action, combined as
//! `Q_a = V + A_a - mean(A)`.
//!
//! Parameters live in one flat vector, laid out as
//! `W1 (h1 x in), b1, W2 (h2 x h1), b2, Wv (h2), bv, Wa (A x h2), ba`.
//! Gradients and optimizer state share that layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DarpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub actions: usize,
}

impl NetDims {
    /// Two position inputs, two 50-unit hidden layers, four actions.
    pub const DEFAULT: NetDims = NetDims { input: 2, hidden1: 50, hidden2: 50, actions: 4 };

    pub fn param_count(&self) -> usize {
        let Layout { end, .. } = self.layout();
        end
    }

    fn layout(&self) -> Layout {
        let NetDims { input, hidden1: h1, hidden2: h2, actions: a } = *self;
        let w1 = 0;
        let b1 = w1 + h1 * input;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let wv = b2 + h2;
        let bv = wv + h2;
        let wa = bv + 1;
        let ba = wa + a * h2;
        let end = ba + a;
        Layout { w1, b1, w2, b2, wv, bv, wa, ba, end }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wv: usize,
    bv: usize,
    wa: usize,
    ba: usize,
    end: usize,
}

/// Dueling aggregation `Q_a = V + A_a - mean(A)`.
pub fn aggregate(value: f64, advantages: &[f64]) -> Vec<f64> {
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + (a - mean)).collect()
}

/// One supervised sample: network input, taken action, regression target and
/// importance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSample {
    pub input: [f64; 2],
    pub action: usize,
    pub target: f64,
    pub weight: f64,
}

impl TrainSample {
    pub fn new(input: [f64; 2], action: usize, target: f64) -> Self {
        Self { input, action, target, weight: 1.0 }
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// First hidden layer before ReLU.
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    /// Second hidden layer before ReLU.
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub value: f64,
    pub advantages: Vec<f64>,
    pub q: Vec<f64>,
}

/// Gradient of the loss, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingNet {
    dims: NetDims,
    params: Vec<f64>,
}

impl DuelingNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: NetDims, rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        let l = dims.layout();
        let NetDims { input, hidden1: h1, hidden2: h2, actions: a } = dims;
        let mut fill = |start: usize, len: usize, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[start..start + len] {
                *w = rng.random_range(-limit..limit);
            }
        };
        fill(l.w1, h1 * input, input, h1);
        fill(l.w2, h2 * h1, h1, h2);
        fill(l.wv, h2, h2, 1);
        fill(l.wa, a * h2, h2, a);
        net
    }

    pub fn zeros(dims: NetDims) -> Self {
        Self { dims, params: vec![0.0; dims.param_count()] }
    }

    pub fn from_params(dims: NetDims, params: Vec<f64>) -> Result<Self> {
        if params.len() != dims.param_count() {
            return Err(DarpError::ShapeMismatch { expected: dims.param_count(), got: params.len() });
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mutable view of the advantage-head biases.
    pub fn advantage_bias_mut(&mut self) -> &mut [f64] {
        let l = self.dims.layout();
        &mut self.params[l.ba..l.end]
    }

    /// Mutable view of the value-head bias.
    pub fn value_bias_mut(&mut self) -> &mut f64 {
        let l = self.dims.layout();
        &mut self.params[l.bv]
    }

    pub fn forward_pass(&self, input: &[f64]) -> ForwardPass {
        let NetDims { input: n_in, hidden1: h1, hidden2: h2, actions: n_a } = self.dims;
        debug_assert_eq!(input.len(), n_in);
        let l = self.dims.layout();
        let p = &self.params;

        let z1: Vec<f64> = (0..h1)
            .map(|k| {
                let row = &p[l.w1 + k * n_in..l.w1 + (k + 1) * n_in];
                p[l.b1 + k] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let a1: Vec<f64> = z1.iter().map(|z| z.max(0.0)).collect();
        let z2: Vec<f64> = (0..h2)
            .map(|k| {
                let row = &p[l.w2 + k * h1..l.w2 + (k + 1) * h1];
                p[l.b2 + k] + row.iter().zip(&a1).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let a2: Vec<f64> = z2.iter().map(|z| z.max(0.0)).collect();
        let value = p[l.bv] + p[l.wv..l.wv + h2].iter().zip(&a2).map(|(w, x)| w * x).sum::<f64>();
        let advantages: Vec<f64> = (0..n_a)
            .map(|k| {
                let row = &p[l.wa + k * h2..l.wa + (k + 1) * h2];
                p[l.ba + k] + row.iter().zip(&a2).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let q = aggregate(value, &advantages);
        ForwardPass { z1, a1, z2, a2, value, advantages, q }
    }

    /// Q-values for every action.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_pass(input).q
    }

    /// Weighted mean squared error `sum_i w_i (y_i - Q(s_i, a_i))^2 / N`.
    pub fn loss(&self, batch: &[TrainSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(DarpError::EmptyBatch);
        }
        let total: f64 = batch
            .iter()
            .map(|s| {
                let q = self.forward(&s.input)[s.action];
                s.weight * (s.target - q).powi(2)
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Exact gradient of [`DuelingNet::loss`], together with the loss and the
    /// per-sample TD errors `y - Q(s, a)`.
    pub fn backward(&self, batch: &[TrainSample]) -> Result<(Gradients, f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(DarpError::EmptyBatch);
        }
        let NetDims { input: n_in, hidden1: h1, hidden2: h2, actions: n_a } = self.dims;
        let l = self.dims.layout();
        let p = &self.params;
        let mut g = vec![0.0; l.end];
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut td = Vec::with_capacity(batch.len());
        let mut d_adv = vec![0.0; n_a];
        let mut d_a2 = vec![0.0; h2];
        let mut d_a1 = vec![0.0; h1];

        for s in batch {
            let f = self.forward_pass(&s.input);
            let residual = s.target - f.q[s.action];
            td.push(residual);
            loss += s.weight * residual * residual;
            // dL/dQ_a for the taken action
            let dq = 2.0 * s.weight * (f.q[s.action] - s.target) / n;
            let dv = dq;
            for (k, d) in d_adv.iter_mut().enumerate() {
                let direct = if k == s.action { 1.0 } else { 0.0 };
                *d = dq * (direct - 1.0 / n_a as f64);
            }

            g[l.bv] += dv;
            for k in 0..h2 {
                g[l.wv + k] += dv * f.a2[k];
                d_a2[k] = dv * p[l.wv + k];
            }
            for (a, &da) in d_adv.iter().enumerate() {
                g[l.ba + a] += da;
                let row = l.wa + a * h2;
                for k in 0..h2 {
                    g[row + k] += da * f.a2[k];
                    d_a2[k] += da * p[row + k];
                }
            }

            d_a1.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..h2 {
                if f.z2[k] <= 0.0 {
                    continue;
                }
                let dz = d_a2[k];
                g[l.b2 + k] += dz;
                let row = l.w2 + k * h1;
                for j in 0..h1 {
                    g[row + j] += dz * f.a1[j];
                    d_a1[j] += dz * p[row + j];
                }
            }
            for j in 0..h1 {
                if f.z1[j] <= 0.0 {
                    continue;
                }
                let dz = d_a1[j];
                g[l.b1 + j] += dz;
                let row = l.w1 + j * n_in;
                for (i, x) in s.input.iter().enumerate().take(n_in) {
                    g[row + i] += dz * x;
                }
            }
        }
        Ok((Gradients(g), loss / n, td))
    }

    /// Checkpoint bytes; see [`Checkpoint`].
    pub fn to_bytes(&self, optimizer: Option<&RmsProp>) -> Vec<u8> {
        Checkpoint { net: self.clone(), optimizer: optimizer.cloned() }.to_bytes()
    }
}

/// Denominator convention of the RMSProp step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RmsVariant {
    /// `theta -= lr * grad / (sqrt(g) + eps)`
    Sqrt,
    /// `theta -= lr * grad / (g + eps)`
    Unrooted,
}

/// Non-centered RMSProp state.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    pub variant: RmsVariant,
    g: Vec<f64>,
}

impl RmsProp {
    pub fn new(param_count: usize, lr: f64, decay: f64, eps: f64, variant: RmsVariant) -> Self {
        Self { lr, decay, eps, variant, g: vec![0.0; param_count] }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.g
    }

    /// `g = decay * g + (1 - decay) * grad^2`, then the parameter step.
    pub fn update(&mut self, net: &mut DuelingNet, grads: &Gradients) -> Result<()> {
        let n = net.params.len();
        if grads.0.len() != n {
            return Err(DarpError::ShapeMismatch { expected: n, got: grads.0.len() });
        }
        if self.g.len() != n {
            return Err(DarpError::ShapeMismatch { expected: n, got: self.g.len() });
        }
        for ((theta, g), &dg) in net.params.iter_mut().zip(&mut self.g).zip(&grads.0) {
            *g = self.decay * *g + (1.0 - self.decay) * dg * dg;
            let denom = match self.variant {
                RmsVariant::Sqrt => g.sqrt() + self.eps,
                RmsVariant::Unrooted => *g + self.eps,
            };
            *theta -= self.lr * dg / denom;
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"DARPNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network plus optional optimizer state, serialized as: magic, version
/// (u32), layer dims (4 x u32), parameter count (u64), parameters (f64),
/// optimizer flag (u8) and, if set, `lr, decay, eps` (f64), variant (u8) and
/// the accumulator (f64 x count). All little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: DuelingNet,
    pub optimizer: Option<RmsProp>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.net.dims;
        let mut out = Vec::with_capacity(64 + 16 * self.net.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [d.input, d.hidden1, d.hidden2, d.actions] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.net.params.len() as u64).to_le_bytes());
        self.net.params.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                for v in [opt.lr, opt.decay, opt.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.push(match opt.variant {
                    RmsVariant::Sqrt => 0,
                    RmsVariant::Unrooted => 1,
                });
                opt.g.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DarpError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(DarpError::Checkpoint(format!("unsupported version {version}")));
        }
        let dims = NetDims {
            input: r.u32()? as usize,
            hidden1: r.u32()? as usize,
            hidden2: r.u32()? as usize,
            actions: r.u32()? as usize,
        };
        if dims.input == 0 || dims.hidden1 == 0 || dims.hidden2 == 0 || dims.actions == 0 {
            return Err(DarpError::Checkpoint("zero layer width".into()));
        }
        let count = r.u64()? as usize;
        if count != dims.param_count() {
            return Err(DarpError::Checkpoint(format!(
                "parameter count {count} does not match dims ({} expected)",
                dims.param_count()
            )));
        }
        let params = r.f64s(count)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let (lr, decay, eps) = (r.f64()?, r.f64()?, r.f64()?);
                let variant = match r.u8()? {
                    0 => RmsVariant::Sqrt,
                    1 => RmsVariant::Unrooted,
                    v => return Err(DarpError::Checkpoint(format!("unknown optimizer variant {v}"))),
                };
                let g = r.f64s(count)?;
                Some(RmsProp { lr, decay, eps, variant, g })
            }
            v => return Err(DarpError::Checkpoint(format!("bad optimizer flag {v}"))),
        };
        if r.pos != bytes.len() {
            return Err(DarpError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { net: DuelingNet { dims, params }, optimizer })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            DarpError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| DarpError::Checkpoint("overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
