//! Model files: flow networks, prior parameters and optional optimizer state.
//!
//! Layout (little-endian):
//!
//! ```text
//! "NWFM" version:u16 scheme:u8 repeat:u8 channels:u8 mode:u8
//!        norm_offset:f32 norm_scale:f32 net_count:u16 net*
//! net    = layer_count:u8 layer*
//! layer  = rank:u8 in:u16 out:u16 kernel:u8 padding:u8 weight:f32* bias:f32*
//! "PRIR" highpass_kind:u8 [logistic: n:u16 mu:f32*n log_s:f32*n
//!                          | conditional: planes:u8 net]
//!        final_kind:u8 [mixture: channels:u8 k:u16 mu log_s logits]
//! "OPTM" (optional) epoch:u32 step:u64 lr:f32 decay:f32 count:u32
//!        (len:u32 m:f32*len u:f32*len)* config_len:u32 config:utf8
//! ```
//!
//! The model hash covers everything before the optional optimizer section,
//! so checkpoints that differ only in optimizer state identify the same model.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{ConvNet, CouplingBlock, FlowConfig, Mode, Normalization, Scheme, WaveletFlow};
use crate::numerics::{Adamax, ConvLayerSpec, Padding, Tensor};
use crate::prior::{FinalPrior, HighpassPrior, PriorNet, Priors};

pub const MODEL_MAGIC: &[u8; 4] = b"NWFM";
pub const MODEL_VERSION: u16 = 1;
const PRIOR_TAG: &[u8; 4] = b"PRIR";
const OPTIMIZER_TAG: &[u8; 4] = b"OPTM";

/// Optimizer state stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: u32,
    pub optimizer: Adamax,
    /// The training configuration text the checkpoint was produced with.
    pub config: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub flow: WaveletFlow,
    pub priors: Priors,
    pub train_state: Option<TrainState>,
}

impl Model {
    pub fn new(flow: WaveletFlow, priors: Priors) -> Result<Self> {
        priors.validate(flow.scheme(), flow.channels())?;
        Ok(Self {
            flow,
            priors,
            train_state: None,
        })
    }

    /// Serialized bytes that define the model's identity.
    fn core_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        let cfg = &self.flow.config;
        w.bytes(MODEL_MAGIC);
        w.u16(MODEL_VERSION);
        w.u8(cfg.scheme.code());
        w.u8(cfg.repeat as u8);
        w.u8(cfg.channels as u8);
        w.u8(cfg.mode.code());
        w.f32(cfg.normalization.offset);
        w.f32(cfg.normalization.scale);
        w.u16(self.flow.block.nets.len() as u16);
        for net in &self.flow.block.nets {
            w.net(net);
        }
        w.bytes(PRIOR_TAG);
        match &self.priors.highpass {
            HighpassPrior::Uniform => w.u8(0),
            HighpassPrior::Logistic { mu, log_s } => {
                w.u8(1);
                w.u16(mu.len() as u16);
                w.floats(mu.data());
                w.floats(log_s.data());
            }
            HighpassPrior::Conditional(p) => {
                w.u8(2);
                w.u8(p.planes as u8);
                w.net(&p.net);
            }
        }
        match &self.priors.final_block {
            FinalPrior::Uniform => w.u8(0),
            FinalPrior::Mixture { mu, log_s, logits } => {
                w.u8(1);
                w.u8(mu.shape()[0] as u8);
                w.u16(mu.shape()[1] as u16);
                w.floats(mu.data());
                w.floats(log_s.data());
                w.floats(logits.data());
            }
        }
        w.buf
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer {
            buf: self.core_bytes(),
        };
        if let Some(st) = &self.train_state {
            let opt = &st.optimizer;
            w.bytes(OPTIMIZER_TAG);
            w.u32(st.epoch);
            w.u64(opt.step);
            w.f32(opt.lr);
            w.f32(opt.decay);
            w.u32(opt.m.len() as u32);
            for (m, u) in opt.m.iter().zip(&opt.u) {
                w.u32(m.len() as u32);
                w.floats(m);
                w.floats(u);
            }
            w.u32(st.config.len() as u32);
            w.bytes(st.config.as_bytes());
        }
        w.buf
    }

    /// First eight bytes of the SHA-256 of the model section, little-endian.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.core_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Parse("not a model file (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::Unsupported(format!("model version {version}")));
        }
        let scheme = Scheme::from_code(r.u8()?)?;
        let repeat = r.u8()? as usize;
        let channels = r.u8()? as usize;
        let mode = Mode::from_code(r.u8()?)?;
        let normalization = Normalization {
            offset: r.f32()?,
            scale: r.f32()?,
        };
        let count = r.u16()? as usize;
        let nets = (0..count).map(|_| r.net()).collect::<Result<Vec<_>>>()?;
        let first = nets
            .first()
            .and_then(|n| n.layers.first())
            .ok_or_else(|| Error::Corrupt("model has no networks".into()))?;
        let config = FlowConfig {
            scheme,
            mode,
            channels,
            repeat,
            hidden: first.out_channels,
            n_hidden: nets[0].layers.len().saturating_sub(2),
            normalization,
        };
        let flow = WaveletFlow::from_parts(config, CouplingBlock { nets })
            .map_err(|e| Error::Corrupt(format!("model networks: {e}")))?;

        if r.take(4)? != PRIOR_TAG {
            return Err(Error::Corrupt("missing prior section".into()));
        }
        let highpass = match r.u8()? {
            0 => HighpassPrior::Uniform,
            1 => {
                let n = r.u16()? as usize;
                HighpassPrior::Logistic {
                    mu: Tensor::from_vec(r.floats(n)?),
                    log_s: Tensor::from_vec(r.floats(n)?),
                }
            }
            2 => {
                let planes = r.u8()? as usize;
                let net = r.net()?;
                HighpassPrior::Conditional(PriorNet {
                    net,
                    channels,
                    planes,
                })
            }
            k => return Err(Error::Corrupt(format!("unknown high-pass prior kind {k}"))),
        };
        let final_block = match r.u8()? {
            0 => FinalPrior::Uniform,
            1 => {
                let c = r.u8()? as usize;
                let k = r.u16()? as usize;
                let mut t = || r.floats(c * k).and_then(|v| Tensor::new(vec![c, k], v));
                FinalPrior::Mixture {
                    mu: t()?,
                    log_s: t()?,
                    logits: t()?,
                }
            }
            k => return Err(Error::Corrupt(format!("unknown final prior kind {k}"))),
        };
        let priors = Priors {
            highpass,
            final_block,
        };
        priors
            .validate(scheme, channels)
            .map_err(|e| Error::Corrupt(format!("prior parameters: {e}")))?;

        let train_state = if r.remaining() == 0 {
            None
        } else {
            if r.take(4)? != OPTIMIZER_TAG {
                return Err(Error::Corrupt("unknown trailing section".into()));
            }
            let epoch = r.u32()?;
            let step = r.u64()?;
            let lr = r.f32()?;
            let decay = r.f32()?;
            let n = r.u32()? as usize;
            let (mut m, mut u) = (Vec::new(), Vec::new());
            for _ in 0..n {
                let len = r.u32()? as usize;
                m.push(r.floats(len)?);
                u.push(r.floats(len)?);
            }
            let len = r.u32()? as usize;
            let config = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Corrupt("checkpoint config is not UTF-8".into()))?;
            Some(TrainState {
                epoch,
                optimizer: Adamax {
                    lr,
                    decay,
                    step,
                    m,
                    u,
                },
                config,
            })
        };
        if r.remaining() != 0 {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes in model file",
                r.remaining()
            )));
        }
        Ok(Self {
            flow,
            priors,
            train_state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // Write then rename so a crash never leaves a half-written checkpoint.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn floats(&mut self, v: &[f32]) {
        for &x in v {
            self.f32(x);
        }
    }
    fn net(&mut self, net: &ConvNet) {
        self.u8(net.layers.len() as u8);
        for l in &net.layers {
            self.u8(l.rank as u8);
            self.u16(l.in_channels as u16);
            self.u16(l.out_channels as u16);
            self.u8(l.kernel_size as u8);
            self.u8(l.padding.code());
            self.floats(l.weight.data());
            self.floats(l.bias.data());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Truncated(format!(
                "model file ends at byte {}",
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Corrupt("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }
    fn net(&mut self) -> Result<ConvNet> {
        let n = self.u8()? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = self.u8()? as usize;
            let cin = self.u16()? as usize;
            let cout = self.u16()? as usize;
            let k = self.u8()? as usize;
            let padding = Padding::from_code(self.u8()?)?;
            if !(1..=2).contains(&rank) {
                return Err(Error::Corrupt(format!("layer rank {rank}")));
            }
            let mut layer = ConvLayerSpec::zeros(rank, cin, cout, k, padding);
            let nw = layer.weight.len();
            layer.weight = Tensor::new(layer.weight.shape().to_vec(), self.floats(nw)?)?;
            layer.bias = Tensor::from_vec(self.floats(cout)?);
            layer
                .validate()
                .map_err(|e| Error::Corrupt(format!("layer: {e}")))?;
            layers.push(layer);
        }
        Ok(ConvNet { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Init;
    use crate::prior::HighpassKind;

    fn model(kind: HighpassKind) -> Model {
        let cfg = FlowConfig {
            hidden: 8,
            n_hidden: 1,
            ..FlowConfig::new(Scheme::Quadrant, 3)
        };
        let flow = WaveletFlow::new(
            cfg,
            Init::Random {
                seed: 4,
                scale: 0.1,
            },
        )
        .unwrap();
        let priors = Priors::learnable(kind, Scheme::Quadrant, 3, 5, 8, 1).unwrap();
        Model::new(flow, priors).unwrap()
    }

    #[test]
    fn round_trips_every_prior_kind() {
        for kind in [
            HighpassKind::Uniform,
            HighpassKind::Logistic,
            HighpassKind::Conditional,
        ] {
            let m = model(kind);
            let back = Model::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), m.to_bytes());
        }
        let lifting = Model::new(
            WaveletFlow::new(FlowConfig::appendix_a(3), Init::LeGall { seed: 0 }).unwrap(),
            Priors::uniform(),
        )
        .unwrap();
        assert_eq!(Model::from_bytes(&lifting.to_bytes()).unwrap(), lifting);
    }

    #[test]
    fn optimizer_state_does_not_change_the_hash() {
        let mut m = model(HighpassKind::Logistic);
        let h = m.hash();
        let sizes: Vec<usize> = m.priors.params().iter().map(|t| t.len()).collect();
        m.train_state = Some(TrainState {
            epoch: 3,
            optimizer: Adamax::new(0.001, 0.99, &sizes),
            config: "epochs = 4\n".into(),
        });
        assert_eq!(m.hash(), h);
        let back = Model::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        m.priors.params_mut()[0].data_mut()[0] += 1.0;
        assert_ne!(m.hash(), h);
    }

    #[test]
    fn damaged_files() {
        let bytes = model(HighpassKind::Logistic).to_bytes();
        assert!(matches!(Model::from_bytes(b"NOPE"), Err(Error::Parse(_))));
        assert!(matches!(
            Model::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        let mut extra = bytes.clone();
        extra.extend(b"JUNK");
        assert!(Model::from_bytes(&extra).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nwfm");
        let m = model(HighpassKind::Conditional);
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
    }
}
