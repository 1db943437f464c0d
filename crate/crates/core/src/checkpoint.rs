//! In-memory model checkpoints: named little-endian `f32` blobs.
//!
//! Besides parameters and batch-norm buffers a checkpoint carries `meta.*`
//! blobs describing the architecture, the seed, the texture configuration
//! and optionally the optimizer state. Integers and `f64` values are packed
//! as 16-bit limbs so every value survives the `f32` payload exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::lbp::LbpConfig;
use crate::nn::{EncoderSpec, HeadSpec, Module, Network, NetworkSpec};
use crate::optim::{OptimizerHyper, OptimizerKind, OptimizerState};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Blob {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(invalid(format!("blob {name}: shape {shape:?} does not match {} values", data.len())));
        }
        Ok(Self { name, shape: shape.to_vec(), data })
    }

    fn bit_equal(&self, other: &Blob) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub blobs: Vec<Blob>,
}

impl PartialEq for ModelCheckpoint {
    /// Bitwise equality of every payload value.
    fn eq(&self, other: &Self) -> bool {
        self.format_version == other.format_version
            && self.blobs.len() == other.blobs.len()
            && self.blobs.iter().zip(&other.blobs).all(|(a, b)| a.bit_equal(b))
    }
}

fn pack_u64(v: u64) -> [f32; 4] {
    [0, 16, 32, 48].map(|s| ((v >> s) & 0xffff) as f32)
}

fn unpack_u64(limbs: &[f32]) -> Result<u64> {
    if limbs.len() != 4 {
        return Err(invalid("packed integer needs four limbs"));
    }
    let mut v = 0u64;
    for (i, &l) in limbs.iter().enumerate() {
        if !(0.0..=65535.0).contains(&l) || libm::truncf(l) != l {
            return Err(invalid("corrupt packed integer"));
        }
        v |= (l as u64) << (16 * i);
    }
    Ok(v)
}

fn pack_f64(v: f64) -> [f32; 4] {
    pack_u64(v.to_bits())
}

fn small_int(v: f32, what: &str) -> Result<usize> {
    if v < 0.0 || libm::truncf(v) != v || v > 16_777_216.0 {
        return Err(invalid(format!("corrupt {what} in checkpoint metadata")));
    }
    Ok(v as usize)
}

fn encode_encoder(spec: &EncoderSpec) -> Vec<f32> {
    let mut v = vec![spec.in_channels as f32, spec.stem_channels as f32, spec.stem_stride as f32, spec.widths.len() as f32];
    v.extend(spec.widths.iter().map(|&w| w as f32));
    v.extend(spec.strides.iter().map(|&s| s as f32));
    v
}

fn decode_encoder(v: &[f32]) -> Result<EncoderSpec> {
    if v.len() < 4 {
        return Err(invalid("truncated encoder metadata"));
    }
    let n = small_int(v[3], "block count")?;
    if v.len() != 4 + 2 * n {
        return Err(invalid("encoder metadata length mismatch"));
    }
    let ints = v.iter().map(|&x| small_int(x, "encoder field")).collect::<Result<Vec<_>>>()?;
    let spec = EncoderSpec {
        in_channels: ints[0],
        stem_channels: ints[1],
        stem_stride: ints[2],
        widths: ints[4..4 + n].to_vec(),
        strides: ints[4 + n..].to_vec(),
    };
    spec.validate()?;
    Ok(spec)
}

fn encode_head(spec: &HeadSpec) -> Vec<f32> {
    match *spec {
        HeadSpec::ProjectionMlp { hidden, output } => vec![0.0, hidden as f32, output as f32],
        HeadSpec::GapLinear { classes } => vec![1.0, classes as f32, 0.0],
    }
}

fn decode_head(v: &[f32]) -> Result<HeadSpec> {
    if v.len() != 3 {
        return Err(invalid("head metadata length mismatch"));
    }
    let a = small_int(v[1], "head width")?;
    let b = small_int(v[2], "head width")?;
    match v[0] {
        x if x == 0.0 => Ok(HeadSpec::ProjectionMlp { hidden: a, output: b }),
        x if x == 1.0 => Ok(HeadSpec::GapLinear { classes: a }),
        _ => Err(invalid("unknown head kind in checkpoint")),
    }
}

impl ModelCheckpoint {
    /// Snapshot `network` (parameters, buffers, architecture) with its seed,
    /// texture configuration and optional optimizer state.
    pub fn from_network(network: &mut Network<f32>, seed: u64, lbp: &LbpConfig, optimizer: Option<&OptimizerState<f32>>) -> Self {
        let mut blobs = vec![
            Blob { name: "meta.seed".into(), shape: vec![4], data: pack_u64(seed).to_vec() },
            Blob { name: "meta.encoder".into(), shape: vec![encode_encoder(&network.spec.encoder).len()], data: encode_encoder(&network.spec.encoder) },
            Blob { name: "meta.head".into(), shape: vec![3], data: encode_head(&network.spec.head) },
            Blob { name: "meta.lbp".into(), shape: vec![5], data: [&[lbp.points as f32][..], &pack_f64(lbp.radius)].concat() },
        ];
        network.visit_params("", &mut |name, t| {
            blobs.push(Blob { name: name.into(), shape: t.shape().to_vec(), data: t.data().to_vec() });
        });
        network.visit_buffers("", &mut |name, t| {
            blobs.push(Blob { name: format!("buffer.{name}"), shape: t.shape().to_vec(), data: t.data().to_vec() });
        });
        if let Some(opt) = optimizer {
            let h = opt.hyper;
            let mut meta = vec![match opt.kind {
                OptimizerKind::Adam => 0.0,
                OptimizerKind::SgdMomentum => 1.0,
            }];
            meta.extend(pack_u64(opt.step_count));
            for x in [h.learning_rate, h.weight_decay, h.beta1, h.beta2, h.epsilon, h.momentum] {
                meta.extend(pack_f64(x));
            }
            meta.extend(pack_u64(opt.first.len() as u64));
            meta.extend(pack_u64(opt.second.len() as u64));
            blobs.push(Blob { name: "meta.optimizer".into(), shape: vec![meta.len()], data: meta });
            for (i, m) in opt.first.iter().enumerate() {
                blobs.push(Blob { name: format!("optim.first.{i}"), shape: vec![m.len()], data: m.clone() });
            }
            for (i, m) in opt.second.iter().enumerate() {
                blobs.push(Blob { name: format!("optim.second.{i}"), shape: vec![m.len()], data: m.clone() });
            }
        }
        Self { format_version: CHECKPOINT_FORMAT_VERSION, blobs }
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    fn required(&self, name: &str) -> Result<&Blob> {
        self.blob(name).ok_or_else(|| Error::ParameterMismatch(format!("checkpoint has no blob {name}")))
    }

    pub fn seed(&self) -> Result<u64> {
        unpack_u64(&self.required("meta.seed")?.data)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        Ok(NetworkSpec { encoder: decode_encoder(&self.required("meta.encoder")?.data)?, head: decode_head(&self.required("meta.head")?.data)? })
    }

    pub fn lbp_config(&self) -> Result<LbpConfig> {
        let d = &self.required("meta.lbp")?.data;
        if d.len() != 5 {
            return Err(invalid("lbp metadata length mismatch"));
        }
        LbpConfig::new(small_int(d[0], "lbp points")? as u32, f64::from_bits(unpack_u64(&d[1..])?))
    }

    pub fn optimizer_state(&self) -> Result<Option<OptimizerState<f32>>> {
        let Some(meta) = self.blob("meta.optimizer") else { return Ok(None) };
        let d = &meta.data;
        if d.len() != 1 + 4 + 6 * 4 + 8 {
            return Err(invalid("optimizer metadata length mismatch"));
        }
        let kind = match d[0] {
            x if x == 0.0 => OptimizerKind::Adam,
            x if x == 1.0 => OptimizerKind::SgdMomentum,
            _ => return Err(invalid("unknown optimizer kind in checkpoint")),
        };
        let f = |i: usize| unpack_u64(&d[5 + 4 * i..9 + 4 * i]).map(f64::from_bits);
        let hyper = OptimizerHyper { learning_rate: f(0)?, weight_decay: f(1)?, beta1: f(2)?, beta2: f(3)?, epsilon: f(4)?, momentum: f(5)? };
        let n_first = unpack_u64(&d[29..33])? as usize;
        let n_second = unpack_u64(&d[33..37])? as usize;
        let collect = |tag: &str, n: usize| -> Result<Vec<Vec<f32>>> { (0..n).map(|i| Ok(self.required(&format!("optim.{tag}.{i}"))?.data.clone())).collect() };
        Ok(Some(OptimizerState { kind, hyper, step_count: unpack_u64(&d[1..5])?, first: collect("first", n_first)?, second: collect("second", n_second)? }))
    }

    fn copy_into(&self, name: &str, target: &mut Tensor<f32>, lookup: &str) -> Result<()> {
        let blob = self.required(lookup)?;
        if blob.shape != target.shape() {
            return Err(Error::ParameterMismatch(format!("{name}: checkpoint shape {:?}, network shape {:?}", blob.shape, target.shape())));
        }
        target.data_mut().copy_from_slice(&blob.data);
        Ok(())
    }

    /// Rebuild the stored network exactly.
    pub fn to_network(&self) -> Result<Network<f32>> {
        let spec = self.network_spec()?;
        let mut net = Network::new(&spec, self.seed()?)?;
        self.load_into(&mut net)?;
        Ok(net)
    }

    /// Overwrite all parameters and buffers of `network`. Shapes are checked
    /// before anything is written.
    pub fn load_into(&self, network: &mut Network<f32>) -> Result<()> {
        self.check(network, false)?;
        let mut result = Ok(());
        network.visit_params("", &mut |name, t| {
            if result.is_ok() {
                result = self.copy_into(name, t, name);
            }
        });
        network.visit_buffers("", &mut |name, t| {
            if result.is_ok() {
                result = self.copy_into(name, t, &format!("buffer.{name}"));
            }
        });
        result
    }

    /// Overwrite only the encoder (parameters and buffers) of `network`,
    /// leaving its head untouched.
    pub fn load_encoder_into(&self, network: &mut Network<f32>) -> Result<()> {
        self.check(network, true)?;
        let mut result = Ok(());
        network.encoder.visit_params("encoder", &mut |name, t| {
            if result.is_ok() {
                result = self.copy_into(name, t, name);
            }
        });
        network.encoder.visit_buffers("encoder", &mut |name, t| {
            if result.is_ok() {
                result = self.copy_into(name, t, &format!("buffer.{name}"));
            }
        });
        result
    }

    fn check(&self, network: &mut Network<f32>, encoder_only: bool) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let mut probe = |name: &str, lookup: String, t: &mut Tensor<f32>| match self.blob(&lookup) {
            None => problems.push(format!("missing {name}")),
            Some(b) if b.shape != t.shape() => problems.push(format!("{name}: checkpoint {:?} vs network {:?}", b.shape, t.shape())),
            Some(_) => {}
        };
        if encoder_only {
            network.encoder.visit_params("encoder", &mut |n, t| probe(n, n.into(), t));
            network.encoder.visit_buffers("encoder", &mut |n, t| probe(n, format!("buffer.{n}"), t));
        } else {
            network.visit_params("", &mut |n, t| probe(n, n.into(), t));
            network.visit_buffers("", &mut |n, t| probe(n, format!("buffer.{n}"), t));
        }
        match problems.first() {
            None => Ok(()),
            Some(first) => Err(Error::ParameterMismatch(format!("{first} ({} mismatches)", problems.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let mut net = Network::<f32>::new(&NetworkSpec::pretraining(), 77).unwrap();
        let lbp = LbpConfig::new(16, 2.5).unwrap();
        let mut opt = OptimizerState::adam(OptimizerHyper::adam());
        opt.step_module(&mut net).unwrap();
        let ck = ModelCheckpoint::from_network(&mut net, 77, &lbp, Some(&opt));
        assert_eq!(ck.seed().unwrap(), 77);
        assert_eq!(ck.lbp_config().unwrap(), lbp);
        assert_eq!(ck.network_spec().unwrap(), NetworkSpec::pretraining());
        assert_eq!(ck.optimizer_state().unwrap().unwrap(), opt);
        let mut rebuilt = ck.to_network().unwrap();
        let again = ModelCheckpoint::from_network(&mut rebuilt, 77, &lbp, Some(&opt));
        assert_eq!(ck, again);
    }

    #[test]
    fn mismatched_architecture_is_rejected_without_mutation() {
        let mut small = Network::<f32>::new(&NetworkSpec::classification(), 1).unwrap();
        let ck = ModelCheckpoint::from_network(&mut small, 1, &LbpConfig::default(), None);
        let spec = NetworkSpec { encoder: EncoderSpec { widths: vec![16, 32, 32], ..EncoderSpec::default() }, head: HeadSpec::classifier() };
        let mut other = Network::<f32>::new(&spec, 2).unwrap();
        let before = ModelCheckpoint::from_network(&mut other, 2, &LbpConfig::default(), None);
        assert!(matches!(ck.load_encoder_into(&mut other), Err(Error::ParameterMismatch(_))));
        assert_eq!(ModelCheckpoint::from_network(&mut other, 2, &LbpConfig::default(), None), before);
    }

    #[test]
    fn packed_integers_survive() {
        for v in [0u64, 1, u64::MAX, 0x1234_5678_9abc_def0] {
            assert_eq!(unpack_u64(&pack_u64(v)).unwrap(), v);
        }
    }
}
