//! Small U-shaped encoder–decoder with both contextual-relation blocks at
//! the bottleneck and deep-supervision heads.
//!
//! Layout for an `H×W` input and stage widths `c1..c4`:
//!
//! ```text
//! enc_k : [conv3x3-BN-ReLU] x2 at H/2^(k-1), then 3x3 avg-pool stride 2
//! a     : bottleneck at H/16 with c4 channels
//! ICR(a) ‖ ECR(a) → fuse → dec3 (H/8) → dec2 (H/4) → dec1 (H/2) → refine (H)
//! heads : side maps on dec3/dec2/dec1, final map on refine, coarse map from ECR
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, BankSource, ConvBn, IcrParams};
use crate::error::{dim_err, Error, Result};
use crate::memory::RegionMemory;
use crate::scalar::Scalar;
use crate::tensor::{BatchNormState, Tape, Tensor, Var};

/// Foreground prior that sets the initial head bias, so untrained maps start
/// near the typical mask fraction instead of at 0.5.
pub const HEAD_PRIOR: f64 = 0.1;

/// Which contextual blocks are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub icr: bool,
    pub ecr: bool,
    /// Cross-batch memory for the ECR bank; without it ECR attends within the batch.
    pub memory: bool,
}

impl Variant {
    pub const BACKBONE: Self = Self { icr: false, ecr: false, memory: false };
    pub const ICR: Self = Self { icr: true, ecr: false, memory: false };
    pub const ECR: Self = Self { icr: false, ecr: true, memory: false };
    pub const ECR_ROM: Self = Self { icr: false, ecr: true, memory: true };
    pub const FULL: Self = Self { icr: true, ecr: true, memory: true };

    pub fn name(&self) -> &'static str {
        match (self.icr, self.ecr, self.memory) {
            (false, false, _) => "backbone",
            (true, false, _) => "icr",
            (false, true, false) => "ecr",
            (false, true, true) => "ecr+rom",
            (true, true, false) => "icr+ecr",
            (true, true, true) => "icr+ecr+rom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::BACKBONE, Self::ICR, Self::ECR, Self::ECR_ROM, Self { icr: true, ecr: true, memory: false }, Self::FULL]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_size: (usize, usize),
    pub stage_channels: [usize; 4],
    pub memory_capacity: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: (224, 224),
            stage_channels: [16, 32, 64, 128],
            memory_capacity: 20,
            seed: 0,
            variant: Variant::FULL,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!("input size {h}x{w} must be a positive multiple of 16")));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage channels must be positive".into()));
        }
        if self.memory_capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.stage_channels[3]
    }
}

/// Network outputs, all maps at input resolution.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    /// Final logits `[B, 1, H, W]`.
    pub final_map: Var,
    /// Side logits from the decoder stages, deepest first.
    pub side: [Var; 3],
    /// Upsampled coarse-map logits; absent when ECR is disabled.
    pub coarse_m: Option<Var>,
    pub bottleneck: Var,
    /// Tape handles of the parameters, in [`Network::param_names`] order.
    pub params: Vec<Var>,
}

impl ForwardOutputs {
    /// Supervised maps: final, side 1..3, coarse map.
    pub fn maps(&self) -> Vec<Var> {
        let mut v = vec![self.final_map];
        v.extend(self.side);
        v.extend(self.coarse_m);
        v
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvBnIdx {
    w: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
}

#[derive(Clone, Copy, Debug)]
struct HeadIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct IcrIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    gamma: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    enc: [[ConvBnIdx; 2]; 4],
    icr: IcrIdx,
    psi: ConvBnIdx,
    fuse: ConvBnIdx,
    dec: [ConvBnIdx; 3],
    refine: ConvBnIdx,
    side: [HeadIdx; 3],
    head: HeadIdx,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<BatchNormState<T>>,
    layout: Layout,
}

struct Builder<T> {
    rng: ChaCha8Rng,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<BatchNormState<T>>,
}

impl<T: Scalar> Builder<T> {
    fn add(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)));
        self.add(name, t)
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvBnIdx {
        let w = self.uniform(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k);
        let gamma = self.add(format!("{name}.bn.gamma"), Tensor::full(&[cout], T::one()));
        let beta = self.add(format!("{name}.bn.beta"), Tensor::zeros(&[cout]));
        self.bn_names.push(format!("{name}.bn"));
        self.bn.push(BatchNormState::new(cout));
        ConvBnIdx { w, gamma, beta, bn: self.bn.len() - 1 }
    }

    fn head(&mut self, name: &str, cin: usize, cout: usize) -> HeadIdx {
        let w = self.uniform(format!("{name}.weight"), &[cout, cin, 1, 1], cin);
        let prior = (HEAD_PRIOR / (1.0 - HEAD_PRIOR)).ln();
        let b = self.add(format!("{name}.bias"), Tensor::full(&[cout], T::lit(prior)));
        HeadIdx { w, b }
    }
}

fn conv_bn_vars(p: &[Var], i: &ConvBnIdx) -> ConvBn {
    ConvBn { w: p[i.w], gamma: p[i.gamma], beta: p[i.beta] }
}

impl<T: Scalar> Network<T> {
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3, c4] = config.stage_channels;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            names: Vec::new(),
            params: Vec::new(),
            bn_names: Vec::new(),
            bn: Vec::new(),
        };
        let widths = [3, c1, c2, c3, c4];
        let enc = std::array::from_fn(|k| {
            let first = b.conv_bn(&format!("enc{}.conv1", k + 1), widths[k], widths[k + 1], 3);
            let second = b.conv_bn(&format!("enc{}.conv2", k + 1), widths[k + 1], widths[k + 1], 3);
            [first, second]
        });
        let cq = attention::reduced_channels(c4);
        let wq = b.uniform("icr.query.weight".into(), &[cq, c4, 1, 1], c4);
        let bq = b.uniform("icr.query.bias".into(), &[cq], c4);
        let wk = b.uniform("icr.key.weight".into(), &[cq, c4, 1, 1], c4);
        let bk = b.uniform("icr.key.bias".into(), &[cq], c4);
        let wv = b.uniform("icr.value.weight".into(), &[c4, c4, 1, 1], c4);
        let bv = b.uniform("icr.value.bias".into(), &[c4], c4);
        let gamma = b.add("icr.gamma".into(), Tensor::zeros(&[1]));
        let icr = IcrIdx { wq, bq, wk, bk, wv, bv, gamma };
        let psi = b.conv_bn("ecr.psi", c4, 1, 1);
        let fuse = b.conv_bn("fuse", 2 * c4, c4, 3);
        let dec =
            [b.conv_bn("dec3", 2 * c4, c3, 3), b.conv_bn("dec2", 2 * c3, c2, 3), b.conv_bn("dec1", 2 * c2, c1, 3)];
        let refine = b.conv_bn("refine", 2 * c1, c1, 3);
        let side = [b.head("side3", c3, 1), b.head("side2", c2, 1), b.head("side1", c1, 1)];
        let head = b.head("head", c1, 1);
        let layout = Layout { enc, icr, psi, fuse, dec, refine, side, head };
        Ok(Self { config, names: b.names, params: b.params, bn_names: b.bn_names, bn: b.bn, layout })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn set_variant(&mut self, variant: Variant) {
        self.config.variant = variant;
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_states(&self) -> &[BatchNormState<T>] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BatchNormState<T>] {
        &mut self.bn
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            bn_names: self.bn_names.clone(),
            bn: self.bn.iter().map(|s| s.cast()).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Puts every parameter on `tape` as a tracked leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        batch: Var,
        memory: Option<&mut RegionMemory<T>>,
        training: bool,
    ) -> Result<ForwardOutputs> {
        let params = self.register(tape);
        self.forward_with(tape, params, batch, memory, training)
    }

    /// Forward pass using caller-registered parameter handles.
    ///
    /// In training mode with ECR and memory enabled, the batch's region
    /// embeddings are pushed into `memory`.
    pub fn forward_with(
        &mut self,
        tape: &mut Tape<T>,
        params: Vec<Var>,
        batch: Var,
        memory: Option<&mut RegionMemory<T>>,
        training: bool,
    ) -> Result<ForwardOutputs> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameter handles for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        let (h, w) = self.config.input_size;
        let s = tape.shape(batch);
        if s.len() != 4 || s[1] != 3 || s[2] != h || s[3] != w {
            return dim_err(format!("input {:?} does not match configured [B, 3, {h}, {w}]", s));
        }
        let variant = self.config.variant;
        let p = &params;
        let layout = self.layout.clone();
        let bn = &mut self.bn;

        let mut block = |tape: &mut Tape<T>, x: Var, idx: &ConvBnIdx, pad: usize| -> Result<Var> {
            let y = conv_bn_vars(p, idx).apply(tape, x, &mut bn[idx.bn], pad, training)?;
            tape.relu(y)
        };

        let mut skips = Vec::with_capacity(4);
        let mut x = batch;
        for stage in &layout.enc {
            x = block(tape, x, &stage[0], 1)?;
            x = block(tape, x, &stage[1], 1)?;
            skips.push(x);
            x = tape.avg_pool(x, 3, 2, 1)?;
        }
        let a = x;

        let y_icr = if variant.icr {
            let i = &layout.icr;
            let ip = IcrParams {
                wq: p[i.wq],
                bq: p[i.bq],
                wk: p[i.wk],
                bk: p[i.bk],
                wv: p[i.wv],
                bv: p[i.bv],
                gamma: p[i.gamma],
            };
            attention::position_attention(tape, a, &ip)?
        } else {
            a
        };
        let mut coarse = None;
        let y_ecr = if variant.ecr {
            let source = match memory {
                Some(mem) if variant.memory => BankSource::Memory(mem),
                _ => BankSource::WithinBatch,
            };
            let psi = conv_bn_vars(p, &layout.psi);
            let out = attention::ecr_forward(tape, a, &psi, &mut bn[layout.psi.bn], source, training)?;
            coarse = Some(out.m_logits);
            out.y
        } else {
            a
        };
        let fuse = conv_bn_vars(p, &layout.fuse);
        let mut d = attention::fuse(tape, y_icr, y_ecr, &fuse, &mut bn[layout.fuse.bn], training)?;
        let mut block = |tape: &mut Tape<T>, x: Var, idx: &ConvBnIdx, pad: usize| -> Result<Var> {
            let y = conv_bn_vars(p, idx).apply(tape, x, &mut bn[idx.bn], pad, training)?;
            tape.relu(y)
        };

        let head = |tape: &mut Tape<T>, x: Var, idx: &HeadIdx| tape.conv2d(x, p[idx.w], Some(p[idx.b]), 1, 0);
        let mut side = Vec::with_capacity(3);
        for (k, idx) in layout.dec.iter().enumerate() {
            let up = tape.upsample_bilinear(d, 2)?;
            let cat = tape.concat(&[up, skips[3 - k]], 1)?;
            d = block(tape, cat, idx, 1)?;
            let logits = head(tape, d, &layout.side[k])?;
            side.push(tape.upsample_bilinear(logits, 8 >> k)?);
        }
        let up = tape.upsample_bilinear(d, 2)?;
        let cat = tape.concat(&[up, skips[0]], 1)?;
        let r = block(tape, cat, &layout.refine, 1)?;
        let final_map = head(tape, r, &layout.head)?;
        let coarse_m = match coarse {
            Some(m) => Some(tape.upsample_bilinear(m, 16)?),
            None => None,
        };
        Ok(ForwardOutputs { final_map, side: [side[0], side[1], side[2]], coarse_m, bottleneck: a, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_size: (32, 32),
            stage_channels: [4, 8, 16, 32],
            memory_capacity: 5,
            seed,
            variant: Variant::FULL,
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let cfg = NetworkConfig { input_size: (40, 32), ..small(0) };
        assert!(matches!(Network::<f32>::build(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::<f32>::build(small(3)).unwrap();
        let b = Network::<f32>::build(small(3)).unwrap();
        let c = Network::<f32>::build(small(4)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::BACKBONE, Variant::ICR, Variant::ECR, Variant::ECR_ROM, Variant::FULL] {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
    }

    #[test]
    fn wrong_input_size_is_dimension_error() {
        let mut net = Network::<f32>::build(small(0)).unwrap();
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(&[1, 3, 16, 16]));
        assert!(matches!(net.forward(&mut tape, x, None, false), Err(Error::Dimension(_))));
    }
}
