//! Finite-difference checks over every differentiable op, the attention
//! blocks and a small network.

use std::time::Instant;

use dcrnet::attention::{self, BankSource, ConvBn, IcrParams};
use dcrnet::losses::{self, total_loss};
use dcrnet::memory::RegionMemory;
use dcrnet::network::{Network, NetworkConfig, Variant};
use dcrnet::tensor::{grad_check_inputs, GradCheckReport};
use dcrnet::{BatchNormState, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step used for single ops; the blocks and the network use smaller steps
/// so that ReLU kinks are rarely straddled.
pub const OP_STEP: f64 = 1e-3;
pub const BLOCK_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-3;
pub const NETWORK_TOLERANCE: f64 = 2e-3;
/// Random shapes per single-op check.
pub const SHAPES_PER_OP: usize = 10;

pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    pub run: Box<dyn Fn() -> Result<f64>>,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    /// `Err` carries the message when the check itself failed to run.
    pub max_rel_error: std::result::Result<f64, String>,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        matches!(self.max_rel_error, Ok(e) if e <= self.tolerance)
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        match &self.max_rel_error {
            Ok(e) => format!(
                "{verdict} {:<24} max_rel_error={e:.3e} tol={:.0e} ({:.2}s)",
                self.name, self.tolerance, self.seconds
            ),
            Err(msg) => format!("{verdict} {:<24} error: {msg}", self.name),
        }
    }
}

pub fn run_checks(checks: &[Check]) -> Vec<CheckResult> {
    checks
        .iter()
        .map(|c| {
            let start = Instant::now();
            let r = (c.run)().map_err(|e| e.to_string());
            CheckResult {
                name: c.name,
                tolerance: c.tolerance,
                max_rel_error: r,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn rng(tag: &str, k: usize) -> ChaCha8Rng {
    let h = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3));
    ChaCha8Rng::seed_from_u64(h ^ (k as u64) << 32)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, for inputs of kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ y·r` with a fixed random `r`, so every output element matters.
fn project(tape: &mut Tape<f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let r = uniform(rng, tape.shape(y), -1.0, 1.0);
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn random_shape(rng: &mut ChaCha8Rng, rank: usize, max: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let s = dims(rng, rank, max);
    uniform(rng, &s, lo, hi)
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..=max)).collect()
}

/// Runs `build` at [`SHAPES_PER_OP`] random shapes; returns the worst error.
fn over_shapes(
    tag: &'static str,
    mut build: impl FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>),
) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..SHAPES_PER_OP {
        let mut r = rng(tag, k);
        let (inputs, f) = build(&mut r);
        let mut proj_rng = rng(tag, 1000 + k);
        let seed: u64 = proj_rng.gen();
        let rep = grad_check_inputs(
            |t, v| {
                let y = f(t, v)?;
                let mut pr = ChaCha8Rng::seed_from_u64(seed);
                project(t, y, &mut pr)
            },
            &inputs,
            OP_STEP,
            None,
        )?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(worst)
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn op(name: &'static str, build: fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn)) -> Check {
    Check { name, tolerance: OP_TOLERANCE, run: Box::new(move || over_shapes(name, build)) }
}

fn binary(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let rank = rng.gen_range(1..=3);
    let s = dims(rng, rank, 4);
    vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)]
}

fn conv_case(rng: &mut ChaCha8Rng, k: usize) -> (Vec<Tensor<f64>>, OpFn) {
    let (b, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(k..=6), rng.gen_range(k..=6));
    let stride = rng.gen_range(1..=2);
    let pad = if k == 3 { rng.gen_range(0..=1) } else { 0 };
    let inputs = vec![
        uniform(rng, &[b, cin, h, w], -1.0, 1.0),
        uniform(rng, &[cout, cin, k, k], -1.0, 1.0),
        uniform(rng, &[cout], -1.0, 1.0),
    ];
    (inputs, Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad)))
}

/// Every differentiable tape op.
pub fn op_checks() -> Vec<Check> {
    vec![
        op("add", |r| (binary(r), Box::new(|t, v| t.add(v[0], v[1])))),
        op("sub", |r| (binary(r), Box::new(|t, v| t.sub(v[0], v[1])))),
        op("mul", |r| (binary(r), Box::new(|t, v| t.mul(v[0], v[1])))),
        op("div", |r| {
            let mut x = binary(r);
            x[1] = away_from_zero(r, x[1].shape()).map(|d| d + d.signum());
            (x, Box::new(|t, v| t.div(v[0], v[1])))
        }),
        op("add_scalar", |r| {
            let s = r.gen_range(-2.0..2.0);
            (vec![random_shape(r, 2, 4, -1.0, 1.0)], Box::new(move |t, v| t.add_scalar(v[0], s)))
        }),
        op("mul_scalar", |r| {
            let s = r.gen_range(-2.0..2.0);
            (vec![random_shape(r, 2, 4, -1.0, 1.0)], Box::new(move |t, v| t.mul_scalar(v[0], s)))
        }),
        op("broadcast_mul", |r| {
            let s = dims(r, 3, 3);
            let keep = r.gen_range(0..=2);
            let b = if keep == 0 { vec![1] } else { s[..keep].to_vec() };
            (vec![uniform(r, &s, -1.0, 1.0), uniform(r, &b, -1.0, 1.0)], Box::new(|t, v| t.broadcast_mul(v[0], v[1])))
        }),
        op("broadcast_div", |r| {
            let s = dims(r, 3, 3);
            let keep = r.gen_range(0..=2);
            let b = if keep == 0 { vec![1] } else { s[..keep].to_vec() };
            let den = away_from_zero(r, &b).map(|d| d + d.signum());
            (vec![uniform(r, &s, -1.0, 1.0), den], Box::new(|t, v| t.broadcast_div(v[0], v[1])))
        }),
        op("reshape", |r| {
            let s = dims(r, 3, 3);
            let n: usize = s.iter().product();
            (vec![uniform(r, &s, -1.0, 1.0)], Box::new(move |t, v| t.reshape(v[0], &[n])))
        }),
        op("permute", |r| {
            let s = dims(r, 3, 3);
            let mut perm = vec![0, 1, 2];
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), r);
            (vec![uniform(r, &s, -1.0, 1.0)], Box::new(move |t, v| t.permute(v[0], &perm)))
        }),
        op("transpose", |r| (vec![random_shape(r, 3, 4, -1.0, 1.0)], Box::new(|t, v| t.transpose(v[0])))),
        op("concat", |r| {
            let mut a = dims(r, 3, 3);
            let axis = r.gen_range(0..3);
            let mut b = a.clone();
            b[axis] = r.gen_range(1..=3);
            a[axis] = r.gen_range(1..=3);
            (
                vec![uniform(r, &a, -1.0, 1.0), uniform(r, &b, -1.0, 1.0)],
                Box::new(move |t, v| t.concat(&[v[0], v[1]], axis)),
            )
        }),
        op("sum", |r| (vec![random_shape(r, 2, 4, -1.0, 1.0)], Box::new(|t, v| t.sum(v[0])))),
        op("mean", |r| (vec![random_shape(r, 2, 4, -1.0, 1.0)], Box::new(|t, v| t.mean(v[0])))),
        op("sum_trailing", |r| {
            let keep = r.gen_range(1..=2);
            (vec![random_shape(r, 3, 3, -1.0, 1.0)], Box::new(move |t, v| t.sum_trailing(v[0], keep)))
        }),
        op("relu", |r| {
            (
                {
                    let s = dims(r, 2, 5);
                    vec![away_from_zero(r, &s)]
                },
                Box::new(|t, v| t.relu(v[0])),
            )
        }),
        op("sigmoid", |r| (vec![random_shape(r, 2, 5, -4.0, 4.0)], Box::new(|t, v| t.sigmoid(v[0])))),
        op("bce_with_logits", |r| {
            let s = dims(r, 2, 5);
            let target = Tensor::from_fn(&s, |_| r.gen_range(0..=1) as f64);
            (
                vec![uniform(r, &s, -4.0, 4.0)],
                Box::new(move |t, v| {
                    let g = t.constant(target.clone());
                    t.bce_with_logits(v[0], g)
                }),
            )
        }),
        op("softmax", |r| {
            let s = dims(r, 3, 4);
            let axis = r.gen_range(0..3);
            (vec![uniform(r, &s, -3.0, 3.0)], Box::new(move |t, v| t.softmax(v[0], axis)))
        }),
        op("matmul", |r| {
            let (m, k, n) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
            (
                vec![uniform(r, &[m, k], -1.0, 1.0), uniform(r, &[k, n], -1.0, 1.0)],
                Box::new(|t, v| t.matmul(v[0], v[1])),
            )
        }),
        op("bmm", |r| {
            let (b, m, k, n) = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
            (
                vec![uniform(r, &[b, m, k], -1.0, 1.0), uniform(r, &[b, k, n], -1.0, 1.0)],
                Box::new(|t, v| t.bmm(v[0], v[1])),
            )
        }),
        op("conv2d_3x3", |r| conv_case(r, 3)),
        op("conv2d_1x1", |r| conv_case(r, 1)),
        op("batch_norm_train", |r| {
            let (b, c, h, w) = (r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(2..=3));
            let inputs =
                vec![uniform(r, &[b, c, h, w], -1.0, 1.0), uniform(r, &[c], 0.5, 1.5), uniform(r, &[c], -0.5, 0.5)];
            (
                inputs,
                Box::new(move |t, v| {
                    let mut st = BatchNormState::new(c);
                    t.batch_norm(v[0], v[1], v[2], &mut st, true)
                }),
            )
        }),
        op("batch_norm_eval", |r| {
            let (b, c, h, w) = (r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3));
            let mut st = BatchNormState::new(c);
            st.running_mean = (0..c).map(|_| r.gen_range(-0.5..0.5)).collect();
            st.running_var = (0..c).map(|_| r.gen_range(0.5..2.0)).collect();
            let inputs =
                vec![uniform(r, &[b, c, h, w], -1.0, 1.0), uniform(r, &[c], 0.5, 1.5), uniform(r, &[c], -0.5, 0.5)];
            (
                inputs,
                Box::new(move |t, v| {
                    let mut st = st.clone();
                    t.batch_norm(v[0], v[1], v[2], &mut st, false)
                }),
            )
        }),
        op("upsample_bilinear", |r| {
            let s = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=4)];
            let f = r.gen_range(1..=3);
            (vec![uniform(r, &s, -1.0, 1.0)], Box::new(move |t, v| t.upsample_bilinear(v[0], f)))
        }),
        op("avg_pool", |r| {
            let k = [1, 3, 5][r.gen_range(0..3)];
            let s = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=6), r.gen_range(1..=6)];
            let stride = r.gen_range(1..=2);
            let pad = r.gen_range(0..=k / 2);
            let s = [s[0], s[1], s[2].max(k - 2 * pad), s[3].max(k - 2 * pad)];
            (vec![uniform(r, &s, -1.0, 1.0)], Box::new(move |t, v| t.avg_pool(v[0], k, stride, pad)))
        }),
    ]
}

/// Block-level shapes.
const B: usize = 2;
const C: usize = 4;
const HW: usize = 6;
const S: usize = 5;

fn conv_bn_inputs(r: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> Vec<Tensor<f64>> {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    vec![uniform(r, &[cout, cin, k, k], -bound, bound), uniform(r, &[cout], 0.5, 1.5), uniform(r, &[cout], -0.2, 0.2)]
}

fn icr_inputs(r: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let cq = attention::reduced_channels(C);
    vec![
        uniform(r, &[cq, C, 1, 1], -0.5, 0.5),
        uniform(r, &[cq], -0.1, 0.1),
        uniform(r, &[cq, C, 1, 1], -0.5, 0.5),
        uniform(r, &[cq], -0.1, 0.1),
        uniform(r, &[C, C, 1, 1], -0.5, 0.5),
        uniform(r, &[C], -0.1, 0.1),
        // A nonzero gamma so the attention path contributes.
        Tensor::from_f64(&[1], &[0.7]).expect("scalar"),
    ]
}

fn icr_params(v: &[Var]) -> IcrParams {
    IcrParams { wq: v[0], bq: v[1], wk: v[2], bk: v[3], wv: v[4], bv: v[5], gamma: v[6] }
}

fn memory_with(r: &mut ChaCha8Rng) -> RegionMemory<f64> {
    let mut mem = RegionMemory::new(S).expect("positive capacity");
    let rows = (0..S).map(|_| (0..C).map(|_| r.gen_range(-0.3..0.3)).collect()).collect();
    mem.push_vectors(rows).expect("uniform width");
    mem
}

fn block_check(
    name: &'static str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    f: impl Fn(&mut Tape<f64>, &[Var], &mut ChaCha8Rng) -> Result<Var> + 'static,
) -> Check {
    Check {
        name,
        tolerance: OP_TOLERANCE,
        run: Box::new(move || {
            let mut r = rng(name, 0);
            let xs = inputs(&mut r);
            let seed: u64 = r.gen();
            let rep = grad_check_inputs(
                |t, v| {
                    let mut fr = ChaCha8Rng::seed_from_u64(seed);
                    let y = f(t, v, &mut fr)?;
                    project(t, y, &mut fr)
                },
                &xs,
                BLOCK_STEP,
                None,
            )?;
            Ok(rep.max_rel_error)
        }),
    }
}

/// Attention blocks at B=2, C=4, H=W=6 with a 5-entry memory.
pub fn block_checks() -> Vec<Check> {
    vec![
        block_check(
            "position_attention",
            |r| {
                let mut x = vec![uniform(r, &[B, C, HW, HW], -1.0, 1.0)];
                x.extend(icr_inputs(r));
                x
            },
            |t, v, _| attention::position_attention(t, v[0], &icr_params(&v[1..])),
        ),
        block_check(
            "region_embedding",
            |r| vec![uniform(r, &[B, C, HW, HW], -1.0, 1.0), uniform(r, &[B, 1, HW, HW], 0.1, 1.0)],
            |t, v, _| attention::region_embedding(t, v[0], v[1]),
        ),
        block_check(
            "cross_attention+augment",
            |r| vec![uniform(r, &[S, C], -1.0, 1.0), uniform(r, &[B, C, HW, HW], -1.0, 1.0)],
            |t, v, _| {
                let x = attention::cross_attention(t, v[0], v[1])?;
                attention::augment(t, x, v[0], (HW, HW))
            },
        ),
        block_check(
            "ecr_forward",
            |r| {
                let mut x = vec![uniform(r, &[B, C, HW, HW], -1.0, 1.0)];
                x.extend(conv_bn_inputs(r, 1, C, 1));
                x
            },
            |t, v, r| {
                let psi = ConvBn { w: v[1], gamma: v[2], beta: v[3] };
                let mut mem = memory_with(r);
                let mut st = BatchNormState::new(1);
                let out = attention::ecr_forward(t, v[0], &psi, &mut st, BankSource::Memory(&mut mem), true)?;
                let flat_y = t.reshape(out.y, &[B * C * HW * HW])?;
                let flat_m = t.reshape(out.m_logits, &[B * HW * HW])?;
                t.concat(&[flat_y, flat_m], 0)
            },
        ),
        block_check(
            "fuse",
            |r| {
                let mut x = vec![uniform(r, &[B, C, HW, HW], -1.0, 1.0), uniform(r, &[B, C, HW, HW], -1.0, 1.0)];
                x.extend(conv_bn_inputs(r, C, 2 * C, 3));
                x
            },
            |t, v, _| {
                let p = ConvBn { w: v[2], gamma: v[3], beta: v[4] };
                let mut st = BatchNormState::new(C);
                attention::fuse(t, v[0], v[1], &p, &mut st, true)
            },
        ),
        block_check(
            "icr+ecr+fuse",
            |r| {
                let mut x = vec![uniform(r, &[B, C, HW, HW], -1.0, 1.0)];
                x.extend(icr_inputs(r));
                x.extend(conv_bn_inputs(r, 1, C, 1));
                x.extend(conv_bn_inputs(r, C, 2 * C, 3));
                x
            },
            |t, v, r| {
                let a = v[0];
                let y_icr = attention::position_attention(t, a, &icr_params(&v[1..8]))?;
                let psi = ConvBn { w: v[8], gamma: v[9], beta: v[10] };
                let mut mem = memory_with(r);
                let mut psi_st = BatchNormState::new(1);
                let ecr = attention::ecr_forward(t, a, &psi, &mut psi_st, BankSource::Memory(&mut mem), true)?;
                let p = ConvBn { w: v[11], gamma: v[12], beta: v[13] };
                let mut st = BatchNormState::new(C);
                attention::fuse(t, y_icr, ecr.y, &p, &mut st, true)
            },
        ),
        Check {
            name: "total_loss",
            tolerance: OP_TOLERANCE,
            run: Box::new(|| {
                let mut r = rng("total_loss", 0);
                let shape = [2, 1, 8, 8];
                let gt = Tensor::from_fn(&shape, |i| ((i % 8) > 2 && (i / 8 % 8) < 5) as u8 as f64);
                let xs: Vec<Tensor<f64>> = (0..5).map(|_| uniform(&mut r, &shape, -3.0, 3.0)).collect();
                let rep = grad_check_inputs(
                    |t, v| {
                        let sum = v.iter().try_fold(None, |acc: Option<Var>, &m| -> Result<Option<Var>> {
                            let l = losses::weighted_bce(t, m, &gt, 5)?;
                            let d = losses::dice_loss(t, m, &gt)?;
                            let term = t.add(l, d)?;
                            Ok(Some(match acc {
                                Some(a) => t.add(a, term)?,
                                None => term,
                            }))
                        })?;
                        Ok(sum.expect("five maps"))
                    },
                    &xs,
                    OP_STEP,
                    None,
                )?;
                Ok(rep.max_rel_error)
            }),
        },
    ]
}

/// The toy-network config used for the end-to-end check.
pub fn network_check_config() -> NetworkConfig {
    NetworkConfig {
        input_size: (32, 32),
        stage_channels: [4, 8, 16, 32],
        memory_capacity: S,
        seed: 11,
        variant: Variant::FULL,
    }
}

/// Full network and loss at B=2, 32×32, on a 32-coordinate subsample.
pub fn network_check(samples: usize) -> Check {
    Check {
        name: "network",
        tolerance: NETWORK_TOLERANCE,
        run: Box::new(move || network_report(samples, BLOCK_STEP).map(|r| r.max_rel_error)),
    }
}

pub fn network_report(samples: usize, step: f64) -> Result<GradCheckReport> {
    let cfg = network_check_config();
    let mut net = Network::<f64>::build(cfg.clone())?;
    let gamma = net.param_names().iter().position(|n| n == "icr.gamma").expect("icr gamma parameter");
    net.params_mut()[gamma] = Tensor::from_f64(&[1], &[0.5])?;
    let mut r = rng("network", 0);
    let (h, w) = cfg.input_size;
    let batch = uniform(&mut r, &[2, 3, h, w], 0.0, 1.0);
    let gt = Tensor::from_fn(&[2, 1, h, w], |i| {
        let (y, x) = ((i / w) % h, i % w);
        ((y as f64 - 14.0).powi(2) + (x as f64 - 17.0).powi(2) < 64.0) as u8 as f64
    });
    let c4 = cfg.bottleneck_channels();
    let mut mem = RegionMemory::new(cfg.memory_capacity)?;
    mem.push_vectors((0..cfg.memory_capacity).map(|_| (0..c4).map(|_| r.gen_range(0.0..0.5)).collect()).collect())?;

    let params: Vec<Tensor<f64>> = net.params().to_vec();
    let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut coords = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut k = r.gen_range(0..total);
        let i = sizes
            .iter()
            .position(|&n| {
                if k < n {
                    true
                } else {
                    k -= n;
                    false
                }
            })
            .expect("index in range");
        coords.push((i, k));
    }
    let rep = grad_check_inputs(
        |t, v| {
            let mut mem = mem.clone();
            let x = t.constant(batch.clone());
            let out = net.forward_with(t, v.to_vec(), x, Some(&mut mem), true)?;
            Ok(total_loss(t, &out, &gt, losses::DEFAULT_WEIGHT_KERNEL)?.0)
        },
        &params,
        step,
        Some(&coords),
    )?;
    Ok(rep)
}

/// A conv whose backward pass is deliberately halved: forward value is
/// exact, gradient is wrong. Used to prove the harness catches bad ops.
pub fn corrupted_conv_check() -> Check {
    Check {
        name: "conv2d",
        tolerance: OP_TOLERANCE,
        run: Box::new(|| {
            over_shapes("conv2d", |r| {
                let (inputs, _) = conv_case(r, 3);
                let f: OpFn = Box::new(|t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                    let frozen = t.detach(y);
                    let diff = t.sub(y, frozen)?;
                    let half = t.mul_scalar(diff, 0.5)?;
                    t.add(frozen, half)
                });
                (inputs, f)
            })
        }),
    }
}

/// Ops, blocks and the network.
pub fn all_checks() -> Vec<Check> {
    let mut v = op_checks();
    v.extend(block_checks());
    v.push(network_check(32));
    v
}
