//! The cross-modal architecture.
//!
//! For every modality `m` there is a variational self-encoder producing
//! `(mu, log_var)` and a sampled representation `z_bar`, a cross-modal
//! encoder that imputes `z_hat` from the other modalities' `z_bar`, and a
//! classification head. The final representation `z` takes `z_bar` on rows
//! where the modality is present and `z_hat` elsewhere; the joint head reads
//! the concatenation of all `z`.
//!
//! Parameters are stored as [`Params<Tensor>`]. Binding them to a tape gives
//! a [`Params<Var>`] with the same layout, so the forward pass is written
//! once against graph handles.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Var};
use crate::datagen::{Batch, Presence};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub modality_dims: Vec<usize>,
    pub n_classes: usize,
    /// Shared representation width `d`.
    #[serde(default = "default_repr_dim")]
    pub repr_dim: usize,
    #[serde(default = "default_senc_hidden")]
    pub senc_hidden: usize,
    /// Bottleneck width of each residual block of the cross-modal encoder.
    #[serde(default = "default_xenc_blocks")]
    pub xenc_blocks: Vec<usize>,
    #[serde(default = "default_dec_hidden")]
    pub dec_hidden: usize,
}

fn default_repr_dim() -> usize {
    8
}
fn default_senc_hidden() -> usize {
    64
}
fn default_xenc_blocks() -> Vec<usize> {
    vec![64, 32, 16]
}
fn default_dec_hidden() -> usize {
    32
}

impl ArchConfig {
    pub fn new(modality_dims: Vec<usize>, n_classes: usize) -> Self {
        ArchConfig {
            modality_dims,
            n_classes,
            repr_dim: default_repr_dim(),
            senc_hidden: default_senc_hidden(),
            xenc_blocks: default_xenc_blocks(),
            dec_hidden: default_dec_hidden(),
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.modality_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_dims.len() < 2 {
            return Err(Error::config(
                "cross-modal imputation needs at least two modalities",
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        let widths = [self.repr_dim, self.senc_hidden, self.dec_hidden];
        if widths.iter().chain(&self.modality_dims).chain(&self.xenc_blocks).any(|&w| w == 0) {
            return Err(Error::config("all layer widths must be positive"));
        }
        Ok(())
    }
}

/// Affine layer `x W + b` with `W: [in, out]` and `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

/// Maps `d_m` to `2d`: the first `d` outputs are `mu`, the rest `log_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfEncoderParams<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub down: Linear<T>,
    pub up: Linear<T>,
}

/// Cascade of residual autoencoder blocks on the `(M - 1) d` wide input,
/// followed by a projection to `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoderParams<T> {
    pub blocks: Vec<ResidualBlock<T>>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityParams<T> {
    pub senc: SelfEncoderParams<T>,
    pub xenc: CrossEncoderParams<T>,
    pub dec: DecoderParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub modalities: Vec<ModalityParams<T>>,
    pub joint: DecoderParams<T>,
}

impl<T> Linear<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<T> Params<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        let modalities = self
            .modalities
            .iter()
            .map(|mp| ModalityParams {
                senc: SelfEncoderParams {
                    hidden: mp.senc.hidden.map(&mut f),
                    out: mp.senc.out.map(&mut f),
                },
                xenc: CrossEncoderParams {
                    blocks: mp
                        .xenc
                        .blocks
                        .iter()
                        .map(|b| ResidualBlock {
                            down: b.down.map(&mut f),
                            up: b.up.map(&mut f),
                        })
                        .collect(),
                    out: mp.xenc.out.map(&mut f),
                },
                dec: DecoderParams {
                    hidden: mp.dec.hidden.map(&mut f),
                    out: mp.dec.out.map(&mut f),
                },
            })
            .collect();
        Params {
            modalities,
            joint: DecoderParams {
                hidden: self.joint.hidden.map(&mut f),
                out: self.joint.out.map(&mut f),
            },
        }
    }

    /// Every leaf with a stable dotted name, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        let mut push = |name: String, t| out.push((name, t));
        for (m, mp) in self.modalities.iter().enumerate() {
            let p = format!("m{}", m + 1);
            mp.senc.hidden.visit(&format!("{p}.senc.hidden"), &mut push);
            mp.senc.out.visit(&format!("{p}.senc.out"), &mut push);
            for (k, b) in mp.xenc.blocks.iter().enumerate() {
                b.down.visit(&format!("{p}.xenc.block{k}.down"), &mut push);
                b.up.visit(&format!("{p}.xenc.block{k}.up"), &mut push);
            }
            mp.xenc.out.visit(&format!("{p}.xenc.out"), &mut push);
            mp.dec.hidden.visit(&format!("{p}.dec.hidden"), &mut push);
            mp.dec.out.visit(&format!("{p}.dec.out"), &mut push);
        }
        self.joint.hidden.visit("joint.dec.hidden", &mut push);
        self.joint.out.visit("joint.dec.out", &mut push);
        out
    }

    pub fn leaves(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable leaves in the same order as [`Params::named`].
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        let mut push = |t| out.push(t);
        for mp in &mut self.modalities {
            mp.senc.hidden.visit_mut(&mut push);
            mp.senc.out.visit_mut(&mut push);
            for b in &mut mp.xenc.blocks {
                b.down.visit_mut(&mut push);
                b.up.visit_mut(&mut push);
            }
            mp.xenc.out.visit_mut(&mut push);
            mp.dec.hidden.visit_mut(&mut push);
            mp.dec.out.visit_mut(&mut push);
        }
        self.joint.hidden.visit_mut(&mut push);
        self.joint.out.visit_mut(&mut push);
        out
    }
}

/// The full parameter set together with the architecture it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub params: Params<Tensor>,
}

fn init_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Linear<Tensor> {
    let std = (1.0 / fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Linear {
        weight: Tensor::from_parts(vec![fan_in, fan_out], w),
        bias: Tensor::zeros(&[fan_out]),
    }
}

impl ModelParams {
    /// Random initialization: weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::derived(seed, Stream::Init, 0);
        let d = arch.repr_dim;
        let m_count = arch.n_modalities();
        let xin = (m_count - 1) * d;
        let mut modalities = Vec::with_capacity(m_count);
        for &dm in &arch.modality_dims {
            let senc = SelfEncoderParams {
                hidden: init_linear(&mut rng, dm, arch.senc_hidden),
                out: init_linear(&mut rng, arch.senc_hidden, 2 * d),
            };
            let blocks = arch
                .xenc_blocks
                .iter()
                .map(|&b| ResidualBlock {
                    down: init_linear(&mut rng, xin, b),
                    up: init_linear(&mut rng, b, xin),
                })
                .collect();
            let xenc = CrossEncoderParams {
                blocks,
                out: init_linear(&mut rng, xin, d),
            };
            let dec = DecoderParams {
                hidden: init_linear(&mut rng, d, arch.dec_hidden),
                out: init_linear(&mut rng, arch.dec_hidden, arch.n_classes),
            };
            modalities.push(ModalityParams { senc, xenc, dec });
        }
        let joint = DecoderParams {
            hidden: init_linear(&mut rng, m_count * d, arch.dec_hidden),
            out: init_linear(&mut rng, arch.dec_hidden, arch.n_classes),
        };
        Ok(ModelParams {
            arch: arch.clone(),
            params: Params { modalities, joint },
        })
    }

    /// The parameter shapes an architecture implies, in leaf order.
    pub fn expected_shapes(arch: &ArchConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let template = ModelParams::init(arch, 0)?;
        Ok(template
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect())
    }

    pub fn bind(&self, tape: &mut Tape) -> Params<Var> {
        // Parameters are finite by construction; `var` only rejects
        // non-finite tensors.
        self.params
            .map(|t| tape.var(t.clone()).expect("parameters are finite"))
    }

    pub fn n_scalars(&self) -> usize {
        self.params.leaves().iter().map(|t| t.len()).sum()
    }
}

fn linear(tape: &mut Tape, l: &Linear<Var>, x: Var) -> Result<Var> {
    let h = tape.matmul(x, l.weight)?;
    tape.add(h, l.bias)
}

/// Self-modal encoder: returns `(mu, log_var)`, each `[batch, d]`, with
/// `log_var` clamped to `[-10, 10]`.
pub fn senc_forward(tape: &mut Tape, p: &SelfEncoderParams<Var>, x: Var) -> Result<(Var, Var)> {
    let in_w = tape.value(p.hidden.weight).rows();
    let (_, xw) = tape.value(x).require_2d("senc_forward")?;
    if xw != in_w {
        return Err(Error::shape(format!(
            "senc_forward: input width {xw}, encoder expects {in_w}"
        )));
    }
    let h = linear(tape, &p.hidden, x)?;
    let h = tape.tanh(h);
    let out = linear(tape, &p.out, h)?;
    let d = tape.value(out).cols() / 2;
    let mu = tape.slice(out, Axis::Cols, 0, d)?;
    let raw = tape.slice(out, Axis::Cols, d, 2 * d)?;
    let log_var = tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX);
    Ok((mu, log_var))
}

/// `z_bar = mu + eps * exp(log_var / 2)`.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_var: Var, eps: Var) -> Result<Var> {
    let (ms, ls, es) = (
        tape.value(mu).shape().to_vec(),
        tape.value(log_var).shape().to_vec(),
        tape.value(eps).shape().to_vec(),
    );
    if ms != ls || ms != es {
        return Err(Error::shape(format!(
            "reparameterize: mu {ms:?}, log_var {ls:?}, eps {es:?}"
        )));
    }
    let half = tape.scale(log_var, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul_elem(eps, std)?;
    tape.add(mu, noise)
}

/// Runs the residual cascade on an already-assembled `[batch, (M-1) d]`
/// input. Each block reads the sum of its predecessor's input and output.
pub fn xenc_apply(tape: &mut Tape, p: &CrossEncoderParams<Var>, input: Var) -> Result<Var> {
    let mut x_in = input;
    let mut x_out: Option<Var> = None;
    for block in &p.blocks {
        if let Some(prev) = x_out {
            x_in = tape.add(x_in, prev)?;
        }
        let h = linear(tape, &block.down, x_in)?;
        let h = tape.tanh(h);
        x_out = Some(linear(tape, &block.up, h)?);
    }
    let last = x_out.unwrap_or(input);
    linear(tape, &p.out, last)
}

/// Cross-modal imputation of modality `target`: the other modalities'
/// `z_bar` in fixed modality order, with rows where a modality is absent
/// replaced by zeros.
pub fn xenc_forward(
    tape: &mut Tape,
    p: &CrossEncoderParams<Var>,
    z_bars: &[Var],
    presence: &Presence,
    target: usize,
) -> Result<Var> {
    let input = xenc_input(tape, z_bars, presence, target)?;
    xenc_apply(tape, p, input)
}

fn xenc_input(tape: &mut Tape, z_bars: &[Var], presence: &Presence, target: usize) -> Result<Var> {
    let mut slots = Vec::with_capacity(z_bars.len() - 1);
    for (m, &zb) in z_bars.iter().enumerate() {
        if m == target {
            continue;
        }
        let col = presence.column(m);
        let slot = if col.iter().all(|&c| c) {
            zb
        } else {
            let zeros = tape.var(Tensor::zeros(tape.value(zb).shape()))?;
            tape.where_rows(&col, zb, zeros)?
        };
        slots.push(slot);
    }
    tape.concat(&slots, Axis::Cols)
}

/// Row `n` is `z_bar` where the modality is present and `z_hat` otherwise.
pub fn assemble_representation(tape: &mut Tape, z_bar: Var, z_hat: Var, present: &[bool]) -> Result<Var> {
    tape.where_rows(present, z_bar, z_hat)
}

pub fn decoder_forward(tape: &mut Tape, p: &DecoderParams<Var>, z: Var) -> Result<Var> {
    let h = linear(tape, &p.hidden, z)?;
    let h = tape.tanh(h);
    linear(tape, &p.out, h)
}

/// Where the reparameterization noise comes from.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    /// `eps = 0`: deterministic, `z_bar = mu`. Used for evaluation.
    Zero,
    /// Standard normal noise that depends only on `(seed, step)`.
    Seeded { seed: u64, step: u64 },
    /// Explicit per-modality noise tensors, `[batch, d]` each.
    Fixed(Vec<Tensor>),
}

impl NoiseSource {
    fn draw(&self, batch: usize, d: usize, modalities: usize) -> Result<Vec<Tensor>> {
        match self {
            NoiseSource::Zero => Ok(vec![Tensor::zeros(&[batch, d]); modalities]),
            NoiseSource::Seeded { seed, step } => {
                let mut rng = rng::derived(*seed, Stream::Noise, *step);
                Ok((0..modalities)
                    .map(|_| {
                        let data = (0..batch * d)
                            .map(|_| rng.sample::<f64, _>(StandardNormal))
                            .collect();
                        Tensor::from_parts(vec![batch, d], data)
                    })
                    .collect())
            }
            NoiseSource::Fixed(ts) => {
                if ts.len() != modalities || ts.iter().any(|t| t.shape() != [batch, d]) {
                    return Err(Error::shape(format!(
                        "fixed noise must be {modalities} tensors of shape [{batch}, {d}]"
                    )));
                }
                Ok(ts.clone())
            }
        }
    }
}

/// All intermediate nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub mu: Vec<Var>,
    pub log_var: Vec<Var>,
    pub z_bar: Vec<Var>,
    pub z_hat: Vec<Var>,
    pub z: Vec<Var>,
    pub logits: Vec<Var>,
    pub joint_logits: Var,
    /// `available[m]`: batch rows where modality `m` is present. The KL term
    /// of modality `m` only counts these rows.
    pub available: Vec<Vec<usize>>,
    pub presence: Presence,
}

/// Full forward pass over a batch using `presence` for routing.
pub fn forward_all(
    tape: &mut Tape,
    params: &Params<Var>,
    arch: &ArchConfig,
    features: &[Tensor],
    presence: &Presence,
    noise: &NoiseSource,
) -> Result<ForwardOutputs> {
    let m_count = arch.n_modalities();
    if features.len() != m_count || params.modalities.len() != m_count {
        return Err(Error::shape(format!(
            "forward_all: {} feature matrices for {m_count} modalities",
            features.len()
        )));
    }
    let batch = features[0].rows();
    if features.iter().any(|f| f.rows() != batch) || presence.n_samples() != batch {
        return Err(Error::shape("forward_all: batch sizes disagree"));
    }
    if presence.n_modalities() != m_count {
        return Err(Error::shape("forward_all: presence has the wrong width"));
    }
    let d = arch.repr_dim;
    let eps = noise.draw(batch, d, m_count)?;

    let mut mu = Vec::with_capacity(m_count);
    let mut log_var = Vec::with_capacity(m_count);
    let mut z_bar = Vec::with_capacity(m_count);
    for (m, mp) in params.modalities.iter().enumerate() {
        let x = tape.var(features[m].clone())?;
        let (mu_m, lv_m) = senc_forward(tape, &mp.senc, x)?;
        let e = tape.var(eps[m].clone())?;
        let zb = reparameterize(tape, mu_m, lv_m, e)?;
        mu.push(mu_m);
        log_var.push(lv_m);
        z_bar.push(zb);
    }

    let mut z_hat = Vec::with_capacity(m_count);
    let mut z = Vec::with_capacity(m_count);
    let mut logits = Vec::with_capacity(m_count);
    for (m, mp) in params.modalities.iter().enumerate() {
        let zh = xenc_forward(tape, &mp.xenc, &z_bar, presence, m)?;
        let zm = assemble_representation(tape, z_bar[m], zh, &presence.column(m))?;
        logits.push(decoder_forward(tape, &mp.dec, zm)?);
        z_hat.push(zh);
        z.push(zm);
    }
    let joint_z = tape.concat(&z, Axis::Cols)?;
    let joint_logits = decoder_forward(tape, &params.joint, joint_z)?;

    let available = (0..m_count)
        .map(|m| (0..batch).filter(|&n| presence.get(n, m)).collect())
        .collect();
    Ok(ForwardOutputs {
        mu,
        log_var,
        z_bar,
        z_hat,
        z,
        logits,
        joint_logits,
        available,
        presence: presence.clone(),
    })
}

/// Convenience: forward a [`Batch`] with its own presence rows.
pub fn forward_batch(
    tape: &mut Tape,
    params: &Params<Var>,
    arch: &ArchConfig,
    batch: &Batch,
    noise: &NoiseSource,
) -> Result<ForwardOutputs> {
    forward_all(tape, params, arch, &batch.features, &batch.presence, noise)
}

/// Deterministic joint-head logits with `eps = 0`.
pub fn predict_logits(model: &ModelParams, features: &[Tensor], presence: &Presence) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = forward_all(&mut tape, &bound, &model.arch, features, presence, &NoiseSource::Zero)?;
    Ok(tape.value(out.joint_logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            modality_dims: vec![3, 4, 2],
            n_classes: 3,
            repr_dim: 4,
            senc_hidden: 5,
            xenc_blocks: vec![6, 3],
            dec_hidden: 4,
        }
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rng::derived(seed, Stream::Generator, 99);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn mixed_presence() -> Presence {
        Presence::new(
            3,
            vec![
                true, true, true, //
                true, false, true, //
                false, true, false, //
                false, false, true,
            ],
        )
        .unwrap()
    }

    fn features(arch: &ArchConfig, batch: usize) -> Vec<Tensor> {
        arch.modality_dims
            .iter()
            .enumerate()
            .map(|(m, &d)| random(&[batch, d], m as u64))
            .collect()
    }

    #[test]
    fn zero_encoder_outputs_standard_gaussian() {
        let arch = small_arch();
        let mut model = ModelParams::init(&arch, 1).unwrap();
        for t in model.params.modalities[0].senc.out.weight.data_mut() {
            *t = 0.0;
        }
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let x = tape.var(random(&[5, 3], 3)).unwrap();
        let (mu, lv) = senc_forward(&mut tape, &p.modalities[0].senc, x).unwrap();
        assert_eq!(tape.value(mu), &Tensor::zeros(&[5, 4]));
        assert_eq!(tape.value(lv), &Tensor::zeros(&[5, 4]));

        let wrong = tape.var(random(&[5, 2], 3)).unwrap();
        assert!(matches!(
            senc_forward(&mut tape, &p.modalities[0].senc, wrong),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn reparameterization_by_hand() {
        let mut tape = Tape::new();
        let mu = tape.var(random(&[2, 3], 1)).unwrap();
        let lv = tape.var(Tensor::zeros(&[2, 3])).unwrap();
        let zero = tape.var(Tensor::zeros(&[2, 3])).unwrap();
        let z = reparameterize(&mut tape, mu, lv, zero).unwrap();
        assert_eq!(tape.value(z), tape.value(mu));

        let mut e1 = Tensor::zeros(&[2, 3]);
        e1.data_mut()[0] = 1.0;
        let e1 = tape.var(e1).unwrap();
        let z = reparameterize(&mut tape, mu, lv, e1).unwrap();
        let mut expected = tape.value(mu).clone();
        expected.data_mut()[0] += 1.0;
        assert_eq!(tape.value(z), &expected);
    }

    #[test]
    fn reparameterization_gradients() {
        let eps = random(&[3, 2], 5);
        let err = check_gradients(
            |tape, v| {
                let e = tape.var(eps.clone())?;
                let z = reparameterize(tape, v[0], v[1], e)?;
                let sq = tape.mul_elem(z, z)?;
                Ok(tape.sum(sq))
            },
            &[random(&[3, 2], 6), random(&[3, 2], 7)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn routing_matches_row_loop() {
        let arch = small_arch();
        let model = ModelParams::init(&arch, 2).unwrap();
        let presence = mixed_presence();
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let noise = NoiseSource::Seeded { seed: 3, step: 0 };
        let out = forward_all(&mut tape, &p, &arch, &features(&arch, 4), &presence, &noise).unwrap();
        for m in 0..3 {
            let (z, zb, zh) = (tape.value(out.z[m]), tape.value(out.z_bar[m]), tape.value(out.z_hat[m]));
            for n in 0..4 {
                let expect = if presence.get(n, m) { zb.row(n) } else { zh.row(n) };
                assert_eq!(z.row(n), expect);
            }
        }
        assert_eq!(tape.value(out.joint_logits).shape(), &[4, 3]);
        assert_eq!(out.available[1], vec![0, 2]);
    }

    #[test]
    fn fully_present_batch_uses_self_encodings() {
        let arch = small_arch();
        let model = ModelParams::init(&arch, 2).unwrap();
        let presence = Presence::all_present(4, 3);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let out = forward_all(&mut tape, &p, &arch, &features(&arch, 4), &presence, &NoiseSource::Zero)
            .unwrap();
        for m in 0..3 {
            assert_eq!(tape.value(out.z[m]), tape.value(out.z_bar[m]));
            assert_eq!(tape.value(out.logits[m]).shape(), &[4, 3]);
        }
    }

    #[test]
    fn joint_decoder_width_is_m_times_d() {
        let arch = ArchConfig {
            modality_dims: vec![5, 5, 5],
            n_classes: 4,
            repr_dim: 8,
            ..ArchConfig::new(vec![5, 5, 5], 4)
        };
        let model = ModelParams::init(&arch, 0).unwrap();
        assert_eq!(model.params.joint.hidden.weight.shape(), &[24, 32]);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let out = forward_all(
            &mut tape,
            &p,
            &arch,
            &features(&arch, 4),
            &Presence::all_present(4, 3),
            &NoiseSource::Zero,
        )
        .unwrap();
        let joint_in = tape.concat(&out.z, Axis::Cols).unwrap();
        assert_eq!(tape.value(joint_in).shape(), &[4, 24]);
    }

    #[test]
    fn zero_blocks_reduce_cross_encoder_to_output_bias() {
        let arch = small_arch();
        let mut model = ModelParams::init(&arch, 4).unwrap();
        let xenc = &mut model.params.modalities[1].xenc;
        for b in &mut xenc.blocks {
            for t in [&mut b.down.weight, &mut b.down.bias, &mut b.up.weight, &mut b.up.bias] {
                t.data_mut().fill(0.0);
            }
        }
        xenc.out.bias = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let zb: Vec<Var> = (0..3)
            .map(|m| tape.var(random(&[2, 4], 10 + m)).unwrap())
            .collect();
        let zh = xenc_forward(&mut tape, &p.modalities[1].xenc, &zb, &Presence::all_present(2, 3), 1)
            .unwrap();
        for n in 0..2 {
            assert_eq!(tape.value(zh).row(n), &[0.1, -0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn cross_encoder_degenerate_and_order_sensitive() {
        let arch = small_arch();
        let model = ModelParams::init(&arch, 5).unwrap();
        let run = |zbars: &[Tensor], presence: &Presence| {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape);
            let vars: Vec<Var> = zbars.iter().map(|t| tape.var(t.clone()).unwrap()).collect();
            let zh = xenc_forward(&mut tape, &p.modalities[0].xenc, &vars, presence, 0).unwrap();
            tape.value(zh).clone()
        };
        let zb = vec![random(&[1, 4], 1), random(&[1, 4], 2), random(&[1, 4], 3)];
        let only_self = Presence::new(3, vec![true, false, false]).unwrap();
        let degenerate = run(&zb, &only_self);
        assert!(degenerate.is_finite());
        let zeros = vec![Tensor::zeros(&[1, 4]); 3];
        assert_eq!(degenerate, run(&zeros, &Presence::all_present(1, 3)));

        let all = Presence::all_present(1, 3);
        assert_eq!(run(&zb, &all), run(&zb, &all));
        let swapped = vec![zb[0].clone(), zb[2].clone(), zb[1].clone()];
        assert_ne!(run(&zb, &all), run(&swapped, &all));
    }

    #[test]
    fn absent_features_do_not_reach_outputs() {
        let arch = small_arch();
        let model = ModelParams::init(&arch, 6).unwrap();
        let presence = mixed_presence();
        let feats = features(&arch, 4);
        let mut perturbed = feats.clone();
        for m in 0..3 {
            for n in 0..4 {
                if !presence.get(n, m) {
                    let c = perturbed[m].cols();
                    for v in &mut perturbed[m].data_mut()[n * c..(n + 1) * c] {
                        *v += 7.5;
                    }
                }
            }
        }
        let a = predict_logits(&model, &feats, &presence).unwrap();
        let b = predict_logits(&model, &perturbed, &presence).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_noise_is_shape_checked() {
        let arch = small_arch();
        let model = ModelParams::init(&arch, 0).unwrap();
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let noise = NoiseSource::Fixed(vec![Tensor::zeros(&[4, 3]); 3]);
        let res = forward_all(&mut tape, &p, &arch, &features(&arch, 4), &mixed_presence(), &noise);
        assert!(matches!(res, Err(Error::Shape(_))));
    }
}
