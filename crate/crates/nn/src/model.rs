//! The translation network: per-layer J/Y mapping networks, the dual-path
//! transformer block, transform-average-concatenate fusion across sampling
//! points, residual connections and order upscaling.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shtrans_core::dataset::TrainingExample;
use shtrans_core::special::{coeff_count, SphericalCoord};
use shtrans_core::{Error, Result, ShCoeffSet, Wavenumber};

use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Graph, Tensor, Var};

/// Width of an order-`n` coefficient row once real and imaginary parts are
/// laid side by side.
pub fn packed_width(n: u32) -> usize {
    2 * coeff_count(n)
}

/// `K × 2(n+1)²` row-major matrix: row `k` holds the real parts of frequency
/// bin `k` followed by the imaginary parts.
pub fn pack(set: &ShCoeffSet) -> Tensor {
    let c = set.width();
    let mut values = Vec::with_capacity(set.k_bins() * 2 * c);
    for k in 0..set.k_bins() {
        let row = set.row(k);
        values.extend(row.iter().map(|z| z.re));
        values.extend(row.iter().map(|z| z.im));
    }
    Tensor::new(set.k_bins(), 2 * c, values)
}

pub fn unpack(t: &Tensor, n_max: u32, freqs: Vec<f64>, origin: [f64; 3]) -> Result<ShCoeffSet> {
    let c = coeff_count(n_max);
    if t.cols != 2 * c || t.rows != freqs.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot unpack {}x{} as {} bins of order {n_max}",
            t.rows,
            t.cols,
            freqs.len()
        )));
    }
    let data = t
        .values
        .chunks_exact(2 * c)
        .flat_map(|row| (0..c).map(move |i| Complex64::new(row[i], row[c + i])))
        .collect();
    ShCoeffSet::from_data(origin, n_max, freqs, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub order_in: u32,
    pub order_out: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_in: u32,
    pub n_out: u32,
    pub k_bins: usize,
    pub layers: Vec<LayerSpec>,
    pub j_hidden: usize,
    pub y_hidden: usize,
    pub tac_hidden: usize,
    /// Encoder feed-forward width as a multiple of its input width.
    pub ff_mult: usize,
}

impl ModelConfig {
    /// `upscaling` layers raising the order from `n_in` to `n_out` in near
    /// equal steps, followed by one order-preserving output layer.
    pub fn ladder(n_in: u32, n_out: u32, k_bins: usize, upscaling: usize) -> Result<Self> {
        if upscaling == 0 && n_in != n_out {
            return Err(Error::Config("at least one upscaling layer is needed when n_out > n_in".into()));
        }
        if n_out < n_in {
            return Err(Error::Config(format!("n_out ({n_out}) below n_in ({n_in})")));
        }
        let step = |i: usize| n_in + ((i as f64 * (n_out - n_in) as f64 / upscaling as f64).round() as u32);
        let mut layers: Vec<LayerSpec> = (0..upscaling)
            .map(|i| LayerSpec {
                order_in: step(i),
                order_out: step(i + 1),
            })
            .collect();
        layers.push(LayerSpec {
            order_in: n_out,
            order_out: n_out,
        });
        let cfg = Self {
            n_in,
            n_out,
            k_bins,
            layers,
            j_hidden: 16,
            y_hidden: 32,
            tac_hidden: 64,
            ff_mult: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_bins == 0 {
            return bad("k_bins must be positive".into());
        }
        if self.j_hidden == 0 || self.y_hidden == 0 || self.tac_hidden == 0 || self.ff_mult == 0 {
            return bad("hidden widths must be positive".into());
        }
        let Some(first) = self.layers.first() else {
            return bad("model needs at least one layer".into());
        };
        if first.order_in != self.n_in {
            return bad(format!("first layer starts at order {}, n_in is {}", first.order_in, self.n_in));
        }
        for w in self.layers.windows(2) {
            if w[0].order_out != w[1].order_in {
                return bad(format!("layer orders do not chain: {} then {}", w[0].order_out, w[1].order_in));
            }
        }
        for l in &self.layers {
            if l.order_out < l.order_in {
                return bad(format!("layer lowers the order from {} to {}", l.order_in, l.order_out));
            }
        }
        let last = self.layers.last().expect("non-empty");
        if last.order_in != last.order_out || last.order_out != self.n_out {
            return bad(format!("last layer must keep order n_out = {}", self.n_out));
        }
        Ok(())
    }

    /// Attention heads of a layer working at `order`.
    pub fn heads(order: u32) -> usize {
        order as usize + 1
    }
}

/// Multi-head self-attention, feed-forward block and trailing FC map.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub heads: usize,
    pub in_width: usize,
    pub inner: usize,
    pub out_width: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    fc: ParamId,
    bfc: ParamId,
}

pub struct EncoderOutput {
    /// Output of attention + feed-forward, same shape as the input.
    pub hidden: Var,
    /// After the trailing FC map.
    pub out: Var,
    /// One `L × L` weight matrix per head.
    pub weights: Vec<Var>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, prefix: &str, in_width: usize, out_width: usize, heads: usize, ff_mult: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads >= 1, "attention needs at least one head");
        let inner = heads * in_width.div_ceil(heads);
        let ff = ff_mult * in_width;
        let mut w = |name: &str, r: usize, c: usize| store.add(format!("{prefix}.{name}"), r, c, Init::FanIn, rng);
        let (wq, wk, wv, wo) = (w("wq", in_width, inner), w("wk", in_width, inner), w("wv", in_width, inner), w("wo", inner, in_width));
        let (w1, w2, fc) = (w("ff1", in_width, ff), w("ff2", ff, in_width), w("fc", in_width, out_width));
        let mut z = |name: &str, c: usize| store.add(format!("{prefix}.{name}"), 1, c, Init::Zeros, rng);
        Self {
            heads,
            in_width,
            inner,
            out_width,
            wq,
            bq: z("bq", inner),
            wk,
            bk: z("bk", inner),
            wv,
            bv: z("bv", inner),
            wo,
            bo: z("bo", in_width),
            w1,
            b1: z("bff1", ff),
            w2,
            b2: z("bff2", in_width),
            fc,
            bfc: z("bfc", out_width),
        }
    }

    fn affine(g: &mut Graph, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = g.param(store, w);
        let b = g.param(store, b);
        g.affine(x, w, b)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<EncoderOutput> {
        let (l, f) = g.shape(x);
        if f != self.in_width || l == 0 {
            return Err(Error::ShapeMismatch(format!("encoder expects L x {}, got {l}x{f}", self.in_width)));
        }
        let q = Self::affine(g, store, x, self.wq, self.bq);
        let k = Self::affine(g, store, x, self.wk, self.bk);
        let v = Self::affine(g, store, x, self.wv, self.bv);
        let dh = self.inner / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let w = if g.is_linear() {
                g.input(Tensor::new(l, l, vec![1.0 / l as f64; l * l]))
            } else {
                let s = g.matmul_bt(qh, kh);
                let s = g.scale(s, 1.0 / (dh as f64).sqrt());
                g.softmax_rows(s)
            };
            weights.push(w);
            outs.push(g.matmul(w, vh));
        }
        let cat = g.concat_cols(&outs);
        let att = Self::affine(g, store, cat, self.wo, self.bo);
        let h1 = Self::affine(g, store, att, self.w1, self.b1);
        let h1 = g.relu(h1);
        let hidden = Self::affine(g, store, h1, self.w2, self.b2);
        let out = Self::affine(g, store, hidden, self.fc, self.bfc);
        Ok(EncoderOutput { hidden, out, weights })
    }
}

/// Two-layer perceptron standing in for the radial functions: `kr` per bin
/// in, `n + 1` values per bin out.
#[derive(Debug, Clone)]
pub struct JNet {
    pub order: u32,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl JNet {
    pub fn new(store: &mut ParamStore, prefix: &str, order: u32, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            order,
            w1: store.add(format!("{prefix}.w1"), 1, hidden, Init::FanIn, rng),
            b1: store.add(format!("{prefix}.b1"), 1, hidden, Init::Zeros, rng),
            w2: store.add(format!("{prefix}.w2"), hidden, order as usize + 1, Init::FanIn, rng),
            b2: store.add(format!("{prefix}.b2"), 1, order as usize + 1, Init::Zeros, rng),
        }
    }

    /// `K × (n+1)` output for the `K` values of `kr`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, kr: &[f64]) -> Var {
        let x = g.input(Tensor::new(kr.len(), 1, kr.to_vec()));
        let h = Encoder::affine(g, store, x, self.w1, self.b1);
        let h = g.relu(h);
        Encoder::affine(g, store, h, self.w2, self.b2)
    }
}

/// Perceptron standing in for the angular functions: direction features in,
/// one value per coefficient out.
#[derive(Debug, Clone)]
pub struct YNet {
    pub order: u32,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl YNet {
    pub fn new(store: &mut ParamStore, prefix: &str, order: u32, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let c = coeff_count(order);
        Self {
            order,
            w1: store.add(format!("{prefix}.w1"), 4, hidden, Init::FanIn, rng),
            b1: store.add(format!("{prefix}.b1"), 1, hidden, Init::Zeros, rng),
            w2: store.add(format!("{prefix}.w2"), hidden, c, Init::FanIn, rng),
            b2: store.add(format!("{prefix}.b2"), 1, c, Init::Zeros, rng),
        }
    }

    /// `(n+1)² × 1` output for the direction `(θ, φ)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, theta: f64, phi: f64) -> Var {
        let x = g.input(Tensor::new(1, 4, vec![theta.cos(), theta.sin(), phi.cos(), phi.sin()]));
        let h = Encoder::affine(g, store, x, self.w1, self.b1);
        let h = g.relu(h);
        let y = Encoder::affine(g, store, h, self.w2, self.b2);
        g.transpose(y)
    }
}

/// Dual-path block: attention across frequency bins (conditioned on J), then
/// across coefficient rows (conditioned on Y).
#[derive(Debug, Clone)]
pub struct Dpt {
    pub order: u32,
    pub k_bins: usize,
    pub path1: Encoder,
    pub path2: Encoder,
}

impl Dpt {
    pub fn new(store: &mut ParamStore, prefix: &str, order: u32, k_bins: usize, ff_mult: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = packed_width(order);
        let h = ModelConfig::heads(order);
        let path1 = Encoder::new(store, &format!("{prefix}.path1"), d + order as usize + 1, d, h, ff_mult, rng);
        let path2 = Encoder::new(store, &format!("{prefix}.path2"), k_bins + 1, k_bins, h, ff_mult, rng);
        Self {
            order,
            k_bins,
            path1,
            path2,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, j: Var, y: Var) -> Result<Var> {
        let d = packed_width(self.order);
        let n1 = self.order as usize + 1;
        if g.shape(x) != (self.k_bins, d) || g.shape(j) != (self.k_bins, n1) || g.shape(y) != (d / 2, 1) {
            return Err(Error::ShapeMismatch(format!(
                "dual-path block of order {} got coefficients {:?}, J {:?}, Y {:?}",
                self.order,
                g.shape(x),
                g.shape(j),
                g.shape(y)
            )));
        }
        let z = g.concat_cols(&[x, j]);
        let p1 = self.path1.forward(g, store, z)?.out;
        let t = g.transpose(p1);
        // real and imaginary rows of a coefficient share its Y value
        let yb = g.concat_rows(&[y, y]);
        let z2 = g.concat_cols(&[t, yb]);
        let p2 = self.path2.forward(g, store, z2)?.out;
        Ok(g.transpose(p2))
    }
}

/// Transform-average-concatenate fusion across sampling points.
#[derive(Debug, Clone)]
pub struct Tac {
    pub width: usize,
    pub hidden: usize,
    wt: ParamId,
    bt: ParamId,
    alpha: ParamId,
    wc: ParamId,
    bc: ParamId,
}

impl Tac {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            width,
            hidden,
            wt: store.add(format!("{prefix}.transform.w"), width, hidden, Init::FanIn, rng),
            bt: store.add(format!("{prefix}.transform.b"), 1, hidden, Init::Zeros, rng),
            alpha: store.add(format!("{prefix}.prelu"), 1, 1, Init::Const(0.25), rng),
            wc: store.add(format!("{prefix}.concat.w"), 2 * hidden, width, Init::FanIn, rng),
            bc: store.add(format!("{prefix}.concat.b"), 1, width, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, xs: &[Var]) -> Result<Vec<Var>> {
        if xs.is_empty() {
            return Err(Error::ShapeMismatch("fusion over zero sampling points".into()));
        }
        let shape = g.shape(xs[0]);
        if shape.1 != self.width || xs.iter().any(|&x| g.shape(x) != shape) {
            return Err(Error::ShapeMismatch(format!("fusion inputs must all be K x {}", self.width)));
        }
        let alpha = g.param(store, self.alpha);
        let transformed: Vec<Var> = xs
            .iter()
            .map(|&x| {
                let t = Encoder::affine(g, store, x, self.wt, self.bt);
                g.prelu(t, alpha)
            })
            .collect();
        let mean = g.mean(&transformed);
        Ok(transformed
            .iter()
            .map(|&t| {
                let c = g.concat_cols(&[t, mean]);
                Encoder::affine(g, store, c, self.wc, self.bc)
            })
            .collect())
    }
}

/// Per-row affine map from order `n` to a higher order.
#[derive(Debug, Clone)]
pub struct Upscale {
    pub from: u32,
    pub to: u32,
    w: ParamId,
    b: ParamId,
}

impl Upscale {
    pub fn new(store: &mut ParamStore, prefix: &str, from: u32, to: u32, rng: &mut ChaCha8Rng) -> Self {
        Self {
            from,
            to,
            w: store.add(format!("{prefix}.w"), packed_width(from), packed_width(to), Init::FanIn, rng),
            b: store.add(format!("{prefix}.b"), 1, packed_width(to), Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.shape(x).1 != packed_width(self.from) {
            return Err(Error::ShapeMismatch(format!("upscaling expects width {}, got {}", packed_width(self.from), g.shape(x).1)));
        }
        Ok(Encoder::affine(g, store, x, self.w, self.b))
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub j: JNet,
    pub y: YNet,
    pub dpt: Dpt,
    pub tac: Tac,
    pub upscale: Option<Upscale>,
}

/// Network input for one sampling point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointInput {
    /// Packed local coefficients, `K × 2(n_in+1)²`.
    pub coeffs: Tensor,
    /// `k·r` per frequency bin, r being the distance to the global origin.
    pub kr: Vec<f64>,
    pub theta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub points: Vec<PointInput>,
}

impl ModelInput {
    pub fn from_example(ex: &TrainingExample) -> Result<Self> {
        let ks = ex
            .freqs()
            .iter()
            .map(|&f| Wavenumber::from_frequency(f).map(|w| w.k))
            .collect::<Result<Vec<f64>>>()?;
        let points = ex
            .inputs
            .iter()
            .zip(&ex.geometry)
            .map(|(set, p)| {
                let s = SphericalCoord::from_cartesian(*p);
                PointInput {
                    coeffs: pack(set),
                    kr: ks.iter().map(|k| k * s.r).collect(),
                    theta: s.theta,
                    phi: s.phi,
                }
            })
            .collect();
        Ok(Self { points })
    }
}

/// An example converted once into network tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub input: ModelInput,
    pub target: Tensor,
    pub freqs: Vec<f64>,
}

impl PreparedExample {
    pub fn new(ex: &TrainingExample) -> Result<Self> {
        Ok(Self {
            input: ModelInput::from_example(ex)?,
            target: pack(&ex.target),
            freqs: ex.freqs().to_vec(),
        })
    }

    pub fn q(&self) -> usize {
        self.input.points.len()
    }
}

/// Shapes recorded during a forward pass, in evaluation order.
pub type ShapeTrace = Vec<(String, (usize, usize))>;

#[derive(Debug, Clone)]
pub struct TtNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layers: Vec<Layer>,
}

impl TtNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let last = config.layers.len() - 1;
        let layers = config
            .layers
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let p = format!("layer{i}");
                let n = spec.order_in;
                Layer {
                    spec,
                    j: JNet::new(&mut params, &format!("{p}.j"), n, config.j_hidden, &mut rng),
                    y: YNet::new(&mut params, &format!("{p}.y"), n, config.y_hidden, &mut rng),
                    dpt: Dpt::new(&mut params, &format!("{p}.dpt"), n, config.k_bins, config.ff_mult, &mut rng),
                    tac: Tac::new(&mut params, &format!("{p}.tac"), packed_width(n), config.tac_hidden, &mut rng),
                    upscale: (i != last).then(|| Upscale::new(&mut params, &format!("{p}.upscale"), n, spec.order_out, &mut rng)),
                }
            })
            .collect();
        Ok(Self { config, params, layers })
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let d = packed_width(self.config.n_in);
        if input.points.is_empty() {
            return Err(Error::ShapeMismatch("example has no sampling points".into()));
        }
        for p in &input.points {
            if p.coeffs.shape() != (self.config.k_bins, d) || p.kr.len() != self.config.k_bins {
                return Err(Error::ShapeMismatch(format!(
                    "model expects {} bins of order {} per point, got {:?}",
                    self.config.k_bins,
                    self.config.n_in,
                    p.coeffs.shape()
                )));
            }
        }
        Ok(())
    }

    /// `K × 2(n_out+1)²` output for one example.
    pub fn forward(&self, g: &mut Graph, input: &ModelInput) -> Result<Var> {
        self.forward_traced(g, input, None)
    }

    pub fn forward_traced(&self, g: &mut Graph, input: &ModelInput, mut trace: Option<&mut ShapeTrace>) -> Result<Var> {
        self.check_input(input)?;
        let store = &self.params;
        let mut record = |g: &Graph, name: String, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name, g.shape(v)));
            }
        };
        let mut xs: Vec<Var> = input.points.iter().map(|p| g.input(p.coeffs.clone())).collect();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut ds = Vec::with_capacity(xs.len());
            for (p, &x) in input.points.iter().zip(&xs) {
                let j = layer.j.forward(g, store, &p.kr);
                let y = layer.y.forward(g, store, p.theta, p.phi);
                let d = layer.dpt.forward(g, store, x, j, y)?;
                record(g, format!("layer{li}.j"), j);
                record(g, format!("layer{li}.y"), y);
                record(g, format!("layer{li}.dpt"), d);
                ds.push(d);
            }
            let fused = layer.tac.forward(g, store, &ds)?;
            for &t in &fused {
                record(g, format!("layer{li}.tac"), t);
            }
            match &layer.upscale {
                Some(up) => {
                    xs = fused
                        .iter()
                        .zip(&xs)
                        .map(|(&t, &x)| {
                            let r = g.add(t, x);
                            up.forward(g, store, r)
                        })
                        .collect::<Result<_>>()?;
                    for &x in &xs {
                        record(g, format!("layer{li}.upscale"), x);
                    }
                }
                None => {
                    let out = g.mean(&fused);
                    record(g, "output".into(), out);
                    return Ok(out);
                }
            }
        }
        unreachable!("validated configs end with an order-preserving layer")
    }

    /// Global coefficients predicted for `ex`, in the example's normalised units.
    pub fn predict(&self, ex: &TrainingExample) -> Result<ShCoeffSet> {
        let input = ModelInput::from_example(ex)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &input)?;
        unpack(g.value(out), self.config.n_out, ex.freqs().to_vec(), [0.0; 3])
    }

    pub fn loss(&self, ex: &PreparedExample) -> Result<f64> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &ex.input)?;
        self.check_target(&g, out, ex)?;
        let l = g.mse(out, &ex.target.values);
        Ok(g.value(l).values[0])
    }

    fn check_target(&self, g: &Graph, out: Var, ex: &PreparedExample) -> Result<()> {
        if g.shape(out) != ex.target.shape() {
            return Err(Error::ShapeMismatch(format!("target is {:?}, model output is {:?}", ex.target.shape(), g.shape(out))));
        }
        Ok(())
    }

    /// MSE loss of one example and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, ex: &PreparedExample, linear: bool) -> Result<(f64, Vec<f64>)> {
        let mut g = if linear { Graph::linear() } else { Graph::new() };
        let out = self.forward(&mut g, &ex.input)?;
        self.check_target(&g, out, ex)?;
        let l = g.mse(out, &ex.target.values);
        Ok((g.value(l).values[0], g.backward(l, self.params.len())))
    }
}

/// Shapes the forward pass of `config` produces for `q` sampling points,
/// computed from the configuration alone.
pub fn dry_run_shapes(config: &ModelConfig, q: usize) -> Result<ShapeTrace> {
    config.validate()?;
    let k = config.k_bins;
    let mut trace = Vec::new();
    let last = config.layers.len() - 1;
    for (li, l) in config.layers.iter().enumerate() {
        let n = l.order_in;
        for _ in 0..q {
            trace.push((format!("layer{li}.j"), (k, n as usize + 1)));
            trace.push((format!("layer{li}.y"), (coeff_count(n), 1)));
            trace.push((format!("layer{li}.dpt"), (k, packed_width(n))));
        }
        for _ in 0..q {
            trace.push((format!("layer{li}.tac"), (k, packed_width(n))));
        }
        if li == last {
            trace.push(("output".into(), (k, packed_width(n))));
        } else {
            for _ in 0..q {
                trace.push((format!("layer{li}.upscale"), (k, packed_width(l.order_out))));
            }
        }
    }
    Ok(trace)
}
