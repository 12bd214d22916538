use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GateError, Result};
use crate::io::{put_f32, put_i32, read_file, to_i32, write_file, ByteReader};

const PARAMS_MAGIC: &[u8; 4] = b"GTTW";
const PARAMS_VERSION: i32 = 1;

/// Every dimension of the two towers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    /// Raw vector dimension; input of the query tower and of the attention
    /// queries.
    pub d_p: usize,
    /// Topology feature dimension.
    pub d_u: usize,
    /// Per-head key/query/value width.
    pub d_k: usize,
    /// Number of attention heads.
    pub heads: usize,
    /// Fusion embedding width.
    pub d_f: usize,
    pub hub_hidden: Vec<usize>,
    pub query_hidden: Vec<usize>,
    /// Shared output width of both towers.
    pub latent: usize,
}

impl ModelShape {
    /// Defaults for a given raw dimension and topology width.
    pub fn with_defaults(d_p: usize, d_u: usize) -> Self {
        Self {
            d_p,
            d_u,
            d_k: 32,
            heads: 4,
            d_f: 128,
            hub_hidden: vec![256, 256],
            query_hidden: vec![256, 256],
            latent: 128,
        }
    }

    /// The hub tower reads the raw hub vector next to its fusion embedding.
    pub fn hub_input(&self) -> usize {
        self.d_p + self.d_f
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_p, self.d_u, self.d_k, self.heads, self.d_f, self.latent];
        if dims.contains(&0) || self.hub_hidden.contains(&0) || self.query_hidden.contains(&0) {
            return Err(GateError::Config(format!("model shape has a zero dimension: {self:?}")));
        }
        Ok(())
    }
}

/// Offset and extent of one row-major `rows × cols` tensor in the flat
/// parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

/// Tensor positions, in snapshot declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
    pub hub_mlp: Vec<Dense>,
    pub query_mlp: Vec<Dense>,
    pub total: usize,
}

impl Layout {
    fn new(shape: &ModelShape) -> Self {
        let mut offset = 0;
        let mut take = |rows: usize, cols: usize| {
            let t = Tensor { offset, rows, cols };
            offset += rows * cols;
            t
        };
        let (mut wq, mut wk, mut wv) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..shape.heads {
            wq.push(take(shape.d_p, shape.d_k));
            wk.push(take(shape.d_u, shape.d_k));
            wv.push(take(shape.d_u, shape.d_k));
        }
        let wo = take(shape.heads * shape.d_k, shape.d_f);
        let mut mlp = |input: usize, hidden: &[usize]| {
            let mut dims = vec![input];
            dims.extend_from_slice(hidden);
            dims.push(shape.latent);
            dims.windows(2).map(|w| Dense { w: take(w[0], w[1]), b: take(1, w[1]) }).collect::<Vec<_>>()
        };
        let hub_mlp = mlp(shape.hub_input(), &shape.hub_hidden);
        let query_mlp = mlp(shape.d_p, &shape.query_hidden);
        Self { wq, wk, wv, wo, hub_mlp, query_mlp, total: offset }
    }

    fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for j in 0..self.wq.len() {
            out.extend([self.wq[j], self.wk[j], self.wv[j]]);
        }
        out.push(self.wo);
        for d in self.hub_mlp.iter().chain(&self.query_mlp) {
            out.extend([d.w, d.b]);
        }
        out
    }
}

/// All learnable tensors of the fusion attention and both towers, stored as
/// one flat `f64` vector so optimizers and gradient checks can treat them
/// uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerParams {
    pub shape: ModelShape,
    /// Softmax temperature of the contrastive loss; not trained.
    pub tau: f64,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl TwoTowerParams {
    pub fn zeros(shape: ModelShape, tau: f64) -> Result<Self> {
        shape.validate()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(GateError::Config(format!("temperature {tau} must be positive")));
        }
        let layout = Layout::new(&shape);
        let data = vec![0.0; layout.total];
        Ok(Self { shape, tau, layout, data })
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform for the attention
    /// projections, zero biases.
    pub fn init(shape: ModelShape, tau: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape, tau)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = p.layout.clone();
        let mut fill = |t: Tensor, limit: f64, data: &mut [f64]| {
            for x in &mut data[t.range()] {
                *x = rng.random_range(-limit..limit) as f32 as f64;
            }
        };
        for t in layout.wq.iter().chain(&layout.wk).chain(&layout.wv).chain([&layout.wo]) {
            fill(*t, (6.0 / (t.rows + t.cols) as f64).sqrt(), &mut p.data);
        }
        for d in layout.hub_mlp.iter().chain(&layout.query_mlp) {
            fill(d.w, (6.0 / d.w.rows as f64).sqrt(), &mut p.data);
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, t: Tensor) -> &[f64] {
        &self.data[t.range()]
    }

    /// Rounds every parameter to the nearest `f32`, matching what a snapshot
    /// stores.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Layout: magic, version, heads, hub layer count, query layer count,
    /// temperature (f32), descriptor count, `(rows, cols)` per tensor, then
    /// the tensors as little-endian f32 in declaration order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.layout.tensors();
        let mut buf = Vec::with_capacity(32 + 8 * tensors.len() + 4 * self.data.len());
        buf.extend_from_slice(PARAMS_MAGIC);
        put_i32(&mut buf, PARAMS_VERSION);
        put_i32(&mut buf, to_i32(self.shape.heads, "head count")?);
        put_i32(&mut buf, to_i32(self.layout.hub_mlp.len(), "hub layer count")?);
        put_i32(&mut buf, to_i32(self.layout.query_mlp.len(), "query layer count")?);
        put_f32(&mut buf, self.tau as f32);
        put_i32(&mut buf, to_i32(tensors.len(), "descriptor count")?);
        for t in &tensors {
            put_i32(&mut buf, to_i32(t.rows, "rows")?);
            put_i32(&mut buf, to_i32(t.cols, "cols")?);
        }
        for t in &tensors {
            for x in self.slice(*t) {
                put_f32(&mut buf, *x as f32);
            }
        }
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let mut r = ByteReader::new(path, &bytes);
        r.magic(PARAMS_MAGIC)?;
        let at = r.offset();
        let version = r.i32("version")?;
        if version != PARAMS_VERSION {
            return Err(GateError::format(path, at, format!("unsupported version {version}")));
        }
        let heads = r.count("head count")?;
        let hub_layers = r.count("hub layer count")?;
        let query_layers = r.count("query layer count")?;
        let at = r.offset();
        let tau = r.f32s(1, "temperature")?[0] as f64;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(GateError::format(path, at, format!("temperature {tau} must be positive")));
        }
        let at = r.offset();
        let count = r.count("descriptor count")?;
        if heads == 0
            || hub_layers == 0
            || query_layers == 0
            || count != 3 * heads + 1 + 2 * (hub_layers + query_layers)
        {
            return Err(GateError::format(path, at, "descriptor count does not match the declared structure"));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            dims.push((r.count("rows")?, r.count("cols")?));
        }
        let bad = |why: &str| GateError::format(path, at, format!("inconsistent tensor shapes: {why}"));
        let (d_p, d_k) = dims[0];
        let d_u = dims[1].0;
        let (wo_rows, d_f) = dims[3 * heads];
        let hub = &dims[3 * heads + 1..3 * heads + 1 + 2 * hub_layers];
        let query = &dims[3 * heads + 1 + 2 * hub_layers..];
        let latent = hub[2 * hub_layers - 1].1;
        let shape = ModelShape {
            d_p,
            d_u,
            d_k,
            heads,
            d_f,
            hub_hidden: hub.chunks(2).take(hub_layers - 1).map(|c| c[0].1).collect(),
            query_hidden: query.chunks(2).take(query_layers - 1).map(|c| c[0].1).collect(),
            latent,
        };
        if wo_rows != heads * d_k {
            return Err(bad("output projection rows"));
        }
        let mut p = Self::zeros(shape, tau).map_err(|e| GateError::format(path, at, e.to_string()))?;
        let expect: Vec<(usize, usize)> = p.layout.tensors().iter().map(|t| (t.rows, t.cols)).collect();
        if expect != dims {
            return Err(bad("declared shapes do not form a valid model"));
        }
        let flat = r.f32s(p.data.len(), "tensor payload")?;
        if !r.is_done() {
            return Err(r.err("trailing bytes after tensors"));
        }
        if let Some(i) = flat.iter().position(|x| !x.is_finite()) {
            return Err(GateError::format(path, (bytes.len() - 4 * (flat.len() - i)) as u64, "non-finite parameter"));
        }
        p.data = flat.into_iter().map(f64::from).collect();
        Ok(p)
    }
}
