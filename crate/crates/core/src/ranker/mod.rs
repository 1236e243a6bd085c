//! Robust MMoE ranking head.
//!
//! Each role `k` owns a bottleneck adapter and a two-way gate; one adapter is
//! shared by all roles. For a pair embedding `e` issued by role `k`:
//!
//! ```text
//! v = A_k(e)            w = A_shared(e)
//! g = softmax(W_k e)    h = g₀·v + g₁·w
//! ŷ = softmax(W_c h + b_c)
//! ```
//!
//! where `A(e) = e + W_up·relu(W_down·e + b_down) + b_up`. Gradients are
//! derived by hand; see `backward`.

mod matrix;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Role;

pub use matrix::{add_assign, dot, softmax, softmax_backward, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum RankerError {
    #[error("invalid dimensions: {0}")]
    Dims(String),
    #[error("{what}: expected length {expected}, found {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
    #[error("batch misaligned: {traces} traces vs {grads} gradients")]
    Batch { traces: usize, grads: usize },
    #[error("trace was produced by a different head kind")]
    TraceKind,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Embedding width.
    pub d: usize,
    /// Adapter bottleneck width.
    pub bottleneck: usize,
    /// Number of relevance levels.
    pub levels: usize,
}

impl Dims {
    pub fn new(d: usize, bottleneck: usize, levels: usize) -> Result<Self, RankerError> {
        if bottleneck < 2 || bottleneck >= d {
            return Err(RankerError::Dims(format!("need 2 <= b < d, got b={bottleneck}, d={d}")));
        }
        if levels != 3 && levels != 5 {
            return Err(RankerError::Dims(format!("levels must be 3 or 5, got {levels}")));
        }
        Ok(Self { d, bottleneck, levels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub w_down: Matrix,
    pub b_down: Vec<f64>,
    pub w_up: Matrix,
    pub b_up: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmoeParams {
    pub dims: Dims,
    pub seed: u64,
    /// Indexed by [`Role::index`].
    pub agents: Vec<AdapterParams>,
    pub shared: AdapterParams,
    /// Indexed by [`Role::index`].
    pub gates: Vec<GateParams>,
    pub classifier: ClassifierParams,
}

/// Classifier applied directly to the embedding (no adapters, no gates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub dims: Dims,
    pub seed: u64,
    pub classifier: ClassifierParams,
}

/// A trainable head. Also used as the gradient container for itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankingHead {
    Mmoe(MmoeParams),
    Linear(LinearHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterTrace {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrace {
    pub agent: AdapterTrace,
    pub shared: AdapterTrace,
    pub gate_logits: [f64; 2],
    pub gate: [f64; 2],
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub role: Role,
    pub input: Vec<f64>,
    /// `None` for [`LinearHead`].
    pub experts: Option<ExpertTrace>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

impl AdapterParams {
    fn init(rng: &mut ChaCha8Rng, dims: Dims) -> Self {
        Self {
            w_down: glorot(rng, dims.bottleneck, dims.d),
            b_down: vec![0.0; dims.bottleneck],
            w_up: glorot(rng, dims.d, dims.bottleneck),
            b_up: vec![0.0; dims.d],
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            w_down: Matrix::zeros(dims.bottleneck, dims.d),
            b_down: vec![0.0; dims.bottleneck],
            w_up: Matrix::zeros(dims.d, dims.bottleneck),
            b_up: vec![0.0; dims.d],
        }
    }

    fn forward_trace(&self, e: &[f64]) -> AdapterTrace {
        let mut pre = self.w_down.matvec(e);
        for (p, b) in pre.iter_mut().zip(&self.b_down) {
            *p += b;
        }
        let hidden: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
        let up = self.w_up.matvec(&hidden);
        let out = e.iter().zip(&up).zip(&self.b_up).map(|((x, u), b)| x + u + b).collect();
        AdapterTrace { pre, hidden, out }
    }

    /// Accumulates parameter gradients given `dL/d out`.
    fn backward(&self, trace: &AdapterTrace, input: &[f64], grad_out: &[f64], grad: &mut AdapterParams) {
        grad.w_up.add_outer(grad_out, &trace.hidden);
        matrix::add_assign(&mut grad.b_up, grad_out);
        let d_hidden = self.w_up.matvec_t(grad_out);
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&trace.pre)
            .map(|(g, &p)| if p > 0.0 { *g } else { 0.0 })
            .collect();
        grad.w_down.add_outer(&d_pre, input);
        matrix::add_assign(&mut grad.b_down, &d_pre);
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [&self.w_down.data, &self.b_down, &self.w_up.data, &self.b_up]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w_down.data, &mut self.b_down, &mut self.w_up.data, &mut self.b_up]
    }

    fn check(&self, dims: Dims, what: &str) -> Result<(), RankerError> {
        check_matrix(&self.w_down, dims.bottleneck, dims.d, what)?;
        check_matrix(&self.w_up, dims.d, dims.bottleneck, what)?;
        check_len(self.b_down.len(), dims.bottleneck, what)?;
        check_len(self.b_up.len(), dims.d, what)
    }
}

/// `e + W_up·relu(W_down·e + b_down) + b_up`
pub fn adapter_forward(a: &AdapterParams, e: &[f64]) -> Result<Vec<f64>, RankerError> {
    if e.len() != a.w_down.cols {
        return Err(RankerError::Shape { what: "adapter input", expected: a.w_down.cols, found: e.len() });
    }
    Ok(a.forward_trace(e).out)
}

impl ClassifierParams {
    fn init(rng: &mut ChaCha8Rng, dims: Dims) -> Self {
        Self { w: glorot(rng, dims.levels, dims.d), b: vec![0.0; dims.levels] }
    }

    fn zeros(dims: Dims) -> Self {
        Self { w: Matrix::zeros(dims.levels, dims.d), b: vec![0.0; dims.levels] }
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.w.matvec(h);
        matrix::add_assign(&mut z, &self.b);
        z
    }

    /// Accumulates gradients from `dL/dŷ`, returns `dL/dh`.
    fn backward(&self, trace: &ForwardTrace, grad_probs: &[f64], grad: &mut ClassifierParams) -> Vec<f64> {
        let dz = softmax_backward(&trace.probs, grad_probs);
        grad.w.add_outer(&dz, &trace.fused);
        matrix::add_assign(&mut grad.b, &dz);
        self.w.matvec_t(&dz)
    }
}

fn check_matrix(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<(), RankerError> {
    if m.rows != rows || m.cols != cols || m.data.len() != rows * cols {
        return Err(RankerError::Checkpoint(format!(
            "{what}: expected {rows}x{cols} matrix, found {}x{} with {} entries",
            m.rows,
            m.cols,
            m.data.len()
        )));
    }
    Ok(())
}

fn check_len(found: usize, expected: usize, what: &str) -> Result<(), RankerError> {
    if found != expected {
        return Err(RankerError::Checkpoint(format!("{what}: expected {expected} entries, found {found}")));
    }
    Ok(())
}

/// Draws weights uniformly in `±√(6/(fan_in+fan_out))`; biases start at zero.
pub fn init_params(d: usize, b: usize, levels: usize, seed: u64) -> Result<MmoeParams, RankerError> {
    let dims = Dims::new(d, b, levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = (0..Role::COUNT).map(|_| AdapterParams::init(&mut rng, dims)).collect();
    let shared = AdapterParams::init(&mut rng, dims);
    let gates = (0..Role::COUNT).map(|_| GateParams { w: glorot(&mut rng, 2, d) }).collect();
    let classifier = ClassifierParams::init(&mut rng, dims);
    Ok(MmoeParams { dims, seed, agents, shared, gates, classifier })
}

impl LinearHead {
    pub fn init(d: usize, levels: usize, seed: u64) -> Result<Self, RankerError> {
        if d < 2 || (levels != 3 && levels != 5) {
            return Err(RankerError::Dims(format!("d={d}, levels={levels}")));
        }
        // The bottleneck is unused; keep a valid value for the shared Dims type.
        let dims = Dims { d, bottleneck: d / 2, levels };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { dims, seed, classifier: ClassifierParams::init(&mut rng, dims) })
    }
}

fn check_input(dims: Dims, e: &[f64]) -> Result<(), RankerError> {
    if e.len() != dims.d {
        return Err(RankerError::Shape { what: "embedding", expected: dims.d, found: e.len() });
    }
    Ok(())
}

pub fn mmoe_forward(p: &MmoeParams, e: &[f64], role: Role) -> Result<ForwardTrace, RankerError> {
    check_input(p.dims, e)?;
    let k = role.index();
    let agent = p.agents[k].forward_trace(e);
    let shared = p.shared.forward_trace(e);
    let gl = p.gates[k].w.matvec(e);
    let g = softmax(&gl);
    let fused: Vec<f64> = agent.out.iter().zip(&shared.out).map(|(v, w)| g[0] * v + g[1] * w).collect();
    let logits = p.classifier.logits(&fused);
    let probs = softmax(&logits);
    Ok(ForwardTrace {
        role,
        input: e.to_vec(),
        experts: Some(ExpertTrace { agent, shared, gate_logits: [gl[0], gl[1]], gate: [g[0], g[1]] }),
        fused,
        logits,
        probs,
    })
}

/// Exact gradients of `Σᵢ ⟨loss_gradsᵢ, ŷᵢ⟩` with respect to every parameter,
/// summed over the batch. Role-`k` examples touch only adapter `k` and gate
/// `k` among the per-role tensors.
pub fn backward(
    p: &MmoeParams,
    traces: &[ForwardTrace],
    loss_grads: &[Vec<f64>],
) -> Result<MmoeParams, RankerError> {
    if traces.len() != loss_grads.len() {
        return Err(RankerError::Batch { traces: traces.len(), grads: loss_grads.len() });
    }
    let mut grad = MmoeParams::zeros_like(p);
    for (trace, dy) in traces.iter().zip(loss_grads) {
        if dy.len() != p.dims.levels {
            return Err(RankerError::Shape { what: "loss gradient", expected: p.dims.levels, found: dy.len() });
        }
        let ex = trace.experts.as_ref().ok_or(RankerError::TraceKind)?;
        let k = trace.role.index();
        let dh = p.classifier.backward(trace, dy, &mut grad.classifier);

        let dg = [dot(&dh, &ex.agent.out), dot(&dh, &ex.shared.out)];
        let du = softmax_backward(&ex.gate, &dg);
        grad.gates[k].w.add_outer(&du, &trace.input);

        let dv: Vec<f64> = dh.iter().map(|x| ex.gate[0] * x).collect();
        let dw: Vec<f64> = dh.iter().map(|x| ex.gate[1] * x).collect();
        p.agents[k].backward(&ex.agent, &trace.input, &dv, &mut grad.agents[k]);
        p.shared.backward(&ex.shared, &trace.input, &dw, &mut grad.shared);
    }
    Ok(grad)
}

impl MmoeParams {
    pub fn zeros_like(p: &MmoeParams) -> MmoeParams {
        let dims = p.dims;
        MmoeParams {
            dims,
            seed: p.seed,
            agents: vec![AdapterParams::zeros(dims); Role::COUNT],
            shared: AdapterParams::zeros(dims),
            gates: vec![GateParams { w: Matrix::zeros(2, dims.d) }; Role::COUNT],
            classifier: ClassifierParams::zeros(dims),
        }
    }

    /// All tensors in a fixed order: agent adapters 0..5, shared adapter,
    /// gates 0..5, classifier weight, classifier bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for a in &self.agents {
            out.extend(a.tensors());
        }
        out.extend(self.shared.tensors());
        for g in &self.gates {
            out.push(&g.w.data);
        }
        out.push(&self.classifier.w.data);
        out.push(&self.classifier.b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for a in &mut self.agents {
            out.extend(a.tensors_mut());
        }
        out.extend(self.shared.tensors_mut());
        for g in &mut self.gates {
            out.push(&mut g.w.data);
        }
        out.push(&mut self.classifier.w.data);
        out.push(&mut self.classifier.b);
        out
    }

    fn validate(&self) -> Result<(), RankerError> {
        let dims = Dims::new(self.dims.d, self.dims.bottleneck, self.dims.levels)?;
        if self.agents.len() != Role::COUNT || self.gates.len() != Role::COUNT {
            return Err(RankerError::Checkpoint("expected one adapter and gate per role".into()));
        }
        for a in &self.agents {
            a.check(dims, "agent adapter")?;
        }
        self.shared.check(dims, "shared adapter")?;
        for g in &self.gates {
            check_matrix(&g.w, 2, dims.d, "gate")?;
        }
        check_matrix(&self.classifier.w, dims.levels, dims.d, "classifier")?;
        check_len(self.classifier.b.len(), dims.levels, "classifier bias")
    }
}

impl RankingHead {
    pub fn dims(&self) -> Dims {
        match self {
            RankingHead::Mmoe(p) => p.dims,
            RankingHead::Linear(p) => p.dims,
        }
    }

    pub fn forward(&self, e: &[f64], role: Role) -> Result<ForwardTrace, RankerError> {
        match self {
            RankingHead::Mmoe(p) => mmoe_forward(p, e, role),
            RankingHead::Linear(p) => {
                check_input(p.dims, e)?;
                let logits = p.classifier.logits(e);
                let probs = softmax(&logits);
                Ok(ForwardTrace { role, input: e.to_vec(), experts: None, fused: e.to_vec(), logits, probs })
            }
        }
    }

    pub fn backward(&self, traces: &[ForwardTrace], loss_grads: &[Vec<f64>]) -> Result<RankingHead, RankerError> {
        match self {
            RankingHead::Mmoe(p) => backward(p, traces, loss_grads).map(RankingHead::Mmoe),
            RankingHead::Linear(p) => {
                if traces.len() != loss_grads.len() {
                    return Err(RankerError::Batch { traces: traces.len(), grads: loss_grads.len() });
                }
                let mut grad = LinearHead { dims: p.dims, seed: p.seed, classifier: ClassifierParams::zeros(p.dims) };
                for (trace, dy) in traces.iter().zip(loss_grads) {
                    if trace.experts.is_some() {
                        return Err(RankerError::TraceKind);
                    }
                    p.classifier.backward(trace, dy, &mut grad.classifier);
                }
                Ok(RankingHead::Linear(grad))
            }
        }
    }

    pub fn zeros_like(&self) -> RankingHead {
        match self {
            RankingHead::Mmoe(p) => RankingHead::Mmoe(MmoeParams::zeros_like(p)),
            RankingHead::Linear(p) => RankingHead::Linear(LinearHead {
                dims: p.dims,
                seed: p.seed,
                classifier: ClassifierParams::zeros(p.dims),
            }),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            RankingHead::Mmoe(p) => p.tensors(),
            RankingHead::Linear(p) => vec![&p.classifier.w.data, &p.classifier.b],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            RankingHead::Mmoe(p) => p.tensors_mut(),
            RankingHead::Linear(p) => vec![&mut p.classifier.w.data, &mut p.classifier.b],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("head serializes")
    }

    /// Parses a checkpoint and validates every tensor against its dims.
    pub fn from_json(text: &str) -> Result<RankingHead, RankerError> {
        let head: RankingHead =
            serde_json::from_str(text).map_err(|e| RankerError::Checkpoint(e.to_string()))?;
        match &head {
            RankingHead::Mmoe(p) => p.validate()?,
            RankingHead::Linear(p) => {
                check_matrix(&p.classifier.w, p.dims.levels, p.dims.d, "classifier")?;
                check_len(p.classifier.b.len(), p.dims.levels, "classifier bias")?;
            }
        }
        if !head.is_finite() {
            return Err(RankerError::Checkpoint("non-finite parameter".into()));
        }
        Ok(head)
    }
}
