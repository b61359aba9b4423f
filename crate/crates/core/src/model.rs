//! Parameter layout, initialization and the batched pair forward pass.

use mpnp_autodiff::{BatchNormMode, BatchStats, Tape, Tensor, Var};
use mpnp_chem::{MolecularGraph, EDGE_FEATURE_DIM, NODE_FEATURE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{TrainConfig, UncertaintyInput};
use crate::encoder::{self, BlockVars, Encoded, ForwardMode, GruVars, ProjectionVars};
use crate::error::{CoreError, Result};
use crate::graph::{batch_graphs, GraphBatch};
use crate::head::{self, Fused, UncertaintyVars};
use crate::params::{ParamStore, ParamVars};

/// PReLU slopes start here.
pub const PRELU_INIT: f64 = 0.25;

/// Latent log-variance bias init. Posteriors start nearly deterministic
/// (σ ≈ 0.018) so early training is not swamped by readout noise.
pub const LOG_VAR_BIAS_INIT: f64 = -8.0;

/// Architecture shape. Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden_dim: usize,
    pub blocks: usize,
    pub iterations: usize,
    pub relations: usize,
    pub relation_module: bool,
    pub uncertainty_input: UncertaintyInput,
}

impl ModelConfig {
    pub fn new(train: &TrainConfig, relations: usize) -> Self {
        ModelConfig {
            node_dim: NODE_FEATURE_DIM,
            edge_dim: EDGE_FEATURE_DIM,
            hidden_dim: train.hidden_dim,
            blocks: train.blocks,
            iterations: train.iterations,
            relations,
            relation_module: train.relation_module,
            uncertainty_input: train.uncertainty_input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.iterations == 0 || self.hidden_dim == 0 || self.relations == 0 {
            return Err(CoreError::Config(format!(
                "blocks, iterations, hidden_dim and relations must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BlockSlots {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
    pool_w1: usize,
    pool_w2: usize,
    mean_w: usize,
    mean_b: usize,
    logvar_w: usize,
    logvar_b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    node_w: usize,
    bn_gamma: usize,
    bn_beta: usize,
    node_slope: usize,
    edge_w: usize,
    edge_b: usize,
    blocks: Vec<BlockSlots>,
    coattn: usize,
    relations: usize,
    unc_w1: usize,
    unc_b1: usize,
    unc_slope: usize,
    unc_w2: usize,
    unc_b2: usize,
    bn_mean: usize,
    bn_var: usize,
}

/// How a parameter is initialized.
enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Zeros,
    Ones,
    Const(f64),
}

fn build_layout(config: &ModelConfig, mut make: impl FnMut(&str, Vec<usize>, Init) -> usize, store: &mut Vec<(String, Vec<f64>)>) -> Layout {
    let d = config.hidden_dim;
    let node_w = make("encoder.node_proj.weight", vec![config.node_dim, d], Init::Glorot);
    let bn_gamma = make("encoder.node_norm.gamma", vec![d], Init::Ones);
    let bn_beta = make("encoder.node_norm.beta", vec![d], Init::Zeros);
    let node_slope = make("encoder.node_act.slope", vec![1], Init::Const(PRELU_INIT));
    let edge_w = make("encoder.edge_proj.weight", vec![config.edge_dim, d], Init::Glorot);
    let edge_b = make("encoder.edge_proj.bias", vec![d], Init::Zeros);
    let blocks = (0..config.blocks)
        .map(|k| {
            let p = |s: &str| format!("block{k}.{s}");
            BlockSlots {
                w_ih: make(&p("gru.w_ih"), vec![d, 3 * d], Init::Glorot),
                w_hh: make(&p("gru.w_hh"), vec![d, 3 * d], Init::Glorot),
                b_ih: make(&p("gru.b_ih"), vec![3 * d], Init::Zeros),
                b_hh: make(&p("gru.b_hh"), vec![3 * d], Init::Zeros),
                pool_w1: make(&p("pool.w1"), vec![d, d], Init::Glorot),
                pool_w2: make(&p("pool.w2"), vec![d, 1], Init::Glorot),
                mean_w: make(&p("readout.mean.weight"), vec![d, d], Init::Glorot),
                mean_b: make(&p("readout.mean.bias"), vec![d], Init::Zeros),
                logvar_w: make(&p("readout.logvar.weight"), vec![d, d], Init::Glorot),
                logvar_b: make(&p("readout.logvar.bias"), vec![d], Init::Const(LOG_VAR_BIAS_INIT)),
            }
        })
        .collect();
    let coattn = make("head.coattention.weight", vec![d, d], Init::Glorot);
    let relations = if config.relation_module {
        make("head.relations", vec![config.relations * d, d], Init::Glorot)
    } else {
        make("head.shared_relation", vec![d, d], Init::Glorot)
    };
    let unc_w1 = make("head.uncertainty.fc1.weight", vec![2 * d, d], Init::Glorot);
    let unc_b1 = make("head.uncertainty.fc1.bias", vec![d], Init::Zeros);
    let unc_slope = make("head.uncertainty.act.slope", vec![1], Init::Const(PRELU_INIT));
    let unc_w2 = make("head.uncertainty.fc2.weight", vec![d, 1], Init::Glorot);
    let unc_b2 = make("head.uncertainty.fc2.bias", vec![1], Init::Zeros);
    store.push(("encoder.node_norm.running_mean".into(), vec![0.0; d]));
    store.push(("encoder.node_norm.running_var".into(), vec![1.0; d]));
    Layout {
        node_w,
        bn_gamma,
        bn_beta,
        node_slope,
        edge_w,
        edge_b,
        blocks,
        coattn,
        relations,
        unc_w1,
        unc_b1,
        unc_slope,
        unc_w2,
        unc_b2,
        bn_mean: 0,
        bn_var: 1,
    }
}

/// The full pair model: parameters, buffers and their layout.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// Tape handles produced by one [`Model::forward`].
pub struct Forward {
    /// Interaction logits, length `B`.
    pub mu: Var,
    /// Predicted log-variances, length `B`.
    pub log_var: Var,
    /// `B × K` scale weights of each side.
    pub alpha_left: Var,
    pub alpha_right: Var,
    /// Per-pair KL of each side (summed over blocks), length `B`.
    pub kl_left: Var,
    pub kl_right: Var,
    /// Node-feature leaf of the joint batch (left graphs first).
    pub node_input: Var,
    pub encoded: Encoded,
    pub fused: Fused,
    pub batch: GraphBatch,
    pub vars: ParamVars,
}

impl Forward {
    /// Training-mode batch statistics of the node normalization, if any.
    pub fn batch_stats(&self) -> Option<&BatchStats> {
        self.encoded.batch_stats.as_ref()
    }
}

/// Host-side prediction for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    pub mu: f64,
    pub log_var: f64,
    pub probability: f64,
    pub variance: f64,
    pub alpha_left: Vec<f64>,
    pub alpha_right: Vec<f64>,
}

/// A batch of drug pairs by reference.
#[derive(Clone, Debug)]
pub struct PairBatch<'a> {
    pub left: Vec<&'a MolecularGraph>,
    pub right: Vec<&'a MolecularGraph>,
    pub relations: Vec<usize>,
}

impl<'a> PairBatch<'a> {
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn single(left: &'a MolecularGraph, right: &'a MolecularGraph, relation: usize) -> Self {
        PairBatch {
            left: vec![left],
            right: vec![right],
            relations: vec![relation],
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Model {
    /// Fresh model with parameters drawn from a generator seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = Vec::new();
        let layout = build_layout(
            &config,
            |name, shape, init| {
                let n: usize = shape.iter().product();
                let values = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Const(c) => vec![c; n],
                    Init::Glorot => {
                        let (fan_in, fan_out) = (shape[0], shape[1]);
                        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-a..a)).collect()
                    }
                };
                params.add(name, Tensor::new(shape, values).expect("consistent shape"))
            },
            &mut buffers,
        );
        for (name, values) in buffers {
            params.add_buffer(name, values);
        }
        Ok(Model { config, params, layout })
    }

    /// Wraps an existing store after checking it has exactly this
    /// configuration's parameters and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = Model::new(config.clone(), 0)?;
        for (slot, name) in template.params.names().iter().enumerate() {
            let expected = template.params.get(slot).shape();
            match params.slot(name) {
                Some(s) if s == slot => {
                    let found = params.get(s).shape();
                    if found != expected {
                        return Err(CoreError::ParamShape {
                            name: name.clone(),
                            expected: expected.to_vec(),
                            found: found.to_vec(),
                        });
                    }
                }
                _ => return Err(CoreError::UnknownParam(name.clone())),
            }
        }
        if params.len() != template.params.len() {
            let extra = params.names()[template.params.len().min(params.len())..].join(", ");
            return Err(CoreError::Checkpoint(format!("unexpected parameters: {extra}")));
        }
        for (slot, name) in template.params.buffer_names().iter().enumerate() {
            match params.buffer_slot(name) {
                Some(s) if s == slot && params.buffer(s).len() == template.params.buffer(slot).len() => {}
                _ => {
                    return Err(CoreError::ParamShape {
                        name: name.clone(),
                        expected: vec![template.params.buffer(slot).len()],
                        found: params.buffer_slot(name).map(|s| vec![params.buffer(s).len()]).unwrap_or_default(),
                    })
                }
            }
        }
        Ok(Model {
            layout: template.layout,
            config,
            params,
        })
    }

    pub fn running_mean(&self) -> &[f64] {
        self.params.buffer(self.layout.bn_mean)
    }

    pub fn running_var(&self) -> &[f64] {
        self.params.buffer(self.layout.bn_var)
    }

    /// Folds training-mode statistics into the running buffers.
    pub fn update_running_stats(&mut self, stats: &BatchStats, momentum: f64) {
        let mut mean = std::mem::take(self.params.buffer_mut(self.layout.bn_mean));
        let mut var = std::mem::take(self.params.buffer_mut(self.layout.bn_var));
        stats.update_running(&mut mean, &mut var, momentum);
        *self.params.buffer_mut(self.layout.bn_mean) = mean;
        *self.params.buffer_mut(self.layout.bn_var) = var;
    }

    fn projection_vars(&self, v: &ParamVars) -> ProjectionVars {
        let l = &self.layout;
        ProjectionVars {
            node_weight: v[l.node_w],
            bn_gamma: v[l.bn_gamma],
            bn_beta: v[l.bn_beta],
            prelu_slope: v[l.node_slope],
            edge_weight: v[l.edge_w],
            edge_bias: v[l.edge_b],
        }
    }

    fn block_vars(&self, v: &ParamVars) -> Vec<BlockVars> {
        self.layout
            .blocks
            .iter()
            .map(|b| BlockVars {
                gru: GruVars {
                    w_ih: v[b.w_ih],
                    w_hh: v[b.w_hh],
                    b_ih: v[b.b_ih],
                    b_hh: v[b.b_hh],
                },
                pool_w1: v[b.pool_w1],
                pool_w2: v[b.pool_w2],
                mean_weight: v[b.mean_w],
                mean_bias: v[b.mean_b],
                logvar_weight: v[b.logvar_w],
                logvar_bias: v[b.logvar_b],
            })
            .collect()
    }

    /// Records node/edge feature leaves for a batch. `track_nodes` makes
    /// the node features differentiable (for attribution).
    fn feature_leaves(tape: &mut Tape, batch: &GraphBatch, track_nodes: bool) -> Result<(Var, Var)> {
        let nodes = Tensor::new(vec![batch.num_nodes(), NODE_FEATURE_DIM], batch.node_features.clone())?
            .with_requires_grad(track_nodes);
        let edges = Tensor::new(vec![batch.num_bonds(), EDGE_FEATURE_DIM], batch.edge_features.clone())?;
        Ok((tape.input(nodes), tape.input(edges)))
    }

    /// Encodes an arbitrary list of graphs (no pairing).
    pub fn encode_graphs(
        &self,
        tape: &mut Tape,
        graphs: &[&MolecularGraph],
        mode: ForwardMode<'_>,
    ) -> Result<(Encoded, GraphBatch, Var)> {
        let vars = self.params.record(tape);
        let batch = batch_graphs(graphs)?;
        let (node_input, edge_input) = Self::feature_leaves(tape, &batch, false)?;
        let encoded = self.run_encoder(tape, &vars, &batch, node_input, edge_input, mode)?;
        Ok((encoded, batch, node_input))
    }

    fn run_encoder(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        batch: &GraphBatch,
        node_input: Var,
        edge_input: Var,
        mode: ForwardMode<'_>,
    ) -> Result<Encoded> {
        let bn = if mode.batch_statistics {
            BatchNormMode::Train
        } else {
            BatchNormMode::Eval {
                running_mean: self.running_mean(),
                running_var: self.running_var(),
            }
        };
        encoder::encode(
            tape,
            batch,
            node_input,
            edge_input,
            &self.projection_vars(vars),
            &self.block_vars(vars),
            self.config.iterations,
            bn,
            mode.noise_keys,
        )
    }

    /// Records the full pair forward pass. `mode.noise_keys`, when present,
    /// holds one key per graph: all left graphs, then all right graphs.
    pub fn forward(&self, tape: &mut Tape, pairs: &PairBatch<'_>, mode: ForwardMode<'_>, track_input: bool) -> Result<Forward> {
        let b = pairs.len();
        if b == 0 || pairs.left.len() != b || pairs.right.len() != b {
            return Err(CoreError::Config(format!(
                "pair batch sides disagree: {} left, {} right, {} relations",
                pairs.left.len(),
                pairs.right.len(),
                b
            )));
        }
        let limit = if self.config.relation_module { self.config.relations } else { usize::MAX };
        if let Some(&bad) = pairs.relations.iter().find(|&&r| r >= limit) {
            return Err(CoreError::UnknownRelation {
                id: bad,
                count: self.config.relations,
            });
        }
        let vars = self.params.record(tape);
        let graphs: Vec<&MolecularGraph> = pairs.left.iter().chain(&pairs.right).copied().collect();
        let batch = batch_graphs(&graphs)?;
        let (node_input, edge_input) = Self::feature_leaves(tape, &batch, track_input)?;
        let encoded = self.run_encoder(tape, &vars, &batch, node_input, edge_input, mode)?;

        let left_rows: Vec<usize> = (0..b).collect();
        let right_rows: Vec<usize> = (b..2 * b).collect();
        let mut left_scales = Vec::with_capacity(encoded.scales.len());
        let mut right_scales = Vec::with_capacity(encoded.scales.len());
        for &h in &encoded.scales {
            left_scales.push(tape.gather_rows(h, &left_rows)?);
            right_scales.push(tape.gather_rows(h, &right_rows)?);
        }
        let kl_left = tape.gather_rows(encoded.kl, &left_rows)?;
        let kl_right = tape.gather_rows(encoded.kl, &right_rows)?;

        let l = &self.layout;
        let fused = head::co_attention(tape, &left_scales, &right_scales, vars[l.coattn])?;
        let mu = if self.config.relation_module {
            head::rescal_score(tape, fused.left, fused.right, vars[l.relations], &pairs.relations)?
        } else {
            head::shared_bilinear(tape, fused.left, fused.right, vars[l.relations])?
        };
        let unc = UncertaintyVars {
            w1: vars[l.unc_w1],
            b1: vars[l.unc_b1],
            slope: vars[l.unc_slope],
            w2: vars[l.unc_w2],
            b2: vars[l.unc_b2],
        };
        let log_var = match self.config.uncertainty_input {
            UncertaintyInput::FinalEmbeddings => head::uncertainty_head(tape, fused.left, fused.right, &unc)?,
            UncertaintyInput::MultiScale => {
                let a = head::mean_of_scales(tape, &left_scales)?;
                let c = head::mean_of_scales(tape, &right_scales)?;
                head::uncertainty_head(tape, a, c, &unc)?
            }
        };
        Ok(Forward {
            mu,
            log_var,
            alpha_left: fused.alpha_left,
            alpha_right: fused.alpha_right,
            kl_left,
            kl_right,
            node_input,
            encoded,
            fused,
            batch,
            vars,
        })
    }

    /// Deterministic predictions (running statistics, mean readout).
    pub fn predict(&self, pairs: &PairBatch<'_>) -> Result<Vec<PredictionOutput>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, pairs, ForwardMode::eval(), false)?;
        Ok(collect_predictions(&tape, &f))
    }
}

pub fn collect_predictions(tape: &Tape, f: &Forward) -> Vec<PredictionOutput> {
    let mu = tape.value(f.mu).values();
    let s = tape.value(f.log_var).values();
    let (al, ar) = (tape.value(f.alpha_left), tape.value(f.alpha_right));
    (0..mu.len())
        .map(|b| PredictionOutput {
            mu: mu[b],
            log_var: s[b],
            probability: sigmoid(mu[b]),
            variance: s[b].exp(),
            alpha_left: al.row(b).to_vec(),
            alpha_right: ar.row(b).to_vec(),
        })
        .collect()
}
