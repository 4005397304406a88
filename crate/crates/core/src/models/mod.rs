//! Network builders: SpiderCNN classifiers, the part segmenter, PointNet and
//! the SpiderCNN + PointNet fusion.

mod batch;
mod gradcheck;

pub use batch::Batch;
pub use gradcheck::{gradcheck_fixture, gradcheck_model, GradReport};

use crate::autodiff::{BatchNormState, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::config::{ArchConfig, FilterVariant, KeyValues, Pooling, Variant};
use crate::error::{Error, Result};
use crate::nn::{BatchNormParams, Bound, Linear, ParamId, ParamStore};
use crate::rng::{tags, Rng, SeedStream};
use crate::spiderconv::{
    export::filter_scatter, mlp_filter_values, taylor_feature_matrix, MlpFilter, SpiderConvParams,
    SpiderConvShape, TaylorBasis, TaylorCoeffs,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum FilterParams {
    /// `[20 × b]` coefficients.
    Taylor { coeffs: ParamId, basis: TaylorBasis },
    Mlp {
        hidden: Vec<usize>,
        layers: Vec<(ParamId, ParamId)>,
    },
}

#[derive(Debug, Clone)]
struct ConvLayer {
    shape: SpiderConvShape,
    filter: FilterParams,
    step: ParamId,
    bias: Option<ParamId>,
    bn: BatchNormParams,
    bn_slot: usize,
}

#[derive(Debug, Clone)]
struct DenseLayer {
    linear: Linear,
    /// Batch norm before the ReLU, used by the PointNet shared MLP.
    bn: Option<(BatchNormParams, usize)>,
}

/// The fully connected stack on top of pooled (or per-point) features.
#[derive(Debug, Clone)]
struct Head {
    hidden: Vec<Linear>,
    out: Linear,
}

#[derive(Debug, Clone)]
enum Body {
    /// SpiderCNN classifier (3 or 4 layers).
    Spider {
        convs: Vec<ConvLayer>,
    },
    Segmenter {
        convs: Vec<ConvLayer>,
    },
    PointNet {
        mlp: Vec<DenseLayer>,
    },
    Fusion {
        convs: Vec<ConvLayer>,
        mlp: Vec<DenseLayer>,
        spider_proj: Linear,
        pointnet_proj: Linear,
    },
}

/// A built network: configuration, trainable parameters and batch-norm statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ArchConfig,
    pub params: ParamStore,
    pub bn: Vec<BatchNormState>,
    body: Body,
    head: Head,
}

/// Result of a forward pass recorded on a tape.
pub struct Forward {
    /// `[clouds × classes]`, or `[points × parts]` for the segmenter.
    pub logits: Var,
    pub params: Bound,
    /// Global feature per cloud before the head (not for the segmenter).
    pub global: Option<Var>,
}

struct Builder<'a> {
    cfg: &'a ArchConfig,
    params: ParamStore,
    bn: Vec<BatchNormState>,
    rng: Rng,
}

impl Builder<'_> {
    fn bn(&mut self, name: &str, channels: usize) -> (BatchNormParams, usize) {
        let p = BatchNormParams::new(&mut self.params, name, channels);
        let mut state = BatchNormState::new(channels);
        state.momentum = self.cfg.bn_momentum;
        self.bn.push(state);
        (p, self.bn.len() - 1)
    }

    fn convs(&mut self, prefix: &str) -> Vec<ConvLayer> {
        let mut c1 = self.cfg.input_channels;
        let mut out = Vec::new();
        for (li, &c2) in self.cfg.channels.iter().enumerate() {
            let shape = SpiderConvShape {
                c1,
                c2,
                b: self.cfg.taylor_terms,
                k: self.cfg.neighbors,
            };
            let name = format!("{prefix}conv{li}");
            let filter = match &self.cfg.filter {
                FilterVariant::Taylor(basis) => {
                    let init =
                        SpiderConvParams::init(shape, *basis, self.cfg.conv_bias, &mut self.rng);
                    let coeffs = self.params.add(format!("{name}.taylor"), init.taylor);
                    let step = self.params.add(format!("{name}.step"), init.step);
                    let bias = init
                        .bias
                        .map(|b| self.params.add(format!("{name}.bias"), b));
                    let (bn, bn_slot) = self.bn(&format!("{name}.bn"), c2);
                    out.push(ConvLayer {
                        shape,
                        filter: FilterParams::Taylor {
                            coeffs,
                            basis: *basis,
                        },
                        step,
                        bias,
                        bn,
                        bn_slot,
                    });
                    c1 = c2;
                    continue;
                }
                FilterVariant::Mlp(hidden) => {
                    let mlp = MlpFilter::init(hidden, shape.b, &mut self.rng);
                    let layers = mlp
                        .layers
                        .into_iter()
                        .enumerate()
                        .map(|(i, (w, b))| {
                            (
                                self.params.add(format!("{name}.mlp{i}.weight"), w),
                                self.params.add(format!("{name}.mlp{i}.bias"), b),
                            )
                        })
                        .collect();
                    FilterParams::Mlp {
                        hidden: hidden.clone(),
                        layers,
                    }
                }
            };
            // MLP filters reuse the Taylor initialization for step weights and bias.
            let init = SpiderConvParams::init(
                shape,
                TaylorBasis::Order3,
                self.cfg.conv_bias,
                &mut self.rng,
            );
            let step = self.params.add(format!("{name}.step"), init.step);
            let bias = init
                .bias
                .map(|b| self.params.add(format!("{name}.bias"), b));
            let (bn, bn_slot) = self.bn(&format!("{name}.bn"), c2);
            out.push(ConvLayer {
                shape,
                filter,
                step,
                bias,
                bn,
                bn_slot,
            });
            c1 = c2;
        }
        out
    }

    fn pointnet_mlp(&mut self) -> Vec<DenseLayer> {
        let mut fan_in = self.cfg.input_channels;
        let widths = self.cfg.pointnet_mlp.clone();
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let name = format!("pointnet.mlp{i}");
                let linear = Linear::new(&mut self.params, &name, fan_in, w, &mut self.rng);
                let bn = self.bn(&format!("{name}.bn"), w);
                fan_in = w;
                DenseLayer {
                    linear,
                    bn: Some(bn),
                }
            })
            .collect()
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear::new(&mut self.params, name, fan_in, fan_out, &mut self.rng)
    }

    fn head(&mut self, fan_in: usize, outputs: usize) -> Head {
        let mut fan = fan_in;
        let hidden_sizes = self.cfg.head.clone();
        let hidden = hidden_sizes
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = self.linear(&format!("head.fc{i}"), fan, w);
                fan = w;
                l
            })
            .collect();
        let out = self.linear("head.out", fan, outputs);
        Head { hidden, out }
    }

    fn finish(self, body: Body, head: Head) -> Model {
        Model {
            cfg: self.cfg.clone(),
            params: self.params,
            bn: self.bn,
            body,
            head,
        }
    }
}

fn builder(cfg: &ArchConfig, seed: u64) -> Result<Builder<'_>> {
    cfg.validate()?;
    Ok(Builder {
        cfg,
        params: ParamStore::new(),
        bn: Vec::new(),
        rng: SeedStream::new(seed).child(tags::INIT).rng(),
    })
}

/// Stacked SpiderConvs whose concatenated outputs are pooled into a global
/// feature for a fully connected classifier.
pub fn build_classifier(cfg: &ArchConfig, seed: u64) -> Result<Model> {
    if !matches!(cfg.variant, Variant::Cls3 | Variant::Cls4) {
        return Err(Error::config(format!(
            "{} is not a classifier variant",
            cfg.variant.name()
        )));
    }
    let mut b = builder(cfg, seed)?;
    let convs = b.convs("");
    let width: usize = cfg.channels.iter().sum();
    let head = b.head(width * cfg.pooled_k(), cfg.num_classes);
    Ok(b.finish(Body::Spider { convs }, head))
}

/// Four SpiderConvs; every point sees its own features, the pooled global
/// feature and the one-hot object category.
pub fn build_segmenter(cfg: &ArchConfig, seed: u64) -> Result<Model> {
    if cfg.variant != Variant::Seg {
        return Err(Error::config("segmenter needs variant seg"));
    }
    let mut b = builder(cfg, seed)?;
    let convs = b.convs("");
    let width: usize = cfg.channels.iter().sum();
    let per_point = width + width * cfg.pooled_k() + cfg.num_categories;
    let head = b.head(per_point, cfg.num_classes);
    Ok(b.finish(Body::Segmenter { convs }, head))
}

/// Shared per-point MLP with max pooling.
pub fn build_pointnet(cfg: &ArchConfig, seed: u64) -> Result<Model> {
    if cfg.variant != Variant::PointNet {
        return Err(Error::config("pointnet builder needs variant pointnet"));
    }
    let mut b = builder(cfg, seed)?;
    let mlp = b.pointnet_mlp();
    let width = *cfg.pointnet_mlp.last().expect("validated non-empty");
    let head = b.head(width, cfg.num_classes);
    Ok(b.finish(Body::PointNet { mlp }, head))
}

/// A 3-layer SpiderCNN and a PointNet, each projected to `cfg.projection`
/// channels and max-pooled, with their global features concatenated.
pub fn build_fusion(cfg: &ArchConfig, seed: u64) -> Result<Model> {
    if cfg.variant != Variant::Fusion {
        return Err(Error::config("fusion builder needs variant fusion"));
    }
    let mut b = builder(cfg, seed)?;
    let convs = b.convs("spider.");
    let mlp = b.pointnet_mlp();
    let width: usize = cfg.channels.iter().sum();
    let pn_width = *cfg.pointnet_mlp.last().expect("validated non-empty");
    let spider_proj = b.linear("spider.proj", width, cfg.projection);
    let pointnet_proj = b.linear("pointnet.proj", pn_width, cfg.projection);
    let head = b.head(2 * cfg.projection, cfg.num_classes);
    Ok(b.finish(
        Body::Fusion {
            convs,
            mlp,
            spider_proj,
            pointnet_proj,
        },
        head,
    ))
}

impl Model {
    pub fn build(cfg: &ArchConfig, seed: u64) -> Result<Self> {
        match cfg.variant {
            Variant::Cls3 | Variant::Cls4 => build_classifier(cfg, seed),
            Variant::Seg => build_segmenter(cfg, seed),
            Variant::PointNet => build_pointnet(cfg, seed),
            Variant::Fusion => build_fusion(cfg, seed),
        }
    }

    /// Neighbors a batch must carry for this model (0 when unused).
    pub fn neighbors(&self) -> usize {
        match self.body {
            Body::PointNet { .. } => 0,
            _ => self.cfg.neighbors,
        }
    }

    pub fn make_batch(&self, clouds: &[crate::geometry::PointCloud]) -> Result<Batch> {
        Batch::from_clouds(clouds, self.neighbors(), self.cfg.input_channels)
    }

    fn conv_layers(&self) -> &[ConvLayer] {
        match &self.body {
            Body::Spider { convs } | Body::Segmenter { convs } | Body::Fusion { convs, .. } => {
                convs
            }
            Body::PointNet { .. } => &[],
        }
    }

    pub fn num_conv_layers(&self) -> usize {
        self.conv_layers().len()
    }

    /// Parameters of SpiderConv layer `i` with Taylor filters.
    pub fn conv_params(&self, layer: usize) -> Option<SpiderConvParams> {
        let l = self.conv_layers().get(layer)?;
        let FilterParams::Taylor { coeffs, .. } = &l.filter else {
            return None;
        };
        Some(SpiderConvParams {
            shape: l.shape,
            taylor: self.params.get(*coeffs).clone(),
            step: self.params.get(l.step).clone(),
            bias: l.bias.map(|b| self.params.get(b).clone()),
        })
    }

    /// Taylor coefficients of term `t` in layer `layer`, if it uses Taylor filters.
    pub fn taylor_coeffs(&self, layer: usize, t: usize) -> Option<TaylorCoeffs> {
        self.conv_params(layer).map(|p| p.taylor_coeffs(t))
    }

    /// MLP filter of layer `layer`, if it uses one.
    pub fn mlp_filter(&self, layer: usize) -> Option<MlpFilter> {
        let l = self.conv_layers().get(layer)?;
        let FilterParams::Mlp { hidden, layers } = &l.filter else {
            return None;
        };
        Some(MlpFilter {
            hidden: hidden.clone(),
            layers: layers
                .iter()
                .map(|&(w, b)| (self.params.get(w).clone(), self.params.get(b).clone()))
                .collect(),
        })
    }

    /// Rank-indexed step weights of (output `i`, input `v`, term `t`) in a layer.
    pub fn step_weights(&self, layer: usize, i: usize, v: usize, t: usize) -> Option<Vec<f64>> {
        let l = self.conv_layers().get(layer)?;
        let SpiderConvShape { c1, c2, b, k } = l.shape;
        if i >= c2 || v >= c1 || t >= b {
            return None;
        }
        let start = ((i * c1 + v) * b + t) * k;
        Some(self.params.get(l.step).data()[start..start + k].to_vec())
    }

    /// `(x, y, z, value)` samples over the unit ball of the filter for
    /// output `i`, input `v`, term `t` of a SpiderConv layer.
    pub fn export_filter(
        &self,
        layer: usize,
        i: usize,
        v: usize,
        t: usize,
        n: usize,
    ) -> Result<Vec<[f64; 4]>> {
        let weights = self
            .step_weights(layer, i, v, t)
            .ok_or_else(|| Error::invalid(format!("no filter ({i}, {v}, {t}) in layer {layer}")))?;
        if let Some(taylor) = self.taylor_coeffs(layer, t) {
            filter_scatter(&weights, |d| Ok(taylor.eval(d)), n)
        } else {
            let mlp = self.mlp_filter(layer).expect("layer exists");
            filter_scatter(&weights, |d| Ok(mlp.eval(d)?[t]), n)
        }
    }

    fn spider_stack(
        &mut self,
        tape: &mut Tape,
        p: &Bound,
        batch: &Batch,
        train: bool,
    ) -> Result<Vec<Var>> {
        let convs = match &self.body {
            Body::Spider { convs } | Body::Segmenter { convs } | Body::Fusion { convs, .. } => {
                convs.clone()
            }
            Body::PointNet { .. } => return Ok(Vec::new()),
        };
        let table = batch
            .neighbors
            .clone()
            .ok_or_else(|| Error::invalid("batch was built without neighbors"))?;
        if table.k() != self.cfg.neighbors {
            return Err(Error::shape(
                "spiderconv",
                format!(
                    "batch has {} neighbors, model expects {}",
                    table.k(),
                    self.cfg.neighbors
                ),
            ));
        }
        let mut taylor_feats: Option<Var> = None;
        let mut offsets_var: Option<Var> = None;
        let mut h = tape.constant(batch.features.clone());
        let mut outs = Vec::with_capacity(convs.len());
        for layer in &convs {
            let g = match &layer.filter {
                FilterParams::Taylor { coeffs, basis } => {
                    let feats = *taylor_feats.get_or_insert_with(|| {
                        tape.constant(taylor_feature_matrix(&batch.offsets, *basis))
                    });
                    tape.matmul(feats, p.var(*coeffs))?
                }
                FilterParams::Mlp { layers, .. } => {
                    let offs = *offsets_var.get_or_insert_with(|| {
                        let flat = batch.offsets.iter().flatten().copied().collect();
                        tape.constant(Tensor::from_parts(vec![batch.offsets.len(), 3], flat))
                    });
                    let vars: Vec<(Var, Var)> =
                        layers.iter().map(|&(w, b)| (p.var(w), p.var(b))).collect();
                    mlp_filter_values(tape, offs, &vars)?
                }
            };
            let mut c = tape.spider_contract(h, g, p.var(layer.step), table.clone())?;
            if let Some(bias) = layer.bias {
                c = tape.add(c, p.var(bias))?;
            }
            c = layer
                .bn
                .forward(tape, p, c, &mut self.bn[layer.bn_slot], train)?;
            c = tape.relu(c);
            outs.push(c);
            h = c;
        }
        Ok(outs)
    }

    fn pointnet_features(
        &mut self,
        tape: &mut Tape,
        p: &Bound,
        batch: &Batch,
        mlp: &[DenseLayer],
        train: bool,
    ) -> Result<Var> {
        let mut h = tape.constant(batch.features.clone());
        for layer in mlp {
            h = layer.linear.forward(tape, p, h)?;
            if let Some((bn, slot)) = &layer.bn {
                h = bn.forward(tape, p, h, &mut self.bn[*slot], train)?;
            }
            h = tape.relu(h);
        }
        Ok(h)
    }

    fn pool(&self, tape: &mut Tape, x: Var, batch: &Batch) -> Result<Var> {
        match self.cfg.pooling {
            Pooling::TopK => tape.topk_pool_segments(x, &batch.segments, self.cfg.pool_k),
            Pooling::Max => tape.segment_max(x, &batch.segments),
        }
    }

    fn run_head(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let mut h = x;
        for l in &self.head.hidden {
            h = l.forward(tape, p, h)?;
            h = tape.relu(h);
            h = tape.dropout(h, self.cfg.dropout, train, rng)?;
        }
        self.head.out.forward(tape, p, h)
    }

    /// Records the forward pass. In train mode batch norm uses (and updates)
    /// batch statistics and dropout draws from `rng`.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        batch: &Batch,
        train: bool,
        rng: &mut Rng,
    ) -> Result<Forward> {
        if batch.features.shape()[1] != self.cfg.input_channels {
            return Err(Error::shape(
                "model",
                format!(
                    "batch has {} input channels, model expects {}",
                    batch.features.shape()[1],
                    self.cfg.input_channels
                ),
            ));
        }
        let p = self.params.bind(tape);
        let body = self.body.clone();
        let (global, head_in) = match &body {
            Body::Spider { .. } => {
                let outs = self.spider_stack(tape, &p, batch, train)?;
                let cat = tape.concat(&outs, 1)?;
                let g = self.pool(tape, cat, batch)?;
                (Some(g), g)
            }
            Body::Segmenter { .. } => {
                let outs = self.spider_stack(tape, &p, batch, train)?;
                let cat = tape.concat(&outs, 1)?;
                let g = self.pool(tape, cat, batch)?;
                let mut onehot = vec![0.0; batch.clouds() * self.cfg.num_categories];
                if batch.labels.len() != batch.clouds() {
                    return Err(Error::invalid(
                        "segmentation batch needs a category per cloud",
                    ));
                }
                for (ci, &cat_id) in batch.labels.iter().enumerate() {
                    if cat_id >= self.cfg.num_categories {
                        return Err(Error::invalid(format!(
                            "category {cat_id} >= {}",
                            self.cfg.num_categories
                        )));
                    }
                    onehot[ci * self.cfg.num_categories + cat_id] = 1.0;
                }
                let oh = tape.constant(Tensor::from_parts(
                    vec![batch.clouds(), self.cfg.num_categories],
                    onehot,
                ));
                let per_cloud = tape.concat(&[g, oh], 1)?;
                let spread = tape.gather(per_cloud, batch.row_cloud())?;
                (None, tape.concat(&[cat, spread], 1)?)
            }
            Body::PointNet { mlp } => {
                let h = self.pointnet_features(tape, &p, batch, mlp, train)?;
                let g = tape.segment_max(h, &batch.segments)?;
                (Some(g), g)
            }
            Body::Fusion {
                mlp,
                spider_proj,
                pointnet_proj,
                ..
            } => {
                let outs = self.spider_stack(tape, &p, batch, train)?;
                let cat = tape.concat(&outs, 1)?;
                let sp = spider_proj.forward(tape, &p, cat)?;
                let sg = tape.segment_max(sp, &batch.segments)?;
                let h = self.pointnet_features(tape, &p, batch, mlp, train)?;
                let pp = pointnet_proj.forward(tape, &p, h)?;
                let pg = tape.segment_max(pp, &batch.segments)?;
                let g = tape.concat(&[sg, pg], 1)?;
                (Some(g), g)
            }
        };
        let logits = self.run_head(tape, &p, head_in, train, rng)?;
        Ok(Forward {
            logits,
            params: p,
            global,
        })
    }

    /// Cross-entropy against the batch's class labels (or part labels for the segmenter).
    pub fn loss(&self, tape: &mut Tape, fwd: &Forward, batch: &Batch) -> Result<Var> {
        let labels = match self.body {
            Body::Segmenter { .. } => &batch.part_labels,
            _ => &batch.labels,
        };
        if labels.is_empty() {
            return Err(Error::invalid("batch has no labels for the loss"));
        }
        tape.softmax_cross_entropy(fwd.logits, labels)
    }

    pub fn is_segmenter(&self) -> bool {
        matches!(self.body, Body::Segmenter { .. })
    }

    /// Eval-mode logits as a plain tensor.
    pub fn predict(&mut self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = SeedStream::new(0).rng();
        let fwd = self.forward(&mut tape, batch, false, &mut rng)?;
        Ok(tape.value(fwd.logits).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> = self
            .params
            .names()
            .iter()
            .cloned()
            .zip(self.params.values().iter().cloned())
            .collect();
        for (i, s) in self.bn.iter().enumerate() {
            tensors.push((
                format!("bn{i}.running_mean"),
                Tensor::vector(s.running_mean.clone()),
            ));
            tensors.push((
                format!("bn{i}.running_var"),
                Tensor::vector(s.running_var.clone()),
            ));
        }
        Checkpoint {
            meta: self.cfg.to_pairs(),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (k, v) in ck
            .meta
            .iter()
            .filter(|(k, _)| ArchConfig::KEYS.contains(&k.as_str()))
        {
            kv.set(k, v);
        }
        let cfg = ArchConfig::from_kv(&kv)?;
        let mut model = Model::build(&cfg, 0)?;
        let missing = |n: &str| Error::Checkpoint(format!("missing tensor {n}"));
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let t = ck.tensor(&name).ok_or_else(|| missing(&name))?;
            if t.shape() != model.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}",
                    t.shape()
                )));
            }
            *model.params.get_mut(id) = t.clone();
        }
        for (i, s) in model.bn.iter_mut().enumerate() {
            let mean = format!("bn{i}.running_mean");
            let var = format!("bn{i}.running_var");
            let m = ck.tensor(&mean).ok_or_else(|| missing(&mean))?;
            let v = ck.tensor(&var).ok_or_else(|| missing(&var))?;
            if m.len() != s.channels() || v.len() != s.channels() {
                return Err(Error::Checkpoint(format!(
                    "batch-norm {i} has the wrong width"
                )));
            }
            s.running_mean = m.data().to_vec();
            s.running_var = v.data().to_vec();
        }
        let expected = model.params.len() + 2 * model.bn.len();
        if ck.tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {expected}",
                ck.tensors.len()
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests;
