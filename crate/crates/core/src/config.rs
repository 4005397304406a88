//! Architecture and training configuration, and the line-oriented
//! `key = value` format they are read from and written to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{AugmentConfig, DEFAULT_DP_MIN_KEEP};
use crate::spiderconv::TaylorBasis;
use crate::training::ToySpec;

/// Parsed `key = value` pairs. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    ln + 1
                ))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", ln + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!(
                    "line {}: duplicate key {k:?}",
                    ln + 1
                )));
            }
        }
        Ok(KeyValues(map))
    }

    /// Applies a `key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::config(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(format!("bad value {v:?} for {key}")))
            })
            .transpose()
    }

    pub fn parse_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key).map(|v| parse_usize_list(v, key)).transpose()
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_usize_list(v: &str, key: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("bad list {v:?} for {key}")))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Cls3,
    Cls4,
    Seg,
    PointNet,
    Fusion,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cls3 => "cls3",
            Variant::Cls4 => "cls4",
            Variant::Seg => "seg",
            Variant::PointNet => "pointnet",
            Variant::Fusion => "fusion",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Variant::Cls3,
            Variant::Cls4,
            Variant::Seg,
            Variant::PointNet,
            Variant::Fusion,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    TopK,
    Max,
}

impl FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(Pooling::TopK),
            "max" => Ok(Pooling::Max),
            _ => Err(Error::config(format!("unknown pooling {s:?}"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::TopK => "topk",
            Pooling::Max => "max",
        })
    }
}

/// How per-neighbor filter values are produced from offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterVariant {
    Taylor(TaylorBasis),
    /// ReLU MLP with these hidden widths and one output per Taylor term.
    Mlp(Vec<usize>),
}

impl FromStr for FilterVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taylor3" => Ok(FilterVariant::Taylor(TaylorBasis::Order3)),
            "taylor2" => Ok(FilterVariant::Taylor(TaylorBasis::Order2)),
            "linear" => Ok(FilterVariant::Taylor(TaylorBasis::Linear)),
            "trilinear" => Ok(FilterVariant::Taylor(TaylorBasis::Trilinear)),
            _ => match s.strip_prefix("mlp:") {
                Some(h) => Ok(FilterVariant::Mlp(parse_usize_list(h, "filter")?)),
                None => Err(Error::config(format!("unknown filter variant {s:?}"))),
            },
        }
    }
}

impl fmt::Display for FilterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterVariant::Taylor(b) => f.write_str(b.name()),
            FilterVariant::Mlp(h) => write!(f, "mlp:{}", join(h)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub variant: Variant,
    /// SpiderConv out-channels per layer.
    pub channels: Vec<usize>,
    /// Taylor terms `b` per layer.
    pub taylor_terms: usize,
    /// Neighbors per point, self included.
    pub neighbors: usize,
    pub pool_k: usize,
    pub pooling: Pooling,
    pub head: Vec<usize>,
    pub num_classes: usize,
    /// Object categories (segmentation only).
    pub num_categories: usize,
    /// 3 for positions, 6 for positions and normals.
    pub input_channels: usize,
    pub filter: FilterVariant,
    pub dropout: f64,
    pub conv_bias: bool,
    pub pointnet_mlp: Vec<usize>,
    /// Width of each branch's global feature in the fusion model.
    pub projection: usize,
    pub bn_momentum: f64,
}

impl ArchConfig {
    pub fn defaults(variant: Variant) -> Self {
        let channels = match variant {
            Variant::Cls4 => vec![32, 64, 128, 258],
            Variant::Seg => vec![32, 64, 128, 256],
            Variant::PointNet => Vec::new(),
            Variant::Cls3 | Variant::Fusion => vec![32, 64, 128],
        };
        ArchConfig {
            variant,
            channels,
            taylor_terms: 3,
            neighbors: 20,
            pool_k: 2,
            pooling: Pooling::TopK,
            head: vec![256, 128],
            num_classes: 40,
            num_categories: 0,
            input_channels: 6,
            filter: FilterVariant::Taylor(TaylorBasis::Order3),
            dropout: 0.5,
            conv_bias: true,
            pointnet_mlp: vec![64, 64, 128],
            projection: 128,
            bn_momentum: 0.5,
        }
    }

    pub fn cls3(num_classes: usize) -> Self {
        ArchConfig {
            num_classes,
            ..Self::defaults(Variant::Cls3)
        }
    }

    /// Effective pooling width (max pooling keeps one value per channel).
    pub fn pooled_k(&self) -> usize {
        match self.pooling {
            Pooling::TopK => self.pool_k,
            Pooling::Max => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        positive(self.taylor_terms, "taylor_terms")?;
        positive(self.neighbors, "neighbors")?;
        positive(self.pool_k, "pool_k")?;
        positive(self.num_classes, "num_classes")?;
        positive(self.projection, "projection")?;
        if self
            .channels
            .iter()
            .chain(&self.head)
            .chain(&self.pointnet_mlp)
            .any(|&c| c == 0)
        {
            return Err(Error::config("layer widths must be positive"));
        }
        if let FilterVariant::Mlp(h) = &self.filter {
            if h.contains(&0) {
                return Err(Error::config("MLP filter widths must be positive"));
            }
        }
        if self.input_channels != 3 && self.input_channels != 6 {
            return Err(Error::config(format!(
                "input_channels must be 3 or 6, got {}",
                self.input_channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum must be in [0, 1]"));
        }
        match self.variant {
            Variant::Cls3 | Variant::Fusion if self.channels.len() != 3 => Err(Error::config(
                format!("{} needs 3 SpiderConv layers", self.variant.name()),
            )),
            Variant::Cls4 | Variant::Seg if self.channels.len() != 4 => Err(Error::config(
                format!("{} needs 4 SpiderConv layers", self.variant.name()),
            )),
            Variant::Seg if self.num_categories == 0 => {
                Err(Error::config("segmentation needs num_categories"))
            }
            Variant::PointNet | Variant::Fusion if self.pointnet_mlp.is_empty() => {
                Err(Error::config("pointnet_mlp must not be empty"))
            }
            _ => Ok(()),
        }
    }

    pub const KEYS: [&'static str; 16] = [
        "variant",
        "channels",
        "taylor_terms",
        "neighbors",
        "pool_k",
        "pooling",
        "head",
        "num_classes",
        "num_categories",
        "input_channels",
        "filter",
        "dropout",
        "conv_bias",
        "pointnet_mlp",
        "projection",
        "bn_momentum",
    ];

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("variant".into(), self.variant.name().into()),
            ("channels".into(), join(&self.channels)),
            ("taylor_terms".into(), self.taylor_terms.to_string()),
            ("neighbors".into(), self.neighbors.to_string()),
            ("pool_k".into(), self.pool_k.to_string()),
            ("pooling".into(), self.pooling.to_string()),
            ("head".into(), join(&self.head)),
            ("num_classes".into(), self.num_classes.to_string()),
            ("num_categories".into(), self.num_categories.to_string()),
            ("input_channels".into(), self.input_channels.to_string()),
            ("filter".into(), self.filter.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("conv_bias".into(), self.conv_bias.to_string()),
            ("pointnet_mlp".into(), join(&self.pointnet_mlp)),
            ("projection".into(), self.projection.to_string()),
            ("bn_momentum".into(), self.bn_momentum.to_string()),
        ]
    }

    /// Reads architecture keys from `kv`, starting from the variant's defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let variant: Variant = kv.parse_value("variant")?.unwrap_or(Variant::Cls3);
        let mut c = Self::defaults(variant);
        if let Some(v) = kv.parse_list("channels")? {
            c.channels = v;
        }
        if let Some(v) = kv.parse_value("taylor_terms")? {
            c.taylor_terms = v;
        }
        if let Some(v) = kv.parse_value("neighbors")? {
            c.neighbors = v;
        }
        if let Some(v) = kv.parse_value("pool_k")? {
            c.pool_k = v;
        }
        if let Some(v) = kv.parse_value("pooling")? {
            c.pooling = v;
        }
        if let Some(v) = kv.parse_list("head")? {
            c.head = v;
        }
        if let Some(v) = kv.parse_value("num_classes")? {
            c.num_classes = v;
        }
        if let Some(v) = kv.parse_value("num_categories")? {
            c.num_categories = v;
        }
        if let Some(v) = kv.parse_value("input_channels")? {
            c.input_channels = v;
        }
        if let Some(v) = kv.parse_value("filter")? {
            c.filter = v;
        }
        if let Some(v) = kv.parse_value("dropout")? {
            c.dropout = v;
        }
        if let Some(v) = kv.parse_value("conv_bias")? {
            c.conv_bias = v;
        }
        if let Some(v) = kv.parse_list("pointnet_mlp")? {
            c.pointnet_mlp = v;
        }
        if let Some(v) = kv.parse_value("projection")? {
            c.projection = v;
        }
        if let Some(v) = kv.parse_value("bn_momentum")? {
            c.bn_momentum = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Whether the robustness sweep retrains at each size or only subsamples at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustProtocol {
    TrainAtSize,
    EvalOnly,
}

impl FromStr for RobustProtocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(RobustProtocol::TrainAtSize),
            "eval" => Ok(RobustProtocol::EvalOnly),
            _ => Err(Error::config(format!(
                "unknown robustness protocol {s:?} (train|eval)"
            ))),
        }
    }
}

impl fmt::Display for RobustProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RobustProtocol::TrainAtSize => "train",
            RobustProtocol::EvalOnly => "eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Evaluate the test split every this many epochs (and after the last); 0 = only at the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            seed: 1,
            augment: AugmentConfig::standard(),
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 8] = [
        "epochs",
        "batch_size",
        "lr",
        "seed",
        "rotate",
        "jitter",
        "dp_min_keep",
        "eval_every",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(Error::config("lr must be non-negative"));
        }
        if self.augment.jitter_sigma.is_nan() || self.augment.jitter_sigma < 0.0 {
            return Err(Error::config("jitter must be non-negative"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = TrainConfig::default();
        if let Some(v) = kv.parse_value("epochs")? {
            c.epochs = v;
        }
        if let Some(v) = kv.parse_value("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = kv.parse_value("lr")? {
            c.lr = v;
        }
        if let Some(v) = kv.parse_value("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parse_value("rotate")? {
            c.augment.rotate_up = v;
        }
        if let Some(v) = kv.parse_value("jitter")? {
            c.augment.jitter_sigma = v;
        }
        if let Some(v) = kv.get("dp_min_keep") {
            c.augment.dropout_min_keep = match v {
                "off" | "none" | "0" => None,
                "default" => Some(DEFAULT_DP_MIN_KEEP),
                _ => Some(
                    v.parse()
                        .map_err(|_| Error::config(format!("bad dp_min_keep {v:?}")))?,
                ),
            };
        }
        if let Some(v) = kv.parse_value("eval_every")? {
            c.eval_every = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("rotate".into(), self.augment.rotate_up.to_string()),
            ("jitter".into(), self.augment.jitter_sigma.to_string()),
            (
                "dp_min_keep".into(),
                self.augment
                    .dropout_min_keep
                    .map_or("off".to_string(), |v| v.to_string()),
            ),
            ("eval_every".into(), self.eval_every.to_string()),
        ]
    }
}

/// Where a run's clouds come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated synthetic shapes (train and test splits).
    Toy(ToySpec),
    /// `path,label` manifests for the training and (optional) test sets.
    Manifest {
        train: PathBuf,
        test: Option<PathBuf>,
    },
}

/// Everything a CLI run needs: architecture, optimization and data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub data: DataSource,
}

impl RunConfig {
    pub const DATA_KEYS: [&'static str; 9] = [
        "data",
        "test_data",
        "toy_kinds",
        "toy_train_per_class",
        "toy_test_per_class",
        "toy_points",
        "toy_noise",
        "toy_normal_k",
        "toy_seed",
    ];

    pub fn keys() -> Vec<&'static str> {
        ArchConfig::KEYS
            .iter()
            .chain(&TrainConfig::KEYS)
            .chain(&Self::DATA_KEYS)
            .copied()
            .collect()
    }

    /// Resolves a full run from `kv`, rejecting unknown keys. A toy dataset
    /// defaults `num_classes` to its number of shape kinds.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&Self::keys())?;
        let data = match kv.get("data").unwrap_or("toy") {
            "toy" => {
                let mut spec = ToySpec::default();
                if let Some(v) = kv.get("toy_kinds") {
                    spec.kinds = v
                        .split(',')
                        .map(|k| k.parse().map_err(|e: Error| Error::config(e.to_string())))
                        .collect::<Result<_>>()?;
                }
                if let Some(v) = kv.parse_value("toy_train_per_class")? {
                    spec.train_per_class = v;
                }
                if let Some(v) = kv.parse_value("toy_test_per_class")? {
                    spec.test_per_class = v;
                }
                if let Some(v) = kv.parse_value("toy_points")? {
                    spec.points = v;
                }
                if let Some(v) = kv.parse_value("toy_noise")? {
                    spec.noise = v;
                }
                if let Some(v) = kv.parse_value("toy_normal_k")? {
                    spec.normal_k = v;
                }
                if let Some(v) = kv.parse_value("toy_seed")? {
                    spec.seed = v;
                }
                if spec.kinds.is_empty() || spec.points == 0 || spec.train_per_class == 0 {
                    return Err(Error::config(
                        "toy dataset needs kinds, points and training clouds",
                    ));
                }
                DataSource::Toy(spec)
            }
            path => DataSource::Manifest {
                train: PathBuf::from(path),
                test: kv.get("test_data").map(PathBuf::from),
            },
        };
        let mut arch_kv = kv.clone();
        if let DataSource::Toy(spec) = &data {
            if arch_kv.get("num_classes").is_none() {
                arch_kv.set("num_classes", spec.kinds.len());
            }
        }
        Ok(RunConfig {
            arch: ArchConfig::from_kv(&arch_kv)?,
            train: TrainConfig::from_kv(kv)?,
            data,
        })
    }

    /// The fully resolved configuration in the same `key = value` format.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for (k, v) in self
            .arch
            .to_pairs()
            .into_iter()
            .chain(self.train.to_pairs())
        {
            kv.set(&k, v);
        }
        match &self.data {
            DataSource::Toy(spec) => {
                kv.set("data", "toy");
                let kinds: Vec<&str> = spec.kinds.iter().map(|k| k.name()).collect();
                kv.set("toy_kinds", kinds.join(","));
                kv.set("toy_train_per_class", spec.train_per_class);
                kv.set("toy_test_per_class", spec.test_per_class);
                kv.set("toy_points", spec.points);
                kv.set("toy_noise", spec.noise);
                kv.set("toy_normal_k", spec.normal_k);
                kv.set("toy_seed", spec.seed);
            }
            DataSource::Manifest { train, test } => {
                kv.set("data", train.display());
                if let Some(t) = test {
                    kv.set("test_data", t.display());
                }
            }
        }
        kv
    }
}
