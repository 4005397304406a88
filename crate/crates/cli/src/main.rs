use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spidercnn::autodiff::Tape;
use spidercnn::checkpoint::Checkpoint;
use spidercnn::config::{DataSource, KeyValues, RobustProtocol, RunConfig};
use spidercnn::geometry::{
    knn_index, read_off, sample_off_mesh, synth_shape, PointCloud, ShapeKind,
};
use spidercnn::io::{filter_scatter_csv, load_dataset, save_cloud, write_manifest, MetricsLog};
use spidercnn::models::{gradcheck_fixture, gradcheck_model, Model};
use spidercnn::rng::{tags, SeedStream};
use spidercnn::spiderconv::{
    taylor_feature_matrix, NeighborTable, SpiderConvParams, SpiderConvShape, TaylorBasis,
};
use spidercnn::training::{self, toy_dataset, Split, ToySpec};
use spidercnn::Tensor;

const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "spidercnn",
    version,
    about = "SpiderConv point-cloud networks on the CPU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Root seed for every random choice.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for outputs.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset as cloud CSVs plus a manifest.
    GenData {
        #[arg(
            long,
            default_value = "sphere,cube,cylinder,torus",
            value_delimiter = ','
        )]
        kinds: Vec<String>,
        #[arg(long, default_value_t = 600)]
        per_class: usize,
        /// Also write a test split of this many clouds per class.
        #[arg(long, default_value_t = 0)]
        test_per_class: usize,
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a point cloud from an OFF mesh.
    SampleMesh {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint and metrics log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured test data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy versus number of input points.
    Robustness {
        #[arg(long, default_value = "256,128,64,32", value_delimiter = ',')]
        sizes: Vec<usize>,
        /// `train` retrains at every size, `eval` only subsamples test clouds.
        #[arg(long, default_value = "train")]
        protocol: String,
        /// Model for the `eval` protocol; trained from the config if absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient sweep over a miniature classifier.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Scatter a learned filter over the unit ball as `x,y,z,value` CSV.
    ExportFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output channel, input channel and Taylor term: `i,v,t`.
        #[arg(long, default_value = "0,0,0")]
        filter: String,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Forward/backward timing of SpiderConv layers.
    Bench {
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Errors that map to exit code 3.
fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<spidercnn::Error>(),
            Some(spidercnn::Error::Config(_) | spidercnn::Error::Parse { .. })
        )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn prepare_out(common: &Common, resolved: &KeyValues) -> Result<()> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let text = format!("# {VERSION}\n{}", resolved.to_text());
    fs::write(common.out.join("config.txt"), text)?;
    fs::write(common.out.join("version.txt"), format!("{VERSION}\n"))?;
    Ok(())
}

fn resolve(cfg: &ConfigArgs, seed: Option<u64>) -> Result<RunConfig> {
    let mut kv = match &cfg.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::default(),
    };
    for o in &cfg.overrides {
        kv.set_override(o)?;
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    Ok(RunConfig::from_kv(&kv)?)
}

fn load_split(data: &DataSource) -> Result<Split> {
    match data {
        DataSource::Toy(spec) => Ok(toy_dataset(spec)?),
        DataSource::Manifest { train, test } => Ok(Split {
            train: load_dataset(train)?,
            test: match test {
                Some(t) => load_dataset(t)?,
                None => Vec::new(),
            },
        }),
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData {
            kinds,
            per_class,
            test_per_class,
            points,
            noise,
            common,
        } => gen_data(&kinds, per_class, test_per_class, points, noise, &common),
        Command::SampleMesh {
            input,
            points,
            common,
        } => {
            let mesh = read_off(std::io::BufReader::new(
                fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?,
            ))?;
            let seed = common.seed.unwrap_or(1);
            let cloud = sample_off_mesh(
                &mesh,
                points,
                &mut SeedStream::new(seed).child(tags::DATA).rng(),
            )?;
            let mut kv = KeyValues::default();
            kv.set("input", input.display());
            kv.set("points", points);
            kv.set("seed", seed);
            prepare_out(&common, &kv)?;
            let path = common.out.join("cloud.csv");
            save_cloud(&path, &cloud)?;
            println!("wrote {} points to {}", cloud.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { cfg, common } => {
            let run = resolve(&cfg, common.seed)?;
            prepare_out(&common, &run.to_kv())?;
            let split = load_split(&run.data)?;
            let mut model = Model::build(&run.arch, run.train.seed)?;
            let test = (!split.test.is_empty()).then_some(split.test.as_slice());
            let start = Instant::now();
            let report = training::train(&mut model, &split.train, test, &run.train)?;
            report.log.save(&common.out.join("metrics.csv"))?;
            model.to_checkpoint().save(&common.out.join("model.ckpt"))?;
            println!(
                "trained {} epochs in {:.1}s; loss {:.4} -> {:.4}",
                run.train.epochs,
                start.elapsed().as_secs_f64(),
                report.initial_loss,
                report.final_loss().unwrap_or(f64::NAN)
            );
            for metric in ["accuracy", "miou"] {
                if let Some(v) = report.log.last("test", metric) {
                    println!("test {metric}: {v:.4}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            cfg,
            common,
        } => {
            let run = resolve(&cfg, common.seed)?;
            let mut model = Model::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let mut kv = run.to_kv();
            kv.set("checkpoint", checkpoint.display());
            prepare_out(&common, &kv)?;
            let split = load_split(&run.data)?;
            let set = if split.test.is_empty() {
                &split.train
            } else {
                &split.test
            };
            let mut log = MetricsLog::default();
            training::record_eval(&mut model, set, 0, &mut log)?;
            log.save(&common.out.join("metrics.csv"))?;
            for r in &log.rows {
                println!("{} {}: {:.6}", r.split, r.metric, r.value);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Robustness {
            sizes,
            protocol,
            checkpoint,
            cfg,
            common,
        } => {
            let protocol: RobustProtocol = protocol.parse()?;
            let run = resolve(&cfg, common.seed)?;
            let mut kv = run.to_kv();
            kv.set("protocol", protocol);
            kv.set(
                "sizes",
                sizes
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            prepare_out(&common, &kv)?;
            let split = load_split(&run.data)?;
            if split.test.is_empty() {
                bail!("robustness needs test data");
            }
            let mut model = match (&checkpoint, protocol) {
                (Some(c), _) => Model::from_checkpoint(&Checkpoint::load(c)?)?,
                (None, RobustProtocol::EvalOnly) => {
                    let mut m = Model::build(&run.arch, run.train.seed)?;
                    training::train(&mut m, &split.train, None, &run.train)?;
                    m
                }
                (None, RobustProtocol::TrainAtSize) => Model::build(&run.arch, run.train.seed)?,
            };
            let points = training::robustness_sweep(
                &mut model,
                &split.train,
                &split.test,
                &sizes,
                protocol,
                &run.train,
            )?;
            let mut csv = String::from("size,accuracy\n");
            for p in &points {
                csv.push_str(&format!("{},{}\n", p.size, p.accuracy));
                println!("{:>6} points: {:.4}", p.size, p.accuracy);
            }
            fs::write(common.out.join("robustness.csv"), csv)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { common } => {
            let seed = common.seed.unwrap_or(1);
            let (mut model, batch) = gradcheck_fixture(seed)?;
            let report = gradcheck_model(&mut model, &batch, 1e-5)?;
            println!(
                "max relative error: {:.3e} at {} ({} parameters checked)",
                report.max_rel_err, report.worst_param, report.checked
            );
            if report.max_rel_err < GRADCHECK_TOL {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "gradient check failed: {:.3e} >= {GRADCHECK_TOL:e}",
                    report.max_rel_err
                );
                Ok(ExitCode::from(1))
            }
        }
        Command::ExportFilters {
            checkpoint,
            filter,
            layer,
            samples,
            common,
        } => {
            let idx: Vec<usize> = filter
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    spidercnn::Error::Config(format!("--filter expects i,v,t, got {filter:?}"))
                })?;
            let [i, v, t] = idx[..] else {
                return Err(spidercnn::Error::Config(format!(
                    "--filter expects i,v,t, got {filter:?}"
                ))
                .into());
            };
            let model = Model::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let rows = model.export_filter(layer, i, v, t, samples)?;
            let mut kv = KeyValues::default();
            kv.set("checkpoint", checkpoint.display());
            kv.set("filter", &filter);
            kv.set("layer", layer);
            kv.set("samples", samples);
            prepare_out(&common, &kv)?;
            let path = common.out.join("filters.csv");
            fs::write(&path, filter_scatter_csv(&rows))?;
            println!("wrote {} samples to {}", rows.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            points,
            repeats,
            common,
        } => bench(points, repeats, &common),
    }
}

fn gen_data(
    kinds: &[String],
    per_class: usize,
    test_per_class: usize,
    points: usize,
    noise: f64,
    common: &Common,
) -> Result<ExitCode> {
    let kinds = kinds
        .iter()
        .map(|k| {
            k.parse::<ShapeKind>()
                .map_err(|e| spidercnn::Error::Config(e.to_string()))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let spec = ToySpec {
        kinds: kinds.clone(),
        train_per_class: per_class,
        test_per_class,
        points,
        noise,
        seed: common.seed.unwrap_or(1),
        ..ToySpec::default()
    };
    let mut kv = KeyValues::default();
    kv.set(
        "kinds",
        kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(","),
    );
    kv.set("per_class", per_class);
    kv.set("test_per_class", test_per_class);
    kv.set("points", points);
    kv.set("noise", noise);
    kv.set("normal_k", spec.normal_k);
    kv.set("seed", spec.seed);
    prepare_out(common, &kv)?;
    let split = if per_class == 0 && test_per_class == 0 {
        bail!("nothing to generate");
    } else {
        toy_dataset(&ToySpec {
            train_per_class: per_class.max(1),
            ..spec.clone()
        })?
    };
    let dir = common.out.join("clouds");
    fs::create_dir_all(&dir)?;
    let write = |name: &str, clouds: &[PointCloud], manifest: &Path| -> Result<usize> {
        let mut entries = Vec::with_capacity(clouds.len());
        for (i, c) in clouds.iter().enumerate() {
            let label = c.class_label.expect("toy clouds are labeled");
            let file = format!("{name}_{}_{i:05}.csv", kinds[label].name());
            save_cloud(&dir.join(&file), c)?;
            entries.push((format!("clouds/{file}"), label));
        }
        write_manifest(manifest, &entries)?;
        Ok(entries.len())
    };
    let mut total = 0;
    if per_class > 0 {
        total += write("train", &split.train, &common.out.join("manifest.txt"))?;
    }
    if test_per_class > 0 {
        total += write("test", &split.test, &common.out.join("test_manifest.txt"))?;
    }
    println!("wrote {total} clouds under {}", common.out.display());
    Ok(ExitCode::SUCCESS)
}

fn bench(points: usize, repeats: usize, common: &Common) -> Result<ExitCode> {
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let seed = common.seed.unwrap_or(1);
    let mut rng = SeedStream::new(seed).child(tags::DATA).rng();
    let cloud = synth_shape(ShapeKind::Sphere, points, &mut rng, 0.01)?;
    let k = 20;
    let t0 = Instant::now();
    let index = knn_index(&cloud, k, true)?;
    let knn_ms = t0.elapsed().as_secs_f64() * 1e3;
    let table = Arc::new(NeighborTable::new(index.indices().to_vec(), k));
    let feats = taylor_feature_matrix(index.offsets(), TaylorBasis::Order3);
    let mut kv = KeyValues::default();
    kv.set("points", points);
    kv.set("repeats", repeats);
    kv.set("seed", seed);
    prepare_out(common, &kv)?;
    let mut csv = String::from("layer,c1,c2,forward_ms,backward_ms\n");
    println!("k-NN ({points} points, K={k}): {knn_ms:.2} ms");
    println!(
        "{:<8} {:>4} {:>4} {:>12} {:>12}",
        "layer", "c1", "c2", "forward ms", "backward ms"
    );
    for (li, (c1, c2)) in [(6, 32), (32, 64), (64, 128)].into_iter().enumerate() {
        let shape = SpiderConvShape { c1, c2, b: 3, k };
        let params = SpiderConvParams::init(shape, TaylorBasis::Order3, true, &mut rng);
        let input = Tensor::new(
            vec![points, c1],
            (0..points * c1)
                .map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5)
                .collect(),
        )?;
        let (mut fwd, mut bwd) = (f64::INFINITY, f64::INFINITY);
        for _ in 0..repeats {
            let mut tape = Tape::new();
            let x = tape.param(input.clone());
            let tf = tape.constant(feats.clone());
            let w = tape.param(params.taylor.clone());
            let s = tape.param(params.step.clone());
            let t = Instant::now();
            let g = tape.matmul(tf, w)?;
            let y = tape.spider_contract(x, g, s, table.clone())?;
            fwd = fwd.min(t.elapsed().as_secs_f64() * 1e3);
            let loss = tape.sum_all(y);
            let t = Instant::now();
            tape.backward(loss)?;
            bwd = bwd.min(t.elapsed().as_secs_f64() * 1e3);
        }
        println!("{li:<8} {c1:>4} {c2:>4} {fwd:>12.2} {bwd:>12.2}");
        csv.push_str(&format!("{li},{c1},{c2},{fwd},{bwd}\n"));
    }
    fs::write(common.out.join("bench.csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}
