use rand::Rng as _;
use spidercnn::autodiff::Tape;
use spidercnn::config::{ArchConfig, Pooling, Variant};
use spidercnn::geometry::{estimate_normals, Point, PointCloud};
use spidercnn::models::Model;
use spidercnn::rng::SeedStream;
use spidercnn::Tensor;

fn cloud(n: usize, seed: u64, class: usize) -> PointCloud {
    let mut rng = SeedStream::new(seed).rng();
    let pts: Vec<Point> = (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let pc = PointCloud::new(pts).unwrap();
    let normals = estimate_normals(&pc, 8).unwrap();
    let parts = (0..n).map(|i| i % 3).collect();
    pc.with_normals(normals)
        .unwrap()
        .with_part_labels(parts)
        .unwrap()
        .with_class(class)
}

fn global_width(model: &mut Model, clouds: &[PointCloud]) -> Vec<usize> {
    let batch = model.make_batch(clouds).unwrap();
    let mut tape = Tape::new();
    let fwd = model
        .forward(&mut tape, &batch, false, &mut SeedStream::new(0).rng())
        .unwrap();
    tape.value(fwd.global.unwrap()).shape().to_vec()
}

fn permuted(pc: &PointCloud, perm: &[usize]) -> PointCloud {
    pc.select(perm)
}

#[test]
fn classifier_global_feature_widths() {
    let clouds = [cloud(48, 1, 0), cloud(48, 2, 1)];
    let mut cls3 = Model::build(&ArchConfig::cls3(10), 1).unwrap();
    assert_eq!(global_width(&mut cls3, &clouds), vec![2, 448]);
    let max_cfg = ArchConfig {
        pooling: Pooling::Max,
        ..ArchConfig::cls3(10)
    };
    assert_eq!(
        global_width(&mut Model::build(&max_cfg, 1).unwrap(), &clouds),
        vec![2, 224]
    );
    let cls4 = ArchConfig {
        num_classes: 10,
        ..ArchConfig::defaults(Variant::Cls4)
    };
    assert_eq!(cls4.channels, vec![32, 64, 128, 258]);
    assert_eq!(
        global_width(&mut Model::build(&cls4, 1).unwrap(), &clouds),
        vec![2, 2 * 482]
    );
    let fusion = ArchConfig {
        num_classes: 10,
        ..ArchConfig::defaults(Variant::Fusion)
    };
    assert_eq!(
        global_width(&mut Model::build(&fusion, 1).unwrap(), &clouds),
        vec![2, 256]
    );
}

#[test]
fn segmenter_uses_the_category_and_is_equivariant() {
    let cfg = ArchConfig {
        channels: vec![8, 8, 8, 8],
        neighbors: 8,
        head: vec![16],
        num_classes: 3,
        num_categories: 2,
        ..ArchConfig::defaults(Variant::Seg)
    };
    let mut model = Model::build(&cfg, 3).unwrap();
    let a = cloud(40, 5, 0);
    let la = model
        .predict(&model.make_batch(std::slice::from_ref(&a)).unwrap())
        .unwrap();
    assert_eq!(la.shape(), &[40, 3]);
    let b = a.clone().with_class(1);
    let lb = model.predict(&model.make_batch(&[b]).unwrap()).unwrap();
    assert!(la.max_abs_diff(&lb) > 1e-6);

    let perm: Vec<usize> = (0..40).map(|i| (i * 11) % 40).collect();
    let lp = model
        .predict(&model.make_batch(&[permuted(&a, &perm)]).unwrap())
        .unwrap();
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(
            &lp.data()[row * 3..row * 3 + 3],
            &la.data()[src * 3..src * 3 + 3]
        );
    }
}

#[test]
fn pointnet_and_fusion_are_permutation_invariant() {
    let pc = cloud(64, 7, 0);
    let perm: Vec<usize> = (0..64).rev().collect();
    for variant in [Variant::PointNet, Variant::Fusion] {
        let cfg = ArchConfig {
            num_classes: 5,
            ..ArchConfig::defaults(variant)
        };
        let mut m = Model::build(&cfg, 2).unwrap();
        let a = m
            .predict(&m.make_batch(std::slice::from_ref(&pc)).unwrap())
            .unwrap();
        let b = m
            .predict(&m.make_batch(&[permuted(&pc, &perm)]).unwrap())
            .unwrap();
        assert_eq!(a.data(), b.data(), "{variant:?}");
    }
}

#[test]
fn fusion_without_spider_branch_ignores_conv_weights() {
    let cfg = ArchConfig {
        channels: vec![8, 8, 8],
        neighbors: 8,
        num_classes: 5,
        ..ArchConfig::defaults(Variant::Fusion)
    };
    let mut model = Model::build(&cfg, 4).unwrap();
    for name in ["spider.proj.weight", "spider.proj.bias"] {
        let id = model.params.find(name).unwrap();
        let t = model.params.get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    let clouds = [cloud(40, 8, 0), cloud(40, 9, 1)];
    let batch = model.make_batch(&clouds).unwrap();
    let before = model.predict(&batch).unwrap();
    let step = model.params.find("spider.conv0.step").unwrap();
    for v in model.params.get_mut(step).data_mut() {
        *v *= -3.0;
    }
    let after = model.predict(&batch).unwrap();
    assert_eq!(before.data(), after.data());

    let mut tape = Tape::new();
    let fwd = model
        .forward(&mut tape, &batch, false, &mut SeedStream::new(0).rng())
        .unwrap();
    let g = tape.value(fwd.global.unwrap());
    for row in 0..2 {
        assert!(g.data()[row * 256..row * 256 + 128]
            .iter()
            .all(|&v| v == 0.0));
    }
}

#[test]
fn top1_pooling_equals_max_pooling() {
    let base = ArchConfig {
        channels: vec![8, 16, 16],
        neighbors: 10,
        num_classes: 4,
        ..ArchConfig::cls3(4)
    };
    let top1 = ArchConfig {
        pool_k: 1,
        ..base.clone()
    };
    let max = ArchConfig {
        pooling: Pooling::Max,
        ..base
    };
    let mut a = Model::build(&top1, 9).unwrap();
    let mut b = Model::build(&max, 9).unwrap();
    let clouds = [cloud(50, 10, 0), cloud(50, 11, 2)];
    let la = a.predict(&a.make_batch(&clouds).unwrap()).unwrap();
    let lb = b.predict(&b.make_batch(&clouds).unwrap()).unwrap();
    assert_eq!(la.data(), lb.data());
}

#[test]
fn logits_do_not_depend_on_batch_companions() {
    let cfg = ArchConfig {
        channels: vec![8, 8, 8],
        neighbors: 8,
        ..ArchConfig::cls3(3)
    };
    let mut model = Model::build(&cfg, 12).unwrap();
    let (x, y) = (cloud(30, 13, 0), cloud(45, 14, 1));
    let alone = model
        .predict(&model.make_batch(std::slice::from_ref(&x)).unwrap())
        .unwrap();
    let paired = model.predict(&model.make_batch(&[x, y]).unwrap()).unwrap();
    assert_eq!(alone.data(), &paired.data()[..3]);
}
