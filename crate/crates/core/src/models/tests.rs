use super::*;
use crate::geometry::{synth_shape, ShapeKind};

fn tiny(variant: Variant) -> ArchConfig {
    ArchConfig {
        channels: match variant {
            Variant::Cls4 | Variant::Seg => vec![4, 4, 5, 6],
            Variant::PointNet => vec![],
            _ => vec![4, 5, 6],
        },
        neighbors: 4,
        head: vec![8],
        num_classes: 3,
        num_categories: if variant == Variant::Seg { 2 } else { 0 },
        pointnet_mlp: vec![4, 6],
        projection: 5,
        ..ArchConfig::defaults(variant)
    }
}

fn clouds(n: usize, points: usize) -> Vec<crate::geometry::PointCloud> {
    (0..n)
        .map(|i| {
            let mut rng = SeedStream::new(i as u64).rng();
            let c = synth_shape(ShapeKind::ALL[i % 4], points, &mut rng, 0.0).unwrap();
            let parts = c
                .positions
                .iter()
                .map(|p| usize::from(p[2] > 0.0))
                .collect();
            c.with_class(i % 2).with_part_labels(parts).unwrap()
        })
        .collect()
}

#[test]
fn every_variant_builds_and_runs() {
    for v in [
        Variant::Cls3,
        Variant::Cls4,
        Variant::Seg,
        Variant::PointNet,
        Variant::Fusion,
    ] {
        let mut m = Model::build(&tiny(v), 1).unwrap();
        let b = m.make_batch(&clouds(2, 12)).unwrap();
        let logits = m.predict(&b).unwrap();
        let rows = if v == Variant::Seg { 24 } else { 2 };
        assert_eq!(logits.shape(), &[rows, 3], "{v:?}");
        assert!(logits.all_finite());
    }
}

#[test]
fn builders_reject_wrong_variant() {
    assert!(build_classifier(&tiny(Variant::Seg), 0).is_err());
    assert!(build_segmenter(&tiny(Variant::Cls3), 0).is_err());
    let mut seg = tiny(Variant::Seg);
    seg.num_categories = 0;
    assert!(build_segmenter(&seg, 0).is_err());
}

#[test]
fn accessors_expose_layer_parameters() {
    let m = Model::build(&tiny(Variant::Cls3), 2).unwrap();
    assert_eq!(m.num_conv_layers(), 3);
    assert_eq!(m.step_weights(0, 3, 5, 2).unwrap().len(), 4);
    assert!(m.step_weights(0, 4, 0, 0).is_none());
    assert_eq!(m.taylor_coeffs(1, 0).unwrap().0[0], 1.0);
    assert!(m.mlp_filter(0).is_none());
}

#[test]
fn checkpoint_restores_exactly() {
    let mut m = Model::build(&tiny(Variant::Fusion), 3).unwrap();
    m.bn[0].running_mean[1] = 0.25;
    let bytes = m.to_checkpoint().to_bytes().unwrap();
    let mut back = Model::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.params.values(), m.params.values());
    let b = m.make_batch(&clouds(3, 10)).unwrap();
    assert_eq!(m.predict(&b).unwrap(), back.predict(&b).unwrap());
}

#[test]
fn mlp_filter_model_runs() {
    let mut cfg = tiny(Variant::Cls3);
    cfg.filter = FilterVariant::Mlp(vec![6, 3]);
    let mut m = Model::build(&cfg, 4).unwrap();
    assert_eq!(m.mlp_filter(0).unwrap().outputs(), 3);
    let b = m.make_batch(&clouds(2, 10)).unwrap();
    assert!(m.predict(&b).unwrap().all_finite());
}

#[test]
fn batch_neighbors_are_global() {
    let b = Batch::from_clouds(&clouds(2, 8), 3, 6).unwrap();
    let t = b.neighbors.as_ref().unwrap();
    assert!(t.row(9).iter().all(|&q| (8..16).contains(&q)));
    assert_eq!(t.row(9)[0], 9);
    assert_eq!(b.row_cloud()[8], 1);
}
