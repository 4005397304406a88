use std::collections::BTreeMap;

/// Intersection over union of every part class in `0..num_parts`, averaged.
/// A part absent from both prediction and truth scores 1.
pub fn shape_miou(pred: &[usize], truth: &[usize], num_parts: usize) -> f64 {
    assert_eq!(
        pred.len(),
        truth.len(),
        "prediction and truth lengths differ"
    );
    let mut inter = vec![0usize; num_parts];
    let mut union = vec![0usize; num_parts];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    let total: f64 = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
        .sum();
    total / num_parts as f64
}

/// Mean IoU over shapes, and per category.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMetrics {
    pub miou: f64,
    pub per_category: BTreeMap<usize, f64>,
}

pub fn aggregate_miou(shapes: &[(usize, f64)]) -> SegMetrics {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(cat, v) in shapes {
        let e = sums.entry(cat).or_default();
        e.0 += v;
        e.1 += 1;
    }
    let miou = if shapes.is_empty() {
        0.0
    } else {
        shapes.iter().map(|s| s.1).sum::<f64>() / shapes.len() as f64
    };
    SegMetrics {
        miou,
        per_category: sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
    }
}

/// Row-wise argmax; ties go to the lower index.
pub fn argmax_rows(data: &[f64], cols: usize) -> Vec<usize> {
    data.chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
