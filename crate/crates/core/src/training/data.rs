use crate::error::Result;
use crate::geometry::{estimate_normals, synth_shape, PointCloud, ShapeKind};
use crate::par;
use crate::rng::{tags, SeedStream};

/// Synthetic shape-classification fixture. Class `i` is `kinds[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub kinds: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    /// Gaussian noise added to positions before normals are estimated.
    pub noise: f64,
    /// Neighbors used for normal estimation; 0 keeps positions only.
    pub normal_k: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            kinds: ShapeKind::ALL.to_vec(),
            train_per_class: 600,
            test_per_class: 150,
            points: 256,
            noise: 0.02,
            normal_k: 16,
            seed: 1,
        }
    }
}

/// Train and test splits, interleaved by class.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

fn generate(spec: &ToySpec, split: u64, per_class: usize) -> Result<Vec<PointCloud>> {
    let root = SeedStream::new(spec.seed).child(tags::DATA).child(split);
    let jobs: Vec<(usize, usize)> = (0..per_class)
        .flat_map(|i| (0..spec.kinds.len()).map(move |c| (i, c)))
        .collect();
    par::map_slice(&jobs, |&(i, c)| {
        let mut rng = root.child(c as u64).child(i as u64).rng();
        let cloud = synth_shape(spec.kinds[c], spec.points, &mut rng, spec.noise)?;
        let cloud = if spec.normal_k > 0 {
            let normals = estimate_normals(&cloud, spec.normal_k)?;
            cloud.with_normals(normals)?
        } else {
            PointCloud {
                normals: None,
                ..cloud
            }
        };
        Ok(cloud.with_class(c))
    })
    .into_iter()
    .collect()
}

pub fn toy_dataset(spec: &ToySpec) -> Result<Split> {
    Ok(Split {
        train: generate(spec, 0, spec.train_per_class)?,
        test: generate(spec, 1, spec.test_per_class)?,
    })
}
