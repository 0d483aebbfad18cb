use std::collections::{BTreeMap, HashMap};

use nalgebra::{Point3, Vector3};

const GROWTH: f64 = 1.15;
const MAX_ROUNDS: usize = 200;

/// Voxel-grid decimation result: one representative point per kept voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelPick {
    /// Index of the input point closest to its voxel centroid.
    pub index: usize,
    /// Mean of the voxel's unit normals, renormalised.
    pub normal: Vector3<f64>,
}

type Key = [i64; 3];

fn key(p: &Point3<f64>, voxel: f64) -> Key {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

fn pick_once(points: &[Point3<f64>], normals: &[Option<Vector3<f64>>], voxel: f64) -> Vec<VoxelPick> {
    struct Acc {
        sum: Vector3<f64>,
        members: Vec<usize>,
        normal: Vector3<f64>,
        normal_count: usize,
    }
    let mut cells: BTreeMap<Key, Acc> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let a = cells.entry(key(p, voxel)).or_insert_with(|| Acc {
            sum: Vector3::zeros(),
            members: Vec::new(),
            normal: Vector3::zeros(),
            normal_count: 0,
        });
        a.sum += p.coords;
        a.members.push(i);
        if let Some(n) = normals[i] {
            a.normal += n;
            a.normal_count += 1;
        }
    }
    let mut kept: Vec<VoxelPick> = Vec::new();
    let mut grid: HashMap<Key, Vec<usize>> = HashMap::new();
    for acc in cells.values() {
        if acc.normal_count == 0 || acc.normal.norm() < 1e-12 {
            continue;
        }
        let centroid = Point3::from(acc.sum / acc.members.len() as f64);
        let index = acc
            .members
            .iter()
            .copied()
            .min_by(|&a, &b| {
                (points[a] - centroid)
                    .norm_squared()
                    .total_cmp(&(points[b] - centroid).norm_squared())
            })
            .expect("voxel has members");
        let p = points[index];
        let k = key(&p, voxel);
        let crowded = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                (-1..=1).any(|dz| {
                    grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]).is_some_and(|list| {
                        list.iter().any(|&j| (points[kept[j].index] - p).norm() < voxel)
                    })
                })
            })
        });
        if crowded {
            continue;
        }
        grid.entry(k).or_default().push(kept.len());
        kept.push(VoxelPick {
            index,
            normal: acc.normal.normalize(),
        });
    }
    kept
}

/// Grows the voxel size from `initial_voxel` until at most `budget` picks
/// remain. Kept representatives are pairwise at least one voxel apart.
/// Points without a normal count toward centroids but are never picked alone.
pub fn voxel_decimate(
    points: &[Point3<f64>],
    normals: &[Option<Vector3<f64>>],
    budget: usize,
    initial_voxel: f64,
) -> (Vec<VoxelPick>, f64) {
    assert_eq!(points.len(), normals.len());
    let mut voxel = initial_voxel.max(1e-9);
    let mut picks = pick_once(points, normals, voxel);
    for _ in 0..MAX_ROUNDS {
        if picks.len() <= budget.max(1) {
            break;
        }
        voxel *= GROWTH;
        picks = pick_once(points, normals, voxel);
    }
    (picks, voxel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane(n: usize) -> Vec<Point3<f64>> {
        (0..n * n)
            .map(|i| Point3::new((i % n) as f64 * 1e-4, (i / n) as f64 * 1e-4, 0.0))
            .collect()
    }

    #[test]
    fn budget_and_spacing_on_dense_patch() {
        let pts = plane(100);
        let normals = vec![Some(Vector3::z()); pts.len()];
        let (picks, voxel) = voxel_decimate(&pts, &normals, 60, 1e-4);
        assert!(!picks.is_empty() && picks.len() <= 60);
        for (a, pa) in picks.iter().enumerate() {
            for pb in &picks[a + 1..] {
                assert!((pts[pa.index] - pts[pb.index]).norm() >= voxel);
            }
        }
    }

    #[test]
    fn normal_less_voxels_are_dropped() {
        let pts = plane(10);
        let normals = vec![None; pts.len()];
        assert!(voxel_decimate(&pts, &normals, 5, 1e-4).0.is_empty());
    }

    proptest! {
        #[test]
        fn never_exceeds_budget(budget in 1usize..80, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..500)
                .map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.1))
                .collect();
            let normals = vec![Some(Vector3::z()); pts.len()];
            let (picks, _) = voxel_decimate(&pts, &normals, budget, 0.01);
            prop_assert!(picks.len() <= budget);
        }
    }
}
