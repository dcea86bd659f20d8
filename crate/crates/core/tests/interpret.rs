use cotrain::data::{generate_cohort, read_volume_file, CohortSpec};
use cotrain::geometry::{read_points_csv, PointCloud};
use cotrain::interpret::{
    gnn_explain, grad_cam_3d, project_cam_to_points, threshold_report, write_point_map, write_voxel_map,
    AttributionKind, AttributionMap, ExplainConfig,
};
use cotrain::model::{init_params, CnnConfig, GnnConfig, ModelState};
use cotrain::prep::{prepare, Prepared};

fn tiny() -> (CnnConfig, GnnConfig) {
    (
        CnnConfig {
            widths: vec![2, 3, 4, 4],
            fc: vec![16, 8, 1],
            crop: 8,
            dropout: 0.0,
            ..CnnConfig::default()
        },
        GnnConfig {
            widths: vec![4, 6, 8, 8],
            edge_hidden: 4,
            fc: vec![16, 8, 1],
            dropout: 0.0,
            ..GnnConfig::default()
        },
    )
}

fn model(seed: u64) -> ModelState {
    let (c, g) = tiny();
    init_params(&c, &g, seed).unwrap()
}

fn samples(n: usize, crop: usize, points: usize) -> Vec<Prepared> {
    let spec = CohortSpec {
        n_samples: n,
        dims: [16; 3],
        class_ratio: 0.5,
        seed: 11,
        ..CohortSpec::default()
    };
    generate_cohort(&spec)
        .unwrap()
        .iter()
        .map(|s| prepare(s, crop, points, 3).unwrap())
        .collect()
}

fn crop_coords(p: &Prepared, i: usize) -> [f64; 3] {
    let v = p.surface.to_voxel(&p.surface.cloud.points[i]);
    let b = &p.crop.bbox;
    [b.to_crop(0, v[2]), b.to_crop(1, v[1]), b.to_crop(2, v[0])]
}

#[test]
fn cam_is_nonnegative_bounded_and_masked() {
    let mut s = model(1);
    for p in samples(4, 8, 64) {
        for layer in 0..4 {
            for class in [0, 1] {
                let cam = grad_cam_3d(&mut s, &p, layer, class).unwrap();
                assert_eq!(cam.kind, AttributionKind::Voxel);
                assert_eq!(cam.dims, Some([8; 3]));
                assert_eq!(cam.values.len(), 512);
                for (i, &v) in cam.values.iter().enumerate() {
                    assert!((0.0..=1.0).contains(&v));
                    if !p.crop.mask.data[i] {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn cam_rejects_bad_layer() {
    let mut s = model(1);
    let p = &samples(1, 8, 32)[0];
    assert!(grad_cam_3d(&mut s, p, 4, 1).is_err());
}

#[test]
fn constant_logit_model_has_zero_cam() {
    let mut s = model(2);
    let w = s.param("cnn.fc2.weight").numel();
    s.set_param("cnn.fc2.weight", vec![0.0; w]).unwrap();
    for p in samples(3, 8, 32) {
        for layer in 0..4 {
            let cam = grad_cam_3d(&mut s, &p, layer, 1).unwrap();
            assert!(cam.values.iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn uniform_cam_projects_uniformly_and_idempotently() {
    for p in samples(3, 8, 64) {
        let cam = AttributionMap {
            kind: AttributionKind::Voxel,
            sample_id: p.id.clone(),
            dims: Some([8; 3]),
            values: p.crop.mask.data.iter().map(|&m| if m { 0.7 } else { 0.0 }).collect(),
        };
        let a = project_cam_to_points(&cam, &p.surface, &p.crop.bbox, &p.crop.mask).unwrap();
        assert_eq!(a.values.len(), 64);
        assert!(a.values.iter().all(|&v| v == 0.7));
        let b = project_cam_to_points(&cam, &p.surface, &p.crop.bbox, &p.crop.mask).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn octant_cam_only_reaches_points_in_that_octant() {
    let s = 16;
    for p in samples(3, s, 128) {
        let half = s / 2;
        let in_octant = |i: usize| {
            let q = p.crop.mask.coords(i);
            q.iter().all(|&c| c < half)
        };
        let cam = AttributionMap {
            kind: AttributionKind::Voxel,
            sample_id: p.id.clone(),
            dims: Some([s; 3]),
            values: (0..s * s * s)
                .map(|i| if p.crop.mask.data[i] && in_octant(i) { 1.0 } else { 0.0 })
                .collect(),
        };
        let proj = project_cam_to_points(&cam, &p.surface, &p.crop.bbox, &p.crop.mask).unwrap();
        for (i, &v) in proj.values.iter().enumerate() {
            let c = crop_coords(&p, i);
            // Nearest object voxel of a point on the boundary is at most one
            // voxel away along each axis.
            if v > 0.0 {
                assert!(c.iter().all(|&x| x < half as f64 + 0.5), "point {i} at {c:?}");
            }
            if c.iter().all(|&x| x < half as f64 - 1.5) {
                assert!(v > 0.0, "point {i} at {c:?} should be lit");
            }
        }
    }
}

#[test]
fn projection_needs_voxel_map() {
    let p = &samples(1, 8, 32)[0];
    let cam = AttributionMap {
        kind: AttributionKind::Point,
        sample_id: p.id.clone(),
        dims: None,
        values: vec![0.0; 512],
    };
    assert!(project_cam_to_points(&cam, &p.surface, &p.crop.bbox, &p.crop.mask).is_err());
}

#[test]
fn explainer_zero_steps_keeps_initial_masks() {
    let mut s = model(3);
    let p = &samples(1, 8, 32)[0];
    let cfg = ExplainConfig { steps: 0, ..ExplainConfig::default() };
    let ex = gnn_explain(&mut s, &p.surface.cloud, &p.id, &cfg).unwrap();
    assert!(ex.graph.n_edges() > 0);
    assert!(ex.raw_mask.iter().all(|&m| (m - 0.9).abs() < 1e-12));
    assert!(ex.losses.is_empty());
}

#[test]
fn explainer_outputs_are_normalized_and_shaped() {
    let mut s = model(4);
    let p = &samples(1, 8, 32)[0];
    let cfg = ExplainConfig { steps: 30, ..ExplainConfig::default() };
    let ex = gnn_explain(&mut s, &p.surface.cloud, &p.id, &cfg).unwrap();
    assert_eq!(ex.points.values.len(), 32);
    assert_eq!(ex.edges.values.len(), ex.graph.n_edges());
    assert!(ex.points.values.iter().chain(&ex.edges.values).all(|v| (0.0..=1.0).contains(v)));
    for i in 0..32 {
        let incident = (0..ex.graph.n_edges())
            .filter(|&k| ex.graph.sources[k] == i || ex.graph.targets[k] == i)
            .map(|k| ex.edges.values[k])
            .fold(0.0f64, f64::max);
        assert_eq!(ex.points.values[i], incident);
    }
}

#[test]
fn heavy_size_penalty_drives_masks_to_zero() {
    let mut s = model(5);
    let p = &samples(1, 8, 32)[0];
    let cfg = ExplainConfig {
        steps: 400,
        lr: 0.05,
        size_weight: 100.0,
        ..ExplainConfig::default()
    };
    let ex = gnn_explain(&mut s, &p.surface.cloud, &p.id, &cfg).unwrap();
    let max = ex.raw_mask.iter().cloned().fold(0.0, f64::max);
    assert!(max < 0.01, "largest mask {max}");
}

#[test]
fn explainer_loss_decreases_over_windows() {
    let mut s = model(6);
    for p in samples(3, 8, 48) {
        let ex = gnn_explain(&mut s, &p.surface.cloud, &p.id, &ExplainConfig::default()).unwrap();
        let l = &ex.losses;
        assert_eq!(l.len(), 200);
        let non_increasing = l.windows(2).filter(|w| w[1] <= w[0] + 1e-12).count();
        assert!(non_increasing as f64 >= 0.95 * (l.len() - 1) as f64, "{non_increasing} of {}", l.len() - 1);
        for w in l.chunks(10).collect::<Vec<_>>().windows(2) {
            assert!(w[1][0] <= w[0][0] + 1e-12);
        }
    }
}

fn line_cloud(n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect())
}

fn point_map(values: Vec<f64>) -> AttributionMap {
    AttributionMap {
        kind: AttributionKind::Point,
        sample_id: "t".into(),
        dims: None,
        values,
    }
}

#[test]
fn thresholds_on_trivial_maps() {
    let cloud = line_cloud(10);
    let none = threshold_report(&point_map(vec![0.0; 10]), &cloud, &[0.5, 0.8]).unwrap();
    assert!(none.iter().all(|t| t.clusters.is_empty()));
    let mut v = vec![0.0; 10];
    v[4] = 0.9;
    let one = threshold_report(&point_map(v), &cloud, &[0.5, 0.8]).unwrap();
    for t in &one {
        assert_eq!(t.clusters.len(), 1);
        assert_eq!(t.clusters[0].indices, vec![4]);
        assert_eq!(t.clusters[0].centroid, [0.4, 0.0, 0.0]);
    }
}

#[test]
fn high_threshold_clusters_nest_in_low_ones() {
    use rand::Rng;
    let mut rng = cotrain::rng::seeded(9);
    for _ in 0..20 {
        let cloud = PointCloud::new(
            (0..60)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect(),
        );
        let map = point_map((0..60).map(|_| rng.random::<f64>()).collect());
        let r = threshold_report(&map, &cloud, &[0.5, 0.8]).unwrap();
        for hi in &r[1].clusters {
            assert!(r[0]
                .clusters
                .iter()
                .any(|lo| hi.indices.iter().all(|i| lo.indices.contains(i))));
        }
        let gap = r[0].clusters.iter().flat_map(|c| &c.indices).count();
        assert_eq!(gap, map.values.iter().filter(|&&v| v > 0.5).count());
    }
}

#[test]
fn exports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = &samples(1, 8, 32)[0];
    let mut s = model(7);
    let cam = grad_cam_3d(&mut s, p, 3, 1).unwrap();
    let vpath = dir.path().join("cam.json");
    write_voxel_map(&vpath, &cam).unwrap();
    let (header, channels, mask) = read_volume_file(&vpath).unwrap();
    assert_eq!(header.dims, [8; 3]);
    assert_eq!(channels.len(), 1);
    assert!(mask.is_none());
    for (a, b) in channels[0].data.iter().zip(&cam.values) {
        assert_eq!(*a, *b as f32);
    }
    let pts = project_cam_to_points(&cam, &p.surface, &p.crop.bbox, &p.crop.mask).unwrap();
    let ppath = dir.path().join("points.csv");
    write_point_map(&ppath, &p.surface.cloud, &pts).unwrap();
    let (cloud, imp) = read_points_csv(&ppath).unwrap();
    assert_eq!(cloud.len(), 32);
    let imp = imp.unwrap();
    for (a, b) in imp.iter().zip(&pts.values) {
        assert!((a - b).abs() < 1e-12);
    }
}
