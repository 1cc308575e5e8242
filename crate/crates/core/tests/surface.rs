mod common;

use common::*;
use densedet_core::dataio::{angle_to_vertex, generate_synthetic_scene, BAND_INNER};
use densedet_core::surface::{
    cse_loss, expected_geodesic_error, geodesic_distances, vertex_posterior, CorrespondenceSample, EmbeddingMatrix,
    Mesh, PixelEmbeddingField,
};
use densedet_core::trainkit::numeric_gradient;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, v: usize, d: usize, spread: f64) -> EmbeddingMatrix {
    EmbeddingMatrix::new(v, d, (0..v * d).map(|_| rng.gen_range(-spread..spread)).collect()).unwrap()
}

fn rows(e: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    (0..e.vertices()).map(|v| e.row(v).to_vec()).collect()
}

#[test]
fn posterior_contract_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..1000 {
        let (v, d) = (rng.gen_range(2..40), rng.gen_range(1..9));
        let e = random_matrix(&mut rng, v, d, 1.0);
        let psi: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = vertex_posterior(&e, &psi).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "case {case}");
        for (a, b) in p.iter().zip(naive_posterior(&rows(&e), &psi)) {
            assert!((a - b).abs() < 1e-9, "case {case}");
        }
        // Moving psi and every row by the same vector leaves distances alone.
        let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let moved: Vec<f64> = e.as_slice().iter().enumerate().map(|(k, x)| x + c[k % d]).collect();
        let e2 = EmbeddingMatrix::new(v, d, moved).unwrap();
        let psi2: Vec<f64> = psi.iter().zip(&c).map(|(a, b)| a + b).collect();
        for (a, b) in p.iter().zip(vertex_posterior(&e2, &psi2).unwrap()) {
            assert!((a - b).abs() < 1e-9, "case {case}");
        }
    }
}

#[test]
fn posterior_survives_large_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let e = random_matrix(&mut rng, 10, 3, 100.0);
    let psi = [500.0, -400.0, 300.0];
    let p = vertex_posterior(&e, &psi).unwrap();
    assert!(p.iter().all(|x| x.is_finite()));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn cse_loss_is_mean_negative_log_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let (v, d, size) = (rng.gen_range(3..20), rng.gen_range(1..5), rng.gen_range(1..5));
        let e = random_matrix(&mut rng, v, d, 1.0);
        let field =
            PixelEmbeddingField::new(d, size, (0..d * size * size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let samples: Vec<CorrespondenceSample> = (0..rng.gen_range(1..8))
            .map(|_| CorrespondenceSample {
                row: rng.gen_range(0..size),
                col: rng.gen_range(0..size),
                gt_vertex: rng.gen_range(0..v),
                image_id: 0,
            })
            .collect();
        let got = cse_loss(&e, &field, &samples).unwrap();
        let want: f64 = samples
            .iter()
            .map(|s| -naive_posterior(&rows(&e), &field.pixel(s.row, s.col))[s.gt_vertex].ln())
            .sum::<f64>()
            / samples.len() as f64;
        assert!((got.loss - want).abs() < 1e-10, "{} vs {want}", got.loss);

        let num_e = numeric_gradient(
            |x| cse_loss(&EmbeddingMatrix::new(v, d, x.to_vec()).unwrap(), &field, &samples).unwrap().loss,
            e.as_slice(),
            1e-6,
        )
        .unwrap();
        for (a, n) in got.grad_embedding.iter().zip(&num_e) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }
}

#[test]
fn geodesics_match_bellman_ford() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..200 {
        let n = rng.gen_range(2..30);
        let positions: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen(), rng.gen()]).collect();
        // Random spanning tree plus extra chords keeps the graph connected.
        let mut edges: Vec<(usize, usize, f64)> =
            (1..n).map(|k| (rng.gen_range(0..k), k, rng.gen_range(0.1..3.0))).collect();
        for _ in 0..rng.gen_range(0..2 * n) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                edges.push((a, b, rng.gen_range(0.1..3.0)));
            }
        }
        let mesh = Mesh::new(positions, edges.clone()).unwrap();
        let src = rng.gen_range(0..n);
        let got = geodesic_distances(&mesh, src).unwrap();
        for (a, b) in got.iter().zip(bellman_ford(n, &edges, src)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn circle_geodesics_and_expected_error() {
    let v = 12;
    let mesh = Mesh::circle(v).unwrap();
    let chord = 2.0 * (std::f64::consts::PI / v as f64).sin();
    let d = geodesic_distances(&mesh, 0).unwrap();
    for (k, dk) in d.iter().enumerate() {
        let hops = k.min(v - k) as f64;
        assert!((dk - hops * chord).abs() < 1e-12);
    }
    let mut p = vec![0.0; v];
    p[0] = 1.0;
    assert_eq!(expected_geodesic_error(&p, 0, &mesh).unwrap(), 0.0);
    let uniform = vec![1.0 / v as f64; v];
    let want = d.iter().sum::<f64>() / v as f64;
    assert!((expected_geodesic_error(&uniform, 0, &mesh).unwrap() - want).abs() < 1e-12);
    assert!(expected_geodesic_error(&[0.5, 0.2], 0, &mesh).is_err());
}

#[test]
fn mesh_text_round_trip() {
    let mesh = Mesh::circle(9).unwrap();
    assert_eq!(Mesh::parse(&mesh.to_text()).unwrap(), mesh);
    assert!(Mesh::parse("mesh 2 1\n0 0\n1 0\n0 0 1\n").is_err());
    assert!(Mesh::parse("mesh 3 1\n0 0\n1 0\n2 0\n0 1 1\n").is_err());
}

#[test]
fn angle_to_vertex_is_nearest_vertex() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..5000 {
        let v = rng.gen_range(8..64);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        assert_eq!(angle_to_vertex(theta, v), nearest_vertex(theta, v), "theta {theta} v {v}");
    }
}

#[test]
fn scene_correspondences_are_consistent() {
    for seed in 0..20 {
        let scene = generate_synthetic_scene(seed, 32, 64).unwrap();
        assert!(!scene.ellipses.is_empty() && scene.ellipses.len() <= 3);
        assert_eq!(scene.gt_boxes.len(), scene.ellipses.len());
        assert_eq!(scene.mesh.vertex_count(), 32);
        let mut seen = std::collections::HashSet::new();
        for c in &scene.gt_correspondences {
            let s = c.sample;
            assert!(seen.insert((s.row, s.col)), "pixel supervised twice");
            let e = scene.ellipses[c.instance];
            let (r, theta) = e.polar(s.col as f64 + 0.5, s.row as f64 + 0.5);
            assert!((BAND_INNER..=1.0).contains(&r));
            assert_eq!(s.gt_vertex, nearest_vertex(theta, 32));
            assert_eq!(s.image_id, seed);
        }
        assert_eq!(generate_synthetic_scene(seed, 32, 64).unwrap(), scene);
    }
}
