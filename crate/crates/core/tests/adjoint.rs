use clothsft::geometry::{build_template, top_row, Vec3};
use clothsft::physics::solver::ImplicitSystem;
use clothsft::physics::{step, step_backward, step_with_cache, ClothModel, ClothState, Stiffness};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DAMPING: f64 = 0.9;
const DT: f64 = 0.005;

fn perturbed_state(model: &ClothModel, rng: &mut ChaCha8Rng) -> ClothState {
    let mut s = model.rest_state();
    for (i, (p, v)) in s.positions.iter_mut().zip(&mut s.velocities).enumerate() {
        if !model.pinned[i] {
            p.iter_mut().for_each(|c| *c += rng.gen_range(-0.003..0.003));
            v.iter_mut().for_each(|c| *c += rng.gen_range(-0.05..0.05));
        }
    }
    s
}

fn forces(model: &ClothModel, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    model.masses.iter().map(|m| std::array::from_fn(|_| m * rng.gen_range(-10.0..10.0))).collect()
}

#[test]
fn adjoint_solve_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (rows, cols) in [(2, 2), (3, 3), (4, 4), (3, 5)] {
        let mesh = build_template(rows, cols, 0.05, &top_row(cols)).unwrap().with_masses(0.1).unwrap();
        let model = ClothModel::new(&mesh).unwrap();
        let n = model.num_vertices();
        let k = Stiffness::from_log10(2.0, -3.0, -4.0);
        let state = perturbed_state(&model, &mut rng);
        let (_, cache) = step_with_cache(&model, &state, &k, &forces(&model, &mut rng), DAMPING, DT).unwrap();
        let gv: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let adj = step_backward(&model, &state, &k, &cache, DAMPING, DT, &vec![0.0; 3 * n], &gv).unwrap();

        let system = ImplicitSystem { hessian: &cache.hessian, masses: &model.masses, dt2: DT * DT, pinned: &model.pinned };
        let inverse = system.to_dense().try_inverse().unwrap();
        let rhs = DVector::from_iterator(3 * n, gv.iter().enumerate().map(|(j, g)| if model.pinned[j / 3] { 0.0 } else { DAMPING * g }));
        let lambda = inverse.transpose() * rhs;
        let scale = lambda.amax();
        for j in 0..3 * n {
            assert!((adj.external[j] / DT - lambda[j]).abs() <= 1e-8 * scale, "{rows}x{cols} entry {j}");
        }
    }
}

#[test]
fn chained_steps_match_finite_differences_in_the_forces() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mesh = build_template(3, 3, 0.05, &top_row(3)).unwrap().with_masses(0.1).unwrap();
    let model = ClothModel::new(&mesh).unwrap();
    let n = model.num_vertices();
    let k = Stiffness::from_log10(1.5, -3.0, -4.0);
    let start = perturbed_state(&model, &mut rng);
    let ext = forces(&model, &mut rng);
    let w: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let steps = 3;
    let objective = |ext: &[Vec3]| {
        let mut s = start.clone();
        for _ in 0..steps {
            s = step(&model, &s, &k, ext, DAMPING, DT).unwrap();
        }
        s.positions.iter().flatten().zip(&w).map(|(x, w)| x * w).sum::<f64>()
    };

    let mut states = vec![start.clone()];
    let mut caches = Vec::new();
    for _ in 0..steps {
        let (s, c) = step_with_cache(&model, states.last().unwrap(), &k, &ext, DAMPING, DT).unwrap();
        states.push(s);
        caches.push(c);
    }
    let (mut gx, mut gv) = (w.clone(), vec![0.0; 3 * n]);
    let mut g_ext = vec![0.0; 3 * n];
    for t in (0..steps).rev() {
        let adj = step_backward(&model, &states[t], &k, &caches[t], DAMPING, DT, &gx, &gv).unwrap();
        g_ext.iter_mut().zip(&adj.external).for_each(|(a, b)| *a += b);
        (gx, gv) = (adj.positions, adj.velocities);
    }

    let h = 1e-6;
    let scale = g_ext.iter().fold(0f64, |m, v| m.max(v.abs()));
    for j in 0..3 * n {
        let (mut p, mut m) = (ext.clone(), ext.clone());
        p[j / 3][j % 3] += h;
        m[j / 3][j % 3] -= h;
        let fd = (objective(&p) - objective(&m)) / (2.0 * h);
        assert!((fd - g_ext[j]).abs() <= 1e-6 * scale, "force {j}: {fd} vs {}", g_ext[j]);
    }
}
