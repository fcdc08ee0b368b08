//! Convergence and invariance of the P1 solvers.

use std::f64::consts::PI;
use std::sync::Arc;

use operon_core::fem::{assemble_elasticity_stiffness, Mesh, NodalField, TRIANGLE_6};
use operon_core::forward::{poisson_solve, LoadPreset, PoissonConfig};
use operon_core::rng::rng_from_seed;
use rand::Rng;

/// `||u_h - u||_L2` with the six-point rule on every triangle.
fn l2_error(mesh: &Mesh, uh: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
    let mut sum = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = tri.map(|i| mesh.nodes()[i]);
        for (lam, w) in TRIANGLE_6 {
            let x = lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0];
            let y = lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1];
            let v = lam[0] * uh[tri[0]] + lam[1] * uh[tri[1]] + lam[2] * uh[tri[2]];
            sum += w * mesh.area(t) * (v - exact(x, y)).powi(2);
        }
    }
    sum.sqrt()
}

#[test]
fn manufactured_poisson_converges_at_second_order() {
    let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let errors: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let mesh = Arc::new(Mesh::new(n, n, 1.0, 1.0).unwrap());
            let cfg = PoissonConfig::with_preset(mesh.clone(), LoadPreset::Manufactured);
            let u = poisson_solve(&cfg, &NodalField::constant(&mesh, 1.0)).unwrap();
            l2_error(&mesh, u.values(), exact)
        })
        .collect();
    for pair in errors.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio} from errors {errors:?}");
    }
}

#[test]
fn rigid_motions_cost_no_energy_for_rough_moduli() {
    let mesh = Mesh::new(12, 9, 2.0, 1.0).unwrap();
    let mut rng = rng_from_seed(5);
    let e = NodalField::scalar((0..mesh.node_count()).map(|_| 1000.0 + 100.0 * rng.random::<f64>().exp()).collect()).unwrap();
    let k = assemble_elasticity_stiffness(&mesh, &e, 0.25).unwrap();
    let n = mesh.node_count();
    let scale = k.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let motions: [Box<dyn Fn(f64, f64) -> [f64; 2]>; 3] =
        [Box::new(|_, _| [1.0, 0.0]), Box::new(|_, _| [0.0, 1.0]), Box::new(|x, y| [-y, x])];
    for motion in motions {
        let mut u = vec![0.0; 2 * n];
        for (i, p) in mesh.nodes().iter().enumerate() {
            let [a, b] = motion(p[0], p[1]);
            u[i] = a;
            u[n + i] = b;
        }
        let r = k.matvec(&u).unwrap();
        let res = r.iter().fold(0.0_f64, |a, v| a.max(v.abs())) / scale;
        assert!(res < 1e-10, "relative residual {res}");
    }
}
