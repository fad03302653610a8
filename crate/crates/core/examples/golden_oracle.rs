//! Regenerates the frozen golden values used in the tests, on refined grids
//! with a Richardson-style doubling check. Run with
//! `cargo run --release -p flockhydro-core --example golden_oracle`.
use flockhydro_core::equilibrium::EquilibriumTable;
use flockhydro_core::gci_chi::{assemble_weak_form, solve_chi};
use flockhydro_core::quadrature::{build_polar_grid, ModelParams, PotentialSpec};

fn main() {
    let v11 = PotentialSpec::SelfPropulsion { alpha: 1.0, beta: 1.0 };
    for n in [128usize, 256, 512] {
        let p = ModelParams::new(1.0, 2, v11.clone()).unwrap();
        let g = build_polar_grid(&p, n, n, 1e-18).unwrap();
        let t = EquilibriumTable::build(&p, &g).unwrap();
        println!("Z(sigma=1,d=2,V11) n={n}: {:.16e}", t.z);
    }
    for n in [128usize, 256, 512] {
        let p = ModelParams::new(0.2, 2, v11.clone()).unwrap();
        let g = build_polar_grid(&p, n, n, 1e-18).unwrap();
        let t = EquilibriumTable::build(&p, &g).unwrap();
        println!("c1(sigma=0.2,d=2,V11) n={n}: {:.16e}", t.c1);
    }
    for n in [128usize, 256, 512] {
        let p = ModelParams::new(0.3, 2, v11.clone()).unwrap();
        let g = build_polar_grid(&p, n, n, 1e-18).unwrap();
        let t = EquilibriumTable::build(&p, &g).unwrap();
        println!("c1(sigma=0.3,d=2,V11) n={n}: {:.16e}", t.c1);
    }
    // chi probe values for sigma = 1, d = 2, V = 0
    let pi = std::f64::consts::PI;
    let probes = [
        (pi / 2.0, 1.0),
        (pi / 4.0, 1.0),
        (pi / 2.0, 2.0),
        (0.75 * pi, 1.5),
        (pi / 4.0, 0.5),
    ];
    for n in [128usize, 256, 512] {
        let p = ModelParams::new(1.0, 2, PotentialSpec::Zero).unwrap();
        let g = build_polar_grid(&p, n, n, 1e-18).unwrap();
        let sys = assemble_weak_form(&p, &g).unwrap();
        let chi = solve_chi(&sys, 1e-12).unwrap();
        println!("chi(sigma=1,d=2,V=0) n={n} residual={:.3e}", chi.residual_norm);
        for &(t, r) in &probes {
            println!("  chi({t:.6}, {r}) = {:.16e}", chi.eval(t, r));
        }
        let c2 = flockhydro_core::coefficients::compute_c2(&chi, &p, &g).unwrap();
        println!("  c2 = {c2:.16e}");
    }
}
