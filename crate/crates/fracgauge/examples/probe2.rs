use std::sync::Arc;
use std::time::Instant;

use fracgauge::geometry::{build_mesh, Domain};
use fracgauge::kernels::{AMode, FracParams, KernelBackend, KernelKind};
use fracgauge::quadrature::{calibrate_phi, matfree_apply, phi_measure, PhiTarget};

fn main() {
    for alpha in [0.5f64, 1.0, 1.5] {
        let params = FracParams::new(alpha, 2).unwrap();
        for res in [64u32, 96, 128] {
            let t0 = Instant::now();
            let mesh = Arc::new(build_mesh(&Domain::UnitDisk, res).unwrap());
            eprintln!("mesh built: {} nodes ({:.1}s)", mesh.len(), t0.elapsed().as_secs_f64());
            let backend =
                KernelBackend::new(KernelKind::ExactBall, params, Domain::UnitDisk).unwrap();
            let factor = calibrate_phi(&backend, &mesh, PhiTarget::Potential).unwrap();
            eprintln!("calibrated ({:.1}s)", t0.elapsed().as_secs_f64());
            let weights = phi_measure(
                &backend,
                &mesh,
                AMode::Calibrated { factor },
                PhiTarget::Potential,
            )
            .unwrap();
            eprintln!("measure built ({:.1}s)", t0.elapsed().as_secs_f64());
            let pot = matfree_apply(&backend, &mesh, weights.masses()).unwrap();
            eprintln!("applied ({:.1}s)", t0.elapsed().as_secs_f64());
            let mut max_abs = 0.0f64;
            let mut max_delta = 0.0f64;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (j, &p) in pot.iter().enumerate() {
                if mesh.delta[j] < 0.1 {
                    continue;
                }
                let dev = p - 1.0;
                lo = lo.min(dev);
                hi = hi.max(dev);
                if dev.abs() > max_abs {
                    max_abs = dev.abs();
                    max_delta = mesh.delta[j];
                }
            }
            println!(
                "alpha {alpha}: res {res}: flat {max_abs:.6} at delta {max_delta:.3}, dev range [{lo:+.6}, {hi:+.6}] ({:.1}s)",
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
