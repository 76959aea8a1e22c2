use std::sync::Arc;
use std::time::Instant;

use fracgauge::geometry::{build_mesh, Domain};
use fracgauge::kernels::{AMode, FracParams, KernelBackend, KernelKind};
use fracgauge::operators::{operator_norm, OperatorError, SchrodingerOp};
use fracgauge::quadrature::{assemble_green_matrix, calibrate_phi, phi_measure, PhiTarget};
use fracgauge::verify::{check_gphi, run_counterexample};

fn main() {
    for alpha in [0.5f64, 1.0, 1.5] {
        let params = FracParams::new(alpha, 2).unwrap();
        for res in [16u32, 24, 32, 48] {
            let t0 = Instant::now();
            let mesh = Arc::new(build_mesh(&Domain::UnitDisk, res).unwrap());
            let backend =
                KernelBackend::new(KernelKind::ExactBall, params, Domain::UnitDisk).unwrap();
            let pot_factor = calibrate_phi(&backend, &mesh, PhiTarget::Potential).unwrap();
            let flat = check_gphi(
                params,
                &Domain::UnitDisk,
                &mesh,
                AMode::Calibrated { factor: pot_factor },
                0.1,
            )
            .unwrap();
            let op_factor = calibrate_phi(&backend, &mesh, PhiTarget::Operator).unwrap();
            let omega = phi_measure(
                &backend,
                &mesh,
                AMode::Calibrated { factor: op_factor },
                PhiTarget::Operator,
            )
            .unwrap();
            let mass: f64 = omega.masses().iter().sum();
            let matrix = Arc::new(assemble_green_matrix(&backend, &mesh).unwrap());
            let op = SchrodingerOp::new(matrix, omega).unwrap();
            let norm = match operator_norm(&op, 1e-9, 5000) {
                Ok(q) => q,
                Err(OperatorError::NormNonConvergence { estimate, .. }) => estimate,
                Err(e) => panic!("{e}"),
            };
            println!(
                "alpha {alpha}: res {res}: pot_factor {pot_factor:.6}, flat {flat:.6}, op_factor {op_factor:.6}, mass {mass:.3}, norm {norm:.6} ({:.1}s)",
                t0.elapsed().as_secs_f64()
            );
        }
    }
    for alpha in [0.5f64, 1.5] {
        let params = FracParams::new(alpha, 2).unwrap();
        let mesh = Arc::new(build_mesh(&Domain::UnitDisk, 32).unwrap());
        let backend = KernelBackend::new(KernelKind::ExactBall, params, Domain::UnitDisk).unwrap();
        let factor = calibrate_phi(&backend, &mesh, PhiTarget::Operator).unwrap();
        let rep = run_counterexample(params, &mesh, AMode::Calibrated { factor }, 20).unwrap();
        println!("counterexample alpha {alpha}: t_norm {:.6}", rep.t_norm_estimate);
        for (j, (t, p)) in rep
            .per_term_means
            .iter()
            .zip(rep.partial_sum_means.iter())
            .enumerate()
        {
            println!("  term {j}: mean {t:.5}, partial sum mean {p:.5}");
        }
    }
}
