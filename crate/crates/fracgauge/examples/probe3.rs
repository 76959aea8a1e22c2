use std::time::Instant;

use nalgebra::DMatrix;

fn main() {
    for n in [2048usize, 4096] {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let d = (i as f64 - j as f64).abs();
                m[(i, j)] = 0.9f64.powf(d) * 0.1;
            }
            m[(i, i)] += 1.0;
        }
        let t = Instant::now();
        let chol = m.cholesky().expect("spd");
        let dt = t.elapsed().as_secs_f64();
        let flops = (n as f64).powi(3) / 3.0;
        eprintln!(
            "n={n}: cholesky {dt:.2}s ({:.2} GFLOP/s), l00={:.3}",
            flops / dt / 1e9,
            chol.l_dirty()[(0, 0)]
        );
    }
}
