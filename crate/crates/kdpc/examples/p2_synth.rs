// Scratch probe: can fit_p2 recover a known linear map from linear data?
use kdpc::kernel::KernelSpec;
use kdpc::predictor::{fit_p2, future_jacobian_at_zero};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 15usize;
    let t = 600usize;
    // True linear map: lower-triangular ramp like the plant's.
    let m_true = DMatrix::from_fn(dim, dim, |i, j| {
        if i >= j + 2 {
            0.0025 * ((i - j) * (i - j - 1)) as f64 / 2.0
        } else {
            0.0
        }
    });
    for scale in [0.05f64, 0.2, 0.5] {
        // iid increment windows at this scale
        let d = DMatrix::from_fn(dim, t, |_, _| rng.gen_range(-scale..=scale));
        let targets = &m_true * &d;
        let med = kdpc::kernel::median_bandwidth(&d);
        for ff in [1.0f64, 4.0, 10.0, 30.0] {
            for mu in [1e-4f64, 1e-6, 1e-8] {
                let kern = KernelSpec::gaussian_rbf(med * ff).unwrap();
                let k_ff = kern.gram(&d);
                let jac = future_jacobian_at_zero(&kern, &d);
                match fit_p2(&k_ff, &targets, mu, &jac) {
                    Ok(p2) => {
                        let err = (&p2 - &m_true).norm() / m_true.norm();
                        // shrinkage operator diag: S = D (K+muI)^-1 J
                        let mut kreg = k_ff.clone();
                        for i in 0..t { kreg[(i,i)] += mu; }
                        let w = kreg.cholesky().unwrap().solve(&jac);
                        let s = &d * &w;
                        let diag_mean = (0..dim).map(|i| s[(i,i)]).sum::<f64>() / dim as f64;
                        let off: f64 = (0..dim).flat_map(|i| (0..dim).filter(move |j| *j != i).map(move |j| (i,j)))
                            .map(|(i,j)| s[(i,j)].powi(2)).sum::<f64>().sqrt();
                        println!("scale={scale} ff={ff:4} mu={mu:.0e}: p2err={err:.4} diag(S)~{diag_mean:.3} offdiag|S|={off:.3}");
                    }
                    Err(e) => println!("scale={scale} ff={ff:4} mu={mu:.0e}: fit failed: {e}"),
                }
            }
        }
    }
}
