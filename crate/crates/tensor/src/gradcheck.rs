//! Finite-difference verification of tape gradients.
//!
//! Runs in f64 so central differences are trustworthy. The function
//! under test maps leaf vars to a scalar loss; the harness compares
//! the tape gradient against (f(x+h) - f(x-h)) / 2h coordinate by
//! coordinate, sampling coordinates when the parameter count is large.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// (input index, flat element index, analytic, numeric) for the
    /// worst coordinate by relative error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn assert_close(&self, tol: f64) {
        if self.max_rel_err > tol {
            panic!(
                "gradcheck failed: max_abs={:.3e} max_rel={:.3e} worst={:?} (tol {tol:.1e})",
                self.max_abs_err, self.max_rel_err, self.worst
            );
        }
    }
}

pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, max_coords: usize, seed: u64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars);
        assert_eq!(tape.value(loss).len(), 1, "gradcheck loss must be scalar");
        tape.value(loss).data()[0]
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars);
    assert_eq!(tape.value(loss).len(), 1, "gradcheck loss must be scalar");
    let grads = tape.backward(loss);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    // coordinate sample
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            coords.push((i, j));
        }
    }
    if coords.len() > max_coords {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
    }

    let mut report = GradCheckReport {
        checked: coords.len(),
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, j) in coords {
        let orig = work[i].data()[j];
        let h = 1e-5 * orig.abs().max(1.0);
        work[i].data_mut()[j] = orig + h;
        let up = eval(&work);
        work[i].data_mut()[j] = orig - h;
        let down = eval(&work);
        work[i].data_mut()[j] = orig;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].data()[j];
        let abs = (a - numeric).abs();
        // denominator floored at 1 so tiny gradients are judged on
        // absolute error
        let rel = abs / a.abs().max(numeric.abs()).max(1.0);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((i, j, a, numeric));
        }
    }
    report
}
