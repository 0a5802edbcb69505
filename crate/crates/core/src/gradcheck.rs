//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of every op's hand-written backward rule.

use crate::error::{Error, Result};
use crate::tensor::{Binder, ParamId, ParamStore, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalar_of(v: &Var<f64>) -> Result<f64> {
    v.value().item()
}

/// Compares `d loss / d param[index]` for each pick against central differences.
pub fn check_params<F>(store: &mut ParamStore<f64>, picks: &[(ParamId, usize)], step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&Binder<f64>) -> Result<Var<f64>>,
{
    let analytic = {
        let binder = Binder::training(store);
        let l = loss(&binder)?;
        l.backward()?;
        binder.take_grads()
    };
    let grad_of = |id: ParamId, idx: usize| -> f64 {
        analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map_or(0.0, |(_, g)| g.data()[idx])
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for &(id, idx) in picks {
        if idx >= store.get(id).value.len() {
            return Err(Error::invalid("gradcheck", format!("index {idx} out of range for {}", store.get(id).name)));
        }
        let orig = store.get(id).value.data()[idx];
        store.value_mut(id).data_mut()[idx] = orig + step;
        let up = scalar_of(&loss(&Binder::inference(store))?)?;
        store.value_mut(id).data_mut()[idx] = orig - step;
        let down = scalar_of(&loss(&Binder::inference(store))?)?;
        store.value_mut(id).data_mut()[idx] = orig;

        let numeric = (up - down) / (2.0 * step);
        let a = grad_of(id, idx);
        let rel = relative_error(a, numeric);
        report.checked += 1;
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!("{}[{idx}]: analytic {a:.6e} numeric {numeric:.6e}", store.get(id).name);
        }
    }
    Ok(report)
}

/// Gradient check with respect to every element of an input tensor.
pub fn check_input<F>(input: &Tensor<f64>, step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&Var<f64>) -> Result<Var<f64>>,
{
    let x = Var::leaf(input.clone(), true);
    loss(&x)?.backward()?;
    let analytic = x
        .grad()
        .map(|g| g.clone())
        .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = scalar_of(&loss(&Var::constant(probe.clone()))?)?;
        probe.data_mut()[i] = orig - step;
        let down = scalar_of(&loss(&Var::constant(probe.clone()))?)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        let rel = relative_error(a, numeric);
        report.checked += 1;
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!("input[{i}]: analytic {a:.6e} numeric {numeric:.6e}");
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Padding;

    const TOL: f64 = 1e-4;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    fn assert_ok(r: GradCheckReport, what: &str) {
        assert!(r.max_rel_error < TOL, "{what}: {} ({})", r.max_rel_error, r.worst);
    }

    /// Projects an output onto fixed random weights so every element matters.
    fn project(y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
        let w = Var::constant(random(y.shape(), seed));
        Ok(y.mul(&w)?.sum())
    }

    #[test]
    fn elementwise_ops() {
        let x = random(&[2, 3, 4], 1);
        let other = Var::constant(random(&[2, 3, 4], 2));
        assert_ok(check_input(&x, DEFAULT_STEP, |v| project(&v.tanh(), 3)).unwrap(), "tanh");
        assert_ok(check_input(&x, DEFAULT_STEP, |v| project(&v.exp(), 3)).unwrap(), "exp");
        assert_ok(check_input(&x, DEFAULT_STEP, |v| project(&v.relu(), 3)).unwrap(), "relu");
        assert_ok(check_input(&x, DEFAULT_STEP, |v| project(&v.mul(&other)?, 3)).unwrap(), "mul");
        assert_ok(check_input(&x, DEFAULT_STEP, |v| project(&other.sub(v)?, 3)).unwrap(), "sub");
        assert_ok(check_input(&x, DEFAULT_STEP, |v| v.mse(&other)).unwrap(), "mse lhs");
        assert_ok(check_input(&x, DEFAULT_STEP, |v| other.mse(v)).unwrap(), "mse rhs");
        assert_ok(
            check_input(&x, DEFAULT_STEP, |v| Ok(v.add_scalar(0.5).mul_scalar(-2.0).mean())).unwrap(),
            "scalar ops",
        );
    }

    #[test]
    fn structural_ops() {
        let x = random(&[2, 3, 4], 4);
        let other = Var::constant(random(&[2, 3, 2], 5));
        assert_ok(
            check_input(&x, DEFAULT_STEP, |v| {
                let cat = Var::concat_last(&[&other, v, &other])?;
                project(&cat.slice_last(1, 5)?, 6)
            })
            .unwrap(),
            "concat/slice",
        );
        let scale = Var::constant(random(&[4], 7));
        assert_ok(check_input(&x, DEFAULT_STEP, |v| project(&v.mul_channel(&scale)?, 8)).unwrap(), "mul_channel x");
        let xs = Var::constant(x.clone());
        assert_ok(
            check_input(&random(&[4], 9), DEFAULT_STEP, |s| project(&xs.mul_channel(s)?, 8)).unwrap(),
            "mul_channel scale",
        );
        let m = random(&[6, 3], 10);
        assert_ok(
            check_input(&m, DEFAULT_STEP, |v| {
                let g = v.gather_rows(&[5, 0, 5, 2, 1, 3, 3, 4])?;
                project(&g.scale_rows(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])?.sum_blocks(2)?, 11)
            })
            .unwrap(),
            "gather/scale/sum_blocks",
        );
        assert_ok(check_input(&x, DEFAULT_STEP, |v| project(&v.reshape([6, 4])?, 12)).unwrap(), "reshape");
        let img = random(&[1, 4, 6, 2], 20);
        assert_ok(check_input(&img, DEFAULT_STEP, |v| project(&v.space_to_depth(2)?, 21)).unwrap(), "space_to_depth");
        // keep probes away from the clamp kinks
        let inside = x.map(|v| if v.abs() > 0.45 && v.abs() < 0.55 { 0.3 } else { v });
        assert_ok(check_input(&inside, DEFAULT_STEP, |v| project(&v.clamp(-0.5, 0.5), 22)).unwrap(), "clamp");
    }

    #[test]
    fn matmul_and_linear() {
        let a = random(&[4, 3], 13);
        let b = Var::constant(random(&[3, 5], 14));
        let bias = Var::constant(random(&[5], 15));
        assert_ok(check_input(&a, DEFAULT_STEP, |v| project(&v.matmul(&b)?, 16)).unwrap(), "matmul lhs");
        let av = Var::constant(a.clone());
        assert_ok(
            check_input(&random(&[3, 5], 17), DEFAULT_STEP, |v| project(&av.matmul(v)?, 16)).unwrap(),
            "matmul rhs",
        );
        assert_ok(check_input(&a, DEFAULT_STEP, |v| project(&v.linear(&b, &bias)?, 18)).unwrap(), "linear x");
        assert_ok(
            check_input(&random(&[5], 19), DEFAULT_STEP, |bv| project(&av.linear(&b, bv)?, 18)).unwrap(),
            "linear bias",
        );
    }

    #[test]
    fn conv2d_chain_matches_finite_differences() {
        // random 1×8×8×2 input through conv3x3 → tanh → conv1x1, both paddings
        let x = random(&[1, 8, 8, 2], 20);
        for padding in [Padding::Zero, Padding::Reflect] {
            let w1 = Var::constant(random(&[3, 3, 2, 3], 21));
            let b1 = Var::constant(random(&[3], 22));
            let w2 = Var::constant(random(&[1, 1, 3, 2], 23));
            let net = |v: &Var<f64>| -> Result<Var<f64>> {
                let h = v.conv2d(&w1, Some(&b1), padding)?.tanh();
                project(&h.conv2d(&w2, None, padding)?, 24)
            };
            assert_ok(check_input(&x, DEFAULT_STEP, net).unwrap(), "conv2d input");

            let mut store = ParamStore::new();
            let wid = store.register("w", random(&[3, 3, 2, 3], 25));
            let bid = store.register("b", random(&[3], 26));
            let xv = Var::constant(x.clone());
            let picks: Vec<_> = (0..54).map(|i| (wid, i)).chain((0..3).map(|i| (bid, i))).collect();
            let r = check_params(&mut store, &picks, DEFAULT_STEP, |b| {
                project(&xv.conv2d(&b.var(wid), Some(&b.var(bid)), padding)?.tanh(), 27)
            })
            .unwrap();
            assert_ok(r, "conv2d weights");
        }
    }
}
