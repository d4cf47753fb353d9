//! Compares reverse-mode gradients of the DCIL training loss against central
//! finite differences.
//!
//! The loss is built from a placeholder standing in for the network output,
//! so the check covers the sigmoid head, completion, the unrolled correction
//! loop and the soft loss. Perturbations that flip a ReLU or clamp are
//! skipped, since a finite difference across a kink is meaningless.
//!
//! ```text
//! cargo run --release --example gradient_check -- 20
//! ```

use dcil::baselines::{Method, MethodConfig, MethodKind};
use dcil::constrained::{complete, Trajectory};
use dcil::constraints::ConstraintSet;
use dcil::dynamics::{UnicycleControl, UnicycleState};
use dcil::geometry::Circle;
use dcil_autodiff::{Bindings, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 10;
const EPS: f64 = 1e-6;

struct Case {
    set: ConstraintSet,
    gt: Trajectory,
    raw: Vec<f64>,
}

fn random_case(rng: &mut ChaCha8Rng) -> dcil::Result<Case> {
    let controls: Vec<UnicycleControl> = (0..H)
        .map(|_| UnicycleControl::new(rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5)))
        .collect();
    let gt = complete(&controls, &UnicycleState::default(), 0.3)?;
    let obstacles = (0..3)
        .map(|_| Circle::new(rng.gen_range(1.0..4.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.1..1.0)))
        .collect();
    let prev = UnicycleControl::new(rng.gen_range(0.0..1.0), rng.gen_range(-0.7..0.7));
    let raw = (0..2 * H).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Ok(Case {
        set: ConstraintSet::mobile_robot(prev, obstacles),
        gt,
        raw,
    })
}

fn evaluate(method: &Method, case: &Case, raw: &[f64], want_grad: bool) -> dcil::Result<(f64, u64, Vec<f64>)> {
    let mut g = Graph::new();
    let z = g.placeholder("raw", &[raw.len()]);
    let loss = method.loss_from_raw(&mut g, z, &case.set, &case.gt)?;
    let mut b = Bindings::new();
    b.bind(z, Tensor::vector(raw.to_vec()));
    g.forward(&Default::default(), &b)?;
    let value = g.value(loss).unwrap().item();
    let grad = if want_grad {
        g.backward(loss)?.wrt(z).data().to_vec()
    } else {
        Vec::new()
    };
    Ok((value, g.nonsmooth_signature(), grad))
}

fn main() -> dcil::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let method = Method::new(MethodKind::Dcil, MethodConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for i in 0..n {
        let case = random_case(&mut rng)?;
        let (loss, sig, grad) = evaluate(&method, &case, &case.raw, true)?;
        let mut case_worst = 0.0f64;
        for k in 0..case.raw.len() {
            let mut plus = case.raw.clone();
            let mut minus = case.raw.clone();
            plus[k] += EPS;
            minus[k] -= EPS;
            let (lp, sp, _) = evaluate(&method, &case, &plus, false)?;
            let (lm, sm, _) = evaluate(&method, &case, &minus, false)?;
            if sp != sig || sm != sig {
                skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * EPS);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
            case_worst = case_worst.max(rel);
        }
        worst = worst.max(case_worst);
        println!("case {i:2}: loss {loss:9.5}  max relative error {case_worst:.2e}");
    }
    println!("worst relative error {worst:.2e} ({skipped} coordinates skipped at kinks)");
    Ok(())
}
