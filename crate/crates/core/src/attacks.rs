//! Minimal-perturbation adversarial attacks in the Euclidean norm.
//!
//! All three attacks are untargeted and defined against the network's own
//! prediction at x, not a ground-truth label. Each returns the smallest
//! misclassifying perturbation it finds; a returned success is re-verified
//! with a fresh forward pass before it is reported.
//!
//! * [`gradient_line_search`] — line search along the loss-gradient
//!   direction at x: exponential bracketing then bisection.
//! * [`pgd_l2_minimal`] — projected gradient ascent inside an ε-ball, with
//!   an outer bisection over ε down to the smallest ball that still flips
//!   the prediction.
//! * [`cw_l2`] — penalized minimization of ‖δ‖² + c·max(margin, −κ) with a
//!   bisection search over the trade-off constant c, optionally in a
//!   tanh-squashed space when box constraints are active.
//!
//! The attacks are deterministic: the same network, input and config
//! reproduce the same result bitwise.

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// Norm floor below which a gradient is unusable for a direction.
const GRAD_FLOOR: f64 = 1e-12;

/// Which attack to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Gradient,
    Pgd,
    Cw,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Gradient => "grad",
            AttackKind::Pgd => "pgd",
            AttackKind::Cw => "cw",
        }
    }
}

/// Forward/gradient evaluation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryCount {
    pub forwards: u64,
    pub gradients: u64,
}

/// Attack hyperparameters.
///
/// `step_size` is relative to ε for PGD and an absolute learning rate for
/// CW; `initial_const` and `confidence_kappa` apply to CW only. `seed` is
/// kept for config-file stability; the provided attacks are deterministic
/// and do not consume it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub max_iterations: usize,
    pub step_size: f64,
    pub binary_search_steps: usize,
    pub initial_const: f64,
    pub confidence_kappa: f64,
    pub box_constraints: Option<(f64, f64)>,
    pub seed: u64,
}

impl AttackConfig {
    pub fn gradient_default() -> Self {
        AttackConfig {
            max_iterations: 80,
            step_size: 1.0,
            binary_search_steps: 1,
            initial_const: 1.0,
            confidence_kappa: 0.0,
            box_constraints: None,
            seed: 0,
        }
    }

    pub fn pgd_default() -> Self {
        AttackConfig {
            max_iterations: 60,
            step_size: 0.2,
            binary_search_steps: 14,
            initial_const: 1.0,
            confidence_kappa: 0.0,
            box_constraints: None,
            seed: 0,
        }
    }

    pub fn cw_default() -> Self {
        AttackConfig {
            max_iterations: 250,
            step_size: 0.01,
            binary_search_steps: 9,
            initial_const: 0.1,
            confidence_kappa: 0.0,
            box_constraints: None,
            seed: 0,
        }
    }

    pub fn with_box(mut self, lo: f64, hi: f64) -> Self {
        self.box_constraints = Some((lo, hi));
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.binary_search_steps == 0 {
            return Err(Error::InvalidConfig("iteration counts must be positive".into()));
        }
        if self.step_size <= 0.0 || self.initial_const <= 0.0 {
            return Err(Error::InvalidConfig("step size and initial const must be positive".into()));
        }
        if self.confidence_kappa < 0.0 {
            return Err(Error::InvalidConfig("kappa must be non-negative".into()));
        }
        if let Some((lo, hi)) = self.box_constraints {
            if lo >= hi {
                return Err(Error::InvalidConfig(format!("box bounds ({lo}, {hi}) need lo < hi")));
            }
        }
        Ok(())
    }
}

/// Outcome of one attack on one sample. On failure only `queries` carries
/// information; on success the perturbation is the exact difference between
/// the verified adversarial point and x.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub kind: AttackKind,
    pub success: bool,
    pub perturbation: Option<Tensor>,
    pub norm: Option<f64>,
    pub adversarial_class: Option<usize>,
    pub queries: QueryCount,
}

impl AttackResult {
    fn miss(kind: AttackKind, queries: QueryCount) -> Self {
        AttackResult {
            kind,
            success: false,
            perturbation: None,
            norm: None,
            adversarial_class: None,
            queries,
        }
    }
}

fn clip_box(t: &Tensor, bounds: Option<(f64, f64)>) -> Tensor {
    match bounds {
        None => t.clone(),
        Some((lo, hi)) => {
            let mut out = t.clone();
            for v in out.data_mut() {
                *v = v.clamp(lo, hi);
            }
            out
        }
    }
}

/// Re-verifies a candidate adversarial point with a fresh forward pass and
/// assembles the result. A candidate that does not actually flip the
/// prediction is downgraded to a failure (and flagged, since the attack
/// loops only hand over verified flips).
fn finalize(
    kind: AttackKind,
    net: &Network,
    x: &Tensor,
    i_star: usize,
    candidate: Option<Tensor>,
    mut queries: QueryCount,
) -> Result<AttackResult> {
    let Some(x_adv) = candidate else {
        return Ok(AttackResult::miss(kind, queries));
    };
    queries.forwards += 1;
    let class = net.predict(&x_adv)?;
    if class == i_star {
        log::warn!("{} attack produced an unverifiable candidate", kind.name());
        return Ok(AttackResult::miss(kind, queries));
    }
    let perturbation = x_adv.sub(x)?;
    let norm = perturbation.norm();
    Ok(AttackResult {
        kind,
        success: true,
        perturbation: Some(perturbation),
        norm: Some(norm),
        adversarial_class: Some(class),
        queries,
    })
}

/// Shrinks a verified adversarial point toward x along the connecting
/// segment, keeping the misclassified end. Each probe is one forward pass.
fn segment_refine(
    net: &Network,
    x: &Tensor,
    i_star: usize,
    x_adv: Tensor,
    queries: &mut QueryCount,
) -> Result<Tensor> {
    let delta = x_adv.sub(x)?;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let probe = x.axpy(mid, &delta)?;
        queries.forwards += 1;
        if net.predict(&probe)? != i_star {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    x.axpy(hi, &delta)
}

/// Line search for the closest flip along the loss-gradient direction at x.
///
/// The direction is the normalized gradient of the NLL referenced to the
/// current prediction. Exponential search brackets the first misclassifying
/// step, bisection tightens it to `max(1e-4 * ||x||, 1e-6)`; steps beyond
/// `1e3 * ||x||` count as failure.
pub fn gradient_line_search(net: &Network, x: &Tensor, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let mut queries = QueryCount::default();
    queries.forwards += 1;
    let i_star = net.predict(x)?;
    queries.forwards += 1;
    queries.gradients += 1;
    let (_, grad) = net.loss_and_input_gradient(x, i_star)?;
    let grad_norm = grad.norm();
    if grad_norm < GRAD_FLOOR {
        return Ok(AttackResult::miss(AttackKind::Gradient, queries));
    }
    let direction = grad.scale(1.0 / grad_norm);
    let x_norm = x.norm();
    let t_max = 1e3 * x_norm;

    let flips = |t: f64, queries: &mut QueryCount| -> Result<(bool, Tensor)> {
        let probe = clip_box(&x.axpy(t, &direction)?, cfg.box_constraints);
        queries.forwards += 1;
        Ok((net.predict(&probe)? != i_star, probe))
    };

    // Exponential bracketing: lo always fails, hi (once found) succeeds.
    let mut t_lo = 0.0_f64;
    let mut t = (1e-2 * x_norm).max(1e-6);
    let mut hit: Option<(f64, Tensor)> = None;
    for _ in 0..cfg.max_iterations {
        if t > t_max {
            break;
        }
        let (ok, probe) = flips(t, &mut queries)?;
        if ok {
            hit = Some((t, probe));
            break;
        }
        t_lo = t;
        t *= 2.0;
    }
    let Some((mut t_hi, mut best)) = hit else {
        return Ok(AttackResult::miss(AttackKind::Gradient, queries));
    };

    let tol = (1e-4 * x_norm).max(1e-6);
    while t_hi - t_lo > tol {
        let mid = 0.5 * (t_lo + t_hi);
        let (ok, probe) = flips(mid, &mut queries)?;
        if ok {
            t_hi = mid;
            best = probe;
        } else {
            t_lo = mid;
        }
    }
    finalize(AttackKind::Gradient, net, x, i_star, Some(best), queries)
}

/// One PGD run inside a fixed ε-ball. Returns the first verified flip (with
/// the iterate that produced it) and the worst ball-constraint excess seen,
/// which tests pin to rounding error.
struct PgdInner {
    hit: Option<Tensor>,
    #[cfg_attr(not(test), allow(dead_code))]
    max_ball_excess: f64,
}

fn pgd_inner(
    net: &Network,
    x: &Tensor,
    i_star: usize,
    eps: f64,
    cfg: &AttackConfig,
    queries: &mut QueryCount,
) -> Result<PgdInner> {
    let step = cfg.step_size * eps;
    let mut current = x.clone();
    let mut max_excess = 0.0_f64;
    for _ in 0..cfg.max_iterations {
        queries.forwards += 1;
        queries.gradients += 1;
        let (logits, _, grad) = net.logits_loss_and_input_gradient(&current, i_star)?;
        if crate::tensor::argmax(&logits) != i_star {
            return Ok(PgdInner {
                hit: Some(current),
                max_ball_excess: max_excess,
            });
        }
        let grad_norm = grad.norm();
        if grad_norm < GRAD_FLOOR {
            break;
        }
        let stepped = current.axpy(step / grad_norm, &grad)?;
        // Clip to the box first, then shrink into the ε-ball: x is inside
        // the box, so scaling toward x preserves both constraints.
        let boxed = clip_box(&stepped, cfg.box_constraints);
        let delta = boxed.sub(x)?;
        let dn = delta.norm();
        current = if dn > eps {
            x.axpy(eps / dn, &delta)?
        } else {
            boxed
        };
        max_excess = max_excess.max(current.sub(x)?.norm() - eps);
    }
    // Final membership check for the last iterate.
    queries.forwards += 1;
    let hit = if net.predict(&current)? != i_star {
        Some(current)
    } else {
        None
    };
    Ok(PgdInner {
        hit,
        max_ball_excess: max_excess,
    })
}

/// Projected-gradient-descent minimal attack: bisects over the ball radius
/// ε, running a fixed-budget PGD ascent of the prediction-referenced loss
/// inside each ball, and returns the smallest verified flip.
pub fn pgd_l2_minimal(net: &Network, x: &Tensor, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let mut queries = QueryCount::default();
    queries.forwards += 1;
    let i_star = net.predict(x)?;

    let x_norm = x.norm();
    let eps_cap = 1e3 * (x_norm + 1.0);
    let mut best: Option<(f64, Tensor)> = None;
    let record = |hit: Option<Tensor>, best: &mut Option<(f64, Tensor)>| -> Result<bool> {
        if let Some(point) = hit {
            let norm = point.sub(x)?.norm();
            if best.as_ref().map_or(true, |(b, _)| norm < *b) {
                *best = Some((norm, point));
            }
            return Ok(true);
        }
        Ok(false)
    };

    // Find a working upper bound by exponential growth.
    let mut eps_hi = (5e-2 * x_norm).max(1e-3);
    let mut found = false;
    while eps_hi <= eps_cap {
        let inner = pgd_inner(net, x, i_star, eps_hi, cfg, &mut queries)?;
        if record(inner.hit, &mut best)? {
            found = true;
            break;
        }
        eps_hi *= 2.0;
    }
    if !found {
        return Ok(AttackResult::miss(AttackKind::Pgd, queries));
    }

    let mut eps_lo = 0.0_f64;
    for _ in 0..cfg.binary_search_steps {
        let mid = 0.5 * (eps_lo + eps_hi);
        let inner = pgd_inner(net, x, i_star, mid, cfg, &mut queries)?;
        if record(inner.hit, &mut best)? {
            eps_hi = mid;
        } else {
            eps_lo = mid;
        }
    }
    let candidate = best.map(|(_, point)| point);
    finalize(AttackKind::Pgd, net, x, i_star, candidate, queries)
}

/// Carlini-Wagner style L2 attack: Adam descent on
/// ‖δ‖² + c·max(Ψ^{i*} − Ψ^t, −κ) for every target class t, with c
/// adjusted per target by bisection (decreased on success, increased on
/// failure), returning the smallest flip over all targets. Descending the
/// per-target objective instead of the pooled max-over-classes margin
/// avoids stalling at the nearest logit gap when another class's boundary
/// is closer in input space. With box constraints the descent runs in a
/// tanh-squashed variable that maps onto the box. The best flip is
/// sharpened along its segment to x before it is returned, so the reported
/// point sits on the decision boundary up to rounding.
pub fn cw_l2(net: &Network, x: &Tensor, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let mut queries = QueryCount::default();
    queries.forwards += 1;
    let i_star = net.predict(x)?;
    let n = net.num_classes();

    // Variable-space encode/decode.
    let to_point = |w: &Tensor| -> Tensor {
        match cfg.box_constraints {
            None => w.clone(),
            Some((lo, hi)) => {
                let mut out = w.clone();
                for v in out.data_mut() {
                    *v = lo + (hi - lo) * 0.5 * (v.tanh() + 1.0);
                }
                out
            }
        }
    };
    let initial_w = match cfg.box_constraints {
        None => x.clone(),
        Some((lo, hi)) => {
            let mut out = x.clone();
            for v in out.data_mut() {
                let unit = ((*v - lo) / (hi - lo) * 2.0 - 1.0).clamp(-1.0 + 1e-9, 1.0 - 1e-9);
                *v = unit.atanh();
            }
            out
        }
    };

    let mut best: Option<(f64, Tensor)> = None;

    // Adam step size scaled to the input magnitude, so the descent can
    // cover boundary distances comparable to ‖x‖ within the budget.
    let lr = cfg.step_size * (1.0 + x.norm());
    const ADAM_B1: f64 = 0.9;
    const ADAM_B2: f64 = 0.999;
    const ADAM_EPS: f64 = 1e-8;

    for target in (0..n).filter(|t| *t != i_star) {
        let mut c = cfg.initial_const;
        let mut c_lo = 0.0_f64;
        let mut c_hi: Option<f64> = None;
        let mut warm_start: Option<Tensor> = None;

        for _ in 0..cfg.binary_search_steps {
            // Rounds after a success refine from where that success left
            // off; failed rounds restart from x.
            let mut w = warm_start.take().unwrap_or_else(|| initial_w.clone());
            let mut m1 = Tensor::zeros(w.shape());
            let mut m2 = Tensor::zeros(w.shape());
            let mut round_hit = false;
            for step in 0..cfg.max_iterations {
                let point = to_point(&w);
                queries.forwards += 1;
                queries.gradients += 2;
                let (logits, grads) =
                    net.logits_and_input_gradients(&point, &[i_star, target])?;
                if crate::tensor::argmax(&logits) != i_star {
                    round_hit = true;
                    let norm = point.sub(x)?.norm();
                    if best.as_ref().map_or(true, |(b, _)| norm < *b) {
                        best = Some((norm, point.clone()));
                    }
                }
                let margin = logits.data()[i_star] - logits.data()[target];

                // Objective gradient in point space.
                let delta = point.sub(x)?;
                let mut obj_grad = delta.scale(2.0);
                if margin > -cfg.confidence_kappa {
                    let margin_grad = grads[0].sub(&grads[1])?;
                    obj_grad = obj_grad.axpy(c, &margin_grad)?;
                }
                // Pull back to w-space through the squashing map.
                let w_grad = match cfg.box_constraints {
                    None => obj_grad,
                    Some((lo, hi)) => {
                        let mut out = obj_grad;
                        for (gv, wv) in out.data_mut().iter_mut().zip(w.data()) {
                            let th = wv.tanh();
                            *gv *= (hi - lo) * 0.5 * (1.0 - th * th);
                        }
                        out
                    }
                };
                let t = (step + 1) as f64;
                let bias1 = 1.0 - ADAM_B1.powf(t);
                let bias2 = 1.0 - ADAM_B2.powf(t);
                for i in 0..w.numel() {
                    let g = w_grad.data()[i];
                    let m = ADAM_B1 * m1.data()[i] + (1.0 - ADAM_B1) * g;
                    let v = ADAM_B2 * m2.data()[i] + (1.0 - ADAM_B2) * g * g;
                    m1.data_mut()[i] = m;
                    m2.data_mut()[i] = v;
                    w.data_mut()[i] -= lr * (m / bias1) / ((v / bias2).sqrt() + ADAM_EPS);
                }
            }

            if round_hit {
                warm_start = Some(w);
                c_hi = Some(c);
                c = 0.5 * (c_lo + c);
            } else {
                c_lo = c;
                c = match c_hi {
                    Some(hi) => 0.5 * (c_lo + hi),
                    None => c * 10.0,
                };
            }
        }
    }

    let candidate = match best {
        Some((_, point)) => Some(segment_refine(net, x, i_star, point, &mut queries)?),
        None => None,
    };
    finalize(AttackKind::Cw, net, x, i_star, candidate, queries)
}

pub fn run_attack(
    kind: AttackKind,
    net: &Network,
    x: &Tensor,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    match kind {
        AttackKind::Gradient => gradient_line_search(net, x, cfg),
        AttackKind::Pgd => pgd_l2_minimal(net, x, cfg),
        AttackKind::Cw => cw_l2(net, x, cfg),
    }
}

/// Runs every configured attack and reports the smallest successful norm as
/// the pointwise robustness estimate; `None` if every attack failed.
pub fn empirical_robustness(
    net: &Network,
    x: &Tensor,
    cfgs: &[(AttackKind, AttackConfig)],
) -> Result<(Option<f64>, Vec<AttackResult>)> {
    if cfgs.is_empty() {
        return Err(Error::InvalidConfig("no attacks configured".into()));
    }
    let mut results = Vec::with_capacity(cfgs.len());
    for (kind, cfg) in cfgs {
        results.push(run_attack(*kind, net, x, cfg)?);
    }
    let estimate = results
        .iter()
        .filter_map(|r| r.norm)
        .min_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((estimate, results))
}
