//! Alignment and robustness metrics for piecewise-linear classifiers.
//!
//! For a score vector Ψ with predicted class i* = argmax Ψ, the module
//! computes:
//!
//! * the alignment α(x) = |⟨x, ∇Ψ^{i*}(x)⟩| / ‖∇Ψ^{i*}(x)‖,
//! * the linearized robustness ρ̃(x) = min_{j≠i*} (Ψ^{i*}−Ψ^j)/‖∇Ψ^{i*}−∇Ψ^j‖
//!   together with its minimizer j*,
//! * the binarized alignment α†(x) built from g† = ∇(Ψ^{i*}−Ψ^{j*})(x),
//! * the decomposition Ψ^i(x) = ⟨x, ∇ₓΨ^i(x)⟩ + ⟨b, ∇_bΨ^i(x)⟩ into a
//!   linear term and a locally constant bias term, and
//! * the pointwise upper bounds on ρ̃ assembled from these pieces, both at
//!   x and at the shifted point ξ = x + (β†/‖g†‖)·ḡ†.
//!
//! Image inputs are flattened row-major for every inner product.

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// Norm floor below which a gradient is treated as degenerate (zero).
pub const DEGENERATE_NORM_FLOOR: f64 = 1e-12;

/// Per-sample bundle of alignment/robustness quantities and bound terms.
///
/// Optional fields are `None` when the quantity could not be computed
/// (degenerate gradient at x or ξ); present bounds always dominate
/// `rho_tilde` up to rounding.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// Predicted class i*.
    pub i_star: usize,
    /// Minimizer j* of the linearized-robustness quotient.
    pub j_star: usize,
    pub alpha: Option<f64>,
    pub alpha_dagger: f64,
    pub rho_tilde: f64,
    /// Saliency map g = ∇Ψ^{i*}(x).
    pub g: Tensor,
    /// Binarized saliency map g† = ∇(Ψ^{i*}−Ψ^{j*})(x).
    pub g_dagger: Tensor,
    /// Locally constant score difference β† = (Ψ^{i*}−Ψ^{j*}) − ⟨x, g†⟩.
    pub beta_dagger: f64,
    /// Binarized score gap Ψ†(x) = Ψ^{i*}(x) − Ψ^{j*}(x).
    pub psi_dagger: f64,
    /// Shifted point ξ = x + (β†/‖g†‖)·ḡ†.
    pub xi: Tensor,
    /// γ = ∇Ψ^{i*}(ξ); `None` if degenerate.
    pub gamma: Option<Tensor>,
    /// α† + |β†|/‖g†‖.
    pub bound_t2a: f64,
    /// α + ‖x‖·‖ḡ†−ḡ‖ + |β†|/‖g†‖; `None` when α is degenerate.
    pub bound_t2b: Option<f64>,
    /// |⟨ξ, γ̄⟩| + ‖ξ‖·‖ḡ†−γ̄‖; `None` when γ is degenerate.
    pub bound_t3: Option<f64>,
    /// First summand of `bound_t3`.
    pub xi_alignment_term: Option<f64>,
    /// ‖ḡ†−ḡ‖.
    pub gdagger_g_distance: Option<f64>,
    /// ‖ḡ†−γ̄‖.
    pub gdagger_gamma_distance: Option<f64>,
    /// Whether the prediction at ξ matches the prediction at x.
    pub f_xi_equals_f_x: Option<bool>,
}

/// Alignment between an input and its saliency map.
pub fn alignment(net: &Network, x: &Tensor) -> Result<f64> {
    let i_star = net.predict(x)?;
    let g = net.input_gradient(x, i_star)?;
    alignment_of(x, &g)
}

fn alignment_of(x: &Tensor, g: &Tensor) -> Result<f64> {
    let norm = g.norm();
    if norm < DEGENERATE_NORM_FLOOR {
        return Err(Error::DegenerateSaliency(format!(
            "saliency norm {norm:.3e} below {DEGENERATE_NORM_FLOOR:.0e}"
        )));
    }
    Ok(x.dot(g)?.abs() / norm)
}

/// Linearized robustness ρ̃(x) and its minimizing class j*.
///
/// Computes one input gradient per class. Classes whose gradient equals the
/// predicted class's gradient (difference norm below the degeneracy floor)
/// are skipped with a warning; if every competitor is skipped the saliency
/// is degenerate.
pub fn linearized_robustness(net: &Network, x: &Tensor) -> Result<(f64, usize)> {
    let (logits, grads) = net.logits_and_all_input_gradients(x)?;
    let i_star = crate::tensor::argmax(&logits);
    let mut best: Option<(f64, usize)> = None;
    for j in 0..net.num_classes() {
        if j == i_star {
            continue;
        }
        let diff = grads[i_star].sub(&grads[j])?;
        let denom = diff.norm();
        if denom < DEGENERATE_NORM_FLOOR {
            log::warn!("class {j}: gradient equals predicted-class gradient, skipping quotient");
            continue;
        }
        let quotient = (logits.data()[i_star] - logits.data()[j]) / denom;
        if best.map_or(true, |(q, _)| quotient < q) {
            best = Some((quotient, j));
        }
    }
    best.ok_or_else(|| {
        Error::DegenerateSaliency("every class pair has identical gradients".into())
    })
}

/// Binarized alignment α†(x) = |⟨x, g†⟩| / ‖g†‖ with j* taken from the
/// linearized-robustness minimizer.
pub fn binarized_alignment(net: &Network, x: &Tensor) -> Result<f64> {
    let (_, j_star) = linearized_robustness(net, x)?;
    let i_star = net.predict(x)?;
    let (_, grads) = net.logits_and_input_gradients(x, &[i_star, j_star])?;
    let g_dagger = grads[0].sub(&grads[1])?;
    alignment_of(x, &g_dagger)
}

/// Splits score `i` into ⟨x, ∇ₓΨ^i(x)⟩ and the locally constant bias term
/// ⟨b, ∇_bΨ^i(x)⟩; their sum reproduces Ψ^i(x) exactly off kinks.
pub fn homogeneous_decomposition(net: &Network, x: &Tensor, class: usize) -> Result<(f64, f64)> {
    let g = net.input_gradient(x, class)?;
    let linear_term = x.dot(&g)?;
    let bias_grad = net.bias_gradient(x, class)?;
    let b = net.bias_vector();
    let beta = b
        .iter()
        .zip(bias_grad.data())
        .map(|(bi, gi)| bi * gi)
        .sum();
    Ok((linear_term, beta))
}

/// β† = β^{i*}(x) − β^{j*}(x) computed through bias gradients. The primary
/// route in [`bound_report`] derives β† from the score identity instead;
/// tests cross-check the two.
pub fn beta_dagger_via_bias_gradients(
    net: &Network,
    x: &Tensor,
    i_star: usize,
    j_star: usize,
) -> Result<f64> {
    let (_, beta_i) = homogeneous_decomposition(net, x, i_star)?;
    let (_, beta_j) = homogeneous_decomposition(net, x, j_star)?;
    Ok(beta_i - beta_j)
}

/// Computes the full per-sample report: alignment quantities, the score
/// decomposition and every bound term, plus the shifted-point diagnostics.
pub fn bound_report(net: &Network, x: &Tensor) -> Result<AlignmentReport> {
    let (logits, grads) = net.logits_and_all_input_gradients(x)?;
    let i_star = crate::tensor::argmax(&logits);

    let mut best: Option<(f64, usize)> = None;
    for j in 0..net.num_classes() {
        if j == i_star {
            continue;
        }
        let diff = grads[i_star].sub(&grads[j])?;
        let denom = diff.norm();
        if denom < DEGENERATE_NORM_FLOOR {
            log::warn!("class {j}: gradient equals predicted-class gradient, skipping quotient");
            continue;
        }
        let quotient = (logits.data()[i_star] - logits.data()[j]) / denom;
        if best.map_or(true, |(q, _)| quotient < q) {
            best = Some((quotient, j));
        }
    }
    let (rho_tilde, j_star) = best.ok_or_else(|| {
        Error::DegenerateSaliency("every class pair has identical gradients".into())
    })?;

    let g = grads[i_star].clone();
    let g_dagger = grads[i_star].sub(&grads[j_star])?;
    let g_dagger_norm = g_dagger.norm();
    let psi_dagger = logits.data()[i_star] - logits.data()[j_star];
    let linear_term = x.dot(&g_dagger)?;
    // Score identity: Ψ† = ⟨x, g†⟩ + β†, so the bias term is the remainder.
    let beta_dagger = psi_dagger - linear_term;
    let alpha_dagger = linear_term.abs() / g_dagger_norm;
    let bias_ratio = beta_dagger.abs() / g_dagger_norm;
    let bound_t2a = alpha_dagger + bias_ratio;

    let g_norm = g.norm();
    let (alpha, bound_t2b, gdagger_g_distance) = if g_norm < DEGENERATE_NORM_FLOOR {
        (None, None, None)
    } else {
        let alpha = x.dot(&g)?.abs() / g_norm;
        let dist = g_dagger
            .scale(1.0 / g_dagger_norm)
            .sub(&g.scale(1.0 / g_norm))?
            .norm();
        (
            Some(alpha),
            Some(alpha + x.norm() * dist + bias_ratio),
            Some(dist),
        )
    };

    // Shifted point ξ = x + (β†/‖g†‖)·ḡ†, not clipped to any input box.
    let shift = beta_dagger / (g_dagger_norm * g_dagger_norm);
    let xi = x.axpy(shift, &g_dagger)?;
    let gamma = net.input_gradient(&xi, i_star)?;
    let gamma_norm = gamma.norm();
    let (gamma, xi_alignment_term, bound_t3, gdagger_gamma_distance, f_xi_equals_f_x) =
        if gamma_norm < DEGENERATE_NORM_FLOOR {
            (None, None, None, None, None)
        } else {
            let gamma_bar = gamma.scale(1.0 / gamma_norm);
            let xi_term = xi.dot(&gamma_bar)?.abs();
            let dist = g_dagger.scale(1.0 / g_dagger_norm).sub(&gamma_bar)?.norm();
            let bound = xi_term + xi.norm() * dist;
            let same = net.predict(&xi)? == i_star;
            (Some(gamma), Some(xi_term), Some(bound), Some(dist), Some(same))
        };

    Ok(AlignmentReport {
        i_star,
        j_star,
        alpha,
        alpha_dagger,
        rho_tilde,
        g,
        g_dagger,
        beta_dagger,
        psi_dagger,
        xi,
        gamma,
        bound_t2a,
        bound_t2b,
        bound_t3,
        xi_alignment_term,
        gdagger_g_distance,
        gdagger_gamma_distance,
        f_xi_equals_f_x,
    })
}
