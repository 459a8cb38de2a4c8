//! Barrier functions and the affine safety constraint built from them.
//!
//! Several barriers `h_1..h_n` are merged into one smooth lower bound `ψ₀` by
//! the log-sum-exp soft minimum. If `ψ₀` has relative degree `d > 1`, it is
//! lifted through `ψ_j = L_fψ_{j−1} + α_{j−1}(ψ_{j−1})`. The last level gives
//! a constraint affine in the control and the slack:
//!
//! ```text
//! ψ(x, v, δ) = L_fψ_{d−1}(x) + L_gψ_{d−1}(x)v + α(ψ_{d−1}(x)) + ψ_{d−1}(x)δ
//!            = a(x) + b(x)ᵀ[v; δ]
//! ```

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::plant::ContinuousDynamics;
use crate::sim::SafetyMonitor;
use crate::solver::{ConstraintTerms, StageConstraint};
use crate::{Error, Vector};

/// Step of the central-difference gradient fallback.
pub const GRADIENT_STEP: f64 = 1e-6;

/// Central-difference gradient with per-coordinate step `step·(1 + |x_j|)`.
pub fn central_gradient<const N: usize>(f: impl Fn(&Vector<N>) -> f64, x: &Vector<N>, step: f64) -> Vector<N> {
    let mut grad = Vector::<N>::zeros();
    for j in 0..N {
        let h = step * (1.0 + libm::fabs(x[j]));
        let mut plus = *x;
        plus[j] += h;
        let mut minus = *x;
        minus[j] -= h;
        grad[j] = (f(&plus) - f(&minus)) / (plus[j] - minus[j]);
    }
    grad
}

/// A scalar function whose zero-superlevel set is the region of interest.
pub trait Barrier<const N: usize> {
    fn value(&self, x: &Vector<N>) -> f64;

    fn gradient(&self, x: &Vector<N>) -> Vector<N> {
        central_gradient(|y| self.value(y), x, GRADIENT_STEP)
    }

    fn value_and_gradient(&self, x: &Vector<N>) -> (f64, Vector<N>) {
        (self.value(x), self.gradient(x))
    }
}

/// Shared, thread-safe barrier handle.
pub type SharedBarrier<const N: usize> = Arc<dyn Barrier<N> + Send + Sync>;

impl<T, const N: usize> Barrier<N> for Arc<T>
where
    T: Barrier<N> + ?Sized,
{
    fn value(&self, x: &Vector<N>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &Vector<N>) -> Vector<N> {
        (**self).gradient(x)
    }
    fn value_and_gradient(&self, x: &Vector<N>) -> (f64, Vector<N>) {
        (**self).value_and_gradient(x)
    }
}

impl<T, const N: usize> Barrier<N> for Box<T>
where
    T: Barrier<N> + ?Sized,
{
    fn value(&self, x: &Vector<N>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &Vector<N>) -> Vector<N> {
        (**self).gradient(x)
    }
    fn value_and_gradient(&self, x: &Vector<N>) -> (f64, Vector<N>) {
        (**self).value_and_gradient(x)
    }
}

/// Barrier from a value closure; the gradient is differenced.
#[derive(Clone, Copy)]
pub struct FnBarrier<F>(pub F);

impl<F, const N: usize> Barrier<N> for FnBarrier<F>
where
    F: Fn(&Vector<N>) -> f64,
{
    fn value(&self, x: &Vector<N>) -> f64 {
        (self.0)(x)
    }
}

/// Barrier with an analytic gradient.
#[derive(Clone, Copy)]
pub struct AnalyticBarrier<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G, const N: usize> Barrier<N> for AnalyticBarrier<F, G>
where
    F: Fn(&Vector<N>) -> f64,
    G: Fn(&Vector<N>) -> Vector<N>,
{
    fn value(&self, x: &Vector<N>) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &Vector<N>) -> Vector<N> {
        (self.gradient)(x)
    }
}

/// `−(1/ρ)·log Σ e^{−ρh_i}`, shifted by the minimum so that it cannot overflow.
///
/// # Panics
/// If `values` is empty.
pub fn soft_min(values: &[f64], rho: f64) -> f64 {
    assert!(!values.is_empty(), "soft_min of an empty set");
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|h| libm::exp(-rho * (h - m))).sum();
    m - libm::log(sum) / rho
}

/// Soft minimum plus its softmax weights `∂ψ₀/∂h_i`, written into `weights`.
pub fn soft_min_weights(values: &[f64], rho: f64, weights: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "soft_min of an empty set");
    assert_eq!(values.len(), weights.len());
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (w, h) in weights.iter_mut().zip(values) {
        *w = libm::exp(-rho * (h - m));
        sum += *w;
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    m - libm::log(sum) / rho
}

/// Soft minimum of several member barriers.
#[derive(Clone)]
pub struct SoftMinBarrier<const N: usize> {
    pub members: Vec<SharedBarrier<N>>,
    pub rho: f64,
}

impl<const N: usize> SoftMinBarrier<N> {
    pub fn new(members: Vec<SharedBarrier<N>>, rho: f64) -> Result<Self, Error> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("soft minimum needs at least one member"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidConfig("soft minimum sharpness must be positive"));
        }
        Ok(Self { members, rho })
    }

    /// `log(n_h)/ρ`, the largest possible gap below the true minimum.
    pub fn max_gap(&self) -> f64 {
        libm::log(self.members.len() as f64) / self.rho
    }

    pub fn member_values(&self, x: &Vector<N>) -> Vec<f64> {
        self.members.iter().map(|b| b.value(x)).collect()
    }
}

impl<const N: usize> Barrier<N> for SoftMinBarrier<N> {
    fn value(&self, x: &Vector<N>) -> f64 {
        soft_min(&self.member_values(x), self.rho)
    }

    fn gradient(&self, x: &Vector<N>) -> Vector<N> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &Vector<N>) -> (f64, Vector<N>) {
        let (values, grads): (Vec<f64>, Vec<Vector<N>>) =
            self.members.iter().map(|b| b.value_and_gradient(x)).unzip();
        let mut weights = alloc::vec![0.0; values.len()];
        let psi = soft_min_weights(&values, self.rho, &mut weights);
        let grad = weights
            .iter()
            .zip(&grads)
            .fold(Vector::<N>::zeros(), |acc, (w, g)| acc + g * *w);
        (psi, grad)
    }
}

/// Extended class-K function.
pub trait ClassK {
    fn apply(&self, z: f64) -> f64;
    fn derivative(&self, z: f64) -> f64;
}

/// `α(z) = κz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearClassK(pub f64);

impl Default for LinearClassK {
    fn default() -> Self {
        Self(1.0)
    }
}

impl ClassK for LinearClassK {
    fn apply(&self, z: f64) -> f64 {
        self.0 * z
    }
    fn derivative(&self, _z: f64) -> f64 {
        self.0
    }
}

/// `ψ_j = L_fψ_{j−1} + α(ψ_{j−1})`, one level up the chain.
///
/// The gradient of a lifted level involves the Hessian of the level below,
/// so it is differenced.
#[derive(Clone)]
pub struct LieLift<const N: usize, const L: usize, P, K> {
    pub inner: SharedBarrier<N>,
    pub plant: P,
    pub alpha: K,
}

impl<const N: usize, const L: usize, P, K> Barrier<N> for LieLift<N, L, P, K>
where
    P: ContinuousDynamics<N, L>,
    K: ClassK,
{
    fn value(&self, x: &Vector<N>) -> f64 {
        let (psi, grad) = self.inner.value_and_gradient(x);
        grad.dot(&self.plant.drift(x)) + self.alpha.apply(psi)
    }
}

/// The chain `ψ_0..ψ_{d−1}` and the outer class-K function of `a(x)`.
///
/// `L` is the number of physical inputs; the constraint is stated for
/// `[v; δ]` with one extra slack entry.
#[derive(Clone)]
pub struct HigherOrderChain<const N: usize, const L: usize, P, K> {
    levels: Vec<SharedBarrier<N>>,
    plant: P,
    outer: K,
}

impl<const N: usize, const L: usize, P, K> HigherOrderChain<N, L, P, K>
where
    P: ContinuousDynamics<N, L> + Clone + Send + Sync + 'static,
    K: ClassK + Clone + Send + Sync + 'static,
{
    /// Chain of degree `d = alphas.len()`; `alphas[j]` lifts level `j` and the
    /// last one is the outer function of `a(x)`.
    pub fn new(psi0: SharedBarrier<N>, plant: P, mut alphas: Vec<K>) -> Result<Self, Error> {
        let outer = alphas
            .pop()
            .ok_or(Error::InvalidConfig("barrier chain needs degree at least 1"))?;
        let mut levels = Vec::with_capacity(alphas.len() + 1);
        levels.push(psi0);
        for alpha in alphas {
            let inner = levels.last().expect("chain starts with psi0").clone();
            levels.push(Arc::new(LieLift {
                inner,
                plant: plant.clone(),
                alpha,
            }));
        }
        Ok(Self { levels, plant, outer })
    }
}

impl<const N: usize, const L: usize, P, K> HigherOrderChain<N, L, P, K>
where
    P: ContinuousDynamics<N, L>,
    K: ClassK,
{
    pub fn degree(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, j: usize) -> &SharedBarrier<N> {
        &self.levels[j]
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn outer(&self) -> &K {
        &self.outer
    }

    /// `[ψ_0(x), …, ψ_{d−1}(x)]`. `x ∈ C` iff every entry is nonnegative.
    pub fn lift_chain(&self, x: &Vector<N>) -> Result<Vec<f64>, Error> {
        self.levels
            .iter()
            .enumerate()
            .map(|(level, b)| {
                let v = b.value(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteChain { level })
                }
            })
            .collect()
    }

    /// `a(x) = L_fψ_{d−1} + α(ψ_{d−1})`, `b(x) = [L_gψ_{d−1}; ψ_{d−1}]`.
    ///
    /// `M` must equal `L + 1`.
    pub fn affine_terms<const M: usize>(&self, x: &Vector<N>) -> Result<ConstraintTerms<M>, Error> {
        const { assert!(M == L + 1, "constraint dimension must be inputs plus slack") };
        let level = self.levels.len() - 1;
        let (psi, grad) = self.levels[level].value_and_gradient(x);
        if !psi.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteChain { level });
        }
        let a = grad.dot(&self.plant.drift(x)) + self.outer.apply(psi);
        let lg = self.plant.input_matrix(x).transpose() * grad;
        let mut b = Vector::<M>::zeros();
        b.fixed_rows_mut::<L>(0).copy_from(&lg);
        b[L] = psi;
        Ok(ConstraintTerms { a, b })
    }
}

impl<const N: usize, const L: usize, const M: usize, P, K> StageConstraint<N, M> for HigherOrderChain<N, L, P, K>
where
    P: ContinuousDynamics<N, L>,
    K: ClassK,
{
    fn terms(&self, _stage: usize, x: &Vector<N>) -> Result<ConstraintTerms<M>, Error> {
        self.affine_terms(x)
    }
}

impl<const N: usize, const L: usize, P, K> SafetyMonitor<N, L> for HigherOrderChain<N, L, P, K>
where
    P: ContinuousDynamics<N, L>,
    K: ClassK,
{
    fn chain_values(&self, x: &Vector<N>) -> Result<Vec<f64>, Error> {
        self.lift_chain(x)
    }

    fn constraint_value(&self, x: &Vector<N>, v: &Vector<L>, delta: f64) -> Result<f64, Error> {
        let level = self.levels.len() - 1;
        let (psi, grad) = self.levels[level].value_and_gradient(x);
        let a = grad.dot(&self.plant.drift(x)) + self.outer.apply(psi);
        let lg = self.plant.input_matrix(x).transpose() * grad;
        Ok(a + lg.dot(v) + psi * delta)
    }
}
