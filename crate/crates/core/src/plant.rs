//! Continuous-time control-affine plants `ẋ = f(x) + g(x)v` and their integration.

use crate::{Matrix, Vector};

/// `ẋ = f(x) + g(x)v` with `N` states and `L` physical inputs.
pub trait ContinuousDynamics<const N: usize, const L: usize> {
    fn drift(&self, x: &Vector<N>) -> Vector<N>;
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, L>;

    fn derivative(&self, x: &Vector<N>, v: &Vector<L>) -> Vector<N> {
        self.drift(x) + self.input_matrix(x) * v
    }

    /// `∂f/∂x`. Central differences unless overridden.
    fn drift_jacobian(&self, x: &Vector<N>) -> Matrix<N, N> {
        let mut jac = Matrix::<N, N>::zeros();
        for j in 0..N {
            let h = 1e-6 * (1.0 + libm::fabs(x[j]));
            let mut plus = *x;
            plus[j] += h;
            let mut minus = *x;
            minus[j] -= h;
            let col = (self.drift(&plus) - self.drift(&minus)) / (plus[j] - minus[j]);
            jac.set_column(j, &col);
        }
        jac
    }
}

impl<T, const N: usize, const L: usize> ContinuousDynamics<N, L> for &T
where
    T: ContinuousDynamics<N, L> + ?Sized,
{
    fn drift(&self, x: &Vector<N>) -> Vector<N> {
        (**self).drift(x)
    }
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, L> {
        (**self).input_matrix(x)
    }
    fn drift_jacobian(&self, x: &Vector<N>) -> Matrix<N, N> {
        (**self).drift_jacobian(x)
    }
}

/// Plant given by two closures.
#[derive(Clone, Copy)]
pub struct FnPlant<F, G> {
    pub drift: F,
    pub input: G,
}

impl<F, G, const N: usize, const L: usize> ContinuousDynamics<N, L> for FnPlant<F, G>
where
    F: Fn(&Vector<N>) -> Vector<N>,
    G: Fn(&Vector<N>) -> Matrix<N, L>,
{
    fn drift(&self, x: &Vector<N>) -> Vector<N> {
        (self.drift)(x)
    }
    fn input_matrix(&self, x: &Vector<N>) -> Matrix<N, L> {
        (self.input)(x)
    }
}

/// One classical Runge–Kutta step with `v` held constant.
pub fn rk4_step<P, const N: usize, const L: usize>(
    plant: &P,
    x: &Vector<N>,
    v: &Vector<L>,
    h: f64,
) -> Vector<N>
where
    P: ContinuousDynamics<N, L> + ?Sized,
{
    let k1 = plant.derivative(x, v);
    let k2 = plant.derivative(&(x + k1 * (0.5 * h)), v);
    let k3 = plant.derivative(&(x + k2 * (0.5 * h)), v);
    let k4 = plant.derivative(&(x + k3 * h), v);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates over `duration` with RK4 using equal steps no longer than `max_step`.
pub fn integrate_held<P, const N: usize, const L: usize>(
    plant: &P,
    x: &Vector<N>,
    v: &Vector<L>,
    duration: f64,
    max_step: f64,
) -> Vector<N>
where
    P: ContinuousDynamics<N, L> + ?Sized,
{
    let steps = libm::ceil(duration / max_step - 1e-9).max(1.0) as usize;
    let h = duration / steps as f64;
    let mut state = *x;
    for _ in 0..steps {
        state = rk4_step(plant, &state, v, h);
    }
    state
}
