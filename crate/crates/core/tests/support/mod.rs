//! Random problem instances and independent oracles shared by the solver tests.

#![allow(dead_code)]

use cadp_core::solver::{
    Cadp, ConstraintTerms, DiscreteDynamics, FnConstraint, FnDynamics, StageConstraint, StageCost, TerminalCost,
};
use cadp_core::{Matrix, Vector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform<const R: usize, const C: usize>(rng: &mut ChaCha8Rng, scale: f64) -> Matrix<R, C> {
    Matrix::<R, C>::from_fn(|_, _| rng.random_range(-scale..scale))
}

pub fn psd<const D: usize>(rng: &mut ChaCha8Rng, shift: f64) -> Matrix<D, D> {
    let l = uniform::<D, D>(rng, 1.0);
    l * l.transpose() + Matrix::<D, D>::identity() * shift
}

/// Smooth nonlinear control-affine system with one nonlinear affine-in-u constraint.
#[derive(Debug, Clone)]
pub struct Instance<const N: usize, const M: usize> {
    pub a: Matrix<N, N>,
    pub b: Matrix<N, M>,
    pub b_slope: Matrix<N, M>,
    pub nonlinearity: f64,
    pub c0: f64,
    pub c1: Vector<N>,
    pub bb0: Vector<M>,
    pub bb1: Matrix<M, N>,
    pub costs: Vec<StageCost<N, M>>,
    pub terminal: TerminalCost<N>,
}

impl<const N: usize, const M: usize> Instance<N, M> {
    pub fn random(rng: &mut ChaCha8Rng, stages: usize) -> Self {
        let a = Matrix::<N, N>::identity() * 0.9 + uniform::<N, N>(rng, 0.3);
        let costs = (0..stages)
            .map(|_| {
                StageCost::new(
                    psd::<N>(rng, 0.0),
                    psd::<M>(rng, 0.5),
                    uniform::<M, 1>(rng, 0.5),
                    uniform::<N, 1>(rng, 0.5),
                )
                .unwrap()
            })
            .collect();
        Self {
            a,
            b: uniform(rng, 1.0),
            b_slope: uniform(rng, 0.2),
            nonlinearity: rng.random_range(0.0..0.3),
            c0: rng.random_range(-3.0..3.0),
            c1: uniform(rng, 1.0),
            bb0: uniform::<M, 1>(rng, 1.0) + Vector::<M>::repeat(0.2),
            bb1: uniform(rng, 0.3),
            costs,
            terminal: TerminalCost::new(psd::<N>(rng, 0.0), uniform(rng, 0.5)).unwrap(),
        }
    }

    pub fn drift(&self, x: &Vector<N>) -> Vector<N> {
        self.a * x + x.map(libm::sin) * self.nonlinearity
    }

    pub fn input(&self, x: &Vector<N>) -> Matrix<N, M> {
        self.b + self.b_slope * libm::cos(x.sum())
    }

    pub fn terms(&self, x: &Vector<N>) -> ConstraintTerms<M> {
        ConstraintTerms {
            a: self.c0 + self.c1.dot(x) + 0.1 * libm::sin(x.sum()),
            b: self.bb0 + self.bb1 * x.map(libm::tanh),
        }
    }

    pub fn solver(
        &self,
    ) -> Cadp<N, M, impl DiscreteDynamics<N, M> + '_, impl StageConstraint<N, M> + '_> {
        Cadp::new(
            FnDynamics {
                drift: move |x: &Vector<N>| self.drift(x),
                input: move |x: &Vector<N>| self.input(x),
            },
            FnConstraint(move |_i: usize, x: &Vector<N>| self.terms(x)),
        )
    }

    pub fn random_nominal(&self, rng: &mut ChaCha8Rng) -> Vec<Vector<N>> {
        (0..self.costs.len()).map(|_| uniform::<N, 1>(rng, 1.0)).collect()
    }
}

/// Gradient and Hessian of a quadratic function of `u`, recovered by polarization
/// from function values only.
pub fn quadratic_from_samples<const M: usize>(f: impl Fn(&Vector<M>) -> f64) -> (Matrix<M, M>, Vector<M>, f64) {
    let f0 = f(&Vector::zeros());
    let e = |i: usize| {
        let mut v = Vector::<M>::zeros();
        v[i] = 1.0;
        v
    };
    let mut h = Matrix::<M, M>::zeros();
    let mut c = Vector::<M>::zeros();
    for i in 0..M {
        let plus = f(&e(i));
        let minus = f(&-e(i));
        c[i] = 0.5 * (plus - minus);
        h[(i, i)] = plus + minus - 2.0 * f0;
        for j in 0..i {
            let both = f(&(e(i) + e(j)));
            let v = both - plus - f(&e(j)) + f0;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (h, c, f0)
}

/// `−H⁻¹c`. Generic static LU needs type-level dimension bounds, so this
/// goes through a dynamic copy.
pub fn unconstrained_minimizer<const M: usize>(h: &Matrix<M, M>, c: &Vector<M>) -> Vector<M> {
    let hd = DMatrix::from_column_slice(M, M, h.as_slice());
    let sol = hd.lu().solve(&DVector::from_column_slice(c.as_slice())).expect("Hessian is nonsingular");
    -Vector::<M>::from_column_slice(sol.as_slice())
}

/// `min ½uᵀHu + cᵀu` s.t. `a + bᵀu ≥ 0` by an active-set KKT solve.
pub fn active_set_qp<const M: usize>(h: &Matrix<M, M>, c: &Vector<M>, a: f64, b: &Vector<M>) -> Vector<M> {
    let free = unconstrained_minimizer(h, c);
    if a + b.dot(&free) >= 0.0 {
        return free;
    }
    // [H  −b; bᵀ 0] [u; μ] = [−c; −a]
    let mut kkt = DMatrix::<f64>::zeros(M + 1, M + 1);
    let mut rhs = DVector::<f64>::zeros(M + 1);
    for i in 0..M {
        for j in 0..M {
            kkt[(i, j)] = h[(i, j)];
        }
        kkt[(i, M)] = -b[i];
        kkt[(M, i)] = b[i];
        rhs[i] = -c[i];
    }
    rhs[M] = -a;
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
    Vector::<M>::from_fn(|i, _| sol[i])
}

/// Textbook finite-horizon discrete Riccati iteration for `x⁺ = Ax + Bu`.
pub fn riccati_iterates<const N: usize, const M: usize>(
    a: &Matrix<N, N>,
    b: &Matrix<N, M>,
    q: &Matrix<N, N>,
    r: &Matrix<M, M>,
    q_n: &Matrix<N, N>,
    stages: usize,
) -> (Vec<Matrix<N, N>>, Vec<Matrix<M, N>>) {
    let mut p = vec![*q_n; stages + 1];
    let mut k = vec![Matrix::<M, N>::zeros(); stages];
    for i in (0..stages).rev() {
        let next = p[i + 1];
        let s = r + b.transpose() * next * b;
        let gain = -s.try_inverse().unwrap() * b.transpose() * next * a;
        p[i] = q + a.transpose() * next * a + a.transpose() * next * b * gain;
        k[i] = gain;
    }
    (p, k)
}
