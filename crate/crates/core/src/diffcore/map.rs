//! Differentiable spacetime point maps and their input Jacobians.

use crate::diffcore::jet::Jet;
use crate::diffcore::linalg::{Mat2, Mat3};
use crate::real::Real;

/// First-order data of a 3D point map at one spacetime point: the value,
/// its spatial Jacobian and its time derivative.
#[derive(Copy, Clone, Debug)]
pub struct SpacetimeJet3<S = f64> {
    pub value: [S; 3],
    pub jacobian: Mat3<S>,
    pub dt: [S; 3],
}

#[derive(Copy, Clone, Debug)]
pub struct SpacetimeJet2<S = f64> {
    pub value: [S; 2],
    pub jacobian: Mat2<S>,
    pub dt: [S; 2],
}

impl<S: Real> SpacetimeJet3<S> {
    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        for i in 0..3 {
            ok &= self.value[i].primal().is_finite() && self.dt[i].primal().is_finite();
            for j in 0..3 {
                ok &= self.jacobian.0[i][j].primal().is_finite();
            }
        }
        ok
    }
}

impl<S: Real> SpacetimeJet2<S> {
    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        for i in 0..2 {
            ok &= self.value[i].primal().is_finite() && self.dt[i].primal().is_finite();
            for j in 0..2 {
                ok &= self.jacobian.0[i][j].primal().is_finite();
            }
        }
        ok
    }
}

/// A continuously differentiable map `(p, t) -> p'` in 3D, evaluable at the
/// scalar type `S` and at jets over `S`.
pub trait PointMap3<S: Real> {
    fn eval(&self, p: [S; 3], t: S) -> [S; 3];
    fn eval_jet(&self, p: [S; 3], t: S) -> SpacetimeJet3<S>;
}

/// 2D counterpart of [`PointMap3`].
pub trait PointMap2<S: Real> {
    fn eval(&self, p: [S; 2], t: S) -> [S; 2];
    fn eval_jet(&self, p: [S; 2], t: S) -> SpacetimeJet2<S>;
}

/// Build a [`SpacetimeJet3`] by pushing seeded jets (3 spatial directions,
/// 1 temporal) through a generic evaluation.
pub fn spacetime_jet3<S: Real>(
    p: [S; 3],
    t: S,
    f: impl FnOnce([Jet<4, S>; 3], Jet<4, S>) -> [Jet<4, S>; 3],
) -> SpacetimeJet3<S> {
    let pj = [Jet::seeded(p[0], 0), Jet::seeded(p[1], 1), Jet::seeded(p[2], 2)];
    let tj = Jet::seeded(t, 3);
    let w = f(pj, tj);
    let mut jac = Mat3::zeros();
    let mut value = [S::zero(); 3];
    let mut dt = [S::zero(); 3];
    for i in 0..3 {
        value[i] = w[i].v;
        dt[i] = w[i].d[3];
        for j in 0..3 {
            jac.0[i][j] = w[i].d[j];
        }
    }
    SpacetimeJet3 { value, jacobian: jac, dt }
}

pub fn spacetime_jet2<S: Real>(
    p: [S; 2],
    t: S,
    f: impl FnOnce([Jet<3, S>; 2], Jet<3, S>) -> [Jet<3, S>; 2],
) -> SpacetimeJet2<S> {
    let pj = [Jet::seeded(p[0], 0), Jet::seeded(p[1], 1)];
    let tj = Jet::seeded(t, 2);
    let w = f(pj, tj);
    let mut jac = Mat2::zeros();
    let mut value = [S::zero(); 2];
    let mut dt = [S::zero(); 2];
    for i in 0..2 {
        value[i] = w[i].v;
        dt[i] = w[i].d[2];
        for j in 0..2 {
            jac.0[i][j] = w[i].d[j];
        }
    }
    SpacetimeJet2 { value, jacobian: jac, dt }
}

/// Spatial Jacobian and time derivative of a map at `(p, t)`.
pub fn jacobian_spacetime<F: PointMap3<f64>>(field: &F, p: [f64; 3], t: f64) -> (Mat3<f64>, [f64; 3]) {
    let j = field.eval_jet(p, t);
    (j.jacobian, j.dt)
}

/// Composition `a(b(p, t), t)`.
pub struct Composed<A, B> {
    pub outer: A,
    pub inner: B,
}

impl<S: Real, A: PointMap3<S>, B: PointMap3<S>> PointMap3<S> for Composed<A, B> {
    fn eval(&self, p: [S; 3], t: S) -> [S; 3] {
        self.outer.eval(self.inner.eval(p, t), t)
    }

    fn eval_jet(&self, p: [S; 3], t: S) -> SpacetimeJet3<S> {
        let inner = self.inner.eval_jet(p, t);
        let outer = self.outer.eval_jet(inner.value, t);
        // Chain rule: J = J_outer J_inner, dt = J_outer dt_inner + dt_outer.
        let jacobian = outer.jacobian.mul_mat(&inner.jacobian);
        let mut dt = outer.dt;
        let j_dt = outer.jacobian.mul_vec(inner.dt);
        for i in 0..3 {
            dt[i] = dt[i] + j_dt[i];
        }
        SpacetimeJet3 { value: outer.value, jacobian, dt }
    }
}
