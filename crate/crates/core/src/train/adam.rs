use crate::error::{Error, Result};
use crate::graph::Side;
use crate::matrix::Matrix;
use crate::model::{ModelState, ParamGrads};
use crate::real::Real;

/// Adam moments mirroring every parameter tensor. Embedding rows only have
/// their moments updated when they receive a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: [Matrix<T>; 2],
    v: [Matrix<T>; 2],
    mw: [Option<Matrix<T>>; 2],
    vw: [Option<Matrix<T>>; 2],
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

fn slot(side: Side) -> usize {
    side.tag() as usize
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &ModelState<T>) -> Self {
        let d = model.dim();
        let w = || model.weight(Side::User).map(|w| Matrix::zeros(w.rows(), w.cols()));
        Self {
            m: [Matrix::zeros(model.n_users(), d), Matrix::zeros(model.n_items(), d)],
            v: [Matrix::zeros(model.n_users(), d), Matrix::zeros(model.n_items(), d)],
            mw: [w(), w()],
            vw: [w(), w()],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Appends zero moments for rows added to the model since construction.
    pub fn grow_to(&mut self, model: &ModelState<T>) {
        let zeros = vec![T::zero(); model.dim()];
        for side in [Side::User, Side::Item] {
            let s = slot(side);
            while self.m[s].rows() < model.n_nodes(side) {
                self.m[s].push_row(&zeros);
                self.v[s].push_row(&zeros);
            }
        }
    }
}

fn update<T: Real>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], c: &Coefs<T>) {
    for k in 0..p.len() {
        m[k] = c.b1 * m[k] + (T::one() - c.b1) * g[k];
        v[k] = c.b2 * v[k] + (T::one() - c.b2) * g[k] * g[k];
        let mhat = m[k] / c.bc1;
        let vhat = v[k] / c.bc2;
        p[k] -= c.lr * mhat / (vhat.sqrt() + c.eps);
    }
}

struct Coefs<T> {
    b1: T,
    b2: T,
    bc1: T,
    bc2: T,
    eps: T,
    lr: T,
}

/// One bias-corrected Adam update. Fails without touching anything when a
/// gradient is non-finite.
pub fn adam_step<T: Real>(model: &mut ModelState<T>, grads: &ParamGrads<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Divergence("gradient".into()));
    }
    state.grow_to(model);
    state.step += 1;
    let t = state.step as i32;
    let c = Coefs {
        b1: T::of(state.beta1),
        b2: T::of(state.beta2),
        bc1: T::of(1.0 - state.beta1.powi(t)),
        bc2: T::of(1.0 - state.beta2.powi(t)),
        eps: T::of(state.eps),
        lr: T::of(lr),
    };
    for side in [Side::User, Side::Item] {
        let s = slot(side);
        for (id, g) in grads.rows.side(side).iter() {
            let r = id as usize;
            if r >= model.n_nodes(side) {
                return Err(Error::ShapeMismatch(format!("gradient for {} {id} beyond table", side.name())));
            }
            update(model.table_mut(side).row_mut(r), g, state.m[s].row_mut(r), state.v[s].row_mut(r), &c);
        }
        if let Some(gw) = grads.weight(side) {
            let (Some(mw), Some(vw)) = (state.mw[s].as_mut(), state.vw[s].as_mut()) else {
                return Err(Error::ShapeMismatch("weight gradient for a zero-layer model".into()));
            };
            let w = model.weight_mut(side).expect("layer weights present");
            update(w.as_mut_slice(), gw.as_slice(), mw.as_mut_slice(), vw.as_mut_slice(), &c);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn model() -> ModelState<f64> {
        ModelState::init(3, 4, 2, 1, &mut stream(0, Stream::Init, 0)).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let mut g = ParamGrads::new(2);
        g.rows.users.entry(1);
        adam_step(&mut m, &g, &mut st, 1e-3).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = model();
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let mut g = ParamGrads::new(2);
        g.rows.items.entry(2).copy_from_slice(&[0.3, -7.0]);
        adam_step(&mut m, &g, &mut st, 1e-3).unwrap();
        let delta: Vec<f64> = m.e_item.row(2).iter().zip(before.e_item.row(2)).map(|(a, b)| a - b).collect();
        assert!((delta[0] + 1e-3 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
        assert!((delta[1] - 1e-3 * 7.0 / (7.0 + 1e-8)).abs() < 1e-15);
        // Untouched rows stay bit-identical.
        assert_eq!(m.e_item.row(0), before.e_item.row(0));
        assert_eq!(m.e_user, before.e_user);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut m = model();
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let mut g = ParamGrads::new(2);
        g.rows.users.entry(0)[0] = f64::NAN;
        assert!(adam_step(&mut m, &g, &mut st, 1e-3).unwrap_err().is_divergence());
        assert_eq!(m, before);
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn moments_follow_growth() {
        let mut m = model();
        let mut st = AdamState::new(&m);
        m.grow(6, 4, &mut stream(0, Stream::Grow, 1));
        let mut g = ParamGrads::new(2);
        g.rows.users.entry(5).copy_from_slice(&[1.0, 1.0]);
        adam_step(&mut m, &g, &mut st, 1e-3).unwrap();
        assert!(m.all_finite());
    }
}
