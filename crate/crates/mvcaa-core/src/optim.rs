//! Parameters, the named parameter store, Adam, and the gradient checker.

use crate::autodiff::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad, trainable }
    }
}

/// Deterministically ordered collection of named parameters.
#[derive(Clone, Default)]
pub struct ParamStore<S: Scalar> {
    params: BTreeMap<String, Parameter<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>, trainable: bool) {
        assert!(
            self.params.insert(name.to_string(), Parameter::new(name, value, trainable)).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Parameter<S> {
        self.params.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Parameter<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Parameter<S> {
        self.params.get_mut(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter<S>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter<S>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            p.trainable = pred(name);
        }
    }

    pub fn n_trainable_scalars(&self) -> usize {
        self.params.values().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }
}

/// Ties tape leaves back to store parameters for gradient accumulation.
#[derive(Default)]
pub struct ParamBinding {
    entries: Vec<(String, Var)>,
}

impl ParamBinding {
    pub fn new() -> Self {
        ParamBinding { entries: Vec::new() }
    }

    pub fn bind<S: Scalar>(&mut self, tape: &mut Tape<S>, store: &ParamStore<S>, name: &str) -> Var {
        let var = tape.leaf(store.get(name).value.clone());
        self.entries.push((name.to_string(), var));
        var
    }

    /// Add tape gradients into `Parameter::grad`.
    pub fn accumulate<S: Scalar>(&self, grads: &mut Grads<S>, store: &mut ParamStore<S>) {
        for (name, var) in &self.entries {
            if let Some(g) = grads.take(*var) {
                store.get_mut(name).grad.add_assign(&g);
            }
        }
    }
}

/// Adam with decoupled weight decay (0 by default). Moment state is keyed by
/// parameter name and persists across steps.
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    moments: BTreeMap<String, (Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam { lr, beta1: betas.0, beta2: betas.1, eps, weight_decay: 0.0, t: 0, moments: BTreeMap::new() }
    }

    /// One update over every trainable parameter. Frozen parameters are left
    /// bitwise untouched. A non-finite gradient aborts naming the parameter.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let n = p.value.numel();
            let vd = p.value.data_mut();
            let gd = p.grad.data();
            let md = m.data_mut();
            let vvd = v.data_mut();
            for i in 0..n {
                let g = gd[i].to_f64();
                let mi = self.beta1 * md[i].to_f64() + (1.0 - self.beta1) * g;
                let vi = self.beta2 * vvd[i].to_f64() + (1.0 - self.beta2) * g * g;
                md[i] = S::from_f64(mi);
                vvd[i] = S::from_f64(vi);
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let mut x = vd[i].to_f64();
                x -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * x);
                vd[i] = S::from_f64(x);
            }
        }
        Ok(())
    }
}

/// Max relative error between analytic and central-difference gradients of a
/// scalar-valued tape function, over every element of every input.
pub fn grad_check<F>(f: &F, inputs: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<(f64, Option<(Tape<f64>, Vec<Var>, Var)>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::Invalid(format!("grad_check wants a scalar output, got {:?}", v.shape())));
        }
        let val = v.item();
        if !val.is_finite() {
            return Err(Error::NonFinite("grad_check forward pass".into()));
        }
        Ok((val, Some((tape, vars, out))))
    };

    let (_, ctx) = eval(inputs)?;
    let (tape, vars, out) = ctx.unwrap();
    let grads = tape.backward(out);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut max_rel = 0.0f64;
    let mut probe = inputs.to_vec();
    for ti in 0..inputs.len() {
        for ei in 0..inputs[ti].numel() {
            let orig = probe[ti].data()[ei];
            probe[ti].data_mut()[ei] = orig + step;
            let (fp, _) = eval(&probe)?;
            probe[ti].data_mut()[ei] = orig - step;
            let (fm, _) = eval(&probe)?;
            probe[ti].data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("central difference at input {ti} element {ei}")));
            }
            let a = analytic[ti].data()[ei];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_check_sum_of_squares() {
        // analytic gradient of sum(x^2) on [1,2,3] is [2,4,6]
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]);
        let f = |tape: &mut Tape<f64>, vars: &[Var]| {
            let sq = tape.square(vars[0]);
            tape.sum_all(sq)
        };
        let err = grad_check(&f, &[x.clone()], 1e-5).unwrap();
        assert!(err < 1e-9, "rel err {err}");
        // and the analytic gradient itself is exact
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let sq = tape.square(v);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(v).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_check_softmax_dot() {
        // softmax on 4 logits dotted with a fixed vector, against the
        // hand-coded jacobian: d/dx_i = p_i (w_i - sum_j p_j w_j)
        let x = Tensor::<f64>::from_vec(&[4], vec![0.3, -1.2, 0.7, 0.1]);
        let wfix = [0.5, -0.25, 1.5, 2.0];
        // express softmax-dot through tape ops available here: use the
        // self-attention softmax indirectly is overkill; build from exp/sums
        // via a one-row layer of linear algebra: softmax = exp / sum(exp).
        // The tape has no exp op, so check against the CAA/self-attn path in
        // their own modules; here verify the oracle identity numerically.
        let p = {
            let mx = x.data().iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = x.data().iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let dot: f64 = p.iter().zip(wfix).map(|(a, b)| a * b).sum();
        // central differences of the scalar function itself
        let f = |xs: &[f64]| {
            let mx = xs.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = xs.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().zip(wfix).map(|(a, b)| a / s * b).sum::<f64>()
        };
        for i in 0..4 {
            let analytic = p[i] * (wfix[i] - dot);
            let mut xp = x.data().to_vec();
            xp[i] += 1e-6;
            let mut xm = x.data().to_vec();
            xm[i] -= 1e-6;
            let numeric = (f(&xp) - f(&xm)) / 2e-6;
            assert!((analytic - numeric).abs() / numeric.abs().max(1.0) < 1e-7);
        }
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::scalar(1.0), true);
        store.get_mut("w").grad = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1, (0.9, 0.999), 1e-8);
        adam.step(&mut store).unwrap();
        let v = store.get("w").value.item();
        assert!((v - 0.9).abs() < 1e-6, "first Adam step should move by ~lr, got {v}");
    }

    #[test]
    fn adam_respects_freezing() {
        let mut store = ParamStore::<f32>::new();
        store.insert("frozen", Tensor::from_vec(&[2], vec![0.25, -0.75]), false);
        store.get_mut("frozen").grad = Tensor::from_vec(&[2], vec![1.0, 1.0]);
        let before = store.get("frozen").value.clone();
        let mut adam = Adam::new(0.1, (0.9, 0.999), 1e-8);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(before.data(), store.get("frozen").value.data(), "frozen param must stay bitwise equal");
    }

    #[test]
    fn adam_monotone_under_constant_grad() {
        // scalar recurrence oracle: with constant gradient 1, m-hat = 1 and
        // v-hat = 1 at every step, so each update subtracts lr/(1+eps)
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::scalar(0.5), true);
        let mut adam = Adam::new(0.01, (0.9, 0.999), 1e-8);
        let mut prev = 0.5;
        for _ in 0..3 {
            store.get_mut("w").grad = Tensor::scalar(1.0);
            adam.step(&mut store).unwrap();
            let cur = store.get("w").value.item();
            assert!(cur < prev, "value must decrease monotonically");
            assert!((prev - cur - 0.01).abs() < 1e-6, "step size should be ~lr");
            prev = cur;
        }
    }

    #[test]
    fn adam_aborts_on_nan_grad() {
        let mut store = ParamStore::<f32>::new();
        store.insert("bad", Tensor::scalar(1.0), true);
        store.get_mut("bad").grad = Tensor::scalar(f32::NAN);
        let mut adam = Adam::new(0.1, (0.9, 0.999), 1e-8);
        let err = adam.step(&mut store).unwrap_err();
        assert!(err.to_string().contains("bad"), "error should name the parameter: {err}");
    }
}
