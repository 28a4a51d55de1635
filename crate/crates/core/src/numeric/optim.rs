use super::model::{Gradients, Model};
use crate::error::{Error, Result};
use crate::ClientId;

/// SGD with momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub eta: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Gradients,
}

impl OptimizerState {
    pub fn new(model: &Model, eta: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config("optim.eta", "learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::config("optim.weight_decay", "must be >= 0"));
        }
        Ok(OptimizerState {
            eta,
            momentum,
            weight_decay,
            velocity: Gradients::zeros_like(model),
        })
    }

    pub fn reset(&mut self) {
        for l in self.velocity.layers_mut() {
            l.weights.as_mut_slice().fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

/// One update: `v ← momentum·v + g + wd·p`, then `p ← p − eta·v`.
pub fn sgd_step(
    model: &mut Model,
    grads: &Gradients,
    opt: &mut OptimizerState,
    client: ClientId,
) -> Result<()> {
    if !grads.matches(model) || !opt.velocity.matches(model) {
        return Err(Error::Dimension(
            "gradient or velocity shapes differ from the model".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric {
            client,
            batch: None,
            message: "non-finite gradient".into(),
        });
    }
    let (eta, mu, wd) = (opt.eta, opt.momentum, opt.weight_decay);
    for ((layer, grad), vel) in model.zip_layers_mut(grads).zip(opt.velocity.layers_mut()) {
        let params = layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .chain(layer.bias.iter_mut());
        let g = grad.weights.as_slice().iter().chain(&grad.bias);
        let v = vel.weights.as_mut_slice().iter_mut().chain(vel.bias.iter_mut());
        for ((p, g), v) in params.zip(g).zip(v) {
            *v = mu * *v + g + wd * *p;
            *p -= eta * *v;
        }
    }
    if !model.is_finite() {
        return Err(Error::Numeric {
            client,
            batch: None,
            message: "parameters became non-finite after the update".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::model::init_model;

    fn grads_filled(model: &Model, value: f64) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        for l in g.layers_mut() {
            l.weights.as_mut_slice().fill(value);
            l.bias.fill(value);
        }
        g
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut m = init_model(&[3, 4], 4, 2, 1).unwrap();
        let before = m.clone();
        let mut opt = OptimizerState::new(&m, 0.1, 0.9, 0.0).unwrap();
        let g = Gradients::zeros_like(&m);
        sgd_step(&mut m, &g, &mut opt, ClientId(0)).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn plain_sgd_moves_by_eta_times_gradient() {
        let mut m = init_model(&[3, 4], 4, 2, 1).unwrap();
        let before = m.flat_params();
        let mut opt = OptimizerState::new(&m, 0.25, 0.0, 0.0).unwrap();
        let g = grads_filled(&m, 2.0);
        sgd_step(&mut m, &g, &mut opt, ClientId(0)).unwrap();
        for (a, b) in m.flat_params().iter().zip(&before) {
            assert_eq!(*a, b - 0.25 * 2.0);
        }
    }

    #[test]
    fn momentum_recursion_two_steps() {
        let (eta, mu, wd) = (0.01, 0.9, 1e-5);
        let mut m = init_model(&[2, 3], 3, 2, 4).unwrap();
        let p0 = m.flat_params();
        let mut opt = OptimizerState::new(&m, eta, mu, wd).unwrap();
        let g1 = grads_filled(&m, 0.5);
        let g2 = grads_filled(&m, -1.5);
        sgd_step(&mut m, &g1, &mut opt, ClientId(0)).unwrap();
        sgd_step(&mut m, &g2, &mut opt, ClientId(0)).unwrap();
        for (i, p) in m.flat_params().iter().enumerate() {
            // Hand-unrolled recursion.
            let v1 = 0.5 + wd * p0[i];
            let p1 = p0[i] - eta * v1;
            let v2 = mu * v1 + -1.5 + wd * p1;
            let p2 = p1 - eta * v2;
            assert!((p - p2).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_client() {
        let mut m = init_model(&[2, 3], 3, 2, 4).unwrap();
        let mut opt = OptimizerState::new(&m, 0.1, 0.0, 0.0).unwrap();
        let g = grads_filled(&m, f64::NAN);
        match sgd_step(&mut m, &g, &mut opt, ClientId(9)) {
            Err(Error::Numeric { client, .. }) => assert_eq!(client, ClientId(9)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let m = init_model(&[2, 3], 3, 2, 4).unwrap();
        assert!(OptimizerState::new(&m, 0.0, 0.9, 0.0).is_err());
        assert!(OptimizerState::new(&m, 0.1, 1.0, 0.0).is_err());
        assert!(OptimizerState::new(&m, 0.1, 0.9, -1.0).is_err());
    }
}
