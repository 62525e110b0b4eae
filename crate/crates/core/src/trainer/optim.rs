use crate::error::{Error, Result};
use crate::model::{Decay, ParamStore};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments for every tensor of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.dims())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Linear warmup to `base` over `warmup` steps, then linear decay to 0 at `total`.
pub fn learning_rate_at(step: usize, base: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else if total > warmup {
        base * (total.saturating_sub(step)) as f64 / (total - warmup) as f64
    } else {
        base
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One bias-corrected Adam update with decoupled weight decay. Tensors with
/// no gradient (frozen ones) are left untouched; decay skips tensors marked
/// [`Decay::Exclude`].
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dims(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    let ids: Vec<_> = params
        .iter()
        .map(|(id, p)| (id, p.spec.trainable, p.spec.decay))
        .collect();
    for (id, trainable, decay) in ids {
        let i = id.index();
        let Some(g) = &grads[i] else { continue };
        if !trainable {
            continue;
        }
        let p = params.value_mut(id);
        if g.dims() != p.dims() {
            return Err(Error::dims(
                "adam_step",
                format!("gradient {:?} for parameter {:?}", g.dims(), p.dims()),
            ));
        }
        let wd = if decay == Decay::Apply { cfg.weight_decay } else { 0.0 };
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + cfg.epsilon);
            *w -= lr * (update + wd * *w);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Init, Param, ParamSpec};

    fn store(values: &[f64], decay: Decay) -> ParamStore {
        let spec = ParamSpec {
            name: "w".into(),
            dims: vec![values.len()],
            init: Init::Zeros,
            trainable: true,
            decay,
        };
        let mut s = ParamStore::default();
        s.push(Param {
            spec,
            value: Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        })
        .unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = store(&[1.0, -2.0], Decay::Apply);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..10 {
            adam_step(&mut p, &[Some(Tensor::zeros(&[2]))], &mut st, 0.1, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = store(&[1.0], Decay::Exclude);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        for _ in 0..500 {
            let w = p.value(p.id("w").unwrap()).data()[0];
            adam_step(
                &mut p,
                &[Some(Tensor::new(vec![1], vec![2.0 * w]).unwrap())],
                &mut st,
                0.01,
                &cfg,
            )
            .unwrap();
        }
        let w = p.value(p.id("w").unwrap()).data()[0];
        assert!(w * w < 1e-3, "{w}");
    }

    #[test]
    fn first_moment_is_antisymmetric() {
        let g = Tensor::new(vec![2], vec![0.3, -1.2]).unwrap();
        let neg = g.map(|v| -v);
        let run = |g: &Tensor| {
            let mut p = store(&[0.0, 0.0], Decay::Exclude);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[Some(g.clone())], &mut st, 0.1, &AdamConfig::default()).unwrap();
            (st.m[0].clone(), p.value(p.id("w").unwrap()).clone())
        };
        let (m1, w1) = run(&g);
        let (m2, w2) = run(&neg);
        assert_eq!(m1, m2.map(|v| -v));
        assert_eq!(w1, w2.map(|v| -v));
    }

    #[test]
    fn clipping_contract() {
        let mut g = vec![Some(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()), None];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let after = clip_global_norm(&mut g, 1.0);
        assert!(after <= 1.0 + 1e-6);
        let mut small = vec![Some(Tensor::new(vec![1], vec![0.5]).unwrap())];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_ref().unwrap().data(), &[0.5]);
    }

    #[test]
    fn schedule_shape() {
        assert!((learning_rate_at(0, 1.0, 10, 100) - 0.1).abs() < 1e-12);
        assert_eq!(learning_rate_at(9, 1.0, 10, 100), 1.0);
        assert_eq!(learning_rate_at(10, 1.0, 10, 100), 1.0);
        assert!((learning_rate_at(55, 1.0, 10, 100) - 0.5).abs() < 1e-12);
        assert_eq!(learning_rate_at(100, 1.0, 10, 100), 0.0);
        assert_eq!(learning_rate_at(5, 0.3, 0, 0), 0.3);
    }

    #[test]
    fn dim_mismatch() {
        let mut p = store(&[1.0], Decay::Apply);
        let mut st = AdamState::new(&p);
        let bad = [Some(Tensor::zeros(&[2]))];
        assert!(adam_step(&mut p, &bad, &mut st, 0.1, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut p, &[], &mut st, 0.1, &AdamConfig::default()).is_err());
    }
}
