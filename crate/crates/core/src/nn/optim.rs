use super::{Element, Gradients, ParamKind, ParamStore};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<E> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<E>, grads: &Gradients<E>) {
        if self.m.len() != params.len() {
            self.m = params
                .iter()
                .map(|(_, p)| vec![E::zero(); p.value.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = (E::of(self.beta1), E::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr_t = E::of(self.lr * c2.sqrt() / c1);
        let eps = E::of(self.eps * c2.sqrt());
        let ids: Vec<_> = params
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = params.value_mut(id);
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (E::one() - b1) * g[i];
                v[i] = b2 * v[i] + (E::one() - b2) * g[i] * g[i];
                w[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
