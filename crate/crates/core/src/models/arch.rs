//! Network topologies. Parameters live in a [`ParamStore`]; a topology only
//! records which ids play which role and replays the forward pass onto a
//! [`Graph`].

use rand::Rng;

use super::{ModelKind, ModelSpec};
use crate::nn::{BnParams, Element, Graph, NodeId, ParamId, ParamKind, ParamStore};

#[derive(Clone, Debug)]
pub(crate) struct ConvBnRelu {
    w: ParamId,
    bn: BnParams,
}

impl ConvBnRelu {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Self {
        let w = store.he_normal(
            format!("{name}.w"),
            vec![c_out, c_in, k, k],
            c_in * k * k,
            rng,
        );
        let bn = BnParams {
            gamma: store.filled(
                format!("{name}.bn.gamma"),
                vec![c_out],
                ParamKind::Trainable,
                E::one(),
            ),
            beta: store.zeros(format!("{name}.bn.beta"), vec![c_out], ParamKind::Trainable),
            running_mean: store.zeros(format!("{name}.bn.mean"), vec![c_out], ParamKind::Buffer),
            running_var: store.filled(
                format!("{name}.bn.var"),
                vec![c_out],
                ParamKind::Buffer,
                E::one(),
            ),
        };
        ConvBnRelu { w, bn }
    }

    fn apply<E: Element>(&self, g: &mut Graph<'_, E>, x: NodeId) -> NodeId {
        let y = g.conv(x, self.w, None);
        let y = g.batch_norm(y, self.bn);
        g.relu(y)
    }
}

#[derive(Clone, Debug)]
struct DoubleConv(ConvBnRelu, ConvBnRelu);

impl DoubleConv {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        DoubleConv(
            ConvBnRelu::new(store, rng, &format!("{name}.0"), c_in, c_out, 3),
            ConvBnRelu::new(store, rng, &format!("{name}.1"), c_out, c_out, 3),
        )
    }

    fn apply<E: Element>(&self, g: &mut Graph<'_, E>, x: NodeId) -> NodeId {
        let y = self.0.apply(g, x);
        self.1.apply(g, y)
    }
}

/// 1x1 convolution with bias producing logits.
#[derive(Clone, Debug)]
pub(crate) struct Head {
    w: ParamId,
    b: ParamId,
}

impl Head {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
    ) -> Self {
        Head {
            w: store.he_normal(format!("{name}.w"), vec![1, c_in, 1, 1], c_in, rng),
            b: store.zeros(format!("{name}.b"), vec![1], ParamKind::Trainable),
        }
    }

    fn apply<E: Element>(&self, g: &mut Graph<'_, E>, x: NodeId) -> NodeId {
        g.conv(x, self.w, Some(self.b))
    }
}

/// Logit nodes of one forward pass. `aux` holds the deep-supervision side
/// outputs, which contribute to the loss alongside `main`.
#[derive(Clone, Debug)]
pub(crate) struct Outputs {
    pub main: NodeId,
    pub aux: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub(crate) enum Arch {
    Classifier {
        blocks: Vec<ConvBnRelu>,
        dense: Head,
    },
    EncoderDecoder(EncDec),
}

#[derive(Clone, Debug)]
pub(crate) struct EncDec {
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    dec: Vec<DoubleConv>,
    /// Per level 1..=depth: stem applied to the average-pooled input
    /// (M-net only; index 0 is always `None`).
    inject: Vec<Option<ConvBnRelu>>,
    /// One head per decoder level with deep supervision, else a single head.
    heads: Vec<Head>,
    deep_supervision: bool,
}

impl Arch {
    pub fn build<E: Element>(
        spec: &ModelSpec,
        store: &mut ParamStore<E>,
        rng: &mut impl Rng,
    ) -> Self {
        let ch = |l: usize| spec.base_channels << l;
        match spec.kind {
            ModelKind::Classifier => {
                let blocks = (0..spec.depth)
                    .map(|l| {
                        let c_in = if l == 0 { 1 } else { ch(l - 1) };
                        ConvBnRelu::new(store, rng, &format!("block{l}"), c_in, ch(l), 3)
                    })
                    .collect();
                let dense = Head::new(store, rng, "dense", ch(spec.depth - 1));
                Arch::Classifier { blocks, dense }
            }
            ModelKind::Unet | ModelKind::Mnet => {
                let mnet = spec.kind == ModelKind::Mnet;
                let d = spec.depth;
                let mut inject = vec![None];
                for l in 1..=d {
                    inject.push(mnet.then(|| {
                        ConvBnRelu::new(store, rng, &format!("inject{l}"), 1, ch(l - 1), 3)
                    }));
                }
                let in_ch = |l: usize| -> usize {
                    if l == 0 {
                        1
                    } else {
                        ch(l - 1) * if mnet { 2 } else { 1 }
                    }
                };
                let enc = (0..d)
                    .map(|l| DoubleConv::new(store, rng, &format!("enc{l}"), in_ch(l), ch(l)))
                    .collect();
                let bottleneck = DoubleConv::new(store, rng, "bottleneck", in_ch(d), ch(d));
                let dec = (0..d)
                    .map(|l| {
                        DoubleConv::new(store, rng, &format!("dec{l}"), ch(l + 1) + ch(l), ch(l))
                    })
                    .collect();
                let deep_supervision = mnet && spec.deep_supervision;
                let heads = if deep_supervision {
                    (0..d)
                        .map(|l| Head::new(store, rng, &format!("side{l}"), ch(l)))
                        .collect()
                } else {
                    vec![Head::new(store, rng, "head", ch(0))]
                };
                Arch::EncoderDecoder(EncDec {
                    enc,
                    bottleneck,
                    dec,
                    inject,
                    heads,
                    deep_supervision,
                })
            }
        }
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<'_, E>, x: NodeId) -> Outputs {
        match self {
            Arch::Classifier { blocks, dense } => {
                let mut h = x;
                for b in blocks {
                    h = b.apply(g, h);
                    h = g.max_pool(h);
                }
                let pooled = g.global_avg_pool(h);
                Outputs {
                    main: dense.apply(g, pooled),
                    aux: Vec::new(),
                }
            }
            Arch::EncoderDecoder(net) => net.forward(g, x),
        }
    }
}

impl EncDec {
    fn level_input<E: Element>(
        &self,
        g: &mut Graph<'_, E>,
        l: usize,
        h: NodeId,
        pyramid: &mut NodeId,
    ) -> NodeId {
        let h = g.max_pool(h);
        match &self.inject[l] {
            Some(stem) => {
                *pyramid = g.avg_pool(*pyramid);
                let e = stem.apply(g, *pyramid);
                g.concat(&[h, e])
            }
            None => h,
        }
    }

    fn forward<E: Element>(&self, g: &mut Graph<'_, E>, x: NodeId) -> Outputs {
        let d = self.enc.len();
        let mut skips = Vec::with_capacity(d);
        let mut pyramid = x;
        let mut h = x;
        for l in 0..d {
            if l > 0 {
                h = self.level_input(g, l, h, &mut pyramid);
            }
            h = self.enc[l].apply(g, h);
            skips.push(h);
        }
        h = self.level_input(g, d, h, &mut pyramid);
        h = self.bottleneck.apply(g, h);

        let mut sides = Vec::new();
        for l in (0..d).rev() {
            let up = g.upsample(h, 2);
            let cat = g.concat(&[up, skips[l]]);
            h = self.dec[l].apply(g, cat);
            if self.deep_supervision {
                let side = self.heads[l].apply(g, h);
                sides.push(g.upsample(side, 1 << l));
            }
        }
        if self.deep_supervision {
            let main = g.mean(&sides);
            Outputs { main, aux: sides }
        } else {
            Outputs {
                main: self.heads[0].apply(g, h),
                aux: Vec::new(),
            }
        }
    }
}
