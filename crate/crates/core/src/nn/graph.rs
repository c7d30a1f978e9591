use super::{matmul, Element, Gradients, MatRef, ParamId, ParamStore, Tensor};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Batch-norm parameter handles.
#[derive(Clone, Copy, Debug)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

enum Op {
    Input,
    Conv {
        x: usize,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
    },
    BatchNorm {
        x: usize,
        p: BnParams,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(usize),
    MaxPool {
        x: usize,
        argmax: Vec<u32>,
    },
    AvgPool(usize),
    Upsample {
        x: usize,
        factor: usize,
    },
    Concat(Vec<usize>),
    GlobalAvgPool(usize),
    Mean(Vec<usize>),
}

struct Node<E> {
    value: Tensor<E>,
    op: Op,
    needs_grad: bool,
}

/// One recorded forward pass.
pub struct Graph<'p, E> {
    params: &'p ParamStore<E>,
    mode: Mode,
    nodes: Vec<Node<E>>,
    bn_updates: Vec<(ParamId, Vec<E>)>,
}

impl<'p, E: Element> Graph<'p, E> {
    pub fn new(params: &'p ParamStore<E>, mode: Mode) -> Self {
        Graph {
            params,
            mode,
            nodes: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Running-statistics updates produced by train-mode batch norm, as
    /// `(buffer, new value)` pairs.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Vec<E>)> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    pub fn input(&mut self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Stride-1 `k x k` convolution with zero "same" padding (odd `k`).
    /// Weight shape `[c_out, c_in, k, k]`.
    pub fn conv(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>) -> NodeId {
        let wp = self.params.get(w);
        let (c_out, c_in, k) = (wp.shape[0], wp.shape[1], wp.shape[2]);
        assert_eq!(wp.shape[3], k, "square kernel");
        assert!(k % 2 == 1, "odd kernel");
        let xin = &self.nodes[x.0].value;
        assert_eq!(xin.channels(), c_in, "conv {} input channels", wp.name);
        let (n, h, wd) = (xin.batch(), xin.height(), xin.width());
        let hw = h * wd;
        let ckk = c_in * k * k;
        let mut out = Tensor::zeros([n, c_out, h, wd]);
        let mut col = if k == 1 {
            Vec::new()
        } else {
            vec![E::zero(); ckk * hw]
        };
        let weights = &wp.value;
        for img in 0..n {
            let src = xin.image(img);
            let col_ref: &[E] = if k == 1 {
                src
            } else {
                im2col(src, c_in, h, wd, k, &mut col);
                &col
            };
            let dst = out.image_mut(img);
            matmul(
                MatRef::new(weights, c_out, ckk),
                MatRef::new(col_ref, ckk, hw),
                dst,
                E::zero(),
            );
            if let Some(b) = b {
                let bias = self.params.value(b);
                for (co, row) in dst.chunks_mut(hw).enumerate() {
                    row.iter_mut().for_each(|v| *v += bias[co]);
                }
            }
        }
        self.push(out, Op::Conv { x: x.0, w, b, k }, true)
    }

    pub fn batch_norm(&mut self, x: NodeId, p: BnParams) -> NodeId {
        let xin = &self.nodes[x.0].value;
        let (n, c, hw) = (xin.batch(), xin.channels(), xin.height() * xin.width());
        let count = (n * hw) as f64;
        let batch_stats = self.mode == Mode::Train;
        let (mean, var): (Vec<f64>, Vec<f64>) = if batch_stats {
            (0..c)
                .map(|ch| {
                    let mut s = 0.0;
                    for img in 0..n {
                        s += xin.image(img)[ch * hw..(ch + 1) * hw]
                            .iter()
                            .map(|v| v.to_f64().unwrap_or(0.0))
                            .sum::<f64>();
                    }
                    let mean = s / count;
                    let mut ss = 0.0;
                    for img in 0..n {
                        ss += xin.image(img)[ch * hw..(ch + 1) * hw]
                            .iter()
                            .map(|v| (v.to_f64().unwrap_or(0.0) - mean).powi(2))
                            .sum::<f64>();
                    }
                    (mean, ss / count)
                })
                .unzip()
        } else {
            let rm = self.params.value(p.running_mean);
            let rv = self.params.value(p.running_var);
            (0..c)
                .map(|ch| {
                    (
                        rm[ch].to_f64().unwrap_or(0.0),
                        rv[ch].to_f64().unwrap_or(1.0),
                    )
                })
                .unzip()
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gamma = self.params.value(p.gamma);
        let beta = self.params.value(p.beta);
        let mut out = Tensor::zeros(xin.shape);
        for img in 0..n {
            let src = xin.image(img);
            let dst = out.image_mut(img);
            for ch in 0..c {
                let scale = gamma[ch] * E::of(inv_std[ch]);
                let shift = beta[ch] - scale * E::of(mean[ch]);
                for (d, &s) in dst[ch * hw..(ch + 1) * hw]
                    .iter_mut()
                    .zip(&src[ch * hw..(ch + 1) * hw])
                {
                    *d = s * scale + shift;
                }
            }
        }
        if batch_stats {
            let m = E::of(BN_MOMENTUM);
            let unbias = if count > 1.0 {
                count / (count - 1.0)
            } else {
                1.0
            };
            let rm = self.params.value(p.running_mean);
            let rv = self.params.value(p.running_var);
            let new_mean = (0..c)
                .map(|ch| (E::one() - m) * rm[ch] + m * E::of(mean[ch]))
                .collect();
            let new_var = (0..c)
                .map(|ch| (E::one() - m) * rv[ch] + m * E::of(var[ch] * unbias))
                .collect();
            self.bn_updates.push((p.running_mean, new_mean));
            self.bn_updates.push((p.running_var, new_var));
        }
        self.push(
            out,
            Op::BatchNorm {
                x: x.0,
                p,
                mean,
                inv_std,
                batch_stats,
            },
            true,
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xin = &self.nodes[x.0].value;
        let out = Tensor {
            shape: xin.shape,
            // NaN passes through so divergence stays visible in the loss.
            data: xin
                .data
                .iter()
                .map(|&v| {
                    if v > E::zero() || v.is_nan() {
                        v
                    } else {
                        E::zero()
                    }
                })
                .collect(),
        };
        let needs = self.needs(x.0);
        self.push(out, Op::Relu(x.0), needs)
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool(&mut self, x: NodeId) -> NodeId {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, w] = xin.shape;
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0u32; n * c * oh * ow];
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let i0 = base + 2 * y * w + 2 * xx;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if xin.data[cand] > xin.data[best] {
                            best = cand;
                        }
                    }
                    out.data[o] = xin.data[best];
                    argmax[o] = best as u32;
                    o += 1;
                }
            }
        }
        let needs = self.needs(x.0);
        self.push(out, Op::MaxPool { x: x.0, argmax }, needs)
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool(&mut self, x: NodeId) -> NodeId {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, w] = xin.shape;
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let quarter = E::of(0.25);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let i0 = base + 2 * y * w + 2 * xx;
                    out.data[o] =
                        (xin.data[i0] + xin.data[i0 + 1] + xin.data[i0 + w] + xin.data[i0 + w + 1])
                            * quarter;
                    o += 1;
                }
            }
        }
        let needs = self.needs(x.0);
        self.push(out, Op::AvgPool(x.0), needs)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> NodeId {
        assert!(factor >= 1);
        if factor == 1 {
            return x;
        }
        let xin = &self.nodes[x.0].value;
        let [n, c, h, w] = xin.shape;
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for plane in 0..n * c {
            let src = &xin.data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out.data[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                let row = &src[(y / factor) * w..(y / factor + 1) * w];
                for (xx, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = row[xx / factor];
                }
            }
        }
        let needs = self.needs(x.0);
        self.push(out, Op::Upsample { x: x.0, factor }, needs)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let first = &self.nodes[xs[0].0].value;
        let (n, h, w) = (first.batch(), first.height(), first.width());
        let c_total: usize = xs
            .iter()
            .map(|x| {
                let t = &self.nodes[x.0].value;
                assert_eq!(
                    (t.batch(), t.height(), t.width()),
                    (n, h, w),
                    "concat shapes"
                );
                t.channels()
            })
            .sum();
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for img in 0..n {
            let dst = out.image_mut(img);
            let mut offset = 0;
            for x in xs {
                let src = self.nodes[x.0].value.image(img);
                dst[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let needs = xs.iter().any(|x| self.needs(x.0));
        self.push(out, Op::Concat(xs.iter().map(|x| x.0).collect()), needs)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, w] = xin.shape;
        let hw = h * w;
        let inv = E::of(1.0 / hw as f64);
        let data = (0..n * c)
            .map(|plane| {
                xin.data[plane * hw..(plane + 1) * hw]
                    .iter()
                    .fold(E::zero(), |a, &b| a + b)
                    * inv
            })
            .collect();
        let needs = self.needs(x.0);
        self.push(
            Tensor::from_vec([n, c, 1, 1], data),
            Op::GlobalAvgPool(x.0),
            needs,
        )
    }

    /// Element-wise mean of equally shaped tensors.
    pub fn mean(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let shape = self.nodes[xs[0].0].value.shape;
        let mut out = Tensor::zeros(shape);
        for x in xs {
            out.add_assign(&self.nodes[x.0].value);
        }
        let inv = E::of(1.0 / xs.len() as f64);
        out.data.iter_mut().for_each(|v| *v *= inv);
        let needs = xs.iter().any(|x| self.needs(x.0));
        self.push(out, Op::Mean(xs.iter().map(|x| x.0).collect()), needs)
    }

    /// Back-propagate the given output gradients.
    pub fn backward(&self, seeds: &[(NodeId, Tensor<E>)]) -> Gradients<E> {
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            assert_eq!(g.shape, self.nodes[id.0].value.shape, "seed gradient shape");
            accumulate(&mut grads[id.0], g.clone());
        }
        let mut pgrads = Gradients::new(self.params.len());
        let last = seeds.iter().map(|(id, _)| id.0).max().unwrap_or(0);

        for i in (0..=last).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Conv { x, w, b, k } => {
                    let dx = self.conv_backward(*x, *w, *b, *k, &dy, &mut pgrads);
                    if let Some(dx) = dx {
                        accumulate(&mut grads[*x], dx);
                    }
                }
                Op::BatchNorm {
                    x,
                    p,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let dx =
                        self.bn_backward(*x, *p, mean, inv_std, *batch_stats, &dy, &mut pgrads);
                    if let Some(dx) = dx {
                        accumulate(&mut grads[*x], dx);
                    }
                }
                Op::Relu(x) => {
                    if self.needs(*x) {
                        let mut dx = dy;
                        for (d, &y) in dx.data.iter_mut().zip(&node.value.data) {
                            if y <= E::zero() {
                                *d = E::zero();
                            }
                        }
                        accumulate(&mut grads[*x], dx);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if self.needs(*x) {
                        let mut dx = Tensor::zeros(self.nodes[*x].value.shape);
                        for (o, &src) in argmax.iter().enumerate() {
                            dx.data[src as usize] += dy.data[o];
                        }
                        accumulate(&mut grads[*x], dx);
                    }
                }
                Op::AvgPool(x) => {
                    if self.needs(*x) {
                        let shape = self.nodes[*x].value.shape;
                        let (h, w) = (shape[2], shape[3]);
                        let (oh, ow) = (h / 2, w / 2);
                        let quarter = E::of(0.25);
                        let mut dx = Tensor::zeros(shape);
                        for plane in 0..shape[0] * shape[1] {
                            for y in 0..oh {
                                for xx in 0..ow {
                                    let g = dy.data[plane * oh * ow + y * ow + xx] * quarter;
                                    let i0 = plane * h * w + 2 * y * w + 2 * xx;
                                    for j in [i0, i0 + 1, i0 + w, i0 + w + 1] {
                                        dx.data[j] += g;
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads[*x], dx);
                    }
                }
                Op::Upsample { x, factor } => {
                    if self.needs(*x) {
                        let shape = self.nodes[*x].value.shape;
                        let (h, w) = (shape[2], shape[3]);
                        let (oh, ow) = (h * factor, w * factor);
                        let mut dx = Tensor::zeros(shape);
                        for plane in 0..shape[0] * shape[1] {
                            for y in 0..oh {
                                for xx in 0..ow {
                                    dx.data[plane * h * w + (y / factor) * w + xx / factor] +=
                                        dy.data[plane * oh * ow + y * ow + xx];
                                }
                            }
                        }
                        accumulate(&mut grads[*x], dx);
                    }
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let shape = self.nodes[x].value.shape;
                        let len = shape[1] * shape[2] * shape[3];
                        if self.needs(x) {
                            let mut dx = Tensor::zeros(shape);
                            for img in 0..shape[0] {
                                dx.image_mut(img)
                                    .copy_from_slice(&dy.image(img)[offset..offset + len]);
                            }
                            accumulate(&mut grads[x], dx);
                        }
                        offset += len;
                    }
                }
                Op::GlobalAvgPool(x) => {
                    if self.needs(*x) {
                        let shape = self.nodes[*x].value.shape;
                        let hw = shape[2] * shape[3];
                        let inv = E::of(1.0 / hw as f64);
                        let mut dx = Tensor::zeros(shape);
                        for plane in 0..shape[0] * shape[1] {
                            let g = dy.data[plane] * inv;
                            dx.data[plane * hw..(plane + 1) * hw]
                                .iter_mut()
                                .for_each(|v| *v = g);
                        }
                        accumulate(&mut grads[*x], dx);
                    }
                }
                Op::Mean(xs) => {
                    let inv = E::of(1.0 / xs.len() as f64);
                    for &x in xs {
                        if self.needs(x) {
                            let mut dx = dy.clone();
                            dx.data.iter_mut().for_each(|v| *v *= inv);
                            accumulate(&mut grads[x], dx);
                        }
                    }
                }
            }
        }
        pgrads
    }

    fn conv_backward(
        &self,
        x: usize,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
        dy: &Tensor<E>,
        pgrads: &mut Gradients<E>,
    ) -> Option<Tensor<E>> {
        let xin = &self.nodes[x].value;
        let wp = self.params.get(w);
        let (c_out, c_in) = (wp.shape[0], wp.shape[1]);
        let (n, h, wd) = (xin.batch(), xin.height(), xin.width());
        let hw = h * wd;
        let ckk = c_in * k * k;

        if let Some(b) = b {
            let db = pgrads.slot(b, c_out);
            for img in 0..n {
                for (co, row) in dy.image(img).chunks(hw).enumerate() {
                    db[co] += row.iter().fold(E::zero(), |a, &v| a + v);
                }
            }
        }

        let need_dx = self.needs(x);
        let mut dx = need_dx.then(|| Tensor::zeros(xin.shape));
        let mut col = if k == 1 {
            Vec::new()
        } else {
            vec![E::zero(); ckk * hw]
        };
        let mut dcol = if k == 1 || !need_dx {
            Vec::new()
        } else {
            vec![E::zero(); ckk * hw]
        };
        let mut dw = vec![E::zero(); c_out * ckk];
        for img in 0..n {
            let dy_img = dy.image(img);
            let col_ref: &[E] = if k == 1 {
                xin.image(img)
            } else {
                im2col(xin.image(img), c_in, h, wd, k, &mut col);
                &col
            };
            // dW += dY * col^T
            matmul(
                MatRef::new(dy_img, c_out, hw),
                MatRef::t(col_ref, ckk, hw),
                &mut dw,
                E::one(),
            );
            if let Some(dx) = dx.as_mut() {
                // dcol = W^T * dY
                if k == 1 {
                    matmul(
                        MatRef::t(&wp.value, c_out, ckk),
                        MatRef::new(dy_img, c_out, hw),
                        dx.image_mut(img),
                        E::zero(),
                    );
                } else {
                    matmul(
                        MatRef::t(&wp.value, c_out, ckk),
                        MatRef::new(dy_img, c_out, hw),
                        &mut dcol,
                        E::zero(),
                    );
                    col2im(&dcol, c_in, h, wd, k, dx.image_mut(img));
                }
            }
        }
        let slot = pgrads.slot(w, c_out * ckk);
        for (s, d) in slot.iter_mut().zip(dw) {
            *s += d;
        }
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward(
        &self,
        x: usize,
        p: BnParams,
        mean: &[f64],
        inv_std: &[f64],
        batch_stats: bool,
        dy: &Tensor<E>,
        pgrads: &mut Gradients<E>,
    ) -> Option<Tensor<E>> {
        let xin = &self.nodes[x].value;
        let (n, c, hw) = (xin.batch(), xin.channels(), xin.height() * xin.width());
        let count = (n * hw) as f64;
        let gamma = self.params.value(p.gamma);
        let f = |v: E| v.to_f64().unwrap_or(0.0);

        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for img in 0..n {
            let xs = xin.image(img);
            let gs = dy.image(img);
            for ch in 0..c {
                for j in ch * hw..(ch + 1) * hw {
                    let xhat = (f(xs[j]) - mean[ch]) * inv_std[ch];
                    dgamma[ch] += f(gs[j]) * xhat;
                    dbeta[ch] += f(gs[j]);
                }
            }
        }
        {
            let slot = pgrads.slot(p.gamma, c);
            for ch in 0..c {
                slot[ch] += E::of(dgamma[ch]);
            }
        }
        {
            let slot = pgrads.slot(p.beta, c);
            for ch in 0..c {
                slot[ch] += E::of(dbeta[ch]);
            }
        }
        if !self.needs(x) {
            return None;
        }
        let mut dx = Tensor::zeros(xin.shape);
        for img in 0..n {
            let xs = xin.image(img);
            let gs = dy.image(img);
            let out = dx.image_mut(img);
            for ch in 0..c {
                let g = f(gamma[ch]) * inv_std[ch];
                for j in ch * hw..(ch + 1) * hw {
                    out[j] = if batch_stats {
                        let xhat = (f(xs[j]) - mean[ch]) * inv_std[ch];
                        E::of(g / count * (count * f(gs[j]) - dbeta[ch] - xhat * dgamma[ch]))
                    } else {
                        E::of(g * f(gs[j]))
                    };
                }
            }
        }
        Some(dx)
    }
}

fn accumulate<E: Element>(slot: &mut Option<Tensor<E>>, g: Tensor<E>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Unfold `k x k` zero-padded patches of a `c x h x w` image into a
/// `(c k k) x (h w)` row-major matrix.
fn im2col<E: Element>(src: &[E], c: usize, h: usize, w: usize, k: usize, col: &mut [E]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.iter_mut().for_each(|v| *v = E::zero());
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // Valid output columns satisfy 0 <= x + dx < w.
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                    out[..x0.min(w)].iter_mut().for_each(|v| *v = E::zero());
                    if x0 < x1 {
                        let s0 = (x0 as isize + dx) as usize;
                        out[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                    }
                    out[x1.max(x0).min(w)..]
                        .iter_mut()
                        .for_each(|v| *v = E::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back into the image.
fn col2im<E: Element>(col: &[E], c: usize, h: usize, w: usize, k: usize, dst: &mut [E]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    dst.iter_mut().for_each(|v| *v = E::zero());
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = ci * hw + sy as usize * w;
                    let s0 = (x0 as isize + dx) as usize;
                    let target = &mut dst[base + s0..base + s0 + (x1 - x0)];
                    for (t, &g) in target.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *t += g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    /// Direct convolution used as an oracle for im2col + gemm.
    fn naive_conv(x: &Tensor<f64>, w: &[f64], c_out: usize, k: usize) -> Tensor<f64> {
        let [n, c_in, h, wd] = x.shape;
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros([n, c_out, h, wd]);
        for img in 0..n {
            for co in 0..c_out {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut s = 0.0;
                        for ci in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - pad;
                                    let sx = xx as isize + kx as isize - pad;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    s += x.data
                                        [((img * c_in + ci) * h + sy as usize) * wd + sx as usize]
                                        * w[((co * c_in + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data[((img * c_out + co) * h + y) * wd + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_evaluation() {
        for k in [1, 3, 5] {
            let x = Tensor::from_vec(
                [2, 3, 5, 7],
                (0..210).map(|i| ((i * 37) % 11) as f64 - 5.0).collect(),
            );
            let w: Vec<f64> = (0..4 * 3 * k * k)
                .map(|i| ((i * 13) % 7) as f64 / 7.0 - 0.5)
                .collect();
            let mut store = ParamStore::new();
            let wid = store.add("w", vec![4, 3, k, k], ParamKind::Trainable, w.clone());
            let mut g = Graph::new(&store, Mode::Eval);
            let xi = g.input(x.clone());
            let y = g.conv(xi, wid, None);
            let expected = naive_conv(&x, &w, 4, k);
            for (a, b) in g.value(y).data.iter().zip(&expected.data) {
                assert!((a - b).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let (c, h, w, k) = (2, 4, 5, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let cv: Vec<f64> = (0..c * k * k * h * w)
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut col = vec![0.0; cv.len()];
        im2col(&x, c, h, w, k, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&cv, c, h, w, k, &mut back);
        let lhs: f64 = col.iter().zip(&cv).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::from_vec([1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]));
        let m = g.max_pool(x);
        assert_eq!(g.value(m).data, vec![4.0]);
        let a = g.avg_pool(x);
        assert_eq!(g.value(a).data, vec![2.5]);
        let u = g.upsample(m, 3);
        assert_eq!(g.value(u).shape, [1, 1, 3, 3]);
        assert!(g.value(u).data.iter().all(|&v| v == 4.0));
        let c = g.concat(&[x, x]);
        assert_eq!(g.value(c).shape, [1, 2, 2, 2]);
        let p = g.global_avg_pool(c);
        assert_eq!(g.value(p).data, vec![2.5, 2.5]);
    }
}
