use std::collections::{BTreeMap, HashMap};

use crate::backend::{Backend, ParamKey};
use crate::kernels::{self, ConvGeom};
use crate::{Float, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<F> {
    Input,
    Watched,
    Param(ParamKey),
    Conv { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    LeakyRelu { x: usize, slope: F },
    Add { a: usize, b: usize },
    Residual { x: usize, branch: usize, scale: F },
    Concat { inputs: Vec<usize>, channels: Vec<usize> },
    UpNearest { x: usize },
    UpBilinear { x: usize },
    MaxPool { x: usize, argmax: Vec<u32> },
    Repeat { x: usize, times: usize },
    ChannelAffine { x: usize, scale: Vec<F> },
    Spectral { w: usize, u: Vec<F>, v: Vec<F>, sigma: F },
    L1 { a: usize, b: usize },
    RelBce { pos: usize, neg: usize },
    WeightedSum { terms: Vec<(usize, F)> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    /// Summed over every use of the parameter on the tape.
    pub params: BTreeMap<ParamKey, Tensor<F>>,
    pub watched: HashMap<NodeId, Tensor<F>>,
}

impl<F: Float> Gradients<F> {
    pub fn param(&self, key: ParamKey) -> Option<&Tensor<F>> {
        self.params.get(&key)
    }

    /// Global L2 norm over the parameters of one group.
    pub fn group_norm(&self, group: u32) -> F {
        self.params
            .iter()
            .filter(|(k, _)| k.group == group)
            .map(|(_, g)| g.data().iter().map(|&x| x * x).sum::<F>())
            .sum::<F>()
            .sqrt()
    }
}

/// Records a forward pass for reverse-mode differentiation.
///
/// Parameters whose group is not marked trainable are recorded as
/// constants, so a frozen network still propagates gradient to its inputs
/// without accumulating gradient for its own weights.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    trainable: Vec<u32>,
}

impl<F: Float> Tape<F> {
    pub fn new(trainable_groups: &[u32]) -> Self {
        Tape { nodes: Vec::new(), trainable: trainable_groups.to_vec() }
    }

    /// A leaf input whose gradient is reported in [`Gradients::watched`].
    pub fn watch(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Watched, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn v(&self, id: usize) -> &Tensor<F> {
        &self.nodes[id].value
    }

    /// Differentiate the scalar `loss`, consuming the tape. Activations are
    /// released as the sweep passes them.
    pub fn backward(mut self, loss: NodeId) -> Gradients<F> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward from a non-scalar");
        self.nodes.truncate(loss.0 + 1);
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), F::one()));
        let mut out = Gradients { params: BTreeMap::new(), watched: HashMap::new() };

        while let Some(node) = self.nodes.pop() {
            let id = self.nodes.len();
            let Some(g) = grads[id].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut send = |j: usize, contrib: Tensor<F>| {
                if !nodes[j].needs_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_scaled(&contrib, F::one()),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match node.op {
                Op::Input => {}
                Op::Watched => {
                    out.watched.insert(NodeId(id), g);
                }
                Op::Param(key) => match out.params.get_mut(&key) {
                    Some(acc) => acc.add_scaled(&g, F::one()),
                    None => {
                        out.params.insert(key, g);
                    }
                },
                Op::Conv { x, w, b, geom } => {
                    let want = (nodes[x].needs_grad, nodes[w].needs_grad, b.is_some_and(|b| nodes[b].needs_grad));
                    let cg = kernels::conv2d_backward(&nodes[x].value, &nodes[w].value, &g, geom, want);
                    if let Some(dx) = cg.dx {
                        send(x, dx);
                    }
                    if let Some(dw) = cg.dw {
                        send(w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, cg.db) {
                        let shape = nodes[b].value.shape();
                        send(b, db.reshape(shape));
                    }
                }
                Op::LeakyRelu { x, slope } => send(x, kernels::leaky_relu_backward(&node.value, &g, slope)),
                Op::Add { a, b } => {
                    send(a, g.clone());
                    send(b, g);
                }
                Op::Residual { x, branch, scale } => {
                    send(branch, g.map(|v| v * scale));
                    send(x, g);
                }
                Op::Concat { inputs, channels } => {
                    for (j, part) in inputs.into_iter().zip(kernels::split_channels(&g, &channels)) {
                        send(j, part);
                    }
                }
                Op::UpNearest { x } => send(x, kernels::upsample_nearest2x_backward(&g)),
                Op::UpBilinear { x } => send(x, kernels::upsample_bilinear2x_backward(&g)),
                Op::MaxPool { x, argmax } => {
                    let shape = nodes[x].value.shape();
                    send(x, kernels::max_pool2x2_backward(shape, &argmax, &g));
                }
                Op::Repeat { x, times } => send(x, kernels::repeat_channels_backward(&g, times)),
                Op::ChannelAffine { x, scale } => send(x, kernels::channel_scale_backward(&g, &scale)),
                Op::Spectral { w, u, v, sigma } => {
                    send(w, kernels::spectral_normalize_backward(&nodes[w].value, &u, &v, sigma, &g))
                }
                Op::L1 { a, b } => {
                    let da = kernels::l1_mean_backward(&nodes[a].value, &nodes[b].value, g.item());
                    send(b, da.map(|x| -x));
                    send(a, da);
                }
                Op::RelBce { pos, neg } => {
                    let (dp, dn) = kernels::relativistic_bce_backward(&nodes[pos].value, &nodes[neg].value, g.item());
                    send(pos, dp);
                    send(neg, dn);
                }
                Op::WeightedSum { terms } => {
                    for (j, w) in terms {
                        send(j, Tensor::scalar(g.item() * w));
                    }
                }
            }
        }
        out
    }
}

impl<F: Float> Backend<F> for Tape<F> {
    type Value = NodeId;

    fn input(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Input, false)
    }

    fn param(&mut self, key: ParamKey, t: &Tensor<F>) -> NodeId {
        let trainable = self.trainable.contains(&key.group);
        self.push(t.clone(), Op::Param(key), trainable)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor<F> {
        self.v(v.0)
    }

    fn conv2d(&mut self, x: &NodeId, w: &NodeId, b: Option<&NodeId>, geom: ConvGeom) -> NodeId {
        let y = kernels::conv2d(self.v(x.0), self.v(w.0), b.map(|b| self.v(b.0)), geom);
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let ng = self.ng(&ids);
        self.push(y, Op::Conv { x: x.0, w: w.0, b: b.map(|b| b.0), geom }, ng)
    }

    fn leaky_relu(&mut self, x: &NodeId, slope: F) -> NodeId {
        let y = kernels::leaky_relu(self.v(x.0), slope);
        let ng = self.ng(&[x.0]);
        self.push(y, Op::LeakyRelu { x: x.0, slope }, ng)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let y = self.v(a.0).zip_map(self.v(b.0), |x, y| x + y);
        let ng = self.ng(&[a.0, b.0]);
        self.push(y, Op::Add { a: a.0, b: b.0 }, ng)
    }

    fn residual(&mut self, x: &NodeId, branch: &NodeId, scale: F) -> NodeId {
        let y = self.v(x.0).zip_map(self.v(branch.0), |a, b| a + scale * b);
        let ng = self.ng(&[x.0, branch.0]);
        self.push(y, Op::Residual { x: x.0, branch: branch.0, scale }, ng)
    }

    fn concat(&mut self, xs: &[&NodeId]) -> NodeId {
        let tensors: Vec<&Tensor<F>> = xs.iter().map(|x| self.v(x.0)).collect();
        let channels = tensors.iter().map(|t| t.shape().c).collect();
        let y = kernels::concat_channels(&tensors);
        let inputs: Vec<usize> = xs.iter().map(|x| x.0).collect();
        let ng = self.ng(&inputs);
        self.push(y, Op::Concat { inputs, channels }, ng)
    }

    fn upsample_nearest2x(&mut self, x: &NodeId) -> NodeId {
        let y = kernels::upsample_nearest2x(self.v(x.0));
        let ng = self.ng(&[x.0]);
        self.push(y, Op::UpNearest { x: x.0 }, ng)
    }

    fn upsample_bilinear2x(&mut self, x: &NodeId) -> NodeId {
        let y = kernels::upsample_bilinear2x(self.v(x.0));
        let ng = self.ng(&[x.0]);
        self.push(y, Op::UpBilinear { x: x.0 }, ng)
    }

    fn max_pool2x2(&mut self, x: &NodeId) -> NodeId {
        let (y, argmax) = kernels::max_pool2x2(self.v(x.0));
        let ng = self.ng(&[x.0]);
        self.push(y, Op::MaxPool { x: x.0, argmax }, ng)
    }

    fn repeat_channels(&mut self, x: &NodeId, times: usize) -> NodeId {
        let y = kernels::repeat_channels(self.v(x.0), times);
        let ng = self.ng(&[x.0]);
        self.push(y, Op::Repeat { x: x.0, times }, ng)
    }

    fn channel_affine(&mut self, x: &NodeId, scale: &[F], shift: &[F]) -> NodeId {
        let y = kernels::channel_affine(self.v(x.0), scale, shift);
        let ng = self.ng(&[x.0]);
        self.push(y, Op::ChannelAffine { x: x.0, scale: scale.to_vec() }, ng)
    }

    fn spectral_normalize(&mut self, w: &NodeId, u: &[F], v: &[F]) -> NodeId {
        let wt = self.v(w.0);
        let sigma = kernels::bilinear_form(wt, u, v);
        let y = wt.map(|x| x / sigma);
        let ng = self.ng(&[w.0]);
        self.push(y, Op::Spectral { w: w.0, u: u.to_vec(), v: v.to_vec(), sigma }, ng)
    }

    fn l1_mean(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let y = Tensor::scalar(kernels::l1_mean(self.v(a.0), self.v(b.0)));
        let ng = self.ng(&[a.0, b.0]);
        self.push(y, Op::L1 { a: a.0, b: b.0 }, ng)
    }

    fn relativistic_bce(&mut self, pos: &NodeId, neg: &NodeId) -> NodeId {
        let y = Tensor::scalar(kernels::relativistic_bce(self.v(pos.0), self.v(neg.0)));
        let ng = self.ng(&[pos.0, neg.0]);
        self.push(y, Op::RelBce { pos: pos.0, neg: neg.0 }, ng)
    }

    fn weighted_sum(&mut self, terms: &[(&NodeId, F)]) -> NodeId {
        let total = terms.iter().map(|(t, w)| self.v(t.0).item() * *w).sum();
        let ids: Vec<usize> = terms.iter().map(|(t, _)| t.0).collect();
        let ng = self.ng(&ids);
        let terms = terms.iter().map(|(t, w)| (t.0, *w)).collect();
        self.push(Tensor::full(Shape::SCALAR, total), Op::WeightedSum { terms }, ng)
    }
}
