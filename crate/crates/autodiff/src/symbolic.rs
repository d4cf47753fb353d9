use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::tensor::Tensor;

impl Graph {
    /// Builds the reverse-mode adjoint of `seeds` as new graph nodes.
    ///
    /// Each seed pairs an output node with a node holding its cotangent (same
    /// element count). The returned entry for every `wrt` node is the node
    /// computing the total derivative `Σ seedᵀ ∂out/∂wrt`, or `None` when no
    /// seed output depends on it. The new nodes are ordinary graph nodes, so
    /// they can be evaluated with `forward` and differentiated again.
    ///
    /// Fails with [`AutodiffError::NoSymbolicAdjoint`] if a primitive on a
    /// path from `wrt` to a seed output lacks a symbolic rule (matmul,
    /// convolution, pooling, norm).
    pub fn grad_nodes(
        &mut self,
        seeds: &[(NodeId, NodeId)],
        wrt: &[NodeId],
    ) -> Result<Vec<Option<NodeId>>> {
        let Some(top) = seeds.iter().map(|s| s.0.index()).max() else {
            return Ok(vec![None; wrt.len()]);
        };
        let n = top + 1;
        let mut reach = vec![false; n];
        for w in wrt {
            if w.index() < n {
                reach[w.index()] = true;
            }
        }
        for i in 0..n {
            if !reach[i] && self.nodes[i].inputs.iter().any(|p| reach[p.index()]) {
                reach[i] = true;
            }
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; n];
        for &(out, seed) in seeds {
            assert_eq!(
                self.numel(out),
                self.numel(seed),
                "grad_nodes: seed size does not match output"
            );
            let seed = self.conform(seed, out);
            adj[out.index()] = Some(match adj[out.index()] {
                Some(prev) => self.add(prev, seed),
                None => seed,
            });
        }

        for i in (0..n).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let inputs = self.nodes[i].inputs.clone();
            for (slot, inp) in inputs.iter().enumerate() {
                if !reach[inp.index()] {
                    continue;
                }
                if let Some(c) = self.symbolic_adjoint(NodeId(i), slot, g)? {
                    let c = self.conform(c, *inp);
                    adj[inp.index()] = Some(match adj[inp.index()] {
                        Some(prev) => self.add(prev, c),
                        None => c,
                    });
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| if w.index() < n { adj[w.index()] } else { None })
            .collect())
    }

    /// Jacobian-vector products `J·t` for `outputs` with respect to `inputs`.
    ///
    /// Built from two reverse sweeps: the vector-Jacobian product with a dummy
    /// cotangent `s` is linear in `s`, so differentiating `⟨Jᵀs, t⟩` with
    /// respect to `s` yields `J t`. Entries are `None` where the output does
    /// not depend on any input.
    pub fn jvp_nodes(
        &mut self,
        outputs: &[NodeId],
        inputs: &[NodeId],
        tangents: &[NodeId],
    ) -> Result<Vec<Option<NodeId>>> {
        assert_eq!(inputs.len(), tangents.len(), "jvp_nodes: one tangent per input");
        let dummies: Vec<NodeId> = outputs
            .iter()
            .map(|&o| {
                let shape = self.shape(o).to_vec();
                self.constant(Tensor::zeros(&shape))
            })
            .collect();
        let seeds: Vec<(NodeId, NodeId)> = outputs.iter().copied().zip(dummies.iter().copied()).collect();
        let vjp = self.grad_nodes(&seeds, inputs)?;
        let mut total = None;
        for (v, &t) in vjp.into_iter().zip(tangents) {
            let Some(v) = v else { continue };
            let p = self.mul(v, t);
            let p = self.sum(p);
            total = Some(match total {
                Some(prev) => self.add(prev, p),
                None => p,
            });
        }
        let Some(total) = total else {
            return Ok(vec![None; outputs.len()]);
        };
        let one = self.scalar(1.0);
        self.grad_nodes(&[(total, one)], &dummies)
    }

    /// Reshapes or sums `c` so that it matches the shape of `like`.
    fn conform(&mut self, c: NodeId, like: NodeId) -> NodeId {
        let (nc, nl) = (self.numel(c), self.numel(like));
        let c = if nl == 1 && nc > 1 { self.sum(c) } else { c };
        if self.shape(c) != self.shape(like) {
            let shape = self.shape(like).to_vec();
            self.reshape(c, &shape)
        } else {
            c
        }
    }

    fn symbolic_adjoint(&mut self, node: NodeId, slot: usize, g: NodeId) -> Result<Option<NodeId>> {
        let op = self.nodes[node.index()].op.clone();
        let inputs = self.nodes[node.index()].inputs.clone();
        let a = inputs[0];
        let y = node;
        let out = match op {
            Op::Placeholder(_) | Op::Param { .. } | Op::Constant | Op::Step => None,
            Op::Add | Op::Offset(_) | Op::WrapAngle => Some(g),
            Op::Sub => Some(if slot == 0 { g } else { self.neg(g) }),
            Op::Mul => Some(self.mul(g, inputs[1 - slot])),
            Op::Div => {
                let b = inputs[1];
                Some(if slot == 0 {
                    self.div(g, b)
                } else {
                    let q = self.div(y, b);
                    let p = self.mul(g, q);
                    self.neg(p)
                })
            }
            Op::Atan2 => {
                let (yy, xx) = (inputs[0], inputs[1]);
                let x2 = self.square(xx);
                let y2 = self.square(yy);
                let r = self.add(x2, y2);
                Some(if slot == 0 {
                    let q = self.div(xx, r);
                    self.mul(g, q)
                } else {
                    let q = self.div(yy, r);
                    let p = self.mul(g, q);
                    self.neg(p)
                })
            }
            Op::Neg => Some(self.neg(g)),
            Op::Scale(c) => Some(self.scale(g, c)),
            Op::MulConst(c) => Some(self.mul_const(g, c.to_vec())),
            Op::Sin => {
                let c = self.cos(a);
                Some(self.mul(g, c))
            }
            Op::Cos => {
                let s = self.sin(a);
                let p = self.mul(g, s);
                Some(self.neg(p))
            }
            Op::Tanh => {
                let y2 = self.square(y);
                let ny2 = self.neg(y2);
                let d = self.offset(ny2, 1.0);
                Some(self.mul(g, d))
            }
            Op::Exp => Some(self.mul(g, y)),
            Op::Sqrt => {
                let h = self.scale(g, 0.5);
                Some(self.div(h, y))
            }
            Op::Square => {
                let p = self.mul(g, a);
                Some(self.scale(p, 2.0))
            }
            Op::Relu => {
                let m = self.step(a);
                Some(self.mul(g, m))
            }
            Op::Sigmoid => {
                let ny = self.neg(y);
                let one_minus = self.offset(ny, 1.0);
                let d = self.mul(y, one_minus);
                Some(self.mul(g, d))
            }
            Op::MaxConst(c) => {
                let s = self.offset(a, -c);
                let m = self.step(s);
                Some(self.mul(g, m))
            }
            Op::MinConst(c) => {
                let na = self.neg(a);
                let s = self.offset(na, c);
                let m = self.step(s);
                Some(self.mul(g, m))
            }
            Op::Reshape => {
                let shape = self.shape(a).to_vec();
                Some(self.reshape(g, &shape))
            }
            Op::Sum => {
                let n = self.numel(a);
                Some(self.broadcast(g, n))
            }
            Op::Broadcast => Some(self.sum(g)),
            Op::Slice { start, .. } => {
                let n = self.numel(a);
                Some(self.pad_slice(g, start, n))
            }
            Op::PadSlice { start, .. } => {
                let n = self.numel(a);
                Some(self.slice(g, start, n))
            }
            Op::Concat => {
                let offset: usize = inputs[..slot].iter().map(|&p| self.numel(p)).sum();
                let len = self.numel(inputs[slot]);
                Some(self.slice(g, offset, len))
            }
            Op::CumSum => Some(self.rev_cumsum(g)),
            Op::RevCumSum => Some(self.cumsum(g)),
            Op::Custom(op) => op.symbolic_backward(self, slot, &inputs, y, g)?,
            Op::MatMul | Op::Conv2d { .. } | Op::MaxPool2d { .. } | Op::L2Norm => {
                return Err(AutodiffError::NoSymbolicAdjoint {
                    op: op.name().to_string(),
                })
            }
        };
        Ok(out)
    }
}
