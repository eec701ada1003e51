use crate::error::{invalid, Result};
use crate::numeric::{glorot_uniform, Graph, NodeId, ParamId, ParamStore, Real, RngState, Tensor};
use crate::seq2seq::Regularization;

#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngState) -> Result<Self> {
        let w = store.add(format!("{name}.w"), glorot_uniform(fan_in, fan_out, rng)?)?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?;
        Ok(Self { w, b })
    }

    fn apply<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: NodeId) -> NodeId {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

/// `FC-ReLU-Dropout-FC-ReLU-Dropout-FC` producing `num_classes + 1` logits;
/// index 0 is the background class.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    fc1: Dense,
    fc2: Dense,
    out: Dense,
}

impl ClassifierHead {
    pub const PREFIX: &'static str = "head";

    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if num_classes == 0 {
            return invalid("classifier needs at least one target class");
        }
        let p = Self::PREFIX;
        Ok(Self {
            input_dim,
            hidden_dim,
            num_classes,
            fc1: Dense::new(store, &format!("{p}.fc1"), input_dim, hidden_dim, rng)?,
            fc2: Dense::new(store, &format!("{p}.fc2"), hidden_dim, hidden_dim, rng)?,
            out: Dense::new(store, &format!("{p}.out"), hidden_dim, num_classes + 1, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.num_classes + 1
    }

    pub fn logits<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: NodeId,
        reg: Regularization,
        rng: &mut RngState,
    ) -> Result<NodeId> {
        let mut h = x;
        for layer in [&self.fc1, &self.fc2] {
            let a = layer.apply(g, store, h);
            let r = g.relu(a);
            h = g.dropout(r, reg.dropout, reg.training, rng)?;
        }
        Ok(self.out.apply(g, store, h))
    }

    /// Mean cross-entropy of `x` against `labels`.
    pub fn loss<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: NodeId,
        labels: &[usize],
        reg: Regularization,
        rng: &mut RngState,
    ) -> Result<NodeId> {
        if let Some(&bad) = labels.iter().find(|&&l| l > self.num_classes) {
            return invalid(format!("label {bad} outside 0..={}", self.num_classes));
        }
        if labels.len() != g.value(x).rows() {
            return invalid("one label per row required");
        }
        let logits = self.logits(g, store, x, reg, rng)?;
        let w = F::lit(1.0 / labels.len() as f64);
        Ok(g.cross_entropy(logits, labels.to_vec(), vec![w; labels.len()]))
    }

    /// Class probabilities in evaluation mode, one row per input row.
    pub fn probabilities<F: Real>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let mut unused = RngState::new(0);
        let logits = self.logits(&mut g, store, xn, Regularization::eval(), &mut unused)?;
        let p = g.softmax_rows(logits);
        Ok(g.value(p).clone())
    }
}
