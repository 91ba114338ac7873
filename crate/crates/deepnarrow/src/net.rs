//! Layered affine+activation networks with per-neuron activation tags,
//! optional truncation front-ends and register layouts.

use crate::activation::ActivationSpec;
use crate::encoder::TruncationFrontEnd;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major, `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activations: Vec<ActivationSpec>,
}

impl Layer {
    pub fn from_rows(rows: Vec<Vec<f64>>, biases: Vec<f64>, activations: Vec<ActivationSpec>) -> Self {
        let out_dim = rows.len();
        let in_dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut weights = Vec::with_capacity(out_dim * in_dim);
        for r in &rows {
            weights.extend_from_slice(r);
        }
        Layer {
            in_dim,
            out_dim,
            weights,
            biases,
            activations,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.in_dim..(i + 1) * self.in_dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.weights[i * self.in_dim..(i + 1) * self.in_dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.out_dim * self.in_dim {
            return Err(Error::InvalidNetwork(format!(
                "weight matrix has {} entries, expected {}x{}",
                self.weights.len(),
                self.out_dim,
                self.in_dim
            )));
        }
        if self.biases.len() != self.out_dim || self.activations.len() != self.out_dim {
            return Err(Error::InvalidNetwork(format!(
                "row count {} != biases {} or activations {}",
                self.out_dim,
                self.biases.len(),
                self.activations.len()
            )));
        }
        if self.weights.iter().chain(self.biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("nonfinite layer parameter".into()));
        }
        for a in &self.activations {
            a.validate()?;
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        for i in 0..self.out_dim {
            let row = self.row(i);
            let mut acc = self.biases[i];
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            out.push(self.activations[i].eval(acc));
        }
        out
    }
}

/// Per-hidden-layer register slot assignments of a (p, q)-register-compute net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterLayout {
    pub p: usize,
    pub q: usize,
    /// One entry per hidden layer: the neuron indices acting as registers.
    pub registers: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
    pub truncation: Option<TruncationFrontEnd>,
    pub register_layout: Option<RegisterLayout>,
}

#[derive(Debug, Clone)]
pub struct EvalTrace {
    /// Front-end output (truncated integer values), when a truncation front-end exists.
    pub frontend: Option<Vec<f64>>,
    /// Output vector of every layer, in order. Last entry is the network output.
    pub layers: Vec<Vec<f64>>,
}

impl EvalTrace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Self {
        Network {
            input_dim,
            layers,
            truncation: None,
            register_layout: None,
        }
    }

    /// Width of the first layer's input: raw inputs, or the truncation output.
    pub fn effective_input_dim(&self) -> usize {
        match &self.truncation {
            Some(fe) => fe.n,
            None => self.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(self.effective_input_dim())
    }

    /// Max hidden layer size, ignoring truncation neurons. Zero for a bare output layer.
    pub fn width(&self) -> usize {
        if self.layers.len() <= 1 {
            return 0;
        }
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim)
            .max()
            .unwrap_or(0)
    }

    /// Hidden layers plus one output layer.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = self.effective_input_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|e| {
                Error::InvalidNetwork(format!("layer {i}: {e}"))
            })?;
            if layer.in_dim != dim {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} expects input width {}, previous width is {dim}",
                    layer.in_dim
                )));
            }
            dim = layer.out_dim;
        }
        if let Some(fe) = &self.truncation {
            fe.validate()?;
            if fe.n != self.input_dim {
                return Err(Error::InvalidNetwork(format!(
                    "truncation front-end covers {} inputs, network has {}",
                    fe.n, self.input_dim
                )));
            }
        }
        if let Some(layout) = &self.register_layout {
            self.validate_register_layout(layout)?;
        }
        Ok(())
    }

    fn validate_register_layout(&self, layout: &RegisterLayout) -> Result<()> {
        let hidden = self.layers.len().saturating_sub(1);
        if layout.registers.len() != hidden {
            return Err(Error::InvalidNetwork(format!(
                "register layout covers {} hidden layers, network has {hidden}",
                layout.registers.len()
            )));
        }
        for (i, regs) in layout.registers.iter().enumerate() {
            if regs.len() > layout.p {
                return Err(Error::InvalidNetwork(format!(
                    "hidden layer {i} declares {} registers, layout allows {}",
                    regs.len(),
                    layout.p
                )));
            }
            if i == 0 {
                continue; // first hidden layer reads raw/truncated inputs
            }
            let prev = &layout.registers[i - 1];
            for (j, &slot) in regs.iter().enumerate() {
                if j >= prev.len() {
                    continue; // register chain starts at this layer
                }
                let row = self.layers[i].row(slot);
                for (col, &w) in row.iter().enumerate() {
                    let allowed = col == prev[j];
                    if !allowed && w != 0.0 {
                        return Err(Error::InvalidNetwork(format!(
                            "hidden layer {i} register {j} (slot {slot}) reads non-register column {col}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.layers.last().cloned().unwrap_or_else(|| x.to_vec()))
    }

    pub fn evaluate_scalar(&self, x: &[f64]) -> Result<f64> {
        let out = self.evaluate(x)?;
        out.first().copied().ok_or_else(|| {
            Error::InvalidNetwork("network has no output".into())
        })
    }

    pub fn trace(&self, x: &[f64]) -> Result<EvalTrace> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: 0,
                detail: "nonfinite input".into(),
            });
        }
        let (mut cur, frontend) = match &self.truncation {
            Some(fe) => {
                let t = fe.apply(x)?;
                (t.clone(), Some(t))
            }
            None => (x.to_vec(), None),
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim != cur.len() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} expects width {}, got {}",
                    layer.in_dim,
                    cur.len()
                )));
            }
            cur = layer.apply(&cur);
            if let Some(j) = cur.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: i,
                    detail: format!("neuron {j} overflowed"),
                });
            }
            layers.push(cur.clone());
        }
        Ok(EvalTrace { frontend, layers })
    }

    /// Functional composition: `evaluate(stack(a, b), x) == evaluate(b, evaluate(a, x))`.
    pub fn stack(nets: &[Network]) -> Result<Network> {
        let mut iter = nets.iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidNetwork("stack of zero networks".into()))?;
        let mut out = first.clone();
        out.register_layout = None;
        for net in iter {
            if net.truncation.is_some() {
                return Err(Error::InvalidNetwork(
                    "only the first stacked network may carry a truncation front-end".into(),
                ));
            }
            if net.input_dim != out.output_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "cannot stack: output width {} feeds input width {}",
                    out.output_dim(),
                    net.input_dim
                )));
            }
            out.layers.extend(net.layers.iter().cloned());
        }
        out.validate()?;
        Ok(out)
    }

    pub fn append_layer(mut self, layer: Layer) -> Result<Network> {
        if layer.in_dim != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "appended layer expects width {}, network outputs {}",
                layer.in_dim,
                self.output_dim()
            )));
        }
        self.layers.push(layer);
        Ok(self)
    }

    /// Identity network of the given dimension (single identity output layer).
    pub fn identity(dim: usize) -> Network {
        let mut rows = vec![vec![0.0; dim]; dim];
        for (i, r) in rows.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        Network::new(
            dim,
            vec![Layer::from_rows(
                rows,
                vec![0.0; dim],
                vec![ActivationSpec::identity(); dim],
            )],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_identity() -> Network {
        Network::new(
            1,
            vec![Layer::from_rows(
                vec![vec![1.0]],
                vec![0.0],
                vec![ActivationSpec::identity()],
            )],
        )
    }

    #[test]
    fn identity_layer_passthrough() {
        let net = single_identity();
        assert_eq!(net.evaluate(&[0.7]).unwrap(), vec![0.7]);
    }

    #[test]
    fn tooth_block_evaluation() {
        // t(x) = 2 relu(x) - 4 relu(x - 1/2)
        let hidden = Layer::from_rows(
            vec![vec![1.0], vec![1.0]],
            vec![0.0, -0.5],
            vec![ActivationSpec::relu(), ActivationSpec::relu()],
        );
        let out = Layer::from_rows(
            vec![vec![2.0, -4.0]],
            vec![0.0],
            vec![ActivationSpec::identity()],
        );
        let net = Network::new(1, vec![hidden, out]);
        assert_eq!(net.evaluate_scalar(&[0.25]).unwrap(), 0.5);
        assert_eq!(net.evaluate_scalar(&[0.75]).unwrap(), 0.5);
        assert_eq!(net.evaluate_scalar(&[0.5]).unwrap(), 1.0);
    }

    #[test]
    fn width_depth_bare_output() {
        let net = single_identity();
        assert_eq!(net.width(), 0);
        assert_eq!(net.depth(), 1);
    }

    #[test]
    fn stack_composes_exactly() {
        let a = single_identity();
        let hidden = Layer::from_rows(
            vec![vec![2.0]],
            vec![1.0],
            vec![ActivationSpec::relu()],
        );
        let out = Layer::from_rows(vec![vec![1.0]], vec![0.0], vec![ActivationSpec::identity()]);
        let f = Network::new(1, vec![hidden, out]);
        let stacked = Network::stack(&[a, f.clone()]).unwrap();
        for i in 0..100 {
            let x = -2.0 + 4.0 * i as f64 / 99.0;
            assert_eq!(
                stacked.evaluate_scalar(&[x]).unwrap(),
                f.evaluate_scalar(&[x]).unwrap()
            );
        }
        assert_eq!(stacked.depth(), 3);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let net = single_identity();
        assert!(matches!(
            net.evaluate(&[1.0, 2.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn overflow_reports_layer() {
        let hidden = Layer::from_rows(
            vec![vec![1.0]],
            vec![800.0],
            vec![ActivationSpec::new(crate::activation::ActivationKind::Exponential)],
        );
        let out = Layer::from_rows(vec![vec![1.0]], vec![0.0], vec![ActivationSpec::identity()]);
        let net = Network::new(1, vec![hidden, out]);
        match net.evaluate(&[1.0]) {
            Err(Error::NonFinite { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
