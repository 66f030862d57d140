//! Uncompressed reference model: a plain dense MLP (plus optional embedding
//! bag) built from the materialized initial weights of a compressed model.
//! It trains through ordinary dense linear algebra and serves as the
//! accuracy/loss oracle for compressed training runs.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::matmul::materialize_with_cap;
use crate::optim::{DenseParam, OptimizerConfig};
use crate::trainer::{softmax_cross_entropy, Batch, Model};

#[derive(Clone, Debug)]
pub struct DenseMlp {
    /// Flattened h_in × h_out weight matrices.
    weights: Vec<DenseParam>,
    biases: Vec<DenseParam>,
    /// Flattened vocab × embed_dim table, when the model has one.
    embedding: Option<DenseParam>,
    dims: Vec<usize>,
    vocab_size: usize,
}

impl DenseMlp {
    /// Builds the reference from the compressed model's materialized initial
    /// weights, so both start from identical parameters.
    pub fn from_model(model: &Model) -> Result<Self> {
        let cap = usize::MAX;
        let store = model.store();
        let embedding = match model.embedding() {
            Some(binding) => Some(DenseParam::new(
                materialize_with_cap(store, binding, cap)?
                    .into_raw_vec_and_offset()
                    .0,
            )),
            None => None,
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in model.layers() {
            weights.push(DenseParam::new(
                materialize_with_cap(store, &layer.weight, cap)?
                    .into_raw_vec_and_offset()
                    .0,
            ));
            biases.push(DenseParam::new(layer.bias_values(store)?));
        }
        Ok(Self {
            weights,
            biases,
            embedding,
            dims: model.dims().to_vec(),
            vocab_size: model.spec().vocab_size,
        })
    }

    fn layer_count(&self) -> usize {
        self.weights.len()
    }

    fn weight_matrix(&self, l: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (self.dims[l], self.dims[l + 1]),
            self.weights[l].values.as_slice(),
        )
        .expect("weight shape")
    }

    /// Mean-pooled embedding rows for each token sequence.
    fn embed(&self, tokens: &[Vec<u32>]) -> Result<Array2<f64>> {
        let table = self
            .embedding
            .as_ref()
            .ok_or_else(|| Error::Config("reference model has no embedding".into()))?;
        let dim = self.dims[0];
        let mut out = Array2::zeros((tokens.len(), dim));
        for (r, seq) in tokens.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::Shape("empty token sequence".into()));
            }
            for &t in seq {
                if t as usize >= self.vocab_size {
                    return Err(Error::Bounds(format!("token {t} out of vocabulary")));
                }
                for d in 0..dim {
                    out[[r, d]] += table.values[t as usize * dim + d];
                }
            }
            let inv = 1.0 / seq.len() as f64;
            out.row_mut(r).iter_mut().for_each(|v| *v *= inv);
        }
        Ok(out)
    }

    fn input_matrix(&self, batch: &Batch) -> Result<Array2<f64>> {
        match batch {
            Batch::Features(x) => {
                if x.ncols() != self.dims[0] {
                    return Err(Error::Shape(format!(
                        "features of dim {} but model input dim {}",
                        x.ncols(),
                        self.dims[0]
                    )));
                }
                Ok(x.to_owned())
            }
            Batch::Tokens(tokens) => self.embed(tokens),
        }
    }

    pub fn forward(&self, batch: &Batch) -> Result<Array2<f64>> {
        let mut h = self.input_matrix(batch)?;
        for l in 0..self.layer_count() {
            let mut y = h.dot(&self.weight_matrix(l));
            let bias = Array1::from_vec(self.biases[l].values.clone());
            y += &bias;
            if l + 1 < self.layer_count() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            h = y;
        }
        Ok(h)
    }

    /// Cross-entropy loss with gradients accumulated into the dense params.
    pub fn loss_and_backward(&mut self, batch: &Batch, labels: &[usize]) -> Result<f64> {
        let x0 = self.input_matrix(batch)?;
        let mut pres = Vec::with_capacity(self.layer_count());
        let mut h = x0.clone();
        for l in 0..self.layer_count() {
            let mut y = h.dot(&self.weight_matrix(l));
            let bias = Array1::from_vec(self.biases[l].values.clone());
            y += &bias;
            pres.push(y.clone());
            if l + 1 < self.layer_count() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            h = y;
        }
        let (loss, mut dy) = softmax_cross_entropy(&h.view(), labels)?;
        for l in (0..self.layer_count()).rev() {
            let x_l = if l == 0 {
                x0.view()
            } else {
                pres[l - 1].view()
            };
            // Activations feeding layer l: relu of the previous preactivation.
            let x_act = if l == 0 {
                x_l.to_owned()
            } else {
                x_l.mapv(|v| v.max(0.0))
            };
            for (g, v) in self.biases[l]
                .grads
                .iter_mut()
                .zip(dy.sum_axis(ndarray::Axis(0)))
            {
                *g += v;
            }
            let dw = x_act.t().dot(&dy);
            for (g, v) in self.weights[l].grads.iter_mut().zip(dw.iter()) {
                *g += v;
            }
            if l > 0 {
                let dx = dy.dot(&self.weight_matrix(l).t());
                let mask = pres[l - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                dy = dx * &mask;
            } else if self.embedding.is_some() {
                let dx = dy.dot(&self.weight_matrix(0).t());
                if let Batch::Tokens(tokens) = batch {
                    let table = self.embedding.as_mut().expect("checked");
                    let dim = self.dims[0];
                    for (r, seq) in tokens.iter().enumerate() {
                        let inv = 1.0 / seq.len() as f64;
                        for &t in seq.iter() {
                            for d in 0..dim {
                                table.grads[t as usize * dim + d] += inv * dx[[r, d]];
                            }
                        }
                    }
                }
            }
        }
        Ok(loss)
    }

    pub fn zero_grads(&mut self) {
        for w in &mut self.weights {
            w.zero_grads();
        }
        for b in &mut self.biases {
            b.zero_grads();
        }
        if let Some(e) = &mut self.embedding {
            e.zero_grads();
        }
    }

    pub fn step(&mut self, config: &OptimizerConfig, step_index: usize) {
        for w in &mut self.weights {
            w.step(config, step_index);
        }
        for b in &mut self.biases {
            b.step(config, step_index);
        }
        if let Some(e) = &mut self.embedding {
            e.step(config, step_index);
        }
    }

    pub fn accuracy(&self, batch: &Batch, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(batch)?;
        let mut hits = 0usize;
        for (r, &label) in labels.iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}
