use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::{self, argmax, Differentiable, Tape, Tensor, Var};
use crate::rng;

/// Fully connected ReLU classifier: ReLU on hidden layers, identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    layer_sizes: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least an input and an output layer".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidInput("layer sizes must be positive".into()));
    }
    if *layer_sizes.last().unwrap() < 2 {
        return Err(Error::InvalidInput(
            "classifier needs at least 2 classes".into(),
        ));
    }
    Ok(())
}

impl MlpClassifier {
    /// He-initialised network with zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = rng::seeded(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data)?);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let (weights, biases) = layer_sizes
            .windows(2)
            .map(|w| (Tensor::zeros(&[w[0], w[1]]), Tensor::zeros(&[w[1]])))
            .unzip();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parameters(
        layer_sizes: &[usize],
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Dimension(format!(
                "{layers} layers but {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].shape() != [pair[0], pair[1]] || biases[l].shape() != [pair[1]] {
                return Err(Error::Dimension(format!(
                    "layer {l}: expected weight [{}, {}] and bias [{}]",
                    pair[0], pair[1], pair[1]
                )));
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Single linear layer `f(x) = x·W + b`.
    pub fn linear(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (d, c) = weight.as_matrix_dims()?;
        Self::from_parameters(&[d, c], vec![weight], vec![bias])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Parameters flattened in registry order `W0, b0, W1, b1, …`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.data_mut().copy_from_slice(&params[off..off + n]);
            off += n;
            let n = b.len();
            b.data_mut().copy_from_slice(&params[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Logits for `[D]` (gives `[C]`) or `[batch, D]` (gives `[batch, C]`).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, cols) = x.as_matrix_dims()?;
        if cols != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {cols} features, model expects {}",
                self.input_dim()
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = numcore::affine(x, &self.weights[0], &self.biases[0])?;
        for l in 1..=last {
            h = numcore::relu(&h);
            h = numcore::affine(&h, &self.weights[l], &self.biases[l])?;
        }
        if x.rank() == 1 {
            h = h.reshape(vec![self.num_classes()])?;
        }
        Ok(h)
    }

    /// Logits for a single input given as a slice.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Tensor::vector(x.to_vec()))?.into_data())
    }

    /// Predicted class of a single input, lowest index on ties.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        let z = self.forward(x)?;
        if z.rank() != 1 {
            return Err(Error::Dimension("predict takes a single input".into()));
        }
        Ok(argmax(z.data()))
    }

    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.forward(x)?;
        Ok(z.rows().map(argmax).collect())
    }
}

impl Differentiable for MlpClassifier {
    fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn record(&self, tape: &mut Tape, input: Var, track_params: bool) -> Result<(Var, Vec<Var>)> {
        let mut params = Vec::with_capacity(2 * self.weights.len());
        let mut h = input;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if l > 0 {
                h = tape.relu(h);
            }
            let (wv, bv) = if track_params {
                (tape.leaf(w.clone()), tape.leaf(b.clone()))
            } else {
                (tape.constant(w.clone()), tape.constant(b.clone()))
            };
            params.push(wv);
            params.push(bv);
            h = tape.affine(h, wv, bv)?;
        }
        Ok((h, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_grad, value_and_full_grad, value_and_input_grad, Head};
    use rand::Rng;

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = MlpClassifier::zeros(&[3, 4, 2]).unwrap();
        let z = m.forward(&Tensor::vector(vec![0.2, 0.5, 0.9])).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_layer_equals_affine() {
        let m = MlpClassifier::new(&[3, 2], 5).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let direct = numcore::affine(&x, &m.weights()[0], &m.biases()[0]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), direct);
    }

    #[test]
    fn batch_equals_stacked_rows() {
        let m = MlpClassifier::new(&[5, 7, 6, 3], 9).unwrap();
        let mut r = rng::seeded(1);
        let rows: Vec<Tensor> = (0..4)
            .map(|_| Tensor::vector((0..5).map(|_| r.random_range(0.0..1.0)).collect()))
            .collect();
        let batch = m.forward(&Tensor::stack(&rows).unwrap()).unwrap();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(batch.row(i), m.forward(row).unwrap().data());
        }
    }

    #[test]
    fn predict_tie_break() {
        let m = MlpClassifier::linear(
            Tensor::matrix(1, 3, vec![0.0, 3.0, 1.0]).unwrap(),
            Tensor::zeros(&[3]),
        )
        .unwrap();
        assert_eq!(m.predict(&Tensor::vector(vec![1.0])).unwrap(), 1);
        let m = MlpClassifier::linear(
            Tensor::matrix(1, 2, vec![2.0, 2.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        assert_eq!(m.predict(&Tensor::vector(vec![1.0])).unwrap(), 0);
    }

    #[test]
    fn predict_matches_scan() {
        let m = MlpClassifier::new(&[4, 8, 5], 3).unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..100 {
            let x = Tensor::vector((0..4).map(|_| r.random_range(-2.0..2.0)).collect());
            let z = m.forward(&x).unwrap();
            let mut best = 0;
            for i in 0..z.len() {
                if z.data()[i] > z.data()[best] {
                    best = i;
                }
            }
            assert_eq!(m.predict(&x).unwrap(), best);
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let m = MlpClassifier::new(&[4, 3], 0).unwrap();
        assert!(matches!(
            m.forward(&Tensor::vector(vec![0.0; 5])),
            Err(Error::Dimension(_))
        ));
        assert!(MlpClassifier::new(&[4, 1], 0).is_err());
    }

    #[test]
    fn linear_head_gradient_is_w_times_direction() {
        let w = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, -3.0, 0.25]).unwrap();
        let m = MlpClassifier::linear(w, Tensor::vector(vec![0.3, 0.1])).unwrap();
        let x = Tensor::vector(vec![0.2, 0.4, 0.6]);
        let (_, g) = value_and_input_grad(&m, &x, &Head::linear(&[2.0, -1.0])).unwrap();
        assert_eq!(g.wrt_input.data(), &[4.0, -3.0, -6.25]);
        assert!(g.wrt_params.is_empty());
    }

    #[test]
    fn margin_tie_uses_lowest_rival() {
        // logits = x·W with x = [1]: [3, 0, 3], label 1; rivals 0 and 2 tie.
        let w = Tensor::matrix(2, 3, vec![3.0, 0.0, 3.0, 1.0, 5.0, -1.0]).unwrap();
        let m = MlpClassifier::linear(w, Tensor::zeros(&[3])).unwrap();
        let x = Tensor::vector(vec![1.0, 0.0]);
        let (v, g) = value_and_input_grad(&m, &x, &Head::margin(1)).unwrap();
        assert_eq!(v, 3.0);
        // d(z0 - z1)/dx = W[:,0] - W[:,1]
        assert_eq!(g.wrt_input.data(), &[3.0, -4.0]);
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let m = MlpClassifier::new(&[3, 5, 4], 21).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.7, 0.3, 0.9, 0.2, 0.5]).unwrap();
        let head = Head::CrossEntropy(vec![2, 0]);
        let (_, g) = value_and_full_grad(&m, &x, &head).unwrap();
        let p0 = Tensor::vector(m.params_flat());
        let fd = finite_diff_grad(
            |p| {
                let mut mm = m.clone();
                mm.set_params_flat(p.data()).unwrap();
                value_and_input_grad(&mm, &x, &head).unwrap().0
            },
            &p0,
            1e-5,
        )
        .unwrap();
        for (a, b) in g.wrt_params.iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
