use super::layer::Layer;
use super::model::Model;
use crate::error::{Error, Result};

/// Folds every batch-norm layer into the conv or dense layer right before
/// it. The returned model computes the same function and carries the
/// canonized flag.
pub fn merge_batchnorm(model: &Model) -> Result<Model> {
    let mut out: Vec<Layer> = Vec::with_capacity(model.layers().len());
    for (index, layer) in model.layers().iter().enumerate() {
        let Layer::BatchNorm(bn) = layer else {
            out.push(layer.clone());
            continue;
        };
        let (scale, shift) = bn.affine();
        match out.last_mut() {
            Some(Layer::Conv2d(conv)) => {
                let per = conv.in_channels * conv.kernel * conv.kernel;
                for o in 0..conv.out_channels {
                    for w in &mut conv.weight[o * per..(o + 1) * per] {
                        *w *= scale[o];
                    }
                    conv.bias[o] = conv.bias[o] * scale[o] + shift[o];
                }
            }
            Some(Layer::Dense(dense)) => {
                let per = dense.in_features;
                for o in 0..dense.out_features {
                    for w in &mut dense.weight[o * per..(o + 1) * per] {
                        *w *= scale[o];
                    }
                    dense.bias[o] = dense.bias[o] * scale[o] + shift[o];
                }
            }
            prev => {
                return Err(Error::Canonization {
                    index,
                    reason: format!(
                        "batchnorm must directly follow conv2d or dense, found {}",
                        prev.map_or("network input", |l| l.name())
                    ),
                })
            }
        }
    }
    let mut merged = Model::new(out, model.input_shape().to_vec(), model.num_classes())?;
    merged.set_canonized(true);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{BatchNorm, Conv2d, Dense};
    use crate::tensor::Tensor;

    #[test]
    fn no_batchnorm_is_identity_with_flag() {
        let layers = vec![
            Layer::Flatten,
            Layer::Dense(Dense { in_features: 2, out_features: 2, weight: vec![1.0, 2.0, 3.0, 4.0], bias: vec![0.5, -0.5] }),
        ];
        let m = Model::new(layers.clone(), vec![2, 1, 1], 2).unwrap();
        let c = merge_batchnorm(&m).unwrap();
        assert!(c.is_canonized());
        assert_eq!(c.layers(), layers.as_slice());
    }

    #[test]
    fn folded_scalar_conv_matches_closed_form() {
        let (w, m, v, gamma, beta, eps) = (1.7, 0.3, 2.5, 0.8, -0.4, 1e-5);
        let layers = vec![
            Layer::Conv2d(Conv2d { in_channels: 1, out_channels: 1, kernel: 1, padding: 0, weight: vec![w], bias: vec![0.0] }),
            Layer::BatchNorm(BatchNorm { gamma: vec![gamma], beta: vec![beta], running_mean: vec![m], running_var: vec![v], eps }),
            Layer::Flatten,
            Layer::Dense(Dense { in_features: 1, out_features: 2, weight: vec![1.0, 0.0], bias: vec![0.0, 0.0] }),
        ];
        let model = Model::new(layers, vec![1, 1, 1], 2).unwrap();
        let merged = merge_batchnorm(&model).unwrap();
        assert_eq!(merged.layers().len(), 3);
        for x in [-3.0, 0.0, 0.42, 5.5] {
            let expected = gamma * (w * x - m) / (v + eps).sqrt() + beta;
            let img = Tensor::new(vec![1, 1, 1], vec![x]).unwrap();
            let folded = merged.logits(&img).unwrap()[0];
            let sequential = model.logits(&img).unwrap()[0];
            assert!((folded - expected).abs() < 1e-5);
            assert!((folded - sequential).abs() < 1e-5);
        }
    }

    #[test]
    fn misplaced_batchnorm_names_layer() {
        let layers = vec![
            Layer::Relu,
            Layer::BatchNorm(BatchNorm::identity(1)),
            Layer::Flatten,
            Layer::Dense(Dense { in_features: 1, out_features: 2, weight: vec![1.0, 0.0], bias: vec![0.0, 0.0] }),
        ];
        let model = Model::new(layers, vec![1, 1, 1], 2).unwrap();
        match merge_batchnorm(&model) {
            Err(Error::Canonization { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
