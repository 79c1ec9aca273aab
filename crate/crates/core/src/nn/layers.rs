//! Layer primitives and their backward passes.

use super::{NnError, Result, Tensor};

pub fn conv_output_len(len: usize, width: usize, stride: usize) -> Option<usize> {
    (stride >= 1 && width >= 1 && len >= width).then(|| (len - width) / stride + 1)
}

/// Valid (unpadded) cross-correlation of a `C_in × L` input with
/// `K × C_in × W` kernels.
pub fn conv1d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    input.expect_rank("conv1d input", 2)?;
    kernels.expect_rank("conv1d kernels", 3)?;
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (k, kc, w) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kc != c_in {
        return Err(NnError::Shape {
            op: "conv1d",
            expected: format!("kernels with {c_in} input channels"),
            actual: format!("{:?}", kernels.shape()),
        });
    }
    bias.expect_shape("conv1d bias", &[k])?;
    let out_len = conv_output_len(len, w, stride).ok_or_else(|| NnError::Shape {
        op: "conv1d",
        expected: format!("length >= width {w}, stride >= 1"),
        actual: format!("length {len}, stride {stride}"),
    })?;

    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; k * out_len];
    for ki in 0..k {
        for j in 0..out_len {
            let mut acc = bias.data()[ki];
            for c in 0..c_in {
                let xs = &x[c * len + j * stride..c * len + j * stride + w];
                let ks = &kd[(ki * c_in + c) * w..(ki * c_in + c + 1) * w];
                acc += xs.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>();
            }
            out[ki * out_len + j] = acc;
        }
    }
    Tensor::new(vec![k, out_len], out)
}

/// Gradients of a convolution with respect to its input, kernels and bias.
pub fn conv1d_backward(input: &Tensor, kernels: &Tensor, stride: usize, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (k, _, w) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    let out_len = conv_output_len(len, w, stride).unwrap_or(0);
    grad_out.expect_shape("conv1d grad", &[k, out_len])?;

    let x = input.data();
    let kd = kernels.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; c_in * len];
    let mut gk = vec![0.0; k * c_in * w];
    let mut gb = vec![0.0; k];
    for ki in 0..k {
        for j in 0..out_len {
            let go = g[ki * out_len + j];
            gb[ki] += go;
            for c in 0..c_in {
                let base_x = c * len + j * stride;
                let base_k = (ki * c_in + c) * w;
                for wi in 0..w {
                    gk[base_k + wi] += go * x[base_x + wi];
                    gx[base_x + wi] += go * kd[base_k + wi];
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![c_in, len], gx)?,
        Tensor::new(vec![k, c_in, w], gk)?,
        Tensor::new(vec![k], gb)?,
    ))
}

/// Windowed max over the last axis of a `K × L` input. Ties resolve to the
/// lowest index. Returns flat input indices of each maximum.
pub fn maxpool1d(input: &Tensor, width: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    input.expect_rank("maxpool1d input", 2)?;
    let (k, len) = (input.shape()[0], input.shape()[1]);
    let out_len = conv_output_len(len, width, stride).ok_or_else(|| NnError::Shape {
        op: "maxpool1d",
        expected: format!("length >= width {width}, stride >= 1"),
        actual: format!("length {len}, stride {stride}"),
    })?;
    let x = input.data();
    let mut out = Vec::with_capacity(k * out_len);
    let mut argmax = Vec::with_capacity(k * out_len);
    for ki in 0..k {
        for j in 0..out_len {
            let start = ki * len + j * stride;
            let mut best = start;
            for i in start + 1..start + width {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(vec![k, out_len], out)?, argmax))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::Shape {
            op: "maxpool1d grad",
            expected: argmax.len().to_string(),
            actual: grad_out.len().to_string(),
        });
    }
    let mut gx = Tensor::zeros(input_shape);
    for (g, &i) in grad_out.data().iter().zip(argmax) {
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}

/// `weights · input + bias` for an `M × N` weight matrix.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    weights.expect_rank("dense weights", 2)?;
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    input.expect_shape("dense input", &[n])?;
    bias.expect_shape("dense bias", &[m])?;
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    Ok(Tensor::vector(out))
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    grad_out.expect_shape("dense grad", &[m])?;
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; m * n];
    for (i, row) in weights.data().chunks_exact(n).enumerate() {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        let gw_row = &mut gw[i * n..(i + 1) * n];
        for j in 0..n {
            gw_row[j] = gi * x[j];
            gx[j] += gi * row[j];
        }
    }
    Ok((Tensor::vector(gx), Tensor::new(vec![m, n], gw)?, Tensor::vector(g.to_vec())))
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes gradient where the pre-activation was positive.
pub fn relu_backward(pre_activation: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, x) in g.data_mut().iter_mut().zip(pre_activation.data()) {
        if *x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Row-major flatten of each tensor, appended in order.
pub fn flatten_concat(parts: &[&Tensor]) -> Tensor {
    Tensor::vector(parts.iter().flat_map(|t| t.data().iter().copied()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_edge_detector() {
        let out = conv1d_forward(&t(&[1, 4], &[1., 2., 3., 4.]), &t(&[1, 1, 3], &[1., 0., -1.]), &t(&[1], &[0.]), 1).unwrap();
        assert_eq!(out.data(), &[-2., -2.]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 5], &[3., -1., 4., 1., 5.]);
        let out = conv1d_forward(&x, &t(&[1, 1, 1], &[1.]), &t(&[1], &[0.]), 1).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_output_length_rule() {
        assert_eq!(conv_output_len(24, 3, 2), Some(11));
        let out = conv1d_forward(&Tensor::zeros(&[2, 24]), &Tensor::zeros(&[4, 2, 3]), &Tensor::zeros(&[4]), 2).unwrap();
        assert_eq!(out.shape(), &[4, 11]);
    }

    #[test]
    fn conv_shape_errors() {
        let err = conv1d_forward(&Tensor::zeros(&[2, 24]), &Tensor::zeros(&[4, 3, 3]), &Tensor::zeros(&[4]), 1);
        assert!(matches!(err, Err(NnError::Shape { .. })));
        let err = conv1d_forward(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 1, 3]), &Tensor::zeros(&[1]), 1);
        assert!(matches!(err, Err(NnError::Shape { .. })));
        let err = conv1d_forward(&Tensor::zeros(&[1, 5]), &Tensor::zeros(&[1, 1, 3]), &Tensor::zeros(&[1]), 0);
        assert!(matches!(err, Err(NnError::Shape { .. })));
    }

    #[test]
    fn maxpool_examples() {
        let (out, _) = maxpool1d(&t(&[1, 4], &[1., 3., 2., 5.]), 2, 2).unwrap();
        assert_eq!(out.data(), &[3., 5.]);
        let x = t(&[1, 3], &[4., 2., 7.]);
        let (out, idx) = maxpool1d(&x, 1, 1).unwrap();
        assert_eq!(out.data(), x.data());
        assert_eq!(idx, vec![0, 1, 2]);
        let (out, idx) = maxpool1d(&t(&[1, 6], &[2.; 6]), 3, 1).unwrap();
        assert_eq!(out.data(), &[2.; 4]);
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert!(maxpool1d(&t(&[1, 1], &[1.]), 2, 1).is_err());
    }

    #[test]
    fn dense_identity_and_relu() {
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        assert_eq!(relu(&Tensor::vector(vec![-1., 0., 2.])).data(), &[0., 0., 2.]);
        assert!(dense_forward(&x, &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn flatten_concat_order() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = Tensor::vector(vec![7., 8., 9., 10.]);
        let f = flatten_concat(&[&a, &b]);
        assert_eq!(f.len(), 10);
        assert_eq!(f.data(), &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = t(&[2, 7], &[0.3, -1.2, 0.8, 2.0, -0.5, 0.1, 0.9, 1.1, -0.7, 0.4, 0.0, -1.5, 0.6, 0.2]);
        let k = t(&[3, 2, 3], &(0..18).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
        let b = t(&[3], &[0.1, -0.2, 0.3]);
        let stride = 2;
        let out = conv1d_forward(&x, &k, &b, stride).unwrap();
        let weights: Vec<f64> = (0..out.len()).map(|i| (i as f64 * 0.91).cos()).collect();
        let f = |x: &Tensor, k: &Tensor, b: &Tensor| -> f64 {
            let o = conv1d_forward(x, k, b, stride).unwrap();
            o.data().iter().zip(&weights).map(|(a, w)| a * w).sum()
        };
        let (gx, gk, gb) = conv1d_backward(&x, &k, stride, &Tensor::new(out.shape().to_vec(), weights.clone()).unwrap()).unwrap();
        let h = 1e-6;
        for (tensor, grad, which) in [(&x, &gx, 0), (&k, &gk, 1), (&b, &gb, 2)] {
            for i in 0..tensor.len() {
                let mut p = tensor.clone();
                let mut m = tensor.clone();
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let (fp, fm) = match which {
                    0 => (f(&p, &k, &b), f(&m, &k, &b)),
                    1 => (f(&x, &p, &b), f(&x, &m, &b)),
                    _ => (f(&x, &k, &p), f(&x, &k, &m)),
                };
                let numeric = (fp - fm) / (2.0 * h);
                assert!((numeric - grad.data()[i]).abs() < 1e-8, "tensor {which} index {i}");
            }
        }
    }
}
