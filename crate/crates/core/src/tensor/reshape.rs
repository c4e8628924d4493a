use super::{numel, Tensor};
use crate::error::{Error, Result};

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Channel shuffle: view channels as `(g, C/g)`, transpose, flatten. Output
/// channel `j` reads input channel `(j mod g) * (C/g) + j / g`.
pub fn channel_shuffle(t: &Tensor, groups: usize) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Indivisible {
            what: "channel shuffle channels",
            value: c,
            divisor: groups,
        });
    }
    t.reshape(vec![n, groups, c / groups, h * w])?
        .permute(&[0, 2, 1, 3])?
        .reshape(vec![n, c, h, w])
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape(format!("concat axis {axis} out of range for rank {rank}")));
    }
    for p in parts {
        let same = p.rank() == rank
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(Error::shape(format!(
                "concat along {axis}: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let mut shape = first.shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let chunk = p.len() / outer;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Inverse of [`concat`]: splits `t` along `axis` into pieces of the given sizes.
pub fn split(t: &Tensor, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
    if axis >= t.rank() || sizes.iter().sum::<usize>() != t.shape()[axis] {
        return Err(Error::shape(format!("cannot split {:?} into {sizes:?} along {axis}", t.shape())));
    }
    let outer: usize = t.shape()[..axis].iter().product();
    let inner: usize = t.shape()[axis + 1..].iter().product();
    let row = t.shape()[axis] * inner;
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        let mut shape = t.shape().to_vec();
        shape[axis] = s;
        let mut data = Vec::with_capacity(outer * s * inner);
        for o in 0..outer {
            data.extend_from_slice(&t.data()[o * row + start * inner..][..s * inner]);
        }
        out.push(Tensor::new(shape, data)?);
        start += s;
    }
    Ok(out)
}

fn nearest_source(o: usize, input: usize, output: usize) -> usize {
    o * input / output
}

/// Nearest-neighbour resize of the spatial axes to `(out_h, out_w)`; output
/// row `i` reads input row `floor(i * H / out_h)`.
pub fn upsample_nearest(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::EmptyOutput("upsample to a zero extent".into()));
    }
    let x = t.data();
    let mut data = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        for i in 0..out_h {
            let si = nearest_source(i, h, out_h);
            for j in 0..out_w {
                data.push(x[(plane * h + si) * w + nearest_source(j, w, out_w)]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], data))
}

pub fn upsample_nearest_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("upsample backward needs an NCHW input shape")),
    };
    let (gn, gc, out_h, out_w) = grad_out.dims4()?;
    if (gn, gc) != (n, c) {
        return Err(Error::shape("upsample gradient shape mismatch"));
    }
    let go = grad_out.data();
    let mut gi = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        for i in 0..out_h {
            let si = nearest_source(i, h, out_h);
            for j in 0..out_w {
                gi[(plane * h + si) * w + nearest_source(j, w, out_w)] += go[(plane * out_h + i) * out_w + j];
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_order(c: usize, g: usize) -> Vec<usize> {
        let t = Tensor::from_fn(vec![1, c, 1, 1], |i| i as f64).unwrap();
        channel_shuffle(&t, g).unwrap().data().iter().map(|&v| v as usize).collect()
    }

    #[test]
    fn shuffle_six_by_two() {
        assert_eq!(channel_order(6, 2), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(channel_order(6, 1), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn shuffle_rejects_indivisible() {
        let t = Tensor::zeros(vec![1, 6, 2, 2]).unwrap();
        assert!(channel_shuffle(&t, 4).is_err());
    }

    #[test]
    fn concat_then_split_roundtrip() {
        let a = Tensor::from_fn(vec![2, 1, 3], |i| i as f64).unwrap();
        let b = Tensor::from_fn(vec![2, 2, 3], |i| 100.0 + i as f64).unwrap();
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.at(&[1, 0, 2]), a.at(&[1, 0, 2]));
        assert_eq!(c.at(&[1, 2, 1]), b.at(&[1, 1, 1]));
        let parts = split(&c, 1, &[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn upsample_doubles_and_crops() {
        let t = Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f64).unwrap();
        let y = upsample_nearest(&t, 4, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 3.0, 2.0, 2.0, 3.0]);
    }
}
