use crate::error::{Error, Result};

/// How an input's elements map onto a broadcast output.
#[derive(Debug, Clone)]
pub(crate) enum IndexMap {
    Same,
    /// Input repeats along leading axes: `in = out % n`.
    Cycle(usize),
    /// Input repeats along trailing axes: `in = out / n`.
    Stretch(usize),
    General(Vec<usize>),
}

impl IndexMap {
    #[inline]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            IndexMap::Same => i,
            IndexMap::Cycle(n) => i % n,
            IndexMap::Stretch(n) => i / n,
            IndexMap::General(v) => v[i],
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Element mapping from `out_shape` back into an input of `in_shape`, where
/// `in_shape` broadcasts to `out_shape`.
pub(crate) fn index_map(out_shape: &[usize], in_shape: &[usize]) -> IndexMap {
    let n_out = numel(out_shape);
    let n_in = numel(in_shape);
    if n_out == n_in {
        return IndexMap::Same;
    }
    let rank = out_shape.len();
    let padded: Vec<usize> = std::iter::repeat_n(1, rank - in_shape.len())
        .chain(in_shape.iter().copied())
        .collect();

    // Leading broadcast dims followed by a full-size suffix.
    let first_real = padded.iter().position(|&d| d != 1).unwrap_or(rank);
    if padded[first_real..] == out_shape[first_real..] {
        return IndexMap::Cycle(n_in.max(1));
    }
    // Full-size prefix followed by trailing broadcast dims.
    let last_real = padded.iter().rposition(|&d| d != 1).map_or(0, |p| p + 1);
    if padded[..last_real] == out_shape[..last_real] {
        return IndexMap::Stretch(numel(&out_shape[last_real..]));
    }

    let mut in_strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        in_strides[i] = if padded[i] == 1 { 0 } else { acc };
        acc *= padded[i];
    }
    let mut map = Vec::with_capacity(n_out);
    let mut counter = vec![0usize; rank];
    for _ in 0..n_out {
        map.push(counter.iter().zip(&in_strides).map(|(c, s)| c * s).sum());
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    IndexMap::General(map)
}

/// Sum a gradient over broadcast axes back to the input's extent.
pub(crate) fn reduce_grad(map: &IndexMap, grad: &[f32], n_in: usize) -> Vec<f32> {
    match map {
        IndexMap::Same => grad.to_vec(),
        _ => {
            let mut out = vec![0.0; n_in];
            for (i, g) in grad.iter().enumerate() {
                out[map.at(i)] += g;
            }
            out
        }
    }
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(out: &[usize], inp: &[usize]) -> Vec<usize> {
        let map = {
            let rank = out.len();
            let padded: Vec<usize> = std::iter::repeat_n(1, rank - inp.len())
                .chain(inp.iter().copied())
                .collect();
            let mut v = Vec::new();
            for flat in 0..numel(out) {
                let mut rem = flat;
                let mut coords = vec![0; rank];
                for ax in (0..rank).rev() {
                    coords[ax] = rem % out[ax];
                    rem /= out[ax];
                }
                let mut idx = 0;
                for ax in 0..rank {
                    let c = if padded[ax] == 1 { 0 } else { coords[ax] };
                    idx = idx * padded[ax] + c;
                }
                v.push(idx);
            }
            v
        };
        map
    }

    #[test]
    fn maps_agree_with_coordinate_arithmetic() {
        let cases: &[(&[usize], &[usize])] = &[
            (&[2, 3, 4], &[4]),
            (&[2, 3, 4], &[3, 4]),
            (&[2, 3, 4], &[2, 3, 1]),
            (&[2, 3, 4], &[2, 1, 1]),
            (&[2, 3, 4], &[1, 3, 1]),
            (&[2, 3, 4], &[2, 1, 4]),
            (&[2, 3, 4], &[1]),
            (&[5, 5], &[5, 1]),
        ];
        for (out, inp) in cases {
            let m = index_map(out, inp);
            let want = brute(out, inp);
            for (i, w) in want.iter().enumerate() {
                assert_eq!(m.at(i), *w, "out {out:?} in {inp:?} at {i}");
            }
        }
    }

    #[test]
    fn incompatible_shapes_rejected() {
        assert!(broadcast_shape("add", &[2, 3], &[4]).is_err());
        assert_eq!(broadcast_shape("add", &[2, 1], &[3]).unwrap(), vec![2, 3]);
    }
}
