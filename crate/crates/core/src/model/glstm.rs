//! Grouped LSTM bottleneck with a channel-shuffle between layers.

use crate::error::{Error, Result};
use crate::model::layout::LstmIds;
use crate::nn::{Axis, LstmState, ParamId, Real, Tape, Var};

/// `perm[j]` is the source index for output position `j`: output `i·G + g`
/// reads input `g·(D/G) + i`.
pub fn group_permutation(d: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !d.is_multiple_of(groups) {
        return Err(Error::dim(format!("{groups} groups do not divide width {d}")));
    }
    let w = d / groups;
    let mut perm = vec![0; d];
    for g in 0..groups {
        for i in 0..w {
            perm[i * groups + g] = g * w + i;
        }
    }
    Ok(perm)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

/// Applies the group shuffle to one feature vector.
pub fn rearrange_groups<T: Copy>(x: &[T], groups: usize) -> Result<Vec<T>> {
    let perm = group_permutation(x.len(), groups)?;
    Ok(perm.iter().map(|&p| x[p]).collect())
}

/// Runs the stack on `x: [B, C, T, F]`. `states[layer][group]` carries the
/// recurrent state in and out; `None` starts from zeros.
pub fn glstm_forward<T: Real>(
    tape: &mut Tape<T>,
    fetch: impl Fn(&mut Tape<T>, ParamId) -> Var<T>,
    ids: &[Vec<LstmIds>],
    x: &Var<T>,
    states: &mut [Vec<Option<LstmState<T>>>],
) -> Result<Var<T>> {
    let channels = x.dims().channels;
    let mut h = tape.merge_channels(x);
    let width = h.dims().features;
    let Some(groups) = ids.first().map(Vec::len) else {
        return Err(Error::dim("group LSTM needs at least one layer"));
    };
    let perm = group_permutation(width, groups)?;
    let gw = width / groups;
    for (layer, layer_ids) in ids.iter().enumerate() {
        let mut outs = Vec::with_capacity(groups);
        for (g, p) in layer_ids.iter().enumerate() {
            let part = if groups == 1 { h.clone() } else { tape.slice(&h, Axis::Feature, g * gw, gw)? };
            let w_ih = fetch(tape, p.w_ih);
            let w_hh = fetch(tape, p.w_hh);
            let bias = fetch(tape, p.bias);
            let slot = &mut states[layer][g];
            let (y, last) = tape.lstm(&part, &w_ih, &w_hh, &bias, slot.as_ref())?;
            *slot = Some(last);
            outs.push(y);
        }
        let refs: Vec<&Var<T>> = outs.iter().collect();
        h = if groups == 1 { outs[0].clone() } else { tape.concat(&refs, Axis::Feature)? };
        if layer + 1 < ids.len() && groups > 1 {
            h = tape.permute_features(&h, &perm)?;
        }
    }
    tape.split_channels(&h, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_into_two_groups() {
        let x: Vec<usize> = (0..6).collect();
        assert_eq!(rearrange_groups(&x, 2).unwrap(), [0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn shuffle_round_trip() {
        let perm = group_permutation(320, 2).unwrap();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert!(sorted.iter().enumerate().all(|(i, &v)| i == v));
        let inv = invert_permutation(&perm);
        let x: Vec<usize> = (0..320).collect();
        let y: Vec<usize> = perm.iter().map(|&p| x[p]).collect();
        let back: Vec<usize> = inv.iter().map(|&p| y[p]).collect();
        assert_eq!(back, x);
    }

    #[test]
    fn indivisible_width_is_rejected() {
        assert!(rearrange_groups(&[0u8; 7], 2).is_err());
    }
}
