use super::ops::{Ops, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter ids of one LSTM layer. Gates are packed `[i | f | g | o]` along
/// the column axis of every matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

/// Loaded LSTM weights for one forward pass.
#[derive(Debug, Clone)]
pub struct LstmVars<V> {
    pub w_ih: V,
    pub w_hh: V,
    pub bias: V,
    pub hidden: usize,
}

impl LstmParams {
    pub fn load<O: Ops>(&self, o: &mut O, store: &ParamStore) -> LstmVars<O::V> {
        let hidden = store.get(self.w_hh).rows();
        LstmVars {
            w_ih: o.param(store, self.w_ih),
            w_hh: o.param(store, self.w_hh),
            bias: o.param(store, self.bias),
            hidden,
        }
    }
}

/// One LSTM step on row vectors `[1×D]`.
pub fn lstm_cell<O: Ops>(
    o: &mut O,
    p: &LstmVars<O::V>,
    h_prev: &O::V,
    c_prev: &O::V,
    x: &O::V,
) -> Result<(O::V, O::V)> {
    let d = p.hidden;
    for (name, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
        if o.value(v).shape() != [1, d] {
            return Err(Error::dim(
                "lstm_cell",
                format!("{name} has shape {:?}, expected [1, {d}]", o.value(v).shape()),
            ));
        }
    }
    let xg = o.matmul(x, &p.w_ih)?;
    lstm_cell_gates(o, p, h_prev, c_prev, Some(&xg))
}

/// LSTM step given the input contribution `x·W_ih` already computed (or
/// `None` for an all-zero input).
pub(crate) fn lstm_cell_gates<O: Ops>(
    o: &mut O,
    p: &LstmVars<O::V>,
    h_prev: &O::V,
    c_prev: &O::V,
    x_gates: Option<&O::V>,
) -> Result<(O::V, O::V)> {
    let d = p.hidden;
    let hg = o.matmul(h_prev, &p.w_hh)?;
    let pre = match x_gates {
        Some(xg) => o.add(xg, &hg)?,
        None => hg,
    };
    let pre = o.add_row(&pre, &p.bias)?;
    let i_pre = o.slice_cols(&pre, 0, d)?;
    let f_pre = o.slice_cols(&pre, d, d)?;
    let g_pre = o.slice_cols(&pre, 2 * d, d)?;
    let o_pre = o.slice_cols(&pre, 3 * d, d)?;
    let i = o.sigmoid(&i_pre);
    let f = o.sigmoid(&f_pre);
    let g = o.tanh(&g_pre);
    let out_gate = o.sigmoid(&o_pre);
    let keep = o.mul(&f, c_prev)?;
    let write = o.mul(&i, &g)?;
    let c = o.add(&keep, &write)?;
    let c_act = o.tanh(&c);
    let h = o.mul(&out_gate, &c_act)?;
    Ok((h, c))
}

/// Zero row vector of the LSTM hidden width.
pub fn zero_state(hidden: usize) -> Tensor {
    Tensor::zeros(&[1, hidden])
}
