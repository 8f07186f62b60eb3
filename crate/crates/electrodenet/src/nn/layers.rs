//! Layer primitives: dense, causal 1-D convolution, LSTM, ReLU, and the
//! channel-selection (top-k) layer in custom and vanilla modes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsMode {
    /// Keep the k largest strictly positive entries.
    Custom,
    /// Keep the k largest entries regardless of sign.
    Vanilla,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense {
        /// out x in
        w: Array2<f64>,
        b: Array1<f64>,
    },
    Conv1d {
        /// One out x in matrix per kernel tap, tap 0 oldest.
        w: Vec<Array2<f64>>,
        b: Array1<f64>,
        kernel: usize,
        padding: usize,
    },
    Lstm {
        /// Gate rows stacked i, f, g, o: 4h x in and 4h x h.
        w_ih: Array2<f64>,
        w_hh: Array2<f64>,
        b_ih: Array1<f64>,
        /// Second bias vector; `None` selects the single-bias convention.
        b_hh: Option<Array1<f64>>,
    },
    Relu,
    CsSelect {
        k: usize,
        mode: CsMode,
    },
}

/// Per-layer cache captured during forward, consumed by backward.
pub enum Cache {
    Dense {
        input: Array2<f64>,
    },
    Conv1d {
        input: Array2<f64>,
    },
    Lstm {
        input: Array2<f64>,
        /// Per-step activated gates [i, f, g, o], each of width h.
        gates: Vec<[Array1<f64>; 4]>,
        cells: Vec<Array1<f64>>,
        hiddens: Vec<Array1<f64>>,
    },
    Relu {
        input: Array2<f64>,
    },
    CsSelect {
        mask: Vec<Vec<bool>>,
    },
}

/// Parameter gradients, shaped like the owning layer.
#[derive(Debug, Clone)]
pub enum LayerGrad {
    Dense {
        dw: Array2<f64>,
        db: Array1<f64>,
    },
    Conv1d {
        dw: Vec<Array2<f64>>,
        db: Array1<f64>,
    },
    Lstm {
        dw_ih: Array2<f64>,
        dw_hh: Array2<f64>,
        db_ih: Array1<f64>,
        db_hh: Option<Array1<f64>>,
    },
    None,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row mask for one frame of the CS layer. Ties at the k-th value keep the
/// lower channel index.
pub fn cs_mask(row: &[f64], k: usize, mode: CsMode) -> Vec<bool> {
    let m = row.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
    let mut mask = vec![false; m];
    let mut kept = 0;
    for &idx in &order {
        if kept == k {
            break;
        }
        if mode == CsMode::Custom && row[idx] <= 0.0 {
            break; // descending order: nothing positive remains
        }
        mask[idx] = true;
        kept += 1;
    }
    mask
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense { w, b } => w.len() + b.len(),
            Layer::Conv1d { w, b, .. } => w.iter().map(|m| m.len()).sum::<usize>() + b.len(),
            Layer::Lstm {
                w_ih,
                w_hh,
                b_ih,
                b_hh,
            } => w_ih.len() + w_hh.len() + b_ih.len() + b_hh.as_ref().map_or(0, |b| b.len()),
            Layer::Relu | Layer::CsSelect { .. } => 0,
        }
    }

    pub fn out_size(&self, in_size: usize) -> usize {
        match self {
            Layer::Dense { w, .. } => w.nrows(),
            Layer::Conv1d { w, .. } => w[0].nrows(),
            Layer::Lstm { w_hh, .. } => w_hh.ncols(),
            Layer::Relu | Layer::CsSelect { .. } => in_size,
        }
    }

    /// Forward over a [T x in] sequence; rows are time steps in causal
    /// order. `frozen_mask` overrides CS selection (finite-difference
    /// probes must not flip the mask).
    pub fn forward(
        &self,
        input: ArrayView2<f64>,
        frozen_mask: Option<&[Vec<bool>]>,
    ) -> (Array2<f64>, Cache) {
        match self {
            Layer::Dense { w, b } => {
                let mut out = input.dot(&w.t());
                out += b;
                (
                    out,
                    Cache::Dense {
                        input: input.to_owned(),
                    },
                )
            }
            Layer::Conv1d {
                w, b, kernel: _, padding,
            } => {
                let t_len = input.nrows();
                let out_dim = w[0].nrows();
                let mut out = Array2::zeros((t_len, out_dim));
                for (tap, wt) in w.iter().enumerate() {
                    // Output at t reads input at t - padding + tap (left pad).
                    let shift = *padding as isize - tap as isize;
                    let contrib = input.dot(&wt.t());
                    for t in 0..t_len as isize {
                        let src = t - shift;
                        if src >= 0 && src < t_len as isize {
                            let c = contrib.row(src as usize).to_owned();
                            let mut row = out.row_mut(t as usize);
                            row += &c;
                        }
                    }
                }
                out += b;
                (
                    out,
                    Cache::Conv1d {
                        input: input.to_owned(),
                    },
                )
            }
            Layer::Lstm {
                w_ih,
                w_hh,
                b_ih,
                b_hh,
            } => {
                let t_len = input.nrows();
                let h = w_hh.ncols();
                let mut hidden = Array1::zeros(h);
                let mut cell = Array1::<f64>::zeros(h);
                let mut out = Array2::zeros((t_len, h));
                let mut gates = Vec::with_capacity(t_len);
                let mut cells = Vec::with_capacity(t_len);
                let mut hiddens = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let mut z = w_ih.dot(&input.row(t)) + w_hh.dot(&hidden) + b_ih;
                    if let Some(b2) = b_hh {
                        z += b2;
                    }
                    let gi = z.slice(ndarray::s![0..h]).mapv(sigmoid);
                    let gf = z.slice(ndarray::s![h..2 * h]).mapv(sigmoid);
                    let gg = z.slice(ndarray::s![2 * h..3 * h]).mapv(f64::tanh);
                    let go = z.slice(ndarray::s![3 * h..4 * h]).mapv(sigmoid);
                    cell = &gf * &cell + &gi * &gg;
                    hidden = &go * &cell.mapv(f64::tanh);
                    out.row_mut(t).assign(&hidden);
                    gates.push([gi, gf, gg, go]);
                    cells.push(cell.clone());
                    hiddens.push(hidden.clone());
                }
                (
                    out,
                    Cache::Lstm {
                        input: input.to_owned(),
                        gates,
                        cells,
                        hiddens,
                    },
                )
            }
            Layer::Relu => {
                let out = input.mapv(|v| v.max(0.0));
                (
                    out,
                    Cache::Relu {
                        input: input.to_owned(),
                    },
                )
            }
            Layer::CsSelect { k, mode } => {
                let mask: Vec<Vec<bool>> = match frozen_mask {
                    Some(m) => m.to_vec(),
                    None => input
                        .axis_iter(Axis(0))
                        .map(|row| cs_mask(row.as_slice().unwrap(), *k, *mode))
                        .collect(),
                };
                let mut out = input.to_owned();
                for (t, row_mask) in mask.iter().enumerate() {
                    for (c, &keep) in row_mask.iter().enumerate() {
                        if !keep {
                            out[[t, c]] = 0.0;
                        }
                    }
                }
                (out, Cache::CsSelect { mask })
            }
        }
    }

    /// Backward: given dL/d output, produce dL/d input and parameter grads.
    pub fn backward(&self, cache: &Cache, grad_out: &Array2<f64>) -> (Array2<f64>, LayerGrad) {
        match (self, cache) {
            (Layer::Dense { w, .. }, Cache::Dense { input }) => {
                let dw = grad_out.t().dot(input);
                let db = grad_out.sum_axis(Axis(0));
                let dx = grad_out.dot(w);
                (dx, LayerGrad::Dense { dw, db })
            }
            (
                Layer::Conv1d {
                    w, padding, ..
                },
                Cache::Conv1d { input },
            ) => {
                let t_len = input.nrows();
                let mut dx = Array2::zeros(input.raw_dim());
                let mut dw: Vec<Array2<f64>> =
                    w.iter().map(|wt| Array2::zeros(wt.raw_dim())).collect();
                let db = grad_out.sum_axis(Axis(0));
                for (tap, wt) in w.iter().enumerate() {
                    let shift = *padding as isize - tap as isize;
                    for t in 0..t_len as isize {
                        let src = t - shift;
                        if src >= 0 && src < t_len as isize {
                            let g = grad_out.row(t as usize);
                            let x = input.row(src as usize);
                            // dw_tap += g ⊗ x ; dx[src] += wt^T g
                            for (o, &gv) in g.iter().enumerate() {
                                if gv != 0.0 {
                                    let mut dwrow = dw[tap].row_mut(o);
                                    dwrow.scaled_add(gv, &x);
                                }
                            }
                            let back = wt.t().dot(&g);
                            let mut dst = dx.row_mut(src as usize);
                            dst += &back;
                        }
                    }
                }
                (dx, LayerGrad::Conv1d { dw, db })
            }
            (
                Layer::Lstm {
                    w_ih,
                    w_hh,
                    b_hh,
                    ..
                },
                Cache::Lstm {
                    input,
                    gates,
                    cells,
                    hiddens,
                },
            ) => {
                let t_len = input.nrows();
                let h = w_hh.ncols();
                let mut dw_ih = Array2::zeros(w_ih.raw_dim());
                let mut dw_hh = Array2::zeros(w_hh.raw_dim());
                let mut db = Array1::zeros(4 * h);
                let mut dx = Array2::zeros(input.raw_dim());
                let mut dh = Array1::<f64>::zeros(h);
                let mut dc = Array1::<f64>::zeros(h);
                for t in (0..t_len).rev() {
                    dh += &grad_out.row(t);
                    let [gi, gf, gg, go] = &gates[t];
                    let tanh_c = cells[t].mapv(f64::tanh);
                    let d_o = &dh * &tanh_c;
                    dc = dc + &dh * go * tanh_c.mapv(|v| 1.0 - v * v);
                    let c_prev = if t == 0 {
                        Array1::zeros(h)
                    } else {
                        cells[t - 1].clone()
                    };
                    let d_i = &dc * gg;
                    let d_g = &dc * gi;
                    let d_f = &dc * &c_prev;
                    let dc_prev = &dc * gf;
                    let dz_i = &d_i * gi * &gi.mapv(|v| 1.0 - v);
                    let dz_f = &d_f * gf * &gf.mapv(|v| 1.0 - v);
                    let dz_g = &d_g * &gg.mapv(|v| 1.0 - v * v);
                    let dz_o = &d_o * go * &go.mapv(|v| 1.0 - v);
                    let mut dz = Array1::zeros(4 * h);
                    dz.slice_mut(ndarray::s![0..h]).assign(&dz_i);
                    dz.slice_mut(ndarray::s![h..2 * h]).assign(&dz_f);
                    dz.slice_mut(ndarray::s![2 * h..3 * h]).assign(&dz_g);
                    dz.slice_mut(ndarray::s![3 * h..4 * h]).assign(&dz_o);
                    let x_t = input.row(t);
                    let h_prev = if t == 0 {
                        Array1::zeros(h)
                    } else {
                        hiddens[t - 1].clone()
                    };
                    for (r, &dzv) in dz.iter().enumerate() {
                        if dzv != 0.0 {
                            dw_ih.row_mut(r).scaled_add(dzv, &x_t);
                            dw_hh.row_mut(r).scaled_add(dzv, &h_prev.view());
                        }
                    }
                    db += &dz;
                    let dxr = w_ih.t().dot(&dz);
                    dx.row_mut(t).assign(&dxr);
                    dh = w_hh.t().dot(&dz);
                    dc = dc_prev;
                }
                // Both bias vectors see the same pre-activation, so they
                // share the gradient.
                let (db_ih, db_hh) = if b_hh.is_some() {
                    (db.clone(), Some(db))
                } else {
                    (db, None)
                };
                (
                    dx,
                    LayerGrad::Lstm {
                        dw_ih,
                        dw_hh,
                        db_ih,
                        db_hh,
                    },
                )
            }
            (Layer::Relu, Cache::Relu { input }) => {
                let dx = ndarray::Zip::from(grad_out)
                    .and(input)
                    .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                (dx, LayerGrad::None)
            }
            (Layer::CsSelect { .. }, Cache::CsSelect { mask }) => {
                let mut dx = grad_out.clone();
                for (t, row_mask) in mask.iter().enumerate() {
                    for (c, &keep) in row_mask.iter().enumerate() {
                        if !keep {
                            dx[[t, c]] = 0.0;
                        }
                    }
                }
                (dx, LayerGrad::None)
            }
            _ => unreachable!("cache/layer mismatch"),
        }
    }

    /// Visit every parameter mutably in declaration order (weights before
    /// biases); the same order defines gradient flattening and file layout.
    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        match self {
            Layer::Dense { w, b } => {
                w.iter_mut().for_each(|v| f(v));
                b.iter_mut().for_each(|v| f(v));
            }
            Layer::Conv1d { w, b, .. } => {
                for wt in w.iter_mut() {
                    wt.iter_mut().for_each(|v| f(v));
                }
                b.iter_mut().for_each(|v| f(v));
            }
            Layer::Lstm {
                w_ih,
                w_hh,
                b_ih,
                b_hh,
            } => {
                w_ih.iter_mut().for_each(|v| f(v));
                w_hh.iter_mut().for_each(|v| f(v));
                b_ih.iter_mut().for_each(|v| f(v));
                if let Some(b2) = b_hh {
                    b2.iter_mut().for_each(|v| f(v));
                }
            }
            Layer::Relu | Layer::CsSelect { .. } => {}
        }
    }

    pub fn for_each_param(&self, f: &mut dyn FnMut(f64)) {
        match self {
            Layer::Dense { w, b } => {
                w.iter().for_each(|&v| f(v));
                b.iter().for_each(|&v| f(v));
            }
            Layer::Conv1d { w, b, .. } => {
                for wt in w.iter() {
                    wt.iter().for_each(|&v| f(v));
                }
                b.iter().for_each(|&v| f(v));
            }
            Layer::Lstm {
                w_ih,
                w_hh,
                b_ih,
                b_hh,
            } => {
                w_ih.iter().for_each(|&v| f(v));
                w_hh.iter().for_each(|&v| f(v));
                b_ih.iter().for_each(|&v| f(v));
                if let Some(b2) = b_hh {
                    b2.iter().for_each(|&v| f(v));
                }
            }
            Layer::Relu | Layer::CsSelect { .. } => {}
        }
    }
}

impl LayerGrad {
    /// Flatten in the same declaration order as `for_each_param_mut`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        match self {
            LayerGrad::Dense { dw, db } => {
                out.extend(dw.iter());
                out.extend(db.iter());
            }
            LayerGrad::Conv1d { dw, db } => {
                for wt in dw {
                    out.extend(wt.iter());
                }
                out.extend(db.iter());
            }
            LayerGrad::Lstm {
                dw_ih,
                dw_hh,
                db_ih,
                db_hh,
            } => {
                out.extend(dw_ih.iter());
                out.extend(dw_hh.iter());
                out.extend(db_ih.iter());
                if let Some(b2) = db_hh {
                    out.extend(b2.iter());
                }
            }
            LayerGrad::None => {}
        }
    }
}
