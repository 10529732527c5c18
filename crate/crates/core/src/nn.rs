//! Parameterized building blocks shared by the encoders and classifier heads.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{uniform_fan_in, ParamGroup, ParamId, ParamStore, Tape, Var};

/// Forward-pass mode. Dropout draws from the training RNG and is a no-op in `Eval`.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Affine map `x · W + b` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            uniform_fan_in(rng, in_dim, out_dim, in_dim),
        );
        let bias = store.add(
            format!("{name}.bias"),
            group,
            uniform_fan_in(rng, 1, out_dim, in_dim),
        );
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), group, Array2::ones((1, dim))),
            shift: store.add(format!("{name}.shift"), group, Array2::zeros((1, dim))),
            eps: 1e-12,
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Var {
        let normed = tape.layer_norm(x, self.eps);
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.shift);
        let scaled = tape.mul_row(normed, g);
        tape.add_row(scaled, b)
    }
}

/// Inverted dropout: surviving activations are scaled by 1 / (1 - p).
pub fn dropout(tape: &mut Tape<'_>, x: Var, p: f64, mode: &mut Mode<'_>) -> Var {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_fn(tape.value(x).dim(), |_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            });
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}
