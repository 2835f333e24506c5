//! Dense layers over row-major `rows x dim` buffers, with hand-written
//! reverse passes.

use rand::Rng;

/// `y = x W + b` with `W` stored `fan_in x fan_out` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize, with_bias: bool) -> Self {
        Linear {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: with_bias.then(|| vec![0.0; fan_out]),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let mut layer = Linear::zeros(fan_in, fan_out, with_bias);
        let a = glorot_bound(fan_in, fan_out);
        for w in &mut layer.weight {
            *w = rng.gen_range(-a..=a);
        }
        layer
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.fan_in);
        let (fi, fo) = (self.fan_in, self.fan_out);
        let mut y = vec![0.0; rows * fo];
        for r in 0..rows {
            let yr = &mut y[r * fo..(r + 1) * fo];
            if let Some(b) = &self.bias {
                yr.copy_from_slice(b);
            }
            for (k, &xv) in x[r * fi..(r + 1) * fi].iter().enumerate() {
                if xv != 0.0 {
                    axpy(xv, &self.weight[k * fo..(k + 1) * fo], yr);
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dx` when asked.
    pub fn backward(
        &self,
        x: &[f64],
        rows: usize,
        dy: &[f64],
        grad: &mut Linear,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (fi, fo) = (self.fan_in, self.fan_out);
        for r in 0..rows {
            let dyr = &dy[r * fo..(r + 1) * fo];
            for (k, &xv) in x[r * fi..(r + 1) * fi].iter().enumerate() {
                if xv != 0.0 {
                    axpy(xv, dyr, &mut grad.weight[k * fo..(k + 1) * fo]);
                }
            }
            if let Some(gb) = &mut grad.bias {
                axpy(1.0, dyr, gb);
            }
        }
        want_dx.then(|| {
            let mut dx = vec![0.0; rows * fi];
            for r in 0..rows {
                let dyr = &dy[r * fo..(r + 1) * fo];
                for k in 0..fi {
                    dx[r * fi + k] = dot(dyr, &self.weight[k * fo..(k + 1) * fo]);
                }
            }
            dx
        })
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Linear layers with `tanh` between them and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Inputs to every layer of one forward pass; `inputs[0]` is the MLP input.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    rows: usize,
}

impl Mlp {
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Self {
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], true, rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.fan_in, l.fan_out, l.bias.is_some()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("mlp has layers").fan_out
    }

    pub fn forward(&self, x: Vec<f64>, rows: usize) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h, rows);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(h);
            h = y;
        }
        (h, MlpCache { inputs, rows })
    }

    pub fn backward(
        &self,
        cache: &MlpCache,
        dy: Vec<f64>,
        grad: &mut Mlp,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            let need = want_dx || i > 0;
            let dx = self.layers[i].backward(&cache.inputs[i], cache.rows, &d, &mut grad.layers[i], need);
            match dx {
                Some(mut dx) if i > 0 => {
                    // inputs[i] is the tanh output of layer i - 1
                    for (g, y) in dx.iter_mut().zip(&cache.inputs[i]) {
                        *g *= 1.0 - y * y;
                    }
                    d = dx;
                }
                other => return other,
            }
        }
        None
    }
}
