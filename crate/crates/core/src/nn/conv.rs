use rand::Rng as _;

use super::dense::Activation;
use super::kernels::{axpy, dot};
use super::param::{Param, Parameterized};
use crate::rng::Rng;
use crate::{Error, Result};

/// 2-D convolution over a `[channels x height x width]` map, square kernel,
/// zero padding. Implemented as im2col followed by per-channel dot products.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    activation: Activation,
}

#[derive(Clone, Debug)]
pub struct Conv2dCache {
    cols: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        in_ch: usize,
        in_h: usize,
        in_w: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let limit = (6.0 / fan_in as f64).sqrt();
        let weight = (0..out_ch * fan_in)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            weight: Param::new(weight),
            bias: Param::zeros(out_ch),
            in_ch,
            in_h,
            in_w,
            out_ch,
            kernel,
            stride,
            pad,
            activation,
        }
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_ch * self.out_h() * self.out_w()
    }

    pub fn dims(&self) -> [usize; 7] {
        [
            self.in_ch,
            self.in_h,
            self.in_w,
            self.out_ch,
            self.kernel,
            self.stride,
            self.pad,
        ]
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (oh, ow, k, pl) = (self.out_h(), self.out_w(), self.kernel, self.patch_len());
        let mut cols = vec![0.0; oh * ow * pl];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[(oy * ow + ox) * pl..(oy * ow + ox + 1) * pl];
                for c in 0..self.in_ch {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            row[(c * k + ky) * k + kx] =
                                x[(c * self.in_h + iy as usize) * self.in_w + ix as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn pre_activation(&self, cols: &[f64]) -> Vec<f64> {
        let (npos, pl) = (self.out_h() * self.out_w(), self.patch_len());
        let mut pre = vec![0.0; self.out_ch * npos];
        for oc in 0..self.out_ch {
            let w = &self.weight.value[oc * pl..(oc + 1) * pl];
            let b = self.bias.value[oc];
            for pos in 0..npos {
                pre[oc * npos + pos] = b + dot(w, &cols[pos * pl..(pos + 1) * pl]);
            }
        }
        pre
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, Conv2dCache)> {
        if x.len() != self.in_len() {
            return Err(Error::dim("conv input", self.in_len(), x.len()));
        }
        let cols = self.im2col(x);
        let pre = self.pre_activation(&cols);
        let out: Vec<f64> = pre.iter().map(|&v| self.activation.apply(v)).collect();
        Ok((out.clone(), Conv2dCache { cols, pre, out }))
    }

    pub fn backward(&mut self, cache: &Conv2dCache, dy: &[f64], need_input_grad: bool) -> Vec<f64> {
        let (oh, ow, k, pl) = (self.out_h(), self.out_w(), self.kernel, self.patch_len());
        let npos = oh * ow;
        let dpre: Vec<f64> = dy
            .iter()
            .zip(cache.pre.iter().zip(&cache.out))
            .map(|(g, (&p, &o))| g * self.activation.derivative(p, o))
            .collect();
        let mut dcols = if need_input_grad {
            vec![0.0; npos * pl]
        } else {
            Vec::new()
        };
        for oc in 0..self.out_ch {
            let mut bias_grad = 0.0;
            for pos in 0..npos {
                let d = dpre[oc * npos + pos];
                if d == 0.0 {
                    continue;
                }
                bias_grad += d;
                axpy(
                    d,
                    &cache.cols[pos * pl..(pos + 1) * pl],
                    &mut self.weight.grad[oc * pl..(oc + 1) * pl],
                );
                if need_input_grad {
                    axpy(
                        d,
                        &self.weight.value[oc * pl..(oc + 1) * pl],
                        &mut dcols[pos * pl..(pos + 1) * pl],
                    );
                }
            }
            self.bias.grad[oc] += bias_grad;
        }
        if !need_input_grad {
            return Vec::new();
        }
        let mut dx = vec![0.0; self.in_len()];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &dcols[(oy * ow + ox) * pl..(oy * ow + ox + 1) * pl];
                for c in 0..self.in_ch {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            dx[(c * self.in_h + iy as usize) * self.in_w + ix as usize] +=
                                row[(c * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use crate::rng::rng_for;

    /// Direct nested-loop convolution, independent of the im2col path.
    fn naive_conv(conv: &Conv2d, x: &[f64]) -> Vec<f64> {
        let [ic, ih, iw, oc, k, s, p] = conv.dims();
        let (oh, ow) = (conv.out_h(), conv.out_w());
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.value[o];
                    for c in 0..ic {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                    continue;
                                }
                                acc += conv.weight.value[((o * ic + c) * k + ky) * k + kx]
                                    * x[(c * ih + iy as usize) * iw + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = rng_for(21, &[]);
        let conv = Conv2d::init(3, 7, 6, 4, 3, 2, 1, Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..conv.in_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = conv.forward(&x).unwrap();
        let slow = naive_conv(&conv, &x);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_for(22, &[]);
        let mut conv = Conv2d::init(2, 6, 6, 3, 3, 2, 1, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..conv.in_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wts: Vec<f64> = (0..conv.out_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = conv.forward_cached(&x).unwrap();
        conv.zero_grad();
        let dx = conv.backward(&cache, &wts, true);
        let analytic = conv.flat_grads();
        let mut probe = conv.clone();
        let report = gradient_check(
            |p| {
                probe.set_flat_values(p).unwrap();
                dot(&probe.forward(&x).unwrap(), &wts)
            },
            &conv.flat_values(),
            &analytic,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
        let report = gradient_check(
            |xp| dot(&conv.forward(xp).unwrap(), &wts),
            &x,
            &dx,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
