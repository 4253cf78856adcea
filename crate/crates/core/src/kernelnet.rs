//! Learned-kernel probabilistic neural network.
//!
//! A small perceptron maps each sample's distance to an interpolation weight;
//! the output unit is the normalized weighted average `Σ g·y / Σ y` of the
//! sample values. Every first-layer unit shares the same perceptron weights,
//! so backpropagation sums the per-sample contributions into one gradient.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::projection::NeighborSample;
use crate::training::TrainingPattern;

pub const DEFAULT_HIDDEN: usize = 25;

/// Denominators with magnitude below this fall back to the nearest sample.
pub const DEGENERATE_EPS: f64 = 1e-9;

/// Distance → weight perceptron: tanh hidden layer, linear output.
///
/// Parameters are stored flat as `[w₀, b₀, …, w_{H−1}, b_{H−1}, v₀, …, v_{H−1}, c]`
/// (hidden weight/bias pairs, output weights, output bias).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMlp {
    hidden: usize,
    params: Vec<f64>,
}

impl KernelMlp {
    pub fn param_count_for(hidden: usize) -> usize {
        3 * hidden + 1
    }

    pub fn zeros(hidden: usize) -> Self {
        assert!(hidden > 0, "at least one hidden unit");
        KernelMlp {
            hidden,
            params: vec![0.0; Self::param_count_for(hidden)],
        }
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("kernel MLP needs at least one hidden unit"));
        }
        if params.len() != Self::param_count_for(hidden) {
            return Err(Error::invalid(format!(
                "{} parameters for {hidden} hidden units, expected {}",
                params.len(),
                Self::param_count_for(hidden)
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("kernel MLP weights must be finite"));
        }
        Ok(KernelMlp { hidden, params })
    }

    /// Trial points inside the optimizer may be arbitrary; no validation.
    pub(crate) fn from_params_unchecked(hidden: usize, params: Vec<f64>) -> Self {
        debug_assert_eq!(params.len(), Self::param_count_for(hidden));
        KernelMlp { hidden, params }
    }

    pub fn from_parts(hidden_units: &[(f64, f64)], output_weights: &[f64], output_bias: f64) -> Result<Self> {
        if hidden_units.len() != output_weights.len() {
            return Err(Error::invalid("hidden and output layer widths differ"));
        }
        let mut params: Vec<f64> = hidden_units.iter().flat_map(|&(w, b)| [w, b]).collect();
        params.extend_from_slice(output_weights);
        params.push(output_bias);
        Self::from_params(hidden_units.len(), params)
    }

    #[inline]
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    #[inline]
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn hidden_unit(&self, i: usize) -> (f64, f64) {
        (self.params[2 * i], self.params[2 * i + 1])
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.params[2 * self.hidden..3 * self.hidden]
    }

    pub fn output_bias(&self) -> f64 {
        self.params[3 * self.hidden]
    }

    /// `c + Σᵢ vᵢ · tanh(wᵢ d + bᵢ)`.
    #[inline]
    pub fn forward(&self, d: f64) -> f64 {
        let h = self.hidden;
        let (pairs, rest) = self.params.split_at(2 * h);
        let (out_w, bias) = rest.split_at(h);
        let mut y = bias[0];
        for (pair, v) in pairs.chunks_exact(2).zip(out_w) {
            y += v * (pair[0] * d + pair[1]).tanh();
        }
        y
    }

    /// Forward pass that keeps the hidden activations for backpropagation.
    #[inline]
    fn forward_cached(&self, d: f64, act: &mut [f64]) -> f64 {
        let h = self.hidden;
        let (pairs, rest) = self.params.split_at(2 * h);
        let (out_w, bias) = rest.split_at(h);
        let mut y = bias[0];
        for ((pair, v), a) in pairs.chunks_exact(2).zip(out_w).zip(act.iter_mut()) {
            *a = (pair[0] * d + pair[1]).tanh();
            y += v * *a;
        }
        y
    }

    /// Adds `dE/dy · ∂y/∂θ` at distance `d` into `grad`, given cached activations.
    #[inline]
    fn backward(&self, d: f64, act: &[f64], dy: f64, grad: &mut [f64]) {
        let h = self.hidden;
        let out_w = &self.params[2 * h..3 * h];
        let (g_pairs, g_rest) = grad.split_at_mut(2 * h);
        let (g_out, g_bias) = g_rest.split_at_mut(h);
        g_bias[0] += dy;
        for i in 0..h {
            let a = act[i];
            g_out[i] += dy * a;
            let pre = dy * out_w[i] * (1.0 - a * a);
            g_pairs[2 * i] += pre * d;
            g_pairs[2 * i + 1] += pre;
        }
    }
}

pub fn mlp_forward(net: &KernelMlp, d: f64) -> f64 {
    net.forward(d)
}

/// Interpolation kernel of the first network layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Mlp(KernelMlp),
    /// `exp(−d / width)`.
    Exponential { width: f64 },
    /// Weight 1 on the nearest sample (lowest frame index on ties), 0 elsewhere.
    NearestOnly,
}

impl Kernel {
    pub fn exponential(width: f64) -> Result<Kernel> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::invalid(format!("exponential kernel width must be > 0, got {width}")));
        }
        Ok(Kernel::Exponential { width })
    }

    /// Weight at distance `d`; `None` for [`Kernel::NearestOnly`], whose weight
    /// depends on the other samples.
    #[inline]
    pub fn weight(&self, d: f64) -> Option<f64> {
        match self {
            Kernel::Mlp(net) => Some(net.forward(d)),
            Kernel::Exponential { width } => Some((-d / width).exp()),
            Kernel::NearestOnly => None,
        }
    }
}

/// Samples taking part in the average: the in-frame ones when any exist,
/// otherwise all of them.
#[inline]
pub fn effective_mask(samples: &[NeighborSample]) -> impl Fn(&NeighborSample) -> bool {
    let any_inside = samples.iter().any(|s| !s.out_of_frame);
    move |s: &NeighborSample| !any_inside || !s.out_of_frame
}

/// Index of the minimal-distance effective sample, lowest index on ties.
pub fn nearest_index(samples: &[NeighborSample]) -> usize {
    assert!(!samples.is_empty(), "empty neighbor array");
    let keep = effective_mask(samples);
    let mut best: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        if keep(s) && best.is_none_or(|b| s.distance < samples[b].distance) {
            best = Some(i);
        }
    }
    best.expect("at least one effective sample")
}

/// Sequence nearest-neighbor estimate.
pub fn seq_nn(samples: &[NeighborSample]) -> f64 {
    samples[nearest_index(samples)].value
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub value: f64,
    /// The weight sum was below [`DEGENERATE_EPS`] and the nearest sample was used.
    pub degenerate: bool,
}

pub fn pnn_combine_detailed(samples: &[NeighborSample], kernel: &Kernel) -> Combined {
    assert!(!samples.is_empty(), "empty neighbor array");
    if matches!(kernel, Kernel::NearestOnly) {
        return Combined {
            value: seq_nn(samples),
            degenerate: false,
        };
    }
    let keep = effective_mask(samples);
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples.iter().filter(|s| keep(s)) {
        let y = kernel.weight(s.distance).expect("weighted kernel");
        num += s.value * y;
        den += y;
    }
    if den.abs() < DEGENERATE_EPS {
        Combined {
            value: seq_nn(samples),
            degenerate: true,
        }
    } else {
        Combined {
            value: num / den,
            degenerate: false,
        }
    }
}

/// Normalized kernel-weighted average of the effective samples.
pub fn pnn_combine(samples: &[NeighborSample], kernel: &Kernel) -> f64 {
    pnn_combine_detailed(samples, kernel).value
}

/// Marker for patterns whose weight sum is too small to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("degenerate kernel weight sum")]
pub struct DegenerateDenominator;

/// `∂E/∂y_s = (o − t) · (g_s Σy − Σ g·y) / (Σy)²` for every sample; excluded
/// (out-of-frame) samples get zero.
pub fn pnn_output_grad(
    samples: &[NeighborSample],
    weights: &[f64],
    output: f64,
    target: f64,
) -> std::result::Result<Vec<f64>, DegenerateDenominator> {
    assert_eq!(samples.len(), weights.len(), "one weight per sample");
    let keep = effective_mask(samples);
    let mut sum_y = 0.0;
    let mut sum_gy = 0.0;
    for (s, &y) in samples.iter().zip(weights) {
        if keep(s) {
            sum_y += y;
            sum_gy += s.value * y;
        }
    }
    if sum_y.abs() < DEGENERATE_EPS {
        return Err(DegenerateDenominator);
    }
    let residual = output - target;
    let inv_sq = 1.0 / (sum_y * sum_y);
    Ok(samples
        .iter()
        .map(|s| {
            if keep(s) {
                residual * (s.value * sum_y - sum_gy) * inv_sq
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backprop {
    /// `½ (o − t)²`.
    pub loss: f64,
    pub grad: Vec<f64>,
    pub skipped: bool,
}

/// Reusable buffers for [`accumulate_backprop`].
#[derive(Debug, Default, Clone)]
pub struct BackpropScratch {
    activations: Vec<f64>,
    weights: Vec<f64>,
}

/// Pattern loss with its gradient added into `grad`. Returns `(loss, skipped)`;
/// degenerate patterns contribute their fallback loss and no gradient.
pub fn accumulate_backprop(
    net: &KernelMlp,
    samples: &[NeighborSample],
    target: f64,
    grad: &mut [f64],
    scratch: &mut BackpropScratch,
) -> (f64, bool) {
    let h = net.hidden();
    let n = samples.len();
    scratch.activations.resize(n * h, 0.0);
    scratch.weights.resize(n, 0.0);
    let keep = effective_mask(samples);
    let mut sum_y = 0.0;
    let mut sum_gy = 0.0;
    for (k, s) in samples.iter().enumerate() {
        if keep(s) {
            let y = net.forward_cached(s.distance, &mut scratch.activations[k * h..(k + 1) * h]);
            scratch.weights[k] = y;
            sum_y += y;
            sum_gy += s.value * y;
        }
    }
    if sum_y.abs() < DEGENERATE_EPS {
        let r = seq_nn(samples) - target;
        return (0.5 * r * r, true);
    }
    let output = sum_gy / sum_y;
    let residual = output - target;
    let scale = residual / (sum_y * sum_y);
    for (k, s) in samples.iter().enumerate() {
        if keep(s) {
            let dy = scale * (s.value * sum_y - sum_gy);
            net.backward(s.distance, &scratch.activations[k * h..(k + 1) * h], dy, grad);
        }
    }
    (0.5 * residual * residual, false)
}

pub fn mlp_backprop(net: &KernelMlp, pattern: &TrainingPattern) -> Backprop {
    let mut grad = vec![0.0; net.params().len()];
    let (loss, skipped) = accumulate_backprop(
        net,
        &pattern.samples,
        pattern.target,
        &mut grad,
        &mut BackpropScratch::default(),
    );
    Backprop { loss, grad, skipped }
}

const WIDTH_SCAN_STEP: f64 = 1e-3;
const WIDTH_BISECT_TOL: f64 = 1e-6;

/// Smallest distance in `[0, 3L]` where the kernel falls to half its value at
/// zero; `3L` if it never does.
pub fn kernel_half_width(kernel: &Kernel, scale: usize) -> Result<f64> {
    let Some(k0) = kernel.weight(0.0) else {
        return Err(Error::UndefinedWidth { value: f64::NAN });
    };
    if k0.abs() < DEGENERATE_EPS {
        return Err(Error::UndefinedWidth { value: k0 });
    }
    let half = 0.5 * k0;
    let d_max = 3.0 * scale as f64;
    let w = |d: f64| kernel.weight(d).expect("weighted kernel");
    let steps = (d_max / WIDTH_SCAN_STEP).ceil() as usize;
    let mut prev = 0.0;
    for i in 1..=steps {
        let d = (i as f64 * WIDTH_SCAN_STEP).min(d_max);
        if w(d) <= half {
            let (mut lo, mut hi) = (prev, d);
            while hi - lo > WIDTH_BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                if w(mid) <= half {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        prev = d;
    }
    Ok(d_max)
}

/// A trained kernel with the conditions it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub net: KernelMlp,
    pub noise_sigma: f64,
    pub scale: usize,
    pub frames: usize,
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let net = &self.net;
        let mut s = String::from("MLPPNN 1\n");
        writeln!(
            s,
            "hidden={} distance_units=hr noise_sigma={} scale={} frames={}",
            net.hidden(),
            self.noise_sigma,
            self.scale,
            self.frames
        )
        .unwrap();
        for i in 0..net.hidden() {
            let (w, b) = net.hidden_unit(i);
            writeln!(s, "{w} {b}").unwrap();
        }
        let out: Vec<String> = net.output_weights().iter().map(|v| v.to_string()).collect();
        writeln!(s, "{}", out.join(" ")).unwrap();
        writeln!(s, "{}", net.output_bias()).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<ModelFile> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("MLPPNN 1") {
            return Err(Error::parse("model", 1, "expected header \"MLPPNN 1\""));
        }
        let meta = lines
            .next()
            .ok_or_else(|| Error::parse("model", 2, "missing metadata line"))?;
        let (mut hidden, mut units, mut sigma, mut scale, mut frames) = (None, None, None, None, None);
        for tok in meta.split_whitespace() {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse("model", 2, format!("expected key=value, got {tok:?}")))?;
            let bad = |_| Error::parse("model", 2, format!("bad value for {key}: {value:?}"));
            match key {
                "hidden" => hidden = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "distance_units" => units = Some(value.to_string()),
                "noise_sigma" => sigma = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "scale" => scale = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "frames" => frames = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::parse("model", 2, format!("missing {k}"));
        let hidden = hidden.ok_or_else(|| missing("hidden"))?;
        let units = units.ok_or_else(|| missing("distance_units"))?;
        if units != "hr" {
            return Err(Error::parse("model", 2, format!("unsupported distance_units={units}")));
        }
        let mut params = Vec::new();
        for (i, line) in lines.enumerate() {
            for tok in line.split_whitespace() {
                params.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::parse("model", i + 3, format!("{tok:?}: {e}")))?,
                );
            }
        }
        let net = KernelMlp::from_params(hidden, params).map_err(|e| Error::parse("model", 3, e.to_string()))?;
        Ok(ModelFile {
            net,
            noise_sigma: sigma.ok_or_else(|| missing("noise_sigma"))?,
            scale: scale.ok_or_else(|| missing("scale"))?,
            frames: frames.ok_or_else(|| missing("frames"))?,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<ModelFile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng) -> KernelMlp {
        let hidden: Vec<(f64, f64)> = (0..DEFAULT_HIDDEN)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let out: Vec<f64> = (0..DEFAULT_HIDDEN).map(|_| rng.random_range(-0.3..0.3)).collect();
        KernelMlp::from_parts(&hidden, &out, 1.0).unwrap()
    }

    fn samples(vals: &[(f64, f64)]) -> Vec<NeighborSample> {
        vals.iter().map(|&(g, d)| NeighborSample::new(g, d)).collect()
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(KernelMlp::param_count_for(DEFAULT_HIDDEN), 76);
        let net = KernelMlp::from_parts(&[(1.0, 2.0), (3.0, 4.0)], &[5.0, 6.0], 7.0).unwrap();
        assert_eq!(net.params(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(net.hidden_unit(1), (3.0, 4.0));
        assert_eq!(net.output_weights(), &[5.0, 6.0]);
        assert_eq!(net.output_bias(), 7.0);
        assert!(KernelMlp::from_params(2, vec![0.0; 6]).is_err());
        assert!(KernelMlp::from_params(1, vec![0.0, f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = KernelMlp::zeros(DEFAULT_HIDDEN);
        assert_eq!(mlp_forward(&zero, 0.0), 0.0);
        assert_eq!(mlp_forward(&zero, 3.7), 0.0);
        let mut bias_only = KernelMlp::zeros(DEFAULT_HIDDEN);
        *bias_only.params_mut().last_mut().unwrap() = 0.7;
        assert_eq!(mlp_forward(&bias_only, 0.0), 0.7);
        assert_eq!(mlp_forward(&bias_only, 12.0), 0.7);
    }

    #[test]
    fn forward_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng);
        // second evaluation path: explicit sum over the public accessors
        let mut expected = net.output_bias();
        for i in 0..net.hidden() {
            let (w, b) = net.hidden_unit(i);
            expected += net.output_weights()[i] * (w * 1.0 + b).tanh();
        }
        assert!((mlp_forward(&net, 1.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn combine_examples() {
        let flat = Kernel::Exponential { width: 1e12 };
        let v = pnn_combine(&samples(&[(10.0, 0.5), (20.0, 0.5), (30.0, 0.5)]), &flat);
        assert!((v - 20.0).abs() < 1e-12);
        assert_eq!(pnn_combine(&samples(&[(42.0, 1.3)]), &Kernel::exponential(0.5).unwrap()), 42.0);
        // weights 1 and 1/2, proportional to [2, 1]
        let exp = Kernel::exponential(1.0).unwrap();
        let s = samples(&[(100.0, 0.0), (40.0, std::f64::consts::LN_2)]);
        assert!((pnn_combine(&s, &exp) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn combine_guard_falls_back_to_nearest() {
        let zero = Kernel::Mlp(KernelMlp::zeros(3));
        let c = pnn_combine_detailed(&samples(&[(5.0, 0.9), (9.0, 0.2)]), &zero);
        assert_eq!(c, Combined { value: 9.0, degenerate: true });
    }

    #[test]
    fn combine_drops_flagged_samples() {
        let mut s = samples(&[(10.0, 0.5), (1000.0, 0.1)]);
        s[1].out_of_frame = true;
        let k = Kernel::exponential(1.0).unwrap();
        assert_eq!(pnn_combine(&s, &k), 10.0);
        assert_eq!(seq_nn(&s), 10.0);
        s[0].out_of_frame = true;
        // nothing in frame: everything counts again
        assert_eq!(seq_nn(&s), 1000.0);
    }

    #[test]
    fn seq_nn_examples() {
        assert_eq!(seq_nn(&samples(&[(5.0, 0.8), (9.0, 0.1), (7.0, 0.5)])), 9.0);
        assert_eq!(seq_nn(&samples(&[(3.0, 0.2), (4.0, 0.2)])), 3.0);
        assert_eq!(seq_nn(&samples(&[(6.5, 2.0)])), 6.5);
    }

    #[test]
    fn output_grad_zero_cases() {
        let s = samples(&[(1.0, 0.1), (5.0, 0.2), (9.0, 0.3)]);
        let g = pnn_output_grad(&s, &[1.0, 2.0, 3.0], 4.0, 4.0).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let one = samples(&[(7.0, 0.4)]);
        let g = pnn_output_grad(&one, &[0.37], 7.0, -12.0).unwrap();
        assert_eq!(g, vec![0.0]);
        assert_eq!(pnn_output_grad(&s, &[1.0, -1.0, 0.0], 1.0, 0.0), Err(DegenerateDenominator));
    }

    #[test]
    fn output_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<NeighborSample> = (0..3)
            .map(|_| NeighborSample::new(rng.random_range(0.0..1.0), rng.random_range(0.0..2.0)))
            .collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.5)).collect();
        let t = 0.3;
        let loss = |y: &[f64]| {
            let o = s.iter().zip(y).map(|(a, w)| a.value * w).sum::<f64>() / y.iter().sum::<f64>();
            0.5 * (o - t) * (o - t)
        };
        let o = s.iter().zip(&y).map(|(a, w)| a.value * w).sum::<f64>() / y.iter().sum::<f64>();
        let g = pnn_output_grad(&s, &y, o, t).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let fd = (loss(&yp) - loss(&ym)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-9), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn backprop_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = random_net(&mut rng);
        let p = TrainingPattern {
            samples: samples(&[(50.0, 0.0), (50.0, 1.0), (50.0, 2.5)]).into(),
            target: 50.0,
        };
        let b = mlp_backprop(&net, &p);
        assert_eq!(b.loss, 0.0);
        assert!(b.grad.iter().all(|&v| v == 0.0));
        assert!(!b.skipped);
    }

    #[test]
    fn backprop_degenerate_pattern_is_skipped() {
        let net = KernelMlp::zeros(DEFAULT_HIDDEN);
        let p = TrainingPattern {
            samples: samples(&[(10.0, 0.7), (14.0, 0.3)]).into(),
            target: 12.0,
        };
        let b = mlp_backprop(&net, &p);
        assert!(b.skipped);
        assert_eq!(b.loss, 2.0);
        assert!(b.grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_pattern_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = random_net(&mut rng);
        let s = samples(&[(0.2, 0.3), (0.9, 1.1), (0.4, 2.0)]);
        let mut once = vec![0.0; 76];
        let mut twice = vec![0.0; 76];
        let mut scratch = BackpropScratch::default();
        accumulate_backprop(&net, &s, 0.6, &mut once, &mut scratch);
        accumulate_backprop(&net, &s, 0.6, &mut twice, &mut scratch);
        accumulate_backprop(&net, &s, 0.6, &mut twice, &mut scratch);
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn half_width_examples() {
        for w in [0.3, 1.0, 2.5] {
            let hw = kernel_half_width(&Kernel::exponential(w).unwrap(), 3).unwrap();
            assert!((hw - w * std::f64::consts::LN_2).abs() < 1e-5, "{w}: {hw}");
        }
        let mut flat = KernelMlp::zeros(4);
        *flat.params_mut().last_mut().unwrap() = 1.0;
        assert_eq!(kernel_half_width(&Kernel::Mlp(flat), 3).unwrap(), 9.0);
        assert!(matches!(
            kernel_half_width(&Kernel::Mlp(KernelMlp::zeros(4)), 3),
            Err(Error::UndefinedWidth { .. })
        ));
        assert!(kernel_half_width(&Kernel::NearestOnly, 3).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = ModelFile {
            net: random_net(&mut rng),
            noise_sigma: 5.0,
            scale: 3,
            frames: 25,
        };
        let text = m.to_text();
        assert!(text.starts_with("MLPPNN 1\nhidden=25 distance_units=hr noise_sigma=5 scale=3 frames=25\n"));
        assert_eq!(ModelFile::parse(&text).unwrap(), m);
        assert!(ModelFile::parse("MLPPNN 2\n").is_err());
        assert!(ModelFile::parse("MLPPNN 1\nhidden=25 distance_units=lr noise_sigma=0 scale=3 frames=25\n").is_err());
        let short = text.rsplit_once('\n').unwrap().0.rsplit_once('\n').unwrap().0;
        assert!(ModelFile::parse(short).is_err());
    }

    fn arb_samples() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0f64..255.0, 0.0f64..5.0), 1..12)
    }

    proptest! {
        #[test]
        fn positive_weights_give_convex_combination(s in arb_samples(), w in 0.1f64..5.0) {
            let s = samples(&s);
            let v = pnn_combine(&s, &Kernel::exponential(w).unwrap());
            let lo = s.iter().map(|x| x.value).fold(f64::INFINITY, f64::min);
            let hi = s.iter().map(|x| x.value).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }

        #[test]
        fn permutation_invariant(s in arb_samples(), rot in 0usize..12) {
            let s = samples(&s);
            let mut r = s.clone();
            r.rotate_left(rot % s.len());
            let k = Kernel::exponential(1.3).unwrap();
            prop_assert!((pnn_combine(&s, &k) - pnn_combine(&r, &k)).abs() < 1e-9);
        }

        #[test]
        fn affine_equivariant(s in arb_samples(), a in -3.0f64..3.0, c in -50.0f64..50.0) {
            let s = samples(&s);
            let mapped: Vec<NeighborSample> = s.iter().map(|x| NeighborSample::new(a * x.value + c, x.distance)).collect();
            let k = Kernel::exponential(0.8).unwrap();
            let o = pnn_combine(&s, &k);
            prop_assert!((pnn_combine(&mapped, &k) - (a * o + c)).abs() < 1e-8);
        }

        #[test]
        fn weight_scaling_invariant(s in arb_samples(), factor in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0]) {
            let s = samples(&s);
            let mut rng = ChaCha8Rng::seed_from_u64(s.len() as u64);
            let net = random_net(&mut rng);
            let mut scaled = net.clone();
            let h = net.hidden();
            for p in &mut scaled.params_mut()[2 * h..] {
                *p *= factor;
            }
            let a = pnn_combine_detailed(&s, &Kernel::Mlp(net));
            let b = pnn_combine_detailed(&s, &Kernel::Mlp(scaled));
            prop_assume!(!a.degenerate && !b.degenerate);
            prop_assert!((a.value - b.value).abs() < 1e-7 * (1.0 + a.value.abs()));
        }

        #[test]
        fn seq_nn_is_nearest_only_combine(s in arb_samples(), flags in proptest::collection::vec(any::<bool>(), 12)) {
            let mut s = samples(&s);
            for (x, f) in s.iter_mut().zip(flags) {
                x.out_of_frame = f;
            }
            prop_assert_eq!(seq_nn(&s), pnn_combine(&s, &Kernel::NearestOnly));
        }
    }
}
