//! Model container: parameter storage, He initialization, the full
//! encoder-decoder forward pass (with activation cache) and backward pass.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;

use super::ops::{
    concat_channels, conv_backward, conv_forward, deconv_backward, deconv_forward, relu_backward,
    relu_forward, split_channels, ConvParams, DeconvParams,
};
use super::{ArchSpec, FeatureMap, NetError, Scalar};

/// All learnable parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub arch: ArchSpec,
    pub seed: u64,
    pub encoder: Vec<ConvParams<T>>,
    pub decoder: Vec<DeconvParams<T>>,
    pub head: ConvParams<T>,
}

/// Gradient buffers mirroring [`ModelWeights`].
#[derive(Debug, Clone)]
pub struct ModelGradients<T> {
    pub encoder: Vec<ConvParams<T>>,
    pub decoder: Vec<DeconvParams<T>>,
    pub head: ConvParams<T>,
}

/// Activations retained by [`ModelWeights::forward_cached`] for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: FeatureMap<T>,
    z_enc: Vec<FeatureMap<T>>,
    e: Vec<FeatureMap<T>>,
    dec_in: Vec<FeatureMap<T>>,
    z_dec: Vec<FeatureMap<T>>,
    u: Vec<FeatureMap<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    /// He-initialized weights (normal with variance 2 / fan_in, zero
    /// biases), drawn from a seeded PCG so initialization is reproducible
    /// and identical across scalar types. Layer order: encoder shallow to
    /// deep, decoder deep to shallow, head.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self, NetError> {
        arch.validate()?;
        let mut rng = Pcg64::seed_from_u64(seed);
        let mut draw = |buf: &mut [T], fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive and finite");
            for v in buf.iter_mut() {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        };
        let mut encoder = Vec::with_capacity(arch.depth);
        for (cin, cout) in arch.encoder_channels() {
            let mut p = ConvParams::zeros(cout, cin);
            draw(&mut p.weights, cin * 9);
            encoder.push(p);
        }
        let mut decoder = Vec::with_capacity(arch.depth);
        for (cin, cout) in arch.decoder_channels() {
            let mut p = DeconvParams::zeros(cin, cout);
            draw(&mut p.weights, cin * 9);
            decoder.push(p);
        }
        let head_in = arch
            .decoder_channels()
            .last()
            .expect("depth >= 2 guarantees decoder stages")
            .1;
        let mut head = ConvParams::zeros(1, head_in);
        draw(&mut head.weights, head_in * 9);
        Ok(Self {
            arch,
            seed,
            encoder,
            decoder,
            head,
        })
    }

    /// Convert every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        let conv = |p: &ConvParams<T>| ConvParams {
            out_channels: p.out_channels,
            in_channels: p.in_channels,
            weights: p
                .weights
                .iter()
                .map(|v| U::from_f64(v.into_f64()))
                .collect(),
            bias: p.bias.iter().map(|v| U::from_f64(v.into_f64())).collect(),
        };
        let deconv = |p: &DeconvParams<T>| DeconvParams {
            in_channels: p.in_channels,
            out_channels: p.out_channels,
            weights: p
                .weights
                .iter()
                .map(|v| U::from_f64(v.into_f64()))
                .collect(),
            bias: p.bias.iter().map(|v| U::from_f64(v.into_f64())).collect(),
        };
        ModelWeights {
            arch: self.arch,
            seed: self.seed,
            encoder: self.encoder.iter().map(conv).collect(),
            decoder: self.decoder.iter().map(deconv).collect(),
            head: conv(&self.head),
        }
    }

    fn check_input(&self, x: &FeatureMap<T>) -> Result<(), NetError> {
        let m = self.arch.resolution_multiple();
        if x.channels != self.arch.in_channels {
            return Err(NetError::ShapeMismatch(format!(
                "input has {} channels, architecture expects {}",
                x.channels, self.arch.in_channels
            )));
        }
        if x.height == 0 || x.width == 0 || x.height % m != 0 || x.width % m != 0 {
            return Err(NetError::ShapeMismatch(format!(
                "input resolution {}x{} must be a positive multiple of {m}",
                x.height, x.width
            )));
        }
        Ok(())
    }

    /// Full forward pass returning the denormalized path-loss prediction
    /// (1, H, W) in dB.
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>, NetError> {
        self.check_input(x)?;
        let d = self.arch.depth;
        // encoder
        let mut e: Vec<FeatureMap<T>> = Vec::with_capacity(d);
        for k in 0..d {
            let input = if k == 0 { x } else { &e[k - 1] };
            let z = conv_forward(input, &self.encoder[k], 2);
            e.push(relu_forward(&z));
        }
        // decoder
        let mut u = relu_forward(&deconv_forward(&e[d - 1], &self.decoder[0]));
        for (s, dec) in self.decoder.iter().enumerate().skip(1) {
            let skip = self
                .arch
                .skip_source(s - 1)
                .expect("all stages before the last have a skip source");
            let c = concat_channels(&u, &e[skip]);
            u = relu_forward(&deconv_forward(&c, dec));
        }
        let raw = conv_forward(&u, &self.head, 1);
        Ok(self.denormalize(raw))
    }

    /// Forward pass that also retains every activation needed by
    /// [`ModelWeights::backward`].
    pub fn forward_cached(
        &self,
        x: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, ForwardCache<T>), NetError> {
        self.check_input(x)?;
        let d = self.arch.depth;
        let mut z_enc = Vec::with_capacity(d);
        let mut e: Vec<FeatureMap<T>> = Vec::with_capacity(d);
        for k in 0..d {
            let input = if k == 0 { x } else { &e[k - 1] };
            let z = conv_forward(input, &self.encoder[k], 2);
            e.push(relu_forward(&z));
            z_enc.push(z);
        }
        let mut dec_in = Vec::with_capacity(d);
        let mut z_dec = Vec::with_capacity(d);
        let mut u: Vec<FeatureMap<T>> = Vec::with_capacity(d);
        for (s, dec) in self.decoder.iter().enumerate() {
            let input = if s == 0 {
                e[d - 1].clone()
            } else {
                let skip = self
                    .arch
                    .skip_source(s - 1)
                    .expect("all stages before the last have a skip source");
                concat_channels(&u[s - 1], &e[skip])
            };
            let z = deconv_forward(&input, dec);
            u.push(relu_forward(&z));
            dec_in.push(input);
            z_dec.push(z);
        }
        let raw = conv_forward(&u[d - 1], &self.head, 1);
        let pred = self.denormalize(raw);
        Ok((
            pred,
            ForwardCache {
                input: x.clone(),
                z_enc,
                e,
                dec_in,
                z_dec,
                u,
            },
        ))
    }

    /// Backpropagate `d_pred` (gradient of a scalar loss with respect to
    /// the denormalized prediction) through the network, accumulating
    /// parameter gradients into `grads`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_pred: &FeatureMap<T>,
        grads: &mut ModelGradients<T>,
    ) {
        let d = self.arch.depth;
        let scale = T::from_f64(self.arch.pl_scale_db);
        // pred = raw * scale + offset
        let mut d_raw = d_pred.clone();
        for v in &mut d_raw.data {
            *v = *v * scale;
        }
        let mut d_u = conv_backward(&cache.u[d - 1], &self.head, 1, &d_raw, &mut grads.head);
        // gradient accumulators for the post-ReLU encoder activations
        let mut d_e: Vec<FeatureMap<T>> = cache
            .e
            .iter()
            .map(|a| FeatureMap::zeros(a.channels, a.height, a.width))
            .collect();
        for s in (0..d).rev() {
            let d_z = relu_backward(&cache.z_dec[s], &d_u);
            let d_in = deconv_backward(
                &cache.dec_in[s],
                &self.decoder[s],
                &d_z,
                &mut grads.decoder[s],
            );
            if s == 0 {
                accumulate(&mut d_e[d - 1], &d_in);
            } else {
                let c_prev = self.decoder[s - 1].out_channels;
                let (d_prev, d_skip) = split_channels(&d_in, c_prev);
                let skip = self
                    .arch
                    .skip_source(s - 1)
                    .expect("all stages before the last have a skip source");
                accumulate(&mut d_e[skip], &d_skip);
                d_u = d_prev;
            }
        }
        for k in (0..d).rev() {
            let d_z = relu_backward(&cache.z_enc[k], &d_e[k]);
            let input = if k == 0 {
                &cache.input
            } else {
                &cache.e[k - 1]
            };
            let d_prev = conv_backward(input, &self.encoder[k], 2, &d_z, &mut grads.encoder[k]);
            if k > 0 {
                let (head, tail) = d_e.split_at_mut(k);
                accumulate(&mut head[k - 1], &d_prev);
                let _ = tail;
            }
        }
    }

    fn denormalize(&self, mut raw: FeatureMap<T>) -> FeatureMap<T> {
        let scale = T::from_f64(self.arch.pl_scale_db);
        let offset = T::from_f64(self.arch.pl_offset_db);
        for v in &mut raw.data {
            *v = *v * scale + offset;
        }
        raw
    }

    /// Parameter tensors in serialization order: per encoder layer then
    /// per decoder layer then head, weights before bias.
    pub fn param_tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for p in &self.encoder {
            out.push(p.weights.as_slice());
            out.push(p.bias.as_slice());
        }
        for p in &self.decoder {
            out.push(p.weights.as_slice());
            out.push(p.bias.as_slice());
        }
        out.push(self.head.weights.as_slice());
        out.push(self.head.bias.as_slice());
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for p in &mut self.encoder {
            out.push(p.weights.as_mut_slice());
            out.push(p.bias.as_mut_slice());
        }
        for p in &mut self.decoder {
            out.push(p.weights.as_mut_slice());
            out.push(p.bias.as_mut_slice());
        }
        out.push(self.head.weights.as_mut_slice());
        out.push(self.head.bias.as_mut_slice());
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }
}

impl<T: Scalar> ModelGradients<T> {
    pub fn zeros(arch: &ArchSpec) -> Self {
        let encoder = arch
            .encoder_channels()
            .into_iter()
            .map(|(cin, cout)| ConvParams::zeros(cout, cin))
            .collect();
        let decoder: Vec<DeconvParams<T>> = arch
            .decoder_channels()
            .into_iter()
            .map(|(cin, cout)| DeconvParams::zeros(cin, cout))
            .collect();
        let head_in = decoder.last().expect("depth >= 2").out_channels;
        Self {
            encoder,
            decoder,
            head: ConvParams::zeros(1, head_in),
        }
    }

    pub fn zero_all(&mut self) {
        for t in self.param_tensors_mut() {
            for v in t {
                *v = T::zero();
            }
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        let mut mine = self.param_tensors_mut();
        let theirs = other.param_tensors();
        for (m, t) in mine.iter_mut().zip(theirs) {
            for (a, b) in m.iter_mut().zip(t) {
                *a = *a + *b;
            }
        }
    }

    /// Elementwise multiply by a constant (e.g. 1 / batch size).
    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        for t in self.param_tensors_mut() {
            for v in t {
                *v = *v * f;
            }
        }
    }

    pub fn param_tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for p in &self.encoder {
            out.push(p.weights.as_slice());
            out.push(p.bias.as_slice());
        }
        for p in &self.decoder {
            out.push(p.weights.as_slice());
            out.push(p.bias.as_slice());
        }
        out.push(self.head.weights.as_slice());
        out.push(self.head.bias.as_slice());
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for p in &mut self.encoder {
            out.push(p.weights.as_mut_slice());
            out.push(p.bias.as_mut_slice());
        }
        for p in &mut self.decoder {
            out.push(p.weights.as_mut_slice());
            out.push(p.bias.as_mut_slice());
        }
        out.push(self.head.weights.as_mut_slice());
        out.push(self.head.bias.as_mut_slice());
        out
    }
}

fn accumulate<T: Scalar>(acc: &mut FeatureMap<T>, inc: &FeatureMap<T>) {
    debug_assert_eq!(acc.data.len(), inc.data.len());
    for (a, b) in acc.data.iter_mut().zip(&inc.data) {
        *a = *a + *b;
    }
}
