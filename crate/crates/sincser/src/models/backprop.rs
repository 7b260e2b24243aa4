//! Train-time batched forward/backward.
//!
//! The first acoustic layer and batch norm couple the whole minibatch, so
//! a training step runs in phases: batched front forward, per-example
//! tails fanned out in parallel, a fixed-order gradient reduction, then
//! the batched front backward. Per-example results are collected in index
//! order, so gradients are identical however many threads run.

use crate::data::EmotionClass;
use crate::error::{Error, Result};
use crate::layers::attention::AttnGrads;
use crate::layers::dense::DenseGrads;
use crate::layers::embedding::EmbeddingGrads;
use crate::layers::lstm::{LstmCache, LstmGrads};
use crate::layers::norm::BnCache;
use crate::layers::{
    conv1d, conv1d_weight_grad, leaky_relu, leaky_relu_backward, max_pool, max_pool_backward,
    sinc_conv, softmax_cross_entropy, Mode,
};
use crate::layers::sinc_conv::chain_to_cutoffs;
use crate::models::{
    acoustic_tail_features, fusion_logits, AcousticFront, AcousticNet, AcousticTail, FusionHead,
    LinguisticNet, Model, ModelKind,
};
use crate::par;
use crate::tensor::Tensor;

/// One training example. The chunk is already cut to the configured
/// length; tokens may be empty only for acoustic-only models.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub chunk: Vec<f64>,
    pub tokens: Vec<u32>,
    pub label: EmotionClass,
}

/// What a training step reports upward.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Mean cross-entropy over the batch (gradients are for this mean).
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

struct FrontCache {
    x: Tensor,
    bn_cache: BnCache,
    bn_out: Tensor,
    pool_args: Vec<Vec<usize>>,
    frames: usize,
}

enum TailGrads {
    Dnn { fc1: DenseGrads, fc2: DenseGrads },
    Lstm { cell: LstmGrads, fc: DenseGrads },
}

enum TailCache {
    Dnn {
        x: Vec<f64>,
        z1: Vec<f64>,
        a1: Vec<f64>,
    },
    Lstm {
        cache: LstmCache,
        h_last: Vec<f64>,
        frames: usize,
    },
}

struct LingGrads {
    emb: EmbeddingGrads,
    cell: LstmGrads,
    attn: AttnGrads,
    fc: DenseGrads,
    head: Option<DenseGrads>,
}

struct FusionGrads {
    gate_a: DenseGrads,
    gate_l: DenseGrads,
    head: DenseGrads,
}

struct ExampleResult {
    loss: f64,
    pred: usize,
    d_pooled: Option<Vec<f64>>,
    acoustic_head: Option<DenseGrads>,
    tail: Option<TailGrads>,
    ling: Option<LingGrads>,
    fusion: Option<FusionGrads>,
}

/// Runs one minibatch forward/backward, accumulating gradients of the
/// mean loss into the model's parameter `grad` buffers (on top of
/// whatever is already there).
pub fn batch_forward_backward(model: &mut Model, batch: &[TrainExample]) -> Result<BatchOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let kind = model.config.kind;
    let loss_scale = 1.0 / batch.len() as f64;

    // Phase 1: batched acoustic front (mutates BN running stats).
    let front: Option<(Tensor, FrontCache)> = if kind != ModelKind::Linguistic {
        let chunks = assemble_chunks(model, batch)?;
        Some(acoustic_front_forward(model, chunks)?)
    } else {
        None
    };

    // Phase 2: per-example tails, fanned out, collected in index order.
    let results: Vec<Result<ExampleResult>> = {
        let model_ref: &Model = model;
        let pooled = front.as_ref().map(|(p, _)| p);
        par::map_range(batch.len(), |i| {
            process_example(model_ref, batch, i, pooled, loss_scale)
        })
    };
    let mut collected = Vec::with_capacity(batch.len());
    for r in results {
        collected.push(r?);
    }

    // Phase 3: fixed-order reduction into the parameter grads.
    let mut output = BatchOutput {
        mean_loss: 0.0,
        predictions: Vec::with_capacity(batch.len()),
        labels: batch.iter().map(|e| e.label.index()).collect(),
    };
    let mut d_pooled_planes: Vec<Vec<f64>> = Vec::new();
    for r in &collected {
        output.mean_loss += r.loss;
        output.predictions.push(r.pred);
    }
    for mut r in collected {
        if let Some(a) = model.acoustic.as_mut() {
            if let Some(hg) = &r.acoustic_head {
                a.head.accumulate(hg);
            }
            match (&mut a.tail, &r.tail) {
                (AcousticTail::Dnn { fc1, fc2 }, Some(TailGrads::Dnn { fc1: g1, fc2: g2 })) => {
                    fc1.accumulate(g1);
                    fc2.accumulate(g2);
                }
                (AcousticTail::Lstm { cell, fc }, Some(TailGrads::Lstm { cell: cg, fc: fg })) => {
                    cell.accumulate(cg);
                    fc.accumulate(fg);
                }
                (_, None) => {}
                _ => unreachable!("tail grads match tail shape by construction"),
            }
        }
        if let (Some(l), Some(lg)) = (model.linguistic.as_mut(), &r.ling) {
            l.embedding.accumulate(&lg.emb);
            l.cell.accumulate(&lg.cell);
            l.attention.accumulate(&lg.attn);
            l.fc.accumulate(&lg.fc);
            if let Some(hg) = &lg.head {
                l.head.accumulate(hg);
            }
        }
        if let (Some(fu), Some(fg)) = (model.fusion.as_mut(), &r.fusion) {
            fu.gate_a.accumulate(&fg.gate_a);
            fu.gate_l.accumulate(&fg.gate_l);
            fu.head.accumulate(&fg.head);
        }
        if let Some(dp) = r.d_pooled.take() {
            d_pooled_planes.push(dp);
        }
    }

    // Phase 4: batched front backward.
    if let Some((pooled, cache)) = front {
        acoustic_front_backward(model, &pooled, &cache, &d_pooled_planes)?;
    }

    Ok(output)
}

fn assemble_chunks(model: &Model, batch: &[TrainExample]) -> Result<Tensor> {
    let t = model.config.chunk_samples;
    let mut data = Vec::with_capacity(batch.len() * t);
    for e in batch {
        if e.chunk.len() != t {
            return Err(Error::Shape(format!(
                "chunk of {} samples, configured for {t}",
                e.chunk.len()
            )));
        }
        data.extend_from_slice(&e.chunk);
    }
    Tensor::new(vec![batch.len(), t], data)
}

/// conv → BN(train) → LeakyReLU → max pool, batched. Returns the pooled
/// activations `(batch, filters, pooled_frames)` and the backward cache.
fn acoustic_front_forward(model: &mut Model, x: Tensor) -> Result<(Tensor, FrontCache)> {
    let config = model.config.clone();
    let net = model
        .acoustic
        .as_mut()
        .ok_or_else(|| Error::InvalidArgument("model has no acoustic branch".into()))?;
    let conv_out = match &net.front {
        AcousticFront::Sinc(s) => sinc_conv(&x, &s.bank(), net.stride)?,
        AcousticFront::Conv(c) => conv1d(&x, &c.weights.value, net.stride)?,
    };
    let (bn_out, bn_cache) = net.bn.forward(&conv_out, Mode::Train)?;
    let bn_cache = bn_cache.expect("train mode returns a cache");
    let batch = bn_out.shape()[0];
    let frames = bn_out.shape()[2];
    let filters = config.num_filters;
    let pooled_frames = frames / net.pool_width;
    let mut pooled = Tensor::zeros(&[batch, filters, pooled_frames]);
    let mut pool_args = Vec::with_capacity(batch);
    for b in 0..batch {
        let act = leaky_relu(bn_out.plane(b));
        let (vals, args) = max_pool(&act, filters, frames, net.pool_width);
        pooled.plane_mut(b).copy_from_slice(&vals);
        pool_args.push(args);
    }
    Ok((
        pooled,
        FrontCache {
            x,
            bn_cache,
            bn_out,
            pool_args,
            frames,
        },
    ))
}

fn acoustic_front_backward(
    model: &mut Model,
    pooled: &Tensor,
    cache: &FrontCache,
    d_pooled_planes: &[Vec<f64>],
) -> Result<()> {
    let filters = model.config.num_filters;
    let kernel_length = model.config.kernel_length;
    let net = model.acoustic.as_mut().expect("front implies acoustic");
    let batch = pooled.shape()[0];
    assert_eq!(d_pooled_planes.len(), batch);

    let mut d_bn_out = Tensor::zeros(cache.bn_out.shape());
    for b in 0..batch {
        let d_act = max_pool_backward(
            &d_pooled_planes[b],
            &cache.pool_args[b],
            filters,
            cache.frames,
        );
        let d_plane = leaky_relu_backward(cache.bn_out.plane(b), &d_act);
        d_bn_out.plane_mut(b).copy_from_slice(&d_plane);
    }
    let (d_conv_out, d_gamma, d_beta) = net.bn.backward(&cache.bn_cache, &d_bn_out);
    for (g, d) in net.bn.gamma.grad.data_mut().iter_mut().zip(&d_gamma) {
        *g += d;
    }
    for (g, d) in net.bn.beta.grad.data_mut().iter_mut().zip(&d_beta) {
        *g += d;
    }
    let dw = conv1d_weight_grad(&cache.x, &d_conv_out, net.stride, kernel_length)?;
    match &mut net.front {
        AcousticFront::Conv(c) => c.weights.grad.add_assign(&dw),
        AcousticFront::Sinc(s) => {
            let (d_t1, d_t2, _, _) = chain_to_cutoffs(&s.bank(), &dw)?;
            for (g, d) in s.theta1.grad.data_mut().iter_mut().zip(&d_t1) {
                *g += d;
            }
            for (g, d) in s.theta2.grad.data_mut().iter_mut().zip(&d_t2) {
                *g += d;
            }
        }
    }
    Ok(())
}

fn process_example(
    model: &Model,
    batch: &[TrainExample],
    i: usize,
    pooled: Option<&Tensor>,
    loss_scale: f64,
) -> Result<ExampleResult> {
    let example = &batch[i];
    let label = example.label.index();
    match model.config.kind {
        ModelKind::Acoustic => {
            let net = model.acoustic.as_ref().unwrap();
            let plane = pooled.unwrap().plane(i);
            let (feat, tail_cache) = tail_forward(net, model, plane);
            let logits = net.head.forward(&feat);
            let (loss, mut d_logits) = softmax_cross_entropy(&logits, label)?;
            let pred = argmax(&logits);
            d_logits.iter_mut().for_each(|v| *v *= loss_scale);
            let (head_grads, d_feat) = net.head.backward(&feat, &d_logits);
            let (tail_grads, d_pooled) = tail_backward(net, model, &tail_cache, &d_feat);
            Ok(ExampleResult {
                loss: loss * loss_scale,
                pred,
                d_pooled: Some(d_pooled),
                acoustic_head: Some(head_grads),
                tail: Some(tail_grads),
                ling: None,
                fusion: None,
            })
        }
        ModelKind::Linguistic => {
            let net = model.linguistic.as_ref().unwrap();
            let (feat, cache) = ling_forward(net, &example.tokens)?;
            let logits = net.head.forward(&feat);
            let (loss, mut d_logits) = softmax_cross_entropy(&logits, label)?;
            let pred = argmax(&logits);
            d_logits.iter_mut().for_each(|v| *v *= loss_scale);
            let (head_grads, d_feat) = net.head.backward(&feat, &d_logits);
            let mut grads = ling_backward(net, &cache, &d_feat);
            grads.head = Some(head_grads);
            Ok(ExampleResult {
                loss: loss * loss_scale,
                pred,
                d_pooled: None,
                acoustic_head: None,
                tail: None,
                ling: Some(grads),
                fusion: None,
            })
        }
        ModelKind::Fused => {
            let net = model.acoustic.as_ref().unwrap();
            let ling = model.linguistic.as_ref().unwrap();
            let fusion = model.fusion.as_ref().unwrap();
            let plane = pooled.unwrap().plane(i);
            let (a_feat, tail_cache) = tail_forward(net, model, plane);
            let (l_feat, ling_cache) = ling_forward(ling, &example.tokens)?;
            let (logits, fusion_cache) = fusion_logits(fusion, &a_feat, &l_feat);
            let (loss, mut d_logits) = softmax_cross_entropy(&logits, label)?;
            let pred = argmax(&logits);
            d_logits.iter_mut().for_each(|v| *v *= loss_scale);
            let (fusion_grads, d_a_feat, d_l_feat) =
                fusion_backward(fusion, &fusion_cache, &a_feat, &l_feat, &d_logits);
            let (tail_grads, d_pooled) = tail_backward(net, model, &tail_cache, &d_a_feat);
            let ling_grads = ling_backward(ling, &ling_cache, &d_l_feat);
            Ok(ExampleResult {
                loss: loss * loss_scale,
                pred,
                d_pooled: Some(d_pooled),
                acoustic_head: None,
                tail: Some(tail_grads),
                ling: Some(ling_grads),
                fusion: Some(fusion_grads),
            })
        }
    }
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..logits.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

fn tail_forward(net: &AcousticNet, model: &Model, pooled: &[f64]) -> (Vec<f64>, TailCache) {
    match &net.tail {
        AcousticTail::Dnn { fc1, fc2 } => {
            let z1 = fc1.forward(pooled);
            let a1 = leaky_relu(&z1);
            let feat = fc2.forward(&a1);
            (
                feat,
                TailCache::Dnn {
                    x: pooled.to_vec(),
                    z1,
                    a1,
                },
            )
        }
        AcousticTail::Lstm { cell, fc } => {
            let filters = model.config.num_filters;
            let frames = pooled.len() / filters;
            let xs: Vec<Vec<f64>> = (0..frames)
                .map(|t| (0..filters).map(|f| pooled[f * frames + t]).collect())
                .collect();
            let (hs, cache) = cell.forward_seq(&xs).expect("pooled_frames >= 1");
            let h_last = hs.last().unwrap().clone();
            let feat = fc.forward(&h_last);
            (
                feat,
                TailCache::Lstm {
                    cache,
                    h_last,
                    frames,
                },
            )
        }
    }
}

fn tail_backward(
    net: &AcousticNet,
    model: &Model,
    cache: &TailCache,
    d_feat: &[f64],
) -> (TailGrads, Vec<f64>) {
    match (&net.tail, cache) {
        (AcousticTail::Dnn { fc1, fc2 }, TailCache::Dnn { x, z1, a1 }) => {
            let (g2, d_a1) = fc2.backward(a1, d_feat);
            let d_z1 = leaky_relu_backward(z1, &d_a1);
            let (g1, d_x) = fc1.backward(x, &d_z1);
            (TailGrads::Dnn { fc1: g1, fc2: g2 }, d_x)
        }
        (
            AcousticTail::Lstm { cell, fc },
            TailCache::Lstm {
                cache,
                h_last,
                frames,
            },
        ) => {
            let (fc_grads, d_h_last) = fc.backward(h_last, d_feat);
            let mut upstream = vec![vec![0.0; cell.hidden]; *frames];
            *upstream.last_mut().unwrap() = d_h_last;
            let (cell_grads, dxs) = cell.backward_seq(cache, &upstream);
            let filters = model.config.num_filters;
            let mut d_pooled = vec![0.0; filters * frames];
            for (t, dx) in dxs.iter().enumerate() {
                for f in 0..filters {
                    d_pooled[f * frames + t] = dx[f];
                }
            }
            (
                TailGrads::Lstm {
                    cell: cell_grads,
                    fc: fc_grads,
                },
                d_pooled,
            )
        }
        _ => unreachable!("cache matches tail shape"),
    }
}

struct LingCache {
    tokens: Vec<u32>,
    embedded: Vec<Vec<f64>>,
    lstm: LstmCache,
    attn: crate::layers::attention::AttnCache,
    ctx: Vec<f64>,
}

fn ling_forward(net: &LinguisticNet, tokens: &[u32]) -> Result<(Vec<f64>, LingCache)> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if tokens.len() > net.max_seq_len {
        return Err(Error::InvalidArgument(format!(
            "sequence of {} tokens exceeds max_seq_len {}",
            tokens.len(),
            net.max_seq_len
        )));
    }
    let embedded = net.embedding.forward(tokens);
    let (hs, lstm) = net.cell.forward_seq(&embedded)?;
    let (ctx, attn) = net.attention.forward(&hs)?;
    let feat = net.fc.forward(&ctx);
    Ok((
        feat,
        LingCache {
            tokens: tokens.to_vec(),
            embedded,
            lstm,
            attn,
            ctx,
        },
    ))
}

fn ling_backward(net: &LinguisticNet, cache: &LingCache, d_feat: &[f64]) -> LingGrads {
    let (fc_grads, d_ctx) = net.fc.backward(&cache.ctx, d_feat);
    let (attn_grads, d_hs) = net.attention.backward(&cache.attn, &d_ctx);
    let (cell_grads, d_embedded) = net.cell.backward_seq(&cache.lstm, &d_hs);
    let emb_grads = net.embedding.backward(&cache.tokens, &d_embedded);
    let _ = &cache.embedded;
    LingGrads {
        emb: emb_grads,
        cell: cell_grads,
        attn: attn_grads,
        fc: fc_grads,
        head: None,
    }
}

fn fusion_backward(
    fusion: &FusionHead,
    cache: &crate::models::FusionCache,
    a_feat: &[f64],
    l_feat: &[f64],
    d_logits: &[f64],
) -> (FusionGrads, Vec<f64>, Vec<f64>) {
    let (head_grads, dz) = fusion.head.backward(&cache.concat, d_logits);
    let a_dim = a_feat.len();
    let (dza, dzl) = dz.split_at(a_dim);

    // Gated value: z = g (elementwise) x with g = sigmoid(gate(x)).
    let backprop_gate = |gate: &crate::layers::Dense,
                         x: &[f64],
                         g_act: &[f64],
                         dz: &[f64]|
     -> (DenseGrads, Vec<f64>) {
        let d_gate_pre: Vec<f64> = dz
            .iter()
            .zip(x)
            .zip(g_act)
            .map(|((d, xi), g)| d * xi * g * (1.0 - g))
            .collect();
        let (gate_grads, d_x_gate) = gate.backward(x, &d_gate_pre);
        let d_x: Vec<f64> = dz
            .iter()
            .zip(g_act)
            .zip(&d_x_gate)
            .map(|((d, g), extra)| d * g + extra)
            .collect();
        (gate_grads, d_x)
    };
    let (gate_a_grads, d_a) = backprop_gate(&fusion.gate_a, a_feat, &cache.gate_a_act, dza);
    let (gate_l_grads, d_l) = backprop_gate(&fusion.gate_l, l_feat, &cache.gate_l_act, dzl);
    (
        FusionGrads {
            gate_a: gate_a_grads,
            gate_l: gate_l_grads,
            head: head_grads,
        },
        d_a,
        d_l,
    )
}

/// Eval-mode posterior for one example under the model's own kind.
pub fn example_posterior(model: &Model, chunk: &[f64], tokens: &[u32]) -> Result<crate::models::Posterior> {
    match model.config.kind {
        ModelKind::Acoustic => Ok(crate::models::acoustic_forward(model, chunk)?.1),
        ModelKind::Linguistic => Ok(crate::models::linguistic_forward(model, tokens)?.1),
        ModelKind::Fused => crate::models::fused_forward(model, chunk, tokens),
    }
}

/// Eval-mode feature vector reuse for tests: acoustic tail on an
/// externally pooled plane.
#[doc(hidden)]
pub fn tail_features_for_tests(net: &AcousticNet, model: &Model, pooled: &[f64]) -> Vec<f64> {
    acoustic_tail_features(net, &model.config, pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_error};
    use crate::models::{build_model, AcousticVariant, ModelConfig, ModelKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_config(kind: ModelKind, variant: AcousticVariant) -> ModelConfig {
        ModelConfig {
            kind,
            acoustic_variant: variant,
            num_filters: 2,
            kernel_length: 17,
            stride: 8,
            pool_width: 2,
            dnn_hidden: 5,
            acoustic_lstm_hidden: 4,
            acoustic_vec_dim: 6,
            vocab_size: 32,
            embedding_dim: 3,
            linguistic_lstm_hidden: 5,
            attention_key_dim: 3,
            linguistic_vec_dim: 7,
            chunk_samples: 120,
            max_seq_len: 8,
            ..ModelConfig::desk_default()
        }
    }

    /// The mel init parks the first filter exactly on the `|theta|` kink
    /// and the last exactly on the Nyquist clamp; central differences
    /// straddle those corners while the analytic side takes a one-sided
    /// derivative. Move into the smooth region before checking.
    fn nudge_thetas_off_kinks(model: &mut Model) {
        model.visit_params(&mut |name, p| {
            if name.ends_with("sinc.theta1") {
                p.value.data_mut().iter_mut().for_each(|v| *v += 7.5);
            }
            if name.ends_with("sinc.theta2") {
                p.value.data_mut().iter_mut().for_each(|v| *v -= 25.0);
            }
        });
    }

    fn toy_batch(config: &ModelConfig, rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainExample> {
        (0..n)
            .map(|i| TrainExample {
                chunk: (0..config.chunk_samples)
                    .map(|_| rng.gen_range(-0.5..0.5))
                    .collect(),
                tokens: (0..3).map(|_| rng.gen_range(1..30u32)).collect(),
                label: crate::data::ALL_CLASSES[i % 4],
            })
            .collect()
    }

    /// Flattens every parameter, runs the analytic backward once, and
    /// compares against central differences of the mean batch loss.
    fn check_model_gradients(kind: ModelKind, variant: AcousticVariant, seed: u64, tol: f64) {
        let config = toy_config(kind, variant);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = build_model(&config, seed).unwrap();
        nudge_thetas_off_kinks(&mut model);
        let batch = toy_batch(&config, &mut rng, 3);

        model.zero_grads();
        let out = batch_forward_backward(&mut model, &batch).unwrap();
        assert!(out.mean_loss.is_finite());

        let mut names = Vec::new();
        let mut analytic = Vec::new();
        let mut values = Vec::new();
        model.visit_params(&mut |name, p| {
            names.push(name.to_string());
            analytic.extend_from_slice(p.grad.data());
            values.extend_from_slice(p.value.data());
        });

        // Mean loss as a pure function of the flattened parameters. The
        // model is rebuilt from the probe vector each call.
        let template = model.clone();
        let loss_of = |flat: &[f64]| -> f64 {
            let mut probe = template.clone();
            let mut offset = 0;
            probe.visit_params(&mut |_, p| {
                let n = p.value.len();
                p.value
                    .data_mut()
                    .copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            });
            let mut probe_batch = probe.clone();
            batch_forward_backward(&mut probe_batch, &batch)
                .unwrap()
                .mean_loss
        };
        let numeric = central_diff(loss_of, &mut values, 1e-5);
        // Entries below 1e-6 sit at the finite-difference noise floor for
        // this loss scale; compare those absolutely.
        let err = crate::gradcheck::max_rel_error_floored(&analytic, &numeric, 1e-6);
        assert!(err < tol, "{kind:?}/{variant:?}: rel err {err}");
    }

    #[test]
    fn acoustic_dnn_gradients_match_finite_differences() {
        check_model_gradients(ModelKind::Acoustic, AcousticVariant::SincDnn, 1, 1e-4);
    }

    #[test]
    fn acoustic_cnn_gradients_match_finite_differences() {
        check_model_gradients(ModelKind::Acoustic, AcousticVariant::Cnn, 2, 1e-4);
    }

    #[test]
    fn acoustic_lstm_gradients_match_finite_differences() {
        check_model_gradients(ModelKind::Acoustic, AcousticVariant::SincLstm, 3, 1e-4);
    }

    #[test]
    fn linguistic_gradients_match_finite_differences() {
        check_model_gradients(ModelKind::Linguistic, AcousticVariant::SincLstm, 4, 1e-4);
    }

    #[test]
    fn fused_gradients_match_finite_differences() {
        check_model_gradients(ModelKind::Fused, AcousticVariant::SincLstm, 5, 1e-4);
    }

    // End-to-end: the fused loss gradient with respect to the raw sinc
    // cutoff parameters of a 2-filter bank.
    #[test]
    fn fused_loss_cutoff_gradient_matches_finite_differences() {
        let config = toy_config(ModelKind::Fused, AcousticVariant::SincLstm);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = build_model(&config, 9).unwrap();
        nudge_thetas_off_kinks(&mut model);
        let batch = toy_batch(&config, &mut rng, 2);

        model.zero_grads();
        batch_forward_backward(&mut model, &batch).unwrap();
        let (analytic, mut thetas) = {
            let a = model.acoustic.as_ref().unwrap();
            let s = match &a.front {
                crate::models::AcousticFront::Sinc(s) => s,
                _ => unreachable!(),
            };
            let mut g = s.theta1.grad.data().to_vec();
            g.extend_from_slice(s.theta2.grad.data());
            let mut v = s.theta1.value.data().to_vec();
            v.extend_from_slice(s.theta2.value.data());
            (g, v)
        };

        let template = model.clone();
        let numeric = central_diff(
            |t| {
                let mut probe = template.clone();
                {
                    let a = probe.acoustic.as_mut().unwrap();
                    if let crate::models::AcousticFront::Sinc(s) = &mut a.front {
                        s.theta1.value.data_mut().copy_from_slice(&t[0..2]);
                        s.theta2.value.data_mut().copy_from_slice(&t[2..4]);
                    }
                }
                batch_forward_backward(&mut probe, &batch).unwrap().mean_loss
            },
            &mut thetas,
            1e-3,
        );
        let err = max_rel_error(&analytic, &numeric);
        assert!(err < 1e-3, "rel err {err}");
    }
}
