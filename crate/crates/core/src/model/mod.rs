//! Encoder stacks with interchangeable token-mixing sublayers.

mod checkpoint;
mod config;
mod count;
mod encoder;
mod layout;
mod mixing;
mod params;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, model_from_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointData, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION,
};
pub use config::{HeadKind, MixingKind, ModelConfig, Preset, Variant};
pub use count::{count_params, ParamCount};
pub use encoder::{Bound, EncoderInput, EncoderOutput, Model};
pub use layout::{build_layout, Layout};
pub use mixing::{mix_attention, mix_fourier, mix_linear, mix_random, AttentionParams};
pub use params::{
    param_specs, Decay, DenseIds, EmbedIds, HeadIds, Init, LayerIds, MixIds, NormIds, Param, ParamId, ParamIds,
    ParamSpec, ParamStore, INIT_STD,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check_many, rng_from_seed, Mode, Tape, Tensor, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE};
    use crate::transforms::{dft_naive, fourier_mix_2d, ComplexSequence, DftMethod};
    use rand::Rng as _;

    fn random(dims: &[usize], seed: u64, scale: f64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        Tensor::from_fn(dims, |_| rng.gen_range(-scale..scale))
    }

    fn small(n: usize, d: usize, layers: usize, variant: Variant) -> ModelConfig {
        let mut cfg = ModelConfig::small(n, d, layers, variant);
        cfg.vocab_size = 24;
        cfg.ff_dim = 2 * d;
        cfg.dropout_rate = 0.0;
        cfg
    }

    fn ids(n: usize, seed: u64) -> EncoderInput {
        let mut rng = rng_from_seed(seed);
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(4..24)).collect();
        EncoderInput::single(&ids).unwrap()
    }

    /// Re-draws every tensor uniformly so gradients are not vanishingly small.
    fn roughen(model: &mut Model, seed: u64) {
        let ids: Vec<ParamId> = model.params().iter().map(|(id, _)| id).collect();
        for id in ids {
            let dims = model.params().value(id).dims().to_vec();
            *model.params_mut().value_mut(id) = random(&dims, seed + id.index() as u64, 0.5);
        }
    }

    fn attention_params(d: usize, seed: u64) -> AttentionParams {
        let p = |s| (random(&[d, d], seed + s, 0.5), random(&[d], seed + 10 + s, 0.1));
        AttentionParams {
            query: p(0),
            key: p(1),
            value: p(2),
            output: p(3),
        }
    }

    #[test]
    fn zero_tables_embed_to_beta() {
        let mut model = Model::new(small(8, 16, 0, Variant::FnetFft)).unwrap();
        let e = model.ids().embed;
        for id in [e.word, e.position.unwrap(), e.token_type] {
            let dims = model.params().value(id).dims().to_vec();
            *model.params_mut().value_mut(id) = Tensor::zeros(&dims);
        }
        let beta = random(&[16], 3, 1.0);
        *model.params_mut().value_mut(e.norm.beta) = beta.clone();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let x = model
            .embed(&mut tape, &b, &ids(8, 1), Mode::Eval, &mut rng_from_seed(0))
            .unwrap();
        for row in tape.value(x).data().chunks(16) {
            assert_eq!(row, beta.data());
        }
    }

    #[test]
    fn position_embeddings_distinguish_repeats() {
        for positions in [true, false] {
            let mut cfg = small(4, 16, 0, Variant::Bert);
            cfg.use_position_embeddings = positions;
            let model = Model::new(cfg).unwrap();
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let input = EncoderInput::single(&[7, 5, 7]).unwrap();
            let x = model
                .embed(&mut tape, &b, &input, Mode::Eval, &mut rng_from_seed(0))
                .unwrap();
            let x = tape.value(x).clone().reshape(&[3, 16]).unwrap();
            assert_eq!(x.row(0) == x.row(2), !positions);
        }
    }

    #[test]
    fn embedding_ids_are_checked() {
        let model = Model::new(small(4, 16, 1, Variant::FnetFft)).unwrap();
        assert!(matches!(
            model.encode(&EncoderInput::single(&[1, 2, 3, 99]).unwrap()),
            Err(crate::Error::IdOutOfRange { id: 99, .. })
        ));
        let bad_type = EncoderInput::new(vec![1; 4], vec![0, 0, 2, 0], 1, 4).unwrap();
        assert!(model.encode(&bad_type).is_err());
        assert!(model.encode(&EncoderInput::single(&[1, 2]).unwrap()).is_err());
    }

    #[test]
    fn embedding_gradients() {
        let mut model = Model::new(small(4, 8, 0, Variant::FnetFft)).unwrap();
        roughen(&mut model, 11);
        let input = ids(4, 2);
        let e = model.ids().embed;
        let tables = [e.word, e.position.unwrap(), e.token_type];
        let inputs: Vec<Tensor> = tables.iter().map(|&id| model.params().value(id).clone()).collect();
        let w = random(&[1, 4, 8], 5, 1.0);
        let err = grad_check_many(
            |tape, vars| {
                let mut all = model.bind(tape).vars().to_vec();
                for (slot, &id) in tables.iter().enumerate() {
                    all[id.index()] = vars[slot];
                }
                let b = Bound::from_vars(all);
                let x = model.embed(tape, &b, &input, Mode::Eval, &mut rng_from_seed(0))?;
                let wv = tape.constant(w.clone());
                let p = tape.mul(x, wv)?;
                tape.sum(p)
            },
            &inputs,
            GRAD_CHECK_STEP,
        )
        .unwrap();
        assert!(err < GRAD_CHECK_TOLERANCE, "{err}");
    }

    #[test]
    fn fourier_methods_agree() {
        let x = random(&[12, 10], 1, 1.0);
        let fft = mix_fourier(&random(&[16, 8], 2, 1.0), DftMethod::Fft).unwrap();
        let mat = mix_fourier(&random(&[16, 8], 2, 1.0), DftMethod::Matrix).unwrap();
        assert!(fft.max_abs_diff(&mat) < 1e-10);
        assert!(mix_fourier(&x, DftMethod::Fft).is_err());
        assert_eq!(mix_fourier(&x, DftMethod::Matrix).unwrap().dims(), &[12, 10]);
    }

    #[test]
    fn attention_single_token_is_value_then_output() {
        let p = attention_params(8, 4);
        let x = random(&[1, 8], 9, 1.0);
        let dense = |x: &Tensor, (k, b): &(Tensor, Tensor)| {
            let mut y = crate::numerics::matmul(x, k).unwrap();
            for (v, bb) in y.data_mut().iter_mut().zip(b.data()) {
                *v += bb;
            }
            y
        };
        let want = dense(&dense(&x, &p.value), &p.output);
        for heads in [1, 2, 4] {
            let got = mix_attention(&x, &p, heads).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn attention_equal_rows_average_values() {
        let p = attention_params(8, 6);
        let row = random(&[1, 8], 2, 1.0);
        let x = Tensor::from_fn(&[5, 8], |i| row.data()[i % 8]);
        let y = mix_attention(&x, &p, 2).unwrap();
        for r in 1..5 {
            assert!(y.row(r).iter().zip(y.row(0)).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert!(mix_attention(&x, &p, 3).is_err());
    }

    #[test]
    fn linear_mixing_examples() {
        let x = random(&[6, 4], 3, 1.0);
        let y = mix_linear(&x, &Tensor::identity(6), &Tensor::identity(4)).unwrap();
        assert_eq!(y, x);
        // Real part of the sequence DFT matrix alone drops the imaginary cross terms.
        let re = Tensor::from_fn(&[6, 6], |i| {
            let mut e = vec![0.0; 6];
            e[i % 6] = 1.0;
            dft_naive(&ComplexSequence::from_real(&e).unwrap()).re()[i / 6]
        });
        let lin = mix_linear(&x, &re, &Tensor::identity(4)).unwrap();
        let four = fourier_mix_2d(&x, DftMethod::Matrix).unwrap();
        assert!(lin.max_abs_diff(&four) > 1e-3);
        let w_hid = random(&[4, 4], 8, 1.0);
        let w_seq = random(&[6, 6], 9, 1.0);
        let got = mix_linear(&x, &w_seq, &w_hid).unwrap();
        let want = crate::numerics::matmul(
            &crate::numerics::matmul(&w_seq, &x).unwrap(),
            &w_hid.transpose2().unwrap(),
        )
        .unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn layer_gradients_per_kind() {
        let (n, d) = (4, 8);
        for kind in MixingKind::ALL {
            let mut cfg = small(n, d, 1, Variant::FnetFft);
            cfg.mixing_plan = vec![kind];
            cfg.num_heads = 2;
            let mut model = Model::new(cfg).unwrap();
            roughen(&mut model, 3);
            let x = random(&[1, n, d], 4, 1.0);
            let w = random(&[1, n, d], 5, 1.0);
            let mut inputs: Vec<Tensor> = model.params().iter().map(|(_, p)| p.value.clone()).collect();
            inputs.push(x);
            let err = grad_check_many(
                |tape, vars| {
                    let (params, x) = vars.split_at(vars.len() - 1);
                    let b = Bound::from_vars(params.to_vec());
                    let y = model.layer(tape, &b, 0, x[0], Mode::Eval, &mut rng_from_seed(0))?;
                    let wv = tape.constant(w.clone());
                    let p = tape.mul(y, wv)?;
                    tape.sum(p)
                },
                &inputs,
                GRAD_CHECK_STEP,
            )
            .unwrap();
            assert!(err < GRAD_CHECK_TOLERANCE, "{kind}: {err}");
        }
    }

    #[test]
    fn full_fnet_gradcheck() {
        let mut cfg = small(8, 16, 2, Variant::FnetFft);
        cfg.vocab_size = 12;
        cfg.ff_dim = 16;
        let mut model = Model::new(cfg).unwrap();
        roughen(&mut model, 21);
        let input = EncoderInput::new((0..16).map(|i| i % 12).collect(), vec![0; 16], 2, 8).unwrap();
        let inputs: Vec<Tensor> = model.params().iter().map(|(_, p)| p.value.clone()).collect();
        let err = grad_check_many(
            |tape, vars| {
                let b = Bound::from_vars(vars.to_vec());
                let out = model.forward(tape, &b, &input, Mode::Eval, &mut rng_from_seed(0))?;
                let (mlm, nsp) = model.pretrain_heads(tape, &b, out, &[1, 5, 12])?;
                let a = tape.cross_entropy(mlm, &[3, 7, 0])?;
                let c = tape.cross_entropy(nsp, &[1, 0])?;
                tape.add(a, c)
            },
            &inputs,
            GRAD_CHECK_STEP,
        )
        .unwrap();
        assert!(err < GRAD_CHECK_TOLERANCE, "{err}");
    }

    #[test]
    fn blocks_preserve_dims() {
        for variant in Variant::ALL {
            let model = Model::new(small(8, 16, 2, variant)).unwrap();
            let (seq, pooled) = model.encode(&ids(8, 3)).unwrap();
            assert_eq!(seq.dims(), &[1, 8, 16], "{variant}");
            assert_eq!(pooled.dims(), &[1, 16]);
        }
    }

    #[test]
    fn mixing_is_linear_except_attention() {
        let (n, d) = (8, 16);
        for kind in MixingKind::ALL {
            if kind == MixingKind::Identity {
                continue;
            }
            let mut cfg = small(n, d, 1, Variant::FnetFft);
            cfg.mixing_plan = vec![kind];
            let mut model = Model::new(cfg).unwrap();
            roughen(&mut model, 1);
            let mix = |x: &Tensor| {
                let mut tape = Tape::new();
                let b = model.bind(&mut tape);
                let xv = tape.constant(x.clone());
                let y = model
                    .mix(&mut tape, &b, 0, xv, Mode::Eval, &mut rng_from_seed(0))
                    .unwrap();
                tape.value(y).clone()
            };
            let (x, y) = (random(&[1, n, d], 2, 1.0), random(&[1, n, d], 3, 1.0));
            let (a, c) = (1.7, -0.4);
            let combo = Tensor::from_fn(&[1, n, d], |i| a * x.data()[i] + c * y.data()[i]);
            let (mx, my) = (mix(&x), mix(&y));
            let want = Tensor::from_fn(&[1, n, d], |i| a * mx.data()[i] + c * my.data()[i]);
            let gap = mix(&combo).max_abs_diff(&want);
            if kind == MixingKind::Attention {
                assert!(gap > 1e-3, "attention looked linear");
            } else {
                assert!(gap < 1e-9, "{kind}: {gap}");
            }
        }
    }

    #[test]
    fn token_mixing_sensitivity() {
        let n = 8;
        for (variant, mixes) in [
            (Variant::FfOnly, false),
            (Variant::FnetFft, true),
            (Variant::Bert, true),
        ] {
            let model = Model::new(small(n, 16, 2, variant)).unwrap();
            let base = ids(n, 4);
            let (y0, _) = model.encode(&base).unwrap();
            let mut perturbed = base.clone();
            perturbed.ids[5] = if base.ids[5] == 4 { 5 } else { 4 };
            let (y1, _) = model.encode(&perturbed).unwrap();
            for i in 0..n {
                let moved = y0.data()[i * 16..][..16] != y1.data()[i * 16..][..16];
                if i == 5 {
                    assert!(moved);
                } else {
                    assert_eq!(moved, mixes, "{variant} token {i}");
                }
            }
        }
    }

    #[test]
    fn zero_layers_pool_the_embedding() {
        let model = Model::new(small(8, 16, 0, Variant::FnetFft)).unwrap();
        let input = ids(8, 6);
        let (_, pooled) = model.encode(&input).unwrap();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let e = model
            .embed(&mut tape, &b, &input, Mode::Eval, &mut rng_from_seed(0))
            .unwrap();
        let first = tape.value(e).clone().reshape(&[8, 16]).unwrap();
        let first = Tensor::new(vec![1, 16], first.row(0).to_vec()).unwrap();
        let p = model.ids().pooler;
        let mut want = crate::numerics::matmul(&first, model.params().value(p.kernel)).unwrap();
        for (v, bb) in want
            .data_mut()
            .iter_mut()
            .zip(model.params().value(p.bias.unwrap()).data())
        {
            *v = (*v + bb).tanh();
        }
        assert!(pooled.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn tied_decoder_follows_word_table() {
        let cfg = small(8, 16, 1, Variant::FnetFft);
        let mut model = Model::new(cfg).unwrap();
        let logits = |m: &Model| {
            let mut tape = Tape::new();
            let b = m.bind(&mut tape);
            let input = EncoderInput::single(&[1, 4, 5, 6, 7, 8, 9, 10]).unwrap();
            let out = m
                .forward(&mut tape, &b, &input, Mode::Eval, &mut rng_from_seed(0))
                .unwrap();
            let (mlm, _) = m.pretrain_heads(&mut tape, &b, out, &[2, 3]).unwrap();
            tape.value(mlm).clone()
        };
        let before = logits(&model);
        assert_eq!(before.dims(), &[2, 24]);
        let word = model.ids().embed.word;
        model.params_mut().value_mut(word).data_mut()[17 * 16] += 0.5;
        let after = logits(&model);
        for r in 0..2 {
            for c in 0..24 {
                let changed = before.at(r, c) != after.at(r, c);
                assert_eq!(changed, c == 17, "row {r} col {c}");
            }
        }
    }

    #[test]
    fn fft_mixing_needs_power_of_two_sizes() {
        let cfg = small(12, 16, 1, Variant::FnetFft);
        assert!(matches!(Model::new(cfg), Err(crate::Error::UnsupportedLength { .. })));
        Model::new(small(12, 16, 1, Variant::FnetMatrix)).unwrap();
    }

    #[test]
    fn random_matrices_depend_only_on_seed() {
        let a = Model::new(small(8, 16, 2, Variant::Random)).unwrap();
        let b = Model::new(small(8, 16, 2, Variant::Random)).unwrap();
        assert_eq!(
            a.params().by_name("layer1.mixing.seq"),
            b.params().by_name("layer1.mixing.seq")
        );
    }
}
