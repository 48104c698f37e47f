use proptest::prelude::*;

use nwf_core::codec::{compress, decompress, CompressOptions, CONTAINER_VERSION};
use nwf_core::coder::{build_table, RansDecoder, RansEncoder};
use nwf_core::dataio::{decode_pnm, encode_pnm, rgb_to_ycbcr, ycbcr_to_rgb};
use nwf_core::flow::round_nearest;
use nwf_core::numerics::Adamax;
use nwf_core::prior::{HighpassKind, Priors};
use nwf_core::{
    ColorSpace, ContainerHeader, FlowConfig, ImageU8, Init, Model, Scheme, Tensor, WaveletFlow,
};

fn model(channels: usize, init: Init) -> Model {
    let cfg = FlowConfig {
        hidden: 8,
        n_hidden: 1,
        ..FlowConfig::new(Scheme::Quadrant, channels)
    };
    let priors =
        Priors::learnable(HighpassKind::Logistic, Scheme::Quadrant, channels, 3, 8, 1).unwrap();
    Model::new(WaveletFlow::new(cfg, init).unwrap(), priors).unwrap()
}

fn image(max_log: u32) -> impl Strategy<Value = ImageU8> {
    (
        1..=max_log,
        1..=max_log,
        prop_oneof![Just(1usize), Just(3usize)],
    )
        .prop_flat_map(|(lw, lh, c)| {
            let (w, h) = (1usize << lw, 1usize << lh);
            proptest::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |data| ImageU8::new(w, h, c, data).unwrap())
        })
}

fn pmf() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, 1..600).prop_map(|v| {
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter().map(|p| p / total).collect()
        } else {
            vec![1.0 / v.len() as f64; v.len()]
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codec_is_the_identity(img in image(4), seed in 0u64..4) {
        let m = model(img.channels, Init::Random { seed, scale: 0.05 });
        let bytes = compress(&img, &m, CompressOptions::default()).unwrap();
        prop_assert_eq!(decompress(&bytes, &m).unwrap(), img);
    }

    #[test]
    fn legall_codec_is_the_identity(img in image(5)) {
        let m = model(img.channels, Init::LeGall { seed: 0 });
        let bytes = compress(&img, &m, CompressOptions::default()).unwrap();
        prop_assert_eq!(decompress(&bytes, &m).unwrap(), img);
    }

    #[test]
    fn forward_preserves_element_count(img in image(5)) {
        let m = model(img.channels, Init::LeGall { seed: 0 });
        let pyr = m.flow.forward(&img.to_tensor()).unwrap();
        prop_assert_eq!(pyr.element_count(), img.dims());
        prop_assert_eq!(m.flow.inverse(&pyr).unwrap(), img.to_tensor());
    }

    #[test]
    fn frequency_tables_are_normalized(p in pmf(), lo in -1000i64..1000, bits in 14u32..=16) {
        prop_assume!(p.len() <= 1 << (bits - 1));
        let t = build_table(&p, lo, bits).unwrap();
        prop_assert_eq!(t.freqs.iter().map(|&f| f as u64).sum::<u64>(), 1u64 << bits);
        prop_assert!(t.freqs.iter().all(|&f| f >= 1));
        prop_assert_eq!(t.cum[0], 0);
        for (i, &f) in t.freqs.iter().enumerate() {
            prop_assert_eq!(t.cum[i + 1] - t.cum[i], f);
        }
    }

    #[test]
    fn rans_round_trips(p in pmf(), picks in proptest::collection::vec(any::<prop::sample::Index>(), 0..2000)) {
        let t = build_table(&p, -7, 14).unwrap();
        let symbols: Vec<i64> = picks.iter().map(|i| t.lo + i.index(t.len()) as i64).collect();
        let mut enc = RansEncoder::new();
        for &s in symbols.iter().rev() {
            enc.encode(s, &t).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RansDecoder::new(&bytes).unwrap();
        for &s in &symbols {
            prop_assert_eq!(dec.decode(&t).unwrap(), s);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn pnm_round_trips(img in image(6)) {
        prop_assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
    }

    #[test]
    fn ycbcr_round_trip_within_two(data in proptest::collection::vec(any::<u8>(), 3 * 64)) {
        let img = ImageU8::new(8, 8, 3, data).unwrap();
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
        let worst = img.data.iter().zip(&back.data).map(|(&a, &b)| a.abs_diff(b)).max().unwrap();
        prop_assert!(worst <= 2);
    }

    #[test]
    fn container_header_round_trips(
        w in 1u16.., h in 1u16.., c in prop_oneof![Just(1u8), Just(3u8)],
        ycc in any::<bool>(), hash in any::<u64>(), len in any::<u32>(),
        bounds in proptest::collection::vec((-40000i64..40000, 0i64..70000), 1..17),
    ) {
        // One bound pair for the final block plus one per level.
        let iterations = (bounds.len() - 1) as u8;
        let header = ContainerHeader {
            version: CONTAINER_VERSION,
            width: w,
            height: h,
            channels: c,
            colorspace: if ycc { ColorSpace::YCbCr } else { ColorSpace::Rgb },
            scheme: Scheme::Quadrant,
            iterations,
            model_hash: hash,
            payload_len: len,
            bounds: bounds.iter().map(|&(lo, span)| (lo, lo + span)).collect(),
        };
        let mut bytes = Vec::new();
        header.write(&mut bytes);
        let (back, used) = ContainerHeader::read(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, header);
    }

    #[test]
    fn model_file_round_trips(seed in any::<u64>(), c in prop_oneof![Just(1usize), Just(3usize)]) {
        let m = model(c, Init::Random { seed, scale: 0.5 });
        let back = Model::from_bytes(&m.to_bytes()).unwrap();
        prop_assert_eq!(back.hash(), m.hash());
        prop_assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn round_nearest_is_floor_plus_half(x in -1.0e6f64..1.0e6) {
        prop_assert_eq!(round_nearest(x), (x + 0.5).floor() as i64);
    }

    #[test]
    fn adamax_inf_norm_never_shrinks_under_constant_gradients(g in proptest::collection::vec(-5.0f32..5.0, 1..16), steps in 1usize..30) {
        let mut p = Tensor::zeros(&[g.len()]);
        let grad = Tensor::new(vec![g.len()], g.clone()).unwrap();
        let mut opt = Adamax::new(1e-3, 1.0, &[g.len()]);
        let mut prev = vec![0.0f32; g.len()];
        for _ in 0..steps {
            opt.step(&mut [&mut p], std::slice::from_ref(&grad), 0).unwrap();
            for (u, q) in opt.u[0].iter().zip(&prev) {
                prop_assert!(*u >= 0.0 && u >= q);
            }
            prev = opt.u[0].clone();
        }
    }
}
