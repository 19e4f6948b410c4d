//! Backbone, detection/search/controller heads, peak extraction and checkpoints.

pub mod checkpoint;
mod detect;
mod frame;
mod model;

pub use detect::{extract_detections, sample_weights, Detection, DEFAULT_DET_THRESHOLD, DEFAULT_MAX_K};
pub use frame::{Frame, DOWNSAMPLE};
pub use model::{Head, HeadOutputs, Model, ModelConfig, HEATMAP_PRIOR_BIAS, SEARCH_CHANNELS};

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::numkernel::Tensor;

    fn noise_frame(w: usize, h: usize, seed: u64) -> Frame {
        let data = (0..3 * w * h).map(|i| ((i as u64 * 2654435761 + seed) % 255) as f64 / 255.0).collect();
        Frame::new(0, Tensor::new(&[3, h, w], data).unwrap()).unwrap()
    }

    fn small_model() -> Model {
        Model::new(ModelConfig { num_classes: 1, backbone_channels: [2, 3, 3, 4], head_hidden: 3 }, 5).unwrap()
    }

    #[test]
    fn backbone_downsamples_by_four() {
        let m = Model::new(ModelConfig::default(), 1).unwrap();
        let f = m.backbone_forward(&noise_frame(128, 128, 3)).unwrap();
        assert_eq!(f.shape(), &[64, 32, 32]);
    }

    #[test]
    fn identical_frames_identical_features() {
        let m = small_model();
        let a = m.backbone_forward(&noise_frame(32, 16, 9)).unwrap();
        let b = m.backbone_forward(&noise_frame(32, 16, 9)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_frame_gives_finite_features() {
        let m = small_model();
        let zero = Frame::new(0, Tensor::zeros(&[3, 16, 16])).unwrap();
        let f = m.backbone_forward(&zero).unwrap();
        assert!(f.all_finite());
    }

    #[test]
    fn frame_dimensions_must_divide_by_four() {
        assert!(Frame::new(0, Tensor::zeros(&[3, 30, 32])).is_err());
        assert!(Frame::new(0, Tensor::zeros(&[1, 32, 32])).is_err());
    }

    #[test]
    fn head_channel_counts() {
        let m = Model::new(ModelConfig::default(), 2).unwrap();
        let out = m.heads_forward(&Tensor::full(&[64, 4, 4], 0.1)).unwrap();
        assert_eq!(out.heatmap.shape(), &[1, 4, 4]);
        assert_eq!(out.size.shape(), &[2, 4, 4]);
        assert_eq!(out.search.shape(), &[16, 4, 4]);
        assert_eq!(out.weights.shape(), &[233, 4, 4]);
        assert!(m.heads_forward(&Tensor::zeros(&[63, 4, 4])).is_err());
    }

    #[test]
    fn heatmap_prior_bias() {
        let m = Model::new(ModelConfig::default(), 2).unwrap();
        let id = m.params().id("heatmap.1.bias").unwrap();
        assert_eq!(m.params().get(id).data(), &[HEATMAP_PRIOR_BIAS]);
    }

    #[test]
    fn checkpoint_roundtrip_rebuilds_model() {
        let m = small_model();
        let bytes = checkpoint::to_bytes(m.params());
        let back = Model::from_params(checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        let f = noise_frame(16, 16, 1);
        assert_eq!(back.infer(&f).unwrap(), m.infer(&f).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn head_shapes_follow_input(w4 in 1usize..6, h4 in 1usize..6, seed in 0u64..1000) {
            let m = small_model();
            let out = m.infer(&noise_frame(4 * w4, 4 * h4, seed)).unwrap();
            prop_assert_eq!(out.heatmap.shape(), &[1, h4, w4]);
            prop_assert_eq!(out.size.shape(), &[2, h4, w4]);
            prop_assert_eq!(out.search.shape(), &[16, h4, w4]);
            prop_assert_eq!(out.weights.shape(), &[233, h4, w4]);
            prop_assert!(out.heatmap.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
