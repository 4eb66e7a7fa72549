use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    conv_backward, conv_forward, relu_backward, relu_forward, Checkpoint, LayerGrads, LayerParams, Tensor,
};
use crate::rng::derive_seed_n;

use super::DetectorConfig;

const SEED_TAG_BACKBONE: u64 = 0x10;
const SEED_TAG_CLS: u64 = 0x20;
const SEED_TAG_REG: u64 = 0x30;

/// All trainable parameters of a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub backbone: Vec<LayerParams>,
    pub cls_head: LayerParams,
    pub reg_head: LayerParams,
}

impl DetectorParams {
    /// Seeded He initialization; the input is a single grayscale channel.
    pub fn init(cfg: &DetectorConfig, seed: u64) -> Result<DetectorParams> {
        cfg.validate()?;
        let mut backbone = Vec::with_capacity(cfg.backbone_widths.len());
        let mut cin = 1;
        for (i, &cout) in cfg.backbone_widths.iter().enumerate() {
            backbone.push(LayerParams::init_he(3, 3, cin, cout, derive_seed_n(seed, &[SEED_TAG_BACKBONE, i as u64]))?);
            cin = cout;
        }
        let cls_head = LayerParams::init_he(1, 1, cin, cfg.cls_channels(), derive_seed_n(seed, &[SEED_TAG_CLS]))?;
        let reg_head = LayerParams::init_he(1, 1, cin, cfg.reg_channels(), derive_seed_n(seed, &[SEED_TAG_REG]))?;
        Ok(DetectorParams {
            backbone,
            cls_head,
            reg_head,
        })
    }

    pub fn guided_channels(&self) -> usize {
        self.backbone.last().map(|l| l.cout()).unwrap_or(0)
    }

    fn layers(&self) -> Vec<(String, &LayerParams)> {
        let mut out: Vec<(String, &LayerParams)> = self
            .backbone
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("backbone.{i}"), l))
            .collect();
        out.push(("cls_head".to_string(), &self.cls_head));
        out.push(("reg_head".to_string(), &self.reg_head));
        out
    }

    pub fn zero_grads(&self) -> DetectorGrads {
        DetectorGrads {
            backbone: self.backbone.iter().map(|l| l.zero_grads()).collect(),
            cls_head: self.cls_head.zero_grads(),
            reg_head: self.reg_head.zero_grads(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, l)| l.kernels.len() + l.biases.len())
            .sum()
    }

    /// Flatten all parameters into one vector (layer order, kernels then
    /// biases). Used by the gradient checker and tests.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, l) in self.layers() {
            out.extend_from_slice(l.kernels.data());
            out.extend_from_slice(l.biases.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "DetectorParams::load_flat",
                format!("{} values", self.num_params()),
                format!("{}", flat.len()),
            ));
        }
        let mut offset = 0;
        let mut layers: Vec<&mut LayerParams> = self.backbone.iter_mut().collect();
        layers.push(&mut self.cls_head);
        layers.push(&mut self.reg_head);
        for l in layers {
            let nk = l.kernels.len();
            l.kernels.data_mut().copy_from_slice(&flat[offset..offset + nk]);
            offset += nk;
            let nb = l.biases.len();
            l.biases.data_mut().copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Serialize config + parameters into a checkpoint.
    pub fn to_checkpoint<M: Serialize>(&self, meta: &M) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new(serde_json::to_value(meta)?);
        for (name, l) in self.layers() {
            ckpt.insert(&format!("{name}.kernels"), &l.kernels);
            ckpt.insert(&format!("{name}.biases"), &l.biases);
        }
        Ok(ckpt)
    }

    /// Rebuild parameters from a checkpoint written by [`to_checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &DetectorConfig) -> Result<DetectorParams> {
        let mut params = DetectorParams::init(cfg, 0)?;
        let load = |name: &str, layer: &mut LayerParams| -> Result<()> {
            let kernels = ckpt.tensor(&format!("{name}.kernels"))?;
            let biases = ckpt.tensor(&format!("{name}.biases"))?;
            if kernels.dims() != layer.kernels.dims() || biases.dims() != layer.biases.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has dims {:?}/{:?}, config expects {:?}/{:?}",
                    kernels.dims(),
                    biases.dims(),
                    layer.kernels.dims(),
                    layer.biases.dims()
                )));
            }
            layer.kernels = kernels;
            layer.biases = biases;
            Ok(())
        };
        for i in 0..params.backbone.len() {
            let name = format!("backbone.{i}");
            let mut layer = params.backbone[i].clone();
            load(&name, &mut layer)?;
            params.backbone[i] = layer;
        }
        let mut cls = params.cls_head.clone();
        load("cls_head", &mut cls)?;
        params.cls_head = cls;
        let mut reg = params.reg_head.clone();
        load("reg_head", &mut reg)?;
        params.reg_head = reg;
        Ok(params)
    }
}

/// Gradients for every detector parameter.
#[derive(Debug, Clone)]
pub struct DetectorGrads {
    pub backbone: Vec<LayerGrads>,
    pub cls_head: LayerGrads,
    pub reg_head: LayerGrads,
}

impl DetectorGrads {
    pub fn add_assign(&mut self, other: &DetectorGrads) -> Result<()> {
        for (a, b) in self.backbone.iter_mut().zip(&other.backbone) {
            a.add_assign(b)?;
        }
        self.cls_head.add_assign(&other.cls_head)?;
        self.reg_head.add_assign(&other.reg_head)
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.backbone {
            g.scale(s);
        }
        self.cls_head.scale(s);
        self.reg_head.scale(s);
    }

    /// Flatten in the same order as [`DetectorParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.backbone {
            out.extend_from_slice(g.kernels.data());
            out.extend_from_slice(g.biases.data());
        }
        for g in [&self.cls_head, &self.reg_head] {
            out.extend_from_slice(g.kernels.data());
            out.extend_from_slice(g.biases.data());
        }
        out
    }
}

/// Activations cached by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to each backbone stage (element 0 is the image).
    stage_inputs: Vec<Tensor>,
    /// Convolution outputs before ReLU, per stage.
    stage_preacts: Vec<Tensor>,
    pub guided: Tensor,
    pub cls_logits: Tensor,
    pub reg_preds: Tensor,
}

/// Run the detector. The image must be `[W, H, 1]` with both spatial dims
/// divisible by the total stride; the guided feature is then
/// `[W/stride, H/stride, C_last]`.
pub fn forward(image: &Tensor, cfg: &DetectorConfig, params: &DetectorParams) -> Result<ForwardPass> {
    if image.dims().len() != 3 || image.dims()[2] != 1 {
        return Err(Error::shape("detector::forward", "[W, H, 1] image", format!("{:?}", image.dims())));
    }
    let (w, h) = (image.dims()[0], image.dims()[1]);
    if w % cfg.total_stride != 0 || h % cfg.total_stride != 0 {
        return Err(Error::shape(
            "detector::forward",
            format!("image dims divisible by stride {}", cfg.total_stride),
            format!("{w}x{h}"),
        ));
    }

    let strides = cfg.stage_strides();
    let mut stage_inputs = Vec::with_capacity(params.backbone.len());
    let mut stage_preacts = Vec::with_capacity(params.backbone.len());
    let mut x = image.clone();
    for (layer, stride) in params.backbone.iter().zip(&strides) {
        let preact = conv_forward(&x, layer, *stride)?;
        let act = relu_forward(&preact);
        stage_inputs.push(x);
        stage_preacts.push(preact);
        x = act;
    }
    let guided = x;
    let cls_logits = conv_forward(&guided, &params.cls_head, 1)?;
    let reg_preds = conv_forward(&guided, &params.reg_head, 1)?;
    Ok(ForwardPass {
        stage_inputs,
        stage_preacts,
        guided,
        cls_logits,
        reg_preds,
    })
}

/// Backpropagate through heads and backbone. `grad_guided_extra` is an
/// optional additional gradient at the guided feature map (the imitation
/// path injects its contribution there).
pub fn backward(
    pass: &ForwardPass,
    cfg: &DetectorConfig,
    params: &DetectorParams,
    grad_cls: &Tensor,
    grad_reg: &Tensor,
    grad_guided_extra: Option<&Tensor>,
) -> Result<DetectorGrads> {
    let (g_guided_cls, cls_grads) = conv_backward(&pass.guided, &params.cls_head, 1, grad_cls)?;
    let (g_guided_reg, reg_grads) = conv_backward(&pass.guided, &params.reg_head, 1, grad_reg)?;

    let mut grad_act = g_guided_cls;
    grad_act.add_assign(&g_guided_reg)?;
    if let Some(extra) = grad_guided_extra {
        grad_act.add_assign(extra)?;
    }

    let strides = cfg.stage_strides();
    let mut backbone_grads: Vec<Option<LayerGrads>> = vec![None; params.backbone.len()];
    for i in (0..params.backbone.len()).rev() {
        let grad_preact = relu_backward(&pass.stage_preacts[i], &grad_act)?;
        let (grad_input, layer_grads) = conv_backward(&pass.stage_inputs[i], &params.backbone[i], strides[i], &grad_preact)?;
        backbone_grads[i] = Some(layer_grads);
        grad_act = grad_input;
    }
    Ok(DetectorGrads {
        backbone: backbone_grads.into_iter().map(|g| g.expect("filled in loop")).collect(),
        cls_head: cls_grads,
        reg_head: reg_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn small_cfg() -> DetectorConfig {
        DetectorConfig {
            backbone_widths: vec![4, 6, 8],
            total_stride: 4,
            num_classes: 2,
            anchor_scales: vec![8.0],
            anchor_ratios: vec![1.0],
            ..Default::default()
        }
    }

    fn random_image(w: usize, h: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_fn(&[w, h, 1], |_| rng.uniform(0.0, 1.0))
    }

    #[test]
    fn forward_shape_contract() {
        let cfg = DetectorConfig::default();
        let params = DetectorParams::init(&cfg, 1).unwrap();
        let mut rng = Rng::new(2);
        let image = random_image(64, 64, &mut rng);
        let pass = forward(&image, &cfg, &params).unwrap();
        assert_eq!(pass.guided.dims(), &[8, 8, 64]);
        assert_eq!(pass.cls_logits.dims(), &[8, 8, cfg.cls_channels()]);
        assert_eq!(pass.reg_preds.dims(), &[8, 8, cfg.reg_channels()]);
    }

    #[test]
    fn forward_rejects_indivisible_dims() {
        let cfg = DetectorConfig::default();
        let params = DetectorParams::init(&cfg, 1).unwrap();
        let image = Tensor::zeros(&[60, 64, 1]);
        assert!(forward(&image, &cfg, &params).is_err());
    }

    #[test]
    fn forward_is_pure() {
        let cfg = small_cfg();
        let params = DetectorParams::init(&cfg, 7).unwrap();
        let mut rng = Rng::new(8);
        let image = random_image(16, 16, &mut rng);
        let a = forward(&image, &cfg, &params).unwrap();
        let b = forward(&image, &cfg, &params).unwrap();
        assert_eq!(a.cls_logits, b.cls_logits);
        assert_eq!(a.reg_preds, b.reg_preds);
        assert_eq!(a.guided, b.guided);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = small_cfg();
        let a = DetectorParams::init(&cfg, 42).unwrap();
        let b = DetectorParams::init(&cfg, 42).unwrap();
        let c = DetectorParams::init(&cfg, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn flatten_load_round_trip() {
        let cfg = small_cfg();
        let params = DetectorParams::init(&cfg, 3).unwrap();
        let flat = params.flatten();
        let mut other = DetectorParams::init(&cfg, 99).unwrap();
        other.load_flat(&flat).unwrap();
        assert_eq!(params, other);
    }

    #[test]
    fn checkpoint_round_trip_preserves_params() {
        let cfg = small_cfg();
        let params = DetectorParams::init(&cfg, 3).unwrap();
        let ckpt = params.to_checkpoint(&cfg).unwrap();
        let loaded = DetectorParams::from_checkpoint(&ckpt, &cfg).unwrap();
        assert_eq!(params, loaded);
    }

    /// Whole-model gradient check against central differences through a
    /// random linear functional of all three outputs.
    #[test]
    fn backward_matches_finite_differences() {
        let cfg = small_cfg();
        let mut params = DetectorParams::init(&cfg, 11).unwrap();
        let mut rng = Rng::new(12);
        let image = random_image(8, 8, &mut rng);
        let pass = forward(&image, &cfg, &params).unwrap();
        let w_cls = Tensor::from_fn(pass.cls_logits.dims(), |_| rng.uniform(-1.0, 1.0));
        let w_reg = Tensor::from_fn(pass.reg_preds.dims(), |_| rng.uniform(-1.0, 1.0));
        let w_guided = Tensor::from_fn(pass.guided.dims(), |_| rng.uniform(-1.0, 1.0));

        let grads = backward(&pass, &cfg, &params, &w_cls, &w_reg, Some(&w_guided)).unwrap();
        let analytic = grads.flatten();
        let theta = params.flatten();

        let loss = |flat: &[f64], p: &mut DetectorParams| -> f64 {
            p.load_flat(flat).unwrap();
            let pass = forward(&image, &cfg, p).unwrap();
            let dot = |t: &Tensor, w: &Tensor| t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
            dot(&pass.cls_logits, &w_cls) + dot(&pass.reg_preds, &w_reg) + dot(&pass.guided, &w_guided)
        };

        let eps = 1e-5;
        let mut check_rng = Rng::new(0);
        let sample = check_rng.sample_indices(theta.len(), 250);
        let mut work = theta.clone();
        for &i in &sample {
            let orig = work[i];
            work[i] = orig + eps;
            let plus = loss(&work, &mut params);
            work[i] = orig - eps;
            let minus = loss(&work, &mut params);
            work[i] = orig;
            let num = (plus - minus) / (2.0 * eps);
            let denom = analytic[i].abs().max(num.abs()).max(1e-6);
            assert!(
                (analytic[i] - num).abs() / denom < 1e-4,
                "param {i}: analytic {} numeric {num}",
                analytic[i]
            );
        }
    }
}
