use super::blocks::{image_constant, HeadVars};
use super::layers::{Linear, ParamBuilder};
use super::{
    Backbone, EvaluatorConfig, EvaluatorError, HeadMode, PredictionHead, ScaleSwinBlock, TransposedAttention,
    WEIGHT_EPS,
};
use crate::dissim::MultiChannelInput;
use crate::numerics::{Bound, ParamStore, Real, Tape, Var};

/// Channel-major features of one image: `channels × (height·width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub patch_scores: Vec<f64>,
    pub patch_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    tabs: Vec<TransposedAttention>,
    reduce: Linear,
    swin: ScaleSwinBlock,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    backbone: Backbone,
    stages: Vec<Stage>,
    head: PredictionHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluator<R> {
    cfg: EvaluatorConfig,
    params: ParamStore<R>,
    layout: Layout,
}

impl<R: Real> Evaluator<R> {
    pub fn new(cfg: EvaluatorConfig, seed: u64) -> Result<Self, EvaluatorError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut b = ParamBuilder::new(&mut params, seed);
        let backbone = Backbone::new(&mut b, &cfg.backbone)?;
        let g = cfg.backbone.grid();
        let n = g * g;
        let mut in_c = cfg.backbone.feature_channels();
        let mut stages = Vec::with_capacity(cfg.stage_dims.len());
        for (si, &dim) in cfg.stage_dims.iter().enumerate() {
            let tabs = (0..cfg.tab_blocks)
                .map(|k| TransposedAttention::new(&mut b, &format!("stage{si}.tab{k}"), n, cfg.attention_scale))
                .collect();
            let reduce = b.linear(&format!("stage{si}.reduce"), dim, in_c, true);
            let swin =
                ScaleSwinBlock::new(&mut b, &format!("stage{si}.swin"), dim, (g, g), &cfg.swin, cfg.residual_scale)?;
            stages.push(Stage { tabs, reduce, swin });
            in_c = dim;
        }
        let head = PredictionHead::new(&mut b, "head", in_c, cfg.head_hidden, cfg.head_mode);
        Ok(Self { cfg, params, layout: Layout { backbone, stages, head } })
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    pub fn cast<S: Real>(&self) -> Evaluator<S> {
        Evaluator { cfg: self.cfg.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    pub fn image_var(&self, tape: &mut Tape<R>, chw: &[f32]) -> Result<Var, EvaluatorError> {
        image_constant(tape, chw, self.cfg.backbone.in_channels, self.cfg.backbone.image_size)
    }

    /// Tapped backbone features `(C̃, N)`.
    pub fn features(&self, tape: &mut Tape<R>, p: &Bound, image: Var) -> Result<Var, EvaluatorError> {
        Ok(self.layout.backbone.forward(tape, p, image)?)
    }

    pub fn forward(&self, tape: &mut Tape<R>, p: &Bound, image: Var) -> Result<HeadVars, EvaluatorError> {
        let mut f = self.features(tape, p, image)?;
        for stage in &self.layout.stages {
            for tab in &stage.tabs {
                f = tab.forward(tape, p, f)?;
            }
            // 1×1 convolution over channels, written as a linear map on tokens.
            let tokens = tape.transpose(f)?;
            let reduced = stage.reduce.apply(tape, p, tokens)?;
            f = tape.transpose(reduced)?;
            f = stage.swin.forward(tape, p, f)?;
        }
        self.layout.head.forward(tape, p, f)
    }

    fn check_input(&self, input: &MultiChannelInput) -> Result<(), EvaluatorError> {
        let s = self.cfg.backbone.image_size;
        if input.size() != (s, s) || self.cfg.backbone.in_channels != 3 {
            return Err(EvaluatorError::ShapeMismatch(format!("input {:?}, model expects 3x{s}x{s}", input.size())));
        }
        Ok(())
    }

    pub fn predict(&self, input: &MultiChannelInput) -> Result<Prediction, EvaluatorError> {
        self.check_input(input)?;
        self.predict_chw(&input.to_chw())
    }

    pub fn predict_chw(&self, chw: &[f32]) -> Result<Prediction, EvaluatorError> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let x = self.image_var(&mut tape, chw)?;
        let out = self.forward(&mut tape, &p, x)?;
        Ok(Prediction {
            score: tape.value(out.score).item().as_f64(),
            patch_scores: tape.value(out.patch_scores).to_f64_vec(),
            patch_weights: tape.value(out.patch_weights).to_f64_vec(),
        })
    }
}

/// Backbone features for each input; items are processed independently.
pub fn vit_features<R: Real>(
    model: &Evaluator<R>,
    inputs: &[MultiChannelInput],
) -> Result<Vec<FeatureTensor>, EvaluatorError> {
    let g = model.cfg.backbone.grid();
    inputs
        .iter()
        .map(|input| {
            model.check_input(input)?;
            let mut tape = Tape::inference();
            let p = model.params.bind(&mut tape);
            let x = model.image_var(&mut tape, &input.to_chw())?;
            let f = model.features(&mut tape, &p, x)?;
            let value = tape.value(f);
            Ok(FeatureTensor { channels: value.shape()[0], height: g, width: g, data: value.to_f64_vec() })
        })
        .collect()
}

/// Patch-weighted aggregation of hand-supplied scores and weights.
pub fn aggregate_scores(scores: &[f64], weights: &[f64], mode: HeadMode) -> Result<f64, EvaluatorError> {
    if scores.len() != weights.len() || scores.is_empty() {
        return Err(EvaluatorError::ShapeMismatch(format!("{} scores, {} weights", scores.len(), weights.len())));
    }
    let total: f64 = scores.iter().zip(weights).map(|(s, w)| s * w).sum();
    match mode {
        HeadMode::Literal => Ok(total),
        HeadMode::Normalized => {
            let wsum: f64 = weights.iter().sum();
            if wsum < WEIGHT_EPS {
                return Err(EvaluatorError::AllZeroWeights(wsum));
            }
            Ok(total / wsum)
        }
    }
}
