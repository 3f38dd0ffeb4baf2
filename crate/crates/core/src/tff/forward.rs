use super::{TffError, TffParams};
use crate::datamodel::FeatureBag;
use crate::numcore::{
    feed_forward, layer_norm, linear, multi_head_attention, AttentionWeights, FeedForwardWeights, LayerNormWeights,
    LinearWeights, Tape, Tensor, Var,
};

/// Parameters registered on one tape, in [`TffParams`] order.
pub struct BoundParams<'t> {
    params: &'t TffParams,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn bind(tape: &'t Tape, params: &'t TffParams) -> Self {
        let vars = params.tensors().iter().map(|t| tape.param(t.clone())).collect();
        Self { params, vars }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn params(&self) -> &'t TffParams {
        self.params
    }

    fn var(&self, name: &str) -> Var<'t> {
        self.vars[self.params.position(name)]
    }

    fn linear(&self, prefix: &str) -> LinearWeights<'t> {
        LinearWeights {
            weight: self.var(&format!("{prefix}.weight")),
            bias: self.var(&format!("{prefix}.bias")),
        }
    }

    fn norm(&self, prefix: &str) -> LayerNormWeights<'t> {
        LayerNormWeights {
            gain: self.var(&format!("{prefix}.gain")),
            shift: self.var(&format!("{prefix}.shift")),
        }
    }

    fn attention(&self, prefix: &str) -> AttentionWeights<'t> {
        AttentionWeights {
            query: self.linear(&format!("{prefix}.q")),
            key: self.linear(&format!("{prefix}.k")),
            value: self.linear(&format!("{prefix}.v")),
            output: self.linear(&format!("{prefix}.o")),
            n_heads: self.params.config().n_heads,
        }
    }

    fn feed_forward(&self, prefix: &str) -> FeedForwardWeights<'t> {
        FeedForwardWeights {
            up: self.linear(&format!("{prefix}.up")),
            down: self.linear(&format!("{prefix}.down")),
        }
    }

    /// Pre-norm self-attention + feed-forward block.
    fn encoder_block(&self, prefix: &str, x: Var<'t>) -> Result<Var<'t>, TffError> {
        let n1 = layer_norm(x, &self.norm(&format!("{prefix}.ln1")))?;
        let h = x.add(multi_head_attention(n1, n1, n1, &self.attention(&format!("{prefix}.attn")))?)?;
        let n2 = layer_norm(h, &self.norm(&format!("{prefix}.ln2")))?;
        Ok(h.add(feed_forward(n2, &self.feed_forward(&format!("{prefix}.ff")))?)?)
    }
}

/// Tape handles for the intermediate results of one forward pass.
#[derive(Clone, Copy)]
pub struct ForwardVars<'t> {
    /// `1×1` risk score.
    pub y: Var<'t>,
    /// Projected text tokens, one row per input token.
    pub t_proj: Var<'t>,
    /// Text tokens after the text encoder stack.
    pub t_refined: Var<'t>,
    /// Cross-attention output, one row per text token.
    pub fused: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub y: f64,
    pub t_proj: Tensor,
    pub t_refined: Tensor,
    pub fused: Tensor,
}

fn check_width(bag: &'static str, found: usize, expected: usize) -> Result<(), TffError> {
    if found != expected {
        return Err(TffError::WidthMismatch { bag, expected, found });
    }
    Ok(())
}

/// Full forward pass on an existing tape. `text` is `tokens×d_text_in`,
/// `patches` is `n×d_patch_in`.
pub fn forward_on_tape<'t>(
    bound: &BoundParams<'t>,
    text: Var<'t>,
    patches: Var<'t>,
) -> Result<ForwardVars<'t>, TffError> {
    let cfg = bound.params.config();
    check_width("text", text.shape().1, cfg.d_text_in)?;
    check_width("patch", patches.shape().1, cfg.d_patch_in)?;

    let t_proj = linear(text, &bound.linear("text_proj"))?;
    let mut t_refined = t_proj;
    for b in 0..cfg.n_qformer_blocks {
        t_refined = bound.encoder_block(&format!("qformer.{b}"), t_refined)?;
    }

    let mut x = linear(patches, &bound.linear("patch_proj"))?;
    for b in 0..cfg.n_self_blocks {
        x = bound.encoder_block(&format!("self.{b}"), x)?;
    }

    let q = layer_norm(t_refined, &bound.norm("cross.ln_q"))?;
    let kv = layer_norm(x, &bound.norm("cross.ln_kv"))?;
    let h = t_refined.add(multi_head_attention(q, kv, kv, &bound.attention("cross.attn"))?)?;
    let n2 = layer_norm(h, &bound.norm("cross.ln2"))?;
    let fused = h.add(feed_forward(n2, &bound.feed_forward("cross.ff"))?)?;

    let y = linear(fused.mean_rows()?, &bound.linear("head"))?;
    Ok(ForwardVars {
        y,
        t_proj,
        t_refined,
        fused,
    })
}

/// Forward pass on feature bags, returning plain values.
pub fn forward(params: &TffParams, text: &FeatureBag, patches: &FeatureBag) -> Result<ForwardOutput, TffError> {
    if text.n() == 0 {
        return Err(TffError::EmptyBag("text"));
    }
    if patches.n() == 0 {
        return Err(TffError::EmptyBag("patch"));
    }
    forward_tensors(params, text.matrix(), patches.matrix())
}

pub(crate) fn forward_tensors(params: &TffParams, text: &Tensor, patches: &Tensor) -> Result<ForwardOutput, TffError> {
    let tape = Tape::new();
    let bound = BoundParams::bind(&tape, params);
    let out = forward_on_tape(&bound, tape.constant(text.clone()), tape.constant(patches.clone()))?;
    Ok(ForwardOutput {
        y: out.y.item(),
        t_proj: (*out.t_proj.value()).clone(),
        t_refined: (*out.t_refined.value()).clone(),
        fused: (*out.fused.value()).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::max_relative_error;
    use crate::tff::{init_params, TffConfig};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(seed: u64) -> TffConfig {
        TffConfig {
            d_text_in: 6,
            d_patch_in: 5,
            d_model: 8,
            n_heads: 2,
            n_qformer_blocks: 2,
            n_self_blocks: 1,
            ff_multiplier: 2,
            seed,
        }
    }

    fn rand_bag(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureBag {
        FeatureBag::new(Tensor::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0)), None).unwrap()
    }

    #[test]
    fn zero_inputs_give_zero_score() {
        let p = init_params(&cfg(1)).unwrap();
        let text = FeatureBag::new(Tensor::zeros(3, 6), None).unwrap();
        let patches = FeatureBag::new(Tensor::zeros(4, 5), None).unwrap();
        assert_eq!(forward(&p, &text, &patches).unwrap().y, 0.0);
    }

    #[test]
    fn output_shapes_follow_token_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_params(&cfg(1)).unwrap();
        let out = forward(&p, &rand_bag(&mut rng, 3, 6), &rand_bag(&mut rng, 7, 5)).unwrap();
        assert_eq!(out.t_proj.shape(), (3, 8));
        assert_eq!(out.t_refined.shape(), (3, 8));
        assert_eq!(out.fused.shape(), (3, 8));
    }

    #[test]
    fn permutations_leave_score_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_params(&cfg(5)).unwrap();
        let text = rand_bag(&mut rng, 4, 6);
        let patches = rand_bag(&mut rng, 6, 5);
        let base = forward(&p, &text, &patches).unwrap();
        let mut tp: Vec<usize> = (0..4).collect();
        let mut pp: Vec<usize> = (0..6).collect();
        tp.shuffle(&mut rng);
        pp.shuffle(&mut rng);
        let moved = forward(&p, &text.select(&tp).unwrap(), &patches.select(&pp).unwrap()).unwrap();
        assert!((base.y - moved.y).abs() < 1e-9);
        assert!(moved.t_proj.max_abs_diff(&base.t_proj.select_rows(&tp)) == 0.0);
    }

    #[test]
    fn projector_is_row_wise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(&cfg(5)).unwrap();
        let text = rand_bag(&mut rng, 3, 6);
        let patches = rand_bag(&mut rng, 4, 5);
        let base = forward(&p, &text, &patches).unwrap();
        let mut changed = text.matrix().clone();
        for c in 0..6 {
            changed.set(2, c, rng.random_range(-1.0..1.0));
        }
        let other = forward(&p, &FeatureBag::new(changed, None).unwrap(), &patches).unwrap();
        assert_eq!(other.t_proj.row(0), base.t_proj.row(0));
        assert_eq!(other.t_proj.row(1), base.t_proj.row(1));
        assert_ne!(other.t_proj.row(2), base.t_proj.row(2));
    }

    #[test]
    fn width_and_empty_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_params(&cfg(1)).unwrap();
        let r = forward(&p, &rand_bag(&mut rng, 2, 5), &rand_bag(&mut rng, 2, 5));
        assert!(matches!(r, Err(TffError::WidthMismatch { bag: "text", .. })));
    }

    #[test]
    fn deterministic_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = init_params(&cfg(9)).unwrap();
        let text = rand_bag(&mut rng, 3, 6);
        let patches = rand_bag(&mut rng, 5, 5);
        let a = forward(&p, &text, &patches).unwrap();
        let b = forward(&p, &text, &patches).unwrap();
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert!(a.fused.bitwise_eq(&b.fused));
    }

    #[test]
    fn full_model_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = init_params(&cfg(12)).unwrap();
        let text = Tensor::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let patches = Tensor::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let inputs: Vec<Tensor> = p.tensors().iter().map(|t| (**t).clone()).collect();
        let cfg = *p.config();
        let names: Vec<(String, Tensor)> = p.names().iter().cloned().zip(inputs.iter().cloned()).collect();
        let template: &'static TffParams = Box::leak(Box::new(TffParams::from_parts(cfg, names).unwrap()));
        let err = max_relative_error(&inputs, 1e-5, 1e-3, |tape, vars| {
            let bound = BoundParams {
                params: template,
                vars: vars.to_vec(),
            };
            let out = forward_on_tape(&bound, tape.constant(text.clone()), tape.constant(patches.clone()))
                .map_err(|e| match e {
                    TffError::Num(n) => n,
                    other => crate::numcore::NumError::Contract(other.to_string()),
                })?;
            Ok(out.y)
        })
        .unwrap();
        assert!(err < 1e-4, "rel err {err:e}");
    }
}
