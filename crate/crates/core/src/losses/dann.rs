use crate::error::{contract, Result};
use crate::losses::features::FeatureBatch;
use crate::nn::{Bound, DomainClassifier};
use crate::tensor::Var;

/// Domain-adversarial loss: binary cross-entropy of the classifier on
/// gradient-reversed features, source labelled 0 and target 1, averaged over
/// both batches.
///
/// Minimizing this trains the classifier while the reversed gradient pushes
/// the feature extractor towards domain confusion.
pub fn dann_loss<'t>(
    s: &FeatureBatch<'t>,
    t: &FeatureBatch<'t>,
    clf: &DomainClassifier,
    bound: &Bound<'t>,
    grl_lambda: f64,
) -> Result<Var<'t>> {
    contract!(
        s.d() == clf.in_channels() && t.d() == clf.in_channels(),
        "dann: feature widths {} / {} do not match classifier width {}",
        s.d(),
        t.d(),
        clf.in_channels()
    );
    let (ns, nt) = (s.n(), t.n());
    let ls = clf.forward_pooled(bound, s.samples.grl(grl_lambda)?)?.bce_with_logits(&vec![0.0; ns])?;
    let lt = clf.forward_pooled(bound, t.samples.grl(grl_lambda)?)?.bce_with_logits(&vec![1.0; nt])?;
    let total = (ns + nt) as f64;
    ls.scale(ns as f64 / total)?.add(lt.scale(nt as f64 / total)?)
}
