//! Fairness-accuracy frontier: the upper concave envelope of achieved
//! (bias, accuracy) pairs, its normalized area (overall and below a low-bias
//! threshold), and the mixture-classifier arithmetic that justifies taking
//! the envelope in the first place.
//!
//! Mixing classifiers with weights beta gives expected accuracy
//! sum beta_i a_i exactly, while the mixture's bias is at most
//! sum beta_i eps_i by convexity of the pairwise gap. Every point on a chord
//! between two achieved points is therefore achievable, which is what makes
//! the concave envelope meaningful.

use crate::error::{Error, Result};
use crate::metrics::unordered_pair_gap_sum;

/// One achieved fairness-accuracy pair, tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FaPoint {
    /// Bias value (a demographic parity or equalized odds gap).
    pub epsilon: f64,
    /// Test accuracy in [0, 1].
    pub acc: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Short id of the producing configuration, e.g. "kl-nn".
    pub method: String,
}

impl FaPoint {
    pub fn new(epsilon: f64, acc: f64, lambda: f64, seed: u64, method: &str) -> Result<Self> {
        let point = FaPoint { epsilon, acc, lambda, seed, method: method.to_string() };
        point.validate()?;
        Ok(point)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Frontier(format!(
                "bias must be a non-negative real, got {}",
                self.epsilon
            )));
        }
        if !(self.acc.is_finite() && (0.0..=1.0).contains(&self.acc)) {
            return Err(Error::Frontier(format!("accuracy {} outside [0, 1]", self.acc)));
        }
        Ok(())
    }
}

/// Upper concave envelope of a point set. Vertices are input points,
/// strictly increasing in both bias and accuracy, forming a concave
/// polyline; beyond the outermost vertices the envelope continues at
/// constant accuracy.
#[derive(Debug, Clone)]
pub struct Frontier {
    vertices: Vec<FaPoint>,
    zeta: f64,
}

impl Frontier {
    pub fn vertices(&self) -> &[FaPoint] {
        &self.vertices
    }

    /// Low-bias threshold recorded with the frontier.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Envelope accuracy at the given bias: linear between vertices,
    /// constant beyond the first and last.
    pub fn accuracy_at(&self, epsilon: f64) -> f64 {
        let v = &self.vertices;
        if epsilon <= v[0].epsilon {
            return v[0].acc;
        }
        let last = v.last().unwrap();
        if epsilon >= last.epsilon {
            return last.acc;
        }
        let idx = v.partition_point(|p| p.epsilon <= epsilon);
        let (a, b) = (&v[idx - 1], &v[idx]);
        a.acc + (b.acc - a.acc) * (epsilon - a.epsilon) / (b.epsilon - a.epsilon)
    }
}

/// Builds the upper concave envelope: for every bias budget, the best
/// accuracy reachable by mixing input points whose combined bias bound stays
/// within the budget. Dominated points disappear; the polyline is truncated
/// at its accuracy peak since later points are dominated by it.
pub fn build_frontier(points: &[FaPoint], zeta: f64) -> Result<Frontier> {
    if points.is_empty() {
        return Err(Error::Frontier("cannot build a frontier from zero points".to_string()));
    }
    if !(zeta.is_finite() && zeta >= 0.0) {
        return Err(Error::Frontier(format!(
            "low-bias threshold must be a non-negative real, got {zeta}"
        )));
    }
    for p in points {
        p.validate()?;
    }
    let mut sorted: Vec<&FaPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.epsilon
            .partial_cmp(&b.epsilon)
            .unwrap()
            .then(b.acc.partial_cmp(&a.acc).unwrap())
    });
    // One candidate per distinct bias: the most accurate.
    let mut best: Vec<&FaPoint> = Vec::new();
    for p in sorted {
        if best.last().map_or(true, |l| l.epsilon < p.epsilon) {
            best.push(p);
        }
    }
    // Monotone-chain upper hull; a middle vertex survives only while the
    // slope into it strictly exceeds the slope out of it, so collinear
    // points collapse onto their chord.
    let mut hull: Vec<&FaPoint> = Vec::new();
    for p in best {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let slope_in = (b.acc - a.acc) * (p.epsilon - b.epsilon);
            let slope_out = (p.acc - b.acc) * (b.epsilon - a.epsilon);
            if slope_in <= slope_out {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    // Slopes strictly decrease along the hull, so accuracy rises to a single
    // peak; everything after it is dominated by the peak vertex.
    let mut vertices: Vec<FaPoint> = Vec::new();
    for p in hull {
        match vertices.last() {
            Some(l) if p.acc <= l.acc => break,
            _ => vertices.push(p.clone()),
        }
    }
    Ok(Frontier { vertices, zeta })
}

/// Mean envelope accuracy over a bias range: the exact piecewise-linear
/// integral divided by the range width, so values stay in [0, 1].
pub fn fa_auc(frontier: &Frontier, eps_lo: f64, eps_hi: f64) -> Result<f64> {
    if !(eps_lo.is_finite() && eps_hi.is_finite() && eps_lo < eps_hi) {
        return Err(Error::Range(format!(
            "need a non-degenerate bias range, got [{eps_lo}, {eps_hi}]"
        )));
    }
    let mut xs = vec![eps_lo];
    xs.extend(
        frontier
            .vertices
            .iter()
            .map(|p| p.epsilon)
            .filter(|&e| e > eps_lo && e < eps_hi),
    );
    xs.push(eps_hi);
    let area: f64 = xs
        .windows(2)
        .map(|w| (w[1] - w[0]) * (frontier.accuracy_at(w[0]) + frontier.accuracy_at(w[1])) / 2.0)
        .sum();
    Ok(area / (eps_hi - eps_lo))
}

/// Mean envelope accuracy over the low-bias region [0, zeta].
pub fn low_bias_auc(frontier: &Frontier) -> Result<f64> {
    if frontier.zeta <= 0.0 {
        return Err(Error::Range(format!(
            "low-bias threshold must be positive, got {}",
            frontier.zeta
        )));
    }
    fa_auc(frontier, 0.0, frontier.zeta)
}

/// Validated convex-combination weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    /// Tolerance on the weight sum; anything further from 1 is rejected.
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("mixture needs at least one weight"));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::domain(format!("mixture weight {w} outside [0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::domain(format!("mixture weights sum to {sum}, not 1")));
        }
        Ok(MixtureWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Randomized classifier that answers with component i with probability
/// weights[i].
#[derive(Debug, Clone)]
pub struct MixtureClassifier<C> {
    components: Vec<C>,
    weights: MixtureWeights,
}

impl<C> MixtureClassifier<C> {
    pub fn new(components: Vec<C>, weights: MixtureWeights) -> Result<Self> {
        if components.len() != weights.len() {
            return Err(Error::shape(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        Ok(MixtureClassifier { components, weights })
    }

    pub fn components(&self) -> &[C] {
        &self.components
    }

    pub fn weights(&self) -> &MixtureWeights {
        &self.weights
    }

    /// Component selected by a uniform draw u in [0, 1): the first whose
    /// cumulative weight exceeds u.
    pub fn component_for(&self, u: f64) -> &C {
        let mut cumulative = 0.0;
        for (c, &w) in self.components.iter().zip(self.weights.as_slice()) {
            cumulative += w;
            if u < cumulative {
                return c;
            }
        }
        self.components.last().unwrap()
    }
}

/// Accuracy and per-group positive rates of one mixture component.
#[derive(Debug, Clone)]
pub struct ComponentMetrics {
    pub acc: f64,
    pub group_rates: Vec<f64>,
}

/// Exact expectations for a mixture of classifiers.
#[derive(Debug, Clone)]
pub struct MixtureMetrics {
    /// sum beta_i acc_i, exact.
    pub expected_acc: f64,
    /// Per-group positive rate of the mixture: sum beta_i rate_i.
    pub mixture_group_rates: Vec<f64>,
    /// Pairwise gap sum of the mixture rates.
    pub mixture_bias: f64,
    /// sum beta_i eps_i; always at least `mixture_bias` by convexity.
    pub bias_upper_bound: f64,
}

/// Expected accuracy and bias of a weighted classifier mixture, computed
/// from per-component metrics.
pub fn mixture_expected_metrics(
    weights: &MixtureWeights,
    components: &[ComponentMetrics],
) -> Result<MixtureMetrics> {
    if components.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} component metric sets but {} weights",
            components.len(),
            weights.len()
        )));
    }
    let n_groups = components[0].group_rates.len();
    if n_groups == 0 {
        return Err(Error::domain("component metrics need at least one group rate"));
    }
    for (idx, c) in components.iter().enumerate() {
        if c.group_rates.len() != n_groups {
            return Err(Error::shape(format!(
                "component {idx} has {} group rates, expected {n_groups}",
                c.group_rates.len()
            )));
        }
        if !((0.0..=1.0).contains(&c.acc) && c.acc.is_finite()) {
            return Err(Error::domain(format!("component {idx} accuracy {} outside [0, 1]", c.acc)));
        }
        if let Some(r) = c.group_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::domain(format!("component {idx} group rate {r} outside [0, 1]")));
        }
    }
    let betas = weights.as_slice();
    let expected_acc = betas.iter().zip(components).map(|(b, c)| b * c.acc).sum();
    let mixture_group_rates: Vec<f64> = (0..n_groups)
        .map(|g| betas.iter().zip(components).map(|(b, c)| b * c.group_rates[g]).sum())
        .collect();
    let mixture_bias = unordered_pair_gap_sum(&mixture_group_rates);
    let bias_upper_bound = betas
        .iter()
        .zip(components)
        .map(|(b, c)| b * unordered_pair_gap_sum(&c.group_rates))
        .sum();
    Ok(MixtureMetrics { expected_acc, mixture_group_rates, mixture_bias, bias_upper_bound })
}
